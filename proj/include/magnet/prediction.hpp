#pragma once

#include "magnet/gaussian.hpp"

#include <nlohmann/json.hpp>

#include <string>
#include <vector>

namespace magnet {

struct PredictionRecord {
    std::string trial_id;
    std::vector<int> target_ids;  // input order
    std::vector<double> log_density;  // per target, input order
    std::vector<int> ranked;  // target ids, most likely first
    std::vector<std::string> expert_ids;
    Mat weights;  // targets x experts, fusion weights used for each target
    // Adapted per-axis moments, [target][expert], for inspection.
    std::vector<std::vector<AxisMoments>> moments;
    bool zero_filled_env = false;

    nlohmann::json to_json() const;
};

// Hash of the record's JSON with every real rounded to `digits` significant
// digits; stable against last-bit floating-point differences.
std::string record_digest(const PredictionRecord& p, int digits = 8);

// Descending by score; equal scores keep the lower id first.
std::vector<int> rank_by_score(const std::vector<int>& ids, const std::vector<double>& scores);

// Radius of a target of size w: 2D sizes are diameters, 3D sizes radii.
inline double target_radius(int dim, double w) { return dim == 2 ? 0.5 * w : w; }

}  // namespace magnet
