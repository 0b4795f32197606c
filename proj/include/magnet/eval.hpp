#pragma once

#include "magnet/experts.hpp"
#include "magnet/prediction.hpp"
#include "magnet/trial.hpp"

#include <optional>
#include <string>
#include <vector>

namespace magnet {

// Where the intended target landed for one trial under one method.
struct Outcome {
    std::string trial_id;
    int rank = 0;  // 1-based position of the intended target; 0 = miss without a ranking
    int n_targets = 0;
    double rmsa = 0.0;
};

Outcome outcome_of(const PredictionRecord& p, const TrialRecord& t);
std::vector<Outcome> outcomes_of(const std::vector<PredictionRecord>& preds, const std::vector<TrialRecord>& trials);

// Fraction of trials whose intended target is outside the top k.
double error_at_k(const std::vector<Outcome>& outcomes, int k);

struct GroupingRule {
    enum class Kind { cluster_midpoint, mean };
    Kind kind = Kind::mean;
    double threshold = 0.0;  // G1: rmsa < threshold, G2: rmsa >= threshold
    std::vector<double> centers;  // cluster_midpoint only, ascending
    std::vector<double> thresholds;  // every adjacent midpoint
    int k = 0;
    double silhouette = 0.0;
};

// 1D k-means over k = 2..5 (seeded restarts), k chosen by mean silhouette.
// The reported G1/G2 threshold is the midpoint across the widest gap between
// adjacent centers.
GroupingRule cluster_threshold(const std::vector<double>& rmsa_values, std::uint64_t seed = 0);
GroupingRule mean_threshold(const std::vector<double>& rmsa_values);

struct GroupedErrors {
    std::optional<double> g1;
    std::optional<double> g2;
    int n_g1 = 0;
    int n_g2 = 0;
};

GroupedErrors grouped_errors(const std::vector<Outcome>& outcomes, const GroupingRule& rule);

// Baselines.
Outcome border_outcome(const TrialRecord& t);
PredictionRecord distance_predict(const TrialRecord& t);
PredictionRecord expert_predict(const TrialRecord& t, const ExpertSpec& e,
                                const Eigen::Vector3d& depth_axis = default_depth_axis());
// "border" yields a hit flag only, reported as an Outcome.
Outcome baseline_outcome(const std::string& method, const TrialRecord& t, const ExpertRegistry* registry = nullptr,
                         const Eigen::Vector3d& depth_axis = default_depth_axis());

}  // namespace magnet
