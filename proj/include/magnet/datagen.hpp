#pragma once

#include "magnet/env.hpp"
#include "magnet/experts.hpp"
#include "magnet/trial.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace magnet {

struct Regime {
    std::string name;
    double probability = 1.0;
    VibrationProfile profile;
};

// Which population-truth expert generates endpoints for a gesture in a regime.
struct TruthRule {
    Gesture gesture = Gesture::fixed;
    std::string regime;
    std::string expert;
};

struct ScenarioConfig {
    std::string id;
    int dim = 2;
    std::vector<Gesture> gestures;
    int n_targets = 15;
    std::vector<double> sizes;  // W: px diameter (2D), m radius (3D)
    std::vector<double> speeds;  // V
    Vec bounds_min;  // movement range of target centers
    Vec bounds_max;
    Eigen::Vector3d depth_axis = default_depth_axis();
    int users = 10;
    int reps = 12;
    double kappa = 1.0;  // endpoint spread scale (1 + kappa * RMSA)
    double dwell_min_s = 0.5;
    double dwell_max_s = 2.0;
    std::vector<Regime> regimes;
    std::vector<TruthRule> truth;
    ExpertRegistry truth_experts;
    int max_trials = 100000;

    // Extents used to normalise positions (screen or scene box).
    Vec extent_min() const;
    Vec extent_max() const;
    // Radius of a target of size w in endpoint units.
    double radius(double w) const { return dim == 2 ? 0.5 * w : w; }
    const std::string& truth_expert(Gesture g, const std::string& regime) const;
    void validate() const;  // ConfigError naming the field
};

nlohmann::json scenario_to_json(const ScenarioConfig& c);
ScenarioConfig scenario_from_json(const nlohmann::json& j);

// Presets sized like the two datasets: "mts2d" and "mts3d".
ScenarioConfig preset(const std::string& name);
ExpertRegistry truth_registry_2d();
ExpertRegistry truth_registry_3d();
std::vector<UserProfile> default_users(int count, std::uint64_t seed);

// Stateless 64-bit mixer for deriving per-trial seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

// Moves a target for dt seconds inside [lo, hi] with specular reflection at
// the walls. Returns the number of reflections.
int advance(TargetState& t, double dt, const Vec& lo, const Vec& hi);

struct TrialSpec {
    double w = 0.0;
    double v = 0.0;
    UserProfile user;
    int rep = 0;
    std::uint64_t seed = 0;
    std::string regime;  // empty: drawn from the regime probabilities
};

TrialRecord gen_trial(const ScenarioConfig& sc, const TrialSpec& spec);

struct Dataset {
    ScenarioConfig scenario;
    std::uint64_t seed = 0;
    std::vector<TrialRecord> trials;
};

Dataset build_dataset(const ScenarioConfig& sc, const std::vector<UserProfile>& users,
                      std::uint64_t seed);

constexpr int kDatasetSchemaVersion = 1;

// JSONL: a header line {schema, schema_version, scenario, seed, count}, then one trial per line.
void write_dataset(std::ostream& out, const Dataset& d);
void save_dataset(const std::filesystem::path& path, const Dataset& d);
Dataset read_dataset(std::istream& in);
Dataset load_dataset(const std::filesystem::path& path);
// FNV-1a, 16 hex digits.
std::string content_hash(std::string_view bytes);
std::string dataset_hash(const Dataset& d);  // hash of the serialized file
std::string file_hash(const std::filesystem::path& path);

struct SplitSpec {
    int test_count = 0;
    int val_count = 0;
    std::uint64_t seed = 0;
};

struct Split {
    std::vector<TrialRecord> pool;
    std::vector<TrialRecord> val;
    std::vector<TrialRecord> test;
};

SplitSpec default_split(const ScenarioConfig& sc, std::uint64_t seed);
// Uniform per (W, V) cell; inside a cell, test and validation picks rotate
// across users so every user keeps a comparable share of the pool.
Split split_dataset(const std::vector<TrialRecord>& trials, const SplitSpec& s);

enum class ShotCell { user_size_speed, user_size_speed_gesture };

// Exactly n trials per cell, sampled uniformly without replacement.
std::vector<TrialRecord> few_shot_subset(const std::vector<TrialRecord>& pool, int n,
                                         std::uint64_t seed,
                                         ShotCell cell = ShotCell::user_size_speed);

// Endpoints projected into the intended target's local frame.
std::vector<EndpointSample> endpoint_samples(const std::vector<TrialRecord>& trials,
                                             const Eigen::Vector3d& depth_axis = default_depth_axis());

// Fits one expert per truth expert of the scenario from vibration-free
// calibration trials (per_cell trials per (W, V) cell).
ExpertRegistry fit_scenario_experts(const ScenarioConfig& sc, int per_cell, std::uint64_t seed,
                                    int min_count = kDefaultMinCellCount);

}  // namespace magnet
