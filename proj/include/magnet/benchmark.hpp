#pragma once

#include "magnet/datagen.hpp"
#include "magnet/eval.hpp"
#include "magnet/train.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace magnet {

struct BenchmarkConfig {
    std::vector<int> shots{1, 2, 3, 5, 10};
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    bool baselines = true;
    bool magnet = true;
    // "w/o all" or "w/o <expert id>", trained at ablation_shots.
    std::vector<std::string> ablations;
    int ablation_shots = 10;
    ShotCell cell = ShotCell::user_size_speed;
    TrainConfig train;
    std::optional<ModelConfig> model;  // derived from the scenario when absent
    std::uint64_t cluster_seed = 0;

    void validate() const;
};

nlohmann::json benchmark_config_to_json(const BenchmarkConfig& c);
BenchmarkConfig benchmark_config_from_json(const nlohmann::json& j);

struct MetricRow {
    std::string model;
    int shots = 0;  // 0 for methods that do not train
    std::uint64_t seed = 0;
    std::optional<double> e_clust_g1;
    std::optional<double> e_clust_g2;
    std::optional<double> e_mean_g1;
    std::optional<double> e_mean_g2;
    std::optional<double> e_at_1;
    std::optional<double> e_at_2;  // absent for Border
    std::string status = "ok";
};

struct Stat {
    double mean = 0.0;
    std::optional<double> std;  // sample std, present iff >= 2 values
    int n = 0;
};

struct AggregateRow {
    std::string model;
    int shots = 0;
    int seeds = 0;
    int failed = 0;
    std::optional<Stat> e_clust_g1, e_clust_g2, e_mean_g1, e_mean_g2, e_at_1, e_at_2;
};

struct MetricReport {
    std::vector<MetricRow> rows;
    nlohmann::json metadata = nlohmann::json::object();

    std::vector<AggregateRow> aggregate() const;
    const AggregateRow* find(const std::vector<AggregateRow>& agg, const std::string& model, int shots) const;
};

Stat stat_of(const std::vector<double>& v);

// Metrics of one method's outcomes on the evaluation split.
MetricRow metric_row(const std::string& model, int shots, std::uint64_t seed, const std::vector<Outcome>& outcomes,
                     const GroupingRule& cluster, const GroupingRule& mean, bool ranking);

using ProgressFn = std::function<void(const std::string&)>;

// Trains and evaluates every (shots, seed) cell on the fixed test split of `split`.
// A failed training run marks its row failed and the run continues.
// When `checkpoint_dir` is given, each trained model is saved there.
MetricReport run_benchmark(const ScenarioConfig& sc, const Split& split, const ExpertRegistry& registry,
                           const BenchmarkConfig& cfg, const std::string& dataset_hash,
                           const std::optional<std::filesystem::path>& checkpoint_dir = std::nullopt,
                           const ProgressFn& progress = {});

// Evaluates a trained model on a set of trials.
std::vector<Outcome> evaluate_model(MagnetModel<float>& m, const std::vector<TrialRecord>& trials);

std::string format_metric(const std::optional<double>& v);

// Per-seed CSV: model,shots,seed,E_clust_G1,E_clust_G2,E_mean_G1,E_mean_G2,E_at_1,E_at_2,status
void write_report_csv(std::ostream& os, const MetricReport& r);
MetricReport read_report_csv(std::istream& is);
// Aggregated CSV with mean and std columns per metric.
void write_aggregate_csv(std::ostream& os, const MetricReport& r);
// Plain-text table, columns: E_clust G1/G2, E_mean G1/G2, E@1, E@2.
std::string human_table(const MetricReport& r);

void save_report(const std::filesystem::path& dir, const MetricReport& r);

}  // namespace magnet
