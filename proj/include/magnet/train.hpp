#pragma once

#include "magnet/model.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace magnet {

struct TrainConfig {
    int shots = 10;  // per (user x W x V) cell
    int batch_size = 32;
    int max_epochs = 50;
    int patience = 10;
    double lr = 5e-4;
    double weight_decay = 1e-4;
    double margin = 1.0;
    double lambda_div = 0.1;
    bool hardest_negative = true;
    std::uint64_t seed = 0;

    void validate() const;
};

nlohmann::json train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);
// Batch size per task dimension: 32 for 2D, 16 for 3D.
TrainConfig default_train_config(int dim);

// Stops once `patience` epochs pass without a strict improvement.
class EarlyStopper {
public:
    explicit EarlyStopper(int patience);
    // Returns true when training should stop after this epoch.
    bool update(int epoch, double val_loss);
    int best_epoch() const { return best_epoch_; }
    double best_loss() const { return best_; }
    bool improved() const { return improved_; }

private:
    int patience_;
    int best_epoch_ = -1;
    double best_;
    int stale_ = 0;
    bool improved_ = false;
};

struct EpochLog {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double train_rank = 0.0;
    double train_div = 0.0;
    double val_loss = 0.0;
};

struct TrainLog {
    std::vector<EpochLog> epochs;
    int best_epoch = -1;
    bool stopped_early = false;
    std::uint64_t seed = 0;

    nlohmann::json to_json() const;
};

struct EvalLoss {
    double total = 0.0;
    double rank = 0.0;
    double div = 0.0;
};

// Mean losses over a set in eval mode.
template <typename T>
EvalLoss evaluate_loss(MagnetModel<T>& m, const std::vector<PreparedTrial>& set, const TrainConfig& cfg);

struct TrainResult {
    std::unique_ptr<MagnetModel<float>> model;
    TrainLog log;
};

// Optional per-epoch hook; returning a value overrides the measured validation loss (test seam).
using ValLossHook = std::function<std::optional<double>(int epoch, double measured)>;

TrainResult train(const std::vector<TrialRecord>& train_set, const std::vector<TrialRecord>& val_set,
                  const ExpertRegistry& registry, const ModelConfig& model_cfg, const TrainConfig& cfg,
                  const ValLossHook& hook = {});

// Standardization statistics fitted on a training split.
std::pair<SeriesStats, SeriesStats> fit_env_stats(const std::vector<TrialRecord>& trials, int pool);

}  // namespace magnet
