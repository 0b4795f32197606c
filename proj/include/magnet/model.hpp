#pragma once

#include "magnet/encoders.hpp"
#include "magnet/experts.hpp"
#include "magnet/nn/checkpoint.hpp"
#include "magnet/prediction.hpp"

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace magnet {

struct ScenarioConfig;

inline constexpr int kAdaptHidden = 64;

struct ModelConfig {
    FeatureConfig features;
    double tau = 2.0;
    double rho_mu = 0.1;
    double rho_sigma = 0.2;  // picked on validation E@1, 2D 10-shot
    // Mean coefficients move by at most rho_mu * unit_scale * {1, 1/v_ref, 1/w_ref}
    // for the (a, v, w) terms, i.e. rho_mu * unit_scale per term at the reference condition.
    double unit_scale = 1.0;
    double v_ref = 1.0;
    double w_ref = 1.0;
    Eigen::Vector3d depth_axis = default_depth_axis();

    void validate() const;
};

nlohmann::json model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);
// Normalization and adaptation scales derived from a scenario's grids and bounds.
ModelConfig model_config_for(const ScenarioConfig& sc);

// Flat layout of one expert: [mu (dim x 3, row-major) | sigma (dim x 3, row-major)].
int expert_width(int dim);
Eigen::RowVectorXd flatten_params(const TernaryGaussianParams& p);
TernaryGaussianParams unflatten_params(const Eigen::RowVectorXd& flat, int dim);
// Per-entry scale of the flat layout, unit_scale * {1, 1/v_ref, 1/w_ref} per axis row.
Eigen::RowVectorXd coefficient_scale(const ModelConfig& c);

// theta' from raw deltas: mu + rho_mu * scale * tanh(d), sigma * exp(rho_sigma * tanh(d)).
Eigen::RowVectorXd adapt_flat(const Eigen::RowVectorXd& base, const Eigen::RowVectorXd& scale, const Eigen::RowVectorXd& delta,
                              int dim, double rho_mu, double rho_sigma);

// Diagonal local-frame log-density of one expert at a local offset.
double local_log_pdf(const Eigen::RowVectorXd& flat, int dim, const Vec& offset, double v, double w);

// log sum_k w_k N_k, from log-weights and per-expert log densities.
double mixture_log_density(std::span<const double> log_w, std::span<const double> logp);

// Mean cosine similarity over ordered expert pairs. Zero-norm vectors contribute 0.
double diversity_loss(const std::vector<Eigen::RowVectorXd>& vectors, bool* zero_norm = nullptr);

// Hinge on the hardest negative (or the mean over negatives).
double ranking_loss(double pos, std::span<const double> negatives, double margin, bool hardest = true);

// Model inputs for one trial, computed once.
struct PreparedTrial {
    std::string trial_id;
    Eigen::RowVectorXd user;
    Mat vib;  // steps x 12, standardized
    Mat acc;  // steps x 3, standardized
    Mat target_features;  // targets x F
    Mat offsets;  // targets x dim, endpoint in each target's local frame
    Vec speed;
    Vec size;
    std::vector<int> target_ids;
    int intended_row = -1;  // -1 when the intended target is unknown
    bool zero_filled = false;
    double rmsa = 0.0;

    int targets() const { return static_cast<int>(target_ids.size()); }
    int steps() const { return static_cast<int>(vib.rows()); }
};

template <typename T>
class MagnetModel {
public:
    using Mat_t = nn::Matrix<T>;

    MagnetModel(ModelConfig cfg, ExpertRegistry registry, SeriesStats vib, SeriesStats acc, std::uint64_t seed);
    MagnetModel(const MagnetModel&) = delete;
    MagnetModel& operator=(const MagnetModel&) = delete;

    const ModelConfig& config() const { return cfg_; }
    const ExpertRegistry& registry() const { return registry_; }
    const SeriesStats& vib_stats() const { return vib_stats_; }
    const SeriesStats& acc_stats() const { return acc_stats_; }
    int experts() const { return static_cast<int>(registry_.experts.size()); }
    int dim() const { return cfg_.features.dim; }
    nn::ParameterStore<T>& params() { return store_; }
    const nn::ParameterStore<T>& params() const { return store_; }

    // A missing window is replaced by zeros and flagged.
    PreparedTrial prepare(const TrialRecord& t) const;

    struct Context {
        nn::Var h_user;    // trials x 64
        nn::Var h_vib;     // trials x 128
        nn::Var h_acc;     // trials x 128
        nn::Var h_target;  // rows x 64
        nn::Var h_con;     // rows x 384
    };
    struct Output {
        Context ctx;
        nn::Var logits;       // rows x k
        nn::Var log_w;        // rows x k
        nn::Var delta;        // rows x k*P
        nn::Var theta;        // rows x k*P, adapted flat params
        nn::Var logp;         // rows x k, per-expert log density at the endpoint
        nn::Var log_density;  // rows x 1, fused
        std::vector<int> row_begin;  // first row of each trial, plus a final end marker
    };

    Context encode(nn::Graph<T>& g, std::span<const PreparedTrial* const> batch, nn::Mode mode, nn::Rng& rng) const;
    Output forward(nn::Graph<T>& g, std::span<const PreparedTrial* const> batch, nn::Mode mode, nn::Rng& rng);

    struct Losses {
        nn::Var total;
        double rank = 0.0;
        double div = 0.0;
    };
    Losses loss(nn::Graph<T>& g, const Output& out, std::span<const PreparedTrial* const> batch, double margin,
                double lambda_div, bool hardest_negative = true) const;

    // Eval-mode pipeline; fused densities are evaluated in 64-bit.
    std::vector<PredictionRecord> predict(std::span<const PreparedTrial* const> batch);
    PredictionRecord predict(const TrialRecord& t);

    // Zero the final adaptation layer (theta' = theta).
    void zero_adaptation();
    // Zero the final CAW layer (uniform weights).
    void zero_caw();

    // Checkpoint metadata carries everything needed to rebuild the model.
    nlohmann::json metadata() const;

private:
    ModelConfig cfg_;
    ExpertRegistry registry_;
    SeriesStats vib_stats_;
    SeriesStats acc_stats_;
    Eigen::RowVectorXd base_;   // 1 x k*P
    Eigen::RowVectorXd scale_;  // 1 x P

    nn::ParameterStore<T> store_;
    MlpEncoder<T> user_enc_;
    SeriesEncoder<T> vib_enc_;
    SeriesEncoder<T> acc_enc_;
    MlpEncoder<T> target_enc_;
    CawHead<T> caw_;
    nn::Linear<T> adapt1_;
    nn::Linear<T> adapt2_;
};

extern template class MagnetModel<float>;
extern template class MagnetModel<double>;

// Flat, wide isotropic expert standing in for "no prior knowledge".
ExpertRegistry neutral_registry(const ModelConfig& c);

template <typename T>
nn::Checkpoint model_checkpoint(const MagnetModel<T>& m, nlohmann::json extra = nlohmann::json::object());
template <typename T>
std::unique_ptr<MagnetModel<T>> model_from_checkpoint(const nn::Checkpoint& ck);

std::unique_ptr<MagnetModel<float>> load_model(const std::filesystem::path& path);
void save_model(const std::filesystem::path& path, const MagnetModel<float>& m,
                nlohmann::json extra = nlohmann::json::object());

}  // namespace magnet
