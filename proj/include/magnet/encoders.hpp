#pragma once

#include "magnet/nn/layers.hpp"
#include "magnet/trial.hpp"

#include <nlohmann/json.hpp>

#include <string>
#include <vector>

namespace magnet {

inline constexpr int kUserDim = 64;
inline constexpr int kSeriesDim = 128;
inline constexpr int kTargetDim = 64;
inline constexpr int kContextDim = kUserDim + 2 * kSeriesDim + kTargetDim;  // 384
inline constexpr int kUserFeatures = 6;  // gesture one-hot (3), age, gender one-hot (2)

// Fixed input normalization, declared in the run config.
struct FeatureConfig {
    int dim = 2;
    double age_min = 18.0;
    double age_max = 60.0;
    Vec extent_min;  // screen / scene bounds for target centres
    Vec extent_max;
    double size_max = 1.0;
    double speed_max = 1.0;
    int pool = 5;  // block-average factor applied to the env series

    int target_features() const { return dim + 2 + dim; }  // centre, size, speed, direction
    void validate() const;
};

nlohmann::json feature_config_to_json(const FeatureConfig& f);
FeatureConfig feature_config_from_json(const nlohmann::json& j);

// Per-channel standardization, frozen after fitting on the training split.
struct SeriesStats {
    Eigen::RowVectorXd mean;
    Eigen::RowVectorXd std;
};

nlohmann::json series_stats_to_json(const SeriesStats& s);
SeriesStats series_stats_from_json(const nlohmann::json& j);

Eigen::RowVectorXd user_features(const UserProfile& u, const FeatureConfig& f);
Eigen::RowVectorXd target_features(const TargetState& t, const FeatureConfig& f);

// Block average over `pool` consecutive rows; a trailing partial block is averaged as is.
Mat pool_series(const Mat& x, int pool);
// Stats over every pooled row of every trial. Channels with zero spread get std 1.
SeriesStats fit_series_stats(const std::vector<const Mat*>& series, int pool);
Mat standardize(const Mat& x, const SeriesStats& s);

// f(x) = W2 LeakyReLU(W1 x + b1) + b2
template <typename T>
class MlpEncoder {
public:
    MlpEncoder() = default;
    MlpEncoder(nn::ParameterStore<T>& store, const std::string& prefix, int in, int hidden, int out, nn::Rng& rng);
    nn::Var forward(nn::Graph<T>& g, nn::Var x) const;

private:
    nn::Linear<T> l1_;
    nn::Linear<T> l2_;
};

// Standardized (batch*steps) x channels -> batch x 128.
template <typename T>
class SeriesEncoder {
public:
    SeriesEncoder() = default;
    SeriesEncoder(nn::ParameterStore<T>& store, const std::string& prefix, int channels, nn::Rng& rng);
    nn::Var forward(nn::Graph<T>& g, nn::Var seq, int batch, int steps,
                    std::vector<nn::Matrix<T>>* attention_maps = nullptr) const;
    int channels() const { return channels_; }

private:
    int channels_ = 0;
    nn::Linear<T> lift_;
    nn::MultiHeadAttention<T> attn_;
    nn::BiGru<T> gru_;
};

// 384 -> 128 (BN, LeakyReLU, dropout) -> 64 (LeakyReLU) -> k logits.
template <typename T>
class CawHead {
public:
    CawHead() = default;
    CawHead(nn::ParameterStore<T>& store, const std::string& prefix, int experts, nn::Rng& rng);
    nn::Var logits(nn::Graph<T>& g, nn::Var h_con, nn::Mode mode, nn::Rng& rng);
    int experts() const { return experts_; }
    nn::Linear<T>& last() { return l3_; }

private:
    int experts_ = 0;
    nn::Linear<T> l1_;
    nn::BatchNorm<T> bn_;
    nn::Linear<T> l2_;
    nn::Linear<T> l3_;
};

extern template class MlpEncoder<float>;
extern template class MlpEncoder<double>;
extern template class SeriesEncoder<float>;
extern template class SeriesEncoder<double>;
extern template class CawHead<float>;
extern template class CawHead<double>;

}  // namespace magnet
