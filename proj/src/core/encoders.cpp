#include "magnet/encoders.hpp"

#include "magnet/errors.hpp"

#include <algorithm>
#include <cmath>

namespace magnet {

namespace {

nlohmann::json row_json(const Eigen::RowVectorXd& r) { return std::vector<double>(r.data(), r.data() + r.size()); }

Eigen::RowVectorXd json_row(const nlohmann::json& j) {
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Eigen::RowVectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

void FeatureConfig::validate() const {
    if (dim != 2 && dim != 3) throw ConfigError("features.dim must be 2 or 3, got " + std::to_string(dim));
    if (!(age_max > age_min)) throw ConfigError("features.age range is empty");
    if (extent_min.size() != dim || extent_max.size() != dim) throw ConfigError("features.extent must have dim entries");
    if (((extent_max - extent_min).array() <= 0.0).any()) throw ConfigError("features.extent is empty along some axis");
    if (!(size_max > 0.0) || !(speed_max > 0.0)) throw ConfigError("features.size_max and speed_max must be > 0");
    if (pool < 1) throw ConfigError("features.pool must be >= 1");
}

nlohmann::json feature_config_to_json(const FeatureConfig& f) {
    return {{"dim", f.dim},
            {"age_min", f.age_min},
            {"age_max", f.age_max},
            {"extent_min", std::vector<double>(f.extent_min.data(), f.extent_min.data() + f.extent_min.size())},
            {"extent_max", std::vector<double>(f.extent_max.data(), f.extent_max.data() + f.extent_max.size())},
            {"size_max", f.size_max},
            {"speed_max", f.speed_max},
            {"pool", f.pool}};
}

FeatureConfig feature_config_from_json(const nlohmann::json& j) {
    FeatureConfig f;
    try {
        f.dim = j.at("dim").get<int>();
        f.age_min = j.at("age_min").get<double>();
        f.age_max = j.at("age_max").get<double>();
        const auto lo = j.at("extent_min").get<std::vector<double>>();
        const auto hi = j.at("extent_max").get<std::vector<double>>();
        f.extent_min = Eigen::Map<const Vec>(lo.data(), static_cast<Eigen::Index>(lo.size()));
        f.extent_max = Eigen::Map<const Vec>(hi.data(), static_cast<Eigen::Index>(hi.size()));
        f.size_max = j.at("size_max").get<double>();
        f.speed_max = j.at("speed_max").get<double>();
        f.pool = j.at("pool").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("features: ") + e.what());
    }
    f.validate();
    return f;
}

nlohmann::json series_stats_to_json(const SeriesStats& s) { return {{"mean", row_json(s.mean)}, {"std", row_json(s.std)}}; }

SeriesStats series_stats_from_json(const nlohmann::json& j) {
    SeriesStats s;
    try {
        s.mean = json_row(j.at("mean"));
        s.std = json_row(j.at("std"));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("series stats: ") + e.what());
    }
    if (s.mean.size() != s.std.size() || (s.std.array() <= 0.0).any()) throw ParseError("series stats: bad shape or std");
    return s;
}

Eigen::RowVectorXd user_features(const UserProfile& u, const FeatureConfig& f) {
    u.validate();
    if (u.age < f.age_min || u.age > f.age_max) {
        throw InputError("age " + std::to_string(u.age) + " outside configured range [" + std::to_string(f.age_min) + ", " +
                         std::to_string(f.age_max) + "]");
    }
    Eigen::RowVectorXd x = Eigen::RowVectorXd::Zero(kUserFeatures);
    x(static_cast<int>(u.gesture)) = 1.0;
    x(3) = (u.age - f.age_min) / (f.age_max - f.age_min);
    const auto& genders = gender_vocabulary();
    const auto it = std::find(genders.begin(), genders.end(), u.gender);
    x(4 + static_cast<int>(it - genders.begin())) = 1.0;
    return x;
}

Eigen::RowVectorXd target_features(const TargetState& t, const FeatureConfig& f) {
    t.validate();
    if (t.dim() != f.dim) throw DimensionError("target is " + std::to_string(t.dim()) + "D, features are " + std::to_string(f.dim) + "D");
    Eigen::RowVectorXd x(f.target_features());
    x.head(f.dim) = ((t.center - f.extent_min).array() / (f.extent_max - f.extent_min).array()).matrix().transpose();
    x(f.dim) = t.size / f.size_max;
    x(f.dim + 1) = t.speed / f.speed_max;
    x.tail(f.dim) = t.direction.transpose();
    return x;
}

Mat pool_series(const Mat& x, int pool) {
    if (pool < 1) throw ConfigError("pool factor must be >= 1");
    if (x.rows() == 0) throw InputError("pool_series: empty series");
    const Eigen::Index n = (x.rows() + pool - 1) / pool;
    Mat out(n, x.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::Index b = i * pool;
        const Eigen::Index len = std::min<Eigen::Index>(pool, x.rows() - b);
        out.row(i) = x.middleRows(b, len).colwise().mean();
    }
    return out;
}

SeriesStats fit_series_stats(const std::vector<const Mat*>& series, int pool) {
    if (series.empty()) throw ConfigError("cannot fit standardization on an empty training split");
    const Eigen::Index c = series.front()->cols();
    Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(c);
    Eigen::RowVectorXd sq = Eigen::RowVectorXd::Zero(c);
    double n = 0.0;
    for (const Mat* s : series) {
        if (s->cols() != c) throw DimensionError("series channel counts differ across trials");
        const Mat p = pool_series(*s, pool);
        sum += p.colwise().sum();
        n += static_cast<double>(p.rows());
    }
    SeriesStats st;
    st.mean = sum / n;
    for (const Mat* s : series) {
        const Mat p = pool_series(*s, pool);
        sq += (p.rowwise() - st.mean).array().square().matrix().colwise().sum();
    }
    st.std = (sq / n).array().sqrt().matrix();
    for (Eigen::Index i = 0; i < c; ++i) {
        if (!(st.std(i) > 1e-12)) st.std(i) = 1.0;
    }
    return st;
}

Mat standardize(const Mat& x, const SeriesStats& s) {
    if (x.cols() != s.mean.size()) {
        throw InputError("series has " + std::to_string(x.cols()) + " channels, encoder expects " + std::to_string(s.mean.size()));
    }
    return (x.rowwise() - s.mean).array().rowwise() / s.std.array();
}

// ---------------------------------------------------------------------------

template <typename T>
MlpEncoder<T>::MlpEncoder(nn::ParameterStore<T>& store, const std::string& prefix, int in, int hidden, int out,
                          nn::Rng& rng)
    : l1_(store, prefix + ".l1", in, hidden, rng), l2_(store, prefix + ".l2", hidden, out, rng) {}

template <typename T>
nn::Var MlpEncoder<T>::forward(nn::Graph<T>& g, nn::Var x) const {
    return l2_.forward(g, g.leaky_relu(l1_.forward(g, x), static_cast<T>(nn::kLeakySlope)));
}

template <typename T>
SeriesEncoder<T>::SeriesEncoder(nn::ParameterStore<T>& store, const std::string& prefix, int channels, nn::Rng& rng)
    : channels_(channels),
      lift_(store, prefix + ".lift", channels, kSeriesDim, rng),
      attn_(store, prefix + ".attn", rng),
      gru_(store, prefix + ".gru", kSeriesDim, kSeriesDim / 2, rng) {}

template <typename T>
nn::Var SeriesEncoder<T>::forward(nn::Graph<T>& g, nn::Var seq, int batch, int steps,
                                  std::vector<nn::Matrix<T>>* attention_maps) const {
    if (g.value(seq).cols() != channels_) {
        throw InputError("series encoder expects " + std::to_string(channels_) + " channels, got " +
                         std::to_string(g.value(seq).cols()));
    }
    nn::Var lifted = lift_.forward(g, seq);
    nn::Var attended = attn_.forward(g, lifted, batch, steps, attention_maps);
    return gru_.forward(g, attended, batch, steps);
}

template <typename T>
CawHead<T>::CawHead(nn::ParameterStore<T>& store, const std::string& prefix, int experts, nn::Rng& rng)
    : experts_(experts),
      l1_(store, prefix + ".l1", kContextDim, 128, rng),
      bn_(store, prefix + ".bn1", 128),
      l2_(store, prefix + ".l2", 128, 64, rng),
      l3_(store, prefix + ".l3", 64, experts, rng) {
    if (experts < 1) throw ConfigError("CAW needs at least one expert");
}

template <typename T>
nn::Var CawHead<T>::logits(nn::Graph<T>& g, nn::Var h_con, nn::Mode mode, nn::Rng& rng) {
    const T slope = static_cast<T>(nn::kLeakySlope);
    nn::Var x = bn_.forward(g, l1_.forward(g, h_con), mode);
    x = nn::dropout(g, g.leaky_relu(x, slope), nn::kDropoutRate, mode, rng);
    x = g.leaky_relu(l2_.forward(g, x), slope);
    return l3_.forward(g, x);
}

template class MlpEncoder<float>;
template class MlpEncoder<double>;
template class SeriesEncoder<float>;
template class SeriesEncoder<double>;
template class CawHead<float>;
template class CawHead<double>;

}  // namespace magnet
