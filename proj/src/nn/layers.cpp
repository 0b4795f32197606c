#include "magnet/nn/layers.hpp"

#include "magnet/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace magnet::nn {

std::vector<double> softmax_t(std::span<const double> logits, double tau) {
    if (!(tau > 0.0)) throw ConfigError("softmax temperature must be > 0, got " + std::to_string(tau));
    if (logits.empty()) throw InputError("softmax over an empty logit vector");
    const double m = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp((logits[i] - m) / tau);
        z += p[i];
    }
    for (double& v : p) v /= z;
    return p;
}

double cosine_lr(int epoch, int total_epochs, double base_lr) {
    if (total_epochs < 1 || epoch < 0 || epoch >= total_epochs) {
        throw UsageError("cosine_lr: epoch " + std::to_string(epoch) + " outside [0, " +
                         std::to_string(total_epochs) + ")");
    }
    return base_lr * 0.5 *
           (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) /
                           static_cast<double>(total_epochs)));
}

template <typename T>
void init_fan_in(Matrix<T>& w, Eigen::Index fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<T>(dist(rng));
}

// ---------------------------------------------------------------------------

template <typename T>
Linear<T>::Linear(ParameterStore<T>& store, const std::string& prefix, int in, int out, Rng& rng) {
    weight_ = &store.add(prefix + ".weight", in, out);
    bias_ = &store.add(prefix + ".bias", 1, out);
    init_fan_in(weight_->value, in, rng);
}

template <typename T>
Var Linear<T>::forward(Graph<T>& g, Var x) const {
    const auto& xv = g.value(x);
    if (xv.cols() != weight_->value.rows()) {
        throw DimensionError("linear '" + weight_->name + "': input " +
                             shape_string(xv.rows(), xv.cols()) + " vs weight " +
                             shape_string(weight_->value.rows(), weight_->value.cols()));
    }
    return g.add_row(g.matmul(x, g.param(*weight_)), g.param(*bias_));
}

// ---------------------------------------------------------------------------

template <typename T>
BatchNorm<T>::BatchNorm(ParameterStore<T>& store, const std::string& prefix, int width) {
    gamma_ = &store.add(prefix + ".gamma", 1, width);
    beta_ = &store.add(prefix + ".beta", 1, width);
    running_mean_ = &store.add(prefix + ".running_mean", 1, width, false);
    running_var_ = &store.add(prefix + ".running_var", 1, width, false);
    gamma_->value.setOnes();
    running_var_->value.setOnes();
}

template <typename T>
Var BatchNorm<T>::forward(Graph<T>& g, Var x, Mode mode) {
    const T eps = static_cast<T>(kBatchNormEps);
    if (mode == Mode::train) {
        RowVector<T> mu;
        RowVector<T> var;
        Var y = g.batch_norm_train(x, g.param(*gamma_), g.param(*beta_), eps, &mu, &var);
        const T n = static_cast<T>(g.value(x).rows());
        const T m = static_cast<T>(kBatchNormMomentum);
        running_mean_->value = (T(1) - m) * running_mean_->value + m * mu;
        running_var_->value = (T(1) - m) * running_var_->value + m * var * (n / (n - T(1)));
        return y;
    }
    const auto& xv = g.value(x);
    if (xv.cols() != gamma_->value.cols()) {
        throw DimensionError("batch norm '" + gamma_->name + "': input " +
                             shape_string(xv.rows(), xv.cols()));
    }
    RowVector<T> inv_std = (running_var_->value.row(0).array() + eps).rsqrt().matrix();
    RowVector<T> mean = running_mean_->value.row(0);
    Matrix<T> xhat = (xv.rowwise() - mean).array().rowwise() * inv_std.array();
    Var gamma = g.param(*gamma_);
    Var beta = g.param(*beta_);
    Matrix<T> out = (xhat.array().rowwise() * gamma_->value.row(0).array()).rowwise() +
                    beta_->value.row(0).array();
    const Var in[] = {x, gamma, beta};
    return g.custom(in, std::move(out),
                    [x, gamma, beta, xhat = std::move(xhat), inv_std](Graph<T>& gr,
                                                                      const Matrix<T>& go) {
                        if (gr.requires_grad(gamma)) {
                            gr.accumulate(gamma, go.cwiseProduct(xhat).colwise().sum());
                        }
                        if (gr.requires_grad(beta)) gr.accumulate(beta, go.colwise().sum());
                        if (gr.requires_grad(x)) {
                            Matrix<T> d = go.array().rowwise() *
                                          (gr.value(gamma).row(0).array() * inv_std.array());
                            gr.accumulate(x, d);
                        }
                    });
}

// ---------------------------------------------------------------------------

template <typename T>
Var dropout(Graph<T>& g, Var x, double rate, Mode mode, Rng& rng) {
    if (mode == Mode::eval || rate <= 0.0) return x;
    if (rate >= 1.0) throw ConfigError("dropout rate must be < 1");
    const auto& xv = g.value(x);
    Matrix<T> mask(xv.rows(), xv.cols());
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    for (Eigen::Index i = 0; i < mask.size(); ++i) {
        mask.data()[i] = u(rng) >= rate ? keep_scale : T(0);
    }
    return g.mul_const(x, mask);
}

// ---------------------------------------------------------------------------

template <typename T>
BiGru<T>::BiGru(ParameterStore<T>& store, const std::string& prefix, int in, int hidden, Rng& rng)
    : hidden_(hidden) {
    auto make = [&](const std::string& dir) {
        Direction d;
        d.w_ih = &store.add(prefix + "." + dir + ".w_ih", in, 3 * hidden);
        d.w_hh = &store.add(prefix + "." + dir + ".w_hh", hidden, 3 * hidden);
        d.b_ih = &store.add(prefix + "." + dir + ".b_ih", 1, 3 * hidden);
        d.b_hh = &store.add(prefix + "." + dir + ".b_hh", 1, 3 * hidden);
        // GRU convention: every gate matrix scaled by 1/sqrt(hidden).
        init_fan_in(d.w_ih->value, hidden, rng);
        init_fan_in(d.w_hh->value, hidden, rng);
        return d;
    };
    fwd_ = make("fwd");
    bwd_ = make("bwd");
}

template <typename T>
Var BiGru<T>::run(Graph<T>& g, const Direction& d, Var seq, int batch, int steps,
                  bool reverse) const {
    const int h = hidden_;
    Var xproj = g.add_row(g.matmul(seq, g.param(*d.w_ih)), g.param(*d.b_ih));
    Var w_hh = g.param(*d.w_hh);
    Var b_hh = g.param(*d.b_hh);
    Var state = g.constant(Matrix<T>::Zero(batch, h));
    std::vector<int> rows(static_cast<std::size_t>(batch));
    for (int s = 0; s < steps; ++s) {
        const int t = reverse ? steps - 1 - s : s;
        for (int b = 0; b < batch; ++b) rows[static_cast<std::size_t>(b)] = b * steps + t;
        Var xt = g.gather_rows(xproj, rows);
        Var hp = g.add_row(g.matmul(state, w_hh), b_hh);
        Var rz = g.sigmoid(g.add(g.cols(xt, 0, 2 * h), g.cols(hp, 0, 2 * h)));
        Var r = g.cols(rz, 0, h);
        Var z = g.cols(rz, h, h);
        Var n = g.tanh(g.add(g.cols(xt, 2 * h, h), g.mul(r, g.cols(hp, 2 * h, h))));
        state = g.add(n, g.mul(z, g.sub(state, n)));
    }
    return state;
}

template <typename T>
Var BiGru<T>::forward(Graph<T>& g, Var seq, int batch, int steps) const {
    if (steps < 1 || batch < 1) throw InputError("GRU needs a non-empty sequence");
    const auto& sv = g.value(seq);
    if (sv.rows() != Eigen::Index(batch) * steps) {
        throw DimensionError("GRU: sequence rows " + std::to_string(sv.rows()) +
                             " != batch*steps " + std::to_string(batch * steps));
    }
    if (sv.cols() != fwd_.w_ih->value.rows()) {
        throw DimensionError("GRU: input " + shape_string(sv.rows(), sv.cols()) +
                             " vs weight " +
                             shape_string(fwd_.w_ih->value.rows(), fwd_.w_ih->value.cols()));
    }
    const Var parts[] = {run(g, fwd_, seq, batch, steps, false),
                         run(g, bwd_, seq, batch, steps, true)};
    return g.concat_cols(parts);
}

// ---------------------------------------------------------------------------

template <typename T>
MultiHeadAttention<T>::MultiHeadAttention(ParameterStore<T>& store, const std::string& prefix,
                                          Rng& rng) {
    w_qkv_ = &store.add(prefix + ".w_qkv", kDim, 3 * kDim);
    b_qkv_ = &store.add(prefix + ".b_qkv", 1, 3 * kDim);
    w_o_ = &store.add(prefix + ".w_o", kDim, kDim);
    b_o_ = &store.add(prefix + ".b_o", 1, kDim);
    init_fan_in(w_qkv_->value, kDim, rng);
    init_fan_in(w_o_->value, kDim, rng);
}

template <typename T>
Var MultiHeadAttention<T>::forward(Graph<T>& g, Var seq, int batch, int steps,
                                   std::vector<Matrix<T>>* attention_maps) const {
    const auto& sv = g.value(seq);
    if (sv.cols() != kDim) {
        throw ConfigError("multi-head attention expects feature dim " + std::to_string(kDim) +
                          ", got " + std::to_string(sv.cols()));
    }
    Var qkv = g.add_row(g.matmul(seq, g.param(*w_qkv_)), g.param(*b_qkv_));
    Var att = g.attention(qkv, batch, steps, kHeads, attention_maps);
    Var proj = g.add_row(g.matmul(att, g.param(*w_o_)), g.param(*b_o_));
    return g.add(seq, proj);
}

template void init_fan_in<float>(Matrix<float>&, Eigen::Index, Rng&);
template void init_fan_in<double>(Matrix<double>&, Eigen::Index, Rng&);
template Var dropout<float>(Graph<float>&, Var, double, Mode, Rng&);
template Var dropout<double>(Graph<double>&, Var, double, Mode, Rng&);
template class Linear<float>;
template class Linear<double>;
template class BatchNorm<float>;
template class BatchNorm<double>;
template class BiGru<float>;
template class BiGru<double>;
template class MultiHeadAttention<float>;
template class MultiHeadAttention<double>;

}  // namespace magnet::nn
