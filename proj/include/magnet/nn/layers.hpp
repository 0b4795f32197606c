#pragma once

#include "magnet/nn/graph.hpp"

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace magnet::nn {

using Rng = std::mt19937_64;

enum class Mode { train, eval };

inline constexpr double kLeakySlope = 0.01;
inline constexpr double kDropoutRate = 0.1;
inline constexpr double kBatchNormMomentum = 0.1;
inline constexpr double kBatchNormEps = 1e-5;

// Temperature softmax on a plain vector, max-subtracted.
std::vector<double> softmax_t(std::span<const double> logits, double tau);

double cosine_lr(int epoch, int total_epochs, double base_lr);

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <typename T>
void init_fan_in(Matrix<T>& w, Eigen::Index fan_in, Rng& rng);

template <typename T>
class Linear {
public:
    Linear() = default;
    Linear(ParameterStore<T>& store, const std::string& prefix, int in, int out, Rng& rng);

    Var forward(Graph<T>& g, Var x) const;
    int in_dim() const { return static_cast<int>(weight_->value.rows()); }
    int out_dim() const { return static_cast<int>(weight_->value.cols()); }
    Parameter<T>& weight() { return *weight_; }
    Parameter<T>& bias() { return *bias_; }

private:
    Parameter<T>* weight_ = nullptr;  // in x out
    Parameter<T>* bias_ = nullptr;    // 1 x out
};

template <typename T>
class BatchNorm {
public:
    BatchNorm() = default;
    BatchNorm(ParameterStore<T>& store, const std::string& prefix, int width);

    // Training mode normalizes with batch statistics and updates the running
    // stats; eval mode applies the running stats as a fixed affine map.
    Var forward(Graph<T>& g, Var x, Mode mode);

private:
    Parameter<T>* gamma_ = nullptr;
    Parameter<T>* beta_ = nullptr;
    Parameter<T>* running_mean_ = nullptr;  // non-trainable
    Parameter<T>* running_var_ = nullptr;   // non-trainable
};

// Inverted dropout. The mask is drawn from the caller's rng so a fixed seed
// reproduces the same masks.
template <typename T>
Var dropout(Graph<T>& g, Var x, double rate, Mode mode, Rng& rng);

// Bidirectional GRU over (batch*steps) x in rows; returns batch x 2*hidden,
// the forward pass's last state followed by the backward pass's last state.
template <typename T>
class BiGru {
public:
    BiGru() = default;
    BiGru(ParameterStore<T>& store, const std::string& prefix, int in, int hidden, Rng& rng);

    Var forward(Graph<T>& g, Var seq, int batch, int steps) const;
    int hidden() const { return hidden_; }

private:
    struct Direction {
        Parameter<T>* w_ih = nullptr;  // in x 3h  [r | z | n]
        Parameter<T>* w_hh = nullptr;  // h x 3h
        Parameter<T>* b_ih = nullptr;
        Parameter<T>* b_hh = nullptr;
    };
    Var run(Graph<T>& g, const Direction& d, Var seq, int batch, int steps, bool reverse) const;

    Direction fwd_;
    Direction bwd_;
    int hidden_ = 0;
};

// Multi-head self-attention with residual: x + Attn(x W_qkv + b) W_o + b_o.
template <typename T>
class MultiHeadAttention {
public:
    static constexpr int kDim = 128;
    static constexpr int kHeads = 8;

    MultiHeadAttention() = default;
    MultiHeadAttention(ParameterStore<T>& store, const std::string& prefix, Rng& rng);

    Var forward(Graph<T>& g, Var seq, int batch, int steps,
                std::vector<Matrix<T>>* attention_maps = nullptr) const;

private:
    Parameter<T>* w_qkv_ = nullptr;
    Parameter<T>* b_qkv_ = nullptr;
    Parameter<T>* w_o_ = nullptr;
    Parameter<T>* b_o_ = nullptr;
};

}  // namespace magnet::nn
