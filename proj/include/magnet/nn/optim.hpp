#pragma once

#include "magnet/nn/tensor.hpp"

#include <cstdint>
#include <map>
#include <string>

namespace magnet::nn {

struct AdamWConfig {
    double lr = 5e-4;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <typename T>
struct OptimState {
    std::map<std::string, Matrix<T>> first_moment;
    std::map<std::string, Matrix<T>> second_moment;
    std::int64_t step = 0;
    double lr = 5e-4;
    double weight_decay = 1e-4;
};

// One decoupled-weight-decay Adam update over every trainable parameter,
// using each parameter's accumulated grad. The step is all-or-nothing: a
// non-finite gradient anywhere throws NumericError before anything mutates.
template <typename T>
void adamw_step(ParameterStore<T>& params, OptimState<T>& state, const AdamWConfig& cfg);

extern template void adamw_step<float>(ParameterStore<float>&, OptimState<float>&,
                                       const AdamWConfig&);
extern template void adamw_step<double>(ParameterStore<double>&, OptimState<double>&,
                                        const AdamWConfig&);

}  // namespace magnet::nn
