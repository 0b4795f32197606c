#include "magnet/nn/optim.hpp"

#include "magnet/errors.hpp"

#include <cmath>

namespace magnet::nn {

template <typename T>
void adamw_step(ParameterStore<T>& params, OptimState<T>& state, const AdamWConfig& cfg) {
    if (state.step < 0) throw UsageError("optimizer step counter is negative");
    auto trainable = params.trainable();
    for (const auto* p : trainable) {
        if (p->grad.rows() != p->value.rows() || p->grad.cols() != p->value.cols()) {
            throw DimensionError("gradient of '" + p->name + "' has shape " +
                                 shape_string(p->grad.rows(), p->grad.cols()) + ", value " +
                                 shape_string(p->value.rows(), p->value.cols()));
        }
        if (!p->grad.allFinite()) {
            throw NumericError("non-finite gradient in parameter '" + p->name + "'");
        }
    }

    state.step += 1;
    state.lr = cfg.lr;
    state.weight_decay = cfg.weight_decay;
    const double t = static_cast<double>(state.step);
    const T b1 = static_cast<T>(cfg.beta1);
    const T b2 = static_cast<T>(cfg.beta2);
    const T bias1 = static_cast<T>(1.0 - std::pow(cfg.beta1, t));
    const T bias2 = static_cast<T>(1.0 - std::pow(cfg.beta2, t));
    const T lr = static_cast<T>(cfg.lr);
    const T decay = static_cast<T>(1.0 - cfg.lr * cfg.weight_decay);
    const T eps = static_cast<T>(cfg.eps);

    for (auto* p : trainable) {
        auto [mit, m_new] = state.first_moment.try_emplace(p->name);
        auto [vit, v_new] = state.second_moment.try_emplace(p->name);
        Matrix<T>& m = mit->second;
        Matrix<T>& v = vit->second;
        if (m_new) m = Matrix<T>::Zero(p->value.rows(), p->value.cols());
        if (v_new) v = Matrix<T>::Zero(p->value.rows(), p->value.cols());
        m = b1 * m + (T(1) - b1) * p->grad;
        v = b2 * v + (T(1) - b2) * p->grad.cwiseAbs2();
        p->value *= decay;
        p->value.array() -= lr * (m.array() / bias1) / ((v.array() / bias2).sqrt() + eps);
    }
}

template void adamw_step<float>(ParameterStore<float>&, OptimState<float>&, const AdamWConfig&);
template void adamw_step<double>(ParameterStore<double>&, OptimState<double>&,
                                 const AdamWConfig&);

}  // namespace magnet::nn
