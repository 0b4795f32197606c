#include "magnet/nn/graph.hpp"

#include "magnet/errors.hpp"

#include <cmath>
#include <limits>
#include <memory>

namespace magnet::nn {

std::string shape_string(Eigen::Index rows, Eigen::Index cols) {
    return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]";
}

// ---------------------------------------------------------------------------
// ParameterStore

template <typename T>
Parameter<T>& ParameterStore<T>::add(const std::string& name, Eigen::Index rows,
                                     Eigen::Index cols, bool trainable) {
    if (index_.count(name) != 0) {
        throw ConfigError("duplicate parameter name '" + name + "'");
    }
    index_.emplace(name, params_.size());
    auto& p = params_.emplace_back();
    p.name = name;
    p.value = Matrix<T>::Zero(rows, cols);
    p.grad = Matrix<T>::Zero(rows, cols);
    p.trainable = trainable;
    return p;
}

template <typename T>
Parameter<T>* ParameterStore<T>::find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &params_[it->second];
}

template <typename T>
const Parameter<T>* ParameterStore<T>::find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &params_[it->second];
}

template <typename T>
Parameter<T>& ParameterStore<T>::at(const std::string& name) {
    auto* p = find(name);
    if (p == nullptr) throw ConfigError("unknown parameter '" + name + "'");
    return *p;
}

template <typename T>
std::vector<Parameter<T>*> ParameterStore<T>::all() {
    std::vector<Parameter<T>*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(&p);
    return out;
}

template <typename T>
std::vector<const Parameter<T>*> ParameterStore<T>::all() const {
    std::vector<const Parameter<T>*> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(&p);
    return out;
}

template <typename T>
std::vector<Parameter<T>*> ParameterStore<T>::trainable() {
    std::vector<Parameter<T>*> out;
    for (auto& p : params_) {
        if (p.trainable) out.push_back(&p);
    }
    return out;
}

template <typename T>
std::size_t ParameterStore<T>::trainable_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) {
        if (p.trainable) n += static_cast<std::size_t>(p.value.size());
    }
    return n;
}

template <typename T>
void ParameterStore<T>::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

// ---------------------------------------------------------------------------
// Graph core

template <typename T>
void Graph<T>::check(Var v) const {
    if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
        throw UsageError("invalid graph variable " + std::to_string(v.id));
    }
}

template <typename T>
bool Graph<T>::any_requires_grad(std::span<const Var> inputs) const {
    for (Var v : inputs) {
        check(v);
        if (nodes_[v.id].requires_grad) return true;
    }
    return false;
}

template <typename T>
Var Graph<T>::push(Mat value, bool requires_grad, BackwardFn backward) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    if (requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size() - 1)};
}

template <typename T>
Var Graph<T>::constant(Mat value) {
    return push(std::move(value), false, nullptr);
}

template <typename T>
Var Graph<T>::param(Parameter<T>& p) {
    Var v = push(p.value, p.trainable, nullptr);
    nodes_.back().param = p.trainable ? &p : nullptr;
    return v;
}

template <typename T>
typename Graph<T>::Mat Graph<T>::grad(Var v) const {
    check(v);
    const Node& n = nodes_[v.id];
    if (!n.has_grad) return Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
}

template <typename T>
void Graph<T>::accumulate(Var v, const Mat& g) {
    Node& n = nodes_[v.id];
    if (!n.requires_grad) return;
    if (g.rows() != n.value.rows() || g.cols() != n.value.cols()) {
        throw DimensionError("gradient shape " + shape_string(g.rows(), g.cols()) +
                             " does not match value shape " +
                             shape_string(n.value.rows(), n.value.cols()));
    }
    if (!n.has_grad) {
        n.grad = g;
        n.has_grad = true;
    } else {
        n.grad += g;
    }
}

template <typename T>
void Graph<T>::backward(Var loss) {
    check(loss);
    const Mat& lv = nodes_[loss.id].value;
    if (lv.rows() != 1 || lv.cols() != 1) {
        throw UsageError("backward() needs a scalar loss, got " +
                         shape_string(lv.rows(), lv.cols()));
    }
    for (auto& n : nodes_) n.has_grad = false;
    accumulate(loss, Mat::Ones(1, 1));
    for (int i = loss.id; i >= 0; --i) {
        Node& n = nodes_[i];
        if (!n.has_grad) continue;
        if (n.param != nullptr) {
            n.param->grad += n.grad;
        } else if (n.backward) {
            n.backward(*this, n.grad);
        }
    }
}

template <typename T>
Var Graph<T>::custom(std::span<const Var> inputs, Mat value, BackwardFn backward) {
    return push(std::move(value), any_requires_grad(inputs), std::move(backward));
}

// ---------------------------------------------------------------------------
// Elementwise / algebra

namespace {

template <typename M>
void require_same_shape(const M& a, const M& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw DimensionError(std::string(op) + ": shapes " + shape_string(a.rows(), a.cols()) +
                             " and " + shape_string(b.rows(), b.cols()) + " differ");
    }
}

}  // namespace

template <typename T>
Var Graph<T>::matmul(Var a, Var b) {
    check(a);
    check(b);
    const Mat& av = value(a);
    const Mat& bv = value(b);
    if (av.cols() != bv.rows()) {
        throw DimensionError("matmul: " + shape_string(av.rows(), av.cols()) + " x " +
                             shape_string(bv.rows(), bv.cols()));
    }
    Mat out = av * bv;
    const Var in[] = {a, b};
    return custom(in, std::move(out), [a, b](Graph& g, const Mat& go) {
        if (g.requires_grad(a)) g.accumulate(a, go * g.value(b).transpose());
        if (g.requires_grad(b)) g.accumulate(b, g.value(a).transpose() * go);
    });
}

template <typename T>
Var Graph<T>::add(Var a, Var b) {
    check(a);
    check(b);
    require_same_shape(value(a), value(b), "add");
    const Var in[] = {a, b};
    return custom(in, value(a) + value(b), [a, b](Graph& g, const Mat& go) {
        g.accumulate(a, go);
        g.accumulate(b, go);
    });
}

template <typename T>
Var Graph<T>::sub(Var a, Var b) {
    check(a);
    check(b);
    require_same_shape(value(a), value(b), "sub");
    const Var in[] = {a, b};
    return custom(in, value(a) - value(b), [a, b](Graph& g, const Mat& go) {
        g.accumulate(a, go);
        if (g.requires_grad(b)) g.accumulate(b, -go);
    });
}

template <typename T>
Var Graph<T>::mul(Var a, Var b) {
    check(a);
    check(b);
    require_same_shape(value(a), value(b), "mul");
    const Var in[] = {a, b};
    Mat out = value(a).cwiseProduct(value(b));
    return custom(in, std::move(out), [a, b](Graph& g, const Mat& go) {
        if (g.requires_grad(a)) g.accumulate(a, go.cwiseProduct(g.value(b)));
        if (g.requires_grad(b)) g.accumulate(b, go.cwiseProduct(g.value(a)));
    });
}

template <typename T>
Var Graph<T>::add_row(Var a, Var row) {
    check(a);
    check(row);
    const Mat& av = value(a);
    const Mat& rv = value(row);
    if (rv.rows() != 1 || rv.cols() != av.cols()) {
        throw DimensionError("add_row: " + shape_string(av.rows(), av.cols()) + " + " +
                             shape_string(rv.rows(), rv.cols()));
    }
    Mat out = av.rowwise() + rv.row(0);
    const Var in[] = {a, row};
    return custom(in, std::move(out), [a, row](Graph& g, const Mat& go) {
        g.accumulate(a, go);
        if (g.requires_grad(row)) g.accumulate(row, go.colwise().sum());
    });
}

template <typename T>
Var Graph<T>::mul_const(Var a, const Mat& c) {
    check(a);
    require_same_shape(value(a), c, "mul_const");
    const Var in[] = {a};
    return custom(in, value(a).cwiseProduct(c),
                  [a, c](Graph& g, const Mat& go) { g.accumulate(a, go.cwiseProduct(c)); });
}

template <typename T>
Var Graph<T>::scale(Var a, T c) {
    check(a);
    const Var in[] = {a};
    return custom(in, value(a) * c, [a, c](Graph& g, const Mat& go) { g.accumulate(a, go * c); });
}

template <typename T>
Var Graph<T>::add_scalar(Var a, T c) {
    check(a);
    const Var in[] = {a};
    Mat out = value(a).array() + c;
    return custom(in, std::move(out), [a](Graph& g, const Mat& go) { g.accumulate(a, go); });
}

template <typename T>
Var Graph<T>::sigmoid(Var a) {
    check(a);
    Mat out = (T(1) + (-value(a).array()).exp()).inverse().matrix();
    const Var in[] = {a};
    Var o = custom(in, std::move(out), nullptr);
    if (requires_grad(o)) {
        nodes_[o.id].backward = [a, o](Graph& g, const Mat& go) {
            const Mat& y = g.value(o);
            g.accumulate(a, (go.array() * y.array() * (T(1) - y.array())).matrix());
        };
    }
    return o;
}

template <typename T>
Var Graph<T>::tanh(Var a) {
    check(a);
    Mat out = value(a).array().tanh().matrix();
    const Var in[] = {a};
    Var o = custom(in, std::move(out), nullptr);
    if (requires_grad(o)) {
        nodes_[o.id].backward = [a, o](Graph& g, const Mat& go) {
            const Mat& y = g.value(o);
            g.accumulate(a, (go.array() * (T(1) - y.array().square())).matrix());
        };
    }
    return o;
}

template <typename T>
Var Graph<T>::exp(Var a) {
    check(a);
    Mat out = value(a).array().exp().matrix();
    const Var in[] = {a};
    Var o = custom(in, std::move(out), nullptr);
    if (requires_grad(o)) {
        nodes_[o.id].backward = [a, o](Graph& g, const Mat& go) {
            g.accumulate(a, go.cwiseProduct(g.value(o)));
        };
    }
    return o;
}

template <typename T>
Var Graph<T>::log(Var a) {
    check(a);
    Mat out = value(a).array().log().matrix();
    const Var in[] = {a};
    return custom(in, std::move(out), [a](Graph& g, const Mat& go) {
        g.accumulate(a, go.cwiseQuotient(g.value(a)));
    });
}

template <typename T>
Var Graph<T>::leaky_relu(Var a, T slope) {
    check(a);
    const Mat& x = value(a);
    Mat out = x.unaryExpr([slope](T v) { return v > T(0) ? v : slope * v; });
    const Var in[] = {a};
    return custom(in, std::move(out), [a, slope](Graph& g, const Mat& go) {
        const Mat& xv = g.value(a);
        Mat d = go;
        for (Eigen::Index i = 0; i < d.size(); ++i) {
            if (!(xv.data()[i] > T(0))) d.data()[i] *= slope;
        }
        g.accumulate(a, d);
    });
}

// ---------------------------------------------------------------------------
// Structural

template <typename T>
Var Graph<T>::concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw UsageError("concat_cols: no inputs");
    const Eigen::Index rows = value(parts[0]).rows();
    Eigen::Index total = 0;
    for (Var p : parts) {
        check(p);
        if (value(p).rows() != rows) {
            throw DimensionError("concat_cols: row counts differ (" + std::to_string(rows) +
                                 " vs " + std::to_string(value(p).rows()) + ")");
        }
        total += value(p).cols();
    }
    Mat out(rows, total);
    Eigen::Index off = 0;
    for (Var p : parts) {
        out.middleCols(off, value(p).cols()) = value(p);
        off += value(p).cols();
    }
    std::vector<Var> ins(parts.begin(), parts.end());
    return custom(parts, std::move(out), [ins](Graph& g, const Mat& go) {
        Eigen::Index o = 0;
        for (Var p : ins) {
            const Eigen::Index c = g.value(p).cols();
            if (g.requires_grad(p)) g.accumulate(p, go.middleCols(o, c));
            o += c;
        }
    });
}

template <typename T>
Var Graph<T>::cols(Var a, Eigen::Index begin, Eigen::Index count) {
    check(a);
    const Mat& av = value(a);
    if (begin < 0 || count < 0 || begin + count > av.cols()) {
        throw DimensionError("cols: range [" + std::to_string(begin) + ", " +
                             std::to_string(begin + count) + ") outside " +
                             shape_string(av.rows(), av.cols()));
    }
    const Var in[] = {a};
    return custom(in, av.middleCols(begin, count), [a, begin, count](Graph& g, const Mat& go) {
        Mat d = Mat::Zero(g.value(a).rows(), g.value(a).cols());
        d.middleCols(begin, count) = go;
        g.accumulate(a, d);
    });
}

template <typename T>
Var Graph<T>::gather_rows(Var a, std::vector<int> rows) {
    check(a);
    const Mat& av = value(a);
    Mat out(static_cast<Eigen::Index>(rows.size()), av.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= av.rows()) {
            throw DimensionError("gather_rows: row " + std::to_string(rows[i]) + " outside " +
                                 shape_string(av.rows(), av.cols()));
        }
        out.row(static_cast<Eigen::Index>(i)) = av.row(rows[i]);
    }
    const Var in[] = {a};
    return custom(in, std::move(out), [a, rows = std::move(rows)](Graph& g, const Mat& go) {
        Mat d = Mat::Zero(g.value(a).rows(), g.value(a).cols());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            d.row(rows[i]) += go.row(static_cast<Eigen::Index>(i));
        }
        g.accumulate(a, d);
    });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Var Graph<T>::sum(Var a) {
    check(a);
    Mat out(1, 1);
    out(0, 0) = value(a).sum();
    const Var in[] = {a};
    return custom(in, std::move(out), [a](Graph& g, const Mat& go) {
        g.accumulate(a, Mat::Constant(g.value(a).rows(), g.value(a).cols(), go(0, 0)));
    });
}

template <typename T>
Var Graph<T>::mean(Var a) {
    check(a);
    const auto n = static_cast<T>(value(a).size());
    if (n == T(0)) throw DimensionError("mean: empty tensor");
    return scale(sum(a), T(1) / n);
}

namespace {

template <typename T>
Matrix<T> row_softmax(const Matrix<T>& x, T tau) {
    Matrix<T> p(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const T m = x.row(r).maxCoeff();
        p.row(r) = ((x.row(r).array() - m) / tau).exp().matrix();
        p.row(r) /= p.row(r).sum();
    }
    return p;
}

}  // namespace

template <typename T>
Var Graph<T>::logsumexp_rows(Var a) {
    check(a);
    const Mat& x = value(a);
    Mat out(x.rows(), 1);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const T m = x.row(r).maxCoeff();
        if (!std::isfinite(m)) {
            out(r, 0) = m;
            continue;
        }
        out(r, 0) = m + std::log((x.row(r).array() - m).exp().sum());
    }
    const Var in[] = {a};
    return custom(in, std::move(out), [a](Graph& g, const Mat& go) {
        const Mat& xv = g.value(a);
        Mat d = Mat::Zero(xv.rows(), xv.cols());
        for (Eigen::Index r = 0; r < xv.rows(); ++r) {
            const T m = xv.row(r).maxCoeff();
            if (!std::isfinite(m)) continue;
            RowVector<T> p = (xv.row(r).array() - m).exp().matrix();
            p /= p.sum();
            d.row(r) = go(r, 0) * p;
        }
        g.accumulate(a, d);
    });
}

template <typename T>
Var Graph<T>::softmax_rows(Var a, T tau) {
    check(a);
    if (!(tau > T(0))) throw ConfigError("softmax temperature must be positive");
    const Var in[] = {a};
    Var o = custom(in, row_softmax(value(a), tau), nullptr);
    if (requires_grad(o)) {
        nodes_[o.id].backward = [a, o, tau](Graph& g, const Mat& go) {
            const Mat& p = g.value(o);
            Mat d(p.rows(), p.cols());
            for (Eigen::Index r = 0; r < p.rows(); ++r) {
                const T dot = go.row(r).dot(p.row(r));
                d.row(r) = (p.row(r).array() * (go.row(r).array() - dot) / tau).matrix();
            }
            g.accumulate(a, d);
        };
    }
    return o;
}

template <typename T>
Var Graph<T>::log_softmax_rows(Var a, T tau) {
    check(a);
    if (!(tau > T(0))) throw ConfigError("softmax temperature must be positive");
    const Mat& x = value(a);
    Mat out(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        RowVector<T> z = x.row(r) / tau;
        const T m = z.maxCoeff();
        const T lse = m + std::log((z.array() - m).exp().sum());
        out.row(r) = z.array() - lse;
    }
    const Var in[] = {a};
    Var o = custom(in, std::move(out), nullptr);
    if (requires_grad(o)) {
        nodes_[o.id].backward = [a, o, tau](Graph& g, const Mat& go) {
            const Mat p = g.value(o).array().exp().matrix();
            Mat d(p.rows(), p.cols());
            for (Eigen::Index r = 0; r < p.rows(); ++r) {
                d.row(r) = (go.row(r) - p.row(r) * go.row(r).sum()) / tau;
            }
            g.accumulate(a, d);
        };
    }
    return o;
}

// ---------------------------------------------------------------------------
// Fused layers

template <typename T>
Var Graph<T>::batch_norm_train(Var x, Var gamma, Var beta, T eps, RowVector<T>* batch_mean,
                               RowVector<T>* batch_var) {
    check(x);
    const Mat& xv = value(x);
    const Eigen::Index n = xv.rows();
    const Eigen::Index c = xv.cols();
    if (n < 2) throw DimensionError("batch norm in training mode needs at least 2 rows");
    if (value(gamma).cols() != c || value(beta).cols() != c) {
        throw DimensionError("batch norm: scale/shift width does not match " +
                             shape_string(n, c));
    }
    RowVector<T> mu = xv.colwise().mean();
    Mat centered = xv.rowwise() - mu;
    RowVector<T> var = centered.array().square().colwise().sum().matrix() / T(n);
    RowVector<T> inv_std = (var.array() + eps).rsqrt().matrix();
    Mat xhat = centered.array().rowwise() * inv_std.array();
    Mat out = (xhat.array().rowwise() * value(gamma).row(0).array()).rowwise() +
              value(beta).row(0).array();
    if (batch_mean != nullptr) *batch_mean = mu;
    if (batch_var != nullptr) *batch_var = var;
    const Var in[] = {x, gamma, beta};
    return custom(in, std::move(out),
                  [x, gamma, beta, xhat = std::move(xhat), inv_std](Graph& g, const Mat& go) {
                      const T nn = static_cast<T>(xhat.rows());
                      if (g.requires_grad(gamma)) {
                          g.accumulate(gamma, go.cwiseProduct(xhat).colwise().sum());
                      }
                      if (g.requires_grad(beta)) g.accumulate(beta, go.colwise().sum());
                      if (g.requires_grad(x)) {
                          Mat dxhat = go.array().rowwise() * g.value(gamma).row(0).array();
                          RowVector<T> s1 = dxhat.colwise().sum();
                          RowVector<T> s2 = dxhat.cwiseProduct(xhat).colwise().sum();
                          Mat dx = ((dxhat * nn).rowwise() - s1).array() -
                                   xhat.array().rowwise() * s2.array();
                          dx = dx.array().rowwise() * (inv_std.array() / nn);
                          g.accumulate(x, dx);
                      }
                  });
}

template <typename T>
Var Graph<T>::attention(Var qkv, int batch, int steps, int heads, std::vector<Mat>* probs) {
    check(qkv);
    const Mat& in = value(qkv);
    if (batch < 1 || steps < 1 || heads < 1) throw DimensionError("attention: empty input");
    if (in.rows() != Eigen::Index(batch) * steps || in.cols() % 3 != 0) {
        throw DimensionError("attention: qkv shape " + shape_string(in.rows(), in.cols()) +
                             " inconsistent with batch " + std::to_string(batch) + " x steps " +
                             std::to_string(steps));
    }
    const Eigen::Index dim = in.cols() / 3;
    if (dim % heads != 0) {
        throw ConfigError("attention: model dim " + std::to_string(dim) +
                          " not divisible by " + std::to_string(heads) + " heads");
    }
    const Eigen::Index hd = dim / heads;
    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(hd));

    auto maps = std::make_shared<std::vector<Mat>>();
    maps->reserve(static_cast<std::size_t>(batch) * heads);
    Mat out(in.rows(), dim);
    for (int b = 0; b < batch; ++b) {
        const Eigen::Index r0 = Eigen::Index(b) * steps;
        for (int h = 0; h < heads; ++h) {
            auto q = in.block(r0, h * hd, steps, hd);
            auto k = in.block(r0, dim + h * hd, steps, hd);
            auto v = in.block(r0, 2 * dim + h * hd, steps, hd);
            Mat scores = (q * k.transpose()) * inv_sqrt;
            Mat p = row_softmax<T>(scores, T(1));
            out.block(r0, h * hd, steps, hd) = p * v;
            maps->push_back(std::move(p));
        }
    }
    if (probs != nullptr) *probs = *maps;
    const Var ins[] = {qkv};
    return custom(ins, std::move(out),
                  [qkv, batch, steps, heads, dim, hd, inv_sqrt, maps](Graph& g, const Mat& go) {
                      const Mat& xin = g.value(qkv);
                      Mat d = Mat::Zero(xin.rows(), xin.cols());
                      for (int b = 0; b < batch; ++b) {
                          const Eigen::Index r0 = Eigen::Index(b) * steps;
                          for (int h = 0; h < heads; ++h) {
                              const Mat& p = (*maps)[static_cast<std::size_t>(b) * heads + h];
                              auto q = xin.block(r0, h * hd, steps, hd);
                              auto k = xin.block(r0, dim + h * hd, steps, hd);
                              auto v = xin.block(r0, 2 * dim + h * hd, steps, hd);
                              auto dout = go.block(r0, h * hd, steps, hd);
                              Mat dp = dout * v.transpose();
                              Mat ds(steps, steps);
                              for (int r = 0; r < steps; ++r) {
                                  const T dot = dp.row(r).dot(p.row(r));
                                  ds.row(r) = (p.row(r).array() * (dp.row(r).array() - dot)).matrix();
                              }
                              ds *= inv_sqrt;
                              d.block(r0, h * hd, steps, hd) += ds * k;
                              d.block(r0, dim + h * hd, steps, hd) += ds.transpose() * q;
                              d.block(r0, 2 * dim + h * hd, steps, hd) += p.transpose() * dout;
                          }
                      }
                      g.accumulate(qkv, d);
                  });
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template class Graph<float>;
template class Graph<double>;

}  // namespace magnet::nn
