#pragma once

#include "magnet/nn/tensor.hpp"

#include <functional>
#include <span>
#include <vector>

namespace magnet::nn {

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode tape. Every op appends a node holding its forward value and a
// closure that pushes the node's gradient into its inputs. The tape is
// single-use: build, call backward() once, read parameter gradients.
template <typename T>
class Graph {
public:
    using Mat = Matrix<T>;
    using BackwardFn = std::function<void(Graph&, const Mat& out_grad)>;

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var constant(Mat value);
    // Leaf bound to a parameter; backward() accumulates into param.grad when
    // the parameter is trainable.
    Var param(Parameter<T>& p);

    const Mat& value(Var v) const { return nodes_.at(v.id).value; }
    // Gradient of the last backward() target w.r.t. this node (zeros if none).
    Mat grad(Var v) const;
    bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
    std::size_t size() const { return nodes_.size(); }

    void backward(Var loss);

    // Custom fused op. `backward` receives the output gradient and must call
    // accumulate() for each input that requires a gradient.
    Var custom(std::span<const Var> inputs, Mat value, BackwardFn backward);
    void accumulate(Var v, const Mat& g);

    // --- elementwise / algebra -------------------------------------------
    Var matmul(Var a, Var b);
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var add_row(Var a, Var row);           // a (r x c) + row (1 x c) broadcast
    Var mul_const(Var a, const Mat& c);    // elementwise by a constant, same shape
    Var scale(Var a, T c);
    Var add_scalar(Var a, T c);
    Var sigmoid(Var a);
    Var tanh(Var a);
    Var exp(Var a);
    Var log(Var a);
    Var leaky_relu(Var a, T slope);

    // --- structural --------------------------------------------------------
    Var concat_cols(std::span<const Var> parts);
    Var cols(Var a, Eigen::Index begin, Eigen::Index count);
    Var gather_rows(Var a, std::vector<int> rows);

    // --- reductions --------------------------------------------------------
    Var sum(Var a);
    Var mean(Var a);
    Var logsumexp_rows(Var a);             // r x c -> r x 1
    Var softmax_rows(Var a, T tau);        // row-wise softmax(a / tau)
    Var log_softmax_rows(Var a, T tau);

    // --- fused layers -------------------------------------------------------
    // Training-mode batch norm over rows; writes the batch mean and biased
    // variance to the out-params for running-stat updates.
    Var batch_norm_train(Var x, Var gamma, Var beta, T eps, RowVector<T>* batch_mean,
                         RowVector<T>* batch_var);
    // Scaled dot-product self-attention over per-sample sequences.
    // qkv is (batch*steps) x 3*dim laid out [Q | K | V]; heads split dim evenly.
    // If probs is given it receives batch*heads row-stochastic steps x steps maps.
    Var attention(Var qkv, int batch, int steps, int heads,
                  std::vector<Mat>* probs = nullptr);

private:
    struct Node {
        Mat value;
        Mat grad;
        bool requires_grad = false;
        bool has_grad = false;
        Parameter<T>* param = nullptr;
        BackwardFn backward;
    };

    Var push(Mat value, bool requires_grad, BackwardFn backward);
    bool any_requires_grad(std::span<const Var> inputs) const;
    void check(Var v) const;

    std::vector<Node> nodes_;
};

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace magnet::nn
