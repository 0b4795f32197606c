#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <deque>
#include <string>
#include <unordered_map>
#include <vector>

namespace magnet::nn {

// All tensors are rank-2 row-major matrices. Vectors are 1 x n rows, scalars
// are 1 x 1. Sequence batches are stacked as (batch * steps) x features with
// row index b * steps + t.
template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using RowVector = Eigen::Matrix<T, 1, Eigen::Dynamic>;

std::string shape_string(Eigen::Index rows, Eigen::Index cols);

template <typename T>
struct Parameter {
    std::string name;
    Matrix<T> value;
    Matrix<T> grad;
    bool trainable = true;

    void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

// Named parameter collection with stable insertion order and stable addresses.
// Layers hold raw pointers into it; the store must outlive them.
template <typename T>
class ParameterStore {
public:
    ParameterStore() = default;
    ParameterStore(const ParameterStore&) = delete;
    ParameterStore& operator=(const ParameterStore&) = delete;
    ParameterStore(ParameterStore&&) = default;
    ParameterStore& operator=(ParameterStore&&) = default;

    Parameter<T>& add(const std::string& name, Eigen::Index rows, Eigen::Index cols,
                      bool trainable = true);

    Parameter<T>* find(const std::string& name);
    const Parameter<T>* find(const std::string& name) const;
    Parameter<T>& at(const std::string& name);

    std::vector<Parameter<T>*> all();
    std::vector<const Parameter<T>*> all() const;
    std::vector<Parameter<T>*> trainable();

    std::size_t size() const { return params_.size(); }
    std::size_t trainable_count() const;  // number of trainable scalars

    void zero_grad();

private:
    std::deque<Parameter<T>> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

extern template class ParameterStore<float>;
extern template class ParameterStore<double>;

}  // namespace magnet::nn
