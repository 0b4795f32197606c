#pragma once

#include "magnet/nn/optim.hpp"
#include "magnet/nn/tensor.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace magnet::nn {

// Checkpoint container:
//   8 bytes  magic "MGNTCKPT"
//   8 bytes  little-endian u64 header length
//   header   UTF-8 JSON {format, version, metadata, tensors:[{name, dtype, shape, offset, nbytes}]}
//   payload  raw little-endian tensor values, concatenated in header order
// Optimizer moments are stored as tensors named "optim.m/<param>" and
// "optim.v/<param>"; the step counter lives in metadata.optim.

struct TensorRecord {
    std::string name;
    std::string dtype;  // "f32" | "f64"
    std::vector<std::int64_t> shape;
    std::vector<std::uint8_t> bytes;  // little-endian
};

struct Checkpoint {
    nlohmann::json metadata = nlohmann::json::object();
    std::vector<TensorRecord> tensors;

    const TensorRecord* find(const std::string& name) const;
};

template <typename T>
TensorRecord make_record(const std::string& name, const Matrix<T>& m);

template <typename T>
Matrix<T> record_matrix(const TensorRecord& r);

// Packs every parameter (trainable and buffers) plus optional optimizer state.
template <typename T>
Checkpoint pack_checkpoint(const ParameterStore<T>& params, const OptimState<T>* optim,
                           nlohmann::json metadata);

// Loads values into an existing store; every store parameter must be present
// with matching shape and dtype.
template <typename T>
void unpack_checkpoint(const Checkpoint& ck, ParameterStore<T>& params, OptimState<T>* optim);

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ck);
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace magnet::nn
