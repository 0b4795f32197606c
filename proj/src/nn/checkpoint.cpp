#include "magnet/nn/checkpoint.hpp"

#include "magnet/errors.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <type_traits>

namespace magnet::nn {

namespace {

constexpr char kMagic[8] = {'M', 'G', 'N', 'T', 'C', 'K', 'P', 'T'};
constexpr int kFormatVersion = 1;

template <typename T>
constexpr const char* dtype_name() {
    if constexpr (std::is_same_v<T, float>) {
        return "f32";
    } else {
        return "f64";
    }
}

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
    std::uint8_t b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(b), std::end(b));
    out.insert(out.end(), std::begin(b), std::end(b));
}

template <typename T>
T get_le(const std::uint8_t* p) {
    std::uint8_t b[sizeof(T)];
    std::memcpy(b, p, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(b), std::end(b));
    T v;
    std::memcpy(&v, b, sizeof(T));
    return v;
}

}  // namespace

const TensorRecord* Checkpoint::find(const std::string& name) const {
    for (const auto& t : tensors) {
        if (t.name == name) return &t;
    }
    return nullptr;
}

template <typename T>
TensorRecord make_record(const std::string& name, const Matrix<T>& m) {
    TensorRecord r;
    r.name = name;
    r.dtype = dtype_name<T>();
    r.shape = {static_cast<std::int64_t>(m.rows()), static_cast<std::int64_t>(m.cols())};
    r.bytes.reserve(static_cast<std::size_t>(m.size()) * sizeof(T));
    for (Eigen::Index i = 0; i < m.size(); ++i) put_le<T>(r.bytes, m.data()[i]);
    return r;
}

template <typename T>
Matrix<T> record_matrix(const TensorRecord& r) {
    if (r.dtype != dtype_name<T>()) {
        throw ParseError("tensor '" + r.name + "' has dtype " + r.dtype + ", expected " +
                         dtype_name<T>());
    }
    if (r.shape.size() != 2) throw ParseError("tensor '" + r.name + "' is not rank 2");
    const auto rows = static_cast<Eigen::Index>(r.shape[0]);
    const auto cols = static_cast<Eigen::Index>(r.shape[1]);
    if (static_cast<std::size_t>(rows * cols) * sizeof(T) != r.bytes.size()) {
        throw ParseError("tensor '" + r.name + "' byte count does not match its shape");
    }
    Matrix<T> m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = get_le<T>(r.bytes.data() + static_cast<std::size_t>(i) * sizeof(T));
    }
    return m;
}

template <typename T>
Checkpoint pack_checkpoint(const ParameterStore<T>& params, const OptimState<T>* optim,
                           nlohmann::json metadata) {
    Checkpoint ck;
    ck.metadata = std::move(metadata);
    for (const auto* p : params.all()) ck.tensors.push_back(make_record(p->name, p->value));
    if (optim != nullptr) {
        ck.metadata["optim"] = {{"step", optim->step},
                                {"lr", optim->lr},
                                {"weight_decay", optim->weight_decay}};
        for (const auto& [name, m] : optim->first_moment) {
            ck.tensors.push_back(make_record("optim.m/" + name, m));
        }
        for (const auto& [name, v] : optim->second_moment) {
            ck.tensors.push_back(make_record("optim.v/" + name, v));
        }
    }
    return ck;
}

template <typename T>
void unpack_checkpoint(const Checkpoint& ck, ParameterStore<T>& params, OptimState<T>* optim) {
    for (auto* p : params.all()) {
        const TensorRecord* r = ck.find(p->name);
        if (r == nullptr) throw ParseError("checkpoint is missing parameter '" + p->name + "'");
        Matrix<T> m = record_matrix<T>(*r);
        if (m.rows() != p->value.rows() || m.cols() != p->value.cols()) {
            throw ParseError("checkpoint parameter '" + p->name + "' has shape " +
                             shape_string(m.rows(), m.cols()) + ", model expects " +
                             shape_string(p->value.rows(), p->value.cols()));
        }
        p->value = std::move(m);
    }
    if (optim != nullptr) {
        *optim = OptimState<T>{};
        if (ck.metadata.contains("optim")) {
            const auto& o = ck.metadata.at("optim");
            optim->step = o.at("step").get<std::int64_t>();
            optim->lr = o.at("lr").get<double>();
            optim->weight_decay = o.at("weight_decay").get<double>();
        }
        for (const auto& t : ck.tensors) {
            if (t.name.rfind("optim.m/", 0) == 0) {
                optim->first_moment[t.name.substr(8)] = record_matrix<T>(t);
            } else if (t.name.rfind("optim.v/", 0) == 0) {
                optim->second_moment[t.name.substr(8)] = record_matrix<T>(t);
            }
        }
    }
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ck) {
    nlohmann::json header;
    header["format"] = "magnet-checkpoint";
    header["version"] = kFormatVersion;
    header["metadata"] = ck.metadata;
    header["tensors"] = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& t : ck.tensors) {
        header["tensors"].push_back({{"name", t.name},
                                     {"dtype", t.dtype},
                                     {"shape", t.shape},
                                     {"offset", offset},
                                     {"nbytes", t.bytes.size()}});
        offset += t.bytes.size();
    }
    const std::string text = header.dump();
    std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
    put_le<std::uint64_t>(out, text.size());
    out.insert(out.end(), text.begin(), text.end());
    for (const auto& t : ck.tensors) out.insert(out.end(), t.bytes.begin(), t.bytes.end());
    return out;
}

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 16 || !std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) {
        throw ParseError("not a checkpoint file (bad magic)");
    }
    const auto hlen = get_le<std::uint64_t>(bytes.data() + 8);
    if (16 + hlen > bytes.size()) throw ParseError("checkpoint header truncated");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin() + 16,
                                       bytes.begin() + 16 + static_cast<std::ptrdiff_t>(hlen));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("checkpoint header: ") + e.what());
    }
    if (header.value("format", "") != "magnet-checkpoint") {
        throw ParseError("checkpoint header has wrong format tag");
    }
    if (header.value("version", 0) != kFormatVersion) {
        throw ParseError("checkpoint version " + header.value("version", nlohmann::json()).dump() +
                         " unsupported (expected " + std::to_string(kFormatVersion) + ")");
    }
    Checkpoint ck;
    ck.metadata = header.value("metadata", nlohmann::json::object());
    const std::size_t base = 16 + hlen;
    for (const auto& t : header.at("tensors")) {
        TensorRecord r;
        r.name = t.at("name").get<std::string>();
        r.dtype = t.at("dtype").get<std::string>();
        r.shape = t.at("shape").get<std::vector<std::int64_t>>();
        const auto off = t.at("offset").get<std::uint64_t>();
        const auto n = t.at("nbytes").get<std::uint64_t>();
        if (base + off + n > bytes.size()) throw ParseError("tensor '" + r.name + "' truncated");
        r.bytes.assign(bytes.begin() + static_cast<std::ptrdiff_t>(base + off),
                       bytes.begin() + static_cast<std::ptrdiff_t>(base + off + n));
        ck.tensors.push_back(std::move(r));
    }
    return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    const auto bytes = serialize_checkpoint(ck);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write checkpoint " + path.string());
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ParseError("cannot open checkpoint " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    return deserialize_checkpoint(bytes);
}

template TensorRecord make_record<float>(const std::string&, const Matrix<float>&);
template TensorRecord make_record<double>(const std::string&, const Matrix<double>&);
template Matrix<float> record_matrix<float>(const TensorRecord&);
template Matrix<double> record_matrix<double>(const TensorRecord&);
template Checkpoint pack_checkpoint<float>(const ParameterStore<float>&, const OptimState<float>*,
                                           nlohmann::json);
template Checkpoint pack_checkpoint<double>(const ParameterStore<double>&,
                                            const OptimState<double>*, nlohmann::json);
template void unpack_checkpoint<float>(const Checkpoint&, ParameterStore<float>&,
                                       OptimState<float>*);
template void unpack_checkpoint<double>(const Checkpoint&, ParameterStore<double>&,
                                        OptimState<double>*);

}  // namespace magnet::nn
