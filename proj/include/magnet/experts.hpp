#pragma once

#include "magnet/gaussian.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace magnet {

// One endpoint expressed in the intended target's local frame.
struct EndpointSample {
    double w = 0.0;
    double v = 0.0;
    Vec offset;
};

struct CellMoments {
    double w = 0.0;
    double v = 0.0;
    int count = 0;
    Vec mean;
    Vec var;  // unbiased
    bool low_confidence = false;  // count below the configured minimum
    bool degenerate = false;  // some variance is zero
};

struct ConditionMoments {
    int dim = 0;
    std::vector<CellMoments> cells;  // sorted by (w, v)
    std::vector<std::string> warnings;
};

constexpr int kDefaultMinCellCount = 30;

ConditionMoments fit_condition_moments(const std::vector<EndpointSample>& samples,
                                       int min_count = kDefaultMinCellCount);

struct FitProvenance {
    std::vector<std::pair<double, double>> grid;  // (w, v) per cell
    std::vector<int> counts;
    Vec mean_residual;  // per-axis RMS residual of the mean fit
    Vec var_residual;  // per-axis RMS residual of the variance fit

    nlohmann::json to_json() const;
};

// Least squares of mu_d on [1, v, w] and of sigma_d^2 on [1, v^2, w^2] with
// negative variance coefficients clipped and the remaining regressors refit.
TernaryGaussianParams fit_ternary_params(const ConditionMoments& m,
                                         FitProvenance* provenance = nullptr);

struct ExpertSpec {
    std::string id;
    int dim = 2;
    TernaryGaussianParams params;
    nlohmann::json provenance = nlohmann::json::object();

    bool operator==(const ExpertSpec& o) const;
};

constexpr int kRegistrySchemaVersion = 1;

struct ExpertRegistry {
    std::vector<ExpertSpec> experts;

    const ExpertSpec* find(const std::string& id) const;
    const ExpertSpec& at(const std::string& id) const;
    std::vector<std::string> ids() const;
    void validate() const;  // ValidationError on duplicate ids or bad params

    bool operator==(const ExpertRegistry& o) const { return experts == o.experts; }
};

nlohmann::json registry_to_json(const ExpertRegistry& r);
ExpertRegistry registry_from_json(const nlohmann::json& j);
void save_registry(const std::filesystem::path& path, const ExpertRegistry& r);
ExpertRegistry load_registry(const std::filesystem::path& path);

}  // namespace magnet
