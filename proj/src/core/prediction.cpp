#include "magnet/prediction.hpp"

#include "magnet/datagen.hpp"
#include "magnet/env.hpp"

#include <algorithm>
#include <numeric>

namespace magnet {

std::vector<int> rank_by_score(const std::vector<int>& ids, const std::vector<double>& scores) {
    std::vector<std::size_t> order(ids.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return ids[a] < ids[b];
    });
    std::vector<int> out;
    out.reserve(ids.size());
    for (std::size_t i : order) out.push_back(ids[i]);
    return out;
}

nlohmann::json PredictionRecord::to_json() const {
    nlohmann::json w = nlohmann::json::array();
    nlohmann::json mom = nlohmann::json::array();
    for (Eigen::Index i = 0; i < weights.rows(); ++i) {
        std::vector<double> row(static_cast<std::size_t>(weights.cols()));
        for (Eigen::Index k = 0; k < weights.cols(); ++k) row[static_cast<std::size_t>(k)] = weights(i, k);
        w.push_back(row);
    }
    for (const auto& per_target : moments) {
        nlohmann::json t = nlohmann::json::array();
        for (const auto& m : per_target) {
            t.push_back({{"mean", std::vector<double>(m.mean.data(), m.mean.data() + m.mean.size())},
                         {"var", std::vector<double>(m.var.data(), m.var.data() + m.var.size())}});
        }
        mom.push_back(t);
    }
    return {{"trial_id", trial_id},
            {"target_ids", target_ids},
            {"per_target_logp", log_density},
            {"ranked", ranked},
            {"experts", expert_ids},
            {"weights", w},
            {"adapted_moments", mom},
            {"zero_filled_env", zero_filled_env}};
}

namespace {

void round_reals(nlohmann::json& j, int digits) {
    if (j.is_number_float()) {
        j = round_significant(j.get<double>(), digits);
    } else if (j.is_structured()) {
        for (auto& x : j) round_reals(x, digits);
    }
}

}  // namespace

std::string record_digest(const PredictionRecord& p, int digits) {
    nlohmann::json j = p.to_json();
    round_reals(j, digits);
    return content_hash(j.dump());
}

}  // namespace magnet
