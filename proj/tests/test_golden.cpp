#include "doctest.h"

#include "magnet/datagen.hpp"
#include "magnet/service.hpp"

#include <fstream>

using namespace magnet;

namespace {

const std::filesystem::path kDir = "tests/golden";

std::vector<TrialRecord> fixture_trials() {
    std::ifstream f(kDir / "trials.jsonl");
    REQUIRE(f.good());
    std::vector<TrialRecord> out;
    std::string line;
    while (std::getline(f, line)) out.push_back(trial_from_json(nlohmann::json::parse(line)));
    return out;
}

nlohmann::json snapshots() {
    std::ifstream f(kDir / "snapshots.json");
    REQUIRE(f.good());
    return nlohmann::json::parse(f);
}

}  // namespace

TEST_CASE("golden fixture predictions match the committed snapshots") {
    const auto trials = fixture_trials();
    const auto snap = snapshots();
    REQUIRE(trials.size() == 100);
    REQUIRE(snap.size() == 100);
    auto m = load_model(kDir / "model.ckpt");
    int zero_filled = 0;
    for (std::size_t i = 0; i < trials.size(); ++i) {
        const auto p = m->predict(trials[i]);
        CAPTURE(trials[i].trial_id);
        CHECK(snap[i].at("trial_id") == trials[i].trial_id);
        CHECK(snap[i].at("ranked").get<std::vector<int>>() == p.ranked);
        CHECK(snap[i].at("digest") == record_digest(p));
        zero_filled += p.zero_filled_env ? 1 : 0;
        for (Eigen::Index r = 0; r < p.weights.rows(); ++r) {
            CHECK(p.weights.row(r).sum() == doctest::Approx(1.0).epsilon(1e-6));
            CHECK(p.weights.row(r).minCoeff() >= 0.0);
        }
    }
    CHECK(zero_filled == 1);
}

TEST_CASE("golden fixture: repeat predictions and the service path agree") {
    const auto trials = fixture_trials();
    const auto snap = snapshots();
    auto m = load_model(kDir / "model.ckpt");
    auto service = InferenceService::from_files(kDir / "model.ckpt");
    for (std::size_t i = 0; i < trials.size(); i += 9) {
        const auto a = m->predict(trials[i]).to_json().dump();
        const auto b = m->predict(trials[i]).to_json().dump();
        CHECK(a == b);
        CHECK(service->predict_payload(trial_to_json(trials[i]).dump()) == a);
        CHECK(record_digest(service->predict(trials[i])) == snap[i].at("digest"));
    }
}

TEST_CASE("record_digest ignores differences past 8 significant digits") {
    const auto trials = fixture_trials();
    auto m = load_model(kDir / "model.ckpt");
    auto p = m->predict(trials[0]);
    const auto d = record_digest(p);
    auto q = p;
    q.log_density[0] *= 1.0 + 1e-13;
    CHECK(record_digest(q) == d);
    q.log_density[0] *= 1.0 + 1e-5;
    CHECK(record_digest(q) != d);
}

TEST_CASE("shipped expert registries equal a fresh calibration fit") {
    for (const std::string name : {"mts2d", "mts3d"}) {
        CAPTURE(name);
        const auto shipped = load_registry("data/experts_" + name + ".json");
        CHECK(shipped == fit_scenario_experts(preset(name), 100, 1));
    }
}
