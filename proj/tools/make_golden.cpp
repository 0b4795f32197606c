// Regenerates the committed golden fixtures under tests/golden/.
// Only rerun after a deliberate model or pipeline change.
#include "magnet/datagen.hpp"
#include "magnet/train.hpp"

#include <spdlog/spdlog.h>

#include <fstream>
#include <iostream>

using namespace magnet;
namespace fs = std::filesystem;

int main(int argc, char** argv) {
    const fs::path dir = argc > 1 ? fs::path(argv[1]) : fs::path("tests/golden");
    fs::create_directories(dir);

    ScenarioConfig sc = preset("mts2d");
    sc.users = 5;
    sc.reps = 2;
    const Dataset d = build_dataset(sc, default_users(sc.users, 21), 21);
    const Split split = split_dataset(d.trials, default_split(sc, 21));

    TrainConfig tc = default_train_config(2);
    tc.shots = 1;
    tc.max_epochs = 4;
    tc.patience = 4;
    tc.seed = 21;
    auto res = train(few_shot_subset(split.pool, 1, 21), split.val, truth_registry_2d(), model_config_for(sc), tc);
    save_model(dir / "model.ckpt", *res.model, {{"purpose", "golden fixture"}});

    // Fixture: the first 100 test trials, with one env window dropped to cover the fallback.
    std::vector<TrialRecord> fixture(split.test.begin(), split.test.begin() + 100);
    fixture[17].env = EnvWindow::zeros(50.0, 3.0);
    fixture[17].rmsa = 0.0;
    {
        std::ofstream f(dir / "trials.jsonl");
        for (const auto& t : fixture) f << trial_to_json(t).dump() << '\n';
    }

    // Reload so the snapshot comes from exactly what is committed.
    auto m = load_model(dir / "model.ckpt");
    nlohmann::json snap = nlohmann::json::array();
    for (const auto& t : fixture) {
        const auto p = m->predict(t);
        snap.push_back({{"trial_id", t.trial_id}, {"digest", record_digest(p)}, {"ranked", p.ranked}});
    }
    std::ofstream f(dir / "snapshots.json");
    f << snap.dump(1) << '\n';
    std::cout << "wrote " << fixture.size() << " fixtures to " << dir << " (checkpoint " << file_hash(dir / "model.ckpt") << ")\n";
}
