// magnet: data generation, expert fitting, training, evaluation and serving.
#include "magnet/benchmark.hpp"
#include "magnet/datagen.hpp"
#include "magnet/errors.hpp"
#include "magnet/service.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

using namespace magnet;
namespace fs = std::filesystem;

namespace {

nlohmann::json read_json(const fs::path& p) {
    std::ifstream f(p);
    if (!f) throw ConfigError("cannot open config " + p.string());
    try {
        return nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(p.string() + ": " + e.what());
    }
}

ScenarioConfig load_scenario(const std::string& preset_name, const std::string& config) {
    if (!config.empty()) return scenario_from_json(read_json(config));
    return preset(preset_name);
}

std::vector<std::uint64_t> seed_list(int count, std::uint64_t first) {
    if (count < 1) throw ConfigError("--seeds must be >= 1");
    std::vector<std::uint64_t> s;
    for (int i = 0; i < count; ++i) s.push_back(first + static_cast<std::uint64_t>(i));
    return s;
}

struct Inputs {
    Dataset data;
    std::string hash;
    Split split;
    ExpertRegistry registry;
};

Inputs load_inputs(const std::string& data_path, const std::string& experts_path) {
    Inputs in;
    in.data = load_dataset(data_path);
    in.hash = dataset_hash(in.data);
    in.split = split_dataset(in.data.trials, default_split(in.data.scenario, in.data.seed));
    in.registry = load_registry(experts_path);
    spdlog::info("dataset {} ({} trials, hash {}): pool {}, val {}, test {}", data_path, in.data.trials.size(), in.hash,
                 in.split.pool.size(), in.split.val.size(), in.split.test.size());
    return in;
}

void finish(const fs::path& out, const MetricReport& r) {
    save_report(out, r);
    std::cout << human_table(r);
    spdlog::info("report written to {}", out.string());
}

MetricReport merge_reports(const std::vector<std::string>& dirs) {
    MetricReport all;
    all.metadata = nlohmann::json::array();
    for (const auto& d : dirs) {
        std::ifstream f(fs::path(d) / "report.csv");
        if (!f) throw ConfigError("no report.csv in " + d);
        auto r = read_report_csv(f);
        all.rows.insert(all.rows.end(), r.rows.begin(), r.rows.end());
        std::ifstream m(fs::path(d) / "report_meta.json");
        if (m) all.metadata.push_back(nlohmann::json::parse(m));
    }
    return all;
}

volatile std::sig_atomic_t g_stop = 0;

void on_signal(int) { g_stop = 1; }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Context-gated expert mixture for moving-target intent inference"};
    app.require_subcommand(1);
    bool verbose = false, quiet = false;
    app.add_flag("-v,--verbose", verbose, "Debug logging");
    app.add_flag("-q,--quiet", quiet, "Warnings and errors only");

    // datagen
    auto* dg = app.add_subcommand("datagen", "Generate a synthetic dataset (JSONL)");
    std::string dg_preset = "mts2d", dg_config, dg_out;
    std::uint64_t dg_seed = 7;
    int dg_users = 0;
    dg->add_option("--preset", dg_preset, "mts2d or mts3d")->capture_default_str();
    dg->add_option("--config", dg_config, "Scenario JSON (overrides --preset)")->check(CLI::ExistingFile);
    dg->add_option("--seed", dg_seed, "Generator seed")->capture_default_str();
    dg->add_option("--users", dg_users, "Override the number of users");
    dg->add_option("--out", dg_out, "Output file")->required();

    // fit-experts
    auto* fe = app.add_subcommand("fit-experts", "Fit one expert per scenario ground-truth expert from calibration trials");
    std::string fe_preset = "mts2d", fe_config, fe_out;
    std::uint64_t fe_seed = 1;
    int fe_per_cell = 100, fe_min = kDefaultMinCellCount;
    fe->add_option("--preset", fe_preset, "mts2d or mts3d")->capture_default_str();
    fe->add_option("--config", fe_config, "Scenario JSON (overrides --preset)")->check(CLI::ExistingFile);
    fe->add_option("--seed", fe_seed, "Calibration seed")->capture_default_str();
    fe->add_option("--per-cell", fe_per_cell, "Calibration trials per (W, V) cell")->capture_default_str();
    fe->add_option("--min-count", fe_min, "Low-sample warning threshold per cell")->capture_default_str();
    fe->add_option("--out", fe_out, "Output registry JSON")->required();

    // train
    auto* tr = app.add_subcommand("train", "Train over few-shot resamples and score on the test split");
    std::string tr_data, tr_experts, tr_config, tr_out;
    std::vector<int> tr_shots;
    int tr_seeds = 5;
    std::uint64_t tr_seed = 0;
    bool tr_no_baselines = false;
    tr->add_option("--data", tr_data, "Dataset JSONL")->required()->check(CLI::ExistingFile);
    tr->add_option("--experts", tr_experts, "Expert registry JSON")->required()->check(CLI::ExistingFile);
    tr->add_option("--config", tr_config, "Benchmark config JSON")->check(CLI::ExistingFile);
    tr->add_option("--shots", tr_shots, "Shots per cell (repeatable, e.g. --shots 1 2 10)");
    tr->add_option("--seeds", tr_seeds, "Number of seeds")->capture_default_str();
    tr->add_option("--seed", tr_seed, "First seed")->capture_default_str();
    tr->add_flag("--no-baselines", tr_no_baselines, "Skip baseline rows");
    tr->add_option("--out", tr_out, "Output directory (report and checkpoints)")->required();

    // eval
    auto* ev = app.add_subcommand("eval", "Score baselines and optionally a trained checkpoint on the test split");
    std::string ev_data, ev_experts, ev_model, ev_baselines, ev_out;
    std::uint64_t ev_seed = 0;
    ev->add_option("--data", ev_data, "Dataset JSONL")->required()->check(CLI::ExistingFile);
    ev->add_option("--experts", ev_experts, "Expert registry JSON")->required()->check(CLI::ExistingFile);
    ev->add_option("--model", ev_model, "Checkpoint to score")->check(CLI::ExistingFile);
    ev->add_option("--baselines", ev_baselines, "'only' to score baselines alone")->check(CLI::IsMember({"only"}));
    ev->add_option("--seed", ev_seed, "Seed recorded in the report")->capture_default_str();
    ev->add_option("--out", ev_out, "Output directory")->required();

    // ablate
    auto* ab = app.add_subcommand("ablate", "Retrain with experts removed");
    std::string ab_data, ab_experts, ab_config, ab_out;
    std::vector<std::string> ab_drop{"all"};
    int ab_shots = 10, ab_seeds = 5;
    std::uint64_t ab_seed = 0;
    bool ab_full = false;
    ab->add_option("--data", ab_data, "Dataset JSONL")->required()->check(CLI::ExistingFile);
    ab->add_option("--experts", ab_experts, "Expert registry JSON")->required()->check(CLI::ExistingFile);
    ab->add_option("--config", ab_config, "Benchmark config JSON")->check(CLI::ExistingFile);
    ab->add_option("--drop", ab_drop, "Expert ids to drop one at a time, or 'all'")->capture_default_str();
    ab->add_option("--shots", ab_shots, "Shots per cell")->capture_default_str();
    ab->add_option("--seeds", ab_seeds, "Number of seeds")->capture_default_str();
    ab->add_option("--seed", ab_seed, "First seed")->capture_default_str();
    ab->add_flag("--with-full", ab_full, "Also train the full registry for comparison");
    ab->add_option("--out", ab_out, "Output directory")->required();

    // serve
    auto* sv = app.add_subcommand("serve", "Run the inference service (HTTP + WebSocket)");
    std::string sv_ckpt, sv_registry, sv_address = "127.0.0.1";
    unsigned short sv_port = 8080;
    sv->add_option("--checkpoint", sv_ckpt, "Model checkpoint")->required()->check(CLI::ExistingFile);
    sv->add_option("--registry", sv_registry, "Registry JSON; must match the checkpoint")->check(CLI::ExistingFile);
    sv->add_option("--address", sv_address, "Bind address (env MAGNET_ADDRESS)")->capture_default_str();
    sv->add_option("--port", sv_port, "Port, 0 for any (env MAGNET_PORT)")->capture_default_str();

    // report
    auto* rp = app.add_subcommand("report", "Aggregate one or more report directories");
    std::vector<std::string> rp_in;
    std::string rp_out;
    rp->add_option("--in", rp_in, "Report directories")->required();
    rp->add_option("--out", rp_out, "Directory for the merged report");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        std::cerr << "\n" << app.help();
        return 2;
    }
    spdlog::set_level(verbose ? spdlog::level::debug : quiet ? spdlog::level::warn : spdlog::level::info);

    try {
        if (*dg) {
            ScenarioConfig sc = load_scenario(dg_preset, dg_config);
            if (dg_users > 0) sc.users = dg_users;
            sc.validate();
            const Dataset d = build_dataset(sc, default_users(sc.users, dg_seed), dg_seed);
            save_dataset(dg_out, d);
            spdlog::info("wrote {} trials to {} (hash {})", d.trials.size(), dg_out, dataset_hash(d));
        } else if (*fe) {
            const ScenarioConfig sc = load_scenario(fe_preset, fe_config);
            const ExpertRegistry r = fit_scenario_experts(sc, fe_per_cell, fe_seed, fe_min);
            save_registry(fe_out, r);
            spdlog::info("wrote {} experts to {}", r.experts.size(), fe_out);
        } else if (*tr) {
            Inputs in = load_inputs(tr_data, tr_experts);
            BenchmarkConfig bc = tr_config.empty() ? BenchmarkConfig{} : benchmark_config_from_json(read_json(tr_config));
            if (tr_config.empty()) bc.train = default_train_config(in.data.scenario.dim);
            if (!tr_shots.empty()) bc.shots = tr_shots;
            bc.seeds = seed_list(tr_seeds, tr_seed);
            bc.baselines = !tr_no_baselines;
            const auto r = run_benchmark(in.data.scenario, in.split, in.registry, bc, in.hash, fs::path(tr_out) / "checkpoints");
            finish(tr_out, r);
        } else if (*ev) {
            Inputs in = load_inputs(ev_data, ev_experts);
            if (ev_model.empty() && ev_baselines != "only") {
                throw UsageError("eval needs --model, or --baselines only");
            }
            BenchmarkConfig bc;
            bc.magnet = false;
            bc.seeds = {ev_seed};
            bc.train = default_train_config(in.data.scenario.dim);
            MetricReport r = run_benchmark(in.data.scenario, in.split, in.registry, bc, in.hash);
            if (!ev_model.empty()) {
                auto m = load_model(ev_model);
                std::vector<double> rmsa;
                for (const auto& t : in.split.test) rmsa.push_back(t.rmsa);
                const auto out = evaluate_model(*m, in.split.test);
                r.rows.push_back(metric_row("MAGNeT", 0, ev_seed, out, cluster_threshold(rmsa, bc.cluster_seed),
                                            mean_threshold(rmsa), true));
                r.metadata["checkpoint"] = file_hash(ev_model);
            }
            finish(ev_out, r);
        } else if (*ab) {
            Inputs in = load_inputs(ab_data, ab_experts);
            BenchmarkConfig bc = ab_config.empty() ? BenchmarkConfig{} : benchmark_config_from_json(read_json(ab_config));
            if (ab_config.empty()) bc.train = default_train_config(in.data.scenario.dim);
            bc.baselines = false;
            bc.magnet = ab_full;
            bc.shots = {ab_shots};
            bc.ablation_shots = ab_shots;
            bc.seeds = seed_list(ab_seeds, ab_seed);
            bc.ablations.clear();
            for (const auto& d : ab_drop) bc.ablations.push_back("w/o " + d);
            const auto r = run_benchmark(in.data.scenario, in.split, in.registry, bc, in.hash, fs::path(ab_out) / "checkpoints");
            finish(ab_out, r);
        } else if (*sv) {
            auto service = InferenceService::from_files(sv_ckpt, sv_registry.empty() ? std::nullopt
                                                                                     : std::optional<fs::path>(sv_registry));
            ServerConfig cfg;
            cfg.address = sv_address;
            cfg.port = sv_port;
            if (sv->count("--address") == 0 || sv->count("--port") == 0) {
                // Environment fills whatever was not given on the command line.
                const ServerConfig env = server_config_from_env(cfg);
                if (sv->count("--address") == 0) cfg.address = env.address;
                if (sv->count("--port") == 0) cfg.port = env.port;
            }
            Server server(*service, cfg);
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            spdlog::info("serving {} on {}:{} (checkpoint {})", sv_ckpt, cfg.address, server.port(), service->checkpoint_hash());
            std::cout << "listening on " << cfg.address << ":" << server.port() << std::endl;
            server.start();
            while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
            server.stop();
        } else if (*rp) {
            const MetricReport r = merge_reports(rp_in);
            if (!rp_out.empty()) {
                finish(rp_out, r);
            } else {
                write_aggregate_csv(std::cout, r);
                std::cout << '\n' << human_table(r);
            }
        }
    } catch (const ConfigError& e) {
        spdlog::error("invalid configuration: {}", e.what());
        return 1;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 1;
    }
    return 0;
}
