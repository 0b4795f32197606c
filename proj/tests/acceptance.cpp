// Acceptance run: one PASS/FAIL line per criterion.
//
//   magnet_acceptance --results DIR              check criteria, reading benchmark runs from DIR
//   magnet_acceptance --results DIR --generate   run the full pipeline twice into DIR first
//
// Criteria 1-4 are computed live. The benchmark criteria read DIR/run_a (and run_b
// for determinism); a small two-run determinism check is also done live.
#include "support/finite_diff.hpp"

#include "magnet/benchmark.hpp"
#include "magnet/datagen.hpp"
#include "magnet/experts.hpp"
#include "magnet/gaussian.hpp"
#include "magnet/model.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <numbers>
#include <random>

using namespace magnet;
namespace fs = std::filesystem;

namespace {

struct Result {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

ScenarioConfig small_2d(int users) {
    ScenarioConfig c = preset("mts2d");
    c.users = users;
    c.reps = 2;
    return c;
}

// ---- 1. gradient oracle

Result gradient_oracle() {
    const auto t0 = Clock::now();
    const auto sc = small_2d(2);
    const auto trials = build_dataset(sc, default_users(sc.users, 3), 3).trials;
    auto [vib, acc] = fit_env_stats(trials, 5);
    MagnetModel<double> m(model_config_for(sc), truth_registry_2d(), vib, acc, 9);
    // The final adaptation layer starts at zero; move it off so every path carries gradient.
    std::mt19937_64 rng(8);
    std::normal_distribution<double> n(0.0, 0.2);
    for (auto* p : m.params().all()) {
        if (p->name.rfind("adapt.l2", 0) != 0) continue;
        for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = n(rng);
    }
    std::vector<PreparedTrial> ps;
    for (int i = 0; i < 4; ++i) ps.push_back(m.prepare(trials[static_cast<std::size_t>(7 * i)]));
    std::vector<const PreparedTrial*> batch;
    for (const auto& p : ps) batch.push_back(&p);
    auto loss = [&](bool with_backward) {
        nn::Graph<double> g;
        nn::Rng r(3);  // same dropout masks on every evaluation
        auto o = m.forward(g, batch, nn::Mode::train, r);
        auto l = m.loss(g, o, batch, 200.0, 0.1);
        if (with_backward) g.backward(l.total);
        return g.value(l.total)(0, 0);
    };
    const auto rep = testing::check_param_grads(m.params(), loss, 1e-4, 1e-5, 8, 2, true);
    const double secs = since(t0);
    spdlog::info("worst gradient entry: {}", rep.worst);
    return {rep.max_rel_err < 1e-4 && secs < 120,
            fmt::format("max rel err {:.2e} over {} entries of {} tensors, {:.1f} s", rep.max_rel_err, rep.checked,
                        m.params().trainable().size(), secs)};
}

// ---- 2. density normalization

Result density_normalization() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0, 1);
    const auto mc = model_config_for(preset("mts2d"));
    const auto scale = coefficient_scale(mc);
    double worst = 0.0;
    for (int fx = 0; fx < 20; ++fx) {
        const int k = 1 + fx % 3;
        TargetState t;
        t.center = Eigen::Vector2d(2000 * u(rng), 1200 * u(rng));
        const double ang = 2 * std::numbers::pi * u(rng);
        t.direction = Eigen::Vector2d(std::cos(ang), std::sin(ang));
        t.size = 65 + 90 * u(rng);
        t.speed = 300 + 750 * u(rng);
        std::vector<Eigen::RowVectorXd> flats;
        std::vector<double> log_w;
        double wsum = 0;
        for (int e = 0; e < k; ++e) {
            TernaryGaussianParams p(2);
            p.mu << 40 * (u(rng) - 0.5), 0.04 * (u(rng) - 0.5), 0.2 * (u(rng) - 0.5), 20 * (u(rng) - 0.5), 0, 0;
            p.sigma << 10 + 20 * u(rng), 0.03 * u(rng), 0.2 * u(rng), 10 + 20 * u(rng), 0.03 * u(rng), 0.2 * u(rng);
            Eigen::RowVectorXd d(12);
            for (Eigen::Index i = 0; i < 12; ++i) d(i) = 2 * (u(rng) - 0.5);
            flats.push_back(adapt_flat(flatten_params(p), scale, d, 2, mc.rho_mu, mc.rho_sigma));
            log_w.push_back(u(rng) + 0.1);
            wsum += log_w.back();
        }
        for (double& w : log_w) w = std::log(w / wsum);
        const auto fr = local_frame(t);
        Eigen::Vector2d lo = Eigen::Vector2d::Constant(1e300), hi = -lo;
        for (const auto& f : flats) {
            const auto mo = ternary_moments(unflatten_params(f, 2), t.speed, t.size);
            const double sd = std::sqrt(mo.var.maxCoeff());
            const Eigen::Vector2d c = fr.origin + fr.axes * mo.mean;
            lo = lo.cwiseMin((c.array() - 6 * sd).matrix());
            hi = hi.cwiseMax((c.array() + 6 * sd).matrix());
        }
        const int n = 500;
        const double hx = (hi(0) - lo(0)) / n, hy = (hi(1) - lo(1)) / n;
        double mass = 0;
        std::vector<double> lp(static_cast<std::size_t>(k));
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                const Eigen::Vector2d s(lo(0) + (i + 0.5) * hx, lo(1) + (j + 0.5) * hy);
                const Vec off = fr.axes.transpose() * (s - fr.origin);
                for (int e = 0; e < k; ++e) {
                    lp[static_cast<std::size_t>(e)] = local_log_pdf(flats[static_cast<std::size_t>(e)], 2, off, t.speed, t.size);
                }
                mass += std::exp(mixture_log_density(log_w, lp)) * hx * hy;
            }
        }
        worst = std::max(worst, std::abs(mass - 1.0));
    }
    const double secs = since(t0);
    return {worst < 1e-3 && secs < 60, fmt::format("20 fixtures, max |mass - 1| {:.2e}, {:.1f} s", worst, secs)};
}

// ---- 3. single-expert equivalence

Result single_expert() {
    ExpertRegistry one;
    one.experts.push_back(truth_registry_2d().at("s-h"));
    const auto sc = small_2d(4);
    const auto trials = build_dataset(sc, default_users(sc.users, 8), 8).trials;
    auto [vib, acc] = fit_env_stats(trials, 5);
    // Freshly built models have a zeroed final adaptation layer.
    MagnetModel<float> m(model_config_for(sc), one, vib, acc, 4);
    int same = 0, total = 0;
    for (const auto& t : trials) {
        if (total == 200) break;
        const auto rec = m.predict(t);
        const auto post = bayes_posterior(t.targets, one.experts[0].params, t.endpoint);
        std::vector<int> ids;
        for (const auto& s : t.targets) ids.push_back(s.id);
        same += rec.ranked == rank_by_score(ids, post.log_density) ? 1 : 0;
        ++total;
    }
    return {total == 200 && same == total, fmt::format("{}/{} rankings identical", same, total)};
}

// ---- 4. parameter recovery

ConditionMoments grid_moments(const TernaryGaussianParams& p, double noise, std::mt19937_64& rng) {
    std::normal_distribution<double> n;
    ConditionMoments m;
    m.dim = p.dim();
    for (double w : {65.0, 95.0, 125.0, 155.0}) {
        for (double v : {300.0, 550.0, 800.0, 1050.0}) {
            CellMoments c;
            c.w = w;
            c.v = v;
            c.count = 100;
            c.mean = p.mu.col(0) + p.mu.col(1) * v + p.mu.col(2) * w;
            c.var = p.sigma.col(0).array().square() + (p.sigma.col(1).array() * v).square() +
                    (p.sigma.col(2).array() * w).square();
            for (int d = 0; d < m.dim; ++d) {
                c.mean(d) *= 1.0 + noise * n(rng);
                c.var(d) *= 1.0 + noise * n(rng);
            }
            m.cells.push_back(c);
        }
    }
    return m;
}

Result parameter_recovery() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(1);
    double exact_err = 0.0;
    for (int rep = 0; rep < 10; ++rep) {
        for (int dim : {2, 3}) {
            TernaryGaussianParams p(dim);
            std::uniform_real_distribution<double> u(0.1, 1.0);
            for (int d = 0; d < dim; ++d) {
                p.mu.row(d) << 10 * (u(rng) - 0.5), 0.05 * (u(rng) - 0.5), 0.2 * (u(rng) - 0.5);
                p.sigma.row(d) << 20 * u(rng), 0.05 * u(rng), 0.3 * u(rng);
            }
            const auto fit = fit_ternary_params(grid_moments(p, 0.0, rng));
            exact_err = std::max({exact_err, (fit.mu - p.mu).cwiseAbs().maxCoeff(),
                                  ((fit.sigma - p.sigma).array() / p.sigma.array()).abs().maxCoeff()});
        }
    }
    TernaryGaussianParams p(2);
    p.mu << 60.0, 0.06, 0.5, 45.0, 0.05, 0.4;
    p.sigma << 20.0, 0.03, 0.2, 25.0, 0.025, 0.18;
    Mat mean_mu = Mat::Zero(2, 3), mean_sigma = Mat::Zero(2, 3);
    const int seeds = 20;
    for (int seed = 0; seed < seeds; ++seed) {
        std::mt19937_64 r(100 + static_cast<std::uint64_t>(seed));
        const auto fit = fit_ternary_params(grid_moments(p, 0.05, r));
        mean_mu += ((fit.mu - p.mu).array() / p.mu.array()).abs().matrix() / seeds;
        mean_sigma += ((fit.sigma - p.sigma).array() / p.sigma.array()).abs().matrix() / seeds;
    }
    const double noisy = std::max(mean_mu.maxCoeff(), mean_sigma.maxCoeff());
    const double secs = since(t0);
    return {exact_err < 1e-9 && noisy < 0.15 && secs < 60,
            fmt::format("noiseless max err {:.1e}; 5% noise, worst coefficient's mean rel err over 20 seeds {:.3f}, {:.1f} s",
                        exact_err, noisy, secs)};
}

// ---- pipeline runs

struct PipelineSpec {
    std::string name;
    ScenarioConfig scenario;
    std::uint64_t data_seed = 7;
    int per_cell = 100;
    BenchmarkConfig bench;
};

std::vector<PipelineSpec> full_specs() {
    PipelineSpec d2{"mts2d", preset("mts2d"), 7, 100, {}};
    d2.bench.train = default_train_config(2);
    d2.bench.ablations = {"w/o all"};
    // 3D pools hold 3 trials per cell, so it stops at 3-shot.
    PipelineSpec d3{"mts3d", preset("mts3d"), 7, 100, {}};
    d3.bench.train = default_train_config(3);
    d3.bench.shots = {1, 3};
    d3.bench.seeds = {0, 1};
    return {d2, d3};
}

std::vector<PipelineSpec> small_specs() {
    PipelineSpec s{"small2d", small_2d(5), 21, 100, {}};
    s.bench.train = default_train_config(2);
    s.bench.train.max_epochs = 2;
    s.bench.train.patience = 2;
    s.bench.shots = {1};
    s.bench.seeds = {0};
    s.bench.ablations = {"w/o all"};
    s.bench.ablation_shots = 1;
    return {s};
}

std::map<std::string, std::string> hash_tree(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (e.is_regular_file()) out[fs::relative(e.path(), root).generic_string()] = file_hash(e.path());
    }
    return out;
}

// datagen -> dataset file -> reload -> fit experts -> registry file -> benchmark with checkpoints -> report.
// Large files go under `work`; the report goes under `out`. Returns wall seconds.
double run_pipeline(const PipelineSpec& s, const fs::path& work, const fs::path& out) {
    const auto t0 = Clock::now();
    fs::remove_all(work);
    fs::create_directories(work);
    {
        const Dataset d = build_dataset(s.scenario, default_users(s.scenario.users, s.data_seed), s.data_seed);
        save_dataset(work / "dataset.jsonl", d);
    }
    const Dataset d = load_dataset(work / "dataset.jsonl");
    const Split split = split_dataset(d.trials, default_split(d.scenario, d.seed));
    save_registry(work / "experts.json", fit_scenario_experts(s.scenario, s.per_cell, 1));
    const ExpertRegistry reg = load_registry(work / "experts.json");
    const auto report = run_benchmark(d.scenario, split, reg, s.bench, dataset_hash(d), work / "checkpoints",
                                      [&](const std::string& msg) { spdlog::info("[{}] {}", s.name, msg); });
    save_report(out, report);
    return since(t0);
}

// One full run: per pipeline, a report directory plus a manifest of every produced file's hash.
void generate_run(const std::vector<PipelineSpec>& specs, const fs::path& run_dir, const fs::path& scratch) {
    nlohmann::json manifest = nlohmann::json::object(), timing = nlohmann::json::object();
    fs::create_directories(run_dir);
    for (const auto& s : specs) {
        const fs::path work = scratch / s.name, out = run_dir / s.name;
        fs::remove_all(out);
        const double secs = run_pipeline(s, work, out);
        timing[s.name] = secs;
        nlohmann::json files = nlohmann::json::object();
        for (const auto& [k, v] : hash_tree(work)) files[k] = v;
        for (const auto& [k, v] : hash_tree(out)) files["report/" + k] = v;
        manifest[s.name] = files;
        spdlog::info("{} done in {:.0f} s", s.name, secs);
    }
    std::ofstream(run_dir / "manifest.json") << manifest.dump(1) << '\n';
    std::ofstream(run_dir / "timing.json") << timing.dump(1) << '\n';
}

nlohmann::json read_json(const fs::path& p) {
    std::ifstream f(p);
    if (!f) throw std::runtime_error("missing " + p.string());
    return nlohmann::json::parse(f);
}

MetricReport read_report(const fs::path& dir) {
    std::ifstream f(dir / "report.csv");
    if (!f) throw std::runtime_error("missing " + (dir / "report.csv").string());
    return read_report_csv(f);
}

// Per-seed values of one metric for one (model, shots).
std::map<std::uint64_t, double> per_seed(const MetricReport& r, const std::string& model, int shots,
                                         std::optional<double> MetricRow::*field) {
    std::map<std::uint64_t, double> out;
    for (const auto& row : r.rows) {
        if (row.model == model && row.shots == shots && row.status == "ok" && (row.*field)) out[row.seed] = *(row.*field);
    }
    return out;
}

Stat stat(const std::map<std::uint64_t, double>& m) {
    std::vector<double> v;
    for (const auto& [k, x] : m) v.push_back(x);
    return stat_of(v);
}

double pooled(const Stat& a, const Stat& b) {
    const double sa = a.std.value_or(0.0), sb = b.std.value_or(0.0);
    return std::sqrt((sa * sa + sb * sb) / 2.0);
}

std::string ms(const Stat& s) { return fmt::format("{:.4f}±{:.4f}", s.mean, s.std.value_or(0.0)); }

// ---- 5. baseline ordering

Result baseline_ordering(const MetricReport& r, double seconds) {
    const auto border = stat(per_seed(r, "Border", 0, &MetricRow::e_at_1));
    const auto dist = stat(per_seed(r, "Distance", 0, &MetricRow::e_at_1));
    const auto magnet = stat(per_seed(r, "MAGNeT", 10, &MetricRow::e_at_1));
    std::string best_id;
    Stat best{1e300, {}, 0};
    for (const auto& row : r.rows) {
        if (row.model.rfind("Expert:", 0) != 0 || row.seed != r.rows.front().seed) continue;
        const auto s = stat(per_seed(r, row.model, 0, &MetricRow::e_at_1));
        if (s.mean < best.mean) {
            best = s;
            best_id = row.model;
        }
    }
    const bool seeds_ok = border.n == 5 && dist.n == 5 && best.n == 5 && magnet.n == 5;
    const bool g1 = border.mean - dist.mean > 2 * pooled(border, dist);
    const bool g2 = dist.mean - best.mean > 2 * pooled(dist, best);
    const bool g3 = best.mean >= magnet.mean;
    return {seeds_ok && g1 && g2 && g3 && seconds < 1800,
            fmt::format("Border {} > Distance {} > {} {} >= MAGNeT@10 {}; gaps {}/{}/{}; run {:.0f} s", ms(border),
                        ms(dist), best_id, ms(best), ms(magnet), g1 ? "ok" : "no", g2 ? "ok" : "no", g3 ? "ok" : "no",
                        seconds)};
}

// ---- 6. few-shot trend

Result few_shot_trend(const MetricReport& r) {
    std::vector<std::pair<int, Stat>> pts;
    for (int k : {1, 2, 3, 5, 10}) pts.emplace_back(k, stat(per_seed(r, "MAGNeT", k, &MetricRow::e_at_1)));
    int inversions = 0;
    double worst = 0.0;
    std::string trace;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        trace += fmt::format("{}{}:{:.4f}", i ? " " : "", pts[i].first, pts[i].second.mean);
        if (i > 0 && pts[i].second.mean > pts[i - 1].second.mean) {
            ++inversions;
            worst = std::max(worst, pts[i].second.mean - pts[i - 1].second.mean);
        }
    }
    bool all5 = true;
    for (const auto& [k, s] : pts) all5 = all5 && s.n == 5;
    const bool ok = all5 && (inversions == 0 || (inversions == 1 && worst <= 0.003));
    return {ok, fmt::format("{}; {} inversion(s), largest {:.4f}", trace, inversions, worst)};
}

// ---- 7. regime grouping

Result regime_grouping(const MetricReport& r) {
    std::string detail;
    bool ok = true;
    for (const auto& [model, shots] : std::vector<std::pair<std::string, int>>{{"MAGNeT", 10}, {"Distance", 0}}) {
        const auto g1 = stat(per_seed(r, model, shots, &MetricRow::e_clust_g1));
        const auto g2 = stat(per_seed(r, model, shots, &MetricRow::e_clust_g2));
        ok = ok && g1.n == 5 && g2.n == 5 && g2.mean >= g1.mean;
        detail += fmt::format("{}{} G1 {:.4f} G2 {:.4f}", detail.empty() ? "" : "; ", model, g1.mean, g2.mean);
    }
    return {ok, detail + " (clustered RMSA groups)"};
}

// ---- 8. ablation direction

Result ablation_direction(const MetricReport& r) {
    const auto full = per_seed(r, "MAGNeT", 10, &MetricRow::e_at_1);
    const auto none = per_seed(r, "MAGNeT w/o all", 10, &MetricRow::e_at_1);
    int positive = 0, paired = 0;
    for (const auto& [seed, v] : full) {
        if (auto it = none.find(seed); it != none.end()) {
            ++paired;
            positive += it->second - v > 0 ? 1 : 0;
        }
    }
    const auto sf = stat(full), sn = stat(none);
    return {paired == 5 && sn.mean >= sf.mean && positive >= 4,
            fmt::format("w/o all {} vs full {}; gap positive in {}/{} seeds", ms(sn), ms(sf), positive, paired)};
}

// ---- 9. E@2 <= E@1

Result e2_le_e1(const std::vector<std::pair<std::string, MetricReport>>& reports) {
    int checked = 0, bad = 0;
    std::string first_bad;
    for (const auto& [name, r] : reports) {
        for (const auto& row : r.rows) {
            if (!row.e_at_2 || !row.e_at_1) continue;
            ++checked;
            if (!(*row.e_at_2 <= *row.e_at_1)) {
                if (bad++ == 0) first_bad = fmt::format(" (first: {} {} shots {} seed {})", name, row.model, row.shots, row.seed);
            }
        }
    }
    return {checked > 0 && bad == 0, fmt::format("{} ranking rows across {} datasets, {} violations{}", checked,
                                                 reports.size(), bad, first_bad)};
}

// ---- 10. determinism

Result determinism(const fs::path& results, const fs::path& scratch) {
    std::string detail;
    bool ok = true;
    try {
        const auto a = read_json(results / "run_a" / "manifest.json");
        const auto b = read_json(results / "run_b" / "manifest.json");
        std::size_t files = 0, diff = 0;
        for (const auto& [name, fa] : a.items()) {
            for (const auto& [f, h] : fa.items()) {
                ++files;
                if (!b.contains(name) || !b[name].contains(f) || b[name][f] != h) ++diff;
            }
        }
        // Committed report files must also match each other and their manifest.
        for (const auto& [name, fa] : a.items()) {
            for (const auto& [f, h] : hash_tree(results / "run_a" / name)) {
                if (fa.value("report/" + f, std::string()) != h) ++diff;
                if (hash_tree(results / "run_b" / name)[f] != h) ++diff;
            }
        }
        ok = files > 0 && diff == 0 && a.size() == b.size();
        detail = fmt::format("full runs: {} files, {} differ", files, diff);
    } catch (const std::exception& e) {
        ok = false;
        detail = fmt::format("full runs: {}", e.what());
    }
    const auto specs = small_specs();
    generate_run(specs, scratch / "live_a" / "out", scratch / "live_a" / "work");
    generate_run(specs, scratch / "live_b" / "out", scratch / "live_b" / "work");
    const auto ma = read_json(scratch / "live_a" / "out" / "manifest.json");
    const auto mb = read_json(scratch / "live_b" / "out" / "manifest.json");
    // dataset, registry, two checkpoints, four report files
    const std::size_t n = ma.at("small2d").size();
    const bool live = ma == mb && n == 8;
    ok = ok && live;
    return {ok, detail + fmt::format("; live small run: {} files (8 expected), {}", n,
                                     ma == mb ? "identical" : "DIFFERENT")};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria"};
    std::string results = "results/acceptance";
    std::string scratch = (fs::temp_directory_path() / "magnet_acceptance").string();
    bool generate = false, verbose = false;
    app.add_option("--results", results, "Directory with run_a / run_b")->capture_default_str();
    app.add_option("--scratch", scratch, "Directory for datasets and checkpoints")->capture_default_str();
    app.add_flag("--generate", generate, "Run the full pipeline twice into --results first");
    app.add_flag("-v,--verbose", verbose, "Progress logging");
    CLI11_PARSE(app, argc, argv);
    spdlog::set_level(verbose || generate ? spdlog::level::info : spdlog::level::warn);

    const fs::path res(results), scr(scratch);
    if (generate) {
        generate_run(full_specs(), res / "run_a", scr / "run_a");
        generate_run(full_specs(), res / "run_b", scr / "run_b");
    }

    int failed = 0;
    auto report = [&](const std::string& name, const std::function<Result()>& f) {
        Result r;
        try {
            r = f();
        } catch (const std::exception& e) {
            r = {false, std::string("error: ") + e.what()};
        }
        failed += r.pass ? 0 : 1;
        std::cout << (r.pass ? "PASS" : "FAIL") << "  " << name << ": " << r.detail << std::endl;
    };

    report("gradient oracle", gradient_oracle);
    report("density normalization", density_normalization);
    report("single-expert equivalence", single_expert);
    report("parameter recovery", parameter_recovery);

    std::optional<MetricReport> r2, r3;
    double seconds = 1e300;
    std::string load_error;
    try {
        r2 = read_report(res / "run_a" / "mts2d");
        r3 = read_report(res / "run_a" / "mts3d");
        seconds = read_json(res / "run_a" / "timing.json").at("mts2d").get<double>();
    } catch (const std::exception& e) {
        load_error = e.what();
    }
    auto need = [&](auto f) {
        return [&, f]() -> Result {
            if (!r2) return {false, "no benchmark results (" + load_error + "); run with --generate"};
            return f();
        };
    };
    report("baseline ordering", need([&] { return baseline_ordering(*r2, seconds); }));
    report("few-shot trend", need([&] { return few_shot_trend(*r2); }));
    report("regime grouping", need([&] { return regime_grouping(*r2); }));
    report("ablation direction", need([&] { return ablation_direction(*r2); }));
    report("E@2 <= E@1", need([&] { return e2_le_e1({{"mts2d", *r2}, {"mts3d", *r3}}); }));
    report("determinism", [&] { return determinism(res, scr / "live"); });

    std::cout << (failed == 0 ? "all criteria passed" : fmt::format("{} criteria failed", failed)) << std::endl;
    return failed == 0 ? 0 : 1;
}
