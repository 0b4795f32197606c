#include "magnet/benchmark.hpp"

#include "magnet/errors.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

namespace magnet {

void BenchmarkConfig::validate() const {
    if (seeds.empty()) throw ConfigError("benchmark.seeds must not be empty");
    for (int s : shots) {
        if (s < 1) throw ConfigError("benchmark.shots entries must be >= 1");
    }
    if (ablation_shots < 1) throw ConfigError("benchmark.ablation_shots must be >= 1");
    for (const auto& a : ablations) {
        if (a.rfind("w/o ", 0) != 0) throw ConfigError("benchmark.ablations: '" + a + "' is not of the form 'w/o <expert>|w/o all'");
    }
    train.validate();
    if (model) model->validate();
}

nlohmann::json benchmark_config_to_json(const BenchmarkConfig& c) {
    nlohmann::json j = {{"shots", c.shots},
                        {"seeds", c.seeds},
                        {"baselines", c.baselines},
                        {"magnet", c.magnet},
                        {"ablations", c.ablations},
                        {"ablation_shots", c.ablation_shots},
                        {"cell", c.cell == ShotCell::user_size_speed ? "user_size_speed" : "user_size_speed_gesture"},
                        {"train", train_config_to_json(c.train)},
                        {"cluster_seed", c.cluster_seed}};
    if (c.model) j["model"] = model_config_to_json(*c.model);
    return j;
}

BenchmarkConfig benchmark_config_from_json(const nlohmann::json& j) {
    BenchmarkConfig c;
    try {
        c.shots = j.value("shots", c.shots);
        c.seeds = j.value("seeds", c.seeds);
        c.baselines = j.value("baselines", c.baselines);
        c.magnet = j.value("magnet", c.magnet);
        c.ablations = j.value("ablations", c.ablations);
        c.ablation_shots = j.value("ablation_shots", c.ablation_shots);
        c.cluster_seed = j.value("cluster_seed", c.cluster_seed);
        const std::string cell = j.value("cell", std::string("user_size_speed"));
        if (cell == "user_size_speed") {
            c.cell = ShotCell::user_size_speed;
        } else if (cell == "user_size_speed_gesture") {
            c.cell = ShotCell::user_size_speed_gesture;
        } else {
            throw ConfigError("benchmark.cell: unknown value '" + cell + "'");
        }
        if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
        if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("benchmark config: ") + e.what());
    }
    c.validate();
    return c;
}

Stat stat_of(const std::vector<double>& v) {
    if (v.empty()) throw UsageError("stat of an empty sample");
    Stat s;
    s.n = static_cast<int>(v.size());
    s.mean = std::accumulate(v.begin(), v.end(), 0.0) / s.n;
    if (s.n >= 2) {
        double ss = 0.0;
        for (double x : v) ss += (x - s.mean) * (x - s.mean);
        s.std = std::sqrt(ss / (s.n - 1));
    }
    return s;
}

MetricRow metric_row(const std::string& model, int shots, std::uint64_t seed, const std::vector<Outcome>& outcomes,
                     const GroupingRule& cluster, const GroupingRule& mean, bool ranking) {
    MetricRow r;
    r.model = model;
    r.shots = shots;
    r.seed = seed;
    const auto gc = grouped_errors(outcomes, cluster);
    const auto gm = grouped_errors(outcomes, mean);
    r.e_clust_g1 = gc.g1;
    r.e_clust_g2 = gc.g2;
    r.e_mean_g1 = gm.g1;
    r.e_mean_g2 = gm.g2;
    r.e_at_1 = error_at_k(outcomes, 1);
    if (ranking) r.e_at_2 = error_at_k(outcomes, 2);
    return r;
}

namespace {

using Field = std::optional<double> MetricRow::*;
using AggField = std::optional<Stat> AggregateRow::*;

struct Column {
    const char* name;
    Field row;
    AggField agg;
};

const std::vector<Column>& columns() {
    static const std::vector<Column> c = {
        {"E_clust_G1", &MetricRow::e_clust_g1, &AggregateRow::e_clust_g1},
        {"E_clust_G2", &MetricRow::e_clust_g2, &AggregateRow::e_clust_g2},
        {"E_mean_G1", &MetricRow::e_mean_g1, &AggregateRow::e_mean_g1},
        {"E_mean_G2", &MetricRow::e_mean_g2, &AggregateRow::e_mean_g2},
        {"E_at_1", &MetricRow::e_at_1, &AggregateRow::e_at_1},
        {"E_at_2", &MetricRow::e_at_2, &AggregateRow::e_at_2},
    };
    return c;
}

std::string csv_quote(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::vector<std::string> csv_split(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

std::string exact(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

std::string exact(const std::optional<double>& v) { return v ? exact(*v) : std::string(); }

}  // namespace

std::vector<AggregateRow> MetricReport::aggregate() const {
    // Rows keep first-appearance order of (model, shots).
    std::vector<std::pair<std::string, int>> keys;
    std::map<std::pair<std::string, int>, std::vector<const MetricRow*>> groups;
    for (const auto& r : rows) {
        auto key = std::make_pair(r.model, r.shots);
        if (!groups.count(key)) keys.push_back(key);
        groups[key].push_back(&r);
    }
    std::vector<AggregateRow> out;
    for (const auto& key : keys) {
        AggregateRow a;
        a.model = key.first;
        a.shots = key.second;
        const auto& g = groups[key];
        a.seeds = static_cast<int>(g.size());
        for (const auto* r : g) {
            if (r->status != "ok") ++a.failed;
        }
        for (const auto& c : columns()) {
            std::vector<double> v;
            for (const auto* r : g) {
                if (r->status == "ok" && (r->*c.row)) v.push_back(*(r->*c.row));
            }
            if (!v.empty()) a.*c.agg = stat_of(v);
        }
        out.push_back(std::move(a));
    }
    return out;
}

const AggregateRow* MetricReport::find(const std::vector<AggregateRow>& agg, const std::string& model, int shots) const {
    for (const auto& a : agg) {
        if (a.model == model && a.shots == shots) return &a;
    }
    return nullptr;
}

std::vector<Outcome> evaluate_model(MagnetModel<float>& m, const std::vector<TrialRecord>& trials) {
    constexpr std::size_t kBatch = 64;
    std::vector<PreparedTrial> prepared;
    prepared.reserve(trials.size());
    for (const auto& t : trials) prepared.push_back(m.prepare(t));
    std::vector<const PreparedTrial*> ptr;
    for (const auto& p : prepared) ptr.push_back(&p);
    std::vector<Outcome> out;
    out.reserve(trials.size());
    for (std::size_t b = 0; b < ptr.size(); b += kBatch) {
        const std::size_t n = std::min(kBatch, ptr.size() - b);
        auto recs = m.predict(std::span<const PreparedTrial* const>(ptr.data() + b, n));
        for (std::size_t i = 0; i < n; ++i) out.push_back(outcome_of(recs[i], trials[b + i]));
    }
    return out;
}

namespace {

ExpertRegistry ablate(const ExpertRegistry& full, const std::string& ablation, const ModelConfig& mc) {
    const std::string what = ablation.substr(4);
    if (what == "all") return neutral_registry(mc);
    if (!full.find(what)) throw ConfigError("ablation '" + ablation + "': no expert '" + what + "' in the registry");
    if (full.experts.size() < 2) throw ConfigError("ablation '" + ablation + "' would leave no experts");
    ExpertRegistry r;
    for (const auto& e : full.experts) {
        if (e.id != what) r.experts.push_back(e);
    }
    return r;
}

std::string slug(std::string s) {
    for (char& c : s) {
        if (c == '/' || c == ' ' || c == ':') c = '_';
    }
    return s;
}

}  // namespace

MetricReport run_benchmark(const ScenarioConfig& sc, const Split& split, const ExpertRegistry& registry,
                           const BenchmarkConfig& cfg, const std::string& dataset_hash,
                           const std::optional<std::filesystem::path>& checkpoint_dir, const ProgressFn& progress) {
    cfg.validate();
    registry.validate();
    if (split.test.empty()) throw ConfigError("benchmark: test split is empty");
    const ModelConfig mc = cfg.model ? *cfg.model : model_config_for(sc);

    std::vector<double> rmsa;
    rmsa.reserve(split.test.size());
    for (const auto& t : split.test) rmsa.push_back(t.rmsa);
    const GroupingRule cluster = cluster_threshold(rmsa, cfg.cluster_seed);
    const GroupingRule mean = mean_threshold(rmsa);

    MetricReport rep;
    rep.metadata = {{"dataset_hash", dataset_hash},
                    {"scenario", sc.id},
                    {"test_trials", split.test.size()},
                    {"cluster_threshold", cluster.threshold},
                    {"cluster_k", cluster.k},
                    {"mean_threshold", mean.threshold},
                    {"registry", registry.ids()},
                    {"model", model_config_to_json(mc)},
                    {"config", benchmark_config_to_json(cfg)}};
    auto note = [&](const std::string& msg) {
        spdlog::info("{}", msg);
        if (progress) progress(msg);
    };

    // Baselines do not depend on the seed; they are scored once and repeated per seed.
    std::vector<std::pair<std::string, std::vector<Outcome>>> base;
    if (cfg.baselines) {
        std::vector<std::pair<std::string, std::string>> methods = {{"Border", "border"}, {"Distance", "distance"}};
        for (const auto& id : registry.ids()) methods.emplace_back("Expert:" + id, "expert:" + id);
        for (const auto& [name, method] : methods) {
            std::vector<Outcome> o;
            o.reserve(split.test.size());
            for (const auto& t : split.test) o.push_back(baseline_outcome(method, t, &registry, mc.depth_axis));
            base.emplace_back(name, std::move(o));
        }
    }

    auto run_cell = [&](const std::string& name, const ExpertRegistry& reg, int shots, std::uint64_t seed) {
        MetricRow row;
        row.model = name;
        row.shots = shots;
        row.seed = seed;
        try {
            TrainConfig tc = cfg.train;
            tc.shots = shots;
            tc.seed = seed;
            const auto train_set = few_shot_subset(split.pool, shots, mix_seed(seed, static_cast<std::uint64_t>(shots)), cfg.cell);
            auto res = train(train_set, split.val, reg, mc, tc);
            const auto out = evaluate_model(*res.model, split.test);
            row = metric_row(name, shots, seed, out, cluster, mean, true);
            if (checkpoint_dir) {
                std::filesystem::create_directories(*checkpoint_dir);
                const auto path = *checkpoint_dir / (slug(name) + "_shots" + std::to_string(shots) + "_seed" + std::to_string(seed) + ".ckpt");
                save_model(path, *res.model, {{"train_log", res.log.to_json()}, {"dataset_hash", dataset_hash}});
            }
            note(name + " " + std::to_string(shots) + "-shot seed " + std::to_string(seed) + ": E@1 " + format_metric(row.e_at_1) +
                 " (best epoch " + std::to_string(res.log.best_epoch) + ")");
        } catch (const std::exception& e) {
            row.status = std::string("failed: ") + e.what();
            spdlog::error("{} {}-shot seed {} failed: {}", name, shots, seed, e.what());
            if (progress) progress(name + " failed: " + e.what());
        }
        rep.rows.push_back(row);
    };

    for (std::uint64_t seed : cfg.seeds) {
        for (const auto& [name, o] : base) rep.rows.push_back(metric_row(name, 0, seed, o, cluster, mean, name != "Border"));
        if (cfg.magnet) {
            for (int shots : cfg.shots) run_cell("MAGNeT", registry, shots, seed);
        }
        for (const auto& a : cfg.ablations) {
            ExpertRegistry reg;
            try {
                reg = ablate(registry, a, mc);
            } catch (const std::exception& e) {
                MetricRow row;
                row.model = "MAGNeT " + a;
                row.shots = cfg.ablation_shots;
                row.seed = seed;
                row.status = std::string("failed: ") + e.what();
                rep.rows.push_back(row);
                continue;
            }
            run_cell("MAGNeT " + a, reg, cfg.ablation_shots, seed);
        }
    }
    return rep;
}

std::string format_metric(const std::optional<double>& v) {
    if (!v) return "-";
    std::ostringstream os;
    os << std::fixed << std::setprecision(4) << *v;
    return os.str();
}

void write_report_csv(std::ostream& os, const MetricReport& r) {
    os << "model,shots,seed";
    for (const auto& c : columns()) os << ',' << c.name;
    os << ",status\n";
    for (const auto& row : r.rows) {
        os << csv_quote(row.model) << ',' << row.shots << ',' << row.seed;
        for (const auto& c : columns()) os << ',' << exact(row.*c.row);
        os << ',' << csv_quote(row.status) << '\n';
    }
}

MetricReport read_report_csv(std::istream& is) {
    MetricReport r;
    std::string line;
    if (!std::getline(is, line)) throw ValidationError("report csv: missing header");
    const auto header = csv_split(line);
    const std::size_t width = 3 + columns().size() + 1;
    if (header.size() != width || header[0] != "model") throw ValidationError("report csv: unexpected header '" + line + "'");
    int lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto f = csv_split(line);
        if (f.size() != width) {
            throw ValidationError("report csv line " + std::to_string(lineno) + ": expected " + std::to_string(width) + " fields");
        }
        MetricRow row;
        try {
            row.model = f[0];
            row.shots = std::stoi(f[1]);
            row.seed = std::stoull(f[2]);
            for (std::size_t i = 0; i < columns().size(); ++i) {
                if (!f[3 + i].empty()) row.*(columns()[i].row) = std::stod(f[3 + i]);
            }
        } catch (const std::logic_error&) {
            throw ValidationError("report csv line " + std::to_string(lineno) + ": bad number");
        }
        row.status = f.back();
        r.rows.push_back(row);
    }
    return r;
}

void write_aggregate_csv(std::ostream& os, const MetricReport& r) {
    os << "model,shots,seeds,failed";
    for (const auto& c : columns()) os << ',' << c.name << "_mean," << c.name << "_std";
    os << '\n';
    for (const auto& a : r.aggregate()) {
        os << csv_quote(a.model) << ',' << a.shots << ',' << a.seeds << ',' << a.failed;
        for (const auto& c : columns()) {
            const auto& s = a.*c.agg;
            os << ',' << (s ? exact(s->mean) : "") << ',' << (s ? exact(s->std) : "");
        }
        os << '\n';
    }
}

std::string human_table(const MetricReport& r) {
    std::ostringstream os;
    os << std::left << std::setw(24) << "Method" << std::setw(6) << "Shots";
    const char* heads[] = {"E_clust G1", "E_clust G2", "E_mean G1", "E_mean G2", "E@1", "E@2"};
    for (const char* h : heads) os << std::setw(18) << h;
    os << '\n';
    for (const auto& a : r.aggregate()) {
        os << std::setw(24) << a.model << std::setw(6) << (a.shots ? std::to_string(a.shots) : "-");
        for (const auto& c : columns()) {
            const auto& s = a.*c.agg;
            std::string cell = "-";
            if (s) {
                cell = format_metric(s->mean);
                if (s->std) cell += " (" + format_metric(*s->std) + ")";
            }
            os << std::setw(18) << cell;
        }
        if (a.failed) os << "  [" << a.failed << " failed]";
        os << '\n';
    }
    return os.str();
}

void save_report(const std::filesystem::path& dir, const MetricReport& r) {
    std::filesystem::create_directories(dir);
    auto open = [&](const char* name) {
        std::ofstream f(dir / name);
        if (!f) throw std::runtime_error("cannot write " + (dir / name).string());
        return f;
    };
    {
        auto f = open("report.csv");
        write_report_csv(f, r);
    }
    {
        auto f = open("report_aggregate.csv");
        write_aggregate_csv(f, r);
    }
    {
        auto f = open("report.txt");
        f << human_table(r);
    }
    {
        auto f = open("report_meta.json");
        f << r.metadata.dump(2) << '\n';
    }
}

}  // namespace magnet
