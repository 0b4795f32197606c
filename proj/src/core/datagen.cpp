#include "magnet/datagen.hpp"

#include "magnet/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <array>
#include <map>
#include <numeric>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <tuple>

namespace magnet {

namespace {

constexpr int kPlacementAttempts = 20000;

TernaryGaussianParams make_params(std::initializer_list<std::array<double, 6>> rows) {
    TernaryGaussianParams p(static_cast<int>(rows.size()));
    int d = 0;
    for (const auto& r : rows) {
        p.mu.row(d) << r[0], r[1], r[2];
        p.sigma.row(d) << r[3], r[4], r[5];
        ++d;
    }
    return p;
}

std::string fmt_num(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", x);
    return buf;
}

std::string cell_name(double w, double v) { return "(W=" + fmt_num(w) + ", V=" + fmt_num(v) + ")"; }

nlohmann::json vec_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vec json_vec(const nlohmann::json& j) {
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

nlohmann::json profile_json(const VibrationProfile& p) {
    nlohmann::json sched = nlohmann::json::array();
    for (const auto& i : p.scheduled) sched.push_back({{"time_s", i.time_s}, {"axis", i.axis}, {"amplitude", i.amplitude}});
    return {{"rate_hz", p.rate_hz},
            {"duration_s", p.duration_s},
            {"reversion", p.reversion},
            {"base_sd", {p.base_sd(0), p.base_sd(1), p.base_sd(2)}},
            {"impulse_rate_hz", p.impulse_rate_hz},
            {"impulse_amplitude", p.impulse_amplitude},
            {"impulse_decay_s", p.impulse_decay_s},
            {"impulse_freq_hz", p.impulse_freq_hz},
            {"scheduled", sched}};
}

VibrationProfile profile_from(const nlohmann::json& j) {
    VibrationProfile p;
    p.rate_hz = j.value("rate_hz", p.rate_hz);
    p.duration_s = j.value("duration_s", p.duration_s);
    p.reversion = j.value("reversion", p.reversion);
    if (j.contains("base_sd")) {
        const auto b = j.at("base_sd").get<std::vector<double>>();
        if (b.size() != 3) throw ConfigError("profile.base_sd needs 3 values");
        p.base_sd = Eigen::Vector3d(b[0], b[1], b[2]);
    }
    p.impulse_rate_hz = j.value("impulse_rate_hz", 0.0);
    p.impulse_amplitude = j.value("impulse_amplitude", 0.0);
    p.impulse_decay_s = j.value("impulse_decay_s", 0.0);
    p.impulse_freq_hz = j.value("impulse_freq_hz", p.impulse_freq_hz);
    for (const auto& i : j.value("scheduled", nlohmann::json::array())) {
        p.scheduled.push_back({i.at("time_s").get<double>(), i.at("axis").get<int>(), i.at("amplitude").get<double>()});
    }
    return p;
}

// Fold x into [0, len] by repeated reflection; returns the reflection count
// and flips `sign` once per reflection.
int fold(double& x, double len, double& sign) {
    const double k = std::floor(x / len);
    const double r = x - k * len;
    const auto kk = static_cast<long long>(k);
    if (kk % 2 == 0) {
        x = r;
    } else {
        x = len - r;
        sign = -sign;
    }
    return static_cast<int>(std::llabs(kk));
}

Vec random_direction(int dim, std::mt19937_64& rng) {
    if (dim == 2) {
        std::uniform_real_distribution<double> ang(0.0, 2.0 * std::numbers::pi);
        const double a = ang(rng);
        return Eigen::Vector2d(std::cos(a), std::sin(a));
    }
    std::normal_distribution<double> n;
    Vec d(3);
    do {
        d << n(rng), n(rng), n(rng);
    } while (d.norm() < 1e-6);
    return d.normalized();
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a * 0x9E3779B97F4A7C15ULL + b + 0x632BE59BD9B4E019ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

Vec ScenarioConfig::extent_min() const { return bounds_min; }
Vec ScenarioConfig::extent_max() const { return bounds_max; }

const std::string& ScenarioConfig::truth_expert(Gesture g, const std::string& regime) const {
    for (const auto& r : truth) {
        if (r.gesture == g && r.regime == regime) return r.expert;
    }
    throw ConfigError("scenario " + id + ": no truth rule for gesture " + to_string(g) + " in regime " + regime);
}

void ScenarioConfig::validate() const {
    if (dim != 2 && dim != 3) throw ConfigError("scenario.dim must be 2 or 3");
    if (gestures.empty()) throw ConfigError("scenario.gestures must not be empty");
    if (n_targets < 1) throw ConfigError("scenario.n_targets must be >= 1");
    if (sizes.empty() || std::any_of(sizes.begin(), sizes.end(), [](double w) { return !(w > 0.0); })) {
        throw ConfigError("scenario.sizes must be nonempty and > 0");
    }
    if (speeds.empty() || std::any_of(speeds.begin(), speeds.end(), [](double v) { return !(v >= 0.0); })) {
        throw ConfigError("scenario.speeds must be nonempty and >= 0");
    }
    if (bounds_min.size() != dim || bounds_max.size() != dim || ((bounds_max - bounds_min).array() <= 0.0).any()) {
        throw ConfigError("scenario.bounds must be " + std::to_string(dim) + "D with max > min");
    }
    if (users < 1 || reps < 1) throw ConfigError("scenario.users and scenario.reps must be >= 1");
    if (!(kappa >= 0.0)) throw ConfigError("scenario.kappa must be >= 0");
    if (dwell_min_s < 0.0 || dwell_max_s < dwell_min_s) throw ConfigError("scenario.dwell range invalid");
    if (regimes.empty()) throw ConfigError("scenario.regimes must not be empty");
    double total = 0.0;
    for (const auto& r : regimes) {
        if (r.probability < 0.0) throw ConfigError("scenario.regimes[" + r.name + "].probability must be >= 0");
        total += r.probability;
        r.profile.validate();
        for (Gesture g : gestures) truth_experts.at(truth_expert(g, r.name));
    }
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("scenario.regimes probabilities must sum to 1");
    for (const auto& e : truth_experts.experts) {
        if (e.dim != dim) throw ConfigError("scenario.truth_experts: expert '" + e.id + "' has wrong dim");
    }
}

nlohmann::json scenario_to_json(const ScenarioConfig& c) {
    nlohmann::json gestures = nlohmann::json::array();
    for (Gesture g : c.gestures) gestures.push_back(to_string(g));
    nlohmann::json regimes = nlohmann::json::array();
    for (const auto& r : c.regimes) regimes.push_back({{"name", r.name}, {"probability", r.probability}, {"profile", profile_json(r.profile)}});
    nlohmann::json truth = nlohmann::json::array();
    for (const auto& t : c.truth) truth.push_back({{"gesture", to_string(t.gesture)}, {"regime", t.regime}, {"expert", t.expert}});
    return {{"id", c.id},
            {"dim", c.dim},
            {"gestures", gestures},
            {"n_targets", c.n_targets},
            {"sizes", c.sizes},
            {"speeds", c.speeds},
            {"bounds_min", vec_json(c.bounds_min)},
            {"bounds_max", vec_json(c.bounds_max)},
            {"depth_axis", {c.depth_axis(0), c.depth_axis(1), c.depth_axis(2)}},
            {"users", c.users},
            {"reps", c.reps},
            {"kappa", c.kappa},
            {"dwell_s", {c.dwell_min_s, c.dwell_max_s}},
            {"regimes", regimes},
            {"truth", truth},
            {"truth_experts", registry_to_json(c.truth_experts)},
            {"max_trials", c.max_trials}};
}

ScenarioConfig scenario_from_json(const nlohmann::json& j) {
    ScenarioConfig c;
    auto field = [&](const char* name) -> const nlohmann::json& {
        if (!j.contains(name)) throw ConfigError(std::string("scenario.") + name + " is required");
        return j.at(name);
    };
    try {
        c.id = field("id").get<std::string>();
        c.dim = field("dim").get<int>();
        for (const auto& g : field("gestures")) c.gestures.push_back(parse_gesture(g.get<std::string>()));
        c.n_targets = field("n_targets").get<int>();
        c.sizes = field("sizes").get<std::vector<double>>();
        c.speeds = field("speeds").get<std::vector<double>>();
        c.bounds_min = json_vec(field("bounds_min"));
        c.bounds_max = json_vec(field("bounds_max"));
        if (j.contains("depth_axis")) {
            const auto d = j.at("depth_axis").get<std::vector<double>>();
            if (d.size() != 3) throw ConfigError("scenario.depth_axis needs 3 values");
            c.depth_axis = Eigen::Vector3d(d[0], d[1], d[2]);
        }
        c.users = j.value("users", c.users);
        c.reps = j.value("reps", c.reps);
        c.kappa = j.value("kappa", c.kappa);
        if (j.contains("dwell_s")) {
            const auto d = j.at("dwell_s").get<std::vector<double>>();
            if (d.size() != 2) throw ConfigError("scenario.dwell_s needs [min, max]");
            c.dwell_min_s = d[0];
            c.dwell_max_s = d[1];
        }
        for (const auto& r : field("regimes")) {
            c.regimes.push_back({r.at("name").get<std::string>(), r.at("probability").get<double>(), profile_from(r.at("profile"))});
        }
        for (const auto& t : field("truth")) {
            c.truth.push_back({parse_gesture(t.at("gesture").get<std::string>()), t.at("regime").get<std::string>(),
                               t.at("expert").get<std::string>()});
        }
        c.truth_experts = registry_from_json(field("truth_experts"));
        c.max_trials = j.value("max_trials", c.max_trials);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("scenario: ") + e.what());
    }
    c.validate();
    return c;
}

// Population-truth endpoint models. Rows are (tangent, normal) with
// [mu_a, mu_v, mu_w, sigma_a, sigma_v, sigma_w]; units px, px/s, px.
ExpertRegistry truth_registry_2d() {
    ExpertRegistry r;
    r.experts.push_back({"s-f", 2,
                         make_params({{-12.0, -0.07, 0.0, 20.0, 0.05, 0.20}, {0.0, 0.0, 0.0, 15.0, 0.015, 0.15}}),
                         {{"source", "population truth, seated / fixed tablet"}}});
    r.experts.push_back({"s-h", 2,
                         make_params({{-6.0, -0.035, 0.0, 26.0, 0.03, 0.20}, {20.0, 0.0, 0.0, 30.0, 0.03, 0.20}}),
                         {{"source", "population truth, seated / handheld tablet"}}});
    r.experts.push_back({"w-h", 2,
                         make_params({{-20.0, -0.08, 0.0, 40.0, 0.04, 0.25}, {-10.0, 0.0, 0.0, 40.0, 0.035, 0.25}}),
                         {{"source", "population truth, walking / handheld tablet"}}});
    return r;
}

// Rows are (tangent, normal, binormal); units m, m/s, m (radius).
ExpertRegistry truth_registry_3d() {
    ExpertRegistry r;
    r.experts.push_back({"3d", 3,
                         make_params({{-0.01, -0.08, 0.0, 0.04, 0.04, 0.20},
                                      {0.008, 0.0, 0.0, 0.06, 0.03, 0.25},
                                      {0.0, 0.0, 0.0, 0.035, 0.03, 0.20}}),
                         {{"source", "population truth, controller pointing"}}});
    return r;
}

std::vector<UserProfile> default_users(int count, std::uint64_t seed) {
    std::mt19937_64 rng(mix_seed(seed, 0x75736572));
    std::normal_distribution<double> age(23.4, 2.84);
    std::vector<int> female(static_cast<std::size_t>(count), 0);
    for (int i = 0; i < std::min(3, count); ++i) female[static_cast<std::size_t>(i)] = 1;
    std::shuffle(female.begin(), female.end(), rng);
    std::vector<UserProfile> out;
    for (int i = 0; i < count; ++i) {
        UserProfile u;
        u.id = i;
        u.age = std::clamp(std::round(age(rng)), 18.0, 60.0);
        u.gender = female[static_cast<std::size_t>(i)] ? "female" : "male";
        out.push_back(u);
    }
    return out;
}

ScenarioConfig preset(const std::string& name) {
    ScenarioConfig c;
    c.id = name;
    if (name == "mts2d") {
        c.dim = 2;
        c.gestures = {Gesture::fixed, Gesture::handheld};
        c.n_targets = 15;
        c.sizes = {65, 95, 125, 155};
        c.speeds = {300, 550, 800, 1050};
        c.bounds_min = Eigen::Vector2d(0, 0);
        c.bounds_max = Eigen::Vector2d(2560, 1600);
        c.reps = 12;
        c.kappa = 1.0;
        VibrationProfile low;
        low.base_sd = Eigen::Vector3d(0.224, 0.224, 0.32);
        low.impulse_rate_hz = 0.2;
        low.impulse_amplitude = 0.53;
        low.impulse_decay_s = 0.15;
        VibrationProfile high;
        high.base_sd = Eigen::Vector3d(0.333, 0.333, 0.494);
        high.impulse_rate_hz = 0.5;
        high.impulse_amplitude = 1.07;
        high.impulse_decay_s = 0.15;
        c.regimes = {{"low", 0.6, low}, {"high", 0.4, high}};
        c.truth = {{Gesture::fixed, "low", "s-f"},
                   {Gesture::fixed, "high", "s-f"},
                   {Gesture::handheld, "low", "s-h"},
                   {Gesture::handheld, "high", "w-h"}};
        c.truth_experts = truth_registry_2d();
    } else if (name == "mts3d") {
        c.dim = 3;
        c.gestures = {Gesture::controller};
        c.n_targets = 5;
        c.sizes = {0.04, 0.08, 0.12, 0.16};
        c.speeds = {0.22, 0.34, 0.45, 0.56};
        c.bounds_min = Eigen::Vector3d(-0.4, -0.3, 0.25);
        c.bounds_max = Eigen::Vector3d(0.4, 0.3, 0.6);
        c.reps = 6;
        c.kappa = 1.0;
        VibrationProfile low;
        low.base_sd = Eigen::Vector3d(0.192, 0.192, 0.277);
        low.impulse_rate_hz = 0.2;
        low.impulse_amplitude = 0.43;
        low.impulse_decay_s = 0.15;
        VibrationProfile high;
        high.base_sd = Eigen::Vector3d(0.277, 0.277, 0.404);
        high.impulse_rate_hz = 0.5;
        high.impulse_amplitude = 0.85;
        high.impulse_decay_s = 0.15;
        c.regimes = {{"low", 0.6, low}, {"high", 0.4, high}};
        c.truth = {{Gesture::controller, "low", "3d"}, {Gesture::controller, "high", "3d"}};
        c.truth_experts = truth_registry_3d();
    } else {
        throw ConfigError("unknown preset '" + name + "' (expected mts2d or mts3d)");
    }
    return c;
}

int advance(TargetState& t, double dt, const Vec& lo, const Vec& hi) {
    int bounces = 0;
    for (Eigen::Index a = 0; a < t.center.size(); ++a) {
        const double len = hi(a) - lo(a);
        if (!(len > 0.0)) throw GenerationError("movement range has no extent on axis " + std::to_string(a));
        double x = t.center(a) - lo(a) + t.speed * t.direction(a) * dt;
        double sign = 1.0;
        bounces += fold(x, len, sign);
        t.center(a) = lo(a) + x;
        t.direction(a) *= sign;
    }
    return bounces;
}

TrialRecord gen_trial(const ScenarioConfig& sc, const TrialSpec& spec) {
    if (std::find(sc.sizes.begin(), sc.sizes.end(), spec.w) == sc.sizes.end() ||
        std::find(sc.speeds.begin(), sc.speeds.end(), spec.v) == sc.speeds.end()) {
        throw ConfigError("condition " + cell_name(spec.w, spec.v) + " is not in the scenario grid");
    }
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> unit;

    // Regime and motion window.
    const Regime* regime = nullptr;
    if (!spec.regime.empty()) {
        for (const auto& r : sc.regimes) {
            if (r.name == spec.regime) regime = &r;
        }
        if (regime == nullptr) throw ConfigError("unknown regime '" + spec.regime + "'");
    } else {
        double u = unit(rng), acc = 0.0;
        regime = &sc.regimes.back();
        for (const auto& r : sc.regimes) {
            acc += r.probability;
            if (u < acc) {
                regime = &r;
                break;
            }
        }
    }
    TrialRecord tr;
    tr.env = simulate_motion_window(regime->profile, mix_seed(spec.seed, 1));
    tr.rmsa = rmsa(tr.env.acc);
    tr.regime = regime->name;
    tr.user = spec.user;
    tr.scenario_id = sc.id;
    {
        char buf[160];
        std::snprintf(buf, sizeof buf, "%s-u%02d-%s-w%s-v%s-r%02d", sc.id.c_str(), spec.user.id,
                      to_string(spec.user.gesture).c_str(), fmt_num(spec.w).c_str(), fmt_num(spec.v).c_str(),
                      spec.rep);
        tr.trial_id = buf;
    }

    // Scene: non-overlapping targets inside the movement range.
    const double r = sc.radius(spec.w);
    Vec lo = sc.bounds_min, hi = sc.bounds_max;
    if (sc.dim == 2) {
        lo.array() += r;
        hi.array() -= r;
    }
    if (((hi - lo).array() <= 0.0).any()) {
        throw GenerationError("bounds too small for targets of size " + fmt_num(spec.w));
    }
    for (int i = 0; i < sc.n_targets; ++i) {
        TargetState t;
        t.id = i;
        t.size = spec.w;
        t.speed = spec.v;
        bool placed = false;
        for (int attempt = 0; attempt < kPlacementAttempts && !placed; ++attempt) {
            t.center = lo + ((hi - lo).array() * Vec::NullaryExpr(sc.dim, [&] { return unit(rng); }).array()).matrix();
            placed = std::all_of(tr.targets.begin(), tr.targets.end(),
                                 [&](const TargetState& o) { return (o.center - t.center).norm() >= 2.0 * r; });
        }
        if (!placed) {
            throw GenerationError("bounds too small for " + std::to_string(sc.n_targets) +
                                  " non-overlapping targets of size " + fmt_num(spec.w));
        }
        t.direction = random_direction(sc.dim, rng);
        tr.targets.push_back(std::move(t));
    }
    const double dwell = sc.dwell_min_s + (sc.dwell_max_s - sc.dwell_min_s) * unit(rng);
    for (auto& t : tr.targets) advance(t, dwell, lo, hi);
    tr.intended_id = static_cast<int>(unit(rng) * sc.n_targets);
    tr.intended_id = std::min(tr.intended_id, sc.n_targets - 1);

    // Endpoint from the truth expert with vibration-scaled spread.
    tr.truth_expert = sc.truth_expert(spec.user.gesture, regime->name);
    const auto& params = sc.truth_experts.at(tr.truth_expert).params;
    const TargetState& target = tr.intended();
    const LocalFrame frame = local_frame(target, sc.depth_axis);
    const AxisMoments m = ternary_moments(params, target.speed, target.size);
    const double scale = 1.0 + sc.kappa * tr.rmsa;
    std::normal_distribution<double> normal;
    Vec local(sc.dim);
    for (int d = 0; d < sc.dim; ++d) local(d) = m.mean(d) + scale * std::sqrt(m.var(d)) * normal(rng);
    tr.endpoint = frame.origin + frame.axes * local;
    return tr;
}

Dataset build_dataset(const ScenarioConfig& sc, const std::vector<UserProfile>& users, std::uint64_t seed) {
    sc.validate();
    const long long total = static_cast<long long>(users.size()) * static_cast<long long>(sc.gestures.size()) *
                            static_cast<long long>(sc.sizes.size()) * static_cast<long long>(sc.speeds.size()) * sc.reps;
    if (total > sc.max_trials) {
        throw ConfigError("dataset would have " + std::to_string(total) + " trials, above max_trials " +
                          std::to_string(sc.max_trials));
    }
    Dataset d;
    d.scenario = sc;
    d.seed = seed;
    d.trials.reserve(static_cast<std::size_t>(total));
    std::uint64_t index = 0;
    for (const auto& base : users) {
        for (Gesture g : sc.gestures) {
            UserProfile u = base;
            u.gesture = g;
            for (double w : sc.sizes) {
                for (double v : sc.speeds) {
                    for (int rep = 0; rep < sc.reps; ++rep) {
                        TrialSpec spec{w, v, u, rep, mix_seed(seed, index++), ""};
                        d.trials.push_back(gen_trial(sc, spec));
                    }
                }
            }
        }
    }
    return d;
}

void write_dataset(std::ostream& out, const Dataset& d) {
    nlohmann::json header = {{"schema", "magnet-trials"},
                             {"schema_version", kDatasetSchemaVersion},
                             {"scenario", scenario_to_json(d.scenario)},
                             {"seed", d.seed},
                             {"count", d.trials.size()}};
    out << header.dump() << "\n";
    for (const auto& t : d.trials) out << trial_to_json(t).dump() << "\n";
}

void save_dataset(const std::filesystem::path& path, const Dataset& d) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    write_dataset(f, d);
}

Dataset read_dataset(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line.empty()) throw ParseError("dataset: missing header line");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("dataset header: ") + e.what());
    }
    if (header.value("schema", "") != "magnet-trials") throw ParseError("dataset header: wrong schema tag");
    if (header.value("schema_version", 0) != kDatasetSchemaVersion) {
        throw ParseError("dataset schema_version " + header.value("schema_version", nlohmann::json()).dump() +
                         " unsupported (expected " + std::to_string(kDatasetSchemaVersion) + ")");
    }
    Dataset d;
    d.scenario = scenario_from_json(header.at("scenario"));
    d.seed = header.value("seed", std::uint64_t{0});
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            d.trials.push_back(trial_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("dataset line " + std::to_string(lineno) + ": " + e.what());
        } catch (const std::exception& e) {
            throw ParseError("dataset line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    const auto expected = header.value("count", d.trials.size());
    if (expected != d.trials.size()) {
        throw ParseError("dataset: header count " + std::to_string(expected) + " but " +
                         std::to_string(d.trials.size()) + " records");
    }
    return d;
}

Dataset load_dataset(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ParseError("cannot open dataset " + path.string());
    return read_dataset(f);
}

std::string content_hash(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string dataset_hash(const Dataset& d) {
    std::ostringstream os;
    write_dataset(os, d);
    return content_hash(os.str());
}

std::string file_hash(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ParseError("cannot open " + path.string());
    std::ostringstream os;
    os << f.rdbuf();
    return content_hash(os.str());
}

SplitSpec default_split(const ScenarioConfig& sc, std::uint64_t seed) {
    // 40% test and 10% validation of the full-factorial total.
    const int total = sc.users * static_cast<int>(sc.gestures.size() * sc.sizes.size() * sc.speeds.size()) * sc.reps;
    return {total * 2 / 5, total / 10, seed};
}

Split split_dataset(const std::vector<TrialRecord>& trials, const SplitSpec& s) {
    if (s.test_count < 0 || s.val_count < 0) throw SplitError("split counts must be >= 0");
    if (static_cast<std::size_t>(s.test_count + s.val_count) > trials.size()) {
        throw SplitError("split asks for " + std::to_string(s.test_count + s.val_count) + " trials but dataset has " +
                         std::to_string(trials.size()));
    }
    std::map<std::pair<double, double>, std::map<int, std::vector<std::size_t>>> cells;
    for (std::size_t i = 0; i < trials.size(); ++i) {
        cells[{trials[i].size(), trials[i].speed()}][trials[i].user.id].push_back(i);
    }
    const auto n_cells = static_cast<int>(cells.size());
    if (s.test_count % n_cells != 0 || s.val_count % n_cells != 0) {
        throw SplitError("test/val counts (" + std::to_string(s.test_count) + "/" + std::to_string(s.val_count) +
                         ") are not divisible by the " + std::to_string(n_cells) + " (W, V) cells");
    }
    const int test_per = s.test_count / n_cells;
    const int val_per = s.val_count / n_cells;
    std::mt19937_64 rng(mix_seed(s.seed, 0x73706c6974));
    std::vector<int> role(trials.size(), 0);  // 0 pool, 1 val, 2 test
    for (auto& [key, by_user] : cells) {
        std::size_t available = 0;
        std::vector<std::vector<std::size_t>> queues;
        for (auto& [uid, idx] : by_user) {
            std::shuffle(idx.begin(), idx.end(), rng);
            available += idx.size();
            queues.push_back(idx);
        }
        if (available < static_cast<std::size_t>(test_per + val_per)) {
            throw SplitError("cell " + cell_name(key.first, key.second) + " has " + std::to_string(available) +
                             " trials, needs " + std::to_string(test_per + val_per));
        }
        std::vector<std::size_t> order(queues.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        std::vector<std::size_t> head(queues.size(), 0);
        std::size_t cursor = 0;
        auto take = [&]() {
            while (true) {
                const std::size_t q = order[cursor++ % order.size()];
                if (head[q] < queues[q].size()) return queues[q][head[q]++];
            }
        };
        for (int k = 0; k < test_per; ++k) role[take()] = 2;
        for (int k = 0; k < val_per; ++k) role[take()] = 1;
    }
    Split out;
    for (std::size_t i = 0; i < trials.size(); ++i) {
        (role[i] == 2 ? out.test : role[i] == 1 ? out.val : out.pool).push_back(trials[i]);
    }
    return out;
}

std::vector<TrialRecord> few_shot_subset(const std::vector<TrialRecord>& pool, int n, std::uint64_t seed,
                                         ShotCell cell) {
    if (n < 1) throw ConfigError("few-shot n must be >= 1");
    using Key = std::tuple<int, double, double, int>;
    std::map<Key, std::vector<std::size_t>> cells;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        const auto& t = pool[i];
        const int g = cell == ShotCell::user_size_speed_gesture ? static_cast<int>(t.user.gesture) : -1;
        cells[{t.user.id, t.size(), t.speed(), g}].push_back(i);
    }
    if (cells.empty()) throw SplitError("few-shot pool is empty");
    std::mt19937_64 rng(mix_seed(seed, 0x73686f74));
    std::vector<std::size_t> chosen;
    for (auto& [key, idx] : cells) {
        if (idx.size() < static_cast<std::size_t>(n)) {
            std::string name = "user " + std::to_string(std::get<0>(key)) + " cell " +
                               cell_name(std::get<1>(key), std::get<2>(key));
            if (std::get<3>(key) >= 0) name += " gesture " + to_string(static_cast<Gesture>(std::get<3>(key)));
            throw SplitError(name + " has " + std::to_string(idx.size()) + " pool trials, " + std::to_string(n) +
                             "-shot needs " + std::to_string(n));
        }
        std::shuffle(idx.begin(), idx.end(), rng);
        chosen.insert(chosen.end(), idx.begin(), idx.begin() + n);
    }
    std::sort(chosen.begin(), chosen.end());
    std::vector<TrialRecord> out;
    out.reserve(chosen.size());
    for (std::size_t i : chosen) out.push_back(pool[i]);
    return out;
}

std::vector<EndpointSample> endpoint_samples(const std::vector<TrialRecord>& trials, const Eigen::Vector3d& depth_axis) {
    std::vector<EndpointSample> out;
    out.reserve(trials.size());
    for (const auto& t : trials) {
        const TargetState& target = t.intended();
        const LocalFrame f = local_frame(target, depth_axis);
        out.push_back({target.size, target.speed, f.axes.transpose() * (t.endpoint - f.origin)});
    }
    return out;
}

ExpertRegistry fit_scenario_experts(const ScenarioConfig& sc, int per_cell, std::uint64_t seed, int min_count) {
    sc.validate();
    if (per_cell < 2) throw ConfigError("calibration needs >= 2 trials per cell");
    ExpertRegistry out;
    std::uint64_t index = 0;
    const auto users = default_users(sc.users, seed);
    for (const auto& truth : sc.truth_experts.experts) {
        ScenarioConfig cal = sc;
        cal.kappa = 0.0;
        cal.truth.clear();
        for (Gesture g : cal.gestures) {
            for (const auto& r : cal.regimes) cal.truth.push_back({g, r.name, truth.id});
        }
        std::vector<TrialRecord> trials;
        for (double w : cal.sizes) {
            for (double v : cal.speeds) {
                for (int k = 0; k < per_cell; ++k) {
                    UserProfile u = users[static_cast<std::size_t>(k) % users.size()];
                    u.gesture = cal.gestures.front();
                    trials.push_back(gen_trial(cal, {w, v, u, k, mix_seed(mix_seed(seed, 0x63616c), index++), ""}));
                }
            }
        }
        const ConditionMoments m = fit_condition_moments(endpoint_samples(trials, sc.depth_axis), min_count);
        FitProvenance prov;
        ExpertSpec e;
        e.id = truth.id;
        e.dim = truth.dim;
        e.params = fit_ternary_params(m, &prov);
        e.provenance = prov.to_json();
        e.provenance["scenario"] = sc.id;
        e.provenance["calibration_trials_per_cell"] = per_cell;
        e.provenance["seed"] = seed;
        e.provenance["note"] = "fitted from synthetic calibration data; not published values";
        out.experts.push_back(std::move(e));
    }
    return out;
}

}  // namespace magnet
