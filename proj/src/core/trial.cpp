#include "magnet/trial.hpp"

#include "magnet/errors.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace magnet {

namespace {

std::string join(const std::vector<std::string>& v) {
    std::string out;
    for (const auto& s : v) out += (out.empty() ? "" : ", ") + s;
    return out;
}

nlohmann::json vec_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vec json_vec(const nlohmann::json& j) {
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

nlohmann::json mat_json(const Mat& m) {
    nlohmann::json out = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        std::vector<double> row(static_cast<std::size_t>(m.cols()));
        for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
        out.push_back(std::move(row));
    }
    return out;
}

Mat json_mat(const nlohmann::json& j, Eigen::Index cols, const char* field) {
    Mat m(static_cast<Eigen::Index>(j.size()), cols);
    for (std::size_t r = 0; r < j.size(); ++r) {
        const auto& row = j[r];
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
            throw ParseError(std::string("env.") + field + " rows need " + std::to_string(cols) +
                             " values");
        }
        for (Eigen::Index c = 0; c < cols; ++c) m(static_cast<Eigen::Index>(r), c) = row[static_cast<std::size_t>(c)].get<double>();
    }
    return m;
}

}  // namespace

const std::vector<std::string>& gesture_vocabulary() {
    static const std::vector<std::string> v = {"fixed", "handheld", "controller"};
    return v;
}

const std::vector<std::string>& gender_vocabulary() {
    static const std::vector<std::string> v = {"female", "male"};
    return v;
}

std::string to_string(Gesture g) { return gesture_vocabulary()[static_cast<std::size_t>(g)]; }

Gesture parse_gesture(const std::string& s) {
    const auto& v = gesture_vocabulary();
    auto it = std::find(v.begin(), v.end(), s);
    if (it == v.end()) throw InputError("unknown gesture '" + s + "' (expected one of: " + join(v) + ")");
    return static_cast<Gesture>(it - v.begin());
}

void UserProfile::validate() const {
    const auto& g = gender_vocabulary();
    if (std::find(g.begin(), g.end(), gender) == g.end()) {
        throw InputError("unknown gender '" + gender + "' (expected one of: " + join(g) + ")");
    }
    if (!std::isfinite(age) || age <= 0.0) throw InputError("age must be a positive number");
}

void EnvWindow::validate() const {
    if (!(rate_hz > 0.0)) throw ValidationError("env.rate_hz must be > 0");
    if (acc.cols() != kAccChannels) {
        throw ValidationError("env.acc needs " + std::to_string(kAccChannels) + " channels, got " +
                              std::to_string(acc.cols()));
    }
    if (vib.cols() != kVibChannels) {
        throw ValidationError("env.vib needs " + std::to_string(kVibChannels) + " channels, got " +
                              std::to_string(vib.cols()));
    }
    if (acc.rows() != vib.rows() || acc.rows() < 1) {
        throw ValidationError("env.acc and env.vib must have the same nonzero length");
    }
    if (!acc.allFinite() || !vib.allFinite()) throw ValidationError("env contains non-finite samples");
}

EnvWindow EnvWindow::zeros(double rate_hz, double duration_s) {
    EnvWindow w;
    w.rate_hz = rate_hz;
    const auto n = static_cast<Eigen::Index>(std::llround(rate_hz * duration_s));
    w.acc = Mat::Zero(n, kAccChannels);
    w.vib = Mat::Zero(n, kVibChannels);
    w.zero_filled = true;
    return w;
}

const TargetState& TrialRecord::intended() const {
    for (const auto& t : targets) {
        if (t.id == intended_id) return t;
    }
    throw ValidationError("trial " + trial_id + ": intended target " + std::to_string(intended_id) +
                          " not among targets");
}

void TrialRecord::validate() const {
    if (targets.empty()) throw ValidationError("trial " + trial_id + ": no targets");
    std::set<int> ids;
    int hits = 0;
    for (const auto& t : targets) {
        if (!ids.insert(t.id).second) {
            throw ValidationError("trial " + trial_id + ": duplicate target id " + std::to_string(t.id));
        }
        if (t.id == intended_id) ++hits;
        if (t.dim() != dim()) throw ValidationError("trial " + trial_id + ": target/endpoint dims differ");
        try {
            t.validate();
        } catch (const std::exception& e) {
            throw ValidationError("trial " + trial_id + ": " + e.what());
        }
    }
    if (hits != 1) throw ValidationError("trial " + trial_id + ": exactly one intended target required");
    if (dim() != 2 && dim() != 3) throw ValidationError("trial " + trial_id + ": endpoint must be 2D or 3D");
    if (!endpoint.allFinite()) throw ValidationError("trial " + trial_id + ": endpoint not finite");
    try {
        user.validate();
        env.validate();
    } catch (const std::exception& e) {
        throw ValidationError("trial " + trial_id + ": " + e.what());
    }
    if (!std::isfinite(rmsa) || rmsa < 0.0) throw ValidationError("trial " + trial_id + ": bad rmsa");
}

nlohmann::json trial_to_json(const TrialRecord& t) {
    nlohmann::json targets = nlohmann::json::array();
    for (const auto& s : t.targets) {
        targets.push_back({{"id", s.id},
                           {"center", vec_json(s.center)},
                           {"size", s.size},
                           {"speed", s.speed},
                           {"dir", vec_json(s.direction)},
                           {"intended", s.id == t.intended_id}});
    }
    nlohmann::json j = {{"trial_id", t.trial_id},
                        {"user",
                         {{"id", t.user.id},
                          {"gesture", to_string(t.user.gesture)},
                          {"age", t.user.age},
                          {"gender", t.user.gender}}},
                        {"scenario_id", t.scenario_id},
                        {"targets", targets},
                        {"endpoint", vec_json(t.endpoint)},
                        {"env",
                         {{"rate_hz", t.env.rate_hz},
                          {"acc", mat_json(t.env.acc)},
                          {"vib", mat_json(t.env.vib)},
                          {"zero_filled", t.env.zero_filled}}},
                        {"rmsa", t.rmsa}};
    if (!t.truth_expert.empty() || !t.regime.empty()) {
        j["truth"] = {{"expert", t.truth_expert}, {"regime", t.regime}};
    }
    return j;
}

TrialRecord trial_from_json(const nlohmann::json& j) {
    TrialRecord t;
    try {
        t.trial_id = j.at("trial_id").get<std::string>();
        const auto& u = j.at("user");
        t.user.id = u.at("id").get<int>();
        t.user.gesture = parse_gesture(u.at("gesture").get<std::string>());
        t.user.age = u.at("age").get<double>();
        t.user.gender = u.at("gender").get<std::string>();
        t.scenario_id = j.value("scenario_id", "");
        int intended = 0;
        for (const auto& s : j.at("targets")) {
            TargetState ts;
            ts.id = s.at("id").get<int>();
            ts.center = json_vec(s.at("center"));
            ts.size = s.at("size").get<double>();
            ts.speed = s.at("speed").get<double>();
            ts.direction = json_vec(s.at("dir"));
            if (s.value("intended", false)) {
                t.intended_id = ts.id;
                ++intended;
            }
            t.targets.push_back(std::move(ts));
        }
        if (intended != 1) throw ValidationError("trial " + t.trial_id + ": exactly one intended target required");
        t.endpoint = json_vec(j.at("endpoint"));
        const auto& env = j.at("env");
        t.env.rate_hz = env.at("rate_hz").get<double>();
        t.env.acc = json_mat(env.at("acc"), kAccChannels, "acc");
        t.env.vib = json_mat(env.at("vib"), kVibChannels, "vib");
        t.env.zero_filled = env.value("zero_filled", false);
        t.rmsa = j.at("rmsa").get<double>();
        if (j.contains("truth")) {
            t.truth_expert = j["truth"].value("expert", "");
            t.regime = j["truth"].value("regime", "");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("trial record: ") + e.what());
    }
    t.validate();
    return t;
}

}  // namespace magnet
