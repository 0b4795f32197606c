#include "magnet/env.hpp"
#include "magnet/errors.hpp"
#include "magnet/service.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <set>

namespace magnet {

namespace {

Vec to_vec(const std::vector<double>& v) { return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size())); }

}  // namespace

InferenceService::InferenceService(std::unique_ptr<MagnetModel<float>> model, std::string checkpoint_hash)
    : model_(std::move(model)), hash_(std::move(checkpoint_hash)) {
    if (!model_) throw ConfigError("service needs a model");
}

std::unique_ptr<InferenceService> InferenceService::from_files(const std::filesystem::path& checkpoint,
                                                               const std::optional<std::filesystem::path>& registry) {
    auto m = load_model(checkpoint);
    if (registry) {
        const ExpertRegistry r = load_registry(*registry);
        if (!(r == m->registry())) {
            throw ConfigError("registry " + registry->string() + " does not match the experts stored in " + checkpoint.string());
        }
    }
    return std::make_unique<InferenceService>(std::move(m), file_hash(checkpoint));
}

nlohmann::json InferenceService::health() const {
    return {{"status", "ok"}, {"checkpoint", hash_}, {"dim", model_->dim()}, {"experts", model_->registry().ids()}};
}

nlohmann::json InferenceService::experts() const { return registry_to_json(model_->registry()); }

PredictionRecord InferenceService::predict(const TrialRecord& t) {
    std::lock_guard lock(mu_);
    return model_->predict(t);
}

std::string InferenceService::predict_payload(const std::string& body) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("request body is not JSON: ") + e.what());
    }
    return predict(trial_from_json(j)).to_json().dump();
}

nlohmann::json error_message(const std::string& code, const std::string& msg) {
    return {{"type", "error"}, {"code", code}, {"msg", msg}};
}

Session::Session(InferenceService& service, std::string session_id) : service_(service) {
    state_.session_id = std::move(session_id);
}

std::vector<nlohmann::json> Session::handle(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        return {error_message("bad_json", e.what())};
    }
    return handle(j);
}

std::vector<nlohmann::json> Session::handle(const nlohmann::json& msg) {
    if (!msg.is_object() || !msg.contains("type") || !msg["type"].is_string()) {
        return {error_message("bad_message", "message must be an object with a string 'type'")};
    }
    const std::string type = msg["type"];
    // Handlers work on copies and commit at the end, so a failure leaves the session untouched.
    try {
        if (type == "session_start") return on_start(msg);
        if (!state_.started) return {error_message("no_session", "send session_start first")};
        if (type == "motion") return on_motion(msg);
        if (type == "trial_start") return on_trial(msg);
        if (type == "touch") return on_touch(msg);
        return {error_message("unknown_type", "unknown message type '" + type + "'")};
    } catch (const nlohmann::json::exception& e) {
        return {error_message("bad_message", type + ": " + e.what())};
    } catch (const std::invalid_argument& e) {
        return {error_message("bad_message", type + ": " + e.what())};
    } catch (const std::exception& e) {
        spdlog::warn("session {}: {} failed: {}", state_.session_id, type, e.what());
        return {error_message("internal", type + ": " + e.what())};
    }
}

std::vector<nlohmann::json> Session::on_start(const nlohmann::json& msg) {
    const auto& p = msg.at("profile");
    UserProfile u;
    u.id = p.value("id", 0);
    u.gesture = parse_gesture(p.at("gesture").get<std::string>());
    u.age = p.at("age").get<double>();
    u.gender = p.at("gender").get<std::string>();
    u.validate();
    // Reject profiles the encoders cannot represent before the first touch.
    (void)user_features(u, service_.config().features);

    const auto& s = msg.at("scenario");
    ScenarioConfig sc = s.is_string() ? preset(s.get<std::string>()) : scenario_from_json(s);
    if (sc.dim != service_.config().features.dim) {
        return {error_message("scenario_mismatch", "scenario is " + std::to_string(sc.dim) + "D, model is " +
                                                       std::to_string(service_.config().features.dim) + "D")};
    }
    const double rate = msg.value("rate_hz", 50.0);
    if (!(rate > 0.0) || !std::isfinite(rate)) throw InputError("rate_hz must be > 0");

    SessionState next;
    next.session_id = state_.session_id;
    next.started = true;
    next.scenario = std::move(sc);
    next.profile = u;
    next.rate_hz = rate;
    next.window_frames = static_cast<std::size_t>(std::lround(3.0 * rate));
    state_ = std::move(next);
    return {{{"type", "session_started"}, {"session_id", state_.session_id}, {"window_frames", state_.window_frames}}};
}

std::vector<nlohmann::json> Session::on_motion(const nlohmann::json& msg) {
    const auto& frames = msg.at("frames");
    if (!frames.is_array()) throw InputError("frames must be an array");
    std::vector<Eigen::Vector3d> parsed;
    parsed.reserve(frames.size());
    for (const auto& f : frames) {
        const auto& a = f.is_object() ? f.at("acc") : f;
        if (!a.is_array() || a.size() != 3) throw InputError("each frame needs 3 acceleration values");
        Eigen::Vector3d v(a[0].get<double>(), a[1].get<double>(), a[2].get<double>());
        if (!v.allFinite()) throw InputError("acceleration values must be finite");
        parsed.push_back(v);
    }
    for (const auto& v : parsed) {
        state_.motion.push_back(v);
        if (state_.motion.size() > state_.window_frames) state_.motion.pop_front();
    }
    return {};
}

std::vector<nlohmann::json> Session::on_trial(const nlohmann::json& msg) {
    ActiveTrial t;
    const int n = state_.trials + 1;
    t.trial_id = msg.value("trial_id", state_.session_id + "-" + std::to_string(n));
    const auto& arr = msg.at("targets");
    if (!arr.is_array() || arr.empty()) throw InputError("targets must be a non-empty array");
    std::set<int> ids;
    for (const auto& s : arr) {
        TargetState ts;
        ts.id = s.at("id").get<int>();
        ts.center = to_vec(s.at("center").get<std::vector<double>>());
        ts.size = s.at("size").get<double>();
        ts.speed = s.value("speed", 0.0);
        ts.direction = to_vec(s.value("dir", std::vector<double>(static_cast<std::size_t>(ts.center.size()), 0.0)));
        if (ts.dim() != state_.scenario.dim) throw DimensionError("target " + std::to_string(ts.id) + " has the wrong dimension");
        ts.validate();
        if (!ids.insert(ts.id).second) throw InputError("duplicate target id " + std::to_string(ts.id));
        t.targets.push_back(std::move(ts));
    }
    state_.trial = std::move(t);
    state_.trials = n;
    return {{{"type", "trial_started"}, {"trial_id", state_.trial->trial_id}, {"targets", state_.trial->targets.size()}}};
}

TrialRecord Session::snapshot_trial(const Vec& point, double t) const {
    if (!state_.trial) throw UsageError("no active trial");
    TrialRecord r;
    r.trial_id = state_.trial->trial_id;
    r.user = state_.profile;
    r.scenario_id = state_.scenario.id;
    r.targets = state_.trial->targets;
    for (auto& s : r.targets) advance(s, t, state_.scenario.bounds_min, state_.scenario.bounds_max);
    r.intended_id = -1;  // unknown live
    r.endpoint = point;
    // Leading zeros stand in for frames the client has not sent yet.
    const auto n = static_cast<Eigen::Index>(state_.window_frames);
    const auto have = static_cast<Eigen::Index>(state_.motion.size());
    r.env.rate_hz = state_.rate_hz;
    r.env.acc = Mat::Zero(n, kAccChannels);
    for (Eigen::Index i = 0; i < have; ++i) r.env.acc.row(n - have + i) = state_.motion[static_cast<std::size_t>(i)].transpose();
    r.env.vib = derive_vibration_channels(r.env.acc, state_.rate_hz);
    r.env.zero_filled = have < n;
    r.rmsa = rmsa(r.env.acc);
    return r;
}

std::vector<nlohmann::json> Session::on_touch(const nlohmann::json& msg) {
    if (!state_.trial) return {error_message("no_trial", "send trial_start before touch")};
    const Vec point = to_vec(msg.at("point").get<std::vector<double>>());
    if (point.size() != state_.scenario.dim) throw DimensionError("touch point must have " + std::to_string(state_.scenario.dim) + " coordinates");
    if (!point.allFinite()) throw InputError("touch point must be finite");
    const double t = msg.value("t", 0.0);
    if (!(t >= 0.0) || !std::isfinite(t)) throw InputError("t must be a finite time >= 0");

    const TrialRecord rec = snapshot_trial(point, t);
    const PredictionRecord p = service_.predict(rec);
    nlohmann::json reply = p.to_json();
    reply.erase("adapted_moments");
    reply.erase("zero_filled_env");
    reply["type"] = "prediction";
    reply["zero_padded"] = rec.env.zero_filled;
    reply["buffered_frames"] = state_.motion.size();
    state_.trial.reset();
    return {reply};
}

}  // namespace magnet
