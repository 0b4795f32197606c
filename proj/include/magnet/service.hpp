#pragma once

#include "magnet/datagen.hpp"
#include "magnet/model.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace magnet {

// Shared model behind every session and request. Predictions are serialized
// through one lock; the parameters are never modified.
class InferenceService {
public:
    InferenceService(std::unique_ptr<MagnetModel<float>> model, std::string checkpoint_hash);

    static std::unique_ptr<InferenceService> from_files(const std::filesystem::path& checkpoint,
                                                        const std::optional<std::filesystem::path>& registry = std::nullopt);

    nlohmann::json health() const;
    nlohmann::json experts() const;
    PredictionRecord predict(const TrialRecord& t);
    // TrialRecord JSON in, serialized PredictionRecord out.
    std::string predict_payload(const std::string& body);

    const ModelConfig& config() const { return model_->config(); }
    const std::string& checkpoint_hash() const { return hash_; }

private:
    std::unique_ptr<MagnetModel<float>> model_;
    std::string hash_;
    std::mutex mu_;
};

struct ActiveTrial {
    std::string trial_id;
    std::vector<TargetState> targets;  // as of trial_start
};

struct SessionState {
    std::string session_id;
    bool started = false;
    ScenarioConfig scenario;
    UserProfile profile;
    double rate_hz = 50.0;
    std::size_t window_frames = 150;
    std::deque<Eigen::Vector3d> motion;  // most recent frames, oldest first
    std::optional<ActiveTrial> trial;
    int trials = 0;
};

// One client conversation. handle() never throws on bad input; it answers
// with an error message and leaves the session as it was.
//
// client -> server
//   {"type":"session_start","profile":{gesture,age,gender[,id]},"scenario":"mts2d"|{...}[,"rate_hz":50]}
//   {"type":"motion","frames":[[ax,ay,az],...]}         (or [{"acc":[ax,ay,az]},...])
//   {"type":"trial_start","targets":[{id,center,size,speed,dir},...][,"trial_id":s]}
//   {"type":"touch","point":[x,y(,z)],"t":seconds since trial_start}
// server -> client
//   {"type":"session_started","session_id":s,"window_frames":n}
//   {"type":"trial_started","trial_id":s,"targets":n}
//   {"type":"prediction","trial_id":s,"ranked":[...],"target_ids":[...],"experts":[...],
//    "weights":[[...]],"per_target_logp":[...],"zero_padded":bool,"buffered_frames":n}
//   {"type":"error","code":s,"msg":s}
class Session {
public:
    Session(InferenceService& service, std::string session_id);

    std::vector<nlohmann::json> handle(const std::string& text);
    std::vector<nlohmann::json> handle(const nlohmann::json& msg);

    const SessionState& state() const { return state_; }
    // Trial as it would be scored for a touch at `point`, `t` seconds after trial_start.
    TrialRecord snapshot_trial(const Vec& point, double t) const;

private:
    std::vector<nlohmann::json> on_start(const nlohmann::json& msg);
    std::vector<nlohmann::json> on_motion(const nlohmann::json& msg);
    std::vector<nlohmann::json> on_trial(const nlohmann::json& msg);
    std::vector<nlohmann::json> on_touch(const nlohmann::json& msg);

    InferenceService& service_;
    SessionState state_;
};

nlohmann::json error_message(const std::string& code, const std::string& msg);

struct ServerConfig {
    std::string address = "127.0.0.1";
    unsigned short port = 8080;  // 0 picks a free port
};

// Reads MAGNET_ADDRESS / MAGNET_PORT over the given defaults.
ServerConfig server_config_from_env(ServerConfig base);

// HTTP: GET /health, GET /experts, POST /predict. WebSocket: /session.
// One thread per connection.
class Server {
public:
    Server(InferenceService& service, ServerConfig cfg);
    ~Server();
    Server(const Server&) = delete;
    Server& operator=(const Server&) = delete;

    unsigned short port() const;
    void start();  // accepts on a background thread
    void run();    // accepts on the calling thread until stop()
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace magnet
