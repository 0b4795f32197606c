#pragma once

#include "magnet/gaussian.hpp"

#include <nlohmann/json.hpp>

#include <string>
#include <vector>

namespace magnet {

enum class Gesture { fixed, handheld, controller };

const std::vector<std::string>& gesture_vocabulary();
const std::vector<std::string>& gender_vocabulary();
std::string to_string(Gesture g);
Gesture parse_gesture(const std::string& s);  // InputError listing the vocabulary

struct UserProfile {
    int id = 0;
    Gesture gesture = Gesture::fixed;
    double age = 25.0;
    std::string gender = "male";

    void validate() const;
    bool operator==(const UserProfile&) const = default;
};

// 3 s of motion preceding a selection. acc is T x 3 (m/s^2); vib is T x 12,
// column blocks [velocity xyz | angle xyz | displacement xyz | frequency xyz].
struct EnvWindow {
    double rate_hz = 50.0;
    Mat acc;
    Mat vib;
    bool zero_filled = false;  // stand-in for a missing or underfull window

    int length() const { return static_cast<int>(acc.rows()); }
    void validate() const;
    static EnvWindow zeros(double rate_hz, double duration_s);
};

constexpr int kAccChannels = 3;
constexpr int kVibChannels = 12;

struct TrialRecord {
    std::string trial_id;
    UserProfile user;
    std::string scenario_id;
    std::vector<TargetState> targets;
    int intended_id = 0;
    Vec endpoint;
    EnvWindow env;
    double rmsa = 0.0;
    // Generator truth, kept for diagnostics; never read by models.
    std::string truth_expert;
    std::string regime;

    int dim() const { return static_cast<int>(endpoint.size()); }
    const TargetState& intended() const;
    double size() const { return intended().size; }
    double speed() const { return intended().speed; }
    void validate() const;  // ValidationError with the offending field
};

nlohmann::json trial_to_json(const TrialRecord& t);
TrialRecord trial_from_json(const nlohmann::json& j);

}  // namespace magnet
