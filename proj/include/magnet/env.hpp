#pragma once

#include "magnet/trial.hpp"

#include <cstdint>
#include <vector>

namespace magnet {

struct Impulse {
    double time_s = 0.0;
    int axis = 2;  // 0 x, 1 y, 2 z
    double amplitude = 1.0;  // m/s^2
};

// Mean-reverting base acceleration per axis plus impulse events (bumps,
// turns). An impulse is a damped cosine a exp(-tau/decay) cos(2 pi f tau);
// decay 0 makes it a single-sample spike.
struct VibrationProfile {
    double rate_hz = 50.0;
    double duration_s = 3.0;
    double reversion = 15.0;  // 1/s
    Eigen::Vector3d base_sd = Eigen::Vector3d::Zero();  // stationary sd per axis, m/s^2
    double impulse_rate_hz = 0.0;
    double impulse_amplitude = 0.0;
    double impulse_decay_s = 0.0;
    double impulse_freq_hz = 6.0;
    std::vector<Impulse> scheduled;

    void validate() const;
};

EnvWindow simulate_motion_window(const VibrationProfile& p, std::uint64_t seed);

// Vibration channels derived from an acceleration series.
Mat derive_vibration_channels(const Mat& acc, double rate_hz);

// Per-axis RMS combined as a root-sum-of-squares; no frequency weighting.
double rmsa(const Mat& acc);

// Rounds to `digits` significant decimal digits.
double round_significant(double x, int digits);

}  // namespace magnet
