#include "magnet/env.hpp"

#include "magnet/errors.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <numbers>
#include <random>

namespace magnet {

namespace {

constexpr int kStoredDigits = 5;
constexpr double kGravity = 9.81;
constexpr double kHighPassS = 0.5;
constexpr double kLowPassS = 0.3;

}  // namespace

void VibrationProfile::validate() const {
    if (rate_hz < 10.0) throw ConfigError("vibration profile: rate_hz must be >= 10");
    if (!(duration_s > 0.0)) throw ConfigError("vibration profile: duration_s must be > 0");
    if (reversion < 0.0 || (base_sd.array() < 0.0).any() || impulse_rate_hz < 0.0 ||
        impulse_decay_s < 0.0) {
        throw ConfigError("vibration profile: rates, spreads and decays must be >= 0");
    }
    for (const auto& i : scheduled) {
        if (i.axis < 0 || i.axis > 2) throw ConfigError("vibration profile: impulse axis must be 0..2");
    }
}

double round_significant(double x, int digits) {
    if (x == 0.0 || !std::isfinite(x)) return x;
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.*g", digits, x);
    return std::strtod(buf, nullptr);
}

Mat derive_vibration_channels(const Mat& acc, double rate_hz) {
    const Eigen::Index n = acc.rows();
    const double dt = 1.0 / rate_hz;
    const double hp = std::exp(-dt / kHighPassS);
    const double lp = 1.0 - std::exp(-dt / kLowPassS);
    const auto window = static_cast<Eigen::Index>(std::llround(rate_hz));  // 1 s
    Mat vib = Mat::Zero(n, kVibChannels);
    for (int a = 0; a < 3; ++a) {
        double vel = 0.0, disp = 0.0, low = 0.0;
        std::vector<int> crossings(static_cast<std::size_t>(n), 0);
        for (Eigen::Index t = 0; t < n; ++t) {
            const double prev = vel;
            vel = hp * (vel + acc(t, a) * dt);
            disp = hp * (disp + vel * dt);
            low += lp * (acc(t, a) - low);
            crossings[static_cast<std::size_t>(t)] = (t > 0 && (prev < 0.0) != (vel < 0.0)) ? 1 : 0;
            int count = 0;
            for (Eigen::Index k = std::max<Eigen::Index>(0, t - window + 1); k <= t; ++k) {
                count += crossings[static_cast<std::size_t>(k)];
            }
            const double span = static_cast<double>(std::min(t + 1, window)) * dt;
            vib(t, a) = vel * 1000.0;  // mm/s
            vib(t, 3 + a) = std::atan(low / kGravity) * 180.0 / std::numbers::pi;  // deg
            vib(t, 6 + a) = disp * 1000.0;  // mm
            vib(t, 9 + a) = 0.5 * count / span;  // Hz
        }
    }
    return vib;
}

EnvWindow simulate_motion_window(const VibrationProfile& p, std::uint64_t seed) {
    p.validate();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> unit;
    const auto n = static_cast<Eigen::Index>(std::llround(p.rate_hz * p.duration_s));
    const double dt = 1.0 / p.rate_hz;
    EnvWindow w;
    w.rate_hz = p.rate_hz;
    w.acc = Mat::Zero(n, 3);

    const double decay = std::exp(-p.reversion * dt);
    const double innov = std::sqrt(1.0 - decay * decay);
    for (int a = 0; a < 3; ++a) {
        if (p.base_sd(a) == 0.0) continue;
        double x = p.base_sd(a) * normal(rng);
        for (Eigen::Index t = 0; t < n; ++t) {
            w.acc(t, a) = x;
            x = decay * x + p.base_sd(a) * innov * normal(rng);
        }
    }

    std::vector<Impulse> events = p.scheduled;
    if (p.impulse_rate_hz > 0.0 && p.impulse_amplitude != 0.0) {
        std::poisson_distribution<int> count(p.impulse_rate_hz * p.duration_s);
        const int k = count(rng);
        for (int i = 0; i < k; ++i) {
            Impulse e;
            e.time_s = unit(rng) * p.duration_s;
            // Bumps act vertically; turns push sideways or fore-aft.
            e.axis = unit(rng) < 0.6 ? 2 : (unit(rng) < 0.5 ? 0 : 1);
            e.amplitude = p.impulse_amplitude * (0.6 + 0.8 * unit(rng)) * (unit(rng) < 0.5 ? -1.0 : 1.0);
            events.push_back(e);
        }
    }
    for (const auto& e : events) {
        const auto start = static_cast<Eigen::Index>(std::llround(e.time_s * p.rate_hz));
        if (start < 0 || start >= n) continue;
        if (p.impulse_decay_s == 0.0) {
            w.acc(start, e.axis) += e.amplitude;
            continue;
        }
        for (Eigen::Index t = start; t < n; ++t) {
            const double tau = static_cast<double>(t - start) * dt;
            const double env = std::exp(-tau / p.impulse_decay_s);
            if (env < 1e-4) break;
            w.acc(t, e.axis) += e.amplitude * env * std::cos(2.0 * std::numbers::pi * p.impulse_freq_hz * tau);
        }
    }

    w.acc = w.acc.unaryExpr([](double x) { return round_significant(x, kStoredDigits); });
    w.vib = derive_vibration_channels(w.acc, p.rate_hz)
                .unaryExpr([](double x) { return round_significant(x, kStoredDigits); });
    return w;
}

double rmsa(const Mat& acc) {
    if (acc.rows() == 0) throw InputError("rmsa: empty series");
    if (acc.cols() != 3) throw DimensionError("rmsa: expected 3 axes, got " + std::to_string(acc.cols()));
    double total = 0.0;
    for (int a = 0; a < 3; ++a) total += acc.col(a).squaredNorm() / static_cast<double>(acc.rows());
    return std::sqrt(total);
}

}  // namespace magnet
