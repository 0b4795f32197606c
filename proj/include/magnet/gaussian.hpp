#pragma once

#include <Eigen/Dense>

#include <vector>

namespace magnet {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// One moving target at the moment of selection. Units are px / px/s in 2D
// and m / m/s in 3D.
struct TargetState {
    int id = 0;
    Vec center;
    double size = 0.0;  // w
    double speed = 0.0;  // v
    Vec direction;  // unit motion direction, ignored when speed == 0

    int dim() const { return static_cast<int>(center.size()); }
    // Throws InputError / DimensionError when the invariants do not hold.
    void validate() const;
};

// Columns of `axes` are tangent, normal and (3D) binormal.
struct LocalFrame {
    Vec origin;
    Mat axes;
    bool fallback = false;  // canonical axes were substituted
};

// Default viewing axis for 3D scenes.
inline Eigen::Vector3d default_depth_axis() { return {0.0, 0.0, 1.0}; }

LocalFrame local_frame(const TargetState& t,
                       const Eigen::Vector3d& depth_axis = default_depth_axis());

// Per local axis d: mu.row(d) = (mu_a, mu_v, mu_w), sigma.row(d) = (sigma_a, sigma_v, sigma_w).
struct TernaryGaussianParams {
    Mat mu;
    Mat sigma;

    TernaryGaussianParams() = default;
    explicit TernaryGaussianParams(int dim) : mu(Mat::Zero(dim, 3)), sigma(Mat::Zero(dim, 3)) {}

    int dim() const { return static_cast<int>(mu.rows()); }
    int parameter_count() const { return dim() * 6; }
    void validate() const;
};

struct AxisMoments {
    Vec mean;  // mu_d
    Vec var;  // sigma_d^2
};

// mu_d = mu_a + mu_v v + mu_w w;  sigma_d^2 = sigma_a^2 + (sigma_v v)^2 + (sigma_w w)^2
AxisMoments ternary_moments(const TernaryGaussianParams& p, double v, double w);

struct GaussianPred {
    Vec mean;
    Mat cov;
};

GaussianPred gaussian_pred(const TargetState& t, const TernaryGaussianParams& p,
                           const Eigen::Vector3d& depth_axis = default_depth_axis());

// Multivariate normal log-density via Cholesky. NumericError (with the
// eigenvalues) when the covariance is not symmetric positive definite.
double log_pdf(const GaussianPred& g, const Vec& s);

struct Posterior {
    std::vector<double> prob;
    std::vector<double> log_density;
    // Every linear-domain density underflows to zero. The log-sum-exp result
    // is still returned; if no log-density is finite the posterior is uniform.
    bool underflow = false;
};

// Uniform prior over targets.
Posterior bayes_posterior(const std::vector<TargetState>& targets, const TernaryGaussianParams& p,
                          const Vec& s, const Eigen::Vector3d& depth_axis = default_depth_axis());

}  // namespace magnet
