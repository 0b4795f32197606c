#include "magnet/gaussian.hpp"

#include "magnet/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

namespace magnet {

namespace {

constexpr double kUnitTol = 1e-9;
constexpr double kSymTol = 1e-9;

void check_dim(int dim, const char* what) {
    if (dim != 2 && dim != 3) {
        throw DimensionError(std::string(what) + " must be 2D or 3D, got dim " +
                             std::to_string(dim));
    }
}

// Unit vector in `ref` orthogonal to `t`, or a zero vector if they are parallel.
Eigen::Vector3d orthogonal_part(const Eigen::Vector3d& t, const Eigen::Vector3d& ref) {
    Eigen::Vector3d n = ref - ref.dot(t) * t;
    const double len = n.norm();
    if (len < 1e-9) return Eigen::Vector3d::Zero();
    return n / len;
}

}  // namespace

void TargetState::validate() const {
    check_dim(dim(), "target center");
    if (!(size > 0.0) || !std::isfinite(size)) {
        throw InputError("target " + std::to_string(id) + ": size must be > 0, got " +
                         std::to_string(size));
    }
    if (!(speed >= 0.0) || !std::isfinite(speed)) {
        throw InputError("target " + std::to_string(id) + ": speed must be >= 0, got " +
                         std::to_string(speed));
    }
    if (!center.allFinite()) throw InputError("target " + std::to_string(id) + ": non-finite center");
    if (speed > 0.0) {
        if (direction.size() != center.size()) {
            throw DimensionError("target " + std::to_string(id) + ": direction has dim " +
                                 std::to_string(direction.size()) + ", center has dim " +
                                 std::to_string(center.size()));
        }
        if (std::abs(direction.norm() - 1.0) > kUnitTol) {
            throw InputError("target " + std::to_string(id) + ": direction is not unit length");
        }
    }
}

LocalFrame local_frame(const TargetState& t, const Eigen::Vector3d& depth_axis) {
    t.validate();
    const int dim = t.dim();
    LocalFrame f;
    f.origin = t.center;
    f.axes = Mat::Zero(dim, dim);
    const bool moving = t.speed > 0.0;
    f.fallback = !moving;
    if (dim == 2) {
        Eigen::Vector2d tan = moving ? Eigen::Vector2d(t.direction) : Eigen::Vector2d(1.0, 0.0);
        f.axes.col(0) = tan;
        f.axes.col(1) = Eigen::Vector2d(-tan.y(), tan.x());
        return f;
    }
    const Eigen::Vector3d tan = moving ? Eigen::Vector3d(t.direction) : Eigen::Vector3d::UnitX();
    Eigen::Vector3d nrm = orthogonal_part(tan, depth_axis.normalized());
    if (nrm.isZero()) {
        // Motion along the viewing axis: use the canonical axis least aligned with it.
        Eigen::Index k = 0;
        tan.cwiseAbs().minCoeff(&k);
        nrm = orthogonal_part(tan, Eigen::Vector3d::Unit(k));
        f.fallback = true;
    }
    f.axes.col(0) = tan;
    f.axes.col(1) = nrm;
    f.axes.col(2) = tan.cross(nrm);
    return f;
}

void TernaryGaussianParams::validate() const {
    check_dim(dim(), "ternary params");
    if (mu.cols() != 3 || sigma.rows() != mu.rows() || sigma.cols() != 3) {
        throw DimensionError("ternary params need dim x 3 coefficient blocks, got mu " +
                             std::to_string(mu.rows()) + "x" + std::to_string(mu.cols()) +
                             " sigma " + std::to_string(sigma.rows()) + "x" +
                             std::to_string(sigma.cols()));
    }
    if (!mu.allFinite() || !sigma.allFinite()) throw InputError("ternary params are not finite");
    if ((sigma.array() < 0.0).any()) throw InputError("ternary sigma coefficients must be >= 0");
}

AxisMoments ternary_moments(const TernaryGaussianParams& p, double v, double w) {
    p.validate();
    if (!(w > 0.0)) throw InputError("ternary_moments: size w must be > 0, got " + std::to_string(w));
    if (!(v >= 0.0)) throw InputError("ternary_moments: speed v must be >= 0, got " + std::to_string(v));
    AxisMoments m;
    m.mean = p.mu.col(0) + p.mu.col(1) * v + p.mu.col(2) * w;
    m.var = p.sigma.col(0).array().square() + (p.sigma.col(1).array() * v).square() +
            (p.sigma.col(2).array() * w).square();
    return m;
}

GaussianPred gaussian_pred(const TargetState& t, const TernaryGaussianParams& p,
                           const Eigen::Vector3d& depth_axis) {
    if (t.dim() != p.dim()) {
        throw DimensionError("target dim " + std::to_string(t.dim()) + " vs params dim " +
                             std::to_string(p.dim()));
    }
    const LocalFrame f = local_frame(t, depth_axis);
    const AxisMoments m = ternary_moments(p, t.speed, t.size);
    GaussianPred g;
    g.mean = f.origin + f.axes * m.mean;
    g.cov = f.axes * m.var.asDiagonal() * f.axes.transpose();
    g.cov = 0.5 * (g.cov + g.cov.transpose());
    return g;
}

double log_pdf(const GaussianPred& g, const Vec& s) {
    const auto n = g.mean.size();
    if (s.size() != n || g.cov.rows() != n || g.cov.cols() != n) {
        throw DimensionError("log_pdf: endpoint dim " + std::to_string(s.size()) + ", mean dim " +
                             std::to_string(n) + ", covariance " + std::to_string(g.cov.rows()) +
                             "x" + std::to_string(g.cov.cols()));
    }
    const double asym = (g.cov - g.cov.transpose()).cwiseAbs().maxCoeff();
    Eigen::LLT<Mat> llt;
    if (asym <= kSymTol) llt.compute(g.cov);
    if (asym > kSymTol || llt.info() != Eigen::Success) {
        Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (g.cov + g.cov.transpose()),
                                              Eigen::EigenvaluesOnly);
        std::ostringstream os;
        os << "covariance is not symmetric positive definite (asymmetry " << asym
           << ", eigenvalues " << es.eigenvalues().transpose() << ")";
        throw NumericError(os.str());
    }
    const Vec z = llt.matrixL().solve(s - g.mean);
    const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    return -0.5 * (static_cast<double>(n) * std::log(2.0 * std::numbers::pi) + log_det +
                   z.squaredNorm());
}

Posterior bayes_posterior(const std::vector<TargetState>& targets, const TernaryGaussianParams& p,
                          const Vec& s, const Eigen::Vector3d& depth_axis) {
    if (targets.empty()) throw InputError("bayes_posterior needs at least one target");
    Posterior post;
    post.log_density.reserve(targets.size());
    for (const auto& t : targets) post.log_density.push_back(log_pdf(gaussian_pred(t, p, depth_axis), s));
    const double mx = *std::max_element(post.log_density.begin(), post.log_density.end());
    const std::size_t n = targets.size();
    post.underflow = !(mx > std::log(std::numeric_limits<double>::min()));
    if (!std::isfinite(mx)) {
        post.prob.assign(n, 1.0 / static_cast<double>(n));
        post.underflow = true;
        return post;
    }
    double z = 0.0;
    for (double l : post.log_density) z += std::exp(l - mx);
    const double lse = mx + std::log(z);
    post.prob.reserve(n);
    for (double l : post.log_density) post.prob.push_back(std::exp(l - lse));
    return post;
}

}  // namespace magnet
