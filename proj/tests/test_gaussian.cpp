#include "doctest.h"

#include "magnet/errors.hpp"
#include "magnet/gaussian.hpp"

#include <cmath>
#include <numbers>
#include <random>

using namespace magnet;

namespace {

TargetState target2(int id, double x, double y, double w, double v, double angle) {
    TargetState t;
    t.id = id;
    t.center = Eigen::Vector2d(x, y);
    t.size = w;
    t.speed = v;
    t.direction = Eigen::Vector2d(std::cos(angle), std::sin(angle));
    return t;
}

TernaryGaussianParams isotropic(int dim, double sigma) {
    TernaryGaussianParams p(dim);
    p.sigma.col(0).setConstant(sigma);
    return p;
}

TernaryGaussianParams random_params(int dim, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::uniform_real_distribution<double> pos(0.05, 1.0);
    TernaryGaussianParams p(dim);
    for (int d = 0; d < dim; ++d) {
        p.mu(d, 0) = 5 * u(rng);
        p.mu(d, 1) = 0.02 * u(rng);
        p.mu(d, 2) = 0.1 * u(rng);
        p.sigma(d, 0) = 10 * pos(rng);
        p.sigma(d, 1) = 0.03 * pos(rng);
        p.sigma(d, 2) = 0.2 * pos(rng);
    }
    return p;
}

Eigen::Matrix3d random_rotation(std::mt19937_64& rng) {
    std::normal_distribution<double> n;
    Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
    return q.normalized().toRotationMatrix();
}

}  // namespace

TEST_CASE("local_frame: 2D examples") {
    auto f = local_frame(target2(0, 0, 0, 10, 1, 0.0));
    CHECK(f.axes.col(0).isApprox(Eigen::Vector2d(1, 0)));
    CHECK(f.axes.col(1).isApprox(Eigen::Vector2d(0, 1)));
    CHECK_FALSE(f.fallback);

    auto g = local_frame(target2(0, 0, 0, 10, 1, std::numbers::pi / 2));
    CHECK((g.axes.col(1) - Eigen::Vector2d(-1, 0)).norm() < 1e-12);
}

TEST_CASE("local_frame: 3D example and fallbacks") {
    TargetState t;
    t.center = Eigen::Vector3d(0.1, 0.2, 0.4);
    t.size = 0.05;
    t.speed = 0.3;
    t.direction = Eigen::Vector3d(1, 0, 0);
    auto f = local_frame(t);
    CHECK((f.axes.col(0) - Eigen::Vector3d(1, 0, 0)).norm() < 1e-12);
    CHECK((f.axes.col(1) - Eigen::Vector3d(0, 0, 1)).norm() < 1e-12);
    CHECK((f.axes.col(2) - Eigen::Vector3d(0, -1, 0)).norm() < 1e-12);
    CHECK_FALSE(f.fallback);

    t.direction = Eigen::Vector3d(0, 0, 1);  // along the viewing axis
    auto along = local_frame(t);
    CHECK(along.fallback);
    CHECK((along.axes.transpose() * along.axes - Eigen::Matrix3d::Identity()).norm() < 1e-9);
    CHECK(along.axes.determinant() == doctest::Approx(1.0));

    t.speed = 0.0;
    auto still = local_frame(t);
    CHECK(still.fallback);
    CHECK((still.axes.col(0) - Eigen::Vector3d(1, 0, 0)).norm() < 1e-12);

    auto still2 = local_frame(target2(0, 0, 0, 10, 0.0, 1.0));
    CHECK(still2.fallback);
    CHECK(still2.axes.isApprox(Eigen::Matrix2d::Identity()));
}

TEST_CASE("local_frame property: orthonormal and right-handed") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n;
    for (int i = 0; i < 300; ++i) {
        TargetState t;
        t.center = Eigen::Vector3d(n(rng), n(rng), n(rng));
        t.size = 0.1;
        t.speed = 0.5;
        t.direction = Eigen::Vector3d(n(rng), n(rng), n(rng)).normalized();
        Eigen::Vector3d depth = Eigen::Vector3d(n(rng), n(rng), n(rng)).normalized();
        auto f = local_frame(t, depth);
        CHECK((f.axes.transpose() * f.axes - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-9);
        CHECK(std::abs(f.axes.determinant() - 1.0) < 1e-9);
        // normal lies in span{tangent, depth}
        CHECK(std::abs(f.axes.col(2).dot(depth)) < 1e-9);
    }
}

TEST_CASE("target validation") {
    auto t = target2(0, 0, 0, 10, 1, 0.0);
    t.size = 0.0;
    CHECK_THROWS_AS(t.validate(), InputError);
    t.size = 5.0;
    t.speed = -1.0;
    CHECK_THROWS_AS(t.validate(), InputError);
    t.speed = 1.0;
    t.direction = Eigen::Vector2d(1, 1);
    CHECK_THROWS_AS(t.validate(), InputError);
    t.center = Eigen::VectorXd::Zero(4);
    CHECK_THROWS_AS(t.validate(), DimensionError);
}

TEST_CASE("ternary_moments examples") {
    TernaryGaussianParams p(2);
    p.mu << 1, 2, 3, -1, 0.5, 0.25;
    p.sigma << 1, 2, 3, 1, 2, 3;
    auto lim = ternary_moments(p, 0.0, 1e-300);
    CHECK(lim.mean(0) == doctest::Approx(1.0));
    CHECK(lim.var(0) == doctest::Approx(1.0));

    auto m1 = ternary_moments(p, 1.5, 2.0);
    auto m2 = ternary_moments(p, 3.0, 2.0);
    const double speed_term = m1.mean(1) - (p.mu(1, 0) + p.mu(1, 2) * 2.0);
    CHECK(m2.mean(1) - (p.mu(1, 0) + p.mu(1, 2) * 2.0) == doctest::Approx(2.0 * speed_term));

    auto m = ternary_moments(p, 2.0, 1.0);
    CHECK(m.var(0) == doctest::Approx(26.0).epsilon(1e-15));
    CHECK(m.var(1) == doctest::Approx(26.0).epsilon(1e-15));

    CHECK_THROWS_AS(ternary_moments(p, 1.0, 0.0), InputError);
    CHECK_THROWS_AS(ternary_moments(p, -1.0, 1.0), InputError);
    p.sigma(0, 1) = -0.1;
    CHECK_THROWS_AS(ternary_moments(p, 1.0, 1.0), InputError);
    CHECK(TernaryGaussianParams(3).parameter_count() == 18);
}

TEST_CASE("ternary_moments property: variance monotone in v and w") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0.0, 1000.0);
    for (int i = 0; i < 300; ++i) {
        auto p = random_params(2, rng);
        const double v = u(rng), w = 1.0 + u(rng), dv = u(rng), dw = u(rng);
        auto base = ternary_moments(p, v, w);
        auto fv = ternary_moments(p, v + dv, w);
        auto fw = ternary_moments(p, v, w + dw);
        CHECK((fv.var.array() >= base.var.array()).all());
        CHECK((fw.var.array() >= base.var.array()).all());
    }
}

TEST_CASE("gaussian_pred examples") {
    TernaryGaussianParams zero_mu = isotropic(2, 3.0);
    auto g = gaussian_pred(target2(0, 100, 50, 40, 200, 0.7), zero_mu);
    CHECK((g.mean - Eigen::Vector2d(100, 50)).norm() < 1e-12);

    TernaryGaussianParams p(2);
    p.sigma << 2, 0, 0, 1, 0, 0;
    auto aligned = gaussian_pred(target2(0, 0, 0, 10, 5, 0.0), p);
    CHECK(aligned.cov(0, 1) == 0.0);
    CHECK(aligned.cov(0, 0) == doctest::Approx(4.0));

    // Rotation by hand: R diag(4,1) R^T with R = [[c,-s],[s,c]], c = s = 1/sqrt 2.
    auto diag = gaussian_pred(target2(0, 0, 0, 10, 5, std::numbers::pi / 4), p);
    CHECK(std::abs(diag.cov(0, 0) - 2.5) < 1e-12);
    CHECK(std::abs(diag.cov(1, 1) - 2.5) < 1e-12);
    CHECK(std::abs(diag.cov(0, 1) - 1.5) < 1e-12);
    CHECK(std::abs(diag.cov(1, 0) - 1.5) < 1e-12);

    CHECK_THROWS_AS(gaussian_pred(target2(0, 0, 0, 10, 5, 0.0), TernaryGaussianParams(3)),
                    DimensionError);
}

TEST_CASE("gaussian_pred property: spectrum equals axis variances, symmetric") {
    std::mt19937_64 rng(21);
    std::normal_distribution<double> n;
    std::uniform_real_distribution<double> u(0.01, 2.0);
    for (int i = 0; i < 200; ++i) {
        const int dim = 2 + i % 2;
        auto p = random_params(dim, rng);
        TargetState t;
        t.center = Eigen::VectorXd::NullaryExpr(dim, [&] { return n(rng); });
        t.size = u(rng) * 100;
        t.speed = u(rng) * 500;
        t.direction = Eigen::VectorXd::NullaryExpr(dim, [&] { return n(rng); }).normalized();
        auto g = gaussian_pred(t, p);
        auto m = ternary_moments(p, t.speed, t.size);
        CHECK((g.cov - g.cov.transpose()).cwiseAbs().maxCoeff() < 1e-9);
        Eigen::SelfAdjointEigenSolver<Mat> es(g.cov);
        Vec expected = m.var;
        std::sort(expected.data(), expected.data() + expected.size());
        CHECK((es.eigenvalues() - expected).cwiseAbs().maxCoeff() < 1e-9 * std::max(1.0, expected.maxCoeff()));
        CHECK((es.eigenvalues().array() > 0).all());
    }
}

TEST_CASE("log_pdf examples") {
    GaussianPred g{Eigen::Vector2d(3, -2), Eigen::Matrix2d::Identity()};
    CHECK(log_pdf(g, g.mean) == doctest::Approx(std::log(1.0 / (2.0 * std::numbers::pi))).epsilon(1e-14));

    GaussianPred h{Eigen::Vector2d(1, 2), (Eigen::Matrix2d() << 3, 1, 1, 2).finished()};
    const Eigen::Vector2d d(0.7, -1.3);
    CHECK(log_pdf(h, h.mean + d) == doctest::Approx(log_pdf(h, h.mean - d)).epsilon(1e-14));

    // Direct 2x2 formula with explicit inverse and determinant.
    const Eigen::Vector2d s(2.0, 0.5);
    const double det = 3 * 2 - 1 * 1;
    const Eigen::Matrix2d inv = (Eigen::Matrix2d() << 2, -1, -1, 3).finished() / det;
    const Eigen::Vector2d r = s - Eigen::Vector2d(1, 2);
    const double direct = -std::log(2 * std::numbers::pi) - 0.5 * std::log(det) - 0.5 * r.dot(inv * r);
    CHECK(log_pdf(h, s) == doctest::Approx(direct).epsilon(1e-13));

    GaussianPred bad{Eigen::Vector2d(0, 0), (Eigen::Matrix2d() << 1, 2, 2, 1).finished()};
    try {
        log_pdf(bad, Eigen::Vector2d(0, 0));
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("eigenvalues") != std::string::npos);
    }
    CHECK_THROWS_AS(log_pdf(g, Eigen::Vector3d(0, 0, 0)), DimensionError);
}

TEST_CASE("log_pdf integrates to 1 over a +-6 sigma grid") {
    std::mt19937_64 rng(4);
    for (int rep = 0; rep < 3; ++rep) {
        auto p = random_params(2, rng);
        auto g = gaussian_pred(target2(0, 10, 20, 60, 400, 0.3 + rep), p);
        const double sx = std::sqrt(g.cov(0, 0)), sy = std::sqrt(g.cov(1, 1));
        const int n = 600;
        const double hx = 12 * sx / n, hy = 12 * sy / n;
        double total = 0.0;
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                Eigen::Vector2d s(g.mean(0) - 6 * sx + (i + 0.5) * hx, g.mean(1) - 6 * sy + (j + 0.5) * hy);
                total += std::exp(log_pdf(g, s)) * hx * hy;
            }
        }
        CHECK(std::abs(total - 1.0) < 1e-3);
    }
}

TEST_CASE("bayes_posterior examples") {
    auto p = isotropic(2, 1.0);
    auto one = bayes_posterior({target2(0, 0, 0, 10, 5, 0.0)}, p, Eigen::Vector2d(4, 4));
    CHECK(one.prob[0] == doctest::Approx(1.0));

    auto twin = bayes_posterior({target2(0, 1, 1, 10, 5, 0.0), target2(1, 1, 1, 10, 5, 0.0)}, p,
                                Eigen::Vector2d(0, 3));
    CHECK(twin.prob[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(twin.prob[1] == doctest::Approx(0.5).epsilon(1e-15));

    // Unit isotropic covariance: posterior_i = exp(-d_i^2/2) / sum_j exp(-d_j^2/2).
    std::vector<TargetState> ts = {target2(0, 0, 0, 10, 5, 0.0), target2(1, 1, 0, 10, 5, 1.0),
                                   target2(2, 0, 2, 10, 5, 2.0)};
    const Eigen::Vector2d s(0, 0);
    auto post = bayes_posterior(ts, p, s);
    const double e0 = 1.0, e1 = std::exp(-0.5), e2 = std::exp(-2.0);
    const double z = e0 + e1 + e2;
    CHECK(std::abs(post.prob[0] - e0 / z) < 1e-15);
    CHECK(std::abs(post.prob[1] - e1 / z) < 1e-15);
    CHECK(std::abs(post.prob[2] - e2 / z) < 1e-15);
    CHECK_FALSE(post.underflow);

    CHECK_THROWS_AS(bayes_posterior({}, p, s), InputError);
}

TEST_CASE("bayes_posterior: far endpoint flags underflow and stays normalized") {
    auto p = isotropic(2, 1.0);
    std::vector<TargetState> ts = {target2(0, 0, 0, 10, 5, 0.0), target2(1, 3, 0, 10, 5, 0.0)};
    auto post = bayes_posterior(ts, p, Eigen::Vector2d(1e4, 0));
    CHECK(post.underflow);
    CHECK(post.prob[0] + post.prob[1] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(post.prob[1] > post.prob[0]);
}

TEST_CASE("bayes_posterior property: distribution, rotation invariance") {
    std::mt19937_64 rng(33);
    std::normal_distribution<double> n;
    std::uniform_real_distribution<double> u(0.2, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
        const int dim = 2 + trial % 2;
        const double scale = dim == 2 ? 100.0 : 0.1;
        auto p = random_params(dim, rng);
        if (dim == 3) {
            p.mu *= 0.01;
            p.sigma.col(0) *= 0.005;
        }
        std::vector<TargetState> ts;
        for (int i = 0; i < 5; ++i) {
            TargetState t;
            t.id = i;
            t.center = Eigen::VectorXd::NullaryExpr(dim, [&] { return scale * n(rng); });
            t.size = scale * 0.5 * u(rng);
            t.speed = scale * 3 * u(rng);
            t.direction = Eigen::VectorXd::NullaryExpr(dim, [&] { return n(rng); }).normalized();
            ts.push_back(t);
        }
        const Vec s = ts[0].center + Eigen::VectorXd::NullaryExpr(dim, [&] { return 0.2 * scale * n(rng); });
        auto post = bayes_posterior(ts, p, s);
        double sum = 0.0;
        for (double v : post.prob) {
            CHECK(v >= 0.0);
            sum += v;
        }
        CHECK(std::abs(sum - 1.0) < 1e-9);

        Mat rot;
        Eigen::Vector3d depth = default_depth_axis();
        if (dim == 2) {
            const double a = 6.28 * u(rng);
            rot = Eigen::Rotation2Dd(a).toRotationMatrix();
        } else {
            Eigen::Matrix3d r3 = random_rotation(rng);
            depth = r3 * depth;
            rot = r3;
        }
        auto rts = ts;
        for (auto& t : rts) {
            t.center = rot * t.center;
            t.direction = rot * t.direction;
        }
        auto rpost = bayes_posterior(rts, p, rot * s, depth);
        for (std::size_t i = 0; i < ts.size(); ++i) CHECK(std::abs(rpost.prob[i] - post.prob[i]) < 1e-9);
    }
}
