#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <utility>

#include <Eigen/Dense>

#include "vpdr/fitting.hpp"

using namespace vpdr;

namespace {

// y = a * exp(-b * t) sampled on a fixed grid.
std::pair<Eigen::VectorXd, Eigen::MatrixXd> exp_model(const Eigen::VectorXd& p,
                                                      const Eigen::VectorXd& t,
                                                      const Eigen::VectorXd& y) {
    Eigen::VectorXd r(t.size());
    Eigen::MatrixXd jac(t.size(), 2);
    for (Eigen::Index k = 0; k < t.size(); ++k) {
        const double e = std::exp(-p(1) * t(k));
        r(k) = p(0) * e - y(k);
        jac(k, 0) = e;
        jac(k, 1) = -p(0) * t(k) * e;
    }
    return {r, jac};
}

} // namespace

TEST_CASE("linear least squares converges to the exact solution") {
    Eigen::MatrixXd a(6, 2);
    a << 1, 0.5, 1, 1.0, 1, 1.5, 1, 2.0, 1, 2.5, 1, 3.0;
    const Eigen::Vector2d truth(0.7, -1.3);
    const Eigen::VectorXd b = a * truth;
    auto f = [&](const Eigen::VectorXd& p) {
        return std::pair<Eigen::VectorXd, Eigen::MatrixXd>(a * p - b, a);
    };
    const FitResult res = levenberg_marquardt(f, Eigen::Vector2d(0.0, 0.0));
    REQUIRE(res.converged);
    REQUIRE(!res.rank_deficient);
    REQUIRE((res.params - truth).norm() < 1e-10);
    REQUIRE(res.cost < 1e-20);
}

TEST_CASE("nonlinear decay parameters are recovered") {
    Eigen::VectorXd t(40);
    for (int k = 0; k < 40; ++k) t(k) = 0.1 * k;
    const Eigen::Vector2d truth(2.3, 1.7);
    Eigen::VectorXd y(40);
    for (int k = 0; k < 40; ++k) y(k) = truth(0) * std::exp(-truth(1) * t(k));

    auto f = [&](const Eigen::VectorXd& p) { return exp_model(p, t, y); };
    const FitResult res = levenberg_marquardt(f, Eigen::Vector2d(1.0, 1.0));
    REQUIRE(res.converged);
    REQUIRE((res.params - truth).cwiseAbs().maxCoeff() < 1e-9);
    // Noiseless data: residuals at machine scale.
    REQUIRE(res.cost < 1e-18);
}

TEST_CASE("iteration limit is honored and reported") {
    Eigen::VectorXd t(40);
    for (int k = 0; k < 40; ++k) t(k) = 0.1 * k;
    Eigen::VectorXd y(40);
    for (int k = 0; k < 40; ++k) y(k) = 2.3 * std::exp(-1.7 * t(k));
    auto f = [&](const Eigen::VectorXd& p) { return exp_model(p, t, y); };

    FitOptions opt;
    opt.max_iterations = 1;
    const FitResult res = levenberg_marquardt(f, Eigen::Vector2d(0.1, 12.0), opt);
    REQUIRE(res.iterations == 1);
    if (!res.converged) REQUIRE(!res.message.empty());
}

TEST_CASE("rank-deficient problems are flagged") {
    // Both parameters multiply the same regressor.
    Eigen::VectorXd t(10);
    for (int k = 0; k < 10; ++k) t(k) = 1.0 + k;
    const Eigen::VectorXd y = 3.0 * t;
    auto f = [&](const Eigen::VectorXd& p) {
        Eigen::MatrixXd jac(10, 2);
        jac.col(0) = t;
        jac.col(1) = t;
        return std::pair<Eigen::VectorXd, Eigen::MatrixXd>((p(0) + p(1)) * t - y, jac);
    };
    const FitResult res = levenberg_marquardt(f, Eigen::Vector2d(1.0, 1.0));
    REQUIRE(res.rank_deficient);
    REQUIRE(res.params.sum() == Catch::Approx(3.0).margin(1e-8));
}

TEST_CASE("covariance equals the variance-scaled normal-equation inverse") {
    Eigen::MatrixXd a(8, 2);
    for (int k = 0; k < 8; ++k) {
        a(k, 0) = 1.0;
        a(k, 1) = k;
    }
    Eigen::VectorXd b = a * Eigen::Vector2d(1.0, 0.5);
    b(3) += 0.1;  // consistent nonzero residual
    auto f = [&](const Eigen::VectorXd& p) {
        return std::pair<Eigen::VectorXd, Eigen::MatrixXd>(a * p - b, a);
    };
    const FitResult res = levenberg_marquardt(f, Eigen::Vector2d::Zero());
    const Eigen::MatrixXd expected =
        (a.transpose() * a).inverse() * (res.cost / (8.0 - 2.0));
    REQUIRE((res.covariance - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("underdetermined systems are rejected") {
    auto f = [](const Eigen::VectorXd& p) {
        Eigen::VectorXd r(1);
        r(0) = p(0) + p(1);
        Eigen::MatrixXd jac(1, 2);
        jac << 1.0, 1.0;
        return std::pair<Eigen::VectorXd, Eigen::MatrixXd>(r, jac);
    };
    REQUIRE_THROWS_AS(levenberg_marquardt(f, Eigen::Vector2d::Zero()), std::invalid_argument);
}
