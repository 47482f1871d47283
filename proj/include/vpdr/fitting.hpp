#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>

#include <Eigen/Dense>

namespace vpdr {

struct FitOptions {
    int max_iterations = 200;
    double cost_tolerance = 1e-12;  // relative cost change
    double step_tolerance = 1e-12;  // step norm relative to parameter norm
    double initial_damping = 1e-3;
};

struct FitResult {
    Eigen::VectorXd params;
    Eigen::MatrixXd covariance;  // residual-variance scaled (J^T J)^-1
    double cost = 0.0;           // sum of squared residuals
    int iterations = 0;
    bool converged = false;
    bool rank_deficient = false;
    std::string message;
};

// Damped least squares. `f` maps parameters to (residual vector, Jacobian of
// the residuals); the step solves (J^T J + damping * diag(J^T J)) dp = -J^T r.
template <class F>
FitResult levenberg_marquardt(F&& f, Eigen::VectorXd p, const FitOptions& opt = {}) {
    FitResult out;
    auto [r, jac] = f(p);
    const Eigen::Index m = r.size(), n = p.size();
    if (m < n) throw std::invalid_argument("fewer residuals than parameters");

    double cost = r.squaredNorm();
    double damping = opt.initial_damping;

    for (out.iterations = 0; out.iterations < opt.max_iterations; ++out.iterations) {
        const Eigen::MatrixXd jtj = jac.transpose() * jac;
        const Eigen::VectorXd g = jac.transpose() * r;
        Eigen::VectorXd scale = jtj.diagonal();
        for (Eigen::Index i = 0; i < n; ++i) scale(i) = std::max(scale(i), 1e-300);

        bool accepted = false;
        for (int tries = 0; tries < 32 && !accepted; ++tries) {
            Eigen::MatrixXd a = jtj;
            a.diagonal() += damping * scale;
            const Eigen::VectorXd dp = a.ldlt().solve(-g);
            const Eigen::VectorXd cand = p + dp;
            auto [rc, jc] = f(cand);
            const double cand_cost = rc.squaredNorm();
            if (cand_cost <= cost) {
                const double drop = cost - cand_cost;
                const double step = dp.norm();
                p = cand;
                r = std::move(rc);
                jac = std::move(jc);
                cost = cand_cost;
                damping = std::max(damping / 3.0, 1e-14);
                accepted = true;
                if (drop <= opt.cost_tolerance * std::max(cost, 1e-300) ||
                    step <= opt.step_tolerance * (p.norm() + opt.step_tolerance)) {
                    out.converged = true;
                }
            } else {
                damping *= 10.0;
            }
        }
        if (!accepted) {  // no downhill step at any damping: at a minimum
            out.converged = true;
        }
        if (out.converged) break;
    }

    out.params = p;
    out.cost = cost;
    if (!out.converged) out.message = "no convergence within the iteration limit";

    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(jac);
    out.rank_deficient = cod.rank() < n;
    const double dof = static_cast<double>(m - n);
    const double variance = dof > 0 ? cost / dof : 0.0;
    out.covariance = cod.pseudoInverse() * cod.pseudoInverse().transpose() * variance;
    if (out.rank_deficient && out.message.empty())
        out.message = "rank-deficient Jacobian at the solution";
    return out;
}

} // namespace vpdr
