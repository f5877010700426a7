#pragma once

// Sampled spot checks of the convergence assumptions B1-B4 for a problem,
// schedule and gate. Results are evidence, not certificates.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "adaptix/asymptotics.hpp"
#include "adaptix/problems.hpp"
#include "adaptix/rng.hpp"
#include "adaptix/schedules.hpp"
#include "adaptix/validation.hpp"

namespace adaptix {

struct ValidationGrid {
    /// Sample radii |x - x*| are log-uniform in [r_min, r_max].
    double r_min = 1e-3;
    double r_max = 100.0;
    int n_samples = 2000;
    /// Draws used for the empirical noise-mean check.
    std::int64_t noise_samples = 100000;
    /// Pairs for the Monte Carlo E0 estimate when no closed form exists.
    std::int64_t e0_samples = 1000000;
    /// Iteration cap for each deterministic descent run (B3.1d).
    std::int64_t descent_steps = 50000;
    int descent_starts = 16;
    std::vector<double> descent_step_fractions = {0.01, 0.1, 0.5, 0.9, 0.99};

    friend bool operator==(const ValidationGrid&, const ValidationGrid&) = default;
};

namespace detail {

inline Vector random_direction(CounterRng& rng, Eigen::Index n) {
    Vector d(n);
    double norm = 0.0;
    do {
        for (Eigen::Index i = 0; i < n; ++i) d[i] = rng.normal();
        norm = d.norm();
    } while (norm == 0.0);
    return d / norm;
}

inline double log_uniform(CounterRng& rng, double lo, double hi) {
    if (hi <= lo) return lo;
    return lo * std::pow(hi / lo, rng.uniform01());
}

inline std::string fmt(double v) {
    std::ostringstream o;
    o.precision(6);
    o << v;
    return o.str();
}

}  // namespace detail

inline ValidationReport validate_problem(const ProblemSpec& problem, const StepSchedule& schedule,
                                         const SigmoidSpec& gate, const ValidationGrid& grid, std::uint64_t seed) {
    ValidationReport report;
    const Eigen::Index n = problem.dim();
    const NoiseModel& noise = problem.noise();
    const Vector& root = problem.root();
    CounterRng rng(seed, 0, StreamPurpose::validation);

    // B1.1: mean zero. The samplers are symmetric by construction; check the
    // empirical mean against 4 standard errors per component.
    {
        Vector sum = Vector::Zero(n), xi(n), scratch(n);
        for (std::int64_t i = 0; i < grid.noise_samples; ++i) {
            noise.sample(rng, xi, scratch);
            sum += xi;
        }
        const Vector mean = sum / static_cast<double>(grid.noise_samples);
        double worst = 0.0;
        bool ok = true;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double se = std::sqrt(noise.cov()(i, i) / static_cast<double>(grid.noise_samples));
            if (se == 0.0) {
                ok = ok && mean[i] == 0.0;
            } else {
                worst = std::max(worst, std::abs(mean[i]) / se);
                ok = ok && std::abs(mean[i]) <= 4.0 * se;
            }
        }
        report.add("B1.1", ok ? Verdict::pass : Verdict::fail,
                   std::string(to_string(noise.kind())) + " noise, zero mean by construction; worst |mean|/stderr = " +
                       detail::fmt(worst) + " over " + std::to_string(grid.noise_samples) + " draws",
                   ok ? std::nullopt : std::optional<Vector>(mean));
    }

    // B1.2: positive mass on every open ball near the origin.
    if (noise.conforms_to_support_condition()) {
        report.add("B1.2", Verdict::pass, std::string(to_string(noise.kind())) + " noise has full-dimensional support");
    } else if (noise.kind() == NoiseKind::scaled_rademacher) {
        report.add("B1.2", Verdict::fail, "scaled_rademacher noise is discrete; open balls between atoms have mass 0");
    } else {
        report.add("B1.2", Verdict::fail, "noise covariance is singular; support is lower-dimensional");
    }

    // B2.x
    report.append(validate_schedule(schedule));

    const double gamma_max = schedule.max_step();
    const auto& P = problem.lyap_matrix();
    const bool have_lyap = P.has_value() && is_positive_definite(*P);

    // B3.1a
    if (!P) {
        report.add("B3.1a", Verdict::not_checked, "no lyap_matrix supplied");
    } else if (!have_lyap) {
        report.add("B3.1a", Verdict::fail, "lyap_matrix is not symmetric positive definite, V is not a valid Lyapunov function");
    } else {
        report.add("B3.1a", Verdict::pass, "V(x) = (x - x*)^T P (x - x*) vanishes at x* and is positive elsewhere");
    }

    // B3.1b: Hessian 2P, M its largest eigenvalue.
    double M = std::numeric_limits<double>::quiet_NaN();
    if (!have_lyap) {
        report.add("B3.1b", Verdict::not_checked, "requires a valid lyap_matrix");
    } else {
        M = Eigen::SelfAdjointEigenSolver<Matrix>(2.0 * *P).eigenvalues().maxCoeff();
        report.add("B3.1b", Verdict::pass, "Hessian of V is 2P with largest eigenvalue M = " + detail::fmt(M));
    }

    // B3.1c: phi(x)^T grad V(x) > 0 on sampled x != x*.
    if (!have_lyap) {
        report.add("B3.1c", Verdict::not_checked, "requires a valid lyap_matrix");
    } else {
        double worst = std::numeric_limits<double>::infinity();
        std::optional<Vector> witness;
        Vector phi(n);
        for (int k = 0; k < grid.n_samples; ++k) {
            const Vector x = root + detail::log_uniform(rng, grid.r_min, grid.r_max) * detail::random_direction(rng, n);
            problem.eval(x, phi);
            const double g = phi.dot(problem.lyapunov_gradient(x));
            // Normalised so small radii are comparable with large ones.
            const double scaled = g / (x - root).squaredNorm();
            if (scaled < worst) worst = scaled;
            if (!(g > 0.0) && !witness) witness = x;
        }
        report.add("B3.1c", witness ? Verdict::fail : Verdict::pass,
                   "min phi^T grad V / |x - x*|^2 = " + detail::fmt(worst) + " over " + std::to_string(grid.n_samples) +
                       " samples",
                   witness);
    }

    // B3.1d: z_t = z_{t-1} - g phi(z_{t-1}) converges with V(z_t) non-increasing
    // for g < gamma(0), checked on a grid of step sizes and start points.
    if (!have_lyap) {
        report.add("B3.1d", Verdict::not_checked, "requires a valid lyap_matrix");
    } else {
        std::optional<Vector> witness;
        std::string why;
        Vector phi(n), z(n);
        for (double frac : grid.descent_step_fractions) {
            if (witness) break;
            const double g = frac * gamma_max;
            for (int k = 0; k < grid.descent_starts && !witness; ++k) {
                const double r0 = grid.descent_starts == 1
                                      ? grid.r_max
                                      : grid.r_min * std::pow(grid.r_max / grid.r_min,
                                                              static_cast<double>(k) / (grid.descent_starts - 1));
                const Vector z0 = root + r0 * detail::random_direction(rng, n);
                z = z0;
                double v_prev = problem.lyapunov(z);
                const double target = 1e-6 * std::max(1.0, r0);
                bool converged = false;
                for (std::int64_t t = 0; t < grid.descent_steps; ++t) {
                    problem.eval(z, phi);
                    z -= g * phi;
                    const double v = problem.lyapunov(z);
                    if (!std::isfinite(v) || v > v_prev * (1.0 + 1e-12) + 1e-300) {
                        witness = z0;
                        why = "V(z_t) increased at t = " + std::to_string(t + 1) + " with step " + detail::fmt(g);
                        break;
                    }
                    v_prev = v;
                    if ((z - root).norm() <= target) {
                        converged = true;
                        break;
                    }
                }
                if (!witness && !converged) {
                    witness = z0;
                    why = "no convergence within " + std::to_string(grid.descent_steps) + " steps with step " +
                          detail::fmt(g);
                }
            }
        }
        report.add("B3.1d", witness ? Verdict::fail : Verdict::pass,
                   witness ? why
                           : "monotone descent to x* for " + std::to_string(grid.descent_step_fractions.size()) +
                                 " step sizes below gamma(0) = " + detail::fmt(gamma_max) + " and " +
                                 std::to_string(grid.descent_starts) + " start points",
                   witness);
    }

    // B3.2: phi^T grad V >= gamma(0)/2 (M |phi|^2 + M tr S) + beta0 for |x - x*| >= R.
    // Applied only on |x - x*| >= R, where phi is bounded away from zero.
    if (!have_lyap) {
        report.add("B3.2", Verdict::not_checked, "requires a valid lyap_matrix");
    } else if (!problem.far_field()) {
        report.add("B3.2", Verdict::not_checked, "no (R, beta0) configured for this problem");
    } else {
        const auto [R, beta0] = *problem.far_field();
        const double hi = std::max(grid.r_max, 10.0 * R);
        const double trS = noise.cov().trace();
        double min_margin = std::numeric_limits<double>::infinity();
        Vector worst_x, phi(n);
        for (int k = 0; k < grid.n_samples; ++k) {
            // A quarter of the samples sit on the boundary sphere |x - x*| = R.
            const double r = (k % 4 == 0) ? R : detail::log_uniform(rng, R, hi);
            const Vector x = root + r * detail::random_direction(rng, n);
            problem.eval(x, phi);
            const double lhs = phi.dot(problem.lyapunov_gradient(x));
            const double rhs = 0.5 * gamma_max * (M * phi.squaredNorm() + M * trS) + beta0;
            const double margin = lhs - rhs;
            if (margin < min_margin) {
                min_margin = margin;
                worst_x = x;
            }
        }
        const bool ok = min_margin >= 0.0;
        report.add("B3.2", ok ? Verdict::pass : Verdict::fail,
                   "R = " + detail::fmt(R) + ", beta0 = " + detail::fmt(beta0) + ", gamma(0) = " + detail::fmt(gamma_max) +
                       ": minimal margin " + detail::fmt(min_margin) + " on |x - x*| in [R, " + detail::fmt(hi) + "]",
                   ok ? std::nullopt : std::optional<Vector>(worst_x));
    }

    // E0, shared by B3.3 and B4.2.
    std::optional<E0Estimate> e0;
    std::string e0_failure;
    try {
        e0 = e0_auto(gate, noise, grid.e0_samples, seed);
    } catch (const Error& e) {
        e0_failure = e.what();
    }

    // B3.3
    if (!e0 || !(e0->value > 0.0)) {
        report.add("B3.3", Verdict::not_checked, "requires E0 > 0");
    } else {
        const StabilityResult st = stability_matrix(problem.jacobian_at_root(), e0->value);
        report.add("B3.3", st.stable ? Verdict::pass : Verdict::fail,
                   "largest real part of eig(I/2 - phi'(x*)/E0) = " + detail::fmt(st.eigen_real_parts.maxCoeff()) +
                       " with E0 = " + detail::fmt(e0->value));
    }

    // B3.4: linearisation error ratio shrinks with the radius.
    {
        const Matrix& J = problem.jacobian_at_root();
        std::vector<double> ratios;
        Vector phi(n);
        for (double r : {1e-1, 1e-2, 1e-3, 1e-4, 1e-5}) {
            double worst = 0.0;
            for (int k = 0; k < 16; ++k) {
                const Vector d = r * detail::random_direction(rng, n);
                problem.eval(root + d, phi);
                worst = std::max(worst, (phi - J * d).norm() / d.norm());
            }
            ratios.push_back(worst);
        }
        const double scale = std::max(1.0, J.cwiseAbs().maxCoeff());
        bool shrinking = true;
        for (std::size_t i = 1; i < ratios.size(); ++i)
            shrinking = shrinking && ratios[i] <= ratios[i - 1] + 1e-9 * scale;
        const bool ok = shrinking && ratios.back() <= 1e-3 * scale;
        report.add("B3.4", ok ? Verdict::pass : Verdict::fail,
                   "|phi(x) - phi'(x*)(x - x*)| / |x - x*| = " + detail::fmt(ratios.front()) + " at r = 0.1, " +
                       detail::fmt(ratios.back()) + " at r = 1e-5");
    }

    // B4.1
    report.items.push_back(validate_sigmoid(gate));

    // B4.2
    if (e0 && e0->value > 0.0) {
        report.add("B4.2", Verdict::pass,
                   "E0 = " + detail::fmt(e0->value) + " (" + std::string(to_string(e0->method)) +
                       (e0->method == E0Method::monte_carlo ? ", stderr " + detail::fmt(e0->standard_error) : "") + ")");
    } else {
        report.add("B4.2", Verdict::fail, e0 ? "E0 = " + detail::fmt(e0->value) + " is not positive" : e0_failure);
    }
    return report;
}

}  // namespace adaptix
