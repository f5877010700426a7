#pragma once

// Step-size families gamma(s), sigmoid gates u, and the expected gate
// increment at the root E0 = E[u(-xi_1^T xi_2)].

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <string_view>

#include "adaptix/error.hpp"
#include "adaptix/noise.hpp"
#include "adaptix/validation.hpp"

namespace adaptix {

// ---------------------------------------------------------------------------
// Step schedules
// ---------------------------------------------------------------------------

enum class ScheduleFamily { reciprocal, power, constant };

inline std::string_view to_string(ScheduleFamily f) {
    switch (f) {
        case ScheduleFamily::reciprocal: return "reciprocal";
        case ScheduleFamily::power: return "power";
        case ScheduleFamily::constant: return "constant";
    }
    return "?";
}

/// gamma(s) as a function of the step counter.
///
///   reciprocal: 1 / max(s, s_floor)
///   power:      gamma0 / (1 + s)^p
///   constant:   gamma0
///
/// Every family is non-increasing with gamma(0) finite.
class StepSchedule {
public:
    static StepSchedule reciprocal(double s_floor = 1.0) {
        if (!(s_floor > 0.0) || !std::isfinite(s_floor))
            throw AssumptionError("B2.1", "reciprocal schedule needs s_floor > 0 so that gamma(0) is finite");
        StepSchedule s(ScheduleFamily::reciprocal);
        s.s_floor_ = s_floor;
        return s;
    }

    static StepSchedule power(double gamma0, double p) {
        check_gamma0(gamma0);
        if (!(p > 0.0) || !std::isfinite(p))
            throw AssumptionError("B2.1", "power schedule needs exponent p > 0");
        StepSchedule s(ScheduleFamily::power);
        s.gamma0_ = gamma0;
        s.p_ = p;
        return s;
    }

    static StepSchedule constant(double gamma0) {
        check_gamma0(gamma0);
        StepSchedule s(ScheduleFamily::constant);
        s.gamma0_ = gamma0;
        return s;
    }

    ScheduleFamily family() const noexcept { return family_; }
    double gamma0() const noexcept { return gamma0_; }
    double p() const noexcept { return p_; }
    double s_floor() const noexcept { return s_floor_; }

    double operator()(double s) const noexcept {
        switch (family_) {
            case ScheduleFamily::reciprocal: return 1.0 / std::max(s, s_floor_);
            case ScheduleFamily::power: return gamma0_ / std::pow(1.0 + std::max(s, 0.0), p_);
            case ScheduleFamily::constant: return gamma0_;
        }
        return 0.0;
    }

    /// Largest step, gamma(0).
    double max_step() const noexcept { return (*this)(0.0); }

    friend bool operator==(const StepSchedule&, const StepSchedule&) = default;

private:
    explicit StepSchedule(ScheduleFamily f) : family_(f) {}

    static void check_gamma0(double gamma0) {
        if (!(gamma0 > 0.0) || !std::isfinite(gamma0))
            throw AssumptionError("B2.1", "gamma0 must be finite and > 0");
    }

    ScheduleFamily family_;
    double gamma0_ = 1.0;
    double p_ = 1.0;
    double s_floor_ = 1.0;
};

inline double gamma_eval(const StepSchedule& schedule, double s) { return schedule(s); }

/// Analytic B2 verdicts for the schedule family. Never throws.
inline ValidationReport validate_schedule(const StepSchedule& schedule) {
    ValidationReport r;
    switch (schedule.family()) {
        case ScheduleFamily::reciprocal: {
            std::ostringstream d;
            d << "1/max(s, " << schedule.s_floor() << ") is non-increasing with gamma(0) = " << schedule.max_step();
            r.add("B2.1", Verdict::pass, d.str());
            r.add("B2.2", Verdict::pass, "integral of 1/s diverges at infinity");
            r.add("B2.3", Verdict::pass, "integral of 1/s^2 converges at infinity");
            break;
        }
        case ScheduleFamily::power: {
            const double p = schedule.p();
            std::ostringstream d1, d2, d3;
            d1 << "gamma0/(1+s)^p with p = " << p << " > 0 is decreasing";
            r.add("B2.1", Verdict::pass, d1.str());
            d2 << "integral of (1+s)^-p diverges iff p <= 1; p = " << p;
            r.add("B2.2", p <= 1.0 ? Verdict::pass : Verdict::fail, d2.str());
            d3 << "integral of (1+s)^-2p converges iff 2p > 1; 2p = " << 2.0 * p;
            r.add("B2.3", 2.0 * p > 1.0 ? Verdict::pass : Verdict::fail, d3.str());
            break;
        }
        case ScheduleFamily::constant:
            r.add("B2.1", Verdict::pass, "constant step is non-increasing");
            r.add("B2.2", Verdict::pass, "integral of a positive constant diverges");
            r.add("B2.3", Verdict::fail, "integral of a squared positive constant diverges");
            break;
    }
    return r;
}

// ---------------------------------------------------------------------------
// Sigmoid gates
// ---------------------------------------------------------------------------

enum class SigmoidFamily { constant, kesten, plakhov_almeida, smooth };

inline std::string_view to_string(SigmoidFamily f) {
    switch (f) {
        case SigmoidFamily::constant: return "constant";
        case SigmoidFamily::kesten: return "kesten";
        case SigmoidFamily::plakhov_almeida: return "plakhov_almeida";
        case SigmoidFamily::smooth: return "smooth";
    }
    return "?";
}

/// Value taken at 0 by the step families.
enum class AtZero { left, right, midpoint };

inline std::string_view to_string(AtZero a) {
    switch (a) {
        case AtZero::left: return "left";
        case AtZero::right: return "right";
        case AtZero::midpoint: return "midpoint";
    }
    return "?";
}

/// The gate u applied to -y_t^T y_{t-1}. Monotone non-decreasing and bounded
/// with limits u_minus at -inf and u_plus > 0 at +inf.
///
///   constant:        u = c (Robbins-Monro, u_minus = u_plus = c)
///   kesten:          0 for x < 0, u_plus for x > 0
///   plakhov_almeida: u_minus < 0 for x < 0, u_plus for x > 0
///   smooth:          u_minus + (u_plus - u_minus) * logistic(x / beta)
class SigmoidSpec {
public:
    static SigmoidSpec constant(double c) {
        if (!(c > 0.0) || !std::isfinite(c)) throw AssumptionError("B4.1", "constant gate needs c > 0");
        SigmoidSpec s(SigmoidFamily::constant);
        s.u_minus_ = c;
        s.u_plus_ = c;
        return s;
    }

    static SigmoidSpec kesten(double u_plus = 1.0, AtZero at_zero = AtZero::right) {
        check_u_plus(u_plus);
        SigmoidSpec s(SigmoidFamily::kesten);
        s.u_minus_ = 0.0;
        s.u_plus_ = u_plus;
        s.at_zero_ = at_zero;
        return s;
    }

    static SigmoidSpec plakhov_almeida(double u_minus, double u_plus, AtZero at_zero = AtZero::right) {
        check_u_plus(u_plus);
        if (!(u_minus < 0.0) || !std::isfinite(u_minus))
            throw AssumptionError("B4.1", "plakhov_almeida gate needs u_minus < 0");
        SigmoidSpec s(SigmoidFamily::plakhov_almeida);
        s.u_minus_ = u_minus;
        s.u_plus_ = u_plus;
        s.at_zero_ = at_zero;
        return s;
    }

    static SigmoidSpec smooth(double u_minus, double u_plus, double beta) {
        check_u_plus(u_plus);
        if (!std::isfinite(u_minus) || !(u_minus < u_plus))
            throw AssumptionError("B4.1", "smooth gate needs finite u_minus < u_plus");
        if (!(beta > 0.0) || !std::isfinite(beta))
            throw AssumptionError("B4.1", "smooth gate needs beta > 0");
        SigmoidSpec s(SigmoidFamily::smooth);
        s.u_minus_ = u_minus;
        s.u_plus_ = u_plus;
        s.beta_ = beta;
        return s;
    }

    SigmoidFamily family() const noexcept { return family_; }
    double u_minus() const noexcept { return u_minus_; }
    double u_plus() const noexcept { return u_plus_; }
    double beta() const noexcept { return beta_; }
    AtZero at_zero() const noexcept { return at_zero_; }
    bool continuous() const noexcept {
        return family_ == SigmoidFamily::constant || family_ == SigmoidFamily::smooth;
    }

    double operator()(double x) const noexcept {
        switch (family_) {
            case SigmoidFamily::constant: return u_plus_;
            case SigmoidFamily::kesten:
            case SigmoidFamily::plakhov_almeida:
                if (x > 0.0) return u_plus_;
                if (x < 0.0) return u_minus_;
                switch (at_zero_) {
                    case AtZero::left: return u_minus_;
                    case AtZero::right: return u_plus_;
                    case AtZero::midpoint: return 0.5 * (u_minus_ + u_plus_);
                }
                return u_plus_;
            case SigmoidFamily::smooth: {
                // Logistic written to stay finite for large |x|.
                const double z = x / beta_;
                const double sig = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
                return u_minus_ + (u_plus_ - u_minus_) * sig;
            }
        }
        return 0.0;
    }

    friend bool operator==(const SigmoidSpec&, const SigmoidSpec&) = default;

private:
    explicit SigmoidSpec(SigmoidFamily f) : family_(f) {}

    static void check_u_plus(double u_plus) {
        if (!(u_plus > 0.0) || !std::isfinite(u_plus))
            throw AssumptionError("B4.1", "u_plus must be finite and > 0");
    }

    SigmoidFamily family_;
    double u_minus_ = 0.0;
    double u_plus_ = 1.0;
    double beta_ = 1.0;
    AtZero at_zero_ = AtZero::right;
};

inline double sigmoid_eval(const SigmoidSpec& sigmoid, double x) { return sigmoid(x); }

/// B4.1 shape verdict. Constructors already reject bad shapes, so this only
/// restates the parameters that make the gate admissible.
inline ValidationItem validate_sigmoid(const SigmoidSpec& u) {
    std::ostringstream d;
    d << to_string(u.family()) << " gate: monotone non-decreasing, bounded, u_minus = " << u.u_minus()
      << ", u_plus = " << u.u_plus();
    const bool ok = u.u_plus() > 0.0 && u.u_minus() <= u.u_plus();
    return {"B4.1", ok ? Verdict::pass : Verdict::fail, d.str(), std::nullopt};
}

// ---------------------------------------------------------------------------
// E0
// ---------------------------------------------------------------------------

enum class E0Method { exact, monte_carlo, declared };

inline std::string_view to_string(E0Method m) {
    switch (m) {
        case E0Method::exact: return "exact";
        case E0Method::monte_carlo: return "monte_carlo";
        case E0Method::declared: return "declared";
    }
    return "?";
}

struct E0Estimate {
    double value = 0.0;
    double standard_error = 0.0;
    E0Method method = E0Method::exact;
    std::int64_t n_samples = 0;
};

/// Closed-form E0. Available for the constant gate (any noise) and for the
/// Kesten gate under continuous sign-symmetric noise, where xi_1^T xi_2 is
/// negative with probability 1/2.
inline E0Estimate e0_exact(const SigmoidSpec& u, const NoiseModel& noise) {
    switch (u.family()) {
        case SigmoidFamily::constant: return {u.u_plus(), 0.0, E0Method::exact, 0};
        case SigmoidFamily::kesten:
            if (noise.continuous() && noise.sign_symmetric()) return {0.5 * u.u_plus(), 0.0, E0Method::exact, 0};
            throw NoClosedFormError("kesten gate has a closed-form E0 only for continuous sign-symmetric noise; use "
                                    "e0_monte_carlo for " + std::string(to_string(noise.kind())) + " noise");
        default:
            throw NoClosedFormError("no closed-form E0 for the " + std::string(to_string(u.family())) +
                                    " gate; use e0_monte_carlo");
    }
}

/// Sample mean of u(-xi_1^T xi_2) over n independent pairs, with
/// stderr = sample sd / sqrt(n).
inline E0Estimate e0_monte_carlo(const SigmoidSpec& u, const NoiseModel& noise, std::int64_t n,
                                 std::uint64_t seed) {
    if (n < 2) throw ConfigError("e0_monte_carlo needs n >= 2");
    CounterRng rng(seed, 0, StreamPurpose::e0_estimate);
    Vector a(noise.dim()), b(noise.dim()), scratch(noise.dim());
    // Shifted sums: exact for constant samples, stable otherwise.
    double shift = 0.0, sum = 0.0, sum_sq = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        noise.sample(rng, a, scratch);
        noise.sample(rng, b, scratch);
        const double v = u(-a.dot(b));
        if (i == 0) shift = v;
        const double d = v - shift;
        sum += d;
        sum_sq += d * d;
    }
    const double nn = static_cast<double>(n);
    const double mean_d = sum / nn;
    const double var = std::max(0.0, (sum_sq - nn * mean_d * mean_d) / (nn - 1.0));
    E0Estimate est{shift + mean_d, std::sqrt(var / nn), E0Method::monte_carlo, n};
    if (est.value <= 0.0 && std::abs(est.value) > 3.0 * est.standard_error) {
        std::ostringstream msg;
        msg << "estimated E0 = " << est.value << " (stderr " << est.standard_error
            << ") is not positive; the gate never drives the step counter up";
        throw AssumptionError("B4.2", msg.str());
    }
    return est;
}

/// e0_exact when a closed form exists, otherwise e0_monte_carlo.
inline E0Estimate e0_auto(const SigmoidSpec& u, const NoiseModel& noise, std::int64_t n, std::uint64_t seed) {
    try {
        return e0_exact(u, noise);
    } catch (const NoClosedFormError&) {
        return e0_monte_carlo(u, noise, n, seed);
    }
}

}  // namespace adaptix
