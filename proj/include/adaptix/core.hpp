#pragma once

// The accelerated Kesten recursion
//
//   y_t = phi(x_{t-1}) + xi_t
//   x_t = x_{t-1} - gamma(s_{t-1}) y_t               t = 1, 2, ...
//   s_t = (s_{t-1} + u(-y_t^T y_{t-1}))^+            t = 2, 3, ...
//
// with s_0 and s_1 given. x_1 steps with gamma(s_0), x_2 with gamma(s_1).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "adaptix/error.hpp"
#include "adaptix/noise.hpp"
#include "adaptix/problems.hpp"
#include "adaptix/schedules.hpp"

namespace adaptix {

struct InitialConditions {
    Vector x0;
    double s0 = 1.0;
    double s1 = 1.0;

    void check() const {
        if (!(s0 >= 0.0) || !(s1 >= 0.0) || !std::isfinite(s0) || !std::isfinite(s1))
            throw ConfigError("initial step counters s0 and s1 must be finite and >= 0");
        if (!x0.allFinite()) throw ConfigError("x0 must be finite");
    }
};

struct AlgoState {
    std::int64_t t = 0;
    Vector x;
    /// Step counter s_t; the next move uses gamma(s).
    double s = 0.0;
    /// y_t of the last step; empty before t = 1.
    Vector y_prev;
    /// s_1, held until the first step hands it over.
    double s_staged = 0.0;

    bool has_prev() const noexcept { return y_prev.size() > 0; }

    static AlgoState initial(const InitialConditions& init) {
        init.check();
        AlgoState st;
        st.t = 0;
        st.x = init.x0;
        st.s = init.s0;
        st.s_staged = init.s1;
        return st;
    }
};

/// Thrown when |x_t| leaves the configured bound; carries the last finite state.
class DivergedError : public NumericError {
public:
    DivergedError(AlgoState last, const std::string& what) : NumericError(what), last_(std::move(last)) {}
    const AlgoState& last_state() const noexcept { return last_; }

private:
    AlgoState last_;
};

/// Advances `state` in place by one measurement. Allocation-free once the
/// vectors are sized.
inline void sa_advance(AlgoState& state, const Vector& y, const StepSchedule& schedule, const SigmoidSpec& gate) {
    if (y.size() != state.x.size())
        throw DimensionError("measurement has dimension " + std::to_string(y.size()) + " but the iterate has " +
                             std::to_string(state.x.size()));
    if (!y.allFinite()) throw NumericError("non-finite measurement at t = " + std::to_string(state.t + 1));
    const double step = schedule(state.s);
    double next_s;
    if (state.has_prev()) {
        next_s = std::max(0.0, state.s + gate(-y.dot(state.y_prev)));
    } else {
        next_s = state.s_staged;
    }
    state.x.noalias() -= step * y;
    state.s = next_s;
    state.y_prev = y;
    ++state.t;
}

/// One step of the recursion: returns the successor of `state` given y_{t+1}.
inline AlgoState sa_step(AlgoState state, const Vector& y, const StepSchedule& schedule, const SigmoidSpec& gate) {
    sa_advance(state, y, schedule, gate);
    return state;
}

struct RecordPolicy {
    /// Record every stride-th state; 0 records only t = 0, checkpoints and the final state.
    std::int64_t stride = 1;
    /// Extra times to record, sorted ascending.
    std::vector<std::int64_t> checkpoints;
};

struct TrajectoryMeta {
    std::string problem;
    std::string sigmoid;
    std::string schedule;
};

struct Trajectory {
    std::vector<AlgoState> states;
    std::int64_t record_stride = 1;
    std::uint64_t seed = 0;
    TrajectoryMeta meta;

    const AlgoState& final_state() const { return states.back(); }

    /// Recorded state at time t, or nullptr.
    const AlgoState* at(std::int64_t t) const {
        auto it = std::lower_bound(states.begin(), states.end(), t,
                                   [](const AlgoState& s, std::int64_t v) { return s.t < v; });
        return it != states.end() && it->t == t ? &*it : nullptr;
    }
};

namespace detail {

class Recorder {
public:
    Recorder(const RecordPolicy& policy, std::int64_t horizon) : policy_(policy), horizon_(horizon) {}

    bool wants(std::int64_t t) {
        while (next_ < policy_.checkpoints.size() && policy_.checkpoints[next_] < t) ++next_;
        if (next_ < policy_.checkpoints.size() && policy_.checkpoints[next_] == t) return true;
        return t == 0 || t == horizon_ || (policy_.stride > 0 && t % policy_.stride == 0);
    }

private:
    const RecordPolicy& policy_;
    std::int64_t horizon_;
    std::size_t next_ = 0;
};

}  // namespace detail

inline constexpr double kDefaultDivergenceBound = 1e12;

/// Runs the recursion for one problem configuration. Immutable; `run` may be
/// called concurrently with distinct noise streams.
class KestenEngine {
public:
    KestenEngine(ProblemSpec problem, StepSchedule schedule, SigmoidSpec gate,
                 double divergence_bound = kDefaultDivergenceBound)
        : problem_(std::move(problem)), schedule_(schedule), gate_(gate), bound_(divergence_bound) {
        if (!(bound_ > 0.0)) throw ConfigError("divergence bound must be > 0");
    }

    const ProblemSpec& problem() const noexcept { return problem_; }
    const StepSchedule& schedule() const noexcept { return schedule_; }
    const SigmoidSpec& gate() const noexcept { return gate_; }
    double divergence_bound() const noexcept { return bound_; }

    /// Runs `horizon` steps drawing one xi_t per step from `noise`, calling
    /// `observe(state)` after the initial state and after every step.
    template <class Observer>
    AlgoState run(const InitialConditions& init, std::int64_t horizon, NoiseStream& noise, Observer&& observe) const {
        if (horizon < 1) throw ConfigError("horizon must be >= 1");
        if (init.x0.size() != problem_.dim())
            throw DimensionError("x0 has dimension " + std::to_string(init.x0.size()) + ", problem has " +
                                 std::to_string(problem_.dim()));
        if (noise.dim() != problem_.dim()) throw DimensionError("noise stream dimension does not match the problem");
        AlgoState state = AlgoState::initial(init);
        observe(static_cast<const AlgoState&>(state));
        Vector phi(problem_.dim()), xi(problem_.dim());
        state.y_prev.resize(0);
        for (std::int64_t t = 1; t <= horizon; ++t) {
            problem_.eval(state.x, phi);
            noise.next(xi);
            phi += xi;
            if (!phi.allFinite()) throw DivergedError(state, "measurement overflow at t = " + std::to_string(t));
            sa_advance(state, phi, schedule_, gate_);
            const double norm = state.x.norm();
            if (!(norm <= bound_)) {
                std::string what = "iterate left the divergence bound at t = " + std::to_string(t);
                if (state.x.allFinite()) throw DivergedError(std::move(state), what);
                throw DivergedError(AlgoState{}, what);
            }
            observe(static_cast<const AlgoState&>(state));
        }
        return state;
    }

    Trajectory run_trajectory(const InitialConditions& init, std::int64_t horizon, NoiseStream noise,
                              const RecordPolicy& policy, std::uint64_t seed = 0) const {
        if (policy.stride < 0) throw ConfigError("record_stride must be >= 0");
        Trajectory traj;
        traj.record_stride = policy.stride;
        traj.seed = seed;
        traj.meta = {problem_.name(), std::string(to_string(gate_.family())), std::string(to_string(schedule_.family()))};
        detail::Recorder rec(policy, horizon);
        run(init, horizon, noise, [&](const AlgoState& st) {
            if (rec.wants(st.t)) traj.states.push_back(st);
        });
        return traj;
    }

private:
    ProblemSpec problem_;
    StepSchedule schedule_;
    SigmoidSpec gate_;
    double bound_;
};

/// Full trajectory with noise from substream (seed, 0).
inline Trajectory run_trajectory(const ProblemSpec& problem, const InitialConditions& init,
                                 const StepSchedule& schedule, const SigmoidSpec& gate, std::int64_t horizon,
                                 std::uint64_t seed, std::int64_t record_stride = 1,
                                 double divergence_bound = kDefaultDivergenceBound) {
    if (record_stride < 1) throw ConfigError("record_stride must be >= 1");
    KestenEngine engine(problem, schedule, gate, divergence_bound);
    return engine.run_trajectory(init, horizon, NoiseStream(problem.noise(), seed), RecordPolicy{record_stride, {}},
                                 seed);
}

/// Deterministic-step comparator
///
///   z_t = z_{t-1} - (alpha (z_{t-1} - x*) + xi_t) / (E0 t),   z_0 = x0,
///
/// driven by `noise` (pass a copy of the stream used for x_t to couple the two).
/// Recorded states carry s = E0 t so that gamma = 1/s is the step just taken.
template <class Observer>
void run_comparator(const Matrix& alpha, double e0, const Vector& x0, NoiseStream& noise, std::int64_t horizon,
                    const Vector& root, Observer&& observe) {
    if (!(e0 > 0.0) || !std::isfinite(e0)) throw AssumptionError("B4.2", "comparator needs E0 > 0");
    if (horizon < 1) throw ConfigError("horizon must be >= 1");
    const Eigen::Index n = x0.size();
    if (alpha.rows() != n || alpha.cols() != n || root.size() != n || noise.dim() != n)
        throw DimensionError("comparator: alpha, root, x0 and noise dimensions must agree");
    AlgoState st;
    st.x = x0;
    st.s = 0.0;
    observe(static_cast<const AlgoState&>(st));
    Vector xi(n), drive(n);
    for (std::int64_t t = 1; t <= horizon; ++t) {
        noise.next(xi);
        const double step = 1.0 / (e0 * static_cast<double>(t));
        if (n == 1) {
            st.x[0] -= step * (alpha(0, 0) * (st.x[0] - root[0]) + xi[0]);
        } else {
            drive.noalias() = alpha * (st.x - root);
            drive += xi;
            st.x.noalias() -= step * drive;
        }
        st.t = t;
        st.s = e0 * static_cast<double>(t);
        observe(static_cast<const AlgoState&>(st));
    }
}

inline Trajectory run_comparator(const Matrix& alpha, double e0, const Vector& x0, NoiseStream noise,
                                 std::int64_t horizon, std::int64_t record_stride = 1,
                                 const Vector* root = nullptr) {
    if (record_stride < 1) throw ConfigError("record_stride must be >= 1");
    Trajectory traj;
    traj.record_stride = record_stride;
    traj.meta = {"comparator", "deterministic", "1/(E0 t)"};
    RecordPolicy policy{record_stride, {}};
    detail::Recorder rec(policy, horizon);
    const Vector origin = root ? *root : Vector::Zero(x0.size());
    run_comparator(alpha, e0, x0, noise, horizon, origin, [&](const AlgoState& st) {
        if (rec.wants(st.t)) traj.states.push_back(st);
    });
    return traj;
}

}  // namespace adaptix
