#pragma once

// Seeded replicate harness and the cross-replicate statistics used to check
// convergence, step-counter drift, asymptotic normality and the coupling gap.
//
// Replicate r draws its noise from substream (master_seed, r), so a
// ReplicateSet is a pure function of the plan whatever the worker count.

#include <Eigen/Dense>
#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "adaptix/asymptotics.hpp"
#include "adaptix/core.hpp"
#include "adaptix/error.hpp"
#include "adaptix/problems.hpp"
#include "adaptix/schedules.hpp"

namespace adaptix {

enum class ComparatorNoise { shared, independent };

struct ExperimentPlan {
    ProblemSpec problem;
    StepSchedule schedule;
    SigmoidSpec sigmoid;
    InitialConditions init;
    std::int64_t horizon = 10000;
    std::int64_t n_replicates = 100;
    std::uint64_t master_seed = 0;
    /// Sorted times in [1, horizon] at which statistics are taken.
    std::vector<std::int64_t> checkpoints;
    bool couple_comparator = false;
    /// `independent` gives the comparator its own noise: the negative control.
    ComparatorNoise comparator_noise = ComparatorNoise::shared;
    /// E0 for the comparator step 1/(E0 t).
    double e0 = 0.0;
    double divergence_bound = kDefaultDivergenceBound;

    void check() const {
        if (horizon < 1) throw ConfigError("horizon must be >= 1");
        if (n_replicates < 2) throw ConfigError("n_replicates must be >= 2");
        if (checkpoints.empty()) throw ConfigError("at least one checkpoint is required");
        if (!std::is_sorted(checkpoints.begin(), checkpoints.end()) ||
            std::adjacent_find(checkpoints.begin(), checkpoints.end()) != checkpoints.end())
            throw ConfigError("checkpoints must be strictly increasing");
        if (checkpoints.front() < 1 || checkpoints.back() > horizon)
            throw ConfigError("checkpoints must lie in [1, horizon]");
        if (init.x0.size() != problem.dim()) throw DimensionError("x0 dimension does not match the problem");
        if (couple_comparator && !(e0 > 0.0)) throw AssumptionError("B4.2", "comparator needs E0 > 0");
        for (const auto& item : validate_schedule(schedule).items)
            if (item.verdict == Verdict::fail) throw AssumptionError(item.id, item.detail);
    }
};

/// Per-checkpoint iterates across replicates. Rows of diverged replicates are NaN.
struct ReplicateSet {
    std::vector<std::int64_t> checkpoints;
    /// X[k] is n_replicates x n: x_t for t = checkpoints[k].
    std::vector<Matrix> X;
    /// S[k][r] = s_t.
    std::vector<Vector> S;
    /// Comparator iterates z_t, when requested.
    std::optional<std::vector<Matrix>> Z;
    std::vector<bool> diverged;
    std::int64_t n_diverged = 0;
    Vector root;
    std::int64_t n_replicates = 0;

    double diverged_fraction() const {
        return n_replicates == 0 ? 0.0 : static_cast<double>(n_diverged) / static_cast<double>(n_replicates);
    }

    std::size_t index_of(std::int64_t t) const {
        auto it = std::find(checkpoints.begin(), checkpoints.end(), t);
        if (it == checkpoints.end()) throw ConfigError("t = " + std::to_string(t) + " is not a checkpoint");
        return static_cast<std::size_t>(it - checkpoints.begin());
    }

    friend bool operator==(const ReplicateSet& a, const ReplicateSet& b) {
        auto same = [](const Matrix& x, const Matrix& y) {
            if (x.rows() != y.rows() || x.cols() != y.cols()) return false;
            for (Eigen::Index i = 0; i < x.size(); ++i) {
                const double u = x.data()[i], v = y.data()[i];
                if (!(u == v || (std::isnan(u) && std::isnan(v)))) return false;
            }
            return true;
        };
        if (a.checkpoints != b.checkpoints || a.diverged != b.diverged || a.n_diverged != b.n_diverged) return false;
        if (a.X.size() != b.X.size() || a.Z.has_value() != b.Z.has_value()) return false;
        for (std::size_t k = 0; k < a.X.size(); ++k) {
            if (!same(a.X[k], b.X[k]) || !same(a.S[k], b.S[k])) return false;
            if (a.Z && !same((*a.Z)[k], (*b.Z)[k])) return false;
        }
        return true;
    }
};

/// Default worker count: all hardware threads.
inline int default_workers() {
    const unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
}

/// Runs every replicate of the plan. Diverged replicates are recorded and
/// counted; deciding whether their share is acceptable is left to the caller
/// (see ReplicateSet::diverged_fraction).
inline ReplicateSet run_replicates(const ExperimentPlan& plan, int workers = 1) {
    plan.check();
    const Eigen::Index n = plan.problem.dim();
    const auto R = plan.n_replicates;
    const std::size_t K = plan.checkpoints.size();
    const double nan = std::numeric_limits<double>::quiet_NaN();

    ReplicateSet set;
    set.checkpoints = plan.checkpoints;
    set.root = plan.problem.root();
    set.n_replicates = R;
    set.X.assign(K, Matrix::Constant(R, n, nan));
    set.S.assign(K, Vector::Constant(R, nan));
    if (plan.couple_comparator) set.Z = std::vector<Matrix>(K, Matrix::Constant(R, n, nan));
    std::vector<char> diverged(static_cast<std::size_t>(R), 0);

    const KestenEngine engine(plan.problem, plan.schedule, plan.sigmoid, plan.divergence_bound);

    auto run_one = [&](std::int64_t r) {
        NoiseStream noise(plan.problem.noise(), plan.master_seed, static_cast<std::uint64_t>(r));
        NoiseStream comparator_noise =
            plan.comparator_noise == ComparatorNoise::shared
                ? noise
                : NoiseStream(plan.problem.noise(), plan.master_seed, static_cast<std::uint64_t>(r),
                              StreamPurpose::comparator_noise);
        std::size_t k = 0;
        try {
            engine.run(plan.init, plan.horizon, noise, [&](const AlgoState& st) {
                if (k < K && st.t == plan.checkpoints[k]) {
                    set.X[k].row(r) = st.x.transpose();
                    set.S[k][r] = st.s;
                    ++k;
                }
            });
        } catch (const DivergedError&) {
            diverged[static_cast<std::size_t>(r)] = 1;
            for (std::size_t j = 0; j < K; ++j) {
                set.X[j].row(r).setConstant(nan);
                set.S[j][r] = nan;
            }
            return;
        }
        if (plan.couple_comparator) {
            std::size_t kz = 0;
            run_comparator(plan.problem.jacobian_at_root(), plan.e0, plan.init.x0, comparator_noise, plan.horizon,
                           plan.problem.root(), [&](const AlgoState& st) {
                               if (kz < K && st.t == plan.checkpoints[kz]) {
                                   (*set.Z)[kz].row(r) = st.x.transpose();
                                   ++kz;
                               }
                           });
        }
    };

    workers = std::max(1, workers);
    if (workers == 1) {
        for (std::int64_t r = 0; r < R; ++r) run_one(r);
    } else {
        std::atomic<std::int64_t> next{0};
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(workers));
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::int64_t r = next++; r < R; r = next++) run_one(r);
            });
        }
        for (auto& th : pool) th.join();
    }

    set.diverged.resize(static_cast<std::size_t>(R));
    for (std::int64_t r = 0; r < R; ++r) {
        set.diverged[static_cast<std::size_t>(r)] = diverged[static_cast<std::size_t>(r)] != 0;
        set.n_diverged += diverged[static_cast<std::size_t>(r)];
    }
    return set;
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

/// Linear-interpolation quantile (Hyndman-Fan type 7) of an unsorted sample.
inline double quantile(std::vector<double> v, double p) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    const double h = (static_cast<double>(v.size()) - 1.0) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

namespace detail {

inline std::vector<double> row_norms(const Matrix& X, const Vector& center, double scale) {
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(X.rows()));
    for (Eigen::Index r = 0; r < X.rows(); ++r) {
        if (!X.row(r).allFinite()) continue;
        out.push_back(scale * (X.row(r).transpose() - center).norm());
    }
    return out;
}

}  // namespace detail

struct ConvergenceRow {
    std::int64_t t = 0;
    double q50 = 0.0;
    double q90 = 0.0;
    double q99 = 0.0;
    std::int64_t n_used = 0;
};

struct ConvergenceSummary {
    std::vector<ConvergenceRow> rows;
    std::int64_t n_diverged = 0;
    /// Median and 99% quantile both lower at the last checkpoint than at the first.
    bool decreasing = false;
};

/// Quantiles of |x_t - x*| per checkpoint; diverged replicates excluded and counted.
inline ConvergenceSummary convergence_summary(const ReplicateSet& set) {
    if (set.checkpoints.size() < 2) throw ConfigError("convergence_summary needs at least two checkpoints");
    ConvergenceSummary out;
    out.n_diverged = set.n_diverged;
    for (std::size_t k = 0; k < set.checkpoints.size(); ++k) {
        const auto norms = detail::row_norms(set.X[k], set.root, 1.0);
        out.rows.push_back({set.checkpoints[k], quantile(norms, 0.5), quantile(norms, 0.9), quantile(norms, 0.99),
                            static_cast<std::int64_t>(norms.size())});
    }
    out.decreasing = out.rows.back().q50 < out.rows.front().q50 && out.rows.back().q99 < out.rows.front().q99;
    return out;
}

struct DriftRow {
    std::int64_t t = 0;
    double mean = 0.0;
    double sd = 0.0;
    /// (mean - E0) / E0
    double rel_dev = 0.0;
};

/// Cross-replicate mean and sd of s_t / t, with deviation from the predicted E0.
inline std::vector<DriftRow> step_counter_drift(const ReplicateSet& set, double e0) {
    std::vector<DriftRow> out;
    for (std::size_t k = 0; k < set.checkpoints.size(); ++k) {
        const double t = static_cast<double>(set.checkpoints[k]);
        std::vector<double> q;
        for (Eigen::Index r = 0; r < set.S[k].size(); ++r)
            if (std::isfinite(set.S[k][r])) q.push_back(set.S[k][r] / t);
        const auto m = static_cast<double>(q.size());
        DriftRow row;
        row.t = set.checkpoints[k];
        row.mean = q.empty() ? std::numeric_limits<double>::quiet_NaN() : std::accumulate(q.begin(), q.end(), 0.0) / m;
        double ss = 0.0;
        for (double v : q) ss += (v - row.mean) * (v - row.mean);
        row.sd = q.size() > 1 ? std::sqrt(ss / (m - 1.0)) : 0.0;
        row.rel_dev = (row.mean - e0) / e0;
        out.push_back(row);
    }
    return out;
}

struct NormalityTolerances {
    double cov_rel_err = 0.15;
    /// KS acceptance band is ks_coefficient / sqrt(n_replicates).
    double ks_coefficient = 1.63;

    friend bool operator==(const NormalityTolerances&, const NormalityTolerances&) = default;
};

struct NormalityReport {
    std::int64_t t = 0;
    Matrix empirical_cov;
    Matrix predicted_V;
    double cov_rel_err = 0.0;
    double mahalanobis_ks = 0.0;
    double ks_threshold = 0.0;
    std::int64_t n_used = 0;
    bool pass = false;
};

/// Chi-square CDF with k degrees of freedom.
inline double chi_square_cdf(double x, double k) {
    if (x <= 0.0) return 0.0;
    return boost::math::gamma_p(0.5 * k, 0.5 * x);
}

/// One-sample Kolmogorov-Smirnov distance between `sample` and chi-square(k).
inline double ks_distance_chi_square(std::vector<double> sample, double k) {
    std::sort(sample.begin(), sample.end());
    const double m = static_cast<double>(sample.size());
    double d = 0.0;
    for (std::size_t i = 0; i < sample.size(); ++i) {
        const double F = chi_square_cdf(sample[i], k);
        d = std::max({d, static_cast<double>(i + 1) / m - F, F - static_cast<double>(i) / m});
    }
    return d;
}

/// Normality statistics for rows that should be N(0, V).
inline NormalityReport normality_statistics(const Matrix& rows, const Matrix& V, const NormalityTolerances& tol = {}) {
    const Eigen::Index n = V.rows();
    if (rows.cols() != n) throw DimensionError("sample rows and V dimensions differ");
    std::vector<Eigen::Index> keep;
    for (Eigen::Index r = 0; r < rows.rows(); ++r)
        if (rows.row(r).allFinite()) keep.push_back(r);
    const auto m = static_cast<Eigen::Index>(keep.size());
    if (m < 2) throw ConfigError("normality check needs at least two finite rows");
    Matrix D(m, n);
    for (Eigen::Index i = 0; i < m; ++i) D.row(i) = rows.row(keep[static_cast<std::size_t>(i)]);

    NormalityReport rep;
    rep.n_used = m;
    rep.predicted_V = V;
    const Eigen::RowVectorXd mean = D.colwise().mean();
    const Matrix C = D.rowwise() - mean;
    rep.empirical_cov = (C.transpose() * C) / static_cast<double>(m - 1);
    rep.empirical_cov = 0.5 * (rep.empirical_cov + rep.empirical_cov.transpose()).eval();
    rep.cov_rel_err = (rep.empirical_cov - V).norm() / V.norm();

    Eigen::LLT<Matrix> llt(V);
    if (llt.info() != Eigen::Success) throw NumericError("predicted V is not positive definite");
    std::vector<double> d2(static_cast<std::size_t>(m));
    for (Eigen::Index i = 0; i < m; ++i) {
        const Vector z = llt.matrixL().solve(D.row(i).transpose());
        d2[static_cast<std::size_t>(i)] = z.squaredNorm();
    }
    rep.mahalanobis_ks = ks_distance_chi_square(std::move(d2), static_cast<double>(n));
    rep.ks_threshold = tol.ks_coefficient / std::sqrt(static_cast<double>(m));
    rep.pass = rep.cov_rel_err <= tol.cov_rel_err && rep.mahalanobis_ks <= rep.ks_threshold;
    return rep;
}

enum class ReplicateSource { iterate, comparator };

/// Confronts sqrt(t) (x_t - x*) (or sqrt(t) (z_t - x*)) at checkpoint t with N(0, V).
inline NormalityReport normality_check(const ReplicateSet& set, const AsymptoticPrediction& prediction, std::int64_t t,
                                       const NormalityTolerances& tol = {},
                                       ReplicateSource source = ReplicateSource::iterate) {
    if (!prediction.stable || !prediction.V)
        throw AssumptionError("B3.3", "normality check needs a stable prediction");
    const std::size_t k = set.index_of(t);
    if (source == ReplicateSource::comparator && !set.Z) throw ConfigError("replicate set has no comparator runs");
    const Matrix& X = source == ReplicateSource::iterate ? set.X[k] : (*set.Z)[k];
    const Matrix rows = std::sqrt(static_cast<double>(t)) * (X.rowwise() - set.root.transpose());
    NormalityReport rep = normality_statistics(rows, *prediction.V, tol);
    rep.t = t;
    return rep;
}

struct CouplingRow {
    std::int64_t t = 0;
    double median = 0.0;
    double q90 = 0.0;
};

struct CouplingGap {
    std::vector<CouplingRow> rows;
    /// 90% quantile lower at the last checkpoint than at the first.
    bool decreasing = false;
};

/// Quantiles of sqrt(t) |x_t - z_t| per checkpoint.
inline CouplingGap coupling_gap(const ReplicateSet& set) {
    if (!set.Z) throw ConfigError("coupling_gap needs comparator runs (couple_comparator)");
    CouplingGap out;
    for (std::size_t k = 0; k < set.checkpoints.size(); ++k) {
        const double scale = std::sqrt(static_cast<double>(set.checkpoints[k]));
        std::vector<double> gaps;
        for (Eigen::Index r = 0; r < set.X[k].rows(); ++r) {
            if (!set.X[k].row(r).allFinite()) continue;
            gaps.push_back(scale * (set.X[k].row(r) - (*set.Z)[k].row(r)).norm());
        }
        out.rows.push_back({set.checkpoints[k], quantile(gaps, 0.5), quantile(gaps, 0.9)});
    }
    out.decreasing = out.rows.size() >= 2 && out.rows.back().q90 < out.rows.front().q90;
    return out;
}

/// Default checkpoints: powers of ten up to the horizon, plus the horizon.
inline std::vector<std::int64_t> default_checkpoints(std::int64_t horizon) {
    std::vector<std::int64_t> out;
    for (std::int64_t t = 10; t <= horizon; t *= 10) out.push_back(t);
    if (out.empty() || out.back() != horizon) out.push_back(horizon);
    return out;
}

}  // namespace adaptix
