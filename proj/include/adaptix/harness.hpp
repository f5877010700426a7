#pragma once

// Config parsing and the predict / run / replicate / validate commands behind
// the adaptix CLI. Config and summaries are JSON, series are CSV.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "adaptix/asymptotics.hpp"
#include "adaptix/core.hpp"
#include "adaptix/error.hpp"
#include "adaptix/montecarlo.hpp"
#include "adaptix/problems.hpp"
#include "adaptix/schedules.hpp"
#include "adaptix/validate.hpp"

namespace adaptix {

using json = nlohmann::json;

/// Process exit codes of the CLI.
enum ExitCode : int {
    kExitOk = 0,
    kExitConfigError = 2,
    kExitAssumptionFailed = 3,
    kExitStatisticalFailure = 4,
    kExitNumericError = 5,
};

// ---------------------------------------------------------------------------
// Config types
// ---------------------------------------------------------------------------

namespace detail {

template <class A, class B>
bool same_shape_equal(const A& a, const B& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() && (a.size() == 0 || a == b);
}

}  // namespace detail

struct NoiseConfig {
    NoiseKind kind = NoiseKind::gaussian;
    /// gaussian covariance; empty means identity.
    Matrix cov;
    double radius = 1.0;
    Vector scales;

    friend bool operator==(const NoiseConfig& a, const NoiseConfig& b) {
        return a.kind == b.kind && detail::same_shape_equal(a.cov, b.cov) && a.radius == b.radius &&
               detail::same_shape_equal(a.scales, b.scales);
    }
};

struct ProblemConfig {
    std::string name = "linear";
    /// linear / tanh coefficient matrix.
    Matrix A;
    /// cubic1d coefficients.
    double a = 1.0;
    double c = 1.0;
    Vector root;
    std::optional<Matrix> lyap_matrix;
    NoiseConfig noise;
    std::optional<FarFieldBound> far_field = FarFieldBound{};

    Eigen::Index dim() const { return root.size(); }

    friend bool operator==(const ProblemConfig& a, const ProblemConfig& b) {
        auto far_eq = [](const std::optional<FarFieldBound>& x, const std::optional<FarFieldBound>& y) {
            return x.has_value() == y.has_value() && (!x || (x->radius == y->radius && x->beta0 == y->beta0));
        };
        return a.name == b.name && detail::same_shape_equal(a.A, b.A) && a.a == b.a && a.c == b.c &&
               detail::same_shape_equal(a.root, b.root) && a.lyap_matrix.has_value() == b.lyap_matrix.has_value() &&
               (!a.lyap_matrix || detail::same_shape_equal(*a.lyap_matrix, *b.lyap_matrix)) && a.noise == b.noise &&
               far_eq(a.far_field, b.far_field);
    }
};

enum class E0Choice { automatic, exact, monte_carlo, declared };

struct E0Config {
    E0Choice method = E0Choice::automatic;
    double value = 0.0;
    std::int64_t n_samples = 1000000;

    friend bool operator==(const E0Config&, const E0Config&) = default;
};

struct EmitFlags {
    bool trajectory = true;
    bool summary = true;
    bool prediction = true;

    friend bool operator==(const EmitFlags&, const EmitFlags&) = default;
};

struct Tolerances {
    NormalityTolerances normality;
    double max_diverged_fraction = 0.01;
    /// Below this many replicates the normality verdict is reported, not enforced.
    std::int64_t min_replicates_for_normality = 500;

    friend bool operator==(const Tolerances&, const Tolerances&) = default;
};

struct RunConfig {
    ProblemConfig problem;
    SigmoidSpec sigmoid = SigmoidSpec::kesten();
    StepSchedule schedule = StepSchedule::reciprocal();
    InitialConditions init;
    std::int64_t horizon = 10000;
    std::int64_t n_replicates = 100;
    std::uint64_t master_seed = 0;
    std::vector<std::int64_t> checkpoints;
    bool couple_comparator = false;
    ComparatorNoise comparator_noise = ComparatorNoise::shared;
    std::int64_t record_stride = 1;
    double divergence_bound = kDefaultDivergenceBound;
    E0Config e0;
    ValidationGrid validation;
    std::string output_dir = "out";
    EmitFlags emit;
    Tolerances tolerances;

    friend bool operator==(const RunConfig& a, const RunConfig& b) {
        return a.problem == b.problem && a.sigmoid == b.sigmoid && a.schedule == b.schedule &&
               detail::same_shape_equal(a.init.x0, b.init.x0) && a.init.s0 == b.init.s0 && a.init.s1 == b.init.s1 &&
               a.horizon == b.horizon && a.n_replicates == b.n_replicates && a.master_seed == b.master_seed &&
               a.checkpoints == b.checkpoints && a.couple_comparator == b.couple_comparator &&
               a.comparator_noise == b.comparator_noise && a.record_stride == b.record_stride &&
               a.divergence_bound == b.divergence_bound && a.e0 == b.e0 && a.validation == b.validation &&
               a.output_dir == b.output_dir && a.emit == b.emit && a.tolerances == b.tolerances;
    }
};

/// 17 significant digits; "nan" / "inf" / "-inf" for non-finite values.
inline std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// ---------------------------------------------------------------------------
// JSON helpers
// ---------------------------------------------------------------------------

namespace detail {

[[noreturn]] inline void type_error(const std::string& path, const std::string& expected) {
    throw ConfigError(path + ": expected " + expected);
}

inline double to_number(const json& j, const std::string& path) {
    if (!j.is_number()) type_error(path, "number");
    return j.get<double>();
}

inline std::int64_t to_integer(const json& j, const std::string& path) {
    if (!j.is_number_integer()) type_error(path, "integer");
    return j.get<std::int64_t>();
}

inline Vector to_vector(const json& j, const std::string& path) {
    if (!j.is_array() || j.empty()) type_error(path, "non-empty array of numbers");
    Vector v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = to_number(j[i], path + "[" + std::to_string(i) + "]");
    return v;
}

inline Matrix to_matrix(const json& j, const std::string& path) {
    if (!j.is_array() || j.empty() || !j[0].is_array()) type_error(path, "non-empty array of rows");
    const auto rows = j.size(), cols = j[0].size();
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < rows; ++r) {
        const std::string rp = path + "[" + std::to_string(r) + "]";
        if (!j[r].is_array() || j[r].size() != cols) type_error(rp, "row of " + std::to_string(cols) + " numbers");
        for (std::size_t c = 0; c < cols; ++c)
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = to_number(j[r][c], rp + "[" + std::to_string(c) + "]");
    }
    return m;
}

inline json from_vector(const Vector& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

inline json from_matrix(const Matrix& m) {
    json a = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        a.push_back(row);
    }
    return a;
}

/// Strict view of a JSON object: reads are recorded, leftovers are rejected.
class StrictObject {
public:
    StrictObject(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) type_error(path_.empty() ? "<root>" : path_, "object");
    }

    bool has(const std::string& key) {
        seen_.insert(key);
        return j_.contains(key);
    }

    const json& at(const std::string& key) {
        seen_.insert(key);
        if (!j_.contains(key)) throw ConfigError(where(key) + ": required key is missing");
        return j_.at(key);
    }

    std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    double number(const std::string& key, double fallback) {
        return has(key) ? to_number(j_.at(key), where(key)) : fallback;
    }

    std::int64_t integer(const std::string& key, std::int64_t fallback) {
        return has(key) ? to_integer(j_.at(key), where(key)) : fallback;
    }

    bool boolean(const std::string& key, bool fallback) {
        if (!has(key)) return fallback;
        if (!j_.at(key).is_boolean()) type_error(where(key), "boolean");
        return j_.at(key).get<bool>();
    }

    std::string string(const std::string& key, const std::string& fallback) {
        if (!has(key)) return fallback;
        if (!j_.at(key).is_string()) type_error(where(key), "string");
        return j_.at(key).get<std::string>();
    }

    /// Rejects keys outside `allowed` and any key present but never read.
    void finish(const std::set<std::string>& allowed) const {
        for (const auto& [key, _] : j_.items()) {
            if (!allowed.count(key)) throw ConfigError(where(key) + ": unknown key");
        }
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

template <class Fn>
auto with_assumption_context(const std::string& path, Fn&& fn) {
    try {
        return fn();
    } catch (const AssumptionError& e) {
        throw ConfigError(path + ": violates " + e.assumption() + " (" + e.what() + ")");
    }
}

inline AtZero parse_at_zero(const std::string& s, const std::string& path) {
    if (s == "left") return AtZero::left;
    if (s == "right") return AtZero::right;
    if (s == "midpoint") return AtZero::midpoint;
    type_error(path, "one of left, right, midpoint");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

inline NoiseConfig parse_noise(const json& j, const std::string& path, Eigen::Index dim) {
    detail::StrictObject o(j, path);
    NoiseConfig nc;
    const std::string kind = o.string("kind", "gaussian");
    if (kind == "gaussian") {
        nc.kind = NoiseKind::gaussian;
        nc.cov = o.has("cov") ? detail::to_matrix(o.at("cov"), o.where("cov")) : Matrix::Identity(dim, dim);
        if (nc.cov.rows() != dim || nc.cov.cols() != dim)
            throw ConfigError(o.where("cov") + ": expected " + std::to_string(dim) + "x" + std::to_string(dim) + " matrix");
        o.finish({"kind", "cov"});
    } else if (kind == "uniform_ball") {
        nc.kind = NoiseKind::uniform_ball;
        nc.radius = o.number("radius", 1.0);
        o.finish({"kind", "radius"});
    } else if (kind == "scaled_rademacher") {
        nc.kind = NoiseKind::scaled_rademacher;
        nc.scales = o.has("scales") ? detail::to_vector(o.at("scales"), o.where("scales")) : Vector::Ones(dim);
        if (nc.scales.size() != dim) throw ConfigError(o.where("scales") + ": expected " + std::to_string(dim) + " numbers");
        o.finish({"kind", "scales"});
    } else {
        detail::type_error(o.where("kind"), "one of gaussian, uniform_ball, scaled_rademacher");
    }
    return nc;
}

inline ProblemConfig parse_problem(const json& j) {
    detail::StrictObject o(j, "problem");
    ProblemConfig pc;
    pc.name = o.string("name", "linear");
    std::set<std::string> allowed{"name", "root", "lyap_matrix", "noise", "b32"};
    if (pc.name == "linear" || pc.name == "tanh") {
        allowed.insert({"A", "dim"});
        Eigen::Index dim = -1;
        if (o.has("dim")) {
            dim = o.integer("dim", 1);
            if (dim < 1) throw ConfigError("problem.dim: must be >= 1");
        }
        if (o.has("A")) {
            pc.A = detail::to_matrix(o.at("A"), "problem.A");
            if (pc.A.rows() != pc.A.cols()) throw ConfigError("problem.A: expected a square matrix");
            if (dim >= 0 && pc.A.rows() != dim) throw ConfigError("problem.A: size does not match problem.dim");
        } else {
            if (dim < 0) dim = 1;
            pc.A = Matrix::Identity(dim, dim);
        }
        const Eigen::Index n = pc.A.rows();
        pc.root = o.has("root") ? detail::to_vector(o.at("root"), "problem.root") : Vector::Zero(n);
        if (pc.root.size() != n) throw ConfigError("problem.root: expected " + std::to_string(n) + " numbers");
    } else if (pc.name == "cubic1d") {
        allowed.insert({"a", "c"});
        pc.a = o.number("a", 1.0);
        pc.c = o.number("c", 1.0);
        if (!(pc.a > 0.0)) throw ConfigError("problem.a: must be > 0");
        if (!(pc.c > 0.0)) throw ConfigError("problem.c: must be > 0");
        pc.root = Vector::Constant(1, o.number("root", 0.0));
    } else {
        detail::type_error("problem.name", "one of linear, tanh, cubic1d");
    }
    const Eigen::Index n = pc.dim();
    if (o.has("lyap_matrix")) {
        if (o.at("lyap_matrix").is_null()) {
            pc.lyap_matrix.reset();
        } else {
            pc.lyap_matrix = detail::to_matrix(o.at("lyap_matrix"), "problem.lyap_matrix");
            if (pc.lyap_matrix->rows() != n || pc.lyap_matrix->cols() != n)
                throw ConfigError("problem.lyap_matrix: expected " + std::to_string(n) + "x" + std::to_string(n) + " matrix");
        }
    } else {
        pc.lyap_matrix = pc.name == "cubic1d" ? Matrix::Constant(1, 1, 0.5) : Matrix(Matrix::Identity(n, n));
    }
    pc.noise = o.has("noise") ? parse_noise(o.at("noise"), "problem.noise", n) : NoiseConfig{NoiseKind::gaussian, Matrix::Identity(n, n), 1.0, {}};
    if (o.has("b32")) {
        if (o.at("b32").is_null()) {
            pc.far_field.reset();
        } else {
            detail::StrictObject b(o.at("b32"), "problem.b32");
            FarFieldBound f;
            f.radius = b.number("R", 10.0);
            f.beta0 = b.number("beta0", 1.0);
            if (!(f.radius > 0.0)) throw ConfigError("problem.b32.R: must be > 0 (B3.2)");
            if (!(f.beta0 > 0.0)) throw ConfigError("problem.b32.beta0: must be > 0 (B3.2)");
            b.finish({"R", "beta0"});
            pc.far_field = f;
        }
    }
    o.finish(allowed);
    return pc;
}

inline SigmoidSpec parse_sigmoid(const json& j) {
    detail::StrictObject o(j, "sigmoid");
    const std::string family = o.string("family", "kesten");
    return detail::with_assumption_context("sigmoid", [&]() -> SigmoidSpec {
        if (family == "constant") {
            const double c = o.number("u_plus", 1.0);
            if (o.has("u_minus") && o.number("u_minus", c) != c)
                throw ConfigError("sigmoid.u_minus: constant gate needs u_minus == u_plus");
            o.finish({"family", "u_plus", "u_minus"});
            if (!(c > 0.0)) throw ConfigError("sigmoid.u_plus: violates B4.1 (u_plus must be > 0, got " + format_number(c) + ")");
            return SigmoidSpec::constant(c);
        }
        const double u_plus = o.number("u_plus", 1.0);
        if (!(u_plus > 0.0))
            throw ConfigError("sigmoid.u_plus: violates B4.1 (u_plus must be > 0, got " + format_number(u_plus) + ")");
        if (family == "kesten") {
            if (o.has("u_minus") && o.number("u_minus", 0.0) != 0.0)
                throw ConfigError("sigmoid.u_minus: kesten gate has u_minus = 0");
            const AtZero z = detail::parse_at_zero(o.string("at_zero", "right"), "sigmoid.at_zero");
            o.finish({"family", "u_plus", "u_minus", "at_zero"});
            return SigmoidSpec::kesten(u_plus, z);
        }
        if (family == "plakhov_almeida") {
            const double u_minus = o.number("u_minus", -0.5);
            const AtZero z = detail::parse_at_zero(o.string("at_zero", "right"), "sigmoid.at_zero");
            o.finish({"family", "u_plus", "u_minus", "at_zero"});
            return SigmoidSpec::plakhov_almeida(u_minus, u_plus, z);
        }
        if (family == "smooth") {
            const double u_minus = o.number("u_minus", -0.5);
            const double beta = o.number("beta", 1.0);
            o.finish({"family", "u_plus", "u_minus", "beta"});
            return SigmoidSpec::smooth(u_minus, u_plus, beta);
        }
        detail::type_error("sigmoid.family", "one of constant, kesten, plakhov_almeida, smooth");
    });
}

inline StepSchedule parse_schedule(const json& j) {
    detail::StrictObject o(j, "schedule");
    const std::string family = o.string("family", "reciprocal");
    return detail::with_assumption_context("schedule", [&]() -> StepSchedule {
        if (family == "reciprocal") {
            const double floor = o.number("s_floor", 1.0);
            o.finish({"family", "s_floor"});
            return StepSchedule::reciprocal(floor);
        }
        if (family == "power") {
            const double g0 = o.number("gamma0", 1.0);
            const double p = o.number("p", 1.0);
            o.finish({"family", "gamma0", "p"});
            return StepSchedule::power(g0, p);
        }
        if (family == "constant") {
            const double g0 = o.number("gamma0", 1.0);
            o.finish({"family", "gamma0"});
            return StepSchedule::constant(g0);
        }
        detail::type_error("schedule.family", "one of reciprocal, power, constant");
    });
}

/// Builds the ProblemSpec a config describes.
inline ProblemSpec build_problem(const ProblemConfig& pc) {
    return detail::with_assumption_context("problem", [&] {
        const Eigen::Index n = pc.dim();
        NoiseModel noise = [&] {
            switch (pc.noise.kind) {
                case NoiseKind::gaussian:
                    return NoiseModel::gaussian(pc.noise.cov.size() ? pc.noise.cov : Matrix(Matrix::Identity(n, n)));
                case NoiseKind::uniform_ball: return NoiseModel::uniform_ball(n, pc.noise.radius);
                case NoiseKind::scaled_rademacher: return NoiseModel::scaled_rademacher(pc.noise.scales);
            }
            throw ConfigError("problem.noise: unknown kind");
        }();
        ProblemSpec built = [&] {
            if (pc.name == "linear") return ProblemSpec::linear(pc.A, pc.root, noise, pc.lyap_matrix, pc.far_field);
            if (pc.name == "tanh") return ProblemSpec::tanh(pc.A, pc.root, noise, pc.lyap_matrix, pc.far_field);
            return ProblemSpec::cubic1d(pc.a, pc.c, pc.root[0], noise, pc.lyap_matrix, pc.far_field);
        }();
        return pc.lyap_matrix ? built : built.without_lyapunov();
    });
}

inline RunConfig parse_config_json(const json& doc) {
    detail::StrictObject o(doc, "");
    RunConfig cfg;
    cfg.problem = o.has("problem") ? parse_problem(o.at("problem")) : parse_problem(json::object());
    cfg.sigmoid = o.has("sigmoid") ? parse_sigmoid(o.at("sigmoid")) : parse_sigmoid(json::object());
    cfg.schedule = o.has("schedule") ? parse_schedule(o.at("schedule")) : parse_schedule(json::object());
    const Eigen::Index n = cfg.problem.dim();

    cfg.init.x0 = cfg.problem.root + Vector::Ones(n);
    if (o.has("init")) {
        detail::StrictObject io(o.at("init"), "init");
        if (io.has("x0")) cfg.init.x0 = detail::to_vector(io.at("x0"), "init.x0");
        if (cfg.init.x0.size() != n) throw ConfigError("init.x0: expected " + std::to_string(n) + " numbers");
        cfg.init.s0 = io.number("s0", 1.0);
        cfg.init.s1 = io.number("s1", 1.0);
        if (!(cfg.init.s0 >= 0.0)) throw ConfigError("init.s0: must be >= 0");
        if (!(cfg.init.s1 >= 0.0)) throw ConfigError("init.s1: must be >= 0");
        io.finish({"x0", "s0", "s1"});
    }

    cfg.horizon = o.integer("horizon", 10000);
    if (cfg.horizon < 1) throw ConfigError("horizon: must be >= 1");
    cfg.n_replicates = o.integer("n_replicates", 100);
    if (cfg.n_replicates < 2) throw ConfigError("n_replicates: must be >= 2");
    if (o.has("master_seed")) {
        const json& s = o.at("master_seed");
        if (!s.is_number_integer() || (s.is_number_integer() && !s.is_number_unsigned() && s.get<std::int64_t>() < 0))
            detail::type_error("master_seed", "unsigned 64-bit integer");
        cfg.master_seed = s.get<std::uint64_t>();
    }
    if (o.has("checkpoints")) {
        const json& c = o.at("checkpoints");
        if (!c.is_array() || c.empty()) detail::type_error("checkpoints", "non-empty array of integers");
        for (std::size_t i = 0; i < c.size(); ++i)
            cfg.checkpoints.push_back(detail::to_integer(c[i], "checkpoints[" + std::to_string(i) + "]"));
        for (std::size_t i = 0; i < cfg.checkpoints.size(); ++i) {
            if (cfg.checkpoints[i] < 1 || cfg.checkpoints[i] > cfg.horizon)
                throw ConfigError("checkpoints[" + std::to_string(i) + "]: must lie in [1, horizon]");
            if (i > 0 && cfg.checkpoints[i] <= cfg.checkpoints[i - 1])
                throw ConfigError("checkpoints: must be strictly increasing");
        }
    } else {
        cfg.checkpoints = default_checkpoints(cfg.horizon);
    }
    cfg.couple_comparator = o.boolean("couple_comparator", false);
    const std::string cn = o.string("comparator_noise", "shared");
    if (cn == "shared") cfg.comparator_noise = ComparatorNoise::shared;
    else if (cn == "independent") cfg.comparator_noise = ComparatorNoise::independent;
    else detail::type_error("comparator_noise", "one of shared, independent");
    cfg.record_stride = o.integer("record_stride", 1);
    if (cfg.record_stride < 1) throw ConfigError("record_stride: must be >= 1");
    cfg.divergence_bound = o.number("divergence_bound", kDefaultDivergenceBound);
    if (!(cfg.divergence_bound > 0.0)) throw ConfigError("divergence_bound: must be > 0");

    if (o.has("e0")) {
        detail::StrictObject eo(o.at("e0"), "e0");
        const std::string m = eo.string("method", eo.has("value") ? "declared" : "auto");
        if (m == "auto") cfg.e0.method = E0Choice::automatic;
        else if (m == "exact") cfg.e0.method = E0Choice::exact;
        else if (m == "monte_carlo") cfg.e0.method = E0Choice::monte_carlo;
        else if (m == "declared") cfg.e0.method = E0Choice::declared;
        else detail::type_error("e0.method", "one of auto, exact, monte_carlo, declared");
        cfg.e0.value = eo.number("value", 0.0);
        cfg.e0.n_samples = eo.integer("n_samples", 1000000);
        if (cfg.e0.method == E0Choice::declared && !(cfg.e0.value > 0.0))
            throw ConfigError("e0.value: violates B4.2 (declared E0 must be > 0)");
        if (cfg.e0.n_samples < 2) throw ConfigError("e0.n_samples: must be >= 2");
        eo.finish({"method", "value", "n_samples"});
    }

    if (o.has("validation")) {
        detail::StrictObject vo(o.at("validation"), "validation");
        auto& g = cfg.validation;
        g.r_min = vo.number("r_min", g.r_min);
        g.r_max = vo.number("r_max", g.r_max);
        g.n_samples = static_cast<int>(vo.integer("n_samples", g.n_samples));
        g.noise_samples = vo.integer("noise_samples", g.noise_samples);
        g.e0_samples = vo.integer("e0_samples", g.e0_samples);
        g.descent_steps = vo.integer("descent_steps", g.descent_steps);
        g.descent_starts = static_cast<int>(vo.integer("descent_starts", g.descent_starts));
        if (vo.has("descent_step_fractions")) {
            const Vector f = detail::to_vector(vo.at("descent_step_fractions"), "validation.descent_step_fractions");
            g.descent_step_fractions.assign(f.data(), f.data() + f.size());
            for (double v : g.descent_step_fractions)
                if (!(v > 0.0 && v < 1.0)) throw ConfigError("validation.descent_step_fractions: values must lie in (0, 1)");
        }
        if (!(g.r_min > 0.0) || !(g.r_max >= g.r_min)) throw ConfigError("validation: need 0 < r_min <= r_max");
        if (g.n_samples < 1 || g.noise_samples < 1 || g.e0_samples < 2 || g.descent_steps < 1 || g.descent_starts < 1)
            throw ConfigError("validation: sample counts must be positive");
        vo.finish({"r_min", "r_max", "n_samples", "noise_samples", "e0_samples", "descent_steps", "descent_starts",
                   "descent_step_fractions"});
    }

    cfg.output_dir = o.string("output_dir", "out");
    if (o.has("emit")) {
        detail::StrictObject eo(o.at("emit"), "emit");
        cfg.emit.trajectory = eo.boolean("trajectory", true);
        cfg.emit.summary = eo.boolean("summary", true);
        cfg.emit.prediction = eo.boolean("prediction", true);
        eo.finish({"trajectory", "summary", "prediction"});
    }
    if (o.has("tolerances")) {
        detail::StrictObject to(o.at("tolerances"), "tolerances");
        auto& t = cfg.tolerances;
        t.normality.cov_rel_err = to.number("cov_rel_err", t.normality.cov_rel_err);
        t.normality.ks_coefficient = to.number("ks_coefficient", t.normality.ks_coefficient);
        t.max_diverged_fraction = to.number("max_diverged_fraction", t.max_diverged_fraction);
        t.min_replicates_for_normality = to.integer("min_replicates_for_normality", t.min_replicates_for_normality);
        if (!(t.normality.cov_rel_err > 0.0) || !(t.normality.ks_coefficient > 0.0) ||
            !(t.max_diverged_fraction >= 0.0))
            throw ConfigError("tolerances: values must be positive");
        to.finish({"cov_rel_err", "ks_coefficient", "max_diverged_fraction", "min_replicates_for_normality"});
    }

    o.finish({"problem", "sigmoid", "schedule", "init", "horizon", "n_replicates", "master_seed", "checkpoints",
              "couple_comparator", "comparator_noise", "record_stride", "divergence_bound", "e0", "validation",
              "output_dir", "emit", "tolerances"});

    // Wiring errors surface at parse time.
    (void)build_problem(cfg.problem);
    return cfg;
}

/// Parses a JSON config document (strict: unknown keys are rejected).
inline RunConfig parse_config(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not well-formed JSON: ") + e.what());
    }
    return parse_config_json(doc);
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline json to_json(const ProblemConfig& pc) {
    json j;
    j["name"] = pc.name;
    if (pc.name == "cubic1d") {
        j["a"] = pc.a;
        j["c"] = pc.c;
        j["root"] = pc.root[0];
    } else {
        j["A"] = detail::from_matrix(pc.A);
        j["root"] = detail::from_vector(pc.root);
    }
    j["lyap_matrix"] = pc.lyap_matrix ? detail::from_matrix(*pc.lyap_matrix) : json(nullptr);
    json noise;
    noise["kind"] = std::string(to_string(pc.noise.kind));
    switch (pc.noise.kind) {
        case NoiseKind::gaussian:
            noise["cov"] = detail::from_matrix(pc.noise.cov.size() ? pc.noise.cov : Matrix(Matrix::Identity(pc.dim(), pc.dim())));
            break;
        case NoiseKind::uniform_ball: noise["radius"] = pc.noise.radius; break;
        case NoiseKind::scaled_rademacher: noise["scales"] = detail::from_vector(pc.noise.scales); break;
    }
    j["noise"] = noise;
    j["b32"] = pc.far_field ? json{{"R", pc.far_field->radius}, {"beta0", pc.far_field->beta0}} : json(nullptr);
    return j;
}

inline json to_json(const SigmoidSpec& s) {
    json j;
    j["family"] = std::string(to_string(s.family()));
    j["u_plus"] = s.u_plus();
    switch (s.family()) {
        case SigmoidFamily::constant: break;
        case SigmoidFamily::kesten: j["at_zero"] = std::string(to_string(s.at_zero())); break;
        case SigmoidFamily::plakhov_almeida:
            j["u_minus"] = s.u_minus();
            j["at_zero"] = std::string(to_string(s.at_zero()));
            break;
        case SigmoidFamily::smooth:
            j["u_minus"] = s.u_minus();
            j["beta"] = s.beta();
            break;
    }
    return j;
}

inline json to_json(const StepSchedule& s) {
    json j;
    j["family"] = std::string(to_string(s.family()));
    switch (s.family()) {
        case ScheduleFamily::reciprocal: j["s_floor"] = s.s_floor(); break;
        case ScheduleFamily::power:
            j["gamma0"] = s.gamma0();
            j["p"] = s.p();
            break;
        case ScheduleFamily::constant: j["gamma0"] = s.gamma0(); break;
    }
    return j;
}

inline std::string_view to_string(E0Choice c) {
    switch (c) {
        case E0Choice::automatic: return "auto";
        case E0Choice::exact: return "exact";
        case E0Choice::monte_carlo: return "monte_carlo";
        case E0Choice::declared: return "declared";
    }
    return "?";
}

/// Effective config with every default spelled out; parse_config accepts it back.
inline json to_json(const RunConfig& c) {
    json j;
    j["problem"] = to_json(c.problem);
    j["sigmoid"] = to_json(c.sigmoid);
    j["schedule"] = to_json(c.schedule);
    j["init"] = {{"x0", detail::from_vector(c.init.x0)}, {"s0", c.init.s0}, {"s1", c.init.s1}};
    j["horizon"] = c.horizon;
    j["n_replicates"] = c.n_replicates;
    j["master_seed"] = c.master_seed;
    j["checkpoints"] = c.checkpoints;
    j["couple_comparator"] = c.couple_comparator;
    j["comparator_noise"] = c.comparator_noise == ComparatorNoise::shared ? "shared" : "independent";
    j["record_stride"] = c.record_stride;
    j["divergence_bound"] = c.divergence_bound;
    j["e0"] = {{"method", std::string(to_string(c.e0.method))}, {"value", c.e0.value}, {"n_samples", c.e0.n_samples}};
    const auto& g = c.validation;
    j["validation"] = {{"r_min", g.r_min},
                       {"r_max", g.r_max},
                       {"n_samples", g.n_samples},
                       {"noise_samples", g.noise_samples},
                       {"e0_samples", g.e0_samples},
                       {"descent_steps", g.descent_steps},
                       {"descent_starts", g.descent_starts},
                       {"descent_step_fractions", g.descent_step_fractions}};
    j["output_dir"] = c.output_dir;
    j["emit"] = {{"trajectory", c.emit.trajectory}, {"summary", c.emit.summary}, {"prediction", c.emit.prediction}};
    j["tolerances"] = {{"cov_rel_err", c.tolerances.normality.cov_rel_err},
                       {"ks_coefficient", c.tolerances.normality.ks_coefficient},
                       {"max_diverged_fraction", c.tolerances.max_diverged_fraction},
                       {"min_replicates_for_normality", c.tolerances.min_replicates_for_normality}};
    return j;
}

inline std::string serialize_config(const RunConfig& c) { return to_json(c).dump(2) + "\n"; }

// ---------------------------------------------------------------------------
// Output helpers
// ---------------------------------------------------------------------------

namespace detail {

inline json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << content;
    if (!out) throw ConfigError("failed writing " + path.string());
}

inline std::filesystem::path prepare_output(const RunConfig& cfg) {
    std::filesystem::path dir(cfg.output_dir);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw ConfigError("cannot create output directory " + dir.string() + ": " + ec.message());
    write_file(dir / "config.effective.json", serialize_config(cfg));
    return dir;
}

}  // namespace detail

/// E0 per the config's method.
inline E0Estimate evaluate_e0(const RunConfig& cfg, const ProblemSpec& problem) {
    switch (cfg.e0.method) {
        case E0Choice::declared: return {cfg.e0.value, 0.0, E0Method::declared, 0};
        case E0Choice::exact: return e0_exact(cfg.sigmoid, problem.noise());
        case E0Choice::monte_carlo: return e0_monte_carlo(cfg.sigmoid, problem.noise(), cfg.e0.n_samples, cfg.master_seed);
        case E0Choice::automatic: return e0_auto(cfg.sigmoid, problem.noise(), cfg.e0.n_samples, cfg.master_seed);
    }
    throw ConfigError("e0.method: unknown");
}

struct CommandResult {
    int exit_code = kExitOk;
    std::string message;
};

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

/// E0, W, its spectrum and V, cross-checked against the covariance integral.
/// Writes prediction.json; exit code 3 when W is unstable (V omitted).
inline CommandResult cmd_predict(const RunConfig& cfg) {
    const ProblemSpec problem = build_problem(cfg.problem);
    const E0Estimate e0 = evaluate_e0(cfg, problem);
    const AsymptoticPrediction pred = predict(problem.jacobian_at_root(), problem.noise().cov(), e0.value);
    const auto dir = detail::prepare_output(cfg);

    json j;
    j["e0"] = e0.value;
    j["e0_stderr"] = e0.standard_error;
    j["W"] = detail::from_matrix(pred.W);
    j["stable"] = pred.stable;
    j["eigen_real_parts"] = detail::from_vector(pred.eigen_real_parts);
    if (pred.stable) {
        j["V"] = detail::from_matrix(*pred.V);
        const double t_max = oracle_horizon(pred.W);
        const Matrix V_int =
            covariance_integral_oracle(pred.W, problem.noise().cov(), e0.value, t_max, oracle_nodes(pred.W, t_max));
        j["oracle_max_abs_diff"] = (V_int - *pred.V).cwiseAbs().maxCoeff();
    }
    detail::write_file(dir / "prediction.json", j.dump(2) + "\n");
    if (!pred.stable)
        return {kExitAssumptionFailed, "B3.3: W = I/2 - phi'(x*)/E0 is not stable; no limiting covariance"};
    return {};
}

/// Single trajectory from substream (master_seed, 0); writes trajectory.csv
/// with header t,s,gamma,x_0,...,x_{n-1}.
inline CommandResult cmd_run(const RunConfig& cfg) {
    const ProblemSpec problem = build_problem(cfg.problem);
    const Trajectory traj = run_trajectory(problem, cfg.init, cfg.schedule, cfg.sigmoid, cfg.horizon, cfg.master_seed,
                                           cfg.record_stride, cfg.divergence_bound);
    const auto dir = detail::prepare_output(cfg);
    if (cfg.emit.trajectory) {
        std::string csv = "t,s,gamma";
        for (Eigen::Index i = 0; i < problem.dim(); ++i) csv += ",x_" + std::to_string(i);
        csv += "\n";
        for (const auto& st : traj.states) {
            csv += std::to_string(st.t) + "," + format_number(st.s) + "," + format_number(cfg.schedule(st.s));
            for (Eigen::Index i = 0; i < st.x.size(); ++i) csv += "," + format_number(st.x[i]);
            csv += "\n";
        }
        detail::write_file(dir / "trajectory.csv", csv);
    }
    return {};
}

/// Replicate plan for a parsed config, with E0 already evaluated.
inline ExperimentPlan make_plan(const RunConfig& cfg, const ProblemSpec& problem, double e0) {
    return ExperimentPlan{problem,     cfg.schedule,      cfg.sigmoid,           cfg.init,
                          cfg.horizon, cfg.n_replicates,  cfg.master_seed,       cfg.checkpoints,
                          cfg.couple_comparator, cfg.comparator_noise, e0,   cfg.divergence_bound};
}

inline constexpr const char* kCheckpointsHeader =
    "t,quantile_50,quantile_90,quantile_99,s_over_t_mean,s_over_t_sd,cov_rel_err,mahalanobis_ks";

/// Replicate experiment; writes summary.json and checkpoints.csv.
/// Exit 5 when more than max_diverged_fraction of replicates diverged, exit 4
/// when the normality check fails at the last checkpoint with at least
/// min_replicates_for_normality replicates.
inline CommandResult cmd_replicate(const RunConfig& cfg, int workers) {
    const ProblemSpec problem = build_problem(cfg.problem);
    const E0Estimate e0 = evaluate_e0(cfg, problem);
    const AsymptoticPrediction pred = predict(problem.jacobian_at_root(), problem.noise().cov(), e0.value);

    const ReplicateSet set = run_replicates(make_plan(cfg, problem, e0.value), workers);
    const auto dir = detail::prepare_output(cfg);

    const auto drift = step_counter_drift(set, e0.value);
    std::vector<std::optional<NormalityReport>> normality(set.checkpoints.size());
    if (pred.stable) {
        for (std::size_t k = 0; k < set.checkpoints.size(); ++k) {
            if (set.n_replicates - set.n_diverged >= 2)
                normality[k] = normality_check(set, pred, set.checkpoints[k], cfg.tolerances.normality);
        }
    }

    std::string csv = std::string(kCheckpointsHeader) + "\n";
    json rows = json::array();
    for (std::size_t k = 0; k < set.checkpoints.size(); ++k) {
        const auto norms = detail::row_norms(set.X[k], set.root, 1.0);
        const double q50 = quantile(norms, 0.5), q90 = quantile(norms, 0.9), q99 = quantile(norms, 0.99);
        const double nan = std::numeric_limits<double>::quiet_NaN();
        const double cre = normality[k] ? normality[k]->cov_rel_err : nan;
        const double ks = normality[k] ? normality[k]->mahalanobis_ks : nan;
        csv += std::to_string(set.checkpoints[k]) + "," + format_number(q50) + "," + format_number(q90) + "," +
               format_number(q99) + "," + format_number(drift[k].mean) + "," + format_number(drift[k].sd) + "," +
               format_number(cre) + "," + format_number(ks) + "\n";
    }
    detail::write_file(dir / "checkpoints.csv", csv);

    const bool too_many_diverged = set.diverged_fraction() > cfg.tolerances.max_diverged_fraction;
    const bool enforce = set.n_replicates >= cfg.tolerances.min_replicates_for_normality;
    const auto& last = normality.back();
    const bool normality_failed = enforce && last && !last->pass;

    json s;
    s["n_replicates"] = set.n_replicates;
    s["n_diverged"] = set.n_diverged;
    s["diverged_fraction"] = set.diverged_fraction();
    s["horizon"] = cfg.horizon;
    s["master_seed"] = cfg.master_seed;
    s["e0"] = e0.value;
    s["e0_stderr"] = e0.standard_error;
    s["e0_method"] = std::string(to_string(e0.method));
    if (cfg.emit.prediction) {
        json p;
        p["stable"] = pred.stable;
        p["W"] = detail::from_matrix(pred.W);
        p["eigen_real_parts"] = detail::from_vector(pred.eigen_real_parts);
        if (pred.V) p["V"] = detail::from_matrix(*pred.V);
        s["prediction"] = p;
    }
    if (set.checkpoints.size() >= 2 && set.n_diverged < set.n_replicates) {
        s["convergence_decreasing"] = convergence_summary(set).decreasing;
    }
    s["drift_rel_dev_final"] = detail::number_or_null(drift.back().rel_dev);
    if (last) {
        s["normality_final"] = {{"t", last->t},
                                {"cov_rel_err", last->cov_rel_err},
                                {"mahalanobis_ks", last->mahalanobis_ks},
                                {"ks_threshold", last->ks_threshold},
                                {"empirical_cov", detail::from_matrix(last->empirical_cov)},
                                {"pass", last->pass},
                                {"enforced", enforce}};
    }
    if (set.Z) {
        const CouplingGap gap = coupling_gap(set);
        json g = json::array();
        for (const auto& r : gap.rows) g.push_back({{"t", r.t}, {"median", r.median}, {"q90", r.q90}});
        s["coupling"] = {{"comparator_noise", cfg.comparator_noise == ComparatorNoise::shared ? "shared" : "independent"},
                         {"rows", g},
                         {"decreasing", gap.decreasing}};
    }
    s["status"] = too_many_diverged ? "diverged" : (normality_failed ? "normality_failed" : "ok");
    if (cfg.emit.summary) detail::write_file(dir / "summary.json", s.dump(2) + "\n");

    if (too_many_diverged) {
        return {kExitNumericError, std::to_string(set.n_diverged) + " of " + std::to_string(set.n_replicates) +
                                       " replicates diverged"};
    }
    if (normality_failed) return {kExitStatisticalFailure, "normality check failed at the last checkpoint"};
    return {};
}

/// Writes validation.json; exit 3 if any item fails.
inline CommandResult cmd_validate(const RunConfig& cfg) {
    const ProblemSpec problem = build_problem(cfg.problem);
    const ValidationReport report = validate_problem(problem, cfg.schedule, cfg.sigmoid, cfg.validation, cfg.master_seed);
    const auto dir = detail::prepare_output(cfg);
    json items = json::array();
    for (const auto& it : report.items) {
        items.push_back({{"id", it.id},
                         {"verdict", std::string(to_string(it.verdict))},
                         {"detail", it.detail},
                         {"witness", it.witness ? detail::from_vector(*it.witness) : json(nullptr)}});
    }
    json j{{"problem", problem.name()}, {"items", items}, {"any_failed", report.any_failed()}};
    detail::write_file(dir / "validation.json", j.dump(2) + "\n");
    if (report.any_failed()) return {kExitAssumptionFailed, "one or more assumption checks failed"};
    return {};
}

/// Maps library exceptions onto the exit-code contract.
template <class Fn>
CommandResult guarded(Fn&& fn) {
    try {
        return fn();
    } catch (const ConfigError& e) {
        return {kExitConfigError, e.what()};
    } catch (const DimensionError& e) {
        return {kExitConfigError, e.what()};
    } catch (const AssumptionError& e) {
        return {kExitAssumptionFailed, e.what()};
    } catch (const NoClosedFormError& e) {
        return {kExitConfigError, e.what()};
    } catch (const NumericError& e) {
        return {kExitNumericError, e.what()};
    }
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config file " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace adaptix
