#pragma once

// Built-in test problems: vector fields with a known root, the Jacobian at the
// root, a noise model, and an optional quadratic Lyapunov function
// V(x) = (x - x*)^T P (x - x*).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <variant>

#include "adaptix/error.hpp"
#include "adaptix/noise.hpp"

namespace adaptix {

/// phi(x) = A (x - x*)
struct LinearField {
    Matrix A;
};

/// phi(x) = A tanh(x - x*), tanh componentwise. Bounded, phi'(x*) = A.
struct TanhField {
    Matrix A;
};

/// phi(x) = a (x - x*) + c (x - x*)^3 in one dimension.
struct Cubic1dField {
    double a = 1.0;
    double c = 1.0;
};

using FieldKind = std::variant<LinearField, TanhField, Cubic1dField>;

/// Radius and margin for the far-field step condition B3.2.
struct FarFieldBound {
    double radius = 10.0;
    double beta0 = 1.0;
};

class ProblemSpec {
public:
    static ProblemSpec linear(const Matrix& A, const Vector& root, NoiseModel noise,
                              std::optional<Matrix> lyap = std::nullopt,
                              std::optional<FarFieldBound> far = FarFieldBound{}) {
        check_square(A, root, "linear");
        return ProblemSpec("linear", LinearField{A}, root, A, std::move(noise),
                           lyap ? std::move(lyap) : std::optional<Matrix>(Matrix::Identity(A.rows(), A.rows())), far);
    }

    static ProblemSpec tanh(const Matrix& A, const Vector& root, NoiseModel noise,
                            std::optional<Matrix> lyap = std::nullopt,
                            std::optional<FarFieldBound> far = FarFieldBound{}) {
        check_square(A, root, "tanh");
        return ProblemSpec("tanh", TanhField{A}, root, A, std::move(noise),
                           lyap ? std::move(lyap) : std::optional<Matrix>(Matrix::Identity(A.rows(), A.rows())), far);
    }

    static ProblemSpec cubic1d(double a, double c, double root, NoiseModel noise,
                               std::optional<Matrix> lyap = std::nullopt,
                               std::optional<FarFieldBound> far = FarFieldBound{}) {
        if (!(a > 0.0) || !(c > 0.0) || !std::isfinite(a) || !std::isfinite(c))
            throw ConfigError("cubic1d needs a > 0 and c > 0");
        Vector r(1);
        r[0] = root;
        Matrix J(1, 1);
        J(0, 0) = a;
        return ProblemSpec("cubic1d", Cubic1dField{a, c}, r, J, std::move(noise),
                           lyap ? std::move(lyap) : std::optional<Matrix>(Matrix::Constant(1, 1, 0.5)), far);
    }

    const std::string& name() const noexcept { return name_; }
    Eigen::Index dim() const noexcept { return root_.size(); }
    const FieldKind& field() const noexcept { return field_; }
    const Vector& root() const noexcept { return root_; }
    const Matrix& jacobian_at_root() const noexcept { return jacobian_; }
    const std::optional<Matrix>& lyap_matrix() const noexcept { return lyap_; }

    /// Copy with no Lyapunov matrix; the P-dependent checks then report not_checked.
    ProblemSpec without_lyapunov() const {
        ProblemSpec copy = *this;
        copy.lyap_.reset();
        return copy;
    }
    const NoiseModel& noise() const noexcept { return noise_; }
    const std::optional<FarFieldBound>& far_field() const noexcept { return far_; }

    /// phi(x) written into `out`. No allocation once `out` has size dim().
    void eval(const Vector& x, Vector& out) const {
        if (x.size() != dim())
            throw DimensionError("field evaluated at a point of dimension " + std::to_string(x.size()) +
                                 ", problem has dimension " + std::to_string(dim()));
        out.resize(dim());
        std::visit(
            [&](const auto& f) {
                using F = std::decay_t<decltype(f)>;
                if constexpr (std::is_same_v<F, LinearField>) {
                    if (dim() == 1) {
                        out[0] = f.A(0, 0) * (x[0] - root_[0]);
                    } else {
                        out.noalias() = f.A * (x - root_);
                    }
                } else if constexpr (std::is_same_v<F, TanhField>) {
                    if (dim() == 1) {
                        out[0] = f.A(0, 0) * std::tanh(x[0] - root_[0]);
                    } else {
                        out.noalias() = f.A * (x - root_).array().tanh().matrix();
                    }
                } else {
                    const double d = x[0] - root_[0];
                    out[0] = f.a * d + f.c * d * d * d;
                }
            },
            field_);
    }

    /// V(x) = (x - x*)^T P (x - x*); requires lyap_matrix().
    double lyapunov(const Vector& x) const {
        const Vector d = x - root_;
        return d.dot(*lyap_ * d);
    }

    /// grad V(x) = 2 P (x - x*); requires lyap_matrix().
    Vector lyapunov_gradient(const Vector& x) const { return 2.0 * (*lyap_) * (x - root_); }

private:
    ProblemSpec(std::string name, FieldKind field, Vector root, Matrix jacobian, NoiseModel noise,
                std::optional<Matrix> lyap, std::optional<FarFieldBound> far)
        : name_(std::move(name)),
          field_(std::move(field)),
          root_(std::move(root)),
          jacobian_(std::move(jacobian)),
          noise_(std::move(noise)),
          lyap_(std::move(lyap)),
          far_(far) {
        if (noise_.dim() != root_.size())
            throw DimensionError("noise dimension " + std::to_string(noise_.dim()) + " does not match problem dimension " +
                                 std::to_string(root_.size()));
        if (lyap_ && (lyap_->rows() != root_.size() || lyap_->cols() != root_.size()))
            throw DimensionError("lyap_matrix must be n x n");
        if (!root_.allFinite()) throw ConfigError("root must be finite");
    }

    static void check_square(const Matrix& A, const Vector& root, std::string_view what) {
        if (A.rows() == 0 || A.rows() != A.cols())
            throw DimensionError(std::string(what) + " field needs a square, non-empty A");
        if (root.size() != A.rows()) throw DimensionError(std::string(what) + " field: root dimension must match A");
        if (!A.allFinite()) throw ConfigError(std::string(what) + " field: A must be finite");
    }

    std::string name_;
    FieldKind field_;
    Vector root_;
    Matrix jacobian_;
    NoiseModel noise_;
    std::optional<Matrix> lyap_;
    std::optional<FarFieldBound> far_;
};

inline Vector field_eval(const ProblemSpec& problem, const Vector& x) {
    Vector out;
    problem.eval(x, out);
    return out;
}

/// Central finite-difference Jacobian of phi at x.
inline Matrix finite_difference_jacobian(const ProblemSpec& problem, const Vector& x, double rel_step = 1e-5) {
    const Eigen::Index n = problem.dim();
    Matrix J(n, n);
    Vector xp = x, xm = x, fp, fm;
    for (Eigen::Index j = 0; j < n; ++j) {
        const double h = rel_step * std::max(1.0, std::abs(x[j]));
        xp[j] = x[j] + h;
        xm[j] = x[j] - h;
        problem.eval(xp, fp);
        problem.eval(xm, fm);
        J.col(j) = (fp - fm) / (xp[j] - xm[j]);
        xp[j] = x[j];
        xm[j] = x[j];
    }
    return J;
}

}  // namespace adaptix
