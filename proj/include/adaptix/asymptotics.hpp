#pragma once

// Limiting covariance of sqrt(t) (x_t - x*). With W = I/2 - phi'(x*)/E0 stable,
// V is the unique solution of
//
//   W (-V) + (-V) W^T = (1/E0)^2 S_xi,
//
// equivalently V = (1/E0)^2 * integral_0^inf e^{W t} S_xi e^{W^T t} dt.

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>
#include <boost/math/quadrature/gauss.hpp>

#include <cmath>
#include <optional>
#include <sstream>
#include <string>

#include "adaptix/error.hpp"
#include "adaptix/noise.hpp"

namespace adaptix {

struct StabilityResult {
    Matrix W;
    bool stable = false;
    Vector eigen_real_parts;
};

/// W = I/2 - jacobian / E0 and its spectrum (dense non-symmetric solver).
inline StabilityResult stability_matrix(const Matrix& jacobian, double e0) {
    if (!(e0 > 0.0) || !std::isfinite(e0)) throw AssumptionError("B4.2", "E0 must be > 0");
    if (jacobian.rows() != jacobian.cols() || jacobian.rows() == 0)
        throw DimensionError("jacobian must be square and non-empty");
    const Eigen::Index n = jacobian.rows();
    StabilityResult r;
    r.W = 0.5 * Matrix::Identity(n, n) - jacobian / e0;
    Eigen::EigenSolver<Matrix> es(r.W, /*computeEigenvectors=*/false);
    if (es.info() != Eigen::Success) throw NumericError("eigenvalue solver did not converge for W");
    r.eigen_real_parts = es.eigenvalues().real();
    std::sort(r.eigen_real_parts.begin(), r.eigen_real_parts.end());
    r.stable = (r.eigen_real_parts.array() < 0.0).all();
    return r;
}

namespace detail {

inline bool is_stable(const Matrix& W) {
    Eigen::EigenSolver<Matrix> es(W, false);
    if (es.info() != Eigen::Success) throw NumericError("eigenvalue solver did not converge for W");
    return (es.eigenvalues().real().array() < 0.0).all();
}

inline void check_lyapunov_inputs(const Matrix& W, const Matrix& S, double e0) {
    if (W.rows() != W.cols() || W.rows() == 0) throw DimensionError("W must be square and non-empty");
    if (S.rows() != W.rows() || S.cols() != W.cols()) throw DimensionError("S_xi must match W");
    if (!(e0 > 0.0) || !std::isfinite(e0)) throw AssumptionError("B4.2", "E0 must be > 0");
    if (!is_stable(W))
        throw AssumptionError("B3.3",
                              "W has an eigenvalue with non-negative real part; the Lyapunov equation has no unique "
                              "positive definite solution");
}

}  // namespace detail

/// Solves for V through the Kronecker-sum system (I kron W + W kron I) vec(-V) =
/// vec((1/E0)^2 S_xi). Output is symmetrised. Throws AssumptionError("B3.3")
/// on an unstable W.
inline Matrix solve_lyapunov(const Matrix& W, const Matrix& S_xi, double e0) {
    detail::check_lyapunov_inputs(W, S_xi, e0);
    const Eigen::Index n = W.rows();
    const Eigen::Index nn = n * n;
    // Column-major vec: vec(A X B) = (B^T kron A) vec(X).
    Matrix K = Matrix::Zero(nn, nn);
    // I kron W
    for (Eigen::Index i = 0; i < n; ++i) K.block(i * n, i * n, n, n) = W;
    // W kron I
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) K.block(i * n, j * n, n, n).diagonal().array() += W(i, j);
    const Matrix Q = S_xi / (e0 * e0);
    const Vector rhs = Eigen::Map<const Vector>(Q.data(), nn);
    Eigen::FullPivLU<Matrix> lu(K);
    if (!lu.isInvertible()) throw NumericError("Kronecker-sum system is singular");
    const Vector neg_v = lu.solve(rhs);
    Matrix V = -Eigen::Map<const Matrix>(neg_v.data(), n, n);
    // Adding +0.0 also clears the -0.0 left by the negation.
    const Matrix Vt = V.transpose();
    return (0.5 * (V + Vt)).array() + 0.0;
}

/// max |W(-V) + (-V)W^T - (1/E0)^2 S_xi|
inline double lyapunov_residual(const Matrix& W, const Matrix& V, const Matrix& S_xi, double e0) {
    const Matrix negV = -V;
    return (W * negV + negV * W.transpose() - S_xi / (e0 * e0)).cwiseAbs().maxCoeff();
}

inline bool is_positive_definite(const Matrix& V) {
    Eigen::LLT<Matrix> llt(V);
    return llt.info() == Eigen::Success;
}

/// Smallest horizon T (doubling from 1/|spectral abscissa|) with ||e^{W T}||_2 <= tol.
inline double oracle_horizon(const Matrix& W, double tol = 1e-9) {
    if (!detail::is_stable(W)) throw AssumptionError("B3.3", "W is not stable");
    Eigen::EigenSolver<Matrix> es(W, false);
    const double abscissa = es.eigenvalues().real().maxCoeff();
    double T = 1.0 / std::abs(abscissa);
    for (int i = 0; i < 64; ++i, T *= 2.0) {
        const Matrix E = (W * T).exp();
        if (E.operatorNorm() <= tol) return T;
    }
    throw NumericError("could not find a horizon where e^{Wt} decays");
}

/// Node count giving panels of width about 0.25 / rho(W) for oracle_horizon(W).
inline int oracle_nodes(const Matrix& W, double t_max) {
    Eigen::EigenSolver<Matrix> es(W, false);
    const double rho = es.eigenvalues().cwiseAbs().maxCoeff();
    const double panels = std::ceil(t_max * rho / 0.25);
    return static_cast<int>(std::max(10.0, 10.0 * panels));
}

/// (1/E0)^2 * integral_0^t_max e^{W t} S e^{W^T t} dt by composite 10-point
/// Gauss-Legendre over n_nodes/10 equal panels; matrix exponentials by Pade
/// scaling-and-squaring. Throws NumericError if ||e^{W t_max}|| > 1e-8.
inline Matrix covariance_integral_oracle(const Matrix& W, const Matrix& S_xi, double e0, double t_max, int n_nodes) {
    detail::check_lyapunov_inputs(W, S_xi, e0);
    if (!(t_max > 0.0)) throw ConfigError("t_max must be > 0");
    const Matrix tail = (W * t_max).exp();
    if (tail.operatorNorm() > 1e-8) {
        std::ostringstream msg;
        msg << "||e^{W t_max}|| = " << tail.operatorNorm() << " > 1e-8 at t_max = " << t_max
            << "; increase t_max";
        throw NumericError(msg.str());
    }
    using Rule = boost::math::quadrature::gauss<double, 10>;
    const int panels = std::max(1, n_nodes / 10);
    const double h = t_max / panels;
    // Node offsets within a panel and their exponentials, shared by every panel.
    const auto& abscissa = Rule::abscissa();
    const auto& weights = Rule::weights();
    std::vector<double> offsets, w;
    for (std::size_t k = 0; k < abscissa.size(); ++k) {
        offsets.push_back(0.5 * h * (1.0 - abscissa[k]));
        w.push_back(0.5 * h * weights[k]);
        if (abscissa[k] != 0.0) {
            offsets.push_back(0.5 * h * (1.0 + abscissa[k]));
            w.push_back(0.5 * h * weights[k]);
        }
    }
    std::vector<Matrix> node_exp;
    node_exp.reserve(offsets.size());
    for (double tau : offsets) node_exp.push_back((W * tau).exp());

    const Eigen::Index n = W.rows();
    Matrix acc = Matrix::Zero(n, n);
    Matrix start = Matrix::Identity(n, n);
    Matrix E(n, n);
    for (int p = 0; p < panels; ++p) {
        if (p > 0) start = (W * (p * h)).exp();
        for (std::size_t k = 0; k < offsets.size(); ++k) {
            E.noalias() = start * node_exp[k];
            acc.noalias() += w[k] * (E * S_xi * E.transpose());
        }
    }
    Matrix V = acc / (e0 * e0);
    return 0.5 * (V + V.transpose());
}

struct AsymptoticPrediction {
    double e0 = 0.0;
    Matrix W;
    /// Present only when stable.
    std::optional<Matrix> V;
    bool stable = false;
    Vector eigen_real_parts;
};

inline AsymptoticPrediction predict(const Matrix& jacobian, const Matrix& S_xi, double e0) {
    const StabilityResult st = stability_matrix(jacobian, e0);
    AsymptoticPrediction p;
    p.e0 = e0;
    p.W = st.W;
    p.stable = st.stable;
    p.eigen_real_parts = st.eigen_real_parts;
    if (st.stable) p.V = solve_lyapunov(st.W, S_xi, e0);
    return p;
}

}  // namespace adaptix
