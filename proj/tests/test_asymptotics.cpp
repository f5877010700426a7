#include <gtest/gtest.h>

#include <cmath>

#include "adaptix/asymptotics.hpp"
#include "adaptix/rng.hpp"

using namespace adaptix;

namespace {

Matrix oracle(const Matrix& W, const Matrix& S, double e0) {
    const double t = oracle_horizon(W);
    return covariance_integral_oracle(W, S, e0, t, oracle_nodes(W, t));
}

// Stable W = -(B B^T + c I) + (C - C^T) with random B, C, and SPD S = D D^T + I/2.
std::pair<Matrix, Matrix> random_system(Eigen::Index n, std::uint64_t seed) {
    CounterRng rng(seed, static_cast<std::uint64_t>(n), StreamPurpose::synthetic);
    auto draw = [&](Eigen::Index r, Eigen::Index c) {
        Matrix m(r, c);
        for (Eigen::Index i = 0; i < r; ++i)
            for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.normal();
        return m;
    };
    const Matrix B = draw(n, n) / std::sqrt(static_cast<double>(n)), C = draw(n, n) * 0.5,
                 D = draw(n, n) / std::sqrt(static_cast<double>(n));
    Matrix W = -(B * B.transpose() + 0.1 * Matrix::Identity(n, n)) + (C - C.transpose());
    Matrix S = D * D.transpose() + 0.5 * Matrix::Identity(n, n);
    return {W, S};
}

}  // namespace

TEST(Stability, Examples) {
    const auto a = stability_matrix(Matrix::Identity(2, 2), 1.0);
    EXPECT_TRUE(a.stable);
    EXPECT_EQ(a.W, -0.5 * Matrix::Identity(2, 2));
    EXPECT_EQ(a.eigen_real_parts, Vector::Constant(2, -0.5));

    const auto b = stability_matrix(0.4 * Matrix::Identity(3, 3), 1.0);
    EXPECT_FALSE(b.stable);
    EXPECT_NEAR(b.eigen_real_parts.maxCoeff(), 0.1, 1e-15);

    const auto c = stability_matrix(Matrix::Constant(1, 1, 2.0), 1.0);
    EXPECT_TRUE(c.stable);
    EXPECT_EQ(c.W(0, 0), -1.5);
}

TEST(Stability, ComplexEigenvalues) {
    Matrix J(2, 2);
    J << 1.0, 5.0, -5.0, 1.0;  // eigenvalues 1 +- 5i
    const auto r = stability_matrix(J, 1.0);
    EXPECT_TRUE(r.stable);
    EXPECT_NEAR(r.eigen_real_parts[0], -0.5, 1e-12);
    EXPECT_NEAR(r.eigen_real_parts[1], -0.5, 1e-12);
}

TEST(Stability, RejectsBadInputs) {
    EXPECT_THROW(stability_matrix(Matrix::Identity(2, 2), 0.0), AssumptionError);
    EXPECT_THROW(stability_matrix(Matrix::Identity(2, 3), 1.0), DimensionError);
}

TEST(Lyapunov, IdentityExample) {
    const Matrix V = solve_lyapunov(-0.5 * Matrix::Identity(3, 3), Matrix::Identity(3, 3), 1.0);
    EXPECT_LE((V - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Lyapunov, ScalarClosedForm) {
    for (double a : {0.3, 1.0, 2.0, 7.5})
        for (double e0 : {0.25, 0.5, 1.0})
            for (double s2 : {0.5, 1.0, 3.0}) {
                if (!(a > e0 / 2)) continue;
                const auto st = stability_matrix(Matrix::Constant(1, 1, a), e0);
                const double V = solve_lyapunov(st.W, Matrix::Constant(1, 1, s2), e0)(0, 0);
                const double closed = s2 / (e0 * (2 * a - e0));
                EXPECT_NEAR(V, closed, 1e-12 * closed) << a << " " << e0 << " " << s2;
            }
    const auto st = stability_matrix(Matrix::Constant(1, 1, 2.0), 1.0);
    EXPECT_NEAR(solve_lyapunov(st.W, Matrix::Constant(1, 1, 1.0), 1.0)(0, 0), 1.0 / 3.0, 1e-12);
}

TEST(Lyapunov, DiagonalW) {
    Matrix W = Matrix::Zero(2, 2);
    W.diagonal() << -1.0, -2.0;
    Matrix S(2, 2);
    S << 1.0, 0.5, 0.5, 2.0;
    const Matrix V = solve_lyapunov(W, S, 1.0);
    EXPECT_NEAR(V(0, 0), 0.5, 1e-14);
    EXPECT_NEAR(V(1, 1), 0.5, 1e-14);
    EXPECT_NEAR(V(0, 1), 0.5 / 3.0, 1e-14);
    EXPECT_EQ(V(0, 1), V(1, 0));
}

TEST(Lyapunov, DiagonalWComponentFormula) {
    // V_ij = S_ij / (E0^2 (-w_i - w_j))
    const Eigen::Index n = 5;
    Vector w(n);
    w << -0.2, -0.7, -1.0, -3.0, -11.0;
    Matrix W = w.asDiagonal();
    const auto sys = random_system(n, 99);
    const Matrix& S = sys.second;
    const double e0 = 0.4;
    const Matrix V = solve_lyapunov(W, S, e0);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) {
            const double expect = S(i, j) / (e0 * e0 * (-w[i] - w[j]));
            EXPECT_NEAR(V(i, j), expect, 1e-12 * std::abs(expect) + 1e-15);
        }
}

TEST(Lyapunov, RefusesUnstable) {
    try {
        solve_lyapunov(0.1 * Matrix::Identity(2, 2), Matrix::Identity(2, 2), 1.0);
        FAIL();
    } catch (const AssumptionError& e) {
        EXPECT_EQ(e.assumption(), "B3.3");
    }
}

TEST(Lyapunov, ResidualSymmetryDefiniteness) {
    for (Eigen::Index n : {1, 2, 3, 5, 10})
        for (std::uint64_t seed = 0; seed < 4; ++seed) {
            const auto [W, S] = random_system(n, seed);
            const double e0 = 0.5 + 0.25 * static_cast<double>(seed);
            const Matrix V = solve_lyapunov(W, S, e0);
            EXPECT_EQ((V - V.transpose()).cwiseAbs().maxCoeff(), 0.0);
            EXPECT_TRUE(is_positive_definite(V));
            EXPECT_LE(lyapunov_residual(W, V, S, e0), 1e-10 * std::max(1.0, S.cwiseAbs().maxCoeff() / (e0 * e0)));
        }
}

TEST(Lyapunov, ScalingLaw) {
    const auto [W, S] = random_system(4, 7);
    const Matrix V1 = solve_lyapunov(W, S, 0.5);
    const Matrix V2 = solve_lyapunov(W, 2.0 * S, 0.5);
    EXPECT_LE((V2 - 2.0 * V1).cwiseAbs().maxCoeff(), 1e-13 * V1.cwiseAbs().maxCoeff());
}

TEST(Oracle, IdentityAndScalar) {
    EXPECT_LE((oracle(-0.5 * Matrix::Identity(2, 2), Matrix::Identity(2, 2), 1.0) - Matrix::Identity(2, 2))
                  .cwiseAbs()
                  .maxCoeff(),
              1e-9);
    EXPECT_NEAR(oracle(Matrix::Constant(1, 1, -1.5), Matrix::Constant(1, 1, 1.0), 1.0)(0, 0), 1.0 / 3.0, 1e-9);
}

TEST(Oracle, AgreesWithSolverOnRandom3x3) {
    const auto [W, S] = random_system(3, 2024);
    const Matrix V = solve_lyapunov(W, S, 1.0);
    EXPECT_LE((oracle(W, S, 1.0) - V).cwiseAbs().maxCoeff(), 1e-8 * std::max(1.0, V.cwiseAbs().maxCoeff()));
}

TEST(Oracle, RejectsShortHorizon) {
    EXPECT_THROW(covariance_integral_oracle(-0.5 * Matrix::Identity(1, 1), Matrix::Identity(1, 1), 1.0, 5.0, 100),
                 NumericError);
}

TEST(Predict, OmitsCovarianceWhenUnstable) {
    const auto p = predict(0.4 * Matrix::Identity(2, 2), Matrix::Identity(2, 2), 1.0);
    EXPECT_FALSE(p.stable);
    EXPECT_FALSE(p.V.has_value());
    const auto q = predict(Matrix::Identity(2, 2), Matrix::Identity(2, 2), 1.0);
    ASSERT_TRUE(q.V.has_value());
    EXPECT_LE((*q.V - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-14);
}
