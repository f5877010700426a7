#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <string_view>
#include <utility>

#include "adaptix/error.hpp"
#include "adaptix/rng.hpp"

namespace adaptix {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

enum class NoiseKind { gaussian, uniform_ball, scaled_rademacher };

inline std::string_view to_string(NoiseKind kind) {
    switch (kind) {
        case NoiseKind::gaussian: return "gaussian";
        case NoiseKind::uniform_ball: return "uniform_ball";
        case NoiseKind::scaled_rademacher: return "scaled_rademacher";
    }
    return "?";
}

/// Zero-mean measurement noise xi_t. Immutable after construction.
///
/// gaussian:          N(0, cov); cov may be singular (zero covariance gives
///                    noiseless runs while still consuming one draw per step).
/// uniform_ball:      uniform on the ball of the given radius; cov = r^2/(n+2) I.
/// scaled_rademacher: independent components +-scale_i; cov = diag(scale^2).
///                    Discrete, so it does not satisfy B1.2; unit tests only.
class NoiseModel {
public:
    static NoiseModel gaussian(const Matrix& cov) {
        if (cov.rows() != cov.cols() || cov.rows() == 0)
            throw DimensionError("gaussian noise covariance must be square and non-empty");
        if (!cov.allFinite() || (cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + cov.cwiseAbs().maxCoeff()))
            throw ConfigError("gaussian noise covariance must be finite and symmetric");
        NoiseModel m(NoiseKind::gaussian, cov.rows());
        m.cov_ = 0.5 * (cov + cov.transpose());
        Eigen::LLT<Matrix> llt(m.cov_);
        if (llt.info() == Eigen::Success) {
            m.factor_ = llt.matrixL();
            m.definite_ = true;
        } else {
            Eigen::SelfAdjointEigenSolver<Matrix> eig(m.cov_);
            if (eig.eigenvalues().minCoeff() < -1e-12 * (1.0 + m.cov_.cwiseAbs().maxCoeff()))
                throw ConfigError("gaussian noise covariance must be positive semi-definite");
            m.factor_ = eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
        }
        return m;
    }

    static NoiseModel standard_gaussian(Eigen::Index dim) {
        return gaussian(Matrix::Identity(dim, dim));
    }

    static NoiseModel zero(Eigen::Index dim) { return gaussian(Matrix::Zero(dim, dim)); }

    static NoiseModel uniform_ball(Eigen::Index dim, double radius) {
        if (dim <= 0) throw DimensionError("uniform_ball noise needs dim >= 1");
        if (!(radius > 0.0) || !std::isfinite(radius)) throw ConfigError("uniform_ball radius must be > 0");
        NoiseModel m(NoiseKind::uniform_ball, dim);
        m.radius_ = radius;
        m.cov_ = Matrix::Identity(dim, dim) * (radius * radius / static_cast<double>(dim + 2));
        m.definite_ = true;
        return m;
    }

    static NoiseModel scaled_rademacher(const Vector& scales) {
        if (scales.size() == 0) throw DimensionError("scaled_rademacher noise needs dim >= 1");
        if (!scales.allFinite() || (scales.array() < 0.0).any())
            throw ConfigError("scaled_rademacher scales must be finite and >= 0");
        NoiseModel m(NoiseKind::scaled_rademacher, scales.size());
        m.scales_ = scales;
        m.cov_ = scales.array().square().matrix().asDiagonal();
        m.definite_ = (scales.array() > 0.0).all();
        return m;
    }

    NoiseKind kind() const noexcept { return kind_; }
    Eigen::Index dim() const noexcept { return dim_; }
    /// Analytic covariance S_xi of the sampler.
    const Matrix& cov() const noexcept { return cov_; }
    double radius() const noexcept { return radius_; }
    const Vector& scales() const noexcept { return scales_; }
    /// Non-degenerate support (full-rank covariance).
    bool definite() const noexcept { return definite_; }
    /// Has a density, so events of the form {xi_1^T xi_2 = 0} are null.
    bool continuous() const noexcept { return kind_ != NoiseKind::scaled_rademacher && definite_; }
    /// Distribution invariant under xi -> -xi.
    bool sign_symmetric() const noexcept { return true; }
    /// Gives positive mass to every open ball near the origin.
    bool conforms_to_support_condition() const noexcept {
        return kind_ != NoiseKind::scaled_rademacher && definite_;
    }

    /// Writes one draw into `out` (resized to dim()).
    void sample(CounterRng& rng, Vector& out) const {
        Vector scratch;
        sample(rng, out, scratch);
    }

    /// Allocation-free variant once `out` and `scratch` have been sized.
    void sample(CounterRng& rng, Vector& out, Vector& scratch) const {
        out.resize(dim_);
        switch (kind_) {
            case NoiseKind::gaussian: {
                if (dim_ == 1) {
                    out[0] = factor_(0, 0) * rng.normal();
                    return;
                }
                scratch.resize(dim_);
                for (Eigen::Index i = 0; i < dim_; ++i) scratch[i] = rng.normal();
                out.noalias() = factor_ * scratch;
                return;
            }
            case NoiseKind::uniform_ball: {
                double norm2 = 0.0;
                do {
                    norm2 = 0.0;
                    for (Eigen::Index i = 0; i < dim_; ++i) {
                        out[i] = rng.normal();
                        norm2 += out[i] * out[i];
                    }
                } while (norm2 == 0.0);
                const double r = radius_ * std::pow(rng.uniform01(), 1.0 / static_cast<double>(dim_));
                out *= r / std::sqrt(norm2);
                return;
            }
            case NoiseKind::scaled_rademacher:
                for (Eigen::Index i = 0; i < dim_; ++i) out[i] = scales_[i] * rng.sign();
                return;
        }
    }

private:
    NoiseModel(NoiseKind kind, Eigen::Index dim) : kind_(kind), dim_(dim) {}

    NoiseKind kind_;
    Eigen::Index dim_;
    Matrix cov_;
    Matrix factor_;
    Vector scales_;
    double radius_ = 0.0;
    bool definite_ = false;
};

/// A replayable sequence xi_1, xi_2, ... Copying a stream forks it: both copies
/// yield the same remaining values, which is how coupled runs share noise.
class NoiseStream {
public:
    NoiseStream(NoiseModel model, std::uint64_t seed, std::uint64_t index = 0,
                StreamPurpose purpose = StreamPurpose::noise)
        : model_(std::move(model)), rng_(seed, index, purpose) {}

    const NoiseModel& model() const noexcept { return model_; }
    Eigen::Index dim() const noexcept { return model_.dim(); }

    void next(Vector& out) { model_.sample(rng_, out, scratch_); }

    Vector next() {
        Vector out;
        next(out);
        return out;
    }

private:
    NoiseModel model_;
    CounterRng rng_;
    Vector scratch_;
};

}  // namespace adaptix
