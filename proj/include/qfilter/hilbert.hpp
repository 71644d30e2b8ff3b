// Copyright 2026 The qfilter Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Dense complex linear algebra on small Hilbert spaces: operators, states,
// linear maps on operators (superoperators) and their exponentials.

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>

namespace qfilter {

using Complex = std::complex<double>;
using Operator = Eigen::MatrixXcd;
using PureState = Eigen::VectorXcd;
using Superop = Eigen::MatrixXcd;
using OpVector = Eigen::VectorXcd;

inline constexpr Complex kI{0.0, 1.0};

class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// A documented precondition or invariant does not hold.
class ContractViolation : public Error {
  public:
    using Error::Error;
};

/// Overflow, loss of positivity, impossible realization and similar
/// failures of a numerical contract.
class NumericalError : public Error {
  public:
    using Error::Error;
};

class ConfigError : public Error {
  public:
    using Error::Error;
};

struct Tolerances {
    double herm = 1e-9;
    double trace = 1e-8;
    /// Relative to the trace of the state being checked.
    double psd = 1e-7;
    double rate = 1e-14;
    /// Jump-time resolution as a fraction of the simulated horizon.
    double time_rel = 1e-10;
};

// ---------------------------------------------------------------------------
// Elementary operations

inline Operator adjoint(const Operator &x) { return x.adjoint(); }

inline Complex trace(const Operator &x) { return x.trace(); }

inline Operator commutator(const Operator &a, const Operator &b) { return a * b - b * a; }

inline Operator anticommutator(const Operator &a, const Operator &b) { return a * b + b * a; }

inline Operator hermitian_part(const Operator &x) { return 0.5 * (x + x.adjoint()); }

/// Largest entry modulus of x - x^dagger.
inline double hermiticity_error(const Operator &x) {
    if (x.size() == 0) return 0.0;
    return (x - x.adjoint()).cwiseAbs().maxCoeff();
}

inline bool all_finite(const Operator &x) { return x.allFinite(); }

inline void require_square(const Operator &x, const char *what) {
    if (x.rows() < 1 || x.rows() != x.cols()) {
        std::ostringstream os;
        os << what << ": expected a non-empty square matrix, got " << x.rows() << "x" << x.cols();
        throw ContractViolation(os.str());
    }
    if (!x.allFinite()) throw ContractViolation(std::string(what) + ": non-finite entries");
}

inline Complex expectation(const Operator &observable, const Operator &rho) {
    // Tr{X rho} without forming the product.
    return (observable.transpose().array() * rho.array()).sum();
}

inline double purity(const Operator &rho) { return (rho.array() * rho.transpose().array()).sum().real(); }

inline Eigen::VectorXd hermitian_eigenvalues(const Operator &x) {
    Eigen::SelfAdjointEigenSolver<Operator> solver(hermitian_part(x), Eigen::EigenvaluesOnly);
    return solver.eigenvalues();
}

/// Smallest eigenvalue of (x + x^dagger)/2. Throws if x is not Hermitian
/// within tol_herm (scaled by max(1, max |x_ij|)).
inline double spectral_floor(const Operator &x, const Tolerances &tol = {}) {
    require_square(x, "spectral_floor");
    const double scale = std::max(1.0, x.cwiseAbs().maxCoeff());
    const double err = hermiticity_error(x);
    if (err > tol.herm * scale) {
        std::ostringstream os;
        os << "spectral_floor: operator is not Hermitian (|x - x^dagger|_max = " << err << ")";
        throw ContractViolation(os.str());
    }
    return hermitian_eigenvalues(x).minCoeff();
}

/// Trace norm of the Hermitian part of x.
inline double trace_norm_hermitian(const Operator &x) { return hermitian_eigenvalues(x).cwiseAbs().sum(); }

/// (1/2)||a - b||_1 for Hermitian arguments.
inline double trace_distance(const Operator &a, const Operator &b) { return 0.5 * trace_norm_hermitian(a - b); }

inline Operator projector(const PureState &psi) { return psi * psi.adjoint(); }

// ---------------------------------------------------------------------------
// Column-major vectorisation: vec(A X B) = (B^T kron A) vec(X).

inline OpVector vec(const Operator &x) { return Eigen::Map<const OpVector>(x.data(), x.size()); }

inline Operator unvec(const OpVector &v, Eigen::Index dim) {
    if (v.size() != dim * dim) throw ContractViolation("unvec: size mismatch");
    return Eigen::Map<const Operator>(v.data(), dim, dim);
}

// ---------------------------------------------------------------------------
// Linear maps on operators

/// Dimension bound below which linear maps are handled through their
/// dim^2 x dim^2 matrix representation.
inline constexpr Eigen::Index kDenseSuperopLimit = 256;

class LinearMap {
  public:
    using Fn = std::function<Operator(const Operator &)>;

    LinearMap() = default;

    /// norm_bound: an upper bound on the induced norm of the map, used to
    /// choose RK4 substeps; non-positive means "estimate it".
    LinearMap(Eigen::Index dim, Fn fn, double norm_bound = -1.0)
        : dim_(dim), fn_(std::move(fn)), norm_bound_(norm_bound) {
        if (dim_ < 1) throw ContractViolation("LinearMap: dimension must be positive");
    }

    static LinearMap from_matrix(Superop m, Eigen::Index dim) {
        if (m.rows() != dim * dim || m.cols() != dim * dim)
            throw ContractViolation("LinearMap::from_matrix: size mismatch");
        auto shared = std::make_shared<const Superop>(std::move(m));
        const double bound = shared->cwiseAbs().colwise().sum().maxCoeff();
        LinearMap out(
            dim, [shared, dim](const Operator &x) { return unvec((*shared) * vec(x), dim); }, bound);
        out.matrix_ = shared;
        return out;
    }

    Operator operator()(const Operator &x) const {
        if (x.rows() != dim_ || x.cols() != dim_) throw ContractViolation("LinearMap: operand dimension mismatch");
        return fn_(x);
    }

    Eigen::Index dim() const { return dim_; }

    /// Matrix on vec(x); built by applying the map to matrix units.
    Superop to_matrix() const {
        if (matrix_) return *matrix_;
        const Eigen::Index n = dim_ * dim_;
        Superop m(n, n);
        Operator unit = Operator::Zero(dim_, dim_);
        for (Eigen::Index col = 0; col < dim_; ++col) {
            for (Eigen::Index row = 0; row < dim_; ++row) {
                unit(row, col) = 1.0;
                m.col(col * dim_ + row) = vec(fn_(unit));
                unit(row, col) = 0.0;
            }
        }
        return m;
    }

    double norm_bound() const {
        if (norm_bound_ > 0.0) return norm_bound_;
        if (dim_ * dim_ <= kDenseSuperopLimit) return to_matrix().cwiseAbs().colwise().sum().maxCoeff();
        return estimate_norm();
    }

  private:
    // Power iteration on x -> G(x); inflated since it approaches the bound
    // from below.
    double estimate_norm() const {
        Operator x = Operator::Ones(dim_, dim_) / double(dim_);
        double est = 0.0;
        for (int it = 0; it < 30; ++it) {
            Operator y = fn_(x);
            const double ny = y.norm();
            if (ny == 0.0) break;
            est = ny / x.norm();
            x = y / ny;
        }
        return 2.0 * est + 1e-12;
    }

    Eigen::Index dim_ = 0;
    Fn fn_;
    double norm_bound_ = -1.0;
    std::shared_ptr<const Superop> matrix_;
};

inline LinearMap operator+(const LinearMap &a, const LinearMap &b) {
    if (a.dim() != b.dim()) throw ContractViolation("LinearMap sum: dimension mismatch");
    return LinearMap(
        a.dim(), [a, b](const Operator &x) { return Operator(a(x) + b(x)); }, a.norm_bound() + b.norm_bound());
}

inline Operator check_finite(Operator x, const char *where) {
    if (!x.allFinite()) throw NumericalError(std::string("numerical overflow in ") + where);
    return x;
}

/// exp(t G) for a time-constant generator G. Small maps use the matrix
/// exponential (Pade scaling-and-squaring) of the vectorised generator;
/// larger ones use RK4 substeps with ||G|| h <= 0.1.
class Semigroup {
  public:
    Semigroup() = default;

    explicit Semigroup(LinearMap generator) : generator_(std::move(generator)) {
        dense_ = generator_.dim() * generator_.dim() <= kDenseSuperopLimit;
        if (dense_) matrix_ = generator_.to_matrix();
        norm_ = dense_ ? matrix_.cwiseAbs().colwise().sum().maxCoeff() : generator_.norm_bound();
        if (dense_) diagonalize();
    }

    bool dense() const { return dense_; }
    Eigen::Index dim() const { return generator_.dim(); }
    double norm_bound() const { return norm_; }
    const Superop &matrix() const { return matrix_; }
    const LinearMap &generator() const { return generator_; }

    /// exp(dt G) as a dim^2 x dim^2 matrix (dense case only).
    Superop exp_matrix(double dt) const {
        if (!dense_) throw ContractViolation("Semigroup::exp_matrix: generator too large for dense form");
        Superop scaled = dt * matrix_;
        return scaled.exp();
    }

    Operator apply(const Operator &x, double dt) const {
        if (dt < 0.0) throw ContractViolation("expm_propagate: negative time step");
        if (dt == 0.0) return x;
        Operator out;
        if (diagonal_) {
            const OpVector y = (dt * eigenvalues_).array().exp() * (eigenvectors_inv_ * vec(x)).array();
            out = unvec(eigenvectors_ * y, dim());
        } else if (dense_) {
            out = unvec(exp_matrix(dt) * vec(x), dim());
        } else {
            out = rk4(x, dt);
        }
        if (!out.allFinite()) {
            std::ostringstream os;
            os << "numerical overflow in expm_propagate (dt = " << dt << ")";
            throw NumericalError(os.str());
        }
        return out;
    }

    int rk4_substeps(double dt) const { return std::max(1, int(std::ceil(norm_ * dt / 0.1))); }

  private:
    // Arbitrary-duration steps go through an eigendecomposition when the
    // eigenvector basis is well conditioned; defective generators keep the
    // Pade exponential.
    void diagonalize() {
        constexpr double kMaxCondition = 1e4;
        Eigen::ComplexEigenSolver<Superop> solver(matrix_);
        if (solver.info() != Eigen::Success) return;
        const Superop &v = solver.eigenvectors();
        Eigen::PartialPivLU<Superop> lu(v);
        const Superop inv = lu.inverse();
        if (!inv.allFinite()) return;
        const double cond = v.cwiseAbs().colwise().sum().maxCoeff() * inv.cwiseAbs().colwise().sum().maxCoeff();
        if (!(cond < kMaxCondition)) return;
        const double residual = (v * solver.eigenvalues().asDiagonal() * inv - matrix_).cwiseAbs().maxCoeff();
        if (!(residual <= 1e-12 * std::max(1.0, norm_))) return;
        eigenvalues_ = solver.eigenvalues();
        eigenvectors_ = v;
        eigenvectors_inv_ = inv;
        diagonal_ = true;
    }

    Operator rk4(const Operator &x, double dt) const {
        const int n = rk4_substeps(dt);
        const double h = dt / n;
        Operator y = x;
        for (int i = 0; i < n; ++i) {
            const Operator k1 = generator_(y);
            const Operator k2 = generator_(y + 0.5 * h * k1);
            const Operator k3 = generator_(y + 0.5 * h * k2);
            const Operator k4 = generator_(y + h * k3);
            y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        return y;
    }

    LinearMap generator_;
    bool dense_ = false;
    Superop matrix_;
    double norm_ = 0.0;
    bool diagonal_ = false;
    OpVector eigenvalues_;
    Superop eigenvectors_;
    Superop eigenvectors_inv_;
};

/// A fixed-duration step of a semigroup, cached for repeated use.
class Propagator {
  public:
    Propagator() = default;
    Propagator(const Semigroup &semigroup, double dt) : semigroup_(&semigroup), dt_(dt) {
        if (dt < 0.0) throw ContractViolation("Propagator: negative time step");
        if (semigroup.dense()) matrix_ = semigroup.exp_matrix(dt);
    }

    double dt() const { return dt_; }

    Operator apply(const Operator &x) const {
        if (semigroup_->dense()) return unvec(matrix_ * vec(x), semigroup_->dim());
        return semigroup_->apply(x, dt_);
    }

  private:
    const Semigroup *semigroup_ = nullptr;
    double dt_ = 0.0;
    Superop matrix_;
};

inline Operator expm_propagate(const LinearMap &generator, const Operator &x, double dt) {
    if (dt < 0.0) throw ContractViolation("expm_propagate: negative time step");
    if (dt == 0.0) return x;
    return Semigroup(generator).apply(x, dt);
}

// ---------------------------------------------------------------------------
// Standard operators

namespace ops {

/// Pauli matrices in the basis (|1>, |0>), |1> the excited state.
inline Operator sigma0() { return Operator::Identity(2, 2); }
inline Operator sigma1() {
    Operator m(2, 2);
    m << 0, 1, 1, 0;
    return m;
}
inline Operator sigma2() {
    Operator m(2, 2);
    m << 0, -kI, kI, 0;
    return m;
}
inline Operator sigma3() {
    Operator m(2, 2);
    m << 1, 0, 0, -1;
    return m;
}
/// sigma_+ |0> = |1>.
inline Operator sigma_plus() { return 0.5 * (sigma1() + kI * sigma2()); }
inline Operator sigma_minus() { return 0.5 * (sigma1() - kI * sigma2()); }

/// Truncated annihilation operator on Fock levels 0..cutoff-1.
inline Operator annihilation(Eigen::Index cutoff) {
    if (cutoff < 2) throw ContractViolation("annihilation: cutoff must be at least 2");
    Operator a = Operator::Zero(cutoff, cutoff);
    for (Eigen::Index n = 1; n < cutoff; ++n) a(n - 1, n) = std::sqrt(double(n));
    return a;
}

inline PureState basis(Eigen::Index dim, Eigen::Index k) {
    PureState v = PureState::Zero(dim);
    v(k) = 1.0;
    return v;
}

/// Coherent state |alpha> truncated to `cutoff` levels and renormalised.
inline PureState coherent(Eigen::Index cutoff, Complex alpha) {
    PureState v(cutoff);
    Complex amp = std::exp(-0.5 * std::norm(alpha));
    for (Eigen::Index n = 0; n < cutoff; ++n) {
        v(n) = amp;
        amp *= alpha / std::sqrt(double(n + 1));
    }
    return v / v.norm();
}

/// Thermal state with mean occupation nbar, truncated and renormalised.
inline Operator thermal(Eigen::Index cutoff, double nbar) {
    Operator rho = Operator::Zero(cutoff, cutoff);
    const double q = nbar / (1.0 + nbar);
    double p = 1.0 / (1.0 + nbar);
    for (Eigen::Index n = 0; n < cutoff; ++n) {
        rho(n, n) = p;
        p *= q;
    }
    return rho / rho.trace().real();
}

/// D(alpha) on the truncated space, exp(alpha a^dagger - alpha^* a).
inline Operator displacement(Eigen::Index cutoff, Complex alpha) {
    const Operator a = annihilation(cutoff);
    Operator gen = alpha * a.adjoint() - std::conj(alpha) * a;
    return gen.exp();
}

}  // namespace ops

}  // namespace qfilter
