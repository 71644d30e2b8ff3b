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

// Diffusive (homodyne/heterodyne-type) detection: the nonlinear filter for
// the a-posteriori state, its linear counterpart, the wave-function form,
// and the output processes they generate or consume.

#include "qfilter/counting.hpp"

#include <Eigen/Sparse>

namespace qfilter {

enum class DiffusiveScheme {
    /// Completely positive step phi -> M phi M^dagger + dt sum K phi K^dagger
    /// with M = I + heff dt + sum c_j Z_j dY_j plus the second-order Ito
    /// term; preserves positivity, and purity for Hamiltonian-form models.
    kraus,
    /// Euler-Maruyama, strong order 1/2.
    euler,
    /// Euler-Maruyama plus the Milstein correction for commuting noise
    /// fields, strong order 1 when the channels' noise fields commute.
    milstein,
    /// Exact a-priori propagator e^{L dt} plus the Euler innovation term.
    /// The innovations have zero conditional mean, so the ensemble mean
    /// equals the master evolution for any dt.
    exponential,
};

inline const char *to_string(DiffusiveScheme s) {
    switch (s) {
        case DiffusiveScheme::kraus: return "kraus";
        case DiffusiveScheme::euler: return "euler";
        case DiffusiveScheme::milstein: return "milstein";
        case DiffusiveScheme::exponential: return "exponential";
    }
    return "?";
}

inline DiffusiveScheme parse_scheme(const std::string &name) {
    for (auto s : {DiffusiveScheme::kraus, DiffusiveScheme::euler, DiffusiveScheme::milstein, DiffusiveScheme::exponential})
        if (name == to_string(s)) return s;
    throw ConfigError("unknown diffusive scheme '" + name + "'");
}

struct DiffusiveOptions {
    /// Integration step; 0 selects span/10^4 rounded to divide the grid cells.
    double dt = 0.0;
    std::size_t snapshot_every = 1;
    DiffusiveScheme scheme = DiffusiveScheme::kraus;
    /// Clip negative eigenvalues instead of failing (recorded in the result).
    bool clip_negative = false;
    /// Check positivity every this many integration steps (0: grid points
    /// only). The kraus scheme is positive by construction, so grid points
    /// suffice unless a finer record of the spectrum is wanted.
    std::size_t positivity_stride = 0;
    /// Allowed negativity for the euler, milstein and exponential schemes is
    /// tol.psd + psd_per_dt * dt: they move pure states off the positive cone
    /// by O(dt) per step. The kraus scheme is held to tol.psd.
    double psd_per_dt = 50.0;
    Tolerances tol;
    bool keep_path = false;
    bool track_purity = false;
};

/// Output increments on the integration grid. In complexified models the
/// channel pairs (f = 1, f = i) combine into dW = (dY_re + i dY_im) / 2.
struct OutputPath {
    TimeGrid fine;
    Eigen::MatrixXd dY;
    Eigen::MatrixXd dM;
    bool complexified = false;

    std::size_t steps() const { return std::size_t(dY.rows()); }
    std::size_t channels() const { return std::size_t(dY.cols()); }

    Eigen::MatrixXcd dW() const {
        if (!complexified) throw ContractViolation("OutputPath::dW: path is not complexified");
        Eigen::MatrixXcd w(dY.rows(), dY.cols() / 2);
        for (Eigen::Index p = 0; p < w.cols(); ++p)
            w.col(p) = 0.5 * (dY.col(2 * p).cast<Complex>() + kI * dY.col(2 * p + 1).cast<Complex>());
        return w;
    }
};

namespace detail {

inline std::size_t substeps_for(const TimeGrid &grid, double dt) {
    const double cell = grid.dt();
    if (dt == 0.0) return std::max<std::size_t>(1, std::size_t(std::llround(cell / (grid.span() / 1e4))));
    if (!(dt > 0.0)) throw ConfigError("dt must be positive");
    const auto n = std::llround(cell / dt);
    if (n < 1 || std::abs(double(n) * dt - cell) > 1e-9 * cell)
        throw ConfigError("dt must divide the grid cell length");
    return std::size_t(n);
}

/// Per-step precomputation for one model slice.
struct DiffusiveSlice {
    ModelSlice s;
    std::vector<double> f_norm2;
    std::vector<Operator> z_adj;
    /// Z_u Z_u, and Z_u Z_v + Z_v Z_u for u < v in row-major pair order.
    std::vector<Operator> z_square;
    std::vector<Operator> z_sym;

    explicit DiffusiveSlice(ModelSlice slice) : s(std::move(slice)) {
        for (const Complex &f : s.f) f_norm2.push_back(std::norm(f));
        for (const Operator &z : s.unique_z) {
            z_adj.push_back(z.adjoint());
            z_square.push_back(z * z);
        }
        for (std::size_t u = 0; u < s.unique_z.size(); ++u)
            for (std::size_t v = u + 1; v < s.unique_z.size(); ++v)
                z_sym.push_back(s.unique_z[u] * s.unique_z[v] + s.unique_z[v] * s.unique_z[u]);
        // Truncated-oscillator operators are banded; sparse products pay off
        // once the dimension is moderate.
        sparse = s.heff.rows() >= kSparseMinDim;
        if (sparse)
            for (const auto *group : {&s.unobserved, &s.counting})
                for (const auto &ch : *group)
                    for (const Operator &k : ch) sparse_kraus.push_back(k.sparseView());
    }

    using SparseOp = Eigen::SparseMatrix<Complex, Eigen::RowMajor>;
    static constexpr Eigen::Index kSparseMinDim = 8;
    bool sparse = false;
    std::vector<SparseOp> sparse_kraus;

    /// L rho for Hermitian rho.
    Operator liouvillian_hermitian(const Operator &rho) const {
        Operator a = s.heff * rho;
        Operator out = a + a.adjoint();
        for (const auto *group : {&s.unobserved, &s.counting})
            for (const auto &ch : *group)
                for (const Operator &k : ch) out.noalias() += k * rho * k.adjoint();
        for (std::size_t u = 0; u < s.unique_z.size(); ++u)
            out.noalias() += s.unique_z_multiplicity[u] * (s.unique_z[u] * rho * z_adj[u]);
        return out;
    }

    /// B_j x = (f_j^* Z_j x + f_j x Z_j^dagger) / |f_j|^2 for Hermitian x.
    Operator noise_field(std::size_t j, const Operator &x) const {
        const Operator a = (std::conj(s.f[j]) / f_norm2[j]) * (s.z[j] * x);
        return a + a.adjoint();
    }

    /// M(dY) of the kraus scheme.
    Operator kraus_step_operator(double dt, const Eigen::VectorXd &dY) const {
        const Eigen::Index dim = s.heff.rows();
        Operator m = Operator::Identity(dim, dim) + dt * s.heff;
        const std::size_t nu = s.unique_z.size();
        std::vector<Complex> w(nu, Complex(0.0)), itoc(nu, Complex(0.0));
        for (std::size_t j = 0; j < s.z.size(); ++j) {
            const Complex c = std::conj(s.f[j]) / f_norm2[j];
            w[s.z_index[j]] += c * dY(Eigen::Index(j));
            itoc[s.z_index[j]] += c * c * f_norm2[j] * dt;
        }
        std::size_t pair = 0;
        for (std::size_t u = 0; u < nu; ++u) {
            m.noalias() += w[u] * s.unique_z[u];
            m.noalias() += (0.5 * (w[u] * w[u] - itoc[u])) * z_square[u];
            for (std::size_t v = u + 1; v < nu; ++v) m.noalias() += (0.5 * w[u] * w[v]) * z_sym[pair++];
        }
        return m;
    }

    /// M x M^dagger + dt sum K x K^dagger.
    Operator kraus_step(double dt, const Eigen::VectorXd &dY, const Operator &x) const {
        const Operator m = kraus_step_operator(dt, dY);
        if (sparse) {
            const SparseOp ms = m.sparseView();
            const Operator mx = ms * x;
            Operator out = mx * ms.adjoint();
            for (const SparseOp &k : sparse_kraus) {
                const Operator kx = k * x;
                out.noalias() += dt * (kx * k.adjoint());
            }
            return out;
        }
        const Operator mx = m * x;
        Operator out = mx * m.adjoint();
        for (const auto *group : {&s.unobserved, &s.counting})
            for (const auto &ch : *group)
                for (const Operator &k : ch) out.noalias() += dt * (k * x * k.adjoint());
        return out;
    }

    /// e^{L dt} x; the propagator for the last dt is cached.
    Operator drift_step(double dt, const Operator &x) const {
        if (!drift_) drift_ = std::make_shared<Semigroup>(liouvillian_map(s));
        if (!drift_step_ || drift_dt_ != dt) {
            drift_step_ = std::make_shared<Propagator>(*drift_, dt);
            drift_dt_ = dt;
        }
        return drift_step_->apply(x);
    }

    mutable std::shared_ptr<Semigroup> drift_;
    mutable std::shared_ptr<Propagator> drift_step_;
    mutable double drift_dt_ = -1.0;

    /// Tr{B_j x} for Hermitian x.
    double noise_trace(std::size_t j, const Operator &x) const {
        return 2.0 * (std::conj(s.f[j]) * expectation(s.z[j], x)).real() / f_norm2[j];
    }
};

}  // namespace detail

/// Result of one nonlinear step: the new state and the increment of
/// ln Tr phi for the linear filter started from the same state.
struct DiffusiveStepResult {
    Operator rho;
    double log_c_increment = 0.0;
    double min_eigenvalue = 0.0;
    bool clipped = false;
};

namespace detail {

/// One step of the nonlinear filter given innovations dM_j (not yet
/// renormalised or checked).
inline Operator nonlinear_diffusive_increment(const DiffusiveSlice &d, const Operator &rho, double dt,
                                              const Eigen::VectorXd &dM, DiffusiveScheme scheme,
                                              const std::vector<Complex> &z_mean, double *trace_of_linear) {
    const ModelSlice &s = d.s;
    if (scheme == DiffusiveScheme::kraus) {
        Eigen::VectorXd dY(dM.size());
        for (std::size_t j = 0; j < s.z.size(); ++j)
            dY(Eigen::Index(j)) = dM(Eigen::Index(j)) + 2.0 * (std::conj(s.f[j]) * z_mean[s.z_index[j]]).real() * dt;
        Operator out = d.kraus_step(dt, dY, rho);
        if (trace_of_linear) *trace_of_linear = out.trace().real();
        return out;
    }
    // Noise fields are grouped by distinct Z: sum_j G_j dM_j = A + A^dagger.
    const bool exponential = scheme == DiffusiveScheme::exponential;
    Operator a = exponential ? Operator(Operator::Zero(rho.rows(), rho.cols())) : Operator(dt * (s.heff * rho));
    std::vector<Complex> w(s.unique_z.size(), Complex(0.0));
    for (std::size_t j = 0; j < s.z.size(); ++j) w[s.z_index[j]] += std::conj(s.f[j]) * dM(Eigen::Index(j)) / d.f_norm2[j];
    for (std::size_t u = 0; u < s.unique_z.size(); ++u) {
        if (w[u] == Complex(0.0)) continue;
        a.noalias() += w[u] * (s.unique_z[u] * rho);
        a -= (w[u] * z_mean[u]) * rho;
    }
    Operator out = (exponential ? d.drift_step(dt, rho) : rho) + a + a.adjoint();
    if (!exponential) {
        for (const auto *group : {&s.unobserved, &s.counting})
            for (const auto &ch : *group)
                for (const Operator &k : ch) out.noalias() += dt * (k * rho * k.adjoint());
        for (std::size_t u = 0; u < s.unique_z.size(); ++u)
            out.noalias() += (dt * s.unique_z_multiplicity[u]) * (s.unique_z[u] * rho * d.z_adj[u]);
    }

    const std::size_t n = s.z.size();
    std::vector<double> b(n);
    for (std::size_t j = 0; j < n; ++j) b[j] = d.noise_trace(j, rho);
    double lin_trace = 1.0;
    for (std::size_t j = 0; j < n; ++j) lin_trace += b[j] * (dM(Eigen::Index(j)) + b[j] * d.f_norm2[j] * dt);

    if (scheme == DiffusiveScheme::milstein && n > 0) {
        // G_j = B_j rho - b_j rho; correction (1/2) sum_ij Q_ij DG_i[G_j]
        // with Q_ij = dM_i dM_j - delta_ij |f_j|^2 dt and
        // DG_i[x] = B_i x - Tr{B_i x} rho - b_i x.
        std::vector<Operator> g(n);
        for (std::size_t j = 0; j < n; ++j) g[j] = d.noise_field(j, rho) - b[j] * rho;
        Operator corr = Operator::Zero(rho.rows(), rho.cols());
        for (std::size_t i = 0; i < n; ++i) {
            Operator gamma = Operator::Zero(rho.rows(), rho.cols());
            for (std::size_t j = 0; j < n; ++j) {
                double q = dM(Eigen::Index(i)) * dM(Eigen::Index(j));
                if (i == j) q -= d.f_norm2[j] * dt;
                gamma += q * g[j];
            }
            corr += d.noise_field(i, gamma) - d.noise_trace(i, gamma) * rho - b[i] * gamma;
        }
        out += 0.5 * corr;
        // The linear filter's Milstein term changes its trace too.
        if (trace_of_linear) {
            double extra = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    const double yi = dM(Eigen::Index(i)) + b[i] * d.f_norm2[i] * dt;
                    const double yj = dM(Eigen::Index(j)) + b[j] * d.f_norm2[j] * dt;
                    double q = yi * yj;
                    if (i == j) q -= d.f_norm2[j] * dt;
                    if (q != 0.0) extra += q * d.noise_trace(i, d.noise_field(j, rho));
                }
            lin_trace += 0.5 * extra;
        }
    }
    if (trace_of_linear) *trace_of_linear = lin_trace;
    return out;
}

inline std::vector<Complex> z_means(const ModelSlice &s, const Operator &rho) {
    std::vector<Complex> z(s.unique_z.size());
    for (std::size_t u = 0; u < z.size(); ++u) z[u] = expectation(s.unique_z[u], rho);
    return z;
}

inline Operator clip_to_state(const Operator &rho) {
    Eigen::SelfAdjointEigenSolver<Operator> es(hermitian_part(rho));
    Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0);
    Operator out = es.eigenvectors() * ev.cast<Complex>().asDiagonal() * es.eigenvectors().adjoint();
    return out / out.trace().real();
}

}  // namespace detail

/// One step of the nonlinear diffusive filter driven by the outputs dY,
/// renormalised and Hermitised, with a positivity check.
inline DiffusiveStepResult diffusive_step(const MeasurementModel &m, const Operator &rho, double t, double dt,
                                          const Eigen::VectorXd &dY, DiffusiveScheme scheme = DiffusiveScheme::kraus,
                                          const Tolerances &tol = {}, bool clip_negative = false,
                                          double psd_per_dt = 50.0) {
    require_dim(m, rho, "diffusive_step");
    if (m.detection() == DetectionMode::counting) throw ContractViolation("diffusive_step: model is in counting mode");
    if (!(dt > 0.0)) throw ContractViolation("diffusive_step: dt must be positive");
    if (std::size_t(dY.size()) != m.diffusive.size()) throw ContractViolation("diffusive_step: dY size mismatch");
    const detail::DiffusiveSlice d(m.slice(t));
    const auto zm = detail::z_means(d.s, rho);
    Eigen::VectorXd dM(dY.size());
    for (std::size_t j = 0; j < d.s.z.size(); ++j)
        dM(Eigen::Index(j)) = dY(Eigen::Index(j)) - 2.0 * (std::conj(d.s.f[j]) * zm[d.s.z_index[j]]).real() * dt;
    double lin_trace = 1.0;
    Operator next = detail::nonlinear_diffusive_increment(d, rho, dt, dM, scheme, zm, &lin_trace);
    next = hermitian_part(next / next.trace().real());
    DiffusiveStepResult res;
    res.min_eigenvalue = hermitian_eigenvalues(next).minCoeff();
    if (res.min_eigenvalue < -(tol.psd + (scheme == DiffusiveScheme::kraus ? 0.0 : psd_per_dt * dt))) {
        if (!clip_negative) {
            std::ostringstream os;
            os << "diffusive_step: state lost positivity at t = " << t + dt << " (min eigenvalue "
               << res.min_eigenvalue << "); retry with dt = " << dt / 10;
            throw NumericalError(os.str());
        }
        next = detail::clip_to_state(next);
        res.clipped = true;
    }
    res.rho = std::move(next);
    res.log_c_increment = std::log(lin_trace);
    return res;
}

struct DiffusiveRun {
    TrajectoryRecord record;
    OutputPath path;
};

/// Nonlinear diffusive filter on a grid, simulating outputs under the
/// physical measure (innovations drawn as independent Gaussians) or
/// replaying a supplied output path.
class DiffusiveSimulator {
  public:
    DiffusiveSimulator(const MeasurementModel &m, TimeGrid grid, DiffusiveOptions opts = {})
        : model_(&m), grid_(grid), opts_(opts) {
        m.validate();
        grid_.validate();
        if (m.detection() == DetectionMode::counting) throw ContractViolation("diffusive simulation on a counting model");
        substeps_ = detail::substeps_for(grid_, opts_.dt);
        dt_ = grid_.dt() / double(substeps_);
        fine_ = TimeGrid{grid_.t0, grid_.t1, grid_.steps * substeps_};
        const std::size_t ncell = m.is_time_constant() ? 1 : m.cells();
        for (std::size_t c = 0; c < ncell; ++c) slices_.emplace_back(m.slice_cell(c));
    }

    double dt() const { return dt_; }
    std::size_t substeps() const { return substeps_; }
    const TimeGrid &fine_grid() const { return fine_; }

    DiffusiveRun run(const Operator &rho0, std::uint64_t seed, std::uint64_t index, const OutputPath *replay = nullptr) {
        require_dim(*model_, rho0, "simulate_diffusive_trajectory");
        require_state(rho0, opts_.tol, "simulate_diffusive_trajectory: initial state");
        const std::size_t nch = model_->diffusive.size();
        if (replay && (replay->steps() != fine_.steps || replay->channels() != nch))
            throw ContractViolation("replayed output path does not match the integration grid");
        rng::Stream stream(seed, index);
        DiffusiveRun out;
        TrajectoryRecord &rec = out.record;
        rec.mode = DetectionMode::diffusive;
        rec.grid = grid_;
        rec.seed = seed;
        rec.index = index;
        rec.outputs = Eigen::MatrixXd::Zero(grid_.size(), nch);
        rec.compensator = Eigen::MatrixXd::Zero(grid_.size(), nch);
        rec.log_c.assign(grid_.size(), 0.0);
        rec.min_eigenvalue = std::numeric_limits<double>::infinity();
        if (opts_.keep_path || replay) {
            out.path.fine = fine_;
            out.path.complexified = model_->complexified;
            out.path.dY = Eigen::MatrixXd::Zero(fine_.steps, nch);
            out.path.dM = Eigen::MatrixXd::Zero(fine_.steps, nch);
        }

        Operator rho = hermitian_part(rho0 / rho0.trace().real());
        Eigen::VectorXd y = Eigen::VectorXd::Zero(nch), comp = Eigen::VectorXd::Zero(nch), dM(nch);
        double log_c = 0.0;
        const double sqrt_dt = std::sqrt(dt_);

        auto record_point = [&](std::size_t i) {
            rec.outputs.row(i) = y.transpose();
            rec.compensator.row(i) = comp.transpose();
            rec.log_c[i] = log_c;
            if (detail::is_snapshot(i, grid_.steps, opts_.snapshot_every)) {
                rec.snapshot_steps.push_back(i);
                rec.snapshots.push_back(rho);
            }
        };
        auto check = [&](double t) {
            const double ev = hermitian_eigenvalues(rho).minCoeff();
            rec.min_eigenvalue = std::min(rec.min_eigenvalue, ev);
            if (ev < -(opts_.tol.psd + (opts_.scheme == DiffusiveScheme::kraus ? 0.0 : opts_.psd_per_dt * dt_))) {
                if (!opts_.clip_negative) {
                    std::ostringstream os;
                    os << "diffusive filter lost positivity at t = " << t << " (min eigenvalue " << ev
                       << "); retry with dt = " << dt_ / 10;
                    throw NumericalError(os.str());
                }
                rho = detail::clip_to_state(rho);
                rec.clipped = true;
            }
        };
        record_point(0);

        std::size_t k = 0;
        for (std::size_t i = 0; i < grid_.steps; ++i) {
            for (std::size_t sub = 0; sub < substeps_; ++sub, ++k) {
                const double t = fine_.time(k);
                const detail::DiffusiveSlice &d = slices_[model_->is_time_constant() ? 0 : model_->cell_of(t)];
                const auto zm = detail::z_means(d.s, rho);
                stream.set_step(std::uint32_t(k));
                for (std::size_t j = 0; j < nch; ++j) {
                    const double mean_rate = 2.0 * (std::conj(d.s.f[j]) * zm[d.s.z_index[j]]).real();
                    double dy;
                    if (replay) {
                        dy = replay->dY(Eigen::Index(k), Eigen::Index(j));
                        dM(Eigen::Index(j)) = dy - mean_rate * dt_;
                    } else {
                        dM(Eigen::Index(j)) = std::sqrt(d.f_norm2[j]) * sqrt_dt * stream.normal();
                        dy = mean_rate * dt_ + dM(Eigen::Index(j));
                    }
                    y(Eigen::Index(j)) += dy;
                    comp(Eigen::Index(j)) += mean_rate * dt_;
                    if (out.path.dY.size()) {
                        out.path.dY(Eigen::Index(k), Eigen::Index(j)) = dy;
                        out.path.dM(Eigen::Index(k), Eigen::Index(j)) = dM(Eigen::Index(j));
                    }
                }
                double lin_trace = 1.0;
                Operator next = detail::nonlinear_diffusive_increment(d, rho, dt_, dM, opts_.scheme, zm, &lin_trace);
                rho = hermitian_part(next / next.trace().real());
                log_c += std::log(lin_trace);
                if (opts_.track_purity) rec.min_purity = std::min(rec.min_purity, purity(rho));
                if (opts_.positivity_stride > 0 && (k + 1) % opts_.positivity_stride == 0) check(fine_.time(k + 1));
            }
            if (opts_.positivity_stride == 0) check(grid_.time(i + 1));
            if (!rho.allFinite()) throw NumericalError("diffusive filter produced non-finite entries");
            record_point(i + 1);
        }
        rec.final_state = rho;
        if (!std::isfinite(rec.min_eigenvalue)) rec.min_eigenvalue = hermitian_eigenvalues(rho).minCoeff();
        return out;
    }

  private:
    const MeasurementModel *model_;
    TimeGrid grid_;
    DiffusiveOptions opts_;
    std::size_t substeps_ = 1;
    double dt_ = 0.0;
    TimeGrid fine_;
    std::vector<detail::DiffusiveSlice> slices_;
};

inline DiffusiveRun simulate_diffusive_trajectory(const MeasurementModel &m, const Operator &rho0,
                                                  const TimeGrid &grid, std::uint64_t seed, std::uint64_t index,
                                                  const DiffusiveOptions &opts = {}) {
    DiffusiveSimulator sim(m, grid, opts);
    return sim.run(rho0, seed, index);
}

/// Linear filter along a given output path, sampled on `grid` (whose cells
/// the path's integration grid subdivides).
inline LinearFilterResult linear_diffusive_evolve(const MeasurementModel &m, const Operator &phi0,
                                                  const OutputPath &path, const TimeGrid &grid,
                                                  DiffusiveScheme scheme = DiffusiveScheme::kraus,
                                                  const Tolerances &tol = {}) {
    m.validate();
    require_dim(m, phi0, "linear_diffusive_evolve");
    if (m.detection() == DetectionMode::counting) throw ContractViolation("linear_diffusive_evolve: counting model");
    if (path.channels() != m.diffusive.size()) throw ContractViolation("linear_diffusive_evolve: channel mismatch");
    if (path.steps() % grid.steps != 0 || path.fine.t0 != grid.t0 || path.fine.t1 != grid.t1)
        throw ContractViolation("linear_diffusive_evolve: path grid does not subdivide the sampling grid");
    (void)tol;
    const std::size_t per = path.steps() / grid.steps;
    const double dt = path.fine.dt();
    const std::size_t ncell = m.is_time_constant() ? 1 : m.cells();
    std::vector<detail::DiffusiveSlice> slices;
    for (std::size_t c = 0; c < ncell; ++c) slices.emplace_back(m.slice_cell(c));
    const std::size_t n = m.diffusive.size();

    LinearFilterResult out;
    out.grid = grid;
    Operator phi = hermitian_part(phi0);
    int exponent = 0;
    auto push = [&]() {
        const double tr = phi.trace().real();
        if (!(tr > 0.0)) throw NumericalError("linear_diffusive_evolve: c(t) <= 0");
        out.mantissa.push_back(phi);
        out.exponent.push_back(exponent);
        out.log_c.push_back(detail::log_trace(phi, exponent));
    };
    push();
    std::size_t k = 0;
    for (std::size_t i = 0; i < grid.steps; ++i) {
        for (std::size_t sub = 0; sub < per; ++sub, ++k) {
            const double t = path.fine.time(k);
            const detail::DiffusiveSlice &d = slices[m.is_time_constant() ? 0 : m.cell_of(t)];
            if (scheme == DiffusiveScheme::kraus) {
                phi = hermitian_part(d.kraus_step(dt, path.dY.row(Eigen::Index(k)).transpose(), phi));
                detail::renormalize_pow2(phi, exponent);
                continue;
            }
            Operator next = scheme == DiffusiveScheme::exponential ? d.drift_step(dt, phi)
                                                                   : Operator(phi + dt * d.liouvillian_hermitian(phi));
            std::vector<Operator> bphi(n);
            for (std::size_t j = 0; j < n; ++j) {
                bphi[j] = d.noise_field(j, phi);
                next += path.dY(Eigen::Index(k), Eigen::Index(j)) * bphi[j];
            }
            if (scheme == DiffusiveScheme::milstein) {
                for (std::size_t a = 0; a < n; ++a) {
                    Operator gamma = Operator::Zero(phi.rows(), phi.cols());
                    for (std::size_t b = 0; b < n; ++b) {
                        double q = path.dY(Eigen::Index(k), Eigen::Index(a)) * path.dY(Eigen::Index(k), Eigen::Index(b));
                        if (a == b) q -= d.f_norm2[b] * dt;
                        gamma += q * bphi[b];
                    }
                    next += 0.5 * d.noise_field(a, gamma);
                }
            }
            phi = std::move(next);
            detail::renormalize_pow2(phi, exponent);
        }
        push();
    }
    return out;
}

inline void require_hamiltonian_form(const MeasurementModel &m, const char *what) {
    if (!m.dissipators.empty()) throw ContractViolation(std::string(what) + ": model has unobserved dissipation");
}

/// One Euler-Maruyama step of the diffusive wave-function equation,
/// renormalised; dY are the channel outputs.
inline PureState pure_diffusive_step(const MeasurementModel &m, const PureState &psi, double t, double dt,
                                     const Eigen::VectorXd &dY) {
    require_hamiltonian_form(m, "pure_diffusive_step");
    if (psi.size() != m.dim) throw ContractViolation("pure_diffusive_step: dimension mismatch");
    if (std::size_t(dY.size()) != m.diffusive.size()) throw ContractViolation("pure_diffusive_step: dY size mismatch");
    const ModelSlice s = m.slice(t);
    PureState drift = -kI * (s.hamiltonian * psi);
    PureState noise = PureState::Zero(m.dim);
    for (std::size_t j = 0; j < s.z.size(); ++j) {
        const Operator &z = s.z[j];
        const PureState zpsi = z * psi;
        const Complex zm = psi.dot(zpsi);
        drift -= 0.5 * (z.adjoint() * zpsi - 2.0 * std::conj(zm) * zpsi + std::norm(zm) * psi);
        const double dm = dY(Eigen::Index(j)) - 2.0 * (std::conj(s.f[j]) * zm).real() * dt;
        noise += (dm / s.f[j]) * (zpsi - zm * psi);
    }
    PureState out = psi + drift * dt + noise;
    return out / out.norm();
}

}  // namespace qfilter
