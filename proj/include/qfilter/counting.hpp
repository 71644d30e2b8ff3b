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

// Photon-counting trajectories. The production engine alternates exact
// no-count evolution with jumps whose times are drawn by inverting the
// survival probability; Euler forms of the filter equations are provided
// for cross-checks.

#include "qfilter/model.hpp"
#include "qfilter/rng.hpp"

#include <limits>
#include <optional>

namespace qfilter {

struct JumpEvent {
    double t = 0.0;
    std::size_t channel = 0;
    bool operator==(const JumpEvent &) const = default;
};

/// A counting trajectory: events in (t0, horizon].
struct CountRealization {
    std::vector<JumpEvent> events;
    double t0 = 0.0;
    double horizon = 1.0;

    void validate(std::size_t channels) const {
        double last = t0;
        for (const auto &e : events) {
            if (!(e.t > last) || e.t > horizon)
                throw ContractViolation("count realization: event times must increase strictly inside (t0, horizon]");
            if (e.channel >= channels) throw ContractViolation("count realization: invalid channel index");
            last = e.t;
        }
    }
};

/// One trajectory of either engine, sampled on a grid. In counting mode the
/// outputs are N_j(t); in diffusive mode they are Y_j(t). The compensator
/// is the integral of the a-posteriori output rate, so outputs minus
/// compensator is the innovating martingale.
struct TrajectoryRecord {
    DetectionMode mode = DetectionMode::counting;
    TimeGrid grid;
    std::uint64_t seed = 0;
    std::uint64_t index = 0;
    std::vector<JumpEvent> events;
    Eigen::MatrixXd outputs;
    Eigen::MatrixXd compensator;
    /// ln Tr phi(t) of the associated linear filter on the grid.
    std::vector<double> log_c;
    std::vector<std::size_t> snapshot_steps;
    std::vector<Operator> snapshots;
    Operator final_state;
    double min_purity = 1.0;
    double min_eigenvalue = 0.0;
    bool clipped = false;

    std::size_t channels() const { return std::size_t(outputs.cols()); }
    double martingale(std::size_t i, std::size_t j) const { return outputs(i, j) - compensator(i, j); }
    std::size_t total_events() const { return events.size(); }
};

struct CountingOptions {
    /// Keep the state every `snapshot_every` grid points (0: none). The
    /// first and last grid points are always kept when non-zero.
    std::size_t snapshot_every = 1;
    /// Time scale of the linear filter; it cancels from physical results.
    double tau = 1.0;
    Tolerances tol;
    std::size_t max_events = 10'000'000;
    bool track_purity = false;
};

namespace detail {

inline bool is_snapshot(std::size_t i, std::size_t steps, std::size_t every) {
    if (every == 0) return false;
    return i == 0 || i == steps || i % every == 0;
}

inline std::size_t draw_channel(const std::vector<double> &rates, double u, double tol_rate, double t) {
    double total = 0.0;
    for (double r : rates) total += std::max(r, 0.0);
    if (!(total > tol_rate)) {
        std::ostringstream os;
        os << "jump at t = " << t << " but every channel rate is below " << tol_rate;
        throw NumericalError(os.str());
    }
    double acc = 0.0;
    const double target = u * total;
    for (std::size_t j = 0; j < rates.size(); ++j) {
        acc += std::max(rates[j], 0.0);
        if (target < acc) return j;
    }
    for (std::size_t j = rates.size(); j-- > 0;)
        if (rates[j] > 0.0) return j;
    return rates.size() - 1;
}

}  // namespace detail

/// Exact no-count evolution of a counting model with cached propagators.
class NoCountEvolution {
  public:
    explicit NoCountEvolution(const MeasurementModel &m) : model_(&m), evo_(m, no_count_map) {
        if (m.detection() == DetectionMode::diffusive) throw ContractViolation("no-count evolution requires counting mode");
        for (std::size_t cell = 0; cell < m.cells(); ++cell) {
            if (cell > 0 && m.is_time_constant()) break;
            slices_.push_back(m.slice_cell(cell));
        }
    }

    const MeasurementModel &model() const { return *model_; }
    const ModelSlice &slice_at(double t) const { return slices_.at(model_->is_time_constant() ? 0 : model_->cell_of(t)); }
    const ModelSlice &slice_cell(std::size_t cell) const { return slices_.at(cell); }

    Operator propagate(const Operator &phi, double a, double b, bool cache = false) {
        return evo_.propagate(phi, a, b, cache);
    }

    /// Total observed rate Tr{sum_j R_j x} at time t.
    double total_rate(const Operator &x, double t) const {
        const ModelSlice &s = slice_at(t);
        double r = 0.0;
        for (std::size_t j = 0; j < s.rates.size(); ++j) r += s.rate(j, x);
        return r;
    }

    /// Solves Tr{S(s, a) rho} = target for s in (a, b], given
    /// Tr{S(b, a) rho} <= target < 1. Returns (s, S(s, a) rho).
    std::pair<double, Operator> invert_survival(const Operator &rho, double a, double b, double target, double tol_time) {
        Operator phi_hi = propagate(rho, a, b);
        const double s_b = phi_hi.trace().real();
        if (s_b >= target) return {b, phi_hi};
        double lo = a, hi = b;
        // Exponential interpolation for the initial guess, then Newton on
        // the survival curve safeguarded by bisection.
        double s = (s_b > 0.0 && target > 0.0) ? a + (b - a) * std::log(target) / std::log(s_b) : 0.5 * (a + b);
        for (int it = 0; it < 200; ++it) {
            if (!(s > lo && s < hi)) s = 0.5 * (lo + hi);
            Operator phi = propagate(rho, a, s);
            const double f = phi.trace().real() - target;
            if (std::abs(f) <= 4.0 * std::numeric_limits<double>::epsilon() * target) return {s, phi};
            if (f > 0.0) {
                lo = s;
            } else {
                hi = s;
                phi_hi = phi;
            }
            if (hi - lo <= tol_time) break;
            const double slope = -total_rate(phi, s);
            s = slope < 0.0 ? s - f / slope : 0.5 * (lo + hi);
        }
        return {hi, phi_hi};
    }

  private:
    const MeasurementModel *model_;
    PiecewiseEvolution evo_;
    std::vector<ModelSlice> slices_;
};

struct NoJumpResult {
    Operator phi;
    double survival = 1.0;
};

/// S(t1, t0) phi and the survival factor Tr{S phi} / Tr{phi}.
inline NoJumpResult no_jump_propagate(const MeasurementModel &m, const Operator &phi, double t0, double t1,
                                      const Tolerances &tol = {}) {
    require_dim(m, phi, "no_jump_propagate");
    if (t1 < t0) throw ContractViolation("no_jump_propagate: t1 < t0");
    NoCountEvolution evo(m);
    NoJumpResult out;
    out.phi = evo.propagate(phi, t0, t1);
    const double tr0 = phi.trace().real();
    out.survival = out.phi.trace().real() / tr0;
    if (!(out.survival >= -tol.trace && out.survival <= 1.0 + tol.trace)) {
        std::ostringstream os;
        os << "no_jump_propagate: survival " << out.survival << " outside [0, 1]";
        throw NumericalError(os.str());
    }
    return out;
}

/// Normalised J_j rho / Tr{J_j rho}.
inline Operator jump_apply(const MeasurementModel &m, const Operator &rho, double t, std::size_t j,
                           const Tolerances &tol = {}) {
    require_dim(m, rho, "jump_apply");
    if (j >= m.counting.size()) throw ContractViolation("jump_apply: invalid channel");
    const ModelSlice s = m.slice(t);
    const Operator out = s.jump(j, rho);
    const double r = out.trace().real();
    if (!(r > tol.rate)) {
        std::ostringstream os;
        os << "jump_apply: zero-probability jump on channel " << j << " at t = " << t << " (rate " << r << ")";
        throw NumericalError(os.str());
    }
    return hermitian_part(out / r);
}

struct SampledJump {
    double t = 0.0;
    std::size_t channel = 0;
    Operator state;
};

/// First jump after t0 for the survival level u: the survival is marched
/// over `substeps` equal steps and the bracketing step is refined to
/// tol.time_rel * (horizon - t0). Empty when no jump occurs by the horizon.
inline std::optional<SampledJump> sample_jump(const MeasurementModel &m, const Operator &rho, double t0, double horizon,
                                              double u, rng::Stream &stream, std::size_t substeps = 64,
                                              const Tolerances &tol = {}) {
    require_dim(m, rho, "sample_jump");
    if (!(u > 0.0 && u < 1.0)) throw ContractViolation("sample_jump: u must lie in (0, 1)");
    if (!(horizon > t0)) throw ContractViolation("sample_jump: horizon must exceed t0");
    if (m.counting.empty()) return std::nullopt;
    NoCountEvolution evo(m);
    const double h = (horizon - t0) / double(substeps);
    Operator phi = rho / rho.trace().real();
    double a = t0;
    double log_survival = 0.0;
    const double log_u = std::log(u);
    for (std::size_t i = 0; i < substeps; ++i) {
        const double b = i + 1 == substeps ? horizon : t0 + double(i + 1) * h;
        Operator next = evo.propagate(phi, a, b);
        const double s = next.trace().real();
        if (log_survival + std::log(s) > log_u) {
            log_survival += std::log(s);
            phi = next / s;
            a = b;
            continue;
        }
        const double target = std::exp(log_u - log_survival);
        auto [t_star, phi_star] = evo.invert_survival(phi, a, b, target, tol.time_rel * (horizon - t0));
        const Operator pre = phi_star / phi_star.trace().real();
        const ModelSlice &sl = evo.slice_at(t_star);
        std::vector<double> rates;
        for (std::size_t j = 0; j < sl.rates.size(); ++j) rates.push_back(sl.rate(j, pre));
        const std::size_t ch = detail::draw_channel(rates, stream.uniform(), tol.rate, t_star);
        return SampledJump{t_star, ch, jump_apply(m, pre, t_star, ch, tol)};
    }
    return std::nullopt;
}

/// Exact-alternation counting trajectory engine for one model and grid.
class CountingSimulator {
  public:
    CountingSimulator(const MeasurementModel &m, TimeGrid grid, CountingOptions opts = {})
        : model_(&m), grid_(grid), opts_(opts), evo_(m) {
        m.validate();
        grid_.validate();
        if (m.detection() == DetectionMode::diffusive) throw ContractViolation("counting simulation on a diffusive model");
        if (!(opts_.tau > 0.0)) throw ConfigError("tau must be positive");
    }

    const TimeGrid &grid() const { return grid_; }

    TrajectoryRecord run(const Operator &rho0, std::uint64_t seed, std::uint64_t index) {
        require_dim(*model_, rho0, "simulate_counting_trajectory");
        require_state(rho0, opts_.tol, "simulate_counting_trajectory: initial state");
        const std::size_t nch = model_->counting.size();
        rng::Stream stream(seed, index);
        TrajectoryRecord rec;
        rec.mode = DetectionMode::counting;
        rec.grid = grid_;
        rec.seed = seed;
        rec.index = index;
        rec.outputs = Eigen::MatrixXd::Zero(grid_.size(), nch);
        rec.compensator = Eigen::MatrixXd::Zero(grid_.size(), nch);
        rec.log_c.assign(grid_.size(), 0.0);

        Operator rho = hermitian_part(rho0 / rho0.trace().real());
        Eigen::VectorXd counts = Eigen::VectorXd::Zero(nch);
        Eigen::VectorXd comp = Eigen::VectorXd::Zero(nch);
        double log_c = 0.0;
        const double tol_time = opts_.tol.time_rel * grid_.span();
        const double log_tau = std::log(opts_.tau);

        std::uint32_t event_no = 0;
        stream.set_step(event_no);
        double log_u = std::log(stream.uniform());
        double log_survival = 0.0;

        auto record_point = [&](std::size_t i) {
            rec.outputs.row(i) = counts.transpose();
            rec.compensator.row(i) = comp.transpose();
            rec.log_c[i] = log_c;
            if (detail::is_snapshot(i, grid_.steps, opts_.snapshot_every)) {
                rec.snapshot_steps.push_back(i);
                rec.snapshots.push_back(rho);
            }
            if (opts_.track_purity) rec.min_purity = std::min(rec.min_purity, purity(rho));
        };
        record_point(0);

        for (std::size_t i = 0; i < grid_.steps; ++i) {
            double a = grid_.time(i);
            const double b = grid_.time(i + 1);
            bool fresh = true;  // `a` is a grid point
            while (true) {
                const Operator phi_b = evo_.propagate(rho, a, b, fresh);
                const double s = phi_b.trace().real();
                if (nch == 0 || log_survival + std::log(s) > log_u) {
                    add_compensator(rho, phi_b, a, b, -std::log(s), comp);
                    log_survival += std::log(s);
                    log_c += std::log(s);
                    rho = hermitian_part(phi_b / s);
                    break;
                }
                const double target = std::exp(log_u - log_survival);
                auto [t_star, phi_star] = evo_.invert_survival(rho, a, b, target, tol_time);
                const double s_star = phi_star.trace().real();
                const Operator pre = hermitian_part(phi_star / s_star);
                add_compensator(rho, pre, a, t_star, -std::log(s_star), comp);
                log_c += std::log(s_star);

                const ModelSlice &sl = evo_.slice_at(t_star);
                std::vector<double> rates(nch);
                for (std::size_t j = 0; j < nch; ++j) rates[j] = sl.rate(j, pre);
                const std::size_t ch = detail::draw_channel(rates, stream.uniform(), opts_.tol.rate, t_star);
                Operator post = sl.jump(ch, pre);
                const double r = post.trace().real();
                if (!(r > opts_.tol.rate)) {
                    std::ostringstream os;
                    os << "zero-probability jump on channel " << ch << " at t = " << t_star;
                    throw NumericalError(os.str());
                }
                rho = hermitian_part(post / r);
                log_c += log_tau + std::log(r);
                counts(ch) += 1.0;
                rec.events.push_back({t_star, ch});
                if (opts_.track_purity) rec.min_purity = std::min(rec.min_purity, purity(rho));
                if (rec.events.size() > opts_.max_events) throw NumericalError("counting trajectory exceeded max_events");

                stream.set_step(++event_no);
                log_u = std::log(stream.uniform());
                log_survival = 0.0;
                a = t_star;
                fresh = false;
                if (a >= b) break;
            }
            record_point(i + 1);
        }
        rec.final_state = rho;
        rec.min_eigenvalue = hermitian_eigenvalues(rho).minCoeff();
        return rec;
    }

  private:
    // Splits the exact integrated total rate -ln(survival) between channels
    // in proportion to trapezoidal weights of the individual rates.
    void add_compensator(const Operator &rho_a, const Operator &phi_b, double a, double b, double total,
                         Eigen::VectorXd &comp) const {
        const std::size_t nch = comp.size();
        if (nch == 0) return;
        if (nch == 1) {
            comp(0) += total;
            return;
        }
        const ModelSlice &sa = evo_.slice_at(a);
        const ModelSlice &sb = evo_.slice_at(b);
        const double tr_b = phi_b.trace().real();
        Eigen::VectorXd w(nch);
        for (std::size_t j = 0; j < nch; ++j) w(j) = sa.rate(j, rho_a) + sb.rate(j, phi_b) / tr_b;
        const double sum = w.sum();
        if (sum > 0.0) comp += total * w / sum;
    }

    const MeasurementModel *model_;
    TimeGrid grid_;
    CountingOptions opts_;
    NoCountEvolution evo_;
};

inline TrajectoryRecord simulate_counting_trajectory(const MeasurementModel &m, const Operator &rho0,
                                                     const TimeGrid &grid, std::uint64_t seed, std::uint64_t index,
                                                     const CountingOptions &opts = {}) {
    CountingSimulator sim(m, grid, opts);
    return sim.run(rho0, seed, index);
}

// ---------------------------------------------------------------------------
// Linear filter

/// phi(t) on a grid, stored as mantissa * 2^exponent so that long
/// trajectories neither overflow nor underflow.
struct LinearFilterResult {
    TimeGrid grid;
    std::vector<Operator> mantissa;
    std::vector<int> exponent;
    std::vector<double> log_c;

    Operator state(std::size_t i) const { return hermitian_part(mantissa[i] / mantissa[i].trace().real()); }
    Operator phi(std::size_t i) const { return std::ldexp(1.0, exponent[i]) * mantissa[i]; }
    double c(std::size_t i) const { return std::exp(log_c[i]); }
};

namespace detail {

/// Rescales x by a power of two so that its trace lies in [0.5, 1).
inline void renormalize_pow2(Operator &x, int &exponent) {
    const double tr = x.trace().real();
    if (!(tr > 0.0) || !std::isfinite(tr)) return;
    int e = 0;
    std::frexp(tr, &e);
    if (e != 0) {
        x *= std::ldexp(1.0, -e);
        exponent += e;
    }
}

inline double log_trace(const Operator &x, int exponent) {
    return std::log(x.trace().real()) + double(exponent) * std::numbers::ln2;
}

}  // namespace detail

/// phi(t) along a given realization: no-count evolution between events,
/// phi -> tau J_j phi at events, phi(t0) = rho0; c(t) = Tr phi(t).
inline LinearFilterResult linear_counting_evolve(const MeasurementModel &m, const Operator &rho0,
                                                 const CountRealization &realization, const TimeGrid &grid,
                                                 double tau = 1.0, const Tolerances &tol = {}) {
    m.validate();
    grid.validate();
    require_dim(m, rho0, "linear_counting_evolve");
    require_state(rho0, tol, "linear_counting_evolve: initial state");
    realization.validate(m.counting.size());
    if (!(tau > 0.0)) throw ContractViolation("linear_counting_evolve: tau must be positive");
    NoCountEvolution evo(m);
    LinearFilterResult out;
    out.grid = grid;
    Operator phi = rho0;
    int exponent = 0;
    auto push = [&]() {
        const double tr = phi.trace().real();
        if (!(tr > 0.0)) throw NumericalError("linear_counting_evolve: c(t) <= 0, realization is impossible");
        out.mantissa.push_back(phi);
        out.exponent.push_back(exponent);
        out.log_c.push_back(detail::log_trace(phi, exponent));
    };
    push();
    std::size_t next = 0;
    const auto &ev = realization.events;
    for (std::size_t i = 0; i < grid.steps; ++i) {
        double a = grid.time(i);
        const double b = grid.time(i + 1);
        bool fresh = true;
        while (next < ev.size() && ev[next].t <= b) {
            if (ev[next].t < a) throw ContractViolation("linear_counting_evolve: event before grid start");
            phi = evo.propagate(phi, a, ev[next].t, false);
            phi = tau * evo.slice_at(ev[next].t).jump(ev[next].channel, phi);
            detail::renormalize_pow2(phi, exponent);
            a = ev[next].t;
            fresh = false;
            ++next;
        }
        phi = evo.propagate(phi, a, b, fresh);
        detail::renormalize_pow2(phi, exponent);
        push();
    }
    return out;
}

/// Events of a record as a realization.
inline CountRealization realization_of(const TrajectoryRecord &rec) {
    CountRealization r;
    r.events = rec.events;
    r.t0 = rec.grid.t0;
    r.horizon = rec.grid.t1;
    return r;
}

// ---------------------------------------------------------------------------
// Euler forms, for verification of the Ito equations

/// One explicit Euler step of the nonlinear counting filter, renormalised.
/// dN_j is 0 or 1, with at most one non-zero entry.
inline Operator nonlinear_counting_step(const MeasurementModel &m, const Operator &rho, double t, double dt,
                                        const std::vector<int> &dN, const Tolerances &tol = {}) {
    require_dim(m, rho, "nonlinear_counting_step");
    if (dN.size() != m.counting.size()) throw ContractViolation("nonlinear_counting_step: dN size mismatch");
    int total = 0;
    for (int d : dN) {
        if (d != 0 && d != 1) throw ContractViolation("nonlinear_counting_step: dN entries must be 0 or 1");
        total += d;
    }
    if (total > 1) throw ContractViolation("nonlinear_counting_step: at most one count per step");
    const ModelSlice s = m.slice(t);
    Operator out = rho + dt * s.liouvillian(rho);
    for (std::size_t j = 0; j < dN.size(); ++j) {
        const Operator jr = s.jump(j, rho);
        const double r = jr.trace().real();
        if (dN[j] == 1) {
            if (!(r > tol.rate)) throw NumericalError("nonlinear_counting_step: zero-probability jump");
            out += (jr / r - rho) * (1.0 - r * dt);
        } else {
            out -= (jr - r * rho) * dt;
        }
    }
    return hermitian_part(out / out.trace().real());
}

inline void require_pure_form(const MeasurementModel &m, const char *what) {
    if (!m.dissipators.empty()) throw ContractViolation(std::string(what) + ": model has unobserved dissipation");
    for (const auto &ch : m.counting)
        if (ch.kraus.size() != 1) throw ContractViolation(std::string(what) + ": channels need a single Kraus factor");
}

/// One Euler step of the counting wave-function equation, renormalised.
inline PureState pure_counting_step(const MeasurementModel &m, const PureState &psi, double t, double dt,
                                    const std::vector<int> &dN, const Tolerances &tol = {}) {
    require_pure_form(m, "pure_counting_step");
    if (psi.size() != m.dim) throw ContractViolation("pure_counting_step: dimension mismatch");
    if (dN.size() != m.counting.size()) throw ContractViolation("pure_counting_step: dN size mismatch");
    const ModelSlice s = m.slice(t);
    PureState drift = -kI * (s.hamiltonian * psi);
    PureState jump = PureState::Zero(m.dim);
    for (std::size_t j = 0; j < dN.size(); ++j) {
        const Operator &z = s.counting[j][0];
        const PureState zpsi = z * psi;
        const double r = zpsi.squaredNorm();
        drift -= 0.5 * (z.adjoint() * zpsi - r * psi);
        if (dN[j] == 1) {
            if (!(r > tol.rate)) throw NumericalError("pure_counting_step: zero-probability jump");
            jump += zpsi / std::sqrt(r) - psi;
        } else if (dN[j] != 0) {
            throw ContractViolation("pure_counting_step: dN entries must be 0 or 1");
        }
    }
    PureState out = psi + drift * dt + jump;
    return out / out.norm();
}

}  // namespace qfilter
