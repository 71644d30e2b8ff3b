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

// Measurement models: Hamiltonian, unobserved dissipation, counting and
// diffusive detection channels; the a-priori Liouvillian and the
// no-count generator; master-equation propagation.

#include "qfilter/hilbert.hpp"

#include <cstdint>
#include <cstring>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace qfilter {

/// Uniform grid t0 < t0 + dt < ... < t1 with `steps` cells.
struct TimeGrid {
    double t0 = 0.0;
    double t1 = 1.0;
    std::size_t steps = 1;

    double dt() const { return (t1 - t0) / double(steps); }
    double span() const { return t1 - t0; }
    std::size_t size() const { return steps + 1; }
    double time(std::size_t i) const { return i == steps ? t1 : t0 + double(i) * dt(); }

    void validate() const {
        if (!(t1 > t0) || steps < 1 || !std::isfinite(t0) || !std::isfinite(t1))
            throw ConfigError("time grid: need t1 > t0 and steps >= 1");
    }

    bool operator==(const TimeGrid &) const = default;
};

/// A value that is either constant or piecewise constant on the cells of
/// the owning model's schedule grid.
template <class T>
class Schedule {
  public:
    Schedule() = default;
    Schedule(T value) : values_{std::move(value)} {}  // NOLINT: implicit on purpose
    explicit Schedule(std::vector<T> cells) : values_(std::move(cells)) {
        if (values_.empty()) throw ConfigError("schedule: no values");
    }

    bool is_constant() const { return values_.size() == 1; }
    std::size_t cells() const { return values_.size(); }
    const T &at_cell(std::size_t cell) const { return is_constant() ? values_[0] : values_.at(cell); }
    const std::vector<T> &values() const { return values_; }

  private:
    std::vector<T> values_;
};

using OperatorSchedule = Schedule<Operator>;
using ComplexSchedule = Schedule<Complex>;

/// A completely positive map rho -> sum_k K_k rho K_k^dagger.
struct CountingChannel {
    std::vector<OperatorSchedule> kraus;
    std::string label;
};

/// Diffusive detection of Z with local-oscillator amplitude f.
struct DiffusiveChannel {
    OperatorSchedule z;
    ComplexSchedule f = Complex(1.0);
    std::string label;
};

enum class DetectionMode { none, counting, diffusive };

inline const char *to_string(DetectionMode m) {
    switch (m) {
    case DetectionMode::none: return "none";
    case DetectionMode::counting: return "counting";
    case DetectionMode::diffusive: return "diffusive";
    }
    return "?";
}

/// The model frozen on one cell of the schedule grid.
struct ModelSlice {
    Eigen::Index dim = 0;
    Operator hamiltonian;
    std::vector<std::vector<Operator>> unobserved;
    std::vector<std::vector<Operator>> counting;
    /// R_j for the observed counting channels.
    std::vector<Operator> rates;
    std::vector<Operator> z;
    std::vector<Complex> f;
    /// Distinct diffusive operators; channels sharing a Z share an entry.
    std::vector<Operator> unique_z;
    std::vector<double> unique_z_multiplicity;
    std::vector<std::size_t> z_index;
    /// -iH - (1/2) sum of all rate operators, diffusive Z^dagger Z included.
    Operator heff;
    /// -iH - (1/2) sum of rate operators of unobserved and counting channels.
    Operator heff_no_diffusion;

    /// L rho = heff rho + rho heff^dagger + sum K rho K^dagger.
    Operator liouvillian(const Operator &rho) const {
        Operator out = heff * rho + rho * heff.adjoint();
        add_sandwiches(unobserved, rho, out);
        add_sandwiches(counting, rho, out);
        for (std::size_t u = 0; u < unique_z.size(); ++u)
            out.noalias() += unique_z_multiplicity[u] * (unique_z[u] * rho * unique_z[u].adjoint());
        return out;
    }

    /// A rho = L rho - sum_j J_j rho over observed counting channels.
    Operator no_count(const Operator &rho) const {
        Operator out = heff_no_diffusion * rho + rho * heff_no_diffusion.adjoint();
        add_sandwiches(unobserved, rho, out);
        return out;
    }

    /// J_j rho, unnormalised.
    Operator jump(std::size_t j, const Operator &rho) const {
        Operator out = Operator::Zero(dim, dim);
        for (const Operator &k : counting.at(j)) out.noalias() += k * rho * k.adjoint();
        return out;
    }

    double rate(std::size_t j, const Operator &rho) const { return expectation(rates.at(j), rho).real(); }

    /// Upper bound on the induced norm of L, for RK4 step control.
    double liouvillian_norm_bound() const {
        auto opnorm = [](const Operator &x) { return x.operatorNorm(); };
        double bound = 2.0 * opnorm(heff);
        for (const auto *group : {&unobserved, &counting})
            for (const auto &ch : *group)
                for (const auto &k : ch) bound += std::pow(opnorm(k), 2);
        for (std::size_t u = 0; u < unique_z.size(); ++u) bound += unique_z_multiplicity[u] * std::pow(opnorm(unique_z[u]), 2);
        return bound;
    }

  private:
    static void add_sandwiches(const std::vector<std::vector<Operator>> &channels, const Operator &rho, Operator &out) {
        for (const auto &ch : channels)
            for (const Operator &k : ch) out.noalias() += k * rho * k.adjoint();
    }
};

struct MeasurementModel {
    Eigen::Index dim = 0;
    OperatorSchedule hamiltonian;
    /// Dissipation that is present but never recorded.
    std::vector<CountingChannel> dissipators;
    std::vector<CountingChannel> counting;
    std::vector<DiffusiveChannel> diffusive;
    /// Cells on which time-dependent schedules are piecewise constant.
    std::optional<TimeGrid> schedule_grid;
    /// Diffusive channels come in (f = 1, f = i) pairs sharing Z.
    bool complexified = false;
    double f_min = 1e-12;

    DetectionMode detection() const {
        if (!counting.empty() && !diffusive.empty())
            throw ContractViolation("model has both counting and diffusive detection; exactly one family may be used per run");
        if (!counting.empty()) return DetectionMode::counting;
        if (!diffusive.empty()) return DetectionMode::diffusive;
        return DetectionMode::none;
    }

    bool is_time_constant() const {
        auto constant = [](const auto &s) { return s.is_constant(); };
        if (!constant(hamiltonian)) return false;
        for (const auto *group : {&dissipators, &counting})
            for (const auto &ch : *group)
                for (const auto &k : ch.kraus)
                    if (!constant(k)) return false;
        for (const auto &ch : diffusive)
            if (!constant(ch.z) || !constant(ch.f)) return false;
        return true;
    }

    std::size_t cells() const { return schedule_grid ? schedule_grid->steps : 1; }

    /// Cell of the schedule grid containing t (right-continuous, clamped).
    std::size_t cell_of(double t) const {
        if (!schedule_grid || is_time_constant()) return 0;
        const auto &g = *schedule_grid;
        const double x = std::floor((t - g.t0) / g.dt());
        if (x <= 0.0) return 0;
        return std::min<std::size_t>(std::size_t(x), g.steps - 1);
    }

    /// Sub-intervals of [a, b] on which the model is constant, each with its
    /// cell index.
    std::vector<std::pair<std::pair<double, double>, std::size_t>> segments(double a, double b) const {
        std::vector<std::pair<std::pair<double, double>, std::size_t>> out;
        if (!(b > a)) return out;
        if (!schedule_grid || is_time_constant()) {
            out.push_back({{a, b}, 0});
            return out;
        }
        const auto &g = *schedule_grid;
        double lo = a;
        while (lo < b) {
            const std::size_t cell = cell_of(0.5 * (lo + std::min(b, lo + 0.5 * g.dt())));
            double hi = cell + 1 >= g.steps ? b : std::min(b, g.time(cell + 1));
            if (hi <= lo) hi = b;
            out.push_back({{lo, hi}, cell});
            lo = hi;
        }
        return out;
    }

    void validate() const {
        if (dim < 1) throw ConfigError("model: dim must be positive");
        const std::size_t ncells = cells();
        auto check_schedule = [&](const OperatorSchedule &s, const std::string &what) {
            if (s.values().empty()) throw ConfigError(what + ": missing operator");
            if (!s.is_constant() && (!schedule_grid || s.cells() != ncells))
                throw ConfigError(what + ": schedule length does not match the schedule grid");
            for (const auto &x : s.values()) {
                if (x.rows() != dim || x.cols() != dim) throw ConfigError(what + ": dimension mismatch");
                if (!x.allFinite()) throw ConfigError(what + ": non-finite entries");
            }
        };
        check_schedule(hamiltonian, "hamiltonian");
        for (const auto &h : hamiltonian.values())
            if (hermiticity_error(h) > 1e-12 * std::max(1.0, h.cwiseAbs().maxCoeff()))
                throw ConfigError("hamiltonian: not Hermitian");
        auto check_channels = [&](const std::vector<CountingChannel> &chs, const std::string &what) {
            for (std::size_t j = 0; j < chs.size(); ++j) {
                if (chs[j].kraus.empty()) throw ConfigError(what + "[" + std::to_string(j) + "]: no Kraus factors");
                for (const auto &k : chs[j].kraus) check_schedule(k, what + "[" + std::to_string(j) + "]");
            }
        };
        check_channels(dissipators, "dissipators");
        check_channels(counting, "counting");
        for (std::size_t j = 0; j < diffusive.size(); ++j) {
            const std::string what = "diffusive[" + std::to_string(j) + "]";
            check_schedule(diffusive[j].z, what + ".z");
            if (!diffusive[j].f.is_constant() && (!schedule_grid || diffusive[j].f.cells() != ncells))
                throw ConfigError(what + ".f: schedule length does not match the schedule grid");
            for (const Complex &f : diffusive[j].f.values())
                if (!(std::abs(f) >= f_min)) throw ConfigError(what + ".f: |f| must stay above f_min on the whole grid");
        }
        if (complexified && diffusive.size() % 2 != 0) throw ConfigError("complexified model needs channel pairs");
        if (schedule_grid) schedule_grid->validate();
    }

    ModelSlice slice_cell(std::size_t cell) const {
        ModelSlice s;
        s.dim = dim;
        s.hamiltonian = hamiltonian.at_cell(cell);
        Operator total_r = Operator::Zero(dim, dim);
        auto collect = [&](const std::vector<CountingChannel> &chs, std::vector<std::vector<Operator>> &out) {
            for (const auto &ch : chs) {
                std::vector<Operator> ks;
                for (const auto &k : ch.kraus) ks.push_back(k.at_cell(cell));
                out.push_back(std::move(ks));
            }
        };
        collect(dissipators, s.unobserved);
        collect(counting, s.counting);
        for (const auto &ch : s.unobserved)
            for (const auto &k : ch) total_r.noalias() += k.adjoint() * k;
        for (const auto &ch : s.counting) {
            Operator r = Operator::Zero(dim, dim);
            for (const auto &k : ch) r.noalias() += k.adjoint() * k;
            total_r += r;
            s.rates.push_back(std::move(r));
        }
        s.heff_no_diffusion = -kI * s.hamiltonian - 0.5 * total_r;
        for (const auto &ch : diffusive) {
            Operator z = ch.z.at_cell(cell);
            s.f.push_back(ch.f.at_cell(cell));
            std::size_t idx = s.unique_z.size();
            for (std::size_t u = 0; u < s.unique_z.size(); ++u)
                if (s.unique_z[u] == z) idx = u;
            if (idx == s.unique_z.size()) {
                s.unique_z.push_back(z);
                s.unique_z_multiplicity.push_back(0.0);
            }
            s.unique_z_multiplicity[idx] += 1.0;
            s.z_index.push_back(idx);
            total_r.noalias() += z.adjoint() * z;
            s.z.push_back(std::move(z));
        }
        s.heff = -kI * s.hamiltonian - 0.5 * total_r;
        return s;
    }

    ModelSlice slice(double t) const { return slice_cell(cell_of(t)); }
};

// ---------------------------------------------------------------------------
// Model-level operations

/// R_j(t) = J_j(t)' 1 = sum_k K_k^dagger K_k.
inline Operator rate_operator(const CountingChannel &ch, std::size_t cell = 0) {
    if (ch.kraus.empty()) throw ContractViolation("rate_operator: channel has no Kraus factors");
    const Operator &k0 = ch.kraus.front().at_cell(cell);
    Operator r = Operator::Zero(k0.rows(), k0.cols());
    for (const auto &k : ch.kraus) r.noalias() += k.at_cell(cell).adjoint() * k.at_cell(cell);
    return r;
}

inline Operator rate_operator(const MeasurementModel &m, std::size_t j, double t) {
    return rate_operator(m.counting.at(j), m.cell_of(t));
}

inline void require_dim(const MeasurementModel &m, const Operator &rho, const char *what) {
    if (rho.rows() != m.dim || rho.cols() != m.dim) {
        std::ostringstream os;
        os << what << ": operand is " << rho.rows() << "x" << rho.cols() << ", model dimension is " << m.dim;
        throw ContractViolation(os.str());
    }
}

/// The a-priori Liouvillian: -i[H, rho] + sum over every channel of
/// (J rho - {R, rho}/2).
inline Operator liouvillian_apply(const MeasurementModel &m, const Operator &rho, double t) {
    require_dim(m, rho, "liouvillian_apply");
    return m.slice(t).liouvillian(rho);
}

inline Operator no_count_generator(const MeasurementModel &m, const Operator &rho, double t) {
    require_dim(m, rho, "no_count_generator");
    if (m.detection() == DetectionMode::diffusive) throw ContractViolation("no_count_generator: model is in diffusive mode");
    return m.slice(t).no_count(rho);
}

inline LinearMap liouvillian_map(const ModelSlice &s) {
    return LinearMap(
        s.dim, [s](const Operator &x) { return s.liouvillian(x); }, s.liouvillian_norm_bound());
}

inline LinearMap no_count_map(const ModelSlice &s) {
    return LinearMap(
        s.dim, [s](const Operator &x) { return s.no_count(x); }, s.liouvillian_norm_bound());
}

/// Caches one semigroup per schedule cell and one fixed-step propagator per
/// (cell, duration), for a generator family derived from the model.
class PiecewiseEvolution {
  public:
    using Factory = std::function<LinearMap(const ModelSlice &)>;

    PiecewiseEvolution(const MeasurementModel &model, Factory factory)
        : model_(&model), factory_(std::move(factory)) {}

    const Semigroup &semigroup(std::size_t cell) {
        auto it = semigroups_.find(cell);
        if (it == semigroups_.end()) it = semigroups_.emplace(cell, Semigroup(factory_(model_->slice_cell(cell)))).first;
        return it->second;
    }

    const Propagator &propagator(std::size_t cell, double dt) {
        std::uint64_t bits;
        std::memcpy(&bits, &dt, sizeof bits);
        const auto key = std::make_pair(cell, bits);
        auto it = propagators_.find(key);
        if (it == propagators_.end()) it = propagators_.emplace(key, Propagator(semigroup(cell), dt)).first;
        return it->second;
    }

    /// exp over [a, b], split at schedule boundaries. Durations are cached
    /// when `cache` is set (use for repeated grid steps).
    Operator propagate(const Operator &x, double a, double b, bool cache = false) {
        Operator y = x;
        for (const auto &[iv, cell] : model_->segments(a, b)) {
            const double len = iv.second - iv.first;
            y = cache ? propagator(cell, len).apply(y) : semigroup(cell).apply(y, len);
        }
        return y;
    }

    const MeasurementModel &model() const { return *model_; }

  private:
    const MeasurementModel *model_;
    Factory factory_;
    std::map<std::size_t, Semigroup> semigroups_;
    std::map<std::pair<std::size_t, std::uint64_t>, Propagator> propagators_;
};

struct StateCheck {
    double hermiticity = 0.0;
    double trace_error = 0.0;
    double min_eigenvalue = 0.0;
};

inline StateCheck check_state(const Operator &rho) {
    StateCheck c;
    c.hermiticity = hermiticity_error(rho);
    c.trace_error = std::abs(rho.trace() - 1.0);
    c.min_eigenvalue = hermitian_eigenvalues(rho).minCoeff();
    return c;
}

/// Throws unless rho is a normalised Hermitian PSD state within tolerances.
inline void require_state(const Operator &rho, const Tolerances &tol, const std::string &what) {
    require_square(rho, what.c_str());
    const StateCheck c = check_state(rho);
    if (c.hermiticity > tol.herm) throw ContractViolation(what + ": state is not Hermitian");
    if (c.trace_error > tol.trace) throw ContractViolation(what + ": state is not normalised");
    if (c.min_eigenvalue < -tol.psd) throw ContractViolation(what + ": state is not positive semidefinite");
}

/// a-priori states on the grid (index 0 is rho0).
inline std::vector<Operator> master_evolve(const MeasurementModel &m, const Operator &rho0, const TimeGrid &grid,
                                           const Tolerances &tol = {}) {
    m.validate();
    grid.validate();
    require_dim(m, rho0, "master_evolve");
    require_state(rho0, tol, "master_evolve: initial state");
    PiecewiseEvolution evo(m, liouvillian_map);
    std::vector<Operator> out;
    out.reserve(grid.size());
    out.push_back(rho0);
    Operator rho = rho0;
    for (std::size_t i = 0; i < grid.steps; ++i) {
        rho = evo.propagate(rho, grid.time(i), grid.time(i + 1), true);
        const StateCheck c = check_state(rho);
        const double tr = rho.trace().real();
        if (c.min_eigenvalue < -tol.psd * std::max(1.0, tr) || c.trace_error > tol.trace || c.hermiticity > tol.herm) {
            std::ostringstream os;
            os << "master_evolve: state left the physical set at t = " << grid.time(i + 1)
               << " (min eigenvalue " << c.min_eigenvalue << ", trace error " << c.trace_error << ")";
            throw NumericalError(os.str());
        }
        out.push_back(rho);
    }
    return out;
}

/// Normalised null vector of L (time-constant part at time t).
inline Operator stationary_state(const MeasurementModel &m, double t = 0.0) {
    const ModelSlice s = m.slice(t);
    const Superop l = liouvillian_map(s).to_matrix();
    Eigen::JacobiSVD<Superop> svd(l, Eigen::ComputeFullV);
    const OpVector v = svd.matrixV().col(l.cols() - 1);
    Operator rho = unvec(v, m.dim);
    rho /= rho.trace();
    return hermitian_part(rho);
}

}  // namespace qfilter
