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

// Characteristic operator G_t[k] and functional Phi_t[k] = Tr{G_t[k] rho}:
// deterministic propagation under the k-dependent generator, and Monte
// Carlo estimation as the ensemble mean of exp(i sum_j int k_j dY_j).

#include "qfilter/diffusive.hpp"

namespace qfilter {

/// Piecewise-constant test function: one value per observed channel and
/// grid cell, zero outside the grid. Observed channels are the counting
/// channels, the diffusive channels, or in complexified models the channel
/// pairs, whose complex value kappa splits as k_re = Re kappa, k_im = Im kappa.
struct TestFunction {
    TimeGrid grid;
    /// values[channel][cell]
    std::vector<std::vector<Complex>> values;

    static TestFunction constant(const TimeGrid &grid, const std::vector<Complex> &k) {
        TestFunction out{grid, {}};
        for (const Complex &v : k) out.values.emplace_back(grid.steps, v);
        return out;
    }

    static TestFunction zero(const TimeGrid &grid, std::size_t channels) {
        return constant(grid, std::vector<Complex>(channels, Complex(0.0)));
    }

    std::size_t channels() const { return values.size(); }

    /// Value on the cell containing t; cells are closed on the right.
    Complex at(std::size_t channel, double t) const {
        if (!(t > grid.t0) || t > grid.t1) return 0.0;
        const auto cell = std::min<std::size_t>(grid.steps - 1, std::size_t(std::ceil((t - grid.t0) / grid.dt())) - 1);
        return values.at(channel).at(cell);
    }

    bool is_zero() const {
        for (const auto &ch : values)
            for (const Complex &v : ch)
                if (v != Complex(0.0)) return false;
        return true;
    }
};

/// Number of observed channels of a model, as seen by test functions.
inline std::size_t observed_channels(const MeasurementModel &m) {
    switch (m.detection()) {
        case DetectionMode::counting: return m.counting.size();
        case DetectionMode::diffusive: return m.complexified ? m.diffusive.size() / 2 : m.diffusive.size();
        default: return 0;
    }
}

/// Validates k against the model; returns the real per-model-channel values
/// on each cell, indexed [cell][model channel].
inline std::vector<std::vector<double>> real_channel_values(const MeasurementModel &m, const TestFunction &k) {
    k.grid.validate();
    if (k.channels() != observed_channels(m)) {
        std::ostringstream os;
        os << "test function has " << k.channels() << " channels, model observes " << observed_channels(m);
        throw ConfigError(os.str());
    }
    const std::size_t nmodel = m.detection() == DetectionMode::counting ? m.counting.size() : m.diffusive.size();
    std::vector<std::vector<double>> out(k.grid.steps, std::vector<double>(nmodel, 0.0));
    for (std::size_t c = 0; c < k.channels(); ++c) {
        if (k.values[c].size() != k.grid.steps) throw ConfigError("test function: sample count does not match grid cells");
        for (std::size_t cell = 0; cell < k.grid.steps; ++cell) {
            const Complex v = k.values[c][cell];
            if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) throw ConfigError("test function: non-finite value");
            if (m.complexified) {
                out[cell][2 * c] = v.real();
                out[cell][2 * c + 1] = v.imag();
            } else {
                if (v.imag() != 0.0) throw ConfigError("test function: complex values need a complexified model");
                out[cell][c] = v.real();
            }
        }
    }
    return out;
}

/// K(k) for one model slice and real per-channel values k.
inline LinearMap characteristic_generator(const ModelSlice &s, DetectionMode mode, const std::vector<double> &k) {
    double bound = s.liouvillian_norm_bound();
    if (mode == DetectionMode::counting) {
        std::vector<Complex> w(k.size());
        for (std::size_t j = 0; j < k.size(); ++j) {
            w[j] = std::exp(kI * k[j]) - 1.0;
            for (const Operator &kr : s.counting[j]) bound += std::abs(w[j]) * std::pow(kr.operatorNorm(), 2);
        }
        return LinearMap(
            s.dim,
            [s, w](const Operator &x) {
                Operator out = s.liouvillian(x);
                for (std::size_t j = 0; j < w.size(); ++j)
                    if (w[j] != Complex(0.0))
                        for (const Operator &kr : s.counting[j]) out.noalias() += w[j] * (kr * x * kr.adjoint());
                return out;
            },
            bound);
    }
    double scalar = 0.0;
    for (std::size_t j = 0; j < k.size(); ++j) {
        scalar += 0.5 * k[j] * k[j] * std::norm(s.f[j]);
        bound += 2.0 * std::abs(k[j]) * std::abs(s.f[j]) * s.z[j].operatorNorm();
    }
    bound += scalar;
    return LinearMap(
        s.dim,
        [s, k, scalar](const Operator &x) {
            Operator out = s.liouvillian(x) - scalar * x;
            for (std::size_t j = 0; j < k.size(); ++j) {
                if (k[j] == 0.0) continue;
                out.noalias() += (kI * k[j] * std::conj(s.f[j])) * (s.z[j] * x);
                out.noalias() += (kI * k[j] * s.f[j]) * (x * s.z[j].adjoint());
            }
            return out;
        },
        bound);
}

struct CharacteristicResult {
    double t = 0.0;
    Complex phi = 1.0;
    /// G_t[k] rho; empty when not computed.
    Operator g_rho;
    /// Monte Carlo standard error of |phi - E phi|; 0 for deterministic results.
    double std_error = 0.0;
};

/// G_t[k] rho0 at every point of k's grid, by exact exponentials of the
/// frozen generator on each (grid cell x schedule cell) piece.
inline std::vector<CharacteristicResult> propagate_characteristic(const MeasurementModel &m, const TestFunction &k,
                                                                  const Operator &rho0, const Tolerances &tol = {}) {
    m.validate();
    require_dim(m, rho0, "propagate_characteristic");
    const DetectionMode mode = m.detection();
    if (mode == DetectionMode::none) throw ConfigError("propagate_characteristic: model has no observed channels");
    const auto kr = real_channel_values(m, k);
    const TimeGrid &grid = k.grid;
    std::vector<CharacteristicResult> out;
    out.reserve(grid.size());
    Operator g = rho0;
    out.push_back({grid.t0, g.trace(), g, 0.0});
    std::map<std::size_t, ModelSlice> slices;
    for (std::size_t i = 0; i < grid.steps; ++i) {
        for (const auto &[iv, cell] : m.segments(grid.time(i), grid.time(i + 1))) {
            auto it = slices.find(cell);
            if (it == slices.end()) it = slices.emplace(cell, m.slice_cell(cell)).first;
            g = expm_propagate(characteristic_generator(it->second, mode, kr[i]), g, iv.second - iv.first);
        }
        const Complex phi = g.trace();
        if (std::abs(phi) > 1.0 + std::max(tol.trace, 1e-6)) {
            std::ostringstream os;
            os << "characteristic functional exceeds 1 in modulus at t = " << grid.time(i + 1) << " (|phi| = "
               << std::abs(phi) << ")";
            throw NumericalError(os.str());
        }
        out.push_back({grid.time(i + 1), phi, g, 0.0});
    }
    return out;
}

namespace detail {

/// i sum_j int_0^{t_i} k_j dY_j at every record grid point.
inline std::vector<double> characteristic_phase(const MeasurementModel &m, const TestFunction &k,
                                                const std::vector<std::vector<double>> &kr,
                                                const TrajectoryRecord &rec) {
    const TimeGrid &g = rec.grid;
    std::vector<double> phase(g.size(), 0.0);
    if (rec.mode == DetectionMode::counting) {
        std::vector<double> at_event;
        for (const JumpEvent &e : rec.events) {
            double v = 0.0;
            if (e.t > k.grid.t0 && e.t <= k.grid.t1) {
                const auto cell =
                    std::min<std::size_t>(k.grid.steps - 1, std::size_t(std::ceil((e.t - k.grid.t0) / k.grid.dt())) - 1);
                v = kr[cell][e.channel];
            }
            at_event.push_back(v);
        }
        std::size_t next = 0;
        double acc = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) {
            while (next < rec.events.size() && rec.events[next].t <= g.time(i) * (1.0 + 1e-15)) acc += at_event[next++];
            phase[i] = acc;
        }
        return phase;
    }
    // Diffusive: the test function's cells must be unions of record cells.
    const std::size_t ratio = g.steps / k.grid.steps;
    if (g.steps % k.grid.steps != 0 || std::abs(g.t0 - k.grid.t0) > 1e-12 || std::abs(g.t1 - k.grid.t1) > 1e-12 * g.span())
        throw ConfigError("test function grid must be subdivided by the record grid");
    double acc = 0.0;
    for (std::size_t i = 0; i < g.steps; ++i) {
        const auto &kc = kr[i / ratio];
        for (std::size_t j = 0; j < kc.size(); ++j)
            acc += kc[j] * (rec.outputs(Eigen::Index(i + 1), Eigen::Index(j)) - rec.outputs(Eigen::Index(i), Eigen::Index(j)));
        phase[i + 1] = acc;
    }
    (void)m;
    return phase;
}

}  // namespace detail

/// Ensemble estimate of Phi_t[k] on the records' grid as the mean of
/// V_t[k] = exp(i sum_j int k_j dY_j). With `with_operator`, also estimates
/// G_t[k] rho as the mean of V_t[k] rho(t) (needs snapshots at every point).
inline std::vector<CharacteristicResult> monte_carlo_characteristic(const MeasurementModel &m,
                                                                    const std::vector<TrajectoryRecord> &records,
                                                                    const TestFunction &k, bool with_operator = false) {
    if (records.empty()) throw ContractViolation("monte_carlo_characteristic: empty ensemble");
    const auto kr = real_channel_values(m, k);
    const TimeGrid grid = records.front().grid;
    const std::size_t n = records.size(), np = grid.size();
    std::vector<Complex> sum(np, 0.0);
    std::vector<double> sum_abs2(np, 0.0);
    std::vector<Operator> gsum;
    if (with_operator) gsum.assign(np, Operator::Zero(m.dim, m.dim));
    for (const TrajectoryRecord &rec : records) {
        if (!(rec.grid == grid) || rec.mode != records.front().mode)
            throw ContractViolation("monte_carlo_characteristic: records are not homogeneous");
        if (with_operator && rec.snapshots.size() != np)
            throw ContractViolation("monte_carlo_characteristic: operator estimate needs a snapshot at every grid point");
        const auto phase = detail::characteristic_phase(m, k, kr, rec);
        for (std::size_t i = 0; i < np; ++i) {
            const Complex v = std::exp(kI * phase[i]);
            sum[i] += v;
            sum_abs2[i] += std::norm(v);
            if (with_operator) gsum[i] += v * rec.snapshots[i];
        }
    }
    std::vector<CharacteristicResult> out(np);
    for (std::size_t i = 0; i < np; ++i) {
        const Complex mean = sum[i] / double(n);
        const double var = n > 1 ? std::max(0.0, (sum_abs2[i] - double(n) * std::norm(mean)) / double(n - 1)) : 0.0;
        out[i].t = grid.time(i);
        out[i].phi = mean;
        out[i].std_error = std::sqrt(var / double(n));
        if (with_operator) out[i].g_rho = gsum[i] / double(n);
    }
    return out;
}

}  // namespace qfilter
