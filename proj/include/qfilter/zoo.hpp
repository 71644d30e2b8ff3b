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

// Ready-made models: a two-level emitter with photon counting or diffusive
// detection, and a driven damped oscillator under complex (heterodyne-type)
// detection of its annihilation operator.

#include "qfilter/model.hpp"

namespace qfilter {

struct TwoLevelParams {
    double omega = 0.0;
    /// Unobserved pumping and decay rates.
    double pump = 0.0;
    double decay = 0.0;
    /// Rate of the observed (counted) decay channel.
    double detected = 1.0;

    double kappa() const { return 0.5 * (pump + decay + detected); }
    double alpha() const { return decay - pump; }

    void validate() const {
        if (!(pump >= 0.0 && decay >= 0.0 && detected >= 0.0) || !std::isfinite(omega))
            throw ConfigError("two-level: rates must be non-negative");
        if (!(detected > 0.0)) throw ConfigError("two-level: detected rate must be positive");
    }
};

/// Two-level atom with counting of the `detected` decay channel.
inline MeasurementModel two_level_counting(const TwoLevelParams &p) {
    p.validate();
    MeasurementModel m;
    m.dim = 2;
    m.hamiltonian = Operator(0.5 * p.omega * ops::sigma3());
    CountingChannel unobserved{{}, "unobserved"};
    if (p.pump > 0.0) unobserved.kraus.emplace_back(Operator(std::sqrt(p.pump) * ops::sigma_plus()));
    if (p.decay > 0.0) unobserved.kraus.emplace_back(Operator(std::sqrt(p.decay) * ops::sigma_minus()));
    if (!unobserved.kraus.empty()) m.dissipators.push_back(std::move(unobserved));
    m.counting.push_back({{Operator(std::sqrt(p.detected) * ops::sigma_minus())}, "photon"});
    return m;
}

/// Two-level atom whose detected channel sqrt(detected) sigma_- is observed
/// diffusively with local-oscillator amplitude f.
inline MeasurementModel two_level_diffusive(const TwoLevelParams &p, Complex f = 1.0) {
    MeasurementModel m = two_level_counting(p);
    m.counting.clear();
    m.diffusive.push_back({Operator(std::sqrt(p.detected) * ops::sigma_minus()), f, "homodyne"});
    return m;
}

/// Replaces every diffusive channel (Z, f) by the pair (Z, 1), (Z, i); the
/// pair's outputs combine into one complex increment per channel.
inline MeasurementModel complexify_channels(const MeasurementModel &m) {
    if (m.detection() != DetectionMode::diffusive) throw ContractViolation("complexify_channels: model is not diffusive");
    if (m.complexified) return m;
    MeasurementModel out = m;
    out.diffusive.clear();
    for (const auto &ch : m.diffusive) {
        out.diffusive.push_back({ch.z, Complex(1.0), ch.label + ".re"});
        out.diffusive.push_back({ch.z, kI, ch.label + ".im"});
    }
    out.complexified = true;
    return out;
}

struct OscillatorParams {
    double omega = 1.0;
    /// Drive amplitude; constant or piecewise constant on the schedule grid.
    ComplexSchedule drive = Complex(0.0);
    double damping = 0.5;     // lambda_down
    double pumping = 0.0;     // lambda_up
    Complex coupling = 1.0;   // eta
    Eigen::Index cutoff = 30;

    /// Decay rate of the mean amplitude, times two.
    double gamma() const { return 2.0 * (std::norm(coupling) + damping - pumping); }

    void validate() const {
        if (!(damping >= 0.0 && pumping >= 0.0)) throw ConfigError("oscillator: rates must be non-negative");
        if (!(gamma() > 0.0)) throw ConfigError("oscillator: 2(|eta|^2 + damping - pumping) must be positive");
        if (cutoff < 2) throw ConfigError("oscillator: cutoff must be at least 2");
    }
};

/// Driven oscillator in a thermal bath with complex detection of eta a,
/// already complexified.
inline MeasurementModel oscillator_model(const OscillatorParams &p, std::optional<TimeGrid> schedule_grid = {}) {
    p.validate();
    const Operator a = ops::annihilation(p.cutoff);
    const Operator ad = a.adjoint();
    const Operator n = ad * a;
    MeasurementModel m;
    m.dim = p.cutoff;
    m.schedule_grid = schedule_grid;
    if (p.drive.is_constant()) {
        const Complex g = p.drive.at_cell(0);
        m.hamiltonian = Operator(p.omega * n + g * ad + std::conj(g) * a);
    } else {
        std::vector<Operator> hs;
        for (const Complex &g : p.drive.values()) hs.emplace_back(p.omega * n + g * ad + std::conj(g) * a);
        m.hamiltonian = OperatorSchedule(std::move(hs));
    }
    CountingChannel bath{{}, "bath"};
    if (p.damping > 0.0) bath.kraus.emplace_back(Operator(std::sqrt(2.0 * p.damping) * a));
    if (p.pumping > 0.0) bath.kraus.emplace_back(Operator(std::sqrt(2.0 * p.pumping) * ad));
    if (!bath.kraus.empty()) m.dissipators.push_back(std::move(bath));
    const Operator z = p.coupling * a;
    m.diffusive.push_back({z, Complex(1.0), "field.re"});
    m.diffusive.push_back({z, kI, "field.im"});
    m.complexified = true;
    return m;
}

}  // namespace qfilter
