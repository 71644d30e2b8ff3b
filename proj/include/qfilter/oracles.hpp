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

// Closed-form references for the two ready-made models: the photon-counting
// filter of the two-level emitter with its exclusive probability densities,
// and the Gaussian (Riccati) description of the measured oscillator.

#include "qfilter/charfun.hpp"
#include "qfilter/zoo.hpp"

#include <unsupported/Eigen/MatrixFunctions>

namespace qfilter {

// ---------------------------------------------------------------------------
// Two-level emitter under photon counting

/// Unnormalised filter state in population form: pi1 excited, pi0 ground
/// weight, zeta twice the excited-ground coherence. c = pi0 + pi1.
struct TwoLevelFilterState {
    double pi0 = 0.0;
    double pi1 = 1.0;
    Complex zeta = 0.0;

    double c() const { return pi0 + pi1; }

    static TwoLevelFilterState from_state(const Operator &rho) {
        if (rho.rows() != 2 || rho.cols() != 2) throw ContractViolation("TwoLevelFilterState: need a 2x2 operator");
        return {rho(1, 1).real(), rho(0, 0).real(), 2.0 * rho(0, 1)};
    }

    /// The normalised state.
    Operator state() const {
        const double n = c();
        if (!(n > 0.0)) throw NumericalError("two-level filter: c(t) <= 0");
        Operator rho(2, 2);
        rho << pi1 / n, zeta / (2.0 * n), std::conj(zeta) / (2.0 * n), pi0 / n;
        return rho;
    }
};

namespace detail {

/// Between-count flow of (pi0, pi1).
inline Eigen::Matrix2d twolevel_population_generator(const TwoLevelParams &p) {
    Eigen::Matrix2d a;
    a << -p.pump, p.decay, p.pump, -(p.detected + p.decay);
    return a;
}

inline TwoLevelFilterState twolevel_flow(const TwoLevelParams &p, const TwoLevelFilterState &s, double dt) {
    if (dt <= 0.0) return s;
    const Eigen::Matrix2d e = (detail::twolevel_population_generator(p) * dt).exp();
    Eigen::Vector2d v(s.pi0, s.pi1);
    v = e * v;
    return {v(0), v(1), std::exp(-(kI * p.omega + p.kappa()) * dt) * s.zeta};
}

}  // namespace detail

/// Exact filter along a count record, with time scale 1/detected: between
/// counts the population flow is a 2x2 matrix exponential; at a count
/// (pi0, pi1, zeta) <- (pi1, 0, 0).
inline std::vector<TwoLevelFilterState> twolevel_filter_evolve(const TwoLevelParams &p, const TwoLevelFilterState &s0,
                                                               const CountRealization &realization,
                                                               const TimeGrid &grid) {
    p.validate();
    grid.validate();
    for (std::size_t e = 0; e < realization.events.size(); ++e) {
        const JumpEvent &ev = realization.events[e];
        if (ev.channel != 0) throw ContractViolation("twolevel_filter_evolve: the model has a single counting channel");
        if (ev.t <= grid.t0 || ev.t > grid.t1 || (e > 0 && ev.t < realization.events[e - 1].t))
            throw ContractViolation("twolevel_filter_evolve: count times must be increasing inside the grid");
    }
    std::vector<TwoLevelFilterState> out{s0};
    TwoLevelFilterState s = s0;
    double t = grid.t0;
    std::size_t next = 0;
    for (std::size_t i = 1; i < grid.size(); ++i) {
        const double ti = grid.time(i);
        while (next < realization.events.size() && realization.events[next].t <= ti) {
            s = detail::twolevel_flow(p, s, realization.events[next].t - t);
            s = {s.pi1, 0.0, 0.0};
            t = realization.events[next++].t;
        }
        s = detail::twolevel_flow(p, s, ti - t);
        t = ti;
        out.push_back(s);
    }
    return out;
}

/// Emitter without pumping: probability of no count in (0, t] from an initial
/// excited population `excited`.
inline double wigner_no_count_probability(const TwoLevelParams &p, double excited, double t) {
    if (p.pump != 0.0) throw ContractViolation("wigner_no_count_probability: requires zero pumping");
    p.validate();
    const double kappa = p.kappa();
    return (1.0 - excited) + (p.decay + p.detected * std::exp(-2.0 * kappa * t)) / (2.0 * kappa) * excited;
}

/// Density of a single count at t1 (and none other in the interval).
inline double wigner_first_count_density(const TwoLevelParams &p, double excited, double t1) {
    if (p.pump != 0.0) throw ContractViolation("wigner_first_count_density: requires zero pumping");
    p.validate();
    return p.detected * std::exp(-2.0 * p.kappa() * t1) * excited;
}

/// Probability that the (only) count happens in (0, t].
inline double wigner_count_probability(const TwoLevelParams &p, double excited, double t) {
    return 1.0 - wigner_no_count_probability(p, excited, t);
}

/// Exclusive probability density of exactly the counts at `times` in (0, t].
inline double wigner_epd(const TwoLevelParams &p, double excited, double t, const std::vector<double> &times) {
    if (times.empty()) return wigner_no_count_probability(p, excited, t);
    if (times.size() >= 2) {
        if (p.pump != 0.0) throw ContractViolation("wigner_epd: requires zero pumping");
        return 0.0;
    }
    if (times[0] <= 0.0 || times[0] > t) return 0.0;
    return wigner_first_count_density(p, excited, times[0]);
}

// ---------------------------------------------------------------------------
// Measured oscillator: Gaussian states

/// Piecewise-constant drive of an oscillator model on its schedule grid.
struct DriveProfile {
    ComplexSchedule drive = Complex(0.0);
    std::optional<TimeGrid> schedule;

    Complex at(double t) const {
        if (drive.is_constant() || !schedule) return drive.at_cell(0);
        const auto &g = *schedule;
        const double x = std::floor((t - g.t0) / g.dt());
        const std::size_t cell = x <= 0.0 ? 0 : std::min<std::size_t>(std::size_t(x), g.steps - 1);
        return drive.at_cell(cell);
    }

    /// Break points inside (a, b).
    std::vector<double> breaks(double a, double b) const {
        std::vector<double> out;
        if (drive.is_constant() || !schedule) return out;
        for (std::size_t i = 1; i < schedule->steps; ++i) {
            const double x = schedule->time(i);
            if (x > a && x < b) out.push_back(x);
        }
        return out;
    }
};

/// Posterior of a Gaussian state: <a>, mu = <a^2> - <a>^2,
/// nu = <a^dagger a> - |<a>|^2.
struct GaussianPosterior {
    Complex mean = 0.0;
    Complex mu = 0.0;
    double nu = 0.0;

    /// nu (nu + 1) >= |mu|^2 for physical states.
    double physicality_margin() const { return nu * (nu + 1.0) - std::norm(mu); }
};

inline GaussianPosterior gaussian_moments(const Operator &rho) {
    const Operator a = ops::annihilation(rho.rows());
    GaussianPosterior g;
    g.mean = expectation(a, rho);
    g.mu = expectation(a * a, rho) - g.mean * g.mean;
    g.nu = expectation(a.adjoint() * a, rho).real() - std::norm(g.mean);
    return g;
}

/// Stationary solution of d nu/dt = -Gamma nu - 2|eta|^2 nu^2 + 2 up, in a
/// form free of cancellation for small |eta|.
inline double riccati_stationary(const OscillatorParams &p) {
    p.validate();
    const double e2 = std::norm(p.coupling);
    if (e2 == 0.0) throw ContractViolation("riccati_stationary: coupling must be non-zero");
    const double gamma = p.gamma();
    const double x = 16.0 * e2 * p.pumping / (gamma * gamma);
    return 4.0 * p.pumping / (gamma * (1.0 + std::sqrt(1.0 + x)));
}

inline double riccati_residual(const OscillatorParams &p, double nu) {
    return -p.gamma() * nu - 2.0 * std::norm(p.coupling) * nu * nu + 2.0 * p.pumping;
}

namespace detail {

struct MuNu {
    Complex mu;
    double nu;
};

inline MuNu riccati_rhs(const OscillatorParams &p, const MuNu &x) {
    const double e2 = std::norm(p.coupling), gamma = p.gamma();
    return {-(2.0 * kI * p.omega + gamma) * x.mu - 4.0 * e2 * x.mu * x.nu,
            -gamma * x.nu - 2.0 * e2 * (std::norm(x.mu) + x.nu * x.nu) + 2.0 * p.pumping};
}

inline MuNu riccati_rk4(const OscillatorParams &p, MuNu x, double h) {
    auto add = [](const MuNu &a, const MuNu &b, double s) { return MuNu{a.mu + s * b.mu, a.nu + s * b.nu}; };
    const MuNu k1 = riccati_rhs(p, x);
    const MuNu k2 = riccati_rhs(p, add(x, k1, 0.5 * h));
    const MuNu k3 = riccati_rhs(p, add(x, k2, 0.5 * h));
    const MuNu k4 = riccati_rhs(p, add(x, k3, h));
    return {x.mu + (h / 6.0) * (k1.mu + 2.0 * k2.mu + 2.0 * k3.mu + k4.mu),
            x.nu + (h / 6.0) * (k1.nu + 2.0 * k2.nu + 2.0 * k3.nu + k4.nu)};
}

}  // namespace detail

/// Deterministic (mu, nu) on `grid` by RK4 with `substeps` per cell.
inline std::vector<GaussianPosterior> riccati_evolve(const OscillatorParams &p, const GaussianPosterior &g0,
                                                     const TimeGrid &grid, std::size_t substeps = 100) {
    p.validate();
    grid.validate();
    std::vector<GaussianPosterior> out{g0};
    detail::MuNu x{g0.mu, g0.nu};
    const double h = grid.dt() / double(substeps);
    for (std::size_t i = 0; i < grid.steps; ++i) {
        for (std::size_t s = 0; s < substeps; ++s) x = detail::riccati_rk4(p, x, h);
        if (x.nu < -1e-12) throw NumericalError("riccati_evolve: nu became negative");
        out.push_back({0.0, x.mu, x.nu});
    }
    return out;
}

/// Posterior moments along a complex output path of the oscillator model:
/// (mu, nu) by RK4 on the path's integration grid, and the mean by
/// Euler-Maruyama driven by the path's innovations. The path carries the
/// model's outputs dW = (dY_re + i dY_im)/2 for the channel eta a; sampled
/// on `grid`, whose cells the path's grid subdivides.
inline std::vector<GaussianPosterior> riccati_posterior_evolve(const OscillatorParams &p, const DriveProfile &drive,
                                                               const GaussianPosterior &g0, const OutputPath &path,
                                                               const TimeGrid &grid) {
    p.validate();
    grid.validate();
    if (!path.complexified || path.channels() != 2)
        throw ContractViolation("riccati_posterior_evolve: needs a complexified single-mode output path");
    if (path.steps() % grid.steps != 0) throw ContractViolation("riccati_posterior_evolve: grid mismatch");
    const std::size_t per = path.steps() / grid.steps;
    const double dt = path.fine.dt();
    const double e2 = std::norm(p.coupling), gamma = p.gamma();
    const Eigen::MatrixXcd w = path.dW();
    std::vector<GaussianPosterior> out{g0};
    GaussianPosterior g = g0;
    std::size_t k = 0;
    for (std::size_t i = 0; i < grid.steps; ++i) {
        for (std::size_t s = 0; s < per; ++s, ++k) {
            const double t = path.fine.time(k);
            // Innovation in units where the output measures a itself.
            const Complex dv = w(Eigen::Index(k), 0) / p.coupling - g.mean * dt;
            const Complex dmean = -((kI * p.omega + 0.5 * gamma) * g.mean + kI * drive.at(t + 0.5 * dt)) * dt +
                                  2.0 * e2 * (g.mu * std::conj(dv) + g.nu * dv);
            const detail::MuNu x = detail::riccati_rk4(p, {g.mu, g.nu}, dt);
            g = {g.mean + dmean, x.mu, x.nu};
        }
        if (g.nu < -1e-10) throw NumericalError("riccati_posterior_evolve: nu became negative");
        out.push_back(g);
    }
    return out;
}

/// Coefficients of the Gaussian characteristic operator.
struct GaussianCoefficients {
    double t = 0.0;
    Complex b, c, d;
    double f = 0.0;
    Complex h;
    /// Phi_t = Tr{G_t rho} = exp(-h).
    Complex phi() const { return std::exp(-h); }
};

namespace detail {

struct CoefState {
    Complex b, c, d, f, h;
    CoefState operator+(const CoefState &o) const { return {b + o.b, c + o.c, d + o.d, f + o.f, h + o.h}; }
    CoefState operator*(double s) const { return {s * b, s * c, s * d, s * f, s * h}; }
};

inline CoefState coef_rhs(const OscillatorParams &p, Complex kappa, Complex g, const CoefState &x) {
    const double gamma = p.gamma();
    const Complex z = kI * p.omega + 0.5 * gamma;
    const Complex kc = std::conj(kappa);
    return {-z * x.b + kI * kc * x.d + kI * kappa * x.f - kI * g,
            -z * x.c - kI * kc * x.d - kI * kappa * x.f - kI * g,
            -(2.0 * kI * p.omega + gamma) * x.d,
            -gamma * x.f + 2.0 * p.pumping,
            -kI * kc * x.b - kI * kappa * std::conj(x.c) + 0.5 * std::norm(kappa / p.coupling)};
}

}  // namespace detail

/// Gaussian characteristic operator of the oscillator model for the test
/// function k (the complex value per cell of the model's single channel
/// pair) and a Gaussian initial state (alpha0, mu0, nu0), by RK4 with
/// `substeps` per piece of constant (k, drive).
inline std::vector<GaussianCoefficients> oscillator_characteristic(const OscillatorParams &p, const DriveProfile &drive,
                                                                   const TestFunction &k, Complex alpha0, Complex mu0,
                                                                   double nu0, std::size_t substeps = 200) {
    p.validate();
    k.grid.validate();
    if (k.channels() != 1) throw ConfigError("oscillator_characteristic: test function needs one complex channel");
    const TimeGrid &grid = k.grid;
    // The generator written for a measurement of a itself uses eta^* k.
    auto kappa_of = [&](std::size_t cell) { return std::conj(p.coupling) * k.values[0].at(cell); };
    detail::CoefState x{alpha0, alpha0, mu0, nu0, 0.0};
    std::vector<GaussianCoefficients> out;
    auto push = [&](double t) { out.push_back({t, x.b, x.c, x.d, x.f.real(), x.h}); };
    push(grid.t0);
    for (std::size_t i = 0; i < grid.steps; ++i) {
        const Complex kappa = kappa_of(i);
        std::vector<double> pts{grid.time(i)};
        for (double b : drive.breaks(grid.time(i), grid.time(i + 1))) pts.push_back(b);
        pts.push_back(grid.time(i + 1));
        for (std::size_t s = 0; s + 1 < pts.size(); ++s) {
            const Complex g = drive.at(0.5 * (pts[s] + pts[s + 1]));
            const double h = (pts[s + 1] - pts[s]) / double(substeps);
            for (std::size_t n = 0; n < substeps; ++n) {
                const auto k1 = detail::coef_rhs(p, kappa, g, x);
                const auto k2 = detail::coef_rhs(p, kappa, g, x + k1 * (0.5 * h));
                const auto k3 = detail::coef_rhs(p, kappa, g, x + k2 * (0.5 * h));
                const auto k4 = detail::coef_rhs(p, kappa, g, x + k3 * h);
                x = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            }
        }
        push(grid.time(i + 1));
    }
    return out;
}

/// A-priori mean <a>(t) in closed form for a piecewise-constant drive.
inline Complex oscillator_mean(const OscillatorParams &p, const DriveProfile &drive, Complex alpha0, double t,
                               double t0 = 0.0) {
    const Complex z = kI * p.omega + 0.5 * p.gamma();
    Complex out = std::exp(-z * (t - t0)) * alpha0;
    std::vector<double> pts{t0};
    for (double b : drive.breaks(t0, t)) pts.push_back(b);
    pts.push_back(t);
    for (std::size_t s = 0; s + 1 < pts.size(); ++s) {
        const Complex g = drive.at(0.5 * (pts[s] + pts[s + 1]));
        out += -kI * g * (std::exp(-z * (t - pts[s + 1])) - std::exp(-z * (t - pts[s]))) / z;
    }
    return out;
}

/// A-priori covariance <a^dagger a> - |<a>|^2.
inline double oscillator_covariance(const OscillatorParams &p, double nu0, double t) {
    const double gamma = p.gamma(), s = 2.0 * p.pumping / gamma;
    return s + (nu0 - s) * std::exp(-gamma * t);
}

/// A-priori <a^2> - <a>^2.
inline Complex oscillator_squeezing(const OscillatorParams &p, Complex mu0, double t) {
    return std::exp(-(2.0 * kI * p.omega + p.gamma()) * t) * mu0;
}

/// Covariance kernel of the output rate for cells of length `cell`: the
/// singular diagonal part 1/(2|eta|^2) delta(s - s') becomes
/// 1/(2|eta|^2 cell) when s == s', where the regular part is C(s).
inline Complex output_covariance(const OscillatorParams &p, double nu0, double s, double s2, double cell) {
    const double gamma = p.gamma();
    const Complex z = kI * p.omega + 0.5 * gamma;
    Complex out = 0.0;
    if (s == s2) out += 1.0 / (2.0 * std::norm(p.coupling) * cell) + oscillator_covariance(p, nu0, s);
    if (s > s2) out += std::exp(-z * (s - s2)) * oscillator_covariance(p, nu0, s2);
    if (s2 > s) out += std::exp((kI * p.omega - 0.5 * gamma) * (s2 - s)) * oscillator_covariance(p, nu0, s);
    return out;
}

/// Stationary form of the regular part of output_covariance.
inline Complex stationary_output_covariance(const OscillatorParams &p, double s, double s2) {
    const double gamma = p.gamma();
    return 2.0 * p.pumping / gamma * std::exp(-0.5 * gamma * std::abs(s - s2)) * std::exp(-kI * p.omega * (s - s2));
}

}  // namespace qfilter
