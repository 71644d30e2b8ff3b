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

#include "qfilter/oracles.hpp"

#include <gtest/gtest.h>

#include "test_util.hpp"

namespace qfilter {
namespace {

using testutil::max_abs;

TEST(TwoLevelOracle, MatchesCountingEngineOnSharedRecords) {
    const TwoLevelParams p{0.8, 0.3, 0.2, 1.1};
    const MeasurementModel m = two_level_counting(p);
    const TimeGrid grid{0.0, 5.0, 50};
    const Operator rho0 = projector((ops::basis(2, 0) + Complex(0.3, 0.4) * ops::basis(2, 1)).normalized());
    CountingSimulator sim(m, grid);
    for (int tr = 0; tr < 20; ++tr) {
        const auto rec = sim.run(rho0, 11, tr);
        const auto oracle = twolevel_filter_evolve(p, TwoLevelFilterState::from_state(rho0), realization_of(rec), grid);
        const auto lin = linear_counting_evolve(m, rho0, realization_of(rec), grid, 1.0 / p.detected);
        for (std::size_t i = 0; i < grid.size(); ++i) {
            EXPECT_LT(max_abs(oracle[i].state() - rec.snapshots[i]), 1e-8);
            EXPECT_NEAR(oracle[i].c(), lin.c(i), 1e-8 * lin.c(i));
        }
    }
}

TEST(TwoLevelOracle, CoherenceVanishesAfterFirstCount) {
    const TwoLevelParams p{1.0, 0.4, 0.1, 1.0};
    const TimeGrid grid{0.0, 2.0, 20};
    const CountRealization r{{{0.55, 0}, {1.3, 0}}, 0.0, 2.0};
    const auto s = twolevel_filter_evolve(p, {0.5, 0.5, Complex(0.6, 0.2)}, r, grid);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (grid.time(i) > 0.55) EXPECT_EQ(s[i].zeta, Complex(0.0));
        else EXPECT_NE(s[i].zeta, Complex(0.0));
    }
}

TEST(TwoLevelOracle, PureDetectionNoCountBranch) {
    const TwoLevelParams p{0.0, 0.0, 0.0, 1.7};
    const TimeGrid grid{0.0, 3.0, 6};
    const auto s = twolevel_filter_evolve(p, {0.4, 0.6, 0.0}, {{}, 0.0, 3.0}, grid);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        EXPECT_NEAR(s[i].pi0, 0.4, 1e-14);
        EXPECT_NEAR(s[i].pi1, 0.6 * std::exp(-1.7 * grid.time(i)), 1e-14);
    }
}

TEST(TwoLevelOracle, WignerGroundWeightBranches) {
    // Ground weight before the count fills from unobserved decay; after the
    // count it freezes at the excited weight just before the count.
    const TwoLevelParams p{0.3, 0.0, 0.7, 1.0};
    const double kappa = p.kappa(), t1 = 0.85;
    const TimeGrid grid{0.0, 2.0, 20};
    const auto s = twolevel_filter_evolve(p, {0.2, 0.8, 0.0}, {{{t1, 0}}, 0.0, 2.0}, grid);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double t = grid.time(i);
        const double expected =
            t <= t1 ? 0.2 + p.decay / (2 * kappa) * (1 - std::exp(-2 * kappa * t)) * 0.8 : std::exp(-2 * kappa * t1) * 0.8;
        EXPECT_NEAR(s[i].pi0, expected, 1e-13);
        if (t > t1) EXPECT_EQ(s[i].pi1, 0.0);
    }
}

TEST(WignerEpd, NoCountProbabilityExample) {
    const TwoLevelParams p{0.0, 0.0, 1.0, 1.0};
    EXPECT_NEAR(wigner_no_count_probability(p, 1.0, 1.0), (1.0 + std::exp(-2.0)) / 2.0, 1e-15);
    EXPECT_NEAR(wigner_no_count_probability(p, 1.0, 1.0), 0.567667641618306, 1e-12);
}

TEST(WignerEpd, StructureAndEdgeCases) {
    const TwoLevelParams p{0.0, 0.0, 0.5, 1.5};
    EXPECT_EQ(wigner_epd(p, 1.0, 2.0, {0.3, 0.9}), 0.0);
    EXPECT_EQ(wigner_epd(p, 1.0, 2.0, {0.3, 0.9, 1.2}), 0.0);
    EXPECT_EQ(wigner_no_count_probability(p, 0.0, 2.0), 1.0);
    EXPECT_EQ(wigner_first_count_density(p, 0.0, 0.4), 0.0);
    EXPECT_THROW(wigner_no_count_probability({0.0, 0.1, 0.5, 1.5}, 1.0, 1.0), ContractViolation);
    // The densities integrate to one with the no-count probability.
    const double t = 1.7, h = t / 20000;
    double integral = 0.0;
    for (int i = 0; i < 20000; ++i) integral += h * wigner_first_count_density(p, 0.9, (i + 0.5) * h);
    EXPECT_NEAR(integral + wigner_no_count_probability(p, 0.9, t), 1.0, 1e-9);
}

TEST(WignerEpd, MatchesLinearFilter) {
    const TwoLevelParams p{0.0, 0.0, 1.0, 1.0};
    const MeasurementModel m = two_level_counting(p);
    const TimeGrid grid{0.0, 1.0, 4};
    const auto none = linear_counting_evolve(m, projector(ops::basis(2, 0)), {{}, 0.0, 1.0}, grid, 1.0);
    EXPECT_NEAR(none.c(4), wigner_no_count_probability(p, 1.0, 1.0), 1e-10);
    const auto one = linear_counting_evolve(m, projector(ops::basis(2, 0)), {{{0.35, 0}}, 0.0, 1.0}, grid, 1.0);
    EXPECT_NEAR(one.c(4), wigner_epd(p, 1.0, 1.0, {0.35}), 1e-10);
}

OscillatorParams riccati_params(double gamma, double e2, double up) {
    OscillatorParams p;
    p.coupling = std::sqrt(e2);
    p.pumping = up;
    p.damping = gamma / 2.0 - e2 + up;
    return p;
}

TEST(Riccati, GoldenRatioExample) {
    const OscillatorParams p = riccati_params(1.0, 0.5, 0.5);
    EXPECT_NEAR(p.gamma(), 1.0, 1e-15);
    EXPECT_NEAR(riccati_stationary(p), (std::sqrt(5.0) - 1.0) / 2.0, 1e-15);
    const auto path = riccati_evolve(p, {0.0, 0.0, 0.0}, {0.0, 40.0, 40});
    EXPECT_NEAR(path.back().nu, (std::sqrt(5.0) - 1.0) / 2.0, 1e-12);
}

TEST(Riccati, StationaryResidualAcrossParameters) {
    for (double gamma : {0.1, 0.5, 1.0, 3.0, 10.0})
        for (double e2 : {1e-6, 0.01, 0.3, 1.0, 4.0})
            for (double up : {0.0, 1e-3, 0.2, 1.0, 5.0}) {
                if (gamma / 2.0 - e2 + up < 0.0) continue;
                const OscillatorParams p = riccati_params(gamma, e2, up);
                const double nu = riccati_stationary(p);
                EXPECT_GE(nu, 0.0);
                EXPECT_LE(std::abs(riccati_residual(p, nu)), 1e-12 * std::max(gamma, up));
                if (up == 0.0) EXPECT_EQ(nu, 0.0);
                else EXPECT_GT(nu, 0.0);
            }
    OscillatorParams p;
    p.coupling = 0.0;
    p.pumping = 0.1;
    EXPECT_THROW(riccati_stationary(p), ContractViolation);
}

TEST(Riccati, ZeroSqueezingAndZeroVarianceAreInvariant) {
    const OscillatorParams p = riccati_params(1.3, 0.4, 0.0);
    for (const auto &g : riccati_evolve(p, {0.0, 0.0, 0.0}, {0.0, 5.0, 10})) {
        EXPECT_EQ(g.mu, Complex(0.0));
        EXPECT_EQ(g.nu, 0.0);
    }
    const OscillatorParams q = riccati_params(1.3, 0.4, 0.3);
    for (const auto &g : riccati_evolve(q, {0.0, 0.0, 0.7}, {0.0, 5.0, 10})) EXPECT_EQ(g.mu, Complex(0.0));
}

TEST(Riccati, PosteriorTracksEngineOnSharedNoise) {
    OscillatorParams p;
    p.cutoff = 18;
    p.omega = 1.0;
    p.drive = Complex(0.3, -0.2);
    p.damping = 0.2;
    p.pumping = 0.1;
    p.coupling = Complex(0.6, 0.3);
    const MeasurementModel m = oscillator_model(p);
    const TimeGrid grid{0.0, 2.0, 20};
    const Complex alpha0(0.8, 0.2);
    DiffusiveSimulator sim(m, grid, {.dt = 1e-3, .keep_path = true});
    const auto run = sim.run(projector(ops::coherent(18, alpha0)), 5, 0);
    const auto oracle = riccati_posterior_evolve(p, {p.drive, {}}, {alpha0, 0.0, 0.0}, run.path, grid);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const GaussianPosterior e = gaussian_moments(run.record.snapshots[i]);
        EXPECT_LT(std::abs(e.mean - oracle[i].mean), 5e-3) << "t = " << grid.time(i);
        EXPECT_LT(std::abs(e.nu - oracle[i].nu), 5e-3);
        EXPECT_LT(std::abs(e.mu - oracle[i].mu), 5e-3);
    }
}

TEST(GaussianCharacteristic, ZeroTestFunctionGivesAPrioriMoments) {
    OscillatorParams p;
    p.omega = 1.2;
    p.pumping = 0.15;
    p.damping = 0.4;
    p.coupling = Complex(0.5, -0.2);
    const TimeGrid sched{0.0, 3.0, 3};
    const DriveProfile drive{ComplexSchedule(std::vector<Complex>{Complex(0.3, 0.1), 0.0, Complex(-0.2, 0.4)}), sched};
    const TimeGrid grid{0.0, 3.0, 12};
    const Complex alpha0(0.5, -0.7), mu0(0.1, 0.05);
    const double nu0 = 0.3;
    const auto coef = oscillator_characteristic(p, drive, TestFunction::zero(grid, 1), alpha0, mu0, nu0);
    for (const auto &c : coef) {
        EXPECT_LT(std::abs(c.phi() - 1.0), 1e-12);
        EXPECT_LT(std::abs(c.b - oscillator_mean(p, drive, alpha0, c.t)), 1e-10);
        EXPECT_LT(std::abs(c.c - oscillator_mean(p, drive, alpha0, c.t)), 1e-10);
        EXPECT_LT(std::abs(c.d - oscillator_squeezing(p, mu0, c.t)), 1e-10);
        EXPECT_NEAR(c.f, oscillator_covariance(p, nu0, c.t), 1e-10);
    }
}

TEST(GaussianCharacteristic, UndrivenMeanDecays) {
    OscillatorParams p;
    p.omega = 2.0;
    const Complex alpha0(1.0, 0.5);
    for (double t : {0.0, 0.5, 3.0})
        EXPECT_LT(std::abs(oscillator_mean(p, {}, alpha0, t) - std::exp(-(kI * p.omega + 0.5 * p.gamma()) * t) * alpha0),
                  1e-15);
}

TEST(GaussianCharacteristic, AgreesWithTruncatedPropagation) {
    OscillatorParams p;
    p.cutoff = 20;
    p.omega = 1.0;
    p.drive = Complex(0.2, 0.1);
    p.damping = 0.3;
    p.pumping = 0.05;
    p.coupling = Complex(0.7, 0.2);
    const MeasurementModel m = oscillator_model(p);
    const TimeGrid grid{0.0, 1.0, 4};
    TestFunction k{grid, {{Complex(0.1, -0.05), Complex(0.0, 0.1), Complex(-0.08, 0.0), Complex(0.05, 0.05)}}};
    const Complex alpha0(0.6, -0.3);
    const auto det = propagate_characteristic(m, k, projector(ops::coherent(20, alpha0)));
    const auto coef = oscillator_characteristic(p, {p.drive, {}}, k, alpha0, 0.0, 0.0);
    for (std::size_t i = 0; i < grid.size(); ++i) EXPECT_LT(std::abs(det[i].phi - coef[i].phi()), 1e-7);
}

TEST(GaussianCharacteristic, APrioriCovarianceAgreesWithMasterEquation) {
    OscillatorParams p;
    p.cutoff = 25;
    p.pumping = 0.1;
    p.damping = 0.3;
    p.drive = Complex(0.2, 0.0);
    const MeasurementModel m = oscillator_model(p);
    const TimeGrid grid{0.0, 2.0, 4};
    const Complex alpha0(0.4, 0.3);
    const auto rho = master_evolve(m, projector(ops::coherent(25, alpha0)), grid);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const GaussianPosterior g = gaussian_moments(rho[i]);
        EXPECT_LT(std::abs(g.mean - oscillator_mean(p, {p.drive, {}}, alpha0, grid.time(i))), 1e-9);
        EXPECT_NEAR(g.nu, oscillator_covariance(p, 0.0, grid.time(i)), 1e-9);
    }
}

TEST(GaussianCharacteristic, OutputCovarianceReachesStationaryForm) {
    OscillatorParams p;
    p.pumping = 0.2;
    p.damping = 0.4;
    const double cell = 0.01;
    EXPECT_LT(std::abs(output_covariance(p, 0.0, 60.0, 59.3, cell) - stationary_output_covariance(p, 60.0, 59.3)), 1e-12);
    EXPECT_LT(std::abs(output_covariance(p, 0.0, 59.3, 60.0, cell) - stationary_output_covariance(p, 59.3, 60.0)), 1e-12);
    EXPECT_NEAR(output_covariance(p, 0.0, 60.0, 60.0, cell).real(), 1.0 / (2.0 * cell) + 2 * p.pumping / p.gamma(), 1e-9);
}

}  // namespace
}  // namespace qfilter
