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

#include "qfilter/charfun.hpp"
#include "qfilter/zoo.hpp"

#include <gtest/gtest.h>

#include "test_util.hpp"

namespace qfilter {
namespace {

using testutil::max_abs;

const TwoLevelParams kWigner{0.0, 0.0, 1.0, 1.0};

TEST(Characteristic, ZeroTestFunctionReproducesMasterEquation) {
    const MeasurementModel m = two_level_counting({0.4, 0.3, 0.2, 1.0});
    const TimeGrid grid{0.0, 2.0, 8};
    testutil::Rng rng(1);
    const Operator rho0 = rng.density(2);
    const auto res = propagate_characteristic(m, TestFunction::zero(grid, 1), rho0);
    const auto master = master_evolve(m, rho0, grid);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        EXPECT_LT(max_abs(res[i].g_rho - master[i]), 1e-10);
        EXPECT_NEAR(std::abs(res[i].phi - 1.0), 0.0, 1e-10);
        EXPECT_LT(std::abs(res[i].phi - res[i].g_rho.trace()), 1e-12);
    }
}

TEST(Characteristic, WignerAtomCountingLaw) {
    // At most one count: Phi = P(no count) + e^{ik} (1 - P(no count)).
    const MeasurementModel m = two_level_counting(kWigner);
    const TimeGrid grid{0.0, 1.5, 6};
    const double k = 0.9;
    const auto res = propagate_characteristic(m, TestFunction::constant(grid, {k}), projector(ops::basis(2, 0)));
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double p0 = 0.5 * (1.0 + std::exp(-2.0 * grid.time(i)));
        const Complex expected = p0 + std::exp(kI * k) * (1.0 - p0);
        EXPECT_LT(std::abs(res[i].phi - expected), 1e-10);
        EXPECT_LE(std::abs(res[i].phi), 1.0 + 1e-12);
    }
}

TEST(Characteristic, LinearInInitialState) {
    const MeasurementModel m = two_level_diffusive({0.4, 0.3, 0.2, 1.0}, Complex(0.6, 0.8));
    const TimeGrid grid{0.0, 1.0, 4};
    TestFunction k{grid, {{0.3, -0.5, 1.2, 0.0}}};
    testutil::Rng rng(2);
    const Operator a = rng.density(2), b = rng.density(2);
    const double lam = 0.3;
    const auto ra = propagate_characteristic(m, k, a);
    const auto rb = propagate_characteristic(m, k, b);
    const auto rm = propagate_characteristic(m, k, Operator(lam * a + (1 - lam) * b));
    for (std::size_t i = 0; i < grid.size(); ++i)
        EXPECT_LT(max_abs(rm[i].g_rho - (lam * ra[i].g_rho + (1 - lam) * rb[i].g_rho)), 1e-12);
}

TEST(Characteristic, ComplexifiedGeneratorMatchesComplexForm) {
    OscillatorParams p;
    p.cutoff = 5;
    p.pumping = 0.1;
    p.coupling = Complex(0.7, 0.2);
    const MeasurementModel m = oscillator_model(p);
    const ModelSlice s = m.slice(0.0);
    const Complex kappa(0.4, -0.9);
    const LinearMap g = characteristic_generator(s, DetectionMode::diffusive, {kappa.real(), kappa.imag()});
    const Operator z = p.coupling * ops::annihilation(5);
    testutil::Rng rng(3);
    const Operator x = rng.matrix(5);
    const Operator expected = s.liouvillian(x) - 0.5 * std::norm(kappa) * x +
                              kI * (std::conj(kappa) * z * x + kappa * x * z.adjoint());
    EXPECT_LT(max_abs(g(x) - expected), 1e-12);
}

TEST(Characteristic, RejectsMismatchedTestFunction) {
    const MeasurementModel m = two_level_counting(kWigner);
    const TimeGrid grid{0.0, 1.0, 2};
    EXPECT_THROW(propagate_characteristic(m, TestFunction::zero(grid, 2), projector(ops::basis(2, 0))), ConfigError);
    EXPECT_THROW(propagate_characteristic(m, TestFunction::constant(grid, {Complex(0, 1)}), projector(ops::basis(2, 0))),
                 ConfigError);
}

TEST(MonteCarloCharacteristic, ZeroTestFunctionIsExactlyOne) {
    const MeasurementModel m = two_level_counting(kWigner);
    const TimeGrid grid{0.0, 1.0, 4};
    CountingSimulator sim(m, grid, {.snapshot_every = 0});
    std::vector<TrajectoryRecord> recs;
    for (int i = 0; i < 50; ++i) recs.push_back(sim.run(projector(ops::basis(2, 0)), 1, i));
    for (const auto &r : monte_carlo_characteristic(m, recs, TestFunction::zero(grid, 1))) {
        EXPECT_EQ(r.phi, Complex(1.0));
        EXPECT_EQ(r.std_error, 0.0);
    }
    EXPECT_THROW(monte_carlo_characteristic(m, {}, TestFunction::zero(grid, 1)), ContractViolation);
}

TEST(MonteCarloCharacteristic, WignerAtomMatchesPropagation) {
    const MeasurementModel m = two_level_counting(kWigner);
    const TimeGrid grid{0.0, 2.0, 4};
    TestFunction k{grid, {{0.5, 1.5, -2.0, 0.7}}};
    CountingSimulator sim(m, grid, {.snapshot_every = 0});
    std::vector<TrajectoryRecord> recs;
    for (int i = 0; i < 5000; ++i) recs.push_back(sim.run(projector(ops::basis(2, 0)), 2, i));
    const auto mc = monte_carlo_characteristic(m, recs, k);
    const auto det = propagate_characteristic(m, k, projector(ops::basis(2, 0)));
    for (std::size_t i = 1; i < grid.size(); ++i) EXPECT_LT(std::abs(mc[i].phi - det[i].phi), 3.0 * mc[i].std_error);
}

TEST(MonteCarloCharacteristic, DiffusiveOperatorEstimateMatchesPropagation) {
    const MeasurementModel m = two_level_diffusive({1.0, 0.2, 0.3, 1.0});
    const TimeGrid grid{0.0, 1.0, 4};
    TestFunction k{grid, {{0.8, 0.8, -0.4, 1.0}}};
    DiffusiveSimulator sim(m, grid, {.dt = 2.5e-3});
    std::vector<TrajectoryRecord> recs;
    const Operator rho0 = projector(ops::basis(2, 0));
    for (int i = 0; i < 3000; ++i) recs.push_back(sim.run(rho0, 3, i).record);
    const auto mc = monte_carlo_characteristic(m, recs, k, true);
    const auto det = propagate_characteristic(m, k, rho0);
    for (std::size_t i = 1; i < grid.size(); ++i) {
        EXPECT_LT(std::abs(mc[i].phi - det[i].phi), 3.0 * mc[i].std_error);
        EXPECT_LT(max_abs(mc[i].g_rho - det[i].g_rho), 6.0 * mc[i].std_error);
    }
}

}  // namespace
}  // namespace qfilter
