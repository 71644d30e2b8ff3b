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
#include "qfilter/ensemble.hpp"
#include "qfilter/zoo.hpp"

#include <gtest/gtest.h>

#include "test_util.hpp"

namespace qfilter {
namespace {

using testutil::max_abs;

const TwoLevelParams kPumped{1.0, 0.3, 0.2, 1.0};

EnsembleRequest counting_request(const MeasurementModel &m, std::size_t n, std::size_t threads) {
    EnsembleRequest req;
    req.model = &m;
    req.grid = {0.0, 2.0, 8};
    req.rho0 = projector(ops::basis(2, 0));
    req.seed = 21;
    req.trajectories = n;
    req.parallel.threads = threads;
    req.parallel.batch = 7;
    return req;
}

void expect_same(const EnsembleSummary &a, const EnsembleSummary &b) {
    ASSERT_EQ(a.mean_state.size(), b.mean_state.size());
    for (std::size_t k = 0; k < a.mean_state.size(); ++k) {
        EXPECT_EQ(a.mean_state[k], b.mean_state[k]);
        EXPECT_EQ(a.state_std_error[k], b.state_std_error[k]);
    }
    EXPECT_EQ(a.output_mean, b.output_mean);
    EXPECT_EQ(a.martingale_mean, b.martingale_mean);
    EXPECT_EQ(a.mean_events, b.mean_events);
}

TEST(Ensemble, IndependentOfThreadCount) {
    const MeasurementModel m = two_level_counting(kPumped);
    std::vector<std::uint64_t> order1, order3;
    const auto one = run_ensemble(counting_request(m, 50, 1), [&](const TrajectoryRecord &r) { order1.push_back(r.index); });
    const auto three = run_ensemble(counting_request(m, 50, 3), [&](const TrajectoryRecord &r) { order3.push_back(r.index); });
    expect_same(one, three);
    ASSERT_EQ(order1.size(), 50u);
    EXPECT_EQ(order1, order3);
    for (std::size_t i = 0; i < order1.size(); ++i) EXPECT_EQ(order1[i], i);
}

TEST(Ensemble, DiffusiveIndependentOfThreadCount) {
    const MeasurementModel m = two_level_diffusive(kPumped);
    EnsembleRequest req = counting_request(m, 12, 1);
    req.diffusive.dt = 1e-2;
    const auto one = run_ensemble(req);
    req.parallel.threads = 4;
    expect_same(one, run_ensemble(req));
}

TEST(Ensemble, SingleTrajectoryHasZeroSpread) {
    const MeasurementModel m = two_level_counting(kPumped);
    CountingSimulator sim(m, {0.0, 2.0, 8});
    const auto rec = sim.run(projector(ops::basis(2, 0)), 21, 0);
    const auto s = summarize_ensemble({rec});
    ASSERT_EQ(s.mean_state.size(), rec.snapshots.size());
    for (std::size_t k = 0; k < s.mean_state.size(); ++k) {
        EXPECT_LT(max_abs(s.mean_state[k] - rec.snapshots[k]), 1e-15);
        EXPECT_EQ(max_abs(s.state_std_error[k]), 0.0);
    }
    EXPECT_EQ(s.mean_events, double(rec.events.size()));
}

TEST(Ensemble, MeanStateTracksMasterEquation) {
    const MeasurementModel m = two_level_counting(kPumped);
    const auto s = run_ensemble(counting_request(m, 2000, 1));
    ASSERT_EQ(s.master_state.size(), s.mean_state.size());
    for (std::size_t k = 0; k < s.mean_state.size(); ++k) {
        const Operator d = s.mean_state[k] - s.master_state[k];
        for (Eigen::Index a = 0; a < 2; ++a)
            for (Eigen::Index b = 0; b < 2; ++b) {
                EXPECT_LE(std::abs(d(a, b).real()), 4.5 * s.state_std_error[k](a, b).real() + 1e-12);
                EXPECT_LE(std::abs(d(a, b).imag()), 4.5 * s.state_std_error[k](a, b).imag() + 1e-12);
            }
        EXPECT_LT(s.trace_distance_to_master[k], 0.05);
    }
}

TEST(Ensemble, MixedRecordsAreRejected) {
    const MeasurementModel mc = two_level_counting(kPumped);
    const MeasurementModel md = two_level_diffusive(kPumped);
    const TimeGrid grid{0.0, 1.0, 4};
    const auto a = CountingSimulator(mc, grid).run(projector(ops::basis(2, 0)), 1, 0);
    const auto b = DiffusiveSimulator(md, grid, {.dt = 0.05}).run(projector(ops::basis(2, 0)), 1, 0).record;
    EXPECT_THROW(summarize_ensemble({a, b}), ContractViolation);
}

TEST(Ensemble, FailureNamesTheTrajectory) {
    const MeasurementModel m = two_level_diffusive({1.0, 0.0, 0.0, 1.0});
    EnsembleRequest req = counting_request(m, 5, 1);
    req.rho0 = projector((ops::basis(2, 0) + ops::basis(2, 1)) / std::sqrt(2.0));
    req.diffusive.dt = 0.25;
    req.diffusive.scheme = DiffusiveScheme::euler;
    req.diffusive.psd_per_dt = 0.0;
    try {
        run_ensemble(req);
        FAIL() << "expected a positivity failure";
    } catch (const NumericalError &e) {
        EXPECT_NE(std::string(e.what()).find("trajectory "), std::string::npos) << e.what();
    }
}

TEST(Ensemble, MasterSummaryIsExact) {
    const MeasurementModel m = two_level_counting(kPumped);
    const TimeGrid grid{0.0, 1.0, 10};
    const auto states = master_evolve(m, projector(ops::basis(2, 0)), grid);
    const auto s = master_summary(states, grid, 5);
    EXPECT_EQ(s.snapshot_steps, (std::vector<std::size_t>{0, 5, 10}));
    for (double d : s.trace_distance_to_master) EXPECT_EQ(d, 0.0);
    EXPECT_THROW(master_summary(states, {0.0, 1.0, 5}, 1), ContractViolation);
}

}  // namespace
}  // namespace qfilter
