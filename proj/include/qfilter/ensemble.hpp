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

// Seeded trajectory ensembles: parallel batches reduced in trajectory-index
// order, and summary statistics with standard errors.

#include "qfilter/diffusive.hpp"

#include <algorithm>
#include <exception>
#include <functional>
#include <thread>

namespace qfilter {

/// Rethrows the active exception as the same error kind, prefixed with the
/// trajectory index.
[[noreturn]] inline void rethrow_for_trajectory(std::exception_ptr e, std::uint64_t index) {
    const std::string prefix = "trajectory " + std::to_string(index) + ": ";
    try {
        std::rethrow_exception(e);
    } catch (const ConfigError &x) {
        throw ConfigError(prefix + x.what());
    } catch (const NumericalError &x) {
        throw NumericalError(prefix + x.what());
    } catch (const ContractViolation &x) {
        throw ContractViolation(prefix + x.what());
    } catch (const std::exception &x) {
        throw Error(prefix + x.what());
    }
}

struct ParallelOptions {
    /// Worker threads; 0 uses the hardware concurrency.
    std::size_t threads = 0;
    /// Trajectories held in memory between reductions.
    std::size_t batch = 256;

    std::size_t workers() const {
        const std::size_t hw = std::max(1u, std::thread::hardware_concurrency());
        return threads == 0 ? hw : threads;
    }
};

/// Runs trajectories 0..n-1 and passes each to `sink` in index order. Each
/// worker builds its own engine with `make_engine`, so engine caches are
/// never shared; results do not depend on the number of workers.
template <class Record>
void run_ordered(std::size_t n, const ParallelOptions &par,
                 const std::function<std::function<Record(std::uint64_t)>()> &make_engine,
                 const std::function<void(Record &&)> &sink) {
    if (n == 0) throw ConfigError("trajectories: need at least one");
    const std::size_t nworkers = std::max<std::size_t>(1, std::min(par.workers(), n));
    const std::size_t batch = std::max<std::size_t>(par.batch, nworkers);
    std::vector<std::function<Record(std::uint64_t)>> engines;
    for (std::size_t w = 0; w < nworkers; ++w) engines.push_back(make_engine());
    std::vector<std::optional<Record>> slot(batch);
    std::vector<std::exception_ptr> error(batch);
    for (std::size_t start = 0; start < n; start += batch) {
        const std::size_t count = std::min(batch, n - start);
        auto work = [&](std::size_t w) {
            for (std::size_t i = w; i < count; i += nworkers) {
                try {
                    slot[i] = engines[w](start + i);
                } catch (...) {
                    error[i] = std::current_exception();
                }
            }
        };
        if (nworkers == 1) {
            work(0);
        } else {
            std::vector<std::thread> pool;
            for (std::size_t w = 0; w < nworkers; ++w) pool.emplace_back(work, w);
            for (auto &t : pool) t.join();
        }
        for (std::size_t i = 0; i < count; ++i) {
            if (error[i]) rethrow_for_trajectory(error[i], start + i);
            sink(std::move(*slot[i]));
            slot[i].reset();
        }
    }
}

/// Time-indexed ensemble statistics. State statistics are kept at the
/// snapshot steps, output statistics at every grid point.
struct EnsembleSummary {
    DetectionMode mode = DetectionMode::none;
    std::size_t trajectories = 0;
    TimeGrid grid;
    std::vector<std::size_t> snapshot_steps;
    std::vector<Operator> mean_state;
    /// Standard errors of the real and imaginary parts of each entry.
    std::vector<Operator> state_std_error;
    std::vector<double> purity_mean;
    std::vector<double> purity_std_error;
    /// [grid point, channel]
    Eigen::MatrixXd output_mean;
    Eigen::MatrixXd output_std_error;
    /// Sample covariance of the outputs at each grid point.
    std::vector<Eigen::MatrixXd> output_covariance;
    Eigen::MatrixXd martingale_mean;
    Eigen::MatrixXd martingale_std_error;
    /// Trace distance between the mean state and a reference (master)
    /// evolution at the snapshot steps; empty without a reference.
    std::vector<double> trace_distance_to_master;
    /// The reference states themselves.
    std::vector<Operator> master_state;
    double mean_events = 0.0;
    double min_purity = 1.0;
    double min_eigenvalue = 0.0;
    std::size_t clipped = 0;
};

namespace detail {

inline double std_error(double sum, double sum2, std::size_t n) {
    if (n < 2) return 0.0;
    const double mean = sum / double(n);
    const double var = std::max(0.0, (sum2 - double(n) * mean * mean) / double(n - 1));
    return std::sqrt(var / double(n));
}

}  // namespace detail

/// Streaming reducer for trajectory records. Records must share mode, grid,
/// channel count and snapshot steps.
class EnsembleAccumulator {
  public:
    void add(const TrajectoryRecord &rec) {
        if (n_ == 0) start(rec);
        if (rec.mode != mode_) throw ContractViolation("summarize_ensemble: mixed detection modes");
        if (!(rec.grid == grid_) || rec.channels() != channels_ || rec.snapshot_steps != snapshot_steps_)
            throw ContractViolation("summarize_ensemble: records are not homogeneous");
        ++n_;
        for (std::size_t s = 0; s < snapshot_steps_.size(); ++s) {
            const Operator &rho = rec.snapshots[s];
            state_sum_[s] += rho;
            state_sum2_[s] += Operator(rho.real().cwiseAbs2().cast<Complex>() + kI * rho.imag().cwiseAbs2().cast<Complex>());
            const double p = purity(rho);
            purity_sum_[s] += p;
            purity_sum2_[s] += p * p;
        }
        for (std::size_t i = 0; i < grid_.size(); ++i) {
            const Eigen::VectorXd y = rec.outputs.row(Eigen::Index(i)).transpose();
            const Eigen::VectorXd m = y - rec.compensator.row(Eigen::Index(i)).transpose();
            out_sum_.row(Eigen::Index(i)) += y.transpose();
            out_sum2_.row(Eigen::Index(i)) += y.cwiseAbs2().transpose();
            out_outer_[i] += y * y.transpose();
            mart_sum_.row(Eigen::Index(i)) += m.transpose();
            mart_sum2_.row(Eigen::Index(i)) += m.cwiseAbs2().transpose();
        }
        events_ += double(rec.events.size());
        min_purity_ = std::min(min_purity_, rec.min_purity);
        min_eigenvalue_ = std::min(min_eigenvalue_, rec.min_eigenvalue);
        clipped_ += rec.clipped ? 1 : 0;
    }

    std::size_t size() const { return n_; }

    /// Summary; `reference` holds master states at the snapshot steps.
    EnsembleSummary finish(const std::vector<Operator> *reference = nullptr, const Tolerances &tol = {}) const {
        if (n_ == 0) throw ContractViolation("summarize_ensemble: empty ensemble");
        EnsembleSummary s;
        s.mode = mode_;
        s.trajectories = n_;
        s.grid = grid_;
        s.snapshot_steps = snapshot_steps_;
        const double n = double(n_);
        for (std::size_t k = 0; k < snapshot_steps_.size(); ++k) {
            const Operator mean = state_sum_[k] / n;
            Operator se(mean.rows(), mean.cols());
            for (Eigen::Index a = 0; a < se.rows(); ++a)
                for (Eigen::Index b = 0; b < se.cols(); ++b)
                    se(a, b) = Complex(detail::std_error(state_sum_[k](a, b).real(), state_sum2_[k](a, b).real(), n_),
                                       detail::std_error(state_sum_[k](a, b).imag(), state_sum2_[k](a, b).imag(), n_));
            const double norm_err = std::abs(mean.trace() - 1.0);
            if (norm_err > std::max(1e-10, tol.trace)) {
                std::ostringstream os;
                os << "summarize_ensemble: mean state has trace error " << norm_err << " at grid step " << snapshot_steps_[k];
                throw NumericalError(os.str());
            }
            s.mean_state.push_back(mean);
            s.state_std_error.push_back(se);
            s.purity_mean.push_back(purity_sum_[k] / n);
            s.purity_std_error.push_back(detail::std_error(purity_sum_[k], purity_sum2_[k], n_));
        }
        const auto rows = Eigen::Index(grid_.size()), cols = Eigen::Index(channels_);
        s.output_mean = out_sum_ / n;
        s.martingale_mean = mart_sum_ / n;
        s.output_std_error.resize(rows, cols);
        s.martingale_std_error.resize(rows, cols);
        for (Eigen::Index i = 0; i < rows; ++i) {
            for (Eigen::Index j = 0; j < cols; ++j) {
                s.output_std_error(i, j) = detail::std_error(out_sum_(i, j), out_sum2_(i, j), n_);
                s.martingale_std_error(i, j) = detail::std_error(mart_sum_(i, j), mart_sum2_(i, j), n_);
            }
            const Eigen::VectorXd mu = s.output_mean.row(i).transpose();
            s.output_covariance.push_back(n_ > 1 ? Eigen::MatrixXd((out_outer_[std::size_t(i)] - n * mu * mu.transpose()) / (n - 1.0))
                                                 : Eigen::MatrixXd::Zero(cols, cols));
        }
        if (reference) {
            if (reference->size() != s.mean_state.size())
                throw ContractViolation("summarize_ensemble: reference does not match the snapshot steps");
            for (std::size_t k = 0; k < s.mean_state.size(); ++k)
                s.trace_distance_to_master.push_back(trace_distance(s.mean_state[k], (*reference)[k]));
            s.master_state = *reference;
        }
        s.mean_events = events_ / n;
        s.min_purity = min_purity_;
        s.min_eigenvalue = min_eigenvalue_;
        s.clipped = clipped_;
        return s;
    }

  private:
    void start(const TrajectoryRecord &rec) {
        mode_ = rec.mode;
        grid_ = rec.grid;
        channels_ = rec.channels();
        snapshot_steps_ = rec.snapshot_steps;
        const Eigen::Index d = rec.snapshots.empty() ? 0 : rec.snapshots.front().rows();
        state_sum_.assign(snapshot_steps_.size(), Operator::Zero(d, d));
        state_sum2_ = state_sum_;
        purity_sum_.assign(snapshot_steps_.size(), 0.0);
        purity_sum2_ = purity_sum_;
        const auto rows = Eigen::Index(grid_.size()), cols = Eigen::Index(channels_);
        out_sum_ = out_sum2_ = mart_sum_ = mart_sum2_ = Eigen::MatrixXd::Zero(rows, cols);
        out_outer_.assign(grid_.size(), Eigen::MatrixXd::Zero(cols, cols));
        min_eigenvalue_ = rec.min_eigenvalue;
    }

    std::size_t n_ = 0;
    DetectionMode mode_ = DetectionMode::none;
    TimeGrid grid_;
    std::size_t channels_ = 0;
    std::vector<std::size_t> snapshot_steps_;
    std::vector<Operator> state_sum_, state_sum2_;
    std::vector<double> purity_sum_, purity_sum2_;
    Eigen::MatrixXd out_sum_, out_sum2_, mart_sum_, mart_sum2_;
    std::vector<Eigen::MatrixXd> out_outer_;
    double events_ = 0.0;
    double min_purity_ = 1.0;
    double min_eigenvalue_ = 0.0;
    std::size_t clipped_ = 0;
};

inline EnsembleSummary summarize_ensemble(const std::vector<TrajectoryRecord> &records,
                                          const std::vector<Operator> *reference = nullptr) {
    EnsembleAccumulator acc;
    for (const auto &r : records) acc.add(r);
    return acc.finish(reference);
}

/// Summary of a deterministic master-equation run: the mean state is the
/// master state itself and every standard error vanishes.
inline EnsembleSummary master_summary(const std::vector<Operator> &states, const TimeGrid &grid,
                                      std::size_t snapshot_every) {
    if (states.size() != grid.size()) throw ContractViolation("master_summary: one state per grid point");
    EnsembleSummary s;
    s.trajectories = 1;
    s.grid = grid;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (!detail::is_snapshot(i, grid.steps, snapshot_every == 0 ? 1 : snapshot_every)) continue;
        s.snapshot_steps.push_back(i);
        s.mean_state.push_back(states[i]);
        s.state_std_error.push_back(Operator::Zero(states[i].rows(), states[i].cols()));
        s.purity_mean.push_back(purity(states[i]));
        s.purity_std_error.push_back(0.0);
        s.trace_distance_to_master.push_back(0.0);
        s.master_state.push_back(states[i]);
    }
    s.min_purity = *std::min_element(s.purity_mean.begin(), s.purity_mean.end());
    return s;
}

/// Master states at the given grid steps.
inline std::vector<Operator> master_at_steps(const MeasurementModel &m, const Operator &rho0, const TimeGrid &grid,
                                             const std::vector<std::size_t> &steps) {
    const auto all = master_evolve(m, rho0, grid);
    std::vector<Operator> out;
    for (std::size_t i : steps) out.push_back(all.at(i));
    return out;
}

/// Counting or diffusive ensemble of `n` trajectories reduced in index order.
struct EnsembleRequest {
    const MeasurementModel *model = nullptr;
    TimeGrid grid;
    Operator rho0;
    std::uint64_t seed = 0;
    std::size_t trajectories = 1;
    CountingOptions counting;
    DiffusiveOptions diffusive;
    ParallelOptions parallel;
};

inline EnsembleSummary run_ensemble(const EnsembleRequest &req,
                                    const std::function<void(const TrajectoryRecord &)> &on_record = {},
                                    bool compare_to_master = true) {
    if (!req.model) throw ContractViolation("run_ensemble: no model");
    const MeasurementModel &m = *req.model;
    m.validate();
    const DetectionMode mode = m.detection();
    if (mode == DetectionMode::none) throw ConfigError("run_ensemble: model has no observed channels");
    EnsembleAccumulator acc;
    auto sink = [&](TrajectoryRecord &&r) {
        if (on_record) on_record(r);
        acc.add(r);
    };
    using Engine = std::function<TrajectoryRecord(std::uint64_t)>;
    std::function<Engine()> factory;
    if (mode == DetectionMode::counting) {
        factory = [&]() -> Engine {
            auto sim = std::make_shared<CountingSimulator>(m, req.grid, req.counting);
            return [sim, &req](std::uint64_t i) { return sim->run(req.rho0, req.seed, i); };
        };
    } else {
        factory = [&]() -> Engine {
            auto sim = std::make_shared<DiffusiveSimulator>(m, req.grid, req.diffusive);
            return [sim, &req](std::uint64_t i) { return sim->run(req.rho0, req.seed, i).record; };
        };
    }
    run_ordered<TrajectoryRecord>(req.trajectories, req.parallel, factory, sink);
    if (!compare_to_master || acc.size() == 0) return acc.finish();
    EnsembleSummary probe = acc.finish();
    if (probe.snapshot_steps.empty()) return probe;
    const auto reference = master_at_steps(m, req.rho0, req.grid, probe.snapshot_steps);
    return acc.finish(&reference);
}

}  // namespace qfilter
