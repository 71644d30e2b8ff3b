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

// The command-line subcommands as library calls. Each writes its tables to
// an output directory and returns a JSON report that is also saved there
// as run.json.

#include "qfilter/io.hpp"
#include "qfilter/oracles.hpp"
#include "qfilter/scaling.hpp"

namespace qfilter {

namespace detail {

inline Json complex_json(Complex z) { return Json::array({z.real(), z.imag()}); }

inline Json config_echo(const RunConfig &c) {
    Json j;
    j["mode"] = to_string(c.mode);
    j["model"] = c.model.kind;
    j["detection"] = c.model.detection;
    j["grid"] = {{"t0", c.grid.t0}, {"t1", c.grid.t1}, {"steps", c.grid.steps}};
    j["dt"] = c.dt;
    j["trajectories"] = c.trajectories;
    j["seed"] = c.seed;
    j["snapshot_every"] = c.snapshot_every;
    j["format"] = c.format == OutputFormat::csv ? "csv" : "jsonl";
    j["scheme"] = to_string(c.scheme);
    return j;
}

/// |deviation| / standard error; a deviation beyond rounding with zero
/// spread is infinitely significant.
inline double z_score(double deviation, double se) {
    if (se > 0.0) return std::abs(deviation) / se;
    return std::abs(deviation) > 1e-12 ? std::numeric_limits<double>::infinity() : 0.0;
}

inline double max_abs_over_se(const Eigen::MatrixXd &mean, const Eigen::MatrixXd &se) {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < mean.rows(); ++i)
        for (Eigen::Index j = 0; j < mean.cols(); ++j)
            worst = std::max(worst, z_score(mean(i, j), se(i, j)));
    return worst;
}

/// Largest |mean - master| / standard error over entries and snapshot steps.
inline double max_state_z(const EnsembleSummary &s, const std::vector<Operator> &reference) {
    double worst = 0.0;
    for (std::size_t k = 0; k < s.mean_state.size(); ++k) {
        const Operator d = s.mean_state[k] - reference[k];
        for (Eigen::Index a = 0; a < d.rows(); ++a)
            for (Eigen::Index b = 0; b < d.cols(); ++b) {
                const Complex se = s.state_std_error[k](a, b);
                worst = std::max({worst, z_score(d(a, b).real(), se.real()), z_score(d(a, b).imag(), se.imag())});
            }
    }
    return worst;
}

inline void require_detection(const MeasurementModel &m, DetectionMode want, const char *command) {
    if (m.detection() != want)
        throw ConfigError(std::string("model: the ") + command + " command needs a " + to_string(want) +
                          " model (two_level with detection '" + (want == DetectionMode::counting ? "counting" : "homodyne") +
                          "', or oscillator for diffusive)");
}

}  // namespace detail

inline Json run_trajectories(const RunConfig &c, const std::filesystem::path &out) {
    const MeasurementModel m = build_model(c.model);
    detail::require_detection(m, c.mode == RunMode::counting ? DetectionMode::counting : DetectionMode::diffusive,
                              to_string(c.mode));
    EnsembleRequest req;
    req.model = &m;
    req.grid = c.grid;
    req.rho0 = build_state(c.initial_state, m.dim);
    req.seed = c.seed;
    req.trajectories = c.trajectories;
    req.counting = counting_options(c);
    req.diffusive = diffusive_options(c);
    req.parallel.threads = c.threads;
    std::optional<RecordWriter> writer;
    if (c.write_records) writer.emplace(out, c.format, m);
    std::size_t zero_count = 0;
    const EnsembleSummary s = run_ensemble(req, [&](const TrajectoryRecord &r) {
        if (writer) writer->write(r);
        zero_count += r.events.empty() ? 1 : 0;
    });
    write_summary(out / ("summary" + extension(c.format)), c.format, s, m.dim);
    Json rep = detail::config_echo(c);
    rep["mean_events"] = s.mean_events;
    if (s.mode == DetectionMode::counting) rep["zero_count_fraction"] = double(zero_count) / double(s.trajectories);
    rep["min_purity"] = s.min_purity;
    rep["min_eigenvalue"] = s.min_eigenvalue;
    rep["clipped_trajectories"] = s.clipped;
    rep["max_trace_distance_to_master"] =
        s.trace_distance_to_master.empty()
            ? Json(nullptr)
            : Json(*std::max_element(s.trace_distance_to_master.begin(), s.trace_distance_to_master.end()));
    if (!s.master_state.empty()) rep["max_state_deviation_in_std_errors"] = detail::max_state_z(s, s.master_state);
    rep["max_martingale_mean_in_std_errors"] = detail::max_abs_over_se(s.martingale_mean, s.martingale_std_error);
    if (m.detection() == DetectionMode::diffusive) {
        DiffusiveSimulator probe(m, c.grid, req.diffusive);
        rep["integration_dt"] = probe.dt();
    }
    return rep;
}

inline Json run_master(const RunConfig &c, const std::filesystem::path &out) {
    const MeasurementModel m = build_model(c.model);
    const Operator rho0 = build_state(c.initial_state, m.dim);
    const auto states = master_evolve(m, rho0, c.grid, c.tol);
    const EnsembleSummary s = master_summary(states, c.grid, c.snapshot_every);
    write_summary(out / ("summary" + extension(c.format)), c.format, s, m.dim);
    Json rep = detail::config_echo(c);
    rep["final_purity"] = purity(states.back());
    rep["final_trace"] = states.back().trace().real();
    rep["max_trace_distance_to_master"] = 0.0;
    return rep;
}

inline Json run_charfun(const RunConfig &c, const std::filesystem::path &out) {
    const MeasurementModel m = build_model(c.model);
    const Operator rho0 = build_state(c.initial_state, m.dim);
    const TestFunction k = TestFunction::constant(c.grid, c.charfun.k);
    const auto det = propagate_characteristic(m, k, rho0, c.tol);
    std::vector<CharacteristicResult> mc;
    if (c.charfun.monte_carlo) {
        RunConfig cc = c;
        cc.snapshot_every = 0;
        EnsembleRequest req;
        req.model = &m;
        req.grid = c.grid;
        req.rho0 = rho0;
        req.seed = c.seed;
        req.trajectories = c.trajectories;
        req.counting = counting_options(cc);
        req.diffusive = diffusive_options(cc);
        req.parallel.threads = c.threads;
        std::vector<TrajectoryRecord> recs;
        run_ensemble(req, [&](const TrajectoryRecord &r) { recs.push_back(r); }, false);
        mc = monte_carlo_characteristic(m, recs, k);
    }
    // Closed form for the oscillator started in a Gaussian state.
    std::vector<GaussianCoefficients> gauss;
    const bool gaussian_start = c.initial_state.kind == "coherent" || c.initial_state.kind == "thermal" ||
                                (c.initial_state.kind == "basis" && c.initial_state.index == 0);
    if (c.model.kind == "oscillator" && gaussian_start) {
        const double nu0 = c.initial_state.kind == "thermal" ? c.initial_state.mean_number : 0.0;
        const Complex a0 = c.initial_state.kind == "coherent" ? c.initial_state.alpha : 0.0;
        gauss = oscillator_characteristic(c.model.oscillator, {c.model.oscillator.drive, c.model.schedule}, k, a0, 0.0, nu0);
    }
    TableWriter w(out / ("charfun" + extension(c.format)), c.format,
                  {"step", "t", "phi_re", "phi_im", "mc_re", "mc_im", "mc_se", "gaussian_re", "gaussian_im"});
    const double nan = std::numeric_limits<double>::quiet_NaN();
    double worst_z = 0.0, worst_gauss = 0.0;
    for (std::size_t i = 0; i < det.size(); ++i) {
        std::vector<double> row{double(i), det[i].t, det[i].phi.real(), det[i].phi.imag()};
        if (!mc.empty()) {
            row.insert(row.end(), {mc[i].phi.real(), mc[i].phi.imag(), mc[i].std_error});
            worst_z = std::max(worst_z, detail::z_score(std::abs(mc[i].phi - det[i].phi), mc[i].std_error));
        } else {
            row.insert(row.end(), {nan, nan, nan});
        }
        if (!gauss.empty()) {
            row.insert(row.end(), {gauss[i].phi().real(), gauss[i].phi().imag()});
            worst_gauss = std::max(worst_gauss, std::abs(gauss[i].phi() - det[i].phi));
        } else {
            row.insert(row.end(), {nan, nan});
        }
        w.row(row);
    }
    Json rep = detail::config_echo(c);
    rep["k"] = Json::array();
    for (Complex v : c.charfun.k) rep["k"].push_back(detail::complex_json(v));
    rep["final_phi"] = detail::complex_json(det.back().phi);
    if (!mc.empty()) rep["max_monte_carlo_deviation_in_std_errors"] = worst_z;
    if (!gauss.empty()) rep["max_gaussian_deviation"] = worst_gauss;
    return rep;
}

inline Json run_limit(const RunConfig &c, const std::filesystem::path &out) {
    const MeasurementModel base = build_model(c.model);
    detail::require_detection(base, DetectionMode::diffusive, "limit");
    if (c.limit.k.size() != base.diffusive.size())
        throw ConfigError("limit.k: needs one value per detector channel (" + std::to_string(base.diffusive.size()) + ")");
    std::vector<double> gaps;
    TableWriter w(out / ("limit_gap" + extension(c.format)), c.format, {"epsilon", "gap"});
    for (double e : c.limit.epsilons) {
        gaps.push_back(generator_gap(base, e, c.limit.k, c.grid.t0));
        w.row({e, gaps.back()});
    }
    Json rep = detail::config_echo(c);
    if (gaps.size() >= 2) {
        const LinearFit fit = fit_through_origin(c.limit.epsilons, gaps);
        rep["gap_slope"] = fit.slope;
        rep["gap_r2"] = fit.r2;
    }
    if (c.limit.epsilon > 0.0) {
        const Operator rho0 = build_state(c.initial_state, base.dim);
        const ScaledModel sm = scale_counting_model(base, c.limit.epsilon);
        const double bound = sm.expected_counts_bound(c.grid.t0, c.grid.t1);
        if (bound > 1e6)
            throw ConfigError("limit.epsilon: up to " + format_number(std::round(bound)) +
                              " expected counts per trajectory, above the 1e6 cap");
        CountingOptions co;
        co.snapshot_every = 0;
        co.tol = c.tol;
        const std::size_t nch = base.diffusive.size();
        Eigen::VectorXd sum = Eigen::VectorXd::Zero(Eigen::Index(nch)), sum2 = sum;
        std::vector<Eigen::VectorXd> finals;
        run_ordered<TrajectoryRecord>(
            c.trajectories, {c.threads, 256},
            [&]() {
                auto sim = std::make_shared<CountingSimulator>(sm.counting, c.grid, co);
                return std::function<TrajectoryRecord(std::uint64_t)>(
                    [sim, &rho0, &c](std::uint64_t i) { return sim->run(rho0, c.seed, i); });
            },
            [&](TrajectoryRecord &&r) {
                const Eigen::VectorXd y = sm.outputs(r).bottomRows(1).transpose();
                finals.push_back(y);
                sum += y;
            });
        const double n = double(finals.size());
        const Eigen::VectorXd mean = sum / n;
        Json chans = Json::array();
        TableWriter wm(out / ("limit_moments" + extension(c.format)), c.format,
                       {"channel", "mean", "mean_se", "variance", "variance_se", "limit_mean", "limit_variance",
                        "scaled_mean", "scaled_variance"});
        const bool constant = base.is_time_constant();
        for (std::size_t j = 0; j < nch; ++j) {
            double m2 = 0.0, m4 = 0.0;
            for (const auto &y : finals) {
                const double d = y(Eigen::Index(j)) - mean(Eigen::Index(j));
                m2 += d * d;
                m4 += d * d * d * d;
            }
            const double var = n > 1 ? m2 / (n - 1.0) : 0.0;
            const double mean_se = std::sqrt(var / n);
            const double var_se = std::sqrt(std::max(0.0, m4 / n - (m2 / n) * (m2 / n)) / n);
            const double nan = std::numeric_limits<double>::quiet_NaN();
            OutputMoments lim{nan, nan}, scaled{nan, nan};
            if (constant) {
                lim = output_moments(base, rho0, c.grid.span(), j);
                scaled = output_moments(base, rho0, c.grid.span(), j, c.limit.epsilon);
            }
            wm.row({double(j), mean(Eigen::Index(j)), mean_se, var, var_se, lim.mean, lim.variance, scaled.mean,
                    scaled.variance});
            Json cj{{"mean", mean(Eigen::Index(j))}, {"mean_se", mean_se}, {"variance", var}, {"variance_se", var_se}};
            if (constant) {
                cj["limit_mean"] = lim.mean;
                cj["limit_variance"] = lim.variance;
                cj["scaled_mean"] = scaled.mean;
                cj["scaled_variance"] = scaled.variance;
            }
            chans.push_back(cj);
        }
        rep["epsilon"] = c.limit.epsilon;
        rep["expected_counts_bound"] = bound;
        rep["channels"] = chans;
    }
    return rep;
}

/// Checks the config, the model and a short master evolution without
/// simulating trajectories.
inline Json run_validate(const RunConfig &c, const std::filesystem::path &) {
    const MeasurementModel m = build_model(c.model);
    m.validate();
    const Operator rho0 = build_state(c.initial_state, m.dim);
    require_state(rho0, c.tol, "initial_state");
    const auto states = master_evolve(m, rho0, c.grid, c.tol);
    Json rep = detail::config_echo(c);
    rep["dimension"] = m.dim;
    rep["detection_mode"] = to_string(m.detection());
    rep["time_dependent"] = !m.is_time_constant();
    rep["final_trace"] = states.back().trace().real();
    rep["ok"] = true;
    if (m.detection() == DetectionMode::diffusive) {
        DiffusiveSimulator probe(m, c.grid, diffusive_options(c));
        rep["integration_dt"] = probe.dt();
    }
    return rep;
}

/// Runs the configured subcommand, writing into `out` (created if needed).
inline Json run_command(const RunConfig &c, const std::filesystem::path &out) {
    c.validate();
    std::filesystem::create_directories(out);
    Json rep;
    switch (c.mode) {
    case RunMode::counting:
    case RunMode::diffusive: rep = run_trajectories(c, out); break;
    case RunMode::master: rep = run_master(c, out); break;
    case RunMode::charfun: rep = run_charfun(c, out); break;
    case RunMode::limit: rep = run_limit(c, out); break;
    case RunMode::validate: rep = run_validate(c, out); break;
    }
    write_json(out / "run.json", rep);
    return rep;
}

}  // namespace qfilter
