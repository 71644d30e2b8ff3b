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

// Diffusive detection as a limit of counting: counters with jump operators
// Z_j + f_j / eps, a compensating Hamiltonian that keeps the a-priori
// dynamics fixed, and rescaled outputs Y^eps = eps N - |f|^2 t / eps.

#include "qfilter/charfun.hpp"

#include <unsupported/Eigen/MatrixFunctions>

namespace qfilter {

struct ScaledModel {
    MeasurementModel base;
    double epsilon = 1.0;
    /// Counting model with one channel per diffusive channel of `base`.
    MeasurementModel counting;

    /// Y^eps on the record grid: eps N_j(t) - int_0^t |f_j|^2 ds / eps.
    Eigen::MatrixXd outputs(const TrajectoryRecord &rec) const {
        if (rec.mode != DetectionMode::counting || rec.channels() != base.diffusive.size())
            throw ContractViolation("ScaledModel::outputs: record does not come from the scaled counting model");
        Eigen::MatrixXd y(rec.outputs.rows(), rec.outputs.cols());
        for (Eigen::Index i = 0; i < y.rows(); ++i) {
            const double t = rec.grid.time(std::size_t(i));
            for (std::size_t j = 0; j < base.diffusive.size(); ++j)
                y(i, Eigen::Index(j)) = epsilon * rec.outputs(i, Eigen::Index(j)) - f_energy(j, rec.grid.t0, t) / epsilon;
        }
        return y;
    }

    /// int_a^b |f_j(s)|^2 ds.
    double f_energy(std::size_t j, double a, double b) const {
        double out = 0.0;
        for (const auto &[iv, cell] : base.segments(a, b))
            out += std::norm(base.diffusive[j].f.at_cell(cell)) * (iv.second - iv.first);
        return out;
    }

    /// Upper bound on the expected number of counts over [t0, t1].
    double expected_counts_bound(double t0, double t1) const {
        double out = 0.0;
        for (const auto &[iv, cell] : counting.segments(t0, t1)) {
            double rate = 0.0;
            for (const auto &ch : counting.counting)
                for (const auto &k : ch.kraus) rate += std::pow(k.at_cell(cell).operatorNorm(), 2);
            out += rate * (iv.second - iv.first);
        }
        return out;
    }
};

/// Largest entry-wise difference of two models' Liouvillians over all
/// schedule cells, relative to the larger norm bound.
inline double liouvillian_mismatch(const MeasurementModel &a, const MeasurementModel &b) {
    const std::size_t cells = std::max(a.cells(), b.cells());
    double worst = 0.0;
    for (std::size_t c = 0; c < cells; ++c) {
        const ModelSlice sa = a.slice_cell(std::min(c, a.cells() - 1));
        const ModelSlice sb = b.slice_cell(std::min(c, b.cells() - 1));
        const Superop diff = liouvillian_map(sa).to_matrix() - liouvillian_map(sb).to_matrix();
        const double scale = std::max({1.0, sa.liouvillian_norm_bound(), sb.liouvillian_norm_bound()});
        worst = std::max(worst, diff.cwiseAbs().maxCoeff() / scale);
    }
    return worst;
}

/// Counting model whose eps -> 0 limit is the diffusive model `base`.
inline ScaledModel scale_counting_model(const MeasurementModel &base, double epsilon, double tol = 1e-10) {
    base.validate();
    if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw ConfigError("scaling: epsilon must be positive");
    if (base.detection() != DetectionMode::diffusive) throw ConfigError("scaling: base model must be diffusive");
    ScaledModel out;
    out.base = base;
    out.epsilon = epsilon;
    MeasurementModel &m = out.counting;
    m.dim = base.dim;
    m.schedule_grid = base.schedule_grid;
    m.dissipators = base.dissipators;
    const std::size_t cells = base.is_time_constant() ? 1 : base.cells();
    const Operator id = Operator::Identity(base.dim, base.dim);
    std::vector<Operator> hs;
    std::vector<std::vector<Operator>> jumps(base.diffusive.size());
    for (std::size_t c = 0; c < cells; ++c) {
        Operator h = base.hamiltonian.at_cell(c);
        for (std::size_t j = 0; j < base.diffusive.size(); ++j) {
            const Operator z = base.diffusive[j].z.at_cell(c);
            const Complex f = base.diffusive[j].f.at_cell(c);
            h += (kI / (2.0 * epsilon)) * (f * z.adjoint() - std::conj(f) * z);
            jumps[j].push_back(z + (f / epsilon) * id);
        }
        hs.push_back(hermitian_part(h));
    }
    auto schedule = [&](std::vector<Operator> v) {
        return v.size() == 1 ? OperatorSchedule(std::move(v[0])) : OperatorSchedule(std::move(v));
    };
    m.hamiltonian = schedule(std::move(hs));
    for (std::size_t j = 0; j < base.diffusive.size(); ++j)
        m.counting.push_back({{schedule(std::move(jumps[j]))}, base.diffusive[j].label});
    m.validate();
    const double mismatch = liouvillian_mismatch(base, m);
    if (mismatch > tol) {
        std::ostringstream os;
        os << "scaling: a-priori generator changed under scaling (relative mismatch " << mismatch << ")";
        throw NumericalError(os.str());
    }
    return out;
}

/// The scaled characteristic generator minus its eps -> 0 limit, for the
/// real per-channel test-function values k, as a matrix on vec(rho).
inline Superop generator_difference(const MeasurementModel &base, double epsilon, const std::vector<double> &k,
                                    double t) {
    if (!(epsilon > 0.0)) throw ConfigError("generator_gap: epsilon must be positive");
    if (k.size() != base.diffusive.size()) throw ConfigError("generator_gap: one test value per diffusive channel");
    const ModelSlice s = base.slice(t);
    const double eps = epsilon;
    return LinearMap(s.dim, [&](const Operator &x) {
               Operator out = Operator::Zero(s.dim, s.dim);
               for (std::size_t j = 0; j < k.size(); ++j) {
                   const Complex e = std::exp(kI * eps * k[j]);
                   const Complex r1 = e - 1.0 - kI * eps * k[j];
                   const Complex r2 = r1 + 0.5 * eps * eps * k[j] * k[j];
                   const Operator &z = s.z[j];
                   const Complex f = s.f[j];
                   out += (e - 1.0) * (z * x * z.adjoint());
                   out += (r1 / eps) * (std::conj(f) * z * x + f * x * z.adjoint());
                   out += (std::norm(f) * r2 / (eps * eps)) * x;
               }
               return out;
           })
        .to_matrix();
}

/// Operator norm of the scaled generator minus its limit.
inline double generator_gap(const MeasurementModel &base, double epsilon, const std::vector<double> &k, double t) {
    const Superop d = generator_difference(base, epsilon, k, t);
    if (d.cwiseAbs().maxCoeff() == 0.0) return 0.0;
    Eigen::JacobiSVD<Superop> svd(d);
    return svd.singularValues()(0);
}

/// Least-squares fit gap = c * eps through the origin.
struct LinearFit {
    double slope = 0.0;
    double r2 = 0.0;
};

inline LinearFit fit_through_origin(const std::vector<double> &x, const std::vector<double> &y) {
    if (x.size() != y.size() || x.size() < 2) throw ContractViolation("fit_through_origin: need matching samples");
    double sxy = 0.0, sxx = 0.0, mean = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += x[i] * y[i];
        sxx += x[i] * x[i];
        mean += y[i];
    }
    mean /= double(y.size());
    LinearFit fit;
    fit.slope = sxy / sxx;
    double ss_res = 0.0, ss_tot = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        ss_res += std::pow(y[i] - fit.slope * x[i], 2);
        ss_tot += std::pow(y[i] - mean, 2);
    }
    fit.r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0;
    return fit;
}

/// Mean and variance of the output Y_j(t) of a time-constant diffusive model
/// from block-triangular exponentials of the characteristic generator's
/// expansion in k. With eps > 0 the same moments for the scaled counting
/// outputs Y^eps.
struct OutputMoments {
    double mean = 0.0;
    double variance = 0.0;
};

inline OutputMoments output_moments(const MeasurementModel &base, const Operator &rho0, double t, std::size_t channel,
                                    double epsilon = 0.0) {
    base.validate();
    if (!base.is_time_constant()) throw ContractViolation("output_moments: time-constant models only");
    if (channel >= base.diffusive.size()) throw ContractViolation("output_moments: no such channel");
    const ModelSlice s = base.slice(0.0);
    const Eigen::Index n = s.dim * s.dim;
    const Operator &z = s.z[channel];
    const Complex f = s.f[channel];
    // K(k) = L + i k B1 - k^2/2 B2 + O(k^3); Phi(k) = E exp(i k Y).
    const Superop l = liouvillian_map(s).to_matrix();
    const Superop b1 = LinearMap(s.dim, [&](const Operator &x) {
                           return Operator(std::conj(f) * z * x + f * x * z.adjoint() + epsilon * z * x * z.adjoint());
                       }).to_matrix();
    const Superop b2 = LinearMap(s.dim, [&](const Operator &x) {
                           // Second-order coefficient of the scaled jump term; |f|^2 in the limit.
                           return Operator(std::norm(f) * x + epsilon * (std::conj(f) * z * x + f * x * z.adjoint()) +
                                           epsilon * epsilon * z * x * z.adjoint());
                       }).to_matrix();
    Superop big = Superop::Zero(3 * n, 3 * n);
    for (int b = 0; b < 3; ++b) big.block(b * n, b * n, n, n) = l;
    big.block(0, n, n, n) = b1;
    big.block(n, 2 * n, n, n) = b1;
    Superop single = Superop::Zero(2 * n, 2 * n);
    single.block(0, 0, n, n) = l;
    single.block(n, n, n, n) = l;
    single.block(0, n, n, n) = b2;
    const Superop e = (t * big).exp();
    const Superop e2 = (t * single).exp();
    const OpVector v = vec(rho0);
    auto tr = [&](const OpVector &x) { return unvec(x, s.dim).trace(); };
    // dPhi/dk = i E Y; d2Phi/dk2 = -E Y^2.
    const Complex first = tr(e.block(0, n, n, n) * v);
    const Complex second = tr(e.block(0, 2 * n, n, n) * v);
    const Complex quad = tr(e2.block(0, n, n, n) * v);
    OutputMoments out;
    out.mean = first.real();
    const double second_moment = 2.0 * second.real() + quad.real();
    out.variance = second_moment - out.mean * out.mean;
    return out;
}

}  // namespace qfilter
