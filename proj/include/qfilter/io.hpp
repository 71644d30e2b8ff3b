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

// Flat tables written as JSON lines (one object per row) or CSV. Complex
// values occupy _re/_im column pairs. Numbers are printed in a fixed
// round-trip format so identical runs give identical files.

#include "qfilter/config.hpp"

#include <cstdio>
#include <filesystem>

namespace qfilter {

/// Shortest exact decimal for integers, 17 significant digits otherwise.
inline std::string format_number(double v) {
    if (std::isnan(v)) return "";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    if (v == std::floor(v) && std::abs(v) < 9.007199254740992e15) {
        std::snprintf(buf, sizeof buf, "%.0f", v);
    } else {
        std::snprintf(buf, sizeof buf, "%.17g", v);
    }
    return buf;
}

class TableWriter {
  public:
    TableWriter(const std::filesystem::path &path, OutputFormat format, std::vector<std::string> columns)
        : format_(format), columns_(std::move(columns)), out_(path) {
        if (!out_) throw ConfigError("out: cannot write '" + path.string() + "'");
        if (format_ == OutputFormat::csv) {
            for (std::size_t i = 0; i < columns_.size(); ++i) out_ << (i ? "," : "") << columns_[i];
            out_ << '\n';
        }
    }

    const std::vector<std::string> &columns() const { return columns_; }

    /// One row; NaN marks an empty cell (null in JSON lines).
    void row(const std::vector<double> &values) {
        if (values.size() != columns_.size()) throw ContractViolation("TableWriter: row width does not match the header");
        if (format_ == OutputFormat::csv) {
            for (std::size_t i = 0; i < values.size(); ++i) out_ << (i ? "," : "") << format_number(values[i]);
        } else {
            out_ << '{';
            for (std::size_t i = 0; i < values.size(); ++i) {
                const std::string s = format_number(values[i]);
                const bool quoted = std::isinf(values[i]);
                out_ << (i ? "," : "") << '"' << columns_[i] << "\":" << (s.empty() ? "null" : quoted ? '"' + s + '"' : s);
            }
            out_ << '}';
        }
        out_ << '\n';
        if (!out_) throw NumericalError("write failed");
    }

  private:
    OutputFormat format_;
    std::vector<std::string> columns_;
    std::ofstream out_;
};

inline std::string extension(OutputFormat f) { return f == OutputFormat::csv ? ".csv" : ".jsonl"; }

/// Column names for the entries of a dim x dim operator.
inline std::vector<std::string> operator_columns(const std::string &prefix, Eigen::Index dim) {
    std::vector<std::string> out;
    for (Eigen::Index a = 0; a < dim; ++a)
        for (Eigen::Index b = 0; b < dim; ++b) {
            const std::string base = prefix + "_" + std::to_string(a) + "_" + std::to_string(b);
            out.push_back(base + "_re");
            out.push_back(base + "_im");
        }
    return out;
}

inline void append_operator(std::vector<double> &row, const Operator &x) {
    for (Eigen::Index a = 0; a < x.rows(); ++a)
        for (Eigen::Index b = 0; b < x.cols(); ++b) {
            row.push_back(x(a, b).real());
            row.push_back(x(a, b).imag());
        }
}

/// Streams trajectory records into outputs, events and states tables.
class RecordWriter {
  public:
    RecordWriter(const std::filesystem::path &dir, OutputFormat format, const MeasurementModel &m) {
        const std::size_t nch = m.detection() == DetectionMode::counting ? m.counting.size() : m.diffusive.size();
        std::vector<std::string> cols{"trajectory", "step", "t"};
        for (std::size_t j = 0; j < nch; ++j) cols.push_back("y" + std::to_string(j));
        for (std::size_t j = 0; j < nch; ++j) cols.push_back("m" + std::to_string(j));
        cols.push_back("log_c");
        outputs_.emplace(dir / ("records_outputs" + extension(format)), format, cols);
        if (m.detection() == DetectionMode::counting)
            events_.emplace(dir / ("records_events" + extension(format)), format,
                            std::vector<std::string>{"trajectory", "t", "channel"});
        std::vector<std::string> scols{"trajectory", "step", "t", "purity"};
        for (auto &c : operator_columns("rho", m.dim)) scols.push_back(c);
        states_.emplace(dir / ("records_states" + extension(format)), format, scols);
    }

    void write(const TrajectoryRecord &rec) {
        const double traj = double(rec.index);
        for (std::size_t i = 0; i < rec.grid.size(); ++i) {
            std::vector<double> row{traj, double(i), rec.grid.time(i)};
            for (Eigen::Index j = 0; j < rec.outputs.cols(); ++j) row.push_back(rec.outputs(Eigen::Index(i), j));
            for (Eigen::Index j = 0; j < rec.outputs.cols(); ++j) row.push_back(rec.martingale(i, std::size_t(j)));
            row.push_back(rec.log_c[i]);
            outputs_->row(row);
        }
        if (events_)
            for (const JumpEvent &e : rec.events) events_->row({traj, e.t, double(e.channel)});
        for (std::size_t k = 0; k < rec.snapshots.size(); ++k) {
            const std::size_t i = rec.snapshot_steps[k];
            std::vector<double> row{traj, double(i), rec.grid.time(i), purity(rec.snapshots[k])};
            append_operator(row, rec.snapshots[k]);
            states_->row(row);
        }
    }

  private:
    std::optional<TableWriter> outputs_, events_, states_;
};

/// Writes an ensemble summary: one row per grid point, state columns
/// empty off the snapshot steps.
inline void write_summary(const std::filesystem::path &path, OutputFormat format, const EnsembleSummary &s,
                          Eigen::Index dim) {
    const auto nch = s.output_mean.cols();
    std::vector<std::string> cols{"step", "t"};
    for (Eigen::Index j = 0; j < nch; ++j)
        for (const char *c : {"y_mean", "y_se", "m_mean", "m_se"}) cols.push_back(std::string(c) + std::to_string(j));
    for (Eigen::Index a = 0; a < nch; ++a)
        for (Eigen::Index b = a; b < nch; ++b) cols.push_back("y_cov" + std::to_string(a) + "_" + std::to_string(b));
    for (const char *c : {"purity_mean", "purity_se", "trace_distance_to_master"}) cols.emplace_back(c);
    for (auto &c : operator_columns("rho_mean", dim)) cols.push_back(c);
    for (auto &c : operator_columns("rho_se", dim)) cols.push_back(c);
    TableWriter w(path, format, cols);
    std::size_t snap = 0;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t i = 0; i < s.grid.size(); ++i) {
        std::vector<double> row{double(i), s.grid.time(i)};
        const auto r = Eigen::Index(i);
        for (Eigen::Index j = 0; j < nch; ++j) {
            row.push_back(s.output_mean(r, j));
            row.push_back(s.output_std_error(r, j));
            row.push_back(s.martingale_mean(r, j));
            row.push_back(s.martingale_std_error(r, j));
        }
        for (Eigen::Index a = 0; a < nch; ++a)
            for (Eigen::Index b = a; b < nch; ++b) row.push_back(s.output_covariance[i](a, b));
        const bool at = snap < s.snapshot_steps.size() && s.snapshot_steps[snap] == i;
        if (at) {
            row.push_back(s.purity_mean[snap]);
            row.push_back(s.purity_std_error[snap]);
            row.push_back(s.trace_distance_to_master.empty() ? nan : s.trace_distance_to_master[snap]);
            append_operator(row, s.mean_state[snap]);
            append_operator(row, s.state_std_error[snap]);
            ++snap;
        } else {
            row.resize(cols.size(), nan);
        }
        w.row(row);
    }
}

/// Writes a JSON document with a trailing newline.
inline void write_json(const std::filesystem::path &path, const Json &j) {
    std::ofstream out(path);
    if (!out) throw ConfigError("out: cannot write '" + path.string() + "'");
    out << j.dump(2) << '\n';
}

}  // namespace qfilter
