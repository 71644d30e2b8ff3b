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

// JSON run configuration. Every validation error names the offending field
// as a dotted path, e.g. "model.cutoff".

#include "qfilter/ensemble.hpp"
#include "qfilter/zoo.hpp"

#include <json.hpp>

#include <fstream>

namespace qfilter {

using Json = nlohmann::json;

enum class RunMode { counting, diffusive, master, charfun, limit, validate };

inline const char *to_string(RunMode m) {
    switch (m) {
    case RunMode::counting: return "counting";
    case RunMode::diffusive: return "diffusive";
    case RunMode::master: return "master";
    case RunMode::charfun: return "charfun";
    case RunMode::limit: return "limit";
    case RunMode::validate: return "validate";
    }
    return "?";
}

inline RunMode parse_mode(const std::string &s) {
    for (RunMode m : {RunMode::counting, RunMode::diffusive, RunMode::master, RunMode::charfun, RunMode::limit,
                      RunMode::validate})
        if (s == to_string(m)) return m;
    throw ConfigError("mode: unknown mode '" + s + "'");
}

enum class OutputFormat { jsonl, csv };

inline OutputFormat parse_format(const std::string &s) {
    if (s == "jsonl") return OutputFormat::jsonl;
    if (s == "csv") return OutputFormat::csv;
    throw ConfigError("format: expected jsonl or csv, got '" + s + "'");
}

struct ModelConfig {
    std::string kind = "two_level";
    /// two_level: "counting" or "homodyne".
    std::string detection = "counting";
    TwoLevelParams two_level{0.0, 0.0, 1.0, 1.0};
    Complex lo = 1.0;
    OscillatorParams oscillator;
    std::optional<TimeGrid> schedule;
};

struct StateConfig {
    /// excited | ground | basis | superposition | coherent | thermal
    std::string kind = "excited";
    Eigen::Index index = 0;
    double excited = 1.0;
    Complex alpha = 0.0;
    double mean_number = 0.0;
};

struct CharfunConfig {
    /// One constant value per observed channel.
    std::vector<Complex> k{Complex(1.0)};
    bool monte_carlo = true;
};

struct LimitConfig {
    std::vector<double> epsilons{0.2, 0.1, 0.05, 0.025};
    std::vector<double> k{1.0};
    /// Scale of the simulated scaled-counting ensemble; 0 skips it.
    double epsilon = 0.05;
};

struct RunConfig {
    RunMode mode = RunMode::counting;
    ModelConfig model;
    StateConfig initial_state;
    TimeGrid grid{0.0, 1.0, 100};
    /// Diffusive integration step; 0 chooses one.
    double dt = 0.0;
    std::size_t trajectories = 1000;
    std::uint64_t seed = 1;
    std::size_t snapshot_every = 1;
    OutputFormat format = OutputFormat::jsonl;
    std::size_t threads = 0;
    DiffusiveScheme scheme = DiffusiveScheme::kraus;
    bool clip_negative = false;
    bool write_records = true;
    Tolerances tol;
    /// Extra negativity allowed per unit dt for the non-Kraus schemes.
    double psd_per_dt = 50.0;
    CharfunConfig charfun;
    LimitConfig limit;

    /// Cross-field checks.
    void validate() const {
        grid.validate();
        if (trajectories < 1) throw ConfigError("trajectories: must be at least 1");
        if (dt < 0.0 || !std::isfinite(dt)) throw ConfigError("dt: must be non-negative");
        if (dt > 0.0) {
            const double r = grid.dt() / dt;
            if (std::abs(r - std::round(r)) > 1e-9 * r || std::round(r) < 1)
                throw ConfigError("dt: must divide the grid cell length " + std::to_string(grid.dt()));
        }
        for (double e : limit.epsilons)
            if (!(e > 0.0)) throw ConfigError("limit.epsilons: values must be positive");
        if (limit.epsilon < 0.0) throw ConfigError("limit.epsilon: must be non-negative");
    }
};

namespace detail {

inline std::string join(const std::string &path, const std::string &key) { return path.empty() ? key : path + "." + key; }

[[noreturn]] inline void bad(const std::string &path, const std::string &what) { throw ConfigError(path + ": " + what); }

inline double get_double(const Json &j, const std::string &path) {
    if (!j.is_number()) bad(path, "expected a number");
    const double v = j.get<double>();
    if (!std::isfinite(v)) bad(path, "must be finite");
    return v;
}

inline double get_nonneg(const Json &j, const std::string &path) {
    const double v = get_double(j, path);
    if (v < 0.0) bad(path, "must be non-negative");
    return v;
}

inline std::uint64_t get_uint(const Json &j, const std::string &path) {
    if (j.is_number_unsigned()) return j.get<std::uint64_t>();
    if (j.is_number_integer() && j.get<std::int64_t>() >= 0) return std::uint64_t(j.get<std::int64_t>());
    bad(path, "expected a non-negative integer");
}

/// A complex number as [re, im] or a plain real number.
inline Complex get_complex(const Json &j, const std::string &path) {
    if (j.is_number()) return get_double(j, path);
    if (j.is_array() && j.size() == 2) return {get_double(j[0], path + "[0]"), get_double(j[1], path + "[1]")};
    bad(path, "expected a number or [re, im]");
}

inline std::string get_string(const Json &j, const std::string &path) {
    if (!j.is_string()) bad(path, "expected a string");
    return j.get<std::string>();
}

inline void reject_unknown(const Json &j, const std::string &path, std::initializer_list<const char *> known) {
    if (!j.is_object()) bad(path.empty() ? "config" : path, "expected an object");
    for (const auto &[key, _] : j.items()) {
        bool ok = false;
        for (const char *k : known) ok = ok || key == k;
        if (!ok) bad(join(path, key), "unknown field");
    }
}

inline TimeGrid get_grid(const Json &j, const std::string &path) {
    reject_unknown(j, path, {"t0", "t1", "steps"});
    TimeGrid g;
    if (j.contains("t0")) g.t0 = get_double(j["t0"], join(path, "t0"));
    if (!j.contains("t1")) bad(join(path, "t1"), "required");
    g.t1 = get_double(j["t1"], join(path, "t1"));
    if (!j.contains("steps")) bad(join(path, "steps"), "required");
    g.steps = std::size_t(get_uint(j["steps"], join(path, "steps")));
    try {
        g.validate();
    } catch (const ConfigError &e) {
        bad(path, e.what());
    }
    return g;
}

inline ModelConfig parse_model(const Json &j) {
    const std::string p = "model";
    ModelConfig m;
    if (!j.is_object()) bad(p, "expected an object");
    if (j.contains("kind")) m.kind = get_string(j["kind"], p + ".kind");
    if (m.kind == "two_level") {
        reject_unknown(j, p, {"kind", "omega", "pump", "decay", "detected", "detection", "lo"});
        if (j.contains("omega")) m.two_level.omega = get_double(j["omega"], p + ".omega");
        if (j.contains("pump")) m.two_level.pump = get_nonneg(j["pump"], p + ".pump");
        if (j.contains("decay")) m.two_level.decay = get_nonneg(j["decay"], p + ".decay");
        if (j.contains("detected")) m.two_level.detected = get_nonneg(j["detected"], p + ".detected");
        if (!(m.two_level.detected > 0.0)) bad(p + ".detected", "must be positive");
        if (j.contains("detection")) m.detection = get_string(j["detection"], p + ".detection");
        if (m.detection != "counting" && m.detection != "homodyne") bad(p + ".detection", "expected counting or homodyne");
        if (j.contains("lo")) m.lo = get_complex(j["lo"], p + ".lo");
        if (!(std::abs(m.lo) > 0.0)) bad(p + ".lo", "must be non-zero");
    } else if (m.kind == "oscillator") {
        reject_unknown(j, p, {"kind", "omega", "drive", "damping", "pumping", "coupling", "cutoff", "schedule"});
        m.detection = "heterodyne";
        auto &o = m.oscillator;
        if (j.contains("omega")) o.omega = get_double(j["omega"], p + ".omega");
        if (j.contains("damping")) o.damping = get_nonneg(j["damping"], p + ".damping");
        if (j.contains("pumping")) o.pumping = get_nonneg(j["pumping"], p + ".pumping");
        if (j.contains("coupling")) o.coupling = get_complex(j["coupling"], p + ".coupling");
        if (j.contains("cutoff")) {
            o.cutoff = Eigen::Index(get_uint(j["cutoff"], p + ".cutoff"));
            if (o.cutoff < 2) bad(p + ".cutoff", "must be at least 2");
        }
        if (j.contains("schedule")) m.schedule = get_grid(j["schedule"], p + ".schedule");
        if (j.contains("drive")) {
            const Json &d = j["drive"];
            if (d.is_array() && !d.empty() && d[0].is_array()) {
                if (!m.schedule) bad(p + ".drive", "a piecewise drive needs model.schedule");
                std::vector<Complex> vals;
                for (std::size_t i = 0; i < d.size(); ++i) vals.push_back(get_complex(d[i], p + ".drive[" + std::to_string(i) + "]"));
                if (vals.size() != m.schedule->steps) bad(p + ".drive", "needs one value per schedule cell");
                o.drive = ComplexSchedule(std::move(vals));
            } else {
                o.drive = get_complex(d, p + ".drive");
            }
        }
        if (!(o.gamma() > 0.0)) bad(p, "2(|coupling|^2 + damping - pumping) must be positive");
    } else {
        bad(p + ".kind", "expected two_level or oscillator");
    }
    return m;
}

inline StateConfig parse_state(const Json &j) {
    const std::string p = "initial_state";
    reject_unknown(j, p, {"kind", "index", "excited", "alpha", "mean_number"});
    StateConfig s;
    if (j.contains("kind")) s.kind = get_string(j["kind"], p + ".kind");
    if (j.contains("index")) s.index = Eigen::Index(get_uint(j["index"], p + ".index"));
    if (j.contains("excited")) {
        s.excited = get_double(j["excited"], p + ".excited");
        if (s.excited < 0.0 || s.excited > 1.0) bad(p + ".excited", "must lie in [0, 1]");
    }
    if (j.contains("alpha")) s.alpha = get_complex(j["alpha"], p + ".alpha");
    if (j.contains("mean_number")) s.mean_number = get_nonneg(j["mean_number"], p + ".mean_number");
    const std::vector<std::string> kinds{"excited", "ground", "basis", "superposition", "coherent", "thermal"};
    if (std::find(kinds.begin(), kinds.end(), s.kind) == kinds.end()) bad(p + ".kind", "unknown state kind '" + s.kind + "'");
    return s;
}

inline Tolerances parse_tolerances(const Json &j, Tolerances t) {
    const std::string p = "tolerances";
    reject_unknown(j, p, {"herm", "trace", "psd", "rate", "time_rel"});
    auto set = [&](const char *key, double &field) {
        if (!j.contains(key)) return;
        field = get_double(j[key], p + "." + key);
        if (!(field > 0.0)) bad(p + "." + key, "must be positive");
    };
    set("herm", t.herm);
    set("trace", t.trace);
    set("psd", t.psd);
    set("rate", t.rate);
    set("time_rel", t.time_rel);
    return t;
}

}  // namespace detail

inline RunConfig parse_config(const Json &j) {
    using namespace detail;
    reject_unknown(j, "", {"mode", "model", "initial_state", "grid", "dt", "trajectories", "seed", "snapshot_every", "format",
                           "threads", "scheme", "clip_negative", "write_records", "tolerances", "charfun", "limit"});
    RunConfig c;
    if (j.contains("mode")) c.mode = parse_mode(get_string(j["mode"], "mode"));
    if (j.contains("model")) c.model = parse_model(j["model"]);
    if (j.contains("initial_state")) c.initial_state = parse_state(j["initial_state"]);
    if (j.contains("grid")) c.grid = get_grid(j["grid"], "grid");
    if (j.contains("dt")) c.dt = get_nonneg(j["dt"], "dt");
    if (j.contains("trajectories")) c.trajectories = std::size_t(get_uint(j["trajectories"], "trajectories"));
    if (j.contains("seed")) c.seed = get_uint(j["seed"], "seed");
    if (j.contains("snapshot_every")) c.snapshot_every = std::size_t(get_uint(j["snapshot_every"], "snapshot_every"));
    if (j.contains("format")) c.format = parse_format(get_string(j["format"], "format"));
    if (j.contains("threads")) c.threads = std::size_t(get_uint(j["threads"], "threads"));
    if (j.contains("scheme")) {
        try {
            c.scheme = parse_scheme(get_string(j["scheme"], "scheme"));
        } catch (const ConfigError &e) {
            bad("scheme", e.what());
        }
    }
    if (j.contains("clip_negative")) {
        if (!j["clip_negative"].is_boolean()) bad("clip_negative", "expected true or false");
        c.clip_negative = j["clip_negative"].get<bool>();
    }
    if (j.contains("write_records")) {
        if (!j["write_records"].is_boolean()) bad("write_records", "expected true or false");
        c.write_records = j["write_records"].get<bool>();
    }
    if (j.contains("tolerances")) {
        Json t = j["tolerances"];
        if (t.is_object() && t.contains("psd_per_dt")) {
            c.psd_per_dt = get_nonneg(t["psd_per_dt"], "tolerances.psd_per_dt");
            t.erase("psd_per_dt");
        }
        c.tol = parse_tolerances(t, c.tol);
    }
    if (j.contains("charfun")) {
        const Json &cf = j["charfun"];
        reject_unknown(cf, "charfun", {"k", "monte_carlo"});
        if (cf.contains("k")) {
            if (!cf["k"].is_array() || cf["k"].empty()) bad("charfun.k", "expected a non-empty array");
            c.charfun.k.clear();
            for (std::size_t i = 0; i < cf["k"].size(); ++i)
                c.charfun.k.push_back(get_complex(cf["k"][i], "charfun.k[" + std::to_string(i) + "]"));
        }
        if (cf.contains("monte_carlo")) {
            if (!cf["monte_carlo"].is_boolean()) bad("charfun.monte_carlo", "expected true or false");
            c.charfun.monte_carlo = cf["monte_carlo"].get<bool>();
        }
    }
    if (j.contains("limit")) {
        const Json &l = j["limit"];
        reject_unknown(l, "limit", {"epsilons", "k", "epsilon"});
        auto reals = [&](const char *key) {
            std::vector<double> v;
            const std::string p = std::string("limit.") + key;
            if (!l[key].is_array() || l[key].empty()) bad(p, "expected a non-empty array");
            for (std::size_t i = 0; i < l[key].size(); ++i) v.push_back(get_double(l[key][i], p + "[" + std::to_string(i) + "]"));
            return v;
        };
        if (l.contains("epsilons")) c.limit.epsilons = reals("epsilons");
        if (l.contains("k")) c.limit.k = reals("k");
        if (l.contains("epsilon")) c.limit.epsilon = get_nonneg(l["epsilon"], "limit.epsilon");
    }
    c.validate();
    return c;
}

inline RunConfig load_config(const std::string &path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    Json j;
    try {
        j = Json::parse(in);
    } catch (const Json::parse_error &e) {
        throw ConfigError("config: " + path + ": " + e.what());
    }
    return parse_config(j);
}

/// The measurement model described by the config.
inline MeasurementModel build_model(const ModelConfig &c) {
    if (c.kind == "two_level")
        return c.detection == "homodyne" ? two_level_diffusive(c.two_level, c.lo) : two_level_counting(c.two_level);
    return oscillator_model(c.oscillator, c.schedule);
}

inline Operator build_state(const StateConfig &s, Eigen::Index dim) {
    const std::string p = "initial_state";
    auto pure = [](const PureState &psi) { return Operator(psi * psi.adjoint()); };
    if (s.kind == "excited" || s.kind == "ground" || s.kind == "basis") {
        const Eigen::Index i = s.kind == "excited" ? 0 : s.kind == "ground" ? dim - 1 : s.index;
        if (dim != 2 && s.kind != "basis") throw ConfigError(p + ".kind: excited and ground need a two-level model");
        if (i >= dim) throw ConfigError(p + ".index: outside the state space");
        return pure(ops::basis(dim, i));
    }
    if (s.kind == "superposition") {
        if (dim != 2) throw ConfigError(p + ".kind: superposition needs a two-level model");
        PureState psi(2);
        psi << std::sqrt(s.excited), std::sqrt(1.0 - s.excited);
        return pure(psi);
    }
    if (s.kind == "coherent") {
        double weight = 0.0, term = std::exp(-std::norm(s.alpha));
        for (Eigen::Index n = 0; n < dim; ++n) {
            weight += term;
            term *= std::norm(s.alpha) / double(n + 1);
        }
        if (1.0 - weight > 1e-10) throw ConfigError(p + ".alpha: coherent state does not fit below the cutoff");
        return pure(ops::coherent(dim, s.alpha));
    }
    const Operator th = ops::thermal(dim, s.mean_number);
    return th / th.trace().real();
}

/// Engine options implied by the config.
inline CountingOptions counting_options(const RunConfig &c) {
    CountingOptions o;
    o.snapshot_every = c.snapshot_every;
    o.tol = c.tol;
    o.track_purity = true;
    return o;
}

inline DiffusiveOptions diffusive_options(const RunConfig &c) {
    DiffusiveOptions o;
    o.dt = c.dt;
    o.snapshot_every = c.snapshot_every;
    o.scheme = c.scheme;
    o.clip_negative = c.clip_negative;
    o.psd_per_dt = c.psd_per_dt;
    o.tol = c.tol;
    o.track_purity = true;
    return o;
}

}  // namespace qfilter
