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
#include "qfilter/config.hpp"

#include <gtest/gtest.h>

namespace qfilter {
namespace {

/// The message of the ConfigError thrown by parse_config(j), or "" if none.
std::string config_error(const Json &j) {
    try {
        parse_config(j);
    } catch (const ConfigError &e) {
        return e.what();
    }
    return "";
}

bool starts_with(const std::string &s, const std::string &prefix) { return s.rfind(prefix, 0) == 0; }

TEST(Config, DefaultsAndOverrides) {
    const RunConfig c = parse_config(Json::parse(R"({
        "mode": "diffusive",
        "model": {"kind": "oscillator", "omega": 1.5, "drive": [0.2, -0.1], "cutoff": 12},
        "initial_state": {"kind": "coherent", "alpha": [0.5, 0.5]},
        "grid": {"t0": 0, "t1": 2, "steps": 20},
        "dt": 0.001, "trajectories": 7, "seed": 42, "format": "csv", "scheme": "exponential"
    })"));
    EXPECT_EQ(c.mode, RunMode::diffusive);
    EXPECT_EQ(c.model.oscillator.cutoff, 12);
    EXPECT_EQ(c.model.oscillator.drive.at_cell(0), Complex(0.2, -0.1));
    EXPECT_EQ(c.trajectories, 7u);
    EXPECT_EQ(c.seed, 42u);
    EXPECT_EQ(c.format, OutputFormat::csv);
    EXPECT_EQ(c.scheme, DiffusiveScheme::exponential);
    const MeasurementModel m = build_model(c.model);
    EXPECT_EQ(m.dim, 12);
    EXPECT_EQ(m.detection(), DetectionMode::diffusive);
    const Operator rho = build_state(c.initial_state, m.dim);
    EXPECT_NEAR(rho.trace().real(), 1.0, 1e-12);
    EXPECT_NEAR(purity(rho), 1.0, 1e-12);

    const RunConfig d = parse_config(Json::object());
    EXPECT_EQ(d.mode, RunMode::counting);
    EXPECT_EQ(build_model(d.model).detection(), DetectionMode::counting);
}

TEST(Config, UnknownFieldsNameTheirPath) {
    EXPECT_TRUE(starts_with(config_error({{"bogus", 1}}), "bogus")) << config_error({{"bogus", 1}});
    const Json j = Json::parse(R"({"model": {"kind": "two_level", "rate": 1}})");
    EXPECT_TRUE(starts_with(config_error(j), "model.rate")) << config_error(j);
    const Json g = Json::parse(R"({"grid": {"t0": 0, "t1": 1, "steps": 4, "dt": 0.1}})");
    EXPECT_TRUE(starts_with(config_error(g), "grid.dt")) << config_error(g);
}

TEST(Config, BadValuesNameTheirPath) {
    const std::vector<std::pair<std::string, std::string>> cases{
        {R"({"model": {"kind": "two_level", "decay": -1}})", "model.decay"},
        {R"({"model": {"kind": "two_level", "detected": 0}})", "model.detected"},
        {R"({"model": {"kind": "two_level", "detection": "heterodyne"}})", "model.detection"},
        {R"({"model": {"kind": "spin"}})", "model.kind"},
        {R"({"model": {"kind": "oscillator", "coupling": 0, "damping": 0}})", "model"},
        {R"({"model": {"kind": "oscillator", "drive": [[0.1, 0], [0.2, 0]]}})", "model.drive"},
        {R"({"initial_state": {"kind": "superposition", "excited": 1.5}})", "initial_state.excited"},
        {R"({"initial_state": {"kind": "squeezed"}})", "initial_state.kind"},
        {R"({"trajectories": -3})", "trajectories"},
        {R"({"seed": "x"})", "seed"},
        {R"({"format": "xml"})", "format"},
        {R"({"scheme": "rk4"})", "scheme"},
        {R"({"tolerances": {"psd": 0}})", "tolerances.psd"},
    };
    for (const auto &[text, path] : cases) {
        const std::string msg = config_error(Json::parse(text));
        EXPECT_TRUE(starts_with(msg, path)) << text << " -> '" << msg << "'";
    }
}

TEST(Config, DtMustDivideTheGridCell) {
    EXPECT_EQ(config_error(Json::parse(R"({"grid": {"t0": 0, "t1": 1, "steps": 10}, "dt": 0.01})")), "");
    EXPECT_TRUE(starts_with(config_error(Json::parse(R"({"grid": {"t0": 0, "t1": 1, "steps": 10}, "dt": 0.03})")), "dt"));
    EXPECT_TRUE(starts_with(config_error(Json::parse(R"({"grid": {"t0": 0, "t1": 1, "steps": 10}, "dt": 0.2})")), "dt"));
}

TEST(Config, StatesMustFitTheModel) {
    StateConfig s;
    s.kind = "coherent";
    s.alpha = 3.0;
    EXPECT_THROW(build_state(s, 6), ConfigError);
    EXPECT_NO_THROW(build_state(s, 40));
    s.kind = "superposition";
    EXPECT_THROW(build_state(s, 5), ConfigError);
    s.kind = "basis";
    s.index = 5;
    EXPECT_THROW(build_state(s, 5), ConfigError);
    s.kind = "thermal";
    s.mean_number = 0.5;
    const Operator th = build_state(s, 20);
    EXPECT_NEAR(th.trace().real(), 1.0, 1e-12);
    EXPECT_NEAR(expectation(ops::annihilation(20).adjoint() * ops::annihilation(20), th).real(), 0.5, 1e-6);
}

TEST(Config, MissingFileIsAConfigError) {
    EXPECT_THROW(load_config("/nonexistent/run.json"), ConfigError);
}

}  // namespace
}  // namespace qfilter
