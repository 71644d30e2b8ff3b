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
#include "qfilter/app.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

namespace qfilter {
namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path &p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path scratch(const std::string &name) {
    const fs::path dir = fs::temp_directory_path() / ("qfilter_test_" + name);
    fs::remove_all(dir);
    return dir;
}

TEST(Io, NumberFormat) {
    EXPECT_EQ(format_number(3.0), "3");
    EXPECT_EQ(format_number(-0.0), "-0");
    EXPECT_EQ(format_number(0.1), "0.10000000000000001");
    EXPECT_EQ(format_number(std::numeric_limits<double>::quiet_NaN()), "");
    EXPECT_EQ(format_number(std::numeric_limits<double>::infinity()), "inf");
    EXPECT_EQ(std::stod(format_number(1.0 / 3.0)), 1.0 / 3.0);
}

TEST(Io, TableFormats) {
    const fs::path dir = scratch("tables");
    fs::create_directories(dir);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    {
        TableWriter csv(dir / "t.csv", OutputFormat::csv, {"a", "b"});
        csv.row({1.0, 0.5});
        csv.row({2.0, nan});
        TableWriter jl(dir / "t.jsonl", OutputFormat::jsonl, {"a", "b"});
        jl.row({1.0, 0.5});
        jl.row({2.0, nan});
        EXPECT_THROW(jl.row({1.0}), ContractViolation);
    }
    EXPECT_EQ(slurp(dir / "t.csv"), "a,b\n1,0.5\n2,\n");
    EXPECT_EQ(slurp(dir / "t.jsonl"), "{\"a\":1,\"b\":0.5}\n{\"a\":2,\"b\":null}\n");
    EXPECT_EQ(operator_columns("rho", 1), (std::vector<std::string>{"rho_0_0_re", "rho_0_0_im"}));
    fs::remove_all(dir);
}

RunConfig small_config(RunMode mode) {
    RunConfig c = parse_config(Json::parse(R"({
        "model": {"kind": "two_level", "omega": 1.0, "pump": 0.2, "decay": 0.1, "detected": 1.0},
        "initial_state": {"kind": "superposition", "excited": 0.5},
        "grid": {"t0": 0, "t1": 1, "steps": 5},
        "trajectories": 40, "seed": 9
    })"));
    c.mode = mode;
    return c;
}

TEST(Io, RerunsAreByteIdenticalAcrossThreadCounts) {
    for (OutputFormat f : {OutputFormat::jsonl, OutputFormat::csv}) {
        RunConfig c = small_config(RunMode::counting);
        c.format = f;
        const fs::path a = scratch("rerun_a"), b = scratch("rerun_b");
        c.threads = 1;
        run_command(c, a);
        c.threads = 3;
        run_command(c, b);
        for (const char *name : {"summary", "records_outputs", "records_events", "records_states"}) {
            const std::string file = name + extension(f);
            ASSERT_TRUE(fs::exists(a / file)) << file;
            EXPECT_EQ(slurp(a / file), slurp(b / file)) << file;
        }
        fs::remove_all(a);
        fs::remove_all(b);
    }
}

TEST(Io, RecordsHaveOneRowPerGridPoint) {
    RunConfig c = small_config(RunMode::counting);
    c.trajectories = 3;
    const fs::path dir = scratch("records");
    const Json rep = run_command(c, dir);
    std::ifstream in(dir / "records_outputs.jsonl");
    std::string line;
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        const Json row = Json::parse(line);
        EXPECT_TRUE(row.contains("y0") && row.contains("m0") && row.contains("log_c"));
        ++rows;
    }
    EXPECT_EQ(rows, 3 * c.grid.size());
    EXPECT_TRUE(rep.contains("zero_count_fraction"));
    EXPECT_TRUE(Json::parse(slurp(dir / "run.json")).is_object());
    fs::remove_all(dir);
}

TEST(App, MasterRunMatchesMasterEvolution) {
    const RunConfig c = small_config(RunMode::master);
    const fs::path dir = scratch("master");
    const Json rep = run_command(c, dir);
    EXPECT_NEAR(rep["final_trace"].get<double>(), 1.0, 1e-12);
    const auto states = master_evolve(build_model(c.model), build_state(c.initial_state, 2), c.grid);
    std::ifstream in(dir / "summary.jsonl");
    std::string line;
    std::size_t i = 0;
    while (std::getline(in, line)) {
        const Json row = Json::parse(line);
        EXPECT_EQ(row["trace_distance_to_master"].get<double>(), 0.0);
        EXPECT_DOUBLE_EQ(row["rho_mean_0_0_re"].get<double>(), states[i].real()(0, 0));
        ++i;
    }
    EXPECT_EQ(i, c.grid.size());
    fs::remove_all(dir);
}

TEST(App, CommandsRejectTheWrongDetection) {
    RunConfig c = small_config(RunMode::diffusive);
    EXPECT_THROW(run_command(c, scratch("wrong")), ConfigError);
    fs::remove_all(scratch("wrong"));
}

TEST(App, ValidateReportsTheModel) {
    RunConfig c = small_config(RunMode::validate);
    const fs::path dir = scratch("validate");
    const Json rep = run_command(c, dir);
    EXPECT_EQ(rep["dimension"].get<int>(), 2);
    EXPECT_EQ(rep["detection_mode"].get<std::string>(), "counting");
    EXPECT_TRUE(rep["ok"].get<bool>());
    fs::remove_all(dir);
}

}  // namespace
}  // namespace qfilter
