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

// qfilter: simulate counting and diffusive quantum filters from a JSON
// config. Exit codes: 0 success, 2 config error, 3 numerical failure.

#include "qfilter/app.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

struct Overrides {
    std::string config;
    std::string out = "out";
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> trajectories;
    std::optional<double> dt;
    std::optional<std::size_t> snapshot_every;
    std::optional<std::string> format;
    std::optional<std::size_t> threads;
};

void add_flags(CLI::App &cmd, Overrides &o) {
    cmd.add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
    cmd.add_option("--out", o.out, "Output directory")->capture_default_str();
    cmd.add_option("--seed", o.seed, "Master seed");
    cmd.add_option("--trajectories", o.trajectories, "Number of trajectories");
    cmd.add_option("--dt", o.dt, "Diffusive integration step (must divide the grid cells)");
    cmd.add_option("--snapshot-every", o.snapshot_every, "Keep states every N grid points (0: none)");
    cmd.add_option("--format", o.format, "Table format")->check(CLI::IsMember({"jsonl", "csv"}));
    cmd.add_option("--threads", o.threads, "Worker threads (0: all cores)");
}

qfilter::RunConfig resolve(const Overrides &o, qfilter::RunMode mode) {
    using namespace qfilter;
    Json j = Json::object();
    if (!o.config.empty()) {
        std::ifstream in(o.config);
        try {
            j = Json::parse(in);
        } catch (const Json::parse_error &e) {
            throw ConfigError("config: " + o.config + ": " + e.what());
        }
    }
    if (!j.is_object()) throw ConfigError("config: expected a JSON object");
    j["mode"] = to_string(mode);
    if (o.seed) j["seed"] = *o.seed;
    if (o.trajectories) j["trajectories"] = *o.trajectories;
    if (o.dt) j["dt"] = *o.dt;
    if (o.snapshot_every) j["snapshot_every"] = *o.snapshot_every;
    if (o.format) j["format"] = *o.format;
    if (o.threads) j["threads"] = *o.threads;
    return parse_config(j);
}

}  // namespace

int main(int argc, char **argv) {
    CLI::App app{"Quantum filtering for counting and diffusive detection"};
    app.require_subcommand(1);
    Overrides o;
    const std::vector<std::pair<qfilter::RunMode, const char *>> commands{
        {qfilter::RunMode::counting, "Simulate a photon-counting trajectory ensemble"},
        {qfilter::RunMode::diffusive, "Simulate a homodyne or heterodyne trajectory ensemble"},
        {qfilter::RunMode::master, "Integrate the a-priori (master) evolution"},
        {qfilter::RunMode::charfun, "Characteristic functional: propagation, Monte Carlo and closed form"},
        {qfilter::RunMode::limit, "Diffusive limit of scaled counting"},
        {qfilter::RunMode::validate, "Check a configuration without simulating trajectories"},
    };
    std::optional<qfilter::RunMode> chosen;
    for (const auto &[mode, help] : commands) {
        CLI::App *cmd = app.add_subcommand(qfilter::to_string(mode), help);
        add_flags(*cmd, o);
        cmd->callback([&chosen, mode = mode] { chosen = mode; });
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp &e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp &e) {
        return app.exit(e);
    } catch (const CLI::ParseError &e) {
        app.exit(e);
        return kExitConfig;
    }
    try {
        const qfilter::RunConfig cfg = resolve(o, *chosen);
        const qfilter::Json rep = qfilter::run_command(cfg, o.out);
        std::cout << rep.dump(2) << '\n';
        return 0;
    } catch (const qfilter::ConfigError &e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const qfilter::Error &e) {
        std::cerr << "numerical contract violation: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const std::filesystem::filesystem_error &e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    }
}
