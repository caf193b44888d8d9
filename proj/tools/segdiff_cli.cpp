/*
 * Copyright 2026 The segdiff Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// segdiff command line: one subcommand per pipeline stage plus ablate, report and run.
// Failures print one JSON line {"error": kind, "message": text} on stderr and exit nonzero.

#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "segdiff/config.hpp"
#include "segdiff/pipeline.hpp"
#include "segdiff/report.hpp"

namespace {

using segdiff::RunConfig;

struct GlobalOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string run_dir;
  bool resume = false;
  std::string log_level = "info";
};

RunConfig resolve(const GlobalOptions& g) {
  RunConfig c = g.config_path.empty() ? RunConfig{} : segdiff::load_run_config(g.config_path);
  if (g.seed) c.seed = *g.seed;
  if (!g.run_dir.empty()) c.run_dir = g.run_dir;
  if (g.resume) c.resume = true;
  c.validate();
  return c;
}

std::vector<nlohmann::json> parse_values(const std::string& parameter, const std::vector<std::string>& raw) {
  std::vector<nlohmann::json> out;
  for (const auto& v : raw) {
    if (parameter == "backbone") {
      out.emplace_back(v);
    } else {
      const auto j = segdiff::yaml_to_json(v);
      if (!j.is_number()) throw segdiff::ArgumentError("sweep value '" + v + "' is not a number");
      out.push_back(j);
    }
  }
  return out;
}

int fail(const std::string& kind, const std::string& message) {
  std::cerr << nlohmann::json{{"error", kind}, {"message", message}}.dump() << std::endl;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diffusion-boosted segmentation experiments"};
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_option("--config", g.config_path, "YAML run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Master seed (overrides the config)");
  app.add_option("--run-dir", g.run_dir, "Run directory (overrides the config)");
  app.add_flag("--resume", g.resume, "Skip stages whose outputs match the current config");
  app.add_option("--log-level", g.log_level, "trace, debug, info, warn, error or off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));

  std::vector<std::pair<CLI::App*, segdiff::Stage>> stage_commands;
  for (segdiff::Stage s : segdiff::all_stages()) {
    const std::string name(segdiff::stage_name(s));
    stage_commands.emplace_back(app.add_subcommand(name, "Run the " + name + " stage"), s);
  }
  auto* run = app.add_subcommand("run", "Run the stages listed in the config");
  auto* ablate = app.add_subcommand("ablate", "Sweep one segmentation parameter");
  std::string parameter;
  std::vector<std::string> values;
  ablate->add_option("--param", parameter, "n, alpha, patch_size or backbone; omit to run every configured sweep");
  ablate->add_option("--values", values, "Sweep values; defaults to the config's list")->delimiter(',');
  auto* report = app.add_subcommand("report", "Aggregate evaluations into tables, a summary and plots");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << nlohmann::json{{"error", "usage"}, {"message", e.what()}}.dump() << std::endl;
    return 2;
  }
  spdlog::set_level(spdlog::level::from_str(g.log_level));

  try {
    const RunConfig config = resolve(g);
    for (const auto& [cmd, stage] : stage_commands) {
      if (cmd->parsed()) segdiff::run_pipeline(config, {stage});
    }
    if (run->parsed()) segdiff::run_pipeline(config);
    if (ablate->parsed()) {
      std::vector<std::pair<std::string, std::vector<nlohmann::json>>> sweeps;
      if (parameter.empty()) {
        if (!values.empty()) throw segdiff::ArgumentError("--values requires --param");
        for (const auto& [name, v] : config.ablation.sweeps) sweeps.emplace_back(name, v);
        if (sweeps.empty()) throw segdiff::ConfigError("no sweeps configured under ablation.sweeps");
      } else if (values.empty()) {
        const auto it = config.ablation.sweeps.find(parameter);
        if (it == config.ablation.sweeps.end()) {
          throw segdiff::ConfigError("no values given for '" + parameter + "' and none configured");
        }
        sweeps.emplace_back(parameter, it->second);
      } else {
        sweeps.emplace_back(parameter, parse_values(parameter, values));
      }
      for (const auto& [name, v] : sweeps) {
        const auto result = segdiff::run_ablation(config, name, v);
        std::cout << result.table_path.string() << "\n";
      }
    }
    if (report->parsed()) {
      segdiff::write_report(config.run_dir);
      std::cout << (config.run_dir / "report" / "summary.md").string() << "\n";
    }
  } catch (const segdiff::Error& e) {
    return fail(e.kind(), e.what());
  } catch (const std::exception& e) {
    return fail("internal", e.what());
  }
  return 0;
}
