// SPDX-License-Identifier: Apache-2.0
// fairjudge: corpus generation, two-stage training and ablation reports.
#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

#include "fairjudge/error.hpp"
#include "fairjudge/io.hpp"
#include "fairjudge/pipeline.hpp"

namespace {

using namespace fairjudge;

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kValidation = 2;
constexpr int kRuntime = 3;

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::ConfigInvalid:
    case ErrorCode::ConfigMismatch:
    case ErrorCode::SpecInvalid:
    case ErrorCode::DuplicateStandard:
    case ErrorCode::SchemaError:
    case ErrorCode::MissingPrerequisite:
    case ErrorCode::MissingCheckpoint:
    case ErrorCode::PromptTooLong:
    case ErrorCode::UnknownToken:
    case ErrorCode::ArtifactExists:
      return kValidation;
    default:
      return kRuntime;
  }
}

struct Options {
  std::string config_path;
  std::vector<std::string> overrides;
  std::vector<std::uint64_t> seeds;
  std::string out;
};

PipelineConfig resolve(const Options& o) {
  std::string text = "{}";
  std::string path = o.config_path;
  if (path.empty()) {
    if (const char* env = std::getenv("FAIRJUDGE_CONFIG"); env != nullptr && *env != '\0') path = env;
  }
  if (!path.empty()) {
    try {
      text = read_file(path);
    } catch (const Error&) {
      throw Error(ErrorCode::ConfigInvalid, "cannot read config " + path);
    }
  }
  for (const auto& a : o.overrides) apply_override(text, a);
  PipelineConfig cfg = config_from_json(text);
  if (!o.seeds.empty()) cfg.seeds = o.seeds;
  if (!o.out.empty()) cfg.output_dir = o.out;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bias judge trained with reasoning traces and preference optimisation."};
  app.require_subcommand(1);
  Options opts;
  app.add_option("-c,--config", opts.config_path, "Flat JSON config (default: $FAIRJUDGE_CONFIG)");
  app.add_option("--set", opts.overrides, "Override one config key, e.g. --set epochs=4")->allow_extra_args(false);
  app.add_option("-s,--seed", opts.seeds, "Restrict to these seeds")->allow_extra_args(false);
  app.add_option("-o,--out", opts.out, "Output directory");

  auto* gen = app.add_subcommand("gen", "Write the train and held-out corpus");
  auto* train = app.add_subcommand("train", "Run one training stage for every seed");
  std::string stage_name;
  train->add_option("--stage", stage_name, "sft, dpo or instruction")
      ->required()
      ->check(CLI::IsMember({"sft", "dpo", "instruction"}));
  auto* eval = app.add_subcommand("eval", "Evaluate the configured modes and write the report");
  auto* report = app.add_subcommand("report", "Print the table of an existing report");
  auto* run = app.add_subcommand("run", "gen, every needed stage, then eval");
  auto* config = app.add_subcommand("config", "Print the effective config and its hash");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    const PipelineConfig cfg = resolve(opts);
    if (config->parsed()) {
      std::cout << config_to_json(cfg) << "hash " << config_hash(cfg) << "\n";
      return kOk;
    }
    const Workspace ws(cfg);
    if (gen->parsed()) {
      cmd_gen(ws, std::cerr);
    } else if (train->parsed()) {
      const Stage stage = *parse_stage(stage_name);
      for (std::uint64_t seed : cfg.seeds) cmd_train(ws, stage, seed, std::cerr);
    } else if (eval->parsed() || run->parsed()) {
      const EvalOutcome out = run->parsed() ? cmd_run(ws, std::cerr) : cmd_eval(ws, std::cerr);
      std::cout << render_table(out.report);
      if (!out.failed_checks.empty()) return kValidation;
    } else if (report->parsed()) {
      std::cout << cmd_report(ws);
    }
    return kOk;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what();
    if (e.line() > 0) std::cerr << " (line " << e.line() << ")";
    std::cerr << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
}
