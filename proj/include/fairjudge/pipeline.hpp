// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "fairjudge/eval.hpp"
#include "fairjudge/model.hpp"
#include "fairjudge/train.hpp"

namespace fairjudge {

// Everything a run depends on. Serialised as one flat JSON object; see
// config_to_json for the key names.
struct PipelineConfig {
  LmConfig lm;  // vocab_size and seed are filled in per run
  TrainConfig train;
  std::size_t n_train = 240;
  std::size_t n_heldout = 120;
  std::uint64_t corpus_seed = 1;
  std::string spec_path;              // empty: built-in specification
  std::vector<std::string> datasets;  // external JSONL files, evaluated leniently
  std::string output_dir = "runs";
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::vector<AblationMode> modes{std::begin(kAllModes), std::end(kAllModes)};
  OfDenominator of_denominator = OfDenominator::All;

  // Throws ConfigInvalid (including missing spec or dataset files).
  void validate() const;
};

std::string config_to_json(const PipelineConfig& cfg);
// Unknown keys and wrongly typed values throw ConfigInvalid; absent keys
// keep their defaults.
PipelineConfig config_from_json(const std::string& text);
// "key=value" where value is JSON, or a bare string.
void apply_override(std::string& config_json, const std::string& assignment);

// Fingerprint of everything that changes artifacts; output_dir, seeds and
// modes are excluded so runs over different seed subsets share a directory.
std::string config_hash(const PipelineConfig& cfg);

enum class Stage { Sft, Dpo, Instruction };
std::string_view to_string(Stage s);
std::optional<Stage> parse_stage(std::string_view s);

// Artifact locations inside output_dir/run-<hash>.
struct RunPaths {
  std::filesystem::path root;

  std::filesystem::path config() const { return root / "config.json"; }
  std::filesystem::path train_corpus() const { return root / "corpus" / "train.jsonl"; }
  std::filesystem::path heldout_corpus() const { return root / "corpus" / "heldout.jsonl"; }
  std::filesystem::path seed_dir(std::uint64_t seed) const { return root / ("seed-" + std::to_string(seed)); }
  std::filesystem::path checkpoint(std::uint64_t seed, AblationMode mode) const;
  std::filesystem::path train_log(std::uint64_t seed, Stage stage) const;
  std::filesystem::path pairs(std::uint64_t seed) const { return seed_dir(seed) / "pairs.jsonl"; }
  // Reports are keyed by the seeds and modes they cover.
  std::filesystem::path report(const PipelineConfig& cfg) const;
  std::filesystem::path table(const PipelineConfig& cfg) const;
};

RunPaths run_paths(const PipelineConfig& cfg);

// Specification, template table and vocabulary shared by every command.
struct Workspace {
  PipelineConfig cfg;
  SpecDocument spec;
  TemplateTable table;
  Vocab vocab;
  RunPaths paths;
  std::string hash;

  explicit Workspace(PipelineConfig config);
  LmConfig lm_config(std::uint64_t seed) const;
  TrainConfig train_config(std::uint64_t seed) const;
};

// Writes the config and both corpus files; rerunning is a no-op.
void cmd_gen(const Workspace& ws, std::ostream& log);

// Runs one training stage for one seed. Throws MissingPrerequisite when the
// corpus or (for dpo) the sft checkpoint is absent.
void cmd_train(const Workspace& ws, Stage stage, std::uint64_t seed, std::ostream& log);

struct EvalOutcome {
  EvalReport report;
  std::vector<std::string> failed_checks;  // embedded invariant checks
};

// Evaluates the configured modes for every seed and writes the report and
// table. Throws MissingCheckpoint, ConfigMismatch.
EvalOutcome cmd_eval(const Workspace& ws, std::ostream& log);

// Prints the table of an existing report. Throws MissingPrerequisite.
std::string cmd_report(const Workspace& ws);

// gen, every stage the modes need for every seed, then eval.
EvalOutcome cmd_run(const Workspace& ws, std::ostream& log);

}  // namespace fairjudge
