// SPDX-License-Identifier: Apache-2.0
#include "fairjudge/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <ostream>
#include <set>

#include "fairjudge/checkpoint.hpp"
#include "fairjudge/error.hpp"
#include "fairjudge/io.hpp"

namespace fairjudge {
namespace {

using Json = nlohmann::ordered_json;

std::string_view to_string(PromptMode m) { return m == PromptMode::WithSpec ? "with_spec" : "bare"; }
std::string_view to_string(OfDenominator d) { return d == OfDenominator::All ? "all" : "unbiased"; }

Json to_json(const PipelineConfig& c) {
  Json j;
  j["n_layers"] = c.lm.n_layers;
  j["d_model"] = c.lm.d_model;
  j["n_heads"] = c.lm.n_heads;
  j["d_ff"] = c.lm.d_ff;
  j["context_len"] = c.lm.context_len;
  const auto& t = c.train;
  j["k"] = t.k;
  j["n_samples"] = t.n_samples;
  j["tau"] = t.tau;
  j["max_new"] = t.max_new;
  j["beta"] = t.beta;
  j["noise_rate"] = t.noise_rate;
  j["lr"] = t.lr;
  j["epochs"] = t.epochs;
  j["batch_size"] = t.batch_size;
  j["dpo_lr"] = t.dpo_lr;
  j["dpo_epochs"] = t.dpo_epochs;
  j["dpo_batch_size"] = t.dpo_batch_size;
  j["pair_cap"] = t.pair_cap;
  j["balance_pairs"] = t.balance_pairs;
  j["stage2_prompt"] = to_string(t.stage2_prompt);
  j["linear_decay"] = t.linear_decay;
  j["n_train"] = c.n_train;
  j["n_heldout"] = c.n_heldout;
  j["corpus_seed"] = c.corpus_seed;
  j["spec_path"] = c.spec_path;
  j["datasets"] = c.datasets;
  j["of_denominator"] = to_string(c.of_denominator);
  j["output_dir"] = c.output_dir;
  j["seeds"] = c.seeds;
  Json modes = Json::array();
  for (AblationMode m : c.modes) modes.push_back(to_string(m));
  j["modes"] = modes;
  return j;
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

Checkpoint load_checked(const Workspace& ws, const std::filesystem::path& path, std::uint64_t seed) {
  Checkpoint ck = load_checkpoint(path);
  if (!(ck.params.config() == ws.lm_config(seed))) {
    throw Error(ErrorCode::ConfigMismatch, path.string() + " was trained with a different model config");
  }
  if (!(ck.vocab == ws.vocab)) throw Error(ErrorCode::ConfigMismatch, path.string() + " has a different vocabulary");
  if (ck.config_hash != ws.hash) {
    throw Error(ErrorCode::ConfigMismatch, path.string() + " belongs to config " + ck.config_hash);
  }
  return ck;
}

std::vector<BiasSample> load_corpus_file(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw Error(ErrorCode::MissingPrerequisite, "gen: " + path.string() + " not found");
  }
  return corpus_from_jsonl(read_file(path));
}

void save_stage(const Workspace& ws, const std::filesystem::path& path, const StageResult& r, const std::string& stage,
                std::uint64_t seed) {
  save_checkpoint(path, {r.params, ws.vocab, r.optimizer, r.rng_state, ws.hash,
                         {{"stage", stage}, {"seed", std::to_string(seed)}}});
}

void write_base(const Workspace& ws, std::uint64_t seed) {
  const LmParams base = LmParams::initialize(ws.lm_config(seed));
  save_checkpoint(ws.paths.checkpoint(seed, AblationMode::Base),
                  {base, ws.vocab, {}, "", ws.hash, {{"stage", "init"}, {"seed", std::to_string(seed)}}});
}

// Counts each outcome the slow way.
Confusion naive_confusion(const std::vector<Prediction>& preds, const std::vector<Verdict>& truths) {
  Confusion c;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const bool failed = !preds[i].has_value();
    c.parse_failures += failed;
    c.tp += !failed && *preds[i] == Verdict::Biased && truths[i] == Verdict::Biased;
    c.tn += !failed && *preds[i] == Verdict::Unbiased && truths[i] == Verdict::Unbiased;
    c.fp += !failed && *preds[i] == Verdict::Biased && truths[i] == Verdict::Unbiased;
    c.fn += failed || (*preds[i] == Verdict::Unbiased && truths[i] == Verdict::Biased);
  }
  return c;
}

}  // namespace

void PipelineConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::ConfigInvalid, m); };
  LmConfig probe = lm;
  probe.vocab_size = 1;
  probe.validate();
  train.validate();
  if (n_train < 1 || n_heldout < 1) fail("n_train and n_heldout must be >= 1");
  if (seeds.empty()) fail("seed list is empty");
  if (modes.empty()) fail("mode list is empty");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) fail("duplicate seeds");
  if (!spec_path.empty() && !std::filesystem::exists(spec_path)) fail("spec file not found: " + spec_path);
  for (const auto& d : datasets) {
    if (!std::filesystem::exists(d)) fail("dataset not found: " + d);
  }
}

std::string config_to_json(const PipelineConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

PipelineConfig config_from_json(const std::string& text) {
  PipelineConfig c;
  static const std::set<std::string> known = [] {
    std::set<std::string> k;
    const auto defaults = to_json(PipelineConfig{});
    for (const auto& item : defaults.items()) k.insert(item.key());
    return k;
  }();
  try {
    const auto j = nlohmann::json::parse(text);
    if (!j.is_object()) throw Error(ErrorCode::ConfigInvalid, "config must be a JSON object");
    for (const auto& [key, v] : j.items()) {
      if (!known.count(key)) throw Error(ErrorCode::ConfigInvalid, "unknown config key '" + key + "'");
    }
    read(j, "n_layers", c.lm.n_layers);
    read(j, "d_model", c.lm.d_model);
    read(j, "n_heads", c.lm.n_heads);
    read(j, "d_ff", c.lm.d_ff);
    read(j, "context_len", c.lm.context_len);
    auto& t = c.train;
    read(j, "k", t.k);
    read(j, "n_samples", t.n_samples);
    read(j, "tau", t.tau);
    read(j, "max_new", t.max_new);
    read(j, "beta", t.beta);
    read(j, "noise_rate", t.noise_rate);
    read(j, "lr", t.lr);
    read(j, "epochs", t.epochs);
    read(j, "batch_size", t.batch_size);
    read(j, "dpo_lr", t.dpo_lr);
    read(j, "dpo_epochs", t.dpo_epochs);
    read(j, "dpo_batch_size", t.dpo_batch_size);
    read(j, "pair_cap", t.pair_cap);
    read(j, "balance_pairs", t.balance_pairs);
    read(j, "linear_decay", t.linear_decay);
    if (j.contains("stage2_prompt")) {
      const auto s = j.at("stage2_prompt").get<std::string>();
      if (s != "with_spec" && s != "bare") throw Error(ErrorCode::ConfigInvalid, "stage2_prompt: with_spec or bare");
      t.stage2_prompt = s == "bare" ? PromptMode::Bare : PromptMode::WithSpec;
    }
    read(j, "n_train", c.n_train);
    read(j, "n_heldout", c.n_heldout);
    read(j, "corpus_seed", c.corpus_seed);
    read(j, "spec_path", c.spec_path);
    read(j, "datasets", c.datasets);
    if (j.contains("of_denominator")) {
      const auto s = j.at("of_denominator").get<std::string>();
      if (s != "all" && s != "unbiased") throw Error(ErrorCode::ConfigInvalid, "of_denominator: all or unbiased");
      c.of_denominator = s == "all" ? OfDenominator::All : OfDenominator::Unbiased;
    }
    read(j, "output_dir", c.output_dir);
    read(j, "seeds", c.seeds);
    if (j.contains("modes")) {
      c.modes.clear();
      for (const auto& m : j.at("modes")) {
        const auto mode = parse_mode(m.get<std::string>());
        if (!mode) throw Error(ErrorCode::ConfigInvalid, "unknown mode " + m.dump());
        c.modes.push_back(*mode);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigInvalid, std::string("config: ") + e.what());
  }
  return c;
}

void apply_override(std::string& config_json, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw Error(ErrorCode::ConfigInvalid, "override must look like key=value: " + assignment);
  }
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(config_json);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigInvalid, std::string("config: ") + e.what());
  }
  nlohmann::ordered_json value;
  try {
    value = nlohmann::ordered_json::parse(raw);
  } catch (const nlohmann::json::exception&) {
    value = raw;
  }
  j[key] = value;
  config_json = j.dump();
}

std::string config_hash(const PipelineConfig& cfg) {
  Json j = to_json(cfg);
  j.erase("output_dir");
  j.erase("seeds");
  j.erase("modes");
  // The specification's content matters, not where it lives.
  j.erase("spec_path");
  const SpecDocument spec = cfg.spec_path.empty() ? default_spec() : load_spec(cfg.spec_path);
  j["spec"] = serialize_spec(spec);
  return hex64(fnv1a64(j.dump()));
}

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::Sft: return "sft";
    case Stage::Dpo: return "dpo";
    case Stage::Instruction: return "instruction";
  }
  return "unknown";
}

std::optional<Stage> parse_stage(std::string_view s) {
  for (Stage st : {Stage::Sft, Stage::Dpo, Stage::Instruction}) {
    if (to_string(st) == s) return st;
  }
  return std::nullopt;
}

std::filesystem::path RunPaths::checkpoint(std::uint64_t seed, AblationMode mode) const {
  return seed_dir(seed) / (std::string(to_string(checkpoint_mode(mode))) + ".ckpt");
}

std::filesystem::path RunPaths::train_log(std::uint64_t seed, Stage stage) const {
  return seed_dir(seed) / (std::string(to_string(stage)) + ".log.jsonl");
}

namespace {

std::string report_key(const PipelineConfig& cfg) {
  std::string key;
  for (auto s : cfg.seeds) key += std::to_string(s) + ",";
  key += "|";
  for (auto m : cfg.modes) key += std::string(to_string(m)) + ",";
  return hex64(fnv1a64(key)).substr(0, 8);
}

}  // namespace

std::filesystem::path RunPaths::report(const PipelineConfig& cfg) const {
  return root / ("report-" + report_key(cfg) + ".jsonl");
}

std::filesystem::path RunPaths::table(const PipelineConfig& cfg) const {
  return root / ("report-" + report_key(cfg) + ".txt");
}

RunPaths run_paths(const PipelineConfig& cfg) {
  return {std::filesystem::path(cfg.output_dir) / ("run-" + config_hash(cfg))};
}

Workspace::Workspace(PipelineConfig config) : cfg(std::move(config)) {
  cfg.validate();
  spec = cfg.spec_path.empty() ? default_spec() : load_spec(cfg.spec_path);
  table = default_table();
  vocab = Vocab::build(lexicon_texts(table, spec));
  hash = config_hash(cfg);
  paths = run_paths(cfg);
}

LmConfig Workspace::lm_config(std::uint64_t seed) const {
  LmConfig c = cfg.lm;
  c.vocab_size = vocab.size();
  c.seed = seed;
  return c;
}

TrainConfig Workspace::train_config(std::uint64_t seed) const {
  TrainConfig t = cfg.train;
  t.seed = seed;
  return t;
}

void cmd_gen(const Workspace& ws, std::ostream& log) {
  const auto corpus = generate_corpus(ws.table, ws.cfg.n_train, ws.cfg.n_heldout, ws.cfg.corpus_seed);
  const auto train = split_of(corpus, Split::Train);
  const auto held = split_of(corpus, Split::Heldout);
  for (const auto& s : corpus) check_spec_fits(ws.spec, ws.vocab, s.x, ws.cfg.lm.context_len);
  write_artifact(ws.paths.config(), config_to_json(ws.cfg));
  write_artifact(ws.paths.train_corpus(), corpus_to_jsonl(train, ws.hash));
  write_artifact(ws.paths.heldout_corpus(), corpus_to_jsonl(held, ws.hash));
  log << "gen: " << train.size() << " train / " << held.size() << " held-out samples in "
      << ws.paths.root.string() << "\n";
}

void cmd_train(const Workspace& ws, Stage stage, std::uint64_t seed, std::ostream& log) {
  const auto train = load_corpus_file(ws.paths.train_corpus());
  const TrainConfig tc = ws.train_config(seed);
  const std::string name(to_string(stage));
  StageResult result{LmParams(ws.lm_config(seed)), {}, {}, {}};
  if (stage == Stage::Dpo) {
    const auto sft_path = ws.paths.checkpoint(seed, AblationMode::CotSft);
    if (!std::filesystem::exists(sft_path)) {
      throw Error(ErrorCode::MissingPrerequisite, "sft: train --stage sft before dpo (" + sft_path.string() + ")");
    }
    const LmParams sft = load_checked(ws, sft_path, seed).params;
    const PairSet set = build_pairs(sft, train, ws.spec, ws.vocab, tc);
    log << "dpo seed " << seed << ": " << set.pairs.size() << " pairs from " << set.stats.prompts_with_pairs << "/"
        << set.stats.prompts << " prompts (" << set.stats.correct << " correct, " << set.stats.incorrect
        << " incorrect, " << set.stats.parse_failures << " unparsed samples; " << set.stats.dropped_for_balance
        << " dropped to balance verdicts)\n";
    write_artifact(ws.paths.pairs(seed), pairs_to_jsonl(set.pairs, ws.vocab, ws.hash));
    result = fit_dpo(sft, set.pairs, tc);
  } else {
    write_base(ws, seed);
    const LmParams base = LmParams::initialize(ws.lm_config(seed));
    result = stage == Stage::Sft ? run_stage1(base, train, ws.spec, ws.table, ws.vocab, tc)
                                 : run_instruction_tuning(base, train, ws.spec, ws.vocab, tc);
  }
  const AblationMode mode = stage == Stage::Sft   ? AblationMode::CotSft
                            : stage == Stage::Dpo ? AblationMode::CotDpo
                                                  : AblationMode::InstructionTuning;
  save_stage(ws, ws.paths.checkpoint(seed, mode), result, name, seed);
  write_artifact(ws.paths.train_log(seed, stage), log_to_jsonl(result.log, name, ws.hash));
  const auto& last = result.log.back();
  log << name << " seed " << seed << ": loss " << result.log.front().loss << " -> " << last.loss;
  if (last.margin) log << ", margin " << *result.log.front().margin << " -> " << *last.margin;
  log << "\n";
}

EvalOutcome cmd_eval(const Workspace& ws, std::ostream& log) {
  std::vector<Dataset> datasets;
  datasets.push_back({"heldout", load_corpus_file(ws.paths.heldout_corpus()), false});
  for (const auto& path : ws.cfg.datasets) {
    datasets.push_back({std::filesystem::path(path).stem().string(), ingest_external(path), true});
  }
  std::set<AblationMode> needed;
  for (AblationMode m : ws.cfg.modes) needed.insert(checkpoint_mode(m));

  EvalOutcome out;
  std::map<std::uint64_t, ModelSet> models;
  for (std::uint64_t seed : ws.cfg.seeds) {
    ModelSet set;
    for (AblationMode m : needed) {
      const auto path = ws.paths.checkpoint(seed, m);
      if (m == AblationMode::Base && !std::filesystem::exists(path)) {
        set.emplace(m, LmParams::initialize(ws.lm_config(seed)));
        continue;
      }
      if (!std::filesystem::exists(path)) {
        throw Error(ErrorCode::MissingCheckpoint, std::string(to_string(m)) + ": " + path.string());
      }
      set.emplace(m, load_checked(ws, path, seed).params);
    }
    // Init identity: at the reference policy every preference loss is ln 2.
    if (needed.count(AblationMode::CotDpo) && std::filesystem::exists(ws.paths.pairs(seed))) {
      const auto pairs = pairs_from_jsonl(read_file(ws.paths.pairs(seed)));
      const auto sft = load_checked(ws, ws.paths.checkpoint(seed, AblationMode::CotSft), seed).params;
      for (std::size_t i = 0; i < pairs.size(); i += std::max<std::size_t>(1, pairs.size() / 16)) {
        const double loss = dpo_loss(sft, pairs[i], ws.cfg.train.beta);
        if (std::abs(loss - std::log(2.0)) > 1e-9) {
          out.failed_checks.push_back("init identity, seed " + std::to_string(seed) + ", pair " + std::to_string(i));
        }
      }
    }
    models.emplace(seed, std::move(set));
  }

  AblationOptions opts;
  opts.modes = ws.cfg.modes;
  opts.max_new = ws.cfg.train.max_new;
  opts.denominator = ws.cfg.of_denominator;
  opts.config_hash = ws.hash;
  out.report = run_ablation(models, datasets, ws.spec, ws.vocab, opts);

  // Metric spot check against a direct count.
  for (const auto& row : out.report.rows) {
    const auto& d = *std::find_if(datasets.begin(), datasets.end(), [&](const Dataset& x) { return x.name == row.dataset; });
    std::vector<Verdict> truths;
    for (const auto& s : d.samples) truths.push_back(s.y_star);
    for (const auto& cell : row.cells) {
      if (naive_confusion(cell.predictions, truths) != cell.metrics.confusion) {
        out.failed_checks.push_back("metric count, " + row.dataset + " / " + std::string(to_string(row.mode)));
      }
    }
  }

  write_artifact(ws.paths.report(ws.cfg), report_to_jsonl(out.report));
  write_artifact(ws.paths.table(ws.cfg), render_table(out.report));
  log << "eval: " << ws.paths.report(ws.cfg).string() << "\n";
  for (const auto& f : out.failed_checks) log << "check failed: " << f << "\n";
  return out;
}

std::string cmd_report(const Workspace& ws) {
  const auto path = ws.paths.report(ws.cfg);
  if (!std::filesystem::exists(path)) {
    throw Error(ErrorCode::MissingPrerequisite, "eval: " + path.string() + " not found");
  }
  return render_table(report_from_jsonl(read_file(path)));
}

EvalOutcome cmd_run(const Workspace& ws, std::ostream& log) {
  cmd_gen(ws, log);
  std::set<AblationMode> needed;
  for (AblationMode m : ws.cfg.modes) needed.insert(checkpoint_mode(m));
  for (std::uint64_t seed : ws.cfg.seeds) {
    if (needed.count(AblationMode::CotSft) || needed.count(AblationMode::CotDpo)) cmd_train(ws, Stage::Sft, seed, log);
    if (needed.count(AblationMode::InstructionTuning)) cmd_train(ws, Stage::Instruction, seed, log);
    if (needed.count(AblationMode::CotDpo)) cmd_train(ws, Stage::Dpo, seed, log);
  }
  return cmd_eval(ws, log);
}

}  // namespace fairjudge
