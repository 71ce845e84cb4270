// SPDX-License-Identifier: Apache-2.0
#include "fairjudge/train.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <numeric>
#include <stdexcept>

#include "fairjudge/error.hpp"

namespace fairjudge {
namespace {

// Derived seeds keep the teacher, shuffling and sampling streams apart.
std::uint64_t sub_seed(std::uint64_t seed, const char* purpose) {
  return splitmix64(seed ^ fnv1a64(purpose));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::ConfigInvalid, what);
}

// Sum of sft losses over one batch; adds the gradient of their mean when
// grads is set.
double sft_batch(const LmParams& params, const std::vector<SftExample>& examples,
                 std::span<const std::size_t> idx, Gradients* grads) {
  std::vector<TokenSeq> seqs;
  seqs.reserve(idx.size());
  for (std::size_t i : idx) seqs.push_back(examples[i].seq);
  SharedPrefixPass pass(params, std::move(seqs));
  double total = 0.0;
  std::vector<double> w(idx.size());
  for (std::size_t j = 0; j < idx.size(); ++j) {
    const double n = static_cast<double>(pass.seqs()[j].completion_size());
    total += -pass.logprobs()[j] / n;
    w[j] = -1.0 / (n * static_cast<double>(idx.size()));
  }
  if (grads != nullptr) pass.backward(w, *grads);
  return total;
}

// Per-pair margins for a batch; adds the gradient of the mean loss times
// scale when grads is set.
std::vector<double> dpo_batch(const LmParams& params, const std::vector<PreferencePair>& pairs,
                              std::span<const std::size_t> idx, double beta, Gradients* grads, double scale) {
  std::vector<TokenSeq> seqs;
  seqs.reserve(2 * idx.size());
  for (std::size_t i : idx) {
    seqs.push_back(pairs[i].winner);
    seqs.push_back(pairs[i].loser);
  }
  SharedPrefixPass pass(params, std::move(seqs));
  const auto& lp = pass.logprobs();
  std::vector<double> delta(idx.size());
  std::vector<double> w(2 * idx.size());
  for (std::size_t j = 0; j < idx.size(); ++j) {
    const auto& p = pairs[idx[j]];
    delta[j] = (lp[2 * j] - p.ref_lp_w) - (lp[2 * j + 1] - p.ref_lp_l);
    // d softplus(-b d) / d d = -b sigmoid(-b d)
    const double g = -beta * sigmoid(-beta * delta[j]) * scale;
    w[2 * j] = g;
    w[2 * j + 1] = -g;
  }
  if (grads != nullptr) pass.backward(w, *grads);
  return delta;
}

}  // namespace

void TrainConfig::validate() const {
  require(k >= 1, "k must be >= 1");
  require(n_samples >= 1, "n_samples must be >= 1");
  require(tau > 0.0 && std::isfinite(tau), "tau must be > 0");
  require(beta > 0.0 && std::isfinite(beta), "beta must be > 0");
  require(max_new >= 1, "max_new must be >= 1");
  require(noise_rate >= 0.0 && noise_rate < 1.0, "noise_rate must be in [0, 1)");
  require(lr > 0.0 && dpo_lr > 0.0, "learning rates must be > 0");
  require(batch_size >= 1 && dpo_batch_size >= 1, "batch sizes must be >= 1");
  require(pair_cap >= 1, "pair_cap must be >= 1");
}

std::vector<SftExample> build_sft_examples(const std::vector<BiasSample>& train, const SpecDocument& spec,
                                           const TemplateTable& table, const Vocab& vocab,
                                           std::size_t context_len, const TrainConfig& cfg) {
  cfg.validate();
  const std::uint64_t teacher_seed = sub_seed(cfg.seed, "teacher");
  std::vector<SftExample> out;
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto& s = train[i];
    const TokenSeq prompt = encode_prompt(spec, s.x, PromptMode::WithSpec, vocab, context_len);
    const auto traces = correct_teacher_traces(s.x, s.y_star, spec, table, cfg.k, cfg.noise_rate,
                                               Rng::stream(teacher_seed, i).next());
    for (const auto& t : traces) {
      SftExample ex{append_trace(prompt, t.raw_text, vocab, context_len), s.y_star, i};
      if (parse_completion(ex.seq, vocab).verdict != s.y_star) {
        throw std::logic_error("teacher completion does not parse to its label");
      }
      out.push_back(std::move(ex));
    }
  }
  return out;
}

std::vector<SftExample> build_instruction_examples(const std::vector<BiasSample>& train,
                                                   const SpecDocument& spec, const Vocab& vocab,
                                                   std::size_t context_len) {
  std::vector<SftExample> out;
  out.reserve(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto& s = train[i];
    const TokenSeq prompt = encode_prompt(spec, s.x, PromptMode::WithSpec, vocab, context_len);
    out.push_back({append_trace(prompt, render_trace({}, s.y_star), vocab, context_len), s.y_star, i});
  }
  return out;
}

double mean_sft_loss(const LmParams& params, const std::vector<SftExample>& examples, std::size_t batch_size) {
  if (examples.empty()) throw Error(ErrorCode::EmptyEval, "no examples");
  const auto idx = iota(examples.size());
  double total = 0.0;
  for (std::size_t b = 0; b < idx.size(); b += batch_size) {
    const std::size_t n = std::min(batch_size, idx.size() - b);
    total += sft_batch(params, examples, std::span(idx).subspan(b, n), nullptr);
  }
  return total / static_cast<double>(examples.size());
}

double scheduled_lr(double lr, std::size_t step, std::size_t total_steps, bool linear_decay) {
  if (!linear_decay || total_steps == 0) return lr;
  return lr * (1.0 - static_cast<double>(step) / static_cast<double>(total_steps));
}

StageResult fit_sft(const LmParams& base, const std::vector<SftExample>& examples, double lr, std::size_t epochs,
                    std::size_t batch_size, std::uint64_t seed, bool linear_decay) {
  require(lr > 0.0, "lr must be > 0");
  require(batch_size >= 1, "batch_size must be >= 1");
  StageResult r{base, AdamState::zeros(base.values().size()), {}, {}};
  Rng rng(seed);
  r.log.push_back({0, mean_sft_loss(base, examples, batch_size), std::nullopt});
  auto idx = iota(examples.size());
  const std::size_t total_steps = epochs * ((idx.size() + batch_size - 1) / batch_size);
  std::size_t step = 0;
  for (std::size_t e = 1; e <= epochs; ++e) {
    rng.shuffle(idx);
    double total = 0.0;
    for (std::size_t b = 0; b < idx.size(); b += batch_size) {
      const std::size_t n = std::min(batch_size, idx.size() - b);
      Gradients g(base.config());
      total += sft_batch(r.params, examples, std::span(idx).subspan(b, n), &g);
      adam_step(r.params, g, r.optimizer, scheduled_lr(lr, step++, total_steps, linear_decay));
    }
    r.log.push_back({e, total / static_cast<double>(examples.size()), std::nullopt});
  }
  r.rng_state = rng.state();
  return r;
}

StageResult run_stage1(const LmParams& base, const std::vector<BiasSample>& train, const SpecDocument& spec,
                       const TemplateTable& table, const Vocab& vocab, const TrainConfig& cfg) {
  const auto examples = build_sft_examples(train, spec, table, vocab, base.config().context_len, cfg);
  return fit_sft(base, examples, cfg.lr, cfg.epochs, cfg.batch_size, sub_seed(cfg.seed, "sft"),
                 cfg.linear_decay);
}

StageResult run_instruction_tuning(const LmParams& base, const std::vector<BiasSample>& train,
                                   const SpecDocument& spec, const Vocab& vocab, const TrainConfig& cfg) {
  cfg.validate();
  const auto examples = build_instruction_examples(train, spec, vocab, base.config().context_len);
  return fit_sft(base, examples, cfg.lr, cfg.epochs, cfg.batch_size, sub_seed(cfg.seed, "instruction"),
                 cfg.linear_decay);
}

std::vector<Rollout> sample_on_policy(const PrefixDecoder& decoder, const TokenSeq& prompt, const Vocab& vocab,
                                      const TrainConfig& cfg, Rng& rng) {
  SamplingOptions o;
  o.temperature = cfg.tau;
  o.max_new = effective_max_new(cfg.max_new, prompt.boundary, decoder.context_len());
  o.eos = vocab.eos();
  std::vector<Rollout> out;
  out.reserve(cfg.n_samples);
  for (auto& seq : decoder.sample(prompt, o, cfg.n_samples, rng)) {
    ReasoningTrace trace = parse_completion(seq, vocab);
    out.push_back({std::move(seq), std::move(trace)});
  }
  return out;
}

std::vector<Rollout> sample_on_policy(const LmParams& policy, const TokenSeq& prompt, const Vocab& vocab,
                                      const TrainConfig& cfg, Rng& rng) {
  return sample_on_policy(PrefixDecoder(policy, {}), prompt, vocab, cfg, rng);
}

std::vector<std::pair<std::size_t, std::size_t>> pair_preferences(const std::vector<ReasoningTrace>& traces,
                                                                  Verdict y_star, std::size_t cap, Rng& rng) {
  std::vector<std::size_t> w;
  std::vector<std::size_t> l;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    (traces[i].verdict == y_star ? w : l).push_back(i);
  }
  rng.shuffle(w);
  rng.shuffle(l);
  const std::size_t m = std::min({w.size(), l.size(), cap});
  std::vector<std::pair<std::size_t, std::size_t>> out;
  out.reserve(m);
  for (std::size_t j = 0; j < m; ++j) out.emplace_back(w[j], l[j]);
  return out;
}

PairSet build_pairs(const LmParams& reference, const std::vector<BiasSample>& train, const SpecDocument& spec,
                    const Vocab& vocab, const TrainConfig& cfg) {
  cfg.validate();
  const std::size_t ctx = reference.config().context_len;
  std::vector<TokenSeq> prompts;
  prompts.reserve(train.size());
  for (const auto& s : train) prompts.push_back(encode_prompt(spec, s.x, cfg.stage2_prompt, vocab, ctx));
  const PrefixDecoder decoder(reference, common_prompt_prefix(prompts));
  const std::uint64_t seed = sub_seed(cfg.seed, "rollout");

  PairSet out;
  out.stats.prompts = train.size();
  for (std::size_t i = 0; i < train.size(); ++i) {
    Rng rng = Rng::stream(seed, i);
    const auto rollouts = sample_on_policy(decoder, prompts[i], vocab, cfg, rng);
    std::vector<ReasoningTrace> traces;
    for (const auto& r : rollouts) {
      traces.push_back(r.trace);
      if (!r.trace.parsed()) ++out.stats.parse_failures;
      (r.trace.verdict == train[i].y_star ? out.stats.correct : out.stats.incorrect) += 1;
    }
    const auto matched = pair_preferences(traces, train[i].y_star, cfg.pair_cap, rng);
    if (matched.empty()) continue;
    ++out.stats.prompts_with_pairs;
    std::vector<TokenSeq> seqs;
    for (const auto& [w, l] : matched) {
      seqs.push_back(rollouts[w].seq);
      seqs.push_back(rollouts[l].seq);
    }
    const SharedPrefixPass ref(reference, seqs);
    for (std::size_t j = 0; j < matched.size(); ++j) {
      const auto [w, l] = matched[j];
      out.pairs.push_back({i, rollouts[w].seq, rollouts[l].seq, rollouts[w].trace.verdict,
                           rollouts[l].trace.verdict, ref.logprobs()[2 * j], ref.logprobs()[2 * j + 1]});
    }
  }
  if (cfg.balance_pairs) out.stats.dropped_for_balance = balance_by_winner(out.pairs, sub_seed(cfg.seed, "balance"));
  return out;
}

std::size_t balance_by_winner(std::vector<PreferencePair>& pairs, std::uint64_t seed) {
  std::vector<std::size_t> biased;
  std::vector<std::size_t> unbiased;
  for (std::size_t i = 0; i < pairs.size(); ++i) (pairs[i].y_w == Verdict::Biased ? biased : unbiased).push_back(i);
  auto& larger = biased.size() > unbiased.size() ? biased : unbiased;
  const std::size_t keep = std::min(biased.size(), unbiased.size());
  Rng rng(seed);
  rng.shuffle(larger);
  std::vector<bool> drop(pairs.size(), false);
  for (std::size_t j = keep; j < larger.size(); ++j) drop[larger[j]] = true;
  std::vector<PreferencePair> kept;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (!drop[i]) kept.push_back(std::move(pairs[i]));
  }
  const std::size_t dropped = pairs.size() - kept.size();
  pairs = std::move(kept);
  return dropped;
}

double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double dpo_loss_from_margin(double delta, double beta) { return softplus(-beta * delta); }

double dpo_margin(const LmParams& theta, const PreferencePair& pair) {
  return (sequence_logprob(theta, pair.winner) - pair.ref_lp_w) -
         (sequence_logprob(theta, pair.loser) - pair.ref_lp_l);
}

double dpo_loss(const LmParams& theta, const PreferencePair& pair, double beta) {
  require(beta > 0.0, "beta must be > 0");
  return dpo_loss_from_margin(dpo_margin(theta, pair), beta);
}

DpoObjective::DpoObjective(std::vector<PreferencePair> pairs, double beta) : pairs_(std::move(pairs)), beta_(beta) {
  if (pairs_.empty()) throw Error(ErrorCode::NoPairsFound, "objective needs at least one pair");
  require(beta > 0.0, "beta must be > 0");
}

double DpoObjective::evaluate(const LmParams& params, Gradients* grads, double scale) const {
  const auto idx = iota(pairs_.size());
  const double n = static_cast<double>(pairs_.size());
  const auto delta = dpo_batch(params, pairs_, idx, beta_, grads, scale / n);
  double total = 0.0;
  for (double d : delta) total += dpo_loss_from_margin(d, beta_);
  return total / n;
}

DpoStats dpo_stats(const LmParams& theta, const std::vector<PreferencePair>& pairs, double beta,
                   std::size_t batch_size) {
  if (pairs.empty()) throw Error(ErrorCode::NoPairsFound, "no preference pairs");
  const auto idx = iota(pairs.size());
  DpoStats s;
  for (std::size_t b = 0; b < idx.size(); b += batch_size) {
    const std::size_t n = std::min(batch_size, idx.size() - b);
    for (double d : dpo_batch(theta, pairs, std::span(idx).subspan(b, n), beta, nullptr, 0.0)) {
      s.loss += dpo_loss_from_margin(d, beta);
      s.margin += beta * d;
    }
  }
  s.loss /= static_cast<double>(pairs.size());
  s.margin /= static_cast<double>(pairs.size());
  return s;
}

StageResult fit_dpo(const LmParams& reference, const std::vector<PreferencePair>& pairs, const TrainConfig& cfg) {
  cfg.validate();
  if (pairs.empty()) {
    throw Error(ErrorCode::NoPairsFound, "every prompt gave only correct or only incorrect samples");
  }
  StageResult r{reference, AdamState::zeros(reference.values().size()), {}, {}};
  Rng rng(sub_seed(cfg.seed, "dpo"));
  auto stats = dpo_stats(reference, pairs, cfg.beta, cfg.dpo_batch_size);
  r.log.push_back({0, stats.loss, stats.margin});
  auto idx = iota(pairs.size());
  const std::size_t total_steps = cfg.dpo_epochs * ((idx.size() + cfg.dpo_batch_size - 1) / cfg.dpo_batch_size);
  std::size_t step = 0;
  for (std::size_t e = 1; e <= cfg.dpo_epochs; ++e) {
    rng.shuffle(idx);
    for (std::size_t b = 0; b < idx.size(); b += cfg.dpo_batch_size) {
      const std::size_t n = std::min(cfg.dpo_batch_size, idx.size() - b);
      Gradients g(reference.config());
      dpo_batch(r.params, pairs, std::span(idx).subspan(b, n), cfg.beta, &g, 1.0 / static_cast<double>(n));
      adam_step(r.params, g, r.optimizer, scheduled_lr(cfg.dpo_lr, step++, total_steps, cfg.linear_decay));
    }
    stats = dpo_stats(r.params, pairs, cfg.beta, cfg.dpo_batch_size);
    r.log.push_back({e, stats.loss, stats.margin});
  }
  r.rng_state = rng.state();
  return r;
}

namespace {

nlohmann::json prediction_json(const Prediction& p) {
  return p ? nlohmann::json(std::string(to_string(*p))) : nlohmann::json(nullptr);
}

Prediction prediction_from(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  const auto v = parse_verdict(j.get<std::string>());
  if (!v) throw std::invalid_argument("bad verdict");
  return v;
}

}  // namespace

std::string pairs_to_jsonl(const std::vector<PreferencePair>& pairs, const Vocab& vocab,
                           const std::string& config_hash) {
  std::string out;
  for (const auto& p : pairs) {
    nlohmann::ordered_json j;
    j["prompt_index"] = p.prompt_index;
    j["prompt"] = decode(p.winner.prompt(), vocab);
    j["winner"] = decode(p.winner.completion(), vocab);
    j["loser"] = decode(p.loser.completion(), vocab);
    j["y_w"] = prediction_json(p.y_w);
    j["y_l"] = prediction_json(p.y_l);
    j["ref_lp_w"] = p.ref_lp_w;
    j["ref_lp_l"] = p.ref_lp_l;
    j["boundary"] = p.winner.boundary;
    j["winner_ids"] = p.winner.ids;
    j["loser_ids"] = p.loser.ids;
    j["config_hash"] = config_hash;
    out += j.dump();
    out.push_back('\n');
  }
  return out;
}

std::vector<PreferencePair> pairs_from_jsonl(const std::string& text) {
  std::vector<PreferencePair> out;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    const std::string line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      PreferencePair p;
      p.prompt_index = j.at("prompt_index").get<std::size_t>();
      const auto boundary = j.at("boundary").get<std::size_t>();
      p.winner = {j.at("winner_ids").get<std::vector<int>>(), boundary};
      p.loser = {j.at("loser_ids").get<std::vector<int>>(), boundary};
      p.y_w = prediction_from(j.at("y_w"));
      p.y_l = prediction_from(j.at("y_l"));
      p.ref_lp_w = j.at("ref_lp_w").get<double>();
      p.ref_lp_l = j.at("ref_lp_l").get<double>();
      if (boundary == 0 || boundary >= p.winner.size() || boundary >= p.loser.size() ||
          !std::equal(p.winner.ids.begin(), p.winner.ids.begin() + static_cast<std::ptrdiff_t>(boundary),
                      p.loser.ids.begin())) {
        throw std::invalid_argument("winner and loser must share a non-empty prompt");
      }
      out.push_back(std::move(p));
    } catch (const std::exception& e) {
      throw Error(ErrorCode::SchemaError, std::string("pair record: ") + e.what(), line_no);
    }
  }
  return out;
}

std::string log_to_jsonl(const std::vector<EpochLog>& log, const std::string& stage, const std::string& config_hash) {
  std::string out;
  for (const auto& e : log) {
    nlohmann::ordered_json j;
    j["stage"] = stage;
    j["epoch"] = e.epoch;
    j["loss"] = e.loss;
    if (e.margin) j["margin"] = *e.margin;
    j["config_hash"] = config_hash;
    out += j.dump();
    out.push_back('\n');
  }
  return out;
}

}  // namespace fairjudge
