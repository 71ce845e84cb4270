// SPDX-License-Identifier: Apache-2.0
#include "fairjudge/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <json.hpp>
#include <sstream>

#include "fairjudge/error.hpp"
#include "fairjudge/sampling.hpp"

namespace fairjudge {

std::string_view to_string(AblationMode m) {
  switch (m) {
    case AblationMode::Base: return "base";
    case AblationMode::WithRule: return "with_rule";
    case AblationMode::InstructionTuning: return "instruction_tuning";
    case AblationMode::CotSft: return "cot_sft";
    case AblationMode::CotDpo: return "cot_dpo";
  }
  return "unknown";
}

std::optional<AblationMode> parse_mode(std::string_view s) {
  for (AblationMode m : kAllModes) {
    if (to_string(m) == s) return m;
  }
  return std::nullopt;
}

std::string_view display_name(AblationMode m) {
  switch (m) {
    case AblationMode::Base: return "Base";
    case AblationMode::WithRule: return "w. Rule";
    case AblationMode::InstructionTuning: return "Instruction Tuning";
    case AblationMode::CotSft: return "CoT SFT";
    case AblationMode::CotDpo: return "CoT DPO";
  }
  return "unknown";
}

PromptMode prompt_mode(AblationMode m) { return m == AblationMode::Base ? PromptMode::Bare : PromptMode::WithSpec; }

AblationMode checkpoint_mode(AblationMode m) { return m == AblationMode::WithRule ? AblationMode::Base : m; }

Prediction predict(const LmParams& params, const SpecDocument& spec, const Vocab& vocab, std::string_view x,
                   AblationMode mode, std::size_t max_new, bool lenient) {
  BiasSample s;
  s.x = std::string(x);
  return predict_all(params, spec, vocab, {s}, mode, max_new, lenient).front();
}

std::vector<Prediction> predict_all(const LmParams& params, const SpecDocument& spec, const Vocab& vocab,
                                    const std::vector<BiasSample>& samples, AblationMode mode, std::size_t max_new,
                                    bool lenient) {
  const std::size_t ctx = params.config().context_len;
  std::vector<TokenSeq> prompts;
  prompts.reserve(samples.size());
  for (const auto& s : samples) prompts.push_back(encode_prompt(spec, s.x, prompt_mode(mode), vocab, ctx, lenient));
  const PrefixDecoder decoder(params, common_prompt_prefix(prompts));
  Rng unused(0);
  std::vector<Prediction> out;
  out.reserve(samples.size());
  for (const auto& p : prompts) {
    SamplingOptions o;
    o.greedy = true;
    o.max_new = effective_max_new(max_new, p.size(), ctx);
    o.eos = vocab.eos();
    out.push_back(parse_completion(decoder.sample(p, o, 1, unused).front(), vocab).verdict);
  }
  return out;
}

Metrics compute_metrics(const std::vector<Prediction>& preds, const std::vector<Verdict>& truths,
                        OfDenominator denominator) {
  if (preds.size() != truths.size()) {
    throw Error(ErrorCode::LengthMismatch, std::to_string(preds.size()) + " predictions for " +
                                               std::to_string(truths.size()) + " labels");
  }
  if (preds.empty()) throw Error(ErrorCode::EmptyEval, "nothing to evaluate");
  Metrics m;
  auto& c = m.confusion;
  std::size_t unbiased = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const bool pos_truth = truths[i] == Verdict::Biased;
    if (!pos_truth) ++unbiased;
    if (!preds[i]) {
      ++c.parse_failures;
      ++c.fn;
    } else if (*preds[i] == Verdict::Biased) {
      ++(pos_truth ? c.tp : c.fp);
    } else {
      ++(pos_truth ? c.fn : c.tn);
    }
  }
  const double n = static_cast<double>(c.total());
  m.accuracy = static_cast<double>(c.tp + c.tn) / n;
  const double of_denom = denominator == OfDenominator::All ? n : static_cast<double>(unbiased);
  m.over_fairness = of_denom > 0.0 ? static_cast<double>(c.fp) / of_denom : 0.0;
  return m;
}

const EvalRow& EvalReport::row(const std::string& dataset, AblationMode mode) const {
  for (const auto& r : rows) {
    if (r.dataset == dataset && r.mode == mode) return r;
  }
  throw Error(ErrorCode::EmptyEval, "no row for " + dataset + " / " + std::string(to_string(mode)));
}

double median(std::vector<double> values) {
  if (values.empty()) throw Error(ErrorCode::EmptyEval, "median of nothing");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

EvalReport run_ablation(const std::map<std::uint64_t, ModelSet>& models, const std::vector<Dataset>& datasets,
                        const SpecDocument& spec, const Vocab& vocab, const AblationOptions& options) {
  if (models.empty() || datasets.empty() || options.modes.empty()) {
    throw Error(ErrorCode::EmptyEval, "ablation needs seeds, datasets and modes");
  }
  for (const auto& [seed, set] : models) {
    for (AblationMode m : options.modes) {
      if (!set.count(checkpoint_mode(m))) {
        throw Error(ErrorCode::MissingCheckpoint, std::string(to_string(checkpoint_mode(m))) + " checkpoint for seed " +
                                                      std::to_string(seed));
      }
    }
  }
  EvalReport report;
  report.config_hash = options.config_hash;
  report.modes = options.modes;
  for (const auto& [seed, set] : models) report.seeds.push_back(seed);
  for (const auto& d : datasets) {
    report.datasets.push_back(d.name);
    std::vector<Verdict> truths;
    for (const auto& s : d.samples) truths.push_back(s.y_star);
    for (AblationMode m : options.modes) {
      EvalRow row{d.name, m, 0.0, 0.0, {}};
      std::vector<double> acc;
      std::vector<double> of;
      for (const auto& [seed, set] : models) {
        const auto preds = predict_all(set.at(checkpoint_mode(m)), spec, vocab, d.samples, m, options.max_new, d.lenient);
        EvalCell cell{d.name, m, seed, compute_metrics(preds, truths, options.denominator), preds};
        acc.push_back(cell.metrics.accuracy);
        of.push_back(cell.metrics.over_fairness);
        row.cells.push_back(std::move(cell));
      }
      row.accuracy = median(acc);
      row.over_fairness = median(of);
      report.rows.push_back(std::move(row));
    }
  }
  return report;
}

std::string format_cell(double accuracy, double over_fairness) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f / %.2f", 100.0 * accuracy, 100.0 * over_fairness);
  return buf;
}

std::string report_to_jsonl(const EvalReport& report) {
  std::string out;
  for (const auto& r : report.rows) {
    nlohmann::ordered_json j;
    j["dataset"] = r.dataset;
    j["mode"] = to_string(r.mode);
    j["accuracy"] = r.accuracy;
    j["over_fairness"] = r.over_fairness;
    j["table_cell"] = format_cell(r.accuracy, r.over_fairness);
    nlohmann::ordered_json cells = nlohmann::ordered_json::array();
    for (const auto& c : r.cells) {
      const auto& k = c.metrics.confusion;
      cells.push_back({{"seed", c.seed},
                       {"tp", k.tp},
                       {"tn", k.tn},
                       {"fp", k.fp},
                       {"fn", k.fn},
                       {"parse_failures", k.parse_failures},
                       {"accuracy", c.metrics.accuracy},
                       {"over_fairness", c.metrics.over_fairness}});
    }
    j["seeds"] = cells;
    j["config_hash"] = report.config_hash;
    out += j.dump();
    out.push_back('\n');
  }
  return out;
}

EvalReport report_from_jsonl(const std::string& text) {
  EvalReport report;
  std::istringstream in(text);
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      EvalRow r;
      r.dataset = j.at("dataset").get<std::string>();
      const auto mode = parse_mode(j.at("mode").get<std::string>());
      if (!mode) throw std::invalid_argument("unknown mode");
      r.mode = *mode;
      r.accuracy = j.at("accuracy").get<double>();
      r.over_fairness = j.at("over_fairness").get<double>();
      for (const auto& c : j.at("seeds")) {
        EvalCell cell{r.dataset, r.mode, c.at("seed").get<std::uint64_t>(), {}, {}};
        auto& k = cell.metrics.confusion;
        k.tp = c.at("tp").get<std::size_t>();
        k.tn = c.at("tn").get<std::size_t>();
        k.fp = c.at("fp").get<std::size_t>();
        k.fn = c.at("fn").get<std::size_t>();
        k.parse_failures = c.at("parse_failures").get<std::size_t>();
        cell.metrics.accuracy = c.at("accuracy").get<double>();
        cell.metrics.over_fairness = c.at("over_fairness").get<double>();
        if (report.rows.empty()) report.seeds.push_back(cell.seed);
        r.cells.push_back(cell);
      }
      report.config_hash = j.at("config_hash").get<std::string>();
      if (std::find(report.datasets.begin(), report.datasets.end(), r.dataset) == report.datasets.end()) {
        report.datasets.push_back(r.dataset);
      }
      if (std::find(report.modes.begin(), report.modes.end(), r.mode) == report.modes.end()) {
        report.modes.push_back(r.mode);
      }
      report.rows.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw Error(ErrorCode::SchemaError, std::string("report record: ") + e.what(), line_no);
    }
  }
  return report;
}

namespace {

std::string pad(std::string_view s, std::size_t width) {
  std::string out(s);
  if (out.size() < width) out.append(width - out.size(), ' ');
  return out;
}

}  // namespace

std::string render_table(const EvalReport& report) {
  std::size_t first = 4;
  for (AblationMode m : report.modes) first = std::max(first, display_name(m).size());
  std::vector<std::size_t> widths;
  for (const auto& d : report.datasets) widths.push_back(std::max<std::size_t>(d.size(), 15));

  std::ostringstream out;
  out << pad("Mode", first);
  for (std::size_t i = 0; i < widths.size(); ++i) out << " | " << pad(report.datasets[i], widths[i]);
  out << "\n" << pad("", first);
  for (std::size_t w : widths) out << " | " << pad("Acc / OF", w);
  out << "\n" << std::string(first, '-');
  for (std::size_t w : widths) out << "-+-" << std::string(w, '-');
  out << "\n";
  for (AblationMode m : report.modes) {
    out << pad(display_name(m), first);
    for (std::size_t i = 0; i < widths.size(); ++i) {
      const auto& r = report.row(report.datasets[i], m);
      out << " | " << pad(format_cell(r.accuracy, r.over_fairness), widths[i]);
    }
    out << "\n";
  }
  return out.str();
}

}  // namespace fairjudge
