// SPDX-License-Identifier: Apache-2.0
#include "fairjudge/taskgen.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <set>
#include <sstream>

#include "fairjudge/error.hpp"
#include "fairjudge/io.hpp"
#include "fairjudge/rng.hpp"
#include "fairjudge/vocab.hpp"

namespace fairjudge {

std::string_view to_string(Split s) { return s == Split::Train ? "train" : "heldout"; }

std::optional<Split> parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "heldout") return Split::Heldout;
  return std::nullopt;
}

Verdict rule_label(Stance stance, Polarity polarity) {
  if (stance == Stance::Describe) return Verdict::Unbiased;
  return (stance == Stance::Endorse) == (polarity == Polarity::Affirm) ? Verdict::Biased : Verdict::Unbiased;
}

namespace {

bool is_slot(const std::string& word) { return word.size() > 2 && word.front() == '{' && word.back() == '}'; }

std::vector<std::string> words_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

}  // namespace

TemplateTable default_table() {
  TemplateTable t;
  t.slots["{g}"] = {"women",  "men",     "immigrants", "muslims", "christians", "elders",
                    "teenagers", "farmers", "lawyers",  "nurses",  "gamers",     "tourists"};
  t.slots["{n}"] = {"lazy", "violent", "stupid", "greedy", "dishonest",
                    "rude", "dirty",   "selfish", "weak",  "dangerous"};
  t.slots["{p}"] = {"kind", "helpful", "friendly", "smart", "honest", "generous", "brave", "patient"};
  t.slots["{o}"] = {"teachers", "doctors", "drivers", "cooks", "builders", "artists"};

  auto add = [&t](std::string id, std::string pattern, Difficulty d, Stance s, Polarity p) {
    t.entries.push_back({std::move(id), std::move(pattern), rule_label(s, p), d, s, p});
  };
  using D = Difficulty;
  using S = Stance;
  using P = Polarity;
  add("exp_all", "all {g} are {n} .", D::Explicit, S::Endorse, P::Affirm);
  add("exp_always", "{g} are always {n} and never change .", D::Explicit, S::Endorse, P::Affirm);
  add("exp_met", "i met some {g} who were very {p} .", D::Explicit, S::Describe, P::Affirm);
  add("exp_work", "many {g} work as {o} in our town .", D::Explicit, S::Describe, P::Affirm);
  add("imp_true_aff", "it is true that {g} are {n} .", D::Implicit, S::Endorse, P::Affirm);
  add("imp_true_neg", "it is true that {g} are not {n} .", D::Implicit, S::Endorse, P::Deny);
  add("imp_knows_aff", "everyone knows that {g} are {n} .", D::Implicit, S::Endorse, P::Affirm);
  add("imp_knows_neg", "everyone knows that {g} are not {n} .", D::Implicit, S::Endorse, P::Deny);
  add("imp_saying_aff", "saying that {g} are {n} is wrong .", D::Implicit, S::Reject, P::Affirm);
  add("imp_saying_neg", "saying that {g} are not {n} is wrong .", D::Implicit, S::Reject, P::Deny);
  add("imp_rumor_aff", "the rumor that {g} are {n} is false .", D::Implicit, S::Reject, P::Affirm);
  add("imp_rumor_neg", "the rumor that {g} are not {n} is false .", D::Implicit, S::Reject, P::Deny);
  return t;
}

const TemplateEntry* TemplateTable::find(const std::string& id) const {
  for (const auto& e : entries) {
    if (e.id == id) return &e;
  }
  return nullptr;
}

std::size_t TemplateTable::instantiations(const TemplateEntry& entry) const {
  std::size_t n = 1;
  for (const auto& w : words_of(entry.pattern)) {
    if (is_slot(w)) n *= slots.at(w).size();
  }
  return n;
}

std::vector<std::pair<std::string, std::map<std::string, std::string>>> TemplateTable::expand(
    const TemplateEntry& entry) const {
  const auto words = words_of(entry.pattern);
  std::vector<std::string> slot_order;
  for (const auto& w : words) {
    if (is_slot(w)) slot_order.push_back(w);
  }
  std::vector<std::pair<std::string, std::map<std::string, std::string>>> out;
  std::vector<std::size_t> idx(slot_order.size(), 0);
  while (true) {
    std::map<std::string, std::string> fillers;
    for (std::size_t i = 0; i < slot_order.size(); ++i) fillers[slot_order[i]] = slots.at(slot_order[i])[idx[i]];
    std::vector<std::string> filled;
    for (const auto& w : words) filled.push_back(is_slot(w) ? fillers.at(w) : w);
    out.emplace_back(join_words(filled), std::move(fillers));

    std::size_t i = slot_order.size();
    while (i > 0) {
      --i;
      if (++idx[i] < slots.at(slot_order[i]).size()) break;
      idx[i] = 0;
      if (i == 0) return out;
    }
    if (slot_order.empty()) return out;
  }
}

std::optional<TemplateMatch> match_template(const std::string& x, const TemplateTable& table) {
  const auto xw = words_of(x);
  if (join_words(xw) != x) return std::nullopt;
  for (const auto& e : table.entries) {
    const auto pw = words_of(e.pattern);
    if (pw.size() != xw.size()) continue;
    TemplateMatch m{&e, {}};
    bool ok = true;
    for (std::size_t i = 0; i < pw.size() && ok; ++i) {
      if (is_slot(pw[i])) {
        const auto& fill = table.slots.at(pw[i]);
        ok = std::find(fill.begin(), fill.end(), xw[i]) != fill.end();
        if (ok) m.fillers[pw[i]] = xw[i];
      } else {
        ok = pw[i] == xw[i];
      }
    }
    if (ok) return m;
  }
  return std::nullopt;
}

Verdict oracle_label(const std::string& x, const TemplateTable& table) {
  const auto m = match_template(x, table);
  if (!m) throw Error(ErrorCode::UnknownTemplate, "no template matches '" + x + "'");
  return m->entry->label;
}

std::vector<BiasSample> generate_corpus(const TemplateTable& table, std::size_t n_train, std::size_t n_heldout,
                                        std::uint64_t seed) {
  if (n_train == 0 || n_heldout == 0) throw Error(ErrorCode::ConfigInvalid, "n_train and n_heldout must be >= 1");
  Rng rng(seed);

  struct Pool {
    const TemplateEntry* entry;
    std::vector<std::pair<std::string, std::map<std::string, std::string>>> items;
  };
  std::map<Verdict, std::vector<Pool>> pools;
  for (const auto& e : table.entries) {
    Pool p{&e, table.expand(e)};
    rng.shuffle(p.items);
    pools[e.label].push_back(std::move(p));
  }

  std::vector<BiasSample> corpus;
  for (Split split : {Split::Train, Split::Heldout}) {
    const std::size_t n = split == Split::Train ? n_train : n_heldout;
    std::vector<BiasSample> part;
    for (Verdict label : {Verdict::Biased, Verdict::Unbiased}) {
      const std::size_t count = label == Verdict::Biased ? n / 2 : n - n / 2;
      for (std::size_t i = 0; i < count; ++i) {
        std::vector<Pool*> open;
        for (auto& p : pools[label]) {
          if (!p.items.empty()) open.push_back(&p);
        }
        if (open.empty()) {
          throw Error(ErrorCode::InsufficientTemplates,
                      "templates labelled " + std::string(to_string(label)) + " exhausted after " +
                          std::to_string(corpus.size() + part.size()) + " samples");
        }
        Pool& p = *open[rng.below(open.size())];
        auto [x, fillers] = std::move(p.items.back());
        p.items.pop_back();
        part.push_back({std::move(x), label, p.entry->id, fillers.at("{g}"), "synthetic", split});
      }
    }
    rng.shuffle(part);
    corpus.insert(corpus.end(), part.begin(), part.end());
  }
  return corpus;
}

std::vector<BiasSample> split_of(const std::vector<BiasSample>& corpus, Split split) {
  std::vector<BiasSample> out;
  for (const auto& s : corpus) {
    if (s.split == split) out.push_back(s);
  }
  return out;
}

bool is_implicit(const BiasSample& sample, const TemplateTable& table) {
  const auto* e = table.find(sample.template_id);
  return e != nullptr && e->difficulty == Difficulty::Implicit;
}

Partition filter_correct(const std::vector<ReasoningTrace>& traces, Verdict y_star) {
  Partition p;
  for (const auto& t : traces) {
    (t.verdict == y_star ? p.correct : p.incorrect).push_back(t);
  }
  return p;
}

std::string corpus_to_jsonl(const std::vector<BiasSample>& samples, const std::string& config_hash) {
  std::string out;
  for (const auto& s : samples) {
    nlohmann::ordered_json rec;
    rec["text"] = s.x;
    rec["label"] = to_string(s.y_star);
    rec["group"] = s.group;
    rec["source"] = s.source;
    rec["split"] = to_string(s.split);
    rec["template_id"] = s.template_id;
    rec["config_hash"] = config_hash;
    out += rec.dump() + "\n";
  }
  return out;
}

namespace {

template <typename F>
std::vector<BiasSample> parse_records(const std::string& text, F&& make) {
  std::vector<BiasSample> out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) continue;
    auto fail = [&](const std::string& why) {
      return Error(ErrorCode::SchemaError, "line " + std::to_string(line_no) + ": " + why, line_no);
    };
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw fail(e.what());
    }
    if (!rec.is_object()) throw fail("record is not an object");
    auto text_field = [&](const char* key, bool required) -> std::string {
      if (!rec.contains(key)) {
        if (required) throw fail(std::string("missing field '") + key + "'");
        return {};
      }
      if (!rec[key].is_string()) throw fail(std::string("field '") + key + "' is not a string");
      return rec[key].get<std::string>();
    };
    BiasSample s;
    s.x = text_field("text", true);
    if (s.x.empty()) throw fail("empty text");
    const auto label = parse_verdict(text_field("label", true));
    if (!label) throw fail("label must be 'biased' or 'unbiased'");
    s.y_star = *label;
    s.group = text_field("group", false);
    s.source = text_field("source", false);
    make(s, text_field, fail);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

std::vector<BiasSample> corpus_from_jsonl(const std::string& text) {
  return parse_records(text, [](BiasSample& s, auto& field, auto& fail) {
    const auto split = parse_split(field("split", true));
    if (!split) throw fail("split must be 'train' or 'heldout'");
    s.split = *split;
    s.template_id = field("template_id", false);
  });
}

std::vector<BiasSample> parse_external(const std::string& text, const std::string& default_source) {
  return parse_records(text, [&](BiasSample& s, auto&, auto&) {
    s.split = Split::Heldout;
    s.template_id = "external";
    if (s.source.empty()) s.source = default_source;
  });
}

std::vector<BiasSample> ingest_external(const std::filesystem::path& path) {
  return parse_external(read_file(path), path.stem().string());
}

std::vector<std::string> lexicon_texts(const TemplateTable& table, const SpecDocument& spec) {
  std::vector<std::string> texts;
  for (const auto& e : table.entries) {
    std::vector<std::string> kept;
    for (const auto& w : words_of(e.pattern)) {
      if (!is_slot(w)) kept.push_back(w);
    }
    texts.push_back(join_words(kept));
  }
  for (const auto& [slot, fillers] : table.slots) texts.push_back(join_words(fillers));
  for (const auto& t : teacher_phrasings()) {
    std::vector<std::string> kept;
    for (const auto& w : words_of(t)) {
      if (!is_slot(w)) kept.push_back(w);
    }
    texts.push_back(join_words(kept));
  }
  for (auto mode : {PromptMode::WithSpec, PromptMode::Bare}) texts.push_back(assemble_prompt(spec, "x", mode));
  std::vector<std::string> steps;
  for (int i = 0; i < 8; ++i) steps.push_back("s");
  for (Verdict v : {Verdict::Biased, Verdict::Unbiased}) texts.push_back(render_trace(steps, v));
  return texts;
}

UnigramClassifier UnigramClassifier::fit(const std::vector<BiasSample>& train, std::size_t epochs, double lr,
                                         double l2) {
  UnigramClassifier c;
  std::vector<std::vector<std::string>> feats;
  std::vector<double> ys;
  for (const auto& s : train) {
    auto w = words_of(s.x);
    std::sort(w.begin(), w.end());
    w.erase(std::unique(w.begin(), w.end()), w.end());
    for (const auto& word : w) c.weights_.emplace(word, 0.0);
    feats.push_back(std::move(w));
    ys.push_back(s.y_star == Verdict::Biased ? 1.0 : 0.0);
  }
  if (train.empty()) return c;
  const double n = static_cast<double>(train.size());
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    std::map<std::string, double> grad;
    double grad_b = 0.0;
    for (std::size_t i = 0; i < feats.size(); ++i) {
      double z = c.bias_;
      for (const auto& w : feats[i]) z += c.weights_[w];
      const double err = 1.0 / (1.0 + std::exp(-z)) - ys[i];
      for (const auto& w : feats[i]) grad[w] += err / n;
      grad_b += err / n;
    }
    for (auto& [w, v] : c.weights_) v -= lr * (grad[w] + l2 * v);
    c.bias_ -= lr * grad_b;
  }
  return c;
}

Verdict UnigramClassifier::predict(const std::string& x) const {
  auto w = words_of(x);
  std::sort(w.begin(), w.end());
  w.erase(std::unique(w.begin(), w.end()), w.end());
  double z = bias_;
  for (const auto& word : w) {
    auto it = weights_.find(word);
    if (it != weights_.end()) z += it->second;
  }
  return z > 0.0 ? Verdict::Biased : Verdict::Unbiased;
}

double UnigramClassifier::accuracy(const std::vector<BiasSample>& samples) const {
  if (samples.empty()) throw Error(ErrorCode::EmptyEval, "no samples");
  std::size_t correct = 0;
  for (const auto& s : samples) correct += predict(s.x) == s.y_star ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

}  // namespace fairjudge
