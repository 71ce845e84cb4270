// SPDX-License-Identifier: Apache-2.0
#include "fairjudge/fairspec.hpp"

#include <algorithm>
#include <cctype>
#include <json.hpp>
#include <set>
#include <sstream>

#include "fairjudge/error.hpp"
#include "fairjudge/io.hpp"

namespace fairjudge {

std::string_view to_string(Verdict v) { return v == Verdict::Biased ? "biased" : "unbiased"; }

std::optional<Verdict> parse_verdict(std::string_view label) {
  std::string lower(label);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "biased") return Verdict::Biased;
  if (lower == "unbiased") return Verdict::Unbiased;
  return std::nullopt;
}

void SpecDocument::validate() const {
  if (standards.empty()) throw Error(ErrorCode::SpecInvalid, "no standards");
  for (std::size_t i = 1; i < standards.size(); ++i) {
    if (standards[i].id == standards[i - 1].id) {
      throw Error(ErrorCode::DuplicateStandard, "standard id " + std::to_string(standards[i].id));
    }
    if (standards[i].id < standards[i - 1].id) {
      throw Error(ErrorCode::SpecInvalid, "standard ids out of order at " + std::to_string(standards[i].id));
    }
  }
}

std::string SpecDocument::render_standards() const {
  std::string out;
  for (std::size_t i = 0; i < standards.size(); ++i) {
    const auto& s = standards[i];
    if (i > 0) out += "\n";
    out += "standard " + std::to_string(s.id) + " " + s.title + " : " + s.rule_text;
  }
  return out;
}

int SpecDocument::standard_id(std::size_t role) const {
  validate();
  return standards[std::min(role, standards.size() - 1)].id;
}

SpecDocument default_spec() {
  SpecDocument s;
  s.preamble = "judge whether the text is biased .";
  s.standards = {
      {1, "structure", "find the claim in the text ."},
      {2, "attitude", "does the speaker endorse or reject it ."},
      {3, "quotation", "rejecting a negative claim is fair ."},
      {4, "generalization", "endorsing a negative claim about a group is bias ."},
      {5, "denial", "endorsing a denial of a stereotype is fair ."},
      {6, "description", "neutral or positive text is fair ."},
      {7, "judgment", "answer biased only under standard 4 ."},
  };
  s.answer_format_instruction = "reason in steps then answer .";
  return s;
}

SpecDocument parse_spec(const std::string& text) {
  SpecDocument spec;
  std::set<int> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::SpecInvalid, "line " + std::to_string(line_no) + ": " + e.what(), line_no);
    }
    try {
      if (rec.contains("preamble")) {
        spec.preamble = rec.at("preamble").get<std::string>();
      } else if (rec.contains("answer_format_instruction")) {
        spec.answer_format_instruction = rec.at("answer_format_instruction").get<std::string>();
      } else {
        Standard s{rec.at("id").get<int>(), rec.at("title").get<std::string>(),
                   rec.at("rule_text").get<std::string>()};
        if (!seen.insert(s.id).second) {
          throw Error(ErrorCode::DuplicateStandard,
                      "line " + std::to_string(line_no) + ": id " + std::to_string(s.id), line_no);
        }
        spec.standards.push_back(std::move(s));
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::SpecInvalid, "line " + std::to_string(line_no) + ": " + e.what(), line_no);
    }
  }
  spec.validate();
  return spec;
}

std::string serialize_spec(const SpecDocument& spec) {
  std::string out = nlohmann::json{{"preamble", spec.preamble}}.dump() + "\n";
  for (const auto& s : spec.standards) {
    out += nlohmann::json{{"id", s.id}, {"title", s.title}, {"rule_text", s.rule_text}}.dump() + "\n";
  }
  out += nlohmann::json{{"answer_format_instruction", spec.answer_format_instruction}}.dump() + "\n";
  return out;
}

SpecDocument load_spec(const std::filesystem::path& path) { return parse_spec(read_file(path)); }

std::string assemble_prompt(const SpecDocument& spec, std::string_view x, PromptMode mode) {
  if (x.empty()) throw Error(ErrorCode::EmptyPrompt, "text to judge is empty");
  std::string out = spec.preamble;
  if (mode == PromptMode::WithSpec) {
    spec.validate();
    out += "\n" + spec.render_standards();
  }
  out += "\ntext : ";
  out += x;
  out += "\n" + spec.answer_format_instruction + "\n";
  out += kStepCue;
  return out;
}

TokenSeq encode_prompt(const SpecDocument& spec, std::string_view x, PromptMode mode,
                       const Vocab& vocab, std::size_t context_len, bool lenient) {
  const std::string text = assemble_prompt(spec, x, mode);
  TokenSeq body = lenient ? encode_lenient(text, vocab) : encode(text, vocab);
  TokenSeq seq;
  seq.ids.reserve(body.size() + 1);
  seq.ids.push_back(vocab.bos());
  seq.ids.insert(seq.ids.end(), body.ids.begin(), body.ids.end());
  seq.boundary = seq.ids.size();
  if (seq.size() + kMinCompletionBudget > context_len) {
    throw Error(ErrorCode::PromptTooLong, "prompt of " + std::to_string(seq.size()) +
                                              " tokens leaves less than " +
                                              std::to_string(kMinCompletionBudget) +
                                              " of context " + std::to_string(context_len));
  }
  return seq;
}

void check_spec_fits(const SpecDocument& spec, const Vocab& vocab, std::string_view longest_x,
                     std::size_t context_len) {
  spec.validate();
  encode_prompt(spec, longest_x, PromptMode::WithSpec, vocab, context_len);
}

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string step_marker(std::size_t i) { return "Step " + std::to_string(i) + "."; }

bool contains_step_marker(std::string_view s) {
  for (std::size_t pos = s.find("Step "); pos != std::string_view::npos; pos = s.find("Step ", pos + 1)) {
    std::size_t j = pos + 5;
    const std::size_t digits_start = j;
    while (j < s.size() && std::isdigit(static_cast<unsigned char>(s[j]))) ++j;
    if (j > digits_start && j < s.size() && s[j] == '.') return true;
  }
  return false;
}

}  // namespace

ReasoningTrace parse_trace(std::string_view raw) {
  ReasoningTrace trace;
  trace.raw_text = std::string(raw);

  std::size_t count = 0;
  std::size_t first = std::string_view::npos;
  for (std::size_t pos = raw.find(kFinalAnswerMarker); pos != std::string_view::npos;
       pos = raw.find(kFinalAnswerMarker, pos + 1)) {
    if (count == 0) first = pos;
    ++count;
  }
  if (count == 1) {
    const std::size_t start = first + kFinalAnswerMarker.size();
    const std::size_t eol = raw.find('\n', start);
    trace.verdict = parse_verdict(trim(raw.substr(start, eol == std::string_view::npos ? eol : eol - start)));
  }

  const std::string_view region = raw.substr(0, first);
  std::size_t index = 1;
  std::size_t pos = region.find(step_marker(index));
  while (pos != std::string_view::npos) {
    const std::size_t content = pos + step_marker(index).size();
    const std::size_t next = region.find(step_marker(index + 1), content);
    std::string step = trim(region.substr(content, next == std::string_view::npos ? next : next - content));
    if (!step.empty()) trace.steps.push_back(std::move(step));
    ++index;
    pos = next;
  }
  return trace;
}

std::string render_trace(const std::vector<std::string>& steps, Verdict verdict) {
  std::string out;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const std::string& s = steps[i];
    if (contains_step_marker(s) || s.find(kFinalAnswerMarker) != std::string::npos) {
      throw Error(ErrorCode::StepContainsMarker, "step " + std::to_string(i + 1) + ": '" + s + "'");
    }
    if (s.empty() || s.find('\n') != std::string::npos || trim(s) != s) {
      throw Error(ErrorCode::MalformedStep, "step " + std::to_string(i + 1) + ": '" + s + "'");
    }
    out += step_marker(i + 1) + " " + s + "\n";
  }
  out += kFinalAnswerMarker;
  out += " ";
  out += to_string(verdict);
  return out;
}

std::string strip_cue(const std::string& rendered_trace) {
  const std::string prefix = std::string(kStepCue) + " ";
  if (rendered_trace.rfind(prefix, 0) == 0) return rendered_trace.substr(prefix.size());
  return rendered_trace;
}

std::string with_cue(const std::string& completion_text) {
  if (completion_text.empty() || completion_text.front() == '\n') {
    return std::string(kStepCue) + completion_text;
  }
  return std::string(kStepCue) + " " + completion_text;
}

TokenSeq append_trace(const TokenSeq& prompt, const std::string& rendered_trace, const Vocab& vocab,
                      std::size_t context_len) {
  const TokenSeq body = encode(strip_cue(rendered_trace), vocab);
  TokenSeq seq;
  seq.ids.reserve(prompt.boundary + body.size() + 1);
  seq.ids.assign(prompt.ids.begin(), prompt.ids.begin() + static_cast<std::ptrdiff_t>(prompt.boundary));
  seq.boundary = prompt.boundary;
  seq.ids.insert(seq.ids.end(), body.ids.begin(), body.ids.end());
  seq.ids.push_back(vocab.eos());
  seq.validate(context_len);
  return seq;
}

ReasoningTrace parse_completion(const TokenSeq& seq, const Vocab& vocab) {
  auto ids = seq.completion();
  if (!ids.empty() && ids.back() == vocab.eos()) ids = ids.first(ids.size() - 1);
  return parse_trace(with_cue(decode(ids, vocab)));
}

}  // namespace fairjudge
