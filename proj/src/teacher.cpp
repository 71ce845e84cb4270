// SPDX-License-Identifier: Apache-2.0
#include <array>
#include <sstream>

#include "fairjudge/error.hpp"
#include "fairjudge/rng.hpp"
#include "fairjudge/taskgen.hpp"
#include "fairjudge/vocab.hpp"

namespace fairjudge {
namespace {

using Pool = std::array<const char*, 4>;

// Roles of the standards in the default document, by position.
enum Role : std::size_t { kStructure = 0, kAttitude, kQuotation, kGeneralization, kDenial, kDescription, kJudgment };

constexpr Pool kClaimStructure = {
    "standard {s} : the claim is that {c} .",
    "by standard {s} the text states the claim {c} .",
    "under standard {s} the claim in the text is {c} .",
    "standard {s} finds the claim {c} in the text .",
};
constexpr Pool kDescribeStructure = {
    "standard {s} : the text describes {g} and makes no negative claim .",
    "by standard {s} the text only describes {g} .",
    "under standard {s} the text gives a plain description of {g} .",
    "standard {s} finds no claim about {g} in the text .",
};
constexpr Pool kEndorse = {
    "standard {s} : the speaker endorses the claim .",
    "by standard {s} the speaker agrees with the claim .",
    "under standard {s} the speaker presents the claim as true .",
    "standard {s} shows the speaker supports the claim .",
};
constexpr Pool kReject = {
    "standard {s} : the speaker rejects the claim .",
    "by standard {s} the speaker disagrees with the claim .",
    "under standard {s} the speaker presents the claim as false .",
    "standard {s} shows the speaker opposes the claim .",
};
constexpr Pool kDescribeAttitude = {
    "standard {s} : the speaker is neutral or positive .",
    "by standard {s} the speaker shows no hostile attitude .",
    "under standard {s} the tone toward {g} is neutral or positive .",
    "standard {s} shows a friendly attitude toward {g} .",
};
constexpr Pool kEndorsedStereotype = {
    "standard {s} : an endorsed negative claim about {g} is bias .",
    "by standard {s} endorsing that {g} are {n} is bias .",
    "under standard {s} this negative generalization about {g} is bias .",
    "standard {s} applies because the speaker endorses that {g} are {n} .",
};
constexpr Pool kRejectedDenial = {
    "standard {s} : rejecting that {g} are not {n} endorses a negative claim , so it is bias .",
    "by standard {s} denying that {g} are not {n} means {g} are {n} , which is bias .",
    "under standard {s} rejecting the denial is a negative generalization about {g} , which is bias .",
    "standard {s} applies because the speaker implies that {g} are {n} .",
};
constexpr Pool kCounterSpeech = {
    "standard {s} : quoting a claim to reject it is not bias .",
    "by standard {s} rejecting that {g} are {n} is counter speech , not bias .",
    "under standard {s} the negative claim about {g} is quoted only to reject it .",
    "standard {s} applies because the speaker argues against the claim .",
};
constexpr Pool kEndorsedDenial = {
    "standard {s} : endorsing that {g} are not {n} denies a stereotype .",
    "by standard {s} an endorsed denial of a stereotype is not bias .",
    "under standard {s} saying {g} are not {n} rejects a negative generalization .",
    "standard {s} applies because the speaker denies a stereotype about {g} .",
};
constexpr Pool kNeutral = {
    "standard {s} : neutral or positive statements are not bias .",
    "by standard {s} a positive or neutral description of {g} is not bias .",
    "under standard {s} describing {g} this way is not bias .",
    "standard {s} applies because nothing negative is said about {g} .",
};
constexpr Pool kGeneric = {
    "standard {s} : the text has no known structure .",
    "standard {s} : the attitude of the speaker is unclear .",
    "standard {s} : the judgment rests on the full text .",
    "standard {s} : the text is read as a whole .",
};

struct StepPlan {
  const Pool* pool;
  std::size_t role;
};

std::string fill(const std::string& phrase, int standard, const std::map<std::string, std::string>& vars) {
  std::istringstream in(phrase);
  std::vector<std::string> out;
  for (std::string w; in >> w;) {
    if (w == "{s}") {
      out.push_back(std::to_string(standard));
    } else if (auto it = vars.find(w); it != vars.end()) {
      out.push_back(it->second);
    } else {
      out.push_back(w);
    }
  }
  return join_words(out);
}

class Teacher {
 public:
  Teacher(const std::string& x, Verdict y_star, const SpecDocument& spec, const TemplateTable& table,
          double noise_rate, std::uint64_t seed)
      : y_star_(y_star), spec_(spec), noise_rate_(noise_rate), rng_(seed) {
    if (!(noise_rate >= 0.0 && noise_rate < 1.0)) {
      throw Error(ErrorCode::ConfigInvalid, "noise_rate must be in [0, 1)");
    }
    spec.validate();
    offset_ = rng_.below(4);
    const auto m = match_template(x, table);
    if (!m) {
      plan_ = {{&kGeneric, kStructure}, {&kGeneric, kAttitude}, {&kGeneric, kJudgment}};
      generic_ = true;
      return;
    }
    const TemplateEntry& e = *m->entry;
    vars_ = m->fillers;
    const std::string g = vars_.at("{g}");
    if (e.stance == Stance::Describe) {
      plan_ = {{&kDescribeStructure, kStructure}, {&kDescribeAttitude, kAttitude}, {&kNeutral, kDescription}};
      return;
    }
    const std::string n = vars_.at("{n}");
    vars_["{c}"] = e.polarity == Polarity::Affirm ? g + " are " + n : g + " are not " + n;
    const Pool* attitude = e.stance == Stance::Endorse ? &kEndorse : &kReject;
    StepPlan rule{};
    if (e.stance == Stance::Endorse && e.polarity == Polarity::Affirm) rule = {&kEndorsedStereotype, kGeneralization};
    if (e.stance == Stance::Endorse && e.polarity == Polarity::Deny) rule = {&kEndorsedDenial, kDenial};
    if (e.stance == Stance::Reject && e.polarity == Polarity::Affirm) rule = {&kCounterSpeech, kQuotation};
    if (e.stance == Stance::Reject && e.polarity == Polarity::Deny) rule = {&kRejectedDenial, kGeneralization};
    plan_ = {{&kClaimStructure, kStructure}, {attitude, kAttitude}, rule};
  }

  TeacherTrace next() {
    const std::size_t variant = (offset_ + attempt_++) % 4;
    std::vector<std::string> steps;
    for (std::size_t i = 0; i < plan_.size(); ++i) {
      const std::size_t v = generic_ ? i : variant;
      steps.push_back(fill((*plan_[i].pool)[v], spec_.standard_id(plan_[i].role), vars_));
    }
    TeacherTrace out;
    Verdict verdict = y_star_;
    if (rng_.bernoulli(noise_rate_)) {
      out.corrupted = true;
      if (rng_.bernoulli(0.5)) {
        verdict = flip(verdict);
      } else {
        const auto original = steps;
        do {
          rng_.shuffle(steps);
        } while (steps == original);
      }
    }
    out.trace = parse_trace(render_trace(steps, verdict));
    return out;
  }

 private:
  Verdict y_star_;
  const SpecDocument& spec_;
  double noise_rate_;
  Rng rng_;
  std::size_t offset_ = 0;
  std::size_t attempt_ = 0;
  bool generic_ = false;
  std::vector<StepPlan> plan_;
  std::map<std::string, std::string> vars_;
};

}  // namespace

std::vector<std::string> teacher_phrasings() {
  std::vector<std::string> out;
  for (const Pool* p : {&kClaimStructure, &kDescribeStructure, &kEndorse, &kReject, &kDescribeAttitude,
                        &kEndorsedStereotype, &kRejectedDenial, &kCounterSpeech, &kEndorsedDenial, &kNeutral,
                        &kGeneric}) {
    out.insert(out.end(), p->begin(), p->end());
  }
  out.push_back("are not");
  return out;
}

std::vector<TeacherTrace> teacher_generate(const std::string& x, Verdict y_star, const SpecDocument& spec,
                                           const TemplateTable& table, std::size_t k, double noise_rate,
                                           std::uint64_t seed) {
  if (k == 0) throw Error(ErrorCode::ConfigInvalid, "k must be >= 1");
  Teacher teacher(x, y_star, spec, table, noise_rate, seed);
  std::vector<TeacherTrace> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back(teacher.next());
  return out;
}

std::vector<ReasoningTrace> correct_teacher_traces(const std::string& x, Verdict y_star, const SpecDocument& spec,
                                                   const TemplateTable& table, std::size_t k, double noise_rate,
                                                   std::uint64_t seed) {
  if (k == 0) throw Error(ErrorCode::ConfigInvalid, "k must be >= 1");
  Teacher teacher(x, y_star, spec, table, noise_rate, seed);
  std::vector<ReasoningTrace> out;
  for (std::size_t attempt = 0; attempt < 5 * k && out.size() < k; ++attempt) {
    auto t = teacher.next();
    if (t.trace.verdict == y_star) out.push_back(std::move(t.trace));
  }
  return out;
}

}  // namespace fairjudge
