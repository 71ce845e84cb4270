// SPDX-License-Identifier: Apache-2.0
#include "fairjudge/vocab.hpp"

#include <algorithm>
#include <set>

#include "fairjudge/error.hpp"

namespace fairjudge {

void TokenSeq::validate(std::size_t context_len) const {
  if (boundary > ids.size()) {
    throw Error(ErrorCode::ShapeMismatch, "boundary " + std::to_string(boundary) +
                                              " beyond length " + std::to_string(ids.size()));
  }
  if (ids.size() > context_len) {
    throw Error(ErrorCode::SeqTooLong, "length " + std::to_string(ids.size()) +
                                           " exceeds context " + std::to_string(context_len));
  }
}

namespace {

std::vector<std::string> special_tokens() {
  return {std::string(kPadToken), std::string(kBosToken), std::string(kEosToken),
          std::string(kUnkToken)};
}

std::vector<std::string> split_loose(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (c == ' ' || c == '\n') {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
      if (c == '\n') out.emplace_back(kNewlineToken);
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

}  // namespace

Vocab::Vocab() : tokens_(special_tokens()) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], static_cast<int>(i));
}

Vocab Vocab::build(const std::vector<std::string>& texts) {
  std::set<std::string> content;
  const auto specials = special_tokens();
  for (const auto& text : texts) {
    for (auto& w : split_loose(text)) {
      if (std::find(specials.begin(), specials.end(), w) == specials.end()) {
        content.insert(std::move(w));
      }
    }
  }
  std::vector<std::string> tokens = specials;
  tokens.insert(tokens.end(), content.begin(), content.end());
  return from_tokens(std::move(tokens));
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  const auto specials = special_tokens();
  if (tokens.size() < specials.size() ||
      !std::equal(specials.begin(), specials.end(), tokens.begin())) {
    throw Error(ErrorCode::SchemaError, "vocabulary must start with the special markers");
  }
  Vocab v;
  v.tokens_ = std::move(tokens);
  v.index_.clear();
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
    if (v.tokens_[i].empty()) throw Error(ErrorCode::SchemaError, "empty token in vocabulary");
    if (!v.index_.emplace(v.tokens_[i], static_cast<int>(i)).second) {
      throw Error(ErrorCode::SchemaError, "duplicate token '" + v.tokens_[i] + "'");
    }
  }
  return v;
}

std::optional<int> Vocab::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw Error(ErrorCode::UnknownToken, "token id " + std::to_string(id));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i > 0 && words[i] != kNewlineToken && words[i - 1] != kNewlineToken) out.push_back(' ');
    out += words[i];
  }
  return out;
}

std::vector<std::string> split_words(std::string_view text) {
  auto words = split_loose(text);
  if (join_words(words) != text) {
    throw Error(ErrorCode::UnknownToken, "non-canonical whitespace in text");
  }
  return words;
}

TokenSeq encode(std::string_view text, const Vocab& vocab) {
  TokenSeq seq;
  for (const auto& w : split_words(text)) {
    auto id = vocab.find(w);
    if (!id) throw Error(ErrorCode::UnknownToken, "'" + w + "'");
    seq.ids.push_back(*id);
  }
  seq.boundary = seq.ids.size();
  return seq;
}

TokenSeq encode_lenient(std::string_view text, const Vocab& vocab) {
  TokenSeq seq;
  for (const auto& w : split_loose(text)) {
    seq.ids.push_back(vocab.find(w).value_or(vocab.unk()));
  }
  seq.boundary = seq.ids.size();
  return seq;
}

std::string decode(std::span<const int> ids, const Vocab& vocab) {
  std::vector<std::string> words;
  words.reserve(ids.size());
  for (int id : ids) words.push_back(vocab.token(id));
  return join_words(words);
}

}  // namespace fairjudge
