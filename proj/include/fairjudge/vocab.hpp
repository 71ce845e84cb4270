// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace fairjudge {

inline constexpr std::string_view kPadToken = "<pad>";
inline constexpr std::string_view kBosToken = "<bos>";
inline constexpr std::string_view kEosToken = "<eos>";
inline constexpr std::string_view kUnkToken = "<unk>";
inline constexpr std::string_view kNewlineToken = "\n";

// Token ids with a split point: [0, boundary) is the prompt region,
// [boundary, size) the completion region.
struct TokenSeq {
  std::vector<int> ids;
  std::size_t boundary = 0;

  std::size_t size() const { return ids.size(); }
  std::size_t completion_size() const { return ids.size() - boundary; }
  std::span<const int> prompt() const { return {ids.data(), boundary}; }
  std::span<const int> completion() const {
    return {ids.data() + boundary, ids.size() - boundary};
  }

  // Throws SeqTooLong / ShapeMismatch on violated invariants.
  void validate(std::size_t context_len) const;

  bool operator==(const TokenSeq&) const = default;
};

// Closed word-level vocabulary. Ids 0..3 are the special markers
// (pad, bos, eos, unk); content tokens follow in sorted order.
class Vocab {
 public:
  Vocab();

  static Vocab build(const std::vector<std::string>& texts);
  static Vocab from_tokens(std::vector<std::string> tokens);

  int pad() const { return 0; }
  int bos() const { return 1; }
  int eos() const { return 2; }
  int unk() const { return 3; }

  std::size_t size() const { return tokens_.size(); }
  std::optional<int> find(std::string_view token) const;
  const std::string& token(int id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }
  bool is_special(int id) const { return id >= 0 && id < 4; }

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// Words are separated by single spaces; "\n" is its own token and is never
// adjacent to a space. Text violating that layout is not representable.
std::vector<std::string> split_words(std::string_view text);
std::string join_words(const std::vector<std::string>& words);

// Whole text as prompt region (boundary == size). Throws UnknownToken.
TokenSeq encode(std::string_view text, const Vocab& vocab);
// Maps out-of-vocabulary words to <unk>; used only for external datasets.
TokenSeq encode_lenient(std::string_view text, const Vocab& vocab);
std::string decode(std::span<const int> ids, const Vocab& vocab);

}  // namespace fairjudge
