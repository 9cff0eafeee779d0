// WordPiece vocabularies: training, merging, encoding and overlap.
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "twlm/corpus.hpp"

namespace twlm {

// Ordered token list; index equals token id.  The five special tokens always
// occupy ids 0-4 and word-internal pieces carry the "##" prefix.
class Vocabulary {
 public:
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kUnk = 1;
  static constexpr std::int32_t kCls = 2;
  static constexpr std::int32_t kSep = 3;
  static constexpr std::int32_t kMask = 4;
  static const std::array<std::string_view, 5>& specials();
  static constexpr std::string_view kContinuation = "##";

  // Validates the invariants: specials at ids 0-4, unique tokens, no empty
  // or whitespace-bearing tokens.  Throws DataError.
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  // Specials only.
  static Vocabulary empty();

  std::int32_t size() const { return static_cast<std::int32_t>(tokens_.size()); }
  const std::string& token(std::int32_t id) const { return tokens_.at(id); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  std::optional<std::int32_t> id(std::string_view token) const;
  bool contains(std::string_view token) const { return id(token).has_value(); }
  static bool is_special_id(std::int32_t id) { return id >= 0 && id <= 4; }
  static bool is_special_token(std::string_view token);

  // FNV-1a over the ordered token list with a separator byte per token.
  std::uint64_t fingerprint() const { return fingerprint_; }

  // One token per line, line number = id.  Blank lines are rejected.
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

 private:
  Vocabulary() = default;
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> index_;
  std::uint64_t fingerprint_ = 0;
};

struct Encoding {
  std::vector<std::int32_t> ids;
  std::vector<std::int32_t> type_ids;        // segment ids in {0,1}
  std::vector<std::int32_t> attention_mask;  // 1 = real token, 0 = padding
};

/// Trains a WordPiece vocabulary: the alphabet (word-start and "##"-prefixed
/// word-internal characters) seeds the vocabulary, then adjacent symbol
/// pairs are merged greedily by score freq(pair) / (freq(left)*freq(right)),
/// ties broken by the lexicographically smallest merged string, until
/// target_size is reached or no pair has frequency >= min_pair_freq.
Vocabulary train_wordpiece(const std::vector<Document>& corpus,
                           std::int32_t target_size,
                           std::int64_t min_pair_freq);

// base's tokens in base order, then extra's non-special tokens not already
// present, in extra order.  Base ids are unchanged in the result.
Vocabulary merge_vocab(const Vocabulary& base, const Vocabulary& extra);

// Jaccard overlap (percent) of the non-special token sets.
double vocab_overlap(const Vocabulary& a, const Vocabulary& b);

// Greedy longest-match pieces for one word; empty result means the word is
// unmatchable and must become a single [UNK].
std::vector<std::int32_t> word_pieces(const Vocabulary& vocab,
                                      std::string_view word);

/// Encodes "[CLS] A [SEP]" or "[CLS] A [SEP] B [SEP]", truncating the longer
/// segment from its end until the sequence fits, then padding to max_len.
Encoding encode(const Vocabulary& vocab, std::string_view text,
                std::int32_t max_len,
                std::optional<std::string_view> pair = std::nullopt);

// Inverse of encode up to tokenization: drops specials and rejoins "##"
// continuations.  Exact round-trip whenever every word was a whole token.
std::string decode(const Vocabulary& vocab,
                   const std::vector<std::int32_t>& ids);

}  // namespace twlm
