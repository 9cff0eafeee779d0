#include "twlm/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "twlm/error.hpp"

namespace twlm {

namespace {

constexpr std::uint64_t kFnvOffset = 1469598103934665603ull;
constexpr std::uint64_t kFnvPrime = 1099511628211ull;

std::uint64_t fnv1a(std::uint64_t h, std::string_view s) {
  for (const char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= kFnvPrime;
  }
  return h;
}

bool has_whitespace(std::string_view s) {
  return std::any_of(s.begin(), s.end(), [](char c) {
    return std::isspace(static_cast<unsigned char>(c)) != 0;
  });
}

// Splits a word into UTF-8 code point strings.
std::vector<std::string> codepoints(std::string_view word) {
  std::vector<std::string> cps;
  std::size_t i = 0;
  while (i < word.size()) {
    const unsigned char b = static_cast<unsigned char>(word[i]);
    std::size_t len = 1;
    if ((b & 0xe0) == 0xc0) len = 2;
    else if ((b & 0xf0) == 0xe0) len = 3;
    else if ((b & 0xf8) == 0xf0) len = 4;
    len = std::min(len, word.size() - i);
    cps.emplace_back(word.substr(i, len));
    i += len;
  }
  return cps;
}

std::vector<std::string> whitespace_words(std::string_view text) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() &&
           std::isspace(static_cast<unsigned char>(text[i]))) {
      ++i;
    }
    std::size_t j = i;
    while (j < text.size() &&
           !std::isspace(static_cast<unsigned char>(text[j]))) {
      ++j;
    }
    if (j > i) words.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return words;
}

// "a" + "##b" -> "ab"; "##a" + "##b" -> "##ab".
std::string merged_symbol(const std::string& left, const std::string& right) {
  std::string_view r = right;
  if (r.substr(0, 2) == Vocabulary::kContinuation) r.remove_prefix(2);
  return left + std::string(r);
}

}  // namespace

const std::array<std::string_view, 5>& Vocabulary::specials() {
  static const std::array<std::string_view, 5> kSpecials = {
      "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
  return kSpecials;
}

bool Vocabulary::is_special_token(std::string_view token) {
  const auto& sp = specials();
  return std::find(sp.begin(), sp.end(), token) != sp.end();
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  const auto& sp = specials();
  if (tokens.size() < sp.size()) {
    throw DataError("vocabulary must start with the 5 special tokens");
  }
  for (std::size_t i = 0; i < sp.size(); ++i) {
    if (tokens[i] != sp[i]) {
      throw DataError("special token at id " + std::to_string(i) +
                      " must be " + std::string(sp[i]) + ", got " + tokens[i]);
    }
  }
  Vocabulary v;
  v.index_.reserve(tokens.size());
  std::uint64_t h = kFnvOffset;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::string& t = tokens[i];
    if (t.empty()) {
      throw DataError("empty token at id " + std::to_string(i));
    }
    if (has_whitespace(t)) {
      throw DataError("token contains whitespace at id " + std::to_string(i));
    }
    if (i >= sp.size() && is_special_token(t)) {
      throw DataError("special token repeated at id " + std::to_string(i));
    }
    if (!v.index_.emplace(t, static_cast<std::int32_t>(i)).second) {
      throw DataError("duplicate token: " + t);
    }
    h = fnv1a(h, t);
    h ^= 0xff;
    h *= kFnvPrime;
  }
  v.tokens_ = std::move(tokens);
  v.fingerprint_ = h;
  return v;
}

Vocabulary Vocabulary::empty() {
  std::vector<std::string> toks;
  for (const auto s : specials()) toks.emplace_back(s);
  return from_tokens(std::move(toks));
}

std::optional<std::int32_t> Vocabulary::id(std::string_view token) const {
  const auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path);
  for (const std::string& t : tokens_) out << t << "\n";
  if (!out) throw DataError("write failed: " + path);
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open vocabulary: " + path);
  std::vector<std::string> tokens;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      throw DataError(path + ":" + std::to_string(lineno) +
                      ": blank lines are forbidden in vocab files");
    }
    tokens.push_back(line);
  }
  try {
    return from_tokens(std::move(tokens));
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

Vocabulary train_wordpiece(const std::vector<Document>& corpus,
                           std::int32_t target_size,
                           std::int64_t min_pair_freq) {
  if (min_pair_freq < 1) throw UsageError("min_pair_freq must be >= 1");

  // Word histogram over the whole corpus.
  std::map<std::string, std::int64_t> word_counts;
  for (const Document& doc : corpus) {
    for (const std::string& sent : doc.sentences) {
      for (const std::string& w : whitespace_words(sent)) {
        ++word_counts[w];
      }
    }
  }
  if (word_counts.empty()) throw DataError("empty corpus");

  // Each distinct word becomes a symbol sequence: first character bare,
  // later characters "##"-prefixed.
  struct Entry {
    std::vector<std::string> symbols;
    std::int64_t count;
  };
  std::vector<Entry> entries;
  std::set<std::string> alphabet;
  for (const auto& [word, count] : word_counts) {
    Entry e;
    e.count = count;
    const auto cps = codepoints(word);
    for (std::size_t i = 0; i < cps.size(); ++i) {
      std::string sym = i == 0 ? cps[i] : "##" + cps[i];
      alphabet.insert(sym);
      e.symbols.push_back(std::move(sym));
    }
    entries.push_back(std::move(e));
  }

  const std::int32_t floor =
      static_cast<std::int32_t>(Vocabulary::specials().size() +
                                alphabet.size());
  if (target_size < floor) {
    throw UsageError("target_size " + std::to_string(target_size) +
                     " below alphabet floor " + std::to_string(floor));
  }

  std::vector<std::string> vocab_tokens;
  for (const auto s : Vocabulary::specials()) vocab_tokens.emplace_back(s);
  vocab_tokens.insert(vocab_tokens.end(), alphabet.begin(), alphabet.end());

  while (static_cast<std::int32_t>(vocab_tokens.size()) < target_size) {
    // Symbol and adjacent-pair frequencies over the current segmentation.
    std::map<std::string, std::int64_t> sym_freq;
    std::map<std::pair<std::string, std::string>, std::int64_t> pair_freq;
    for (const Entry& e : entries) {
      for (std::size_t i = 0; i < e.symbols.size(); ++i) {
        sym_freq[e.symbols[i]] += e.count;
        if (i + 1 < e.symbols.size()) {
          pair_freq[{e.symbols[i], e.symbols[i + 1]}] += e.count;
        }
      }
    }

    bool found = false;
    std::pair<std::string, std::string> best_pair;
    std::string best_merged;
    double best_score = 0.0;
    for (const auto& [pair, freq] : pair_freq) {
      if (freq < min_pair_freq) continue;
      const double score =
          static_cast<double>(freq) /
          (static_cast<double>(sym_freq[pair.first]) *
           static_cast<double>(sym_freq[pair.second]));
      const std::string merged = merged_symbol(pair.first, pair.second);
      if (!found || score > best_score ||
          (score == best_score && merged < best_merged)) {
        found = true;
        best_pair = pair;
        best_merged = merged;
        best_score = score;
      }
    }
    if (!found) break;

    for (Entry& e : entries) {
      std::vector<std::string> next;
      next.reserve(e.symbols.size());
      std::size_t i = 0;
      while (i < e.symbols.size()) {
        if (i + 1 < e.symbols.size() && e.symbols[i] == best_pair.first &&
            e.symbols[i + 1] == best_pair.second) {
          next.push_back(best_merged);
          i += 2;
        } else {
          next.push_back(e.symbols[i]);
          ++i;
        }
      }
      e.symbols = std::move(next);
    }
    vocab_tokens.push_back(best_merged);
  }

  return Vocabulary::from_tokens(std::move(vocab_tokens));
}

Vocabulary merge_vocab(const Vocabulary& base, const Vocabulary& extra) {
  std::vector<std::string> tokens = base.tokens();
  for (const std::string& t : extra.tokens()) {
    if (Vocabulary::is_special_token(t)) continue;
    if (!base.contains(t)) tokens.push_back(t);
  }
  return Vocabulary::from_tokens(std::move(tokens));
}

double vocab_overlap(const Vocabulary& a, const Vocabulary& b) {
  std::set<std::string> sa(a.tokens().begin() + 5, a.tokens().end());
  std::set<std::string> sb(b.tokens().begin() + 5, b.tokens().end());
  if (sa.empty() && sb.empty()) {
    throw DataError("vocab_overlap undefined: both vocabularies have no "
                    "non-special tokens");
  }
  std::int64_t inter = 0;
  for (const auto& t : sa) inter += sb.count(t);
  const std::int64_t uni =
      static_cast<std::int64_t>(sa.size() + sb.size()) - inter;
  return 100.0 * static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<std::int32_t> word_pieces(const Vocabulary& vocab,
                                      std::string_view word) {
  std::vector<std::int32_t> pieces;
  std::size_t start = 0;
  while (start < word.size()) {
    std::size_t end = word.size();
    std::optional<std::int32_t> match;
    while (end > start) {
      std::string cand = std::string(word.substr(start, end - start));
      if (start > 0) cand = "##" + cand;
      if (const auto id = vocab.id(cand)) {
        match = id;
        break;
      }
      --end;
    }
    if (!match) return {};  // unmatchable remainder -> whole word is [UNK]
    pieces.push_back(*match);
    start = end;
  }
  return pieces;
}

Encoding encode(const Vocabulary& vocab, std::string_view text,
                std::int32_t max_len, std::optional<std::string_view> pair) {
  if (max_len < 3) throw UsageError("max_len must be >= 3");

  const auto encode_segment = [&vocab](std::string_view seg) {
    std::vector<std::int32_t> ids;
    for (const std::string& w : whitespace_words(seg)) {
      const auto pieces = word_pieces(vocab, w);
      if (pieces.empty()) {
        ids.push_back(Vocabulary::kUnk);
      } else {
        ids.insert(ids.end(), pieces.begin(), pieces.end());
      }
    }
    return ids;
  };

  std::vector<std::int32_t> a = encode_segment(text);
  std::vector<std::int32_t> b;
  const bool has_pair = pair.has_value();
  if (has_pair) b = encode_segment(*pair);

  // [CLS] A [SEP] and optionally B [SEP]; trim the longer segment from its
  // end (ties trim B) until the sequence fits.
  const std::int32_t budget = max_len - 2 - (has_pair ? 1 : 0);
  while (static_cast<std::int32_t>(a.size() + b.size()) > budget) {
    if (a.size() > b.size()) {
      a.pop_back();
    } else {
      b.pop_back();
    }
  }

  Encoding enc;
  enc.ids.reserve(max_len);
  enc.ids.push_back(Vocabulary::kCls);
  enc.ids.insert(enc.ids.end(), a.begin(), a.end());
  enc.ids.push_back(Vocabulary::kSep);
  const std::size_t seg0_len = enc.ids.size();
  if (has_pair) {
    enc.ids.insert(enc.ids.end(), b.begin(), b.end());
    enc.ids.push_back(Vocabulary::kSep);
  }
  const std::size_t content = enc.ids.size();
  enc.type_ids.assign(content, 0);
  for (std::size_t i = seg0_len; i < content; ++i) enc.type_ids[i] = 1;
  enc.attention_mask.assign(content, 1);

  enc.ids.resize(max_len, Vocabulary::kPad);
  enc.type_ids.resize(max_len, 0);
  enc.attention_mask.resize(max_len, 0);
  return enc;
}

std::string decode(const Vocabulary& vocab,
                   const std::vector<std::int32_t>& ids) {
  std::string out;
  for (const std::int32_t id : ids) {
    if (id < 0 || id >= vocab.size()) {
      throw DataError("decode: id out of range: " + std::to_string(id));
    }
    if (Vocabulary::is_special_id(id) && id != Vocabulary::kUnk) continue;
    const std::string& tok = vocab.token(id);
    if (tok.size() > 2 && tok.compare(0, 2, Vocabulary::kContinuation) == 0) {
      out += tok.substr(2);
    } else {
      if (!out.empty()) out += ' ';
      out += tok;
    }
  }
  return out;
}

}  // namespace twlm
