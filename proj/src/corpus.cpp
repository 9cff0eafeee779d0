#include "twlm/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "twlm/error.hpp"

namespace twlm {

namespace {

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' ||
         c == '\v';
}

std::string lowercase_ascii(std::string s) {
  for (char& c : s) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return s;
}

// True when the text contains an ASCII letter outside the literal
// "<url>"/"<user>" placeholder tokens.
bool has_letter_outside_placeholders(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    if (s.compare(i, 5, "<url>") == 0) {
      i += 5;
      continue;
    }
    if (s.compare(i, 6, "<user>") == 0) {
      i += 6;
      continue;
    }
    const unsigned char c = static_cast<unsigned char>(s[i]);
    if (std::isalpha(c)) return true;
    ++i;
  }
  return false;
}

}  // namespace

SourceTag source_tag_from_string(std::string_view s) {
  if (s == "personality") return SourceTag::personality;
  if (s == "hashtag") return SourceTag::hashtag;
  if (s == "other") return SourceTag::other;
  throw DataError("unknown source tag: " + std::string(s));
}

std::string to_string(SourceTag tag) {
  switch (tag) {
    case SourceTag::personality:
      return "personality";
    case SourceTag::hashtag:
      return "hashtag";
    case SourceTag::other:
      return "other";
  }
  return "other";
}

std::string Document::text() const {
  std::string out;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    if (i) out += ' ';
    out += sentences[i];
  }
  return out;
}

std::optional<std::size_t> utf8_invalid_at(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const unsigned char b = static_cast<unsigned char>(s[i]);
    std::size_t len = 0;
    std::uint32_t cp = 0;
    if (b < 0x80) {
      len = 1;
      cp = b;
    } else if ((b & 0xe0) == 0xc0) {
      len = 2;
      cp = b & 0x1f;
    } else if ((b & 0xf0) == 0xe0) {
      len = 3;
      cp = b & 0x0f;
    } else if ((b & 0xf8) == 0xf0) {
      len = 4;
      cp = b & 0x07;
    } else {
      return i;
    }
    if (i + len > s.size()) return i;
    for (std::size_t k = 1; k < len; ++k) {
      const unsigned char cont = static_cast<unsigned char>(s[i + k]);
      if ((cont & 0xc0) != 0x80) return i + k;
      cp = (cp << 6) | (cont & 0x3f);
    }
    // Overlong encodings, surrogates and out-of-range code points.
    if ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) ||
        (len == 4 && cp < 0x10000) || cp > 0x10ffff ||
        (cp >= 0xd800 && cp <= 0xdfff)) {
      return i;
    }
    i += len;
  }
  return std::nullopt;
}

std::optional<std::string> clean_tweet(std::string_view raw) {
  if (auto bad = utf8_invalid_at(raw)) {
    throw DataError("invalid UTF-8 at byte " + std::to_string(*bad));
  }

  std::string_view body = raw;
  if (body.substr(0, 3) == "RT ") body.remove_prefix(3);

  // URL / mention / hashtag rules all operate on whitespace-delimited
  // tokens, so tokenising here also collapses whitespace runs and trims.
  std::string out;
  std::size_t i = 0;
  while (i < body.size()) {
    while (i < body.size() && is_space(body[i])) ++i;
    if (i >= body.size()) break;
    std::size_t j = i;
    while (j < body.size() && !is_space(body[j])) ++j;
    std::string_view tok = body.substr(i, j - i);
    i = j;

    std::string piece;
    if (tok.substr(0, 7) == "http://" || tok.substr(0, 8) == "https://") {
      piece = "<url>";
    } else if (tok.size() > 1 && tok[0] == '@') {
      piece = "<user>";
    } else if (tok.size() > 1 && tok[0] == '#') {
      piece = std::string(tok.substr(1));
    } else {
      piece = std::string(tok);
    }
    if (piece.empty()) continue;
    if (!out.empty()) out += ' ';
    out += piece;
  }

  out = lowercase_ascii(std::move(out));
  if (out.empty() || !has_letter_outside_placeholders(out)) {
    return std::nullopt;
  }
  return out;
}

std::vector<std::string> split_sentences(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    cur += c;
    const bool delim = (c == '.' || c == '!' || c == '?');
    const bool boundary =
        delim && (i + 1 == text.size() || is_space(text[i + 1]));
    if (boundary) {
      // Trim and drop pure-delimiter noise handled by emptiness check.
      while (!cur.empty() && is_space(cur.front())) cur.erase(cur.begin());
      while (!cur.empty() && is_space(cur.back())) cur.pop_back();
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    }
  }
  while (!cur.empty() && is_space(cur.front())) cur.erase(cur.begin());
  while (!cur.empty() && is_space(cur.back())) cur.pop_back();
  if (!cur.empty()) out.push_back(cur);
  return out;
}

std::vector<Document> ingest(const std::vector<TweetRecord>& records,
                             bool dedup, IngestStats* stats) {
  IngestStats local;
  IngestStats& st = stats ? *stats : local;
  st = IngestStats{};

  std::vector<Document> docs;
  std::unordered_set<std::string> seen;
  std::unordered_set<std::string> ids;
  for (const TweetRecord& rec : records) {
    ++st.read;
    if (!ids.insert(rec.id).second) {
      throw DataError("duplicate tweet id in run: " + rec.id);
    }
    const auto cleaned = clean_tweet(rec.text);
    if (!cleaned) {
      ++st.rejected;
      continue;
    }
    if (dedup) {
      if (!seen.insert(*cleaned).second) {
        ++st.deduplicated;
        continue;
      }
    }
    Document doc;
    doc.sentences = split_sentences(*cleaned);
    doc.source = rec.id;
    docs.push_back(std::move(doc));
    ++st.emitted;
  }
  return docs;
}

void write_corpus(const std::string& path, const std::vector<Document>& docs,
                  CorpusMode mode) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path);
  out << "#corpus-format:v1 mode="
      << (mode == CorpusMode::tweet ? "tweet" : "doc") << "\n";
  for (std::size_t d = 0; d < docs.size(); ++d) {
    if (mode == CorpusMode::tweet) {
      out << docs[d].text() << "\n";
    } else {
      if (d) out << "\n";
      for (const std::string& s : docs[d].sentences) out << s << "\n";
    }
  }
  if (!out) throw DataError("write failed: " + path);
}

std::vector<Document> read_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open corpus: " + path);
  std::string header;
  if (!std::getline(in, header)) throw DataError("empty corpus file: " + path);
  CorpusMode mode;
  if (header == "#corpus-format:v1 mode=tweet") {
    mode = CorpusMode::tweet;
  } else if (header == "#corpus-format:v1 mode=doc") {
    mode = CorpusMode::doc;
  } else {
    throw DataError("bad corpus header in " + path + ": " + header);
  }

  std::vector<Document> docs;
  std::string line;
  Document cur;
  cur.source = path;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (auto bad = utf8_invalid_at(line)) {
      throw DataError(path + ":" + std::to_string(lineno) +
                      ": invalid UTF-8 at byte " + std::to_string(*bad));
    }
    if (mode == CorpusMode::tweet) {
      if (line.empty()) continue;
      Document doc;
      doc.sentences = split_sentences(line);
      doc.source = path;
      if (!doc.sentences.empty()) docs.push_back(std::move(doc));
    } else {
      if (line.empty()) {
        if (!cur.sentences.empty()) {
          docs.push_back(cur);
          cur.sentences.clear();
        }
      } else {
        cur.sentences.push_back(line);
      }
    }
  }
  if (mode == CorpusMode::doc && !cur.sentences.empty()) docs.push_back(cur);
  return docs;
}

std::vector<TweetRecord> read_tweet_tsv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open tweets file: " + path);
  std::vector<TweetRecord> recs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t1 == std::string::npos || t2 == std::string::npos) {
      throw DataError(path + ":" + std::to_string(lineno) +
                      ": expected id<TAB>source_tag<TAB>text");
    }
    TweetRecord rec;
    rec.id = line.substr(0, t1);
    rec.tag = source_tag_from_string(line.substr(t1 + 1, t2 - t1 - 1));
    rec.text = line.substr(t2 + 1);
    recs.push_back(std::move(rec));
  }
  return recs;
}

IngestStats ingest_file(const std::string& in_path, const std::string& out_path,
                        bool dedup) {
  const auto records = read_tweet_tsv(in_path);
  IngestStats stats;
  const auto docs = ingest(records, dedup, &stats);
  write_corpus(out_path, docs, CorpusMode::tweet);
  return stats;
}

}  // namespace twlm
