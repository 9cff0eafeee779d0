// Corpus ingestion: tweet cleaning, deduplication, sentence splitting and
// the line-oriented corpus file format shared by the tokenizer and
// pre-training stages.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace twlm {

enum class SourceTag { personality, hashtag, other };

SourceTag source_tag_from_string(std::string_view s);
std::string to_string(SourceTag tag);

struct TweetRecord {
  std::string id;
  std::string text;
  SourceTag tag = SourceTag::other;
};

// One unit of corpus text.  For tweet corpora a document is a single cleaned
// tweet; multi-sentence corpora carry one document per blank-line block.
struct Document {
  std::vector<std::string> sentences;
  std::string source;

  // Sentences joined by single spaces.
  std::string text() const;
};

struct IngestStats {
  std::int64_t read = 0;
  std::int64_t rejected = 0;
  std::int64_t deduplicated = 0;
  std::int64_t emitted = 0;
};

// Validates UTF-8; returns the byte offset of the first invalid byte, or
// nullopt when the whole string is well-formed.
std::optional<std::size_t> utf8_invalid_at(std::string_view s);

/// Applies the cleaning rules in order: strip a leading "RT " marker,
/// replace URL tokens with "<url>", replace @-mentions with "<user>",
/// strip "#" from hashtag words, collapse whitespace, trim, lowercase
/// (ASCII).  Returns nullopt when the result is empty or — ignoring the
/// "<url>"/"<user>" placeholders — contains no letter.
/// Throws DataError on invalid UTF-8, naming the byte offset.
std::optional<std::string> clean_tweet(std::string_view raw);

// Splits on '.', '!' or '?' followed by whitespace or end of text; the
// delimiter stays on the left sentence.  Never returns empty sentences;
// text without a delimiter comes back as a single sentence.
std::vector<std::string> split_sentences(std::string_view text);

// Cleans every record (one tweet = one document), optionally dropping
// exact-duplicate cleaned texts.  Output preserves the input order of first
// occurrence.
std::vector<Document> ingest(const std::vector<TweetRecord>& records,
                             bool dedup, IngestStats* stats);

enum class CorpusMode { tweet, doc };

// Corpus files are UTF-8 with a "#corpus-format:v1 mode=<tweet|doc>" header.
// tweet mode: one document per line.  doc mode: one sentence per line,
// blank line between documents.
void write_corpus(const std::string& path, const std::vector<Document>& docs,
                  CorpusMode mode);
std::vector<Document> read_corpus(const std::string& path);

// Raw tweet input: TSV lines "id<TAB>source_tag<TAB>text"; '#'-prefixed
// lines are skipped.
std::vector<TweetRecord> read_tweet_tsv(const std::string& path);

// File-level ingestion used by the CLI.
IngestStats ingest_file(const std::string& in_path, const std::string& out_path,
                        bool dedup);

}  // namespace twlm
