#include "twlm/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "twlm/error.hpp"
#include "twlm/kvconfig.hpp"

namespace twlm {

namespace {

// Token-id sequences per sentence, per document.
using DocTokens = std::vector<std::vector<std::int32_t>>;

std::vector<DocTokens> tokenize_docs(const std::vector<Document>& docs,
                                     const Vocabulary& vocab) {
  std::vector<DocTokens> out;
  out.reserve(docs.size());
  for (const Document& doc : docs) {
    DocTokens dt;
    for (const std::string& sent : doc.sentences) {
      std::vector<std::int32_t> ids;
      const Encoding probe = encode(vocab, sent,
                                    static_cast<std::int32_t>(sent.size()) + 3);
      for (std::size_t i = 1; i < probe.ids.size(); ++i) {
        if (probe.ids[i] == Vocabulary::kSep) break;
        ids.push_back(probe.ids[i]);
      }
      if (!ids.empty()) dt.push_back(std::move(ids));
    }
    if (!dt.empty()) out.push_back(std::move(dt));
  }
  return out;
}

PretrainExample make_pair_example(const std::vector<std::int32_t>& a,
                                  const std::vector<std::int32_t>& b,
                                  std::int32_t max_len, std::int32_t label) {
  std::vector<std::int32_t> sa = a, sb = b;
  const std::int32_t budget = max_len - 3;
  while (static_cast<std::int32_t>(sa.size() + sb.size()) > budget) {
    if (sa.size() > sb.size()) {
      sa.pop_back();
    } else {
      sb.pop_back();
    }
  }
  PretrainExample ex;
  auto& enc = ex.encoding;
  enc.ids.push_back(Vocabulary::kCls);
  enc.ids.insert(enc.ids.end(), sa.begin(), sa.end());
  enc.ids.push_back(Vocabulary::kSep);
  const std::size_t seg0 = enc.ids.size();
  enc.ids.insert(enc.ids.end(), sb.begin(), sb.end());
  enc.ids.push_back(Vocabulary::kSep);
  const std::size_t content = enc.ids.size();
  enc.type_ids.assign(content, 0);
  for (std::size_t i = seg0; i < content; ++i) enc.type_ids[i] = 1;
  enc.attention_mask.assign(content, 1);
  enc.ids.resize(max_len, Vocabulary::kPad);
  enc.type_ids.resize(max_len, 0);
  enc.attention_mask.resize(max_len, 0);
  ex.mlm_labels.assign(max_len, kIgnoreLabel);
  ex.nsp_label = label;
  return ex;
}

PretrainExample make_single_example(const std::vector<std::int32_t>& body,
                                    std::int32_t max_len) {
  std::vector<std::int32_t> s = body;
  const std::int32_t budget = max_len - 2;
  if (static_cast<std::int32_t>(s.size()) > budget) s.resize(budget);
  PretrainExample ex;
  auto& enc = ex.encoding;
  enc.ids.push_back(Vocabulary::kCls);
  enc.ids.insert(enc.ids.end(), s.begin(), s.end());
  enc.ids.push_back(Vocabulary::kSep);
  const std::size_t content = enc.ids.size();
  enc.type_ids.assign(content, 0);
  enc.attention_mask.assign(content, 1);
  enc.ids.resize(max_len, Vocabulary::kPad);
  enc.type_ids.resize(max_len, 0);
  enc.attention_mask.resize(max_len, 0);
  ex.mlm_labels.assign(max_len, kIgnoreLabel);
  return ex;
}

// Consecutive sentences from a random document other than `exclude`,
// filling at most `budget` tokens.
std::vector<std::int32_t> random_other_segment(
    const std::vector<DocTokens>& docs, std::size_t exclude,
    std::int64_t budget, Rng& rng) {
  if (budget < 1) budget = 1;
  std::size_t pick = rng.below(docs.size() - 1);
  if (pick >= exclude) ++pick;
  const DocTokens& doc = docs[pick];
  const std::size_t start = rng.below(doc.size());
  std::vector<std::int32_t> out;
  for (std::size_t s = start; s < doc.size(); ++s) {
    if (static_cast<std::int64_t>(out.size() + doc[s].size()) > budget &&
        !out.empty()) {
      break;
    }
    out.insert(out.end(), doc[s].begin(), doc[s].end());
    if (static_cast<std::int64_t>(out.size()) >= budget) break;
  }
  if (static_cast<std::int64_t>(out.size()) > budget) out.resize(budget);
  if (out.empty()) out.push_back(Vocabulary::kUnk);
  return out;
}

std::vector<std::int32_t> concat(const DocTokens& doc, std::size_t from,
                                 std::size_t to) {
  std::vector<std::int32_t> out;
  for (std::size_t i = from; i < to; ++i) {
    out.insert(out.end(), doc[i].begin(), doc[i].end());
  }
  return out;
}

}  // namespace

PackingStrategy packing_strategy_from_string(const std::string& s) {
  if (s == "SEGMENT_PAIR") return PackingStrategy::segment_pair;
  if (s == "SENTENCE_PAIR") return PackingStrategy::sentence_pair;
  if (s == "FULL_SENTENCES") return PackingStrategy::full_sentences;
  if (s == "DOC_SENTENCES") return PackingStrategy::doc_sentences;
  throw UsageError("unknown packing strategy: " + s);
}

std::string to_string(PackingStrategy s) {
  switch (s) {
    case PackingStrategy::segment_pair:
      return "SEGMENT_PAIR";
    case PackingStrategy::sentence_pair:
      return "SENTENCE_PAIR";
    case PackingStrategy::full_sentences:
      return "FULL_SENTENCES";
    case PackingStrategy::doc_sentences:
      return "DOC_SENTENCES";
  }
  return "SEGMENT_PAIR";
}

std::vector<PretrainExample> pack_examples(const std::vector<Document>& docs,
                                           PackingStrategy strategy,
                                           std::int32_t max_len,
                                           const Vocabulary& vocab, Rng& rng) {
  if (max_len < 8) throw UsageError("max_len must be >= 8 for packing");
  const std::vector<DocTokens> toks = tokenize_docs(docs, vocab);
  if (toks.empty()) throw DataError("no usable documents to pack");

  const bool pair_strategy = strategy == PackingStrategy::segment_pair ||
                             strategy == PackingStrategy::sentence_pair;
  if (pair_strategy && toks.size() < 2) {
    throw DataError("need >=2 documents for negative sampling");
  }

  std::vector<PretrainExample> out;
  const std::int64_t pair_budget = max_len - 3;

  switch (strategy) {
    case PackingStrategy::segment_pair: {
      for (std::size_t d = 0; d < toks.size(); ++d) {
        const DocTokens& doc = toks[d];
        std::size_t start = 0;
        while (start < doc.size()) {
          // Grow a chunk of consecutive sentences up to the pair budget.
          std::size_t end = start;
          std::int64_t len = 0;
          while (end < doc.size() &&
                 (len == 0 ||
                  len + static_cast<std::int64_t>(doc[end].size()) <=
                      pair_budget)) {
            len += static_cast<std::int64_t>(doc[end].size());
            ++end;
          }
          const std::size_t n = end - start;
          if (n >= 2) {
            const std::size_t split =
                start + 1 + static_cast<std::size_t>(rng.below(n - 1));
            const auto a = concat(doc, start, split);
            const bool take_next = rng.uniform01() < 0.5;
            if (take_next) {
              const auto b = concat(doc, split, end);
              out.push_back(make_pair_example(a, b, max_len, 1));
            } else {
              const auto b = random_other_segment(
                  toks, d, pair_budget - static_cast<std::int64_t>(a.size()),
                  rng);
              out.push_back(make_pair_example(a, b, max_len, 0));
            }
          } else if (n == 1) {
            // Single-sentence chunk: only a negative pair is possible.
            const auto a = concat(doc, start, end);
            const auto b = random_other_segment(
                toks, d, pair_budget - static_cast<std::int64_t>(a.size()),
                rng);
            out.push_back(make_pair_example(a, b, max_len, 0));
          }
          start = end;
        }
      }
      break;
    }
    case PackingStrategy::sentence_pair: {
      for (std::size_t d = 0; d < toks.size(); ++d) {
        const DocTokens& doc = toks[d];
        for (std::size_t s = 0; s < doc.size(); ++s) {
          const bool want_next = rng.uniform01() < 0.5;
          if (want_next && s + 1 < doc.size()) {
            out.push_back(make_pair_example(doc[s], doc[s + 1], max_len, 1));
          } else {
            const auto b = random_other_segment(
                toks, d,
                pair_budget - static_cast<std::int64_t>(doc[s].size()), rng);
            out.push_back(make_pair_example(doc[s], b, max_len, 0));
          }
        }
      }
      break;
    }
    case PackingStrategy::full_sentences:
    case PackingStrategy::doc_sentences: {
      const bool cross_docs = strategy == PackingStrategy::full_sentences;
      const std::int64_t budget = max_len - 2;
      std::vector<std::int32_t> cur;
      for (std::size_t d = 0; d < toks.size(); ++d) {
        for (const auto& sent : toks[d]) {
          if (!cur.empty() &&
              static_cast<std::int64_t>(cur.size() + sent.size()) > budget) {
            out.push_back(make_single_example(cur, max_len));
            cur.clear();
          }
          cur.insert(cur.end(), sent.begin(), sent.end());
          if (static_cast<std::int64_t>(cur.size()) >= budget) {
            out.push_back(make_single_example(cur, max_len));
            cur.clear();
          }
        }
        if (!cross_docs && !cur.empty()) {
          out.push_back(make_single_example(cur, max_len));
          cur.clear();
        }
      }
      if (!cur.empty()) out.push_back(make_single_example(cur, max_len));
      break;
    }
  }
  return out;
}

void MaskingParams::validate() const {
  if (!(select_prob > 0.0 && select_prob < 1.0)) {
    throw UsageError("select_prob must be in (0,1)");
  }
  const double sum = mask_frac + random_frac + keep_frac;
  if (std::abs(sum - 1.0) > 1e-9) {
    throw UsageError("mask_frac + random_frac + keep_frac must equal 1");
  }
  if (mask_frac < 0 || random_frac < 0 || keep_frac < 0) {
    throw UsageError("masking fractions must be non-negative");
  }
}

PretrainExample mask_tokens(const PretrainExample& example,
                            const MaskingParams& params,
                            std::int32_t vocab_size, Rng& rng,
                            MaskStats* stats) {
  params.validate();
  if (vocab_size <= 5) throw UsageError("vocabulary has no maskable tokens");
  PretrainExample out = example;
  std::int64_t maskable = 0;
  for (std::size_t i = 0; i < out.encoding.ids.size(); ++i) {
    if (out.encoding.attention_mask[i] == 0) continue;
    const std::int32_t id = out.encoding.ids[i];
    if (id == Vocabulary::kCls || id == Vocabulary::kSep ||
        id == Vocabulary::kPad) {
      continue;
    }
    ++maskable;
    if (stats) ++stats->maskable;
    if (rng.uniform01() >= params.select_prob) continue;
    out.mlm_labels[i] = id;
    if (stats) ++stats->selected;
    const double action = rng.uniform01();
    if (action < params.mask_frac) {
      out.encoding.ids[i] = Vocabulary::kMask;
      if (stats) ++stats->masked;
    } else if (action < params.mask_frac + params.random_frac) {
      out.encoding.ids[i] =
          5 + static_cast<std::int32_t>(rng.below(
                  static_cast<std::uint64_t>(vocab_size - 5)));
      if (stats) ++stats->randomized;
    } else {
      if (stats) ++stats->kept;
    }
  }
  if (maskable == 0 && stats) ++stats->examples_without_maskable;
  return out;
}

PretrainRecipe PretrainRecipe::from_file(const std::string& path) {
  return from_kv(KvConfig::from_file(path));
}

PretrainRecipe PretrainRecipe::from_kv(const KvConfig& kv) {
  PretrainRecipe r;
  r.init = kv.get_or("init", "scratch");
  r.vocab_path = kv.get_or("vocab", "");
  r.vocab_base = kv.get_or("vocab_base", "");
  r.vocab_extra = kv.get_or("vocab_extra", "");
  r.corpus_paths = split_csv(kv.get_or("corpus", ""));
  r.strategy = packing_strategy_from_string(
      kv.get_or("strategy", "SEGMENT_PAIR"));
  r.masking.select_prob = kv.get_double("select_prob", 0.15);
  r.masking.mask_frac = kv.get_double("mask_frac", 0.8);
  r.masking.random_frac = kv.get_double("random_frac", 0.1);
  r.masking.keep_frac = kv.get_double("keep_frac", 0.1);
  r.optimizer.lr = kv.get_double("lr", 1e-3);
  r.optimizer.beta1 = kv.get_double("beta1", 0.9);
  r.optimizer.beta2 = kv.get_double("beta2", 0.999);
  r.optimizer.eps = kv.get_double("eps", 1e-8);
  r.optimizer.weight_decay = kv.get_double("weight_decay", 0.0);
  r.warmup_steps = kv.get_int("warmup_steps", 0);
  r.steps = kv.get_int("steps", 0);
  r.batch_size = kv.get_int("batch_size", 8);
  r.max_len = static_cast<std::int32_t>(kv.get_int("max_len", 32));
  r.seed = kv.get_u64("seed", 0);
  r.hidden = static_cast<std::int32_t>(kv.get_int("hidden", 32));
  r.embed = static_cast<std::int32_t>(kv.get_int("embed", r.hidden));
  r.layers = static_cast<std::int32_t>(kv.get_int("layers", 2));
  r.heads = static_cast<std::int32_t>(kv.get_int("heads", 4));
  r.ff_dim = static_cast<std::int32_t>(kv.get_int("ff_dim", 4 * r.hidden));
  r.max_positions =
      static_cast<std::int32_t>(kv.get_int("max_positions", r.max_len));
  r.share_layers = kv.get_bool("share_layers", false);
  r.dropout = kv.get_double("dropout", 0.0);
  r.validate();
  return r;
}

void PretrainRecipe::validate() const {
  masking.validate();
  if (steps < 0) throw UsageError("steps must be >= 0");
  if (batch_size < 1) throw UsageError("batch_size must be >= 1");
  if (max_len < 8) throw UsageError("max_len must be >= 8");
  if (corpus_paths.empty()) throw UsageError("recipe needs corpus=<paths>");
  const bool single = !vocab_path.empty();
  const bool merged = !vocab_base.empty() && !vocab_extra.empty();
  if (single == merged) {
    throw UsageError(
        "recipe needs either vocab=<path> or vocab_base=+vocab_extra=");
  }
  if (init != "scratch" && init.substr(0, 5) != "ckpt:") {
    throw UsageError("init must be 'scratch' or 'ckpt:<path>'");
  }
}

PretrainResult run_pretrain(const PretrainRecipe& recipe) {
  recipe.validate();

  // Vocabulary: single file, or base+extra union-append merge.
  Vocabulary vocab = Vocabulary::empty();
  std::optional<Vocabulary> base_vocab;
  if (!recipe.vocab_path.empty()) {
    vocab = Vocabulary::load(recipe.vocab_path);
  } else {
    base_vocab = Vocabulary::load(recipe.vocab_base);
    const Vocabulary extra = Vocabulary::load(recipe.vocab_extra);
    vocab = merge_vocab(*base_vocab, extra);
  }

  std::vector<Document> docs;
  for (const std::string& path : recipe.corpus_paths) {
    auto part = read_corpus(path);
    docs.insert(docs.end(), part.begin(), part.end());
  }

  // Model parameters: fresh, or loaded and (if the vocabulary grew through a
  // merge) remapped onto the merged id space.
  ModelConfig cfg;
  ParameterSet params;
  std::int64_t start_step = 0;
  if (recipe.init == "scratch") {
    cfg.vocab_size = vocab.size();
    cfg.hidden = recipe.hidden;
    cfg.embed = recipe.embed;
    cfg.layers = recipe.layers;
    cfg.heads = recipe.heads;
    cfg.ff_dim = recipe.ff_dim;
    cfg.max_positions = recipe.max_positions;
    cfg.share_layers = recipe.share_layers;
    cfg.dropout = recipe.dropout;
    cfg.seed = recipe.seed;
    cfg.validate();
    params = init_model(cfg);
  } else {
    Checkpoint ckpt = load_checkpoint(recipe.init.substr(5));
    if (ckpt.vocab_fingerprint != vocab.fingerprint()) {
      if (base_vocab && ckpt.vocab_fingerprint == base_vocab->fingerprint()) {
        ckpt = remap_embeddings(ckpt, *base_vocab, vocab, recipe.seed);
      } else {
        throw DataError(
            "checkpoint vocabulary fingerprint matches neither the recipe "
            "vocabulary nor the merge base");
      }
    }
    cfg = ckpt.config;
    params = std::move(ckpt.params);
    start_step = ckpt.step;
  }

  Rng pack_rng = Rng::fork(recipe.seed, 0x7061636bull);  // packing stream
  const std::vector<PretrainExample> packed =
      pack_examples(docs, recipe.strategy, recipe.max_len, vocab, pack_rng);
  if (packed.empty()) throw DataError("packing produced no examples");

  PretrainResult result;
  result.vocab = vocab;

  AdamState adam = AdamState::init(cfg);
  std::vector<PretrainExample> masked;
  std::size_t cursor = 0;
  std::int64_t epoch = -1;

  for (std::int64_t step = 1; step <= recipe.steps; ++step) {
    // Static masking: masks are fixed per epoch, drawn from (seed, epoch).
    if (cursor == 0) {
      ++epoch;
      Rng mask_rng = Rng::fork(recipe.seed,
                               0x6d61736bull + static_cast<std::uint64_t>(epoch));
      masked.clear();
      masked.reserve(packed.size());
      for (const PretrainExample& ex : packed) {
        masked.push_back(mask_tokens(ex, recipe.masking, vocab.size(),
                                     mask_rng, &result.mask_stats));
      }
    }

    Batch batch;
    std::vector<std::int32_t> mlm_labels;
    std::vector<std::int32_t> nsp_labels;
    for (std::int64_t i = 0; i < recipe.batch_size; ++i) {
      const PretrainExample& ex = masked[cursor];
      batch.encodings.push_back(ex.encoding);
      mlm_labels.insert(mlm_labels.end(), ex.mlm_labels.begin(),
                        ex.mlm_labels.end());
      nsp_labels.push_back(ex.nsp_label.value_or(-1));
      cursor = (cursor + 1) % masked.size();
    }

    ParameterSet grads;
    LossBreakdown loss;
    Rng dropout_rng = Rng::fork(recipe.seed,
                                0x64726f70ull + static_cast<std::uint64_t>(step));
    try {
      loss = mlm_nsp_loss_and_grads(cfg, params, batch, mlm_labels, nsp_labels,
                                    &grads,
                                    cfg.dropout > 0.0 ? &dropout_rng : nullptr);
    } catch (const NumericError& e) {
      throw NumericError("pre-training aborted at step " +
                         std::to_string(step) + ": " + e.what());
    }

    AdamHyper hyper = recipe.optimizer;
    if (recipe.warmup_steps > 0 && step < recipe.warmup_steps) {
      hyper.lr *= static_cast<double>(step) /
                  static_cast<double>(recipe.warmup_steps);
    }
    adamw_step(params, grads, adam, hyper);

    result.log.push_back({step, loss.mlm, loss.nsp, loss.total});
  }

  result.checkpoint.config = cfg;
  result.checkpoint.params = std::move(params);
  result.checkpoint.vocab_fingerprint = vocab.fingerprint();
  result.checkpoint.step = start_step + recipe.steps;
  return result;
}

void write_loss_log(const std::string& path, const std::vector<StepLog>& log) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open loss log for writing: " + path);
  out << "step,mlm_loss,nsp_loss,total\n";
  char buf[128];
  for (const StepLog& l : log) {
    std::snprintf(buf, sizeof(buf), "%lld,%.6f,%.6f,%.6f\n",
                  static_cast<long long>(l.step), l.mlm_loss, l.nsp_loss,
                  l.total);
    out << buf;
  }
}

}  // namespace twlm
