// Pre-training example construction (the four input-packing strategies),
// three-way token masking, and the seeded (continual) pre-training loop.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "twlm/checkpoint.hpp"
#include "twlm/corpus.hpp"
#include "twlm/model.hpp"
#include "twlm/rng.hpp"
#include "twlm/vocab.hpp"

namespace twlm {

// SEGMENT_PAIR / SENTENCE_PAIR carry an NSP label; FULL_SENTENCES /
// DOC_SENTENCES never do.
enum class PackingStrategy {
  segment_pair,
  sentence_pair,
  full_sentences,
  doc_sentences,
};

PackingStrategy packing_strategy_from_string(const std::string& s);
std::string to_string(PackingStrategy s);

struct PretrainExample {
  Encoding encoding;
  // Original token id at masked positions, -1 elsewhere; same length as the
  // encoding.
  std::vector<std::int32_t> mlm_labels;
  std::optional<std::int32_t> nsp_label;  // 1 = is_next, 0 = not_next
};

constexpr std::int32_t kIgnoreLabel = -1;

/// Packs documents into unmasked examples under the chosen strategy.
/// Pair strategies draw segment B as the true continuation with probability
/// 0.5 (label 1) and from a uniformly random other document otherwise
/// (label 0); they require at least two documents.
std::vector<PretrainExample> pack_examples(const std::vector<Document>& docs,
                                           PackingStrategy strategy,
                                           std::int32_t max_len,
                                           const Vocabulary& vocab, Rng& rng);

struct MaskingParams {
  double select_prob = 0.15;
  double mask_frac = 0.8;
  double random_frac = 0.1;
  double keep_frac = 0.1;

  void validate() const;  // fractions must sum to 1, select_prob in (0,1)
};

struct MaskStats {
  std::int64_t maskable = 0;
  std::int64_t selected = 0;
  std::int64_t masked = 0;
  std::int64_t randomized = 0;
  std::int64_t kept = 0;
  std::int64_t examples_without_maskable = 0;  // warning counter
};

/// Three-way masking: each maskable position (attended, not [CLS]/[SEP]/
/// [PAD]) is selected independently with probability select_prob; a selected
/// position becomes [MASK] with mask_frac, a uniformly random non-special id
/// with random_frac, or keeps its id with keep_frac.  Labels carry the
/// original id at selected positions.
PretrainExample mask_tokens(const PretrainExample& example,
                            const MaskingParams& params,
                            std::int32_t vocab_size, Rng& rng,
                            MaskStats* stats = nullptr);

struct PretrainRecipe {
  // "scratch" or a checkpoint path to continue from.
  std::string init = "scratch";
  // Either a single vocabulary, or base+extra merged before training.
  std::string vocab_path;
  std::string vocab_base;
  std::string vocab_extra;
  std::vector<std::string> corpus_paths;
  PackingStrategy strategy = PackingStrategy::segment_pair;
  MaskingParams masking;
  AdamHyper optimizer;
  std::int64_t warmup_steps = 0;
  std::int64_t steps = 0;
  std::int64_t batch_size = 8;
  std::int32_t max_len = 32;
  std::uint64_t seed = 0;
  // Model dimensions (used for scratch init; must match a loaded checkpoint).
  std::int32_t hidden = 32;
  std::int32_t embed = 32;
  std::int32_t layers = 2;
  std::int32_t heads = 4;
  std::int32_t ff_dim = 64;
  std::int32_t max_positions = 64;
  bool share_layers = false;
  double dropout = 0.0;

  static PretrainRecipe from_file(const std::string& path);
  static PretrainRecipe from_kv(const class KvConfig& kv);
  void validate() const;
};

struct StepLog {
  std::int64_t step = 0;
  double mlm_loss = 0.0;
  double nsp_loss = 0.0;
  double total = 0.0;
};

struct PretrainResult {
  Checkpoint checkpoint;
  std::vector<StepLog> log;
  Vocabulary vocab = Vocabulary::empty();
  MaskStats mask_stats;
};

/// Runs the full loop: load/merge vocabulary, initialize from scratch or a
/// checkpoint (remapping embeddings when the vocabulary grew), then iterate
/// pack -> mask -> loss/grads -> optimizer step.  Fully deterministic for a
/// fixed recipe.  Masks are redrawn per epoch from the seed; examples are
/// packed once.
PretrainResult run_pretrain(const PretrainRecipe& recipe);

// "step,mlm_loss,nsp_loss,total" CSV.
void write_loss_log(const std::string& path, const std::vector<StepLog>& log);

}  // namespace twlm
