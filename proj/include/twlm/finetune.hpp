// Task-format datasets, task heads on a pre-trained encoder, and the
// fine-tuning loop with best-epoch selection.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "twlm/checkpoint.hpp"
#include "twlm/metrics.hpp"
#include "twlm/model.hpp"
#include "twlm/rng.hpp"
#include "twlm/vocab.hpp"

namespace twlm {

enum class TaskKind { single_class, pair_class, pair_regress, token_tag };

TaskKind task_kind_from_string(const std::string& s);
std::string to_string(TaskKind kind);

struct TaskExample {
  std::string text_a;
  std::string text_b;                 // pair kinds only
  std::int32_t label_index = -1;      // classification kinds
  double score = 0.0;                 // regression
  std::vector<std::string> tags;      // token tagging, one per word of text_a
};

struct TaskData {
  TaskKind kind = TaskKind::single_class;
  std::vector<std::string> labels;  // class names or tagset, sorted
  std::vector<TaskExample> train;
  std::vector<TaskExample> dev;
};

/// Loads <dir>/train.txt and <dir>/dev.txt.  Every file starts with
/// "#task-format:v1 kind=<single|pair|regress|tokentag>" which must match
/// the requested kind.  Classification/regression files are TSV with the
/// label or score first; token tagging is CoNLL-style "token<TAB>tag" lines
/// with blank lines between sentences.  The label vocabulary is inferred
/// from train and sorted; dev labels outside it and BIO violations are
/// errors naming the line.
TaskData load_task_dataset(const std::string& dir, TaskKind kind);

struct TaskHead {
  Tensor w;  // [H, n_outputs]
  Tensor b;  // [n_outputs]
};

struct TaskModel {
  ModelConfig config;
  ParameterSet params;
  TaskHead head;
  TaskKind kind = TaskKind::single_class;
  std::vector<std::string> labels;
};

// Linear head sized for the task: n_labels outputs on the pooled [CLS]
// vector for classification, one output for regression, |tagset| per
// position on the sequence output for tagging.  Head weights are drawn
// Normal(0, 0.02^2) from `seed`.
TaskModel attach_head(const Checkpoint& ckpt, TaskKind kind,
                      const std::vector<std::string>& labels,
                      std::uint64_t seed);

struct FinetuneHyper {
  std::int64_t epochs = 5;
  std::int64_t batch_size = 8;
  std::int32_t max_len = 32;
  AdamHyper optimizer{3e-3, 0.9, 0.999, 1e-8, 0.0};
};

struct EpochMetric {
  std::int64_t epoch = 0;  // 0 = before training
  MetricValue dev_metric;
};

struct FinetuneResult {
  TaskModel model;  // best-dev parameters
  std::vector<std::string> predictions;  // one per dev example
  std::vector<EpochMetric> history;
  std::int64_t best_epoch = 0;
  MetricValue best_metric;
};

/// Seeded epochs of shuffled mini-batches; the dev split is scored after
/// every epoch (accuracy, Pearson or entity F1 by task kind) and the best
/// epoch wins, earlier epochs breaking ties.  The input checkpoint is
/// copied, never mutated.
FinetuneResult run_finetune(const TaskModel& start, const Vocabulary& vocab,
                            const TaskData& data, const FinetuneHyper& hyper,
                            std::uint64_t seed);

// Dev-split predictions (label strings, scores or space-joined tags).
std::vector<std::string> predict(const TaskModel& model,
                                 const Vocabulary& vocab,
                                 const std::vector<TaskExample>& examples,
                                 std::int32_t max_len);

// Metric used for best-epoch selection: accuracy for classification,
// Pearson for regression, entity F1 for tagging.  `labels` maps gold label
// indices back to strings for the classification kinds.
MetricValue score_predictions(TaskKind kind,
                              const std::vector<std::string>& predictions,
                              const std::vector<TaskExample>& gold,
                              const std::vector<std::string>& labels);

// Seeded Fisher-Yates permutation of 0..n-1.
std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng);

// Mean task loss and parameter/head gradients for one mini-batch; exposed
// for tests.
double task_loss_and_grads(const TaskModel& model, const Vocabulary& vocab,
                           const std::vector<TaskExample>& batch,
                           std::int32_t max_len, ParameterSet* param_grads,
                           TaskHead* head_grads);

}  // namespace twlm
