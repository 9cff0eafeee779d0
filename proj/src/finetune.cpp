#include "twlm/finetune.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "twlm/error.hpp"

namespace twlm {

namespace {

std::vector<std::string> whitespace_words(const std::string& text) {
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
    if (j > i) words.push_back(text.substr(i, j - i));
    i = j;
  }
  return words;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    if (tab == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
  return out;
}

const char* kind_token(TaskKind kind) {
  switch (kind) {
    case TaskKind::single_class:
      return "single";
    case TaskKind::pair_class:
      return "pair";
    case TaskKind::pair_regress:
      return "regress";
    case TaskKind::token_tag:
      return "tokentag";
  }
  return "single";
}

struct RawExample {
  std::string label;  // class label or score text
  std::string text_a, text_b;
  std::vector<std::string> tags;
};

void check_bio(const std::vector<std::string>& tags, const std::string& path,
               std::size_t first_lineno) {
  for (std::size_t i = 0; i < tags.size(); ++i) {
    const std::string& t = tags[i];
    if (t == "O") continue;
    if (t.size() < 3 || (t[0] != 'B' && t[0] != 'I') || t[1] != '-') {
      throw DataError(path + ":" + std::to_string(first_lineno + i) +
                      ": tag must be O, B-<type> or I-<type>: " + t);
    }
    if (t[0] == 'I') {
      const std::string type = t.substr(2);
      if (i == 0 ||
          !((tags[i - 1] == "B-" + type) || (tags[i - 1] == "I-" + type))) {
        throw DataError(path + ":" + std::to_string(first_lineno + i) +
                        ": I-" + type + " not preceded by B-" + type + "/I-" +
                        type);
      }
    }
  }
}

std::vector<RawExample> read_task_file(const std::string& path, TaskKind kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open task file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty task file: " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::string expected =
      std::string("#task-format:v1 kind=") + kind_token(kind);
  if (line != expected) {
    throw DataError(path + ": header \"" + line + "\" does not declare " +
                    expected);
  }

  std::vector<RawExample> out;
  std::size_t lineno = 1;
  if (kind == TaskKind::token_tag) {
    RawExample cur;
    std::size_t sent_start = lineno + 1;
    std::vector<std::string> words;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) {
        if (!words.empty()) {
          check_bio(cur.tags, path, sent_start);
          cur.text_a = "";
          for (std::size_t i = 0; i < words.size(); ++i) {
            if (i) cur.text_a += ' ';
            cur.text_a += words[i];
          }
          out.push_back(cur);
          cur = RawExample{};
          words.clear();
        }
        sent_start = lineno + 1;
        continue;
      }
      const auto fields = split_tabs(line);
      if (fields.size() != 2 || fields[0].empty() || fields[1].empty()) {
        throw DataError(path + ":" + std::to_string(lineno) +
                        ": expected token<TAB>tag");
      }
      words.push_back(fields[0]);
      cur.tags.push_back(fields[1]);
    }
    if (!words.empty()) {
      check_bio(cur.tags, path, sent_start);
      cur.text_a = "";
      for (std::size_t i = 0; i < words.size(); ++i) {
        if (i) cur.text_a += ' ';
        cur.text_a += words[i];
      }
      out.push_back(cur);
    }
    return out;
  }

  const std::size_t want_fields = kind == TaskKind::single_class ? 2 : 3;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_tabs(line);
    if (fields.size() != want_fields || fields[0].empty()) {
      throw DataError(path + ":" + std::to_string(lineno) + ": expected " +
                      std::to_string(want_fields) + " tab-separated fields");
    }
    RawExample ex;
    ex.label = fields[0];
    ex.text_a = fields[1];
    if (want_fields == 3) ex.text_b = fields[2];
    if (ex.text_a.empty()) {
      throw DataError(path + ":" + std::to_string(lineno) + ": empty text");
    }
    if (kind == TaskKind::pair_regress) {
      try {
        std::size_t pos = 0;
        (void)std::stod(ex.label, &pos);
        if (pos != ex.label.size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw DataError(path + ":" + std::to_string(lineno) +
                        ": bad score: " + ex.label);
      }
    }
    out.push_back(std::move(ex));
  }
  return out;
}

// Token-tagging encoding: [CLS] pieces [SEP] with the position of each
// word's first piece; -1 marks words that did not fit.
struct TagEncoding {
  Encoding enc;
  std::vector<std::int32_t> word_pos;
};

TagEncoding encode_tagging(const Vocabulary& vocab,
                           const std::vector<std::string>& words,
                           std::int32_t max_len) {
  TagEncoding te;
  auto& enc = te.enc;
  enc.ids.push_back(Vocabulary::kCls);
  for (const std::string& w : words) {
    auto pieces = word_pieces(vocab, w);
    if (pieces.empty()) pieces.assign(1, Vocabulary::kUnk);
    if (static_cast<std::int32_t>(enc.ids.size() + pieces.size()) >
        max_len - 1) {
      te.word_pos.push_back(-1);
      continue;
    }
    te.word_pos.push_back(static_cast<std::int32_t>(enc.ids.size()));
    enc.ids.insert(enc.ids.end(), pieces.begin(), pieces.end());
  }
  enc.ids.push_back(Vocabulary::kSep);
  const std::size_t content = enc.ids.size();
  enc.type_ids.assign(content, 0);
  enc.attention_mask.assign(content, 1);
  enc.ids.resize(max_len, Vocabulary::kPad);
  enc.type_ids.resize(max_len, 0);
  enc.attention_mask.resize(max_len, 0);
  return te;
}

std::int32_t label_index_of(const std::vector<std::string>& labels,
                            const std::string& label) {
  const auto it = std::find(labels.begin(), labels.end(), label);
  return it == labels.end()
             ? -1
             : static_cast<std::int32_t>(it - labels.begin());
}

std::string format_score(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

TaskKind task_kind_from_string(const std::string& s) {
  if (s == "single") return TaskKind::single_class;
  if (s == "pair") return TaskKind::pair_class;
  if (s == "regress") return TaskKind::pair_regress;
  if (s == "tokentag") return TaskKind::token_tag;
  throw UsageError("unknown task kind: " + s);
}

std::string to_string(TaskKind kind) { return kind_token(kind); }

TaskData load_task_dataset(const std::string& dir, TaskKind kind) {
  const auto train_raw = read_task_file(dir + "/train.txt", kind);
  const auto dev_raw = read_task_file(dir + "/dev.txt", kind);
  if (train_raw.empty()) throw DataError(dir + "/train.txt has no examples");
  if (dev_raw.empty()) throw DataError(dir + "/dev.txt has no examples");

  TaskData data;
  data.kind = kind;

  // Label vocabulary from train, deterministic order.
  std::set<std::string> label_set;
  for (const RawExample& ex : train_raw) {
    if (kind == TaskKind::token_tag) {
      label_set.insert(ex.tags.begin(), ex.tags.end());
    } else if (kind != TaskKind::pair_regress) {
      label_set.insert(ex.label);
    }
  }
  data.labels.assign(label_set.begin(), label_set.end());

  const auto convert = [&](const std::vector<RawExample>& raw, bool is_dev) {
    std::vector<TaskExample> out;
    for (const RawExample& r : raw) {
      TaskExample ex;
      ex.text_a = r.text_a;
      ex.text_b = r.text_b;
      if (kind == TaskKind::pair_regress) {
        ex.score = std::stod(r.label);
      } else if (kind == TaskKind::token_tag) {
        ex.tags = r.tags;
        if (is_dev) {
          for (const std::string& t : r.tags) {
            if (label_index_of(data.labels, t) < 0) {
              throw DataError(dir + "/dev.txt: tag \"" + t +
                              "\" not present in train");
            }
          }
        }
      } else {
        ex.label_index = label_index_of(data.labels, r.label);
        if (ex.label_index < 0) {
          throw DataError(dir + "/dev.txt: label \"" + r.label +
                          "\" not present in train");
        }
      }
      out.push_back(std::move(ex));
    }
    return out;
  };
  data.train = convert(train_raw, false);
  data.dev = convert(dev_raw, true);
  return data;
}

TaskModel attach_head(const Checkpoint& ckpt, TaskKind kind,
                      const std::vector<std::string>& labels,
                      std::uint64_t seed) {
  if (kind != TaskKind::pair_regress && labels.size() < 2) {
    throw UsageError("classification/tagging needs at least 2 labels");
  }
  TaskModel model;
  model.config = ckpt.config;
  model.params = ckpt.params;
  model.kind = kind;
  model.labels = labels;
  const std::int64_t n_out =
      kind == TaskKind::pair_regress
          ? 1
          : static_cast<std::int64_t>(labels.size());
  model.head.w = Tensor::zeros({model.config.hidden, n_out});
  model.head.b = Tensor::zeros({n_out});
  Rng rng(seed);
  for (double& v : model.head.w.data) v = rng.normal() * 0.02;
  return model;
}

double task_loss_and_grads(const TaskModel& model, const Vocabulary& vocab,
                           const std::vector<TaskExample>& batch,
                           std::int32_t max_len, ParameterSet* param_grads,
                           TaskHead* head_grads) {
  if (batch.empty()) throw UsageError("empty task batch");
  const ModelConfig& cfg = model.config;
  const std::int64_t H = cfg.hidden;
  const std::int64_t B = static_cast<std::int64_t>(batch.size());
  const std::int64_t n_out = model.head.w.shape[1];

  if (head_grads) {
    head_grads->w = Tensor::zeros_like(model.head.w);
    head_grads->b = Tensor::zeros_like(model.head.b);
  }

  if (model.kind == TaskKind::token_tag) {
    Batch mb;
    std::vector<std::vector<std::int32_t>> positions;
    std::vector<std::vector<std::int32_t>> targets;
    for (const TaskExample& ex : batch) {
      const auto words = whitespace_words(ex.text_a);
      const TagEncoding te = encode_tagging(vocab, words, max_len);
      std::vector<std::int32_t> pos, tgt;
      for (std::size_t w = 0; w < words.size(); ++w) {
        if (te.word_pos[w] < 0) continue;  // truncated: continuation-free
        const std::int32_t li = label_index_of(model.labels, ex.tags[w]);
        if (li < 0) throw DataError("tag not in tagset: " + ex.tags[w]);
        pos.push_back(te.word_pos[w]);
        tgt.push_back(li);
      }
      mb.encodings.push_back(te.enc);
      positions.push_back(std::move(pos));
      targets.push_back(std::move(tgt));
    }
    ForwardCache cache;
    const ForwardOut out = forward(cfg, model.params, mb,
                                   ForwardMode::sequence, &cache);
    const std::int64_t T = mb.seq_len();
    std::int64_t n_labeled = 0;
    for (const auto& p : positions) n_labeled += static_cast<std::int64_t>(p.size());
    if (n_labeled == 0) throw NumericError("no training signal: batch has no "
                                           "labeled positions");
    const double inv = 1.0 / static_cast<double>(n_labeled);

    double loss = 0.0;
    Tensor d_seq = Tensor::zeros({B, T, H});
    std::vector<double> logits(static_cast<std::size_t>(n_out));
    for (std::int64_t b = 0; b < B; ++b) {
      const auto& pos = positions[static_cast<std::size_t>(b)];
      const auto& tgt = targets[static_cast<std::size_t>(b)];
      for (std::size_t k = 0; k < pos.size(); ++k) {
        const std::int64_t t = pos[k];
        for (std::int64_t o = 0; o < n_out; ++o) {
          double acc = model.head.b.at(o);
          for (std::int64_t h = 0; h < H; ++h) {
            acc += out.sequence.at(b, t, h) * model.head.w.at(h, o);
          }
          logits[static_cast<std::size_t>(o)] = acc;
        }
        loss += cross_entropy_row(logits.data(), n_out, tgt[k]) * inv;
        // softmax - onehot
        double mx = logits[0];
        for (std::int64_t o = 1; o < n_out; ++o) {
          mx = std::max(mx, logits[static_cast<std::size_t>(o)]);
        }
        double z = 0.0;
        for (std::int64_t o = 0; o < n_out; ++o) {
          z += std::exp(logits[static_cast<std::size_t>(o)] - mx);
        }
        for (std::int64_t o = 0; o < n_out; ++o) {
          const double soft =
              std::exp(logits[static_cast<std::size_t>(o)] - mx) / z;
          const double dlogit =
              (soft - (o == tgt[k] ? 1.0 : 0.0)) * inv;
          if (head_grads) {
            head_grads->b.at(o) += dlogit;
            for (std::int64_t h = 0; h < H; ++h) {
              head_grads->w.at(h, o) += out.sequence.at(b, t, h) * dlogit;
            }
          }
          for (std::int64_t h = 0; h < H; ++h) {
            d_seq.at(b, t, h) += dlogit * model.head.w.at(h, o);
          }
        }
      }
    }
    if (param_grads) {
      UpstreamGrads up;
      up.d_sequence = &d_seq;
      *param_grads = backward(cfg, model.params, cache, up);
    }
    return loss;
  }

  // Pooled-head kinds.
  Batch mb;
  for (const TaskExample& ex : batch) {
    if (model.kind == TaskKind::single_class) {
      mb.encodings.push_back(encode(vocab, ex.text_a, max_len));
    } else {
      mb.encodings.push_back(
          encode(vocab, ex.text_a, max_len, ex.text_b));
    }
  }
  ForwardCache cache;
  const ForwardOut out = forward(cfg, model.params, mb, ForwardMode::pooled,
                                 &cache);
  double loss = 0.0;
  Tensor d_pooled = Tensor::zeros({B, H});
  std::vector<double> logits(static_cast<std::size_t>(n_out));
  const double inv = 1.0 / static_cast<double>(B);
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t o = 0; o < n_out; ++o) {
      double acc = model.head.b.at(o);
      for (std::int64_t h = 0; h < H; ++h) {
        acc += out.pooled.at(b, h) * model.head.w.at(h, o);
      }
      logits[static_cast<std::size_t>(o)] = acc;
    }
    std::vector<double> dlogit(static_cast<std::size_t>(n_out), 0.0);
    if (model.kind == TaskKind::pair_regress) {
      const double err = logits[0] - batch[static_cast<std::size_t>(b)].score;
      loss += err * err * inv;
      dlogit[0] = 2.0 * err * inv;
    } else {
      const std::int32_t tgt = batch[static_cast<std::size_t>(b)].label_index;
      if (tgt < 0 || tgt >= n_out) throw DataError("label index out of range");
      loss += cross_entropy_row(logits.data(), n_out, tgt) * inv;
      double mx = logits[0];
      for (std::int64_t o = 1; o < n_out; ++o) {
        mx = std::max(mx, logits[static_cast<std::size_t>(o)]);
      }
      double z = 0.0;
      for (std::int64_t o = 0; o < n_out; ++o) {
        z += std::exp(logits[static_cast<std::size_t>(o)] - mx);
      }
      for (std::int64_t o = 0; o < n_out; ++o) {
        const double soft =
            std::exp(logits[static_cast<std::size_t>(o)] - mx) / z;
        dlogit[static_cast<std::size_t>(o)] =
            (soft - (o == tgt ? 1.0 : 0.0)) * inv;
      }
    }
    for (std::int64_t o = 0; o < n_out; ++o) {
      const double dl = dlogit[static_cast<std::size_t>(o)];
      if (dl == 0.0) continue;
      if (head_grads) {
        head_grads->b.at(o) += dl;
        for (std::int64_t h = 0; h < H; ++h) {
          head_grads->w.at(h, o) += out.pooled.at(b, h) * dl;
        }
      }
      for (std::int64_t h = 0; h < H; ++h) {
        d_pooled.at(b, h) += dl * model.head.w.at(h, o);
      }
    }
  }
  if (param_grads) {
    UpstreamGrads up;
    up.d_pooled = &d_pooled;
    *param_grads = backward(cfg, model.params, cache, up);
  }
  return loss;
}

std::vector<std::string> predict(const TaskModel& model,
                                 const Vocabulary& vocab,
                                 const std::vector<TaskExample>& examples,
                                 std::int32_t max_len) {
  const ModelConfig& cfg = model.config;
  const std::int64_t H = cfg.hidden;
  const std::int64_t n_out = model.head.w.shape[1];
  std::vector<std::string> out;
  out.reserve(examples.size());

  // Fallback tag for words truncated out of the window.
  std::string fallback_tag = "O";
  if (model.kind == TaskKind::token_tag &&
      label_index_of(model.labels, "O") < 0) {
    fallback_tag = model.labels.empty() ? "O" : model.labels[0];
  }

  for (const TaskExample& ex : examples) {
    if (model.kind == TaskKind::token_tag) {
      const auto words = whitespace_words(ex.text_a);
      const TagEncoding te = encode_tagging(vocab, words, max_len);
      Batch mb;
      mb.encodings.push_back(te.enc);
      const ForwardOut fo =
          forward(cfg, model.params, mb, ForwardMode::sequence);
      std::string joined;
      for (std::size_t w = 0; w < words.size(); ++w) {
        std::string tag = fallback_tag;
        if (te.word_pos[w] >= 0) {
          const std::int64_t t = te.word_pos[w];
          std::int64_t best = 0;
          double best_v = 0.0;
          for (std::int64_t o = 0; o < n_out; ++o) {
            double acc = model.head.b.at(o);
            for (std::int64_t h = 0; h < H; ++h) {
              acc += fo.sequence.at(0, t, h) * model.head.w.at(h, o);
            }
            if (o == 0 || acc > best_v) {
              best_v = acc;
              best = o;
            }
          }
          tag = model.labels[static_cast<std::size_t>(best)];
        }
        if (w) joined += ' ';
        joined += tag;
      }
      out.push_back(joined);
      continue;
    }

    Batch mb;
    if (model.kind == TaskKind::single_class) {
      mb.encodings.push_back(encode(vocab, ex.text_a, max_len));
    } else {
      mb.encodings.push_back(encode(vocab, ex.text_a, max_len, ex.text_b));
    }
    const ForwardOut fo = forward(cfg, model.params, mb, ForwardMode::pooled);
    if (model.kind == TaskKind::pair_regress) {
      double acc = model.head.b.at(0);
      for (std::int64_t h = 0; h < H; ++h) {
        acc += fo.pooled.at(0, h) * model.head.w.at(h, 0);
      }
      out.push_back(format_score(acc));
    } else {
      std::int64_t best = 0;
      double best_v = 0.0;
      for (std::int64_t o = 0; o < n_out; ++o) {
        double acc = model.head.b.at(o);
        for (std::int64_t h = 0; h < H; ++h) {
          acc += fo.pooled.at(0, h) * model.head.w.at(h, o);
        }
        if (o == 0 || acc > best_v) {
          best_v = acc;
          best = o;
        }
      }
      out.push_back(model.labels[static_cast<std::size_t>(best)]);
    }
  }
  return out;
}

MetricValue score_predictions(TaskKind kind,
                              const std::vector<std::string>& predictions,
                              const std::vector<TaskExample>& gold,
                              const std::vector<std::string>& labels) {
  if (predictions.size() != gold.size()) {
    throw UsageError("predictions/gold size mismatch");
  }
  switch (kind) {
    case TaskKind::single_class:
    case TaskKind::pair_class: {
      std::vector<std::string> gold_labels;
      for (const TaskExample& ex : gold) {
        if (ex.label_index < 0 ||
            ex.label_index >= static_cast<std::int32_t>(labels.size())) {
          throw UsageError("gold label index out of range");
        }
        gold_labels.push_back(labels[static_cast<std::size_t>(ex.label_index)]);
      }
      return accuracy(predictions, gold_labels);
    }
    case TaskKind::pair_regress: {
      std::vector<double> pred, tgt;
      for (std::size_t i = 0; i < gold.size(); ++i) {
        pred.push_back(std::stod(predictions[i]));
        tgt.push_back(gold[i].score);
      }
      return pearson(pred, tgt);
    }
    case TaskKind::token_tag: {
      std::vector<std::vector<std::string>> pred_tags, gold_tags;
      for (std::size_t i = 0; i < gold.size(); ++i) {
        pred_tags.push_back(whitespace_words(predictions[i]));
        gold_tags.push_back(gold[i].tags);
      }
      return entity_prf(pred_tags, gold_tags).f1;
    }
  }
  throw UsageError("unreachable task kind");
}

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = rng.below(i);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

FinetuneResult run_finetune(const TaskModel& start, const Vocabulary& vocab,
                            const TaskData& data, const FinetuneHyper& hyper,
                            std::uint64_t seed) {
  if (data.train.empty()) throw UsageError("empty training set");
  TaskModel model = start;  // copy-on-train

  const auto dev_metric = [&](const std::vector<std::string>& preds) {
    return score_predictions(data.kind, preds, data.dev, model.labels);
  };

  FinetuneResult result;
  result.model = model;
  result.best_epoch = 0;

  if (hyper.epochs == 0) {
    result.predictions = predict(model, vocab, data.dev, hyper.max_len);
    result.best_metric = dev_metric(result.predictions);
    result.history.push_back({0, result.best_metric});
    return result;
  }

  AdamState adam = AdamState::init(model.config);
  TaskHead head_m{Tensor::zeros_like(model.head.w),
                  Tensor::zeros_like(model.head.b)};
  TaskHead head_v{Tensor::zeros_like(model.head.w),
                  Tensor::zeros_like(model.head.b)};

  bool have_best = false;
  for (std::int64_t epoch = 1; epoch <= hyper.epochs; ++epoch) {
    Rng shuffle_rng = Rng::fork(seed, 0x7368756full + static_cast<std::uint64_t>(epoch));
    const auto order = shuffled_indices(data.train.size(), shuffle_rng);
    const std::size_t bs = static_cast<std::size_t>(hyper.batch_size);
    for (std::size_t at = 0; at < order.size(); at += bs) {
      std::vector<TaskExample> batch;
      for (std::size_t i = at; i < std::min(order.size(), at + bs); ++i) {
        batch.push_back(data.train[order[i]]);
      }
      ParameterSet grads;
      TaskHead head_grads;
      try {
        task_loss_and_grads(model, vocab, batch, hyper.max_len, &grads,
                            &head_grads);
        adamw_step(model.params, grads, adam, hyper.optimizer);
        adamw_update_tensor(model.head.w, head_grads.w, head_m.w, head_v.w,
                            adam.step, hyper.optimizer);
        adamw_update_tensor(model.head.b, head_grads.b, head_m.b, head_v.b,
                            adam.step, hyper.optimizer);
      } catch (const NumericError& e) {
        throw NumericError("fine-tuning aborted at epoch " +
                           std::to_string(epoch) + " batch " +
                           std::to_string(at / hyper.batch_size) + ": " +
                           e.what());
      }
    }
    const auto preds = predict(model, vocab, data.dev, hyper.max_len);
    const MetricValue metric = dev_metric(preds);
    result.history.push_back({epoch, metric});
    if (!have_best || metric.value > result.best_metric.value) {
      have_best = true;
      result.best_metric = metric;
      result.best_epoch = epoch;
      result.model = model;
      result.predictions = preds;
    }
  }
  return result;
}

}  // namespace twlm
