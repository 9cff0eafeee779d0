#include "twlm/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "twlm/corpus.hpp"
#include "twlm/error.hpp"
#include "twlm/finetune.hpp"
#include "twlm/kvconfig.hpp"
#include "twlm/manifest.hpp"
#include "twlm/metrics.hpp"
#include "twlm/pretrain.hpp"
#include "twlm/report.hpp"
#include "twlm/vocab.hpp"

namespace twlm {

namespace {

namespace fs = std::filesystem;

// Seed precedence: command-line flag > TWLM_SEED environment variable >
// config/recipe value.
std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag,
                           std::uint64_t config_value) {
  if (flag) return *flag;
  if (const char* env = std::getenv("TWLM_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw UsageError(std::string("TWLM_SEED is not an integer: ") + env);
    }
  }
  return config_value;
}

std::string fmt2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

void ensure_parent_dir(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

std::vector<std::string> read_predictions_tsv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open predictions: " + path);
  std::vector<std::string> preds;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw DataError(path + ":" + std::to_string(lineno) +
                      ": expected index<TAB>prediction");
    }
    preds.push_back(line.substr(tab + 1));
  }
  return preds;
}

void write_predictions_tsv(const std::string& path,
                           const std::vector<std::string>& preds) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write predictions: " + path);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    out << i << "\t" << preds[i] << "\n";
  }
}

std::string metrics_csv_for_task(TaskKind kind,
                                 const std::vector<std::string>& preds,
                                 const TaskData& data) {
  std::string out = "metric,value\n";
  if (kind == TaskKind::token_tag) {
    std::vector<std::vector<std::string>> pred_tags, gold_tags;
    for (std::size_t i = 0; i < data.dev.size(); ++i) {
      std::vector<std::string> words;
      std::istringstream ss(preds[i]);
      std::string w;
      while (ss >> w) words.push_back(w);
      pred_tags.push_back(words);
      gold_tags.push_back(data.dev[i].tags);
    }
    const PrfResult prf = entity_prf(pred_tags, gold_tags);
    out += "P," + fmt2(prf.precision.value) + "\n";
    out += "R," + fmt2(prf.recall.value) + "\n";
    out += "F," + fmt2(prf.f1.value) + "\n";
  } else {
    const MetricValue m = score_predictions(kind, preds, data.dev, data.labels);
    out += to_string(m.metric) + "," + fmt2(m.value) + "\n";
  }
  return out;
}

int cmd_ingest(const std::string& in, const std::string& out, bool dedup) {
  RunManifest manifest;
  manifest.command = "ingest";
  manifest.config["in"] = in;
  manifest.config["out"] = out;
  manifest.config["dedup"] = dedup ? "true" : "false";
  manifest.add_input(in);
  manifest.outputs = {out};
  ensure_parent_dir(out);
  manifest.write(out + ".manifest.json");

  const IngestStats stats = ingest_file(in, out, dedup);
  std::cerr << "ingest: read=" << stats.read << " rejected=" << stats.rejected
            << " deduplicated=" << stats.deduplicated
            << " emitted=" << stats.emitted << "\n";
  return 0;
}

int cmd_build_vocab(const std::string& in, std::int64_t size,
                    std::int64_t min_freq, const std::string& out) {
  RunManifest manifest;
  manifest.command = "build-vocab";
  manifest.config["in"] = in;
  manifest.config["size"] = std::to_string(size);
  manifest.config["min_freq"] = std::to_string(min_freq);
  manifest.config["out"] = out;
  manifest.add_input(in);
  manifest.outputs = {out};
  ensure_parent_dir(out);
  manifest.write(out + ".manifest.json");

  const auto docs = read_corpus(in);
  const Vocabulary vocab =
      train_wordpiece(docs, static_cast<std::int32_t>(size), min_freq);
  vocab.save(out);
  std::cerr << "build-vocab: " << vocab.size() << " tokens\n";
  return 0;
}

int cmd_merge_vocab(const std::string& base, const std::string& extra,
                    const std::string& out) {
  RunManifest manifest;
  manifest.command = "merge-vocab";
  manifest.config["base"] = base;
  manifest.config["extra"] = extra;
  manifest.config["out"] = out;
  manifest.add_input(base);
  manifest.add_input(extra);
  manifest.outputs = {out};
  ensure_parent_dir(out);
  manifest.write(out + ".manifest.json");

  const Vocabulary merged =
      merge_vocab(Vocabulary::load(base), Vocabulary::load(extra));
  merged.save(out);
  std::cerr << "merge-vocab: " << merged.size() << " tokens\n";
  return 0;
}

int cmd_vocab_overlap(const std::string& a, const std::string& b) {
  const double overlap = vocab_overlap(Vocabulary::load(a), Vocabulary::load(b));
  std::cout << fmt2(overlap) << "\n";
  return 0;
}

int cmd_pretrain(const std::string& recipe_path, const std::string& out,
                 const std::string& log_path,
                 const std::optional<std::uint64_t>& seed_flag) {
  PretrainRecipe recipe = PretrainRecipe::from_file(recipe_path);
  recipe.seed = resolve_seed(seed_flag, recipe.seed);

  RunManifest manifest;
  manifest.command = "pretrain";
  manifest.config["recipe"] = recipe_path;
  manifest.config["out"] = out;
  manifest.seed = recipe.seed;
  const KvConfig recipe_kv = KvConfig::from_file(recipe_path);
  for (const auto& [k, v] : recipe_kv.entries()) {
    manifest.config["recipe." + k] = v;
  }
  manifest.config["recipe.seed"] = std::to_string(recipe.seed);
  manifest.add_input(recipe_path);
  if (!recipe.vocab_path.empty()) manifest.add_input(recipe.vocab_path);
  if (!recipe.vocab_base.empty()) manifest.add_input(recipe.vocab_base);
  if (!recipe.vocab_extra.empty()) manifest.add_input(recipe.vocab_extra);
  for (const auto& c : recipe.corpus_paths) manifest.add_input(c);
  if (recipe.init.rfind("ckpt:", 0) == 0) {
    manifest.add_input(recipe.init.substr(5));
  }
  const std::string log = log_path.empty() ? out + ".loss.csv" : log_path;
  manifest.outputs = {out, log};
  ensure_parent_dir(out);
  manifest.write(out + ".manifest.json");

  const PretrainResult result = run_pretrain(recipe);
  save_checkpoint(result.checkpoint, out);
  ensure_parent_dir(log);
  write_loss_log(log, result.log);
  if (!result.log.empty()) {
    std::cerr << "pretrain: steps=" << result.log.size()
              << " first_total=" << result.log.front().total
              << " last_total=" << result.log.back().total << "\n";
  } else {
    std::cerr << "pretrain: steps=0\n";
  }
  return 0;
}

int cmd_finetune(const std::string& ckpt_path, const std::string& vocab_path,
                 const std::string& task_dir, const std::string& kind_str,
                 std::int64_t epochs, std::int64_t batch_size, double lr,
                 std::int64_t max_len, const std::string& out_dir,
                 const std::optional<std::uint64_t>& seed_flag) {
  const TaskKind kind = task_kind_from_string(kind_str);
  const std::uint64_t seed = resolve_seed(seed_flag, 0);

  RunManifest manifest;
  manifest.command = "finetune";
  manifest.config["ckpt"] = ckpt_path;
  manifest.config["vocab"] = vocab_path;
  manifest.config["task"] = task_dir;
  manifest.config["kind"] = kind_str;
  manifest.config["epochs"] = std::to_string(epochs);
  manifest.config["batch_size"] = std::to_string(batch_size);
  manifest.config["lr"] = std::to_string(lr);
  manifest.config["max_len"] = std::to_string(max_len);
  manifest.config["out"] = out_dir;
  manifest.seed = seed;
  manifest.add_input(ckpt_path);
  manifest.add_input(vocab_path);
  manifest.add_input(task_dir + "/train.txt");
  manifest.add_input(task_dir + "/dev.txt");
  manifest.outputs = {out_dir + "/checkpoint.twlm", out_dir + "/head.json",
                      out_dir + "/predictions.tsv", out_dir + "/metrics.csv"};
  fs::create_directories(out_dir);
  manifest.write(out_dir + "/manifest.json");

  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const Vocabulary vocab = Vocabulary::load(vocab_path);
  if (ckpt.vocab_fingerprint != vocab.fingerprint()) {
    throw DataError("checkpoint was trained against a different vocabulary");
  }
  const TaskData data = load_task_dataset(task_dir, kind);
  const TaskModel start = attach_head(ckpt, kind, data.labels, seed);

  FinetuneHyper hyper;
  hyper.epochs = epochs;
  hyper.batch_size = batch_size;
  hyper.max_len = static_cast<std::int32_t>(max_len);
  hyper.optimizer.lr = lr;
  const FinetuneResult result = run_finetune(start, vocab, data, hyper, seed);

  Checkpoint tuned;
  tuned.config = result.model.config;
  tuned.params = result.model.params;
  tuned.vocab_fingerprint = vocab.fingerprint();
  tuned.step = ckpt.step;
  save_checkpoint(tuned, out_dir + "/checkpoint.twlm");

  nlohmann::json head{{"kind", to_string(kind)},
                      {"labels", result.model.labels},
                      {"hidden", result.model.config.hidden},
                      {"w", result.model.head.w.data},
                      {"b", result.model.head.b.data}};
  std::ofstream hf(out_dir + "/head.json", std::ios::binary);
  hf << head.dump(2) << "\n";

  write_predictions_tsv(out_dir + "/predictions.tsv", result.predictions);

  std::ofstream mf(out_dir + "/metrics.csv", std::ios::binary);
  mf << "epoch,metric,value\n";
  for (const EpochMetric& em : result.history) {
    mf << em.epoch << "," << to_string(em.dev_metric.metric) << ","
       << fmt2(em.dev_metric.value) << "\n";
  }
  mf << "best," << to_string(result.best_metric.metric) << ","
     << fmt2(result.best_metric.value) << "\n";

  std::cerr << "finetune: best_epoch=" << result.best_epoch << " dev_"
            << to_string(result.best_metric.metric) << "="
            << fmt2(result.best_metric.value) << "\n";
  return 0;
}

int cmd_evaluate(const std::string& pred_path, const std::string& task_dir,
                 const std::string& kind_str, const std::string& out_path) {
  const TaskKind kind = task_kind_from_string(kind_str);
  const TaskData data = load_task_dataset(task_dir, kind);
  const auto preds = read_predictions_tsv(pred_path);
  if (preds.size() != data.dev.size()) {
    throw DataError("predictions count " + std::to_string(preds.size()) +
                    " does not match dev split size " +
                    std::to_string(data.dev.size()));
  }
  const std::string csv = metrics_csv_for_task(kind, preds, data);
  if (out_path.empty()) {
    std::cout << csv;
  } else {
    RunManifest manifest;
    manifest.command = "evaluate";
    manifest.config["pred"] = pred_path;
    manifest.config["task"] = task_dir;
    manifest.config["kind"] = kind_str;
    manifest.config["out"] = out_path;
    manifest.add_input(pred_path);
    manifest.add_input(task_dir + "/dev.txt");
    manifest.outputs = {out_path};
    ensure_parent_dir(out_path);
    manifest.write(out_path + ".manifest.json");
    std::ofstream out(out_path, std::ios::binary);
    out << csv;
  }
  return 0;
}

int cmd_compare(const std::string& grid_path, const std::string& target,
                const std::string& refs_csv, const std::string& format_str,
                const std::string& out_path) {
  const ResultsGrid grid = ResultsGrid::from_csv(grid_path);
  const auto refs = split_csv(refs_csv);
  if (refs.empty()) throw UsageError("--refs needs at least one model");
  const MarginalPerformanceTable table = build_mp_table(grid, target, refs);
  const std::string text =
      render_report(table, report_format_from_string(format_str));
  if (out_path.empty()) {
    std::cout << text;
  } else {
    RunManifest manifest;
    manifest.command = "compare";
    manifest.config["grid"] = grid_path;
    manifest.config["target"] = target;
    manifest.config["refs"] = refs_csv;
    manifest.config["format"] = format_str;
    manifest.config["out"] = out_path;
    manifest.add_input(grid_path);
    manifest.outputs = {out_path};
    ensure_parent_dir(out_path);
    manifest.write(out_path + ".manifest.json");
    std::ofstream out(out_path, std::ios::binary);
    out << text;
  }
  return 0;
}

// Pipeline stages chain through fixed product names inside out_dir; the
// special value "@corpus" refers to the ingest product, "@base" to the base
// pre-training checkpoint.
int cmd_pipeline(const std::string& recipe_path, const std::string& out_flag,
                 const std::optional<std::uint64_t>& seed_flag) {
  const KvConfig kv = KvConfig::from_file(recipe_path);
  const fs::path recipe_dir = fs::path(recipe_path).parent_path();
  const std::string out_dir =
      out_flag.empty() ? kv.require("out_dir") : out_flag;
  fs::create_directories(out_dir);
  const std::uint64_t seed = resolve_seed(seed_flag, kv.get_u64("seed", 0));

  const auto resolve_in = [&](const std::string& p) {
    const fs::path fp(p);
    if (fp.is_absolute() || recipe_dir.empty()) return p;
    return (recipe_dir / fp).string();
  };
  const std::string corpus_product = out_dir + "/corpus.txt";
  const std::string vocab_product = out_dir + "/vocab.txt";
  const std::string vocab2_product = out_dir + "/vocab2.txt";
  const std::string merged_product = out_dir + "/vocab_merged.txt";
  const std::string base_product = out_dir + "/base.twlm";
  const std::string pretrained_product = out_dir + "/pretrained.twlm";

  RunManifest manifest;
  manifest.command = "pipeline";
  manifest.config = kv.entries();
  manifest.config["resolved_out_dir"] = out_dir;
  manifest.seed = seed;
  manifest.add_input(recipe_path);
  manifest.outputs = {out_dir};
  manifest.write(out_dir + "/manifest.json");

  if (kv.has("ingest.in")) {
    cmd_ingest(resolve_in(kv.require("ingest.in")), corpus_product,
               kv.get_bool("ingest.dedup", true));
  }

  const auto stage_corpus = [&](const std::string& key) {
    const std::string v = kv.require(key);
    return v == "@corpus" ? corpus_product : resolve_in(v);
  };

  if (kv.has("vocab.corpus")) {
    cmd_build_vocab(stage_corpus("vocab.corpus"),
                    kv.get_int("vocab.size", 200),
                    kv.get_int("vocab.min_freq", 2), vocab_product);
  }
  if (kv.has("vocab2.corpus")) {
    cmd_build_vocab(stage_corpus("vocab2.corpus"),
                    kv.get_int("vocab2.size", 200),
                    kv.get_int("vocab2.min_freq", 2), vocab2_product);
  }
  const bool merged = kv.get_bool("merge", false);
  if (merged) {
    cmd_merge_vocab(vocab_product, vocab2_product, merged_product);
  }

  // Inline pre-training recipes: keys under a prefix become a recipe, the
  // vocabulary defaulting to this pipeline's product.
  const auto run_stage_pretrain = [&](const std::string& prefix,
                                      const std::string& product,
                                      const std::string& default_init) {
    KvConfig sub;
    const std::string dot = prefix + ".";
    for (const auto& [k, v] : kv.entries()) {
      if (k.rfind(dot, 0) == 0) sub.set(k.substr(dot.size()), v);
    }
    if (!sub.has("corpus")) {
      throw UsageError("pipeline stage " + prefix + " needs " + prefix +
                       ".corpus");
    }
    std::vector<std::string> corpora;
    for (const auto& c : split_csv(sub.require("corpus"))) {
      corpora.push_back(c == "@corpus" ? corpus_product : resolve_in(c));
    }
    std::string corpus_joined;
    for (std::size_t i = 0; i < corpora.size(); ++i) {
      if (i) corpus_joined += ",";
      corpus_joined += corpora[i];
    }
    sub.set("corpus", corpus_joined);
    if (!sub.has("vocab")) {
      if (merged && prefix == "pretrain") {
        // Continuing over a merged vocabulary: declare base+extra so the
        // checkpoint is remapped from the base ids.
        sub.set("vocab_base", vocab_product);
        sub.set("vocab_extra", vocab2_product);
      } else {
        sub.set("vocab", vocab_product);
      }
    } else {
      sub.set("vocab", resolve_in(sub.require("vocab")));
    }
    if (sub.has("init")) {
      const std::string init = sub.require("init");
      if (init == "@base") {
        sub.set("init", "ckpt:" + base_product);
      } else if (init.rfind("ckpt:", 0) == 0) {
        sub.set("init", "ckpt:" + resolve_in(init.substr(5)));
      }
    } else if (!default_init.empty()) {
      sub.set("init", default_init);
    }
    if (!sub.has("seed")) sub.set("seed", std::to_string(seed));
    PretrainRecipe recipe = PretrainRecipe::from_kv(sub);
    const PretrainResult result = run_pretrain(recipe);
    save_checkpoint(result.checkpoint, product);
    write_loss_log(product + ".loss.csv", result.log);
    std::cerr << "pipeline " << prefix << ": steps=" << result.log.size()
              << (result.log.empty()
                      ? ""
                      : " last_total=" + std::to_string(result.log.back().total))
              << "\n";
  };

  if (kv.has("pretrain_base.corpus")) {
    run_stage_pretrain("pretrain_base", base_product, "scratch");
  }
  if (kv.has("pretrain.corpus")) {
    const std::string default_init =
        kv.has("pretrain_base.corpus") ? "ckpt:" + base_product : "scratch";
    run_stage_pretrain("pretrain", pretrained_product, default_init);
  }

  if (kv.has("finetune.task")) {
    const std::string vocab_for_tune = merged ? merged_product : vocab_product;
    cmd_finetune(pretrained_product, vocab_for_tune,
                 resolve_in(kv.require("finetune.task")),
                 kv.get_or("finetune.kind", "single"),
                 kv.get_int("finetune.epochs", 5),
                 kv.get_int("finetune.batch_size", 8),
                 kv.get_double("finetune.lr", 3e-3),
                 kv.get_int("finetune.max_len", 32), out_dir + "/finetune",
                 seed);
  }

  if (kv.has("compare.grid")) {
    const std::string format = kv.get_or("compare.format", "csv");
    cmd_compare(resolve_in(kv.require("compare.grid")),
                kv.require("compare.target"), kv.require("compare.refs"),
                format, out_dir + "/comparison." + format);
  }
  std::cerr << "pipeline: done, outputs under " << out_dir << "\n";
  return 0;
}

}  // namespace

int dispatch(const std::vector<std::string>& args) {
  CLI::App app{"desk-scale domain-adaptive BERT-style pre-training and "
               "evaluation"};
  app.require_subcommand(1);

  // ingest
  auto* ingest_cmd = app.add_subcommand("ingest", "clean raw tweets into a "
                                                  "corpus file");
  std::string ingest_in, ingest_out;
  bool no_dedup = false;
  ingest_cmd->add_option("--in", ingest_in, "raw tweet TSV")->required();
  ingest_cmd->add_option("--out", ingest_out, "corpus output")->required();
  ingest_cmd->add_flag("--no-dedup", no_dedup, "keep duplicate cleaned texts");

  // build-vocab
  auto* bv_cmd = app.add_subcommand("build-vocab", "train a WordPiece "
                                                   "vocabulary");
  std::string bv_in, bv_out;
  std::int64_t bv_size = 200, bv_min_freq = 2;
  bv_cmd->add_option("--in", bv_in, "corpus file")->required();
  bv_cmd->add_option("--size", bv_size, "target vocabulary size")->required();
  bv_cmd->add_option("--min-freq", bv_min_freq, "minimum pair frequency");
  bv_cmd->add_option("--out", bv_out, "vocabulary output")->required();

  // merge-vocab
  auto* mv_cmd = app.add_subcommand("merge-vocab", "union-append two "
                                                   "vocabularies");
  std::string mv_base, mv_extra, mv_out;
  mv_cmd->add_option("--base", mv_base)->required();
  mv_cmd->add_option("--extra", mv_extra)->required();
  mv_cmd->add_option("--out", mv_out)->required();

  // vocab-overlap
  auto* vo_cmd = app.add_subcommand("vocab-overlap", "Jaccard overlap of two "
                                                     "vocabularies (percent)");
  std::string vo_a, vo_b;
  vo_cmd->add_option("a", vo_a, "first vocabulary")->required();
  vo_cmd->add_option("b", vo_b, "second vocabulary")->required();

  // pretrain
  auto* pt_cmd = app.add_subcommand("pretrain", "run a pre-training recipe");
  std::string pt_recipe, pt_out, pt_log;
  std::optional<std::uint64_t> pt_seed;
  pt_cmd->add_option("--recipe", pt_recipe)->required();
  pt_cmd->add_option("--out", pt_out, "checkpoint output")->required();
  pt_cmd->add_option("--log", pt_log, "loss log CSV (default <out>.loss.csv)");
  pt_cmd->add_option("--seed", pt_seed, "seed override");

  // finetune
  auto* ft_cmd = app.add_subcommand("finetune", "fine-tune on a task dataset");
  std::string ft_ckpt, ft_vocab, ft_task, ft_kind, ft_out;
  std::int64_t ft_epochs = 5, ft_batch = 8, ft_max_len = 32;
  double ft_lr = 3e-3;
  std::optional<std::uint64_t> ft_seed;
  ft_cmd->add_option("--ckpt", ft_ckpt)->required();
  ft_cmd->add_option("--vocab", ft_vocab)->required();
  ft_cmd->add_option("--task", ft_task, "task dataset directory")->required();
  ft_cmd->add_option("--kind", ft_kind, "single|pair|regress|tokentag")
      ->required();
  ft_cmd->add_option("--epochs", ft_epochs);
  ft_cmd->add_option("--batch-size", ft_batch);
  ft_cmd->add_option("--lr", ft_lr);
  ft_cmd->add_option("--max-len", ft_max_len);
  ft_cmd->add_option("--out", ft_out, "output directory")->required();
  ft_cmd->add_option("--seed", ft_seed, "seed override");

  // evaluate
  auto* ev_cmd = app.add_subcommand("evaluate", "score predictions against a "
                                                "task dev split");
  std::string ev_pred, ev_task, ev_kind, ev_out;
  ev_cmd->add_option("--pred", ev_pred, "predictions TSV")->required();
  ev_cmd->add_option("--task", ev_task)->required();
  ev_cmd->add_option("--kind", ev_kind)->required();
  ev_cmd->add_option("--out", ev_out, "metrics CSV (default stdout)");

  // compare
  auto* cp_cmd = app.add_subcommand("compare", "marginal-performance table "
                                               "from a results grid");
  std::string cp_grid, cp_target, cp_refs, cp_out;
  std::string cp_format = "csv";
  cp_cmd->add_option("--grid", cp_grid)->required();
  cp_cmd->add_option("--target", cp_target)->required();
  cp_cmd->add_option("--refs", cp_refs, "comma-separated reference models")
      ->required();
  cp_cmd->add_option("--format", cp_format, "csv|md");
  cp_cmd->add_option("--out", cp_out, "output path (default stdout)");

  // pipeline
  auto* pl_cmd = app.add_subcommand("pipeline", "run a chained recipe end to "
                                                "end");
  std::string pl_recipe, pl_out;
  std::optional<std::uint64_t> pl_seed;
  pl_cmd->add_option("--recipe", pl_recipe)->required();
  pl_cmd->add_option("--out", pl_out, "output directory (overrides out_dir)");
  pl_cmd->add_option("--seed", pl_seed, "seed override");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      // --help
      std::cout << app.help();
      return 0;
    }
    std::cerr << e.what() << "\n" << app.help();
    return 1;
  }

  try {
    if (app.got_subcommand(ingest_cmd)) {
      return cmd_ingest(ingest_in, ingest_out, !no_dedup);
    }
    if (app.got_subcommand(bv_cmd)) {
      return cmd_build_vocab(bv_in, bv_size, bv_min_freq, bv_out);
    }
    if (app.got_subcommand(mv_cmd)) {
      return cmd_merge_vocab(mv_base, mv_extra, mv_out);
    }
    if (app.got_subcommand(vo_cmd)) return cmd_vocab_overlap(vo_a, vo_b);
    if (app.got_subcommand(pt_cmd)) {
      return cmd_pretrain(pt_recipe, pt_out, pt_log, pt_seed);
    }
    if (app.got_subcommand(ft_cmd)) {
      return cmd_finetune(ft_ckpt, ft_vocab, ft_task, ft_kind, ft_epochs,
                          ft_batch, ft_lr, ft_max_len, ft_out, ft_seed);
    }
    if (app.got_subcommand(ev_cmd)) {
      return cmd_evaluate(ev_pred, ev_task, ev_kind, ev_out);
    }
    if (app.got_subcommand(cp_cmd)) {
      return cmd_compare(cp_grid, cp_target, cp_refs, cp_format, cp_out);
    }
    if (app.got_subcommand(pl_cmd)) {
      return cmd_pipeline(pl_recipe, pl_out, pl_seed);
    }
    std::cerr << "no subcommand\n";
    return 1;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace twlm
