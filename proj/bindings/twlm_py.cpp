// Python bindings for the main operations: corpus cleaning, vocabulary
// training/merging, encoding, metrics, marginal-performance tables and the
// file-level pre-training / fine-tuning entry points.
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>

#include "twlm/cli.hpp"
#include "twlm/corpus.hpp"
#include "twlm/finetune.hpp"
#include "twlm/kvconfig.hpp"
#include "twlm/manifest.hpp"
#include "twlm/metrics.hpp"
#include "twlm/model.hpp"
#include "twlm/pretrain.hpp"
#include "twlm/report.hpp"
#include "twlm/vocab.hpp"

namespace py = pybind11;

namespace {

twlm::Vocabulary train_wordpiece_file(const std::string& corpus_path,
                                      std::int32_t target_size,
                                      std::int64_t min_pair_freq) {
  return twlm::train_wordpiece(twlm::read_corpus(corpus_path), target_size,
                               min_pair_freq);
}

py::dict run_pretrain_file(const std::string& recipe_path,
                           const std::string& out_path,
                           std::optional<std::uint64_t> seed) {
  twlm::PretrainRecipe recipe = twlm::PretrainRecipe::from_file(recipe_path);
  if (seed) recipe.seed = *seed;
  const twlm::PretrainResult result = twlm::run_pretrain(recipe);
  twlm::save_checkpoint(result.checkpoint, out_path);
  twlm::write_loss_log(out_path + ".loss.csv", result.log);
  py::dict d;
  d["steps"] = result.log.size();
  d["checkpoint"] = out_path;
  if (!result.log.empty()) {
    d["first_total"] = result.log.front().total;
    d["last_total"] = result.log.back().total;
  }
  return d;
}

py::dict run_finetune_files(const std::string& ckpt_path,
                            const std::string& vocab_path,
                            const std::string& task_dir,
                            const std::string& kind, std::int64_t epochs,
                            std::int64_t batch_size, double lr,
                            std::int64_t max_len, std::uint64_t seed) {
  const twlm::Checkpoint ckpt = twlm::load_checkpoint(ckpt_path);
  const twlm::Vocabulary vocab = twlm::Vocabulary::load(vocab_path);
  const twlm::TaskKind k = twlm::task_kind_from_string(kind);
  const twlm::TaskData data = twlm::load_task_dataset(task_dir, k);
  const twlm::TaskModel start = twlm::attach_head(ckpt, k, data.labels, seed);
  twlm::FinetuneHyper hyper;
  hyper.epochs = epochs;
  hyper.batch_size = batch_size;
  hyper.max_len = static_cast<std::int32_t>(max_len);
  hyper.optimizer.lr = lr;
  const twlm::FinetuneResult result =
      twlm::run_finetune(start, vocab, data, hyper, seed);
  py::dict d;
  d["best_epoch"] = result.best_epoch;
  d["metric"] = twlm::to_string(result.best_metric.metric);
  d["value"] = result.best_metric.value;
  d["predictions"] = result.predictions;
  return d;
}

std::string compare_file(const std::string& grid_path,
                         const std::string& target,
                         const std::vector<std::string>& refs,
                         const std::string& format) {
  const twlm::ResultsGrid grid = twlm::ResultsGrid::from_csv(grid_path);
  const auto table = twlm::build_mp_table(grid, target, refs);
  return twlm::render_report(table, twlm::report_format_from_string(format));
}

}  // namespace

PYBIND11_MODULE(_twlm, m) {
  m.doc() = "desk-scale domain-adaptive BERT-style pre-training toolkit";
  m.attr("__version__") = twlm::kToolVersion;

  py::register_exception<twlm::UsageError>(m, "UsageError", PyExc_ValueError);
  py::register_exception<twlm::DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<twlm::NumericError>(m, "NumericError",
                                             PyExc_ArithmeticError);

  // corpus
  m.def("clean_tweet", &twlm::clean_tweet, py::arg("raw"),
        "Apply the cleaning rules; returns None when the tweet is rejected.");
  m.def("split_sentences", &twlm::split_sentences, py::arg("text"));

  // vocabulary
  py::class_<twlm::Vocabulary>(m, "Vocabulary")
      .def_static("load", &twlm::Vocabulary::load, py::arg("path"))
      .def("save", &twlm::Vocabulary::save, py::arg("path"))
      .def("size", &twlm::Vocabulary::size)
      .def("tokens", &twlm::Vocabulary::tokens)
      .def("fingerprint", &twlm::Vocabulary::fingerprint)
      .def("id",
           [](const twlm::Vocabulary& v, const std::string& token) {
             return v.id(token);
           })
      .def("contains", &twlm::Vocabulary::contains);
  m.def("train_wordpiece", &train_wordpiece_file, py::arg("corpus_path"),
        py::arg("target_size"), py::arg("min_pair_freq") = 2);
  m.def("merge_vocab", &twlm::merge_vocab, py::arg("base"), py::arg("extra"));
  m.def("vocab_overlap", &twlm::vocab_overlap, py::arg("a"), py::arg("b"));

  py::class_<twlm::Encoding>(m, "Encoding")
      .def_readonly("ids", &twlm::Encoding::ids)
      .def_readonly("type_ids", &twlm::Encoding::type_ids)
      .def_readonly("attention_mask", &twlm::Encoding::attention_mask);
  m.def(
      "encode",
      [](const twlm::Vocabulary& vocab, const std::string& text,
         std::int32_t max_len, std::optional<std::string> pair) {
        return twlm::encode(vocab, text, max_len,
                            pair ? std::optional<std::string_view>(*pair)
                                 : std::nullopt);
      },
      py::arg("vocab"), py::arg("text"), py::arg("max_len"),
      py::arg("pair") = std::nullopt);
  m.def("decode", &twlm::decode, py::arg("vocab"), py::arg("ids"));

  // model arithmetic
  py::class_<twlm::ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("vocab_size", &twlm::ModelConfig::vocab_size)
      .def_readwrite("hidden", &twlm::ModelConfig::hidden)
      .def_readwrite("embed", &twlm::ModelConfig::embed)
      .def_readwrite("layers", &twlm::ModelConfig::layers)
      .def_readwrite("heads", &twlm::ModelConfig::heads)
      .def_readwrite("ff_dim", &twlm::ModelConfig::ff_dim)
      .def_readwrite("max_positions", &twlm::ModelConfig::max_positions)
      .def_readwrite("share_layers", &twlm::ModelConfig::share_layers)
      .def_readwrite("dropout", &twlm::ModelConfig::dropout)
      .def_readwrite("seed", &twlm::ModelConfig::seed);
  m.def("param_count", &twlm::param_count, py::arg("config"));

  // metrics
  m.def(
      "accuracy",
      [](const std::vector<std::string>& pred,
         const std::vector<std::string>& gold) {
        return twlm::accuracy(pred, gold).value;
      },
      py::arg("predictions"), py::arg("gold"));
  m.def(
      "precision_recall_f1",
      [](const std::vector<std::string>& pred,
         const std::vector<std::string>& gold, const std::string& positive) {
        const auto r = twlm::precision_recall_f1(pred, gold, positive);
        return py::make_tuple(r.precision.value, r.recall.value, r.f1.value);
      },
      py::arg("predictions"), py::arg("gold"), py::arg("positive_label"));
  m.def(
      "entity_f1",
      [](const std::vector<std::vector<std::string>>& pred,
         const std::vector<std::vector<std::string>>& gold) {
        const auto r = twlm::entity_prf(pred, gold);
        return py::make_tuple(r.precision.value, r.recall.value, r.f1.value);
      },
      py::arg("predicted_tags"), py::arg("gold_tags"));
  m.def(
      "pearson",
      [](const std::vector<double>& pred, const std::vector<double>& gold) {
        return twlm::pearson(pred, gold).value;
      },
      py::arg("predictions"), py::arg("gold"));
  m.def("marginal_performance", &twlm::marginal_performance,
        py::arg("ref_value"), py::arg("new_value"));

  // pipelines
  m.def("run_pretrain", &run_pretrain_file, py::arg("recipe_path"),
        py::arg("out_path"), py::arg("seed") = std::nullopt);
  m.def("run_finetune", &run_finetune_files, py::arg("ckpt_path"),
        py::arg("vocab_path"), py::arg("task_dir"), py::arg("kind"),
        py::arg("epochs") = 5, py::arg("batch_size") = 8, py::arg("lr") = 3e-3,
        py::arg("max_len") = 32, py::arg("seed") = 0);
  m.def("compare", &compare_file, py::arg("grid_path"), py::arg("target"),
        py::arg("refs"), py::arg("format") = "csv");
  m.def("cli_main", &twlm::dispatch, py::arg("args"),
        "Run a CLI subcommand in-process; returns the exit code.");
}
