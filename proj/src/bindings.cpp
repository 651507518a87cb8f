#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "prunekit/checkpoint.hpp"
#include "prunekit/eval.hpp"
#include "prunekit/model.hpp"
#include "prunekit/pruning.hpp"
#include "prunekit/schedule.hpp"
#include "prunekit/tensor.hpp"
#include "prunekit/trainer.hpp"

namespace py = pybind11;
using namespace prunekit;

PYBIND11_MODULE(_core, m) {
  m.doc() = "prunekit core: tensors, the toy transformer, pruning, training, and evaluation";
  m.attr("__version__") = "0.1.0";

  // Base first: pybind11 tries translators most-recent-first, so the derived
  // registrations below win over the catch-all.
  auto base = py::register_exception<Error>(m, "PrunekitError");
  py::register_exception<DimensionError>(m, "DimensionError", base);
  py::register_exception<ContractError>(m, "ContractError", base);
  py::register_exception<ConfigError>(m, "ConfigError", base);
  py::register_exception<InputError>(m, "InputError", base);
  py::register_exception<IndexError>(m, "IndexError", base);
  py::register_exception<FormatError>(m, "FormatError", base);
  py::register_exception<VersionError>(m, "VersionError", base);
  py::register_exception<CorruptionError>(m, "CorruptionError", base);
  py::register_exception<IoError>(m, "IoError", base);

  py::class_<Tensor>(m, "Tensor")
      .def_static("zeros", [](std::vector<int> shape) { return Tensor::zeros(std::move(shape)); })
      .def_static("from_data",
                  [](std::vector<int> shape, std::vector<double> data, bool requires_grad) {
                    return Tensor::from_data(std::move(shape), std::move(data), requires_grad);
                  },
                  py::arg("shape"), py::arg("data"), py::arg("requires_grad") = false)
      .def_property_readonly("shape", &Tensor::shape)
      .def_property_readonly("requires_grad", &Tensor::requires_grad)
      .def("numel", &Tensor::numel)
      .def("item", &Tensor::item)
      .def("data", [](const Tensor& t) { return t.data(); })
      .def("set_data",
           [](Tensor& t, const std::vector<double>& values) {
             if (values.size() != t.numel()) {
               throw DimensionError("set_data: " + std::to_string(values.size()) +
                                    " values for shape " + shape_str(t.shape()));
             }
             t.data() = values;
           })
      .def("grad", [](const Tensor& t) { return t.grad(); })
      .def("zero_grad", &Tensor::zero_grad)
      .def("detached_copy", &Tensor::detached_copy);

  m.def("matmul", &matmul, py::arg("a"), py::arg("b"), py::arg("transpose_a") = false,
        py::arg("transpose_b") = false);
  m.def("add", &add);
  m.def("mul", &mul);
  m.def("scale", &scale);
  m.def("gelu", &gelu);
  m.def("softmax", &softmax, py::arg("x"), py::arg("axis"));
  m.def("causal_mask", &causal_mask);
  m.def("layer_norm", &layer_norm, py::arg("x"), py::arg("gain"), py::arg("bias"),
        py::arg("eps") = TransformerModel::kLayerNormEps);
  m.def("cross_entropy", [](const Tensor& logits, const std::vector<int>& targets) {
    return cross_entropy(logits, targets);
  });
  m.def("tensor_sum", [](const Tensor& x) { return sum(x); });
  m.def("backward", &backward);

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init([](int vocab_size, int d_model, int n_heads, int n_layers, int d_ff,
                       int context_len, std::uint64_t seed) {
             ModelConfig c{vocab_size, d_model, n_heads, n_layers, d_ff, context_len, seed};
             c.validate();
             return c;
           }),
           py::arg("vocab_size"), py::arg("d_model"), py::arg("n_heads"), py::arg("n_layers"),
           py::arg("d_ff"), py::arg("context_len"), py::arg("seed") = 0)
      .def_readwrite("vocab_size", &ModelConfig::vocab_size)
      .def_readwrite("d_model", &ModelConfig::d_model)
      .def_readwrite("n_heads", &ModelConfig::n_heads)
      .def_readwrite("n_layers", &ModelConfig::n_layers)
      .def_readwrite("d_ff", &ModelConfig::d_ff)
      .def_readwrite("context_len", &ModelConfig::context_len)
      .def_readwrite("seed", &ModelConfig::seed)
      .def("validate", &ModelConfig::validate);

  py::class_<ParamReport>(m, "ParamReport")
      .def_readonly("total_params", &ParamReport::total_params)
      .def_readonly("prunable_params", &ParamReport::prunable_params)
      .def_readonly("nonzero_params", &ParamReport::nonzero_params)
      .def_readonly("sparsity", &ParamReport::sparsity);

  py::class_<TransformerModel>(m, "TransformerModel")
      .def(py::init<const ModelConfig&>())
      .def_property_readonly("config", &TransformerModel::config)
      .def("forward",
           [](const TransformerModel& model, const std::vector<int>& tokens) {
             return model.forward(tokens);
           })
      .def("named_parameters", &TransformerModel::named_parameters)
      .def("prunable_parameters", &TransformerModel::prunable_parameters)
      .def("parameter", &TransformerModel::parameter)
      .def("clone", &TransformerModel::clone)
      .def("zero_grad", &TransformerModel::zero_grad)
      .def("param_report", [](const TransformerModel& model) { return model.param_report(); })
      .def("param_report", [](const TransformerModel& model, const PruningMask& mask) {
        return model.param_report(&mask);
      });

  py::enum_<PruneScope>(m, "PruneScope")
      .value("GLOBAL", PruneScope::kGlobal)
      .value("PER_LAYER", PruneScope::kPerLayer);

  py::class_<PruningMask>(m, "PruningMask")
      .def_static("all_kept", &PruningMask::all_kept)
      .def("sparsity", &PruningMask::sparsity)
      .def("total_count", &PruningMask::total_count)
      .def("pruned_count", &PruningMask::pruned_count)
      .def("matches", &PruningMask::matches)
      .def("keep",
           [](const PruningMask& mask, const std::string& name) {
             const auto& e = mask.entry(name);
             return std::vector<bool>(e.keep.begin(), e.keep.end());
           })
      .def("__eq__", [](const PruningMask& a, const PruningMask& b) { return a == b; });

  m.def("build_mask",
        [](const TransformerModel& model, double fraction, PruneScope scope) {
          return build_mask(model, fraction, scope);
        },
        py::arg("model"), py::arg("fraction"), py::arg("scope") = PruneScope::kGlobal);
  m.def("build_mask",
        [](const TransformerModel& model, double fraction, PruneScope scope,
           const PruningMask& existing) { return build_mask(model, fraction, scope, &existing); },
        py::arg("model"), py::arg("fraction"), py::arg("scope"), py::arg("existing"));
  m.def("build_mask_by_threshold",
        [](const TransformerModel& model, double threshold, PruneScope scope) {
          return build_mask_by_threshold(model, threshold, scope);
        },
        py::arg("model"), py::arg("threshold"), py::arg("scope") = PruneScope::kGlobal);
  m.def("apply_mask", &apply_mask);
  m.def("mask_is_applied", &mask_is_applied);
  m.def("magnitude_threshold", &magnitude_threshold);
  m.def("effective_param_count", &effective_param_count);

  py::enum_<ScheduleKind>(m, "ScheduleKind")
      .value("ONE_SHOT", ScheduleKind::kOneShot)
      .value("CONSTANT", ScheduleKind::kConstant)
      .value("LINEAR", ScheduleKind::kLinear)
      .value("EXPONENTIAL", ScheduleKind::kExponential);

  py::class_<Schedule>(m, "Schedule")
      .def(py::init([](ScheduleKind kind, double start_sparsity, double final_sparsity,
                       int iterations, double alpha) {
             Schedule s{kind, start_sparsity, final_sparsity, iterations, alpha};
             s.validate();
             return s;
           }),
           py::arg("kind"), py::arg("start_sparsity"), py::arg("final_sparsity"),
           py::arg("iterations"), py::arg("alpha") = 3.0)
      .def_readwrite("kind", &Schedule::kind)
      .def_readwrite("start_sparsity", &Schedule::start_sparsity)
      .def_readwrite("final_sparsity", &Schedule::final_sparsity)
      .def_readwrite("iterations", &Schedule::iterations)
      .def_readwrite("alpha", &Schedule::alpha)
      .def("sparsity_at", &Schedule::sparsity_at);

  m.def("iteration_prune_fraction", &iteration_prune_fraction);

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init([](double learning_rate, int epochs, int batch_size,
                       std::optional<double> grad_clip, double lambda_l1, std::uint64_t seed) {
             TrainConfig c;
             c.learning_rate = learning_rate;
             c.epochs = epochs;
             c.batch_size = batch_size;
             c.grad_clip = grad_clip;
             c.lambda_l1 = lambda_l1;
             c.seed = seed;
             c.validate();
             return c;
           }),
           py::arg("learning_rate") = 0.1, py::arg("epochs") = 2, py::arg("batch_size") = 8,
           py::arg("grad_clip") = std::optional<double>(1.0), py::arg("lambda_l1") = 0.0,
           py::arg("seed") = 0)
      .def_readwrite("learning_rate", &TrainConfig::learning_rate)
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("grad_clip", &TrainConfig::grad_clip)
      .def_readwrite("lambda_l1", &TrainConfig::lambda_l1)
      .def_readwrite("seed", &TrainConfig::seed);

  py::class_<TrainStep>(m, "TrainStep")
      .def_readonly("step", &TrainStep::step)
      .def_readonly("loss", &TrainStep::loss)
      .def_readonly("sparsity", &TrainStep::sparsity)
      .def_readonly("wall_ms", &TrainStep::wall_ms);

  py::class_<TrainHistory>(m, "TrainHistory").def_readonly("steps", &TrainHistory::steps);

  m.def("train", [](TransformerModel& model, const std::vector<int>& corpus,
                    const TrainConfig& cfg) { return train(model, corpus, cfg); });
  m.def("finetune",
        [](TransformerModel& model, const PruningMask& mask, const std::vector<int>& corpus,
           const TrainConfig& cfg) { return finetune(model, mask, corpus, cfg); });
  m.def("sgd_step",
        [](TransformerModel& model, double learning_rate) { sgd_step(model, learning_rate); });
  m.def("sgd_step", [](TransformerModel& model, double learning_rate, const PruningMask& mask) {
    sgd_step(model, learning_rate, &mask);
  });

  py::class_<LoopResult>(m, "LoopResult")
      .def_readonly("mask", &LoopResult::mask)
      .def_readonly("history", &LoopResult::history)
      .def_readonly("target_sparsity", &LoopResult::target_sparsity)
      .def_readonly("achieved_sparsity", &LoopResult::achieved_sparsity);

  m.def("prune_finetune_loop",
        [](TransformerModel& model, const std::vector<int>& corpus, const Schedule& schedule,
           PruneScope scope, const TrainConfig& cfg) {
          return prune_finetune_loop(model, corpus, schedule, scope, cfg);
        });

  py::class_<MarkovChain>(m, "MarkovChain")
      .def_static("random", &MarkovChain::random, py::arg("seed"), py::arg("vocab"),
                  py::arg("order"))
      .def_property_readonly("vocab", &MarkovChain::vocab)
      .def_property_readonly("order", &MarkovChain::order)
      .def("context_count", &MarkovChain::context_count)
      .def("transition", &MarkovChain::transition)
      .def("entropy_rate", &MarkovChain::entropy_rate)
      .def("sample", &MarkovChain::sample, py::arg("seed"), py::arg("length"),
           py::arg("burn_in") = 500);

  py::class_<SyntheticCorpus>(m, "SyntheticCorpus")
      .def_readonly("chain", &SyntheticCorpus::chain)
      .def_readonly("train_tokens", &SyntheticCorpus::train_tokens)
      .def_readonly("held_tokens", &SyntheticCorpus::held_tokens)
      .def_readonly("entropy_rate", &SyntheticCorpus::entropy_rate)
      .def_readonly("seed", &SyntheticCorpus::seed);

  m.def("generate_corpus", &generate_corpus, py::arg("seed"), py::arg("vocab"), py::arg("order"),
        py::arg("length"), py::arg("holdout") = 0.2);

  m.def("perplexity", [](const TransformerModel& model, const std::vector<int>& tokens) {
    return perplexity(model, tokens);
  });

  py::class_<LastTokenExample>(m, "LastTokenExample")
      .def(py::init([](std::vector<int> context, int target) {
             LastTokenExample e;
             e.context = std::move(context);
             e.target = target;
             return e;
           }),
           py::arg("context"), py::arg("target"))
      .def_readwrite("context", &LastTokenExample::context)
      .def_readwrite("target", &LastTokenExample::target);

  py::class_<ClozeItem>(m, "ClozeItem")
      .def(py::init([](std::vector<int> context, std::vector<int> correct,
                       std::vector<int> distractor) {
             ClozeItem item;
             item.context = std::move(context);
             item.correct = std::move(correct);
             item.distractor = std::move(distractor);
             return item;
           }),
           py::arg("context"), py::arg("correct"), py::arg("distractor"))
      .def_readwrite("context", &ClozeItem::context)
      .def_readwrite("correct", &ClozeItem::correct)
      .def_readwrite("distractor", &ClozeItem::distractor);

  m.def("last_token_accuracy", &last_token_accuracy);
  m.def("cloze_accuracy", &cloze_accuracy);
  m.def("make_last_token_examples",
        [](const std::vector<int>& tokens, std::size_t count, std::size_t context_len) {
          return make_last_token_examples(tokens, count, context_len);
        });
  m.def("make_cloze_items",
        [](const std::vector<int>& tokens, std::size_t count, std::size_t context_len,
           std::size_t continuation_len, const MarkovChain& distractor, std::uint64_t seed) {
          return make_cloze_items(tokens, count, context_len, continuation_len, distractor, seed);
        });

  py::class_<EvalSuite>(m, "EvalSuite")
      .def(py::init<>())
      .def_readwrite("held_tokens", &EvalSuite::held_tokens)
      .def_readwrite("last_token_examples", &EvalSuite::last_token_examples)
      .def_readwrite("cloze_items", &EvalSuite::cloze_items);

  py::class_<EvalReport>(m, "EvalReport")
      .def_readonly("perplexity", &EvalReport::perplexity)
      .def_readonly("last_token_accuracy", &EvalReport::last_token_accuracy)
      .def_readonly("cloze_accuracy", &EvalReport::cloze_accuracy)
      .def_readonly("sparsity", &EvalReport::sparsity)
      .def_readonly("nonzero_params", &EvalReport::nonzero_params)
      .def_readonly("total_params", &EvalReport::total_params);

  m.def("evaluate", [](const TransformerModel& model, const EvalSuite& suite) {
    return evaluate(model, suite);
  });
  m.def("evaluate", [](const TransformerModel& model, const EvalSuite& suite,
                       const PruningMask& mask) { return evaluate(model, suite, &mask); });

  py::class_<SweepCell>(m, "SweepCell")
      .def_readonly("rate", &SweepCell::rate)
      .def_readonly("seed", &SweepCell::seed)
      .def_readonly("after_prune", &SweepCell::after_prune)
      .def_readonly("after_finetune", &SweepCell::after_finetune);

  py::class_<SweepRow>(m, "SweepRow")
      .def_readonly("rate", &SweepRow::rate)
      .def_readonly("n_params_effective", &SweepRow::n_params_effective)
      .def_readonly("median_after_prune", &SweepRow::median_after_prune)
      .def_readonly("median_after_finetune", &SweepRow::median_after_finetune);

  py::class_<SweepResult>(m, "SweepResult")
      .def_readonly("baseline", &SweepResult::baseline)
      .def_readonly("baseline_params", &SweepResult::baseline_params)
      .def_readonly("model_name", &SweepResult::model_name)
      .def_readonly("rows", &SweepResult::rows)
      .def_readonly("cells", &SweepResult::cells);

  m.def("sweep",
        [](const TransformerModel& base, const std::vector<double>& rates,
           const std::vector<std::uint64_t>& seeds, PruneScope scope,
           const TrainConfig& finetune_cfg, const std::vector<int>& train_tokens,
           const EvalSuite& suite) {
          return sweep(base, rates, seeds, scope, finetune_cfg, train_tokens, suite);
        });

  py::class_<LoadedCheckpoint>(m, "LoadedCheckpoint")
      .def_property_readonly(
          "model", [](LoadedCheckpoint& c) -> TransformerModel& { return c.model; },
          py::return_value_policy::reference_internal)
      .def_property_readonly("mask", [](const LoadedCheckpoint& c) { return c.mask; });

  py::class_<SparseExportResult>(m, "SparseExportResult")
      .def_readonly("sparse_bytes", &SparseExportResult::sparse_bytes)
      .def_readonly("dense_bytes", &SparseExportResult::dense_bytes)
      .def_readonly("compression_ratio", &SparseExportResult::compression_ratio);

  m.def("save_checkpoint", [](const TransformerModel& model, const std::string& path) {
    return save_checkpoint(model, path);
  });
  m.def("save_checkpoint",
        [](const TransformerModel& model, const std::string& path, const PruningMask& mask) {
          return save_checkpoint(model, path, &mask);
        });
  m.def("load_checkpoint", &load_checkpoint);
  m.def("export_sparse", &export_sparse);
  m.def("import_sparse", &import_sparse);
}
