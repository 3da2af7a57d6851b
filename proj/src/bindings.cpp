// Python surface: workflow-level operations (generate / train / score) plus
// the metric helpers, all over numpy arrays. Tensors never cross the
// boundary; predictions come back as copies.
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "lantern/dataset.hpp"
#include "lantern/digest.hpp"
#include "lantern/errors.hpp"
#include "lantern/eval.hpp"
#include "lantern/model.hpp"
#include "lantern/tape.hpp"
#include "lantern/tensor.hpp"
#include "lantern/train.hpp"

namespace py = pybind11;
using namespace lantern;

namespace {

using NpArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

ad::Tensor tensor_2d(const NpArray& a, const char* what) {
  if (a.ndim() != 2) {
    throw ValidationError(std::string(what) + ": expected a 2-d array, got " +
                          std::to_string(a.ndim()) + "-d");
  }
  std::vector<double> buf(a.data(), a.data() + a.size());
  return ad::Tensor::from_data({a.shape(0), a.shape(1)}, std::move(buf));
}

py::array_t<double> array_2d(const ad::Tensor& t) {
  py::array_t<double> out({t.extent(0), t.extent(1)});
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

// kwargs-style construction for plain config structs: every key must name a
// bound field.
template <typename C>
C config_from_kwargs(const py::kwargs& kw) {
  C cfg;
  py::object view = py::cast(&cfg, py::return_value_policy::reference);
  for (auto item : kw) {
    const auto name = py::cast<std::string>(item.first);
    if (!py::hasattr(view, name.c_str())) {
      throw py::type_error("unknown config field '" + name + "'");
    }
    py::setattr(view, item.first, item.second);
  }
  return cfg;
}

std::vector<std::int64_t> all_users(const Dataset& data) {
  std::vector<std::int64_t> ids(data.records.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<std::int64_t>(i);
  return ids;
}

void check_dims(const LanternConfig& cfg, const Dataset& data) {
  if (cfg.survey_dim != data.manifest.survey_dim || cfg.external_dim != data.manifest.external_dim ||
      cfg.d_s != data.manifest.d_s()) {
    std::ostringstream msg;
    msg << "model dims (" << cfg.survey_dim << ", " << cfg.external_dim << ", " << cfg.d_s
        << ") do not match dataset (" << data.manifest.survey_dim << ", "
        << data.manifest.external_dim << ", " << data.manifest.d_s() << ")";
    throw ValidationError(msg.str());
  }
}

// A trained (or restored) model plus everything needed to keep training
// reproducible: both configs and the optimizer moments.
struct PyModel {
  LanternConfig model_cfg;
  TrainConfig train_cfg;
  LanternParams params;
  AdamState adam;
  std::vector<EpochLog> log;

  std::vector<std::int64_t> users_or_all(const Dataset& data,
                                         const std::optional<std::vector<std::int64_t>>& users) const {
    check_dims(model_cfg, data);
    return users ? *users : all_users(data);
  }

  py::tuple predict(const Dataset& data, const std::optional<std::vector<std::int64_t>>& users,
                    std::optional<Variant> variant) const {
    PredictionSet preds = collect_predictions(data, users_or_all(data, users), params,
                                              variant.value_or(train_cfg.variant));
    return py::make_tuple(array_2d(preds.y_hat), array_2d(preds.mask));
  }

  py::array_t<double> gate_values(const Dataset& data,
                                  const std::optional<std::vector<std::int64_t>>& users) const {
    if (train_cfg.variant != Variant::fused) {
      throw ValidationError("gate values exist only for the fused variant");
    }
    PredictionSet preds = collect_predictions(data, users_or_all(data, users), params, Variant::fused);
    py::array_t<double> out(static_cast<py::ssize_t>(preds.gates.size()));
    std::copy(preds.gates.begin(), preds.gates.end(), out.mutable_data());
    return out;
  }

  MetricsReport evaluate(const Dataset& data, const std::optional<std::vector<std::int64_t>>& users,
                         double threshold, Averaging avg, std::optional<Variant> variant) const {
    return evaluate_model(data, users_or_all(data, users), params,
                          variant.value_or(train_cfg.variant), threshold, avg);
  }

  std::vector<std::int64_t> held_out_users(const Dataset& data) const {
    return train_val_split(static_cast<std::int64_t>(data.records.size()), train_cfg.seed).second;
  }
};

std::string report_repr(const MetricsReport& r) {
  std::ostringstream out;
  out << "MetricsReport(precision=" << r.precision << ", recall=" << r.recall << ", f1=" << r.f1
      << ", tp=" << r.tp << ", fp=" << r.fp << ", fn=" << r.fn << ", n_scored=" << r.n_scored
      << ")";
  return out.str();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Late-fusion survey response modeling: synthetic cohorts, training, evaluation.";

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  py::enum_<Variant>(m, "Variant")
      .value("fused", Variant::fused)
      .value("survey_only", Variant::survey_only)
      .value("external_only", Variant::external_only);

  py::enum_<Averaging>(m, "Averaging")
      .value("micro", Averaging::micro)
      .value("macro", Averaging::macro);

  py::enum_<BucketCountMode>(m, "BucketCountMode")
      .value("served", BucketCountMode::served)
      .value("favorable", BucketCountMode::favorable);

  py::class_<GeneratorConfig>(m, "GeneratorConfig")
      .def(py::init(&config_from_kwargs<GeneratorConfig>))
      .def_readwrite("n_users", &GeneratorConfig::n_users)
      .def_readwrite("latent_dim", &GeneratorConfig::latent_dim)
      .def_readwrite("n_binary", &GeneratorConfig::n_binary)
      .def_readwrite("n_single", &GeneratorConfig::n_single)
      .def_readwrite("n_single_options", &GeneratorConfig::n_single_options)
      .def_readwrite("n_multi", &GeneratorConfig::n_multi)
      .def_readwrite("n_multi_options", &GeneratorConfig::n_multi_options)
      .def_readwrite("survey_dim", &GeneratorConfig::survey_dim)
      .def_readwrite("external_dim", &GeneratorConfig::external_dim)
      .def_readwrite("survey_noise_sigma", &GeneratorConfig::survey_noise_sigma)
      .def_readwrite("external_noise_sigma", &GeneratorConfig::external_noise_sigma)
      .def_readwrite("external_informative_fraction",
                     &GeneratorConfig::external_informative_fraction)
      .def_readwrite("base_serve_probability", &GeneratorConfig::base_serve_probability)
      .def_readwrite("rare_serve_probability", &GeneratorConfig::rare_serve_probability)
      .def_readwrite("rare_key_fraction", &GeneratorConfig::rare_key_fraction)
      .def_readwrite("rare_favorability_rate", &GeneratorConfig::rare_favorability_rate)
      .def_readwrite("frequent_label_noise", &GeneratorConfig::frequent_label_noise)
      .def_readwrite("seed", &GeneratorConfig::seed)
      .def_readwrite("cycle_id", &GeneratorConfig::cycle_id)
      .def("d_s", &GeneratorConfig::d_s)
      .def("n_questions", &GeneratorConfig::n_questions)
      .def("validate", &GeneratorConfig::validate);

  py::class_<LanternConfig>(m, "ModelConfig")
      .def(py::init(&config_from_kwargs<LanternConfig>))
      .def_readwrite("survey_dim", &LanternConfig::survey_dim)
      .def_readwrite("external_dim", &LanternConfig::external_dim)
      .def_readwrite("d_embed", &LanternConfig::d_embed)
      .def_readwrite("d_proj", &LanternConfig::d_proj)
      .def_readwrite("n_tokens", &LanternConfig::n_tokens)
      .def_readwrite("d_token", &LanternConfig::d_token)
      .def_readwrite("n_heads", &LanternConfig::n_heads)
      .def_readwrite("n_layers", &LanternConfig::n_layers)
      .def_readwrite("d_ffn", &LanternConfig::d_ffn)
      .def_readwrite("d_s", &LanternConfig::d_s)
      .def_readwrite("dropout_rate", &LanternConfig::dropout_rate)
      .def_readwrite("noise_sigma", &LanternConfig::noise_sigma)
      .def("head_dim", &LanternConfig::head_dim)
      .def("validate", &LanternConfig::validate)
      .def_static("production_scale", &LanternConfig::production_scale, py::arg("survey_dim"),
                  py::arg("external_dim"), py::arg("d_s"));

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init(&config_from_kwargs<TrainConfig>))
      .def_readwrite("learning_rate", &TrainConfig::learning_rate)
      .def_readwrite("beta1", &TrainConfig::beta1)
      .def_readwrite("beta2", &TrainConfig::beta2)
      .def_readwrite("epsilon", &TrainConfig::epsilon)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("steps_per_epoch", &TrainConfig::steps_per_epoch)
      .def_readwrite("validation_steps", &TrainConfig::validation_steps)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("variant", &TrainConfig::variant)
      .def("validate", &TrainConfig::validate);

  py::class_<ResponseKey>(m, "ResponseKey")
      .def_readonly("key_id", &ResponseKey::key_id)
      .def_readonly("question_id", &ResponseKey::question_id)
      .def_property_readonly("question_type",
                             [](const ResponseKey& k) { return to_string(k.question_type); })
      .def_readonly("serve_probability", &ResponseKey::serve_probability);

  py::class_<DatasetManifest>(m, "DatasetManifest")
      .def_readonly("survey_dim", &DatasetManifest::survey_dim)
      .def_readonly("external_dim", &DatasetManifest::external_dim)
      .def_readonly("cycle_id", &DatasetManifest::cycle_id)
      .def_readonly("generator_seed", &DatasetManifest::generator_seed)
      .def_readonly("keys", &DatasetManifest::keys)
      .def("d_s", &DatasetManifest::d_s);

  py::class_<Dataset>(m, "Dataset")
      .def_readonly("manifest", &Dataset::manifest)
      .def("__len__", [](const Dataset& d) { return d.records.size(); })
      .def("user_ids",
           [](const Dataset& d) {
             std::vector<std::int64_t> ids;
             ids.reserve(d.records.size());
             for (const auto& r : d.records) ids.push_back(r.user_id);
             return ids;
           })
      // (x_s, x_e, mask) as row-per-user arrays; mask entries are -1/0/+1.
      .def("tensors",
           [](const Dataset& d) {
             Batch b = assemble_batch(d, all_users(d));
             return py::make_tuple(array_2d(b.x_s), array_2d(b.x_e), array_2d(b.mask));
           })
      .def("save", &save_dataset, py::arg("dir"));

  py::class_<LabelSpaceDiff>(m, "LabelSpaceDiff")
      .def_readonly("added", &LabelSpaceDiff::added)
      .def_readonly("removed", &LabelSpaceDiff::removed)
      .def_readonly("retained", &LabelSpaceDiff::retained)
      .def_property_readonly("misaligned", &LabelSpaceDiff::misaligned);

  py::class_<FrequencyBuckets>(m, "FrequencyBuckets")
      .def_readonly("rare", &FrequencyBuckets::rare)
      .def_readonly("frequent", &FrequencyBuckets::frequent)
      .def_readonly("counts", &FrequencyBuckets::counts);

  py::class_<MetricsReport>(m, "MetricsReport")
      .def_readonly("precision", &MetricsReport::precision)
      .def_readonly("recall", &MetricsReport::recall)
      .def_readonly("f1", &MetricsReport::f1)
      .def_readonly("tp", &MetricsReport::tp)
      .def_readonly("fp", &MetricsReport::fp)
      .def_readonly("fn", &MetricsReport::fn)
      .def_readonly("threshold", &MetricsReport::threshold)
      .def_readonly("n_scored", &MetricsReport::n_scored)
      .def("__repr__", &report_repr);

  py::class_<SegmentReport>(m, "SegmentReport")
      .def_readonly("rare", &SegmentReport::rare)
      .def_readonly("frequent", &SegmentReport::frequent)
      .def_readonly("rare_keys", &SegmentReport::rare_keys)
      .def_readonly("frequent_keys", &SegmentReport::frequent_keys);

  py::class_<GateHistogram>(m, "GateHistogram")
      .def_readonly("edges", &GateHistogram::edges)
      .def_readonly("counts", &GateHistogram::counts)
      .def_readonly("mean", &GateHistogram::mean)
      .def_readonly("frac_low", &GateHistogram::frac_low)
      .def_readonly("frac_high", &GateHistogram::frac_high);

  py::class_<EpochLog>(m, "EpochLog")
      .def_readonly("epoch", &EpochLog::epoch)
      .def_readonly("train_loss", &EpochLog::train_loss)
      .def_readonly("val_loss", &EpochLog::val_loss)
      .def("__repr__", [](const EpochLog& e) {
        std::ostringstream out;
        out << "EpochLog(epoch=" << e.epoch << ", train_loss=" << e.train_loss
            << ", val_loss=" << e.val_loss << ")";
        return out.str();
      });

  py::class_<PyModel>(m, "Model")
      .def_readonly("model_config", &PyModel::model_cfg)
      .def_readonly("train_config", &PyModel::train_cfg)
      .def_readonly("log", &PyModel::log)
      .def_property_readonly("adam_steps", [](const PyModel& mdl) { return mdl.adam.t; })
      .def("parameter_count",
           [](const PyModel& mdl, std::optional<Variant> v) {
             return mdl.params.parameter_count(v.value_or(mdl.train_cfg.variant));
           },
           py::arg("variant") = py::none())
      .def("predict", &PyModel::predict, py::arg("dataset"), py::arg("users") = py::none(),
           py::arg("variant") = py::none())
      .def("gate_values", &PyModel::gate_values, py::arg("dataset"), py::arg("users") = py::none())
      .def("evaluate", &PyModel::evaluate, py::arg("dataset"), py::arg("users") = py::none(),
           py::arg("threshold") = 0.5, py::arg("averaging") = Averaging::micro,
           py::arg("variant") = py::none())
      .def("held_out_users", &PyModel::held_out_users, py::arg("dataset"))
      .def("save", [](const PyModel& mdl, const std::string& path) {
        save_checkpoint(path, mdl.params, mdl.adam, mdl.model_cfg, mdl.train_cfg);
      });

  m.def("generate_dataset", &generate_dataset, py::arg("config"));
  m.def("save_dataset", &save_dataset, py::arg("dataset"), py::arg("dir"));
  m.def("load_dataset", &load_dataset, py::arg("dir"));
  m.def("load_manifest", &load_manifest, py::arg("path"));
  m.def("label_space_diff", &label_space_diff, py::arg("a"), py::arg("b"));
  m.def(
      "frequency_buckets",
      [](const Dataset& data, std::int64_t k, BucketCountMode mode) {
        return frequency_buckets(data.records, data.manifest.d_s(), k, mode);
      },
      py::arg("dataset"), py::arg("k"), py::arg("mode") = BucketCountMode::served);

  m.def(
      "train",
      [](const Dataset& data, const TrainConfig& train_cfg, const LanternConfig& model_cfg) {
        check_dims(model_cfg, data);
        TrainResult result = train(data, train_cfg, model_cfg);
        return PyModel{model_cfg, train_cfg, std::move(result.params), std::move(result.adam),
                       std::move(result.log)};
      },
      py::arg("dataset"), py::arg("train_config"), py::arg("model_config"));
  m.def("load_checkpoint", [](const std::string& path) {
    Checkpoint cp = load_checkpoint(path);
    return PyModel{cp.model_cfg, cp.train_cfg, std::move(cp.params), std::move(cp.adam), {}};
  });
  m.def(
      "train_val_split",
      [](std::int64_t n_users, std::uint64_t seed) { return train_val_split(n_users, seed); },
      py::arg("n_users"), py::arg("seed"));

  m.def(
      "masked_bce",
      [](const NpArray& y_hat, const NpArray& mask) {
        ad::Tape tape(false);
        return masked_bce_loss(tape, tensor_2d(y_hat, "masked_bce"), tensor_2d(mask, "masked_bce"))
            .item();
      },
      py::arg("y_hat"), py::arg("mask"));
  m.def(
      "metrics_at",
      [](const NpArray& y_hat, const NpArray& mask, double threshold, Averaging avg) {
        return metrics_at(tensor_2d(y_hat, "metrics_at"), tensor_2d(mask, "metrics_at"), threshold,
                          avg);
      },
      py::arg("y_hat"), py::arg("mask"), py::arg("threshold") = 0.5,
      py::arg("averaging") = Averaging::micro);
  m.def(
      "threshold_sweep",
      [](const NpArray& y_hat, const NpArray& mask, std::optional<std::vector<double>> thresholds) {
        return threshold_sweep(tensor_2d(y_hat, "threshold_sweep"),
                               tensor_2d(mask, "threshold_sweep"),
                               thresholds.value_or(kDefaultThresholds))
            .entries;
      },
      py::arg("y_hat"), py::arg("mask"), py::arg("thresholds") = py::none());
  m.def(
      "segment_eval",
      [](const NpArray& y_hat, const NpArray& mask, const std::set<std::int64_t>& rare_keys,
         const std::set<std::int64_t>& frequent_keys, double threshold) {
        return segment_eval(tensor_2d(y_hat, "segment_eval"), tensor_2d(mask, "segment_eval"),
                            rare_keys, frequent_keys, threshold);
      },
      py::arg("y_hat"), py::arg("mask"), py::arg("rare_keys"), py::arg("frequent_keys"),
      py::arg("threshold") = 0.5);
  m.def("gate_histogram", &gate_histogram, py::arg("values"), py::arg("n_bins") = 50);
  m.attr("DEFAULT_THRESHOLDS") = kDefaultThresholds;

  m.def("sha256_hex", &sha256_hex, py::arg("data"));
  m.def("file_sha256_hex", &file_sha256_hex, py::arg("path"));
}
