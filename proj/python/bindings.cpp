#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "evx/dataset.hpp"
#include "evx/error.hpp"
#include "evx/evaluation.hpp"
#include "evx/explainer.hpp"
#include "evx/model.hpp"
#include "evx/study.hpp"
#include "evx/synth.hpp"
#include "evx/train.hpp"
#include "evx/version.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

py::object to_py(const json& doc) {
  return py::module_::import("json").attr("loads")(doc.dump());
}

json from_py(const py::object& obj) {
  return json::parse(py::module_::import("json").attr("dumps")(obj).cast<std::string>());
}

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

py::array_t<double> to_numpy(const evx::Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

evx::Tensor from_numpy(const Array& a) {
  evx::Shape shape(a.shape(), a.shape() + a.ndim());
  return evx::Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

evx::GradientSource parse_gradient(const std::string& name) {
  if (name == "score") return evx::GradientSource::ClassScore;
  if (name == "loss") return evx::GradientSource::Loss;
  evx::fail(evx::ErrorCode::ParamError, "gradient must be 'score' or 'loss'");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Explainable event recognition core";
  m.attr("__version__") = evx::version();

  static py::exception<evx::Error> error_type(m, "Error");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const evx::Error& e) {
      py::set_error(error_type, (std::string(e.code_name()) + ": " + e.what()).c_str());
    }
  });

  // dataset
  m.def(
      "scan",
      [](const fs::path& root, std::uint64_t seed, double train, double val, double test) {
        return to_py(evx::manifest_to_json(evx::scan(root, seed, {train, val, test})));
      },
      py::arg("root"), py::arg("seed") = evx::kDefaultSplitSeed, py::arg("train") = 0.70,
      py::arg("val") = 0.15, py::arg("test") = 0.15,
      "Index <root>/<class>/<images> and return the manifest as a dict.");
  m.def(
      "load_batch",
      [](const py::object& manifest, const std::string& split,
         const std::vector<std::size_t>& indices, std::size_t input_size) {
        const auto man = evx::manifest_from_json(from_py(manifest));
        const evx::Batch b = evx::load_batch(man, evx::parse_split(split), indices, input_size);
        return py::make_tuple(to_numpy(b.images), b.labels, b.sample_ids);
      },
      py::arg("manifest"), py::arg("split"), py::arg("indices"), py::arg("input_size"));
  m.def("normalize_pixel", &evx::normalize_pixel);
  m.def(
      "write_toy_dataset",
      [](const fs::path& root, std::size_t per_class, std::size_t size, std::uint64_t seed) {
        const auto ds = evx::write_toy_dataset(root, per_class, size, seed);
        return ds.class_names;
      },
      py::arg("root"), py::arg("per_class"), py::arg("size"), py::arg("seed"));

  // model
  py::class_<evx::ModelBundle>(m, "Model")
      .def_static(
          "build",
          [](const py::dict& config, std::vector<std::string> class_names) {
            json doc = evx::config_to_json(evx::ModelConfig{});
            const json overrides = from_py(config);
            for (auto& [k, v] : overrides.items()) doc[k] = v;
            return evx::build(evx::config_from_json(doc), std::move(class_names));
          },
          py::arg("config") = py::dict(), py::arg("class_names") = std::vector<std::string>{})
      .def_static("load", &evx::load_checkpoint, py::arg("path"))
      .def("save", [](const evx::ModelBundle& b, const fs::path& p) { evx::save_checkpoint(b, p); })
      .def_property_readonly("config",
                             [](const evx::ModelBundle& b) { return to_py(evx::config_to_json(b.config)); })
      .def_property_readonly("class_names", [](const evx::ModelBundle& b) { return b.class_names; })
      .def_property_readonly("layer_names",
                             [](const evx::ModelBundle& b) { return b.network.layer_names(); })
      .def("logits",
           [](const evx::ModelBundle& b, const Array& images) {
             return to_numpy(b.logits(from_numpy(images)));
           })
      .def("predict",
           [](const evx::ModelBundle& b, const Array& images) {
             const evx::Prediction p = evx::predict(b, from_numpy(images));
             return py::make_tuple(p.class_ids, to_numpy(p.probabilities));
           })
      .def(
          "finetune",
          [](evx::ModelBundle& b, const py::object& manifest) {
            const auto man = evx::manifest_from_json(from_py(manifest));
            evx::TrainRecord r;
            {
              py::gil_scoped_release release;
              r = evx::finetune(b, man);
            }
            json epochs = json::array();
            for (const auto& e : r.epochs) epochs.push_back(evx::epoch_to_json(e));
            return to_py({{"epochs", epochs}, {"best_epoch", r.best_epoch},
                          {"best_val_f1", r.best_val_f1}});
          },
          py::arg("manifest"))
      .def(
          "evaluate",
          [](const evx::ModelBundle& b, const py::object& manifest, const std::string& split) {
            const auto man = evx::manifest_from_json(from_py(manifest));
            return to_py(evx::report_to_json(evx::evaluate(b, man, evx::parse_split(split))));
          },
          py::arg("manifest"), py::arg("split") = "test")
      .def(
          "grad_cam",
          [](const evx::ModelBundle& b, const Array& image, int target, const std::string& gradient) {
            return to_numpy(evx::grad_cam(b, from_numpy(image), target, parse_gradient(gradient)).grid);
          },
          py::arg("image"), py::arg("target_class"), py::arg("gradient") = "score",
          "Normalized Grad-CAM map at the model input resolution.")
      .def(
          "grad_cam_weights",
          [](const evx::ModelBundle& b, const Array& image, int target) {
            return evx::grad_cam_trace(b, from_numpy(image), target).weights.alpha;
          },
          py::arg("image"), py::arg("target_class"))
      .def(
          "cam",
          [](const evx::ModelBundle& b, const Array& image, int target) {
            return to_numpy(evx::cam(b, from_numpy(image), target).grid);
          },
          py::arg("image"), py::arg("target_class"));

  m.def(
      "normalize_map",
      [](const Array& raw) { return to_numpy(evx::normalize_map(from_numpy(raw))); },
      py::arg("raw"));

  // evaluation
  m.def(
      "compute_report",
      [](const std::vector<int>& truth, const std::vector<int>& predicted,
         std::vector<std::string> class_names) {
        return to_py(evx::report_to_json(evx::compute_report(truth, predicted, std::move(class_names))));
      },
      py::arg("truth"), py::arg("predicted"), py::arg("class_names"));
  m.def(
      "render_report_table",
      [](const py::object& report) {
        return evx::render_report_table(evx::report_from_json(from_py(report)));
      },
      py::arg("report"));

  // study
  m.def("majority_label", [](const std::vector<int>& labels) { return evx::majority_label(labels); });

  py::class_<evx::StudyService>(m, "StudyService")
      .def(py::init<fs::path>(), py::arg("state_dir"))
      .def(
          "create_study",
          [](evx::StudyService& s, const py::object& report, const fs::path& image_root,
             const fs::path& overlay_dir, std::size_t votes_needed) {
            return s.create_study(
                evx::report_from_json(from_py(report)), image_root,
                [&](const std::string& id) -> std::optional<fs::path> {
                  fs::path p = evx::overlay_file(overlay_dir, id);
                  if (fs::is_regular_file(p)) return p;
                  return std::nullopt;
                },
                votes_needed);
          },
          py::arg("report"), py::arg("image_root"), py::arg("overlay_dir"),
          py::arg("votes_needed") = evx::kDefaultVotesNeeded)
      .def("register_annotator", &evx::StudyService::register_annotator)
      .def("study_ids", &evx::StudyService::study_ids)
      .def("next_task",
           [](const evx::StudyService& s, const std::string& study, const std::string& annotator)
               -> py::object {
             const auto d = s.next_task(study, annotator);
             if (!d.task) return py::none();
             py::dict out;
             out["sample_id"] = d.task->sample_id;
             out["class_name"] = d.task->class_name;
             out["votes"] = d.votes;
             return out;
           })
      .def("submit_vote",
           [](evx::StudyService& s, const std::string& study, const std::string& annotator,
              const std::string& sample, int label) {
             const auto r = s.submit_vote(study, annotator, sample, label);
             return py::make_tuple(r.votes, r.resolved_label);
           })
      .def("report", [](const evx::StudyService& s, const std::string& study) {
        return to_py(evx::study_report_to_json(s.report(study)));
      });
}
