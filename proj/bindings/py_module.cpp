// pybind11 bindings over the core: tensor ops, scene generation, model
// forward passes, training, and the gradient check.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "tjstg/gradcheck.h"
#include "tjstg/train.h"

namespace py = pybind11;
using namespace tjstg;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const DoubleArray& arr) {
  py::buffer_info info = arr.request();
  std::vector<std::size_t> shape(info.shape.begin(), info.shape.end());
  if (shape.empty()) shape = {1};
  std::vector<double> data(static_cast<const double*>(info.ptr),
                           static_cast<const double*>(info.ptr) + info.size);
  return Tensor(std::move(shape), std::move(data));
}

py::array_t<double> to_array(const Tensor& t) {
  py::array_t<double> arr(t.shape());
  std::copy(t.data(), t.data() + t.size(), arr.mutable_data());
  return arr;
}

// Run a unary/binary forward op through a throwaway tape.
py::array_t<double> py_softmax(const DoubleArray& x) {
  ad::Graph g;
  return to_array(g.value(ad::softmax(g.constant(to_tensor(x)))));
}

double py_kl(const DoubleArray& p, const DoubleArray& q) {
  ad::Graph g;
  return g.value(ad::kl_divergence(g.constant(to_tensor(p)),
                                   g.constant(to_tensor(q))))
      .item();
}

double py_js(const DoubleArray& p, const DoubleArray& q) {
  ad::Graph g;
  return g.value(ad::js_divergence(g.constant(to_tensor(p)),
                                   g.constant(to_tensor(q))))
      .item();
}

py::dict scene_to_dict(const SyntheticScene& s) {
  py::dict d;
  d["audio"] = to_array(s.audio);
  d["visual"] = to_array(s.visual_map);
  d["question"] = to_array(s.question_words);
  d["target_word_index"] = s.target_word_index;
  d["gt_spatial"] = to_array(s.gt_spatial);
  d["gt_temporal"] = to_array(s.gt_temporal);
  d["answer"] = s.answer;
  d["question_type"] = std::string(to_string(s.kind));
  return d;
}

SyntheticScene scene_from_arrays(const DoubleArray& audio, const DoubleArray& visual,
                                 const DoubleArray& question) {
  SyntheticScene s;
  s.audio = to_tensor(audio);
  s.visual_map = to_tensor(visual);
  s.question_words = to_tensor(question);
  if (s.visual_map.rank() != 4)
    throw ShapeError("visual must be T x h x w x d, got " + s.visual_map.shape_str());
  return s;
}

// ParamSet + ModelConfig behind a single handle for python callers.
struct PyModel {
  ParamSet params;
  ModelConfig cfg;

  static PyModel init(const ModelConfig& cfg, std::uint64_t seed) {
    return {ParamSet::init(cfg, seed), cfg};
  }
  static PyModel load(const std::string& dir) {
    auto [params, cfg] = load_checkpoint(dir);
    return {std::move(params), cfg};
  }
  void save(const std::string& dir) const { save_checkpoint(dir, params, cfg); }

  py::array_t<double> predict(const DoubleArray& audio, const DoubleArray& visual,
                              const DoubleArray& question) const {
    const SyntheticScene scene = scene_from_arrays(audio, visual, question);
    ad::Graph g;
    Bound bound = params.bind(g);
    return to_array(g.value(run_model(g, bound, cfg, scene).probs));
  }

  py::dict attention(const DoubleArray& audio, const DoubleArray& visual,
                     const DoubleArray& question) const {
    const SyntheticScene scene = scene_from_arrays(audio, visual, question);
    ad::Graph g;
    Bound bound = params.bind(g);
    ModelOutputs out = run_model(g, bound, cfg, scene);
    const auto& vshape = scene.visual_map.shape();
    Tensor spatial({vshape[0], vshape[1], vshape[2]});
    for (std::size_t t = 0; t < out.spatial.size(); ++t) {
      const Tensor& w = g.value(out.spatial[t].combined);
      std::copy(w.data(), w.data() + w.size(),
                spatial.data() + t * vshape[1] * vshape[2]);
    }
    py::dict d;
    d["spatial"] = to_array(spatial);
    d["w_av"] = to_array(g.value(out.temporal.weights));
    d["w_a"] = to_array(g.value(out.modal.audio));
    d["w_v"] = to_array(g.value(out.modal.visual));
    d["probs"] = to_array(g.value(out.probs));
    d["target_word_index"] = out.question.target_index;
    return d;
  }

  std::vector<std::string> param_names() const { return params.names(); }
};

py::dict report_to_dict(const EvalReport& r) {
  py::dict d;
  d["accuracy"] = r.accuracy;
  d["count"] = r.count;
  d["mean_js"] = r.mean_js;
  d["per_type"] = r.per_type;
  return d;
}

py::dict py_train_two_stage(const std::string& data_dir, const std::string& out_dir,
                            const ModelConfig& mcfg, const TrainConfig& tcfg) {
  const Dataset ds = Dataset::load(data_dir);
  Stage1Result s1 = train_stage1(ds, mcfg, tcfg);
  Stage2Result s2 = train_stage2(ds, mcfg, tcfg, s1.params);
  if (!out_dir.empty()) {
    save_checkpoint(out_dir + "/checkpoint", s2.params, mcfg);
    write_stage1_csv(out_dir + "/metrics_stage1.csv", s1.history);
    write_stage2_csv(out_dir + "/metrics.csv", s2.history);
  }
  const EvalReport report = evaluate(ds, "test", s2.params, mcfg);
  py::dict d;
  d["stage1_loss"] = s1.history.back().loss_s;
  d["stage1_match_acc"] = s1.history.back().match_acc;
  d["train_acc"] = s2.history.back().train_acc;
  d["val_acc"] = s2.history.back().val_acc;
  d["test"] = report_to_dict(report);
  return d;
}

double py_gradcheck(double eps, std::uint64_t seed) {
  double worst = 0.0;
  for (const GradCheckCase& c : gradcheck_tiny_model(eps, seed))
    worst = std::max(worst, c.report.max_rel_err);
  return worst;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "audio-visual grounding network on synthetic scenes";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_IOError);

  m.def("softmax", &py_softmax, py::arg("x"),
        "stable softmax over the last axis");
  m.def("kl_divergence", &py_kl, py::arg("p"), py::arg("q"));
  m.def("js_divergence", &py_js, py::arg("p"), py::arg("q"));

  m.def("save_tensor", [](const std::string& path, const DoubleArray& arr) {
    write_tensor(path, to_tensor(arr));
  });
  m.def("load_tensor",
        [](const std::string& path) { return to_array(read_tensor(path)); });

  py::enum_<QuestionKind>(m, "QuestionKind")
      .value("counting", QuestionKind::kCounting)
      .value("existential", QuestionKind::kExistential);

  py::class_<TaskConfig>(m, "TaskConfig")
      .def(py::init<>())
      .def_readwrite("segments", &TaskConfig::segments)
      .def_readwrite("words", &TaskConfig::words)
      .def_readwrite("grid_h", &TaskConfig::grid_h)
      .def_readwrite("grid_w", &TaskConfig::grid_w)
      .def_readwrite("dim", &TaskConfig::dim)
      .def_readwrite("answers", &TaskConfig::answers)
      .def_readwrite("concepts", &TaskConfig::concepts)
      .def_readwrite("noise_sigma", &TaskConfig::noise_sigma)
      .def_readwrite("seed", &TaskConfig::seed)
      .def_readwrite("task", &TaskConfig::task);

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("dim", &ModelConfig::dim)
      .def_readwrite("answers", &ModelConfig::answers)
      .def_readwrite("heads", &ModelConfig::heads)
      .def_readwrite("tau", &ModelConfig::tau)
      .def_readwrite("target_aware", &ModelConfig::target_aware)
      .def_readwrite("csl_enabled", &ModelConfig::csl_enabled)
      .def_readwrite("renormalize_spatial", &ModelConfig::renormalize_spatial)
      .def_readwrite("lambda_match", &ModelConfig::lambda_match)
      .def_property(
          "order",
          [](const ModelConfig& c) { return std::string(to_string(c.order)); },
          [](ModelConfig& c, const std::string& s) {
            c.order = interleave_order_from_string(s);
          });

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("stage1_epochs", &TrainConfig::stage1_epochs)
      .def_readwrite("lr0", &TrainConfig::lr0)
      .def_readwrite("lr_drop_every", &TrainConfig::lr_drop_every)
      .def_readwrite("lr_factor", &TrainConfig::lr_factor)
      .def_readwrite("grad_clip", &TrainConfig::grad_clip)
      .def_readwrite("seed", &TrainConfig::seed);

  m.def("lr_schedule", &lr_schedule, py::arg("epoch"), py::arg("config"));

  m.def(
      "generate_scene",
      [](const TaskConfig& cfg, std::uint64_t index) {
        return scene_to_dict(gen_scene(cfg, index));
      },
      py::arg("config"), py::arg("index") = 0);
  m.def("generate_dataset", &gen_dataset, py::arg("config"), py::arg("n_train"),
        py::arg("n_val"), py::arg("n_test"), py::arg("negative_fraction") = 0.5,
        py::arg("out_dir"));

  py::class_<PyModel>(m, "Model")
      .def_static("init", &PyModel::init, py::arg("config"), py::arg("seed") = 0)
      .def_static("load", &PyModel::load, py::arg("checkpoint_dir"))
      .def("save", &PyModel::save, py::arg("checkpoint_dir"))
      .def("predict", &PyModel::predict, py::arg("audio"), py::arg("visual"),
           py::arg("question"))
      .def("attention", &PyModel::attention, py::arg("audio"), py::arg("visual"),
           py::arg("question"))
      .def_property_readonly("param_names", &PyModel::param_names)
      .def_property_readonly("config", [](const PyModel& p) { return p.cfg; });

  m.def("train_two_stage", &py_train_two_stage, py::arg("data_dir"),
        py::arg("out_dir") = std::string(), py::arg("model_config"),
        py::arg("train_config"));
  m.def(
      "evaluate",
      [](const std::string& data_dir, const std::string& ckpt,
         const std::string& split) {
        const Dataset ds = Dataset::load(data_dir);
        auto [params, cfg] = load_checkpoint(ckpt);
        return report_to_dict(evaluate(ds, split, params, cfg));
      },
      py::arg("data_dir"), py::arg("checkpoint_dir"), py::arg("split") = "test");

  m.def("gradcheck_tiny", &py_gradcheck, py::arg("eps") = 1e-5,
        py::arg("seed") = 11,
        "max relative gradient error across losses and parameter groups");
}
