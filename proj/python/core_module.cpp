#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "gradconceal/attacks.hpp"
#include "gradconceal/checkpoint.hpp"
#include "gradconceal/errors.hpp"
#include "gradconceal/eval.hpp"
#include "gradconceal/experiment.hpp"
#include "gradconceal/gcm.hpp"
#include "gradconceal/signmap.hpp"

namespace py = pybind11;
using gc::Tensor;

namespace {

using Array = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  gc::Shape shape(a.shape(), a.shape() + a.ndim());
  if (shape.empty()) shape = {1};
  return Tensor(std::move(shape), std::vector<float>(a.data(), a.data() + a.size()), gc::Finite::unchecked);
}

Array to_array(const Tensor& t) {
  Array out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

// A model, optionally wrapped in a GCM cascade; what the Python side calls a classifier.
struct PyClassifier {
  std::shared_ptr<const gc::nn::Model> model;
  std::optional<gc::gcm::Cascade> cascade;

  const gc::nn::Classifier& get() const {
    if (cascade) return *cascade;
    return *model;
  }
};

gc::attack::AttackConfig attack_config(const std::string& family, const std::string& norm, double eps, std::size_t steps,
                                       std::optional<double> step_size, std::optional<int> target, double confidence) {
  gc::attack::AttackConfig c;
  c.family = gc::attack::parse_family(family);
  c.norm = {gc::attack::parse_norm(norm), eps};
  c.steps = steps;
  c.step_size = step_size;
  c.target = target;
  c.cw.confidence = confidence;
  return c;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Gradient concealment: autodiff, GCM cascades, attacks and robustness metrics";

  auto base = py::register_exception<gc::Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<gc::ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<gc::FormatError>(m, "FormatError", base.ptr());
  py::register_exception<gc::IntegrityError>(m, "IntegrityError", base.ptr());
  py::register_exception<gc::NumericError>(m, "NumericError", base.ptr());
  py::register_exception<gc::ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<gc::ContractError>(m, "ContractError", base.ptr());
  py::register_exception<gc::IoError>(m, "IoError", base.ptr());

  m.def("gcm_apply", [](const Array& x, double w, double eps) { return to_array(gc::gcm::gcm_apply(to_tensor(x), {w, eps})); },
        py::arg("x"), py::arg("w") = 1e20, py::arg("eps") = 1e-8);
  m.def("gcm_grad_multiplier",
        [](const Array& x, double w, double eps) { return to_array(gc::gcm::gcm_grad_multiplier(to_tensor(x), {w, eps})); },
        py::arg("x"), py::arg("w") = 1e20, py::arg("eps") = 1e-8);

  m.def("project",
        [](const Array& r, const std::string& norm, double eps) {
          return to_array(gc::attack::project(to_tensor(r), {gc::attack::parse_norm(norm), eps}));
        },
        py::arg("r"), py::arg("norm"), py::arg("eps"));

  py::class_<PyClassifier>(m, "Classifier")
      .def_property_readonly("num_classes", [](const PyClassifier& c) { return c.get().num_classes(); })
      .def_property_readonly("input_shape", [](const PyClassifier& c) { return c.get().input_shape(); })
      .def_property_readonly("concealed", [](const PyClassifier& c) { return c.cascade.has_value(); })
      .def("predict", [](const PyClassifier& c, const Array& x) { return gc::nn::predict(c.get(), to_tensor(x)); })
      .def("input_gradient",
           [](const PyClassifier& c, const Array& x, const std::vector<int>& labels) {
             return to_array(gc::nn::grad_wrt_input(c.get(), to_tensor(x), labels));
           },
           py::arg("x"), py::arg("labels"))
      .def("with_gcm",
           [](const PyClassifier& c, double w, double eps, const std::string& placement) {
             return PyClassifier{c.model, gc::gcm::cascade(c.model, {w, eps}, gc::gcm::Placement::parse(placement))};
           },
           py::arg("w") = 1e20, py::arg("eps") = 1e-8, py::arg("placement") = "front")
      .def("save", [](const PyClassifier& c, const std::filesystem::path& p) { gc::nn::save_checkpoint(*c.model, p); });

  m.def("build_smallcnn",
        [](std::vector<std::size_t> input_shape, std::uint64_t seed) {
          auto arch = gc::nn::ArchSpec::smallcnn(input_shape);
          return PyClassifier{std::make_shared<const gc::nn::Model>(gc::nn::build_model(arch, seed)), std::nullopt};
        },
        py::arg("input_shape") = std::vector<std::size_t>{28, 28, 1}, py::arg("seed") = 0);
  m.def("load_checkpoint", [](const std::filesystem::path& p) {
    return PyClassifier{std::make_shared<const gc::nn::Model>(gc::nn::load_checkpoint(p)), std::nullopt};
  });

  m.def("attack",
        [](const PyClassifier& c, const Array& x, const std::vector<int>& y, const std::string& family, const std::string& norm,
           double eps, std::size_t steps, std::optional<double> step_size, std::optional<int> target, double confidence) {
          const auto cfg = attack_config(family, norm, eps, steps, step_size, target, confidence);
          const auto adv = gc::attack::run_attack(c.get(), to_tensor(x), y, cfg);
          return py::make_tuple(to_array(adv.x_adv), adv.perturbation_norm, adv.success);
        },
        py::arg("classifier"), py::arg("x"), py::arg("y"), py::arg("family") = "pgd", py::arg("norm") = "linf",
        py::arg("eps") = 8.0 / 255.0, py::arg("steps") = 10, py::arg("step_size") = py::none(), py::arg("target") = py::none(),
        py::arg("confidence") = 0.0,
        "Returns (x_adv, per-sample perturbation norms, per-sample success flags).");

  m.def("accuracy", py::overload_cast<const std::vector<bool>&>(&gc::eval::accuracy), py::arg("clean_correct"));
  m.def("attack_robustness", py::overload_cast<const std::vector<bool>&, const std::vector<bool>&>(&gc::eval::attack_robustness),
        py::arg("clean_correct"), py::arg("adv_correct"));

  m.def("sign_map", [](const Array& g) { return to_array(gc::viz::sign_map(to_tensor(g))); });
  m.def("render_sign_map", [](const Array& g, const std::filesystem::path& stem) { return gc::viz::render_sign_map(to_tensor(g), stem); });
  m.def("local_sign_entropy", [](const std::filesystem::path& pgm) { return gc::viz::local_sign_entropy(gc::viz::read_pgm(pgm)); });

  m.def("run_experiment",
        [](const std::filesystem::path& config, std::optional<std::filesystem::path> out) {
          auto cfg = gc::exp::load_config(config);
          if (out) cfg.output_dir = *out;
          cfg.require_inputs();
          const auto splits = gc::exp::load_splits(cfg);
          const auto model = gc::exp::obtain_model(cfg, splits.train);
          return gc::exp::run_experiment(cfg, model, splits.test).summary.to_json_text();
        },
        py::arg("config"), py::arg("out") = py::none(),
        "Trains or loads the configured model, evaluates every attack and returns summary JSON text.");
}
