#include "gradconceal/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "gradconceal/errors.hpp"
#include "json.hpp"

namespace gc::exp {

using nlohmann::json;

std::string_view to_string(SweepKind k) {
  switch (k) {
    case SweepKind::eps: return "eps";
    case SweepKind::w: return "w";
    case SweepKind::position: return "position";
  }
  return "?";
}

double parse_budget(std::string_view text) {
  auto number = [&](std::string_view s) {
    try {
      std::size_t used = 0;
      const double v = std::stod(std::string(s), &used);
      if (used != s.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw ConfigError("cannot parse budget '" + std::string(text) + "'");
    }
  };
  const auto slash = text.find('/');
  if (slash == std::string_view::npos) return number(text);
  const double den = number(text.substr(slash + 1));
  if (den == 0.0) throw ConfigError("budget '" + std::string(text) + "' divides by zero");
  return number(text.substr(0, slash)) / den;
}

void ExperimentConfig::validate() const {
  if (dataset.num_classes < 2) throw ConfigError("need at least two classes");
  train.validate();
  for (const auto& a : attacks) a.validate(dataset.num_classes);
  if (gcm) gcm->validate();
  if (eval.batch_size == 0 || eval.workers == 0) throw ConfigError("eval batch_size and workers must be positive");
  if (signmap.count == 0) throw ConfigError("signmap count must be positive");
  if (sweep) {
    if (sweep->kind == SweepKind::position ? sweep->placements.empty() : sweep->values.empty())
      throw ConfigError("sweep grid is empty");
    if (sweep->attack >= attacks.size()) throw ConfigError("sweep attack index out of range");
    for (double v : sweep->values) {
      if (sweep->kind == SweepKind::eps && !(v > 0.0 && v <= 1e-3))
        throw ConfigError("eps sweep values must lie in (0, 1e-3]");
      if (sweep->kind == SweepKind::w && !(v >= 1e10 && v <= 1e20))
        throw ConfigError("w sweep values must lie in [1e10, 1e20]");
    }
  }
}

void ExperimentConfig::require_inputs() const {
  for (const auto* p : {&dataset.train_images, &dataset.train_labels, &dataset.test_images, &dataset.test_labels})
    if (p->empty() || !std::filesystem::exists(*p)) throw ConfigError("dataset file not found: " + p->string());
}

void ExperimentConfig::set_seed(std::uint64_t s) {
  seed = s;
  train.seed = s;
  eval.seed = s;
}

namespace {

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

double budget_of(const json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) return parse_budget(j.get<std::string>());
  throw ConfigError("budget must be a number or a fraction string");
}

attack::AttackConfig parse_attack(const json& j) {
  attack::AttackConfig a;
  a.family = attack::parse_family(j.at("family").get<std::string>());
  a.norm.p = attack::parse_norm(j.value("norm", a.family == attack::Family::cw ? "l2" : "linf"));
  a.norm.eps = budget_of(j.at("eps"));
  if (j.contains("target") && !j.at("target").is_null()) a.target = j.at("target").get<int>();
  a.steps = j.value("steps", a.steps);
  if (j.contains("step_size")) a.step_size = budget_of(j.at("step_size"));
  if (j.contains("cw")) {
    const auto& c = j.at("cw");
    a.cw.binary_search_steps = c.value("binary_search_steps", a.cw.binary_search_steps);
    a.cw.learning_rate = c.value("learning_rate", a.cw.learning_rate);
    a.cw.iterations = c.value("iterations", a.cw.iterations);
    a.cw.confidence = c.value("confidence", a.cw.confidence);
    a.cw.c_init = c.value("c_init", a.cw.c_init);
    a.cw.c_max = c.value("c_max", a.cw.c_max);
  }
  return a;
}

nn::ArchSpec parse_arch(const json& j) {
  const auto name = j.at("arch").get<std::string>();
  if (name == "smallcnn") {
    return nn::ArchSpec::smallcnn(j.value("input_shape", Shape{28, 28, 1}),
                                  j.value("channels", std::vector<std::size_t>{8, 16}), j.value("num_classes", 10u));
  }
  if (name == "mlp") return nn::ArchSpec::mlp(j.at("widths").get<std::vector<std::size_t>>(), j.value("input_shape", Shape{}));
  throw ConfigError("unknown architecture '" + name + "'");
}

}  // namespace

ExperimentConfig parse_config(std::string_view json_text, const std::filesystem::path& base_dir) {
  ExperimentConfig cfg;
  try {
    const json root = json::parse(json_text);

    const auto& d = root.at("dataset");
    const auto format = d.value("format", std::string("idx"));
    if (format == "idx") cfg.dataset.format = data::Format::idx;
    else if (format == "raw-tensor" || format == "raw") cfg.dataset.format = data::Format::raw_tensor;
    else throw ConfigError("unknown dataset format '" + format + "'");
    cfg.dataset.train_images = resolve(base_dir, d.at("train_images").get<std::string>());
    cfg.dataset.train_labels = resolve(base_dir, d.at("train_labels").get<std::string>());
    cfg.dataset.test_images = resolve(base_dir, d.at("test_images").get<std::string>());
    cfg.dataset.test_labels = resolve(base_dir, d.at("test_labels").get<std::string>());
    cfg.dataset.num_classes = d.value("num_classes", cfg.dataset.num_classes);
    cfg.dataset.train_limit = d.value("train_limit", cfg.dataset.train_limit);
    cfg.dataset.test_limit = d.value("test_limit", cfg.dataset.test_limit);

    if (root.contains("model")) cfg.arch = parse_arch(root.at("model"));
    if (root.contains("checkpoint") && !root.at("checkpoint").is_null())
      cfg.checkpoint = resolve(base_dir, root.at("checkpoint").get<std::string>());

    if (root.contains("train")) {
      const auto& t = root.at("train");
      cfg.train.learning_rate = t.value("lr", cfg.train.learning_rate);
      cfg.train.epochs = t.value("epochs", cfg.train.epochs);
      cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
    }

    for (const auto& a : root.value("attacks", json::array())) cfg.attacks.push_back(parse_attack(a));

    if (root.contains("gcm") && !root.at("gcm").is_null()) {
      const auto& g = root.at("gcm");
      gcm::GcmConfig gc;
      gc.w = g.value("w", gc.w);
      gc.eps = g.value("eps", gc.eps);
      cfg.gcm = gc;
      if (g.contains("placement")) cfg.placement = gcm::Placement::parse(g.at("placement").get<std::string>());
    }

    if (root.contains("eval")) {
      const auto& e = root.at("eval");
      cfg.eval.batch_size = e.value("batch_size", cfg.eval.batch_size);
      cfg.eval.workers = e.value("workers", cfg.eval.workers);
      cfg.eval.limit = e.value("limit", cfg.eval.limit);
      if (e.contains("per_class_cap") && !e.at("per_class_cap").is_null())
        cfg.eval.per_class_cap = e.at("per_class_cap").get<std::size_t>();
    }

    if (root.contains("sweep") && !root.at("sweep").is_null()) {
      const auto& s = root.at("sweep");
      SweepConfig sw;
      const auto kind = s.at("kind").get<std::string>();
      if (kind == "eps") sw.kind = SweepKind::eps;
      else if (kind == "w") sw.kind = SweepKind::w;
      else if (kind == "position") sw.kind = SweepKind::position;
      else throw ConfigError("unknown sweep kind '" + kind + "'");
      for (const auto& v : s.at("grid")) {
        if (sw.kind == SweepKind::position) sw.placements.push_back(gcm::Placement::parse(v.get<std::string>()));
        else sw.values.push_back(budget_of(v));
      }
      sw.attack = s.value("attack", std::size_t{0});
      cfg.sweep = std::move(sw);
    }

    if (root.contains("signmap")) cfg.signmap.count = root.at("signmap").value("count", cfg.signmap.count);
    if (root.contains("output_dir")) cfg.output_dir = resolve(base_dir, root.at("output_dir").get<std::string>());
    cfg.set_seed(root.value("seed", std::uint64_t{0}));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path());
}

}  // namespace gc::exp
