#include "gradconceal/experiment.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "gradconceal/checkpoint.hpp"
#include "gradconceal/errors.hpp"
#include "gradconceal/gcm.hpp"
#include "gradconceal/signmap.hpp"
#include "gradconceal/train.hpp"
#include "json.hpp"

namespace gc::exp {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void stage(const Hooks& h, std::string_view name) {
  if (h.stage) h.stage(name);
}

void note(const Hooks& h, const std::string& text) {
  if (h.note) h.note(text);
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string percent(const std::optional<double>& v) {
  if (!v) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * *v);
  return buf;
}

std::string pad(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

double clean_accuracy(const nn::Classifier& model, const data::Dataset& test, const eval::EvalOptions& opts) {
  const auto rows = eval::select_samples(test, opts);
  return nn::evaluate_accuracy(model, test.subset(rows), opts.batch_size);
}

std::string fixed_key(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

}  // namespace

std::string slug(std::string_view text) {
  std::string out;
  for (char c : text) {
    const bool keep = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' ||
                      c == '.' || c == '_' || c == '+';
    out.push_back(keep ? c : '_');
  }
  return out;
}

Splits load_splits(const ExperimentConfig& cfg) {
  cfg.require_inputs();
  const auto& d = cfg.dataset;
  Splits s{data::load_dataset(d.train_images, d.train_labels, d.format, d.num_classes),
           data::load_dataset(d.test_images, d.test_labels, d.format, d.num_classes)};
  if (d.train_limit > 0 && d.train_limit < s.train.size()) s.train = s.train.head(d.train_limit);
  if (d.test_limit > 0 && d.test_limit < s.test.size()) s.test = s.test.head(d.test_limit);
  return s;
}

namespace {

nn::Model fit(const ExperimentConfig& cfg, const data::Dataset& train, const Hooks& hooks, json* log) {
  nn::Model model = nn::build_model(cfg.arch, cfg.seed);
  return nn::train(std::move(model), train, cfg.train, [&](std::size_t epoch, double loss) {
    note(hooks, "epoch " + std::to_string(epoch + 1) + " mean loss " + std::to_string(loss));
    if (log) log->push_back({{"epoch", epoch + 1}, {"loss", loss}});
  });
}

}  // namespace

std::shared_ptr<const nn::Model> obtain_model(const ExperimentConfig& cfg, const data::Dataset& train,
                                              const Hooks& hooks) {
  if (cfg.checkpoint && fs::exists(*cfg.checkpoint)) {
    stage(hooks, "load-checkpoint");
    auto model = nn::load_checkpoint(*cfg.checkpoint);
    if (!(model.arch() == cfg.arch)) throw ConfigError("checkpoint architecture differs from the configured model");
    return std::make_shared<const nn::Model>(std::move(model));
  }
  stage(hooks, "train");
  auto model = fit(cfg, train, hooks, nullptr);
  if (cfg.checkpoint) {
    if (cfg.checkpoint->has_parent_path()) fs::create_directories(cfg.checkpoint->parent_path());
    nn::save_checkpoint(model, *cfg.checkpoint);
  }
  return std::make_shared<const nn::Model>(std::move(model));
}

std::shared_ptr<const nn::Model> train_command(const ExperimentConfig& cfg, const Splits& splits, const Hooks& hooks) {
  stage(hooks, "train");
  json epochs = json::array();
  const auto start = std::chrono::steady_clock::now();
  auto model = fit(cfg, splits.train, hooks, &epochs);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  stage(hooks, "write-checkpoint");
  fs::create_directories(cfg.output_dir);
  nn::save_checkpoint(model, cfg.output_dir / "model.gcmb");
  if (cfg.checkpoint) {
    if (cfg.checkpoint->has_parent_path()) fs::create_directories(cfg.checkpoint->parent_path());
    nn::save_checkpoint(model, *cfg.checkpoint);
  }
  stage(hooks, "evaluate-clean");
  const double acc = nn::evaluate_accuracy(model, splits.test);
  note(hooks, "test accuracy " + std::to_string(acc));
  const json j = {{"arch", json::parse(cfg.arch.to_text())},
                  {"epochs", epochs},
                  {"seed", cfg.seed},
                  {"test_accuracy", acc},
                  {"test_samples", splits.test.size()}};
  write_text(cfg.output_dir / "train.json", j.dump(1) + "\n");
  write_text(cfg.output_dir / "metadata.json", json({{"train_seconds", seconds}}).dump(1) + "\n");
  return std::make_shared<const nn::Model>(std::move(model));
}

std::string Summary::to_json_text() const {
  auto rows = [&](const std::vector<SummaryRow>& rs) {
    json out = json::array();
    for (const auto& r : rs) {
      json ar = json::object();
      for (std::size_t a = 0; a < attacks.size(); ++a) ar[attacks[a]] = optional_number(r.ar[a]);
      out.push_back({{"model", r.model}, {"acc", r.acc}, {"ar", ar}});
    }
    return out;
  };
  const json j = {{"num_samples", num_samples}, {"attacks", attacks}, {"vanilla", rows(vanilla)}, {"gcm", rows(concealed)}};
  return j.dump(1) + "\n";
}

std::string Summary::to_text() const {
  std::size_t name_w = 5;
  for (const auto* rs : {&vanilla, &concealed})
    for (const auto& r : *rs) name_w = std::max(name_w, r.model.size());
  name_w += 2;
  std::vector<std::size_t> col_w;
  for (const auto& a : attacks) col_w.push_back(std::max<std::size_t>(a.size(), 6) + 2);

  std::ostringstream os;
  os << "Clean accuracy (ACC) and attack robustness (AR) in percent over " << num_samples << " test samples\n";
  std::string header = pad("model", name_w) + pad("ACC", 8);
  for (std::size_t a = 0; a < attacks.size(); ++a) header += pad(attacks[a], col_w[a]);
  while (!header.empty() && header.back() == ' ') header.pop_back();
  const std::string rule(header.size(), '-');
  os << header << '\n' << rule << '\n';
  auto emit = [&](const std::vector<SummaryRow>& rs) {
    for (const auto& r : rs) {
      std::string line = pad(r.model, name_w) + pad(percent(r.acc), 8);
      for (std::size_t a = 0; a < attacks.size(); ++a) line += pad(percent(r.ar[a]), col_w[a]);
      while (!line.empty() && line.back() == ' ') line.pop_back();
      os << line << '\n';
    }
  };
  emit(vanilla);
  if (!concealed.empty()) {
    os << rule << '\n';
    emit(concealed);
  }
  return os.str();
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, std::shared_ptr<const nn::Model> model,
                                const data::Dataset& test, GcmSide side, const Hooks& hooks) {
  cfg.validate();
  const gcm::GcmConfig gcm_cfg = cfg.gcm.value_or(gcm::GcmConfig{});
  const bool run_vanilla = side != GcmSide::on;
  const bool run_gcm = side == GcmSide::on || (side == GcmSide::both && cfg.gcm.has_value());

  ExperimentResult result;
  json timings = json::object();
  result.summary.num_samples = eval::select_samples(test, cfg.eval).size();
  for (const auto& a : cfg.attacks) result.summary.attacks.push_back(a.describe());

  auto run_side = [&](const nn::Classifier& evaluated, const std::string& name, std::vector<SummaryRow>& rows) {
    stage(hooks, "evaluate-clean:" + name);
    SummaryRow row{name, clean_accuracy(evaluated, test, cfg.eval), {}};
    for (const auto& a : cfg.attacks) {
      stage(hooks, "attack:" + name + ":" + a.describe());
      auto report = eval::evaluate(evaluated, name, test, a, cfg.eval);
      note(hooks, name + " " + report.attack + " AR " + percent(report.ar) + " (" +
                      std::to_string(report.wall_seconds) + " s)");
      row.ar.push_back(report.ar);
      const fs::path file = cfg.output_dir / "reports" / (slug(name) + "__" + slug(report.attack) + ".json");
      write_text(file, report.to_json_text());
      timings[file.filename().string()] = report.wall_seconds;
      result.report_files.push_back(file);
      result.reports.push_back(std::move(report));
    }
    rows.push_back(std::move(row));
  };

  if (run_vanilla) run_side(*model, "vanilla", result.summary.vanilla);
  if (run_gcm) {
    const gcm::Cascade wrapped = gcm::cascade(model, gcm_cfg, cfg.placement);
    run_side(wrapped, eval::gcm_descriptor(gcm_cfg, cfg.placement), result.summary.concealed);
  }

  stage(hooks, "write-summary");
  write_text(cfg.output_dir / "summary.json", result.summary.to_json_text());
  write_text(cfg.output_dir / "summary.txt", result.summary.to_text());
  write_text(cfg.output_dir / "metadata.json", json({{"report_seconds", timings}}).dump(1) + "\n");
  return result;
}

std::string SweepTable::to_json_text() const {
  json cells_j = json::array();
  for (const auto& c : cells)
    cells_j.push_back({{"key", c.key}, {"value", optional_number(c.value)}, {"report", c.report.filename().string()}});
  const json j = {{"kind", kind}, {"metric", metric}, {"attack", attack}, {"cells", cells_j}};
  return j.dump(1) + "\n";
}

std::string SweepTable::to_text() const {
  std::ostringstream os;
  os << "Sweep over " << kind << ", " << (metric == "ar" ? "attack robustness" : "accuracy under attack")
     << " (%) for " << attack << '\n';
  std::string keys = pad(kind, 10), vals = pad(metric, 10);
  for (const auto& c : cells) {
    const std::size_t w = std::max<std::size_t>(c.key.size(), 6) + 2;
    keys += pad(c.key, w);
    vals += pad(percent(c.value), w);
  }
  while (!keys.empty() && keys.back() == ' ') keys.pop_back();
  while (!vals.empty() && vals.back() == ' ') vals.pop_back();
  os << keys << '\n' << vals << '\n';
  return os.str();
}

SweepTable ablation_sweep(const ExperimentConfig& cfg, std::shared_ptr<const nn::Model> model,
                          const data::Dataset& test, const Hooks& hooks) {
  cfg.validate();
  if (!cfg.sweep) throw ConfigError("config has no sweep section");
  const SweepConfig& sw = *cfg.sweep;
  const attack::AttackConfig& atk = cfg.attacks.at(sw.attack);
  const gcm::GcmConfig base = cfg.gcm.value_or(gcm::GcmConfig{});

  struct Point {
    std::string key;
    gcm::GcmConfig gcm;
    gcm::Placement placement;
  };
  std::vector<Point> points;
  if (sw.kind == SweepKind::position) {
    for (const auto& p : sw.placements) {
      gcm::cascade(model, base, p);  // rejects unknown block names up front
      points.push_back({p.to_string(), base, p});
    }
  } else {
    for (double v : sw.values) {
      gcm::GcmConfig g = base;
      (sw.kind == SweepKind::eps ? g.eps : g.w) = v;
      points.push_back({fixed_key(v), g, cfg.placement});
    }
  }

  SweepTable table;
  table.kind = std::string(to_string(sw.kind));
  table.metric = sw.kind == SweepKind::position ? "adv_acc" : "ar";
  table.attack = atk.describe();
  json timings = json::object();
  const fs::path dir = cfg.output_dir / ("sweep_" + table.kind);
  for (const auto& pt : points) {
    stage(hooks, "sweep:" + table.kind + "=" + pt.key);
    const auto report = eval::evaluate(model, test, atk, pt.gcm, pt.placement, cfg.eval);
    const std::optional<double> value =
        sw.kind == SweepKind::position ? std::optional<double>(report.adv_acc) : report.ar;
    note(hooks, table.kind + "=" + pt.key + " " + table.metric + " " + percent(value));
    const fs::path file = dir / (slug(report.model) + "__" + slug(report.attack) + ".json");
    write_text(file, report.to_json_text());
    timings[file.filename().string()] = report.wall_seconds;
    table.cells.push_back({pt.key, value, file});
  }
  write_text(cfg.output_dir / ("sweep_" + table.kind + ".json"), table.to_json_text());
  write_text(cfg.output_dir / ("sweep_" + table.kind + ".txt"), table.to_text());
  write_text(dir / "metadata.json", json({{"report_seconds", timings}}).dump(1) + "\n");
  return table;
}

SignmapResult signmap_command(const ExperimentConfig& cfg, std::shared_ptr<const nn::Model> model,
                              const data::Dataset& test, const Hooks& hooks) {
  const std::size_t n = std::min(cfg.signmap.count, test.size());
  if (n == 0) throw ConfigError("no test images for sign maps");
  const gcm::GcmConfig gcm_cfg = cfg.gcm.value_or(gcm::GcmConfig{});
  const gcm::Cascade wrapped = gcm::cascade(model, gcm_cfg, cfg.placement);
  const fs::path dir = cfg.output_dir / "signmaps";
  fs::create_directories(dir);

  stage(hooks, "signmap");
  SignmapResult result;
  json entries = json::array();
  for (std::size_t i = 0; i < n; ++i) {
    const data::Dataset one = test.subset(std::vector<std::size_t>{i});
    const std::vector<int> label{one.labels[0]};
    std::array<double, 2> entropy{};
    for (int side = 0; side < 2; ++side) {
      const nn::Classifier& m = side == 0 ? static_cast<const nn::Classifier&>(*model) : wrapped;
      const Tensor g = nn::grad_wrt_input(m, one.images, label);
      const std::string stem = (side == 0 ? "vanilla_" : "gcm_") + std::to_string(i);
      const auto files = viz::render_sign_map(g, dir / stem);
      double sum = 0.0;
      std::size_t maps = 0;
      for (const auto& f : files)
        if (f.extension() == ".pgm") {
          sum += viz::local_sign_entropy(viz::read_pgm(f));
          ++maps;
        }
      entropy[side] = sum / static_cast<double>(maps);
    }
    result.vanilla_entropy.push_back(entropy[0]);
    result.concealed_entropy.push_back(entropy[1]);
    entries.push_back({{"index", i}, {"label", label[0]}, {"vanilla_entropy", entropy[0]}, {"gcm_entropy", entropy[1]}});
  }
  auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); };
  const json j = {{"gcm", eval::gcm_descriptor(gcm_cfg, cfg.placement)},
                  {"images", entries},
                  {"mean_vanilla_entropy", mean(result.vanilla_entropy)},
                  {"mean_gcm_entropy", mean(result.concealed_entropy)}};
  write_text(dir / "entropy.json", j.dump(1) + "\n");
  return result;
}

}  // namespace gc::exp
