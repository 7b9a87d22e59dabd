#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gradconceal/config.hpp"
#include "gradconceal/dataset.hpp"
#include "gradconceal/eval.hpp"
#include "gradconceal/model.hpp"

namespace gc::exp {

/// Receives the name of each pipeline stage as it starts, plus free-form notes.
struct Hooks {
  std::function<void(std::string_view)> stage;
  std::function<void(std::string_view)> note;
};

struct Splits {
  data::Dataset train;
  data::Dataset test;
};
Splits load_splits(const ExperimentConfig& cfg);

/// Loads the checkpoint when it exists; otherwise trains and, if a checkpoint
/// path is configured, saves it there.
std::shared_ptr<const nn::Model> obtain_model(const ExperimentConfig& cfg, const data::Dataset& train,
                                              const Hooks& hooks = {});

/// Trains from scratch, writes `<out>/model.gcmb` and `<out>/train.json`.
std::shared_ptr<const nn::Model> train_command(const ExperimentConfig& cfg, const Splits& splits,
                                               const Hooks& hooks = {});

enum class GcmSide { off, on, both };

struct SummaryRow {
  std::string model;
  double acc = 0.0;
  std::vector<std::optional<double>> ar;  // one per attack
};

struct Summary {
  std::size_t num_samples = 0;
  std::vector<std::string> attacks;
  std::vector<SummaryRow> vanilla;
  std::vector<SummaryRow> concealed;
  std::string to_json_text() const;
  /// Aligned table: one column per attack, vanilla rows above GCM rows.
  std::string to_text() const;
};

struct ExperimentResult {
  Summary summary;
  std::vector<eval::EvalReport> reports;
  std::vector<std::filesystem::path> report_files;
};

/// Evaluates every attack on the vanilla model and/or the cascade and writes
/// reports/<model>__<attack>.json, summary.json, summary.txt and metadata.json
/// under cfg.output_dir. Only metadata.json carries timings.
ExperimentResult run_experiment(const ExperimentConfig& cfg, std::shared_ptr<const nn::Model> model,
                                const data::Dataset& test, GcmSide side = GcmSide::both, const Hooks& hooks = {});

struct SweepCell {
  std::string key;
  std::optional<double> value;
  std::filesystem::path report;
};

struct SweepTable {
  std::string kind;
  std::string metric;  // "ar" or "adv_acc"
  std::string attack;
  std::vector<SweepCell> cells;
  std::string to_json_text() const;
  std::string to_text() const;
};

/// One evaluation per grid point on the cascaded model. The eps and w sweeps
/// report AR; the position sweep reports accuracy under attack over all
/// samples. Every placement is checked against the model before any run.
/// Writes sweep_<kind>.json/.txt and per-cell reports under cfg.output_dir.
SweepTable ablation_sweep(const ExperimentConfig& cfg, std::shared_ptr<const nn::Model> model,
                          const data::Dataset& test, const Hooks& hooks = {});

struct SignmapResult {
  std::vector<double> vanilla_entropy;
  std::vector<double> concealed_entropy;
};

/// Renders input-gradient sign maps of the first cfg.signmap.count test images
/// for the vanilla model and the cascade into <out>/signmaps.
SignmapResult signmap_command(const ExperimentConfig& cfg, std::shared_ptr<const nn::Model> model,
                              const data::Dataset& test, const Hooks& hooks = {});

/// File-name-safe version of a report label.
std::string slug(std::string_view text);

}  // namespace gc::exp
