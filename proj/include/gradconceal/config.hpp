#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gradconceal/attacks.hpp"
#include "gradconceal/dataset.hpp"
#include "gradconceal/eval.hpp"
#include "gradconceal/gcm.hpp"
#include "gradconceal/model.hpp"
#include "gradconceal/train.hpp"

namespace gc::exp {

struct DatasetConfig {
  data::Format format = data::Format::idx;
  std::filesystem::path train_images, train_labels;
  std::filesystem::path test_images, test_labels;
  std::size_t num_classes = 10;
  std::size_t train_limit = 0;  // 0 = all
  std::size_t test_limit = 0;
};

enum class SweepKind { eps, w, position };
std::string_view to_string(SweepKind k);

struct SweepConfig {
  SweepKind kind = SweepKind::eps;
  std::vector<double> values;               // eps / w sweeps
  std::vector<gcm::Placement> placements;   // position sweep
  std::size_t attack = 0;                   // index into the attack list
};

struct SignmapConfig {
  std::size_t count = 10;
};

struct ExperimentConfig {
  DatasetConfig dataset;
  nn::ArchSpec arch = nn::ArchSpec::smallcnn();
  nn::TrainConfig train;
  std::optional<std::filesystem::path> checkpoint;
  std::vector<attack::AttackConfig> attacks;
  std::optional<gcm::GcmConfig> gcm;
  gcm::Placement placement;
  eval::EvalOptions eval;
  std::optional<SweepConfig> sweep;
  SignmapConfig signmap;
  std::filesystem::path output_dir = "out";
  std::uint64_t seed = 0;

  /// Value checks only; throws ConfigError.
  void validate() const;
  /// Throws ConfigError naming the first missing dataset file.
  void require_inputs() const;
  /// Applies one seed to training, initialisation and sampling.
  void set_seed(std::uint64_t s);
};

/// Budgets may be numbers or "a/b" fractions such as "8/255".
double parse_budget(std::string_view text);

/// Relative paths resolve against `base_dir`.
ExperimentConfig parse_config(std::string_view json_text, const std::filesystem::path& base_dir);
ExperimentConfig load_config(const std::filesystem::path& path);

}  // namespace gc::exp
