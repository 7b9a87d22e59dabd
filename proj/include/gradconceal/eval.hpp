#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gradconceal/attacks.hpp"
#include "gradconceal/dataset.hpp"
#include "gradconceal/gcm.hpp"
#include "gradconceal/model.hpp"

namespace gc::eval {

struct SampleRecord {
  std::size_t index = 0;  // position in the evaluated dataset
  int label = 0;
  int clean_pred = 0;
  int adv_pred = 0;
  double perturbation_norm = 0.0;
  bool attack_success = false;
  std::string error;  // non-empty when the attack failed on this sample; x_adv = x then

  bool clean_correct() const noexcept { return clean_pred == label; }
  bool adv_correct() const noexcept { return adv_pred == label; }
  friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

/// Mean of the clean-correct indicators. Throws ContractError on no records.
double accuracy(std::span<const SampleRecord> records);
/// Correct both clean and adversarially, over the clean-correct count.
/// nullopt when no record is clean-correct (the ratio has no denominator).
std::optional<double> attack_robustness(std::span<const SampleRecord> records);
/// Adversarially-correct fraction over all records.
double adversarial_accuracy(std::span<const SampleRecord> records);

// Indicator-vector forms of the two formulas.
double accuracy(const std::vector<bool>& clean_correct);
std::optional<double> attack_robustness(const std::vector<bool>& clean_correct, const std::vector<bool>& adv_correct);

struct EvalReport {
  std::string model;   // "vanilla" or the GCM descriptor
  std::string attack;  // AttackConfig::describe()
  std::size_t num_samples = 0;
  double acc_clean = 0.0;
  std::optional<double> ar;
  double adv_acc = 0.0;
  std::size_t failures = 0;
  std::vector<SampleRecord> records;
  double wall_seconds = 0.0;  // never serialized into the report file

  /// Deterministic JSON text (sorted keys, fixed float formatting).
  std::string to_json_text() const;
  static EvalReport from_json_text(const std::string& text);
};

struct EvalOptions {
  std::size_t batch_size = 100;
  std::size_t workers = 1;
  std::size_t limit = 0;  // 0 = whole dataset
  std::optional<std::size_t> per_class_cap;
  std::uint64_t seed = 0;  // drives the per-class subsample
};

/// Applies `limit` then the per-class cap. The cap keeps a seeded random choice
/// of up to `cap` samples per class, returned in ascending index order.
std::vector<std::size_t> select_samples(const data::Dataset& data, const EvalOptions& opts);

/// Clean prediction and attack both use `evaluated` (the cascade when GCM is on).
EvalReport evaluate(const nn::Classifier& evaluated, std::string model_name, const data::Dataset& data,
                    const attack::AttackConfig& attack, const EvalOptions& opts = {});

EvalReport evaluate(std::shared_ptr<const nn::Model> model, const data::Dataset& data,
                    const attack::AttackConfig& attack, const std::optional<gcm::GcmConfig>& gcm_cfg,
                    const gcm::Placement& placement = gcm::Placement::front(), const EvalOptions& opts = {});

std::string gcm_descriptor(const gcm::GcmConfig& cfg, const gcm::Placement& placement);

}  // namespace gc::eval
