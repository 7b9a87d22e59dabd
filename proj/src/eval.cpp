#include "gradconceal/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <exception>
#include <numeric>
#include <random>
#include <thread>

#include "gradconceal/errors.hpp"
#include "json.hpp"

namespace gc::eval {

using nlohmann::json;

double accuracy(std::span<const SampleRecord> records) {
  if (records.empty()) throw ContractError("accuracy of an empty record set");
  const auto hits = std::count_if(records.begin(), records.end(), [](const auto& r) { return r.clean_correct(); });
  return static_cast<double>(hits) / static_cast<double>(records.size());
}

std::optional<double> attack_robustness(std::span<const SampleRecord> records) {
  std::size_t clean = 0, both = 0;
  for (const auto& r : records) {
    if (!r.clean_correct()) continue;
    ++clean;
    both += r.adv_correct() ? 1 : 0;
  }
  if (clean == 0) return std::nullopt;
  return static_cast<double>(both) / static_cast<double>(clean);
}

double adversarial_accuracy(std::span<const SampleRecord> records) {
  if (records.empty()) throw ContractError("adversarial accuracy of an empty record set");
  const auto hits = std::count_if(records.begin(), records.end(), [](const auto& r) { return r.adv_correct(); });
  return static_cast<double>(hits) / static_cast<double>(records.size());
}

double accuracy(const std::vector<bool>& clean_correct) {
  if (clean_correct.empty()) throw ContractError("accuracy of an empty record set");
  const auto hits = std::count(clean_correct.begin(), clean_correct.end(), true);
  return static_cast<double>(hits) / static_cast<double>(clean_correct.size());
}

std::optional<double> attack_robustness(const std::vector<bool>& clean_correct, const std::vector<bool>& adv_correct) {
  if (clean_correct.size() != adv_correct.size()) throw ContractError("indicator vectors differ in length");
  std::size_t clean = 0, both = 0;
  for (std::size_t i = 0; i < clean_correct.size(); ++i) {
    if (!clean_correct[i]) continue;
    ++clean;
    both += adv_correct[i] ? 1 : 0;
  }
  if (clean == 0) return std::nullopt;
  return static_cast<double>(both) / static_cast<double>(clean);
}

std::string EvalReport::to_json_text() const {
  json recs = json::array();
  for (const auto& r : records) {
    json j = {{"index", r.index},
              {"label", r.label},
              {"clean_pred", r.clean_pred},
              {"adv_pred", r.adv_pred},
              {"perturbation_norm", r.perturbation_norm},
              {"attack_success", r.attack_success}};
    if (!r.error.empty()) j["error"] = r.error;
    recs.push_back(std::move(j));
  }
  json j = {{"model", model},
            {"attack", attack},
            {"num_samples", num_samples},
            {"acc_clean", acc_clean},
            {"ar", ar ? json(*ar) : json(nullptr)},
            {"adv_acc", adv_acc},
            {"failures", failures},
            {"records", std::move(recs)}};
  return j.dump(1) + "\n";
}

EvalReport EvalReport::from_json_text(const std::string& text) {
  EvalReport r;
  try {
    const json j = json::parse(text);
    r.model = j.at("model").get<std::string>();
    r.attack = j.at("attack").get<std::string>();
    r.num_samples = j.at("num_samples").get<std::size_t>();
    r.acc_clean = j.at("acc_clean").get<double>();
    if (!j.at("ar").is_null()) r.ar = j.at("ar").get<double>();
    r.adv_acc = j.at("adv_acc").get<double>();
    r.failures = j.value("failures", std::size_t{0});
    for (const auto& e : j.at("records")) {
      SampleRecord s;
      s.index = e.at("index").get<std::size_t>();
      s.label = e.at("label").get<int>();
      s.clean_pred = e.at("clean_pred").get<int>();
      s.adv_pred = e.at("adv_pred").get<int>();
      s.perturbation_norm = e.at("perturbation_norm").get<double>();
      s.attack_success = e.at("attack_success").get<bool>();
      s.error = e.value("error", std::string{});
      r.records.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed report: ") + e.what());
  }
  return r;
}

std::vector<std::size_t> select_samples(const data::Dataset& data, const EvalOptions& opts) {
  std::size_t n = data.size();
  if (opts.limit > 0) n = std::min(n, opts.limit);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (!opts.per_class_cap) return idx;

  std::mt19937_64 rng(opts.seed);
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng() % i]);
  std::vector<std::size_t> taken(data.num_classes, 0), out;
  for (std::size_t i : idx) {
    auto& t = taken.at(static_cast<std::size_t>(data.labels[i]));
    if (t < *opts.per_class_cap) {
      ++t;
      out.push_back(i);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

namespace {

// Attacks one batch; on failure retries sample by sample so that a single bad
// sample only marks its own record.
void attack_batch(const nn::Classifier& model, const data::Dataset& data, std::span<const std::size_t> rows,
                  const attack::AttackConfig& cfg, std::span<SampleRecord> out) {
  const Tensor x = data.subset(rows).images;
  std::vector<int> y(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) y[i] = data.labels[rows[i]];

  for (std::size_t i = 0; i < rows.size(); ++i) {
    out[i].index = rows[i];
    out[i].label = y[i];
  }
  std::vector<int> clean;
  try {
    clean = nn::predict(model, x);
  } catch (const Error&) {
    if (rows.size() > 1) {
      for (std::size_t i = 0; i < rows.size(); ++i) attack_batch(model, data, rows.subspan(i, 1), cfg, out.subspan(i, 1));
      return;
    }
    throw;
  }

  try {
    const auto adv = attack::run_attack(model, x, y, cfg);
    const auto pred = nn::predict(model, adv.x_adv);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      out[i].clean_pred = clean[i];
      out[i].adv_pred = pred[i];
      out[i].perturbation_norm = adv.perturbation_norm[i];
      out[i].attack_success = adv.success[i];
    }
  } catch (const Error& e) {
    if (rows.size() > 1) {
      for (std::size_t i = 0; i < rows.size(); ++i) attack_batch(model, data, rows.subspan(i, 1), cfg, out.subspan(i, 1));
      return;
    }
    out[0].clean_pred = clean[0];
    out[0].adv_pred = clean[0];
    out[0].perturbation_norm = 0.0;
    out[0].attack_success = false;
    out[0].error = e.what();
  }
}

}  // namespace

EvalReport evaluate(const nn::Classifier& evaluated, std::string model_name, const data::Dataset& data,
                    const attack::AttackConfig& attack, const EvalOptions& opts) {
  attack.validate(evaluated.num_classes());
  if (opts.batch_size == 0) throw ConfigError("evaluation batch size must be positive");
  const auto start = std::chrono::steady_clock::now();
  const auto rows = select_samples(data, opts);
  if (rows.empty()) throw ContractError("no samples to evaluate");

  std::vector<SampleRecord> records(rows.size());
  const std::size_t batches = (rows.size() + opts.batch_size - 1) / opts.batch_size;
  const std::size_t workers = std::clamp<std::size_t>(opts.workers, 1, batches);

  // Batches are striped over workers; each writes only its own record slots.
  std::vector<std::exception_ptr> errors(workers);
  auto work = [&](std::size_t w) {
    try {
      for (std::size_t b = w; b < batches; b += workers) {
        const std::size_t lo = b * opts.batch_size, hi = std::min(rows.size(), lo + opts.batch_size);
        attack_batch(evaluated, data, std::span(rows).subspan(lo, hi - lo), attack,
                     std::span(records).subspan(lo, hi - lo));
      }
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  EvalReport report;
  report.model = std::move(model_name);
  report.attack = attack.describe();
  report.num_samples = records.size();
  report.acc_clean = accuracy(records);
  report.ar = attack_robustness(records);
  report.adv_acc = adversarial_accuracy(records);
  report.failures = static_cast<std::size_t>(
      std::count_if(records.begin(), records.end(), [](const auto& r) { return !r.error.empty(); }));
  report.records = std::move(records);
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

std::string gcm_descriptor(const gcm::GcmConfig& cfg, const gcm::Placement& placement) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "gcm(w=%g,eps=%g,%s)", cfg.w, cfg.eps, placement.to_string().c_str());
  return buf;
}

EvalReport evaluate(std::shared_ptr<const nn::Model> model, const data::Dataset& data,
                    const attack::AttackConfig& attack, const std::optional<gcm::GcmConfig>& gcm_cfg,
                    const gcm::Placement& placement, const EvalOptions& opts) {
  if (!gcm_cfg) return evaluate(*model, "vanilla", data, attack, opts);
  const gcm::Cascade wrapped = gcm::cascade(std::move(model), *gcm_cfg, placement);
  return evaluate(wrapped, gcm_descriptor(*gcm_cfg, placement), data, attack, opts);
}

}  // namespace gc::eval
