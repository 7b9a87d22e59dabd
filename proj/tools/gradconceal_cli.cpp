// Command-line front end: train, eval, sweep, signmap.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "gradconceal/config.hpp"
#include "gradconceal/errors.hpp"
#include "gradconceal/experiment.hpp"

namespace {

enum Exit { ok = 0, failure = 1, config_error = 2, format_error = 3, numeric_error = 4 };

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Experiment config (JSON)")->required();
  cmd->add_option("--out", c.out, "Output directory (overrides the config)");
  cmd->add_option("--seed", c.seed, "Seed for initialisation, shuffling and sampling");
}

gc::exp::ExperimentConfig resolve(const Common& c) {
  auto cfg = gc::exp::load_config(c.config);
  if (!c.out.empty()) cfg.output_dir = c.out;
  if (c.seed) cfg.set_seed(*c.seed);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gradient concealment experiments"};
  app.require_subcommand(1);

  Common common;
  std::string gcm_side = "both";
  std::string placement;

  auto* train = app.add_subcommand("train", "Train a model and write a checkpoint");
  add_common(train, common);
  auto* eval = app.add_subcommand("eval", "Evaluate attacks on the vanilla and/or cascaded model");
  add_common(eval, common);
  eval->add_option("--gcm", gcm_side, "on | off | both")->check(CLI::IsMember({"on", "off", "both"}));
  eval->add_option("--placement", placement, "front | block:<name> | all");
  auto* sweep = app.add_subcommand("sweep", "Run the configured ablation sweep");
  add_common(sweep, common);
  auto* signmap = app.add_subcommand("signmap", "Render input-gradient sign maps");
  add_common(signmap, common);

  CLI11_PARSE(app, argc, argv);

  std::string current = "config";
  gc::exp::Hooks hooks{[&](std::string_view s) {
                         current = std::string(s);
                         std::clog << "[" << current << "]\n";
                       },
                       [](std::string_view s) { std::clog << "  " << s << '\n'; }};
  try {
    auto cfg = resolve(common);
    if (!placement.empty()) cfg.placement = gc::gcm::Placement::parse(placement);
    hooks.stage("load-data");
    const auto splits = gc::exp::load_splits(cfg);

    if (*train) {
      gc::exp::train_command(cfg, splits, hooks);
    } else {
      const auto model = gc::exp::obtain_model(cfg, splits.train, hooks);
      if (*eval) {
        const auto side = gcm_side == "on" ? gc::exp::GcmSide::on
                          : gcm_side == "off" ? gc::exp::GcmSide::off
                                              : gc::exp::GcmSide::both;
        const auto result = gc::exp::run_experiment(cfg, model, splits.test, side, hooks);
        std::cout << result.summary.to_text();
      } else if (*sweep) {
        std::cout << gc::exp::ablation_sweep(cfg, model, splits.test, hooks).to_text();
      } else if (*signmap) {
        const auto r = gc::exp::signmap_command(cfg, model, splits.test, hooks);
        for (std::size_t i = 0; i < r.vanilla_entropy.size(); ++i)
          std::cout << "image " << i << ": entropy vanilla " << r.vanilla_entropy[i] << ", gcm "
                    << r.concealed_entropy[i] << '\n';
      }
    }
    return ok;
  } catch (const gc::ConfigError& e) {
    std::cerr << "error in stage " << current << ": " << e.what() << '\n';
    return config_error;
  } catch (const gc::FormatError& e) {
    std::cerr << "error in stage " << current << ": " << e.what() << '\n';
    return format_error;
  } catch (const gc::IntegrityError& e) {
    std::cerr << "error in stage " << current << ": " << e.what() << '\n';
    return format_error;
  } catch (const gc::NumericError& e) {
    std::cerr << "error in stage " << current << ": " << e.what() << '\n';
    return numeric_error;
  } catch (const std::exception& e) {
    std::cerr << "error in stage " << current << ": " << e.what() << '\n';
    return failure;
  }
}
