#include <cstdio>
#include <exception>
#include <string>

#include "CLI11.hpp"
#include "dtm/cli.hpp"
#include "dtm/common.hpp"

namespace {

struct CommonFlags {
  std::string config;
  std::uint64_t seed = 0;
  bool seed_set = false;
  unsigned workers = 0;
  std::string out;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config, "run configuration file (JSON)")
      ->required();
  cmd->add_option("--seed", flags.seed, "master seed (overrides the config)");
  cmd->add_option("--workers", flags.workers,
                  "worker threads (overrides config and DTM_WORKERS)");
  cmd->add_option("--out", flags.out, "output directory (overrides the config)");
}

dtm::cli::RunConfig make_config(const CommonFlags& flags, const CLI::App* cmd) {
  dtm::cli::RunConfig cfg = dtm::cli::load_config(flags.config);
  if (cmd->count("--seed")) cfg.seed = flags.seed;
  if (cmd->count("--workers")) cfg.workers = flags.workers;
  if (cmd->count("--out")) cfg.out = flags.out;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dtm: deep transformation models for semi-structured "
               "distributional regression"};
  app.require_subcommand(1);

  CommonFlags flags;
  auto* simulate = app.add_subcommand(
      "simulate", "generate a synthetic semi-structured dataset");
  auto* fit = app.add_subcommand("fit", "fit the configured model on every split");
  auto* ensemble = app.add_subcommand(
      "ensemble", "fit a warm-started transformation ensemble per split");
  auto* evaluate = app.add_subcommand(
      "evaluate", "score fitted models: metrics, calibration, coefficients");
  auto* subsample = app.add_subcommand(
      "subsample", "sample-size experiment over 7 sizes x repeated splits");
  auto* effect = app.add_subcommand("effect-curve",
                                    "export a complex-shift effect curve");
  for (auto* cmd : {simulate, fit, ensemble, evaluate, subsample, effect})
    add_common(cmd, flags);

  CLI11_PARSE(app, argc, argv);

  try {
    auto* cmd = app.get_subcommands().front();
    dtm::cli::RunConfig cfg = make_config(flags, cmd);
    if (cmd == simulate) dtm::cli::cmd_simulate(cfg);
    if (cmd == fit) dtm::cli::cmd_fit(cfg);
    if (cmd == ensemble) dtm::cli::cmd_ensemble(cfg);
    if (cmd == evaluate) dtm::cli::cmd_evaluate(cfg);
    if (cmd == subsample) dtm::cli::cmd_subsample(cfg);
    if (cmd == effect) dtm::cli::cmd_effect_curve(cfg);
  } catch (const dtm::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const dtm::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 2;
  } catch (const dtm::NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
