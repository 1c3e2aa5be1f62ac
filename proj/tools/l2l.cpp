#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "l2l/experiment.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learned-optimizer experiments: tuning, meta-training, evaluation and traces"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  const char* verbs[][2] = {
      {"tune", "grid-search learning rates for baselines marked 'tune'; writes tuning.csv"},
      {"meta-train", "meta-train every 'learned train' entry; writes history.csv and <name>.l2l"},
      {"evaluate", "evaluate the roster on held-out problems; writes curves.csv"},
      {"trace", "per-coordinate updates along one learned trajectory; writes trace.csv"},
      {"sweep", "update as a function of one gradient entry; writes sweep.csv"},
      {"run", "tune, meta-train, evaluate, then trace and sweep when configured"},
  };
  for (const auto& verb : verbs) {
    auto* sub = app.add_subcommand(verb[0], verb[1]);
    sub->add_option("--config", config_path, "experiment config file")->required();
    sub->add_option("--seed", seed, "override the master seed");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kExitOk : kExitConfig;
  }
  const std::string verb = app.get_subcommands().front()->get_name();

  l2l::ExperimentConfig cfg;
  try {
    cfg = l2l::load_experiment_config(config_path);
  } catch (const l2l::ConfigError& err) {
    std::cerr << "config error: " << err.what() << '\n';
    return kExitConfig;
  }
  if (seed) {
    cfg.seed = *seed;
    cfg.meta.seed = *seed;
  }

  try {
    l2l::ExperimentRunner runner(std::move(cfg), &std::cerr);
    if (verb == "tune") runner.tune();
    else if (verb == "meta-train") runner.meta_train();
    else if (verb == "evaluate") runner.evaluate();
    else if (verb == "trace") runner.trace();
    else if (verb == "sweep") runner.sweep();
    else runner.run();
  } catch (const l2l::ConfigError& err) {
    std::cerr << "config error: " << err.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}
