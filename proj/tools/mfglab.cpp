#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "mfglab/harness/config.hpp"
#include "mfglab/harness/experiments.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

}  // namespace

int main(int argc, char** argv) {
  using namespace mfglab;
  CLI::App app{"mfglab: n-player games vs mean field limits"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::optional<std::string> out_dir;

  auto* validate = app.add_subcommand("validate", "check a config without running anything");
  validate->add_option("--config", config_path, "JSON config file")->required();

  std::vector<CLI::App*> runs;
  for (const auto& name : harness::experiment_names()) {
    auto* sub = app.add_subcommand(name, "run the " + name + " experiment");
    sub->add_option("--config", config_path, "JSON config file")->required();
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_option("--workers", workers, "worker threads (0 = all cores)");
    sub->add_option("--out", out_dir, "output directory");
    runs.push_back(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  harness::RunConfig config;
  try {
    config = harness::load_config(config_path);
    if (validate->parsed()) {
      harness::validate_config(config);
      std::cout << "ok: " << config.experiment << "\n";
      return kExitOk;
    }
    for (auto* sub : runs) {
      if (!sub->parsed()) continue;
      if (!config.experiment.empty() && config.experiment != sub->get_name())
        throw ConfigError("config names experiment '" + config.experiment + "' but '" + sub->get_name() +
                          "' was requested");
      config.experiment = sub->get_name();
    }
    if (seed) config.seed = *seed;
    if (workers) config.workers = *workers;
    if (out_dir) config.out = *out_dir;
    harness::validate_config(config);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    const std::size_t w = harness::resolve_workers(config.workers);
    const auto result = harness::run_experiment(config, w);
    std::cout << config.experiment << ": wrote " << result.files.size() << " files to " << result.out_dir.string()
              << "\n";
    return kExitOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
