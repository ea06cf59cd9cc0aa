#include <cstdint>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "dde/config.hpp"
#include "dde/harness.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Distorted distributional evaluation and offline control on finite MDPs"};
  std::string command;
  std::string config_path;
  std::vector<std::string> overrides;
  dde::RunOptions opts;
  std::string out = "out";
  app.add_option("command", command, "gen-data | evaluate | train | verify-theory | compare")
      ->required()
      ->check(CLI::IsMember({"gen-data", "evaluate", "train", "verify-theory", "compare"}));
  app.add_option("--config", config_path, "key=value config file with [section] headers");
  app.add_option("--seed", opts.seed, "master seed");
  app.add_option("--out", out, "output root");
  app.add_option("--set", overrides, "override a config key, e.g. --set algorithm.beta=0.2")->take_all();
  app.add_option("--jobs", opts.jobs, "worker threads")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);

  try {
    opts.command = command;
    opts.out = out;
    opts.config = config_path.empty() ? dde::ExperimentConfig{} : dde::load_config(config_path);
    for (const auto& kv : overrides) dde::apply_override(opts.config, kv);
    return dde::run(opts);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
