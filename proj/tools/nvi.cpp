#include "CLI11.hpp"
#include "nvi/commands.hpp"

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> restarts;
  std::optional<std::string> out;
  std::vector<std::string> assignments;
  std::string run_dir;
};

void add_config_options(CLI::App& cmd, Options& o) {
  cmd.add_option("--config", o.config, "Config file of key = value lines");
  cmd.add_option("--seed", o.seed, "Base seed; restart r uses seed + r");
  cmd.add_option("--restarts", o.restarts, "Number of independent restarts");
  cmd.add_option("--out", o.out, "Output directory");
  cmd.add_option("--set", o.assignments, "Override a config key, e.g. --set K=4")->allow_extra_args(false);
}

nvi::cli::ExperimentConfig resolve(const Options& o) {
  nvi::cli::ConfigSources src;
  if (!o.config.empty()) {
    src.path = o.config;
  }
  if (const char* env = std::getenv("NVI_SEED")) {
    src.env_seed = env;
  }
  src.assignments = o.assignments;
  src.seed = o.seed;
  src.restarts = o.restarts;
  src.out = o.out;
  return nvi::cli::resolve_config(src);
}

}  // namespace

int main(int argc, char** argv) {
  using namespace nvi::cli;
  CLI::App app{"Nested variational inference toolkit"};
  app.require_subcommand(1);
  Options o;

  CLI::App* train_cmd = app.add_subcommand("train", "Train every restart, evaluate it and write run artefacts");
  add_config_options(*train_cmd, o);
  CLI::App* eval_cmd = app.add_subcommand("eval", "Re-evaluate stored checkpoints");
  add_config_options(*eval_cmd, o);
  CLI::App* plot_cmd = app.add_subcommand("plot", "Write SVG figures for a run directory");
  plot_cmd->add_option("run_dir", o.run_dir, "Run or restart directory");
  add_config_options(*plot_cmd, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? exit_ok : exit_usage;
  }

  ExperimentConfig config;
  try {
    if (!(plot_cmd->parsed() && !o.run_dir.empty())) {
      config = resolve(o);
    }
  } catch (const ConfigError& e) {
    std::cerr << "invalid config: " << e.what() << "\n";
    return exit_invalid_config;
  }

  if (train_cmd->parsed()) {
    return cmd_train(config, std::cout, std::cerr);
  }
  if (eval_cmd->parsed()) {
    return cmd_eval(config, std::cout, std::cerr);
  }
  return cmd_plot(o.run_dir.empty() ? std::filesystem::path(config.out) : std::filesystem::path(o.run_dir), std::cout,
                  std::cerr);
}
