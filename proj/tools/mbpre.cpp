#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "mbpre/config.hpp"
#include "mbpre/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Branching processes with immigration and final product in random environment, and polling systems"};
  std::string config_path;
  std::string command;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> replicates;
  std::optional<std::size_t> workers;
  std::optional<std::string> out;
  app.add_option("--config", config_path, "JSON experiment file")->required();
  app.add_option("--seed", seed, "root seed (overrides the config)");
  app.add_option("--replicates", replicates, "number of replicates (overrides the config)");
  app.add_option("--workers", workers, "worker threads, 0 = all cores (overrides the config)");
  app.add_option("--out", out, "output directory (overrides the config)");
  app.add_option("command", command,
                 "analyze | simulate-branching | simulate-polling | validate-equivalence | tail-fit "
                 "(overrides the config)");
  CLI11_PARSE(app, argc, argv);

  try {
    mbpre::ExperimentSpec spec = mbpre::load_experiment(config_path);
    if (!command.empty()) spec.command = mbpre::parse_command(command, "<command>");
    if (seed) spec.seed = *seed;
    if (replicates) {
      if (*replicates < 1) throw mbpre::ConfigError("must be >= 1", "--replicates");
      spec.replicates = *replicates;
    }
    if (workers) spec.workers = spec.analysis.mc.workers = *workers;
    if (out) spec.out = *out;
    if ((spec.command == mbpre::Command::simulate_polling || spec.command == mbpre::Command::validate_equivalence) &&
        !spec.polling)
      throw mbpre::ConfigError("this command needs a polling section", "polling");
    if (spec.command == mbpre::Command::simulate_branching && !spec.process)
      throw mbpre::ConfigError("this command needs an environment section", "environment");
    if (spec.command == mbpre::Command::tail_fit && spec.tail_input.empty())
      throw mbpre::ConfigError("tail-fit needs an input CSV", "tail.input");
    if (spec.command == mbpre::Command::analyze && !spec.environment && !spec.polling)
      throw mbpre::ConfigError("analyze needs an environment or a polling section", "environment");

    const mbpre::ExperimentResult result = mbpre::run_experiment(spec);
    std::cout << result.summary;
    std::cout << "wrote " << result.files.size() << " files to " << spec.out << "\n";
    return result.exit_code;
  } catch (const mbpre::GuardViolation& e) {
    std::cerr << "guard violation: " << e.what() << "\n";
    return mbpre::kExitGuard;
  } catch (const mbpre::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return mbpre::kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return mbpre::kExitRuntime;
  }
}
