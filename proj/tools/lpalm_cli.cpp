#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "lpalm/experiment.hpp"

namespace {

// Short spellings for the most common keys.
const std::map<std::string, std::string> kAliases{
    {"n", "env.n"}, {"gamma", "env.gamma"}, {"noise", "env.noise"}, {"steps", "scal.steps"}};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Linear-programming ALM and SCAL experiment runner"};
  app.require_subcommand(1);
  std::string config_path;
  std::map<std::string, std::string> flags;
  std::map<std::string, CLI::Option*> options;

  for (const std::string& cmd : lpalm::command_names()) {
    CLI::App* sub = app.add_subcommand(cmd);
    sub->add_option("--config", config_path, "key=value config file applied before flags");
    for (const auto& [key, def] : lpalm::ExperimentConfig::defaults()) {
      if (key == "command") continue;
      sub->add_option("--" + key, flags[key], "default: " + (def.empty() ? std::string("(empty)") : def));
    }
    for (const auto& [alias, key] : kAliases) sub->add_option("--" + alias, flags[key], "same as --" + key);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }

  CLI::App* sub = app.get_subcommands().front();
  try {
    lpalm::ExperimentConfig cfg;
    if (!config_path.empty()) cfg.merge_file(config_path);
    cfg.set("command", sub->get_name());
    for (const auto& [key, value] : flags) {
      bool given = sub->get_option("--" + key)->count() > 0;
      for (const auto& [alias, target] : kAliases)
        if (target == key) given = given || sub->get_option("--" + alias)->count() > 0;
      if (given) cfg.set(key, value);
    }
    const lpalm::RunOutcome out = lpalm::run_experiment(cfg, std::cout);
    return out.exit_code;
  } catch (const lpalm::ConfigError& e) {
    std::cerr << "config error (" << e.key() << "): " << e.what() << '\n';
    return 2;
  } catch (const lpalm::ComponentError& e) {
    std::cerr << "failed in " << e.component() << ": " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "failed: " << e.what() << '\n';
    return 1;
  }
}
