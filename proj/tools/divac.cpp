#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "divac/cli.hpp"

using divac::cli::registry;

int main(int argc, char** argv) {
  CLI::App app{"SiC divacancy spin and optical modeling toolkit", "divac"};
  app.set_version_flag("--version", divac::cli::kVersion);

  std::string config_path, out, format;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  bool timing = false;
  auto* seed_opt = app.add_option("--seed", seed, "random seed (default 1729)");
  app.add_option("--config", config_path, "key = value run configuration")->check(CLI::ExistingFile);
  app.add_option("--out", out, "output path; a .manifest.json is written next to it");
  app.add_option("--format", format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
  app.add_option("--set", sets, "parameter override key=value (repeatable)");
  app.add_flag("--timing", timing, "record wall time in the manifest");

  std::map<CLI::App*, std::pair<std::string, std::string>> leaves;
  std::map<CLI::App*, std::vector<std::string>> inputs;
  std::map<std::string, CLI::App*> groups;
  for (const auto& c : registry()) {
    auto*& g = groups[c.group];
    if (!g) {
      g = app.add_subcommand(c.group, c.group + " commands");
      g->require_subcommand(1);
      g->fallthrough();
    }
    auto* leaf = g->add_subcommand(c.name, c.summary);
    leaf->fallthrough();
    auto& in = inputs[leaf];
    if (c.max_inputs > 0) leaf->add_option("inputs", in, "input table(s)");
    leaves[leaf] = {c.group, c.name};
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "divac: " << e.what() << '\n' << divac::cli::usage();
    return 2;
  }

  divac::io::RunConfig cfg;
  try {
    if (!config_path.empty()) cfg = divac::io::load_config(config_path);
    for (const auto& [leaf, words] : leaves)
      if (leaf->parsed()) {
        cfg.command = {words.first, words.second};
        if (!inputs[leaf].empty()) cfg.inputs = inputs[leaf];
      }
    if (seed_opt->count()) cfg.seed = seed;
    if (!out.empty()) cfg.output = out;
    if (!format.empty()) cfg.format = format;
    if (timing) cfg.timing = true;
    for (const auto& kv : sets) divac::io::add_override(cfg, kv);
  } catch (const std::exception& e) {
    std::cerr << "divac: " << e.what() << '\n' << divac::cli::usage();
    return 2;
  }
  return divac::cli::run_command(cfg);
}
