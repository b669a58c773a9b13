#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <vector>

#include "gaitlab/cli.hpp"

namespace {

struct Options {
  std::string config;
  std::vector<std::string> overrides;
  std::string out, manifest, run;
  std::string seed;
  std::size_t threads = 0;
};

void add_common(CLI::App* cmd, Options& o, bool needs_manifest, bool needs_run) {
  cmd->add_option("-c,--config", o.config, "flat key = value config file");
  cmd->add_option("-s,--set", o.overrides, "override one key (key=value); repeatable");
  cmd->add_option("-o,--out", o.out, "output directory");
  cmd->add_option("--seed", o.seed, "global seed");
  cmd->add_option("-j,--threads", o.threads, "worker threads for parallel sections");
  if (needs_manifest) cmd->add_option("-m,--manifest", o.manifest, "dataset manifest (data.manifest)");
  if (needs_run) cmd->add_option("-r,--run", o.run, "training run directory");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gaitlab: CNN-LSTM gait classification with explanations"};
  app.require_subcommand(1);
  Options o;
  add_common(app.add_subcommand("synth", "generate a seeded synthetic dataset"), o, false, false);
  add_common(app.add_subcommand("train", "train a model and write checkpoint, history and metrics"), o,
             true, false);
  add_common(app.add_subcommand("eval", "evaluate a trained run on a manifest"), o, true, true);
  add_common(app.add_subcommand("explain", "Grad-CAM or SHAP attributions for one sample"), o, true,
             true);
  add_common(app.add_subcommand("search", "random hyperparameter search"), o, true, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  gaitlab::FlatConfig kv;
  try {
    if (!o.config.empty()) kv = gaitlab::FlatConfig::load(o.config);
    if (!o.out.empty()) kv.set("out", o.out);
    if (!o.manifest.empty()) kv.set("data.manifest", o.manifest);
    if (!o.run.empty()) kv.set("run", o.run);
    if (!o.seed.empty()) kv.set("seed", o.seed);
    if (o.threads > 0) kv.set("threads", std::uint64_t{o.threads});
    for (const auto& s : o.overrides) kv.apply_override(s);
  } catch (const gaitlab::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return gaitlab::cli::exit_code(e.kind());
  }
  return gaitlab::cli::run_command(command, kv, std::cout, std::cerr);
}
