// misa_cli: train / eval / ablate / generate.

#include <iostream>

#include "CLI11.hpp"
#include "misa/cli.hpp"

namespace {

void add_run_flags(CLI::App* cmd, misa::CliOptions& o) {
  cmd->add_option("--preset", o.preset, "mosi, mosei, urfunny or none");
  cmd->add_option("--config", o.config_file, "key = value config file");
  cmd->add_option("--seed", o.seed, "run seed");
  cmd->add_option("--dataset", o.dataset, "dataset directory");
  cmd->add_flag("--synthetic", o.synthetic, "generate synthetic data");
  cmd->add_option("--variant", o.variant, "full, base, inv, sFusion, iFusion");
  cmd->add_option("--drop-modality", o.drop_modality, "l, v or a (repeatable)");
  cmd->add_option("--alpha", o.alpha, "similarity weight");
  cmd->add_option("--beta", o.beta, "difference weight");
  cmd->add_option("--gamma", o.gamma, "reconstruction weight");
  cmd->add_option("--set", o.set, "extra key=value override (repeatable)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Modality-invariant and -specific representation learning"};
  app.require_subcommand(1);
  misa::CliOptions o;

  auto* train = app.add_subcommand("train", "train a model and write a run directory");
  add_run_flags(train, o);
  train->add_option("--out", o.out, "output directory")->required();

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--checkpoint", o.checkpoint, "checkpoint.bin")->required();
  eval->add_option("--dataset", o.dataset, "dataset directory");
  eval->add_flag("--synthetic", o.synthetic, "use the run's synthetic data");
  eval->add_option("--split", o.split, "train, dev or test");
  eval->add_option("--export", o.export_what, "embeddings, attention or all");
  eval->add_option("--out", o.out, "directory for metrics and exports");

  auto* ablate = app.add_subcommand("ablate", "run the ablation grid");
  add_run_flags(ablate, o);
  ablate->add_option("--rows", o.rows, "rows to run, e.g. 1,5-7");
  ablate->add_option("--out", o.out, "output directory")->required();

  auto* generate = app.add_subcommand("generate", "write a synthetic dataset");
  add_run_flags(generate, o);
  generate->add_option("--out", o.out, "dataset directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : misa::kExitConfig;
  }

  if (train->parsed()) return misa::cmd_train(o);
  if (eval->parsed()) return misa::cmd_eval(o);
  if (ablate->parsed()) return misa::cmd_ablate(o);
  return misa::cmd_generate(o);
}
