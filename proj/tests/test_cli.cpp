#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <sys/wait.h>

#include "misa/cli.hpp"
#include "support.hpp"

using namespace misa;
using misa::testing::scratch_dir;

namespace {

// Small, fast run: tiny synthetic data and width.
CliOptions quick(const std::filesystem::path& out) {
  CliOptions o;
  o.synthetic = true;
  o.seed = 3;
  o.out = out;
  o.set = {"d_h=8",          "max_epochs=3",  "batch_size=8", "synth_n_train=32",
           "synth_n_dev=16", "synth_n_test=16", "synth_dims=6,4,5"};
  return o;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(MISA_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

int train_quiet(const CliOptions& o) {
  std::ostringstream out, err;
  return cmd_train(o, out, err);
}

}  // namespace

TEST(Presets, MatchHyperParameterTable) {
  struct Row {
    const char* preset;
    Activation act;
    std::size_t batch;
    double alpha, beta, gamma, dropout;
  };
  for (const auto& r : {Row{"mosi", Activation::relu, 64, 1.0, 0.3, 1.0, 0.5},
                        Row{"mosei", Activation::leaky_relu, 16, 0.7, 0.3, 0.7, 0.1},
                        Row{"urfunny", Activation::tanh, 32, 0.7, 1.0, 1.0, 0.1}}) {
    const auto rc = resolve_run_config({{"preset", r.preset}});
    EXPECT_EQ(rc.model.activation, r.act) << r.preset;
    EXPECT_EQ(rc.train.batch_size, r.batch) << r.preset;
    EXPECT_EQ(rc.train.weights.alpha, r.alpha) << r.preset;
    EXPECT_EQ(rc.train.weights.beta, r.beta) << r.preset;
    EXPECT_EQ(rc.train.weights.gamma, r.gamma) << r.preset;
    EXPECT_EQ(rc.model.dropout, r.dropout) << r.preset;
    EXPECT_EQ(rc.train.cmd.order, 5) << r.preset;
    EXPECT_EQ(rc.train.grad_clip, 1.0) << r.preset;
    EXPECT_EQ(rc.model.hidden, 128u) << r.preset;
    EXPECT_EQ(rc.train.learning_rate, 1e-4) << r.preset;
    EXPECT_EQ(rc.train.patience, 6u) << r.preset;
  }
  EXPECT_EQ(resolve_run_config({}).preset, "mosi");
  EXPECT_EQ(resolve_run_config({{"preset", "urfunny"}}).model.task, TaskKind::classification);
}

TEST(Presets, UnknownPresetAndIncompleteNoneAreConfigErrors) {
  EXPECT_THROW(resolve_run_config({{"preset", "iemocap"}}), ConfigError);
  try {
    resolve_run_config({{"preset", "none"}, {"cmd_k", "5"}});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("activation"), std::string::npos) << e.what();
  }
  KeyValues full = {{"preset", "none"}};
  for (const auto& [k, v] : preset_values("mosei")) full[k] = v;
  EXPECT_EQ(resolve_run_config(full).train.batch_size, 16u);
  EXPECT_THROW(resolve_run_config({{"no_such_key", "1"}}), ConfigError);
}

TEST(Layering, FlagsBeatConfigFileBeatPreset) {
  const auto dir = scratch_dir("layering");
  std::ofstream(dir / "run.cfg") << "preset = mosei\nalpha = 0.25\nbeta = 0.5\n";
  CliOptions o;
  o.config_file = dir / "run.cfg";
  o.beta = 0.75;
  auto rc = resolve_run_config(collect_overrides(o));
  EXPECT_EQ(rc.preset, "mosei");
  EXPECT_EQ(rc.train.weights.alpha, 0.25);
  EXPECT_EQ(rc.train.weights.beta, 0.75);
  EXPECT_EQ(rc.train.weights.gamma, 0.7);
  o.preset = "urfunny";
  rc = resolve_run_config(collect_overrides(o));
  EXPECT_EQ(rc.preset, "urfunny");
  EXPECT_EQ(rc.train.weights.alpha, 0.25);
  EXPECT_EQ(rc.model.activation, Activation::tanh);
  o.set = {"broken"};
  EXPECT_THROW(collect_overrides(o), ConfigError);
}

TEST(Train, WritesRunDirectoryWithResolvedValues) {
  const auto dir = scratch_dir("train");
  auto o = quick(dir / "run");
  o.alpha = 0.5;
  ASSERT_EQ(train_quiet(o), kExitOk);
  for (const char* f : {"checkpoint.bin", "history.jsonl", "config.txt", "metrics.txt"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / "run" / f)) << f;
  }
  const auto cfg = parse_key_values(slurp(dir / "run" / "config.txt"), "config");
  EXPECT_EQ(cfg.at("alpha"), "0.5");
  EXPECT_EQ(cfg.at("beta"), "0.3");
  EXPECT_EQ(cfg.at("gamma"), "1");
  EXPECT_EQ(cfg.at("d_h"), "8");
  EXPECT_EQ(cfg.at("cmd_k"), "5");
  std::istringstream history(slurp(dir / "run" / "history.jsonl"));
  std::string line;
  std::size_t epochs = 0;
  while (std::getline(history, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j["epoch"], ++epochs);
    for (const char* k : {"task", "sim", "diff", "recon", "total"}) {
      EXPECT_TRUE(j["train"].contains(k) && j["val"].contains(k)) << k;
    }
  }
  EXPECT_EQ(epochs, 3u);
  const auto metrics = slurp(dir / "run" / "metrics.txt");
  EXPECT_NE(metrics.find("mae = "), std::string::npos);
  EXPECT_NE(metrics.find("acc2_pos = "), std::string::npos);
}

TEST(Train, InvariantOnlyVariantHasNoDifferenceLoss) {
  const auto dir = scratch_dir("train_inv");
  auto o = quick(dir);
  o.variant = "inv";
  ASSERT_EQ(train_quiet(o), kExitOk);
  std::istringstream history(slurp(dir / "history.jsonl"));
  std::string line;
  while (std::getline(history, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j["train"]["diff"], 0.0);
    EXPECT_EQ(j["val"]["diff"], 0.0);
    EXPECT_GT(j["train"]["sim"].get<double>(), 0.0);
  }
}

TEST(Train, EchoedConfigReproducesHistory) {
  const auto dir = scratch_dir("echo");
  ASSERT_EQ(train_quiet(quick(dir / "a")), kExitOk);
  CliOptions again;
  again.config_file = dir / "a" / "config.txt";
  again.out = dir / "b";
  ASSERT_EQ(train_quiet(again), kExitOk);
  EXPECT_EQ(slurp(dir / "a" / "history.jsonl"), slurp(dir / "b" / "history.jsonl"));
  EXPECT_EQ(slurp(dir / "a" / "checkpoint.bin"), slurp(dir / "b" / "checkpoint.bin"));
  EXPECT_EQ(slurp(dir / "a" / "config.txt"), slurp(dir / "b" / "config.txt"));
}

TEST(Eval, DeterministicWithExports) {
  const auto dir = scratch_dir("eval");
  ASSERT_EQ(train_quiet(quick(dir)), kExitOk);
  CliOptions e;
  e.checkpoint = dir / "checkpoint.bin";
  e.export_what = "all";
  std::ostringstream first, second, err;
  ASSERT_EQ(cmd_eval(e, first, err), kExitOk) << err.str();
  const auto embeddings = slurp(dir / "embeddings.jsonl");
  ASSERT_EQ(cmd_eval(e, second, err), kExitOk);
  EXPECT_EQ(first.str(), second.str());
  EXPECT_EQ(slurp(dir / "embeddings.jsonl"), embeddings);
  EXPECT_EQ(first.str(), slurp(dir / "metrics.txt"));

  std::size_t lines = 0;
  std::istringstream in(embeddings);
  std::string line;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j["vector"].size(), 8u);
    ++lines;
  }
  EXPECT_EQ(lines, 16u * 6);

  const auto mean = nlohmann::json::parse(slurp(dir / "attention_mean.json"));
  EXPECT_EQ(mean["rows"], (std::vector<std::string>{"c_l", "c_v", "c_a", "p_l", "p_v", "p_a"}));
  for (const auto& row : mean["matrix"]) {
    double s = 0.0;
    for (double v : row) s += v;
    EXPECT_NEAR(s, 1.0, 1e-5);
  }

  e.export_what = "";
  e.split = "dev";
  e.out = dir / "dev_eval";
  ASSERT_EQ(cmd_eval(e, first, err), kExitOk);
  EXPECT_TRUE(std::filesystem::exists(dir / "dev_eval" / "metrics_dev.txt"));
  e.export_what = "everything";
  EXPECT_EQ(cmd_eval(e, first, err), kExitConfig);
}

TEST(Eval, MismatchedCheckpointIsConfigError) {
  const auto dir = scratch_dir("mismatch");
  ASSERT_EQ(train_quiet(quick(dir)), kExitOk);
  auto ckpt = load_checkpoint(dir / "checkpoint.bin");
  auto kv = parse_key_values(ckpt.config_text, "config");
  kv["d_h"] = "12";
  std::string text;
  for (const auto& [k, v] : kv) text += k + " = " + v + "\n";
  ckpt.config_text = text;
  save_checkpoint(dir / "edited.bin", ckpt);
  CliOptions e;
  e.checkpoint = dir / "edited.bin";
  std::ostringstream out, err;
  EXPECT_EQ(cmd_eval(e, out, err), kExitConfig);
  EXPECT_NE(err.str().find("shape"), std::string::npos) << err.str();

  std::ofstream(dir / "garbage.bin") << "not a checkpoint";
  e.checkpoint = dir / "garbage.bin";
  EXPECT_EQ(cmd_eval(e, out, err), kExitConfig);
}

TEST(Ablate, RowsAreLabelledAndIndividuallyReproducible) {
  const auto dir = scratch_dir("ablate");
  auto o = quick(dir / "grid");
  o.rows = "5-7";
  std::ostringstream out, err;
  ASSERT_EQ(cmd_ablate(o, out, err), kExitOk) << err.str();
  std::istringstream records(slurp(dir / "grid" / "ablation.jsonl"));
  std::string line;
  std::vector<std::string> labels;
  while (std::getline(records, line)) labels.push_back(nlohmann::json::parse(line)["model"]);
  EXPECT_EQ(labels, (std::vector<std::string>{"(-) L_sim", "(-) L_diff", "(-) L_recon"}));
  const auto table = slurp(dir / "grid" / "ablation.txt");
  EXPECT_NE(table.find("(-) L_diff"), std::string::npos);

  o.out = dir / "single";
  o.rows = "6";
  ASSERT_EQ(cmd_ablate(o, out, err), kExitOk);
  EXPECT_EQ(slurp(dir / "grid" / "row_06" / "metrics.txt"),
            slurp(dir / "single" / "row_06" / "metrics.txt"));
  const auto cfg = parse_key_values(slurp(dir / "single" / "row_06" / "config.txt"), "c");
  EXPECT_EQ(cfg.at("beta"), "0");
}

TEST(Ablate, RowParsing) {
  EXPECT_EQ(parse_rows("1,5-7"), (std::vector<int>{1, 5, 6, 7}));
  EXPECT_EQ(parse_rows("").size(), 11u);
  EXPECT_THROW(parse_rows("0"), ConfigError);
  EXPECT_THROW(parse_rows("7-5"), ConfigError);
  EXPECT_THROW(parse_rows("12"), ConfigError);
}

TEST(Binary, ExitCodes) {
  const auto dir = scratch_dir("binary");
  const std::string quick_flags =
      " --synthetic --seed 2 --set d_h=8 --set max_epochs=2 --set batch_size=8"
      " --set synth_n_train=16 --set synth_n_dev=8 --set synth_n_test=8";
  EXPECT_EQ(run_cli("--help"), 0);
  EXPECT_EQ(run_cli("train"), kExitConfig);
  EXPECT_EQ(run_cli("train --preset iemocap --synthetic --out " + (dir / "x").string()), kExitConfig);
  EXPECT_EQ(run_cli("train --preset none --synthetic --out " + (dir / "x").string()), kExitConfig);
  EXPECT_EQ(run_cli("train --dataset " + (dir / "missing").string() + " --out " + (dir / "x").string()),
            kExitConfig);
  EXPECT_EQ(run_cli("train" + quick_flags + " --out " + (dir / "ok").string()), kExitOk);
  EXPECT_EQ(run_cli("eval --checkpoint " + (dir / "ok" / "checkpoint.bin").string() + " --synthetic"),
            kExitOk);
  EXPECT_EQ(run_cli("eval --checkpoint " + (dir / "nope.bin").string()), kExitConfig);
  EXPECT_EQ(run_cli("generate --seed 4 --set synth_n_train=8 --set synth_n_dev=4 --set synth_n_test=4"
                    " --out " + (dir / "data").string()),
            kExitOk);
  EXPECT_EQ(run_cli("train --dataset " + (dir / "data").string() +
                    " --set d_h=8 --set max_epochs=1 --set batch_size=4 --out " + (dir / "fromdisk").string()),
            kExitOk);
  // A learning rate large enough to overflow surfaces as a numerical failure.
  EXPECT_EQ(run_cli("train" + quick_flags + " --set learning_rate=1e30 --out " + (dir / "nan").string()),
            kExitNumerical);
}
