#pragma once

// Command implementations behind tools/misa_cli. Each returns a process exit
// code: 0 success, 1 runtime failure (or a failed ablation row), 2 bad
// configuration or input, 3 numerical failure.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "misa/checkpoint.hpp"
#include "misa/run_config.hpp"
#include "misa/training.hpp"

namespace misa {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumerical = 3;

struct CliOptions {
  std::optional<std::string> preset;
  std::filesystem::path config_file;
  std::optional<std::uint64_t> seed;
  std::filesystem::path out;
  std::optional<std::string> dataset;
  bool synthetic = false;
  std::optional<std::string> variant;
  std::vector<std::string> drop_modality;
  std::optional<double> alpha, beta, gamma;
  std::vector<std::string> set;  // key=value

  std::filesystem::path checkpoint;
  std::string split = "test";
  std::string export_what;  // "", embeddings, attention, all
  std::string rows;         // ablation rows, e.g. "1,5-7"
};

// Layering: preset < config file < flags. `--preset` beats a preset named in
// the config file.
inline KeyValues collect_overrides(const CliOptions& o, KeyValues base = {}) {
  KeyValues kv = std::move(base);
  if (!o.config_file.empty()) {
    try {
      for (auto& [k, v] : parse_key_values(read_file(o.config_file), o.config_file.string())) {
        kv[k] = v;
      }
    } catch (const IoError& e) {
      throw ConfigError(e.what());
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
  if (o.preset) kv["preset"] = *o.preset;
  if (o.seed) kv["seed"] = std::to_string(*o.seed);
  if (o.dataset && o.synthetic) {
    throw ConfigError("--dataset and --synthetic are mutually exclusive");
  }
  if (o.dataset) kv["dataset"] = *o.dataset;
  if (o.synthetic) kv["dataset"] = "";
  if (o.variant) kv["variant"] = *o.variant;
  if (!o.drop_modality.empty()) {
    std::string joined;
    for (const auto& m : o.drop_modality) joined += (joined.empty() ? "" : ",") + m;
    kv["drop_modality"] = joined;
  }
  if (o.alpha) kv["alpha"] = format_double(*o.alpha);
  if (o.beta) kv["beta"] = format_double(*o.beta);
  if (o.gamma) kv["gamma"] = format_double(*o.gamma);
  for (const auto& item : o.set) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("--set expects key=value, got '" + item + "'");
    }
    kv[trim(item.substr(0, eq))] = trim(item.substr(eq + 1));
  }
  return kv;
}

inline std::size_t data_threads() {
  const char* env = std::getenv("MISA_THREADS");
  if (!env || !*env) return 1;
  const long n = std::strtol(env, nullptr, 10);
  return n > 0 ? static_cast<std::size_t>(n) : 1;
}

namespace detail {

inline nlohmann::json loss_json(const LossReport& r) {
  return {{"task", r.task}, {"sim", r.sim}, {"diff", r.diff},
          {"recon", r.recon}, {"total", r.total}};
}

inline std::string history_text(const std::vector<EpochRecord>& history) {
  std::string out;
  for (const auto& e : history) {
    nlohmann::json j = {{"epoch", e.epoch}, {"lr", e.lr},
                        {"train", loss_json(e.train)}, {"val", loss_json(e.val)}};
    out += j.dump() + "\n";
  }
  return out;
}

template <typename F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const DatasetError& e) {
    err << "dataset error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    // ConfigError, ShapeError, LabelError, MetricError
    err << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

inline nlohmann::json square(const std::vector<double>& flat, std::size_t rows) {
  nlohmann::json m = nlohmann::json::array();
  for (std::size_t i = 0; i < rows; ++i) {
    m.push_back(std::vector<double>(flat.begin() + i * rows, flat.begin() + (i + 1) * rows));
  }
  return m;
}

}  // namespace detail

struct RunOutcome {
  RunConfig config;
  TrainResult<float> result;
  Evaluation test;
};

// Trains, restores the checkpoint-selected parameters, writes the run
// directory, and evaluates on the test split.
inline RunOutcome run_training(RunConfig rc, const DatasetSplits& data,
                               const std::filesystem::path& out_dir,
                               std::ostream& log) {
  auto model = build_variant<float>(rc.model, rc.train.seed);
  auto result = train(model, data, rc.train,
                      EpochObserver<float>([&](const EpochRecord& e, MisaModel<float>&) {
                        log << "epoch " << e.epoch << "  lr " << format_double(e.lr)
                            << "  train " << format_double(e.train.total)
                            << "  val " << format_double(e.val.total) << "\n";
                        return true;
                      }),
                      data_threads());
  restore(model.parameters(), result.best_parameters);
  const auto config_text = echo_text(rc);
  RunOutcome outcome{rc, std::move(result), {}};
  outcome.test = evaluate(model, data.test, rc.train.batch_size);
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    save_checkpoint(out_dir / "checkpoint.bin",
                    Checkpoint{config_text, snapshot(model.parameters())});
    write_file_atomic(out_dir / "history.jsonl", detail::history_text(outcome.result.history));
    write_file_atomic(out_dir / "config.txt", config_text);
    write_file_atomic(out_dir / "metrics.txt", outcome.test.metrics.to_text());
  }
  return outcome;
}

inline int cmd_train(const CliOptions& o, std::ostream& out = std::cout,
                     std::ostream& err = std::cerr) {
  return detail::guarded(err, [&] {
    if (o.out.empty()) throw ConfigError("train needs --out");
    auto rc = resolve_run_config(collect_overrides(o));
    auto data = load_run_data(rc);
    const auto run = run_training(rc, data, o.out, out);
    out << "checkpoint epoch " << run.result.state.checkpoint_epoch << " of "
        << run.result.history.size()
        << (run.result.early_stopped ? " (early stop)" : "") << "\n";
    out << run.test.metrics.to_text();
    for (const auto& w : run.test.metrics.warnings) err << "warning: " << w << "\n";
    return kExitOk;
  });
}

inline int cmd_eval(const CliOptions& o, std::ostream& out = std::cout,
                    std::ostream& err = std::cerr) {
  return detail::guarded(err, [&] {
    if (o.checkpoint.empty()) throw ConfigError("eval needs --checkpoint");
    const auto ckpt = load_checkpoint(o.checkpoint);
    KeyValues base;
    try {
      base = parse_key_values(ckpt.config_text, "checkpoint config");
    } catch (const std::invalid_argument& e) {
      throw CheckpointError(e.what());
    }
    // Only the data source may change at evaluation time.
    CliOptions data_only;
    data_only.dataset = o.dataset;
    data_only.synthetic = o.synthetic;
    auto rc = resolve_run_config(collect_overrides(data_only, base));
    auto data = load_run_data(rc);
    auto model = build_variant<float>(rc.model, rc.train.seed);
    restore(model.parameters(), ckpt.tensors);

    const bool want_embeddings = o.export_what == "embeddings" || o.export_what == "all";
    const bool want_attention = o.export_what == "attention" || o.export_what == "all";
    if (!o.export_what.empty() && !want_embeddings && !want_attention) {
      throw ConfigError("--export expects embeddings, attention or all");
    }
    const auto ev = evaluate(model, data.split(o.split), rc.train.batch_size,
                             want_embeddings || want_attention);
    out << ev.metrics.to_text();
    for (const auto& w : ev.metrics.warnings) err << "warning: " << w << "\n";

    const auto dir = o.out.empty() ? o.checkpoint.parent_path() : o.out;
    if (!o.out.empty() || !o.export_what.empty()) std::filesystem::create_directories(dir);
    if (!o.out.empty()) {
      write_file_atomic(dir / ("metrics_" + o.split + ".txt"), ev.metrics.to_text());
    }
    if (want_embeddings) {
      std::string text;
      for (const auto& e : ev.embeddings) {
        nlohmann::json j = {{"id", e.id},
                            {"modality", std::string(1, tag(e.modality))},
                            {"space", e.invariant ? "invariant" : "specific"},
                            {"vector", e.vector}};
        text += j.dump() + "\n";
      }
      write_file_atomic(dir / "embeddings.jsonl", text);
    }
    if (want_attention) {
      const std::size_t rows = ev.row_labels.size();
      std::string text;
      for (const auto& a : ev.attention) {
        nlohmann::json j = {{"id", a.id}, {"rows", ev.row_labels},
                            {"matrix", detail::square(a.matrix, rows)}};
        text += j.dump() + "\n";
      }
      write_file_atomic(dir / "attention.jsonl", text);
      nlohmann::json mean = {{"rows", ev.row_labels},
                             {"matrix", detail::square(ev.mean_attention, rows)}};
      write_file_atomic(dir / "attention_mean.json", mean.dump(2) + "\n");
    }
    return kExitOk;
  });
}

struct AblationRow {
  int number;
  const char* label;
};

inline constexpr AblationRow kAblationRows[] = {
    {1, "MISA"},         {2, "(-) language l"}, {3, "(-) visual v"},
    {4, "(-) audio a"},  {5, "(-) L_sim"},      {6, "(-) L_diff"},
    {7, "(-) L_recon"},  {8, "base"},           {9, "inv"},
    {10, "sFusion"},     {11, "iFusion"}};

// "1,5-7" -> {1, 5, 6, 7}; empty selects every row.
inline std::vector<int> parse_rows(const std::string& list) {
  std::set<int> rows;
  if (trim(list).empty()) {
    for (const auto& r : kAblationRows) rows.insert(r.number);
    return {rows.begin(), rows.end()};
  }
  auto number = [&](const std::string& s) {
    const int n = static_cast<int>(detail::parse_uint<unsigned>("rows", trim(s)));
    if (n < 1 || n > 11) throw ConfigError("ablation row " + s + " is outside 1-11");
    return n;
  };
  for (const auto& item : detail::split_list(list)) {
    const auto dash = item.find('-');
    if (dash == std::string::npos) {
      rows.insert(number(item));
      continue;
    }
    const int lo = number(item.substr(0, dash)), hi = number(item.substr(dash + 1));
    if (lo > hi) throw ConfigError("bad ablation row range '" + item + "'");
    for (int r = lo; r <= hi; ++r) rows.insert(r);
  }
  return {rows.begin(), rows.end()};
}

// Overrides that turn the base configuration into the given ablation row.
inline KeyValues ablation_overrides(int row) {
  switch (row) {
    case 1: return {};
    case 2: return {{"drop_modality", "l"}};
    case 3: return {{"drop_modality", "v"}};
    case 4: return {{"drop_modality", "a"}};
    case 5: return {{"alpha", "0"}};
    case 6: return {{"beta", "0"}};
    case 7: return {{"gamma", "0"}};
    case 8: return {{"variant", "base"}};
    case 9: return {{"variant", "inv"}};
    case 10: return {{"variant", "sFusion"}};
    case 11: return {{"variant", "iFusion"}};
    default: throw ConfigError("no ablation row " + std::to_string(row));
  }
}

inline int cmd_ablate(const CliOptions& o, std::ostream& out = std::cout,
                      std::ostream& err = std::cerr) {
  std::vector<int> rows;
  KeyValues base;
  RunConfig base_rc;
  const int setup = detail::guarded(err, [&] {
    if (o.out.empty()) throw ConfigError("ablate needs --out");
    rows = parse_rows(o.rows);
    base = collect_overrides(o);
    base_rc = resolve_run_config(base);
    return kExitOk;
  });
  if (setup != kExitOk) return setup;

  std::optional<DatasetSplits> data;
  const int loaded = detail::guarded(err, [&] {
    data = load_run_data(base_rc);
    return kExitOk;
  });
  if (loaded != kExitOk) return loaded;

  bool any_failed = false;
  std::string table;
  std::string records;
  char line[256];
  std::snprintf(line, sizeof line, "%-4s %-16s %s\n", "row", "model", "metrics");
  table += line;
  for (int row : rows) {
    const auto& label = kAblationRows[row - 1].label;
    KeyValues kv = base;
    for (const auto& [k, v] : ablation_overrides(row)) kv[k] = v;
    char dirname[16];
    std::snprintf(dirname, sizeof dirname, "row_%02d", row);
    std::string summary;
    nlohmann::json rec = {{"row", row}, {"model", label}};
    const int code = detail::guarded(err, [&] {
      auto rc = resolve_run_config(kv);
      rc.model.input_dims = base_rc.model.input_dims;
      std::ostringstream log;
      const auto run = run_training(rc, *data, o.out / dirname, log);
      for (const auto& [k, v] : run.test.metrics.values) {
        summary += k + "=" + format_double(v) + " ";
        rec["metrics"][k] = v;
      }
      rec["epochs"] = run.result.history.size();
      return kExitOk;
    });
    if (code != kExitOk) {
      any_failed = true;
      summary = "FAILED (exit " + std::to_string(code) + ")";
      rec["failed"] = true;
    }
    std::snprintf(line, sizeof line, "%-4d %-16s ", row, label);
    table += line + summary + "\n";
    records += rec.dump() + "\n";
    out << line << summary << "\n" << std::flush;
  }
  const int written = detail::guarded(err, [&] {
    write_file_atomic(o.out / "ablation.txt", table);
    write_file_atomic(o.out / "ablation.jsonl", records);
    return kExitOk;
  });
  if (written != kExitOk) return written;
  return any_failed ? kExitFailure : kExitOk;
}

// Writes a synthetic dataset directory from the resolved configuration.
inline int cmd_generate(const CliOptions& o, std::ostream& out = std::cout,
                        std::ostream& err = std::cerr) {
  return detail::guarded(err, [&] {
    if (o.out.empty()) throw ConfigError("generate needs --out");
    CliOptions synth = o;
    synth.dataset.reset();
    synth.synthetic = true;
    auto rc = resolve_run_config(collect_overrides(synth));
    const auto data = generate_synthetic(rc.synth);
    save_dataset(data, o.out);
    out << "wrote " << data.train.size() << "/" << data.dev.size() << "/"
        << data.test.size() << " examples to " << o.out.string() << "\n";
    return kExitOk;
  });
}

}  // namespace misa
