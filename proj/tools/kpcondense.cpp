// kpcondense: parameter accounting, gradient checks and the synthetic
// key-part benchmark from the command line.
//
// Exit codes: 0 ok, 1 check failure, 2 usage / missing input, 3 training divergence.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "kpc/accounting.hpp"
#include "kpc/errors.hpp"
#include "kpc/gradcheck.hpp"
#include "kpc/run_config.hpp"
#include "kpc/toybench.hpp"

namespace fs = std::filesystem;
using namespace kpc;

namespace {

constexpr int kExitCheckFailed = 1;
constexpr int kExitUsage = 2;
constexpr int kExitDiverged = 3;

// --config plus one --<key> flag per RunConfig field.
struct ConfigFlags {
  std::string config = "default";
  std::map<std::string, std::string> overrides;

  void attach(CLI::App* app) {
    app->add_option("--config", config, "JSON config file, or 'default'");
    for (const auto& key : RunConfig::keys()) {
      app->add_option("--" + key, overrides[key], RunConfig::describe(key));
    }
  }

  RunConfig resolve(CLI::App* app) const {
    RunConfig cfg = RunConfig::load(config);
    for (const auto& key : RunConfig::keys()) {
      if (app->get_option("--" + key)->count() > 0) cfg.set(key, overrides.at(key));
    }
    return cfg;
  }
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

fs::path test_split_path(const fs::path& train_path) {
  fs::path p = train_path;
  const std::string ext = p.has_extension() ? p.extension().string() : std::string(".bin");
  p.replace_extension();
  return fs::path(p.string() + ".test" + ext);
}

RunConfig config_from_params(const fs::path& params) {
  for (const auto& line : read_manifest_header(params)) {
    if (line.rfind("config ", 0) == 0) return RunConfig::parse(line.substr(7));
  }
  throw IoError(params.string() + ".manifest: no stored config");
}

void check_dataset_matches(const ToyDataset& d, const RunConfig& cfg) {
  if (d.spec.channels != cfg.channels || d.spec.height != cfg.height || d.spec.width != cfg.width ||
      d.spec.num_classes != cfg.num_classes) {
    throw ConfigError("dataset extents (C, H, W, classes) do not match the model config");
  }
}

int cmd_params(const std::string& preset, CLI::App* sub, const ConfigFlags& flags, bool do_sweep,
               const std::string& csv_path) {
  ParamReport report;
  std::optional<HeadConfig> head;
  std::optional<OkpdConfig> okpd;
  std::uint64_t baseline_total = 0;
  if (!preset.empty()) {
    const auto names = preset_names();
    if (std::find(names.begin(), names.end(), preset) == names.end()) {
      std::cerr << "unknown preset '" << preset << "'; available presets:\n";
      for (const auto& n : names) std::cerr << "  " << n << '\n';
      return kExitUsage;
    }
    report = preset_report(preset);
    const HeadPreset p = find_preset(preset);
    head = p.head_cfg;
    okpd = p.okpd_cfg;
    baseline_total = report.baseline_params.value_or(report.total_params);
  } else {
    const RunConfig cfg = flags.resolve(sub);
    head = cfg.head_config();
    okpd = cfg.okpd_config();
    report = count_params_condensed(*head, *okpd);
    const auto base = count_params(baseline_two_fc_layers(cfg.channels, cfg.height, cfg.width, cfg.hidden,
                                                          cfg.num_classes + 1, head->reg_outputs()));
    report.baseline_params = base.total_params;
    report.notes.push_back("baseline: two-FC head of the same width on the flattened grid");
    baseline_total = base.total_params;
  }
  std::cout << format_table(report);
  if (!csv_path.empty()) write_text(csv_path, format_csv(report));
  if (do_sweep) {
    if (!head || !okpd) {
      std::cerr << "--sweep needs a condensed preset or config\n";
      return kExitUsage;
    }
    std::vector<std::size_t> ls;
    for (std::size_t l = 1; l <= std::min(head->height, head->width); ++l) ls.push_back(l);
    std::cout << "\n# (K, L) sweep against baseline of " << baseline_total << " parameters\n";
    std::cout << format_sweep(sweep(*head, *okpd, baseline_total, {1, 2, 4, 8, 16}, ls));
  }
  return 0;
}

int cmd_gradcheck(std::size_t trials, std::uint64_t seed, bool inject_fault) {
  GradCheckOptions opts;
  opts.trials = trials;
  opts.seed = seed;
  opts.inject_fault = inject_fault;
  bool ok = true;
  for (const auto& r : run_gradcheck_suite(opts)) {
    std::printf("%-20s max_rel_err %.3e  checked %zu  skipped %zu  %s\n", r.op.c_str(), r.max_rel_error, r.checked,
                r.skipped, r.passed ? "ok" : "FAIL");
    if (!r.passed) {
      std::printf("  worst at %s\n", r.worst_location.c_str());
      ok = false;
    }
  }
  return ok ? 0 : kExitCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Key-part condensed detection heads: accounting, gradient checks, synthetic benchmark"};
  app.require_subcommand(1);

  // params
  auto* params = app.add_subcommand("params", "Parameter and MAC report for a preset or config");
  std::string preset;
  bool do_sweep = false;
  std::string csv_path;
  ConfigFlags params_flags;
  params->add_option("--preset", preset, "named head preset");
  params_flags.attach(params);
  params->add_flag("--sweep", do_sweep, "add the (K, L) parameter sweep");
  params->add_option("--csv", csv_path, "also write the report as CSV");

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable operation");
  std::size_t trials = 3;
  std::uint64_t gc_seed = 1;
  bool inject_fault = false;
  gradcheck->add_option("--trials", trials, "random instances per operation");
  gradcheck->add_option("--seed", gc_seed, "seed for the random instances");
  gradcheck->add_flag("--inject-fault", inject_fault, "corrupt one analytic gradient (self-test)");

  // config
  auto* config = app.add_subcommand("config", "Configuration utilities");
  config->require_subcommand(1);
  auto* dump = config->add_subcommand("dump", "Print the resolved configuration with every key");
  ConfigFlags dump_flags;
  dump_flags.attach(dump);

  // toy
  auto* toy = app.add_subcommand("toy", "Synthetic key-part benchmark");
  toy->require_subcommand(1);

  auto* gen = toy->add_subcommand("gen", "Generate train and test datasets");
  ConfigFlags gen_flags;
  gen_flags.attach(gen);
  std::string gen_out, gen_test_out;
  gen->add_option("--out", gen_out, "training split file")->required();
  gen->add_option("--test-out", gen_test_out, "test split file (default: <out>.test.bin)");

  auto* trn = toy->add_subcommand("train", "Train a head and save its parameters");
  ConfigFlags train_flags;
  train_flags.attach(trn);
  std::string train_data, train_out, train_log;
  trn->add_option("--data", train_data, "training dataset file (default: generate from config)");
  trn->add_option("--out", train_out, "parameter file")->required();
  trn->add_option("--log", train_log, "metrics CSV (default: <out>.log.csv)");

  auto* evl = toy->add_subcommand("eval", "Evaluate saved parameters on the test split");
  std::string eval_params, eval_data;
  evl->add_option("--params", eval_params, "parameter file written by 'toy train'")->required();
  evl->add_option("--data", eval_data, "test dataset file (default: generate from stored config)");

  auto* heat = toy->add_subcommand("heatmaps", "Export key-part and global activation graymaps");
  std::string heat_params, heat_data, heat_out;
  long heat_index = -1;
  heat->add_option("--params", heat_params, "parameter file written by 'toy train'")->required();
  heat->add_option("--data", heat_data, "dataset file (default: generate test split from stored config)");
  heat->add_option("--index", heat_index, "example index (default: first foreground example)");
  heat->add_option("--out", heat_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (*params) {
      if (!preset.empty() && params_flags.config != "default") {
        std::cerr << "use either --preset or --config\n";
        return kExitUsage;
      }
      return cmd_params(preset, params, params_flags, do_sweep, csv_path);
    }
    if (*gradcheck) return cmd_gradcheck(trials, gc_seed, inject_fault);
    if (*dump) {
      std::cout << dump_flags.resolve(dump).dump();
      return 0;
    }
    if (*gen) {
      const RunConfig cfg = gen_flags.resolve(gen);
      const auto [train_set, test_set] = generate_dataset(cfg.dataset_spec());
      write_dataset(gen_out, train_set);
      const fs::path test_path = gen_test_out.empty() ? test_split_path(gen_out) : fs::path(gen_test_out);
      write_dataset(test_path, test_set);
      std::cout << "wrote " << train_set.examples.size() << " training examples to " << gen_out << " and "
                << test_set.examples.size() << " test examples to " << test_path.string() << '\n';
      return 0;
    }
    if (*trn) {
      const RunConfig cfg = train_flags.resolve(trn);
      ToyDataset data;
      if (train_data.empty()) {
        data = generate_dataset(cfg.dataset_spec()).first;
      } else {
        data = read_dataset(train_data);
        check_dataset_matches(data, cfg);
      }
      ToyModel model(cfg.model_config());
      const fs::path log_path = train_log.empty() ? fs::path(train_out + ".log.csv") : fs::path(train_log);
      std::ofstream log(log_path, std::ios::trunc);
      if (!log) throw IoError("cannot write " + log_path.string());
      log << metrics_csv_header() << '\n';
      std::cout << metrics_csv_header() << '\n';
      train(model, data, cfg.train_config(), [&](const EpochLog& row) {
        log << metrics_csv_row(row) << '\n';
        std::cout << metrics_csv_row(row) << '\n';
      });
      save_params(train_out, model, {"config " + cfg.dump_compact()});
      return 0;
    }
    if (*evl) {
      const RunConfig cfg = config_from_params(eval_params);
      ToyModel model(cfg.model_config());
      load_params(eval_params, model);
      ToyDataset data = eval_data.empty() ? generate_dataset(cfg.dataset_spec()).second : read_dataset(eval_data);
      check_dataset_matches(data, cfg);
      std::cout << format_metrics(evaluate(model, data));
      return 0;
    }
    if (*heat) {
      const RunConfig cfg = config_from_params(heat_params);
      ToyModel model(cfg.model_config());
      load_params(heat_params, model);
      ToyDataset data = heat_data.empty() ? generate_dataset(cfg.dataset_spec()).second : read_dataset(heat_data);
      check_dataset_matches(data, cfg);
      std::size_t index = 0;
      if (heat_index >= 0) {
        index = static_cast<std::size_t>(heat_index);
      } else {
        while (index < data.examples.size() && data.examples[index].y_hat == 0) ++index;
      }
      if (index >= data.examples.size()) throw ConfigError("example index out of range");
      const auto files = export_heatmaps(model, data.examples[index], heat_out);
      for (const auto& f : files) std::cout << f.string() << '\n';
      std::cout << (fs::path(heat_out) / "keyparts.txt").string() << '\n';
      return 0;
    }
  } catch (const DivergenceError& e) {
    std::cerr << "training diverged: " << e.what() << '\n';
    return kExitDiverged;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitCheckFailed;
  }
  return 0;
}
