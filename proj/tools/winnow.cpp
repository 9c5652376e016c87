// Command-line front end. Every subcommand exits 0 on success and prints a
// single machine-readable "error: kind=<tag> message=<text>" line on stderr
// (exit 1) when a winnow error aborts it.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "winnow/accounting.hpp"
#include "winnow/checkpoint.hpp"
#include "winnow/dataforge.hpp"
#include "winnow/errors.hpp"
#include "winnow/harness.hpp"
#include "winnow/report.hpp"
#include "winnow/resnet.hpp"

namespace {

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw winnow::IoError("cannot open '" + path + "' for reading");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

bool ends_with(const std::string& text, const std::string& suffix) {
  return text.size() >= suffix.size() &&
         text.compare(text.size() - suffix.size(), suffix.size(), suffix) == 0;
}

winnow::ModelGraph model_from_path(const std::string& path, uint64_t seed) {
  if (ends_with(path, ".json")) {
    const winnow::ExperimentConfig config =
        winnow::load_experiment_config(path);
    winnow::Rng rng(winnow::derive_seed(seed, "init"));
    return winnow::build_resnet(config.arch, rng);
  }
  return winnow::load_checkpoint(path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"winnow: train, prune and audit small residual classifiers"};
  app.require_subcommand(1);

  // ---- gen-data ----
  auto* gen = app.add_subcommand("gen-data", "render the synthetic dataset");
  std::string gen_config, gen_out;
  uint64_t gen_seed = 0;
  gen->add_option("config", gen_config, "generator config JSON")->required();
  gen->add_option("out_dir", gen_out, "output directory")->required();
  gen->add_option("--seed", gen_seed, "dataset seed (default 0)");
  gen->callback([&] {
    const winnow::GeneratorConfig config =
        winnow::load_generator_config(gen_config);
    const winnow::DatasetManifest manifest =
        winnow::generate_dataset(config, gen_seed, gen_out);
    int64_t defective = 0;
    for (const auto& record : manifest.records) defective += record.label;
    std::cout << "wrote " << manifest.records.size() << " images ("
              << defective << " defective, "
              << manifest.records.size() - defective << " clean) under "
              << manifest.root << "\n";
  });

  // ---- train ----
  auto* train_cmd = app.add_subcommand("train", "k-fold baseline training");
  std::string train_config, train_out = "results";
  uint64_t train_seed = 0;
  auto* train_seed_opt =
      train_cmd->add_option("--seed", train_seed, "override config seed");
  train_cmd->add_option("config", train_config, "experiment config JSON")
      ->required();
  train_cmd->add_option("--out", train_out, "results directory");
  train_cmd->callback([&] {
    winnow::ExperimentConfig config =
        winnow::load_experiment_config(train_config);
    if (train_seed_opt->count() > 0) config.seed = train_seed;
    config.method = winnow::PruneMethod::kNone;
    const winnow::MetricsReport report =
        winnow::run_experiment(config, train_out);
    std::cout << winnow::emit_report(report, "table");
    std::cout << "results in " << train_out << "\n";
  });

  // ---- prune ----
  auto* prune_cmd =
      app.add_subcommand("prune", "k-fold training plus the pruning plan");
  std::string prune_config, prune_out = "results", prune_method;
  uint64_t prune_seed = 0;
  auto* prune_seed_opt =
      prune_cmd->add_option("--seed", prune_seed, "override config seed");
  prune_cmd->add_option("config", prune_config, "experiment config JSON")
      ->required();
  prune_cmd->add_option("--method", prune_method, "hard | asfp")->required();
  prune_cmd->add_option("--out", prune_out, "results directory");
  prune_cmd->callback([&] {
    winnow::ExperimentConfig config =
        winnow::load_experiment_config(prune_config);
    if (prune_seed_opt->count() > 0) config.seed = prune_seed;
    config.method = winnow::prune_method_from_name(prune_method);
    if (config.method == winnow::PruneMethod::kNone) {
      throw winnow::ConfigError("prune: method must be hard or asfp");
    }
    const winnow::MetricsReport report =
        winnow::run_experiment(config, prune_out);
    std::cout << winnow::emit_report(report, "table");
    std::cout << "results in " << prune_out << "\n";
  });

  // ---- eval ----
  auto* eval_cmd =
      app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
  std::string eval_ckpt, eval_manifest, eval_format = "text";
  int eval_batch = 32;
  eval_cmd->add_option("checkpoint", eval_ckpt, "model checkpoint")->required();
  eval_cmd->add_option("manifest", eval_manifest, "dataset manifest")
      ->required();
  eval_cmd->add_option("--batch", eval_batch, "evaluation batch size");
  eval_cmd->add_option("--format", eval_format, "text | json");
  eval_cmd->callback([&] {
    winnow::ModelGraph model = winnow::load_checkpoint(eval_ckpt);
    const winnow::LoadedDataset data = winnow::load_dataset(eval_manifest);
    winnow::ExperimentConfig config;
    config.arch.in_h = model.meta.in_h;
    config.arch.in_w = model.meta.in_w;
    config.batch_size = eval_batch;
    std::vector<int64_t> indices(data.images.size());
    std::iota(indices.begin(), indices.end(), 0);
    const winnow::EvalResult r =
        winnow::evaluate_model(model, data, indices, config);
    if (eval_format == "json") {
      std::cout << "{\"accuracy\": " << r.accuracy << ", \"total\": " << r.total
                << ", \"correct\": " << r.correct << ", \"tp\": " << r.tp
                << ", \"tn\": " << r.tn << ", \"fp\": " << r.fp
                << ", \"fn\": " << r.fn
                << ", \"recall_defective\": " << r.recall_defective
                << ", \"recall_clean\": " << r.recall_clean << "}\n";
    } else {
      std::cout << "accuracy " << r.accuracy << " (" << r.correct << "/"
                << r.total << ")\n"
                << "tp " << r.tp << "  tn " << r.tn << "  fp " << r.fp
                << "  fn " << r.fn << "\n"
                << "recall defective " << r.recall_defective << "  clean "
                << r.recall_clean << "\n";
    }
  });

  // ---- count ----
  auto* count_cmd = app.add_subcommand(
      "count", "parameter / FLOP accounting for a config or checkpoint");
  std::string count_path, count_format = "text";
  uint64_t count_seed = 0;
  count_cmd->add_option("model", count_path, "experiment config or checkpoint")
      ->required();
  count_cmd->add_option("--format", count_format, "text | json");
  count_cmd->add_option("--seed", count_seed,
                        "init seed when building from a config");
  count_cmd->callback([&] {
    winnow::ModelGraph model = model_from_path(count_path, count_seed);
    const winnow::CostReport report = winnow::cost_report(model);
    std::cout << (count_format == "json" ? winnow::cost_report_json(report)
                                         : winnow::cost_report_text(report));
  });

  // ---- baseline ----
  auto* base_cmd = app.add_subcommand(
      "baseline", "windowed mean-threshold detector sweep");
  std::string base_manifest, base_format = "text";
  std::vector<int> base_windows{32};
  std::vector<double> base_thresholds{2,  3,  4,  5,  6,  7, 8,
                                      9, 10, 12, 14, 16, 20};
  base_cmd->add_option("manifest", base_manifest, "dataset manifest")
      ->required();
  base_cmd->add_option("--windows", base_windows, "window sizes to sweep")
      ->delimiter(',');
  base_cmd
      ->add_option("--thresholds", base_thresholds,
                   "mean-deviation thresholds to sweep")
      ->delimiter(',');
  base_cmd->add_option("--format", base_format, "text | json");
  base_cmd->callback([&] {
    const winnow::LoadedDataset data = winnow::load_dataset(base_manifest);
    bool first = true;
    if (base_format == "json") std::cout << "[";
    for (int window : base_windows) {
      const winnow::ThresholdReport report =
          winnow::threshold_baseline(data, window, base_thresholds);
      if (base_format == "json") {
        if (!first) std::cout << ",\n";
        std::cout << winnow::threshold_report_json(report);
      } else {
        if (!first) std::cout << "\n";
        std::cout << winnow::threshold_report_text(report);
      }
      first = false;
    }
    if (base_format == "json") std::cout << "]\n";
  });

  // ---- report ----
  auto* report_cmd =
      app.add_subcommand("report", "re-render a stored experiment report");
  std::string report_dir, report_format = "table";
  report_cmd->add_option("results_dir", report_dir, "run_experiment output dir")
      ->required();
  report_cmd->add_option("--format", report_format, "json | table");
  report_cmd->callback([&] {
    const winnow::MetricsReport report = winnow::metrics_report_from_json(
        read_text_file(report_dir + "/report.json"));
    std::cout << winnow::emit_report(report, report_format);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& error) {
    return app.exit(error);
  } catch (const winnow::Error& error) {
    std::cerr << "error: kind=" << error.kind() << " message=" << error.what()
              << "\n";
    return 1;
  } catch (const std::exception& error) {
    std::cerr << "error: kind=internal message=" << error.what() << "\n";
    return 1;
  }
  return 0;
}
