#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "winnow/dataforge.hpp"
#include "winnow/graph.hpp"
#include "winnow/optim.hpp"
#include "winnow/pruning.hpp"
#include "winnow/report.hpp"
#include "winnow/resnet.hpp"

namespace winnow {

enum class PruneMethod { kNone, kHard, kAsfp };

const char* prune_method_name(PruneMethod method);
PruneMethod prune_method_from_name(const std::string& name);

struct OptimizerConfig {
  std::string kind = "adam";  // "sgd" | "adam"
  double lr = 1e-3;
  double momentum = 0.9;  // sgd only
  double weight_decay = 0.0;
  double beta1 = 0.9;  // adam only
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct DecayConfig {
  bool enabled = false;
  double factor = 0.1;
  int step_every = 30;
};

struct HardPlanConfig {
  int rounds = 3;
  double rate = 0.3;
  int fine_tune_epochs = 15;
  double fine_tune_lr_scale = 0.1;
};

struct AsfpPlanConfig {
  double target_rate = 0.3;
  double exponent = 3.0;
};

struct ExperimentConfig {
  ResnetConfig arch;
  OptimizerConfig optimizer;
  DecayConfig decay;
  int epochs = 40;
  int batch_size = 32;
  std::string dataset;  // manifest path
  int k = 10;
  int repeats = 10;
  uint64_t seed = 0;
  PruneMethod method = PruneMethod::kNone;
  HardPlanConfig hard;
  AsfpPlanConfig asfp;
  double prune_p = 2.0;  // l_p filter-norm exponent
  int augment_pad = 8;
  std::string initial_weights;  // optional checkpoint path
  int workers = 0;              // 0 = hardware concurrency
};

void validate_experiment_config(const ExperimentConfig& config);

// JSON round-trip is lossless; unknown or missing keys are rejected.
ExperimentConfig load_experiment_config(const std::string& path);
void save_experiment_config(const ExperimentConfig& config,
                            const std::string& path);
std::string experiment_config_json(const ExperimentConfig& config);
ExperimentConfig experiment_config_from_json(const std::string& text);

// Dataset pulled into memory once: images stay u8, tensors are cut per batch.
struct LoadedDataset {
  DatasetManifest manifest;
  std::vector<ImageU8> images;
  std::vector<int> labels;
};

LoadedDataset load_dataset(const std::string& manifest_path);

struct EvalResult {
  double accuracy = 0.0;
  int64_t total = 0;
  int64_t correct = 0;
  int64_t tp = 0, tn = 0, fp = 0, fn = 0;  // positive = defective (label 1)
  double recall_defective = 0.0;
  double recall_clean = 0.0;
};

// Argmax classification over logits (ties -> lowest class index);
// center-crop preprocessing, no flip, BN in eval mode.
EvalResult evaluate_model(ModelGraph& model, const LoadedDataset& data,
                          const std::vector<int64_t>& indices,
                          const ExperimentConfig& config);

struct TrainPhaseResult {
  double best_acc = 0.0;  // best-epoch validation accuracy
  double last_acc = 0.0;
  int best_epoch = -1;
  std::vector<double> epoch_val_acc;
  std::set<int64_t> train_images_touched;  // leakage instrumentation
  PruneMask asfp_mask;                     // final mask when soft pruning ran
};

// One training phase on train_indices, evaluated on val_indices after every
// epoch. freeze_mask: hard-pruning fine-tune (masked gradients zeroed between
// backward and step). asfp: soft mask reselected and applied at each epoch
// end, the epoch's evaluation runs after that zeroing. base_lr == 0
// short-circuits to a pure evaluation loop — no parameter or BN running-stat
// updates happen, so model state stays bitwise identical. Deterministic for a
// fixed (config, run_seed).
TrainPhaseResult train_phase(ModelGraph& model, Optimizer& optimizer,
                             const ExperimentConfig& config,
                             const LoadedDataset& data,
                             const std::vector<int64_t>& train_indices,
                             const std::vector<int64_t>& val_indices,
                             uint64_t run_seed, int epochs, double base_lr,
                             const PruneMask* freeze_mask,
                             const AsfpSchedule* asfp);

struct TrainOutcome {
  ModelGraph model;
  TrainPhaseResult phase;
};

// Trains one fold of the plan: augmented training on the other k-1 folds,
// center-crop evaluation on the held-out fold.
TrainOutcome train(const ExperimentConfig& config, const LoadedDataset& data,
                   const FoldPlan& folds, int fold_index, uint64_t seed);

// Full protocol: repeats x folds jobs, the configured pruning plan per job,
// per-job JSON persisted under out_dir/jobs as soon as each job finishes,
// report.json + report.txt plus job (0,0)'s checkpoints in out_dir.
// out_dir empty = keep everything in memory only.
MetricsReport run_experiment(const ExperimentConfig& config,
                             const std::string& out_dir);

struct ThresholdEntry {
  double threshold = 0.0;
  double accuracy = 0.0;
  int64_t tp = 0, tn = 0, fp = 0, fn = 0;
};

struct ThresholdReport {
  int window = 0;
  std::vector<ThresholdEntry> entries;
  double best_accuracy = 0.0;
  double best_threshold = 0.0;
};

// Flags an image defective when any window x window mean deviates from the
// image's global mean by more than t (absolute); sweeps t over `thresholds`.
ThresholdReport threshold_baseline(const LoadedDataset& data, int window,
                                   const std::vector<double>& thresholds);
std::string threshold_report_json(const ThresholdReport& report);
std::string threshold_report_text(const ThresholdReport& report);

}  // namespace winnow
