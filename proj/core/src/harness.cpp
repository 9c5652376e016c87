#include "winnow/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <mutex>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "winnow/accounting.hpp"
#include "winnow/checkpoint.hpp"
#include "winnow/errors.hpp"

namespace winnow {

namespace fs = std::filesystem;

namespace {

using nlohmann::json;

void require_keys(const json& obj, const std::vector<std::string>& keys,
                  const char* what) {
  for (const auto& key : keys) {
    if (!obj.contains(key)) {
      throw ConfigError(std::string(what) + ": missing key '" + key + "'");
    }
  }
  for (const auto& item : obj.items()) {
    bool known = false;
    for (const auto& key : keys) {
      if (item.key() == key) {
        known = true;
        break;
      }
    }
    if (!known) {
      throw ConfigError(std::string(what) + ": unknown key '" + item.key() +
                        "'");
    }
  }
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw IoError("write to '" + path + "' failed");
}

json config_to_json(const ExperimentConfig& c) {
  json root;
  json arch;
  arch["depth"] = c.arch.depth;
  arch["width_scale"] = c.arch.width_scale;
  arch["in_channels"] = c.arch.in_channels;
  arch["in_h"] = c.arch.in_h;
  arch["in_w"] = c.arch.in_w;
  arch["num_classes"] = c.arch.num_classes;
  root["arch"] = arch;
  json opt;
  opt["kind"] = c.optimizer.kind;
  opt["lr"] = c.optimizer.lr;
  opt["momentum"] = c.optimizer.momentum;
  opt["weight_decay"] = c.optimizer.weight_decay;
  opt["beta1"] = c.optimizer.beta1;
  opt["beta2"] = c.optimizer.beta2;
  opt["eps"] = c.optimizer.eps;
  root["optimizer"] = opt;
  json decay;
  decay["enabled"] = c.decay.enabled;
  decay["factor"] = c.decay.factor;
  decay["step_every"] = c.decay.step_every;
  root["decay"] = decay;
  root["epochs"] = c.epochs;
  root["batch_size"] = c.batch_size;
  root["dataset"] = c.dataset;
  root["k"] = c.k;
  root["repeats"] = c.repeats;
  root["seed"] = c.seed;
  root["method"] = prune_method_name(c.method);
  json hard;
  hard["rounds"] = c.hard.rounds;
  hard["rate"] = c.hard.rate;
  hard["fine_tune_epochs"] = c.hard.fine_tune_epochs;
  hard["fine_tune_lr_scale"] = c.hard.fine_tune_lr_scale;
  root["hard"] = hard;
  json asfp;
  asfp["target_rate"] = c.asfp.target_rate;
  asfp["exponent"] = c.asfp.exponent;
  root["asfp"] = asfp;
  root["prune_p"] = c.prune_p;
  root["augment_pad"] = c.augment_pad;
  root["initial_weights"] = c.initial_weights;
  root["workers"] = c.workers;
  return root;
}

ExperimentConfig config_from_json(const json& root) {
  try {
    require_keys(root,
                 {"arch", "optimizer", "decay", "epochs", "batch_size",
                  "dataset", "k", "repeats", "seed", "method", "hard", "asfp",
                  "prune_p", "augment_pad", "initial_weights", "workers"},
                 "experiment config");
    ExperimentConfig c;
    const json& arch = root.at("arch");
    require_keys(arch,
                 {"depth", "width_scale", "in_channels", "in_h", "in_w",
                  "num_classes"},
                 "experiment config arch");
    c.arch.depth = arch.at("depth").get<int>();
    c.arch.width_scale = arch.at("width_scale").get<float>();
    c.arch.in_channels = arch.at("in_channels").get<int64_t>();
    c.arch.in_h = arch.at("in_h").get<int64_t>();
    c.arch.in_w = arch.at("in_w").get<int64_t>();
    c.arch.num_classes = arch.at("num_classes").get<int64_t>();
    const json& opt = root.at("optimizer");
    require_keys(
        opt, {"kind", "lr", "momentum", "weight_decay", "beta1", "beta2", "eps"},
        "experiment config optimizer");
    c.optimizer.kind = opt.at("kind").get<std::string>();
    c.optimizer.lr = opt.at("lr").get<double>();
    c.optimizer.momentum = opt.at("momentum").get<double>();
    c.optimizer.weight_decay = opt.at("weight_decay").get<double>();
    c.optimizer.beta1 = opt.at("beta1").get<double>();
    c.optimizer.beta2 = opt.at("beta2").get<double>();
    c.optimizer.eps = opt.at("eps").get<double>();
    const json& decay = root.at("decay");
    require_keys(decay, {"enabled", "factor", "step_every"},
                 "experiment config decay");
    c.decay.enabled = decay.at("enabled").get<bool>();
    c.decay.factor = decay.at("factor").get<double>();
    c.decay.step_every = decay.at("step_every").get<int>();
    c.epochs = root.at("epochs").get<int>();
    c.batch_size = root.at("batch_size").get<int>();
    c.dataset = root.at("dataset").get<std::string>();
    c.k = root.at("k").get<int>();
    c.repeats = root.at("repeats").get<int>();
    c.seed = root.at("seed").get<uint64_t>();
    c.method = prune_method_from_name(root.at("method").get<std::string>());
    const json& hard = root.at("hard");
    require_keys(hard,
                 {"rounds", "rate", "fine_tune_epochs", "fine_tune_lr_scale"},
                 "experiment config hard");
    c.hard.rounds = hard.at("rounds").get<int>();
    c.hard.rate = hard.at("rate").get<double>();
    c.hard.fine_tune_epochs = hard.at("fine_tune_epochs").get<int>();
    c.hard.fine_tune_lr_scale = hard.at("fine_tune_lr_scale").get<double>();
    const json& asfp = root.at("asfp");
    require_keys(asfp, {"target_rate", "exponent"}, "experiment config asfp");
    c.asfp.target_rate = asfp.at("target_rate").get<double>();
    c.asfp.exponent = asfp.at("exponent").get<double>();
    c.prune_p = root.at("prune_p").get<double>();
    c.augment_pad = root.at("augment_pad").get<int>();
    c.initial_weights = root.at("initial_weights").get<std::string>();
    c.workers = root.at("workers").get<int>();
    validate_experiment_config(c);
    return c;
  } catch (const json::exception& error) {
    throw ConfigError(std::string("experiment config: malformed field: ") +
                      error.what());
  }
}

// Standardized pixel: (x/255 - 0.5) / 0.25, i.e. the [-2, 2] band.
Tensor batch_tensor(const std::vector<ImageU8>& views) {
  const int64_t n = static_cast<int64_t>(views.size());
  const int64_t h = views.front().height;
  const int64_t w = views.front().width;
  std::vector<float> data;
  data.reserve(static_cast<size_t>(n * h * w));
  constexpr float kScale = 1.0f / (255.0f * 0.25f);
  for (const ImageU8& view : views) {
    for (uint8_t px : view.pixels) {
      data.push_back(static_cast<float>(px) * kScale - 2.0f);
    }
  }
  return Tensor::from_data({n, 1, h, w}, std::move(data));
}

std::unique_ptr<Optimizer> make_optimizer(const ModelGraph& model,
                                          const OptimizerConfig& oc,
                                          double lr) {
  if (oc.kind == "sgd") {
    return std::make_unique<Sgd>(model.parameters(), static_cast<float>(lr),
                                 static_cast<float>(oc.momentum),
                                 static_cast<float>(oc.weight_decay));
  }
  if (oc.kind == "adam") {
    return std::make_unique<Adam>(model.parameters(), static_cast<float>(lr),
                                  static_cast<float>(oc.beta1),
                                  static_cast<float>(oc.beta2),
                                  static_cast<float>(oc.eps),
                                  static_cast<float>(oc.weight_decay));
  }
  throw ConfigError("unknown optimizer kind '" + oc.kind +
                    "' (expected sgd or adam)");
}

ModelGraph make_model(const ExperimentConfig& config, uint64_t run_seed) {
  if (!config.initial_weights.empty()) {
    ModelMeta expected;
    expected.arch = "resnet" + std::to_string(config.arch.depth);
    expected.width_scale = config.arch.width_scale;
    expected.in_channels = config.arch.in_channels;
    expected.in_h = config.arch.in_h;
    expected.in_w = config.arch.in_w;
    expected.num_classes = config.arch.num_classes;
    return load_checkpoint(config.initial_weights, expected);
  }
  Rng rng(derive_seed(run_seed, "init"));
  return build_resnet(config.arch, rng);
}

void split_fold(const FoldPlan& folds, int fold_index,
                std::vector<int64_t>* train_idx,
                std::vector<int64_t>* val_idx) {
  if (fold_index < 0 || fold_index >= folds.k) {
    throw UsageError("fold index " + std::to_string(fold_index) +
                     " outside plan with k=" + std::to_string(folds.k));
  }
  for (size_t i = 0; i < folds.fold_of.size(); ++i) {
    if (folds.fold_of[i] == fold_index) {
      val_idx->push_back(static_cast<int64_t>(i));
    } else {
      train_idx->push_back(static_cast<int64_t>(i));
    }
  }
}

void assert_no_leakage(const TrainPhaseResult& phase,
                       const std::vector<int64_t>& val_idx) {
  for (int64_t idx : val_idx) {
    if (phase.train_images_touched.count(idx) != 0) {
      throw InvariantError("data leakage: image index " + std::to_string(idx) +
                           " was used for training and evaluation in the same "
                           "fold");
    }
  }
}

json phase_json(const TrainPhaseResult& phase) {
  json out;
  out["best"] = phase.best_acc;
  out["last"] = phase.last_acc;
  out["best_epoch"] = phase.best_epoch;
  out["epoch_acc"] = phase.epoch_val_acc;
  return out;
}

// Everything one (repeat, fold) job produces. Cost columns are structural and
// identical across jobs; the reducer reads them from the first job.
struct JobProducts {
  double baseline_acc = 0.0;
  std::vector<double> round_acc;
  int64_t baseline_params = 0;
  int64_t baseline_flops = 0;
  std::vector<int64_t> round_params;
  std::vector<int64_t> round_flops;
  json detail;
  std::vector<uint8_t> final_ckpt;    // only when artifacts requested
  std::vector<uint8_t> compact_ckpt;  // only for pruning runs
};

JobProducts run_job(const ExperimentConfig& config, const LoadedDataset& data,
                    const FoldPlan& folds, int repeat, int fold,
                    bool want_artifacts) {
  const uint64_t run_seed = derive_seed(static_cast<uint64_t>(repeat),
                                        "fold-" + std::to_string(fold));
  std::vector<int64_t> train_idx, val_idx;
  split_fold(folds, fold, &train_idx, &val_idx);

  JobProducts out;
  out.detail["repeat"] = repeat;
  out.detail["fold"] = fold;

  ModelGraph model = make_model(config, run_seed);
  {
    const CostReport cost = cost_report(model);
    out.baseline_params = cost.total_params;
    out.baseline_flops = cost.total_flops;
  }

  auto base_opt = make_optimizer(model, config.optimizer, config.optimizer.lr);
  TrainPhaseResult base_phase =
      train_phase(model, *base_opt, config, data, train_idx, val_idx, run_seed,
                  config.epochs, config.optimizer.lr, nullptr, nullptr);
  assert_no_leakage(base_phase, val_idx);
  out.baseline_acc = base_phase.best_acc;
  out.detail["baseline"] = phase_json(base_phase);

  json rounds = json::array();
  PruneMask mask;
  if (config.method == PruneMethod::kHard) {
    const double ft_lr = config.optimizer.lr * config.hard.fine_tune_lr_scale;
    for (int round = 0; round < config.hard.rounds; ++round) {
      auto ft_opt = make_optimizer(model, config.optimizer, ft_lr);
      hard_prune_round(model, mask, config.hard.rate, config.prune_p,
                       ft_opt.get());
      TrainPhaseResult ft;
      if (config.hard.fine_tune_epochs > 0) {
        ft = train_phase(model, *ft_opt, config, data, train_idx, val_idx,
                         derive_seed(run_seed, "ft-" + std::to_string(round)),
                         config.hard.fine_tune_epochs, ft_lr, &mask, nullptr);
        assert_no_leakage(ft, val_idx);
      } else {
        ft.best_acc = ft.last_acc =
            evaluate_model(model, data, val_idx, config).accuracy;
      }
      out.round_acc.push_back(ft.best_acc);
      const CostReport cost = cost_report(compact(model, mask));
      out.round_params.push_back(cost.total_params);
      out.round_flops.push_back(cost.total_flops);
      rounds.push_back(phase_json(ft));
    }
  } else if (config.method == PruneMethod::kAsfp) {
    // The drop needs an unpruned reference: a twin with the same init and
    // data order, trained without the epoch-end zeroing.
    // (`model` already holds that baseline run.)
    ModelGraph soft_model = make_model(config, run_seed);
    auto soft_opt =
        make_optimizer(soft_model, config.optimizer, config.optimizer.lr);
    AsfpSchedule schedule{config.asfp.target_rate, config.epochs,
                          config.asfp.exponent};
    TrainPhaseResult soft_phase =
        train_phase(soft_model, *soft_opt, config, data, train_idx, val_idx,
                    run_seed, config.epochs, config.optimizer.lr, nullptr,
                    &schedule);
    assert_no_leakage(soft_phase, val_idx);
    // Deployment hardening: the final soft mask becomes permanent, BN terms
    // of dead channels included, so the reported accuracy is the one the
    // compacted model reproduces exactly.
    mask = soft_phase.asfp_mask;
    mask.freeze = true;
    enforce_mask(soft_model, mask);
    const double final_acc =
        evaluate_model(soft_model, data, val_idx, config).accuracy;
    out.round_acc.push_back(final_acc);
    const CostReport cost = cost_report(compact(soft_model, mask));
    out.round_params.push_back(cost.total_params);
    out.round_flops.push_back(cost.total_flops);
    json soft = phase_json(soft_phase);
    soft["hardened_acc"] = final_acc;
    rounds.push_back(soft);
    if (want_artifacts) {
      out.final_ckpt = serialize_checkpoint(soft_model);
      out.compact_ckpt = serialize_checkpoint(compact(soft_model, mask));
    }
  }
  out.detail["rounds"] = rounds;

  if (want_artifacts && config.method != PruneMethod::kAsfp) {
    out.final_ckpt = serialize_checkpoint(model);
    if (config.method == PruneMethod::kHard) {
      out.compact_ckpt = serialize_checkpoint(compact(model, mask));
    }
  }
  return out;
}

void fill_axis_stats(const std::vector<std::vector<double>>& acc, double* mean,
                     double* stddev, double* fold_std) {
  const std::vector<double> by_repeat = repeat_means(acc);
  *mean = mean_of(by_repeat);
  *stddev = population_std(by_repeat);
  *fold_std = population_std(fold_means(acc));
}

}  // namespace

const char* prune_method_name(PruneMethod method) {
  switch (method) {
    case PruneMethod::kNone:
      return "none";
    case PruneMethod::kHard:
      return "hard";
    case PruneMethod::kAsfp:
      return "asfp";
  }
  throw UsageError("unreachable prune method");
}

PruneMethod prune_method_from_name(const std::string& name) {
  if (name == "none") return PruneMethod::kNone;
  if (name == "hard") return PruneMethod::kHard;
  if (name == "asfp") return PruneMethod::kAsfp;
  throw ConfigError("unknown pruning method '" + name +
                    "' (expected none, hard or asfp)");
}

void validate_experiment_config(const ExperimentConfig& c) {
  resnet_stage_blocks(c.arch.depth);  // rejects unknown depths
  if (c.arch.width_scale <= 0.0f) {
    throw ConfigError("width_scale must be positive");
  }
  if (c.arch.in_channels < 1 || c.arch.in_h < 1 || c.arch.in_w < 1) {
    throw ConfigError("input extents must be positive");
  }
  if (c.arch.num_classes < 2) throw ConfigError("need at least 2 classes");
  if (c.optimizer.kind != "sgd" && c.optimizer.kind != "adam") {
    throw ConfigError("unknown optimizer kind '" + c.optimizer.kind + "'");
  }
  if (c.optimizer.lr < 0.0) throw ConfigError("lr must be >= 0");
  if (c.optimizer.momentum < 0.0 || c.optimizer.momentum >= 1.0) {
    throw ConfigError("momentum must be in [0,1)");
  }
  if (c.optimizer.weight_decay < 0.0) {
    throw ConfigError("weight_decay must be >= 0");
  }
  if (c.optimizer.beta1 < 0.0 || c.optimizer.beta1 >= 1.0 ||
      c.optimizer.beta2 < 0.0 || c.optimizer.beta2 >= 1.0) {
    throw ConfigError("adam betas must be in [0,1)");
  }
  if (c.optimizer.eps <= 0.0) throw ConfigError("adam eps must be positive");
  if (c.decay.factor <= 0.0) throw ConfigError("decay factor must be positive");
  if (c.decay.step_every < 1) throw ConfigError("decay step_every must be >= 1");
  if (c.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (c.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (c.k < 2) throw ConfigError("k must be >= 2");
  if (c.repeats < 1) throw ConfigError("repeats must be >= 1");
  if (c.hard.rounds < 1) throw ConfigError("hard rounds must be >= 1");
  if (c.hard.rate < 0.0 || c.hard.rate >= 1.0) {
    throw ConfigError("hard rate must be in [0,1)");
  }
  if (c.hard.fine_tune_epochs < 0) {
    throw ConfigError("fine_tune_epochs must be >= 0");
  }
  if (c.hard.fine_tune_lr_scale < 0.0) {
    throw ConfigError("fine_tune_lr_scale must be >= 0");
  }
  if (c.asfp.target_rate < 0.0 || c.asfp.target_rate >= 1.0) {
    throw ConfigError("asfp target_rate must be in [0,1)");
  }
  if (c.asfp.exponent <= 0.0) throw ConfigError("asfp exponent must be > 0");
  if (c.prune_p <= 0.0) throw ConfigError("prune_p must be > 0");
  if (c.augment_pad < 0) throw ConfigError("augment_pad must be >= 0");
  if (c.workers < 0) throw ConfigError("workers must be >= 0");
}

std::string experiment_config_json(const ExperimentConfig& config) {
  return config_to_json(config).dump(2) + "\n";
}

ExperimentConfig experiment_config_from_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& error) {
    throw ConfigError(std::string("experiment config: invalid JSON: ") +
                      error.what());
  }
  return config_from_json(root);
}

ExperimentConfig load_experiment_config(const std::string& path) {
  return experiment_config_from_json(read_text_file(path));
}

void save_experiment_config(const ExperimentConfig& config,
                            const std::string& path) {
  validate_experiment_config(config);
  write_text_file(path, experiment_config_json(config));
}

LoadedDataset load_dataset(const std::string& manifest_path) {
  LoadedDataset out;
  out.manifest = load_manifest(manifest_path);
  out.images.reserve(out.manifest.records.size());
  out.labels.reserve(out.manifest.records.size());
  for (const ManifestRecord& record : out.manifest.records) {
    const fs::path path = fs::path(out.manifest.root) / record.path;
    out.images.push_back(read_png_gray8(path.string()));
    out.labels.push_back(record.label);
  }
  return out;
}

EvalResult evaluate_model(ModelGraph& model, const LoadedDataset& data,
                          const std::vector<int64_t>& indices,
                          const ExperimentConfig& config) {
  if (indices.empty()) throw UsageError("evaluate: empty subset");
  NoGradGuard guard;
  EvalResult result;
  result.total = static_cast<int64_t>(indices.size());
  const int64_t h = config.arch.in_h;
  const int64_t w = config.arch.in_w;
  const size_t batch = static_cast<size_t>(config.batch_size);
  for (size_t start = 0; start < indices.size(); start += batch) {
    const size_t stop = std::min(start + batch, indices.size());
    std::vector<ImageU8> views;
    views.reserve(stop - start);
    for (size_t i = start; i < stop; ++i) {
      views.push_back(center_crop(data.images[indices[i]], w, h));
    }
    const Tensor logits = model.forward(batch_tensor(views), ops::BnMode::kEval);
    const int64_t classes = logits.shape()[1];
    const std::span<const float> values = logits.data();
    for (size_t i = start; i < stop; ++i) {
      const int64_t row = static_cast<int64_t>(i - start);
      int64_t pred = 0;
      for (int64_t cls = 1; cls < classes; ++cls) {
        if (values[row * classes + cls] > values[row * classes + pred]) {
          pred = cls;
        }
      }
      const int label = data.labels[indices[i]];
      if (pred == label) ++result.correct;
      if (label == 1) {
        (pred == 1 ? result.tp : result.fn) += 1;
      } else if (label == 0) {
        (pred == 0 ? result.tn : result.fp) += 1;
      }
    }
  }
  result.accuracy =
      static_cast<double>(result.correct) / static_cast<double>(result.total);
  result.recall_defective =
      (result.tp + result.fn) > 0
          ? static_cast<double>(result.tp) /
                static_cast<double>(result.tp + result.fn)
          : 0.0;
  result.recall_clean =
      (result.tn + result.fp) > 0
          ? static_cast<double>(result.tn) /
                static_cast<double>(result.tn + result.fp)
          : 0.0;
  return result;
}

TrainPhaseResult train_phase(ModelGraph& model, Optimizer& optimizer,
                             const ExperimentConfig& config,
                             const LoadedDataset& data,
                             const std::vector<int64_t>& train_indices,
                             const std::vector<int64_t>& val_indices,
                             uint64_t run_seed, int epochs, double base_lr,
                             const PruneMask* freeze_mask,
                             const AsfpSchedule* asfp) {
  if (train_indices.empty()) throw UsageError("train: empty training subset");
  if (freeze_mask != nullptr && asfp != nullptr) {
    throw UsageError("train: freeze mask and soft schedule are exclusive");
  }
  if (base_lr < 0.0) throw UsageError("train: negative learning rate");
  TrainPhaseResult out;
  const bool no_learning = base_lr == 0.0;
  const int64_t h = config.arch.in_h;
  const int64_t w = config.arch.in_w;
  const size_t batch = static_cast<size_t>(config.batch_size);

  for (int epoch = 0; epoch < epochs; ++epoch) {
    double lr = base_lr;
    if (!no_learning && config.decay.enabled) {
      lr = lr_at(LrSchedule{static_cast<float>(base_lr),
                            static_cast<float>(config.decay.factor),
                            config.decay.step_every},
                 epoch);
    }
    optimizer.set_lr(static_cast<float>(lr));

    std::vector<int64_t> order = train_indices;
    Rng order_rng(derive_seed(run_seed, "order-" + std::to_string(epoch)));
    order_rng.shuffle(order);
    Rng aug_rng(derive_seed(run_seed, "augment-" + std::to_string(epoch)));

    for (size_t start = 0; start < order.size(); start += batch) {
      const size_t stop = std::min(start + batch, order.size());
      std::vector<ImageU8> views;
      std::vector<int> labels;
      views.reserve(stop - start);
      labels.reserve(stop - start);
      for (size_t i = start; i < stop; ++i) {
        const int64_t idx = order[i];
        out.train_images_touched.insert(idx);
        if (no_learning) {
          views.push_back(center_crop(data.images[idx], w, h));
        } else {
          views.push_back(
              augment_train(data.images[idx], w, h, config.augment_pad, aug_rng));
        }
        labels.push_back(data.labels[idx]);
      }
      const Tensor inputs = batch_tensor(views);
      if (no_learning) {
        NoGradGuard guard;
        const Tensor loss = ops::cross_entropy(
            model.forward(inputs, ops::BnMode::kEval), labels);
        if (!std::isfinite(loss.item())) {
          throw DivergenceError("non-finite loss in no-learning pass, epoch " +
                                std::to_string(epoch));
        }
        continue;
      }
      const Tensor logits = model.forward(inputs, ops::BnMode::kTrain);
      const Tensor loss = ops::cross_entropy(logits, labels);
      const float value = loss.item();
      if (!std::isfinite(value)) {
        throw DivergenceError(
            "training diverged: loss=" + std::to_string(value) + " at epoch " +
            std::to_string(epoch) + ", step " + std::to_string(start / batch));
      }
      optimizer.zero_grad();
      backward(loss);
      if (freeze_mask != nullptr) zero_masked_grads(model, *freeze_mask);
      optimizer.step();
    }

    if (asfp != nullptr) {
      out.asfp_mask = asfp_epoch_end(model, *asfp, epoch, config.prune_p);
    }
    // Frozen filters stay at exact zero through grad+moment zeroing alone;
    // re-asserting at epoch ends keeps that true even if a caller swaps in an
    // optimizer with pre-existing state.
    if (freeze_mask != nullptr && !no_learning) {
      enforce_mask(model, *freeze_mask);
    }

    const double acc =
        val_indices.empty()
            ? 0.0
            : evaluate_model(model, data, val_indices, config).accuracy;
    out.epoch_val_acc.push_back(acc);
    out.last_acc = acc;
    if (out.best_epoch < 0 || acc > out.best_acc) {
      out.best_acc = acc;
      out.best_epoch = epoch;
    }
  }
  return out;
}

TrainOutcome train(const ExperimentConfig& config, const LoadedDataset& data,
                   const FoldPlan& folds, int fold_index, uint64_t seed) {
  if (folds.fold_of.size() != data.images.size()) {
    throw UsageError("fold plan covers " +
                     std::to_string(folds.fold_of.size()) + " records, dataset has " +
                     std::to_string(data.images.size()));
  }
  std::vector<int64_t> train_idx, val_idx;
  split_fold(folds, fold_index, &train_idx, &val_idx);
  TrainOutcome out;
  out.model = make_model(config, seed);
  auto optimizer =
      make_optimizer(out.model, config.optimizer, config.optimizer.lr);
  out.phase = train_phase(out.model, *optimizer, config, data, train_idx,
                          val_idx, seed, config.epochs, config.optimizer.lr,
                          nullptr, nullptr);
  assert_no_leakage(out.phase, val_idx);
  return out;
}

MetricsReport run_experiment(const ExperimentConfig& config,
                             const std::string& out_dir) {
  validate_experiment_config(config);
  const LoadedDataset data = load_dataset(config.dataset);
  const FoldPlan folds = kfold_split(data.manifest, config.k,
                                     derive_seed(config.seed, "folds"), true);

  if (!out_dir.empty()) {
    fs::create_directories(fs::path(out_dir) / "jobs");
    write_text_file((fs::path(out_dir) / "config.json").string(),
                    experiment_config_json(config));
  }

  const int jobs = config.repeats * config.k;
  std::vector<JobProducts> results(static_cast<size_t>(jobs));
  std::atomic<int> next{0};
  std::atomic<bool> failed{false};
  std::mutex io_mutex;
  std::exception_ptr first_error;

  auto worker = [&]() {
    for (;;) {
      const int job = next.fetch_add(1);
      if (job >= jobs || failed.load()) return;
      const int repeat = job / config.k;
      const int fold = job % config.k;
      try {
        JobProducts product = run_job(config, data, folds, repeat, fold,
                                      repeat == 0 && fold == 0);
        std::lock_guard<std::mutex> lock(io_mutex);
        if (!out_dir.empty()) {
          const std::string name =
              "r" + std::to_string(repeat) + "_f" + std::to_string(fold) +
              ".json";
          write_text_file((fs::path(out_dir) / "jobs" / name).string(),
                          product.detail.dump(2) + "\n");
        }
        std::fprintf(stderr, "[winnow] repeat %d fold %d: baseline %.4f\n",
                     repeat, fold, product.baseline_acc);
        results[static_cast<size_t>(job)] = std::move(product);
      } catch (...) {
        std::lock_guard<std::mutex> lock(io_mutex);
        if (!first_error) first_error = std::current_exception();
        failed.store(true);
        return;
      }
    }
  };

  int workers = config.workers > 0
                    ? config.workers
                    : static_cast<int>(std::thread::hardware_concurrency());
  workers = std::max(1, std::min(workers, jobs));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers));
    for (int i = 0; i < workers; ++i) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  MetricsReport report;
  report.arch = "resnet" + std::to_string(config.arch.depth);
  report.width_scale = config.arch.width_scale;
  report.optimizer = config.optimizer.kind;
  report.method = prune_method_name(config.method);
  report.k = config.k;
  report.repeats = config.repeats;
  report.epochs = config.epochs;
  report.seed = config.seed;
  report.baseline_acc.assign(static_cast<size_t>(config.repeats),
                             std::vector<double>(static_cast<size_t>(config.k)));
  for (int r = 0; r < config.repeats; ++r) {
    for (int f = 0; f < config.k; ++f) {
      report.baseline_acc[static_cast<size_t>(r)][static_cast<size_t>(f)] =
          results[static_cast<size_t>(r * config.k + f)].baseline_acc;
    }
  }
  fill_axis_stats(report.baseline_acc, &report.baseline_mean,
                  &report.baseline_std, &report.baseline_fold_std);
  report.baseline_params = results.front().baseline_params;
  report.baseline_flops = results.front().baseline_flops;

  const size_t round_count = results.front().round_acc.size();
  for (size_t round = 0; round < round_count; ++round) {
    RoundReport entry;
    entry.acc.assign(static_cast<size_t>(config.repeats),
                     std::vector<double>(static_cast<size_t>(config.k)));
    for (int r = 0; r < config.repeats; ++r) {
      for (int f = 0; f < config.k; ++f) {
        entry.acc[static_cast<size_t>(r)][static_cast<size_t>(f)] =
            results[static_cast<size_t>(r * config.k + f)].round_acc[round];
      }
    }
    fill_axis_stats(entry.acc, &entry.mean, &entry.stddev, &entry.fold_std);
    entry.drop = entry.mean - report.baseline_mean;
    entry.params = results.front().round_params[round];
    entry.flops = results.front().round_flops[round];
    entry.param_ratio = static_cast<double>(entry.params) /
                        static_cast<double>(report.baseline_params);
    entry.flop_ratio = static_cast<double>(entry.flops) /
                       static_cast<double>(report.baseline_flops);
    report.rounds.push_back(std::move(entry));
  }

  if (!out_dir.empty()) {
    write_text_file((fs::path(out_dir) / "report.json").string(),
                    metrics_report_json(report));
    write_text_file((fs::path(out_dir) / "report.txt").string(),
                    metrics_report_text(report));
    const JobProducts& first = results.front();
    if (!first.final_ckpt.empty()) {
      std::ofstream out((fs::path(out_dir) / "model.ckpt").string(),
                        std::ios::binary | std::ios::trunc);
      out.write(reinterpret_cast<const char*>(first.final_ckpt.data()),
                static_cast<std::streamsize>(first.final_ckpt.size()));
      if (!out) throw IoError("failed to write model.ckpt");
    }
    if (!first.compact_ckpt.empty()) {
      std::ofstream out((fs::path(out_dir) / "model_compact.ckpt").string(),
                        std::ios::binary | std::ios::trunc);
      out.write(reinterpret_cast<const char*>(first.compact_ckpt.data()),
                static_cast<std::streamsize>(first.compact_ckpt.size()));
      if (!out) throw IoError("failed to write model_compact.ckpt");
    }
  }
  return report;
}

ThresholdReport threshold_baseline(const LoadedDataset& data, int window,
                                   const std::vector<double>& thresholds) {
  if (thresholds.empty()) {
    throw UsageError("threshold baseline: need at least one threshold");
  }
  if (data.images.empty()) {
    throw UsageError("threshold baseline: empty dataset");
  }
  for (const ImageU8& image : data.images) {
    if (window < 1 || window > image.width || window > image.height) {
      throw ConfigError("threshold window " + std::to_string(window) +
                        " does not fit a " + std::to_string(image.width) + "x" +
                        std::to_string(image.height) + " image");
    }
  }

  // Max |window mean - global mean| per image via a summed-area table.
  std::vector<double> max_deviation(data.images.size(), 0.0);
  std::vector<double> integral;
  for (size_t i = 0; i < data.images.size(); ++i) {
    const ImageU8& image = data.images[i];
    const int64_t w = image.width, h = image.height;
    integral.assign(static_cast<size_t>((w + 1) * (h + 1)), 0.0);
    for (int64_t y = 0; y < h; ++y) {
      double row = 0.0;
      for (int64_t x = 0; x < w; ++x) {
        row += static_cast<double>(image.pixels[static_cast<size_t>(y * w + x)]);
        integral[static_cast<size_t>((y + 1) * (w + 1) + (x + 1))] =
            integral[static_cast<size_t>(y * (w + 1) + (x + 1))] + row;
      }
    }
    const double global_mean =
        integral[static_cast<size_t>(h * (w + 1) + w)] /
        static_cast<double>(w * h);
    const double area = static_cast<double>(window) * window;
    double best = 0.0;
    for (int64_t y0 = 0; y0 + window <= h; ++y0) {
      const int64_t y1 = y0 + window;
      for (int64_t x0 = 0; x0 + window <= w; ++x0) {
        const int64_t x1 = x0 + window;
        const double sum =
            integral[static_cast<size_t>(y1 * (w + 1) + x1)] -
            integral[static_cast<size_t>(y0 * (w + 1) + x1)] -
            integral[static_cast<size_t>(y1 * (w + 1) + x0)] +
            integral[static_cast<size_t>(y0 * (w + 1) + x0)];
        best = std::max(best, std::abs(sum / area - global_mean));
      }
    }
    max_deviation[i] = best;
  }

  ThresholdReport report;
  report.window = window;
  for (double t : thresholds) {
    ThresholdEntry entry;
    entry.threshold = t;
    for (size_t i = 0; i < data.images.size(); ++i) {
      const bool defective = max_deviation[i] > t;
      if (data.labels[i] == 1) {
        (defective ? entry.tp : entry.fn) += 1;
      } else {
        (defective ? entry.fp : entry.tn) += 1;
      }
    }
    entry.accuracy = static_cast<double>(entry.tp + entry.tn) /
                     static_cast<double>(data.images.size());
    report.entries.push_back(entry);
  }
  const ThresholdEntry* best = &report.entries.front();
  for (const ThresholdEntry& entry : report.entries) {
    if (entry.accuracy > best->accuracy) best = &entry;
  }
  report.best_accuracy = best->accuracy;
  report.best_threshold = best->threshold;
  return report;
}

std::string threshold_report_json(const ThresholdReport& report) {
  json root;
  root["window"] = report.window;
  root["best_accuracy"] = report.best_accuracy;
  root["best_threshold"] = report.best_threshold;
  json entries = json::array();
  for (const ThresholdEntry& entry : report.entries) {
    json e;
    e["threshold"] = entry.threshold;
    e["accuracy"] = entry.accuracy;
    e["tp"] = entry.tp;
    e["tn"] = entry.tn;
    e["fp"] = entry.fp;
    e["fn"] = entry.fn;
    entries.push_back(e);
  }
  root["entries"] = entries;
  return root.dump(2) + "\n";
}

std::string threshold_report_text(const ThresholdReport& report) {
  std::ostringstream out;
  out << "window " << report.window << "\n";
  out << std::left << std::setw(12) << "threshold" << std::right
      << std::setw(10) << "accuracy" << std::setw(8) << "tp" << std::setw(8)
      << "tn" << std::setw(8) << "fp" << std::setw(8) << "fn" << "\n";
  for (const ThresholdEntry& entry : report.entries) {
    std::ostringstream t;
    t << entry.threshold;
    std::ostringstream acc;
    acc << std::fixed << std::setprecision(4) << entry.accuracy;
    out << std::left << std::setw(12) << t.str() << std::right << std::setw(10)
        << acc.str() << std::setw(8) << entry.tp << std::setw(8) << entry.tn
        << std::setw(8) << entry.fp << std::setw(8) << entry.fn << "\n";
  }
  std::ostringstream best;
  best << std::fixed << std::setprecision(4) << report.best_accuracy;
  out << "best: accuracy " << best.str() << " at threshold "
      << report.best_threshold << "\n";
  return out.str();
}

}  // namespace winnow
