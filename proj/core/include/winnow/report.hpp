#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace winnow {

// Aggregated cross-validation metrics. Accuracy matrices are indexed
// [repeat][fold]; the headline mean/std are taken over the repeat axis
// (each repeat contributes its fold-average), the fold-axis spread is
// kept alongside for diagnostics. std is the population standard
// deviation so a single repeat reports 0.
struct RoundReport {
  std::vector<std::vector<double>> acc;
  double mean = 0.0;
  double stddev = 0.0;
  double fold_std = 0.0;
  double drop = 0.0;  // mean - baseline mean, signed
  int64_t params = 0;
  int64_t flops = 0;
  double param_ratio = 0.0;  // vs baseline
  double flop_ratio = 0.0;
};

struct MetricsReport {
  std::string arch;
  float width_scale = 1.0f;
  std::string optimizer;
  std::string method;  // "none" | "hard" | "asfp"
  int k = 0;
  int repeats = 0;
  int epochs = 0;
  uint64_t seed = 0;
  std::vector<std::vector<double>> baseline_acc;
  double baseline_mean = 0.0;
  double baseline_std = 0.0;
  double baseline_fold_std = 0.0;
  int64_t baseline_params = 0;
  int64_t baseline_flops = 0;
  std::vector<RoundReport> rounds;
};

double mean_of(const std::vector<double>& values);
double population_std(const std::vector<double>& values);
// Fold-average per repeat, i.e. the repeat-axis samples.
std::vector<double> repeat_means(
    const std::vector<std::vector<double>>& acc);
// Repeat-average per fold, i.e. the fold-axis samples.
std::vector<double> fold_means(const std::vector<std::vector<double>>& acc);

// Byte-stable serialization: sorted keys, no timestamps, repeated emission
// of the same report yields identical bytes.
std::string metrics_report_json(const MetricsReport& report);
MetricsReport metrics_report_from_json(const std::string& text);

// Text table: one row per configuration block, mean +/- std baseline column
// and one accuracy-drop column per pruning round, followed by a cost block.
std::string metrics_report_text(const MetricsReport& report);

// format: "json" | "table".
std::string emit_report(const MetricsReport& report, const std::string& format);

}  // namespace winnow
