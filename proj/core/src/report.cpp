#include "winnow/report.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

#include "winnow/errors.hpp"

namespace winnow {

namespace {

using nlohmann::json;

void require_keys(const json& obj, const std::vector<std::string>& keys,
                  const char* what) {
  for (const auto& key : keys) {
    if (!obj.contains(key)) {
      throw FormatError(std::string(what) + ": missing key '" + key + "'");
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
      throw FormatError(std::string(what) + ": unknown key '" + item.key() +
                        "'");
    }
  }
}

json acc_to_json(const std::vector<std::vector<double>>& acc) {
  json rows = json::array();
  for (const auto& row : acc) rows.push_back(row);
  return rows;
}

std::vector<std::vector<double>> acc_from_json(const json& rows,
                                               const char* what) {
  if (!rows.is_array()) {
    throw FormatError(std::string(what) + ": accuracy matrix must be an array");
  }
  std::vector<std::vector<double>> acc;
  for (const auto& row : rows) {
    if (!row.is_array()) {
      throw FormatError(std::string(what) + ": accuracy row must be an array");
    }
    acc.push_back(row.get<std::vector<double>>());
  }
  return acc;
}

std::string pct(double fraction, int precision = 2) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(precision) << fraction * 100.0;
  return out.str();
}

std::string ratio3(double value) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(3) << value;
  return out.str();
}

}  // namespace

double mean_of(const std::vector<double>& values) {
  if (values.empty()) return 0.0;
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

double population_std(const std::vector<double>& values) {
  if (values.size() < 2) return 0.0;
  const double mu = mean_of(values);
  double sq = 0.0;
  for (double v : values) sq += (v - mu) * (v - mu);
  return std::sqrt(sq / static_cast<double>(values.size()));
}

std::vector<double> repeat_means(
    const std::vector<std::vector<double>>& acc) {
  std::vector<double> out;
  out.reserve(acc.size());
  for (const auto& row : acc) out.push_back(mean_of(row));
  return out;
}

std::vector<double> fold_means(const std::vector<std::vector<double>>& acc) {
  if (acc.empty()) return {};
  const size_t folds = acc.front().size();
  std::vector<double> out(folds, 0.0);
  for (const auto& row : acc) {
    if (row.size() != folds) {
      throw UsageError("accuracy matrix is ragged");
    }
    for (size_t f = 0; f < folds; ++f) out[f] += row[f];
  }
  for (double& v : out) v /= static_cast<double>(acc.size());
  return out;
}

std::string metrics_report_json(const MetricsReport& report) {
  json root;
  root["arch"] = report.arch;
  root["width_scale"] = report.width_scale;
  root["optimizer"] = report.optimizer;
  root["method"] = report.method;
  root["k"] = report.k;
  root["repeats"] = report.repeats;
  root["epochs"] = report.epochs;
  root["seed"] = report.seed;
  json baseline;
  baseline["acc"] = acc_to_json(report.baseline_acc);
  baseline["mean"] = report.baseline_mean;
  baseline["std"] = report.baseline_std;
  baseline["fold_std"] = report.baseline_fold_std;
  baseline["params"] = report.baseline_params;
  baseline["flops"] = report.baseline_flops;
  root["baseline"] = baseline;
  json rounds = json::array();
  for (const auto& round : report.rounds) {
    json r;
    r["acc"] = acc_to_json(round.acc);
    r["mean"] = round.mean;
    r["std"] = round.stddev;
    r["fold_std"] = round.fold_std;
    r["drop"] = round.drop;
    r["params"] = round.params;
    r["flops"] = round.flops;
    r["param_ratio"] = round.param_ratio;
    r["flop_ratio"] = round.flop_ratio;
    rounds.push_back(r);
  }
  root["rounds"] = rounds;
  return root.dump(2) + "\n";
}

MetricsReport metrics_report_from_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& error) {
    throw FormatError(std::string("metrics report: invalid JSON: ") +
                      error.what());
  }
  try {
    require_keys(root,
                 {"arch", "width_scale", "optimizer", "method", "k", "repeats",
                  "epochs", "seed", "baseline", "rounds"},
                 "metrics report");
    MetricsReport report;
    report.arch = root.at("arch").get<std::string>();
    report.width_scale = root.at("width_scale").get<float>();
    report.optimizer = root.at("optimizer").get<std::string>();
    report.method = root.at("method").get<std::string>();
    report.k = root.at("k").get<int>();
    report.repeats = root.at("repeats").get<int>();
    report.epochs = root.at("epochs").get<int>();
    report.seed = root.at("seed").get<uint64_t>();
    const json& baseline = root.at("baseline");
    require_keys(baseline, {"acc", "mean", "std", "fold_std", "params", "flops"},
                 "metrics report baseline");
    report.baseline_acc = acc_from_json(baseline.at("acc"), "metrics report");
    report.baseline_mean = baseline.at("mean").get<double>();
    report.baseline_std = baseline.at("std").get<double>();
    report.baseline_fold_std = baseline.at("fold_std").get<double>();
    report.baseline_params = baseline.at("params").get<int64_t>();
    report.baseline_flops = baseline.at("flops").get<int64_t>();
    for (const json& r : root.at("rounds")) {
      require_keys(r,
                   {"acc", "mean", "std", "fold_std", "drop", "params", "flops",
                    "param_ratio", "flop_ratio"},
                   "metrics report round");
      RoundReport round;
      round.acc = acc_from_json(r.at("acc"), "metrics report round");
      round.mean = r.at("mean").get<double>();
      round.stddev = r.at("std").get<double>();
      round.fold_std = r.at("fold_std").get<double>();
      round.drop = r.at("drop").get<double>();
      round.params = r.at("params").get<int64_t>();
      round.flops = r.at("flops").get<int64_t>();
      round.param_ratio = r.at("param_ratio").get<double>();
      round.flop_ratio = r.at("flop_ratio").get<double>();
      report.rounds.push_back(std::move(round));
    }
    return report;
  } catch (const json::exception& error) {
    throw FormatError(std::string("metrics report: malformed field: ") +
                      error.what());
  }
}

std::string metrics_report_text(const MetricsReport& report) {
  std::ostringstream out;
  out << "arch " << report.arch << "  width " << ratio3(report.width_scale)
      << "  optimizer " << report.optimizer << "  pruning " << report.method
      << "\n";
  out << "k " << report.k << "  repeats " << report.repeats << "  epochs "
      << report.epochs << "  seed " << report.seed << "\n\n";

  out << "accuracy (%, mean/std over repeat-axis fold averages; fold-axis "
         "std for reference)\n";
  out << std::left << std::setw(10) << "stage" << std::right << std::setw(10)
      << "mean" << std::setw(10) << "std" << std::setw(10) << "fold-std"
      << std::setw(14) << "params" << std::setw(16) << "flops" << std::setw(12)
      << "param-ratio" << std::setw(12) << "flop-ratio" << "\n";
  auto row = [&](const std::string& stage, double mean, double stddev,
                 double fold_std, int64_t params, int64_t flops,
                 double param_ratio, double flop_ratio) {
    out << std::left << std::setw(10) << stage << std::right << std::setw(10)
        << pct(mean) << std::setw(10) << pct(stddev) << std::setw(10)
        << pct(fold_std) << std::setw(14) << params << std::setw(16) << flops
        << std::setw(12) << ratio3(param_ratio) << std::setw(12)
        << ratio3(flop_ratio) << "\n";
  };
  row("baseline", report.baseline_mean, report.baseline_std,
      report.baseline_fold_std, report.baseline_params, report.baseline_flops,
      1.0, 1.0);
  for (size_t i = 0; i < report.rounds.size(); ++i) {
    const RoundReport& round = report.rounds[i];
    row("round " + std::to_string(i + 1), round.mean, round.stddev,
        round.fold_std, round.params, round.flops, round.param_ratio,
        round.flop_ratio);
  }

  if (!report.rounds.empty()) {
    out << "\naccuracy drop vs baseline (points, negative = degradation)\n";
    for (size_t i = 0; i < report.rounds.size(); ++i) {
      out << std::left << std::setw(10) << ("Round " + std::to_string(i + 1));
    }
    out << "\n";
    for (const RoundReport& round : report.rounds) {
      std::ostringstream cell;
      cell << std::showpos << std::fixed << std::setprecision(2)
           << round.drop * 100.0;
      out << std::left << std::setw(10) << cell.str();
    }
    out << "\n";
  }
  return out.str();
}

std::string emit_report(const MetricsReport& report,
                        const std::string& format) {
  if (format == "json") return metrics_report_json(report);
  if (format == "table") return metrics_report_text(report);
  throw UsageError("unknown report format '" + format +
                   "' (expected json or table)");
}

}  // namespace winnow
