#include "winnow/accounting.hpp"

#include <iomanip>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

namespace winnow {

namespace {

int64_t layer_params(const LayerSpec& l) {
  switch (l.kind) {
    case LayerKind::kConv: return l.f * l.c * l.k * l.k;
    case LayerKind::kBn: return 2 * l.c;
    case LayerKind::kLinear: return l.f * l.c + l.f;
    default: return 0;
  }
}

int64_t layer_flops(const LayerSpec& l, const std::map<std::string, Shape>& shapes) {
  switch (l.kind) {
    case LayerKind::kConv: {
      const Shape& out = shapes.at(l.id);
      return l.f * l.c * l.k * l.k * out[2] * out[3];
    }
    case LayerKind::kLinear: return l.f * l.c;
    default: return 0;
  }
}

}  // namespace

CostReport cost_report(const ModelGraph& model) {
  const auto shapes = model.infer_shapes(1);
  CostReport r;
  for (const auto& l : model.layers()) {
    CostRow row;
    row.id = l.id;
    row.kind = layer_kind_name(l.kind);
    row.params = layer_params(l);
    row.flops = layer_flops(l, shapes);
    r.total_params += row.params;
    r.total_flops += row.flops;
    r.rows.push_back(std::move(row));
  }
  return r;
}

int64_t count_params(const ModelGraph& model) {
  int64_t n = 0;
  for (const auto& l : model.layers()) n += layer_params(l);
  return n;
}

int64_t count_flops(const ModelGraph& model) {
  const auto shapes = model.infer_shapes(1);
  int64_t n = 0;
  for (const auto& l : model.layers()) n += layer_flops(l, shapes);
  return n;
}

CompressionReport report_compression(const CostReport& baseline,
                                     const CostReport& pruned) {
  CompressionReport r;
  r.baseline_params = baseline.total_params;
  r.pruned_params = pruned.total_params;
  r.baseline_flops = baseline.total_flops;
  r.pruned_flops = pruned.total_flops;
  r.param_ratio = baseline.total_params == 0
                      ? 1.0
                      : static_cast<double>(pruned.total_params) /
                            static_cast<double>(baseline.total_params);
  r.flop_ratio = baseline.total_flops == 0
                     ? 1.0
                     : static_cast<double>(pruned.total_flops) /
                           static_cast<double>(baseline.total_flops);

  std::map<std::string, const CostRow*> pruned_by_id;
  for (const auto& row : pruned.rows) pruned_by_id[row.id] = &row;
  for (const auto& row : baseline.rows) {
    CompressionRow cr;
    cr.id = row.id;
    cr.baseline_params = row.params;
    cr.baseline_flops = row.flops;
    auto it = pruned_by_id.find(row.id);
    if (it != pruned_by_id.end()) {
      cr.pruned_params = it->second->params;
      cr.pruned_flops = it->second->flops;
    }
    r.rows.push_back(std::move(cr));
  }
  return r;
}

std::string cost_report_text(const CostReport& report) {
  std::ostringstream os;
  os << std::left << std::setw(18) << "layer" << std::setw(9) << "kind"
     << std::right << std::setw(12) << "params" << std::setw(16) << "flops"
     << "\n";
  for (const auto& row : report.rows) {
    os << std::left << std::setw(18) << row.id << std::setw(9) << row.kind
       << std::right << std::setw(12) << row.params << std::setw(16)
       << row.flops << "\n";
  }
  os << std::left << std::setw(18) << "total" << std::setw(9) << ""
     << std::right << std::setw(12) << report.total_params << std::setw(16)
     << report.total_flops << "\n";
  return os.str();
}

std::string cost_report_json(const CostReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : report.rows) {
    rows.push_back({{"id", row.id},
                    {"kind", row.kind},
                    {"params", row.params},
                    {"flops", row.flops}});
  }
  nlohmann::json j{{"rows", std::move(rows)},
                   {"total_params", report.total_params},
                   {"total_flops", report.total_flops}};
  return j.dump(2);
}

std::string compression_report_text(const CompressionReport& report) {
  std::ostringstream os;
  os << std::left << std::setw(18) << "layer" << std::right << std::setw(12)
     << "base params" << std::setw(14) << "pruned params" << std::setw(16)
     << "base flops" << std::setw(16) << "pruned flops" << "\n";
  for (const auto& row : report.rows) {
    os << std::left << std::setw(18) << row.id << std::right << std::setw(12)
       << row.baseline_params << std::setw(14) << row.pruned_params
       << std::setw(16) << row.baseline_flops << std::setw(16)
       << row.pruned_flops << "\n";
  }
  os << std::left << std::setw(18) << "total" << std::right << std::setw(12)
     << report.baseline_params << std::setw(14) << report.pruned_params
     << std::setw(16) << report.baseline_flops << std::setw(16)
     << report.pruned_flops << "\n";
  os << std::fixed << std::setprecision(4) << "param ratio "
     << report.param_ratio << ", flop ratio " << report.flop_ratio << "\n";
  return os.str();
}

std::string compression_report_json(const CompressionReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : report.rows) {
    rows.push_back({{"id", row.id},
                    {"baseline_params", row.baseline_params},
                    {"pruned_params", row.pruned_params},
                    {"baseline_flops", row.baseline_flops},
                    {"pruned_flops", row.pruned_flops}});
  }
  nlohmann::json j{{"rows", std::move(rows)},
                   {"baseline_params", report.baseline_params},
                   {"pruned_params", report.pruned_params},
                   {"baseline_flops", report.baseline_flops},
                   {"pruned_flops", report.pruned_flops},
                   {"param_ratio", report.param_ratio},
                   {"flop_ratio", report.flop_ratio}};
  return j.dump(2);
}

}  // namespace winnow
