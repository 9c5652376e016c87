#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "winnow/graph.hpp"

namespace winnow {

struct CostRow {
  std::string id;
  std::string kind;
  int64_t params = 0;
  int64_t flops = 0;  // multiply-accumulates for one image
};

// Per-layer costs plus totals. FLOPs counts one multiply-accumulate as one
// operation (the convention under which published ResNet-18 tables read
// ~1.8e9 at 224x224); batch size is normalized to 1.
struct CostReport {
  std::vector<CostRow> rows;
  int64_t total_params = 0;
  int64_t total_flops = 0;
};

// conv: F*C*k*k. bn: 2C (affine only; running stats are not learned).
// linear: K*D+K. Everything else: 0.
int64_t count_params(const ModelGraph& model);

// conv: F*C*k*k*H'*W'; linear: K*D; bn/relu/pool excluded.
int64_t count_flops(const ModelGraph& model);

CostReport cost_report(const ModelGraph& model);

struct CompressionRow {
  std::string id;
  int64_t baseline_params = 0;
  int64_t pruned_params = 0;
  int64_t baseline_flops = 0;
  int64_t pruned_flops = 0;
};

struct CompressionReport {
  std::vector<CompressionRow> rows;
  int64_t baseline_params = 0;
  int64_t pruned_params = 0;
  int64_t baseline_flops = 0;
  int64_t pruned_flops = 0;
  double param_ratio = 1.0;  // pruned / baseline
  double flop_ratio = 1.0;
};

CompressionReport report_compression(const CostReport& baseline,
                                     const CostReport& pruned);

std::string cost_report_text(const CostReport& report);
std::string cost_report_json(const CostReport& report);
std::string compression_report_text(const CompressionReport& report);
std::string compression_report_json(const CompressionReport& report);

}  // namespace winnow
