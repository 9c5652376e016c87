#pragma once

#include "winnow/graph.hpp"
#include "winnow/rng.hpp"

namespace winnow {

struct ResnetConfig {
  int depth = 18;  // one of 18, 34, 50, 101, 152
  float width_scale = 1.0f;
  int64_t in_channels = 1;
  int64_t in_h = 224;
  int64_t in_w = 224;
  int64_t num_classes = 2;
};

// Per-stage block counts for a given depth; throws ConfigError on others.
std::vector<int> resnet_stage_blocks(int depth);
bool resnet_uses_bottleneck(int depth);

// Builds the classifier: 7x7/2 stem conv + BN + ReLU + 2x2 maxpool, four
// stages of residual blocks (basic for 18/34, bottleneck for 50/101/152),
// global average pool, linear head. Stage widths 64/128/256/512 scaled by
// width_scale (rounded, min 1); bottleneck expansion x4 applied after
// scaling. Downsampling skips use 1x1 stride-2 projections. He fan-in
// normal init for conv/linear weights, BN gamma=1 beta=0.
ModelGraph build_resnet(const ResnetConfig& config, Rng& rng);

}  // namespace winnow
