#include "winnow/resnet.hpp"

#include <cmath>
#include <string>

#include "winnow/errors.hpp"

namespace winnow {

namespace {

int64_t scaled_width(int64_t base, float scale) {
  const int64_t w = std::llround(static_cast<double>(base) * scale);
  return w < 1 ? 1 : w;
}

struct Builder {
  ModelGraph& g;
  Rng& rng;

  void conv(const std::string& id, int64_t f, int64_t c, int64_t k, int stride,
            int pad, const std::string& input) {
    LayerSpec l;
    l.id = id;
    l.kind = LayerKind::kConv;
    l.f = f;
    l.c = c;
    l.k = k;
    l.stride = stride;
    l.pad = pad;
    if (!input.empty()) l.inputs = {input};
    g.add_layer(l);
    const float stddev =
        std::sqrt(2.0f / static_cast<float>(c * k * k));  // He fan-in
    g.set_param(id + ".weight",
                Tensor::randn({f, c, k, k}, rng, stddev, /*requires_grad=*/true));
  }

  void bn(const std::string& id, int64_t c, const std::string& input) {
    LayerSpec l;
    l.id = id;
    l.kind = LayerKind::kBn;
    l.c = c;
    l.inputs = {input};
    g.add_layer(l);
    g.set_param(id + ".gamma", Tensor::full({c}, 1.0f, /*requires_grad=*/true));
    g.set_param(id + ".beta", Tensor::zeros({c}, /*requires_grad=*/true));
    // Running statistics are buffers, not optimized parameters.
    g.set_param(id + ".running_mean", Tensor::zeros({c}));
    g.set_param(id + ".running_var", Tensor::full({c}, 1.0f));
  }

  void simple(const std::string& id, LayerKind kind, const std::string& input) {
    LayerSpec l;
    l.id = id;
    l.kind = kind;
    l.inputs = {input};
    g.add_layer(l);
  }

  void add(const std::string& id, const std::string& a, const std::string& b) {
    LayerSpec l;
    l.id = id;
    l.kind = LayerKind::kAdd;
    l.inputs = {a, b};
    g.add_layer(l);
  }

  void linear(const std::string& id, int64_t f, int64_t c,
              const std::string& input) {
    LayerSpec l;
    l.id = id;
    l.kind = LayerKind::kLinear;
    l.f = f;
    l.c = c;
    l.inputs = {input};
    g.add_layer(l);
    const float stddev = std::sqrt(2.0f / static_cast<float>(c));
    g.set_param(id + ".weight",
                Tensor::randn({f, c}, rng, stddev, /*requires_grad=*/true));
    g.set_param(id + ".bias", Tensor::zeros({f}, /*requires_grad=*/true));
  }

  // Returns the block's output layer id.
  std::string basic_block(const std::string& prefix, int64_t cin,
                          int64_t planes, int stride,
                          const std::string& input) {
    conv(prefix + ".conv1", planes, cin, 3, stride, 1, input);
    bn(prefix + ".bn1", planes, prefix + ".conv1");
    simple(prefix + ".relu1", LayerKind::kRelu, prefix + ".bn1");
    conv(prefix + ".conv2", planes, planes, 3, 1, 1, prefix + ".relu1");
    bn(prefix + ".bn2", planes, prefix + ".conv2");

    std::string skip = input;
    if (stride != 1 || cin != planes) {
      conv(prefix + ".proj", planes, cin, 1, stride, 0, input);
      bn(prefix + ".projbn", planes, prefix + ".proj");
      skip = prefix + ".projbn";
    }
    add(prefix + ".add", prefix + ".bn2", skip);
    simple(prefix + ".relu2", LayerKind::kRelu, prefix + ".add");
    return prefix + ".relu2";
  }

  std::string bottleneck_block(const std::string& prefix, int64_t cin,
                               int64_t planes, int stride,
                               const std::string& input) {
    const int64_t out = planes * 4;
    conv(prefix + ".conv1", planes, cin, 1, 1, 0, input);
    bn(prefix + ".bn1", planes, prefix + ".conv1");
    simple(prefix + ".relu1", LayerKind::kRelu, prefix + ".bn1");
    // Stride lives on the 3x3 (the variant whose FLOPs match common counts).
    conv(prefix + ".conv2", planes, planes, 3, stride, 1, prefix + ".relu1");
    bn(prefix + ".bn2", planes, prefix + ".conv2");
    simple(prefix + ".relu2", LayerKind::kRelu, prefix + ".bn2");
    conv(prefix + ".conv3", out, planes, 1, 1, 0, prefix + ".relu2");
    bn(prefix + ".bn3", out, prefix + ".conv3");

    std::string skip = input;
    if (stride != 1 || cin != out) {
      conv(prefix + ".proj", out, cin, 1, stride, 0, input);
      bn(prefix + ".projbn", out, prefix + ".proj");
      skip = prefix + ".projbn";
    }
    add(prefix + ".add", prefix + ".bn3", skip);
    simple(prefix + ".relu3", LayerKind::kRelu, prefix + ".add");
    return prefix + ".relu3";
  }
};

}  // namespace

std::vector<int> resnet_stage_blocks(int depth) {
  switch (depth) {
    case 18: return {2, 2, 2, 2};
    case 34: return {3, 4, 6, 3};
    case 50: return {3, 4, 6, 3};
    case 101: return {3, 4, 23, 3};
    case 152: return {3, 8, 36, 3};
    default:
      throw ConfigError("unsupported depth " + std::to_string(depth) +
                        " (expected 18, 34, 50, 101 or 152)");
  }
}

bool resnet_uses_bottleneck(int depth) { return depth >= 50; }

ModelGraph build_resnet(const ResnetConfig& config, Rng& rng) {
  const std::vector<int> blocks = resnet_stage_blocks(config.depth);
  if (!(config.width_scale > 0.0f && config.width_scale <= 1.0f)) {
    throw ConfigError("width_scale must lie in (0,1]");
  }
  if (config.num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (config.in_channels < 1 || config.in_h < 1 || config.in_w < 1) {
    throw ConfigError("invalid input shape");
  }
  const bool bottleneck = resnet_uses_bottleneck(config.depth);

  ModelGraph g;
  g.meta.arch = "resnet" + std::to_string(config.depth);
  g.meta.width_scale = config.width_scale;
  g.meta.in_channels = config.in_channels;
  g.meta.in_h = config.in_h;
  g.meta.in_w = config.in_w;
  g.meta.num_classes = config.num_classes;

  Builder b{g, rng};
  const int64_t stem_width = scaled_width(64, config.width_scale);
  b.conv("stem.conv", stem_width, config.in_channels, 7, 2, 3, "");
  b.bn("stem.bn", stem_width, "stem.conv");
  b.simple("stem.relu", LayerKind::kRelu, "stem.bn");
  b.simple("stem.pool", LayerKind::kMaxpool, "stem.relu");

  std::string cursor = "stem.pool";
  int64_t cin = stem_width;
  const int64_t base_widths[4] = {64, 128, 256, 512};
  for (int stage = 0; stage < 4; ++stage) {
    const int64_t planes = scaled_width(base_widths[stage], config.width_scale);
    for (int block = 0; block < blocks[static_cast<size_t>(stage)]; ++block) {
      const int stride = (stage > 0 && block == 0) ? 2 : 1;
      const std::string prefix =
          "s" + std::to_string(stage + 1) + ".b" + std::to_string(block + 1);
      cursor = bottleneck
                   ? b.bottleneck_block(prefix, cin, planes, stride, cursor)
                   : b.basic_block(prefix, cin, planes, stride, cursor);
      cin = bottleneck ? planes * 4 : planes;
    }
  }

  b.simple("gap", LayerKind::kGap, cursor);
  b.linear("fc", config.num_classes, cin, "gap");
  g.finalize();
  return g;
}

}  // namespace winnow
