#include "winnow/graph.hpp"

#include <algorithm>

#include "winnow/errors.hpp"

namespace winnow {

const char* layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv: return "conv";
    case LayerKind::kBn: return "bn";
    case LayerKind::kRelu: return "relu";
    case LayerKind::kMaxpool: return "maxpool";
    case LayerKind::kGap: return "gap";
    case LayerKind::kLinear: return "linear";
    case LayerKind::kAdd: return "add";
  }
  throw ConfigError("unknown layer kind");
}

LayerKind layer_kind_from_name(const std::string& name) {
  if (name == "conv") return LayerKind::kConv;
  if (name == "bn") return LayerKind::kBn;
  if (name == "relu") return LayerKind::kRelu;
  if (name == "maxpool") return LayerKind::kMaxpool;
  if (name == "gap") return LayerKind::kGap;
  if (name == "linear") return LayerKind::kLinear;
  if (name == "add") return LayerKind::kAdd;
  throw ConfigError("unknown layer kind '" + name + "'");
}

void ModelGraph::add_layer(LayerSpec spec) {
  if (index_.count(spec.id)) {
    throw ConfigError("duplicate layer id '" + spec.id + "'");
  }
  index_[spec.id] = layers_.size();
  layers_.push_back(std::move(spec));
  finalized_ = false;
}

void ModelGraph::add_param(const std::string& name, const Shape& shape) {
  if (params_.count(name)) {
    throw ConfigError("duplicate parameter '" + name + "'");
  }
  params_.emplace(name, Tensor::zeros(shape));
}

void ModelGraph::set_param(const std::string& name, Tensor t) {
  auto it = params_.find(name);
  if (it == params_.end()) {
    params_.emplace(name, std::move(t));
  } else {
    it->second = std::move(t);
  }
}

const LayerSpec& ModelGraph::layer(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw ConfigError("no layer '" + id + "'");
  return layers_[it->second];
}

bool ModelGraph::has_layer(const std::string& id) const {
  return index_.count(id) != 0;
}

Tensor& ModelGraph::param(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("no parameter '" + name + "'");
  return it->second;
}

const Tensor& ModelGraph::param(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("no parameter '" + name + "'");
  return it->second;
}

bool ModelGraph::has_param(const std::string& name) const {
  return params_.count(name) != 0;
}

void ModelGraph::finalize() {
  if (layers_.empty()) throw ConfigError("empty model graph");

  std::map<std::string, int> consumed;
  for (size_t i = 0; i < layers_.size(); ++i) {
    const LayerSpec& l = layers_[i];
    const size_t expected_inputs = l.kind == LayerKind::kAdd ? 2 : 1;
    if (!l.inputs.empty() && l.inputs.size() != expected_inputs) {
      throw ConfigError("layer '" + l.id + "' (" + layer_kind_name(l.kind) +
                        ") has " + std::to_string(l.inputs.size()) +
                        " inputs, expected " + std::to_string(expected_inputs));
    }
    if (l.kind == LayerKind::kAdd && l.inputs.empty()) {
      throw ConfigError("add layer '" + l.id + "' cannot read the model input");
    }
    for (const auto& in : l.inputs) {
      auto it = index_.find(in);
      if (it == index_.end()) {
        throw ConfigError("layer '" + l.id + "' reads unknown layer '" + in + "'");
      }
      if (it->second >= i) {
        throw ConfigError("layer '" + l.id + "' reads '" + in +
                          "' which is not an earlier layer (graph must be "
                          "topologically ordered)");
      }
      ++consumed[in];
    }

    switch (l.kind) {
      case LayerKind::kConv: {
        if (l.f < 1 || l.c < 1 || l.k < 1 || l.stride < 1 || l.pad < 0) {
          throw ConfigError("conv '" + l.id + "' has invalid geometry");
        }
        const Tensor& w = param(l.id + ".weight");
        const Shape want{l.f, l.c, l.k, l.k};
        if (w.shape() != want) {
          throw ConfigError("conv '" + l.id + "' weight is " +
                            shape_str(w.shape()) + ", spec requires " +
                            shape_str(want));
        }
        break;
      }
      case LayerKind::kBn: {
        for (const char* sfx :
             {".gamma", ".beta", ".running_mean", ".running_var"}) {
          const Tensor& t = param(l.id + sfx);
          if (t.rank() != 1 || t.dim(0) != l.c) {
            throw ConfigError("bn '" + l.id + "' tensor " + sfx + " is " +
                              shape_str(t.shape()) + ", expected [" +
                              std::to_string(l.c) + "]");
          }
        }
        break;
      }
      case LayerKind::kLinear: {
        const Tensor& w = param(l.id + ".weight");
        const Shape want{l.f, l.c};
        if (w.shape() != want) {
          throw ConfigError("linear '" + l.id + "' weight is " +
                            shape_str(w.shape()) + ", spec requires " +
                            shape_str(want));
        }
        const Tensor& b = param(l.id + ".bias");
        if (b.rank() != 1 || b.dim(0) != l.f) {
          throw ConfigError("linear '" + l.id + "' bias is " +
                            shape_str(b.shape()));
        }
        break;
      }
      default:
        break;
    }
  }

  // Exactly one sink layer: the model output.
  output_id_.clear();
  for (const auto& l : layers_) {
    if (consumed.find(l.id) == consumed.end()) {
      if (!output_id_.empty()) {
        throw ConfigError("graph has multiple sinks: '" + output_id_ +
                          "' and '" + l.id + "'");
      }
      output_id_ = l.id;
    }
  }
  if (output_id_.empty()) throw ConfigError("graph has no sink (cycle?)");

  finalized_ = true;
  infer_shapes(1);  // validates shape compatibility end to end
}

void ModelGraph::check_finalized() const {
  if (!finalized_) throw UsageError("model graph used before finalize()");
}

std::map<std::string, Shape> ModelGraph::infer_shapes(int64_t n) const {
  check_finalized();
  std::map<std::string, Shape> shapes;
  const Shape input_shape{n, meta.in_channels, meta.in_h, meta.in_w};
  auto in_shape = [&](const LayerSpec& l, size_t which) -> const Shape& {
    return l.inputs.empty() ? input_shape : shapes.at(l.inputs[which]);
  };

  for (const auto& l : layers_) {
    const Shape& a = in_shape(l, 0);
    switch (l.kind) {
      case LayerKind::kConv: {
        if (a.size() != 4 || a[1] != l.c) {
          throw ShapeError("conv '" + l.id + "' expects [N," +
                           std::to_string(l.c) + ",H,W], gets " + shape_str(a));
        }
        const int64_t h = (a[2] + 2 * l.pad - l.k) / l.stride + 1;
        const int64_t w = (a[3] + 2 * l.pad - l.k) / l.stride + 1;
        if (a[2] + 2 * l.pad < l.k || a[3] + 2 * l.pad < l.k || h < 1 || w < 1) {
          throw ShapeError("conv '" + l.id + "' output extent below 1 for input " +
                           shape_str(a));
        }
        shapes[l.id] = Shape{a[0], l.f, h, w};
        break;
      }
      case LayerKind::kBn:
        if (a.size() != 4 || a[1] != l.c) {
          throw ShapeError("bn '" + l.id + "' expects [N," +
                           std::to_string(l.c) + ",H,W], gets " + shape_str(a));
        }
        shapes[l.id] = a;
        break;
      case LayerKind::kRelu:
        shapes[l.id] = a;
        break;
      case LayerKind::kMaxpool: {
        if (a.size() != 4 || a[2] < 2 || a[3] < 2) {
          throw ShapeError("maxpool '" + l.id + "' needs [N,C,H>=2,W>=2], gets " +
                           shape_str(a));
        }
        shapes[l.id] = Shape{a[0], a[1], a[2] / 2, a[3] / 2};
        break;
      }
      case LayerKind::kGap:
        if (a.size() != 4) {
          throw ShapeError("gap '" + l.id + "' needs rank-4 input, gets " +
                           shape_str(a));
        }
        shapes[l.id] = Shape{a[0], a[1]};
        break;
      case LayerKind::kLinear:
        if (a.size() != 2 || a[1] != l.c) {
          throw ShapeError("linear '" + l.id + "' expects [N," +
                           std::to_string(l.c) + "], gets " + shape_str(a));
        }
        shapes[l.id] = Shape{a[0], l.f};
        break;
      case LayerKind::kAdd: {
        const Shape& b = in_shape(l, 1);
        if (a != b) {
          throw ShapeError("add '" + l.id + "' input shapes differ: " +
                           shape_str(a) + " vs " + shape_str(b));
        }
        shapes[l.id] = a;
        break;
      }
    }
  }
  return shapes;
}

Tensor ModelGraph::forward(const Tensor& batch, ops::BnMode mode) {
  check_finalized();
  if (batch.rank() != 4 || batch.dim(1) != meta.in_channels ||
      batch.dim(2) != meta.in_h || batch.dim(3) != meta.in_w) {
    throw ShapeError("forward: batch " + shape_str(batch.shape()) +
                     " does not match model input [N," +
                     std::to_string(meta.in_channels) + "," +
                     std::to_string(meta.in_h) + "," +
                     std::to_string(meta.in_w) + "]");
  }

  std::map<std::string, Tensor> values;
  auto value_of = [&](const LayerSpec& l, size_t which) -> const Tensor& {
    return l.inputs.empty() ? batch : values.at(l.inputs[which]);
  };

  Tensor out;
  for (const auto& l : layers_) {
    const Tensor& a = value_of(l, 0);
    Tensor y;
    switch (l.kind) {
      case LayerKind::kConv:
        y = ops::conv2d(a, param(l.id + ".weight"), l.stride, l.pad);
        break;
      case LayerKind::kBn:
        y = ops::batchnorm2d(a, param(l.id + ".gamma"), param(l.id + ".beta"),
                             param(l.id + ".running_mean"),
                             param(l.id + ".running_var"), mode);
        break;
      case LayerKind::kRelu:
        y = ops::relu(a);
        break;
      case LayerKind::kMaxpool:
        y = ops::maxpool2x2(a);
        break;
      case LayerKind::kGap:
        y = ops::global_avg_pool(a);
        break;
      case LayerKind::kLinear:
        y = ops::linear(a, param(l.id + ".weight"), param(l.id + ".bias"));
        break;
      case LayerKind::kAdd:
        y = ops::add(a, value_of(l, 1));
        break;
    }
    if (l.id == output_id_) out = y;
    values.emplace(l.id, std::move(y));
  }
  return out;
}

std::vector<Tensor> ModelGraph::parameters() const {
  check_finalized();
  std::vector<Tensor> out;
  for (const auto& l : layers_) {
    switch (l.kind) {
      case LayerKind::kConv:
        out.push_back(param(l.id + ".weight"));
        break;
      case LayerKind::kBn:
        out.push_back(param(l.id + ".gamma"));
        out.push_back(param(l.id + ".beta"));
        break;
      case LayerKind::kLinear:
        out.push_back(param(l.id + ".weight"));
        out.push_back(param(l.id + ".bias"));
        break;
      default:
        break;
    }
  }
  return out;
}

std::vector<std::pair<std::string, Tensor>> ModelGraph::named_tensors() const {
  check_finalized();
  std::vector<std::pair<std::string, Tensor>> out;
  for (const auto& l : layers_) {
    switch (l.kind) {
      case LayerKind::kConv:
        out.emplace_back(l.id + ".weight", param(l.id + ".weight"));
        break;
      case LayerKind::kBn:
        for (const char* sfx :
             {".gamma", ".beta", ".running_mean", ".running_var"}) {
          out.emplace_back(l.id + sfx, param(l.id + sfx));
        }
        break;
      case LayerKind::kLinear:
        out.emplace_back(l.id + ".weight", param(l.id + ".weight"));
        out.emplace_back(l.id + ".bias", param(l.id + ".bias"));
        break;
      default:
        break;
    }
  }
  return out;
}

std::vector<std::string> ModelGraph::consumers(const std::string& id) const {
  std::vector<std::string> out;
  for (const auto& l : layers_) {
    if (std::find(l.inputs.begin(), l.inputs.end(), id) != l.inputs.end()) {
      out.push_back(l.id);
    }
  }
  return out;
}

}  // namespace winnow
