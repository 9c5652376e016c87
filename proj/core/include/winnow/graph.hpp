#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "winnow/ops.hpp"
#include "winnow/tensor.hpp"

namespace winnow {

enum class LayerKind { kConv, kBn, kRelu, kMaxpool, kGap, kLinear, kAdd };

const char* layer_kind_name(LayerKind kind);
LayerKind layer_kind_from_name(const std::string& name);

// One node of a model DAG. `inputs` lists producer layer ids; an empty list
// means the layer reads the model input. Parameter tensors live in the owning
// ModelGraph under "<id>.<suffix>" names (weight / gamma / beta /
// running_mean / running_var / bias).
struct LayerSpec {
  std::string id;
  LayerKind kind = LayerKind::kRelu;
  int64_t f = 0;  // conv: output filters; linear: output features
  int64_t c = 0;  // conv: input channels;  linear: input features
  int64_t k = 0;  // conv: square kernel extent
  int stride = 1;
  int pad = 0;
  std::vector<std::string> inputs;
};

struct ModelMeta {
  std::string arch;  // label such as "resnet18"
  float width_scale = 1.0f;
  int64_t in_channels = 1;
  int64_t in_h = 224;
  int64_t in_w = 224;
  int64_t num_classes = 2;
};

// Topologically ordered layer list plus a named parameter store. Layers are
// appended producer-first; finalize() validates the wiring and shapes.
class ModelGraph {
 public:
  void add_layer(LayerSpec spec);
  // Creates parameter tensors for a layer (conv weight / bn vectors / linear
  // weight+bias). Values are zero-initialized; callers fill them in.
  void add_param(const std::string& name, const Shape& shape);
  void set_param(const std::string& name, Tensor t);

  // Validates graph structure + parameter shapes and locates the single sink.
  void finalize();

  Tensor forward(const Tensor& batch, ops::BnMode mode);

  // Static shape of every layer's output for batch size n.
  std::map<std::string, Shape> infer_shapes(int64_t n) const;

  const std::vector<LayerSpec>& layers() const { return layers_; }
  const LayerSpec& layer(const std::string& id) const;
  bool has_layer(const std::string& id) const;
  const std::string& output_id() const { return output_id_; }

  Tensor& param(const std::string& name);
  const Tensor& param(const std::string& name) const;
  bool has_param(const std::string& name) const;

  // Learnable tensors (conv/linear weights, bn affine) in layer order.
  std::vector<Tensor> parameters() const;
  // All tensors including bn running stats, in layer order — checkpoint order.
  std::vector<std::pair<std::string, Tensor>> named_tensors() const;

  // Layer ids that consume `id` as an input.
  std::vector<std::string> consumers(const std::string& id) const;

  ModelMeta meta;

 private:
  void check_finalized() const;

  std::vector<LayerSpec> layers_;
  std::map<std::string, size_t> index_;          // id -> position in layers_
  std::map<std::string, Tensor> params_;         // name -> tensor
  std::string output_id_;
  bool finalized_ = false;
};

}  // namespace winnow
