#include "winnow/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "winnow/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint codec assumes a little-endian host");

namespace winnow {

namespace {

constexpr char kMagic[8] = {'W', 'I', 'N', 'N', 'O', 'W', 'C', 'K'};
constexpr uint32_t kVersion = 1;
constexpr uint8_t kDtypeF32 = 0;

using nlohmann::json;

struct Writer {
  std::vector<uint8_t> buf;

  void bytes(const void* p, size_t n) {
    const auto* b = static_cast<const uint8_t*>(p);
    buf.insert(buf.end(), b, b + n);
  }
  void u8(uint8_t v) { buf.push_back(v); }
  void u32(uint32_t v) { bytes(&v, sizeof v); }
  void u64(uint64_t v) { bytes(&v, sizeof v); }
};

struct Reader {
  std::span<const uint8_t> buf;
  size_t pos = 0;

  void bytes(void* p, size_t n) {
    if (pos + n > buf.size()) {
      throw FormatError("truncated checkpoint: need " + std::to_string(n) +
                        " bytes at offset " + std::to_string(pos) +
                        ", have " + std::to_string(buf.size() - pos));
    }
    std::memcpy(p, buf.data() + pos, n);
    pos += n;
  }
  uint8_t u8() {
    uint8_t v;
    bytes(&v, sizeof v);
    return v;
  }
  uint32_t u32() {
    uint32_t v;
    bytes(&v, sizeof v);
    return v;
  }
  uint64_t u64() {
    uint64_t v;
    bytes(&v, sizeof v);
    return v;
  }
  bool done() const { return pos == buf.size(); }
};

json meta_to_json(const ModelGraph& model) {
  json layers = json::array();
  for (const auto& l : model.layers()) {
    json jl{{"id", l.id}, {"kind", layer_kind_name(l.kind)}};
    if (l.kind == LayerKind::kConv || l.kind == LayerKind::kLinear ||
        l.kind == LayerKind::kBn) {
      jl["f"] = l.f;
      jl["c"] = l.c;
      jl["k"] = l.k;
      jl["stride"] = l.stride;
      jl["pad"] = l.pad;
    }
    jl["inputs"] = l.inputs;
    layers.push_back(std::move(jl));
  }
  return json{{"arch", model.meta.arch},
              {"width_scale", model.meta.width_scale},
              {"in_channels", model.meta.in_channels},
              {"in_h", model.meta.in_h},
              {"in_w", model.meta.in_w},
              {"num_classes", model.meta.num_classes},
              {"layers", std::move(layers)}};
}

ModelGraph graph_from_meta(const json& meta) {
  ModelGraph g;
  g.meta.arch = meta.at("arch").get<std::string>();
  g.meta.width_scale = meta.at("width_scale").get<float>();
  g.meta.in_channels = meta.at("in_channels").get<int64_t>();
  g.meta.in_h = meta.at("in_h").get<int64_t>();
  g.meta.in_w = meta.at("in_w").get<int64_t>();
  g.meta.num_classes = meta.at("num_classes").get<int64_t>();
  for (const auto& jl : meta.at("layers")) {
    LayerSpec l;
    l.id = jl.at("id").get<std::string>();
    l.kind = layer_kind_from_name(jl.at("kind").get<std::string>());
    l.f = jl.value("f", int64_t{0});
    l.c = jl.value("c", int64_t{0});
    l.k = jl.value("k", int64_t{0});
    l.stride = jl.value("stride", 1);
    l.pad = jl.value("pad", 0);
    l.inputs = jl.at("inputs").get<std::vector<std::string>>();
    g.add_layer(std::move(l));
  }
  return g;
}

}  // namespace

std::vector<uint8_t> serialize_checkpoint(const ModelGraph& model) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(kVersion);
  const std::string meta = meta_to_json(model).dump();
  w.u32(static_cast<uint32_t>(meta.size()));
  w.bytes(meta.data(), meta.size());

  for (const auto& [name, tensor] : model.named_tensors()) {
    w.u32(static_cast<uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.u8(kDtypeF32);
    w.u8(static_cast<uint8_t>(tensor.rank()));
    for (int64_t d = 0; d < tensor.rank(); ++d) {
      w.u64(static_cast<uint64_t>(tensor.dim(d)));
    }
    w.bytes(tensor.data().data(), tensor.data().size() * sizeof(float));
  }
  return std::move(w.buf);
}

ModelGraph deserialize_checkpoint(std::span<const uint8_t> bytes) {
  Reader r{bytes};
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw FormatError("bad checkpoint magic");
  }
  const uint32_t version = r.u32();
  if (version != kVersion) {
    throw FormatError("unsupported checkpoint version " +
                      std::to_string(version));
  }
  const uint32_t meta_len = r.u32();
  std::string meta_str(meta_len, '\0');
  r.bytes(meta_str.data(), meta_len);

  json meta;
  try {
    meta = json::parse(meta_str);
  } catch (const json::exception& e) {
    throw FormatError(std::string("unparseable checkpoint meta: ") + e.what());
  }
  ModelGraph g;
  try {
    g = graph_from_meta(meta);
  } catch (const json::exception& e) {
    throw FormatError(std::string("incomplete checkpoint meta: ") + e.what());
  }

  std::set<std::string> seen;
  while (!r.done()) {
    const uint32_t name_len = r.u32();
    std::string name(name_len, '\0');
    r.bytes(name.data(), name_len);
    const uint8_t dtype = r.u8();
    if (dtype != kDtypeF32) {
      throw FormatError("tensor '" + name + "' has unsupported dtype tag " +
                        std::to_string(dtype));
    }
    const uint8_t rank = r.u8();
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<int64_t>(r.u64());
    const int64_t numel = shape_numel(shape);
    if (numel < 0 || numel > (int64_t{1} << 33)) {
      throw FormatError("tensor '" + name + "' has implausible extents " +
                        shape_str(shape));
    }
    std::vector<float> values(static_cast<size_t>(numel));
    r.bytes(values.data(), values.size() * sizeof(float));
    if (!seen.insert(name).second) {
      throw FormatError("duplicate tensor '" + name + "'");
    }
    g.set_param(name, Tensor::from_data(shape, std::move(values)));
  }

  try {
    g.finalize();
  } catch (const Error& e) {
    throw FormatError(std::string("checkpoint does not describe a valid model: ") +
                      e.what());
  }
  // finalize() resolves every parameter the layers need; reject strays.
  std::set<std::string> expected;
  for (const auto& [name, t] : g.named_tensors()) expected.insert(name);
  for (const auto& name : seen) {
    if (!expected.count(name)) {
      throw FormatError("checkpoint carries unexpected tensor '" + name + "'");
    }
  }
  // Restored models must be trainable; buffers (BN running stats) stay
  // untracked because parameters() never lists them.
  for (Tensor& p : g.parameters()) p.set_requires_grad(true);
  return g;
}

void save_checkpoint(const ModelGraph& model, const std::string& path) {
  const std::vector<uint8_t> bytes = serialize_checkpoint(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path + "'");
}

ModelGraph load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("cannot open '" + path + "'");
  const std::streamsize size = in.tellg();
  in.seekg(0);
  std::vector<uint8_t> bytes(static_cast<size_t>(size));
  in.read(reinterpret_cast<char*>(bytes.data()), size);
  if (!in) throw IoError("read failed for '" + path + "'");
  return deserialize_checkpoint(bytes);
}

ModelGraph load_checkpoint(const std::string& path, const ModelMeta& expected) {
  ModelGraph g = load_checkpoint(path);
  const ModelMeta& got = g.meta;

  // Identify the head and stem tensors so mismatches name something concrete.
  std::string head = "<head>", stem = "<stem>";
  for (const auto& l : g.layers()) {
    if (l.kind == LayerKind::kLinear && l.id == g.output_id()) {
      head = l.id + ".weight";
    }
    if (l.kind == LayerKind::kConv && l.inputs.empty()) {
      stem = l.id + ".weight";
    }
  }

  if (got.num_classes != expected.num_classes) {
    throw IncompatibilityError(
        "checkpoint tensor '" + head + "' serves " +
        std::to_string(got.num_classes) + " classes, expected " +
        std::to_string(expected.num_classes));
  }
  if (got.in_channels != expected.in_channels) {
    throw IncompatibilityError(
        "checkpoint tensor '" + stem + "' takes " +
        std::to_string(got.in_channels) + " input channels, expected " +
        std::to_string(expected.in_channels));
  }
  if (got.in_h != expected.in_h || got.in_w != expected.in_w) {
    throw IncompatibilityError(
        "checkpoint input size " + std::to_string(got.in_h) + "x" +
        std::to_string(got.in_w) + " does not match expected " +
        std::to_string(expected.in_h) + "x" + std::to_string(expected.in_w));
  }
  if (!expected.arch.empty() && got.arch != expected.arch) {
    throw IncompatibilityError("checkpoint arch '" + got.arch +
                               "' does not match expected '" + expected.arch +
                               "'");
  }
  if (std::fabs(got.width_scale - expected.width_scale) > 1e-6f) {
    throw IncompatibilityError(
        "checkpoint width_scale " + std::to_string(got.width_scale) +
        " does not match expected " + std::to_string(expected.width_scale));
  }
  return g;
}

}  // namespace winnow
