#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "winnow/graph.hpp"

namespace winnow {

// Binary model snapshot. Layout (all integers little-endian; documented in
// docs/checkpoint_format.md):
//   magic "WINNOWCK" | u32 version=1 | u32 meta_len | meta JSON |
//   per-tensor records: u32 name_len | name | u8 dtype(0=f32) | u8 rank |
//   rank x u64 extents | numel x f32 raw.
// The meta JSON embeds the full layer list, so models with nonstandard
// geometry (e.g. after compaction) rebuild without outside knowledge.
std::vector<uint8_t> serialize_checkpoint(const ModelGraph& model);
ModelGraph deserialize_checkpoint(std::span<const uint8_t> bytes);

void save_checkpoint(const ModelGraph& model, const std::string& path);
ModelGraph load_checkpoint(const std::string& path);

// Loads and verifies the checkpoint matches `expected` (arch, width_scale,
// input shape, classes). Mismatch throws IncompatibilityError naming the
// offending tensor where one is identifiable.
ModelGraph load_checkpoint(const std::string& path, const ModelMeta& expected);

}  // namespace winnow
