#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "winnow/image.hpp"
#include "winnow/rng.hpp"

namespace winnow {

// D4 (burn) and D5 (moisture) exist in the taxonomy but are invisible to the
// imaging modality, so the generator never draws them.
enum class DefectKind { kD1MeltDrop, kD2BinderBulk, kD3ShotCluster, kD6Dirt };

const char* defect_kind_name(DefectKind kind);

struct ManifestRecord {
  std::string path;  // image file, relative to the manifest's directory
  int label = 0;     // 1 = defective
  std::vector<std::string> defects;  // kind names, present iff label == 1
  uint64_t seed = 0;                 // per-image seed used to render it
  int fold = -1;                     // filled by a fold plan, -1 = unassigned
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;
  std::string root;  // directory the paths are relative to
};

// Everything that shapes the images lives here, not in code: background
// banding/fiber texture/noise levels and per-defect-kind contrast ranges.
// "Subtle" images draw all their defects from the low-contrast ranges; the
// subtle fraction is the main knob separating a windowed-threshold detector
// (should miss them) from a trained CNN (should not).
struct GeneratorConfig {
  int defective = 242;
  int clean = 236;
  int64_t width = 224;
  int64_t height = 224;
  int margin = 24;  // defect centers stay this far from the border

  float base_gray_lo = 150.0f, base_gray_hi = 180.0f;
  float band_amp_lo = 8.0f, band_amp_hi = 12.0f;
  float band_wavelength_lo = 30.0f, band_wavelength_hi = 80.0f;
  float band_tilt_max = 0.15f;
  float fiber_amp = 4.0f;
  float sensor_noise = 3.0f;

  int min_defects = 1, max_defects = 3;
  float subtle_fraction = 0.4f;

  float d1_delta_lo = 25.0f, d1_delta_hi = 45.0f;
  float d1_subtle_lo = 11.0f, d1_subtle_hi = 16.0f;
  float d2_delta_lo = 20.0f, d2_delta_hi = 35.0f;
  float d2_subtle_lo = 9.0f, d2_subtle_hi = 14.0f;
  float d3_delta_lo = 30.0f, d3_delta_hi = 60.0f;
  float d3_subtle_lo = 12.0f, d3_subtle_hi = 18.0f;
  float d6_delta_lo = 20.0f, d6_delta_hi = 40.0f;
  float d6_subtle_lo = 10.0f, d6_subtle_hi = 15.0f;

  // Label soundness: a defective image must differ from its own clean render
  // by >= min_delta on >= min_pixels pixels, re-rolling defect geometry up to
  // max_retries times before erroring out.
  float soundness_min_delta = 5.0f;
  int soundness_min_pixels = 20;
  int soundness_max_retries = 8;
};

GeneratorConfig load_generator_config(const std::string& path);
void save_generator_config(const GeneratorConfig& config,
                           const std::string& path);

// Renders the full dataset into out_dir (created if missing) and writes
// manifest.jsonl beside the images. Per-image seeds derive from (seed, index)
// so any image renders identically regardless of generation order.
DatasetManifest generate_dataset(const GeneratorConfig& config, uint64_t seed,
                                 const std::string& out_dir);

// Renders just one image (exposed for tests and tuning): the composed image
// plus the defect kinds drawn. Clean images pass defective=false.
ImageU8 render_image(const GeneratorConfig& config, uint64_t image_seed,
                     bool defective, std::vector<DefectKind>* kinds_out);

void save_manifest(const DatasetManifest& manifest, const std::string& path);
DatasetManifest load_manifest(const std::string& path);

struct FoldPlan {
  int k = 0;
  std::vector<int> fold_of;  // record index -> fold id in [0,k)
  bool stratified = true;
};

// Seeded shuffle + round-robin deal. Stratified mode deals each class
// separately with a rotating start offset, so per-class fold counts differ by
// <= 1 AND total fold sizes differ by <= 1.
FoldPlan kfold_split(const DatasetManifest& manifest, int k, uint64_t seed,
                     bool stratified);

// Training-time transform: replicate-pad, random crop back to (out_w, out_h),
// horizontal flip with probability 1/2. Draw order: y offset, x offset, flip.
ImageU8 augment_train(const ImageU8& image, int64_t out_w, int64_t out_h,
                      int64_t pad, Rng& rng);

// Validation-time transform: deterministic center crop, no flip.
ImageU8 center_crop(const ImageU8& image, int64_t out_w, int64_t out_h);

}  // namespace winnow
