#include "winnow/dataforge.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>

#include <nlohmann/json.hpp>

#include "winnow/errors.hpp"

namespace winnow {

namespace {

using nlohmann::json;

constexpr double kPi = std::numbers::pi;

struct FieldF32 {
  int64_t width = 0, height = 0;
  std::vector<float> values;

  FieldF32(int64_t w, int64_t h) : width(w), height(h) {
    values.assign(static_cast<size_t>(w * h), 0.0f);
  }
  float& at(int64_t x, int64_t y) {
    return values[static_cast<size_t>(y * width + x)];
  }
  float at(int64_t x, int64_t y) const {
    return values[static_cast<size_t>(y * width + x)];
  }
};

void validate_config(const GeneratorConfig& c) {
  if (c.defective < 0 || c.clean < 0) {
    throw ConfigError("image counts must be >= 0");
  }
  if (c.width < 64 || c.height < 64) {
    throw ConfigError("image size must be >= 64");
  }
  if (c.margin < 0 || 2 * c.margin >= std::min(c.width, c.height)) {
    throw ConfigError("margin leaves no room for defects");
  }
  if (c.min_defects < 1 || c.max_defects < c.min_defects) {
    throw ConfigError("defect count range invalid");
  }
  if (!(c.subtle_fraction >= 0.0f && c.subtle_fraction <= 1.0f)) {
    throw ConfigError("subtle_fraction must lie in [0,1]");
  }
  auto range_ok = [](float lo, float hi) { return lo > 0.0f && hi >= lo; };
  if (!range_ok(c.d1_delta_lo, c.d1_delta_hi) ||
      !range_ok(c.d1_subtle_lo, c.d1_subtle_hi) ||
      !range_ok(c.d2_delta_lo, c.d2_delta_hi) ||
      !range_ok(c.d2_subtle_lo, c.d2_subtle_hi) ||
      !range_ok(c.d3_delta_lo, c.d3_delta_hi) ||
      !range_ok(c.d3_subtle_lo, c.d3_subtle_hi) ||
      !range_ok(c.d6_delta_lo, c.d6_delta_hi) ||
      !range_ok(c.d6_subtle_lo, c.d6_subtle_hi)) {
    throw ConfigError("defect contrast ranges invalid");
  }
}

// Low-frequency near-horizontal sinusoidal layering plus an anisotropic
// value-noise fiber texture. Sensor noise is added separately at compose time.
void render_background(const GeneratorConfig& c, Rng& rng, FieldF32& bg) {
  const float base = rng.uniform(c.base_gray_lo, c.base_gray_hi);

  struct Band {
    float amp, wavelength, tilt, phase;
  };
  Band bands[2];
  bands[0] = {rng.uniform(c.band_amp_lo, c.band_amp_hi),
              rng.uniform(c.band_wavelength_lo, c.band_wavelength_hi),
              rng.uniform(-c.band_tilt_max, c.band_tilt_max),
              rng.uniform(0.0f, static_cast<float>(2.0 * kPi))};
  bands[1] = {0.5f * rng.uniform(c.band_amp_lo, c.band_amp_hi),
              rng.uniform(c.band_wavelength_lo, c.band_wavelength_hi),
              rng.uniform(-c.band_tilt_max, c.band_tilt_max),
              rng.uniform(0.0f, static_cast<float>(2.0 * kPi))};

  for (int64_t y = 0; y < bg.height; ++y) {
    for (int64_t x = 0; x < bg.width; ++x) {
      float v = base;
      for (const Band& b : bands) {
        const float t = (static_cast<float>(y) + b.tilt * static_cast<float>(x)) /
                        b.wavelength;
        v += b.amp * std::sin(2.0f * static_cast<float>(kPi) * t + b.phase);
      }
      bg.at(x, y) = v;
    }
  }

  // Two octaves of bilinear value noise, then a horizontal box blur for the
  // along-fiber smear.
  if (c.fiber_amp > 0.0f) {
    FieldF32 fiber(bg.width, bg.height);
    for (const int64_t spacing : {8, 4}) {
      const float octave_amp = spacing == 8 ? 1.0f : 0.5f;
      const int64_t gw = bg.width / spacing + 2;
      const int64_t gh = bg.height / spacing + 2;
      std::vector<float> lattice(static_cast<size_t>(gw * gh));
      for (auto& v : lattice) v = rng.uniform(-1.0f, 1.0f);
      for (int64_t y = 0; y < bg.height; ++y) {
        const float fy = static_cast<float>(y) / static_cast<float>(spacing);
        const auto y0 = static_cast<int64_t>(fy);
        const float ty = fy - static_cast<float>(y0);
        for (int64_t x = 0; x < bg.width; ++x) {
          const float fx = static_cast<float>(x) / static_cast<float>(spacing);
          const auto x0 = static_cast<int64_t>(fx);
          const float tx = fx - static_cast<float>(x0);
          const float a = lattice[static_cast<size_t>(y0 * gw + x0)];
          const float b = lattice[static_cast<size_t>(y0 * gw + x0 + 1)];
          const float d = lattice[static_cast<size_t>((y0 + 1) * gw + x0)];
          const float e = lattice[static_cast<size_t>((y0 + 1) * gw + x0 + 1)];
          const float top = a + (b - a) * tx;
          const float bot = d + (e - d) * tx;
          fiber.at(x, y) += octave_amp * (top + (bot - top) * ty);
        }
      }
    }
    // horizontal box blur, width 7
    const int64_t r = 3;
    for (int64_t y = 0; y < bg.height; ++y) {
      float acc = 0.0f;
      std::vector<float> row(static_cast<size_t>(bg.width));
      for (int64_t x = 0; x < bg.width; ++x) row[static_cast<size_t>(x)] = fiber.at(x, y);
      for (int64_t x = -r; x <= r; ++x) {
        acc += row[static_cast<size_t>(std::clamp<int64_t>(x, 0, bg.width - 1))];
      }
      for (int64_t x = 0; x < bg.width; ++x) {
        fiber.at(x, y) = acc / static_cast<float>(2 * r + 1);
        const int64_t drop = std::clamp<int64_t>(x - r, 0, bg.width - 1);
        const int64_t take = std::clamp<int64_t>(x + r + 1, 0, bg.width - 1);
        acc += row[static_cast<size_t>(take)] - row[static_cast<size_t>(drop)];
      }
    }
    for (int64_t y = 0; y < bg.height; ++y) {
      for (int64_t x = 0; x < bg.width; ++x) {
        bg.at(x, y) += c.fiber_amp * fiber.at(x, y);
      }
    }
  }
}

struct DeltaRange {
  float lo, hi;
};

DeltaRange delta_range(const GeneratorConfig& c, DefectKind kind, bool subtle) {
  switch (kind) {
    case DefectKind::kD1MeltDrop:
      return subtle ? DeltaRange{c.d1_subtle_lo, c.d1_subtle_hi}
                    : DeltaRange{c.d1_delta_lo, c.d1_delta_hi};
    case DefectKind::kD2BinderBulk:
      return subtle ? DeltaRange{c.d2_subtle_lo, c.d2_subtle_hi}
                    : DeltaRange{c.d2_delta_lo, c.d2_delta_hi};
    case DefectKind::kD3ShotCluster:
      return subtle ? DeltaRange{c.d3_subtle_lo, c.d3_subtle_hi}
                    : DeltaRange{c.d3_delta_lo, c.d3_delta_hi};
    case DefectKind::kD6Dirt:
      return subtle ? DeltaRange{c.d6_subtle_lo, c.d6_subtle_hi}
                    : DeltaRange{c.d6_delta_lo, c.d6_delta_hi};
  }
  throw ConfigError("unknown defect kind");
}

// Compact attenuating ellipse with a soft rim.
void draw_melt_drop(FieldF32& field, Rng& rng, float cx, float cy, float delta) {
  const float rx = rng.uniform(6.0f, 16.0f);
  const float ry = rng.uniform(5.0f, 12.0f);
  const float theta = rng.uniform(0.0f, static_cast<float>(kPi));
  const float ct = std::cos(theta), st = std::sin(theta);
  const auto reach = static_cast<int64_t>(std::max(rx, ry) + 2.0f);
  const int64_t x0 = std::max<int64_t>(0, static_cast<int64_t>(cx) - reach);
  const int64_t x1 = std::min(field.width - 1, static_cast<int64_t>(cx) + reach);
  const int64_t y0 = std::max<int64_t>(0, static_cast<int64_t>(cy) - reach);
  const int64_t y1 = std::min(field.height - 1, static_cast<int64_t>(cy) + reach);
  for (int64_t y = y0; y <= y1; ++y) {
    for (int64_t x = x0; x <= x1; ++x) {
      const float dx = static_cast<float>(x) - cx;
      const float dy = static_cast<float>(y) - cy;
      const float u = (dx * ct + dy * st) / rx;
      const float v = (-dx * st + dy * ct) / ry;
      const float r = std::sqrt(u * u + v * v);
      const float w = std::clamp((1.0f - r) / 0.15f, 0.0f, 1.0f);
      if (w > 0.0f) field.at(x, y) += delta * w;
    }
  }
}

// Diffuse soft-edged blob: anisotropic gaussian falloff.
void draw_binder_bulk(FieldF32& field, Rng& rng, float cx, float cy,
                      float delta) {
  const float sx = rng.uniform(10.0f, 22.0f);
  const float sy = rng.uniform(8.0f, 18.0f);
  const auto reach = static_cast<int64_t>(3.0f * std::max(sx, sy));
  const int64_t x0 = std::max<int64_t>(0, static_cast<int64_t>(cx) - reach);
  const int64_t x1 = std::min(field.width - 1, static_cast<int64_t>(cx) + reach);
  const int64_t y0 = std::max<int64_t>(0, static_cast<int64_t>(cy) - reach);
  const int64_t y1 = std::min(field.height - 1, static_cast<int64_t>(cy) + reach);
  for (int64_t y = y0; y <= y1; ++y) {
    for (int64_t x = x0; x <= x1; ++x) {
      const float dx = (static_cast<float>(x) - cx) / sx;
      const float dy = (static_cast<float>(y) - cy) / sy;
      field.at(x, y) += delta * std::exp(-0.5f * (dx * dx + dy * dy));
    }
  }
}

// 5-20 small dense discs scattered around the cluster center.
void draw_shot_cluster(FieldF32& field, Rng& rng, float cx, float cy,
                       const DeltaRange& deltas) {
  const int count = static_cast<int>(rng.uniform_int(5, 20));
  const float spread = rng.uniform(10.0f, 30.0f);
  for (int i = 0; i < count; ++i) {
    const float sx =
        std::clamp(cx + static_cast<float>(rng.normal(0.0, spread / 2.0)),
                   2.0f, static_cast<float>(field.width - 3));
    const float sy =
        std::clamp(cy + static_cast<float>(rng.normal(0.0, spread / 2.0)),
                   2.0f, static_cast<float>(field.height - 3));
    const float radius = rng.uniform(1.5f, 3.5f);
    const float delta = rng.uniform(deltas.lo, deltas.hi);
    const auto reach = static_cast<int64_t>(radius + 2.0f);
    const int64_t x0 = std::max<int64_t>(0, static_cast<int64_t>(sx) - reach);
    const int64_t x1 = std::min(field.width - 1, static_cast<int64_t>(sx) + reach);
    const int64_t y0 = std::max<int64_t>(0, static_cast<int64_t>(sy) - reach);
    const int64_t y1 = std::min(field.height - 1, static_cast<int64_t>(sy) + reach);
    for (int64_t y = y0; y <= y1; ++y) {
      for (int64_t x = x0; x <= x1; ++x) {
        const float dx = static_cast<float>(x) - sx;
        const float dy = static_cast<float>(y) - sy;
        const float d = std::sqrt(dx * dx + dy * dy);
        const float w = std::clamp(radius - d + 1.0f, 0.0f, 1.0f);
        if (w > 0.0f) field.at(x, y) += delta * w;
      }
    }
  }
}

// Irregular polygonal speck: jittered radial vertices, even-odd fill.
void draw_dirt(FieldF32& field, Rng& rng, float cx, float cy, float delta) {
  const int nv = static_cast<int>(rng.uniform_int(6, 10));
  std::vector<float> px(static_cast<size_t>(nv)), py(static_cast<size_t>(nv));
  float max_r = 0.0f;
  for (int i = 0; i < nv; ++i) {
    const float angle = 2.0f * static_cast<float>(kPi) * static_cast<float>(i) /
                            static_cast<float>(nv) +
                        rng.uniform(-0.3f, 0.3f);
    const float radius = rng.uniform(5.0f, 14.0f);
    max_r = std::max(max_r, radius);
    px[static_cast<size_t>(i)] = cx + radius * std::cos(angle);
    py[static_cast<size_t>(i)] = cy + radius * std::sin(angle);
  }
  const auto reach = static_cast<int64_t>(max_r + 2.0f);
  const int64_t bx0 = std::max<int64_t>(0, static_cast<int64_t>(cx) - reach);
  const int64_t bx1 = std::min(field.width - 1, static_cast<int64_t>(cx) + reach);
  const int64_t by0 = std::max<int64_t>(0, static_cast<int64_t>(cy) - reach);
  const int64_t by1 = std::min(field.height - 1, static_cast<int64_t>(cy) + reach);
  for (int64_t y = by0; y <= by1; ++y) {
    for (int64_t x = bx0; x <= bx1; ++x) {
      // even-odd ray cast along +x
      bool inside = false;
      for (int i = 0, j = nv - 1; i < nv; j = i++) {
        const float xi = px[static_cast<size_t>(i)], yi = py[static_cast<size_t>(i)];
        const float xj = px[static_cast<size_t>(j)], yj = py[static_cast<size_t>(j)];
        const auto fx = static_cast<float>(x);
        const auto fy = static_cast<float>(y);
        if ((yi > fy) != (yj > fy) &&
            fx < (xj - xi) * (fy - yi) / (yj - yi) + xi) {
          inside = !inside;
        }
      }
      if (inside) field.at(x, y) += delta;
    }
  }
}

std::vector<DefectKind> draw_defect_field(const GeneratorConfig& c, Rng& rng,
                                          bool subtle, FieldF32& field) {
  const int count =
      static_cast<int>(rng.uniform_int(c.min_defects, c.max_defects));
  std::vector<DefectKind> kinds;
  for (int i = 0; i < count; ++i) {
    const auto kind = static_cast<DefectKind>(rng.uniform_index(4));
    const float cx = rng.uniform(static_cast<float>(c.margin),
                                 static_cast<float>(c.width - c.margin));
    const float cy = rng.uniform(static_cast<float>(c.margin),
                                 static_cast<float>(c.height - c.margin));
    const DeltaRange deltas = delta_range(c, kind, subtle);
    switch (kind) {
      case DefectKind::kD1MeltDrop:
        draw_melt_drop(field, rng, cx, cy, rng.uniform(deltas.lo, deltas.hi));
        break;
      case DefectKind::kD2BinderBulk:
        draw_binder_bulk(field, rng, cx, cy, rng.uniform(deltas.lo, deltas.hi));
        break;
      case DefectKind::kD3ShotCluster:
        draw_shot_cluster(field, rng, cx, cy, deltas);
        break;
      case DefectKind::kD6Dirt:
        draw_dirt(field, rng, cx, cy, rng.uniform(deltas.lo, deltas.hi));
        break;
    }
    kinds.push_back(kind);
  }
  return kinds;
}

ImageU8 compose(const FieldF32& bg, const FieldF32* defects,
                const FieldF32& noise) {
  ImageU8 img = make_image(bg.width, bg.height);
  for (int64_t y = 0; y < bg.height; ++y) {
    for (int64_t x = 0; x < bg.width; ++x) {
      float v = bg.at(x, y) + noise.at(x, y);
      if (defects) v -= defects->at(x, y);
      img.at(x, y) =
          static_cast<uint8_t>(std::clamp(std::lround(v), 0l, 255l));
    }
  }
  return img;
}

}  // namespace

const char* defect_kind_name(DefectKind kind) {
  switch (kind) {
    case DefectKind::kD1MeltDrop: return "D1";
    case DefectKind::kD2BinderBulk: return "D2";
    case DefectKind::kD3ShotCluster: return "D3";
    case DefectKind::kD6Dirt: return "D6";
  }
  throw ConfigError("unknown defect kind");
}

ImageU8 render_image(const GeneratorConfig& config, uint64_t image_seed,
                     bool defective, std::vector<DefectKind>* kinds_out) {
  validate_config(config);

  Rng bg_rng(derive_seed(image_seed, "background"));
  FieldF32 bg(config.width, config.height);
  render_background(config, bg_rng, bg);

  Rng noise_rng(derive_seed(image_seed, "sensor"));
  FieldF32 noise(config.width, config.height);
  if (config.sensor_noise > 0.0f) {
    for (auto& v : noise.values) {
      v = noise_rng.normal(0.0f, config.sensor_noise);
    }
  }

  if (!defective) {
    if (kinds_out) kinds_out->clear();
    return compose(bg, nullptr, noise);
  }

  Rng meta_rng(derive_seed(image_seed, "defect-meta"));
  const bool subtle = meta_rng.uniform() < config.subtle_fraction;

  const ImageU8 clean = compose(bg, nullptr, noise);
  for (int attempt = 0; attempt <= config.soundness_max_retries; ++attempt) {
    Rng defect_rng(
        derive_seed(image_seed, "defects-" + std::to_string(attempt)));
    FieldF32 defects(config.width, config.height);
    std::vector<DefectKind> kinds =
        draw_defect_field(config, defect_rng, subtle, defects);
    const ImageU8 img = compose(bg, &defects, noise);

    // Label soundness: the composed image must differ from its own clean
    // render on a region that clears the noise floor.
    int strong = 0;
    for (size_t i = 0; i < img.pixels.size(); ++i) {
      const int diff = std::abs(static_cast<int>(img.pixels[i]) -
                                static_cast<int>(clean.pixels[i]));
      if (static_cast<float>(diff) >= config.soundness_min_delta) ++strong;
    }
    if (strong >= config.soundness_min_pixels) {
      if (kinds_out) *kinds_out = std::move(kinds);
      return img;
    }
  }
  throw InvariantError("defect rendering failed label soundness after " +
                       std::to_string(config.soundness_max_retries) +
                       " retries (seed " + std::to_string(image_seed) + ")");
}

DatasetManifest generate_dataset(const GeneratorConfig& config, uint64_t seed,
                                 const std::string& out_dir) {
  validate_config(config);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create '" + out_dir + "': " + ec.message());

  DatasetManifest manifest;
  manifest.root = out_dir;

  const int total = config.defective + config.clean;
  for (int i = 0; i < total; ++i) {
    const bool defective = i < config.defective;
    const uint64_t image_seed = derive_seed(seed, static_cast<uint64_t>(i));
    std::vector<DefectKind> kinds;
    const ImageU8 img = render_image(config, image_seed, defective, &kinds);

    char name[32];
    std::snprintf(name, sizeof name, "%s%04d.png", defective ? "d" : "c",
                  defective ? i : i - config.defective);
    write_png_gray8(out_dir + "/" + name, img);

    ManifestRecord rec;
    rec.path = name;
    rec.label = defective ? 1 : 0;
    rec.seed = image_seed;
    std::set<std::string> names;
    for (DefectKind k : kinds) names.insert(defect_kind_name(k));
    rec.defects.assign(names.begin(), names.end());
    manifest.records.push_back(std::move(rec));
  }

  save_manifest(manifest, out_dir + "/manifest.jsonl");
  return manifest;
}

void save_manifest(const DatasetManifest& manifest, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  for (const auto& rec : manifest.records) {
    json j{{"path", rec.path},
           {"label", rec.label},
           {"defects", rec.defects},
           {"seed", rec.seed},
           {"fold", rec.fold}};
    out << j.dump() << "\n";
  }
  if (!out) throw IoError("write failed for '" + path + "'");
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  DatasetManifest manifest;
  manifest.root = std::filesystem::path(path).parent_path().string();
  if (manifest.root.empty()) manifest.root = ".";
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw FormatError("manifest line " + std::to_string(line_no) +
                        " unparseable: " + e.what());
    }
    ManifestRecord rec;
    try {
      rec.path = j.at("path").get<std::string>();
      rec.label = j.at("label").get<int>();
      rec.defects = j.value("defects", std::vector<std::string>{});
      rec.seed = j.value("seed", uint64_t{0});
      rec.fold = j.value("fold", -1);
    } catch (const json::exception& e) {
      throw FormatError("manifest line " + std::to_string(line_no) +
                        " missing fields: " + e.what());
    }
    if (rec.label != 0 && rec.label != 1) {
      throw FormatError("manifest line " + std::to_string(line_no) +
                        ": label must be 0 or 1");
    }
    if (rec.label == 1 && rec.defects.empty()) {
      throw FormatError("manifest line " + std::to_string(line_no) +
                        ": defective record lists no defect kinds");
    }
    manifest.records.push_back(std::move(rec));
  }
  return manifest;
}

FoldPlan kfold_split(const DatasetManifest& manifest, int k, uint64_t seed,
                     bool stratified) {
  const auto n = static_cast<int64_t>(manifest.records.size());
  if (k < 2) throw ConfigError("k must be >= 2");
  if (k > n) {
    throw ConfigError("k=" + std::to_string(k) + " exceeds record count " +
                      std::to_string(n));
  }

  FoldPlan plan;
  plan.k = k;
  plan.stratified = stratified;
  plan.fold_of.assign(static_cast<size_t>(n), -1);

  if (!stratified) {
    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed, "kfold"));
    rng.shuffle(order);
    for (size_t j = 0; j < order.size(); ++j) {
      plan.fold_of[static_cast<size_t>(order[j])] =
          static_cast<int>(j % static_cast<size_t>(k));
    }
    return plan;
  }

  // Deal each class round-robin, rotating the starting fold by the previous
  // classes' leftover counts; this keeps per-class AND total sizes within 1.
  std::vector<std::vector<int64_t>> by_class(2);
  for (int64_t i = 0; i < n; ++i) {
    const int label = manifest.records[static_cast<size_t>(i)].label;
    by_class[static_cast<size_t>(label)].push_back(i);
  }
  int64_t offset = 0;
  for (size_t cls = 0; cls < by_class.size(); ++cls) {
    auto& members = by_class[cls];
    Rng rng(derive_seed(seed, "kfold-class-" + std::to_string(cls)));
    rng.shuffle(members);
    for (size_t j = 0; j < members.size(); ++j) {
      plan.fold_of[static_cast<size_t>(members[j])] = static_cast<int>(
          (offset + static_cast<int64_t>(j)) % static_cast<int64_t>(k));
    }
    offset = (offset + static_cast<int64_t>(members.size())) %
             static_cast<int64_t>(k);
  }
  return plan;
}

ImageU8 augment_train(const ImageU8& image, int64_t out_w, int64_t out_h,
                      int64_t pad, Rng& rng) {
  if (out_w > image.width + 2 * pad || out_h > image.height + 2 * pad) {
    throw ConfigError("crop size exceeds padded image");
  }
  const ImageU8 padded = pad_replicate(image, pad);
  const int64_t max_y = padded.height - out_h;
  const int64_t max_x = padded.width - out_w;
  const int64_t oy = static_cast<int64_t>(rng.uniform_index(
      static_cast<uint64_t>(max_y + 1)));
  const int64_t ox = static_cast<int64_t>(rng.uniform_index(
      static_cast<uint64_t>(max_x + 1)));
  ImageU8 out = crop(padded, ox, oy, out_w, out_h);
  if (rng.bernoulli(0.5)) out = hflip(out);
  return out;
}

ImageU8 center_crop(const ImageU8& image, int64_t out_w, int64_t out_h) {
  if (out_w > image.width || out_h > image.height) {
    throw ConfigError("center crop larger than image");
  }
  return crop(image, (image.width - out_w) / 2, (image.height - out_h) / 2,
              out_w, out_h);
}

namespace {

json config_to_json(const GeneratorConfig& c) {
  return json{{"defective", c.defective},
              {"clean", c.clean},
              {"width", c.width},
              {"height", c.height},
              {"margin", c.margin},
              {"base_gray_lo", c.base_gray_lo},
              {"base_gray_hi", c.base_gray_hi},
              {"band_amp_lo", c.band_amp_lo},
              {"band_amp_hi", c.band_amp_hi},
              {"band_wavelength_lo", c.band_wavelength_lo},
              {"band_wavelength_hi", c.band_wavelength_hi},
              {"band_tilt_max", c.band_tilt_max},
              {"fiber_amp", c.fiber_amp},
              {"sensor_noise", c.sensor_noise},
              {"min_defects", c.min_defects},
              {"max_defects", c.max_defects},
              {"subtle_fraction", c.subtle_fraction},
              {"d1_delta_lo", c.d1_delta_lo},
              {"d1_delta_hi", c.d1_delta_hi},
              {"d1_subtle_lo", c.d1_subtle_lo},
              {"d1_subtle_hi", c.d1_subtle_hi},
              {"d2_delta_lo", c.d2_delta_lo},
              {"d2_delta_hi", c.d2_delta_hi},
              {"d2_subtle_lo", c.d2_subtle_lo},
              {"d2_subtle_hi", c.d2_subtle_hi},
              {"d3_delta_lo", c.d3_delta_lo},
              {"d3_delta_hi", c.d3_delta_hi},
              {"d3_subtle_lo", c.d3_subtle_lo},
              {"d3_subtle_hi", c.d3_subtle_hi},
              {"d6_delta_lo", c.d6_delta_lo},
              {"d6_delta_hi", c.d6_delta_hi},
              {"d6_subtle_lo", c.d6_subtle_lo},
              {"d6_subtle_hi", c.d6_subtle_hi},
              {"soundness_min_delta", c.soundness_min_delta},
              {"soundness_min_pixels", c.soundness_min_pixels},
              {"soundness_max_retries", c.soundness_max_retries}};
}

}  // namespace

GeneratorConfig load_generator_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw FormatError("unparseable generator config: " + std::string(e.what()));
  }
  GeneratorConfig c;
  const json defaults = config_to_json(c);
  for (const auto& [key, value] : j.items()) {
    if (!defaults.contains(key)) {
      throw ConfigError("unknown generator config key '" + key + "'");
    }
  }
  try {
    c.defective = j.value("defective", c.defective);
    c.clean = j.value("clean", c.clean);
    c.width = j.value("width", c.width);
    c.height = j.value("height", c.height);
    c.margin = j.value("margin", c.margin);
    c.base_gray_lo = j.value("base_gray_lo", c.base_gray_lo);
    c.base_gray_hi = j.value("base_gray_hi", c.base_gray_hi);
    c.band_amp_lo = j.value("band_amp_lo", c.band_amp_lo);
    c.band_amp_hi = j.value("band_amp_hi", c.band_amp_hi);
    c.band_wavelength_lo = j.value("band_wavelength_lo", c.band_wavelength_lo);
    c.band_wavelength_hi = j.value("band_wavelength_hi", c.band_wavelength_hi);
    c.band_tilt_max = j.value("band_tilt_max", c.band_tilt_max);
    c.fiber_amp = j.value("fiber_amp", c.fiber_amp);
    c.sensor_noise = j.value("sensor_noise", c.sensor_noise);
    c.min_defects = j.value("min_defects", c.min_defects);
    c.max_defects = j.value("max_defects", c.max_defects);
    c.subtle_fraction = j.value("subtle_fraction", c.subtle_fraction);
    c.d1_delta_lo = j.value("d1_delta_lo", c.d1_delta_lo);
    c.d1_delta_hi = j.value("d1_delta_hi", c.d1_delta_hi);
    c.d1_subtle_lo = j.value("d1_subtle_lo", c.d1_subtle_lo);
    c.d1_subtle_hi = j.value("d1_subtle_hi", c.d1_subtle_hi);
    c.d2_delta_lo = j.value("d2_delta_lo", c.d2_delta_lo);
    c.d2_delta_hi = j.value("d2_delta_hi", c.d2_delta_hi);
    c.d2_subtle_lo = j.value("d2_subtle_lo", c.d2_subtle_lo);
    c.d2_subtle_hi = j.value("d2_subtle_hi", c.d2_subtle_hi);
    c.d3_delta_lo = j.value("d3_delta_lo", c.d3_delta_lo);
    c.d3_delta_hi = j.value("d3_delta_hi", c.d3_delta_hi);
    c.d3_subtle_lo = j.value("d3_subtle_lo", c.d3_subtle_lo);
    c.d3_subtle_hi = j.value("d3_subtle_hi", c.d3_subtle_hi);
    c.d6_delta_lo = j.value("d6_delta_lo", c.d6_delta_lo);
    c.d6_delta_hi = j.value("d6_delta_hi", c.d6_delta_hi);
    c.d6_subtle_lo = j.value("d6_subtle_lo", c.d6_subtle_lo);
    c.d6_subtle_hi = j.value("d6_subtle_hi", c.d6_subtle_hi);
    c.soundness_min_delta = j.value("soundness_min_delta", c.soundness_min_delta);
    c.soundness_min_pixels =
        j.value("soundness_min_pixels", c.soundness_min_pixels);
    c.soundness_max_retries =
        j.value("soundness_max_retries", c.soundness_max_retries);
  } catch (const json::exception& e) {
    throw ConfigError("generator config field has wrong type: " +
                      std::string(e.what()));
  }
  validate_config(c);
  return c;
}

void save_generator_config(const GeneratorConfig& config,
                           const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << config_to_json(config).dump(2) << "\n";
  if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace winnow
