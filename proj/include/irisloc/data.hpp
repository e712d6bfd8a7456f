#ifndef IRISLOC_DATA_HPP
#define IRISLOC_DATA_HPP

// Datasets on disk.
//
// A dataset root holds `manifest.jsonl` plus `images/` and `masks/` with
// binary PGM (P5, maxval 255) files. Each manifest line is one JSON object:
//
//   {"id": "s00000", "face-id": "f00000", "side": "L",
//    "image-path": "images/s00000.pgm", "mask-path": "masks/s00000.pgm",
//    "center": {"x": 31.2, "y": 30.8}, "interocular-px": 131.5}
//
// mask-path, center and interocular-px are optional; relative paths are
// resolved against the manifest's directory.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "irisloc/errors.hpp"
#include "irisloc/grid.hpp"
#include "irisloc/rng.hpp"

namespace irisloc {

enum class Side : std::uint8_t { Left, Right };

inline std::string to_string(Side s) { return s == Side::Left ? "L" : "R"; }
inline Side flipped(Side s) { return s == Side::Left ? Side::Right : Side::Left; }

struct SampleRecord {
  std::string id;
  std::string face_id;
  Side side = Side::Left;
  std::string image_path;
  std::optional<std::string> mask_path;
  std::optional<PixelPoint> center;
  std::optional<double> interocular_px;

  friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

/// What the caller is about to do with the records; decides required fields.
enum class TaskMode { Any, Segmentation, Regression };

struct Manifest {
  std::filesystem::path base_dir;
  std::vector<SampleRecord> records;

  std::filesystem::path resolve(const std::string& p) const {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  }
};

// ---------------------------------------------------------------- PGM I/O

inline Grid<std::uint8_t> read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("image '" + path + "': cannot open");
  const auto fail = [&](const std::string& why) { return IoError("image '" + path + "': " + why); };

  const auto next_token = [&]() -> std::string {
    std::string tok;
    int ch;
    while ((ch = in.get()) != EOF) {
      if (ch == '#') {
        while ((ch = in.get()) != EOF && ch != '\n') {
        }
        continue;
      }
      if (std::isspace(ch)) {
        if (!tok.empty()) break;
        continue;
      }
      tok.push_back(static_cast<char>(ch));
    }
    return tok;
  };
  const auto number = [&](const char* what) {
    const auto tok = next_token();
    if (tok.empty() || !std::all_of(tok.begin(), tok.end(), [](char c) { return c >= '0' && c <= '9'; }) ||
        tok.size() > 9) {
      throw fail(std::string("malformed header (") + what + ")");
    }
    return static_cast<std::size_t>(std::stoul(tok));
  };

  if (next_token() != "P5") throw fail("wrong magic, expected binary PGM 'P5'");
  const std::size_t width = number("width");
  const std::size_t height = number("height");
  const std::size_t maxval = number("maxval");
  if (width == 0 || height == 0) throw fail("malformed header (zero size)");
  if (maxval != 255) throw fail("unsupported maxval " + std::to_string(maxval) + ", expected 255");

  Grid<std::uint8_t> out(height, width, 0);
  in.read(reinterpret_cast<char*>(out.values.data()), static_cast<std::streamsize>(out.size()));
  if (static_cast<std::size_t>(in.gcount()) != out.size()) {
    throw fail("truncated payload, expected " + std::to_string(out.size()) + " bytes");
  }
  return out;
}

inline void write_pgm(const Grid<std::uint8_t>& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("image '" + path + "': cannot open for writing");
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.values.data()), static_cast<std::streamsize>(img.size()));
  if (!out) throw IoError("image '" + path + "': write failed");
}

/// Gray image with every 8-bit value v mapped to v / 255.
inline Image load_image(const std::string& path) {
  const auto raw = read_pgm(path);
  Image out(raw.height, raw.width);
  for (std::size_t i = 0; i < raw.size(); ++i) out.values[i] = static_cast<float>(raw.values[i]) / 255.0f;
  return out;
}

inline std::uint8_t to_byte(float v) {
  const float clamped = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(clamped * 255.0f));
}

inline void save_image(const Image& img, const std::string& path) {
  Grid<std::uint8_t> raw(img.height, img.width, 0);
  for (std::size_t i = 0; i < img.size(); ++i) raw.values[i] = to_byte(img.values[i]);
  write_pgm(raw, path);
}

/// Masks are stored as 0/255; any value >= 128 reads back as foreground.
inline BinaryMask load_mask(const std::string& path) {
  auto raw = read_pgm(path);
  for (auto& v : raw.values) v = v >= 128 ? 1 : 0;
  return raw;
}

inline void save_mask(const BinaryMask& mask, const std::string& path) {
  Grid<std::uint8_t> raw(mask.height, mask.width, 0);
  for (std::size_t i = 0; i < mask.size(); ++i) raw.values[i] = mask.values[i] ? 255 : 0;
  write_pgm(raw, path);
}

// --------------------------------------------------------------- manifest

inline nlohmann::ordered_json record_to_json(const SampleRecord& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["face-id"] = r.face_id;
  j["side"] = to_string(r.side);
  j["image-path"] = r.image_path;
  if (r.mask_path) j["mask-path"] = *r.mask_path;
  if (r.center) j["center"] = {{"x", r.center->x}, {"y", r.center->y}};
  if (r.interocular_px) j["interocular-px"] = *r.interocular_px;
  return j;
}

inline void save_manifest(const std::vector<SampleRecord>& records, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("manifest '" + path + "': cannot open for writing");
  for (const auto& r : records) out << record_to_json(r).dump() << "\n";
  if (!out) throw IoError("manifest '" + path + "': write failed");
}

inline SampleRecord record_from_json(const nlohmann::json& j, std::size_t line) {
  if (!j.is_object()) throw ManifestError(line, "", "record must be a JSON object");
  static const std::set<std::string> known = {"id",     "face-id", "side",          "image-path",
                                              "mask-path", "center", "interocular-px"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw ManifestError(line, key, "unknown field");
  }
  const auto string_field = [&](const char* name) {
    if (!j.contains(name)) throw ManifestError(line, name, "missing required field");
    if (!j.at(name).is_string() || j.at(name).get<std::string>().empty()) {
      throw ManifestError(line, name, "must be a non-empty string");
    }
    return j.at(name).get<std::string>();
  };

  SampleRecord r;
  r.id = string_field("id");
  r.face_id = string_field("face-id");
  const auto side = string_field("side");
  if (side == "L") r.side = Side::Left;
  else if (side == "R") r.side = Side::Right;
  else throw ManifestError(line, "side", "must be \"L\" or \"R\"");
  r.image_path = string_field("image-path");
  if (j.contains("mask-path")) r.mask_path = string_field("mask-path");
  if (j.contains("center")) {
    const auto& c = j.at("center");
    if (!c.is_object() || !c.contains("x") || !c.contains("y") || !c.at("x").is_number() ||
        !c.at("y").is_number()) {
      throw ManifestError(line, "center", "must be {\"x\": number, \"y\": number}");
    }
    r.center = PixelPoint{c.at("x").get<double>(), c.at("y").get<double>()};
    if (!std::isfinite(r.center->x) || !std::isfinite(r.center->y)) {
      throw ManifestError(line, "center", "must be finite");
    }
  }
  if (j.contains("interocular-px")) {
    const auto& v = j.at("interocular-px");
    if (!v.is_number() || !(v.get<double>() > 0.0)) throw ManifestError(line, "interocular-px", "must be positive");
    r.interocular_px = v.get<double>();
  }
  return r;
}

/// Parse and validate a manifest. With `check_files`, every referenced image
/// and mask must exist now rather than failing later in training.
inline Manifest load_manifest(const std::string& path, TaskMode mode = TaskMode::Any, bool check_files = true) {
  std::ifstream in(path);
  if (!in) throw IoError("manifest '" + path + "': cannot open");
  Manifest m;
  m.base_dir = std::filesystem::path(path).parent_path();
  std::set<std::string> ids;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (std::all_of(text.begin(), text.end(), [](unsigned char c) { return std::isspace(c); })) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw ManifestError(line, "", std::string("parse error: ") + e.what());
    }
    auto r = record_from_json(j, line);
    if (!ids.insert(r.id).second) throw ManifestError(line, "id", "duplicate id '" + r.id + "'");
    if (mode == TaskMode::Segmentation && !r.mask_path) {
      throw ManifestError(line, "mask-path", "required for segmentation");
    }
    if (mode == TaskMode::Regression && !r.center) throw ManifestError(line, "center", "required for regression");
    if (check_files) {
      if (!std::filesystem::exists(m.resolve(r.image_path))) {
        throw ManifestError(line, "image-path", "file not found: " + m.resolve(r.image_path).string());
      }
      if (r.mask_path && !std::filesystem::exists(m.resolve(*r.mask_path))) {
        throw ManifestError(line, "mask-path", "file not found: " + m.resolve(*r.mask_path).string());
      }
    }
    m.records.push_back(std::move(r));
  }
  return m;
}

// ----------------------------------------------------------------- samples

struct Sample {
  SampleRecord record;
  Image image;
  std::optional<BinaryMask> mask;
  std::optional<PixelPoint> center;
};

inline Sample load_sample(const Manifest& m, const SampleRecord& r) {
  Sample s;
  s.record = r;
  s.image = load_image(m.resolve(r.image_path).string());
  if (r.mask_path) {
    s.mask = load_mask(m.resolve(*r.mask_path).string());
    if (!s.mask->same_shape(s.image)) {
      throw ValidationError("sample '" + r.id + "': mask " + s.mask->dims() + " differs from image " +
                            s.image.dims());
    }
  }
  s.center = r.center;
  return s;
}

/// Horizontal mirror: image and mask columns reversed, centre x -> (W-1) - x,
/// side swapped. Applying it twice gives back the input exactly.
inline Sample augment_hflip(const Sample& in) {
  Sample out = in;
  const auto mirror = [](auto& grid) {
    for (std::size_t r = 0; r < grid.height; ++r) {
      auto row = grid.values.begin() + static_cast<std::ptrdiff_t>(r * grid.width);
      std::reverse(row, row + static_cast<std::ptrdiff_t>(grid.width));
    }
  };
  mirror(out.image);
  if (out.mask) mirror(*out.mask);
  const double w = static_cast<double>(in.image.width);
  if (out.center) out.center->x = (w - 1.0) - out.center->x;
  if (out.record.center) out.record.center->x = (w - 1.0) - out.record.center->x;
  out.record.side = flipped(in.record.side);
  return out;
}

// ------------------------------------------------------------------ split

struct Partition {
  std::vector<SampleRecord> train, val, test;
};

/// Seeded split that keeps every face-id inside a single partition. Face
/// groups are shuffled, then assigned in order: a group goes to train while
/// the running count is below the train target, then to val, then to test.
inline Partition split(const std::vector<SampleRecord>& records,
                       std::array<double, 3> fractions = {0.75, 0.10, 0.15}, std::uint64_t seed = 0) {
  if (records.empty()) throw ValidationError("split: no records");
  if (std::any_of(fractions.begin(), fractions.end(), [](double f) { return f < 0.0; }) ||
      std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) > 1e-9) {
    throw ValidationError("split: fractions must be non-negative and sum to 1");
  }
  std::vector<std::string> order;
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto& g = groups[records[i].face_id];
    if (g.empty()) order.push_back(records[i].face_id);
    g.push_back(i);
  }
  Rng rng(seed);
  rng.shuffle(order.begin(), order.end());

  const double n = static_cast<double>(records.size());
  const auto train_target = static_cast<std::size_t>(std::llround(fractions[0] * n));
  const auto val_target = static_cast<std::size_t>(std::llround((fractions[0] + fractions[1]) * n));
  Partition p;
  std::size_t placed = 0;
  for (const auto& face : order) {
    auto& dst = placed < train_target ? p.train : placed < val_target ? p.val : p.test;
    for (auto i : groups[face]) dst.push_back(records[i]);
    placed += groups[face].size();
  }
  return p;
}

// -------------------------------------------------------------- synthesis

struct SynthConfig {
  std::size_t count = 64;
  std::uint64_t seed = 42;
  std::size_t height = 64;
  std::size_t width = 64;
  double radius_min = 10.0;
  double radius_max = 16.0;
  /// Maximum offset of the iris centre from the image centre, per axis.
  double jitter = 8.0;
  double occlusion_prob = 0.5;
  /// Fraction of the iris diameter hidden by the eyelid at its lowest point.
  double coverage_min = 0.1;
  double coverage_max = 0.5;
  double shadow_min = 0.0;
  double shadow_max = 0.4;
  double highlight_prob = 0.5;
  double noise_sigma = 0.02;
  double interocular_min = 120.0;
  double interocular_max = 150.0;

  void validate() const {
    const auto range = [](double lo, double hi, const char* what) {
      if (!(lo <= hi) || !std::isfinite(lo) || !std::isfinite(hi)) {
        throw ValidationError(std::string("synth config: ") + what + " range is invalid");
      }
    };
    const auto prob = [](double p, const char* what) {
      if (!(p >= 0.0 && p <= 1.0)) throw ValidationError(std::string("synth config: ") + what + " must lie in [0,1]");
    };
    if (height < 8 || width < 8) throw ValidationError("synth config: image must be at least 8x8");
    range(radius_min, radius_max, "iris radius");
    if (!(radius_min > 0.0)) throw ValidationError("synth config: iris radius must be positive");
    if (!(jitter >= 0.0)) throw ValidationError("synth config: jitter must be non-negative");
    const double half = (static_cast<double>(std::min(height, width)) - 1.0) / 2.0;
    if (jitter + radius_max > half) {
      throw ValidationError("synth config: iris (radius + jitter) does not fit inside the image");
    }
    prob(occlusion_prob, "occlusion probability");
    range(coverage_min, coverage_max, "eyelid coverage");
    prob(coverage_min, "eyelid coverage");
    prob(coverage_max, "eyelid coverage");
    range(shadow_min, shadow_max, "shadow strength");
    prob(shadow_min, "shadow strength");
    prob(shadow_max, "shadow strength");
    prob(highlight_prob, "highlight probability");
    if (!(noise_sigma >= 0.0)) throw ValidationError("synth config: noise sigma must be non-negative");
    range(interocular_min, interocular_max, "interocular distance");
    if (!(interocular_min > 0.0)) throw ValidationError("synth config: interocular distance must be positive");
  }
};

struct SynthSample {
  SampleRecord record;
  Image image;        // before 8-bit quantisation
  BinaryMask mask;    // visible iris pixels
  PixelPoint center;  // geometric disc centre, even when occluded
};

inline std::string synth_id(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%05zu", prefix, i);
  return buf;
}

/// Render sample `index`. Its random stream is seeded with seed ^ index, so
/// any sample can be produced on its own and in any order.
inline SynthSample render_synthetic(const SynthConfig& cfg, std::size_t index) {
  Rng rng(cfg.seed ^ static_cast<std::uint64_t>(index));
  const std::size_t H = cfg.height, W = cfg.width;

  // Every draw happens unconditionally so that switching one effect off
  // leaves the others unchanged.
  const double radius = rng.uniform(cfg.radius_min, cfg.radius_max);
  const double cx = (static_cast<double>(W) - 1.0) / 2.0 + rng.uniform(-cfg.jitter, cfg.jitter);
  const double cy = (static_cast<double>(H) - 1.0) / 2.0 + rng.uniform(-cfg.jitter, cfg.jitter);
  const double sclera = rng.uniform(0.70, 0.85);
  const double skin = rng.uniform(0.45, 0.60);
  const double iris_inner = rng.uniform(0.08, 0.18);
  const double iris_slope = rng.uniform(0.10, 0.25);
  const bool occluded = rng.bernoulli(cfg.occlusion_prob);
  const double coverage = rng.uniform(cfg.coverage_min, cfg.coverage_max);
  const double lid_curve = rng.uniform(0.004, 0.012);
  const double lid_shift = rng.uniform(-radius / 2.0, radius / 2.0);
  const double shadow = rng.uniform(cfg.shadow_min, cfg.shadow_max);
  const double shadow_angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const bool highlight = rng.bernoulli(cfg.highlight_prob);
  const double hl_radius = rng.uniform(1.5, 3.0);
  const double hl_dist = rng.uniform(0.0, 0.5 * radius);
  const double hl_angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double hx = cx + hl_dist * std::cos(hl_angle);
  const double hy = cy + hl_dist * std::sin(hl_angle);

  // Upper eyelid margin: an arch whose lowest point covers `coverage` of the
  // iris diameter; everything above it is eyelid.
  const double lid_base = cy - radius + 2.0 * radius * coverage;
  const auto under_lid = [&](double r, double c) {
    if (!occluded) return false;
    const double dc = c - cx - lid_shift;
    return r < lid_base + lid_curve * dc * dc;
  };

  SynthSample s;
  s.image = Image(H, W);
  s.mask = BinaryMask(H, W, 0);
  s.center = {cx, cy};
  const double diag = std::hypot(static_cast<double>(H), static_cast<double>(W));
  for (std::size_t r = 0; r < H; ++r) {
    for (std::size_t c = 0; c < W; ++c) {
      const double rr = static_cast<double>(r), cc = static_cast<double>(c);
      const double d = std::hypot(cc - cx, rr - cy);
      double v;
      if (under_lid(rr, cc)) {
        v = skin;
      } else if (d <= radius) {
        v = iris_inner + iris_slope * (d / radius);
        s.mask(r, c) = 1;
      } else {
        v = sclera;
      }
      const double proj = (cc - static_cast<double>(W) / 2.0) * std::cos(shadow_angle) +
                          (rr - static_cast<double>(H) / 2.0) * std::sin(shadow_angle);
      v *= 1.0 - shadow * (0.5 + proj / diag);
      if (highlight && s.mask(r, c) && std::hypot(cc - hx, rr - hy) <= hl_radius) v = 1.0;
      v += cfg.noise_sigma * rng.normal();
      s.image(r, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }

  const std::size_t face = index / 2;
  Rng face_rng(derive_seed(cfg.seed, 0x66616365ULL + face));
  s.record.id = synth_id("s", index);
  s.record.face_id = synth_id("f", face);
  s.record.side = index % 2 == 0 ? Side::Left : Side::Right;
  s.record.image_path = "images/" + s.record.id + ".pgm";
  s.record.mask_path = "masks/" + s.record.id + ".pgm";
  s.record.center = s.center;
  s.record.interocular_px = face_rng.uniform(cfg.interocular_min, cfg.interocular_max);
  return s;
}

/// Write `count` samples plus manifest.jsonl under `out_dir`.
inline Manifest synth_generate(const SynthConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  namespace fs = std::filesystem;
  const fs::path root(out_dir);
  std::error_code ec;
  fs::create_directories(root / "images", ec);
  if (!ec) fs::create_directories(root / "masks", ec);
  if (ec) throw IoError("synth: cannot create '" + out_dir + "': " + ec.message());
  Manifest m;
  m.base_dir = root;
  for (std::size_t i = 0; i < cfg.count; ++i) {
    auto s = render_synthetic(cfg, i);
    save_image(s.image, (root / s.record.image_path).string());
    save_mask(s.mask, (root / *s.record.mask_path).string());
    m.records.push_back(std::move(s.record));
  }
  save_manifest(m.records, (root / "manifest.jsonl").string());
  return m;
}

}  // namespace irisloc

#endif  // IRISLOC_DATA_HPP
