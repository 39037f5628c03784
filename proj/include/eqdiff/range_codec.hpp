#pragma once

// LiDAR point cloud <-> equirectangular range image conversion, degradation
// masks for densification, BEV occupancy rasterization, raw scan ingestion.

#include "eqdiff/tensor.hpp"
#include "eqdiff/util.hpp"

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace eqdiff {

struct Point {
  double x = 0, y = 0, z = 0;
  double intensity = 0;  // [0,1]
  double range() const { return std::sqrt(x * x + y * y + z * z); }
};

using PointCloud = std::vector<Point>;

struct SensorConfig {
  std::int64_t height = 64;
  std::int64_t width = 1024;
  double fov_up_deg = 3.0;
  double fov_down_deg = -25.0;
  double min_range = 0.5;
  double max_range = 80.0;

  void validate() const {
    if (height < 2 || width < 2 || height % 2 || width % 2)
      throw DataError("SensorConfig: H and W must be even and >= 2");
    if (!(fov_up_deg > fov_down_deg)) throw DataError("SensorConfig: fov_up must exceed fov_down");
    if (!(0 < min_range && min_range < max_range))
      throw DataError("SensorConfig: need 0 < min_range < max_range");
  }

  double fov_up() const { return fov_up_deg * M_PI / 180.0; }
  double fov_down() const { return fov_down_deg * M_PI / 180.0; }

  // 64-beam spinning sensor.
  static SensorConfig preset_64beam() { return SensorConfig{64, 1024, 3.0, -25.0, 0.5, 80.0}; }
  // 32-beam sensor.
  static SensorConfig preset_32beam() { return SensorConfig{32, 1024, 10.0, -30.0, 0.5, 70.0}; }
};

// Logarithmic depth normalization to [-1,1]. Near-field resolution dominates.
inline double encode_depth(double r, const SensorConfig& cfg) {
  if (!(r >= cfg.min_range && r <= cfg.max_range))
    throw DataError("encode_depth: range " + std::to_string(r) + " outside [" +
                    std::to_string(cfg.min_range) + ", " + std::to_string(cfg.max_range) + "]");
  return 2.0 * (std::log(r / cfg.min_range) / std::log(cfg.max_range / cfg.min_range)) - 1.0;
}

// decode of exactly -1 is the ray-drop sentinel; callers must check valid.
inline double decode_depth(double v, const SensorConfig& cfg) {
  return cfg.min_range * std::exp((v + 1.0) * 0.5 * std::log(cfg.max_range / cfg.min_range));
}

struct RangeImage {
  SensorConfig config;
  std::vector<double> depth;      // H*W in [-1,1], -1 at drops
  std::vector<double> intensity;  // H*W in [-1,1], -1 at drops
  std::vector<std::uint8_t> valid;

  RangeImage() = default;
  explicit RangeImage(const SensorConfig& cfg)
      : config(cfg),
        depth(cfg.height * cfg.width, -1.0),
        intensity(cfg.height * cfg.width, -1.0),
        valid(cfg.height * cfg.width, 0) {}

  std::int64_t pixels() const { return config.height * config.width; }

  // depth, intensity, validity planes as H x W x 3
  Tensor to_tensor() const {
    std::int64_t H = config.height, W = config.width;
    Tensor t({H, W, 3});
    for (std::int64_t i = 0; i < H * W; ++i) {
      (*t.data)[i * 3 + 0] = depth[i];
      (*t.data)[i * 3 + 1] = intensity[i];
      (*t.data)[i * 3 + 2] = valid[i] ? 1.0 : 0.0;
    }
    return t;
  }

  static RangeImage from_tensor(const Tensor& t, const SensorConfig& cfg) {
    if (t.ndim() != 3 || t.shape[0] != cfg.height || t.shape[1] != cfg.width || t.shape[2] != 3)
      throw ShapeError("RangeImage::from_tensor: expected " + std::to_string(cfg.height) + "x" +
                       std::to_string(cfg.width) + "x3, got " + shape_str(t.shape));
    RangeImage img(cfg);
    for (std::int64_t i = 0; i < img.pixels(); ++i) {
      bool v = (*t.data)[i * 3 + 2] > 0.5;
      img.valid[i] = v;
      img.depth[i] = v ? (*t.data)[i * 3 + 0] : -1.0;
      img.intensity[i] = v ? (*t.data)[i * 3 + 1] : -1.0;
    }
    return img;
  }

  // Interprets a generated H x W x 2 sample: pixels at (or below) the drop
  // threshold become ray-drops with the exact sentinel encoding.
  static RangeImage from_sample(const Tensor& t, const SensorConfig& cfg, double drop_threshold = -0.999) {
    if (t.ndim() != 3 || t.shape[0] != cfg.height || t.shape[1] != cfg.width || t.shape[2] != 2)
      throw ShapeError("RangeImage::from_sample: expected HxWx2, got " + shape_str(t.shape));
    RangeImage img(cfg);
    for (std::int64_t i = 0; i < img.pixels(); ++i) {
      double d = (*t.data)[i * 2 + 0];
      if (d > drop_threshold) {
        img.valid[i] = 1;
        img.depth[i] = std::min(1.0, d);
        img.intensity[i] = std::clamp((*t.data)[i * 2 + 1], -1.0, 1.0);
      }
    }
    return img;
  }

  // the 2-channel tensor diffusion operates on
  Tensor channels() const {
    std::int64_t H = config.height, W = config.width;
    Tensor t({H, W, 2});
    for (std::int64_t i = 0; i < H * W; ++i) {
      (*t.data)[i * 2 + 0] = depth[i];
      (*t.data)[i * 2 + 1] = intensity[i];
    }
    return t;
  }
};

inline RangeImage project(const PointCloud& pc, const SensorConfig& cfg) {
  cfg.validate();
  RangeImage img(cfg);
  std::int64_t H = cfg.height, W = cfg.width;
  std::vector<double> best(H * W, std::numeric_limits<double>::infinity());
  double fu = cfg.fov_up(), fd = cfg.fov_down();
  for (const Point& p : pc) {
    double r = p.range();
    if (!(r >= cfg.min_range && r <= cfg.max_range)) continue;
    double elev = std::asin(p.z / r);
    if (elev < fd || elev > fu) continue;
    double azim = std::atan2(p.y, p.x);
    auto row = static_cast<std::int64_t>(std::floor(H * (1.0 - (elev - fd) / (fu - fd))));
    row = std::clamp<std::int64_t>(row, 0, H - 1);
    auto col = static_cast<std::int64_t>(std::floor(W * (M_PI - azim) / (2.0 * M_PI))) % W;
    if (col < 0) col += W;
    std::int64_t idx = row * W + col;
    if (r < best[idx]) {  // nearest return wins
      best[idx] = r;
      img.valid[idx] = 1;
      img.depth[idx] = encode_depth(r, cfg);
      img.intensity[idx] = 2.0 * std::clamp(p.intensity, 0.0, 1.0) - 1.0;
    }
  }
  return img;
}

inline PointCloud unproject(const RangeImage& img) {
  const SensorConfig& cfg = img.config;
  PointCloud pc;
  double fu = cfg.fov_up(), fd = cfg.fov_down();
  for (std::int64_t row = 0; row < cfg.height; ++row) {
    double elev = fd + (1.0 - (row + 0.5) / cfg.height) * (fu - fd);  // bin center
    for (std::int64_t col = 0; col < cfg.width; ++col) {
      std::int64_t idx = row * cfg.width + col;
      if (!img.valid[idx]) continue;
      double azim = M_PI - 2.0 * M_PI * (col + 0.5) / cfg.width;
      double r = decode_depth(img.depth[idx], cfg);
      Point p;
      p.x = r * std::cos(elev) * std::cos(azim);
      p.y = r * std::cos(elev) * std::sin(azim);
      p.z = r * std::sin(elev);
      p.intensity = (img.intensity[idx] + 1.0) * 0.5;
      pc.push_back(p);
    }
  }
  return pc;
}

// ---------------------------------------------------------------------------
// degradation masks (true = kept/known pixel)

enum class MaskKind { BeamKeepHalf, BeamKeepQuarter, RandomKeep10Pct };

inline MaskKind parse_mask_kind(const std::string& s) {
  if (s == "beam_keep_half") return MaskKind::BeamKeepHalf;
  if (s == "beam_keep_quarter") return MaskKind::BeamKeepQuarter;
  if (s == "random_keep_10pct") return MaskKind::RandomKeep10Pct;
  throw DataError("unknown mask kind: " + s);
}

inline std::vector<std::uint8_t> make_mask(MaskKind kind, const SensorConfig& cfg, std::uint64_t seed) {
  std::vector<std::uint8_t> m(cfg.height * cfg.width, 0);
  switch (kind) {
    case MaskKind::BeamKeepHalf:
      for (std::int64_t r = 0; r < cfg.height; r += 2)
        std::fill_n(m.begin() + r * cfg.width, cfg.width, 1);
      break;
    case MaskKind::BeamKeepQuarter:
      for (std::int64_t r = 0; r < cfg.height; r += 4)
        std::fill_n(m.begin() + r * cfg.width, cfg.width, 1);
      break;
    case MaskKind::RandomKeep10Pct: {
      GaussianRng rng(seed);
      for (auto& v : m) v = rng.uniform() < 0.1 ? 1 : 0;
      break;
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// BEV occupancy

struct BevGrid {
  std::int64_t n = 64;
  double extent = 50.0;  // +-E meters
  std::vector<std::int64_t> counts;

  BevGrid() = default;
  BevGrid(std::int64_t n_, double extent_) : n(n_), extent(extent_), counts(n_ * n_, 0) {}
  std::int64_t total() const {
    std::int64_t s = 0;
    for (auto c : counts) s += c;
    return s;
  }
};

inline BevGrid bev_rasterize(const PointCloud& pc, std::int64_t n, double extent) {
  if (n < 2 || extent <= 0) throw DataError("bev_rasterize: need N >= 2 and E > 0");
  BevGrid grid(n, extent);
  double cell = 2.0 * extent / n;
  for (const Point& p : pc) {
    if (std::abs(p.x) >= extent || std::abs(p.y) >= extent) continue;
    auto ix = static_cast<std::int64_t>((p.x + extent) / cell);
    auto iy = static_cast<std::int64_t>((p.y + extent) / cell);
    ix = std::clamp<std::int64_t>(ix, 0, n - 1);
    iy = std::clamp<std::int64_t>(iy, 0, n - 1);
    ++grid.counts[ix * n + iy];
  }
  return grid;
}

// ---------------------------------------------------------------------------
// raw scan ingestion: consecutive little-endian f32 (x, y, z, intensity)

struct ScanReadResult {
  PointCloud cloud;
  std::int64_t skipped = 0;  // non-finite or zero-range records
};

inline ScanReadResult read_scan_bin(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw DataError("cannot open scan file: " + path.string());
  std::int64_t bytes = f.tellg();
  if (bytes % 16 != 0)
    throw DataError("truncated scan file " + path.string() + ": size " + std::to_string(bytes) +
                    " bytes is not a multiple of 16 (trailing partial record at byte offset " +
                    std::to_string(bytes - bytes % 16) + ")");
  f.seekg(0);
  std::vector<float> raw(bytes / 4);
  f.read(reinterpret_cast<char*>(raw.data()), bytes);
  if (f.gcount() != bytes) throw DataError("short read: " + path.string());
  ScanReadResult res;
  res.cloud.reserve(raw.size() / 4);
  for (std::size_t i = 0; i + 3 < raw.size(); i += 4) {
    Point p{raw[i], raw[i + 1], raw[i + 2], raw[i + 3]};
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z) ||
        !std::isfinite(p.intensity) || p.range() <= 0.0) {
      ++res.skipped;
      continue;
    }
    p.intensity = std::clamp(p.intensity, 0.0, 1.0);
    res.cloud.push_back(p);
  }
  return res;
}

}  // namespace eqdiff
