#include "eqdiff/range_codec.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "helpers.hpp"

using namespace eqdiff;
namespace fs = std::filesystem;

namespace {

SensorConfig tiny_sensor() { return SensorConfig{4, 8, 10.0, -10.0, 1.0, 50.0}; }

}  // namespace

TEST_CASE("depth encode/decode round trip and endpoints") {
  SensorConfig cfg = SensorConfig::preset_64beam();
  CHECK(encode_depth(cfg.min_range, cfg) == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(encode_depth(cfg.max_range, cfg) == doctest::Approx(1.0).epsilon(1e-12));
  for (double r : {0.5, 0.9, 2.0, 7.3, 25.0, 79.9, 80.0}) {
    double v = encode_depth(r, cfg);
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
    CHECK(decode_depth(v, cfg) == doctest::Approx(r).epsilon(1e-9));
  }
  // log encoding: the geometric mean of the range ends maps to 0
  double mid = std::sqrt(cfg.min_range * cfg.max_range);
  CHECK(encode_depth(mid, cfg) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("projection places a point on the expected pixel") {
  SensorConfig cfg = tiny_sensor();
  // straight ahead (+x), level: azimuth 0 -> column W*(pi-0)/(2pi) = W/2;
  // elevation 0 -> row H*(1 - (0-fd)/(fu-fd)) = H/2, clamped to H/2 exactly
  PointCloud pc{{10.0, 0.0, 0.0, 0.5}};
  RangeImage img = project(pc, cfg);
  std::int64_t row = 2, col = 4;
  CHECK(img.valid[row * cfg.width + col] == 1);
  CHECK(decode_depth(img.depth[row * cfg.width + col], cfg) == doctest::Approx(10.0).epsilon(1e-9));
  std::int64_t count = 0;
  for (auto v : img.valid) count += v;
  CHECK(count == 1);
}

TEST_CASE("elevation rows: top beam up, bottom beam down, no vertical wrap") {
  SensorConfig cfg = tiny_sensor();  // fov +-10 deg
  double up = std::tan(9.9 * M_PI / 180.0) * 10.0;
  double dn = std::tan(-9.9 * M_PI / 180.0) * 10.0;
  RangeImage top = project({{10.0, 0.0, up, 0.0}}, cfg);
  RangeImage bot = project({{10.0, 0.0, dn, 0.0}}, cfg);
  auto row_of = [&](const RangeImage& im) {
    for (std::int64_t i = 0; i < im.pixels(); ++i)
      if (im.valid[i]) return i / cfg.width;
    return std::int64_t{-1};
  };
  CHECK(row_of(top) == 0);
  CHECK(row_of(bot) == cfg.height - 1);
  // beyond-fov points are dropped, never wrapped onto another beam
  RangeImage above = project({{10.0, 0.0, 10.0, 0.0}}, cfg);
  CHECK(row_of(above) == -1);
}

TEST_CASE("nearest return wins a shared pixel") {
  SensorConfig cfg = tiny_sensor();
  PointCloud pc{{10.0, 0.0, 0.0, 0.1}, {5.0, 0.0, 0.0, 0.9}};
  RangeImage img = project(pc, cfg);
  std::int64_t px = 2 * cfg.width + 4;
  CHECK(decode_depth(img.depth[px], cfg) == doctest::Approx(5.0).epsilon(1e-9));
  CHECK(img.intensity[px] == doctest::Approx(0.9 * 2.0 - 1.0).epsilon(1e-12));
}

TEST_CASE("rotating by one azimuth bin shifts the image by one column") {
  SensorConfig cfg = tiny_sensor();
  GaussianRng rng(11);
  PointCloud pc;
  for (int i = 0; i < 200; ++i) {
    // keep clear of bin boundaries: sample azimuth at bin centers
    std::int64_t c = static_cast<std::int64_t>(rng.uniform() * cfg.width) % cfg.width;
    double azim = M_PI - 2.0 * M_PI * (c + 0.5) / cfg.width;
    double elev = (rng.uniform() - 0.5) * 0.3;
    double r = 2.0 + 40.0 * rng.uniform();
    pc.push_back({r * std::cos(elev) * std::cos(azim), r * std::cos(elev) * std::sin(azim),
                  r * std::sin(elev), rng.uniform()});
  }
  double db = 2.0 * M_PI / cfg.width;  // one bin
  PointCloud rot;
  for (const auto& p : pc)
    rot.push_back({p.x * std::cos(db) + p.y * std::sin(db), -p.x * std::sin(db) + p.y * std::cos(db),
                   p.z, p.intensity});
  RangeImage a = project(pc, cfg);
  RangeImage b = project(rot, cfg);
  for (std::int64_t r = 0; r < cfg.height; ++r)
    for (std::int64_t c = 0; c < cfg.width; ++c) {
      std::int64_t cs = (c + 1) % cfg.width;  // azimuth decreased -> column increases
      CHECK(a.valid[r * cfg.width + c] == b.valid[r * cfg.width + cs]);
      if (a.valid[r * cfg.width + c])
        CHECK(a.depth[r * cfg.width + c] == doctest::Approx(b.depth[r * cfg.width + cs]).epsilon(1e-9));
    }
}

TEST_CASE("unproject then project is idempotent on the range image") {
  SensorConfig cfg = tiny_sensor();
  GaussianRng rng(12);
  PointCloud pc;
  for (int i = 0; i < 500; ++i) {
    double r = 2.0 + 40.0 * rng.uniform();
    double azim = (rng.uniform() - 0.5) * 2.0 * M_PI * 0.999;
    double elev = (rng.uniform() - 0.5) * 0.3;
    pc.push_back({r * std::cos(elev) * std::cos(azim), r * std::cos(elev) * std::sin(azim),
                  r * std::sin(elev), rng.uniform()});
  }
  RangeImage img = project(pc, cfg);
  RangeImage img2 = project(unproject(img), img.config);
  for (std::int64_t i = 0; i < img.pixels(); ++i) {
    CHECK(img.valid[i] == img2.valid[i]);
    // compare after f32 cast: artifacts store f32
    CHECK(static_cast<float>(img.depth[i]) == static_cast<float>(img2.depth[i]));
    CHECK(static_cast<float>(img.intensity[i]) == static_cast<float>(img2.intensity[i]));
  }
}

TEST_CASE("range image tensor round trips") {
  SensorConfig cfg = tiny_sensor();
  RangeImage img = project({{10.0, 0.0, 0.0, 0.5}, {-3.0, 4.0, 0.2, 0.2}}, cfg);
  RangeImage back = RangeImage::from_tensor(img.to_tensor(), cfg);
  CHECK(back.depth == img.depth);
  CHECK(back.intensity == img.intensity);
  CHECK(back.valid == img.valid);
}

TEST_CASE("from_sample thresholds ray drops") {
  SensorConfig cfg = tiny_sensor();
  Tensor t = Tensor::full({cfg.height, cfg.width, 2}, -1.0);
  (*t.data)[0] = 0.25;  // one live pixel
  (*t.data)[1] = 0.5;
  RangeImage img = RangeImage::from_sample(t, cfg);
  CHECK(img.valid[0] == 1);
  CHECK(img.depth[0] == doctest::Approx(0.25));
  std::int64_t live = 0;
  for (auto v : img.valid) live += v;
  CHECK(live == 1);
}

TEST_CASE("masks have the advertised structure") {
  SensorConfig cfg{8, 16, 10.0, -10.0, 1.0, 50.0};
  auto half = make_mask(MaskKind::BeamKeepHalf, cfg, 0);
  auto quarter = make_mask(MaskKind::BeamKeepQuarter, cfg, 0);
  for (std::int64_t r = 0; r < cfg.height; ++r)
    for (std::int64_t c = 0; c < cfg.width; ++c) {
      CHECK(half[r * cfg.width + c] == (r % 2 == 0 ? 1 : 0));
      CHECK(quarter[r * cfg.width + c] == (r % 4 == 0 ? 1 : 0));
    }
  // random mask: deterministic per seed, roughly 10% kept
  SensorConfig big{64, 1024, 10.0, -10.0, 1.0, 50.0};
  auto r1 = make_mask(MaskKind::RandomKeep10Pct, big, 5);
  auto r2 = make_mask(MaskKind::RandomKeep10Pct, big, 5);
  CHECK(r1 == r2);
  double kept = 0;
  for (auto v : r1) kept += v;
  kept /= r1.size();
  CHECK(kept > 0.08);
  CHECK(kept < 0.12);
  CHECK_THROWS_AS(parse_mask_kind("nope"), DataError);
}

TEST_CASE("bev rasterization puts points in the right cells") {
  PointCloud pc{{0.0, 0.0, 0.0, 0.0}, {49.9, 49.9, 0.0, 0.0}, {-60.0, 0.0, 0.0, 0.0}};
  BevGrid g = bev_rasterize(pc, 4, 50.0);
  CHECK(g.total() == 2);  // the out-of-extent point is dropped
  CHECK(g.counts[2 * 4 + 2] == 1);  // origin in the upper-middle cell
  CHECK(g.counts[3 * 4 + 3] == 1);  // the far corner
}

TEST_CASE("scan reader: corrupt sizes and bad records") {
  fs::path dir = fs::temp_directory_path() / "eqdiff_scan_test";
  fs::create_directories(dir);
  {
    std::ofstream f(dir / "bad.bin", std::ios::binary);
    std::vector<float> data{1, 2, 3, 0.5f, 9.0f};  // 20 bytes: trailing partial record
    f.write(reinterpret_cast<const char*>(data.data()), data.size() * 4);
  }
  CHECK_THROWS_WITH_AS(read_scan_bin(dir / "bad.bin"), doctest::Contains("multiple of 16"), DataError);
  {
    std::ofstream f(dir / "mixed.bin", std::ios::binary);
    float nanv = std::nanf("");
    std::vector<float> data{1, 2, 3, 0.5f,  nanv, 0, 0, 0,  0, 0, 0, 0.25f,  4, 5, 6, 2.0f};
    f.write(reinterpret_cast<const char*>(data.data()), data.size() * 4);
  }
  ScanReadResult res = read_scan_bin(dir / "mixed.bin");
  CHECK(res.cloud.size() == 2);  // NaN record and zero-range record skipped
  CHECK(res.skipped == 2);
  CHECK(res.cloud[1].intensity == doctest::Approx(1.0));  // clamped from 2.0
  CHECK_THROWS_AS(read_scan_bin(dir / "absent.bin"), DataError);
  fs::remove_all(dir);
}
