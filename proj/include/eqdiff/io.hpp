#pragma once

// On-disk formats: raw little-endian f32 tensors with a JSON sidecar, and a
// minimal 16-bit grayscale PNG writer for depth-channel inspection.

#include "eqdiff/tensor.hpp"

#include <json.hpp>
#include <zlib.h>

#include <cstring>
#include <filesystem>
#include <fstream>

namespace eqdiff {

namespace fs = std::filesystem;

// path stem "foo" -> writes foo.f32 and foo.json
inline void write_tensor(const fs::path& stem, const Tensor& t) {
  fs::path bin = stem;
  bin += ".f32";
  std::ofstream f(bin, std::ios::binary);
  if (!f) throw DataError("cannot open for writing: " + bin.string());
  std::vector<float> buf(t.size());
  for (std::int64_t i = 0; i < t.size(); ++i) buf[i] = static_cast<float>((*t.data)[i]);
  f.write(reinterpret_cast<const char*>(buf.data()), buf.size() * sizeof(float));
  if (!f) throw DataError("short write: " + bin.string());

  nlohmann::json j;
  j["shape"] = t.shape;
  j["dtype"] = "f32";
  j["order"] = "row-major";
  fs::path side = stem;
  side += ".json";
  std::ofstream js(side);
  js << j.dump(2) << "\n";
}

inline Tensor read_tensor(const fs::path& stem) {
  fs::path side = stem;
  side += ".json";
  std::ifstream js(side);
  if (!js) throw DataError("missing tensor sidecar: " + side.string());
  nlohmann::json j;
  js >> j;
  if (j.value("dtype", "") != "f32" || j.value("order", "") != "row-major")
    throw DataError("unsupported tensor encoding in " + side.string());
  Shape shape = j.at("shape").get<Shape>();

  fs::path bin = stem;
  bin += ".f32";
  std::ifstream f(bin, std::ios::binary);
  if (!f) throw DataError("missing tensor data: " + bin.string());
  std::vector<float> buf(numel(shape));
  f.read(reinterpret_cast<char*>(buf.data()), buf.size() * sizeof(float));
  if (f.gcount() != static_cast<std::streamsize>(buf.size() * sizeof(float)))
    throw DataError("truncated tensor data: " + bin.string());
  std::vector<double> vals(buf.begin(), buf.end());
  return Tensor::from_data(std::move(shape), std::move(vals));
}

// ---------------------------------------------------------------------------
// PNG, 16-bit grayscale

namespace detail {

inline void png_chunk(std::ofstream& f, const char type[4], const std::vector<unsigned char>& data) {
  auto be32 = [&](std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    f.write(reinterpret_cast<char*>(b), 4);
  };
  be32(static_cast<std::uint32_t>(data.size()));
  f.write(type, 4);
  if (!data.empty()) f.write(reinterpret_cast<const char*>(data.data()), data.size());
  std::uint32_t crc = crc32(0, reinterpret_cast<const Bytef*>(type), 4);
  if (!data.empty()) crc = crc32(crc, data.data(), data.size());
  be32(crc);
}

}  // namespace detail

inline void write_png16(const fs::path& path, std::int64_t H, std::int64_t W,
                        const std::vector<std::uint16_t>& pixels) {
  if (static_cast<std::int64_t>(pixels.size()) != H * W) throw ShapeError("write_png16: pixel count mismatch");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open for writing: " + path.string());
  static const unsigned char sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  f.write(reinterpret_cast<const char*>(sig), 8);

  std::vector<unsigned char> ihdr(13);
  auto put32 = [&](int off, std::uint32_t v) {
    ihdr[off] = v >> 24;
    ihdr[off + 1] = v >> 16;
    ihdr[off + 2] = v >> 8;
    ihdr[off + 3] = v;
  };
  put32(0, static_cast<std::uint32_t>(W));
  put32(4, static_cast<std::uint32_t>(H));
  ihdr[8] = 16;  // bit depth
  ihdr[9] = 0;   // grayscale
  ihdr[10] = ihdr[11] = ihdr[12] = 0;
  detail::png_chunk(f, "IHDR", ihdr);

  std::vector<unsigned char> raw;
  raw.reserve(H * (1 + 2 * W));
  for (std::int64_t y = 0; y < H; ++y) {
    raw.push_back(0);  // filter: none
    for (std::int64_t x = 0; x < W; ++x) {
      std::uint16_t v = pixels[y * W + x];
      raw.push_back(static_cast<unsigned char>(v >> 8));
      raw.push_back(static_cast<unsigned char>(v & 0xff));
    }
  }
  uLongf zlen = compressBound(raw.size());
  std::vector<unsigned char> z(zlen);
  if (compress2(z.data(), &zlen, raw.data(), raw.size(), 6) != Z_OK)
    throw DataError("PNG deflate failed");
  z.resize(zlen);
  detail::png_chunk(f, "IDAT", z);
  detail::png_chunk(f, "IEND", {});
}

}  // namespace eqdiff
