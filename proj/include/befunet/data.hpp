#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "befunet/common.hpp"
#include "befunet/rng.hpp"
#include "befunet/tensor.hpp"

namespace befunet {

// One supervised unit: RGB image in [0,1], per-pixel class labels, and
// the derived edge map. For the default generator the edge map is the
// exact 4-neighbor boundary of the mask (values 0/1); the fractional mode
// averages jittered boundary drawings to exercise consensus values.
struct Sample {
  int h = 0, w = 0;
  std::vector<float> image;        // [H,W,3]
  std::vector<std::uint8_t> mask;  // [H,W] class ids
  std::vector<float> edge;         // [H,W] in [0,1]
};

// Pixel is an edge iff its class differs from any in-bounds 4-neighbor.
inline std::vector<float> derive_edge(const std::vector<std::uint8_t>& mask, int h,
                                      int w) {
  std::vector<float> edge(static_cast<std::size_t>(h) * w, 0.0f);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::uint8_t c = mask[static_cast<std::size_t>(y) * w + x];
      const int ny[4] = {y - 1, y + 1, y, y};
      const int nx[4] = {x, x, x - 1, x + 1};
      for (int i = 0; i < 4; ++i) {
        if (ny[i] < 0 || ny[i] >= h || nx[i] < 0 || nx[i] >= w) continue;
        if (mask[static_cast<std::size_t>(ny[i]) * w + nx[i]] != c) {
          edge[static_cast<std::size_t>(y) * w + x] = 1.0f;
          break;
        }
      }
    }
  return edge;
}

namespace detail_data {

inline void draw_ellipse(std::vector<std::uint8_t>& mask, int h, int w, double cy,
                         double cx, double ry, double rx, std::uint8_t cls) {
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double dy = (y - cy) / ry, dx = (x - cx) / rx;
      if (dy * dy + dx * dx <= 1.0)
        mask[static_cast<std::size_t>(y) * w + x] = cls;
    }
}

inline void draw_rect(std::vector<std::uint8_t>& mask, int h, int w, double cy,
                      double cx, double ry, double rx, std::uint8_t cls) {
  const int y0 = std::max(0, static_cast<int>(std::lround(cy - ry)));
  const int y1 = std::min(h - 1, static_cast<int>(std::lround(cy + ry)));
  const int x0 = std::max(0, static_cast<int>(std::lround(cx - rx)));
  const int x1 = std::min(w - 1, static_cast<int>(std::lround(cx + rx)));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) mask[static_cast<std::size_t>(y) * w + x] = cls;
}

inline std::vector<float> fractional_edge(const std::vector<std::uint8_t>& mask, int h,
                                          int w, Rng& rng, int drawings = 5) {
  std::vector<float> acc(static_cast<std::size_t>(h) * w, 0.0f);
  for (int j = 0; j < drawings; ++j) {
    const int dy = rng.uniform_int(-1, 1);
    const int dx = rng.uniform_int(-1, 1);
    std::vector<std::uint8_t> shifted(mask.size());
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const int sy = std::clamp(y + dy, 0, h - 1);
        const int sx = std::clamp(x + dx, 0, w - 1);
        shifted[static_cast<std::size_t>(y) * w + x] =
            mask[static_cast<std::size_t>(sy) * w + sx];
      }
    const std::vector<float> e = derive_edge(shifted, h, w);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += e[i];
  }
  for (auto& v : acc) v /= static_cast<float>(drawings);
  return acc;
}

}  // namespace detail_data

// Synthetic corpus: per foreground class, 1-3 random ellipses or
// rectangles on a gray background; distinct per-class base colors with
// per-sample jitter, additive Gaussian texture noise (sigma 0.1) and a
// global brightness shift. Masks are exact and edges derived.
inline std::vector<Sample> generate_synthetic(int n, int h, int w, int k,
                                              std::uint64_t seed,
                                              bool fractional_edges = false) {
  if (k < 2) throw ConfigError("generate_synthetic: need k >= 2 classes");
  if (h % 32 != 0 || w % 32 != 0)
    throw ConfigError("generate_synthetic: h and w must be multiples of 32");
  static const double palette[6][3] = {{0.80, 0.25, 0.20}, {0.20, 0.70, 0.30},
                                       {0.25, 0.35, 0.85}, {0.85, 0.75, 0.20},
                                       {0.75, 0.30, 0.80}, {0.20, 0.75, 0.80}};
  Rng rng(seed);
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Sample s;
    s.h = h;
    s.w = w;
    s.mask.assign(static_cast<std::size_t>(h) * w, 0);
    const double bg = rng.uniform(0.15, 0.35);
    std::vector<std::array<double, 3>> colors(static_cast<std::size_t>(k));
    colors[0] = {bg, bg, bg};
    for (int c = 1; c < k; ++c)
      for (int ch = 0; ch < 3; ++ch)
        colors[static_cast<std::size_t>(c)][static_cast<std::size_t>(ch)] =
            std::clamp(palette[(c - 1) % 6][ch] + rng.uniform(-0.08, 0.08), 0.0, 1.0);
    for (int c = 1; c < k; ++c) {
      const int shapes = rng.uniform_int(1, 3);
      for (int sh = 0; sh < shapes; ++sh) {
        const double cy = rng.uniform(0.15 * h, 0.85 * h);
        const double cx = rng.uniform(0.15 * w, 0.85 * w);
        const double ry = rng.uniform(h / 10.0, h / 4.0);
        const double rx = rng.uniform(w / 10.0, w / 4.0);
        if (rng.uniform_int(0, 1) == 0)
          detail_data::draw_ellipse(s.mask, h, w, cy, cx, ry, rx,
                                    static_cast<std::uint8_t>(c));
        else
          detail_data::draw_rect(s.mask, h, w, cy, cx, ry, rx,
                                 static_cast<std::uint8_t>(c));
      }
    }
    const double brightness = rng.uniform(-0.08, 0.08);
    s.image.resize(static_cast<std::size_t>(h) * w * 3);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const std::uint8_t c = s.mask[static_cast<std::size_t>(y) * w + x];
        for (int ch = 0; ch < 3; ++ch) {
          const double v = colors[c][static_cast<std::size_t>(ch)] +
                           0.1 * rng.normal() + brightness;
          s.image[(static_cast<std::size_t>(y) * w + x) * 3 + ch] =
              static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
      }
    s.edge = fractional_edges ? detail_data::fractional_edge(s.mask, h, w, rng)
                              : derive_edge(s.mask, h, w);
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Binary PGM (P5) / PPM (P6) readers and writers, maxval 255 only.
// ---------------------------------------------------------------------------

namespace detail_data {

struct PnmHeader {
  int width = 0, height = 0;
  std::size_t payload_offset = 0;
};

inline PnmHeader read_pnm_header(std::ifstream& f, const char* magic,
                                 const std::string& path) {
  std::size_t offset = 0;
  auto get = [&]() -> int {
    const int c = f.get();
    if (c == EOF) throw FormatError(path + ": truncated header at byte " +
                                    std::to_string(offset));
    ++offset;
    return c;
  };
  if (get() != magic[0] || get() != magic[1])
    throw FormatError(path + ": wrong magic at byte 0, expected " +
                      std::string(magic, 2));
  auto read_int = [&]() -> int {
    int c = get();
    // skip whitespace and '#' comments
    while (true) {
      if (c == '#') {
        while (c != '\n') c = get();
      } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
        c = get();
      } else {
        break;
      }
    }
    if (c < '0' || c > '9')
      throw FormatError(path + ": expected integer at byte " +
                        std::to_string(offset - 1));
    int v = 0;
    while (c >= '0' && c <= '9') {
      v = v * 10 + (c - '0');
      c = get();
    }
    if (c != ' ' && c != '\t' && c != '\n' && c != '\r')
      throw FormatError(path + ": bad separator at byte " + std::to_string(offset - 1));
    return v;
  };
  PnmHeader h;
  h.width = read_int();
  h.height = read_int();
  const int maxval = read_int();
  if (maxval != 255)
    throw FormatError(path + ": maxval must be 255, got " + std::to_string(maxval) +
                      " (header ends at byte " + std::to_string(offset) + ")");
  h.payload_offset = offset;
  if (h.width <= 0 || h.height <= 0)
    throw FormatError(path + ": non-positive dimensions");
  return h;
}

}  // namespace detail_data

// Reads a P6 RGB image, values scaled to [0,1].
inline std::vector<float> read_ppm(const std::string& path, int& h, int& w) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  const auto hdr = detail_data::read_pnm_header(f, "P6", path);
  h = hdr.height;
  w = hdr.width;
  const std::size_t n = static_cast<std::size_t>(h) * w * 3;
  std::vector<std::uint8_t> bytes(n);
  f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(f.gcount()) != n)
    throw IoError(path + ": truncated payload, expected " + std::to_string(n) +
                  " bytes after byte " + std::to_string(hdr.payload_offset));
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<float>(bytes[i]) / 255.0f;
  return out;
}

inline void write_ppm(const std::string& path, int h, int w,
                      const std::vector<float>& rgb) {
  if (rgb.size() != static_cast<std::size_t>(h) * w * 3)
    throw ShapeError("write_ppm: buffer size mismatch");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f << "P6\n" << w << " " << h << "\n255\n";
  std::vector<std::uint8_t> bytes(rgb.size());
  for (std::size_t i = 0; i < rgb.size(); ++i)
    bytes[i] = static_cast<std::uint8_t>(
        std::clamp(static_cast<int>(std::lround(rgb[i] * 255.0f)), 0, 255));
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + path);
}

// Reads a P5 grayscale map as raw byte values (class ids or 0/255 edges).
inline std::vector<std::uint8_t> read_pgm(const std::string& path, int& h, int& w) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  const auto hdr = detail_data::read_pnm_header(f, "P5", path);
  h = hdr.height;
  w = hdr.width;
  const std::size_t n = static_cast<std::size_t>(h) * w;
  std::vector<std::uint8_t> bytes(n);
  f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(f.gcount()) != n)
    throw IoError(path + ": truncated payload, expected " + std::to_string(n) +
                  " bytes after byte " + std::to_string(hdr.payload_offset));
  return bytes;
}

inline void write_pgm(const std::string& path, int h, int w,
                      const std::vector<std::uint8_t>& v) {
  if (v.size() != static_cast<std::size_t>(h) * w)
    throw ShapeError("write_pgm: buffer size mismatch");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f << "P5\n" << w << " " << h << "\n255\n";
  f.write(reinterpret_cast<const char*>(v.data()),
          static_cast<std::streamsize>(v.size()));
  if (!f) throw IoError("write failed: " + path);
}

// ---------------------------------------------------------------------------
// Dataset manifests: one "image_path,mask_path" per line, '#' comments.
// Paths are resolved relative to the manifest's directory.
// ---------------------------------------------------------------------------

struct ManifestEntry {
  std::string image;
  std::string mask;
};

inline std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open manifest: " + path);
  std::vector<ManifestEntry> out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      throw FormatError(path + ":" + std::to_string(lineno) +
                        ": expected image_path,mask_path");
    ManifestEntry e{trim(line.substr(0, comma)), trim(line.substr(comma + 1))};
    if (e.image.empty() || e.mask.empty())
      throw FormatError(path + ":" + std::to_string(lineno) + ": empty path");
    out.push_back(std::move(e));
  }
  return out;
}

inline void write_manifest(const std::string& path,
                           const std::vector<ManifestEntry>& entries) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open manifest for writing: " + path);
  for (const auto& e : entries) f << e.image << "," << e.mask << "\n";
}

// Loads samples listed in a manifest; edge maps are derived from masks.
inline std::vector<Sample> load_dataset(const std::string& manifest_path) {
  const auto entries = read_manifest(manifest_path);
  const auto root = std::filesystem::path(manifest_path).parent_path();
  std::vector<Sample> out;
  out.reserve(entries.size());
  for (const auto& e : entries) {
    Sample s;
    int mh = 0, mw = 0;
    s.image = read_ppm((root / e.image).string(), s.h, s.w);
    s.mask = read_pgm((root / e.mask).string(), mh, mw);
    if (mh != s.h || mw != s.w)
      throw FormatError("manifest pair has mismatched dimensions: " + e.image + " is " +
                        std::to_string(s.h) + "x" + std::to_string(s.w) + ", " + e.mask +
                        " is " + std::to_string(mh) + "x" + std::to_string(mw));
    s.edge = derive_edge(s.mask, s.h, s.w);
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Tensor conversions.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> image_tensor(const Sample& s) {
  std::vector<T> v(s.image.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(s.image[i]);
  return Tensor<T>::from_data({s.h, s.w, 3}, std::move(v));
}

template <typename T>
Tensor<T> onehot_tensor(const Sample& s, int k) {
  std::vector<T> v(static_cast<std::size_t>(s.h) * s.w * k, T(0));
  for (std::size_t i = 0; i < s.mask.size(); ++i) {
    if (s.mask[i] >= k)
      throw FormatError("mask label " + std::to_string(s.mask[i]) +
                        " out of range for " + std::to_string(k) + " classes");
    v[i * static_cast<std::size_t>(k) + s.mask[i]] = T(1);
  }
  return Tensor<T>::from_data({s.h, s.w, k}, std::move(v));
}

template <typename T>
Tensor<T> edge_target_tensor(const Sample& s) {
  std::vector<T> v(s.edge.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(s.edge[i]);
  return Tensor<T>::from_data({s.h, s.w, 1}, std::move(v));
}

}  // namespace befunet
