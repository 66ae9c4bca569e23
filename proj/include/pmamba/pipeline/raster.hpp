// Copyright 2026 The PyramidMamba-Desk Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "pmamba/core/tensor.hpp"
#include "pmamba/train/loss.hpp"

namespace pmamba::pipeline {

/// 8-bit raster, interleaved channels, row-major. channels is 1 (P5) or 3 (P6).
struct Raster {
  Index width = 0;
  Index height = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(Index y, Index x, int c = 0) const {
    return pixels[static_cast<std::size_t>((y * width + x) * channels + c)];
  }
  bool operator==(const Raster&) const = default;
};

namespace detail {

inline void skip_space_and_comments(const std::vector<std::uint8_t>& b, std::size_t& i) {
  while (i < b.size()) {
    if (std::isspace(b[i])) {
      ++i;
    } else if (b[i] == '#') {
      while (i < b.size() && b[i] != '\n') ++i;
    } else {
      break;
    }
  }
}

inline Index read_header_int(const std::vector<std::uint8_t>& b, std::size_t& i, const char* what) {
  skip_space_and_comments(b, i);
  if (i >= b.size() || !std::isdigit(b[i])) throw FormatError(std::string("pnm: expected ") + what);
  Index v = 0;
  while (i < b.size() && std::isdigit(b[i])) {
    v = v * 10 + (b[i] - '0');
    if (v > (Index{1} << 30)) throw FormatError(std::string("pnm: ") + what + " too large");
    ++i;
  }
  return v;
}

}  // namespace detail

/// Parses binary PGM (P5) or PPM (P6) with maxval 255.
inline Raster parse_pnm(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6'))
    throw FormatError("pnm: not a binary P5/P6 file");
  Raster r;
  r.channels = bytes[1] == '5' ? 1 : 3;
  std::size_t i = 2;
  r.width = detail::read_header_int(bytes, i, "width");
  r.height = detail::read_header_int(bytes, i, "height");
  const Index maxval = detail::read_header_int(bytes, i, "maxval");
  if (r.width < 1 || r.height < 1) throw FormatError("pnm: empty image");
  if (maxval != 255) throw FormatError("pnm: only maxval 255 is supported, got " + std::to_string(maxval));
  if (i >= bytes.size() || !std::isspace(bytes[i])) throw FormatError("pnm: missing whitespace after header");
  ++i;
  const auto n = static_cast<std::size_t>(r.width * r.height * r.channels);
  if (bytes.size() - i != n)
    throw FormatError("pnm: expected " + std::to_string(n) + " pixel bytes, found " + std::to_string(bytes.size() - i));
  r.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(i), bytes.end());
  return r;
}

inline std::vector<std::uint8_t> pnm_bytes(const Raster& r) {
  if (r.channels != 1 && r.channels != 3) throw FormatError("pnm: raster must have 1 or 3 channels");
  if (static_cast<Index>(r.pixels.size()) != r.width * r.height * r.channels)
    throw ShapeError("pnm: pixel buffer does not match dimensions");
  const std::string head =
      std::string(r.channels == 1 ? "P5" : "P6") + "\n" + std::to_string(r.width) + " " + std::to_string(r.height) + "\n255\n";
  std::vector<std::uint8_t> out(head.begin(), head.end());
  out.insert(out.end(), r.pixels.begin(), r.pixels.end());
  return out;
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("cannot write " + path.string());
}

inline Raster load_raster(const std::filesystem::path& path) {
  try {
    return parse_pnm(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

inline void save_raster(const std::filesystem::path& path, const Raster& r) { write_file(path, pnm_bytes(r)); }

/// RGB raster -> [3,H,W] in [0,1]. Gray rasters are replicated to 3 channels.
template <class T>
Tensor<T> raster_to_image(const Raster& r) {
  const Index hw = r.width * r.height;
  std::vector<T> v(static_cast<std::size_t>(3 * hw));
  for (Index c = 0; c < 3; ++c)
    for (Index p = 0; p < hw; ++p)
      v[static_cast<std::size_t>(c * hw + p)] =
          static_cast<T>(r.pixels[static_cast<std::size_t>(p * r.channels + (r.channels == 3 ? c : 0))]) / T{255};
  return Tensor<T>::from({3, r.height, r.width}, v);
}

/// [3,H,W] in [0,1] -> RGB raster, rounded and clamped.
template <class T>
Raster image_to_raster(const Tensor<T>& img) {
  if (img.rank() != 3 || img.dim(0) != 3) throw ShapeError("image_to_raster: expected [3,H,W]");
  Raster r{img.dim(2), img.dim(1), 3, {}};
  const Index hw = r.width * r.height;
  r.pixels.resize(static_cast<std::size_t>(3 * hw));
  const auto x = img.data();
  for (Index p = 0; p < hw; ++p)
    for (Index c = 0; c < 3; ++c) {
      const double v = std::clamp(static_cast<double>(x[c * hw + p]), 0.0, 1.0);
      r.pixels[static_cast<std::size_t>(p * 3 + c)] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
  return r;
}

inline train::LabelMap raster_to_mask(const Raster& r) {
  if (r.channels != 1) throw FormatError("mask: expected a single-channel (P5) raster");
  return train::LabelMap({r.height, r.width}, r.pixels);
}

inline Raster mask_to_raster(const train::LabelMap& m) {
  if (m.shape.size() != 2) throw ShapeError("mask_to_raster: expected [H,W]");
  return Raster{m.width(), m.height(), 1, m.values};
}

template <class T>
Tensor<T> load_image(const std::filesystem::path& path) {
  return raster_to_image<T>(load_raster(path));
}

inline train::LabelMap load_mask(const std::filesystem::path& path) { return raster_to_mask(load_raster(path)); }

inline void save_mask(const std::filesystem::path& path, const train::LabelMap& m) { save_raster(path, mask_to_raster(m)); }

}  // namespace pmamba::pipeline
