// Copyright 2026 The PyramidMamba-Desk Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <cstdio>
#include <filesystem>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "pmamba/pipeline/geometry.hpp"
#include "pmamba/pipeline/raster.hpp"

namespace pmamba::pipeline {

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<std::pair<std::filesystem::path, std::filesystem::path>> pairs;  // relative to root
  Index num_classes = 0;
  std::vector<std::string> class_names;
  int ignore_label = train::kIgnoreLabel;
};

inline const std::vector<std::string>& default_class_names() {
  static const std::vector<std::string> names{"background", "building", "road", "tree", "water", "bare_soil"};
  return names;
}

/// manifest.ini layout:
///   [dataset] classes, class_names (comma separated), ignore_label, count
///   [samples] one key per sample, value "<image> <mask>" relative to the root
inline void write_manifest(const DatasetManifest& m) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::string names;
  for (std::size_t i = 0; i < m.class_names.size(); ++i) names += (i ? "," : "") + m.class_names[i];
  tree.put("dataset.classes", m.num_classes);
  tree.put("dataset.class_names", names);
  tree.put("dataset.ignore_label", m.ignore_label);
  tree.put("dataset.count", m.pairs.size());
  pt::ptree samples;
  for (std::size_t i = 0; i < m.pairs.size(); ++i) {
    char key[32];
    std::snprintf(key, sizeof key, "%04zu", i);
    samples.push_back({key, pt::ptree(m.pairs[i].first.generic_string() + " " + m.pairs[i].second.generic_string())});
  }
  tree.add_child("samples", samples);
  std::filesystem::create_directories(m.root);
  pt::write_ini((m.root / "manifest.ini").string(), tree);
}

/// Reads a manifest file (or a directory containing manifest.ini).
inline DatasetManifest load_manifest(std::filesystem::path path) {
  namespace pt = boost::property_tree;
  if (std::filesystem::is_directory(path)) path /= "manifest.ini";
  pt::ptree tree;
  try {
    pt::read_ini(path.string(), tree);
  } catch (const pt::ini_parser_error& e) {
    throw DataError("manifest: " + std::string(e.what()));
  }
  DatasetManifest m;
  m.root = path.parent_path();
  try {
    m.num_classes = tree.get<Index>("dataset.classes");
    m.ignore_label = tree.get<int>("dataset.ignore_label", train::kIgnoreLabel);
    std::stringstream names(tree.get<std::string>("dataset.class_names", ""));
    for (std::string n; std::getline(names, n, ',');) m.class_names.push_back(n);
    for (const auto& [key, value] : tree.get_child("samples")) {
      std::istringstream fields(value.data());
      std::string img, mask;
      if (!(fields >> img >> mask)) throw DataError("manifest: sample '" + key + "' needs '<image> <mask>'");
      m.pairs.emplace_back(img, mask);
    }
    if (tree.get<std::size_t>("dataset.count", m.pairs.size()) != m.pairs.size())
      throw DataError("manifest: count does not match the number of samples");
  } catch (const pt::ptree_error& e) {
    throw DataError("manifest " + path.string() + ": " + e.what());
  }
  if (m.num_classes < 2 || m.num_classes > 255) throw DataError("manifest: classes must be in [2, 255]");
  if (m.pairs.empty()) throw DataError("manifest: no samples");
  return m;
}

/// Loads every pair, checking that files exist, dimensions match and mask
/// values lie in [0,K) or equal the ignore label. Nothing is returned unless
/// the whole manifest is valid.
template <class T>
std::vector<Sample<T>> load_samples(const DatasetManifest& m) {
  std::vector<Sample<T>> out;
  for (const auto& [img_rel, mask_rel] : m.pairs) {
    const auto img_path = m.root / img_rel, mask_path = m.root / mask_rel;
    const Raster img = load_raster(img_path);
    const Raster mask = load_raster(mask_path);
    if (img.channels != 3) throw DataError(img_path.string() + ": image must be RGB (P6)");
    if (img.width != mask.width || img.height != mask.height)
      throw DataError(mask_path.string() + ": dimensions differ from " + img_path.string());
    for (auto v : mask.pixels)
      if (v >= m.num_classes && v != m.ignore_label)
        throw DataError(mask_path.string() + ": mask value " + std::to_string(v) + " outside [0," +
                        std::to_string(m.num_classes) + ") and not the ignore label");
    out.push_back({raster_to_image<T>(img), raster_to_mask(mask)});
  }
  return out;
}

struct SynthScene {
  Raster image;
  train::LabelMap mask;
};

namespace detail {

struct Rgb {
  int r, g, b;
};

inline constexpr Rgb kPalette[6] = {{104, 122, 84}, {196, 92, 76}, {150, 150, 156}, {34, 96, 44}, {44, 84, 176}, {206, 184, 122}};

// Smooth value noise in [-1, 1] on a lattice of `cell` pixels.
inline std::vector<double> value_noise(Index size, Index cell, Rng& rng) {
  const Index g = size / cell + 2;
  std::vector<double> lattice(static_cast<std::size_t>(g * g));
  for (auto& v : lattice) v = rng.uniform(-1.0, 1.0);
  std::vector<double> out(static_cast<std::size_t>(size * size));
  for (Index y = 0; y < size; ++y)
    for (Index x = 0; x < size; ++x) {
      const Index gy = y / cell, gx = x / cell;
      const double fy = static_cast<double>(y % cell) / static_cast<double>(cell);
      const double fx = static_cast<double>(x % cell) / static_cast<double>(cell);
      auto at = [&](Index yy, Index xx) { return lattice[static_cast<std::size_t>(yy * g + xx)]; };
      const double top = at(gy, gx) + fx * (at(gy, gx + 1) - at(gy, gx));
      const double bot = at(gy + 1, gx) + fx * (at(gy + 1, gx + 1) - at(gy + 1, gx));
      out[static_cast<std::size_t>(y * size + x)] = top + fy * (bot - top);
    }
  return out;
}

class Canvas {
 public:
  explicit Canvas(Index size) : size_(size), cls_(static_cast<std::size_t>(size * size), 0), shade_(cls_.size(), 0) {}

  void rect(Index y0, Index x0, Index h, Index w, std::uint8_t c, int shade) {
    for (Index y = std::max<Index>(0, y0); y < std::min(size_, y0 + h); ++y)
      for (Index x = std::max<Index>(0, x0); x < std::min(size_, x0 + w); ++x) set(y, x, c, shade);
  }
  void disc(double cy, double cx, double r, std::uint8_t c, int shade) {
    for (Index y = 0; y < size_; ++y)
      for (Index x = 0; x < size_; ++x) {
        const double dy = static_cast<double>(y) + 0.5 - cy, dx = static_cast<double>(x) + 0.5 - cx;
        if (dy * dy + dx * dx <= r * r) set(y, x, c, shade);
      }
  }
  // Infinite strip through (py, px) with unit direction (dy, dx).
  void strip(double py, double px, double dy, double dx, double width, std::uint8_t c, int shade) {
    for (Index y = 0; y < size_; ++y)
      for (Index x = 0; x < size_; ++x) {
        const double ry = static_cast<double>(y) + 0.5 - py, rx = static_cast<double>(x) + 0.5 - px;
        const double dist = ry * dx - rx * dy;
        if (dist * dist * 4.0 <= width * width) set(y, x, c, shade);
      }
  }

  std::vector<double> shares(Index k) const {
    std::vector<double> s(static_cast<std::size_t>(k), 0.0);
    for (auto c : cls_) s[c] += 1.0;
    for (auto& v : s) v /= static_cast<double>(cls_.size());
    return s;
  }
  const std::vector<std::uint8_t>& classes() const { return cls_; }
  int shade(std::size_t i) const { return shade_[i]; }

 private:
  void set(Index y, Index x, std::uint8_t c, int shade) {
    cls_[static_cast<std::size_t>(y * size_ + x)] = c;
    shade_[static_cast<std::size_t>(y * size_ + x)] = shade;
  }
  Index size_;
  std::vector<std::uint8_t> cls_;
  std::vector<int> shade_;
};

inline void paint_shape(Canvas& cv, std::uint8_t c, Index size, Rng& rng) {
  const double s = static_cast<double>(size);
  const int shade = static_cast<int>(rng.below(31)) - 15;
  switch (c) {
    case 1: {  // buildings: axis-aligned blocks over a wide size range
      const Index h = 3 + static_cast<Index>(rng.below(static_cast<std::uint64_t>(size / 3)));
      const Index w = 3 + static_cast<Index>(rng.below(static_cast<std::uint64_t>(size / 3)));
      cv.rect(static_cast<Index>(rng.below(static_cast<std::uint64_t>(size))) - h / 2,
              static_cast<Index>(rng.below(static_cast<std::uint64_t>(size))) - w / 2, h, w, c, shade);
      break;
    }
    case 2: {  // roads: long strips of varying width and direction
      const double dirs[4][2] = {{0, 1}, {1, 0}, {0.6, 0.8}, {0.8, -0.6}};
      const auto& d = dirs[rng.below(4)];
      cv.strip(rng.uniform(0, s), rng.uniform(0, s), d[0], d[1], rng.uniform(2.0, s / 10.0 + 2.0), c, shade);
      break;
    }
    case 3:  // trees: small discs
      cv.disc(rng.uniform(0, s), rng.uniform(0, s), rng.uniform(1.5, s / 12.0 + 2.0), c, shade);
      break;
    case 4:  // water: large discs
      cv.disc(rng.uniform(0, s), rng.uniform(0, s), rng.uniform(s / 10.0, s / 5.0), c, shade);
      break;
    default: {  // bare soil: small squares
      const Index e = 3 + static_cast<Index>(rng.below(static_cast<std::uint64_t>(size / 8 + 1)));
      cv.rect(static_cast<Index>(rng.below(static_cast<std::uint64_t>(size))),
              static_cast<Index>(rng.below(static_cast<std::uint64_t>(size))), e, e, c, shade);
    }
  }
}

}  // namespace detail

/// Share bands every generated scene satisfies.
inline constexpr double kSynthBackgroundMin = 0.40;
inline constexpr double kSynthBackgroundMax = 0.70;
inline constexpr double kSynthForegroundMin = 0.02;

/// One procedural scene: textured background, road strips, building blocks,
/// tree discs and (for K > 4) water discs and bare-soil squares, with the
/// exact class mask. Shapes are added greedily until every class reaches its
/// share band; a scene that misses the band is regenerated from the next
/// sub-stream. Pure function of (seed, index, size, k).
inline SynthScene synth_scene(std::uint64_t seed, Index index, Index size, Index k) {
  if (size < 16 || size % 16 != 0) throw ConfigError("synth: size must be a positive multiple of 16");
  if (k < 2 || k > 6) throw ConfigError("synth: classes must be in [2, 6]");
  const Rng base = Rng(seed, Rng::hash("synth")).split(static_cast<std::uint64_t>(index));
  const double fg_target = 0.035;
  for (std::uint64_t attempt = 0; attempt < 64; ++attempt) {
    Rng rng = base.split(attempt);
    detail::Canvas cv(size);
    for (int it = 0; it < 400; ++it) {
      const auto sh = cv.shares(k);
      std::uint8_t pick = 0;
      double lowest = 1.0;
      for (Index c = 1; c < k; ++c)
        if (sh[static_cast<std::size_t>(c)] < lowest) {
          lowest = sh[static_cast<std::size_t>(c)];
          pick = static_cast<std::uint8_t>(c);
        }
      if (lowest >= fg_target) {
        if (sh[0] <= 0.62) break;
        pick = static_cast<std::uint8_t>(1 + rng.below(static_cast<std::uint64_t>(k - 1)));
      }
      detail::paint_shape(cv, pick, size, rng);
    }
    const auto sh = cv.shares(k);
    bool ok = sh[0] >= kSynthBackgroundMin && sh[0] <= kSynthBackgroundMax;
    for (Index c = 1; c < k; ++c) ok = ok && sh[static_cast<std::size_t>(c)] >= kSynthForegroundMin;
    if (!ok) continue;

    const auto texture = detail::value_noise(size, 8, rng);
    Raster img{size, size, 3, std::vector<std::uint8_t>(static_cast<std::size_t>(size * size * 3))};
    for (std::size_t p = 0; p < cv.classes().size(); ++p) {
      const auto c = cv.classes()[p];
      const auto& pal = detail::kPalette[c];
      const double tex = c == 0 ? 22.0 * texture[p] : 0.0;
      const int base_rgb[3] = {pal.r, pal.g, pal.b};
      for (int ch = 0; ch < 3; ++ch) {
        const double v = base_rgb[ch] + cv.shade(p) + tex + rng.uniform(-10.0, 10.0);
        img.pixels[p * 3 + static_cast<std::size_t>(ch)] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
    return {std::move(img), train::LabelMap({size, size}, cv.classes())};
  }
  throw DataError("synth: could not meet the class share bands for sample " + std::to_string(index));
}

/// In-memory samples identical to what `synth_dataset` writes and
/// `load_samples` reads back.
template <class T>
std::vector<Sample<T>> synth_samples(std::uint64_t seed, Index n, Index size, Index k, Index first_index = 0) {
  std::vector<Sample<T>> out;
  for (Index i = 0; i < n; ++i) {
    auto scene = synth_scene(seed, first_index + i, size, k);
    out.push_back({raster_to_image<T>(scene.image), std::move(scene.mask)});
  }
  return out;
}

/// Writes images/NNNN.ppm, masks/NNNN.pgm and manifest.ini under `root`.
inline DatasetManifest synth_dataset(const std::filesystem::path& root, std::uint64_t seed, Index n, Index size,
                                     Index k) {
  if (n < 1) throw ConfigError("synth: need at least one sample");
  DatasetManifest m;
  m.root = root;
  m.num_classes = k;
  m.class_names.assign(default_class_names().begin(), default_class_names().begin() + k);
  for (Index i = 0; i < n; ++i) {
    const auto scene = synth_scene(seed, i, size, k);
    char stem[32];
    std::snprintf(stem, sizeof stem, "%04lld", static_cast<long long>(i));
    const std::filesystem::path img = std::filesystem::path("images") / (std::string(stem) + ".ppm");
    const std::filesystem::path mask = std::filesystem::path("masks") / (std::string(stem) + ".pgm");
    save_raster(root / img, scene.image);
    save_mask(root / mask, scene.mask);
    m.pairs.emplace_back(img, mask);
  }
  write_manifest(m);
  return m;
}

}  // namespace pmamba::pipeline
