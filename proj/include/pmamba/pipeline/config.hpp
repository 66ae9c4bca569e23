// Copyright 2026 The PyramidMamba-Desk Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pmamba/pipeline/augment.hpp"
#include "pmamba/pipeline/tta.hpp"

namespace pmamba::pipeline {

/// Everything a `train`/`eval`/`ablate` run needs. Built from a preset
/// ("paper" or "desk") overlaid with the keys of an INI file.
struct RunConfig {
  std::string preset = "desk";
  std::uint64_t seed = 0;
  std::filesystem::path output_dir;

  net::ModelConfig model;

  std::int64_t epochs = 300;
  Index batch = 4;
  std::int64_t warmup_epochs = 5;
  double lr_encoder = 0.0;
  double lr_decoder = 0.0;
  double power = 0.9;
  double weight_decay = 0.01;
  std::int64_t patience = 10;
  std::optional<double> stop_at_miou;
  Index eval_batch = 4;
  train::DiceForm dice_form = train::DiceForm::classwise;

  std::filesystem::path train_manifest;
  std::filesystem::path val_manifest;
  bool augment = true;
  AugmentationConfig augmentation;
  TtaConfig tta;

  /// Fully resolved configuration as INI text (every key present). Parsing
  /// it again yields the same RunConfig.
  std::string ini_text;

  train::TrainOptions train_options() const {
    train::TrainOptions o;
    o.epochs = epochs;
    o.batch = batch;
    o.warmup_epochs = warmup_epochs;
    o.lr_encoder = lr_encoder;
    o.lr_decoder = lr_decoder;
    o.power = power;
    o.adamw.weight_decay = weight_decay;
    o.loss.dice_form = dice_form;
    o.patience = patience;
    o.stop_at_miou = stop_at_miou;
    o.seed = seed;
    o.eval_batch = eval_batch;
    o.config_text = ini_text;
    return o;
  }
};

namespace detail {

namespace pt = boost::property_tree;

inline pt::ptree preset_tree(const std::string& name) {
  pt::ptree t;
  const bool paper = name == "paper";
  if (!paper && name != "desk") throw ConfigError("config: unknown preset '" + name + "' (expected paper or desk)");
  t.put("run.preset", name);
  t.put("run.seed", "0");
  t.put("run.output_dir", paper ? "runs/paper" : "runs/desk");

  t.put("network.variant", "full");
  t.put("network.num_classes", paper ? "6" : "4");
  t.put("network.input_size", paper ? "1024" : "64");
  t.put("network.stem_channels", paper ? "64" : "16");
  t.put("network.stage_channels", paper ? "64,128,256,512" : "16,32,64,64");
  t.put("network.d_dec", paper ? "128" : "64");
  t.put("network.d_state", paper ? "16" : "8");
  t.put("network.expand", "1");
  t.put("network.ffn_dropout", "0.1");
  t.put("network.scan", "cross2d");
  t.put("network.pooling", "dense");
  t.put("network.fusion", "sum");

  t.put("training.epochs", paper ? "45" : "300");
  t.put("training.batch", paper ? "2" : "4");
  t.put("training.warmup_epochs", "5");
  t.put("training.lr_encoder", paper ? "6e-5" : "4e-3");
  t.put("training.lr_decoder", paper ? "6e-4" : "4e-3");
  t.put("training.power", "0.9");
  t.put("training.weight_decay", "0.01");
  t.put("training.patience", "10");
  t.put("training.stop_at_miou", "");
  t.put("training.eval_batch", "4");
  t.put("training.dice", "classwise");

  t.put("pipeline.train_manifest", "");
  t.put("pipeline.val_manifest", "");
  t.put("pipeline.augment", "true");
  t.put("pipeline.hflip", "0.5");
  t.put("pipeline.vflip", "0.5");
  t.put("pipeline.scale_min", "0.75");
  t.put("pipeline.scale_max", "1.25");
  t.put("pipeline.mosaic", "0.25");
  t.put("pipeline.crop_size", paper ? "1024" : "64");
  t.put("pipeline.tta_flips", "none,h,v,hv");
  t.put("pipeline.tta_scales", "0.75,1.0,1.25");
  return t;
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

template <class V>
V typed(const pt::ptree& t, const std::string& key) {
  const auto raw = t.get<std::string>(key);
  try {
    std::size_t used = 0;
    V v{};
    if constexpr (std::is_same_v<V, double>) {
      v = std::stod(raw, &used);
    } else if constexpr (std::is_same_v<V, bool>) {
      if (raw == "true" || raw == "1") return true;
      if (raw == "false" || raw == "0") return false;
      throw std::invalid_argument(raw);
    } else {
      const long long x = std::stoll(raw, &used);
      if (x < 0 && std::is_unsigned_v<V>) throw std::invalid_argument(raw);
      v = static_cast<V>(x);
    }
    if (used != raw.size()) throw std::invalid_argument(raw);
    return v;
  } catch (const std::logic_error&) {
    throw ConfigError("config: cannot parse " + key + " = '" + raw + "'");
  }
}

inline std::filesystem::path resolve(const std::string& p, const std::filesystem::path& base) {
  if (p.empty()) return {};
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

}  // namespace detail

/// Parses INI text on top of its preset ([run] preset, default desk). Keys
/// that the preset does not define are rejected. Relative paths resolve
/// against `base_dir`.
inline RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir = {}) {
  namespace pt = boost::property_tree;
  pt::ptree user;
  try {
    std::istringstream in(text);
    pt::read_ini(in, user);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  RunConfig c;
  c.preset = user.get<std::string>("run.preset", "desk");
  pt::ptree t = detail::preset_tree(c.preset);
  for (const auto& [section, keys] : user) {
    if (section == "checkpoint") continue;  // metadata appended by checkpoint files
    if (keys.empty() && !keys.data().empty()) throw ConfigError("config: key '" + section + "' outside any section");
    for (const auto& [key, value] : keys) {
      const std::string path = section + "." + key;
      if (!t.get_child_optional(path)) throw ConfigError("config: unknown key '" + path + "'");
      t.put(path, value.data());
    }
  }
  std::ostringstream resolved;
  pt::write_ini(resolved, t);
  c.ini_text = resolved.str();

  using detail::typed;
  c.seed = typed<std::uint64_t>(t, "run.seed");
  c.output_dir = detail::resolve(t.get<std::string>("run.output_dir"), base_dir);

  auto& m = c.model;
  m.variant = net::parse_variant(t.get<std::string>("network.variant"));
  m.num_classes = typed<Index>(t, "network.num_classes");
  m.input_size = typed<Index>(t, "network.input_size");
  m.encoder.stem_channels = typed<Index>(t, "network.stem_channels");
  const auto stages = detail::split_list(t.get<std::string>("network.stage_channels"));
  if (stages.size() != 4) throw ConfigError("config: network.stage_channels needs 4 values");
  for (std::size_t i = 0; i < 4; ++i) {
    pt::ptree one;
    one.put("v", stages[i]);
    m.encoder.stage_channels[i] = typed<Index>(one, "v");
  }
  m.d_dec = typed<Index>(t, "network.d_dec");
  m.d_state = typed<Index>(t, "network.d_state");
  m.expand = typed<int>(t, "network.expand");
  m.ffn_dropout = typed<double>(t, "network.ffn_dropout");
  const auto scan = t.get<std::string>("network.scan");
  if (scan != "cross2d" && scan != "seq1d") throw ConfigError("config: network.scan must be cross2d or seq1d");
  m.scan_kind = scan == "cross2d" ? mamba::ScanModeKind::cross2d : mamba::ScanModeKind::seq1d;
  const auto pooling = t.get<std::string>("network.pooling");
  if (pooling != "dense" && pooling != "classic") throw ConfigError("config: network.pooling must be dense or classic");
  m.pooling = pooling == "dense" ? net::PoolingKind::dense : net::PoolingKind::classic;
  const auto fusion = t.get<std::string>("network.fusion");
  if (fusion != "sum" && fusion != "concat") throw ConfigError("config: network.fusion must be sum or concat");
  m.fusion = fusion == "sum" ? decoder::FusionKind::sum : decoder::FusionKind::concat;
  m.validate();

  c.epochs = typed<std::int64_t>(t, "training.epochs");
  c.batch = typed<Index>(t, "training.batch");
  c.warmup_epochs = typed<std::int64_t>(t, "training.warmup_epochs");
  c.lr_encoder = typed<double>(t, "training.lr_encoder");
  c.lr_decoder = typed<double>(t, "training.lr_decoder");
  c.power = typed<double>(t, "training.power");
  c.weight_decay = typed<double>(t, "training.weight_decay");
  c.patience = typed<std::int64_t>(t, "training.patience");
  if (!t.get<std::string>("training.stop_at_miou").empty()) c.stop_at_miou = typed<double>(t, "training.stop_at_miou");
  c.eval_batch = typed<Index>(t, "training.eval_batch");
  const auto dice = t.get<std::string>("training.dice");
  if (dice != "classwise" && dice != "literal") throw ConfigError("config: training.dice must be classwise or literal");
  c.dice_form = dice == "classwise" ? train::DiceForm::classwise : train::DiceForm::literal_per_pixel;
  c.train_options().validate();

  c.train_manifest = detail::resolve(t.get<std::string>("pipeline.train_manifest"), base_dir);
  c.val_manifest = detail::resolve(t.get<std::string>("pipeline.val_manifest"), base_dir);
  c.augment = typed<bool>(t, "pipeline.augment");
  auto& a = c.augmentation;
  a.hflip_p = typed<double>(t, "pipeline.hflip");
  a.vflip_p = typed<double>(t, "pipeline.vflip");
  a.scale_min = typed<double>(t, "pipeline.scale_min");
  a.scale_max = typed<double>(t, "pipeline.scale_max");
  a.mosaic_p = typed<double>(t, "pipeline.mosaic");
  a.crop_size = typed<Index>(t, "pipeline.crop_size");
  a.validate();
  if (a.crop_size != m.input_size) throw ConfigError("config: pipeline.crop_size must equal network.input_size");
  c.tta.flips.clear();
  for (const auto& f : detail::split_list(t.get<std::string>("pipeline.tta_flips"))) c.tta.flips.push_back(parse_flip(f));
  c.tta.scales.clear();
  for (const auto& s : detail::split_list(t.get<std::string>("pipeline.tta_scales"))) {
    pt::ptree one;
    one.put("v", s);
    c.tta.scales.push_back(typed<double>(one, "v"));
  }
  c.tta.validate(m.input_size, m.input_size);
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path.parent_path());
}

}  // namespace pmamba::pipeline
