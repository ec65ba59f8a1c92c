#pragma once

#include <charconv>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "e3dp/error.hpp"
#include "e3dp/io.hpp"

namespace e3dp {

/// Flat key=value run configuration. Only registered keys are accepted;
/// every key has a default, so a frozen copy lists the complete run.
class RunConfig {
 public:
  struct Entry {
    std::string value;
    std::string help;
  };

  RunConfig() { register_defaults(); }

  static RunConfig parse(std::string_view text, const std::string& source) {
    RunConfig cfg;
    std::size_t line_no = 0;
    for (std::string_view line : detail::lines_of(text)) {
      ++line_no;
      const auto trimmed = trim(line);
      if (trimmed.empty() || trimmed.front() == '#') continue;
      const auto eq = trimmed.find('=');
      if (eq == std::string_view::npos) throw ConfigError(source + ":" + std::to_string(line_no) + ": expected key=value");
      try {
        cfg.set(std::string(trim(trimmed.substr(0, eq))), std::string(trim(trimmed.substr(eq + 1))));
      } catch (const ConfigError& e) {
        throw ConfigError(source + ":" + std::to_string(line_no) + ": " + e.what());
      }
    }
    return cfg;
  }

  static RunConfig load(const std::filesystem::path& path) {
    std::string text;
    try {
      text = detail::slurp(path);
    } catch (const IoError&) {
      throw ConfigError("cannot read config " + path.string());
    }
    return parse(text, path.string());
  }

  /// Applies a "key=value" override.
  void apply(std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos) throw ConfigError("override '" + std::string(assignment) + "' is not key=value");
    set(std::string(trim(assignment.substr(0, eq))), std::string(trim(assignment.substr(eq + 1))));
  }

  void set(const std::string& key, std::string value) {
    auto it = entries_.find(key);
    if (it == entries_.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second.value = std::move(value);
  }

  bool has(const std::string& key) const { return entries_.count(key) != 0; }

  const std::string& str(const std::string& key) const { return entry(key).value; }

  double real(const std::string& key) const {
    const auto& v = str(key);
    double out = 0.0;
    if (!detail::parse_double(v, out)) throw ConfigError(key + ": '" + v + "' is not a number");
    return out;
  }

  long long integer(const std::string& key) const {
    const auto& v = str(key);
    long long out = 0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size())
      throw ConfigError(key + ": '" + v + "' is not an integer");
    return out;
  }

  std::uint64_t seed(const std::string& key) const {
    const auto& v = str(key);
    std::uint64_t out = 0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size())
      throw ConfigError(key + ": '" + v + "' is not an unsigned integer");
    return out;
  }

  bool flag(const std::string& key) const {
    const auto& v = str(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError(key + ": '" + v + "' is not a boolean");
  }

  /// Comma-separated list; empty items dropped.
  std::vector<std::string> list(const std::string& key) const {
    std::vector<std::string> out;
    std::string_view v = str(key);
    while (!v.empty()) {
      const auto c = v.find(',');
      const auto item = trim(v.substr(0, c));
      if (!item.empty()) out.emplace_back(item);
      if (c == std::string_view::npos) break;
      v.remove_prefix(c + 1);
    }
    return out;
  }

  /// All keys in sorted order with their values.
  std::string text() const {
    std::string out;
    for (const auto& [k, e] : entries_) out += k + " = " + e.value + "\n";
    return out;
  }

  const std::map<std::string, Entry>& entries() const noexcept { return entries_; }

 private:
  static std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
  }

  const Entry& entry(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second;
  }

  void def(const std::string& key, std::string value, std::string help) {
    entries_[key] = {std::move(value), std::move(help)};
  }

  void register_defaults() {
    def("command", "", "subcommand this config was frozen from; checked when set");
    def("seed", "0", "master seed");
    // inputs
    def("io.inputs", "", "clouds: comma list of files, directories, or a manifest .json");
    def("io.split", "train", "manifest split used for io.inputs (train or val)");
    def("io.weak_dir", "", "directory with <cloud id>.weak files");
    def("io.checkpoint", "", "input checkpoint");
    def("io.pred", "", "predicted clouds (evaluate)");
    def("io.gt", "", "ground-truth clouds (evaluate)");
    def("io.instances_dir", "", "directory with <cloud id>.instances.json (evaluate)");
    def("io.truth", "", "ground-truth trait CSV (traits)");
    def("io.strip_soil", "true", "drop soil points on load, before weak labels");
    // backbone and heads
    def("model.input_dim", "6", "3 = coordinates only, 6 = coordinates and colors");
    def("model.hidden", "32", "hidden width C");
    def("model.blocks", "3", "aggregation blocks T");
    def("model.output", "32", "feature dimension D");
    def("model.voxel_size", "1.0", "mm");
    def("model.aggregation_radius", "4.0", "mm");
    def("model.coord_scale", "20.0", "mm; centered coordinates are divided by this");
    def("model.num_classes", "2", "semantic classes");
    def("model.offset_scale", "10.0", "mm per unit of offset head output");
    def("model.precision", "f32", "f32 or f64 training arithmetic");
    // augmentation
    def("augment.rotation_z_max", "3.141592653589793", "rad");
    def("augment.rotation_xy_max", "0.1", "rad");
    def("augment.scale_lo", "0.9", "");
    def("augment.scale_hi", "1.1", "");
    def("augment.jitter_sigma", "0.2", "mm");
    def("augment.flip_probability", "0.5", "per horizontal axis");
    def("augment.color_jitter_sigma", "0.05", "");
    // pretraining
    def("pretrain.iterations", "1000", "");
    def("pretrain.batch_size", "2", "");
    def("pretrain.lr", "0.1", "");
    def("pretrain.lr_power", "0.9", "");
    def("pretrain.momentum", "0.9", "");
    def("pretrain.weight_decay", "0", "");
    def("pretrain.lambda", "0.005", "off-diagonal weight");
    def("pretrain.samples", "1024", "FPS sample count H");
    def("pretrain.checkpoint_every", "0", "0 disables periodic checkpoints");
    // fine-tuning
    def("finetune.iterations", "1000", "");
    def("finetune.batch_size", "2", "");
    def("finetune.lr", "0.1", "");
    def("finetune.lr_power", "0.9", "");
    def("finetune.momentum", "0.9", "");
    def("finetune.weight_decay", "0", "");
    def("finetune.sem_weight", "1", "");
    def("finetune.reg_weight", "1", "");
    def("finetune.dir_weight", "1", "");
    def("finetune.augment", "true", "augment views during fine-tuning");
    def("finetune.baseline", "false", "random backbone initialization instead of io.checkpoint");
    def("finetune.checkpoint_every", "0", "");
    // weak labels
    def("weak.k", "100", "labeled points per cloud");
    def("weak.balanced", "false", "experimental class-cycling draw");
    def("weak.subsample_ratio", "1", "random subsample ratio applied before drawing labels");
    // clustering
    def("cluster.radius", "1.5", "mm, original coordinates");
    def("cluster.shift_radius", "1.5", "mm, shifted coordinates");
    def("cluster.min_size", "50", "points");
    def("cluster.merge_iou", "0.75", "> 1 disables merging");
    // evaluation and traits
    def("metrics.eleven_point", "false", "11-point PR interpolation");
    def("traits.neighbors", "10", "k of the geodesic graph");
    def("traits.min_leaf_points", "50", "");
    def("traits.smooth_neighbors", "40", "tangent-plane projection neighborhood for leaves; 0 disables");
    def("traits.source", "predicted", "label provenance recorded in the report");
    // synthetic plants
    def("synth.count", "30", "plants");
    def("synth.holdout", "10", "plants listed under the val split");
    def("synth.density", "3.5", "points per mm^2");
    def("synth.jitter", "0.5", "grid jitter fraction");
    def("synth.noise_sigma", "0", "mm, along surface normals");
    def("synth.holes", "0", "holes per leaf");
    def("synth.hole_radius", "1.5", "mm");
    def("synth.min_leaves", "4", "");
    def("synth.max_leaves", "6", "");
    def("synth.format", "xyzl", "xyzl or ply");
    // service
    def("serve.host", "127.0.0.1", "");
    def("serve.port", "8080", "");
    def("serve.data_dir", "", "directory of clouds to serve");
    def("serve.session_dir", "", "label session files; defaults to <data_dir>/sessions");
    def("serve.budget", "300000", "default display budget (points)");
  }

  std::map<std::string, Entry> entries_;
};

}  // namespace e3dp
