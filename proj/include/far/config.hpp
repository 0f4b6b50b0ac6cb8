#pragma once

// Run configuration: one JSON document with a section per command. Unknown
// keys are errors. Relative paths resolve against the working directory.

#include <cstdint>
#include <cstdio>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "far/data.hpp"
#include "far/errors.hpp"
#include "far/footprint_analysis.hpp"
#include "far/io.hpp"
#include "far/synthetic.hpp"
#include "far/training.hpp"
#include "far/upscale.hpp"

namespace far {

inline constexpr int kConfigSchemaVersion = 1;

/// Reads keys of one JSON object and remembers which were used.
class ConfigReader {
 public:
  ConfigReader(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  template <typename T>
  T get(const std::string& key, T fallback) {
    seen_.insert(key);
    if (!j_.contains(key)) return fallback;
    return convert<T>(key);
  }

  template <typename T>
  T require(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) throw ConfigError(where_ + ": missing required key '" + key + "'");
    return convert<T>(key);
  }

  ConfigReader child(const std::string& key) {
    seen_.insert(key);
    static const Json empty = Json::object();
    return ConfigReader(j_.contains(key) ? j_.at(key) : empty, where_ + "." + key);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError(where_ + ": unknown key '" + k + "'");
  }

 private:
  template <typename T>
  T convert(const std::string& key) const {
    try {
      return j_.at(key).get<T>();
    } catch (const Json::exception&) {
      throw ConfigError(where_ + "." + key + ": wrong type");
    }
  }

  const Json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

struct SynthSection {
  std::uint64_t seed = 0;
  fs::path dataset_dir;
  fs::path truth_dir;
  SynthConfig synth;
  std::optional<fs::path> region_dir;
  RegionSynthConfig region;
};

struct TrainSection {
  fs::path dataset_dir;
  fs::path output_dir;
  std::uint64_t split_seed = 0;
  SplitRules split_rules;
  TrainConfig train;
  bool baseline = true;
};

struct ImportanceSection {
  std::vector<std::string> features;
  std::size_t repeats = 3;
  std::uint64_t seed = 0;
  std::size_t max_samples = 2000;
};

struct EvalSection {
  fs::path dataset_dir;
  fs::path checkpoint;
  fs::path baseline_checkpoint;
  fs::path splits;
  fs::path output_dir;
  std::vector<std::string> splits_evaluated = {"test_site"};
  std::optional<ImportanceSection> importance;
};

struct ScanSpec {
  ScanVariable variable = ScanVariable::ustar;
  std::vector<double> grid;
};

struct FootprintSection {
  fs::path dataset_dir;
  fs::path checkpoint;
  fs::path splits;
  fs::path output_dir;
  std::string split = "test_site";
  std::size_t max_samples = 2000;
  std::uint64_t seed = 0;
  double wind_bin_deg = 30.0;
  std::vector<ScanSpec> scans;
};

struct UpscaleSection {
  fs::path checkpoint;
  fs::path region_dir;
  fs::path output_dir;
  Index tile_size = 64;
  std::optional<Timestamp> begin;
  std::optional<Timestamp> end;
};

struct RunConfig {
  Json source;
  std::optional<SynthSection> synth;
  std::optional<TrainSection> train;
  std::optional<EvalSection> eval;
  std::optional<FootprintSection> footprint;
  std::optional<UpscaleSection> upscale;

  /// FNV-1a of the canonical (key-sorted, compact) document.
  std::string hash() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(source.dump())));
    return buf;
  }
};

namespace detail {

inline PlumeParams parse_plume(ConfigReader r) {
  PlumeParams p;
  p.peak_distance_scale = r.get("peak_distance_scale", p.peak_distance_scale);
  p.along_spread = r.get("along_spread", p.along_spread);
  p.cross_spread = r.get("cross_spread", p.cross_spread);
  p.ustar_floor = r.get("ustar_floor", p.ustar_floor);
  r.finish();
  p.validate();
  return p;
}

inline SynthSection parse_synth(ConfigReader r) {
  SynthSection s;
  s.seed = r.require<std::uint64_t>("seed");
  s.dataset_dir = r.require<std::string>("dataset_dir");
  s.truth_dir = r.require<std::string>("truth_dir");
  auto& c = s.synth;
  c.rows = r.get("rows", c.rows);
  c.cols = r.get("cols", c.cols);
  c.pixel_size_m = r.get("pixel_size_m", c.pixel_size_m);
  c.sites = r.get("sites", c.sites);
  c.regions_per_site = r.get("regions_per_site", c.regions_per_site);
  if (r.has("start")) c.start = parse_iso8601(r.require<std::string>("start"));
  c.days = r.get("days", c.days);
  c.patch_interval_days = r.get("patch_interval_days", c.patch_interval_days);
  c.pixel_noise = r.get("pixel_noise", c.pixel_noise);
  c.scene_noise = r.get("scene_noise", c.scene_noise);
  c.cloud_fraction = r.get("cloud_fraction", c.cloud_fraction);
  c.noise_fraction = r.get("noise_fraction", c.noise_fraction);
  c.tower_height_min = r.get("tower_height_min", c.tower_height_min);
  c.tower_height_max = r.get("tower_height_max", c.tower_height_max);
  c.ecosystem_mode = r.get("ecosystem_mode", c.ecosystem_mode);
  c.ecosystem_code = r.get("ecosystem_code", c.ecosystem_code);
  if (c.ecosystem_mode != "single" && c.ecosystem_mode != "dominant_class")
    throw ConfigError("synth.ecosystem_mode must be 'single' or 'dominant_class'");
  if (r.has("geometries")) {
    c.geometries.clear();
    for (const auto& g : r.require<std::vector<std::string>>("geometries")) c.geometries.push_back(parse_region_geometry(g));
    if (c.geometries.empty()) throw ConfigError("synth.geometries must not be empty");
  }
  c.plume = parse_plume(r.child("plume"));
  if (r.has("region")) {
    auto rr = r.child("region");
    s.region_dir = rr.require<std::string>("output_dir");
    auto& g = s.region;
    g.rows = rr.get("rows", g.rows);
    g.cols = rr.get("cols", g.cols);
    g.driver_cell_pixels = rr.get("driver_cell_pixels", g.driver_cell_pixels);
    g.days = rr.get("days", g.days);
    g.frame_interval_days = rr.get("frame_interval_days", g.frame_interval_days);
    g.blobs = rr.get("blobs", g.blobs);
    g.disturbance_day = rr.get("disturbance_day", g.disturbance_day);
    g.disturbance_fraction = rr.get("disturbance_fraction", g.disturbance_fraction);
    rr.finish();
  }
  r.finish();
  c.validate();
  return s;
}

inline TrainSection parse_train(ConfigReader r) {
  TrainSection s;
  s.dataset_dir = r.require<std::string>("dataset_dir");
  s.output_dir = r.require<std::string>("output_dir");
  s.split_seed = r.require<std::uint64_t>("split_seed");
  s.split_rules.min_group_sites = r.get("min_group_sites", s.split_rules.min_group_sites);
  s.split_rules.withheld_site_fraction = r.get("withheld_site_fraction", s.split_rules.withheld_site_fraction);
  s.split_rules.val_sample_fraction = r.get("val_sample_fraction", s.split_rules.val_sample_fraction);
  auto& t = s.train;
  t.seed = r.require<std::uint64_t>("seed");
  t.lambda = r.get("lambda", t.lambda);
  t.entropy_sign = parse_entropy_sign(r.get<std::string>("entropy_sign", to_string(t.entropy_sign)));
  t.learning_rate = r.get("learning_rate", t.learning_rate);
  t.batch_size = r.get("batch_size", t.batch_size);
  t.max_epochs = r.get("max_epochs", t.max_epochs);
  t.patience = r.get("patience", t.patience);
  t.augment = r.get("augment", t.augment);
  const auto mode = r.get<std::string>("augment_mode", "arbitrary");
  if (mode == "arbitrary") t.augment_mode = AugmentMode::arbitrary;
  else if (mode == "quarter_turns") t.augment_mode = AugmentMode::quarter_turns;
  else throw ConfigError("train.augment_mode must be 'arbitrary' or 'quarter_turns'");
  t.hidden_width = r.get("hidden_width", t.hidden_width);
  t.hidden_layers = r.get("hidden_layers", t.hidden_layers);
  t.samples_per_epoch = r.get("samples_per_epoch", t.samples_per_epoch);
  t.max_eval_samples = r.get("max_eval_samples", t.max_eval_samples);
  t.progress = r.get("progress", t.progress);
  s.baseline = r.get("baseline", s.baseline);
  r.finish();
  t.validate();
  return s;
}

inline EvalSection parse_eval(ConfigReader r) {
  EvalSection s;
  s.dataset_dir = r.require<std::string>("dataset_dir");
  s.checkpoint = r.require<std::string>("checkpoint");
  s.baseline_checkpoint = r.require<std::string>("baseline_checkpoint");
  s.splits = r.require<std::string>("splits");
  s.output_dir = r.require<std::string>("output_dir");
  s.splits_evaluated = r.get("evaluate", s.splits_evaluated);
  for (const auto& n : s.splits_evaluated)
    if (n != "test_site" && n != "test_future" && n != "val_site" && n != "val_future" && n != "val")
      throw ConfigError("eval.evaluate: unknown split '" + n + "'");
  if (r.has("importance")) {
    auto ir = r.child("importance");
    ImportanceSection imp;
    imp.features = ir.require<std::vector<std::string>>("features");
    imp.repeats = ir.get("repeats", imp.repeats);
    imp.seed = ir.require<std::uint64_t>("seed");
    imp.max_samples = ir.get("max_samples", imp.max_samples);
    ir.finish();
    s.importance = imp;
  }
  r.finish();
  return s;
}

inline FootprintSection parse_footprint(ConfigReader r) {
  FootprintSection s;
  s.dataset_dir = r.require<std::string>("dataset_dir");
  s.checkpoint = r.require<std::string>("checkpoint");
  s.splits = r.require<std::string>("splits");
  s.output_dir = r.require<std::string>("output_dir");
  s.split = r.get("split", s.split);
  s.max_samples = r.get("max_samples", s.max_samples);
  s.seed = r.require<std::uint64_t>("seed");
  s.wind_bin_deg = r.get("wind_bin_deg", s.wind_bin_deg);
  if (r.has("scans")) {
    const Json scans = r.require<Json>("scans");
    if (!scans.is_object()) throw ConfigError("footprint.scans must map variable names to grids");
    for (const auto& [name, grid] : scans.items()) {
      ScanSpec sp;
      sp.variable = parse_scan_variable(name);
      try {
        sp.grid = grid.get<std::vector<double>>();
      } catch (const Json::exception&) {
        throw ConfigError("footprint.scans." + name + ": expected a list of numbers");
      }
      s.scans.push_back(std::move(sp));
    }
  }
  r.finish();
  return s;
}

inline UpscaleSection parse_upscale(ConfigReader r) {
  UpscaleSection s;
  s.checkpoint = r.require<std::string>("checkpoint");
  s.region_dir = r.require<std::string>("region_dir");
  s.output_dir = r.require<std::string>("output_dir");
  s.tile_size = r.get("tile_size", s.tile_size);
  if (s.tile_size < 1) throw ConfigError("upscale.tile_size must be >= 1");
  if (r.has("begin")) s.begin = parse_iso8601(r.require<std::string>("begin"));
  if (r.has("end")) s.end = parse_iso8601(r.require<std::string>("end"));
  r.finish();
  return s;
}

}  // namespace detail

inline RunConfig parse_run_config(const Json& j) {
  RunConfig c;
  c.source = j;
  ConfigReader r(j, "config");
  const int version = r.require<int>("schema_version");
  if (version != kConfigSchemaVersion)
    throw ConfigError("unsupported config schema_version " + std::to_string(version));
  try {
    if (r.has("synth")) c.synth = detail::parse_synth(r.child("synth"));
    if (r.has("train")) c.train = detail::parse_train(r.child("train"));
    if (r.has("eval")) c.eval = detail::parse_eval(r.child("eval"));
    if (r.has("footprint")) c.footprint = detail::parse_footprint(r.child("footprint"));
    if (r.has("upscale")) c.upscale = detail::parse_upscale(r.child("upscale"));
  } catch (const InputError& e) {
    throw ConfigError(e.what());
  }
  r.finish();
  return c;
}

inline RunConfig load_run_config(const fs::path& path) {
  Json j;
  try {
    j = Json::parse(read_file(path));
  } catch (const Json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  return parse_run_config(j);
}

}  // namespace far
