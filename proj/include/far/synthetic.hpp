#pragma once

// Synthetic landscapes with known pixel fluxes and footprints.
//
// Each site is a mosaic of land-cover classes. A class fixes the mean band
// reflectances and the flux response
//   FC = -a SW_IN / (SW_IN + s) + r q^((TA - 10) / 10),
// so a model that reads bands and drivers can recover pixel fluxes exactly.
// Tower targets are the analytic-plume-weighted average of the pixel fluxes
// plus Gaussian noise.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "far/data.hpp"
#include "far/errors.hpp"
#include "far/footprint_analysis.hpp"
#include "far/io.hpp"
#include "far/rng.hpp"
#include "far/time.hpp"

namespace far {

struct LandClass {
  std::string name;
  std::string ecosystem;  // IGBP-style code
  std::vector<double> band_means;
  double light_capacity = 10.0;  // a, umol m-2 s-1
  double half_saturation = 300;  // s, W m-2
  double respiration = 2.0;      // r at 10 degC
  double q10 = 2.0;

  double flux(const DriverVector& d) const {
    return -light_capacity * d.sw_in / (d.sw_in + half_saturation) + respiration * std::pow(q10, (d.ta - 10.0) / 10.0);
  }
};

inline std::vector<LandClass> default_land_classes() {
  return {
      {"forest", "ENF", {0.03, 0.03, 0.34, 0.14}, 22.0, 300.0, 4.0, 2.0},
      {"grassland", "GRA", {0.05, 0.08, 0.28, 0.26}, 11.0, 400.0, 2.5, 2.0},
      {"wetland", "WET", {0.04, 0.05, 0.16, 0.06}, 15.0, 250.0, 5.0, 1.8},
      {"shrubland", "OSH", {0.10, 0.19, 0.24, 0.36}, 3.0, 500.0, 1.0, 1.5},
  };
}

enum class RegionGeometry { half_plane, quadrant, disk };

inline RegionGeometry parse_region_geometry(std::string_view s) {
  if (s == "half_plane") return RegionGeometry::half_plane;
  if (s == "quadrant") return RegionGeometry::quadrant;
  if (s == "disk") return RegionGeometry::disk;
  throw ConfigError("unknown region geometry '" + std::string(s) + "'");
}

inline const char* to_string(RegionGeometry g) {
  switch (g) {
    case RegionGeometry::half_plane: return "half_plane";
    case RegionGeometry::quadrant: return "quadrant";
    case RegionGeometry::disk: return "disk";
  }
  return "?";
}

struct SynthConfig {
  Index rows = 32;
  Index cols = 32;
  double pixel_size_m = 30.0;
  std::vector<std::string> band_names = {"Blue", "Red", "NIR", "SWIR1"};
  std::size_t sites = 12;
  int regions_per_site = 2;  // 1 (homogeneous) or 2
  std::vector<LandClass> classes = default_land_classes();
  std::vector<RegionGeometry> geometries = {RegionGeometry::half_plane, RegionGeometry::quadrant, RegionGeometry::disk};
  Timestamp start = from_civil(2021, 1, 1);
  double days = 365.0;
  double patch_interval_days = 16.0;
  double pixel_noise = 0.01;  // static per-pixel reflectance noise
  double scene_noise = 0.004;
  double cloud_fraction = 0.05;  // first patch stays cloud-free
  double noise_fraction = 0.1;   // measurement noise sd as a fraction of target sd
  double tower_height_min = 3.0;
  double tower_height_max = 8.0;
  PlumeParams plume;
  std::string ecosystem_mode = "single";  // "single" or "dominant_class"
  std::string ecosystem_code = "SYN";

  void validate() const {
    if (rows < 5 || cols < 5) throw ConfigError("synthetic grid must be at least 5x5");
    if (sites < 1) throw ConfigError("need at least one site");
    if (regions_per_site < 1 || regions_per_site > 2) throw ConfigError("regions_per_site must be 1 or 2");
    if (classes.size() < static_cast<std::size_t>(regions_per_site)) throw ConfigError("not enough land classes");
    for (const auto& c : classes)
      if (c.band_means.size() != band_names.size()) throw ConfigError("class band means do not match band names");
    if (!(days > 0.0) || !(patch_interval_days > 0.0)) throw ConfigError("time span must be positive");
    if (noise_fraction < 0.0 || cloud_fraction < 0.0 || cloud_fraction >= 1.0)
      throw ConfigError("noise and cloud fractions out of range");
    if (!(tower_height_min > 0.0) || tower_height_max < tower_height_min) throw ConfigError("bad tower height range");
    if (geometries.empty()) throw ConfigError("need at least one region geometry");
    if (ecosystem_mode != "single" && ecosystem_mode != "dominant_class")
      throw ConfigError("ecosystem_mode must be 'single' or 'dominant_class'");
    plume.validate();
  }
};

struct SiteTruth {
  std::vector<int> class_map;  // row-major [rows][cols]
  std::vector<double> noiseless_targets;
  RegionGeometry geometry = RegionGeometry::half_plane;
};

struct GroundTruth {
  Index rows = 0;
  Index cols = 0;
  double pixel_size_m = 30.0;
  std::vector<LandClass> classes;
  PlumeParams plume;
  double noise_sigma = 0.0;
  std::vector<SiteTruth> sites;

  FluxGrid pixel_flux(std::size_t site, const DriverVector& d) const {
    FluxGrid g;
    g.values.resize(rows, cols);
    const auto& map = sites.at(site).class_map;
    std::vector<double> per_class(classes.size());
    for (std::size_t k = 0; k < classes.size(); ++k) per_class[k] = classes[k].flux(d);
    for (Index r = 0; r < rows; ++r)
      for (Index c = 0; c < cols; ++c) g.values(r, c) = per_class[static_cast<std::size_t>(map[static_cast<std::size_t>(r * cols + c)])];
    return g;
  }

  FootprintGrid footprint(const FootprintVector& v) const { return analytic_plume(v, plume, rows, cols, pixel_size_m); }
};

struct SyntheticDataset {
  Dataset dataset;
  GroundTruth truth;
};

namespace detail {

inline std::vector<int> make_class_map(Index rows, Index cols, int a, int b, RegionGeometry g, Rng& rng) {
  std::vector<int> map(static_cast<std::size_t>(rows * cols), a);
  const double cr = 0.5 * static_cast<double>(rows - 1), cc = 0.5 * static_cast<double>(cols - 1);
  const double span = 0.1 * static_cast<double>(std::min(rows, cols));
  const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double ox = rng.uniform(-span, span), oy = rng.uniform(-span, span);
  const double radius = rng.uniform(0.15, 0.3) * static_cast<double>(std::min(rows, cols));
  const double ct = std::cos(theta), st = std::sin(theta);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) {
      const double x = static_cast<double>(c) - cc, y = cr - static_cast<double>(r);
      // Coordinates in a frame rotated by theta and shifted by (ox, oy).
      const double u = ct * x + st * y - ox, v = -st * x + ct * y - oy;
      bool in_b = false;
      switch (g) {
        case RegionGeometry::half_plane: in_b = u > 0.0; break;
        case RegionGeometry::quadrant: in_b = u > 0.0 && v > 0.0; break;
        case RegionGeometry::disk: in_b = u * u + v * v < radius * radius; break;
      }
      if (in_b) map[static_cast<std::size_t>(r * cols + c)] = b;
    }
  return map;
}

inline double solar_elevation_sine(double latitude_deg, double doy, double hour) {
  const double lat = latitude_deg * std::numbers::pi / 180.0;
  const double decl = 23.44 * std::numbers::pi / 180.0 * std::sin(2.0 * std::numbers::pi * (284.0 + doy) / 365.0);
  const double ha = (hour - 12.0) * std::numbers::pi / 12.0;
  return std::sin(lat) * std::sin(decl) + std::cos(lat) * std::cos(decl) * std::cos(ha);
}

}  // namespace detail

/// Per-half-hour weather for one site: diurnal/seasonal radiation and
/// temperature, humidity anti-correlated with temperature, daily prevailing
/// wind with half-hourly scatter.
struct SiteClimate {
  double latitude = 45.0;
  double mean_ta = 10.0;
  double height = 5.0;
};

inline SyntheticDataset generate_synthetic(const SynthConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  SyntheticDataset out;
  Dataset& ds = out.dataset;
  GroundTruth& gt = out.truth;
  ds.rows = cfg.rows;
  ds.cols = cfg.cols;
  ds.band_names = cfg.band_names;
  ds.pixel_size_m = cfg.pixel_size_m;
  gt.rows = cfg.rows;
  gt.cols = cfg.cols;
  gt.pixel_size_m = cfg.pixel_size_m;
  gt.classes = cfg.classes;
  gt.plume = cfg.plume;

  const auto n_classes = static_cast<int>(cfg.classes.size());
  std::vector<std::pair<int, int>> pairs;
  if (cfg.regions_per_site == 1) {
    for (int a = 0; a < n_classes; ++a) pairs.emplace_back(a, a);
  } else {
    for (int a = 0; a < n_classes; ++a)
      for (int b = a + 1; b < n_classes; ++b) pairs.emplace_back(a, b);
  }
  Rng layout_rng(derive_seed(seed, 1));
  layout_rng.shuffle(std::span<std::pair<int, int>>(pairs));

  const auto n_steps = static_cast<std::size_t>(std::llround(cfg.days * kDaySeconds / kHalfHourSeconds));
  const auto n_patches = static_cast<std::size_t>(std::floor(cfg.days / cfg.patch_interval_days - 1e-9)) + 1;
  const Index P = cfg.rows * cfg.cols;
  const auto D = static_cast<Index>(cfg.band_names.size());

  for (std::size_t s = 0; s < cfg.sites; ++s) {
    Rng rng(derive_seed(seed, 100 + s));
    SiteDataset site;
    char id[32];
    std::snprintf(id, sizeof id, "SYN-%03zu", s + 1);
    site.site_id = id;
    site.tower_row = cfg.rows / 2;
    site.tower_col = cfg.cols / 2;
    SiteClimate clim{rng.uniform(30.0, 50.0), rng.uniform(6.0, 14.0),
                     rng.uniform(cfg.tower_height_min, cfg.tower_height_max)};
    site.tower_height_m = clim.height;

    auto [ca, cb] = pairs[s % pairs.size()];
    if (rng.uniform() < 0.5) std::swap(ca, cb);
    SiteTruth truth;
    truth.geometry = cfg.geometries[s % cfg.geometries.size()];
    truth.class_map = detail::make_class_map(cfg.rows, cfg.cols, ca, cb, truth.geometry, rng);
    std::vector<std::size_t> class_count(cfg.classes.size(), 0);
    for (int k : truth.class_map) ++class_count[static_cast<std::size_t>(k)];
    const auto dominant = static_cast<std::size_t>(
        std::distance(class_count.begin(), std::max_element(class_count.begin(), class_count.end())));
    site.ecosystem = cfg.ecosystem_mode == "single" ? cfg.ecosystem_code : cfg.classes[dominant].ecosystem;

    // Static per-pixel reflectance texture.
    std::vector<double> texture(static_cast<std::size_t>(P * D));
    for (auto& t : texture) t = rng.normal(0.0, cfg.pixel_noise);

    for (std::size_t i = 0; i < n_patches; ++i) {
      ScenePatch p = ScenePatch::filled(cfg.rows, cfg.cols, D);
      p.pixel_size_m = cfg.pixel_size_m;
      p.timestamp = cfg.start + static_cast<Timestamp>(std::llround(static_cast<double>(i) * cfg.patch_interval_days *
                                                                    static_cast<double>(kDaySeconds)));
      const double doy = static_cast<double>(i) * cfg.patch_interval_days;
      const double noon = std::asin(std::clamp(detail::solar_elevation_sine(clim.latitude, doy, 10.5), -1.0, 1.0));
      p.angles = {wrap_degrees(150.0 + rng.normal(0.0, 5.0)), 90.0 - noon * 180.0 / std::numbers::pi,
                  rng.uniform() < 0.5 ? 100.0 : 280.0, rng.uniform(0.0, 7.5)};
      std::vector<double> offset(static_cast<std::size_t>(D));
      for (auto& o : offset) o = rng.normal(0.0, cfg.scene_noise);
      for (Index r = 0; r < cfg.rows; ++r)
        for (Index c = 0; c < cfg.cols; ++c) {
          const auto pix = static_cast<std::size_t>(r * cfg.cols + c);
          const auto& cls = cfg.classes[static_cast<std::size_t>(truth.class_map[pix])];
          const bool cloudy = i > 0 && rng.uniform() < cfg.cloud_fraction;
          for (Index d = 0; d < D; ++d) {
            const auto di = static_cast<std::size_t>(d);
            p.at(r, c, d) = cloudy ? 0.6 + rng.normal(0.0, 0.02)
                                   : cls.band_means[di] + texture[pix * static_cast<std::size_t>(D) + di] + offset[di];
          }
          if (cloudy) p.quality_at(r, c) = PixelQuality::cloud;
        }
      site.patches.push_back(std::move(p));
    }

    double day_wd = rng.uniform(0.0, 360.0), cloudiness = 1.0, ta_anom = 0.0;
    site.samples.reserve(n_steps);
    for (std::size_t k = 0; k < n_steps; ++k) {
      HalfHourSample smp;
      smp.timestamp = cfg.start + static_cast<Timestamp>(k) * kHalfHourSeconds;
      const double doy = static_cast<double>(k) / 48.0;
      const double hour = static_cast<double>(k % 48) / 2.0 + 0.25;
      if (k % 48 == 0) {
        day_wd = rng.uniform(0.0, 360.0);
        cloudiness = rng.uniform(0.35, 1.0);
      }
      const double sin_el = detail::solar_elevation_sine(clim.latitude, std::floor(doy), hour);
      smp.drivers.sw_in = sin_el > 0.0 ? 1000.0 * std::pow(sin_el, 1.15) * cloudiness : 0.0;
      ta_anom = 0.97 * ta_anom + rng.normal(0.0, 0.3);
      smp.drivers.ta = clim.mean_ta + 11.0 * std::sin(2.0 * std::numbers::pi * (doy - 105.0) / 365.0) +
                       4.0 * std::sin(2.0 * std::numbers::pi * (hour - 9.0) / 24.0) + ta_anom;
      smp.drivers.rh = std::clamp(70.0 - 2.0 * (smp.drivers.ta - clim.mean_ta) + rng.normal(0.0, 6.0), 5.0, 100.0);
      smp.fp.wd = wrap_degrees(day_wd + rng.normal(0.0, 25.0));
      smp.fp.ws = std::exp(rng.normal(1.0, 0.35));
      smp.fp.ustar = std::clamp(0.09 * smp.fp.ws + 0.08 + rng.normal(0.0, 0.03), 0.15, 1.5);
      smp.fp.ta = smp.drivers.ta;
      smp.fp.h = 0.35 * smp.drivers.sw_in - 15.0 + rng.normal(0.0, 12.0);
      smp.fp.height = clim.height;
      const auto ref = latest_patch_at(site.patches, smp.timestamp);
      smp.patch_ref = ref.value_or(0);

      const FootprintGrid fp = analytic_plume(smp.fp, cfg.plume, cfg.rows, cfg.cols, cfg.pixel_size_m);
      std::vector<double> mass(cfg.classes.size(), 0.0);
      for (Index r = 0; r < cfg.rows; ++r)
        for (Index c = 0; c < cfg.cols; ++c)
          mass[static_cast<std::size_t>(truth.class_map[static_cast<std::size_t>(r * cfg.cols + c)])] += fp(r, c);
      double y = 0.0;
      for (std::size_t m = 0; m < mass.size(); ++m)
        if (mass[m] > 0.0) y += mass[m] * cfg.classes[m].flux(smp.drivers);
      smp.target_fc = y;
      truth.noiseless_targets.push_back(y);
      site.samples.push_back(smp);
    }
    ds.sites.push_back(std::move(site));
    gt.sites.push_back(std::move(truth));
  }

  // Measurement noise scales with the spread of the noiseless signal.
  StatsAccumulator acc(1);
  for (const auto& t : gt.sites)
    for (double y : t.noiseless_targets) acc.add(std::span<const double>(&y, 1));
  double sd = 0.0;
  if (acc.count() > 1) {
    const FeatureStats st = acc.finish("target");
    sd = st.clamped[0] ? 0.0 : st.std[0];
  }
  gt.noise_sigma = cfg.noise_fraction * sd;
  if (gt.noise_sigma > 0.0) {
    for (std::size_t s = 0; s < ds.sites.size(); ++s) {
      Rng noise(derive_seed(seed, 10000 + s));
      for (auto& smp : ds.sites[s].samples) smp.target_fc += noise.normal(0.0, gt.noise_sigma);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ground truth files

inline Json to_json(const LandClass& c) {
  return {{"name", c.name},
          {"ecosystem", c.ecosystem},
          {"band_means", c.band_means},
          {"light_capacity", c.light_capacity},
          {"half_saturation", c.half_saturation},
          {"respiration", c.respiration},
          {"q10", c.q10}};
}

inline void write_ground_truth(const fs::path& dir, const Dataset& ds, const GroundTruth& gt) {
  fs::create_directories(dir);
  Json j;
  j["format"] = "far-ground-truth";
  j["version"] = 1;
  j["grid"] = {{"rows", gt.rows}, {"cols", gt.cols}};
  j["pixel_size_m"] = gt.pixel_size_m;
  j["noise_sigma"] = gt.noise_sigma;
  j["plume"] = {{"peak_distance_scale", gt.plume.peak_distance_scale},
                {"along_spread", gt.plume.along_spread},
                {"cross_spread", gt.plume.cross_spread},
                {"ustar_floor", gt.plume.ustar_floor}};
  j["flux_model"] = "FC = -a*SW_IN/(SW_IN+s) + r*q10^((TA-10)/10)";
  Json classes = Json::array();
  for (const auto& c : gt.classes) classes.push_back(to_json(c));
  j["classes"] = classes;
  Json sites = Json::array();
  for (std::size_t s = 0; s < gt.sites.size(); ++s) {
    const auto& id = ds.sites[s].site_id;
    sites.push_back({{"site_id", id},
                     {"geometry", to_string(gt.sites[s].geometry)},
                     {"class_map", gt.sites[s].class_map},
                     {"noiseless", id + "_noiseless.csv"}});
    CsvTable t;
    t.header = {"timestamp", "FC_true"};
    for (std::size_t i = 0; i < gt.sites[s].noiseless_targets.size(); ++i)
      t.rows.push_back({format_iso8601(ds.sites[s].samples[i].timestamp),
                        format_number(gt.sites[s].noiseless_targets[i])});
    write_file(dir / (id + "_noiseless.csv"), t.to_string());
  }
  j["sites"] = sites;
  write_json(dir / "truth.json", j);
}

}  // namespace far
