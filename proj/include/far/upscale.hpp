#pragma once

// Regional inference with the flux arm only. A region is a stack of band
// frames on a fine grid plus driver frames on a (possibly coarser) grid that
// shares the same top-left origin offset convention.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "far/data.hpp"
#include "far/errors.hpp"
#include "far/io.hpp"
#include "far/model.hpp"
#include "far/rng.hpp"
#include "far/synthetic.hpp"
#include "far/time.hpp"

namespace far {

struct DriverFrame {
  Timestamp timestamp = 0;
  std::vector<double> values;  // [row][col][SW_IN, TA, RH]
};

struct DriverGrid {
  Index rows = 0;
  Index cols = 0;
  double cell_size_m = 0.0;
  double offset_east_m = 0.0;   // grid top-left relative to the raster top-left
  double offset_south_m = 0.0;
  std::vector<DriverFrame> frames;

  const DriverFrame* at(Timestamp t) const {
    auto it = std::lower_bound(frames.begin(), frames.end(), t,
                               [](const DriverFrame& f, Timestamp v) { return f.timestamp < v; });
    return it != frames.end() && it->timestamp == t ? &*it : nullptr;
  }

  /// Nearest cell for a point given in metres east/south of the raster origin.
  std::optional<Index> cell(double east_m, double south_m) const {
    const double cr = std::floor((south_m - offset_south_m) / cell_size_m);
    const double cc = std::floor((east_m - offset_east_m) / cell_size_m);
    if (cr < 0 || cc < 0 || cr >= static_cast<double>(rows) || cc >= static_cast<double>(cols)) return std::nullopt;
    return static_cast<Index>(cr) * cols + static_cast<Index>(cc);
  }
};

struct RegionRaster {
  Index rows = 0;
  Index cols = 0;
  double pixel_size_m = 30.0;
  double origin_x = 0.0;  // map coordinates of the top-left corner
  double origin_y = 0.0;
  std::vector<std::string> band_names;
  std::vector<ScenePatch> frames;  // band frames sorted by time, rows x cols
  DriverGrid drivers;

  Index bands() const { return static_cast<Index>(band_names.size()); }

  void validate() const {
    if (rows < 1 || cols < 1) throw ShapeError("region grid must be non-empty");
    if (!(pixel_size_m > 0.0) || !(drivers.cell_size_m > 0.0)) throw ConfigError("cell sizes must be positive");
    for (const auto& f : frames)
      if (f.rows != rows || f.cols != cols || f.bands != bands()) throw ShapeError("band frame shape mismatch");
    for (std::size_t i = 1; i < frames.size(); ++i)
      if (frames[i].timestamp <= frames[i - 1].timestamp) throw DataError("band frames must be strictly time-ordered");
    for (std::size_t i = 1; i < drivers.frames.size(); ++i)
      if (drivers.frames[i].timestamp <= drivers.frames[i - 1].timestamp)
        throw DataError("driver frames must be strictly time-ordered");
    for (const auto& f : drivers.frames)
      if (f.values.size() != static_cast<std::size_t>(drivers.rows * drivers.cols * kDriverCount))
        throw ShapeError("driver frame size mismatch");
  }
};

struct Tile {
  Index row0 = 0;
  Index col0 = 0;
  Index rows = 0;
  Index cols = 0;
};

inline std::vector<Tile> make_tiles(Index rows, Index cols, Index tile_size) {
  if (tile_size < 1) throw ConfigError("tile_size must be >= 1");
  std::vector<Tile> t;
  for (Index r = 0; r < rows; r += tile_size)
    for (Index c = 0; c < cols; c += tile_size)
      t.push_back({r, c, std::min(tile_size, rows - r), std::min(tile_size, cols - c)});
  return t;
}

/// Flux for one tile, row-major within the tile. Pixels without driver
/// coverage or with unusable band values are NaN and marked `missing`.
struct TileResult {
  Tile tile;
  std::vector<double> values;
  std::vector<PixelQuality> mask;
};

inline TileResult upscale_tile(const FarModel& m, const ScenePatch& frame, const DriverGrid& grid,
                               const DriverFrame& drivers, double pixel_size_m, const Tile& tile) {
  const Index D = frame.bands;
  if (D != m.bands()) throw ShapeError("region band count does not match model");
  TileResult res;
  res.tile = tile;
  const auto n = static_cast<std::size_t>(tile.rows * tile.cols);
  res.values.assign(n, std::numeric_limits<double>::quiet_NaN());
  res.mask.assign(n, PixelQuality::missing);

  const auto ang = normalized_angles(m, frame.angles);
  std::vector<std::size_t> slot;
  Matrix x(m.flux_mlp.input_dim(), static_cast<Index>(n));
  Index used = 0;
  for (Index r = 0; r < tile.rows; ++r)
    for (Index c = 0; c < tile.cols; ++c) {
      const Index R = tile.row0 + r, C = tile.col0 + c;
      const auto cell = grid.cell((static_cast<double>(C) + 0.5) * pixel_size_m, (static_cast<double>(R) + 0.5) * pixel_size_m);
      if (!cell) continue;
      const double* dv = drivers.values.data() + static_cast<std::size_t>(*cell * kDriverCount);
      if (!std::isfinite(dv[0]) || !std::isfinite(dv[1]) || !std::isfinite(dv[2])) continue;
      if (frame.quality_at(R, C) == PixelQuality::never_observed) continue;
      const auto px = frame.pixel(R, C);
      bool ok = true;
      for (Index d = 0; d < D; ++d) {
        const double z = m.normalization.bands.apply(static_cast<std::size_t>(d), px[static_cast<std::size_t>(d)]);
        ok = ok && std::isfinite(z);
        x(d, used) = z;
      }
      if (!ok) continue;
      for (Index k = 0; k < kAngleCount; ++k) x(D + k, used) = ang[static_cast<std::size_t>(k)];
      for (Index k = 0; k < kDriverCount; ++k)
        x(D + kAngleCount + k, used) = m.normalization.drivers.apply(static_cast<std::size_t>(k), dv[k]);
      slot.push_back(static_cast<std::size_t>(r * tile.cols + c));
      ++used;
    }
  if (used == 0) return res;
  const Matrix z = flux_arm(m, x.leftCols(used));
  for (Index j = 0; j < used; ++j) {
    res.values[slot[static_cast<std::size_t>(j)]] = z(0, j);
    res.mask[slot[static_cast<std::size_t>(j)]] = PixelQuality::valid;
  }
  return res;
}

/// Full-raster flux for one timestep, row-major, with a mask.
struct FluxRaster {
  Timestamp timestamp = 0;
  Index rows = 0;
  Index cols = 0;
  std::vector<double> values;
  std::vector<PixelQuality> mask;

  double at(Index r, Index c) const { return values[static_cast<std::size_t>(r * cols + c)]; }
  bool valid(Index r, Index c) const { return mask[static_cast<std::size_t>(r * cols + c)] == PixelQuality::valid; }
};

struct UpscaleOptions {
  Index tile_size = 64;
  Timestamp begin = std::numeric_limits<Timestamp>::min();
  Timestamp end = std::numeric_limits<Timestamp>::max();  // inclusive
};

struct UpscaleSummary {
  std::size_t timesteps = 0;
  std::size_t missing_pixels = 0;  // pixel-timesteps without a prediction
};

using TileSink = std::function<void(std::size_t step, Timestamp t, const TileResult&)>;

/// Evaluates every driver timestep in [begin, end] tile by tile with the most
/// recent band frame. Throws DataError when no band frame precedes a step.
inline UpscaleSummary upscale_region(const FarModel& m, const RegionRaster& region, const UpscaleOptions& opt,
                                     const TileSink& sink) {
  region.validate();
  if (region.bands() != m.bands()) throw ShapeError("region band count does not match model");
  const auto tiles = make_tiles(region.rows, region.cols, opt.tile_size);
  UpscaleSummary sum;
  for (const auto& df : region.drivers.frames) {
    if (df.timestamp < opt.begin || df.timestamp > opt.end) continue;
    const auto fi = latest_patch_at(region.frames, df.timestamp);
    if (!fi) throw DataError("no band frame at or before " + format_iso8601(df.timestamp));
    for (const auto& tile : tiles) {
      TileResult tr = upscale_tile(m, region.frames[*fi], region.drivers, df, region.pixel_size_m, tile);
      sum.missing_pixels += static_cast<std::size_t>(std::count(tr.mask.begin(), tr.mask.end(), PixelQuality::missing));
      sink(sum.timesteps, df.timestamp, tr);
    }
    ++sum.timesteps;
  }
  if (sum.timesteps == 0) throw InputError("no driver timesteps inside the requested time range");
  return sum;
}

/// Assembles tiles into full rasters in memory.
inline std::vector<FluxRaster> upscale_to_rasters(const FarModel& m, const RegionRaster& region,
                                                  const UpscaleOptions& opt, UpscaleSummary* summary = nullptr) {
  std::vector<FluxRaster> out;
  const auto s = upscale_region(m, region, opt, [&](std::size_t step, Timestamp t, const TileResult& tr) {
    if (step == out.size()) {
      const auto n = static_cast<std::size_t>(region.rows * region.cols);
      out.push_back({t, region.rows, region.cols, std::vector<double>(n, std::numeric_limits<double>::quiet_NaN()),
                     std::vector<PixelQuality>(n, PixelQuality::missing)});
    }
    auto& r = out[step];
    for (Index i = 0; i < tr.tile.rows; ++i)
      for (Index j = 0; j < tr.tile.cols; ++j) {
        const auto dst = static_cast<std::size_t>((tr.tile.row0 + i) * region.cols + tr.tile.col0 + j);
        const auto src = static_cast<std::size_t>(i * tr.tile.cols + j);
        r.values[dst] = tr.values[src];
        r.mask[dst] = tr.mask[src];
      }
  });
  if (summary) *summary = s;
  return out;
}

// ---------------------------------------------------------------------------
// Summaries

/// Running per-pixel mean over valid values.
class TemporalMeanAccumulator {
 public:
  TemporalMeanAccumulator(Index rows, Index cols)
      : rows_(rows), cols_(cols), sum_(static_cast<std::size_t>(rows * cols), 0.0),
        count_(static_cast<std::size_t>(rows * cols), 0) {}

  void add(const FluxRaster& r) {
    if (r.rows != rows_ || r.cols != cols_) throw ShapeError("raster shape mismatch");
    for (std::size_t i = 0; i < sum_.size(); ++i)
      if (r.mask[i] == PixelQuality::valid) {
        sum_[i] += r.values[i];
        ++count_[i];
      }
    ++steps_;
  }

  FluxRaster finish(Timestamp stamp = 0) const {
    if (steps_ == 0) throw InputError("temporal mean over an empty window");
    FluxRaster out{stamp, rows_, cols_, std::vector<double>(sum_.size(), std::numeric_limits<double>::quiet_NaN()),
                   std::vector<PixelQuality>(sum_.size(), PixelQuality::missing)};
    for (std::size_t i = 0; i < sum_.size(); ++i)
      if (count_[i] > 0) {
        out.values[i] = sum_[i] / static_cast<double>(count_[i]);
        out.mask[i] = PixelQuality::valid;
      }
    return out;
  }

 private:
  Index rows_, cols_;
  std::vector<double> sum_;
  std::vector<std::size_t> count_;
  std::size_t steps_ = 0;
};

/// Per-pixel mean over rasters with timestamps in [begin, end].
inline FluxRaster temporal_mean_map(std::span<const FluxRaster> rasters,
                                    Timestamp begin = std::numeric_limits<Timestamp>::min(),
                                    Timestamp end = std::numeric_limits<Timestamp>::max()) {
  std::optional<TemporalMeanAccumulator> acc;
  for (const auto& r : rasters) {
    if (r.timestamp < begin || r.timestamp > end) continue;
    if (!acc) acc.emplace(r.rows, r.cols);
    acc->add(r);
  }
  if (!acc) throw InputError("temporal mean over an empty window");
  return acc->finish(begin == std::numeric_limits<Timestamp>::min() ? rasters.front().timestamp : begin);
}

struct SeriesPoint {
  Timestamp timestamp = 0;
  double mean = std::numeric_limits<double>::quiet_NaN();  // NaN: every pixel masked
  std::size_t valid = 0;
};

inline SeriesPoint spatial_mean(const FluxRaster& r) {
  SeriesPoint p{r.timestamp, std::numeric_limits<double>::quiet_NaN(), 0};
  double s = 0.0;
  for (std::size_t i = 0; i < r.values.size(); ++i)
    if (r.mask[i] == PixelQuality::valid) {
      s += r.values[i];
      ++p.valid;
    }
  if (p.valid > 0) p.mean = s / static_cast<double>(p.valid);
  return p;
}

inline std::vector<SeriesPoint> spatial_mean_series(std::span<const FluxRaster> rasters) {
  std::vector<SeriesPoint> out;
  for (const auto& r : rasters) out.push_back(spatial_mean(r));
  return out;
}

inline std::string series_csv(std::span<const SeriesPoint> s) {
  CsvTable t;
  t.header = {"timestamp", "mean_flux", "valid_pixels"};
  for (const auto& p : s) t.rows.push_back({format_iso8601(p.timestamp), format_number(p.mean), std::to_string(p.valid)});
  return t.to_string();
}

// ---------------------------------------------------------------------------
// Files

inline constexpr int kRegionSchemaVersion = 1;

inline void write_flux_rasters(const fs::path& path, std::span<const FluxRaster> rasters, const Json& geo) {
  if (rasters.empty()) throw InputError("no rasters to write");
  FrameFileWriter w(path, "far-flux-raster", rasters.front().rows, rasters.front().cols, 1,
                    {{"geo", geo}, {"units", kFluxUnits}});
  for (const auto& r : rasters) w.append({r.timestamp, r.mask, Json::object()}, r.values);
  w.finish();
}

inline std::vector<FluxRaster> read_flux_rasters(const fs::path& path) {
  FrameFileReader rd(path);
  if (rd.index().value("format", "") != "far-flux-raster" || rd.channels() != 1)
    throw DataError(path.string() + ": not a flux raster file");
  std::vector<FluxRaster> out;
  for (std::size_t i = 0; i < rd.frame_count(); ++i) {
    const auto meta = rd.meta(i);
    auto v = rd.values(i);
    for (std::size_t k = 0; k < v.size(); ++k)
      if (meta.quality[k] != PixelQuality::valid) v[k] = std::numeric_limits<double>::quiet_NaN();
    out.push_back({meta.timestamp, rd.rows(), rd.cols(), std::move(v), meta.quality});
  }
  return out;
}

inline Json region_geo(const RegionRaster& r) {
  return {{"origin_x", r.origin_x}, {"origin_y", r.origin_y}, {"pixel_size_m", r.pixel_size_m},
          {"transform", {r.origin_x, r.pixel_size_m, 0.0, r.origin_y, 0.0, -r.pixel_size_m}}};
}

/// region.json + bands.bin + drivers.bin under `dir`.
inline void write_region(const fs::path& dir, const RegionRaster& r) {
  r.validate();
  fs::create_directories(dir);
  Json man;
  man["schema_version"] = kRegionSchemaVersion;
  man["rows"] = r.rows;
  man["cols"] = r.cols;
  man["geo"] = region_geo(r);
  man["band_names"] = r.band_names;
  man["bands"] = "bands.bin";
  man["drivers"] = "drivers.bin";
  man["driver_grid"] = {{"rows", r.drivers.rows},
                        {"cols", r.drivers.cols},
                        {"cell_size_m", r.drivers.cell_size_m},
                        {"offset_east_m", r.drivers.offset_east_m},
                        {"offset_south_m", r.drivers.offset_south_m},
                        {"variables", {"SW_IN", "TA", "RH"}}};
  write_json(dir / "region.json", man);
  {
    FrameFileWriter w(dir / "bands.bin", "far-region-bands", r.rows, r.cols, r.bands());
    for (const auto& f : r.frames) w.append({f.timestamp, f.quality, {{"angles", f.angles}}}, f.values);
    w.finish();
  }
  FrameFileWriter w(dir / "drivers.bin", "far-driver-grid", r.drivers.rows, r.drivers.cols, kDriverCount);
  const std::vector<PixelQuality> valid(static_cast<std::size_t>(r.drivers.rows * r.drivers.cols), PixelQuality::valid);
  for (const auto& f : r.drivers.frames) w.append({f.timestamp, valid, Json::object()}, f.values);
  w.finish();
}

inline RegionRaster read_region(const fs::path& dir) {
  try {
    const Json man = read_json(dir / "region.json");
    if (man.at("schema_version").get<int>() != kRegionSchemaVersion) throw DataError("unsupported region schema");
    RegionRaster r;
    r.rows = man.at("rows").get<Index>();
    r.cols = man.at("cols").get<Index>();
    r.origin_x = man.at("geo").at("origin_x").get<double>();
    r.origin_y = man.at("geo").at("origin_y").get<double>();
    r.pixel_size_m = man.at("geo").at("pixel_size_m").get<double>();
    r.band_names = man.at("band_names").get<std::vector<std::string>>();
    const auto& g = man.at("driver_grid");
    r.drivers.rows = g.at("rows").get<Index>();
    r.drivers.cols = g.at("cols").get<Index>();
    r.drivers.cell_size_m = g.at("cell_size_m").get<double>();
    r.drivers.offset_east_m = g.value("offset_east_m", 0.0);
    r.drivers.offset_south_m = g.value("offset_south_m", 0.0);
    FrameFileReader bands(dir / man.at("bands").get<std::string>());
    if (bands.rows() != r.rows || bands.cols() != r.cols || bands.channels() != r.bands())
      throw DataError("band file shape does not match region.json");
    for (std::size_t i = 0; i < bands.frame_count(); ++i) {
      const auto meta = bands.meta(i);
      ScenePatch p;
      p.rows = r.rows;
      p.cols = r.cols;
      p.bands = r.bands();
      p.pixel_size_m = r.pixel_size_m;
      p.timestamp = meta.timestamp;
      p.quality = meta.quality;
      p.values = bands.values(i);
      p.angles = meta.extra.at("angles").get<std::array<double, 4>>();
      r.frames.push_back(std::move(p));
    }
    FrameFileReader drv(dir / man.at("drivers").get<std::string>());
    if (drv.rows() != r.drivers.rows || drv.cols() != r.drivers.cols || drv.channels() != kDriverCount)
      throw DataError("driver file shape does not match region.json");
    for (std::size_t i = 0; i < drv.frame_count(); ++i) r.drivers.frames.push_back({drv.meta(i).timestamp, drv.values(i)});
    r.validate();
    return r;
  } catch (const Json::exception& e) {
    throw DataError(dir.string() + ": malformed region: " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Synthetic region

struct RegionSynthConfig {
  Index rows = 96;
  Index cols = 96;
  Index driver_cell_pixels = 16;  // driver grid is this many pixels per cell
  double days = 4.0;
  double frame_interval_days = 2.0;
  Index blobs = 12;
  double disturbance_day = 2.0;  // negative: no disturbance
  double disturbance_fraction = 0.3;
};

/// Land-class blobs from the synthetic classes; at `disturbance_day` the
/// left part of the region turns into the last class (a burn-scar analogue).
inline RegionRaster generate_synthetic_region(const RegionSynthConfig& rc, const SynthConfig& sc, std::uint64_t seed) {
  sc.validate();
  if (rc.rows < 1 || rc.cols < 1 || rc.driver_cell_pixels < 1 || !(rc.days > 0) || !(rc.frame_interval_days > 0))
    throw ConfigError("invalid synthetic region configuration");
  Rng rng(derive_seed(seed, 0x5e610));
  RegionRaster r;
  r.rows = rc.rows;
  r.cols = rc.cols;
  r.pixel_size_m = sc.pixel_size_m;
  r.origin_x = 500000.0;
  r.origin_y = 4900000.0;
  r.band_names = sc.band_names;
  const auto n_classes = sc.classes.size();

  std::vector<std::array<double, 3>> centres;  // row, col, class
  for (Index b = 0; b < std::max<Index>(rc.blobs, 1); ++b)
    centres.push_back({rng.uniform(0.0, static_cast<double>(rc.rows)), rng.uniform(0.0, static_cast<double>(rc.cols)),
                       static_cast<double>(rng.below(n_classes))});
  std::vector<std::size_t> cls(static_cast<std::size_t>(rc.rows * rc.cols));
  for (Index i = 0; i < rc.rows; ++i)
    for (Index j = 0; j < rc.cols; ++j) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : centres) {
        const double d = std::hypot(static_cast<double>(i) - c[0], static_cast<double>(j) - c[1]);
        if (d < best) {
          best = d;
          cls[static_cast<std::size_t>(i * rc.cols + j)] = static_cast<std::size_t>(c[2]);
        }
      }
    }
  const auto D = static_cast<Index>(sc.band_names.size());
  std::vector<double> texture(cls.size() * static_cast<std::size_t>(D));
  for (auto& t : texture) t = rng.normal(0.0, sc.pixel_noise);
  const auto burn_cols = static_cast<Index>(std::llround(rc.disturbance_fraction * static_cast<double>(rc.cols)));

  const auto n_frames = static_cast<std::size_t>(std::floor(rc.days / rc.frame_interval_days - 1e-9)) + 1;
  for (std::size_t f = 0; f < n_frames; ++f) {
    const double day = static_cast<double>(f) * rc.frame_interval_days;
    ScenePatch p = ScenePatch::filled(rc.rows, rc.cols, D);
    p.pixel_size_m = sc.pixel_size_m;
    p.timestamp = sc.start + static_cast<Timestamp>(std::llround(day * kDaySeconds));
    p.angles = {150.0, 45.0, 100.0, 3.0};
    const bool burnt = rc.disturbance_day >= 0.0 && day >= rc.disturbance_day;
    for (Index i = 0; i < rc.rows; ++i)
      for (Index j = 0; j < rc.cols; ++j) {
        const auto pix = static_cast<std::size_t>(i * rc.cols + j);
        const std::size_t k = burnt && j < burn_cols ? n_classes - 1 : cls[pix];
        for (Index d = 0; d < D; ++d)
          p.at(i, j, d) = sc.classes[k].band_means[static_cast<std::size_t>(d)] +
                          texture[pix * static_cast<std::size_t>(D) + static_cast<std::size_t>(d)];
      }
    r.frames.push_back(std::move(p));
  }

  auto& g = r.drivers;
  g.cell_size_m = sc.pixel_size_m * static_cast<double>(rc.driver_cell_pixels);
  g.rows = (rc.rows + rc.driver_cell_pixels - 1) / rc.driver_cell_pixels;
  g.cols = (rc.cols + rc.driver_cell_pixels - 1) / rc.driver_cell_pixels;
  const auto steps = static_cast<std::size_t>(std::llround(rc.days * 48.0));
  std::vector<double> ta_offset(static_cast<std::size_t>(g.rows * g.cols));
  for (auto& o : ta_offset) o = rng.normal(0.0, 1.5);
  for (std::size_t k = 0; k < steps; ++k) {
    const double hour = static_cast<double>(k % 48) / 2.0 + 0.25;
    const double doy = static_cast<double>(k / 48);
    const double sin_el = detail::solar_elevation_sine(44.0, doy, hour);
    DriverFrame df;
    df.timestamp = sc.start + static_cast<Timestamp>(k) * kHalfHourSeconds;
    for (std::size_t c = 0; c < ta_offset.size(); ++c) {
      const double sw = sin_el > 0.0 ? 1000.0 * std::pow(sin_el, 1.15) * 0.8 : 0.0;
      const double ta = 8.0 + ta_offset[c] + 4.0 * std::sin(2.0 * std::numbers::pi * (hour - 9.0) / 24.0);
      df.values.insert(df.values.end(), {sw, ta, std::clamp(70.0 - 2.0 * (ta - 8.0), 5.0, 100.0)});
    }
    g.frames.push_back(std::move(df));
  }
  return r;
}

}  // namespace far
