#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "far/errors.hpp"
#include "far/numerics.hpp"
#include "far/rng.hpp"
#include "far/time.hpp"

namespace far {

inline constexpr std::array<std::string_view, 3> kDriverNames = {"SW_IN", "TA", "RH"};
inline constexpr std::array<std::string_view, 6> kFootprintVarNames = {"WD", "WS", "USTAR",
                                                                       "TA", "H",  "HEIGHT"};
inline constexpr std::array<std::string_view, 4> kAngleNames = {"SAA", "SZA", "VAA", "VZA"};

/// Landsat 8/9 Level-1 bands without the panchromatic band.
inline const std::vector<std::string>& landsat_band_names() {
  static const std::vector<std::string> names = {"CoastalAerosol", "Blue",  "Green", "Red",
                                                 "NIR",            "SWIR1", "SWIR2", "Cirrus",
                                                 "TIRS1",          "TIRS2"};
  return names;
}

/// Environmental drivers held constant across the image.
struct DriverVector {
  double sw_in = 0.0;  // W m-2
  double ta = 0.0;     // degC
  double rh = 0.0;     // %

  std::array<double, 3> values() const { return {sw_in, ta, rh}; }
  bool complete() const { return std::isfinite(sw_in) && std::isfinite(ta) && std::isfinite(rh); }
};

/// Inputs of the footprint arm.
struct FootprintVector {
  double wd = 0.0;      // deg, direction the wind comes from, clockwise from north
  double ws = 0.0;      // m s-1
  double ustar = 0.0;   // m s-1
  double ta = 0.0;      // degC
  double h = 0.0;       // W m-2
  double height = 1.0;  // m

  std::array<double, 6> values() const { return {wd, ws, ustar, ta, h, height}; }
  bool complete() const {
    const auto v = values();
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
  }
};

enum class PixelQuality : std::uint8_t { valid = 0, cloud = 1, missing = 2, never_observed = 3 };

/// One satellite acquisition cropped around the tower: [rows][cols][bands].
struct ScenePatch {
  Index rows = 0;
  Index cols = 0;
  Index bands = 0;
  std::vector<double> values;
  std::array<double, 4> angles{};  // SAA, SZA, VAA, VZA in degrees
  Timestamp timestamp = 0;
  std::vector<PixelQuality> quality;
  double pixel_size_m = 30.0;

  static ScenePatch filled(Index rows, Index cols, Index bands, double value = 0.0) {
    ScenePatch p;
    p.rows = rows;
    p.cols = cols;
    p.bands = bands;
    p.values.assign(static_cast<std::size_t>(rows * cols * bands), value);
    p.quality.assign(static_cast<std::size_t>(rows * cols), PixelQuality::valid);
    return p;
  }

  std::size_t offset(Index r, Index c) const { return static_cast<std::size_t>((r * cols + c) * bands); }
  double& at(Index r, Index c, Index d) { return values[offset(r, c) + static_cast<std::size_t>(d)]; }
  double at(Index r, Index c, Index d) const { return values[offset(r, c) + static_cast<std::size_t>(d)]; }
  std::span<const double> pixel(Index r, Index c) const {
    return {values.data() + offset(r, c), static_cast<std::size_t>(bands)};
  }
  PixelQuality& quality_at(Index r, Index c) { return quality[static_cast<std::size_t>(r * cols + c)]; }
  PixelQuality quality_at(Index r, Index c) const { return quality[static_cast<std::size_t>(r * cols + c)]; }

  bool has_unobserved() const {
    return std::any_of(quality.begin(), quality.end(),
                       [](PixelQuality q) { return q == PixelQuality::never_observed; });
  }
};

struct HalfHourSample {
  Timestamp timestamp = 0;
  DriverVector drivers;
  FootprintVector fp;
  double target_fc = 0.0;  // umol CO2 m-2 s-1, negative = drawdown
  std::size_t patch_ref = 0;
};

struct SiteDataset {
  std::string site_id;
  std::string ecosystem;
  Index tower_row = 0;
  Index tower_col = 0;
  double tower_height_m = 1.0;
  std::vector<HalfHourSample> samples;
  std::vector<ScenePatch> patches;
};

struct Dataset {
  Index rows = 32;
  Index cols = 32;
  std::vector<std::string> band_names;
  double pixel_size_m = 30.0;
  std::vector<SiteDataset> sites;

  Index band_count() const { return static_cast<Index>(band_names.size()); }
};

/// Index of the most recent patch at or before `t`, if any.
inline std::optional<std::size_t> latest_patch_at(std::span<const ScenePatch> patches, Timestamp t) {
  const auto it = std::upper_bound(patches.begin(), patches.end(), t,
                                   [](Timestamp v, const ScenePatch& p) { return v < p.timestamp; });
  if (it == patches.begin()) return std::nullopt;
  return static_cast<std::size_t>(std::distance(patches.begin(), it) - 1);
}

// ---------------------------------------------------------------------------
// Cleaning

/// Each rejected sample is attributed to the first rule it violates, in the
/// order the fields are declared.
struct RejectionReport {
  std::size_t input = 0;
  std::size_t kept = 0;
  std::size_t missing_field = 0;
  std::size_t fc_percentile = 0;
  std::size_t negative_sw_in = 0;
  std::size_t nighttime_drawdown = 0;
  double fc_lower_bound = 0.0;
  double fc_upper_bound = 0.0;

  std::size_t rejected() const {
    return missing_field + fc_percentile + negative_sw_in + nighttime_drawdown;
  }
};

struct CleanResult {
  SiteDataset kept;
  std::vector<HalfHourSample> rejected;
  RejectionReport report;
};

/// Bounds of the [0.5%, 99.5%] band by nearest rank. The upper bound is the
/// value at rank ceil(0.995 n); the lower bound mirrors it (rank n + 1 - that),
/// so both tails drop the same number of distinct values.
inline std::pair<double, double> fc_percentile_bounds(std::vector<double> fc) {
  if (fc.empty()) return {0.0, 0.0};
  std::sort(fc.begin(), fc.end());
  const auto n = fc.size();
  auto upper_rank = static_cast<std::size_t>(std::ceil(0.995 * static_cast<double>(n) - 1e-9));
  upper_rank = std::clamp<std::size_t>(upper_rank, 1, n);
  const std::size_t lower_rank = n + 1 - upper_rank;
  return {fc[lower_rank - 1], fc[upper_rank - 1]};
}

inline bool sample_fields_complete(const HalfHourSample& s) {
  return s.drivers.complete() && s.fp.complete() && std::isfinite(s.target_fc);
}

inline CleanResult clean_samples(const SiteDataset& raw) {
  CleanResult out;
  out.kept = raw;
  out.kept.samples.clear();
  out.report.input = raw.samples.size();

  std::vector<double> fc;
  fc.reserve(raw.samples.size());
  for (const auto& s : raw.samples)
    if (std::isfinite(s.target_fc)) fc.push_back(s.target_fc);
  const auto [lo, hi] = fc_percentile_bounds(std::move(fc));
  out.report.fc_lower_bound = lo;
  out.report.fc_upper_bound = hi;

  for (const auto& s : raw.samples) {
    if (!sample_fields_complete(s)) {
      ++out.report.missing_field;
    } else if (s.target_fc < lo || s.target_fc > hi) {
      ++out.report.fc_percentile;
    } else if (s.drivers.sw_in < 0.0) {
      ++out.report.negative_sw_in;
    } else if (s.target_fc < 0.0 && s.drivers.sw_in == 0.0) {
      ++out.report.nighttime_drawdown;
    } else {
      out.kept.samples.push_back(s);
      continue;
    }
    out.rejected.push_back(s);
  }
  out.report.kept = out.kept.samples.size();
  if (out.kept.samples.empty())
    throw DataError("site " + raw.site_id + ": no samples left after cleaning");
  return out;
}

// ---------------------------------------------------------------------------
// Gap filling

/// Replaces every non-valid pixel with the most recent earlier valid value at
/// that location. Pixels with no earlier valid value become NaN and are
/// marked never_observed. Masks of filled pixels are left as they were.
inline std::vector<ScenePatch> gap_fill_patches(std::vector<ScenePatch> patches) {
  if (patches.empty()) return patches;
  const Index rows = patches.front().rows, cols = patches.front().cols, bands = patches.front().bands;
  const auto pixels = static_cast<std::size_t>(rows * cols);
  const auto nb = static_cast<std::size_t>(bands);
  std::vector<double> last(pixels * nb, 0.0);
  std::vector<bool> seen(pixels, false);
  for (auto& p : patches) {
    if (p.rows != rows || p.cols != cols || p.bands != bands)
      throw ShapeError("gap fill: patches differ in shape");
    for (std::size_t i = 0; i < pixels; ++i) {
      auto* v = p.values.data() + i * nb;
      if (p.quality[i] == PixelQuality::valid) {
        std::copy(v, v + nb, last.data() + i * nb);
        seen[i] = true;
      } else if (seen[i]) {
        std::copy(last.data() + i * nb, last.data() + (i + 1) * nb, v);
      } else {
        std::fill(v, v + nb, std::numeric_limits<double>::quiet_NaN());
        p.quality[i] = PixelQuality::never_observed;
      }
    }
  }
  return patches;
}

// ---------------------------------------------------------------------------
// Rotation augmentation

inline double wrap_degrees(double deg) {
  double r = std::fmod(deg, 360.0);
  if (r < 0.0) r += 360.0;
  if (r >= 360.0) r -= 360.0;
  return r;
}

namespace detail {

/// Quarter turns (0..3) if `angle` is an exact multiple of 90 degrees.
inline std::optional<int> quarter_turns(double angle) {
  const double a = wrap_degrees(angle);
  for (int q = 0; q < 4; ++q)
    if (a == 90.0 * q) return q;
  return std::nullopt;
}

inline ScenePatch rotate_quarter_ccw(const ScenePatch& in) {
  // Counterclockwise in map coordinates (north up): out[i][j] = in[j][N-1-i].
  ScenePatch out = in;
  const Index n = in.rows;
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) {
      const auto src = in.pixel(j, n - 1 - i);
      std::copy(src.begin(), src.end(), out.values.begin() + static_cast<std::ptrdiff_t>(out.offset(i, j)));
      out.quality_at(i, j) = in.quality_at(j, n - 1 - i);
    }
  return out;
}

inline ScenePatch rotate_bilinear(const ScenePatch& in, double angle_deg) {
  ScenePatch out = in;
  const double th = angle_deg * std::numbers::pi / 180.0;
  const double cs = std::cos(th), sn = std::sin(th);
  const double cr = 0.5 * static_cast<double>(in.rows - 1);
  const double cc = 0.5 * static_cast<double>(in.cols - 1);
  const auto nb = static_cast<std::size_t>(in.bands);
  for (Index r = 0; r < in.rows; ++r) {
    for (Index c = 0; c < in.cols; ++c) {
      // Map coordinates of the destination cell (x east, y north).
      const double x = static_cast<double>(c) - cc;
      const double y = cr - static_cast<double>(r);
      // Inverse (clockwise) rotation gives the source location.
      const double xs = cs * x + sn * y;
      const double ys = -sn * x + cs * y;
      const double rs = std::clamp(cr - ys, 0.0, static_cast<double>(in.rows - 1));
      const double csrc = std::clamp(cc + xs, 0.0, static_cast<double>(in.cols - 1));
      const auto r0 = static_cast<Index>(std::floor(rs));
      const auto c0 = static_cast<Index>(std::floor(csrc));
      const Index r1 = std::min(r0 + 1, in.rows - 1);
      const Index c1 = std::min(c0 + 1, in.cols - 1);
      const double fr = rs - static_cast<double>(r0);
      const double fc = csrc - static_cast<double>(c0);
      for (std::size_t d = 0; d < nb; ++d) {
        const auto di = static_cast<Index>(d);
        const double v = (1 - fr) * ((1 - fc) * in.at(r0, c0, di) + fc * in.at(r0, c1, di)) +
                         fr * ((1 - fc) * in.at(r1, c0, di) + fc * in.at(r1, c1, di));
        out.at(r, c, di) = v;
      }
      out.quality_at(r, c) = in.quality_at(static_cast<Index>(std::lround(rs)),
                                           static_cast<Index>(std::lround(csrc)));
    }
  }
  return out;
}

}  // namespace detail

/// Rotates the image counterclockwise (map coordinates) about its centre and
/// the meteorological wind direction consistently: wd' = (wd - angle) mod 360.
/// Multiples of 90 degrees on square patches are exact index permutations.
inline std::pair<ScenePatch, double> rotate_augment(const ScenePatch& patch, double wd, double angle) {
  const double wd_out = wrap_degrees(wd - angle);
  if (const auto q = detail::quarter_turns(angle); q && patch.rows == patch.cols) {
    ScenePatch out = patch;
    for (int i = 0; i < *q; ++i) out = detail::rotate_quarter_ccw(out);
    return {std::move(out), wd_out};
  }
  return {detail::rotate_bilinear(patch, angle), wd_out};
}

// ---------------------------------------------------------------------------
// Splits

enum class SiteRole : std::uint8_t { train = 0, val_site = 1, test_site = 2 };
enum class SampleFlag : std::uint8_t { train = 0, val = 1, val_future = 2, test_future = 3 };

inline const char* to_string(SiteRole r) {
  switch (r) {
    case SiteRole::train: return "train";
    case SiteRole::val_site: return "val_site";
    case SiteRole::test_site: return "test_site";
  }
  return "?";
}

inline const char* to_string(SampleFlag f) {
  switch (f) {
    case SampleFlag::train: return "train";
    case SampleFlag::val: return "val";
    case SampleFlag::val_future: return "val_future";
    case SampleFlag::test_future: return "test_future";
  }
  return "?";
}

struct SplitAssignment {
  std::vector<SiteRole> roles;                 // per site
  std::vector<std::vector<SampleFlag>> flags;  // per site, per sample; train for withheld sites
};

struct SplitRules {
  std::size_t min_group_sites = 10;
  double withheld_site_fraction = 0.4;
  double val_sample_fraction = 0.2;
};

/// Withholds floor(0.4 n) sites of every ecosystem group with at least 10
/// sites (odd count: the extra one goes to val_site), moves the final 365 days
/// of multi-year sites into val_future/test_future by site-id hash parity, and
/// flags 20% of the remaining training samples as val.
inline SplitAssignment assign_splits(std::span<const SiteDataset> sites, std::uint64_t seed,
                                     const SplitRules& rules = {}) {
  SplitAssignment out;
  out.roles.assign(sites.size(), SiteRole::train);
  out.flags.resize(sites.size());
  for (std::size_t s = 0; s < sites.size(); ++s)
    out.flags[s].assign(sites[s].samples.size(), SampleFlag::train);

  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t s = 0; s < sites.size(); ++s) groups[sites[s].ecosystem].push_back(s);
  for (auto& [code, members] : groups) {
    if (members.size() < rules.min_group_sites) continue;
    Rng rng(derive_seed(seed, fnv1a(code)));
    rng.shuffle(std::span<std::size_t>(members));
    const auto withheld = static_cast<std::size_t>(
        std::floor(rules.withheld_site_fraction * static_cast<double>(members.size())));
    const std::size_t n_val = (withheld + 1) / 2;
    for (std::size_t i = 0; i < withheld; ++i)
      out.roles[members[i]] = i < n_val ? SiteRole::val_site : SiteRole::test_site;
  }

  std::vector<std::pair<std::size_t, std::size_t>> remaining;
  for (std::size_t s = 0; s < sites.size(); ++s) {
    if (out.roles[s] != SiteRole::train) continue;
    const auto& smp = sites[s].samples;
    bool multi_year = false;
    Timestamp cutoff = 0;
    if (!smp.empty()) {
      const Timestamp first = smp.front().timestamp, last = smp.back().timestamp;
      multi_year = last - first >= 365 * kDaySeconds;
      cutoff = last - 365 * kDaySeconds;
    }
    const SampleFlag future = (fnv1a(sites[s].site_id) % 2 == 0) ? SampleFlag::val_future
                                                                  : SampleFlag::test_future;
    for (std::size_t i = 0; i < smp.size(); ++i) {
      if (multi_year && smp[i].timestamp > cutoff)
        out.flags[s][i] = future;
      else
        remaining.emplace_back(s, i);
    }
  }
  Rng rng(derive_seed(seed, 0x7a11ULL));
  rng.shuffle(std::span<std::pair<std::size_t, std::size_t>>(remaining));
  const auto n_val = static_cast<std::size_t>(
      std::llround(rules.val_sample_fraction * static_cast<double>(remaining.size())));
  for (std::size_t i = 0; i < n_val; ++i) out.flags[remaining[i].first][remaining[i].second] = SampleFlag::val;
  return out;
}

// ---------------------------------------------------------------------------
// Normalisation

/// Per-feature z-score statistics.
struct FeatureStats {
  std::vector<double> mean;
  std::vector<double> std;
  std::vector<bool> clamped;  // zero-variance features whose std was set to 1

  std::size_t size() const { return mean.size(); }
  bool operator==(const FeatureStats&) const = default;

  double apply(std::size_t k, double x) const { return (x - mean[k]) / std[k]; }
  double invert(std::size_t k, double z) const { return z * std[k] + mean[k]; }
};

/// Incremental mean/variance accumulator (Welford).
class StatsAccumulator {
 public:
  explicit StatsAccumulator(std::size_t features)
      : n_(0), mean_(features, 0.0), m2_(features, 0.0) {}

  void add(std::span<const double> row) {
    if (row.size() != mean_.size()) throw ShapeError("stats: feature count mismatch");
    ++n_;
    const double inv = 1.0 / static_cast<double>(n_);
    for (std::size_t k = 0; k < row.size(); ++k) {
      const double d = row[k] - mean_[k];
      mean_[k] += d * inv;
      m2_[k] += d * (row[k] - mean_[k]);
    }
  }

  std::size_t count() const { return n_; }

  /// Population statistics; zero-variance features get std 1 and a warning.
  FeatureStats finish(std::string_view label = "feature") const {
    if (n_ == 0) throw DataError("cannot fit normalisation on an empty set");
    FeatureStats s;
    s.mean = mean_;
    s.std.resize(mean_.size());
    s.clamped.assign(mean_.size(), false);
    for (std::size_t k = 0; k < mean_.size(); ++k) {
      const double var = m2_[k] / static_cast<double>(n_);
      const double sd = std::sqrt(std::max(var, 0.0));
      if (!(sd > 1e-12 * std::max(1.0, std::abs(mean_[k])))) {
        s.std[k] = 1.0;
        s.clamped[k] = true;
        std::cerr << "warning: " << label << " " << k << " has zero variance; std clamped to 1\n";
      } else {
        s.std[k] = sd;
      }
    }
    return s;
  }

 private:
  std::size_t n_;
  std::vector<double> mean_;
  std::vector<double> m2_;
};

/// Fits z-score statistics over the columns of `features` (features x samples).
inline FeatureStats normalize_fit(const Matrix& features, std::string_view label = "feature") {
  StatsAccumulator acc(static_cast<std::size_t>(features.rows()));
  std::vector<double> row(static_cast<std::size_t>(features.rows()));
  for (Index j = 0; j < features.cols(); ++j) {
    for (Index k = 0; k < features.rows(); ++k) row[static_cast<std::size_t>(k)] = features(k, j);
    acc.add(row);
  }
  return acc.finish(label);
}

inline Matrix normalize_apply(const FeatureStats& stats, const Matrix& features) {
  if (static_cast<std::size_t>(features.rows()) != stats.size()) throw ShapeError("normalize: feature count mismatch");
  Matrix out(features.rows(), features.cols());
  for (Index k = 0; k < features.rows(); ++k)
    out.row(k) = (features.row(k).array() - stats.mean[static_cast<std::size_t>(k)]) /
                 stats.std[static_cast<std::size_t>(k)];
  return out;
}

inline Matrix normalize_invert(const FeatureStats& stats, const Matrix& z) {
  if (static_cast<std::size_t>(z.rows()) != stats.size()) throw ShapeError("normalize: feature count mismatch");
  Matrix out(z.rows(), z.cols());
  for (Index k = 0; k < z.rows(); ++k)
    out.row(k) = z.row(k).array() * stats.std[static_cast<std::size_t>(k)] +
                 stats.mean[static_cast<std::size_t>(k)];
  return out;
}

// ---------------------------------------------------------------------------
// Preprocessing

/// Cleans every site's samples and gap-fills its patches in place.
inline std::vector<RejectionReport> preprocess_dataset(Dataset& ds) {
  std::vector<RejectionReport> reports;
  for (auto& site : ds.sites) {
    CleanResult r = clean_samples(site);
    site.samples = std::move(r.kept.samples);
    site.patches = gap_fill_patches(std::move(site.patches));
    reports.push_back(r.report);
  }
  return reports;
}

}  // namespace far
