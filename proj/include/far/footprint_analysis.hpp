#pragma once

// Footprint diagnostics and the analytic plume used as synthetic ground truth.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "far/data.hpp"
#include "far/errors.hpp"
#include "far/model.hpp"
#include "far/numerics.hpp"

namespace far {

/// Cumulative weight must exceed the threshold by more than this to count;
/// absorbs the binary representation error of decimal weights.
inline constexpr double kAreaExceedTolerance = 1e-12;

struct FootprintArea {
  double area_m2 = 0.0;
  Index pixel_count = 0;
};

/// Smallest number of highest-weight pixels whose cumulative weight strictly
/// exceeds `threshold`. Equal weights are taken in row-major order.
inline FootprintArea footprint_area(const FootprintGrid& fp, double pixel_area_m2, double threshold = 0.95) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw InputError("area threshold must lie in (0, 1)");
  const Index rows = fp.rows(), cols = fp.cols();
  std::vector<double> w;
  w.reserve(static_cast<std::size_t>(rows * cols));
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) w.push_back(fp(r, c));
  std::vector<std::size_t> order(w.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return w[a] > w[b]; });
  double cum = 0.0;
  Index k = 0;
  for (std::size_t i : order) {
    cum += w[i];
    ++k;
    if (cum > threshold + kAreaExceedTolerance) break;
  }
  return {static_cast<double>(k) * pixel_area_m2, k};
}

struct Centroid {
  double row = 0.5;  // footprint-weighted y_l
  double col = 0.5;  // footprint-weighted x_w
};

inline Centroid footprint_centroid(const FootprintGrid& fp) {
  Centroid c{0.0, 0.0};
  const auto rows = static_cast<double>(fp.rows()), cols = static_cast<double>(fp.cols());
  for (Index j = 0; j < fp.cols(); ++j)
    for (Index i = 0; i < fp.rows(); ++i) {
      c.row += fp(i, j) * (static_cast<double>(i) + 0.5) / rows;
      c.col += fp(i, j) * (static_cast<double>(j) + 0.5) / cols;
    }
  return c;
}

/// Compass bearing (degrees clockwise from north) from the grid centre to the
/// centroid, with north towards row 0.
inline double centroid_bearing(const Centroid& c, Index rows, Index cols) {
  const double east = (c.col - 0.5) * static_cast<double>(cols);
  const double north = (0.5 - c.row) * static_cast<double>(rows);
  return wrap_degrees(std::atan2(east, north) * 180.0 / std::numbers::pi);
}

/// True when the centroid sits in the half-plane the wind comes from.
inline bool centroid_is_upwind(const Centroid& c, Index rows, Index cols, double wd) {
  const double rad = wd * std::numbers::pi / 180.0;
  const double east = (c.col - 0.5) * static_cast<double>(cols);
  const double north = (0.5 - c.row) * static_cast<double>(rows);
  return east * std::sin(rad) + north * std::cos(rad) > 0.0;
}

// ---------------------------------------------------------------------------
// Analytic plume

/// Gaussian plume stand-in. Peak distance upwind = a * HEIGHT / max(USTAR, u_min);
/// along- and cross-wind spreads are b and c times that distance.
struct PlumeParams {
  double peak_distance_scale = 10.0;
  double along_spread = 0.5;
  double cross_spread = 0.3;
  double ustar_floor = 0.1;

  void validate() const {
    if (!(peak_distance_scale > 0 && along_spread > 0 && cross_spread > 0 && ustar_floor > 0))
      throw ConfigError("plume parameters must be positive");
  }

  double peak_distance(const FootprintVector& v) const {
    return peak_distance_scale * v.height / std::max(v.ustar, ustar_floor);
  }
};

inline FootprintGrid analytic_plume(const FootprintVector& v, const PlumeParams& params, Index rows, Index cols,
                                    double pixel_size_m) {
  params.validate();
  if (!v.complete()) throw InputError("missing footprint variable");
  const double d = params.peak_distance(v);
  const double sa = params.along_spread * d, sc = params.cross_spread * d;
  const double rad = v.wd * std::numbers::pi / 180.0;
  const double ue = std::sin(rad), un = std::cos(rad);  // unit vector pointing upwind
  const double cr = 0.5 * static_cast<double>(rows - 1), cc = 0.5 * static_cast<double>(cols - 1);
  Matrix w(rows, cols);
  for (Index c = 0; c < cols; ++c)
    for (Index r = 0; r < rows; ++r) {
      const double x = (static_cast<double>(c) - cc) * pixel_size_m;
      const double y = (cr - static_cast<double>(r)) * pixel_size_m;
      const double along = x * ue + y * un - d;
      const double cross = -x * un + y * ue;
      w(r, c) = std::exp(-0.5 * (along * along / (sa * sa) + cross * cross / (sc * sc)));
    }
  const double total = w.sum();
  if (!(total > 0.0) || !std::isfinite(total))
    throw DataError("degenerate footprint: plume mass falls outside the grid");
  w /= total;
  return FootprintGrid::from_weights(std::move(w));
}

// ---------------------------------------------------------------------------
// Footprint predictors

template <typename F>
concept FootprintPredictor = requires(const F& f, const FootprintVector& v) {
  { f(v) } -> std::convertible_to<FootprintGrid>;
};

struct ModelFootprint {
  const FarModel* model;
  FootprintGrid operator()(const FootprintVector& v) const { return predict_footprint(*model, v); }
};

struct PlumeFootprint {
  PlumeParams params;
  Index rows = 32;
  Index cols = 32;
  double pixel_size_m = 30.0;
  FootprintGrid operator()(const FootprintVector& v) const {
    return analytic_plume(v, params, rows, cols, pixel_size_m);
  }
};

struct UniformFootprint {
  Index rows = 32;
  Index cols = 32;
  FootprintGrid operator()(const FootprintVector&) const { return FootprintGrid::uniform(rows, cols); }
};

// ---------------------------------------------------------------------------
// Sensitivity scans

enum class ScanVariable { ustar, ws, height, ta, h, wd };

inline const char* to_string(ScanVariable v) {
  switch (v) {
    case ScanVariable::ustar: return "USTAR";
    case ScanVariable::ws: return "WS";
    case ScanVariable::height: return "HEIGHT";
    case ScanVariable::ta: return "TA";
    case ScanVariable::h: return "H";
    case ScanVariable::wd: return "WD";
  }
  return "?";
}

inline ScanVariable parse_scan_variable(std::string_view s) {
  for (auto v : {ScanVariable::ustar, ScanVariable::ws, ScanVariable::height, ScanVariable::ta, ScanVariable::h,
                 ScanVariable::wd})
    if (s == to_string(v)) return v;
  throw ConfigError("unknown scan variable '" + std::string(s) + "'");
}

inline double& scan_field(FootprintVector& v, ScanVariable var) {
  switch (var) {
    case ScanVariable::ustar: return v.ustar;
    case ScanVariable::ws: return v.ws;
    case ScanVariable::height: return v.height;
    case ScanVariable::ta: return v.ta;
    case ScanVariable::h: return v.h;
    case ScanVariable::wd: return v.wd;
  }
  return v.ustar;
}

struct AreaCurve {
  ScanVariable variable = ScanVariable::ustar;
  std::vector<double> x;
  std::vector<double> area_m2;
  std::vector<std::size_t> support;  // dataset histogram, one bin per x value
};

/// Dataset histogram with one bin per grid point; bin edges sit halfway
/// between neighbouring points and the outer bins are open-ended.
inline std::vector<std::size_t> support_histogram(std::span<const double> grid, std::span<const double> values) {
  std::vector<std::size_t> counts(grid.size(), 0);
  if (grid.empty()) return counts;
  for (double v : values) {
    if (!std::isfinite(v)) continue;
    std::size_t k = 0;
    while (k + 1 < grid.size() && v > 0.5 * (grid[k] + grid[k + 1])) ++k;
    ++counts[k];
  }
  return counts;
}

template <FootprintPredictor Predictor>
AreaCurve scan_area(const Predictor& predictor, const FootprintVector& reference, ScanVariable variable,
                    std::span<const double> grid, double pixel_area_m2, std::span<const double> dataset_values = {}) {
  for (std::size_t i = 1; i < grid.size(); ++i)
    if (!(grid[i] > grid[i - 1])) throw InputError("scan grid must be strictly increasing");
  AreaCurve curve;
  curve.variable = variable;
  for (double x : grid) {
    FootprintVector v = reference;
    scan_field(v, variable) = x;
    curve.x.push_back(x);
    curve.area_m2.push_back(footprint_area(predictor(v), pixel_area_m2).area_m2);
  }
  curve.support = support_histogram(grid, dataset_values);
  return curve;
}

struct WindBin {
  double wd_center = 0.0;
  std::size_t count = 0;
  double row_mean = 0.5;
  double col_mean = 0.5;
  double bearing_deg = 0.0;  // bearing from tower to the mean centroid
  double upwind_fraction = 0.0;
};

struct WindCentroidTable {
  std::vector<WindBin> bins;
  std::size_t samples = 0;
  double upwind_fraction = 0.0;
  double mean_alignment = 0.0;  // mean cos(centroid bearing - WD)
};

/// Centroids binned by wind direction. Samples whose centroid sits exactly on
/// the grid centre count as not upwind and contribute 0 to the alignment.
template <FootprintPredictor Predictor>
WindCentroidTable centroid_vs_wind(const Predictor& predictor, std::span<const FootprintVector> samples, Index rows,
                                   Index cols, double bin_width_deg = 30.0) {
  if (!(bin_width_deg > 0.0 && bin_width_deg <= 360.0)) throw InputError("bin width must lie in (0, 360]");
  const auto nbins = static_cast<std::size_t>(std::ceil(360.0 / bin_width_deg));
  std::vector<WindBin> bins(nbins);
  std::vector<double> up(nbins, 0.0);
  WindCentroidTable t;
  for (std::size_t i = 0; i < nbins; ++i) bins[i].wd_center = (static_cast<double>(i) + 0.5) * bin_width_deg;
  for (auto& b : bins) b.row_mean = b.col_mean = 0.0;
  double upwind = 0.0, align = 0.0;
  for (const auto& v : samples) {
    const Centroid c = footprint_centroid(predictor(v));
    const auto k = std::min(static_cast<std::size_t>(wrap_degrees(v.wd) / bin_width_deg), nbins - 1);
    auto& b = bins[k];
    ++b.count;
    b.row_mean += c.row;
    b.col_mean += c.col;
    const bool is_up = centroid_is_upwind(c, rows, cols, v.wd);
    up[k] += is_up ? 1.0 : 0.0;
    upwind += is_up ? 1.0 : 0.0;
    const double east = (c.col - 0.5) * static_cast<double>(cols), north = (0.5 - c.row) * static_cast<double>(rows);
    const double norm = std::hypot(east, north);
    if (norm > 0.0) {
      const double rad = v.wd * std::numbers::pi / 180.0;
      align += (east * std::sin(rad) + north * std::cos(rad)) / norm;
    }
  }
  for (std::size_t k = 0; k < nbins; ++k) {
    auto& b = bins[k];
    if (b.count == 0) {
      b.row_mean = b.col_mean = 0.5;
      continue;
    }
    b.row_mean /= static_cast<double>(b.count);
    b.col_mean /= static_cast<double>(b.count);
    b.bearing_deg = centroid_bearing({b.row_mean, b.col_mean}, rows, cols);
    b.upwind_fraction = up[k] / static_cast<double>(b.count);
  }
  t.bins = std::move(bins);
  t.samples = samples.size();
  if (!samples.empty()) {
    t.upwind_fraction = upwind / static_cast<double>(samples.size());
    t.mean_alignment = align / static_cast<double>(samples.size());
  }
  return t;
}

}  // namespace far
