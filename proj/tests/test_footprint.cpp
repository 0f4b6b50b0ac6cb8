#include <gtest/gtest.h>

#include <cmath>

#include "far/footprint_analysis.hpp"

using namespace far;

namespace {

FootprintVector met(double wd, double ustar = 0.4, double height = 4.0) {
  FootprintVector v;
  v.wd = wd;
  v.ws = 3.0;
  v.ustar = ustar;
  v.ta = 15.0;
  v.h = 80.0;
  v.height = height;
  return v;
}

// Centroid offset from the grid centre in metres (east, north).
std::pair<double, double> offset_m(const FootprintGrid& fp, double pixel) {
  const Centroid c = footprint_centroid(fp);
  return {(c.col - 0.5) * static_cast<double>(fp.cols()) * pixel,
          (0.5 - c.row) * static_cast<double>(fp.rows()) * pixel};
}

FarModel zero_footprint_model(Index n) {
  FarModel m = FarModel::initialize({n, n, 2, 8, 2}, Normalization::identity(2), 0.0, EntropySign::prose, 3);
  for (auto& l : m.footprint_mlp.layers()) {
    l.weight.setZero();
    l.bias.setZero();
  }
  return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// Area

TEST(Area, UniformGrid) {
  const auto a = footprint_area(FootprintGrid::uniform(128, 128), 900.0);
  // k / 16384 > 0.95 first holds at k = 15565.
  EXPECT_EQ(a.pixel_count, 15565);
  EXPECT_DOUBLE_EQ(a.area_m2, 14008500.0);
}

TEST(Area, ExactThresholdIsNotEnough) {
  Matrix w(2, 2);
  w << 0.05, 0.3, 0.5, 0.15;
  const auto a = footprint_area(FootprintGrid::from_weights(w), 900.0);
  // 0.5 + 0.3 + 0.15 reaches 0.95 but does not exceed it.
  EXPECT_EQ(a.pixel_count, 4);
  EXPECT_EQ(footprint_area(FootprintGrid::from_weights(w), 900.0, 0.9).pixel_count, 3);
  EXPECT_EQ(footprint_area(FootprintGrid::from_weights(w), 900.0, 0.5).pixel_count, 2);
}

TEST(Area, Delta) {
  const auto a = footprint_area(FootprintGrid::delta(32, 32, 7, 19), 900.0);
  EXPECT_EQ(a.pixel_count, 1);
  EXPECT_EQ(a.area_m2, 900.0);
}

TEST(Area, ThresholdValidated) {
  EXPECT_THROW(footprint_area(FootprintGrid::uniform(4, 4), 1.0, 1.0), InputError);
  EXPECT_THROW(footprint_area(FootprintGrid::uniform(4, 4), 1.0, 0.0), InputError);
}

// ---------------------------------------------------------------------------
// Centroids

TEST(Centroid, DeltaAndUniform) {
  const auto c = footprint_centroid(FootprintGrid::delta(10, 20, 3, 15));
  EXPECT_DOUBLE_EQ(c.row, 0.35);
  EXPECT_DOUBLE_EQ(c.col, 0.775);
  const auto u = footprint_centroid(FootprintGrid::uniform(9, 12));
  EXPECT_NEAR(u.row, 0.5, 1e-14);
  EXPECT_NEAR(u.col, 0.5, 1e-14);
}

TEST(Centroid, BearingAndUpwind) {
  // North is row 0, east is the last column.
  EXPECT_NEAR(centroid_bearing({0.2, 0.5}, 10, 10), 0.0, 1e-12);
  EXPECT_NEAR(centroid_bearing({0.5, 0.9}, 10, 10), 90.0, 1e-12);
  EXPECT_NEAR(centroid_bearing({0.8, 0.5}, 10, 10), 180.0, 1e-12);
  EXPECT_NEAR(centroid_bearing({0.3, 0.3}, 10, 10), 315.0, 1e-12);
  EXPECT_TRUE(centroid_is_upwind({0.2, 0.5}, 10, 10, 0.0));
  EXPECT_FALSE(centroid_is_upwind({0.2, 0.5}, 10, 10, 180.0));
  EXPECT_TRUE(centroid_is_upwind({0.5, 0.9}, 10, 10, 45.0));
  EXPECT_FALSE(centroid_is_upwind({0.5, 0.5}, 10, 10, 45.0));
}

// ---------------------------------------------------------------------------
// Analytic plume

TEST(Plume, MassSitsUpwind) {
  for (double wd : {0.0, 45.0, 90.0, 200.0, 315.0}) {
    const auto fp = analytic_plume(met(wd), {}, 32, 32, 30.0);
    EXPECT_NEAR(fp.weights().sum(), 1.0, 1e-12);
    const auto c = footprint_centroid(fp);
    EXPECT_TRUE(centroid_is_upwind(c, 32, 32, wd)) << wd;
    double diff = std::abs(centroid_bearing(c, 32, 32) - wd);
    diff = std::min(diff, 360.0 - diff);
    EXPECT_LT(diff, 2.0) << wd;
  }
}

TEST(Plume, CentroidDistanceTracksPeakDistance) {
  // Fine pixels on a wide grid keep the whole plume inside the domain.
  const PlumeParams params;
  for (double h : {2.0, 4.0}) {
    const auto v = met(0.0, 0.4, h);
    const auto [east, north] = offset_m(analytic_plume(v, params, 160, 160, 5.0), 5.0);
    EXPECT_NEAR(east, 0.0, 1e-9);
    EXPECT_NEAR(north, params.peak_distance(v), 0.01 * params.peak_distance(v));
  }
  const auto near = offset_m(analytic_plume(met(0.0, 0.4, 2.0), params, 160, 160, 5.0), 5.0).second;
  const auto far_ = offset_m(analytic_plume(met(0.0, 0.4, 4.0), params, 160, 160, 5.0), 5.0).second;
  EXPECT_NEAR(far_ / near, 2.0, 0.02);
}

TEST(Plume, UstarFloor) {
  const PlumeParams params;
  EXPECT_EQ(params.peak_distance(met(0, 0.01)), params.peak_distance(met(0, 0.1)));
  EXPECT_EQ(params.peak_distance(met(0, 0.2, 3.0)), 150.0);
}

TEST(Plume, QuarterTurnOfWindRotatesGrid) {
  const Index n = 24;
  const auto a = analytic_plume(met(30.0), {}, n, n, 30.0);
  const auto b = analytic_plume(met(120.0), {}, n, n, 30.0);
  // Clockwise quarter turn: new(r, c) = old(n-1-c, r).
  for (Index r = 0; r < n; ++r)
    for (Index c = 0; c < n; ++c) ASSERT_NEAR(b(r, c), a(n - 1 - c, r), 1e-12);
}

TEST(Plume, Errors) {
  auto v = met(0.0);
  v.ws = NAN;
  EXPECT_THROW(analytic_plume(v, {}, 8, 8, 30.0), InputError);
  PlumeParams bad;
  bad.cross_spread = 0.0;
  EXPECT_THROW(analytic_plume(met(0.0), bad, 8, 8, 30.0), ConfigError);
  // A narrow plume peaking far off the grid underflows everywhere.
  PlumeParams narrow;
  narrow.along_spread = narrow.cross_spread = 0.001;
  EXPECT_THROW(analytic_plume(met(0.0), narrow, 8, 8, 1.0), DataError);
}

// ---------------------------------------------------------------------------
// Scans

TEST(Scan, FlatForUniformAndZeroModel) {
  const std::vector<double> grid = {0.1, 0.3, 0.5, 0.8};
  const auto u = scan_area(UniformFootprint{16, 16}, met(0.0), ScanVariable::ustar, grid, 900.0);
  const FarModel m = zero_footprint_model(16);
  const auto z = scan_area(ModelFootprint{&m}, met(0.0), ScanVariable::ustar, grid, 900.0);
  ASSERT_EQ(u.area_m2.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(u.area_m2[i], u.area_m2[0]);
    EXPECT_EQ(z.area_m2[i], u.area_m2[0]);
  }
  EXPECT_EQ(u.area_m2[0], 244.0 * 900.0);  // k / 256 > 0.95 first at 244
}

TEST(Scan, PlumeAreaGrowsWithHeightAndShrinksWithUstar) {
  const PlumeFootprint plume{{}, 96, 96, 10.0};
  const std::vector<double> heights = {1.0, 1.5, 2.0, 3.0, 4.0};
  const auto h = scan_area(plume, met(45.0, 0.5, 2.0), ScanVariable::height, heights, 100.0);
  for (std::size_t i = 1; i < heights.size(); ++i) EXPECT_GT(h.area_m2[i], h.area_m2[i - 1]);
  const std::vector<double> ustars = {0.2, 0.3, 0.5, 0.8};
  const auto u = scan_area(plume, met(45.0, 0.5, 2.0), ScanVariable::ustar, ustars, 100.0);
  for (std::size_t i = 1; i < ustars.size(); ++i) EXPECT_LT(u.area_m2[i], u.area_m2[i - 1]);
}

TEST(Scan, SupportHistogram) {
  const std::vector<double> grid = {1.0, 2.0, 4.0};
  const std::vector<double> values = {-5.0, 1.4, 1.5, 1.6, 2.9, 3.1, 100.0, NAN};
  const auto h = support_histogram(grid, values);
  EXPECT_EQ(h, (std::vector<std::size_t>{3, 2, 2}));
  const std::vector<double> bad = {1.0, 1.0};
  EXPECT_THROW(scan_area(UniformFootprint{4, 4}, met(0.0), ScanVariable::ws, bad, 1.0), InputError);
}

TEST(Scan, VariableNames) {
  for (const char* s : {"USTAR", "WS", "HEIGHT", "TA", "H", "WD"}) EXPECT_STREQ(to_string(parse_scan_variable(s)), s);
  EXPECT_THROW(parse_scan_variable("ustar"), ConfigError);
}

// ---------------------------------------------------------------------------
// Centroid against wind direction

TEST(WindTable, PlumeIsAlwaysUpwind) {
  std::vector<FootprintVector> samples;
  for (int i = 0; i < 72; ++i) samples.push_back(met(5.0 * i + 2.5));
  const auto t = centroid_vs_wind(PlumeFootprint{{}, 32, 32, 30.0}, samples, 32, 32);
  EXPECT_EQ(t.samples, 72u);
  EXPECT_EQ(t.bins.size(), 12u);
  EXPECT_EQ(t.upwind_fraction, 1.0);
  EXPECT_GT(t.mean_alignment, 0.99);
  for (const auto& b : t.bins) {
    EXPECT_EQ(b.count, 6u);
    double diff = std::abs(b.bearing_deg - b.wd_center);
    EXPECT_LT(std::min(diff, 360.0 - diff), 3.0);
  }
}

TEST(WindTable, UniformIsNeverUpwind) {
  std::vector<FootprintVector> samples = {met(10.0), met(350.0), met(180.0)};
  const auto t = centroid_vs_wind(UniformFootprint{8, 8}, samples, 8, 8, 90.0);
  EXPECT_EQ(t.bins.size(), 4u);
  EXPECT_EQ(t.bins[0].count, 1u);
  EXPECT_EQ(t.bins[3].count, 1u);
  EXPECT_NEAR(t.mean_alignment, 0.0, 1e-12);
  EXPECT_EQ(t.bins[1].count, 0u);
  EXPECT_EQ(t.bins[1].row_mean, 0.5);
}
