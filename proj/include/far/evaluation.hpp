#pragma once

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "far/data.hpp"
#include "far/errors.hpp"
#include "far/io.hpp"
#include "far/model.hpp"
#include "far/rng.hpp"
#include "far/time.hpp"
#include "far/training.hpp"

namespace far {

// ---------------------------------------------------------------------------
// Metrics

inline double r_squared(std::span<const double> y, std::span<const double> yhat) {
  if (y.size() != yhat.size()) throw ShapeError("r_squared: length mismatch");
  if (y.empty()) throw InputError("r_squared: empty series");
  const double mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
  double sse = 0.0, sst = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    sse += (y[i] - yhat[i]) * (y[i] - yhat[i]);
    sst += (y[i] - mean) * (y[i] - mean);
  }
  if (!(sst > 0.0)) throw InputError("r_squared undefined: observations have zero variance");
  return 1.0 - sse / sst;
}

struct Quantity {
  double value = 0.0;
  std::string units;
};

inline Quantity rmse(std::span<const double> y, std::span<const double> yhat, std::string units) {
  if (y.size() != yhat.size()) throw ShapeError("rmse: length mismatch");
  if (y.empty()) throw InputError("rmse: empty series");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - yhat[i]) * (y[i] - yhat[i]);
  return {std::sqrt(s / static_cast<double>(y.size())), std::move(units)};
}

// ---------------------------------------------------------------------------
// Temporal aggregation

enum class Frequency { half_hour, monthly, yearly };

inline const char* to_string(Frequency f) {
  switch (f) {
    case Frequency::half_hour: return "half_hour";
    case Frequency::monthly: return "monthly";
    case Frequency::yearly: return "yearly";
  }
  return "?";
}

inline Frequency parse_frequency(std::string_view s) {
  for (auto f : {Frequency::half_hour, Frequency::monthly, Frequency::yearly})
    if (s == to_string(f)) return f;
  throw ConfigError("unknown frequency '" + std::string(s) + "'");
}

inline const char* mass_units(Frequency f) {
  switch (f) {
    case Frequency::half_hour: return "Mg C ha-1 (30 min)-1";
    case Frequency::monthly: return "Mg C ha-1 month-1";
    case Frequency::yearly: return "Mg C ha-1 yr-1";
  }
  return "?";
}

inline constexpr double kCarbonGramsPerMicromol = 12.011e-6;
/// Mg C ha-1 accumulated by one half-hour at 1 umol m-2 s-1.
inline constexpr double kHalfHourMass = 1800.0 * kCarbonGramsPerMicromol * 1e-2;
inline constexpr double kMinPeriodCoverage = 0.9;

inline double flux_to_mass(double flux) { return flux * kHalfHourMass; }

/// Mean flux recovered from a period mass accumulated over `half_hours` steps.
inline double mass_to_mean_flux(double mass, std::size_t half_hours) {
  return mass / (static_cast<double>(half_hours) * kHalfHourMass);
}

inline Timestamp period_start(Timestamp t, Frequency f) {
  if (f == Frequency::half_hour) return t - (((t % kHalfHourSeconds) + kHalfHourSeconds) % kHalfHourSeconds);
  const CivilTime c = to_civil(t);
  return from_civil(c.year, f == Frequency::monthly ? c.month : 1u, 1);
}

inline std::size_t expected_half_hours(Timestamp start, Frequency f) {
  if (f == Frequency::half_hour) return 1;
  const CivilTime c = to_civil(start);
  const unsigned days = f == Frequency::monthly ? days_in_month(c.year, c.month) : days_in_year(c.year);
  return static_cast<std::size_t>(days) * 48;
}

struct PeriodSum {
  Timestamp start = 0;
  std::size_t count = 0;
  std::size_t expected = 0;
  double mass = 0.0;  // Mg C ha-1 over the period
  double coverage() const { return static_cast<double>(count) / static_cast<double>(expected); }
  bool complete(double min_coverage = kMinPeriodCoverage) const { return coverage() >= min_coverage; }
};

/// Sums half-hourly fluxes into calendar periods. Incomplete periods are kept
/// in the output; metrics skip them.
inline std::vector<PeriodSum> aggregate_temporal(std::span<const Timestamp> t, std::span<const double> flux,
                                                 Frequency f) {
  if (t.size() != flux.size()) throw ShapeError("aggregate_temporal: length mismatch");
  std::map<Timestamp, PeriodSum> periods;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const Timestamp s = period_start(t[i], f);
    auto& p = periods[s];
    if (p.count == 0) {
      p.start = s;
      p.expected = expected_half_hours(s, f);
    }
    ++p.count;
    p.mass += flux_to_mass(flux[i]);
  }
  std::vector<PeriodSum> out;
  out.reserve(periods.size());
  for (auto& [k, v] : periods) out.push_back(v);
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation records

/// FAR and baseline predictions for one fixed sample list. Every metric is
/// computed from these arrays, so both models always share samples and
/// aggregation windows.
struct EvalRecords {
  std::vector<std::string> site_ids;
  std::vector<std::string> ecosystems;
  std::vector<std::size_t> site;  // index into site_ids
  std::vector<Timestamp> timestamp;
  std::vector<double> observed;
  std::vector<double> far;
  std::vector<double> baseline;

  std::size_t size() const { return observed.size(); }
};

inline EvalRecords make_eval_records(const Dataset& ds, std::span<const SampleRef> refs, std::span<const double> far,
                                     std::span<const double> baseline) {
  if (far.size() != refs.size() || baseline.size() != refs.size())
    throw ShapeError("prediction count does not match evaluation samples");
  EvalRecords r;
  std::map<std::size_t, std::size_t> local;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    auto [it, inserted] = local.try_emplace(refs[i].site, r.site_ids.size());
    if (inserted) {
      r.site_ids.push_back(ds.sites[refs[i].site].site_id);
      r.ecosystems.push_back(ds.sites[refs[i].site].ecosystem);
    }
    const auto& smp = ds.sites[refs[i].site].samples[refs[i].index];
    r.site.push_back(it->second);
    r.timestamp.push_back(smp.timestamp);
    r.observed.push_back(smp.target_fc);
    r.far.push_back(far[i]);
    r.baseline.push_back(baseline[i]);
  }
  return r;
}

struct PairedSeries {
  std::vector<std::size_t> site;
  std::vector<double> observed;
  std::vector<double> far;
  std::vector<double> baseline;
  std::size_t dropped_periods = 0;
};

/// Per-site aggregation at frequency f, keeping complete periods only.
/// Half-hour values stay in flux units.
inline PairedSeries paired_series(const EvalRecords& r, Frequency f, std::optional<std::size_t> only_site = {}) {
  PairedSeries out;
  for (std::size_t s = 0; s < r.site_ids.size(); ++s) {
    if (only_site && *only_site != s) continue;
    std::vector<Timestamp> t;
    std::vector<double> o, a, b;
    for (std::size_t i = 0; i < r.size(); ++i) {
      if (r.site[i] != s) continue;
      t.push_back(r.timestamp[i]);
      o.push_back(r.observed[i]);
      a.push_back(r.far[i]);
      b.push_back(r.baseline[i]);
    }
    if (f == Frequency::half_hour) {
      out.site.insert(out.site.end(), o.size(), s);
      out.observed.insert(out.observed.end(), o.begin(), o.end());
      out.far.insert(out.far.end(), a.begin(), a.end());
      out.baseline.insert(out.baseline.end(), b.begin(), b.end());
      continue;
    }
    const auto po = aggregate_temporal(t, o, f), pa = aggregate_temporal(t, a, f), pb = aggregate_temporal(t, b, f);
    for (std::size_t k = 0; k < po.size(); ++k) {
      if (!po[k].complete()) {
        ++out.dropped_periods;
        continue;
      }
      out.site.push_back(s);
      out.observed.push_back(po[k].mass);
      out.far.push_back(pa[k].mass);
      out.baseline.push_back(pb[k].mass);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Report

struct ScaleMetrics {
  Frequency frequency = Frequency::half_hour;
  std::string units;
  std::size_t n = 0;
  double r2_far = std::numeric_limits<double>::quiet_NaN();
  double r2_baseline = std::numeric_limits<double>::quiet_NaN();
  double rmse_far = std::numeric_limits<double>::quiet_NaN();
  double rmse_baseline = std::numeric_limits<double>::quiet_NaN();
};

struct SiteMetrics {
  std::string site_id;
  std::string ecosystem;
  std::size_t n = 0;
  double rmse_far = 0.0;
  double rmse_baseline = 0.0;
  bool outlier = false;
};

struct GroupMetrics {
  std::string ecosystem;
  Frequency frequency = Frequency::half_hour;
  std::size_t sites = 0;
  std::size_t n = 0;
  double r2_far = std::numeric_limits<double>::quiet_NaN();
  double r2_baseline = std::numeric_limits<double>::quiet_NaN();
};

struct MetricReport {
  std::vector<ScaleMetrics> scales;
  std::vector<SiteMetrics> sites;
  std::vector<GroupMetrics> groups;
  std::vector<std::string> outliers;
  std::vector<std::string> warnings;

  const ScaleMetrics* scale(Frequency f) const {
    for (const auto& s : scales)
      if (s.frequency == f) return &s;
    return nullptr;
  }
};

namespace detail {

inline double r2_or_nan(std::span<const double> y, std::span<const double> yhat, std::vector<std::string>& warnings,
                        const std::string& what) {
  if (y.empty()) return std::numeric_limits<double>::quiet_NaN();
  try {
    return r_squared(y, yhat);
  } catch (const InputError&) {
    warnings.push_back(what + ": R2 undefined (zero variance)");
    return std::numeric_limits<double>::quiet_NaN();
  }
}

inline double type7_quantile(std::vector<double> x, double p) {
  std::sort(x.begin(), x.end());
  const double h = static_cast<double>(x.size() - 1) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, x.size() - 1);
  return x[lo] + (h - static_cast<double>(lo)) * (x[hi] - x[lo]);
}

}  // namespace detail

/// Linear-interpolation (type 7) quartile.
inline double quantile(std::span<const double> x, double p) {
  if (x.empty()) throw InputError("quantile of an empty set");
  return detail::type7_quantile({x.begin(), x.end()}, p);
}

struct OutlierResult {
  std::vector<std::size_t> flagged;  // indices into the input
  double threshold = std::numeric_limits<double>::quiet_NaN();
  std::string warning;
};

/// Values above Q3 + 1.5 IQR. Fewer than 4 values flags nothing.
inline OutlierResult outlier_sites(std::span<const double> per_site_rmse) {
  OutlierResult r;
  if (per_site_rmse.size() < 4) {
    r.warning = "outlier detection needs at least 4 sites";
    return r;
  }
  const double q1 = quantile(per_site_rmse, 0.25), q3 = quantile(per_site_rmse, 0.75);
  r.threshold = q3 + 1.5 * (q3 - q1);
  for (std::size_t i = 0; i < per_site_rmse.size(); ++i)
    if (per_site_rmse[i] > r.threshold) r.flagged.push_back(i);
  return r;
}

/// R2 pooled within each ecosystem group at frequency f.
inline std::vector<GroupMetrics> per_group_metrics(const EvalRecords& r, Frequency f,
                                                   std::vector<std::string>* warnings = nullptr) {
  std::map<std::string, std::vector<std::size_t>> members;
  for (std::size_t s = 0; s < r.site_ids.size(); ++s) members[r.ecosystems[s]].push_back(s);
  std::vector<std::string> local;
  auto& warn = warnings ? *warnings : local;
  const PairedSeries all = paired_series(r, f);
  std::vector<GroupMetrics> out;
  for (const auto& [eco, sites] : members) {
    GroupMetrics g;
    g.ecosystem = eco;
    g.frequency = f;
    g.sites = sites.size();
    std::vector<double> o, a, b;
    for (std::size_t i = 0; i < all.site.size(); ++i) {
      if (std::find(sites.begin(), sites.end(), all.site[i]) == sites.end()) continue;
      o.push_back(all.observed[i]);
      a.push_back(all.far[i]);
      b.push_back(all.baseline[i]);
    }
    if (o.empty()) {
      warn.push_back("group " + eco + " has no " + to_string(f) + " periods; omitted");
      continue;
    }
    g.n = o.size();
    g.r2_far = detail::r2_or_nan(o, a, warn, "group " + eco + " FAR " + to_string(f));
    g.r2_baseline = detail::r2_or_nan(o, b, warn, "group " + eco + " baseline " + to_string(f));
    out.push_back(g);
  }
  return out;
}

inline MetricReport build_report(const EvalRecords& r) {
  MetricReport rep;
  for (auto f : {Frequency::half_hour, Frequency::monthly, Frequency::yearly}) {
    const PairedSeries p = paired_series(r, f);
    ScaleMetrics m;
    m.frequency = f;
    m.units = f == Frequency::half_hour ? kFluxUnits : mass_units(f);
    m.n = p.observed.size();
    if (p.dropped_periods > 0)
      rep.warnings.push_back(std::to_string(p.dropped_periods) + " " + to_string(f) +
                             " periods below 90% coverage excluded");
    if (m.n == 0) {
      rep.warnings.push_back(std::string("no complete ") + to_string(f) + " periods; table left empty");
    } else {
      m.r2_far = detail::r2_or_nan(p.observed, p.far, rep.warnings, std::string("FAR ") + to_string(f));
      m.r2_baseline = detail::r2_or_nan(p.observed, p.baseline, rep.warnings, std::string("baseline ") + to_string(f));
      m.rmse_far = rmse(p.observed, p.far, m.units).value;
      m.rmse_baseline = rmse(p.observed, p.baseline, m.units).value;
    }
    rep.scales.push_back(m);
  }
  std::vector<double> site_rmse;
  for (std::size_t s = 0; s < r.site_ids.size(); ++s) {
    const PairedSeries p = paired_series(r, Frequency::half_hour, s);
    SiteMetrics sm{r.site_ids[s], r.ecosystems[s], p.observed.size(), 0.0, 0.0, false};
    if (!p.observed.empty()) {
      sm.rmse_far = rmse(p.observed, p.far, kFluxUnits).value;
      sm.rmse_baseline = rmse(p.observed, p.baseline, kFluxUnits).value;
    }
    site_rmse.push_back(sm.rmse_far);
    rep.sites.push_back(sm);
  }
  const auto out = outlier_sites(site_rmse);
  if (!out.warning.empty()) rep.warnings.push_back(out.warning);
  for (auto i : out.flagged) {
    rep.sites[i].outlier = true;
    rep.outliers.push_back(rep.sites[i].site_id);
  }
  for (auto f : {Frequency::half_hour, Frequency::monthly}) {
    auto g = per_group_metrics(r, f, &rep.warnings);
    rep.groups.insert(rep.groups.end(), g.begin(), g.end());
  }
  return rep;
}

inline Json nan_to_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

inline Json to_json(const MetricReport& rep) {
  Json j;
  j["scales"] = Json::array();
  for (const auto& s : rep.scales)
    j["scales"].push_back({{"frequency", to_string(s.frequency)},
                           {"units", s.units},
                           {"n", s.n},
                           {"far", {{"r2", nan_to_null(s.r2_far)}, {"rmse", nan_to_null(s.rmse_far)}}},
                           {"baseline", {{"r2", nan_to_null(s.r2_baseline)}, {"rmse", nan_to_null(s.rmse_baseline)}}}});
  j["sites"] = Json::array();
  for (const auto& s : rep.sites)
    j["sites"].push_back({{"site_id", s.site_id},
                          {"ecosystem", s.ecosystem},
                          {"n", s.n},
                          {"rmse_far", s.rmse_far},
                          {"rmse_baseline", s.rmse_baseline},
                          {"rmse_units", kFluxUnits},
                          {"outlier", s.outlier}});
  j["groups"] = Json::array();
  for (const auto& g : rep.groups)
    j["groups"].push_back({{"ecosystem", g.ecosystem},
                           {"frequency", to_string(g.frequency)},
                           {"sites", g.sites},
                           {"n", g.n},
                           {"r2_far", nan_to_null(g.r2_far)},
                           {"r2_baseline", nan_to_null(g.r2_baseline)}});
  j["outlier_sites"] = rep.outliers;
  j["warnings"] = rep.warnings;
  return j;
}

inline std::string scales_csv(const MetricReport& rep) {
  CsvTable t;
  t.header = {"frequency", "units", "n", "r2_far", "r2_baseline", "rmse_far", "rmse_baseline"};
  for (const auto& s : rep.scales)
    t.rows.push_back({to_string(s.frequency), s.units, std::to_string(s.n), format_number(s.r2_far),
                      format_number(s.r2_baseline), format_number(s.rmse_far), format_number(s.rmse_baseline)});
  return t.to_string();
}

inline std::string sites_csv(const MetricReport& rep) {
  CsvTable t;
  t.header = {"site_id", "ecosystem", "n", "rmse_far", "rmse_baseline", "outlier"};
  for (const auto& s : rep.sites)
    t.rows.push_back({s.site_id, s.ecosystem, std::to_string(s.n), format_number(s.rmse_far),
                      format_number(s.rmse_baseline), s.outlier ? "1" : "0"});
  return t.to_string();
}

inline std::string groups_csv(const MetricReport& rep) {
  CsvTable t;
  t.header = {"ecosystem", "frequency", "sites", "n", "r2_far", "r2_baseline"};
  for (const auto& g : rep.groups)
    t.rows.push_back({g.ecosystem, to_string(g.frequency), std::to_string(g.sites), std::to_string(g.n),
                      format_number(g.r2_far), format_number(g.r2_baseline)});
  return t.to_string();
}

// ---------------------------------------------------------------------------
// Permutation importance

/// Names accepted by permutation_importance: drivers, raw footprint
/// variables, angles and band names. TA feeds both arms and is permuted in
/// both together.
inline std::vector<std::string> permutable_features(const Dataset& ds) {
  std::vector<std::string> out = {"SW_IN", "TA", "RH", "WD", "WS", "USTAR", "H", "HEIGHT"};
  for (auto a : kAngleNames) out.emplace_back(a);
  for (const auto& b : ds.band_names) out.push_back(b);
  return out;
}

namespace detail {

inline void copy_feature(HalfHourSample& dst, const HalfHourSample& src, std::string_view f) {
  if (f == "SW_IN") dst.drivers.sw_in = src.drivers.sw_in;
  else if (f == "TA") dst.drivers.ta = src.drivers.ta, dst.fp.ta = src.fp.ta;
  else if (f == "RH") dst.drivers.rh = src.drivers.rh;
  else if (f == "WD") dst.fp.wd = src.fp.wd;
  else if (f == "WS") dst.fp.ws = src.fp.ws;
  else if (f == "USTAR") dst.fp.ustar = src.fp.ustar;
  else if (f == "H") dst.fp.h = src.fp.h;
  else if (f == "HEIGHT") dst.fp.height = src.fp.height;
}

/// Half-hour predictions with `feature` of sample i taken from sample perm[i].
inline std::vector<double> predict_permuted(const FarModel& m, const Dataset& ds, std::span<const SampleRef> refs,
                                            std::string_view feature, std::span<const std::size_t> perm,
                                            PatchCache& cache) {
  int angle = -1;
  for (std::size_t k = 0; k < kAngleNames.size(); ++k)
    if (feature == kAngleNames[k]) angle = static_cast<int>(k);
  Index band = -1;
  for (std::size_t k = 0; k < ds.band_names.size(); ++k)
    if (feature == ds.band_names[k]) band = static_cast<Index>(k);

  std::vector<double> out;
  out.reserve(refs.size());
  std::vector<PreparedSample> chunk;
  std::vector<Matrix> swapped;
  for (std::size_t start = 0; start < refs.size(); start += kEvalChunk) {
    chunk.clear();
    swapped.clear();
    swapped.reserve(kEvalChunk);
    for (std::size_t i = start; i < std::min(refs.size(), start + kEvalChunk); ++i) {
      const auto& site = ds.sites[refs[i].site];
      HalfHourSample smp = site.samples[refs[i].index];
      const SampleRef donor = refs[perm[i]];
      const auto& dsmp = ds.sites[donor.site].samples[donor.index];
      copy_feature(smp, dsmp, feature);
      ScenePatch patch_angles = site.patches[smp.patch_ref];
      const Matrix* pixels = &cache.pixels(refs[i].site, smp.patch_ref);
      if (angle >= 0)
        patch_angles.angles[static_cast<std::size_t>(angle)] =
            ds.sites[donor.site].patches[dsmp.patch_ref].angles[static_cast<std::size_t>(angle)];
      if (band >= 0) {
        swapped.push_back(*pixels);
        swapped.back().row(band) = cache.pixels(donor.site, dsmp.patch_ref).row(band);
        pixels = &swapped.back();
      }
      chunk.push_back(prepare_sample(m, smp, patch_angles, *pixels));
    }
    for (double z : far_batch_forward(m, chunk).predictions) out.push_back(m.denormalize_target(z));
  }
  return out;
}

}  // namespace detail

struct ImportanceResult {
  std::string feature;
  double baseline_rmse = 0.0;
  double delta_rmse = 0.0;  // mean over repeats, flux units
  std::size_t repeats = 0;
};

/// Increase in half-hour RMSE after shuffling one input across the set.
inline ImportanceResult permutation_importance(const FarModel& m, const Dataset& ds, std::span<const SampleRef> refs,
                                               const std::string& feature, std::uint64_t seed, std::size_t repeats) {
  const auto names = permutable_features(ds);
  if (std::find(names.begin(), names.end(), feature) == names.end())
    throw ConfigError("unknown feature '" + feature + "' for permutation importance");
  if (refs.empty()) throw InputError("permutation importance needs a non-empty evaluation set");
  if (repeats < 1) throw ConfigError("repeats must be >= 1");
  PatchCache cache(m, ds);
  std::vector<double> y;
  for (const auto& r : refs) y.push_back(ds.sites[r.site].samples[r.index].target_fc);
  std::vector<std::size_t> identity(refs.size());
  std::iota(identity.begin(), identity.end(), std::size_t{0});
  ImportanceResult res;
  res.feature = feature;
  res.repeats = repeats;
  res.baseline_rmse = rmse(y, detail::predict_permuted(m, ds, refs, "", identity, cache), kFluxUnits).value;
  Rng rng(derive_seed(seed, fnv1a(feature)));
  double total = 0.0;
  for (std::size_t k = 0; k < repeats; ++k) {
    std::vector<std::size_t> perm = identity;
    rng.shuffle(std::span<std::size_t>(perm));
    total += rmse(y, detail::predict_permuted(m, ds, refs, feature, perm, cache), kFluxUnits).value - res.baseline_rmse;
  }
  res.delta_rmse = total / static_cast<double>(repeats);
  return res;
}

// ---------------------------------------------------------------------------
// Pixel maps against known truth

/// Pooled R2 of predicted per-pixel flux maps against reference maps.
inline double pixel_map_r2(std::span<const FluxGrid> truth, std::span<const FluxGrid> predicted) {
  if (truth.size() != predicted.size()) throw ShapeError("pixel_map_r2: map count mismatch");
  std::vector<double> a, b;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i].values.rows() != predicted[i].values.rows() || truth[i].values.cols() != predicted[i].values.cols())
      throw ShapeError("pixel_map_r2: grid mismatch");
    a.insert(a.end(), truth[i].values.data(), truth[i].values.data() + truth[i].values.size());
    b.insert(b.end(), predicted[i].values.data(), predicted[i].values.data() + predicted[i].values.size());
  }
  return r_squared(a, b);
}

}  // namespace far
