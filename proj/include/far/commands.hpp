#pragma once

// Subcommand implementations shared by the CLI and the tests.

#include <algorithm>
#include <array>
#include <cmath>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "far/baseline.hpp"
#include "far/checkpoint.hpp"
#include "far/config.hpp"
#include "far/data.hpp"
#include "far/evaluation.hpp"
#include "far/footprint_analysis.hpp"
#include "far/io.hpp"
#include "far/model.hpp"
#include "far/synthetic.hpp"
#include "far/training.hpp"
#include "far/upscale.hpp"

namespace far {

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr int kSplitsFormatVersion = 1;

inline Json format_versions() {
  return {{"config_schema", kConfigSchemaVersion},  {"dataset_schema", kDatasetSchemaVersion},
          {"frame_format", kFrameFormatVersion},     {"checkpoint_format", kCheckpointFormatVersion},
          {"region_schema", kRegionSchemaVersion},   {"splits_format", kSplitsFormatVersion}};
}

inline void write_run_meta(const fs::path& dir, const std::string& command, const RunConfig& cfg, const Json& seeds,
                           const Json& extra = Json::object()) {
  Json m = extra;
  m["command"] = command;
  m["tool_version"] = kToolVersion;
  m["config_hash"] = cfg.hash();
  m["config"] = cfg.source;
  m["seeds"] = seeds;
  m["format_versions"] = format_versions();
  write_json(dir / "run_meta.json", m);
}

// ---------------------------------------------------------------------------
// Split files

inline Json splits_to_json(const Dataset& ds, const SplitAssignment& sa, std::uint64_t seed, const SplitRules& rules) {
  Json j;
  j["format"] = "far-splits";
  j["version"] = kSplitsFormatVersion;
  j["seed"] = seed;
  j["rules"] = {{"min_group_sites", rules.min_group_sites},
                {"withheld_site_fraction", rules.withheld_site_fraction},
                {"val_sample_fraction", rules.val_sample_fraction}};
  j["sites"] = Json::array();
  for (std::size_t s = 0; s < ds.sites.size(); ++s) {
    Json runs = Json::array();
    const auto& f = sa.flags[s];
    for (std::size_t i = 0; i < f.size();) {
      std::size_t k = i;
      while (k < f.size() && f[k] == f[i]) ++k;
      runs.push_back({static_cast<int>(f[i]), k - i});
      i = k;
    }
    j["sites"].push_back({{"site_id", ds.sites[s].site_id},
                          {"role", to_string(sa.roles[s])},
                          {"samples", f.size()},
                          {"flags_rle", runs}});
  }
  return j;
}

inline SplitAssignment splits_from_json(const Json& j, const Dataset& ds) {
  try {
    if (j.at("format").get<std::string>() != "far-splits" || j.at("version").get<int>() != kSplitsFormatVersion)
      throw DataError("not a far-splits file");
    const auto& sites = j.at("sites");
    if (sites.size() != ds.sites.size()) throw DataError("split file does not match the dataset's site count");
    SplitAssignment sa;
    for (std::size_t s = 0; s < sites.size(); ++s) {
      const auto& e = sites[s];
      if (e.at("site_id").get<std::string>() != ds.sites[s].site_id) throw DataError("split file site order mismatch");
      const auto role = e.at("role").get<std::string>();
      sa.roles.push_back(role == "val_site" ? SiteRole::val_site : role == "test_site" ? SiteRole::test_site : SiteRole::train);
      std::vector<SampleFlag> flags;
      for (const auto& run : e.at("flags_rle")) {
        const int code = run.at(0).get<int>();
        if (code < 0 || code > 3) throw DataError("bad split flag code");
        flags.insert(flags.end(), run.at(1).get<std::size_t>(), static_cast<SampleFlag>(code));
      }
      if (flags.size() != ds.sites[s].samples.size())
        throw DataError("split file sample count does not match site " + ds.sites[s].site_id);
      sa.flags.push_back(std::move(flags));
    }
    return sa;
  } catch (const Json::exception& e) {
    throw DataError(std::string("malformed split file: ") + e.what());
  }
}

inline const std::vector<SampleRef>& split_refs(const SplitIndex& idx, const std::string& name) {
  if (name == "train") return idx.train;
  if (name == "val") return idx.val;
  if (name == "val_site") return idx.val_site;
  if (name == "test_site") return idx.test_site;
  if (name == "val_future") return idx.val_future;
  if (name == "test_future") return idx.test_future;
  throw ConfigError("unknown split '" + name + "'");
}

/// Dataset after cleaning and gap filling, as every command sees it.
inline Dataset load_prepared_dataset(const fs::path& dir, std::vector<RejectionReport>* reports = nullptr) {
  Dataset ds = read_dataset(dir);
  auto r = preprocess_dataset(ds);
  if (reports) *reports = std::move(r);
  return ds;
}

// ---------------------------------------------------------------------------
// gen-synth

inline void cmd_gen_synth(const RunConfig& cfg) {
  if (!cfg.synth) throw ConfigError("config has no 'synth' section");
  const auto& s = *cfg.synth;
  const SyntheticDataset syn = generate_synthetic(s.synth, s.seed);
  write_dataset(s.dataset_dir, syn.dataset);
  write_ground_truth(s.truth_dir, syn.dataset, syn.truth);
  Json seeds = {{"synth", s.seed}};
  if (s.region_dir) {
    write_region(*s.region_dir, generate_synthetic_region(s.region, s.synth, s.seed));
    write_run_meta(*s.region_dir, "gen-synth", cfg, seeds);
  }
  write_run_meta(s.dataset_dir, "gen-synth", cfg, seeds);
  write_run_meta(s.truth_dir, "gen-synth", cfg, seeds);
}

// ---------------------------------------------------------------------------
// train

inline void cmd_train(const RunConfig& cfg) {
  if (!cfg.train) throw ConfigError("config has no 'train' section");
  const auto& s = *cfg.train;
  std::vector<RejectionReport> reports;
  const Dataset ds = load_prepared_dataset(s.dataset_dir, &reports);
  const SplitAssignment sa = assign_splits(ds.sites, s.split_seed, s.split_rules);
  fs::create_directories(s.output_dir);
  write_json(s.output_dir / "splits.json", splits_to_json(ds, sa, s.split_seed, s.split_rules));
  Json cleaning = Json::array();
  for (std::size_t i = 0; i < reports.size(); ++i) {
    Json r = to_json(reports[i]);
    r["site_id"] = ds.sites[i].site_id;
    cleaning.push_back(r);
  }
  write_json(s.output_dir / "cleaning.json", cleaning);

  const TrainResult res = train(ds, sa, s.train);
  save_checkpoint(s.output_dir / "far.ckpt", res.model);
  write_file(s.output_dir / "train_log.csv", train_log_csv(res.log));
  if (s.baseline) {
    TrainLog blog;
    const BaselineModel b = train_baseline(ds, sa, s.train, &blog);
    save_baseline(s.output_dir / "baseline.ckpt", b);
    write_file(s.output_dir / "baseline_log.csv", train_log_csv(blog));
  }
  write_run_meta(s.output_dir, "train", cfg, {{"train", s.train.seed}, {"split", s.split_seed}},
                 {{"best_val_site_epoch", res.log.best_val_site_epoch}, {"epochs_run", res.log.epochs.size()}});
}

// ---------------------------------------------------------------------------
// eval

inline std::string predictions_csv(const EvalRecords& r) {
  CsvTable t;
  t.header = {"site_id", "timestamp", "observed", "far", "baseline"};
  for (std::size_t i = 0; i < r.size(); ++i)
    t.rows.push_back({r.site_ids[r.site[i]], format_iso8601(r.timestamp[i]), format_number(r.observed[i]),
                      format_number(r.far[i]), format_number(r.baseline[i])});
  return t.to_string();
}

/// Runs FAR and the baseline on one sample list and builds the report.
inline EvalRecords evaluate_models(const FarModel& m, const BaselineModel& b, const Dataset& ds,
                                   std::span<const SampleRef> refs) {
  const auto far_pred = predict_samples(m, ds, refs);
  const auto base_pred = predict_baseline(b, ds, refs);
  return make_eval_records(ds, refs, far_pred, base_pred);
}

inline void cmd_eval(const RunConfig& cfg) {
  if (!cfg.eval) throw ConfigError("config has no 'eval' section");
  const auto& s = *cfg.eval;
  const Dataset ds = load_prepared_dataset(s.dataset_dir);
  const FarModel m = load_checkpoint(s.checkpoint);
  const BaselineModel b = load_baseline(s.baseline_checkpoint);
  const SplitAssignment sa = splits_from_json(read_json(s.splits), ds);
  const SplitIndex idx = index_splits(ds, sa);
  fs::create_directories(s.output_dir);
  Json summary = Json::object();
  for (const auto& name : s.splits_evaluated) {
    const auto& refs = split_refs(idx, name);
    if (refs.empty()) {
      std::cerr << "warning: split " << name << " is empty; no report written\n";
      summary[name] = {{"samples", 0}, {"warnings", {"split is empty"}}};
      continue;
    }
    const EvalRecords rec = evaluate_models(m, b, ds, refs);
    const MetricReport rep = build_report(rec);
    for (const auto& w : rep.warnings) std::cerr << "warning: " << name << ": " << w << "\n";
    write_json(s.output_dir / ("metrics_" + name + ".json"), to_json(rep));
    write_file(s.output_dir / ("metrics_" + name + "_scales.csv"), scales_csv(rep));
    write_file(s.output_dir / ("metrics_" + name + "_sites.csv"), sites_csv(rep));
    write_file(s.output_dir / ("metrics_" + name + "_groups.csv"), groups_csv(rep));
    write_file(s.output_dir / ("predictions_" + name + ".csv"), predictions_csv(rec));
    summary[name] = {{"samples", refs.size()}};
  }
  Json seeds = Json::object();
  if (s.importance) {
    const auto& imp = *s.importance;
    const auto& base_refs = split_refs(idx, s.splits_evaluated.front());
    const auto refs = capped_subset(base_refs, imp.max_samples, derive_seed(imp.seed, 1));
    CsvTable t;
    t.header = {"feature", "baseline_rmse", "delta_rmse", "repeats", "units"};
    for (const auto& f : imp.features) {
      const auto r = permutation_importance(m, ds, refs, f, imp.seed, imp.repeats);
      t.rows.push_back({r.feature, format_number(r.baseline_rmse), format_number(r.delta_rmse),
                        std::to_string(r.repeats), kFluxUnits});
    }
    write_file(s.output_dir / "importance.csv", t.to_string());
    seeds["importance"] = imp.seed;
  }
  write_run_meta(s.output_dir, "eval", cfg, seeds, {{"splits", summary}});
}

// ---------------------------------------------------------------------------
// footprint-report

inline FootprintVector median_reference(std::span<const FootprintVector> v) {
  auto med = [&](auto get) {
    std::vector<double> x;
    for (const auto& f : v) x.push_back(get(f));
    return quantile(x, 0.5);
  };
  FootprintVector r;
  r.wd = med([](const FootprintVector& f) { return f.wd; });
  r.ws = med([](const FootprintVector& f) { return f.ws; });
  r.ustar = med([](const FootprintVector& f) { return f.ustar; });
  r.ta = med([](const FootprintVector& f) { return f.ta; });
  r.h = med([](const FootprintVector& f) { return f.h; });
  r.height = med([](const FootprintVector& f) { return f.height; });
  return r;
}

inline void cmd_footprint_report(const RunConfig& cfg) {
  if (!cfg.footprint) throw ConfigError("config has no 'footprint' section");
  const auto& s = *cfg.footprint;
  const Dataset ds = load_prepared_dataset(s.dataset_dir);
  const FarModel m = load_checkpoint(s.checkpoint);
  const SplitIndex idx = index_splits(ds, splits_from_json(read_json(s.splits), ds));
  const auto refs = capped_subset(split_refs(idx, s.split), s.max_samples, derive_seed(s.seed, 2));
  if (refs.empty()) throw DataError("footprint report: split " + s.split + " is empty");
  fs::create_directories(s.output_dir);
  const double pixel_area = ds.pixel_size_m * ds.pixel_size_m;
  const ModelFootprint predictor{&m};

  std::vector<FootprintVector> vars;
  CsvTable per;
  per.header = {"site_id", "timestamp", "WD", "WS", "USTAR", "TA", "H", "HEIGHT", "area_m2", "pixels",
                "centroid_row", "centroid_col", "bearing_deg", "upwind"};
  for (const auto& r : refs) {
    const auto& smp = ds.sites[r.site].samples[r.index];
    vars.push_back(smp.fp);
    const FootprintGrid fp = predictor(smp.fp);
    const auto area = footprint_area(fp, pixel_area);
    const Centroid c = footprint_centroid(fp);
    per.rows.push_back({ds.sites[r.site].site_id, format_iso8601(smp.timestamp), format_number(smp.fp.wd),
                        format_number(smp.fp.ws), format_number(smp.fp.ustar), format_number(smp.fp.ta),
                        format_number(smp.fp.h), format_number(smp.fp.height), format_number(area.area_m2),
                        std::to_string(area.pixel_count), format_number(c.row), format_number(c.col),
                        format_number(centroid_bearing(c, m.rows, m.cols)),
                        centroid_is_upwind(c, m.rows, m.cols, smp.fp.wd) ? "1" : "0"});
  }
  write_file(s.output_dir / "footprints.csv", per.to_string());

  const auto table = centroid_vs_wind(predictor, vars, m.rows, m.cols, s.wind_bin_deg);
  CsvTable wt;
  wt.header = {"wd_center", "count", "centroid_row", "centroid_col", "bearing_deg", "upwind_fraction"};
  for (const auto& b : table.bins)
    wt.rows.push_back({format_number(b.wd_center), std::to_string(b.count), format_number(b.row_mean),
                       format_number(b.col_mean), format_number(b.bearing_deg), format_number(b.upwind_fraction)});
  write_file(s.output_dir / "centroid_vs_wind.csv", wt.to_string());

  const FootprintVector ref = median_reference(vars);
  for (const auto& scan : s.scans) {
    std::vector<double> observed;
    for (auto v : vars) observed.push_back(scan_field(v, scan.variable));
    const auto curve = scan_area(predictor, ref, scan.variable, scan.grid, pixel_area, observed);
    CsvTable ct;
    ct.header = {to_string(scan.variable), "area_m2", "support"};
    for (std::size_t i = 0; i < curve.x.size(); ++i)
      ct.rows.push_back({format_number(curve.x[i]), format_number(curve.area_m2[i]), std::to_string(curve.support[i])});
    write_file(s.output_dir / (std::string("area_scan_") + to_string(scan.variable) + ".csv"), ct.to_string());
  }
  write_run_meta(s.output_dir, "footprint-report", cfg, {{"footprint", s.seed}},
                 {{"samples", refs.size()},
                  {"upwind_fraction", table.upwind_fraction},
                  {"mean_alignment", table.mean_alignment}});
}

// ---------------------------------------------------------------------------
// upscale

inline void cmd_upscale(const RunConfig& cfg) {
  if (!cfg.upscale) throw ConfigError("config has no 'upscale' section");
  const auto& s = *cfg.upscale;
  const FarModel m = load_checkpoint(s.checkpoint);
  const RegionRaster region = read_region(s.region_dir);
  UpscaleOptions opt;
  opt.tile_size = s.tile_size;
  if (s.begin) opt.begin = *s.begin;
  if (s.end) opt.end = *s.end;
  fs::create_directories(s.output_dir);

  const Json geo = region_geo(region);
  FrameFileWriter writer(s.output_dir / "flux.bin", "far-flux-raster", region.rows, region.cols, 1,
                         {{"geo", geo}, {"units", kFluxUnits}});
  TemporalMeanAccumulator mean(region.rows, region.cols);
  std::vector<SeriesPoint> series;
  const auto n = static_cast<std::size_t>(region.rows * region.cols);
  const std::size_t tiles_per_step = make_tiles(region.rows, region.cols, opt.tile_size).size();
  FluxRaster current;
  std::size_t tiles_done = 0;
  const auto summary = upscale_region(m, region, opt, [&](std::size_t, Timestamp t, const TileResult& tr) {
    if (tiles_done == 0)
      current = {t, region.rows, region.cols, std::vector<double>(n, std::numeric_limits<double>::quiet_NaN()),
                 std::vector<PixelQuality>(n, PixelQuality::missing)};
    for (Index i = 0; i < tr.tile.rows; ++i)
      for (Index j = 0; j < tr.tile.cols; ++j) {
        const auto dst = static_cast<std::size_t>((tr.tile.row0 + i) * region.cols + tr.tile.col0 + j);
        current.values[dst] = tr.values[static_cast<std::size_t>(i * tr.tile.cols + j)];
        current.mask[dst] = tr.mask[static_cast<std::size_t>(i * tr.tile.cols + j)];
      }
    if (++tiles_done == tiles_per_step) {
      writer.append({current.timestamp, current.mask, Json::object()}, current.values);
      mean.add(current);
      series.push_back(spatial_mean(current));
      tiles_done = 0;
    }
  });
  writer.finish();
  const FluxRaster tm = mean.finish(series.front().timestamp);
  write_flux_rasters(s.output_dir / "flux_mean.bin", std::span<const FluxRaster>(&tm, 1), geo);
  write_file(s.output_dir / "spatial_mean.csv", series_csv(series));
  write_run_meta(s.output_dir, "upscale", cfg, Json::object(),
                 {{"timesteps", summary.timesteps}, {"missing_pixels", summary.missing_pixels}});
  if (summary.missing_pixels > 0)
    throw DataError("partial output: " + std::to_string(summary.missing_pixels) +
                    " pixel-timesteps lack driver or band coverage; see the masks in flux.bin");
}

// ---------------------------------------------------------------------------
// Error reporting

inline int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::config: return 1;
    case ErrorKind::input:
    case ErrorKind::shape:
    case ErrorKind::data: return 2;
    case ErrorKind::numeric: return 3;
  }
  return 2;
}

inline Json error_json(const std::string& command, const Error& e) {
  return {{"error", to_string(e.kind())}, {"message", e.what()}, {"command", command}, {"exit_code", exit_code(e.kind())}};
}

}  // namespace far
