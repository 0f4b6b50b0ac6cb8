// Acceptance run: one PASS/FAIL line per criterion. Exit status is non-zero
// when any criterion fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "far/far.hpp"

using namespace far;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int prec = 6) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// Shared pipeline run (criteria 2, 6, 7, 8, 11)

struct PipelineRun {
  RunConfig cfg;
  double train_seconds = 0.0;
  FarModel model;
  BaselineModel baseline;
  Dataset ds;
  SplitIndex idx;
  Json metrics;
};

RunConfig recovery_config() {
  return load_run_config(fs::path(FAR_SOURCE_DIR) / "configs" / "synthetic_recovery.json");
}

// Runs gen-synth, train and eval with paths relative to `dir`.
PipelineRun run_pipeline(const fs::path& dir) {
  const fs::path here = fs::current_path();
  PipelineRun run;
  run.cfg = recovery_config();
  fs::create_directories(dir);
  fs::current_path(dir);
  try {
    cmd_gen_synth(run.cfg);
    const auto t0 = std::chrono::steady_clock::now();
    cmd_train(run.cfg);
    run.train_seconds = seconds_since(t0);
    cmd_eval(run.cfg);
    run.model = load_checkpoint(run.cfg.eval->checkpoint);
    run.baseline = load_baseline(run.cfg.eval->baseline_checkpoint);
    run.ds = load_prepared_dataset(run.cfg.eval->dataset_dir);
    run.idx = index_splits(run.ds, splits_from_json(read_json(run.cfg.eval->splits), run.ds));
    run.metrics = read_json(run.cfg.eval->output_dir / "metrics_test_site.json");
  } catch (...) {
    fs::current_path(here);
    throw;
  }
  fs::current_path(here);
  return run;
}

class Shared {
 public:
  PipelineRun& primary() {
    if (!primary_) {
      std::cerr << "running the recovery pipeline in " << fs::absolute("primary") << "\n";
      primary_ = run_pipeline("primary");
    }
    return *primary_;
  }

 private:
  std::optional<PipelineRun> primary_;
};

double scale_r2(const Json& metrics, std::size_t i, const char* model) {
  const auto& v = metrics.at("scales").at(i).at(model).at("r2");
  return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
}

// ---------------------------------------------------------------------------
// 1. Gradients against central differences

FeatureStats random_stats(std::size_t n, Rng& rng) {
  FeatureStats s;
  for (std::size_t k = 0; k < n; ++k) {
    s.mean.push_back(rng.uniform(-1.0, 1.0));
    s.std.push_back(rng.uniform(0.5, 2.0));
    s.clamped.push_back(false);
  }
  return s;
}

double batch_loss(const FarModel& m, std::span<const PreparedSample> batch) {
  const auto out = far_batch_forward(m, batch);
  double loss = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double e = out.predictions[i] - batch[i].target;
    loss += e * e + m.lambda * entropy_sign_factor(m.entropy_sign) * out.entropies[i];
  }
  return loss / static_cast<double>(batch.size());
}

// Smallest |pre-activation| over every hidden unit and batch point. Central
// differences are only meaningful away from the ReLU kink.
double kink_margin(const FarModel& m, std::span<const PreparedSample> batch) {
  detail::BatchActivations act;
  detail::batch_forward(m, batch, act, false);
  double margin = std::numeric_limits<double>::infinity();
  for (const auto* pair : {&m.flux_mlp, &m.footprint_mlp}) {
    const MlpTape& tape = pair == &m.flux_mlp ? act.flux_tape : act.fp_tape;
    for (std::size_t k = 0; k + 1 < pair->layer_count(); ++k) {
      const auto& l = pair->layers()[k];
      const Matrix z = (l.weight * tape.layer_inputs[k]).colwise() + l.bias;
      margin = std::min(margin, z.cwiseAbs().minCoeff());
    }
  }
  return margin;
}

Verdict gradient_check() {
  const auto t0 = std::chrono::steady_clock::now();
  const double h = 1e-5;
  double worst = 0.0;
  std::size_t probes = 0, checked = 0, skipped = 0;
  const std::size_t configs = 24;
  for (std::uint64_t seed = 0; checked < configs; ++seed) {
    Rng rng(derive_seed(seed, 77));
    const Index bands = 3;
    Normalization n{random_stats(bands, rng), random_stats(kAngleCount, rng), random_stats(kDriverCount, rng),
                    random_stats(kFootprintFeatureCount, rng), random_stats(1, rng)};
    const double lambdas[] = {0.0, 0.2, -0.2};
    FarModel m = FarModel::initialize({4, 4, bands, 8, 2}, n, lambdas[seed % 3],
                                      seed % 2 ? EntropySign::as_typeset : EntropySign::prose, seed);
    for (auto* net : {&m.flux_mlp, &m.footprint_mlp})
      for (auto& l : net->layers())
        for (Index i = 0; i < l.bias.size(); ++i) l.bias(i) = rng.uniform(-0.3, 0.3);

    std::vector<Matrix> pixels;
    for (int i = 0; i < 3; ++i) {
      Matrix px(bands, m.pixels());
      for (Index k = 0; k < px.size(); ++k) px.data()[k] = rng.normal();
      pixels.push_back(px);
    }
    std::vector<PreparedSample> batch;
    for (const auto& px : pixels) {
      PreparedSample s;
      s.pixels = &px;
      for (auto& a : s.angles) a = rng.normal();
      for (auto& d : s.drivers) d = rng.normal();
      for (auto& f : s.footprint) f = rng.normal();
      s.target = rng.normal();
      batch.push_back(s);
    }
    if (kink_margin(m, batch) < 1e-4) {
      ++skipped;
      continue;
    }
    ++checked;

    FarGradients g = FarGradients::zeros_like(m);
    far_batch_gradients(m, batch, g);
    auto check = [&](Mlp& net, const MlpGradients& grads) {
      for (std::size_t k = 0; k < net.layer_count(); ++k) {
        auto& l = net.layers()[k];
        auto probe = [&](double& p, double analytic) {
          const double keep = p;
          p = keep + h;
          const double up = batch_loss(m, batch);
          p = keep - h;
          const double down = batch_loss(m, batch);
          p = keep;
          const double fd = (up - down) / (2 * h);
          worst = std::max(worst, std::abs(fd - analytic) / std::max({std::abs(fd), std::abs(analytic), 1e-3}));
          ++probes;
        };
        for (Index i = 0; i < l.weight.size(); ++i) probe(l.weight.data()[i], grads.layers[k].weight.data()[i]);
        for (Index i = 0; i < l.bias.size(); ++i) probe(l.bias(i), grads.layers[k].bias(i));
      }
    };
    check(m.flux_mlp, g.flux);
    check(m.footprint_mlp, g.footprint);
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-4 && secs < 60.0,
          std::to_string(checked) + " configs (" + std::to_string(skipped) + " redrawn: unit within 1e-4 of the ReLU kink), " +
              std::to_string(probes) + " parameters, worst relative error " + fmt(worst, 3) + ", " + fmt(secs, 3) + " s"};
}

// ---------------------------------------------------------------------------
// 2. Footprints sum to one

Verdict normalization_fuzz(Shared& shared) {
  Rng rng(2024);
  double worst = 0.0;
  const std::size_t fuzz = 10000;
  for (std::size_t i = 0; i < fuzz; ++i) {
    const auto rows = static_cast<Index>(1 + rng.below(40));
    const auto cols = static_cast<Index>(1 + rng.below(40));
    const double scale = i % 4 == 0 ? 1e4 : std::pow(10.0, rng.uniform(-2.0, 4.0));
    Matrix z(rows, cols);
    for (Index k = 0; k < z.size(); ++k) z.data()[k] = rng.uniform(-scale, scale);
    if (i % 10 == 0) z(0, 0) = (i % 20 == 0 ? 1e4 : -1e4);
    worst = std::max(worst, std::abs(softmax_2d(z).weights().sum() - 1.0));
  }
  auto& run = shared.primary();
  std::size_t trained = 0;
  for (const auto& r : run.idx.test_site) {
    const auto& smp = run.ds.sites[r.site].samples[r.index];
    worst = std::max(worst, std::abs(predict_footprint(run.model, smp.fp).weights().sum() - 1.0));
    ++trained;
  }
  return {worst <= 1e-9, std::to_string(fuzz) + " fuzz grids and " + std::to_string(trained) +
                             " trained-model footprints, worst |sum - 1| " + fmt(worst, 3)};
}

// ---------------------------------------------------------------------------
// 3. Aggregation identities

Verdict aggregation_identities() {
  Rng rng(5);
  double worst = 0.0;
  for (int trial = 0; trial < 500; ++trial) {
    const auto n = static_cast<Index>(2 + rng.below(30));
    Matrix z(n, n), f(n, n);
    for (Index k = 0; k < z.size(); ++k) {
      z.data()[k] = rng.uniform(-50.0, 50.0);
      f.data()[k] = rng.uniform(-30.0, 30.0);
    }
    const double c = rng.uniform(-20.0, 20.0);
    worst = std::max(worst, std::abs(aggregate({Matrix::Constant(n, n, c)}, softmax_2d(z)) - c));
    const auto i = static_cast<Index>(rng.below(static_cast<std::uint64_t>(n)));
    const auto j = static_cast<Index>(rng.below(static_cast<std::uint64_t>(n)));
    worst = std::max(worst, std::abs(aggregate({f}, FootprintGrid::delta(n, n, i, j)) - f(i, j)));
  }
  return {worst <= 1e-9, "500 grids, worst deviation " + fmt(worst, 3)};
}

// ---------------------------------------------------------------------------
// 4. 95% area

Verdict area_rule() {
  const auto u = footprint_area(FootprintGrid::uniform(128, 128), 900.0);
  Matrix w(2, 2);
  w << 0.5, 0.3, 0.15, 0.05;
  const auto b = footprint_area(FootprintGrid::from_weights(w), 900.0);
  return {u.pixel_count == 15565 && u.area_m2 == 14008500.0 && b.pixel_count == 4,
          "uniform " + std::to_string(u.pixel_count) + " px / " + fmt(u.area_m2, 10) + " m2, boundary case " +
              std::to_string(b.pixel_count) + " px"};
}

// ---------------------------------------------------------------------------
// 5. Unit conversion

Verdict unit_conversion() {
  const Timestamp t0 = from_civil(2021, 1, 1);
  std::vector<Timestamp> t;
  for (std::size_t i = 0; i < 365 * 48; ++i) t.push_back(t0 + static_cast<Timestamp>(i) * kHalfHourSeconds);
  const std::vector<double> ones(t.size(), 1.0);
  const auto y = aggregate_temporal(t, ones, Frequency::yearly);
  const auto m = aggregate_temporal(t, ones, Frequency::monthly);
  double sum = 0.0;
  for (const auto& p : m) sum += p.mass;
  const double rel_year = std::abs(y.at(0).mass - 3.7879) / 3.7879;
  const double rel_months = std::abs(sum - y.at(0).mass) / y.at(0).mass;
  return {y.size() == 1 && m.size() == 12 && rel_year <= 1e-4 && rel_months <= 1e-9,
          "yearly " + fmt(y.at(0).mass, 8) + " Mg C ha-1 (rel. " + fmt(rel_year, 3) + "), months vs year rel. " +
              fmt(rel_months, 3)};
}

// ---------------------------------------------------------------------------
// 6. Synthetic recovery

Verdict synthetic_recovery(Shared& shared) {
  auto& run = shared.primary();
  const double far_m = scale_r2(run.metrics, 1, "far"), base_m = scale_r2(run.metrics, 1, "baseline");

  // Pixel maps against the generator's class fluxes on sampled test-site scenes.
  const auto& s = *run.cfg.synth;
  const SyntheticDataset syn = generate_synthetic(s.synth, s.seed);
  std::vector<FluxGrid> truth, pred;
  std::vector<bool> test_site(run.ds.sites.size(), false);
  for (const auto& r : run.idx.test_site) test_site[r.site] = true;
  for (std::size_t site = 0; site < syn.dataset.sites.size(); ++site) {
    if (!test_site[site]) continue;
    const auto filled = gap_fill_patches(syn.dataset.sites[site].patches);
    const auto& samples = syn.dataset.sites[site].samples;
    for (std::size_t k = 0; k < samples.size(); k += 97) {
      if (!samples[k].drivers.complete()) continue;
      truth.push_back(syn.truth.pixel_flux(site, samples[k].drivers));
      pred.push_back(predict_pixel_flux(run.model, filled[samples[k].patch_ref], samples[k].drivers));
    }
  }
  const double pixel = pixel_map_r2(truth, pred);
  const bool ok = run.train_seconds <= 1800.0 && far_m >= 0.90 && far_m > base_m && pixel >= 0.80;
  return {ok, "train " + fmt(run.train_seconds, 4) + " s; monthly R2 FAR " + fmt(far_m, 4) + " vs baseline " +
                  fmt(base_m, 4) + "; pixel-map R2 " + fmt(pixel, 4) + " over " + std::to_string(truth.size()) +
                  " scenes"};
}

// ---------------------------------------------------------------------------
// 7. Aggregation ordering
//
// The recovery split withholds two test sites, so its yearly table has two
// points and R2 there mostly measures a shared bias. The ordering is checked
// on twelve further sites drawn from the same generator and never trained on.

Verdict temporal_ordering(Shared& shared) {
  auto& run = shared.primary();
  SynthConfig sc = run.cfg.synth->synth;
  sc.sites = 12;
  Dataset ds = generate_synthetic(sc, run.cfg.synth->seed + 1000).dataset;
  preprocess_dataset(ds);
  std::vector<SampleRef> refs;
  for (std::size_t s = 0; s < ds.sites.size(); ++s)
    for (std::size_t i = 0; i < ds.sites[s].samples.size(); ++i) refs.push_back({s, i});
  const MetricReport rep = build_report(evaluate_models(run.model, run.baseline, ds, refs));
  const double hh = rep.scale(Frequency::half_hour)->r2_far, mo = rep.scale(Frequency::monthly)->r2_far;
  const double yr = rep.scale(Frequency::yearly)->r2_far;
  const bool ok = std::isfinite(yr) && yr - mo >= -0.02 && mo - hh >= -0.02;
  return {ok, "held-out sites R2 half-hour " + fmt(hh, 4) + ", monthly " + fmt(mo, 4) + ", yearly " + fmt(yr, 4) +
                  " (" + std::to_string(rep.scale(Frequency::yearly)->n) + " site-years); recovery test split " +
                  fmt(scale_r2(run.metrics, 0, "far"), 4) + " / " + fmt(scale_r2(run.metrics, 1, "far"), 4) + " / " +
                  fmt(scale_r2(run.metrics, 2, "far"), 4) + " (" +
                  std::to_string(run.metrics.at("scales").at(2).at("n").get<int>()) + " site-years)"};
}

// ---------------------------------------------------------------------------
// 8. Learned footprints point upwind

double upwind_fraction(const FarModel& m, const Dataset& ds, std::span<const SampleRef> refs) {
  std::size_t up = 0;
  for (const auto& r : refs) {
    const auto& fp = ds.sites[r.site].samples[r.index].fp;
    up += centroid_is_upwind(footprint_centroid(predict_footprint(m, fp)), m.rows, m.cols, fp.wd);
  }
  return static_cast<double>(up) / static_cast<double>(refs.size());
}

Verdict footprint_learnability(Shared& shared) {
  auto& run = shared.primary();
  const auto& refs = run.idx.test_site;
  const double trained = upwind_fraction(run.model, run.ds, refs);
  const auto& tc = run.cfg.train->train;
  const FarArchitecture arch{run.model.rows, run.model.cols, run.model.bands(), static_cast<Index>(tc.hidden_width),
                             static_cast<Index>(tc.hidden_layers)};
  const FarModel untrained = FarModel::initialize(arch, run.model.normalization, 0.0, EntropySign::prose, tc.seed);
  const double fresh = upwind_fraction(untrained, run.ds, refs);
  return {trained >= 0.80, "trained upwind fraction " + fmt(trained, 4) + " over " + std::to_string(refs.size()) +
                               " test samples; untrained " + fmt(fresh, 4)};
}

// ---------------------------------------------------------------------------
// 9. Entropy weight orders footprint area

Verdict lambda_ordering() {
  SynthConfig sc;
  sc.rows = sc.cols = 16;
  sc.days = 60;
  const Dataset raw = generate_synthetic(sc, 3).dataset;
  Dataset ds = raw;
  preprocess_dataset(ds);
  const SplitAssignment sa = assign_splits(ds.sites, 5);
  const SplitIndex idx = index_splits(ds, sa);
  TrainConfig tc;
  tc.seed = 9;
  tc.learning_rate = 1e-3;
  tc.batch_size = 32;
  tc.max_epochs = 12;
  tc.patience = 12;
  tc.hidden_width = 16;
  tc.hidden_layers = 2;
  tc.samples_per_epoch = 2048;
  tc.max_eval_samples = 300;
  std::vector<double> areas;
  const double px_area = sc.pixel_size_m * sc.pixel_size_m;
  for (double lambda : {1e-3, 0.0, -1e-3}) {
    tc.lambda = lambda;
    const FarModel m = train(ds, sa, tc).model;
    double total = 0.0;
    for (const auto& r : idx.test_site)
      total += footprint_area(predict_footprint(m, ds.sites[r.site].samples[r.index].fp), px_area).area_m2;
    areas.push_back(total / static_cast<double>(idx.test_site.size()));
  }
  const bool ok = areas[0] <= areas[1] && areas[1] <= areas[2] && areas[0] < areas[2];
  return {ok, "mean 95% area (m2) for lambda +1e-3 / 0 / -1e-3: " + fmt(areas[0], 8) + " / " + fmt(areas[1], 8) +
                  " / " + fmt(areas[2], 8)};
}

// ---------------------------------------------------------------------------
// 10. Split rules

std::vector<SiteDataset> roster(std::size_t n, std::size_t samples) {
  std::vector<SiteDataset> out;
  for (std::size_t i = 0; i < n; ++i) {
    SiteDataset s;
    s.site_id = "R-" + std::to_string(i);
    s.ecosystem = "ENF";
    for (std::size_t k = 0; k < samples; ++k) {
      HalfHourSample h;
      h.timestamp = static_cast<Timestamp>(k) * kHalfHourSeconds;
      s.samples.push_back(h);
    }
    out.push_back(std::move(s));
  }
  return out;
}

Verdict split_rules() {
  bool ok = true;
  std::string detail;
  for (std::size_t n : {10u, 9u}) {
    const auto sites = roster(n, 137);
    const auto sa = assign_splits(sites, 11);
    std::size_t val_site = 0, test_site = 0, remaining = 0, val = 0;
    for (std::size_t s = 0; s < n; ++s) {
      val_site += sa.roles[s] == SiteRole::val_site;
      test_site += sa.roles[s] == SiteRole::test_site;
      if (sa.roles[s] != SiteRole::train) continue;
      for (auto f : sa.flags[s]) {
        ++remaining;
        val += f == SampleFlag::val;
      }
    }
    const std::size_t withheld_want = n == 10 ? 2 : 0;
    const double target = 0.2 * static_cast<double>(remaining);
    ok = ok && val_site == withheld_want && test_site == withheld_want &&
         std::abs(static_cast<double>(val) - target) <= 1.0;
    detail += std::to_string(n) + " sites: " + std::to_string(val_site) + " val_site + " +
              std::to_string(test_site) + " test_site, " + std::to_string(val) + "/" + std::to_string(remaining) +
              " val samples; ";
  }
  detail.resize(detail.size() - 2);
  return {ok, detail};
}

// ---------------------------------------------------------------------------
// 11. Determinism

Verdict determinism(Shared& shared) {
  auto& first = shared.primary();
  std::cerr << "repeating the recovery pipeline in " << fs::absolute("repeat") << "\n";
  run_pipeline("repeat");
  const auto& t = *first.cfg.train;
  const auto& e = *first.cfg.eval;
  std::vector<fs::path> files = {t.output_dir / "far.ckpt", t.output_dir / "baseline.ckpt",
                                 t.output_dir / "splits.json"};
  for (const auto& split : e.splits_evaluated)
    for (const char* suffix : {".json", "_scales.csv", "_sites.csv", "_groups.csv"})
      files.push_back(e.output_dir / ("metrics_" + split + suffix));
  std::size_t same = 0;
  std::string differing;
  for (const auto& f : files) {
    const auto a = fs::path("primary") / f, b = fs::path("repeat") / f;
    if (fs::exists(a) && slurp(a) == slurp(b)) ++same;
    else differing += " " + f.string();
  }
  return {same == files.size(), std::to_string(same) + "/" + std::to_string(files.size()) + " files identical" +
                                    (differing.empty() ? "" : "; differ:" + differing)};
}

// ---------------------------------------------------------------------------
// 12. Cleaning rules

Verdict cleaning_rules() {
  // 1000 samples with distinct FC. The percentile band drops 5 per tail;
  // among the kept ones, 7 have negative SW_IN and 11 are nighttime drawdown.
  SiteDataset site;
  site.site_id = "CLEAN";
  std::vector<double> fc(1000);
  for (std::size_t i = 0; i < fc.size(); ++i) fc[i] = -20.0 + 0.04 * static_cast<double>(i);
  Rng rng(12);
  rng.shuffle(std::span<double>(fc));
  std::size_t neg_sw = 0, night = 0;
  for (std::size_t i = 0; i < fc.size(); ++i) {
    HalfHourSample s;
    s.timestamp = static_cast<Timestamp>(i) * kHalfHourSeconds;
    s.drivers = {300.0, 15.0, 50.0};
    s.fp = {180.0, 2.0, 0.3, 15.0, 40.0, 5.0};
    s.target_fc = fc[i];
    const bool inside = fc[i] > -20.0 + 0.04 * 4.5 && fc[i] < -20.0 + 0.04 * 994.5;
    if (inside && neg_sw < 7) {
      s.drivers.sw_in = -1.0;
      ++neg_sw;
    } else if (inside && fc[i] < 0.0 && night < 11) {
      s.drivers.sw_in = 0.0;
      ++night;
    }
    site.samples.push_back(s);
  }
  // Tail samples also carry rule-2 and rule-3 triggers; they count once, under the percentile rule.
  for (auto& s : site.samples)
    if (s.target_fc == -20.0) s.drivers.sw_in = -5.0;
    else if (s.target_fc == -20.0 + 0.04) s.drivers.sw_in = 0.0;
  const auto r = clean_samples(site).report;
  const bool ok = r.fc_percentile == 10 && r.negative_sw_in == 7 && r.nighttime_drawdown == 11 && r.kept == 972 &&
                  r.missing_field == 0;
  return {ok, "rejected: percentile " + std::to_string(r.fc_percentile) + ", negative SW_IN " +
                  std::to_string(r.negative_sw_in) + ", nighttime drawdown " + std::to_string(r.nighttime_drawdown) +
                  "; kept " + std::to_string(r.kept)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"far acceptance criteria"};
  std::string workdir = "acceptance_work";
  std::vector<int> only;
  app.add_option("--workdir", workdir, "scratch directory (cleared first)");
  app.add_option("--only", only, "run only these criteria");
  CLI11_PARSE(app, argc, argv);

  fs::remove_all(workdir);
  fs::create_directories(workdir);
  fs::current_path(workdir);

  Shared shared;
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"gradient check", gradient_check},
      {"footprint normalisation", [&] { return normalization_fuzz(shared); }},
      {"aggregation identities", aggregation_identities},
      {"95% area rule", area_rule},
      {"unit conversion", unit_conversion},
      {"synthetic recovery", [&] { return synthetic_recovery(shared); }},
      {"temporal aggregation ordering", [&] { return temporal_ordering(shared); }},
      {"footprint learnability", [&] { return footprint_learnability(shared); }},
      {"entropy weight ordering", lambda_ordering},
      {"split rules", split_rules},
      {"determinism", [&] { return determinism(shared); }},
      {"cleaning rules", cleaning_rules},
  };
  std::ofstream report("acceptance_report.txt");
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int number = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), number) == only.end()) continue;
    Verdict v;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    failed += !v.pass;
    char line[1024];
    std::snprintf(line, sizeof line, "%s %2d %s: %s [%.1f s]\n", v.pass ? "PASS" : "FAIL", number,
                  criteria[i].first.c_str(), v.detail.c_str(), seconds_since(t0));
    std::fputs(line, stdout);
    std::fflush(stdout);
    report << line << std::flush;
  }
  return failed == 0 ? 0 : 1;
}
