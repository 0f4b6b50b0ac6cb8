#pragma once

// Uniform-footprint baseline: band means over a fixed 5x5 window at the tower
// pixel plus angles and drivers, regressed on tower targets by a plain MLP.

#include <array>
#include <cmath>
#include <iostream>
#include <span>
#include <vector>

#include "far/checkpoint.hpp"
#include "far/data.hpp"
#include "far/errors.hpp"
#include "far/numerics.hpp"
#include "far/training.hpp"

namespace far {

inline constexpr Index kBaselineWindow = 5;

/// Band means over the centre 5x5 window (centred on pixel (L/2, W/2)),
/// followed by the 4 view/sun angles and the 3 drivers.
inline std::vector<double> uniform_baseline_features(const ScenePatch& patch, const DriverVector& drivers) {
  if (patch.rows < kBaselineWindow || patch.cols < kBaselineWindow)
    throw ShapeError("baseline window needs a grid of at least 5x5");
  const Index r0 = patch.rows / 2 - kBaselineWindow / 2, c0 = patch.cols / 2 - kBaselineWindow / 2;
  std::vector<double> f(static_cast<std::size_t>(patch.bands), 0.0);
  for (Index r = r0; r < r0 + kBaselineWindow; ++r)
    for (Index c = c0; c < c0 + kBaselineWindow; ++c) {
      const auto px = patch.pixel(r, c);
      for (std::size_t d = 0; d < f.size(); ++d) f[d] += px[d];
    }
  for (auto& v : f) v /= static_cast<double>(kBaselineWindow * kBaselineWindow);
  f.insert(f.end(), patch.angles.begin(), patch.angles.end());
  const auto dv = drivers.values();
  f.insert(f.end(), dv.begin(), dv.end());
  return f;
}

struct BaselineModel {
  Mlp mlp;
  FeatureStats features;
  FeatureStats target;
  std::uint64_t seed = 0;
};

/// Raw feature matrix (features x samples).
inline Matrix baseline_feature_matrix(const Dataset& ds, std::span<const SampleRef> refs) {
  const auto nf = static_cast<Index>(ds.band_count() + kAngleCount + kDriverCount);
  Matrix x(nf, static_cast<Index>(refs.size()));
  for (std::size_t j = 0; j < refs.size(); ++j) {
    const auto& site = ds.sites[refs[j].site];
    const auto& smp = site.samples[refs[j].index];
    const auto f = uniform_baseline_features(site.patches[smp.patch_ref], smp.drivers);
    for (Index k = 0; k < nf; ++k) x(k, static_cast<Index>(j)) = f[static_cast<std::size_t>(k)];
  }
  if (!x.allFinite()) throw DataError("non-finite baseline feature");
  return x;
}

inline std::vector<double> predict_baseline(const BaselineModel& b, const Matrix& raw_features) {
  const Matrix out = b.mlp.forward(normalize_apply(b.features, raw_features));
  std::vector<double> y(static_cast<std::size_t>(out.cols()));
  for (Index j = 0; j < out.cols(); ++j) y[static_cast<std::size_t>(j)] = b.target.invert(0, out(0, j));
  return y;
}

inline std::vector<double> predict_baseline(const BaselineModel& b, const Dataset& ds, std::span<const SampleRef> refs) {
  if (refs.empty()) return {};
  return predict_baseline(b, baseline_feature_matrix(ds, refs));
}

namespace detail {

inline double baseline_mse(const Mlp& mlp, const Matrix& x, const Vector& y) {
  if (x.cols() == 0) return std::numeric_limits<double>::quiet_NaN();
  const Matrix out = mlp.forward(x);
  return (out.row(0).transpose() - y).squaredNorm() / static_cast<double>(y.size());
}

inline Vector target_vector(const Dataset& ds, std::span<const SampleRef> refs, const FeatureStats& st) {
  Vector y(static_cast<Index>(refs.size()));
  for (std::size_t j = 0; j < refs.size(); ++j)
    y(static_cast<Index>(j)) = st.apply(0, ds.sites[refs[j].site].samples[refs[j].index].target_fc);
  return y;
}

}  // namespace detail

/// Same optimiser, batch size, epoch budget and early-stopping rule as FAR;
/// returns the snapshot with the lowest val_site loss.
inline BaselineModel train_baseline(const Dataset& ds, const SplitAssignment& split, const TrainConfig& cfg,
                                    TrainLog* log = nullptr) {
  cfg.validate();
  const SplitIndex idx = index_splits(ds, split);
  if (idx.train.empty()) throw ConfigError("training split is empty");
  if (idx.val_site.empty()) throw ConfigError("val_site split is empty");

  const Matrix raw = baseline_feature_matrix(ds, idx.train);
  BaselineModel model;
  model.seed = cfg.seed;
  model.features = normalize_fit(raw, "baseline feature");
  {
    StatsAccumulator acc(1);
    for (const auto& r : idx.train) acc.add(std::span<const double>(&ds.sites[r.site].samples[r.index].target_fc, 1));
    model.target = acc.finish("target");
  }
  const Matrix x = normalize_apply(model.features, raw);
  const Vector y = detail::target_vector(ds, idx.train, model.target);

  const std::array<std::vector<SampleRef>, 3> monitored = {
      capped_subset(idx.val, cfg.max_eval_samples, derive_seed(cfg.seed, 11)),
      capped_subset(idx.val_site, cfg.max_eval_samples, derive_seed(cfg.seed, 12)),
      capped_subset(idx.val_future, cfg.max_eval_samples, derive_seed(cfg.seed, 13))};
  std::array<Matrix, 3> vx;
  std::array<Vector, 3> vy;
  for (std::size_t k = 0; k < 3; ++k) {
    vx[k] = monitored[k].empty() ? Matrix(x.rows(), 0)
                                 : normalize_apply(model.features, baseline_feature_matrix(ds, monitored[k]));
    vy[k] = detail::target_vector(ds, monitored[k], model.target);
  }

  Rng init(derive_seed(cfg.seed, 0xba5e));
  model.mlp = Mlp::he_uniform({x.rows(), cfg.hidden_width, cfg.hidden_layers, 1}, init);
  BaselineModel best = model;
  AdamState adam;
  adam.learning_rate = cfg.learning_rate;
  MlpGradients grads = MlpGradients::zeros_like(model.mlp);
  EarlyStopping stopper(3, cfg.patience);
  TrainLog local;
  const std::size_t n = idx.train.size();
  Matrix xb;
  MlpTape tape;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto order = epoch_order(derive_seed(cfg.seed, 0xba5e), epoch, n);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t end = std::min(n, start + cfg.batch_size);
      const auto bsz = static_cast<Index>(end - start);
      xb.resize(x.rows(), bsz);
      Vector yb(bsz);
      for (Index j = 0; j < bsz; ++j) {
        const auto src = static_cast<Index>(order[start + static_cast<std::size_t>(j)]);
        xb.col(j) = x.col(src);
        yb(j) = y(src);
      }
      const Matrix out = model.mlp.forward(xb, tape);
      const Vector err = out.row(0).transpose() - yb;
      loss_sum += err.squaredNorm();
      Matrix upstream = (2.0 / static_cast<double>(bsz)) * err.transpose();
      grads.set_zero();
      model.mlp.backward(tape, upstream, grads, false);
      const auto params = model.mlp.blocks();
      const auto g = grads.blocks();
      adam_step(params, g, adam);
    }
    EpochRecord rec{epoch, loss_sum / static_cast<double>(n), detail::baseline_mse(model.mlp, vx[0], vy[0]),
                    detail::baseline_mse(model.mlp, vx[1], vy[1]), detail::baseline_mse(model.mlp, vx[2], vy[2])};
    if (!std::isfinite(rec.val_site)) throw NumericError("baseline diverged at epoch " + std::to_string(epoch));
    local.epochs.push_back(rec);
    const std::array<double, 3> losses = {rec.val, rec.val_site, rec.val_future};
    const bool stop = stopper.update(epoch, losses);
    if (stopper.improved(1)) best = model;
    if (cfg.progress)
      std::cerr << "baseline epoch " << epoch << " train " << rec.train << " val_site " << rec.val_site << "\n";
    if (stop) break;
  }
  local.best_val_epoch = stopper.best_epoch(0);
  local.best_val_site_epoch = stopper.best_epoch(1);
  local.best_val_future_epoch = stopper.best_epoch(2);
  if (log) *log = std::move(local);
  return best;
}

inline void save_baseline(const fs::path& path, const BaselineModel& b) {
  Json h;
  h["kind"] = "baseline";
  h["window"] = kBaselineWindow;
  h["seed"] = b.seed;
  h["features"] = to_json(b.features);
  h["target"] = to_json(b.target);
  const std::array<const Mlp*, 1> nets = {&b.mlp};
  write_checkpoint_file(path, h, nets);
}

inline BaselineModel load_baseline(const fs::path& path) {
  auto c = read_checkpoint_file(path);
  try {
    if (c.header.at("kind").get<std::string>() != "baseline" || c.networks.size() != 1)
      throw DataError(path.string() + ": not a baseline checkpoint");
    BaselineModel b;
    b.mlp = std::move(c.networks[0]);
    b.seed = c.header.at("seed").get<std::uint64_t>();
    b.features = feature_stats_from_json(c.header.at("features"));
    b.target = feature_stats_from_json(c.header.at("target"));
    if (static_cast<Index>(b.features.size()) != b.mlp.shape().input_dim)
      throw DataError(path.string() + ": feature statistics do not match the network");
    return b;
  } catch (const Json::exception& e) {
    throw DataError(path.string() + ": malformed checkpoint header: " + e.what());
  }
}

}  // namespace far
