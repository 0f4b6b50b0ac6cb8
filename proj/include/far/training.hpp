#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
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
#include "far/model.hpp"
#include "far/numerics.hpp"
#include "far/rng.hpp"

namespace far {

enum class AugmentMode { arbitrary, quarter_turns };

struct TrainConfig {
  double lambda = 0.0;
  EntropySign entropy_sign = EntropySign::prose;
  double learning_rate = 1e-4;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 100;
  std::size_t patience = 5;
  std::uint64_t seed = 0;
  bool augment = true;
  AugmentMode augment_mode = AugmentMode::arbitrary;
  Index hidden_width = 64;
  Index hidden_layers = 3;
  std::size_t samples_per_epoch = 0;  // 0: every training sample each epoch
  std::size_t max_eval_samples = 0;   // 0: whole validation splits
  bool progress = false;

  void validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (patience < 1) throw ConfigError("patience must be >= 1");
    if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (hidden_width < 1 || hidden_layers < 0) throw ConfigError("invalid architecture");
  }
};

struct SampleRef {
  std::size_t site = 0;
  std::size_t index = 0;
  bool operator==(const SampleRef&) const = default;
};

/// Sample lists per split. Samples referencing a patch with never-observed
/// pixels are left out of every list.
struct SplitIndex {
  std::vector<SampleRef> train;
  std::vector<SampleRef> val;
  std::vector<SampleRef> val_site;
  std::vector<SampleRef> test_site;
  std::vector<SampleRef> val_future;
  std::vector<SampleRef> test_future;
};

inline SplitIndex index_splits(const Dataset& ds, const SplitAssignment& split) {
  if (split.roles.size() != ds.sites.size()) throw ShapeError("split assignment does not match dataset");
  SplitIndex idx;
  for (std::size_t s = 0; s < ds.sites.size(); ++s) {
    const auto& site = ds.sites[s];
    if (split.flags[s].size() != site.samples.size()) throw ShapeError("split flags do not match samples");
    std::vector<bool> usable(site.patches.size());
    for (std::size_t p = 0; p < site.patches.size(); ++p) usable[p] = !site.patches[p].has_unobserved();
    for (std::size_t i = 0; i < site.samples.size(); ++i) {
      if (!usable.at(site.samples[i].patch_ref)) continue;
      const SampleRef ref{s, i};
      switch (split.roles[s]) {
        case SiteRole::val_site: idx.val_site.push_back(ref); continue;
        case SiteRole::test_site: idx.test_site.push_back(ref); continue;
        case SiteRole::train: break;
      }
      switch (split.flags[s][i]) {
        case SampleFlag::train: idx.train.push_back(ref); break;
        case SampleFlag::val: idx.val.push_back(ref); break;
        case SampleFlag::val_future: idx.val_future.push_back(ref); break;
        case SampleFlag::test_future: idx.test_future.push_back(ref); break;
      }
    }
  }
  return idx;
}

/// z-score statistics from training samples and the patches they reference.
inline Normalization fit_normalization(const Dataset& ds, std::span<const SampleRef> train) {
  if (train.empty()) throw ConfigError("no training samples to fit normalisation");
  StatsAccumulator drv(kDriverCount), fp(kFootprintFeatureCount), tgt(1);
  StatsAccumulator bands(static_cast<std::size_t>(ds.band_count())), angles(kAngleCount);
  std::vector<std::vector<bool>> used(ds.sites.size());
  for (std::size_t s = 0; s < ds.sites.size(); ++s) used[s].assign(ds.sites[s].patches.size(), false);
  for (const auto& r : train) {
    const auto& smp = ds.sites[r.site].samples[r.index];
    const auto d = smp.drivers.values();
    drv.add(d);
    const auto f = footprint_features(smp.fp);
    fp.add(f);
    tgt.add(std::span<const double>(&smp.target_fc, 1));
    used[r.site][smp.patch_ref] = true;
  }
  for (std::size_t s = 0; s < ds.sites.size(); ++s)
    for (std::size_t p = 0; p < used[s].size(); ++p) {
      if (!used[s][p]) continue;
      const auto& patch = ds.sites[s].patches[p];
      angles.add(patch.angles);
      for (Index r = 0; r < patch.rows; ++r)
        for (Index c = 0; c < patch.cols; ++c) bands.add(patch.pixel(r, c));
    }
  return {bands.finish("band"), angles.finish("angle"), drv.finish("driver"), fp.finish("footprint variable"),
          tgt.finish("target")};
}

/// Normalised patch pixels cached per (site, patch).
class PatchCache {
 public:
  PatchCache(const FarModel& model, const Dataset& ds) : model_(&model), ds_(&ds) {
    cache_.resize(ds.sites.size());
    for (std::size_t s = 0; s < ds.sites.size(); ++s) cache_[s].resize(ds.sites[s].patches.size());
  }

  const Matrix& pixels(std::size_t site, std::size_t patch) {
    auto& slot = cache_[site][patch];
    if (!slot) slot = normalized_pixels(*model_, ds_->sites[site].patches[patch]);
    return *slot;
  }

 private:
  const FarModel* model_;
  const Dataset* ds_;
  std::vector<std::vector<std::optional<Matrix>>> cache_;
};

/// Builds normalised inputs; `pixels` must outlive the returned sample.
inline PreparedSample prepare_sample(const FarModel& m, const HalfHourSample& smp, const ScenePatch& patch,
                                     const Matrix& pixels, double wd_override = std::numeric_limits<double>::quiet_NaN()) {
  PreparedSample p;
  p.pixels = &pixels;
  p.angles = normalized_angles(m, patch.angles);
  p.drivers = normalized_drivers(m, smp.drivers);
  FootprintVector fv = smp.fp;
  if (!std::isnan(wd_override)) fv.wd = wd_override;
  p.footprint = normalized_footprint_features(m, fv);
  p.target = m.normalize_target(smp.target_fc);
  return p;
}

inline constexpr std::size_t kEvalChunk = 2;

/// Mean of squared error + lambda * sign * entropy over the set, in
/// normalised target units. No gradients are formed.
inline double evaluate_loss(const FarModel& m, const Dataset& ds, std::span<const SampleRef> refs, PatchCache& cache) {
  if (refs.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double ent_w = m.lambda * entropy_sign_factor(m.entropy_sign);
  double total = 0.0;
  std::vector<PreparedSample> chunk;
  for (std::size_t start = 0; start < refs.size(); start += kEvalChunk) {
    chunk.clear();
    for (std::size_t i = start; i < std::min(refs.size(), start + kEvalChunk); ++i) {
      const auto& site = ds.sites[refs[i].site];
      const auto& smp = site.samples[refs[i].index];
      chunk.push_back(prepare_sample(m, smp, site.patches[smp.patch_ref], cache.pixels(refs[i].site, smp.patch_ref)));
    }
    const auto out = far_batch_forward(m, chunk);
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      const double e = out.predictions[b] - chunk[b].target;
      total += e * e + ent_w * out.entropies[b];
    }
  }
  return total / static_cast<double>(refs.size());
}

inline double evaluate_loss(const FarModel& m, const Dataset& ds, std::span<const SampleRef> refs) {
  PatchCache cache(m, ds);
  return evaluate_loss(m, ds, refs, cache);
}

/// Tower predictions in physical units.
inline std::vector<double> predict_samples(const FarModel& m, const Dataset& ds, std::span<const SampleRef> refs) {
  PatchCache cache(m, ds);
  std::vector<double> out;
  out.reserve(refs.size());
  std::vector<PreparedSample> chunk;
  for (std::size_t start = 0; start < refs.size(); start += kEvalChunk) {
    chunk.clear();
    for (std::size_t i = start; i < std::min(refs.size(), start + kEvalChunk); ++i) {
      const auto& site = ds.sites[refs[i].site];
      const auto& smp = site.samples[refs[i].index];
      chunk.push_back(prepare_sample(m, smp, site.patches[smp.patch_ref], cache.pixels(refs[i].site, smp.patch_ref)));
    }
    for (double z : far_batch_forward(m, chunk).predictions) out.push_back(m.denormalize_target(z));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Early stopping

/// Tracks per-split minima. A split improves when its loss drops strictly
/// below its previous minimum; ties keep the earlier epoch.
class EarlyStopping {
 public:
  EarlyStopping(std::size_t splits, std::size_t patience)
      : best_(splits, std::numeric_limits<double>::infinity()), best_epoch_(splits, 0), patience_(patience) {}

  /// Records one epoch (1-based). NaN losses mark empty splits and never
  /// improve. Returns true when training should stop.
  bool update(std::size_t epoch, std::span<const double> losses) {
    bool any = false;
    improved_.assign(best_.size(), false);
    for (std::size_t k = 0; k < best_.size(); ++k) {
      if (losses[k] < best_[k]) {
        best_[k] = losses[k];
        best_epoch_[k] = epoch;
        improved_[k] = true;
        any = true;
      }
    }
    stale_ = any ? 0 : stale_ + 1;
    return stale_ >= patience_;
  }

  bool improved(std::size_t split) const { return improved_.at(split); }
  std::size_t best_epoch(std::size_t split) const { return best_epoch_.at(split); }
  double best(std::size_t split) const { return best_.at(split); }

 private:
  std::vector<double> best_;
  std::vector<std::size_t> best_epoch_;
  std::vector<bool> improved_;
  std::size_t patience_;
  std::size_t stale_ = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train = 0.0;
  double val = 0.0;
  double val_site = 0.0;
  double val_future = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  std::size_t best_val_epoch = 0;
  std::size_t best_val_site_epoch = 0;  // the returned snapshot
  std::size_t best_val_future_epoch = 0;
};

struct TrainResult {
  FarModel model;
  TrainLog log;
};

/// Seeded order of sample positions for one epoch; depends only on (seed, epoch).
inline std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, 0x5eed0000ULL + 2 * epoch));
  rng.shuffle(std::span<std::size_t>(order));
  return order;
}

inline std::vector<double> epoch_angles(std::uint64_t seed, std::size_t epoch, std::size_t n, AugmentMode mode) {
  Rng rng(derive_seed(seed, 0x5eed0000ULL + 2 * epoch + 1));
  std::vector<double> a(n);
  for (auto& x : a) x = mode == AugmentMode::arbitrary ? rng.uniform(0.0, 360.0) : 90.0 * static_cast<double>(rng.below(4));
  return a;
}

/// Seeded subset of at most `cap` elements (order preserved); cap 0 keeps all.
inline std::vector<SampleRef> capped_subset(std::span<const SampleRef> refs, std::size_t cap, std::uint64_t seed) {
  if (cap == 0 || refs.size() <= cap) return {refs.begin(), refs.end()};
  std::vector<std::size_t> pos(refs.size());
  std::iota(pos.begin(), pos.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(pos));
  pos.resize(cap);
  std::sort(pos.begin(), pos.end());
  std::vector<SampleRef> out;
  for (auto p : pos) out.push_back(refs[p]);
  return out;
}

inline std::vector<std::span<double>> model_blocks(FarModel& m) {
  auto b = m.flux_mlp.blocks();
  auto f = m.footprint_mlp.blocks();
  b.insert(b.end(), f.begin(), f.end());
  return b;
}

inline std::vector<std::span<const double>> gradient_blocks(const FarGradients& g) {
  auto b = g.flux.blocks();
  auto f = g.footprint.blocks();
  b.insert(b.end(), f.begin(), f.end());
  return b;
}

/// Applies one Adam step for one prepared batch; returns the pre-step loss.
inline BatchLoss train_step(FarModel& m, std::span<const PreparedSample> batch, FarGradients& grads, AdamState& adam) {
  grads.set_zero();
  const BatchLoss loss = far_batch_gradients(m, batch, grads);
  const auto params = model_blocks(m);
  const auto g = gradient_blocks(grads);
  adam_step(params, g, adam);
  return loss;
}

/// Mini-batch Adam on the footprint-aware loss with multi-split early
/// stopping; returns the parameters with the lowest val_site loss.
inline TrainResult train(const Dataset& ds, const SplitAssignment& split, const TrainConfig& cfg) {
  cfg.validate();
  const SplitIndex idx = index_splits(ds, split);
  if (idx.train.empty()) throw ConfigError("training split is empty");
  if (idx.val_site.empty()) throw ConfigError("val_site split is empty");

  FarArchitecture arch{ds.rows, ds.cols, ds.band_count(), cfg.hidden_width, cfg.hidden_layers};
  FarModel model = FarModel::initialize(arch, fit_normalization(ds, idx.train), cfg.lambda, cfg.entropy_sign, cfg.seed);
  PatchCache cache(model, ds);

  const std::array<std::vector<SampleRef>, 3> monitored = {
      capped_subset(idx.val, cfg.max_eval_samples, derive_seed(cfg.seed, 11)),
      capped_subset(idx.val_site, cfg.max_eval_samples, derive_seed(cfg.seed, 12)),
      capped_subset(idx.val_future, cfg.max_eval_samples, derive_seed(cfg.seed, 13))};

  AdamState adam;
  adam.learning_rate = cfg.learning_rate;
  FarGradients grads = FarGradients::zeros_like(model);
  EarlyStopping stopper(3, cfg.patience);
  TrainResult result{model, {}};
  const auto t0 = std::chrono::steady_clock::now();

  const std::size_t per_epoch =
      cfg.samples_per_epoch == 0 ? idx.train.size() : std::min(cfg.samples_per_epoch, idx.train.size());
  std::vector<PreparedSample> batch;
  std::vector<Matrix> rotated;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto order = epoch_order(cfg.seed, epoch, idx.train.size());
    const auto angles = epoch_angles(cfg.seed, epoch, idx.train.size(), cfg.augment_mode);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < per_epoch; start += cfg.batch_size) {
      const std::size_t end = std::min(per_epoch, start + cfg.batch_size);
      batch.clear();
      rotated.clear();
      rotated.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) {
        const SampleRef ref = idx.train[order[i]];
        const auto& site = ds.sites[ref.site];
        const auto& smp = site.samples[ref.index];
        const auto& patch = site.patches[smp.patch_ref];
        const double angle = cfg.augment ? angles[order[i]] : 0.0;
        if (angle == 0.0) {
          batch.push_back(prepare_sample(model, smp, patch, cache.pixels(ref.site, smp.patch_ref)));
        } else {
          auto [rot, wd] = rotate_augment(patch, smp.fp.wd, angle);
          rotated.push_back(normalized_pixels(model, rot));
          batch.push_back(prepare_sample(model, smp, patch, rotated.back(), wd));
        }
      }
      const BatchLoss bl = train_step(model, batch, grads, adam);
      loss_sum += bl.loss * static_cast<double>(batch.size());
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train = loss_sum / static_cast<double>(per_epoch);
    rec.val = evaluate_loss(model, ds, monitored[0], cache);
    rec.val_site = evaluate_loss(model, ds, monitored[1], cache);
    rec.val_future = evaluate_loss(model, ds, monitored[2], cache);
    if (!std::isfinite(rec.val_site)) throw NumericError("non-finite validation loss at epoch " + std::to_string(epoch));
    result.log.epochs.push_back(rec);
    const std::array<double, 3> losses = {rec.val, rec.val_site, rec.val_future};
    const bool stop = stopper.update(epoch, losses);
    if (stopper.improved(1)) result.model = model;
    if (cfg.progress) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::cerr << "epoch " << epoch << " train " << rec.train << " val " << rec.val << " val_site " << rec.val_site
                << " val_future " << rec.val_future << " (" << secs << " s)\n";
    }
    if (stop) break;
  }
  result.log.best_val_epoch = stopper.best_epoch(0);
  result.log.best_val_site_epoch = stopper.best_epoch(1);
  result.log.best_val_future_epoch = stopper.best_epoch(2);
  return result;
}

inline std::string train_log_csv(const TrainLog& log) {
  auto num = [](double v) {
    if (std::isnan(v)) return std::string();
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return std::string(buf);
  };
  std::string out = "epoch,train,val,val_site,val_future,best_val_site\n";
  for (const auto& e : log.epochs) {
    out += std::to_string(e.epoch) + "," + num(e.train) + "," + num(e.val) + "," + num(e.val_site) + "," +
           num(e.val_future) + "," + (e.epoch == log.best_val_site_epoch ? "1" : "0") + "\n";
  }
  return out;
}

}  // namespace far
