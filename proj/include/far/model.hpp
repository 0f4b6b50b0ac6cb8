#pragma once

// Footprint-aware regression: a pixel-wise flux arm and a coordinate
// conditioned footprint arm whose softmax output weights the pixel fluxes into
// one tower prediction.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "far/data.hpp"
#include "far/errors.hpp"
#include "far/numerics.hpp"
#include "far/rng.hpp"

namespace far {

inline constexpr Index kAngleCount = 4;
inline constexpr Index kDriverCount = 3;
/// sin WD, cos WD, WS, USTAR, TA, H, HEIGHT
inline constexpr Index kFootprintFeatureCount = 7;

inline constexpr const char* kFluxUnits = "umol CO2 m-2 s-1";
inline constexpr Index kCoordinateCount = 2;

inline const std::array<std::string_view, kFootprintFeatureCount>& footprint_feature_names() {
  static constexpr std::array<std::string_view, kFootprintFeatureCount> names = {
      "sin_WD", "cos_WD", "WS", "USTAR", "TA", "H", "HEIGHT"};
  return names;
}

/// Wind direction is encoded on the unit circle to avoid the 0/360 seam.
inline std::array<double, kFootprintFeatureCount> footprint_features(const FootprintVector& v) {
  const double rad = v.wd * std::numbers::pi / 180.0;
  return {std::sin(rad), std::cos(rad), v.ws, v.ustar, v.ta, v.h, v.height};
}

enum class EntropySign {
  prose,       // loss += lambda * H(FP): lambda > 0 prefers small footprints
  as_typeset,  // loss += lambda * sum FP ln FP = -lambda * H(FP)
};

inline double entropy_sign_factor(EntropySign s) { return s == EntropySign::prose ? 1.0 : -1.0; }

inline const char* to_string(EntropySign s) { return s == EntropySign::prose ? "prose" : "as_typeset"; }

inline EntropySign parse_entropy_sign(std::string_view s) {
  if (s == "prose") return EntropySign::prose;
  if (s == "as_typeset") return EntropySign::as_typeset;
  throw ConfigError("entropy_sign must be 'prose' or 'as_typeset'");
}

struct Normalization {
  FeatureStats bands;
  FeatureStats angles;
  FeatureStats drivers;
  FeatureStats footprint;
  FeatureStats target;

  bool operator==(const Normalization&) const = default;

  /// Identity statistics, handy for hand-built models.
  static Normalization identity(Index bands) {
    auto unit = [](Index n) {
      const auto k = static_cast<std::size_t>(n);
      return FeatureStats{std::vector<double>(k, 0.0), std::vector<double>(k, 1.0),
                          std::vector<bool>(k, false)};
    };
    return {unit(bands), unit(kAngleCount), unit(kDriverCount), unit(kFootprintFeatureCount), unit(1)};
  }
};

struct FarArchitecture {
  Index rows = 32;
  Index cols = 32;
  Index bands = 4;
  Index hidden_width = 64;
  Index hidden_layers = 3;

  Index flux_input_dim() const { return bands + kAngleCount + kDriverCount; }
  Index footprint_input_dim() const { return kFootprintFeatureCount + kCoordinateCount; }
  MlpShape flux_shape() const { return {flux_input_dim(), hidden_width, hidden_layers, 1}; }
  MlpShape footprint_shape() const { return {footprint_input_dim(), hidden_width, hidden_layers, 1}; }
};

struct FarModel {
  Mlp flux_mlp;
  Mlp footprint_mlp;
  Normalization normalization;
  double lambda = 0.0;
  EntropySign entropy_sign = EntropySign::prose;
  Index rows = 0;
  Index cols = 0;
  std::uint64_t seed = 0;

  Index bands() const { return flux_mlp.input_dim() - kAngleCount - kDriverCount; }
  Index pixels() const { return rows * cols; }

  static FarModel initialize(const FarArchitecture& arch, Normalization norm, double lambda,
                             EntropySign sign, std::uint64_t seed) {
    Rng rng(seed);
    FarModel m;
    m.flux_mlp = Mlp::he_uniform(arch.flux_shape(), rng);
    m.footprint_mlp = Mlp::he_uniform(arch.footprint_shape(), rng);
    m.normalization = std::move(norm);
    m.lambda = lambda;
    m.entropy_sign = sign;
    m.rows = arch.rows;
    m.cols = arch.cols;
    m.seed = seed;
    m.validate();
    return m;
  }

  void validate() const {
    if (rows < 1 || cols < 1) throw ShapeError("model grid must be nonempty");
    if (flux_mlp.output_dim() != 1 || footprint_mlp.output_dim() != 1)
      throw ShapeError("both arms must produce one output");
    if (bands() < 1) throw ShapeError("flux arm input too small");
    if (footprint_mlp.input_dim() != kFootprintFeatureCount + kCoordinateCount)
      throw ShapeError("footprint arm input dimension mismatch");
    const auto& n = normalization;
    if (n.bands.size() != static_cast<std::size_t>(bands()) || n.angles.size() != kAngleCount ||
        n.drivers.size() != kDriverCount || n.footprint.size() != kFootprintFeatureCount ||
        n.target.size() != 1)
      throw ShapeError("normalisation statistics do not match the architecture");
    for (const auto* s : {&n.bands, &n.angles, &n.drivers, &n.footprint, &n.target})
      for (double sd : s->std)
        if (!(sd > 0.0)) throw ConfigError("normalisation std must be positive");
  }

  double denormalize_target(double z) const { return normalization.target.invert(0, z); }
  double normalize_target(double y) const { return normalization.target.apply(0, y); }
};

// ---------------------------------------------------------------------------
// Input assembly. Pixels are ordered column-major (p = r + c * rows) so that a
// 1 x P output row maps directly onto an Eigen rows x cols grid.

/// Normalised band values, bands x pixels. Non-finite values are kept (NaN
/// marks never-observed pixels) and rejected at prediction time.
inline Matrix normalized_pixels(const FarModel& m, const ScenePatch& patch) {
  if (patch.rows != m.rows || patch.cols != m.cols)
    throw ShapeError("patch is " + std::to_string(patch.rows) + "x" + std::to_string(patch.cols) +
                     ", model grid is " + std::to_string(m.rows) + "x" + std::to_string(m.cols));
  if (patch.bands != m.bands()) throw ShapeError("patch band count does not match model");
  Matrix out(patch.bands, m.pixels());
  const auto& st = m.normalization.bands;
  for (Index c = 0; c < patch.cols; ++c)
    for (Index r = 0; r < patch.rows; ++r) {
      const auto px = patch.pixel(r, c);
      const Index p = r + c * patch.rows;
      for (Index d = 0; d < patch.bands; ++d)
        out(d, p) = st.apply(static_cast<std::size_t>(d), px[static_cast<std::size_t>(d)]);
    }
  return out;
}

inline std::array<double, kAngleCount> normalized_angles(const FarModel& m, const std::array<double, 4>& a) {
  std::array<double, kAngleCount> out{};
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = m.normalization.angles.apply(k, a[k]);
  return out;
}

inline std::array<double, kDriverCount> normalized_drivers(const FarModel& m, const DriverVector& d) {
  if (!d.complete()) throw InputError("missing environmental driver");
  const auto v = d.values();
  std::array<double, kDriverCount> out{};
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = m.normalization.drivers.apply(k, v[k]);
  return out;
}

inline std::array<double, kFootprintFeatureCount> normalized_footprint_features(const FarModel& m,
                                                                                const FootprintVector& v) {
  if (!v.complete()) throw InputError("missing footprint variable");
  const auto f = footprint_features(v);
  std::array<double, kFootprintFeatureCount> out{};
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = m.normalization.footprint.apply(k, f[k]);
  return out;
}

/// Writes flux-arm inputs for one sample into columns [col0, col0 + P).
inline void write_flux_inputs(Matrix& x, Index col0, const Matrix& pixels,
                              std::span<const double, kAngleCount> angles,
                              std::span<const double, kDriverCount> drivers) {
  const Index d = pixels.rows(), n = pixels.cols();
  x.block(0, col0, d, n) = pixels;
  for (Index k = 0; k < kAngleCount; ++k) x.row(d + k).segment(col0, n).setConstant(angles[static_cast<std::size_t>(k)]);
  for (Index k = 0; k < kDriverCount; ++k)
    x.row(d + kAngleCount + k).segment(col0, n).setConstant(drivers[static_cast<std::size_t>(k)]);
}

/// Coordinate channels x_w = (w + 0.5) / W and y_l = (l + 0.5) / L.
inline void write_footprint_inputs(Matrix& x, Index col0, Index rows, Index cols,
                                   std::span<const double, kFootprintFeatureCount> features) {
  for (Index k = 0; k < kFootprintFeatureCount; ++k)
    x.row(k).segment(col0, rows * cols).setConstant(features[static_cast<std::size_t>(k)]);
  for (Index c = 0; c < cols; ++c)
    for (Index r = 0; r < rows; ++r) {
      const Index p = col0 + r + c * rows;
      x(kFootprintFeatureCount, p) = (static_cast<double>(c) + 0.5) / static_cast<double>(cols);
      x(kFootprintFeatureCount + 1, p) = (static_cast<double>(r) + 0.5) / static_cast<double>(rows);
    }
}

// ---------------------------------------------------------------------------
// Single-sample operations

/// Flux arm on prepared input columns, in physical units. Each output column
/// depends only on its input column.
inline Matrix flux_arm(const FarModel& m, const Matrix& x) {
  Matrix z = m.flux_mlp.forward(x);
  const auto& t = m.normalization.target;
  for (Index j = 0; j < z.cols(); ++j) z(0, j) = std::fma(z(0, j), t.std[0], t.mean[0]);
  return z;
}

/// Flux arm applied independently to every pixel, in physical units.
inline FluxGrid predict_pixel_flux(const FarModel& m, const ScenePatch& patch, const DriverVector& drivers) {
  const auto drv = normalized_drivers(m, drivers);
  const Matrix px = normalized_pixels(m, patch);
  if (!px.allFinite()) throw DataError("non-finite band value after normalisation");
  const auto ang = normalized_angles(m, patch.angles);
  Matrix x(m.flux_mlp.input_dim(), m.pixels());
  write_flux_inputs(x, 0, px, ang, drv);
  const Matrix z = flux_arm(m, x);
  FluxGrid g;
  g.values = Eigen::Map<const Matrix>(z.data(), m.rows, m.cols);
  return g;
}

inline Matrix footprint_logits(const FarModel& m, const FootprintVector& fp_vars) {
  const auto f = normalized_footprint_features(m, fp_vars);
  Matrix x(m.footprint_mlp.input_dim(), m.pixels());
  write_footprint_inputs(x, 0, m.rows, m.cols, f);
  const Matrix z = m.footprint_mlp.forward(x);
  return Eigen::Map<const Matrix>(z.data(), m.rows, m.cols);
}

inline FootprintGrid predict_footprint(const FarModel& m, const FootprintVector& fp_vars) {
  return softmax_2d(footprint_logits(m, fp_vars));
}

/// Footprint-weighted sum of the pixel fluxes.
inline double aggregate(const FluxGrid& flux, const FootprintGrid& fp) {
  if (flux.rows() != fp.rows() || flux.cols() != fp.cols())
    throw ShapeError("flux and footprint grids differ in shape");
  return (flux.values.array() * fp.weights().array()).sum();
}

/// Sum of squared errors plus the signed, lambda-weighted footprint entropy.
inline double far_loss(std::span<const double> targets, std::span<const double> predictions,
                       std::span<const FootprintGrid> footprints, double lambda,
                       EntropySign sign = EntropySign::prose) {
  if (targets.size() != predictions.size() || targets.size() != footprints.size())
    throw ShapeError("far_loss: batch lengths differ");
  double sse = 0.0, entropy = 0.0;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    const double e = targets[t] - predictions[t];
    sse += e * e;
    entropy += shannon_entropy(footprints[t]);
  }
  return sse + lambda * entropy_sign_factor(sign) * entropy;
}

struct FarPrediction {
  double prediction = 0.0;  // physical units
  FootprintGrid footprint;
  FluxGrid flux;
};

inline FarPrediction far_forward(const FarModel& m, const ScenePatch& patch, const DriverVector& drivers,
                                 const FootprintVector& fp_vars) {
  FarPrediction out;
  out.flux = predict_pixel_flux(m, patch, drivers);
  out.footprint = predict_footprint(m, fp_vars);
  out.prediction = aggregate(out.flux, out.footprint);
  return out;
}

// ---------------------------------------------------------------------------
// Batched evaluation in normalised target space, used by training.

/// One sample with every input already normalised.
struct PreparedSample {
  const Matrix* pixels = nullptr;  // bands x P
  std::array<double, kAngleCount> angles{};
  std::array<double, kDriverCount> drivers{};
  std::array<double, kFootprintFeatureCount> footprint{};
  double target = 0.0;
};

struct FarGradients {
  MlpGradients flux;
  MlpGradients footprint;

  static FarGradients zeros_like(const FarModel& m) {
    return {MlpGradients::zeros_like(m.flux_mlp), MlpGradients::zeros_like(m.footprint_mlp)};
  }
  void set_zero() {
    flux.set_zero();
    footprint.set_zero();
  }
};

struct BatchLoss {
  double loss = 0.0;     // mean over samples of sq. error + lambda * sign * H
  double mse = 0.0;      // mean squared error (normalised units)
  double entropy = 0.0;  // mean footprint entropy
};

struct BatchOutputs {
  std::vector<double> predictions;  // normalised
  std::vector<double> entropies;
};

namespace detail {

struct BatchActivations {
  Matrix flux_out;  // 1 x (B P)
  Matrix fp;        // 1 x (B P), softmax per sample
  MlpTape flux_tape;
  MlpTape fp_tape;
  Matrix d_flux;
  Matrix d_logit;
  std::vector<double> gw;
};

inline void batch_forward(const FarModel& m, std::span<const PreparedSample> batch, BatchActivations& act,
                          bool blocked) {
  const Index P = m.pixels();
  const auto B = static_cast<Index>(batch.size());
  act.flux_tape.layer_inputs.resize(m.flux_mlp.layer_count());
  act.fp_tape.layer_inputs.resize(m.footprint_mlp.layer_count());
  Matrix& xf = act.flux_tape.layer_inputs[0];
  Matrix& xp = act.fp_tape.layer_inputs[0];
  xf.resize(m.flux_mlp.input_dim(), B * P);
  xp.resize(m.footprint_mlp.input_dim(), B * P);
  for (Index b = 0; b < B; ++b) {
    const auto& s = batch[static_cast<std::size_t>(b)];
    if (s.pixels->rows() != m.bands() || s.pixels->cols() != P) throw ShapeError("prepared sample shape mismatch");
    write_flux_inputs(xf, b * P, *s.pixels, s.angles, s.drivers);
    write_footprint_inputs(xp, b * P, m.rows, m.cols, s.footprint);
  }
  m.flux_mlp.forward_recorded(act.flux_tape, act.flux_out, blocked);
  m.footprint_mlp.forward_recorded(act.fp_tape, act.fp, blocked);
  for (Index b = 0; b < B; ++b) softmax_inplace({act.fp.data() + b * P, static_cast<std::size_t>(P)});
}

/// Per-thread buffers reused across batches.
inline BatchActivations& workspace() {
  thread_local BatchActivations ws;
  return ws;
}

}  // namespace detail

/// Forward pass over a batch; predictions stay in normalised target units.
inline BatchOutputs far_batch_forward(const FarModel& m, std::span<const PreparedSample> batch) {
  auto& act = detail::workspace();
  detail::batch_forward(m, batch, act, false);
  const Index P = m.pixels();
  BatchOutputs out;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto off = static_cast<Index>(b) * P;
    out.predictions.push_back(act.flux_out.middleCols(off, P).cwiseProduct(act.fp.middleCols(off, P)).sum());
    out.entropies.push_back(shannon_entropy({act.fp.data() + off, static_cast<std::size_t>(P)}));
  }
  return out;
}

/// Samples pushed through the arms together when forming gradients; small
/// groups keep the activations cache-resident.
inline constexpr std::size_t kGradientSubBatch = 1;

/// Mean loss over the batch and its gradient w.r.t. both arms (accumulated).
inline BatchLoss far_batch_gradients(const FarModel& m, std::span<const PreparedSample> batch, FarGradients& grads) {
  if (batch.empty()) throw InputError("empty batch");
  auto& act = detail::workspace();
  const Index P = m.pixels();
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  const double ent_w = m.lambda * entropy_sign_factor(m.entropy_sign);
  std::vector<double>& gw = act.gw;
  gw.resize(static_cast<std::size_t>(P));
  BatchLoss out;
  for (std::size_t start = 0; start < batch.size(); start += kGradientSubBatch) {
    const auto sub = batch.subspan(start, std::min(kGradientSubBatch, batch.size() - start));
    detail::batch_forward(m, sub, act, true);
    const auto B = static_cast<Index>(sub.size());
    Matrix& d_flux = act.d_flux;
    Matrix& d_logit = act.d_logit;
    d_flux.resize(1, B * P);
    d_logit.resize(1, B * P);
    for (Index b = 0; b < B; ++b) {
      const Index off = b * P;
      const double* f = act.flux_out.data() + off;
      const double* w = act.fp.data() + off;
      double pred = 0.0, h = 0.0;
      for (Index p = 0; p < P; ++p) {
        pred += f[p] * w[p];
        if (w[p] > 0.0) h -= w[p] * std::log(w[p]);
      }
      const double err = pred - sub[static_cast<std::size_t>(b)].target;
      if (!std::isfinite(err) || !std::isfinite(h)) throw NumericError("non-finite training loss");
      out.mse += err * err * inv_b;
      out.entropy += h * inv_b;
      const double d_pred = 2.0 * err * inv_b;
      // dL/dw_p = d_pred * f_p - (ent_w / B) (ln w_p + 1); the constant drops
      // out of the softmax Jacobian, so it is omitted.
      double dot = 0.0;
      for (Index p = 0; p < P; ++p) {
        d_flux(0, off + p) = d_pred * w[p];
        const double lw = w[p] > 0.0 ? std::log(w[p]) : 0.0;
        gw[static_cast<std::size_t>(p)] = d_pred * f[p] - ent_w * inv_b * lw;
        dot += w[p] * gw[static_cast<std::size_t>(p)];
      }
      for (Index p = 0; p < P; ++p) d_logit(0, off + p) = w[p] * (gw[static_cast<std::size_t>(p)] - dot);
    }
    m.flux_mlp.backward(act.flux_tape, d_flux, grads.flux, false);
    m.footprint_mlp.backward(act.fp_tape, d_logit, grads.footprint, false);
  }
  out.loss = out.mse + ent_w * out.entropy;
  if (!std::isfinite(out.loss)) throw NumericError("non-finite training loss");
  return out;
}

}  // namespace far
