#pragma once

// Dense-network numerics shared by both model arms: affine/ReLU stacks with
// reverse-mode gradients, the 2D softmax, and Adam.
//
// Activations are stored column-major with one column per evaluated point
// (pixel or sample). Forward products use Eigen's coefficient-based product so
// that each output column depends only on its own input column; results are
// therefore bit-identical regardless of how many columns are batched together.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "far/errors.hpp"
#include "far/rng.hpp"

namespace far {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
};

/// Hidden layers use ReLU, the output layer is the identity.
struct MlpShape {
  Index input_dim = 1;
  Index hidden_width = 64;
  Index hidden_layers = 3;
  Index output_dim = 1;

  bool operator==(const MlpShape&) const = default;
};

/// Per-layer inputs recorded during a forward pass, consumed by backward().
struct MlpTape {
  std::vector<Matrix> layer_inputs;
  Matrix dz;  // backward scratch, reused across calls
  Matrix dx;
};

class Mlp;

/// Same layout as the network's layers.
struct MlpGradients {
  std::vector<DenseLayer> layers;

  static MlpGradients zeros_like(const Mlp& mlp);
  void set_zero();
  MlpGradients& operator+=(const MlpGradients& other);
  std::vector<std::span<const double>> blocks() const;
};

class Mlp {
 public:
  Mlp() = default;

  explicit Mlp(std::vector<DenseLayer> layers) : layers_(std::move(layers)) { validate(); }

  /// Uniform He-style fan-in initialisation; biases start at zero.
  static Mlp he_uniform(const MlpShape& shape, Rng& rng) {
    Mlp m = zeros(shape);
    for (auto& layer : m.layers_) {
      const double bound = std::sqrt(6.0 / static_cast<double>(layer.weight.cols()));
      // Row-major fill order so the draw sequence matches the checkpoint layout.
      for (Index r = 0; r < layer.weight.rows(); ++r)
        for (Index c = 0; c < layer.weight.cols(); ++c)
          layer.weight(r, c) = rng.uniform(-bound, bound);
    }
    return m;
  }

  static Mlp zeros(const MlpShape& shape) {
    if (shape.input_dim < 1 || shape.output_dim < 1 || shape.hidden_layers < 0 ||
        (shape.hidden_layers > 0 && shape.hidden_width < 1))
      throw ConfigError("invalid MLP shape");
    std::vector<DenseLayer> layers;
    Index in = shape.input_dim;
    for (Index k = 0; k < shape.hidden_layers; ++k) {
      layers.push_back({Matrix::Zero(shape.hidden_width, in), Vector::Zero(shape.hidden_width)});
      in = shape.hidden_width;
    }
    layers.push_back({Matrix::Zero(shape.output_dim, in), Vector::Zero(shape.output_dim)});
    return Mlp(std::move(layers));
  }

  Index input_dim() const { return layers_.front().weight.cols(); }
  Index output_dim() const { return layers_.back().weight.rows(); }
  std::size_t layer_count() const { return layers_.size(); }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& layers() { return layers_; }

  MlpShape shape() const {
    const Index hidden = static_cast<Index>(layers_.size()) - 1;
    return {input_dim(), hidden > 0 ? layers_.front().weight.rows() : 0, hidden, output_dim()};
  }

  Vector forward(const Vector& input) const {
    Matrix in = input;
    return forward(in).col(0);
  }

  Matrix forward(const Matrix& inputs) const {
    check_input(inputs);
    Matrix a, b;
    const Matrix* x = &inputs;
    for (std::size_t k = 0; k < layers_.size(); ++k) {
      Matrix& dst = k % 2 == 0 ? a : b;
      affine_into(layers_[k], *x, dst);
      if (k + 1 < layers_.size()) dst = dst.cwiseMax(0.0);
      x = &dst;
    }
    return layers_.size() % 2 == 1 ? std::move(a) : std::move(b);
  }

  Matrix forward(const Matrix& inputs, MlpTape& tape) const {
    tape.layer_inputs.resize(layers_.size());
    tape.layer_inputs[0] = inputs;
    Matrix out;
    forward_recorded(tape, out);
    return out;
  }

  /// Forward pass from tape.layer_inputs[0]; hidden activations overwrite the
  /// tape's existing storage, so repeated calls with one shape do not allocate.
  /// `blocked` selects the faster blocked GEMM, whose rounding can depend on
  /// the batch width; leave it off where outputs must not.
  void forward_recorded(MlpTape& tape, Matrix& out, bool blocked = false) const {
    tape.layer_inputs.resize(layers_.size());
    check_input(tape.layer_inputs[0]);
    for (std::size_t k = 0; k < layers_.size(); ++k) {
      const bool hidden = k + 1 < layers_.size();
      Matrix& dst = hidden ? tape.layer_inputs[k + 1] : out;
      affine_into(layers_[k], tape.layer_inputs[k], dst, blocked);
      if (hidden) dst = dst.cwiseMax(0.0);
    }
  }

  /// Accumulates parameter gradients into `grads` and returns dLoss/dInput
  /// (left empty when `want_input_grad` is false). ReLU'(0) is taken as 0.
  Matrix backward(MlpTape& tape, const Matrix& upstream, MlpGradients& grads,
                  bool want_input_grad = true) const {
    if (!upstream.allFinite()) throw NumericError("non-finite upstream gradient");
    if (upstream.rows() != output_dim() || tape.layer_inputs.size() != layers_.size() ||
        upstream.cols() != tape.layer_inputs.front().cols())
      throw ShapeError("backward: upstream gradient does not match forward pass");
    const Matrix* dz = &upstream;
    for (std::size_t k = layers_.size(); k-- > 0;) {
      const Matrix& x = tape.layer_inputs[k];
      grads.layers[k].weight.noalias() += *dz * x.transpose();
      grads.layers[k].bias += dz->rowwise().sum();
      if (k == 0 && !want_input_grad) return Matrix();
      tape.dx.resize(layers_[k].weight.cols(), dz->cols());
      tape.dx.noalias() = layers_[k].weight.transpose() * *dz;
      if (k == 0) return tape.dx;
      tape.dz = (x.array() > 0.0).select(tape.dx, 0.0);
      dz = &tape.dz;
    }
    return Matrix();
  }

  std::vector<std::span<double>> blocks() {
    std::vector<std::span<double>> out;
    for (auto& l : layers_) {
      out.emplace_back(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
      out.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
    }
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
  }

  bool all_finite() const {
    return std::all_of(layers_.begin(), layers_.end(), [](const DenseLayer& l) {
      return l.weight.allFinite() && l.bias.allFinite();
    });
  }

 private:
  // Coefficient-wise product: each output column depends only on its input
  // column, so results do not change with batch composition.
  static void affine_into(const DenseLayer& layer, const Matrix& x, Matrix& out, bool blocked = false) {
    out.resize(layer.weight.rows(), x.cols());
    if (blocked)
      out.noalias() = layer.weight * x;
    else
      out.noalias() = layer.weight.lazyProduct(x);
    out.colwise() += layer.bias;
  }

  void check_input(const Matrix& inputs) const {
    if (inputs.rows() != input_dim())
      throw ShapeError("MLP input has " + std::to_string(inputs.rows()) +
                       " features, expected " + std::to_string(input_dim()));
  }

  void validate() const {
    if (layers_.empty()) throw ShapeError("MLP needs at least one layer");
    for (std::size_t k = 0; k < layers_.size(); ++k) {
      const auto& l = layers_[k];
      if (l.bias.size() != l.weight.rows()) throw ShapeError("bias length != weight rows");
      if (k > 0 && l.weight.cols() != layers_[k - 1].weight.rows())
        throw ShapeError("layer dimensions do not chain");
    }
    if (!all_finite()) throw NumericError("non-finite MLP parameter");
  }

  std::vector<DenseLayer> layers_;
};

inline MlpGradients MlpGradients::zeros_like(const Mlp& mlp) {
  MlpGradients g;
  for (const auto& l : mlp.layers())
    g.layers.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size())});
  return g;
}

inline void MlpGradients::set_zero() {
  for (auto& l : layers) {
    l.weight.setZero();
    l.bias.setZero();
  }
}

inline MlpGradients& MlpGradients::operator+=(const MlpGradients& other) {
  for (std::size_t k = 0; k < layers.size(); ++k) {
    layers[k].weight += other.layers[k].weight;
    layers[k].bias += other.layers[k].bias;
  }
  return *this;
}

inline std::vector<std::span<const double>> MlpGradients::blocks() const {
  std::vector<std::span<const double>> out;
  for (const auto& l : layers) {
    out.emplace_back(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
    out.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
  }
  return out;
}

struct MlpBackwardResult {
  MlpGradients parameters;
  Matrix inputs;
};

/// Gradients of sum(upstream .* mlp(inputs)) w.r.t. parameters and inputs.
inline MlpBackwardResult mlp_gradients(const Mlp& mlp, const Matrix& inputs,
                                       const Matrix& upstream) {
  MlpTape tape;
  mlp.forward(inputs, tape);
  MlpBackwardResult r{MlpGradients::zeros_like(mlp), Matrix()};
  r.inputs = mlp.backward(tape, upstream, r.parameters, true);
  return r;
}

// ---------------------------------------------------------------------------
// Spatial grids

/// Nonnegative L x W weights summing to one.
class FootprintGrid {
 public:
  static constexpr double kSumTolerance = 1e-9;

  FootprintGrid() = default;

  /// Validates the invariants; use for externally supplied weights.
  static FootprintGrid from_weights(Matrix weights) {
    if (weights.size() == 0) throw ShapeError("empty footprint");
    if (!weights.allFinite() || (weights.array() < 0.0).any())
      throw InputError("footprint weights must be finite and nonnegative");
    if (std::abs(weights.sum() - 1.0) > kSumTolerance)
      throw InputError("footprint weights must sum to 1");
    FootprintGrid g;
    g.weights_ = std::move(weights);
    return g;
  }

  static FootprintGrid uniform(Index rows, Index cols) {
    FootprintGrid g;
    g.weights_ = Matrix::Constant(rows, cols, 1.0 / static_cast<double>(rows * cols));
    return g;
  }

  static FootprintGrid delta(Index rows, Index cols, Index r, Index c) {
    FootprintGrid g;
    g.weights_ = Matrix::Zero(rows, cols);
    g.weights_(r, c) = 1.0;
    return g;
  }

  const Matrix& weights() const { return weights_; }
  double operator()(Index r, Index c) const { return weights_(r, c); }
  Index rows() const { return weights_.rows(); }
  Index cols() const { return weights_.cols(); }

 private:
  friend FootprintGrid softmax_2d(const Matrix& logits);
  Matrix weights_;
};

/// Per-pixel flux in physical units (umol CO2 m-2 s-1).
struct FluxGrid {
  Matrix values;
  Index rows() const { return values.rows(); }
  Index cols() const { return values.cols(); }
};

/// Max-subtracted softmax over a contiguous block, in place.
inline void softmax_inplace(std::span<double> v) {
  if (v.empty()) return;
  const double m = *std::max_element(v.begin(), v.end());
  double sum = 0.0;
  for (double& x : v) {
    x = std::exp(x - m);
    sum += x;
  }
  const double inv = 1.0 / sum;
  for (double& x : v) x *= inv;
}

/// Softmax over both spatial dimensions of an L x W logit grid.
inline FootprintGrid softmax_2d(const Matrix& logits) {
  if (logits.size() == 0) throw ShapeError("empty logit grid");
  if (!logits.allFinite()) throw NumericError("non-finite footprint logit");
  FootprintGrid g;
  g.weights_ = logits;
  softmax_inplace({g.weights_.data(), static_cast<std::size_t>(g.weights_.size())});
  return g;
}

/// Shannon entropy in nats with 0 ln 0 := 0.
inline double shannon_entropy(std::span<const double> p) {
  double h = 0.0;
  for (double x : p)
    if (x > 0.0) h -= x * std::log(x);
  return h;
}

inline double shannon_entropy(const FootprintGrid& fp) {
  return shannon_entropy({fp.weights().data(), static_cast<std::size_t>(fp.weights().size())});
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::int64_t step_count = 0;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// One bias-corrected Adam update. Moments are allocated on the first call.
/// A non-finite gradient aborts the step before anything is modified.
inline void adam_step(std::span<const std::span<double>> params,
                      std::span<const std::span<const double>> grads, AdamState& state) {
  if (params.size() != grads.size()) throw ShapeError("adam: parameter/gradient block count mismatch");
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (params[b].size() != grads[b].size()) throw ShapeError("adam: block size mismatch");
    for (double g : grads[b])
      if (!std::isfinite(g)) throw NumericError("adam: non-finite gradient");
  }
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.size(), 0.0);
      state.second_moment.emplace_back(p.size(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size()) throw ShapeError("adam: state does not match parameters");
  for (std::size_t b = 0; b < params.size(); ++b)
    if (state.first_moment[b].size() != params[b].size()) throw ShapeError("adam: state block size mismatch");

  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t b = 0; b < params.size(); ++b) {
    auto& m = state.first_moment[b];
    auto& v = state.second_moment[b];
    const auto g = grads[b];
    const auto p = params[b];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      p[i] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
}

}  // namespace far
