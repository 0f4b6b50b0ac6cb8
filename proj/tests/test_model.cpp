#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <vector>

#include "far/checkpoint.hpp"
#include "far/model.hpp"

using namespace far;
namespace fs = std::filesystem;

namespace {

FeatureStats random_stats(std::size_t n, Rng& rng) {
  FeatureStats s;
  for (std::size_t k = 0; k < n; ++k) {
    s.mean.push_back(rng.uniform(-1.0, 1.0));
    s.std.push_back(rng.uniform(0.5, 2.0));
    s.clamped.push_back(false);
  }
  return s;
}

FarModel toy_model(std::uint64_t seed, Index grid = 4, Index bands = 3, Index hidden = 8, Index layers = 2) {
  Rng rng(derive_seed(seed, 1));
  Normalization n{random_stats(static_cast<std::size_t>(bands), rng), random_stats(kAngleCount, rng),
                  random_stats(kDriverCount, rng), random_stats(kFootprintFeatureCount, rng), random_stats(1, rng)};
  FarModel m = FarModel::initialize({grid, grid, bands, hidden, layers}, n, 0.0, EntropySign::prose, seed);
  for (auto* net : {&m.flux_mlp, &m.footprint_mlp})
    for (auto& l : net->layers())
      for (Index i = 0; i < l.bias.size(); ++i) l.bias(i) = rng.uniform(-0.3, 0.3);
  return m;
}

ScenePatch random_patch(Index rows, Index cols, Index bands, Rng& rng) {
  ScenePatch p = ScenePatch::filled(rows, cols, bands);
  for (auto& v : p.values) v = rng.uniform(0.0, 0.5);
  p.angles = {rng.uniform(0, 360), rng.uniform(0, 80), rng.uniform(0, 360), rng.uniform(0, 10)};
  return p;
}

struct ToyBatch {
  std::vector<Matrix> pixels;
  std::vector<PreparedSample> samples;
};

ToyBatch toy_batch(const FarModel& m, std::size_t n, Rng& rng) {
  ToyBatch b;
  b.pixels.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Matrix px(m.bands(), m.pixels());
    for (Index k = 0; k < px.size(); ++k) px.data()[k] = rng.normal();
    b.pixels.push_back(px);
  }
  for (std::size_t i = 0; i < n; ++i) {
    PreparedSample s;
    s.pixels = &b.pixels[i];
    for (auto& a : s.angles) a = rng.normal();
    for (auto& d : s.drivers) d = rng.normal();
    for (auto& f : s.footprint) f = rng.normal();
    s.target = rng.normal();
    b.samples.push_back(s);
  }
  return b;
}

// Batch loss recomputed from forward outputs only.
double reference_loss(const FarModel& m, std::span<const PreparedSample> batch) {
  const auto out = far_batch_forward(m, batch);
  double loss = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double e = out.predictions[i] - batch[i].target;
    loss += e * e + m.lambda * entropy_sign_factor(m.entropy_sign) * out.entropies[i];
  }
  return loss / static_cast<double>(batch.size());
}

fs::path scratch_dir() {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  auto dir = fs::temp_directory_path() / (std::string("far_test_") + info->test_suite_name() + "_" + info->name());
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST(PixelFlux, PixelIndependence) {
  const FarModel m = toy_model(1, 6);
  Rng rng(2);
  ScenePatch a = random_patch(6, 6, 3, rng);
  ScenePatch b = random_patch(6, 6, 3, rng);
  b.angles = a.angles;
  for (Index d = 0; d < 3; ++d) b.at(2, 4, d) = a.at(2, 4, d);
  const DriverVector drv{300.0, 12.0, 55.0};
  EXPECT_EQ(predict_pixel_flux(m, a, drv).values(2, 4), predict_pixel_flux(m, b, drv).values(2, 4));
}

TEST(PixelFlux, ZeroWeightArmGivesDenormalisedBias) {
  FarModel m = toy_model(3);
  for (auto& l : m.flux_mlp.layers()) {
    l.weight.setZero();
    l.bias.setZero();
  }
  m.flux_mlp.layers().back().bias(0) = 0.5;
  m.normalization.target = {{5.0}, {2.0}, {false}};
  Rng rng(1);
  const auto g = predict_pixel_flux(m, random_patch(4, 4, 3, rng), {100.0, 5.0, 40.0});
  EXPECT_TRUE((g.values.array() == 6.0).all());
}

TEST(PixelFlux, MissingDriverAndBadBand) {
  const FarModel m = toy_model(4);
  Rng rng(1);
  ScenePatch p = random_patch(4, 4, 3, rng);
  EXPECT_THROW(predict_pixel_flux(m, p, {NAN, 1.0, 1.0}), InputError);
  p.at(1, 1, 0) = NAN;
  EXPECT_THROW(predict_pixel_flux(m, p, {1.0, 1.0, 1.0}), DataError);
  EXPECT_THROW(predict_pixel_flux(m, random_patch(5, 4, 3, rng), {1.0, 1.0, 1.0}), ShapeError);
}

namespace {

// Flux arm: one affine layer, flux = 2 * band + 0.5 * SW_IN + 1. Footprint arm:
// logit = 2 ln 3 * x_w, so column 1 carries three times the weight of column 0.
FarModel hand_model() {
  FarModel m;
  m.rows = 2;
  m.cols = 2;
  m.normalization = Normalization::identity(1);
  Matrix wf = Matrix::Zero(1, 1 + kAngleCount + kDriverCount);
  wf(0, 0) = 2.0;
  wf(0, 1 + kAngleCount) = 0.5;
  m.flux_mlp = Mlp({{wf, Vector::Constant(1, 1.0)}});
  Matrix wp = Matrix::Zero(1, kFootprintFeatureCount + kCoordinateCount);
  wp(0, kFootprintFeatureCount) = 2.0 * std::log(3.0);
  m.footprint_mlp = Mlp({{wp, Vector::Zero(1)}});
  m.validate();
  return m;
}

ScenePatch hand_patch() {
  ScenePatch p = ScenePatch::filled(2, 2, 1);
  p.at(0, 0, 0) = 1.0;
  p.at(0, 1, 0) = 2.0;
  p.at(1, 0, 0) = 3.0;
  p.at(1, 1, 0) = 4.0;
  return p;
}

}  // namespace

TEST(PixelFlux, HandSetTwoByTwo) {
  const auto g = predict_pixel_flux(hand_model(), hand_patch(), {2.0, 0.0, 0.0});
  EXPECT_DOUBLE_EQ(g.values(0, 0), 4.0);
  EXPECT_DOUBLE_EQ(g.values(0, 1), 6.0);
  EXPECT_DOUBLE_EQ(g.values(1, 0), 8.0);
  EXPECT_DOUBLE_EQ(g.values(1, 1), 10.0);
}

TEST(Footprint, ZeroArmIsUniform) {
  FarModel m = toy_model(5, 5);
  for (auto& l : m.footprint_mlp.layers()) {
    l.weight.setZero();
    l.bias.setZero();
  }
  const auto fp = predict_footprint(m, {45.0, 2.0, 0.3, 10.0, 50.0, 4.0});
  for (Index i = 0; i < fp.weights().size(); ++i) EXPECT_NEAR(fp.weights().data()[i], 1.0 / 25, 1e-15);
}

TEST(Footprint, AlwaysNormalised) {
  Rng rng(6);
  for (std::uint64_t s = 0; s < 30; ++s) {
    const FarModel m = toy_model(s, 8);
    const FootprintVector v{rng.uniform(0, 360), rng.uniform(0, 8), rng.uniform(0.1, 1), rng.uniform(-5, 30),
                            rng.uniform(-50, 300), rng.uniform(2, 40)};
    const auto fp = predict_footprint(m, v);
    EXPECT_NEAR(fp.weights().sum(), 1.0, 1e-9);
    EXPECT_GT(fp.weights().minCoeff(), 0.0);
  }
  EXPECT_THROW(predict_footprint(toy_model(1), {NAN, 1, 1, 1, 1, 1}), InputError);
}

TEST(Footprint, CoordinateChannelsAndCentredLogits) {
  // Logits injected straight from the coordinate convention.
  const Index n = 9;
  Matrix z(n, n);
  for (Index r = 0; r < n; ++r)
    for (Index c = 0; c < n; ++c) {
      const double x = (c + 0.5) / n, y = (r + 0.5) / n;
      z(r, c) = -100.0 * ((x - 0.5) * (x - 0.5) + (y - 0.5) * (y - 0.5));
    }
  const auto fp = softmax_2d(z);
  Index r0, c0;
  fp.weights().maxCoeff(&r0, &c0);
  EXPECT_EQ(r0, 4);
  EXPECT_EQ(c0, 4);
  EXPECT_GT(fp.weights().block(3, 3, 3, 3).sum(), 0.5);

  const auto hand = predict_footprint(hand_model(), {0, 0, 0, 0, 0, 1});
  EXPECT_NEAR(hand(0, 0), 0.125, 1e-15);
  EXPECT_NEAR(hand(1, 0), 0.125, 1e-15);
  EXPECT_NEAR(hand(0, 1), 0.375, 1e-15);
  EXPECT_NEAR(hand(1, 1), 0.375, 1e-15);
}

TEST(Aggregate, Identities) {
  FluxGrid f{Matrix(2, 2)};
  f.values << 1, 2, 3, 4;
  EXPECT_DOUBLE_EQ(aggregate(f, FootprintGrid::uniform(2, 2)), 2.5);
  EXPECT_EQ(aggregate(f, FootprintGrid::delta(2, 2, 1, 0)), 3.0);
  FluxGrid c{Matrix::Constant(7, 7, -4.25)};
  Rng rng(2);
  Matrix z(7, 7);
  for (Index i = 0; i < z.size(); ++i) z.data()[i] = rng.uniform(-30, 30);
  EXPECT_NEAR(aggregate(c, softmax_2d(z)), -4.25, 1e-12);
  EXPECT_THROW(aggregate(f, FootprintGrid::uniform(3, 2)), ShapeError);
}

TEST(Aggregate, JointPermutationInvariance) {
  Rng rng(3);
  Matrix flux(5, 5), logits(5, 5);
  for (Index i = 0; i < 25; ++i) {
    flux.data()[i] = rng.normal();
    logits.data()[i] = rng.normal();
  }
  std::vector<Index> perm(25);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(std::span<Index>(perm));
  Matrix pf(5, 5), pl(5, 5);
  for (Index i = 0; i < 25; ++i) {
    pf.data()[i] = flux.data()[perm[static_cast<std::size_t>(i)]];
    pl.data()[i] = logits.data()[perm[static_cast<std::size_t>(i)]];
  }
  EXPECT_NEAR(aggregate({flux}, softmax_2d(logits)), aggregate({pf}, softmax_2d(pl)), 1e-12);
}

TEST(Loss, Examples) {
  const std::vector<double> y = {1.0, -2.0};
  std::vector<FootprintGrid> fps = {FootprintGrid::uniform(3, 3), FootprintGrid::uniform(3, 3)};
  EXPECT_EQ(far_loss(y, y, fps, 0.0), 0.0);

  const std::vector<double> one = {1.0}, zero = {0.0};
  std::vector<FootprintGrid> delta = {FootprintGrid::delta(4, 4, 0, 0)};
  EXPECT_DOUBLE_EQ(far_loss(one, zero, delta, 1e-3), 1.0);

  std::vector<FootprintGrid> uni = {FootprintGrid::uniform(128, 128)};
  EXPECT_NEAR(far_loss(one, one, uni, 1.0), 9.70406, 1e-5);
  EXPECT_NEAR(far_loss(one, one, uni, 1.0, EntropySign::as_typeset), -9.70406, 1e-5);
  EXPECT_THROW(far_loss(one, y, uni, 0.0), ShapeError);
}

TEST(Loss, MonotoneInLambda) {
  const std::vector<double> y = {0.3}, p = {-0.1};
  Matrix z(3, 3);
  z << 0, 1, 2, 0.5, 0.1, -1, 2, 2, 0;
  std::vector<FootprintGrid> fp = {softmax_2d(z)};
  std::vector<FootprintGrid> delta = {FootprintGrid::delta(3, 3, 1, 1)};
  double prev = far_loss(y, p, fp, -1.0);
  for (double lambda : {-0.5, 0.0, 1e-3, 0.5, 2.0}) {
    const double l = far_loss(y, p, fp, lambda);
    EXPECT_GT(l, prev);
    prev = l;
    EXPECT_EQ(far_loss(y, p, delta, lambda), far_loss(y, p, delta, 0.0));
  }
}

TEST(FarForward, CompositionAndHandValue) {
  const FarModel m = hand_model();
  const FootprintVector v{0, 0, 0, 0, 0, 1};
  const auto out = far_forward(m, hand_patch(), {2.0, 0.0, 0.0}, v);
  // 1/8 (4 + 8) + 3/8 (6 + 10)
  EXPECT_NEAR(out.prediction, 7.5, 1e-14);
  EXPECT_EQ(out.prediction, aggregate(predict_pixel_flux(m, hand_patch(), {2.0, 0.0, 0.0}), predict_footprint(m, v)));

  FarModel z = toy_model(9);
  for (auto& l : z.flux_mlp.layers()) l.weight.setZero();
  Rng rng(3);
  const auto p = random_patch(4, 4, 3, rng);
  const double expected = z.denormalize_target(z.flux_mlp.layers().back().bias(0));
  for (double wd : {0.0, 90.0, 200.0})
    EXPECT_NEAR(far_forward(z, p, {500.0, 20.0, 30.0}, {wd, 2.0, 0.4, 15.0, 80.0, 5.0}).prediction, expected, 1e-12);
}

TEST(FarGradient, MatchesFiniteDifferences) {
  const double h = 1e-5;
  int checked = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    FarModel m = toy_model(seed, 4, 3, 8, 2);
    m.lambda = seed % 3 == 0 ? 0.0 : (seed % 3 == 1 ? 0.3 : -0.3);
    m.entropy_sign = seed % 2 == 0 ? EntropySign::prose : EntropySign::as_typeset;
    Rng rng(derive_seed(seed, 2));
    const auto batch = toy_batch(m, 3, rng);
    FarGradients g = FarGradients::zeros_like(m);
    const auto loss = far_batch_gradients(m, batch.samples, g);
    EXPECT_NEAR(loss.loss, reference_loss(m, batch.samples), 1e-12);

    auto check_net = [&](Mlp& net, const MlpGradients& grads) {
      for (std::size_t k = 0; k < net.layer_count(); ++k) {
        auto& l = net.layers()[k];
        auto probe = [&](double& p, double analytic) {
          const double keep = p;
          p = keep + h;
          const double up = reference_loss(m, batch.samples);
          p = keep - h;
          const double down = reference_loss(m, batch.samples);
          p = keep;
          const double fd = (up - down) / (2 * h);
          EXPECT_LE(std::abs(fd - analytic) / std::max({std::abs(fd), std::abs(analytic), 1e-3}), 1e-4)
              << "seed " << seed << " layer " << k;
          ++checked;
        };
        for (Index i = 0; i < l.weight.size(); ++i) probe(l.weight.data()[i], grads.layers[k].weight.data()[i]);
        for (Index i = 0; i < l.bias.size(); ++i) probe(l.bias(i), grads.layers[k].bias(i));
      }
    };
    check_net(m.flux_mlp, g.flux);
    check_net(m.footprint_mlp, g.footprint);
  }
  EXPECT_GT(checked, 20 * 100);
}

TEST(FarGradient, AccumulatesIntoExistingGradients) {
  const FarModel m = toy_model(2);
  Rng rng(1);
  const auto batch = toy_batch(m, 2, rng);
  FarGradients once = FarGradients::zeros_like(m), twice = FarGradients::zeros_like(m);
  far_batch_gradients(m, batch.samples, once);
  far_batch_gradients(m, batch.samples, twice);
  far_batch_gradients(m, batch.samples, twice);
  EXPECT_TRUE(twice.flux.layers[0].weight.isApprox(2.0 * once.flux.layers[0].weight));
  EXPECT_THROW(far_batch_gradients(m, {}, once), InputError);
}

TEST(Checkpoint, RoundTripKeepsFloatPrecision) {
  const auto dir = scratch_dir();
  FarModel m = toy_model(7, 6, 3, 16, 3);
  m.lambda = 1e-3;
  m.entropy_sign = EntropySign::as_typeset;
  save_checkpoint(dir / "a.ckpt", m);
  const FarModel r = load_checkpoint(dir / "a.ckpt");
  EXPECT_EQ(r.rows, 6);
  EXPECT_EQ(r.lambda, 1e-3);
  EXPECT_EQ(r.entropy_sign, EntropySign::as_typeset);
  EXPECT_EQ(r.seed, 7u);
  EXPECT_EQ(r.normalization, m.normalization);
  Rng rng(4);
  const auto p = random_patch(6, 6, 3, rng);
  const DriverVector d{400, 15, 60};
  const FootprintVector v{120, 3, 0.4, 15, 100, 6};
  const auto a = far_forward(m, p, d, v), b = far_forward(r, p, d, v);
  EXPECT_NEAR(a.prediction, b.prediction, 1e-5 * std::max(1.0, std::abs(a.prediction)));
  EXPECT_LT((a.footprint.weights() - b.footprint.weights()).cwiseAbs().maxCoeff(), 1e-6);

  // Parameters are stored as float32, so a second save is byte-identical.
  save_checkpoint(dir / "b.ckpt", r);
  EXPECT_EQ(read_file(dir / "a.ckpt"), read_file(dir / "b.ckpt"));
  EXPECT_EQ(load_checkpoint(dir / "b.ckpt").flux_mlp.layers()[0].weight, r.flux_mlp.layers()[0].weight);
}

TEST(Checkpoint, RejectsCorruptFiles) {
  const auto dir = scratch_dir();
  write_file(dir / "junk.ckpt", "not a checkpoint");
  EXPECT_THROW(load_checkpoint(dir / "junk.ckpt"), DataError);
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), DataError);
  save_checkpoint(dir / "ok.ckpt", toy_model(1));
  auto bytes = read_file(dir / "ok.ckpt");
  write_file(dir / "short.ckpt", bytes.substr(0, bytes.size() - 7));
  EXPECT_THROW(load_checkpoint(dir / "short.ckpt"), DataError);
}
