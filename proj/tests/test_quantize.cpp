#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "lorahe/quantize.hpp"

using namespace lorahe;

namespace {

Matrix random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double spread) {
  std::normal_distribution<double> g(0.0, spread);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

}  // namespace

TEST(Calibrate, AffineExamples) {
  const auto p = calibrate_affine(-1.0, 1.0, 8);
  EXPECT_DOUBLE_EQ(p.scale[0], 2.0 / 255.0);
  EXPECT_EQ(p.zero_point[0], 128);
  const auto q = calibrate_affine(0.0, 255.0, 8);
  EXPECT_DOUBLE_EQ(q.scale[0], 1.0);
  EXPECT_EQ(q.zero_point[0], 0);
  const auto d = calibrate_affine(3.0, 3.0, 8);
  EXPECT_DOUBLE_EQ(d.scale[0], kScaleEpsilon);
  Matrix c(1, 1);
  c(0, 0) = 3.0;
  EXPECT_EQ(quantize(c, d).data[0], 128);
  EXPECT_THROW(calibrate_affine(1.0, 0.0, 8), std::invalid_argument);
}

TEST(Calibrate, SymmetricExamples) {
  EXPECT_DOUBLE_EQ(calibrate_symmetric(127.0, 8).scale[0], 1.0);
  const auto p = calibrate_symmetric(1.0, 8);
  EXPECT_DOUBLE_EQ(p.scale[0], 1.0 / 127.0);
  EXPECT_EQ(p.zero_point[0], 0);
  Matrix half(1, 1);
  half(0, 0) = 0.5;
  EXPECT_EQ(quantize(half, p).data[0], 64);
  EXPECT_DOUBLE_EQ(calibrate_symmetric(0.0, 8).scale[0], kScaleEpsilon);
  EXPECT_THROW(calibrate_symmetric(-1.0, 8), std::invalid_argument);
}

TEST(Quantize, RoundHalfUp) {
  EXPECT_EQ(round_half_up(63.5), 64);
  EXPECT_EQ(round_half_up(-63.5), -63);
  EXPECT_EQ(round_half_up(-63.51), -64);
  EXPECT_EQ(round_half_up(0.49999), 0);
}

TEST(Quantize, PerTokenVersusPerTensor) {
  Matrix t(2, 2);
  t << 0.5, -0.5, 50, -50;
  const auto tok = quantize_dynamic(t, Scheme::kSymmetric, Granularity::kPerToken, 8);
  EXPECT_EQ(tok.data, (std::vector<int64_t>{127, -127, 127, -127}));
  EXPECT_DOUBLE_EQ(tok.params.scale[0], 0.5 / 127);
  EXPECT_DOUBLE_EQ(tok.params.scale[1], 50.0 / 127);
  const auto ten = quantize_dynamic(t, Scheme::kSymmetric, Granularity::kPerTensor, 8);
  EXPECT_EQ(ten.data, (std::vector<int64_t>{1, -1, 127, -127}));
  EXPECT_DOUBLE_EQ(ten.params.scale[0], 50.0 / 127);
}

TEST(Quantize, ZeroTensor) {
  const Matrix z = Matrix::Zero(3, 4);
  const auto q = quantize_dynamic(z, Scheme::kSymmetric, Granularity::kPerToken, 8);
  EXPECT_EQ(q.data, std::vector<int64_t>(12, 0));
  EXPECT_DOUBLE_EQ(q.params.scale[2], kScaleEpsilon);
}

TEST(Quantize, SaturatesOutOfRange) {
  const auto p = calibrate_symmetric(1.0, 8);
  Matrix t(1, 3);
  t << 5.0, -5.0, 1e300;
  EXPECT_EQ(quantize(t, p).data, (std::vector<int64_t>{127, -128, 127}));
  const auto a = calibrate_affine(0.0, 1.0, 8);
  EXPECT_EQ(quantize(t, a).data, (std::vector<int64_t>{255, 0, 255}));
}

TEST(Quantize, ReconstructionWithinHalfScale) {
  std::mt19937_64 rng(1);
  for (int bits : {4, 8, 16}) {
    for (Scheme scheme : {Scheme::kSymmetric, Scheme::kAffine}) {
      for (Granularity g : {Granularity::kPerTensor, Granularity::kPerToken, Granularity::kPerChannel}) {
        const Matrix t = random_matrix(rng, 7, 33, 3.0);
        const auto q = quantize_dynamic(t, scheme, g, bits);
        const Matrix back = dequantize(q);
        for (Eigen::Index r = 0; r < t.rows(); ++r) {
          const double s = q.params.scale_at(static_cast<std::size_t>(r));
          for (Eigen::Index c = 0; c < t.cols(); ++c) {
            // The affine grid's offset can push the extreme value by a rounding of zp.
            const double bound = scheme == Scheme::kAffine ? s : s / 2;
            ASSERT_LE(std::abs(back(r, c) - t(r, c)), bound * (1 + 1e-9));
          }
        }
      }
    }
  }
}

TEST(Quantize, SymmetricGridIsExactAndDenseGridBound) {
  const auto p = calibrate_symmetric(127.0 * 0.25, 8);
  Matrix t(1, 255);
  for (int k = -127; k <= 127; ++k) t(0, k + 127) = 0.25 * k;
  const auto q = quantize(t, p);
  EXPECT_EQ((dequantize(q) - t).cwiseAbs().maxCoeff(), 0.0);
  // Exhaustive small grid: every multiple of scale/16 within range.
  Matrix dense(1, 127 * 32 + 1);
  for (Eigen::Index i = 0; i < dense.cols(); ++i) dense(0, i) = -31.75 + i * (0.25 / 16);
  const Matrix err = dequantize(quantize(dense, p)) - dense;
  EXPECT_LE(err.cwiseAbs().maxCoeff(), 0.125 + 1e-12);
}

TEST(Quantize, PerTokenNeverWorseThanPerTensor) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    Matrix t = random_matrix(rng, 6, 40, 1.0);
    t.row(trial % 6) *= 100.0;
    const Matrix tok = dequantize(quantize_dynamic(t, Scheme::kSymmetric, Granularity::kPerToken, 8));
    const Matrix ten = dequantize(quantize_dynamic(t, Scheme::kSymmetric, Granularity::kPerTensor, 8));
    for (Eigen::Index r = 0; r < t.rows(); ++r) {
      ASSERT_LE((tok.row(r) - t.row(r)).cwiseAbs().maxCoeff(), (ten.row(r) - t.row(r)).cwiseAbs().maxCoeff() + 1e-12);
    }
  }
}

TEST(Quantize, SymmetricCollapsesCrossTerms) {
  // Affine expansion: sum (x - zx)(w - zw) = sum xw - zw sum x - zx sum w + n zx zw.
  std::mt19937_64 rng(3);
  const Matrix x = random_matrix(rng, 1, 64, 1.0), w = random_matrix(rng, 1, 64, 0.1);
  const auto xa = quantize_dynamic(x, Scheme::kAffine, Granularity::kPerTensor, 8);
  const auto wa = quantize_dynamic(w, Scheme::kAffine, Granularity::kPerTensor, 8);
  int64_t sxw = 0, sx = 0, sw = 0;
  for (int i = 0; i < 64; ++i) {
    sxw += xa.data[i] * wa.data[i];
    sx += xa.data[i];
    sw += wa.data[i];
  }
  const int64_t zx = xa.params.zero_point[0], zw = wa.params.zero_point[0];
  const double affine = xa.params.scale[0] * wa.params.scale[0] * static_cast<double>(sxw - zw * sx - zx * sw + 64 * zx * zw);
  const Matrix ref = dequantize(xa) * dequantize(wa).transpose();
  EXPECT_NEAR(affine, ref(0, 0), 1e-9);

  const auto xs = quantize_dynamic(x, Scheme::kSymmetric, Granularity::kPerTensor, 8);
  const auto ws = quantize_dynamic(w, Scheme::kSymmetric, Granularity::kPerTensor, 8);
  int64_t dot = 0;
  for (int i = 0; i < 64; ++i) dot += xs.data[i] * ws.data[i];
  const Matrix y = rescale_output(std::span(&dot, 1), 1, 1, xs.params, ws.params);
  EXPECT_NEAR(y(0, 0), (dequantize(xs) * dequantize(ws).transpose())(0, 0), 1e-12);
}

TEST(RescaleOutput, BroadcastsScales) {
  const std::vector<int64_t> acc{1, 2, 3, 4, 5, 6};
  const auto one = calibrate_symmetric(127.0, 8);
  const Matrix y = rescale_output(acc, 2, 3, one, one);
  EXPECT_EQ(y(1, 2), 6.0);
  QuantParams sw = one;
  sw.granularity = Granularity::kPerChannel;
  sw.scale = {1.0, 10.0, 100.0};
  sw.zero_point = {0, 0, 0};
  QuantParams sx = one;
  sx.granularity = Granularity::kPerToken;
  sx.scale = {1.0, 2.0};
  sx.zero_point = {0, 0};
  const Matrix z = rescale_output(acc, 2, 3, sx, sw);
  EXPECT_DOUBLE_EQ(z(0, 1), 20.0);
  EXPECT_DOUBLE_EQ(z(1, 2), 1200.0);
  EXPECT_THROW(rescale_output(acc, 3, 2, sx, sw), std::invalid_argument);
}

TEST(RescaleOutput, FloatProductWithinQuantizationBound) {
  std::mt19937_64 rng(4);
  const Matrix x = random_matrix(rng, 5, 48, 1.0), w = random_matrix(rng, 12, 48, 0.2);
  const auto xq = quantize_dynamic(x, Scheme::kSymmetric, Granularity::kPerToken, 8);
  const auto wq = quantize_dynamic(w, Scheme::kSymmetric, Granularity::kPerChannel, 8);
  std::vector<int64_t> acc(5 * 12, 0);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 12; ++j)
      for (int k = 0; k < 48; ++k) acc[i * 12 + j] += xq.data[i * 48 + k] * wq.data[j * 48 + k];
  const Matrix y = rescale_output(acc, 5, 12, xq.params, wq.params);
  const Matrix ref = x * w.transpose();
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 12; ++j) {
      const double sx = xq.params.scale[i], sw = wq.params.scale[j];
      const double bound = 48 * (sx / 2 * w.row(j).cwiseAbs().maxCoeff() + sw / 2 * x.row(i).cwiseAbs().maxCoeff() + sx * sw / 4);
      EXPECT_LE(std::abs(y(i, j) - ref(i, j)), bound);
    }
}

TEST(RangeTracker, RunningRange) {
  RangeTracker r;
  EXPECT_THROW(r.params(Scheme::kSymmetric, 8), std::logic_error);
  Matrix a(1, 2), b(1, 2);
  a << -1.0, 2.0;
  b << -4.0, 0.5;
  r.observe(a);
  r.observe(b);
  EXPECT_EQ(r.min(), -4.0);
  EXPECT_EQ(r.max(), 2.0);
  EXPECT_DOUBLE_EQ(r.params(Scheme::kSymmetric, 8).scale[0], 4.0 / 127);
}

TEST(Strategy, ParseAndName) {
  for (const char* s : {"ST-ST", "DT-ST", "DT-SC", "DTok-ST", "DTok-SC"}) EXPECT_EQ(parse_strategy(s, 8).name(), s);
  const auto d = parse_strategy("DTok-SC", 8);
  EXPECT_EQ(d.activation.granularity, Granularity::kPerToken);
  EXPECT_EQ(d.weight.granularity, Granularity::kPerChannel);
  EXPECT_EQ(parse_strategy("ST-ST", 16).activation.mode, RangeMode::kStatic);
  EXPECT_THROW(parse_strategy("XX-YY", 8), std::invalid_argument);
}
