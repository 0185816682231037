#include <gtest/gtest.h>

#include <cmath>

#include "vqarank/layers.hpp"
#include "vqarank/rng.hpp"

using vqarank::DropoutDraw;
using vqarank::DropoutMode;
using vqarank::ForwardMode;
using vqarank::LinearLayer;
using vqarank::Matrix;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, vqarank::Rng& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (double& v : m.data) v = rng.uniform(-scale, scale);
  return m;
}

}  // namespace

TEST(Linear, IdentityForward) {
  LinearLayer layer(2, 2);
  layer.W = Matrix::from_rows({{1, 0}, {0, 1}});
  const Matrix y = layer.forward(Matrix::column_vector({3, 4}));
  EXPECT_DOUBLE_EQ(y(0, 0), 3.0);
  EXPECT_DOUBLE_EQ(y(1, 0), 4.0);
}

TEST(Linear, HandArithmetic) {
  LinearLayer layer(2, 2);
  layer.W = Matrix::from_rows({{1, 2}, {3, 4}});
  layer.b = Matrix::column_vector({1, 1});
  const Matrix y = layer.forward(Matrix::column_vector({1, 1}));
  EXPECT_DOUBLE_EQ(y(0, 0), 4.0);
  EXPECT_DOUBLE_EQ(y(1, 0), 8.0);
}

TEST(Linear, ForwardMatchesNaiveOracle) {
  vqarank::Rng rng(31);
  LinearLayer layer(5, 7);
  layer.init_uniform(rng);
  layer.b = random_matrix(5, 1, rng);
  const Matrix x = random_matrix(7, 3, rng);
  const Matrix y = layer.forward(x);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double s = layer.b(i, 0);
      for (std::size_t k = 0; k < 7; ++k) s += layer.W(i, k) * x(k, j);
      EXPECT_NEAR(y(i, j), s, 1e-12);
    }
}

TEST(Linear, ForwardShapeError) {
  LinearLayer layer(2, 3);
  EXPECT_THROW(layer.forward(Matrix(4, 1)), vqarank::ShapeError);
}

TEST(Linear, BackwardZeroUpstream) {
  vqarank::Rng rng(37);
  LinearLayer layer(3, 4);
  layer.init_uniform(rng);
  const Matrix x = random_matrix(4, 2, rng);
  const Matrix gx = layer.backward(x, Matrix(3, 2, 0.0));
  for (double v : layer.grad_W.data) EXPECT_DOUBLE_EQ(v, 0.0);
  for (double v : layer.grad_b.data) EXPECT_DOUBLE_EQ(v, 0.0);
  for (double v : gx.data) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(Linear, BackwardScalarCase) {
  LinearLayer layer(1, 1);
  layer.W(0, 0) = 2.0;
  const Matrix x = Matrix::column_vector({3});
  const Matrix gx = layer.backward(x, Matrix::column_vector({1}));
  EXPECT_DOUBLE_EQ(layer.grad_W(0, 0), 3.0);
  EXPECT_DOUBLE_EQ(layer.grad_b(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(gx(0, 0), 2.0);
}

TEST(Linear, BackwardAccumulates) {
  LinearLayer layer(1, 1);
  layer.W(0, 0) = 2.0;
  const Matrix x = Matrix::column_vector({3});
  layer.backward(x, Matrix::column_vector({1}));
  layer.backward(x, Matrix::column_vector({1}));
  EXPECT_DOUBLE_EQ(layer.grad_W(0, 0), 6.0);
  layer.zero_grads();
  EXPECT_DOUBLE_EQ(layer.grad_W(0, 0), 0.0);
}

// Central differences of L = sum(W*x + b) against the accumulated gradients.
TEST(Linear, BackwardMatchesFiniteDifferences) {
  vqarank::Rng rng(41);
  LinearLayer layer(4, 5);
  layer.init_uniform(rng);
  layer.b = random_matrix(4, 1, rng);
  const Matrix x = random_matrix(5, 3, rng);

  auto loss = [&]() {
    const Matrix y = layer.forward(x);
    double s = 0.0;
    for (std::size_t i = 0; i < y.data.size(); ++i) s += y.data[i] * (0.5 + 0.1 * i);
    return s;
  };

  layer.zero_grads();
  Matrix grad_out(4, 3);
  for (std::size_t i = 0; i < grad_out.data.size(); ++i) grad_out.data[i] = 0.5 + 0.1 * i;
  const Matrix gx = layer.backward(x, grad_out);

  const double h = 1e-6;
  for (std::size_t i = 0; i < layer.param_count(); ++i) {
    double& p = layer.param_at(i);
    const double saved = p;
    p = saved + h;
    const double lp = loss();
    p = saved - h;
    const double lm = loss();
    p = saved;
    const double numeric = (lp - lm) / (2 * h);
    EXPECT_NEAR(layer.grad_at(i), numeric, 1e-6 * std::max(1.0, std::fabs(numeric)));
  }
  (void)gx;
}

TEST(Linear, NoBiasLayerSkipsBias) {
  vqarank::Rng rng(43);
  LinearLayer layer(3, 3, /*with_bias=*/false);
  layer.init_uniform(rng);
  layer.b.fill(99.0);  // must be ignored
  const Matrix x = random_matrix(3, 1, rng);
  const Matrix y = layer.forward(x);
  const Matrix wx = vqarank::matmul(layer.W, x);
  for (std::size_t i = 0; i < y.data.size(); ++i) EXPECT_DOUBLE_EQ(y.data[i], wx.data[i]);
  EXPECT_EQ(layer.param_count(), 9u);
}

TEST(Linear, InitUniformBound) {
  vqarank::Rng rng(47);
  LinearLayer layer(50, 16);
  layer.init_uniform(rng);
  const double bound = 1.0 / 4.0;
  for (double w : layer.W.data) {
    EXPECT_GE(w, -bound);
    EXPECT_LE(w, bound);
  }
  for (double v : layer.b.data) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(Activation, ReluDefinition) {
  const Matrix y = vqarank::relu_forward(Matrix::column_vector({-1, 0, 2}));
  EXPECT_DOUBLE_EQ(y(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(y(1, 0), 0.0);
  EXPECT_DOUBLE_EQ(y(2, 0), 2.0);
}

TEST(Activation, TanhOddFunction) {
  const Matrix y = vqarank::tanh_forward(Matrix::column_vector({0}));
  EXPECT_DOUBLE_EQ(y(0, 0), 0.0);
}

TEST(Activation, ReluBackwardGateAndZeroConvention) {
  const Matrix x = Matrix::column_vector({-1, 0, 2});
  const Matrix g = Matrix::column_vector({5, 5, 5});
  const Matrix gx = vqarank::relu_backward(x, g);
  EXPECT_DOUBLE_EQ(gx(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(gx(1, 0), 0.0);  // gradient 0 at exactly 0
  EXPECT_DOUBLE_EQ(gx(2, 0), 5.0);
}

TEST(Activation, BackwardMatchesFiniteDifferences) {
  vqarank::Rng rng(53);
  // Inputs nudged away from 0 so the relu kink is not straddled.
  Matrix x(6, 2);
  for (double& v : x.data) {
    v = rng.uniform(-2.0, 2.0);
    if (std::fabs(v) < 1e-3) v = 0.1;
  }
  const double h = 1e-6;
  for (int kind = 0; kind < 2; ++kind) {
    auto fwd = [&](const Matrix& m) {
      return kind == 0 ? vqarank::tanh_forward(m) : vqarank::relu_forward(m);
    };
    auto bwd = [&](const Matrix& m, const Matrix& g) {
      return kind == 0 ? vqarank::tanh_backward(m, g) : vqarank::relu_backward(m, g);
    };
    Matrix weights(6, 2);
    for (std::size_t i = 0; i < weights.data.size(); ++i) weights.data[i] = 0.3 + 0.05 * i;
    const Matrix analytic = bwd(x, weights);
    for (std::size_t i = 0; i < x.data.size(); ++i) {
      Matrix xp = x, xm = x;
      xp.data[i] += h;
      xm.data[i] -= h;
      const double lp = vqarank::dot(fwd(xp), weights);
      const double lm = vqarank::dot(fwd(xm), weights);
      const double numeric = (lp - lm) / (2 * h);
      EXPECT_NEAR(analytic.data[i], numeric, 1e-6 * std::max(1.0, std::fabs(numeric)));
    }
  }
}

TEST(Dropout, KeepAllIsIdentity) {
  vqarank::Rng rng(59);
  const Matrix x = random_matrix(4, 4, rng);
  const auto [y, mask] = vqarank::dropout_apply(x, 1.0, DropoutMode::Train, 1);
  for (std::size_t i = 0; i < x.data.size(); ++i) EXPECT_DOUBLE_EQ(y.data[i], x.data[i]);
  for (std::uint8_t m : mask.mask) EXPECT_EQ(m, 1);
}

TEST(Dropout, InferIsIdentity) {
  vqarank::Rng rng(61);
  const Matrix x = random_matrix(4, 4, rng);
  const auto [y, mask] = vqarank::dropout_apply(x, 0.3, DropoutMode::Infer, 1);
  for (std::size_t i = 0; i < x.data.size(); ++i) EXPECT_DOUBLE_EQ(y.data[i], x.data[i]);
  for (std::uint8_t m : mask.mask) EXPECT_EQ(m, 1);
}

TEST(Dropout, EmpiricalKeepRateAndMean) {
  Matrix x(1000, 100, 1.0);
  const auto [y, mask] = vqarank::dropout_apply(x, 0.5, DropoutMode::Train, 73);
  std::size_t kept = 0;
  double sum = 0.0;
  for (std::size_t i = 0; i < y.data.size(); ++i) {
    kept += mask.mask[i];
    sum += y.data[i];
    EXPECT_TRUE(y.data[i] == 0.0 || y.data[i] == 2.0);  // inverted scaling by 1/0.5
  }
  const double n = static_cast<double>(x.size());
  EXPECT_NEAR(kept / n, 0.5, 0.01);
  EXPECT_NEAR(sum / n, 1.0, 0.02);  // E[y] = x
}

TEST(Dropout, SeedReproducible) {
  vqarank::Rng rng(67);
  const Matrix x = random_matrix(30, 7, rng);
  const auto [y1, m1] = vqarank::dropout_apply(x, 0.5, DropoutMode::Train, 999);
  const auto [y2, m2] = vqarank::dropout_apply(x, 0.5, DropoutMode::Train, 999);
  EXPECT_EQ(m1.mask, m2.mask);
  for (std::size_t i = 0; i < y1.data.size(); ++i) EXPECT_EQ(y1.data[i], y2.data[i]);
  const auto [y3, m3] = vqarank::dropout_apply(x, 0.5, DropoutMode::Train, 1000);
  EXPECT_NE(m1.mask, m3.mask);
  (void)y3;
}

TEST(Dropout, RejectsBadKeepProb) {
  const Matrix x(2, 2, 1.0);
  EXPECT_THROW(vqarank::dropout_apply(x, 0.0, DropoutMode::Train, 1), vqarank::ParamError);
  EXPECT_THROW(vqarank::dropout_apply(x, -0.5, DropoutMode::Infer, 1), vqarank::ParamError);
  EXPECT_THROW(vqarank::dropout_apply(x, 1.5, DropoutMode::Train, 1), vqarank::ParamError);
}

TEST(DropoutDraw, SameSiteSameMaskAcrossCalls) {
  DropoutDraw draw(5);
  Matrix x(16, 3, 1.0);
  const Matrix y1 = draw.apply(x, 0.5, "site_a");
  const Matrix y2 = draw.apply(x, 0.5, "site_a");
  for (std::size_t i = 0; i < y1.data.size(); ++i) EXPECT_EQ(y1.data[i], y2.data[i]);
  // Units are masked per row: all columns of a row share the fate.
  for (std::size_t i = 0; i < 16; ++i) {
    const double first = y1(i, 0);
    for (std::size_t j = 1; j < 3; ++j) EXPECT_EQ(y1(i, j), first);
    EXPECT_TRUE(first == 0.0 || first == 2.0);
  }
}

TEST(DropoutDraw, DistinctSitesIndependent) {
  DropoutDraw draw(6);
  Matrix x(64, 1, 1.0);
  const Matrix ya = draw.apply(x, 0.5, "site_a");
  const Matrix yb = draw.apply(x, 0.5, "site_b");
  int same = 0;
  for (std::size_t i = 0; i < 64; ++i) same += ya(i, 0) == yb(i, 0);
  EXPECT_LT(same, 64);
}

TEST(DropoutDraw, ForcedMasksReplayExactly) {
  std::map<std::string, std::vector<std::uint8_t>> masks;
  masks["s"] = {1, 0, 1, 0};
  DropoutDraw draw = DropoutDraw::forced(masks);
  Matrix x(4, 2, 3.0);
  const Matrix y = draw.apply(x, 0.5, "s");
  EXPECT_DOUBLE_EQ(y(0, 0), 6.0);
  EXPECT_DOUBLE_EQ(y(1, 0), 0.0);
  EXPECT_DOUBLE_EQ(y(2, 1), 6.0);
  EXPECT_DOUBLE_EQ(y(3, 1), 0.0);
  EXPECT_THROW(draw.apply(x, 0.5, "unknown"), vqarank::ParamError);
  Matrix wrong(5, 1, 1.0);
  EXPECT_THROW(draw.apply(wrong, 0.5, "s"), vqarank::ParamError);
}

TEST(DropoutDraw, ProbeRecordsSitesWithoutChangingValues) {
  DropoutDraw probe = DropoutDraw::probe();
  Matrix x(8, 2, 1.5);
  const Matrix y = probe.apply(x, 0.5, "p1");
  probe.apply(x, 0.5, "p1");  // revisits are recorded once
  probe.apply(Matrix(4, 1, 1.0), 0.25, "p2");
  probe.apply(Matrix(4, 1, 1.0), 1.0, "deterministic");  // keep=1 sites are invisible
  for (std::size_t i = 0; i < y.data.size(); ++i) EXPECT_DOUBLE_EQ(y.data[i], 1.5);
  ASSERT_EQ(probe.sites().size(), 2u);
  EXPECT_EQ(probe.sites()[0].name, "p1");
  EXPECT_EQ(probe.sites()[0].units, 8u);
  EXPECT_EQ(probe.sites()[1].name, "p2");
  EXPECT_DOUBLE_EQ(probe.sites()[1].keep_prob, 0.25);
}

TEST(ForwardMode, InferNeverDrops) {
  ForwardMode mode = ForwardMode::infer();
  Matrix x(32, 2, 1.0);
  const Matrix y = mode.dropout(x, 0.5, "s");
  for (double v : y.data) EXPECT_DOUBLE_EQ(v, 1.0);
  EXPECT_FALSE(mode.stochastic());
}

TEST(ForwardMode, TrainUsesDistinctSiteStreams) {
  ForwardMode a = ForwardMode::train(11);
  const Matrix x(64, 1, 1.0);
  const Matrix y1 = a.dropout(x, 0.5, "first");
  const Matrix y2 = a.dropout(x, 0.5, "second");
  int same = 0;
  for (std::size_t i = 0; i < 64; ++i) same += y1.data[i] == y2.data[i];
  EXPECT_LT(same, 64);

  // Fresh mode with the same seed replays the same masks in order.
  ForwardMode b = ForwardMode::train(11);
  const Matrix z1 = b.dropout(x, 0.5, "first");
  for (std::size_t i = 0; i < 64; ++i) EXPECT_EQ(y1.data[i], z1.data[i]);
}

TEST(ForwardMode, ThetaRoutesThroughDraw) {
  DropoutDraw draw(21);
  ForwardMode mode = ForwardMode::theta(draw);
  Matrix x(16, 4, 1.0);
  const Matrix y1 = mode.dropout(x, 0.5, "s");
  const Matrix y2 = mode.dropout(x, 0.5, "s");
  for (std::size_t i = 0; i < y1.data.size(); ++i) EXPECT_EQ(y1.data[i], y2.data[i]);
}

TEST(Softmax, UniformInput) {
  Matrix x(1, 4, 3.7);
  const Matrix p = vqarank::softmax_rows(x);
  for (double v : p.data) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Softmax, AnalyticTwoClass) {
  Matrix x(1, 2);
  x(0, 0) = 0.0;
  x(0, 1) = std::log(3.0);
  const Matrix p = vqarank::softmax_rows(x);
  EXPECT_NEAR(p(0, 0), 0.25, 1e-15);
  EXPECT_NEAR(p(0, 1), 0.75, 1e-15);
}

TEST(Softmax, RowsSumToOneAndMatchNaiveOracle) {
  vqarank::Rng rng(71);
  Matrix x(100, 50);
  for (double& v : x.data) v = rng.uniform(-3.0, 3.0);
  const Matrix p = vqarank::softmax_rows(x);
  for (std::size_t i = 0; i < x.rows; ++i) {
    double sum = 0.0;
    double naive_den = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) naive_den += std::exp(x(i, j));
    for (std::size_t j = 0; j < x.cols; ++j) {
      sum += p(i, j);
      EXPECT_NEAR(p(i, j), std::exp(x(i, j)) / naive_den, 1e-12);
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Softmax, RowsSumToOneProperty) {
  vqarank::Rng rng(73);
  for (int trial = 0; trial < 1000; ++trial) {
    Matrix x(3, 9);
    for (double& v : x.data) v = rng.uniform(-40.0, 40.0);
    const Matrix p = vqarank::softmax_rows(x);
    for (std::size_t i = 0; i < x.rows; ++i) {
      double sum = 0.0;
      for (std::size_t j = 0; j < x.cols; ++j) sum += p(i, j);
      ASSERT_NEAR(sum, 1.0, 1e-12);
    }
  }
}

TEST(Softmax, LogVariantConsistent) {
  vqarank::Rng rng(79);
  Matrix x(20, 30);
  for (double& v : x.data) v = rng.uniform(-20.0, 20.0);
  const Matrix p = vqarank::softmax_rows(x);
  const Matrix lp = vqarank::log_softmax_rows(x);
  for (std::size_t i = 0; i < x.data.size(); ++i)
    EXPECT_NEAR(lp.data[i], std::log(p.data[i]), 1e-9);
}

TEST(Softmax, ExtremedInputsStayFinite) {
  Matrix x = Matrix::from_rows({{1000.0, 0.0, -1000.0}});
  const Matrix p = vqarank::softmax_rows(x);
  EXPECT_TRUE(p.all_finite());
  EXPECT_NEAR(p(0, 0), 1.0, 1e-12);
  const Matrix lp = vqarank::log_softmax_rows(x);
  EXPECT_TRUE(lp.all_finite());
  EXPECT_NEAR(lp(0, 0), 0.0, 1e-12);
}

TEST(Softmax, ColumnVariants) {
  vqarank::Rng rng(83);
  Matrix x(6, 4);
  for (double& v : x.data) v = rng.uniform(-2.0, 2.0);
  const Matrix pc = vqarank::softmax_cols(x);
  for (std::size_t j = 0; j < x.cols; ++j) {
    double sum = 0.0;
    for (std::size_t i = 0; i < x.rows; ++i) sum += pc(i, j);
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
  const Matrix lpc = vqarank::log_softmax_cols(x);
  for (std::size_t i = 0; i < x.data.size(); ++i)
    EXPECT_NEAR(lpc.data[i], std::log(pc.data[i]), 1e-9);
}
