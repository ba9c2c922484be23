#include "causal_lens/metric_models.hpp"

#include <gtest/gtest.h>

#include <numbers>
#include <random>

using namespace causal_lens;

namespace {

Vec vec(std::initializer_list<double> xs) {
  Vec v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

std::vector<ModelPtr> builtin_models() {
  return {make_model("minkowski-block", {{"n", 3}}), make_model("minkowski-block", {{"n", 4}}),
          make_model("cylinder", {{"T", 3}}), make_model("conformal-flat", {{"n", 3}}),
          make_model("conformal-flat", {{"n", 4}})};
}

std::vector<Vec> interior_samples(const MetricModel& m, int count, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::vector<Vec> out;
  while (static_cast<int>(out.size()) < count) {
    Vec x = m.sample_candidate(rng);
    if (m.boundary_function(x) >= 0.0) out.push_back(x);
  }
  return out;
}

// Step scaled to the coordinate regularity of the chart (polar charts shrink near the poles).
double fd_step(const MetricModel& m, const Vec& x) {
  return m.name() == "cylinder" ? 1e-4 * std::min(1.0, std::abs(std::sin(x[1]))) : 1e-4;
}

// Fourth-order central difference of a matrix-valued function along axis l.
template <class F>
auto central(F&& f, const Vec& x, int l, double h) {
  using R = std::decay_t<decltype(f(x))>;
  auto at = [&](double t) {
    Vec y = x;
    y[l] += t;
    return R(f(y));
  };
  return R((8.0 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12.0 * h));
}

// Levi-Civita connection from finite differences of the metric.
Christoffel fd_christoffel(const MetricModel& m, const Vec& x) {
  const int n = m.dim();
  const double h = fd_step(m, x);
  std::vector<Mat> dg(n);
  for (int l = 0; l < n; ++l) dg[l] = central([&](const Vec& y) { return Mat(m.metric(y)); }, x, l, h);
  const Mat ginv = m.metric(x).inverse();
  Christoffel G(n);
  for (int k = 0; k < n; ++k)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        double s = 0.0;
        for (int l = 0; l < n; ++l) s += 0.5 * ginv(k, l) * (dg[i](l, j) + dg[j](l, i) - dg[l](i, j));
        G(k, i, j) = s;
      }
  return G;
}

ChristoffelDerivative fd_christoffel_derivative(const MetricModel& m, const Vec& x) {
  const int n = m.dim();
  const double h = fd_step(m, x);
  auto gamma_at = [&](const Vec& y) {
    Christoffel G(n);
    m.christoffel(y, G);
    Vec flat(n * n * n);
    for (int k = 0; k < n; ++k)
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) flat[(k * n + i) * n + j] = G(k, i, j);
    return flat;
  };
  ChristoffelDerivative d(n);
  for (int l = 0; l < n; ++l) {
    const Vec dl = central(gamma_at, x, l, h);
    for (int k = 0; k < n; ++k)
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) d(k, i, j, l) = dl[(k * n + i) * n + j];
  }
  return d;
}

}  // namespace

TEST(MetricAt, MinkowskiIsConstant) {
  auto m = make_model("minkowski-block", {{"n", 3}});
  const Mat g = metric_at(*m, vec({0.2, 0.7, 0.1}));
  EXPECT_TRUE(g.isApprox(Vec(vec({-1, 1, 1})).asDiagonal().toDenseMatrix()));
}

TEST(MetricAt, CylinderRoundChart) {
  auto m = make_model("cylinder", {{"T", 3}});
  const double th = 0.9;
  const Mat g = metric_at(*m, vec({1.0, th, 2.0}));
  EXPECT_DOUBLE_EQ(g(0, 0), -1.0);
  EXPECT_DOUBLE_EQ(g(1, 1), 1.0);
  EXPECT_NEAR(g(2, 2), std::sin(th) * std::sin(th), 1e-15);
  EXPECT_EQ((g - g.transpose()).norm(), 0.0);
}

TEST(MetricAt, ConformalFactor) {
  auto m = make_model("conformal-flat", {{"n", 3}, {"c", 0.1}});
  const Mat g = metric_at(*m, vec({0, 1, 0}));
  EXPECT_NEAR(g(0, 0), -1.21, 1e-14);
  EXPECT_NEAR(g(1, 1), 1.21, 1e-14);
  EXPECT_NEAR(g(2, 2), 1.21, 1e-14);
}

TEST(MetricAt, OutsideChartBoxIsDomainError) {
  auto m = make_model("minkowski-block", {{"n", 3}});
  try {
    metric_at(*m, vec({5, 0.5, 0.5}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::domain);
  }
}

TEST(CausalClassify, Examples) {
  auto m = make_model("minkowski-block", {{"n", 3}});
  const Vec x = vec({0.5, 0.5, 0.5});
  auto a = causal_classify(*m, {x, vec({1, 0, 0})});
  EXPECT_EQ(a.causal, Causal::timelike);
  EXPECT_EQ(a.direction, TimeDir::future);
  auto b = causal_classify(*m, {x, vec({1, 1, 0})});
  EXPECT_EQ(b.causal, Causal::lightlike);
  EXPECT_EQ(b.direction, TimeDir::future);
  auto c = causal_classify(*m, {x, vec({-2, 1, 0})});
  EXPECT_EQ(c.causal, Causal::timelike);
  EXPECT_EQ(c.direction, TimeDir::past);
}

TEST(CausalClassify, ZeroVector) {
  auto m = make_model("minkowski-block", {{"n", 3}});
  EXPECT_THROW(causal_classify(*m, {vec({0.5, 0.5, 0.5}), Vec::Zero(3)}), Error);
}

TEST(CausalClassify, ScalingProperty) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> N;
  for (const auto& m : builtin_models()) {
    for (const Vec& x : interior_samples(*m, 50, 11)) {
      Vec v(m->dim());
      for (auto& c : v) c = N(rng);
      const auto base = causal_classify(*m, {x, v});
      for (double lam : {0.3, 7.0}) {
        const auto s = causal_classify(*m, {x, lam * v});
        EXPECT_EQ(s.causal, base.causal);
        EXPECT_EQ(s.direction, base.direction);
        const auto r = causal_classify(*m, {x, -lam * v});
        EXPECT_EQ(r.causal, base.causal);
        EXPECT_NE(r.direction, base.direction);
      }
    }
  }
}

TEST(NormalizeTimelike, Examples) {
  auto m = make_model("minkowski-block", {{"n", 3}});
  const Vec x = vec({0.5, 0.5, 0.5});
  EXPECT_TRUE(normalize_timelike(*m, {x, vec({2, 0, 0})}).v.isApprox(vec({1, 0, 0}), 1e-15));
  EXPECT_TRUE(normalize_timelike(*m, {x, vec({2, 1, 0})}).v.isApprox(vec({2, 1, 0}) / std::sqrt(3.0), 1e-15));
  auto c = make_model("cylinder", {{"T", 3}});
  EXPECT_TRUE(normalize_timelike(*c, {vec({0, std::numbers::pi / 2, 0}), vec({3, 0, 0})}).v.isApprox(vec({1, 0, 0})));
  EXPECT_THROW(normalize_timelike(*m, {x, vec({1, 1, 0})}), Error);
}

TEST(NormalizeTimelike, IdempotentAndUnit) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> N;
  for (const auto& m : builtin_models()) {
    for (const Vec& x : interior_samples(*m, 50, 2)) {
      const Mat g = m->metric(x);
      Vec t = m->time_orientation(x);
      t /= std::sqrt(-t.dot(g * t));
      Vec v = 3.0 * t;
      for (const Vec& e : orthonormal_frame(*m, x)) v += 0.5 * N(rng) * e;
      if (causal_classify(*m, {x, v}).causal != Causal::timelike) continue;
      const PointVector u = normalize_timelike(*m, {x, v});
      EXPECT_NEAR(u.v.dot(g * u.v), -1.0, 1e-12);
      EXPECT_LE((normalize_timelike(*m, u).v - u.v).norm(), 1e-12);
      EXPECT_EQ(causal_classify(*m, u).direction, causal_classify(*m, {x, v}).direction);
    }
  }
}

TEST(ScreenFrame, Examples) {
  auto m3 = make_model("minkowski-block", {{"n", 3}});
  auto m4 = make_model("minkowski-block", {{"n", 4}});
  auto f1 = screen_frame(*m3, {vec({0.5, 0.5, 0.5}), vec({1, 1, 0})});
  ASSERT_EQ(f1.size(), 1u);
  EXPECT_NEAR(std::abs(f1[0][2]), 1.0, 1e-14);
  EXPECT_NEAR(f1[0].head(2).norm(), 0.0, 1e-14);
  auto f2 = screen_frame(*m4, {vec({0.5, 0.5, 0.5, 0.5}), vec({1, 1, 0, 0})});
  ASSERT_EQ(f2.size(), 2u);
  Mat F(4, 2);
  F << f2[0], f2[1];
  EXPECT_NEAR(F.topRows(2).norm(), 0.0, 1e-14);
  EXPECT_NEAR(std::abs(F.bottomRows(2).determinant()), 1.0, 1e-14);
  auto f3 = screen_frame(*m3, {vec({0.5, 0.5, 0.5}), vec({1, 0, 1})});
  EXPECT_NEAR(std::abs(f3[0][1]), 1.0, 1e-14);
  EXPECT_THROW(screen_frame(*m3, {vec({0.5, 0.5, 0.5}), vec({1, 0, 0})}), Error);
}

TEST(ScreenFrame, OrthonormalAndNullOrthogonal) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> N;
  for (const auto& m : builtin_models()) {
    for (const Vec& x : interior_samples(*m, 100, 4)) {
      const auto E = orthonormal_frame(*m, x);
      Vec w = Vec::Zero(m->dim());
      for (size_t i = 1; i < E.size(); ++i) w += N(rng) * E[i];
      const Mat g = m->metric(x);
      w /= std::sqrt(w.dot(g * w));
      const Vec v = 1.7 * (E[0] + w);
      const auto S = screen_frame(*m, {x, v});
      ASSERT_EQ(static_cast<int>(S.size()), m->dim() - 2);
      for (size_t i = 0; i < S.size(); ++i) {
        EXPECT_NEAR(S[i].dot(g * v), 0.0, 1e-10);
        for (size_t j = 0; j < S.size(); ++j) EXPECT_NEAR(S[i].dot(g * S[j]), i == j ? 1.0 : 0.0, 1e-10);
      }
    }
  }
}

TEST(BoundaryEval, BlockExamples) {
  auto m = make_model("minkowski-block", {{"n", 3}});
  EXPECT_GT(boundary_eval(*m, vec({0.5, 0.5, 0.5})).F, 0.0);
  const auto face = boundary_eval(*m, vec({0.5, 1.0, 0.5}));
  EXPECT_NEAR(face.F, 0.0, 1e-12);
  EXPECT_GT(face.grad.norm(), 0.5);
  EXPECT_LT(boundary_eval(*m, vec({0.5, 1.2, 0.5})).F, 0.0);
}

TEST(BoundaryEval, CylinderDistanceToCaps) {
  const double T = 3.0;
  auto m = make_model("cylinder", {{"T", T}});
  EXPECT_DOUBLE_EQ(boundary_eval(*m, vec({T / 2, 1.0, 0.3})).F, T / 2);
  EXPECT_DOUBLE_EQ(boundary_eval(*m, vec({0.4, 1.0, 0.3})).F, 0.4);
  EXPECT_DOUBLE_EQ(boundary_eval(*m, vec({T, 1.0, 0.3})).F, 0.0);
}

TEST(BoundaryEval, GradientMatchesFiniteDifferences) {
  for (const auto& m : builtin_models()) {
    for (const Vec& x : interior_samples(*m, 200, 8)) {
      const Vec grad = m->boundary_gradient(x);
      for (int l = 0; l < m->dim(); ++l) {
        const double h = 1e-6;
        Vec xp = x, xm = x;
        xp[l] += h;
        xm[l] -= h;
        const double fd = (m->boundary_function(xp) - m->boundary_function(xm)) / (2 * h);
        EXPECT_NEAR(grad[l], fd, 1e-5 * (1.0 + std::abs(fd)));
      }
    }
  }
}

TEST(MetricInvariants, SignatureAndTimeOrientation) {
  for (const auto& m : builtin_models()) {
    for (const Vec& x : interior_samples(*m, 1000, 21)) {
      const Mat g = m->metric(x);
      Eigen::SelfAdjointEigenSolver<Mat> es(g);
      int neg = 0;
      for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) neg += es.eigenvalues()[i] < 0;
      EXPECT_EQ(neg, 1) << m->name();
      const Vec t = m->time_orientation(x);
      EXPECT_LT(t.dot(g * t), 0.0);
    }
  }
}

TEST(MetricInvariants, ChristoffelMatchesFiniteDifferences) {
  for (const auto& m : builtin_models()) {
    const int n = m->dim();
    for (const Vec& x : interior_samples(*m, 1000, 22)) {
      Christoffel G(n);
      m->christoffel(x, G);
      const Christoffel Gfd = fd_christoffel(*m, x);
      double scale = 1e-300, err = 0.0;
      for (int k = 0; k < n; ++k)
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j) {
            scale = std::max(scale, std::abs(G(k, i, j)));
            err = std::max(err, std::abs(G(k, i, j) - Gfd(k, i, j)));
          }
      EXPECT_LE(err, 1e-6 * std::max(scale, 1.0)) << m->name();
    }
  }
}

TEST(MetricInvariants, RiemannMatchesFiniteDifferences) {
  for (const auto& m : builtin_models()) {
    const int n = m->dim();
    for (const Vec& x : interior_samples(*m, 1000, 23)) {
      Christoffel G(n);
      m->christoffel(x, G);
      const Riemann R = m->riemann(x);
      const Riemann Rfd = riemann_from(G, fd_christoffel_derivative(*m, x));
      double scale = 0.0, err = 0.0;
      for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b)
          for (int c = 0; c < n; ++c)
            for (int d = 0; d < n; ++d) {
              scale = std::max(scale, std::abs(R(a, b, c, d)));
              err = std::max(err, std::abs(R(a, b, c, d) - Rfd(a, b, c, d)));
            }
      EXPECT_LE(err, 1e-5 * std::max(scale, 1.0)) << m->name();
    }
  }
}

TEST(MetricInvariants, CylinderSectionalCurvatureIsOne) {
  auto m = make_model("cylinder", {{"T", 3}});
  const Vec x = vec({1.0, 0.8, 0.4});
  const Riemann R = m->riemann(x);
  // R^theta_{phi theta phi} = sin^2 theta on the unit sphere
  EXPECT_NEAR(R(1, 2, 1, 2), std::sin(0.8) * std::sin(0.8), 1e-12);
}

TEST(Cylinder, CompanionChartRoundTrip) {
  auto m = make_model("cylinder", {{"T", 3}});
  for (const Vec& x : interior_samples(*m, 100, 5)) {
    const Vec y = m->chart_map(0, 1, x);
    EXPECT_LE((m->canonical(m->chart_map(1, 0, y)) - m->canonical(x)).norm(), 1e-10);
    const Mat J = m->chart_jacobian(0, 1, x);
    const Mat Jb = m->chart_jacobian(1, 0, y);
    EXPECT_LE((Jb * J - Mat::Identity(3, 3)).norm(), 1e-9);
    // metric form is the same in both charts
    EXPECT_LE((J.transpose() * m->metric(y) * J - m->metric(x)).norm(), 1e-10);
  }
}

TEST(MakeModel, Rejections) {
  EXPECT_THROW(make_model("nope"), Error);
  EXPECT_THROW(make_model("cylinder", {{"n", 4}}), Error);
  EXPECT_THROW(make_model("minkowski-block", {{"n", 2}}), Error);
  EXPECT_THROW(make_model("conformal-flat", {{"c", -2.0}}), Error);
}
