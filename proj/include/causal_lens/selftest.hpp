#pragma once

// Named invariant checks across all modules. Used by `causal_lens selftest`
// and by the acceptance binary.

#include "causal_lens/sky_shadow_recon.hpp"
#include "causal_lens/time_probe_recon.hpp"

#include <chrono>
#include <functional>
#include <sstream>

namespace causal_lens {

struct CheckResult {
  std::string name;
  bool ok = false;
  double worst = 0.0;  // largest observed error (or violated margin)
  double tol = 0.0;
  std::string detail;
  double seconds = 0.0;
};

struct SelftestOptions {
  std::uint64_t seed = 1;
  int metric_points = 1000;  // per model, for the pointwise metric checks
  int geodesics = 20;        // per model, for engine and optics checks
};

namespace detail {

/// Running maximum of an error against a tolerance.
struct Worst {
  double ratio = -1.0;  // err / tol of the worst sample so far
  double err = 0.0;
  double tol = 0.0;
  std::string where;
  void add(double e, double t, const std::string& w = {}) {
    const double r = std::isfinite(e) ? e / t : std::numeric_limits<double>::infinity();
    if (r > ratio) {
      ratio = r;
      err = e;
      tol = t;
      where = w;
    }
  }
  bool ok() const { return ratio <= 1.0; }
};

inline std::vector<ModelPtr> selftest_models() {
  return {make_model("minkowski-block", {{"n", 3}}), make_model("minkowski-block", {{"n", 4}}),
          make_model("cylinder", {{"T", 3}}), make_model("conformal-flat", {{"n", 3}}),
          make_model("conformal-flat", {{"n", 4}})};
}

inline std::vector<Vec> chart_samples(const MetricModel& m, int count, std::uint64_t seed, double margin = 0.0) {
  std::mt19937_64 rng(seed);
  std::vector<Vec> out;
  while (static_cast<int>(out.size()) < count) {
    Vec x = m.sample_candidate(rng);
    if (m.boundary_function(x) >= margin) out.push_back(x);
  }
  return out;
}

inline Vec random_lightlike(const MetricModel& m, const Vec& x, std::mt19937_64& rng) {
  std::normal_distribution<double> N;
  const auto E = orthonormal_frame(m, x);
  const Mat g = m.metric(x);
  Vec w = Vec::Zero(m.dim());
  for (size_t i = 1; i < E.size(); ++i) w += N(rng) * E[i];
  w /= std::sqrt(w.dot(g * w));
  return E[0] + w;
}

// polar charts need smaller steps near the poles
inline double fd_step(const MetricModel& m, const Vec& x) {
  return m.name() == "cylinder" ? 1e-4 * std::min(1.0, std::abs(std::sin(x[1]))) : 1e-4;
}

template <class F>
auto central_difference(F&& f, const Vec& x, int l, double h) {
  using R = std::decay_t<decltype(f(x))>;
  auto at = [&](double t) {
    Vec y = x;
    y[l] += t;
    return R(f(y));
  };
  return R((8.0 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12.0 * h));
}

inline Christoffel fd_christoffel(const MetricModel& m, const Vec& x) {
  const int n = m.dim();
  const double h = fd_step(m, x);
  std::vector<Mat> dg(static_cast<size_t>(n));
  for (int l = 0; l < n; ++l)
    dg[static_cast<size_t>(l)] = central_difference([&](const Vec& y) { return Mat(m.metric(y)); }, x, l, h);
  const Mat ginv = m.metric(x).inverse();
  Christoffel G(n);
  for (int k = 0; k < n; ++k)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        double s = 0.0;
        for (int l = 0; l < n; ++l)
          s += 0.5 * ginv(k, l) *
               (dg[static_cast<size_t>(i)](l, j) + dg[static_cast<size_t>(j)](l, i) - dg[static_cast<size_t>(l)](i, j));
        G(k, i, j) = s;
      }
  return G;
}

inline ChristoffelDerivative fd_christoffel_derivative(const MetricModel& m, const Vec& x) {
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
    const Vec dl = central_difference(gamma_at, x, l, h);
    for (int k = 0; k < n; ++k)
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) d(k, i, j, l) = dl[(k * n + i) * n + j];
  }
  return d;
}

inline std::string fmt_num(double x) {
  std::ostringstream os;
  os.precision(3);
  os << x;
  return os.str();
}

using CheckFn = std::function<Worst(const SelftestOptions&)>;

// --- metric_models ---------------------------------------------------------

inline Worst check_signature(const SelftestOptions& o) {
  Worst w;
  for (const auto& m : selftest_models())
    for (const Vec& x : chart_samples(*m, o.metric_points, o.seed)) {
      const Mat g = m->metric(x);
      Eigen::SelfAdjointEigenSolver<Mat> es(g);
      int neg = 0;
      for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) neg += es.eigenvalues()[i] < 0;
      w.add(neg == 1 ? 0.0 : 1.0, 0.5, m->name() + " signature");
      const Vec t = m->time_orientation(x);
      w.add(t.dot(g * t) < 0 ? 0.0 : 1.0, 0.5, m->name() + " time orientation");
    }
  return w;
}

inline Worst check_christoffel_fd(const SelftestOptions& o) {
  Worst w;
  for (const auto& m : selftest_models()) {
    const int n = m->dim();
    for (const Vec& x : chart_samples(*m, o.metric_points, o.seed + 1)) {
      Christoffel G(n);
      m->christoffel(x, G);
      const Christoffel Gfd = fd_christoffel(*m, x);
      double scale = 1.0, err = 0.0;
      for (int k = 0; k < n; ++k)
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j) {
            scale = std::max(scale, std::abs(G(k, i, j)));
            err = std::max(err, std::abs(G(k, i, j) - Gfd(k, i, j)));
          }
      w.add(err / scale, 1e-6, m->name());
    }
  }
  return w;
}

inline Worst check_riemann_fd(const SelftestOptions& o) {
  Worst w;
  for (const auto& m : selftest_models()) {
    const int n = m->dim();
    for (const Vec& x : chart_samples(*m, o.metric_points, o.seed + 2)) {
      Christoffel G(n);
      m->christoffel(x, G);
      const Riemann R = m->riemann(x);
      const Riemann Rfd = riemann_from(G, fd_christoffel_derivative(*m, x));
      double scale = 1.0, err = 0.0;
      for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b)
          for (int c = 0; c < n; ++c)
            for (int d = 0; d < n; ++d) {
              scale = std::max(scale, std::abs(R(a, b, c, d)));
              err = std::max(err, std::abs(R(a, b, c, d) - Rfd(a, b, c, d)));
            }
      w.add(err / scale, 1e-5, m->name());
    }
  }
  return w;
}

inline Worst check_pointwise_helpers(const SelftestOptions& o) {
  Worst w;
  std::mt19937_64 rng(o.seed + 3);
  std::normal_distribution<double> N;
  for (const auto& m : selftest_models())
    for (const Vec& x : chart_samples(*m, std::max(1, o.metric_points / 10), o.seed + 3, 1e-3)) {
      const Mat g = m->metric(x);
      // normalize_timelike is idempotent
      const Vec xi = orthonormal_frame(*m, x)[0] * 2.0 + 0.3 * orthonormal_frame(*m, x)[1];
      const Vec u = normalize_timelike(*m, {x, xi}).v;
      w.add((normalize_timelike(*m, {x, u}).v - u).norm(), 1e-12, m->name() + " normalize");
      // classification under scaling
      Vec v(m->dim());
      for (int i = 0; i < m->dim(); ++i) v[i] = N(rng);
      const CausalTag t0 = causal_classify(*m, {x, v});
      const CausalTag tp = causal_classify(*m, {x, 3.0 * v});
      const CausalTag tn = causal_classify(*m, {x, -0.5 * v});
      w.add(tp.causal == t0.causal && tp.direction == t0.direction ? 0.0 : 1.0, 0.5, m->name() + " scale>0");
      const bool flipped = t0.causal == Causal::spacelike || tn.direction != t0.direction;
      w.add(tn.causal == t0.causal && flipped ? 0.0 : 1.0, 0.5, m->name() + " scale<0");
      // screen frame
      const Vec k = random_lightlike(*m, x, rng);
      const auto S = screen_frame(*m, {x, k});
      for (size_t i = 0; i < S.size(); ++i) {
        w.add(std::abs(S[i].dot(g * k)), 1e-10, m->name() + " screen g(e,v)");
        for (size_t j = 0; j < S.size(); ++j)
          w.add(std::abs(S[i].dot(g * S[j]) - (i == j ? 1.0 : 0.0)), 1e-10, m->name() + " screen g(e,e)");
      }
    }
  return w;
}

// --- geodesic_engine -------------------------------------------------------

inline Worst check_causal_conservation(const SelftestOptions& o) {
  Worst w;
  std::mt19937_64 rng(o.seed + 10);
  for (const char* name : {"minkowski-block", "cylinder", "conformal-flat"}) {
    auto m = make_model(name);
    for (const Vec& x : chart_samples(*m, o.geodesics, o.seed + 10, 0.1)) {
      const Vec e0 = orthonormal_frame(*m, x)[0];
      for (const Vec& v : {random_lightlike(*m, x, rng), Vec(e0 + 0.3 * orthonormal_frame(*m, x)[1])}) {
        const double q0 = v.dot(m->metric(x) * v);
        const auto hit = time_to_boundary(*m, {x, v}, FlowDir::forward);
        const auto st = flow(*m, {x, v, 0.0, {}}, hit.T * 0.999);
        const double q1 = st.v.dot(m->metric(st.x) * st.v);
        w.add(std::abs(q1 - q0) / (1.0 + hit.T), 1e-8, name);
      }
    }
  }
  return w;
}

inline Worst check_flow_composition(const SelftestOptions& o) {
  Worst w;
  std::mt19937_64 rng(o.seed + 11);
  for (const char* name : {"minkowski-block", "cylinder", "conformal-flat"}) {
    auto m = make_model(name);
    for (const Vec& x : chart_samples(*m, o.geodesics, o.seed + 11, 0.2)) {
      const Vec v = 0.3 * random_lightlike(*m, x, rng);
      const auto ab = flow(*m, flow(*m, {x, v, 0.0, {}}, 0.2), 0.25);
      const auto direct = flow(*m, {x, v, 0.0, {}}, 0.45);
      w.add((m->embed_point(ab.x) - m->embed_point(direct.x)).norm(), 1e-8, std::string(name) + " composition");
      const auto scaled = flow(*m, {x, 2.0 * v, 0.0, {}}, 0.225);
      w.add((m->embed_point(scaled.x) - m->embed_point(direct.x)).norm(), 1e-8, std::string(name) + " homogeneity");
    }
  }
  return w;
}

inline Worst check_boundary_time_scaling(const SelftestOptions& o) {
  Worst w;
  std::mt19937_64 rng(o.seed + 12);
  for (const char* name : {"minkowski-block", "cylinder", "conformal-flat"}) {
    auto m = make_model(name);
    for (const Vec& x : chart_samples(*m, o.geodesics, o.seed + 12, 0.05)) {
      const Vec v = random_lightlike(*m, x, rng);
      const double T1 = time_to_boundary(*m, {x, v}, FlowDir::forward).T;
      for (double lam : {0.4, 2.5}) {
        const double T2 = time_to_boundary(*m, {x, lam * v}, FlowDir::forward).T;
        w.add(std::abs(T2 * lam - T1) / T1, 1e-8, name);
      }
    }
  }
  return w;
}

inline Worst check_wronskian(const SelftestOptions& o) {
  Worst w;
  std::mt19937_64 rng(o.seed + 13);
  std::normal_distribution<double> N;
  for (const auto& m : selftest_models()) {
    const int k = m->dim() - 2;
    for (const Vec& x : chart_samples(*m, std::max(2, o.geodesics / 2), o.seed + 13, 0.2)) {
      const Vec v = 0.5 * random_lightlike(*m, x, rng);
      GeodesicState st{x, v, 0.0, screen_frame(*m, {x, v})};
      Mat A(k, k), B(k, k);
      for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) {
          A(i, j) = N(rng);
          B(i, j) = N(rng);
        }
      const Mat W0 = A.transpose() * B - B.transpose() * A;
      const double T = time_to_boundary(*m, {x, v}, FlowDir::forward).T;
      auto [out, J] = jacobi_flow(*m, st, {A, B}, 0.9 * T);
      const Mat W1 = J.A.transpose() * J.Ad - J.Ad.transpose() * J.A;
      w.add((W1 - W0).norm() / std::max(1.0, W0.norm()), 1e-8, m->name());
    }
  }
  return w;
}

// --- boundary_data ---------------------------------------------------------

inline Worst check_time_probe_replay(const SelftestOptions& o) {
  Worst w;
  for (const char* name : {"minkowski-block", "cylinder", "conformal-flat"}) {
    auto m = make_model(name);
    const auto pts = sample_interior(*m, 3, o.seed + 20);
    const auto recs = gen_time_probe(*m, pts, FanSizes{4, 4}, o.seed + 20);
    for (const auto& r : recs) {
      const Vec u = normalize_timelike(*m, r.xi.pv).v;
      const Vec a = flow(*m, {r.xi.pv.x, u, 0.0, {}}, r.t).x;
      const Approach ap = closest_approach(*m, r.eta.pv, a, FlowDir::backward);
      w.add(ap.reached ? ap.distance : 1.0, 1e-6, name);
    }
  }
  return w;
}

inline Worst check_lightlike_conformal_invariance(const SelftestOptions& o) {
  Worst w;
  auto flat = make_model("minkowski-block");
  auto conf = make_model("conformal-flat", {{"c", 0.1}});
  const auto pts = sample_interior(*flat, 4, o.seed + 21);
  const auto a = gen_sky_shadows(*flat, pts, 8, o.seed + 21);
  const auto b = gen_sky_shadows(*conf, pts, 8, o.seed + 21);
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i].vectors.size() != b[i].vectors.size()) {
      w.add(1.0, 1e-5, "shadow sizes differ");
      continue;
    }
    for (size_t j = 0; j < a[i].vectors.size(); ++j) {
      const Vec ka = vector_key(*flat, a[i].vectors[j].eta.pv), kb = vector_key(*conf, b[i].vectors[j].eta.pv);
      w.add(max_abs_diff(ka, kb), 1e-5, "shadow vector");
    }
  }
  const auto sa = gen_scattering(*flat, pts, FanSizes{0, 5}, o.seed + 22);
  const auto sb = gen_scattering(*conf, pts, FanSizes{0, 5}, o.seed + 22);
  if (sa.size() != sb.size()) w.add(1.0, 1e-5, "scattering sizes differ");
  for (size_t i = 0; i < std::min(sa.size(), sb.size()); ++i) {
    w.add(max_abs_diff(vector_key(*flat, sa[i].xi.pv), vector_key(*conf, sb[i].xi.pv)), 1e-5, "scatter xi");
    w.add(max_abs_diff(vector_key(*flat, sa[i].eta.pv), vector_key(*conf, sb[i].eta.pv)), 1e-5, "scatter eta");
  }
  return w;
}

// --- time_probe_recon ------------------------------------------------------

inline Worst check_asymp_properties(const SelftestOptions& o) {
  Worst w;
  for (const char* name : {"minkowski-block", "cylinder", "conformal-flat"}) {
    auto m = make_model(name);
    const auto recs = gen_time_probe(*m, sample_interior(*m, 4, o.seed + 30), FanSizes{8, 6}, o.seed + 30);
    const TimeProbeIndex idx(*m, recs);
    const auto grid = default_tau_grid();
    const int N = static_cast<int>(idx.omegas().size());
    std::vector<std::vector<char>> eq(static_cast<size_t>(N), std::vector<char>(static_cast<size_t>(N)));
    for (int a = 0; a < N; ++a)
      for (int b = 0; b < N; ++b) eq[static_cast<size_t>(a)][static_cast<size_t>(b)] = asymp_equiv(idx, a, b, grid);
    for (int a = 0; a < N; ++a) {
      w.add(eq[static_cast<size_t>(a)][static_cast<size_t>(a)] ? 0.0 : 1.0, 0.5, std::string(name) + " reflexive");
      for (int b = 0; b < N; ++b) {
        w.add(eq[static_cast<size_t>(a)][static_cast<size_t>(b)] == eq[static_cast<size_t>(b)][static_cast<size_t>(a)]
                  ? 0.0
                  : 1.0,
              0.5, std::string(name) + " symmetric");
      }
    }
    const auto g = group_points(*m, recs);
    for (const auto& p : g.points)
      for (int a : p.members)
        for (int b : p.members)
          for (int c : p.members)
            if (eq[static_cast<size_t>(a)][static_cast<size_t>(b)] && eq[static_cast<size_t>(b)][static_cast<size_t>(c)])
              w.add(eq[static_cast<size_t>(a)][static_cast<size_t>(c)] ? 0.0 : 1.0, 0.5,
                    std::string(name) + " transitive");
  }
  return w;
}

/// Number of reconstructed groups that are not exactly one provenance fiber.
inline int fiber_mismatches(const GroupReport& g) {
  std::map<PointId, int> owner;
  int bad = 0;
  for (size_t gi = 0; gi < g.points.size(); ++gi) {
    std::set<PointId> ids;
    for (int i : g.points[gi].members) ids.insert(g.omegas[static_cast<size_t>(i)].point_id.value_or(-1));
    if (ids.size() != 1) {
      ++bad;
      continue;
    }
    if (owner.count(*ids.begin())) ++bad;
    owner[*ids.begin()] = static_cast<int>(gi);
  }
  return bad;
}

inline Worst check_grouping(const SelftestOptions& o) {
  Worst w;
  for (const char* name : {"minkowski-block", "cylinder", "conformal-flat"}) {
    auto m = make_model(name);
    const auto pts = sample_interior(*m, 5, o.seed + 31);
    auto recs = gen_time_probe(*m, pts, FanSizes{16, 12}, o.seed + 31);
    const auto g = group_points(*m, recs);
    w.add(fiber_mismatches(g) + std::abs(static_cast<int>(g.points.size()) - 5) + g.conflicts.size(), 0.5,
          std::string(name) + " fibers");
    // scaling invariance
    for (auto& r : recs) r.xi.pv.v *= 2.5;
    const auto g2 = group_points(*m, recs);
    bool same = g2.points.size() == g.points.size();
    for (size_t i = 0; same && i < g.points.size(); ++i) same = g.points[i].members == g2.points[i].members;
    w.add(same ? 0.0 : 1.0, 0.5, std::string(name) + " scaling");
  }
  return w;
}

inline Worst check_fit_equivariance(const SelftestOptions& o) {
  Worst w;
  std::mt19937_64 rng(o.seed + 32);
  std::normal_distribution<double> N;
  auto m = make_model("minkowski-block", {{"n", 4}});
  const Vec x = Vec::Constant(4, 0.5);
  const auto fans = make_fans(*m, x, FanSizes{16, 0}, &rng);
  std::vector<Vec> fan;
  for (const Vec& u : fans.timelike) fan.push_back(u);
  const MetricFit f = fit_metric(fan);
  Mat A(4, 4);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) A(i, j) = (i == j ? 2.0 : 0.0) + 0.3 * N(rng);
  std::vector<Vec> moved;
  for (const Vec& u : fan) moved.push_back(A * u);
  const MetricFit fa = fit_metric(moved);
  const Mat Ai = A.inverse();
  const Mat expect = Ai.transpose() * f.Q * Ai;
  w.add((fa.Q - expect).norm() / expect.norm(), 1e-8, "Q -> A^-T Q A^-1");
  return w;
}

inline Worst check_lens_pipeline(const SelftestOptions& o) {
  Worst w;
  auto m = make_model("minkowski-block");
  const auto pts = sample_interior(*m, 3, o.seed + 33);
  GenOptions go;
  const auto direct = gen_time_probe(*m, pts, FanSizes{6, 6}, o.seed + 33, go);
  const auto lens = gen_lens(*m, pts, FanSizes{6, 6}, o.seed + 33, go);
  std::vector<LensTriple> blind = lens;
  for (auto& r : blind) {
    r.point_id.reset();
    r.approach.reset();
  }
  const auto ex = lens_to_time_probe(*m, blind);
  // every extracted triple must agree with a direct triple sharing xi
  size_t good = 0;
  for (const auto& t : ex.triples) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& d : direct) {
      if (max_abs_diff(vector_key(*m, d.xi.pv), vector_key(*m, t.xi.pv)) > 1e-5) continue;
      if (std::abs(d.t - t.t) > 1e-3) continue;
      best = std::min(best, max_abs_diff(vector_key(*m, d.eta.pv), vector_key(*m, t.eta.pv)));
    }
    good += best <= 1e-3;
  }
  const double frac = direct.empty() ? 0.0 : static_cast<double>(good) / static_cast<double>(direct.size());
  w.add(std::max(0.0, 0.95 - frac), 1e-12, "reproduced fraction " + fmt_num(frac));
  return w;
}

// --- sky_shadow_recon ------------------------------------------------------

inline Worst check_weingarten_self_adjoint(const SelftestOptions& o) {
  Worst w;
  std::mt19937_64 rng(o.seed + 40);
  for (const auto& m : selftest_models()) {
    for (const Vec& x : chart_samples(*m, o.geodesics, o.seed + 40, 0.1)) {
      const auto ws = cone_weingarten(*m, {x, random_lightlike(*m, x, rng)});
      w.add((ws.b - ws.b.transpose()).norm() / std::max(1.0, ws.b.norm()), 1e-6, m->name());
    }
  }
  return w;
}

inline Worst check_riccati_consistency(const SelftestOptions& o) {
  Worst w;
  std::mt19937_64 rng(o.seed + 41);
  for (const char* name : {"cylinder", "conformal-flat"}) {
    auto m = make_model(name, {{"n", 3}, {"T", 3}});
    for (const Vec& x : chart_samples(*m, std::max(2, o.geodesics / 2), o.seed + 41, 0.3)) {
      const auto ws = cone_weingarten(*m, {x, random_lightlike(*m, x, rng)});
      for (double frac : {0.3, 0.7, 0.95}) {
        const double s = frac * ws.affine_distance;
        const Mat bd = riccati_evolve(*m, ws.eta.pv, ws.b, s, false);
        if (std::abs(bd.trace()) > 1e3) continue;
        const Mat bc = riccati_evolve(*m, ws.eta.pv, ws.b, s, true);
        w.add((bd - bc).norm() / std::max(1.0, bd.norm()), 1e-7, name);
      }
    }
  }
  return w;
}

inline Worst check_flat_trace_law(const SelftestOptions&) {
  Worst w;
  for (int n : {3, 4, 5}) {
    auto m = make_model("minkowski-block", {{"n", n}, {"L", 4}});
    Vec x = Vec::Constant(n, 2.0);
    x[0] = 0.0;
    Vec v = Vec::Zero(n);
    v[0] = 1;
    v[1] = 1;
    const int k = n - 2;
    for (double T0 : {0.5, 1.5, 3.0}) {
      const Mat b0 = -1.0 / T0 * Mat::Identity(k, k);
      for (double frac : {0.1, 0.6, 0.95}) {
        const double t = frac * T0;
        const double th = riccati_evolve(*m, {x, v}, b0, t, true).trace();
        const double expect = k / (t - T0);
        w.add(std::abs(th - expect) / std::abs(expect), 1e-6, "n=" + std::to_string(n));
      }
    }
  }
  return w;
}

inline Worst check_monotone_band(const SelftestOptions& o) {
  // inside the band a' < -1/k + eps; eps absorbs the curvature bound on these charts
  Worst w;
  std::mt19937_64 rng(o.seed + 42);
  const double eps = 0.05;
  for (const auto& m : selftest_models()) {
    const int k = m->dim() - 2;
    for (const Vec& x : chart_samples(*m, o.geodesics, o.seed + 42, 0.1)) {
      const auto ws = cone_weingarten(*m, {x, random_lightlike(*m, x, rng)});
      const BlowupResult r = riccati_blowup_time(*m, ws.eta.pv, ws.b);
      w.add(std::max(0.0, r.max_adot - (-1.0 / k + eps)), 1e-12, m->name() + " a'=" + fmt_num(r.max_adot));
      w.add(std::abs(r.T - ws.affine_distance) / ws.affine_distance, 1e-5, m->name() + " apex time");
    }
  }
  return w;
}

inline Worst check_immersivity(const SelftestOptions&) {
  Worst w;
  for (int n : {3, 4}) {
    auto m = make_model("minkowski-block", {{"n", n}, {"L", 4}});
    Vec x = Vec::Constant(n, 2.0);
    x[0] = 0.0;
    x[1] = 1.0;
    Vec v = Vec::Zero(n);
    v[0] = 1;
    v[1] = 1;
    auto theta = [&](double s) { return cone_weingarten(*m, {x + s * v, v}).b.trace(); };
    for (double s : {0.5, 1.0, 2.0}) {
      const double ds = 1e-4;
      const double d = (theta(s + ds) - theta(s - ds)) / (2 * ds);
      // |d theta / ds| >= 1/(2 s^2); report the shortfall
      w.add(std::max(0.0, 0.5 / (s * s) - std::abs(d)), 1e-12, "n=" + std::to_string(n));
    }
  }
  return w;
}

inline Worst check_refocusing_counterexample(const SelftestOptions& o) {
  Worst w;
  auto cyl = make_model("cylinder", {{"T", 7}});
  std::mt19937_64 rng(o.seed + 43);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  for (int i = 0; i < 5; ++i) {
    Vec p(3);
    p << 0.2 + 0.4 * U(rng), 0.3 + 2.5 * U(rng), 6.0 * U(rng);
    Vec q = p;
    q[0] += 2.0 * std::numbers::pi;
    const auto a = gen_sky_shadow(*cyl, p, 8), b = gen_sky_shadow(*cyl, q, 8);
    if (a.vectors.size() != b.vectors.size() || a.vectors.empty()) {
      w.add(1.0, 1e-6, "shadow sizes differ");
      continue;
    }
    for (size_t j = 0; j < a.vectors.size(); ++j)
      w.add(max_abs_diff(vector_key(*cyl, a.vectors[j].eta.pv), vector_key(*cyl, b.vectors[j].eta.pv)), 1e-6,
            "shadow vector");
  }
  bool refused = false;
  try {
    check_lightlike_hypotheses(*cyl);
  } catch (const Error& e) {
    refused = e.kind() == ErrorKind::hypothesis;
  }
  w.add(refused ? 0.0 : 1.0, 0.5, "hypothesis refusal");
  return w;
}

inline Worst check_clique_recovery(const SelftestOptions& o) {
  Worst w;
  auto m = make_model("minkowski-block");
  const auto pts = sample_interior(*m, 6, o.seed + 44);
  const auto res = scattering_to_sky_shadows(*m, gen_scattering(*m, pts, FanSizes{0, 8}, o.seed + 44));
  w.add(std::abs(static_cast<double>(res.shadows.size()) - 6.0), 0.5, "clique count");
  for (const auto& s : res.shadows) w.add(s.point_id ? 0.0 : 1.0, 0.5, "clique mixes points");
  return w;
}

}  // namespace detail

struct NamedCheck {
  std::string name;
  detail::CheckFn fn;
};

inline const std::vector<NamedCheck>& selftest_checks() {
  using namespace detail;
  static const std::vector<NamedCheck> checks{
      {"metric.signature", check_signature},
      {"metric.christoffel_fd", check_christoffel_fd},
      {"metric.riemann_fd", check_riemann_fd},
      {"metric.pointwise_helpers", check_pointwise_helpers},
      {"engine.causal_type_conservation", check_causal_conservation},
      {"engine.flow_composition_homogeneity", check_flow_composition},
      {"engine.boundary_time_scaling", check_boundary_time_scaling},
      {"engine.jacobi_wronskian", check_wronskian},
      {"data.time_probe_replay", check_time_probe_replay},
      {"data.lightlike_conformal_invariance", check_lightlike_conformal_invariance},
      {"recon.asymp_equiv_properties", check_asymp_properties},
      {"recon.grouping_and_scaling", check_grouping},
      {"recon.fit_equivariance", check_fit_equivariance},
      {"recon.lens_pipeline", check_lens_pipeline},
      {"optics.weingarten_self_adjoint", check_weingarten_self_adjoint},
      {"optics.riccati_consistency", check_riccati_consistency},
      {"optics.flat_trace_law", check_flat_trace_law},
      {"optics.monotone_blowup_band", check_monotone_band},
      {"optics.immersivity_probe", check_immersivity},
      {"shadow.refocusing_counterexample", check_refocusing_counterexample},
      {"shadow.clique_recovery", check_clique_recovery},
  };
  return checks;
}

/// Runs every check whose name starts with one of `filters` (all when empty).
/// A check that throws is reported as failed with the error text.
inline std::vector<CheckResult> run_selftest(const SelftestOptions& opt = {},
                                             const std::vector<std::string>& filters = {},
                                             const std::function<void(const CheckResult&)>& on_result = {}) {
  std::vector<CheckResult> out;
  for (const auto& c : selftest_checks()) {
    if (!filters.empty() &&
        std::none_of(filters.begin(), filters.end(), [&](const std::string& f) { return c.name.rfind(f, 0) == 0; }))
      continue;
    CheckResult r;
    r.name = c.name;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      const detail::Worst w = c.fn(opt);
      r.ok = w.ok();
      r.worst = w.err;
      r.tol = w.tol;
      r.detail = w.where;
    } catch (const std::exception& e) {
      r.ok = false;
      r.detail = std::string("threw: ") + e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (on_result) on_result(r);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace causal_lens
