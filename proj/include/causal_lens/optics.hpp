#pragma once

// Null Weingarten maps of past light cones, the optical (Riccati) equation
// along lightlike geodesics, and the maps Psi / Psi^-1 built on them.

#include "causal_lens/geodesic_engine.hpp"

#include <numbers>

namespace causal_lens {

/// A lightlike boundary vector with the matrix of its null Weingarten map in
/// the screen frame `frame` (the canonical screen_frame of eta).
struct WeingartenState {
  BoundaryVector eta;
  std::vector<Vec> frame;
  Mat b;
  double affine_distance = 0.0;  // apex parameter seen from eta
};

struct RiccatiOptions {
  EngineOptions engine{};
  double blowup_band = 0.05;  // delta: switch to the linear form once a < -pi/2 + delta
};

struct BlowupResult {
  double T = 0.0;          // blow-up (apex) parameter
  PointVector apex;        // gamma_dot(T)
  double band_entry = 0.0; // parameter at which a entered the band
  double max_adot = -std::numeric_limits<double>::infinity();  // largest a' sampled inside the band
};

/// Trace/trace-free split of b, compactified: a = arctan(tr b).
struct RiccatiTrace {
  double a = 0.0;
  Mat sigma;
  double s = 0.0;

  Mat b() const {
    const auto k = sigma.rows();
    return std::tan(a) / static_cast<double>(k) * Mat::Identity(k, k) + sigma;
  }
};

inline RiccatiTrace split_riccati(const Mat& b, double s = 0.0) {
  const auto k = b.rows();
  RiccatiTrace r;
  r.a = std::atan(b.trace());
  r.sigma = b - b.trace() / static_cast<double>(k) * Mat::Identity(k, k);
  r.s = s;
  return r;
}

namespace detail {

// Change of orthonormal screen basis: matrix of b in S given its matrix in E.
inline Mat rebase_screen(const MetricModel& m, const Vec& x, const std::vector<Vec>& S, const std::vector<Vec>& E,
                         const Mat& b) {
  const Mat g = m.metric(x);
  Mat P(S.size(), E.size());
  for (size_t i = 0; i < S.size(); ++i)
    for (size_t j = 0; j < E.size(); ++j) P(i, j) = S[i].dot(g * E[j]);
  return P * b * P.transpose();
}

inline BoundaryVector tag_boundary(const MetricModel& m, const PointVector& pv, const Tolerances& tol) {
  const Mat g = m.metric(pv.x);
  const Vec dF = m.boundary_gradient(pv.x);
  const Vec sharp = g.ldlt().solve(dF);
  BoundaryVector bv;
  bv.pv = pv;
  const double q = pv.v.dot(g * pv.v);
  bv.causal = std::abs(q) <= tol.import_lightlike * pv.v.squaredNorm() ? Causal::lightlike
                                                                       : (q < 0 ? Causal::timelike : Causal::spacelike);
  bv.direction = pv.v.dot(g * m.time_orientation(pv.x)) < 0 ? TimeDir::future : TimeDir::past;
  bv.transversal = std::abs(dF.dot(pv.v)) > tol.transversality * pv.v.norm() * sharp.norm();
  return bv;
}

inline double adot(const Mat& b, const Mat& R) {
  const auto k = static_cast<double>(b.rows());
  const double th = b.trace();
  const double a = std::atan(th);
  const Mat sig = b - th / k * Mat::Identity(b.rows(), b.cols());
  const double sa = std::sin(a), ca = std::cos(a);
  return -sa * sa / k - ca * ca * ((sig * sig).trace() + R.trace());
}

}  // namespace detail

/// Null Weingarten map at the boundary of the past light cone with apex at
/// zeta's base point, along the generator through zeta (future-directed).
/// Integrates A'' = -R A backward from A = 0, A' = -I at the apex.
inline WeingartenState cone_weingarten(const MetricModel& m, const PointVector& zeta, const EngineOptions& opt = {}) {
  const int n = m.dim(), k = n - 2;
  const CausalTag tag = causal_classify(m, zeta, opt.tol);
  if (tag.causal != Causal::lightlike) throw Error(ErrorKind::classification, "apex vector must be lightlike");
  if (tag.direction != TimeDir::future) throw Error(ErrorKind::classification, "apex vector must be future-directed");
  if (!(m.boundary_function(zeta.x) > opt.tol.boundary)) throw Error(ErrorKind::domain, "apex must be interior");

  detail::GeodesicSystem sys(m, k, detail::Payload::jacobi);
  Vec y = sys.pack(zeta.x, zeta.v, screen_frame(m, zeta, opt.tol));
  sys.set_payload_matrix(y, 0, Mat::Zero(k, k));
  sys.set_payload_matrix(y, 1, -Mat::Identity(k, k));
  detail::Tracer tr(sys, opt, true);
  tr.start(0.0, y);
  const detail::EventFn F = [&](const Vec& z) { return m.boundary_function(z.segment(0, n)); };
  const detail::EventFn detA = [&](const Vec& z) { return sys.payload_matrix(z, 0).determinant(); };
  const int ev = tr.advance(-detail::budget_for(m, opt, zeta), {F, detA});
  if (ev < 0) throw Error(ErrorKind::non_exiting, "past light cone generator does not reach the boundary");
  if (ev == 1)
    throw Error(ErrorKind::conjugate_point,
                "Jacobi matrix singular at affine distance " + std::to_string(-tr.s()) + " from the apex");

  const Vec z = tr.state();
  const Vec x = m.canonical(z.segment(0, n));
  const Vec v = z.segment(n, n);
  const Mat A = sys.payload_matrix(z, 0);
  const Mat Ad = sys.payload_matrix(z, 1);
  const Mat bE = Ad * A.inverse();

  WeingartenState w;
  w.eta = detail::tag_boundary(m, {x, v}, opt.tol);
  // canonical screen frame at eta; tolerate integrator drift in the null check
  Tolerances loose = opt.tol;
  loose.classification = opt.tol.import_lightlike;
  w.frame = screen_frame(m, {x, v}, loose);
  w.b = detail::rebase_screen(m, x, w.frame, sys.frame_of(z), bE);
  w.affine_distance = -tr.s();
  return w;
}

/// Weingarten map of the past light cone of p along the generator whose
/// boundary vector is eta. eta's future geodesic must pass through p.
inline WeingartenState weingarten_of_cone(const MetricModel& m, const Vec& p, const BoundaryVector& eta,
                                          const EngineOptions& opt = {}, double pass_tol = 1e-6) {
  if (!(m.boundary_function(p) > opt.tol.boundary)) throw Error(ErrorKind::domain, "apex must be interior");
  const Approach a = closest_approach(m, eta.pv, p, FlowDir::forward, opt);
  if (!a.reached || a.distance > pass_tol)
    throw Error(ErrorKind::domain, "boundary vector is not a shadow vector of the apex (closest approach " +
                                       std::to_string(a.distance) + ")");
  // the velocity arriving at p carries integration drift
  EngineOptions arrived = opt;
  arrived.tol.classification = opt.tol.import_lightlike;
  return cone_weingarten(m, {p, a.at.v}, arrived);
}

/// Psi(zeta) = (alpha(zeta), b(alpha(zeta))), extended by Psi(-zeta) = -Psi(zeta).
inline WeingartenState psi(const MetricModel& m, const PointVector& zeta, const EngineOptions& opt = {}) {
  const CausalTag tag = causal_classify(m, zeta, opt.tol);
  if (tag.causal != Causal::lightlike) throw Error(ErrorKind::classification, "psi needs a lightlike vector");
  if (tag.direction == TimeDir::future) return cone_weingarten(m, zeta, opt);
  WeingartenState w = cone_weingarten(m, {zeta.x, -zeta.v}, opt);
  w.eta.pv.v = -w.eta.pv.v;
  w.eta.direction = TimeDir::past;
  w.b = -w.b;
  return w;
}

namespace detail {

inline void require_inward(const MetricModel& m, const PointVector& eta, const Tolerances& tol) {
  if (std::abs(m.boundary_function(eta.x)) > 1e3 * tol.boundary)
    throw Error(ErrorKind::domain, "initial vector is not on the boundary");
  if (!(m.boundary_gradient(eta.x).dot(eta.v) > 0))
    throw Error(ErrorKind::domain, "initial vector does not point into the manifold");
}

}  // namespace detail

/// Existence time of b' = -b^2 - R, b(0) = b0 along the geodesic of eta
/// (future-directed, inward), found through the compactified (a, sigma)
/// system and, inside the band a < -pi/2 + delta, the equivalent linear
/// Jacobi form A'' = -R A with A = I, A' = b at band entry.
inline BlowupResult riccati_blowup_time(const MetricModel& m, const PointVector& eta, const Mat& b0,
                                        const RiccatiOptions& ropt = {}) {
  const int n = m.dim(), k = n - 2;
  const EngineOptions& opt = ropt.engine;
  Tolerances loose = opt.tol;
  loose.classification = opt.tol.import_lightlike;
  const CausalTag tag = causal_classify(m, eta, loose);
  if (tag.causal != Causal::lightlike || tag.direction != TimeDir::future)
    throw Error(ErrorKind::classification, "riccati_blowup_time needs a future lightlike vector");
  if (b0.rows() != k || b0.cols() != k) throw Error(ErrorKind::domain, "b0 has the wrong size");
  detail::require_inward(m, eta, opt.tol);

  const double band = -std::numbers::pi / 2 + ropt.blowup_band;
  const double budget = detail::budget_for(m, opt, eta);
  const std::vector<Vec> frame0 = screen_frame(m, eta, loose);
  const detail::EventFn F = [&](const Vec& z) { return m.boundary_function(z.segment(0, n)); };

  BlowupResult res;
  Vec x = eta.x, v = eta.v;
  std::vector<Vec> frame = frame0;
  double s = 0.0;
  Mat b_entry = b0;

  const RiccatiTrace tr0 = split_riccati(b0);
  if (tr0.a > band) {
    detail::GeodesicSystem sys(m, k, detail::Payload::riccati_compact);
    Vec y = sys.pack(x, v, frame);
    y[sys.payload_offset()] = tr0.a;
    sys.set_payload_matrix(y, 0, tr0.sigma);
    detail::Tracer tr(sys, opt, true);
    tr.start(0.0, y);
    const detail::EventFn enter = [&](const Vec& z) { return z[sys.payload_offset()] - band; };
    const int ev = tr.advance(budget, {enter, F});
    if (ev == 1) throw Error(ErrorKind::no_apex, "geodesic leaves the manifold before the optical equation blows up");
    if (ev < 0) throw Error(ErrorKind::budget, "no blow-up within the affine budget");
    const Vec z = tr.state();
    x = z.segment(0, n);
    v = z.segment(n, n);
    frame = sys.frame_of(z);
    s = tr.s();
    RiccatiTrace rt;
    rt.a = z[sys.payload_offset()];
    rt.sigma = sys.payload_matrix(z, 0);
    b_entry = rt.b();
  }
  res.band_entry = s;

  detail::GeodesicSystem jsys(m, k, detail::Payload::jacobi);
  Vec y = jsys.pack(x, v, frame);
  jsys.set_payload_matrix(y, 0, Mat::Identity(k, k));
  jsys.set_payload_matrix(y, 1, b_entry);
  res.max_adot = detail::adot(b_entry, jsys.screen_curvature(x, v, jsys.frame_matrix(y)));

  // h = -k / tr(A' A^-1) is a smooth function that vanishes at the focal point
  const auto h_of = [&](const Vec& z) {
    const Mat A = jsys.payload_matrix(z, 0);
    const Mat Ad = jsys.payload_matrix(z, 1);
    const double t = (Ad * A.inverse()).trace();
    return -static_cast<double>(k) / t;
  };
  detail::Tracer tr(jsys, opt, true);
  tr.start(s, y);
  const double h0 = h_of(tr.state());
  for (double frac : {0.5, 0.1}) {
    const detail::EventFn probe = [&](const Vec& z) { return h_of(z) - frac * h0; };
    const int ev = tr.advance(s + budget, {probe, F});
    if (ev == 1) throw Error(ErrorKind::no_apex, "geodesic leaves the manifold before the optical equation blows up");
    if (ev < 0) throw Error(ErrorKind::budget, "no blow-up within the affine budget");
    const Vec z = tr.state();
    const Mat A = jsys.payload_matrix(z, 0);
    const Mat b = jsys.payload_matrix(z, 1) * A.inverse();
    res.max_adot = std::max(res.max_adot, detail::adot(b, jsys.screen_curvature(z.segment(0, n), z.segment(n, n),
                                                                                   jsys.frame_matrix(z))));
  }
  const detail::EventFn focal = [&](const Vec& z) { return h_of(z); };
  const int ev = tr.advance(s + budget, {focal, F});
  if (ev == 1) throw Error(ErrorKind::no_apex, "geodesic leaves the manifold before the optical equation blows up");
  if (ev < 0) throw Error(ErrorKind::budget, "no blow-up within the affine budget");
  const Vec z = tr.state();
  res.T = tr.s();
  res.apex = PointVector{m.canonical(z.segment(0, n)), z.segment(n, n)};
  return res;
}

/// Psi^-1(eta, b0) = geodesic flow of eta for the blow-up time, extended by
/// Psi^-1(-eta, -b0) = -Psi^-1(eta, b0).
inline PointVector psi_inverse(const MetricModel& m, const PointVector& eta, const Mat& b0,
                               const RiccatiOptions& ropt = {}) {
  Tolerances loose = ropt.engine.tol;
  loose.classification = ropt.engine.tol.import_lightlike;
  const CausalTag tag = causal_classify(m, eta, loose);
  if (tag.direction == TimeDir::future) return riccati_blowup_time(m, eta, b0, ropt).apex;
  PointVector p = riccati_blowup_time(m, {eta.x, -eta.v}, -b0, ropt).apex;
  p.v = -p.v;
  return p;
}

/// Solution of the optical equation at parameter s_end, integrated either
/// directly in b or through the compactified (a, sigma) variables.
inline Mat riccati_evolve(const MetricModel& m, const PointVector& eta, const Mat& b0, double s_end, bool compact,
                          const EngineOptions& opt = {}) {
  const int n = m.dim(), k = n - 2;
  Tolerances loose = opt.tol;
  loose.classification = opt.tol.import_lightlike;
  detail::GeodesicSystem sys(m, k, compact ? detail::Payload::riccati_compact : detail::Payload::riccati_direct);
  Vec y = sys.pack(eta.x, eta.v, screen_frame(m, eta, loose));
  if (compact) {
    const RiccatiTrace r = split_riccati(b0);
    y[sys.payload_offset()] = r.a;
    sys.set_payload_matrix(y, 0, r.sigma);
  } else {
    sys.set_payload_matrix(y, 0, b0);
  }
  detail::Tracer tr(sys, opt, true);
  tr.start(0.0, y);
  tr.advance(s_end);
  const Vec z = tr.state();
  if (!compact) return sys.payload_matrix(z, 0);
  RiccatiTrace r;
  r.a = z[sys.payload_offset()];
  r.sigma = sys.payload_matrix(z, 0);
  return r.b();
}

}  // namespace causal_lens
