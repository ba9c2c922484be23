#pragma once

// Geodesic flow with parallel frames, Jacobi matrices and optical-equation
// payloads, plus boundary-exit detection.

#include "causal_lens/metric_models.hpp"
#include "causal_lens/ode.hpp"

#include <functional>
#include <optional>

namespace causal_lens {

enum class FlowDir { forward, backward };

struct GeodesicState {
  Vec x;
  Vec v;
  double s = 0.0;
  std::vector<Vec> frame;
};

/// Jacobi matrix and its derivative in a parallel screen frame.
struct JacobiState {
  Mat A;
  Mat Ad;
};

struct EngineOptions {
  OdeOptions ode{};
  double max_affine = 50.0;  // budget in units of embedded length of the initial velocity
  int reorth_every = 50;
  bool detect_reentry = false;
  Tolerances tol{};
};

struct BoundaryHit {
  double T = 0.0;  // affine parameter to the crossing, always >= 0
  BoundaryVector exit;
  bool reentry = false;
};

namespace detail {

enum class Payload { none, jacobi, riccati_direct, riccati_compact };

// State layout: x | v | frame vectors | payload.
// All charts of a model share coordinate expressions for g and Gamma, so
// the right-hand side is chart-agnostic; only transitions differ.
class GeodesicSystem {
 public:
  GeodesicSystem(const MetricModel& m, int nframe, Payload payload)
      : m_(m), n_(m.dim()), k_(m.dim() - 2), nframe_(nframe), payload_(payload), G_(n_), dG_(n_) {}

  int n() const { return n_; }
  int k() const { return k_; }
  int nframe() const { return nframe_; }
  Payload payload() const { return payload_; }
  const MetricModel& model() const { return m_; }

  Eigen::Index frame_offset() const { return 2 * n_; }
  Eigen::Index payload_offset() const { return 2 * n_ + nframe_ * n_; }
  Eigen::Index payload_size() const {
    switch (payload_) {
      case Payload::none: return 0;
      case Payload::jacobi: return 2 * k_ * k_;
      case Payload::riccati_direct: return k_ * k_;
      case Payload::riccati_compact: return 1 + k_ * k_;
    }
    return 0;
  }
  Eigen::Index size() const { return payload_offset() + payload_size(); }

  Vec pack(const Vec& x, const Vec& v, const std::vector<Vec>& frame) const {
    Vec y = Vec::Zero(size());
    y.segment(0, n_) = x;
    y.segment(n_, n_) = v;
    for (int i = 0; i < nframe_; ++i) y.segment(frame_offset() + i * n_, n_) = frame[i];
    return y;
  }
  std::vector<Vec> frame_of(const Vec& y) const {
    std::vector<Vec> f;
    for (int i = 0; i < nframe_; ++i) f.push_back(y.segment(frame_offset() + i * n_, n_));
    return f;
  }
  Mat frame_matrix(const Vec& y) const {
    Mat E(n_, nframe_);
    for (int i = 0; i < nframe_; ++i) E.col(i) = y.segment(frame_offset() + i * n_, n_);
    return E;
  }
  Mat payload_matrix(const Vec& y, int which) const {
    const Eigen::Index off = payload_offset() + (payload_ == Payload::riccati_compact ? 1 : 0) + which * k_ * k_;
    return Eigen::Map<const Mat>(y.data() + off, k_, k_);
  }
  void set_payload_matrix(Vec& y, int which, const Mat& M) const {
    const Eigen::Index off = payload_offset() + (payload_ == Payload::riccati_compact ? 1 : 0) + which * k_ * k_;
    Eigen::Map<Mat>(y.data() + off, k_, k_) = M;
  }

  /// Matrix of X -> Riem(X, v, v) in the screen frame: R_ij = g(e_i, Riem(e_j, v, v)).
  Mat screen_curvature(const Vec& x, const Vec& v, const Mat& E) const {
    if (m_.flat()) return Mat::Zero(E.cols(), E.cols());
    m_.christoffel(x, G_);
    m_.christoffel_derivative(x, dG_);
    return screen_curvature_cached(x, v, E);
  }

  void rhs(const Vec& y, Vec& dy) const {
    dy.resize(y.size());
    const Vec x = y.segment(0, n_);
    const Vec v = y.segment(n_, n_);
    dy.segment(0, n_) = v;
    if (m_.flat()) {
      dy.segment(n_, n_ + nframe_ * n_).setZero();
    } else {
      m_.christoffel(x, G_);
      if (payload_ != Payload::none) m_.christoffel_derivative(x, dG_);
      for (int c = 0; c < n_; ++c) {
        double acc = 0.0;
        for (int i = 0; i < n_; ++i)
          for (int j = 0; j < n_; ++j) acc += G_(c, i, j) * v[i] * v[j];
        dy[n_ + c] = -acc;
      }
      for (int f = 0; f < nframe_; ++f) {
        const Eigen::Index off = frame_offset() + f * n_;
        for (int c = 0; c < n_; ++c) {
          double acc = 0.0;
          for (int i = 0; i < n_; ++i)
            for (int j = 0; j < n_; ++j) acc += G_(c, i, j) * v[i] * y[off + j];
          dy[off + c] = -acc;
        }
      }
    }
    if (payload_ == Payload::none) return;

    const Mat R = m_.flat() ? Mat::Zero(k_, k_) : screen_curvature_cached(x, v, frame_matrix(y));
    const Eigen::Index off = payload_offset();
    switch (payload_) {
      case Payload::jacobi: {
        const Mat A = payload_matrix(y, 0);
        const Mat B = payload_matrix(y, 1);
        Eigen::Map<Mat>(dy.data() + off, k_, k_) = B;
        Eigen::Map<Mat>(dy.data() + off + k_ * k_, k_, k_) = -R * A;
        break;
      }
      case Payload::riccati_direct: {
        const Mat b = payload_matrix(y, 0);
        Eigen::Map<Mat>(dy.data() + off, k_, k_) = -b * b - R;
        break;
      }
      case Payload::riccati_compact: {
        const double a = y[off];
        const Mat sig = payload_matrix(y, 0);
        const double th = std::tan(a);
        const double r = R.trace();
        const double s2 = (sig * sig).trace();
        const double sa = std::sin(a), ca = std::cos(a);
        dy[off] = -sa * sa / k_ - ca * ca * (s2 + r);
        const Mat I = Mat::Identity(k_, k_);
        Eigen::Map<Mat>(dy.data() + off + 1, k_, k_) =
            -2.0 * th / k_ * sig - (sig * sig - s2 / k_ * I) - (R - r / k_ * I);
        break;
      }
      case Payload::none: break;
    }
  }

  Vec convert(const Vec& y, int from, int to) const {
    if (from == to) return y;
    Vec z = y;
    const Vec x = y.segment(0, n_);
    const Mat J = m_.chart_jacobian(from, to, x);
    z.segment(0, n_) = m_.chart_map(from, to, x);
    z.segment(n_, n_) = J * y.segment(n_, n_);
    for (int f = 0; f < nframe_; ++f) {
      const Eigen::Index off = frame_offset() + f * n_;
      z.segment(off, n_) = J * y.segment(off, n_);
    }
    return z;
  }

  /// Restores g(e_i, v) = 0 and screen orthonormality (lightlike v only).
  void reorthonormalize(Vec& y) const {
    if (nframe_ == 0) return;
    const Vec x = y.segment(0, n_);
    const Vec v = y.segment(n_, n_);
    const Mat g = m_.metric(x);
    Vec t = m_.time_orientation(x);
    t /= std::sqrt(-t.dot(g * t));
    const double a = -v.dot(g * t);
    const Vec w = v - a * t;
    const Vec N = (t - w / a) / (2.0 * a);  // g(N, v) = -1
    std::vector<Vec> E = frame_of(y);
    for (size_t i = 0; i < E.size(); ++i) {
      E[i] += E[i].dot(g * v) * N;
      for (size_t j = 0; j < i; ++j) E[i] -= E[i].dot(g * E[j]) * E[j];
      E[i] /= std::sqrt(E[i].dot(g * E[i]));
    }
    for (int f = 0; f < nframe_; ++f) y.segment(frame_offset() + f * n_, n_) = E[f];
  }

 private:
  Mat screen_curvature_cached(const Vec& x, const Vec& v, const Mat& E) const {
    Mat M = Mat::Zero(n_, n_);  // M^a_c = R^a_bcd v^b v^d
    for (int a = 0; a < n_; ++a)
      for (int c = 0; c < n_; ++c) {
        double acc = 0.0;
        for (int b = 0; b < n_; ++b)
          for (int d = 0; d < n_; ++d) {
            const double vv = v[b] * v[d];
            if (vv == 0.0) continue;
            double r = dG_(a, d, b, c) - dG_(a, c, b, d);
            for (int e = 0; e < n_; ++e) r += G_(a, c, e) * G_(e, d, b) - G_(a, d, e) * G_(e, c, b);
            acc += r * vv;
          }
        M(a, c) = acc;
      }
    const Mat g = m_.metric(x);
    return E.transpose() * g * M * E;
  }

  const MetricModel& m_;
  int n_;
  int k_;
  int nframe_;
  Payload payload_;
  mutable Christoffel G_;
  mutable ChristoffelDerivative dG_;
};

using EventFn = std::function<double(const Vec& y)>;  // y in chart 0

/// Drives a GeodesicSystem through the adaptive stepper, switching charts,
/// re-orthonormalizing screen frames and locating events. Public state is
/// always reported in chart 0.
class Tracer {
 public:
  Tracer(const GeodesicSystem& sys, const EngineOptions& opt, bool screen_frame)
      : sys_(sys),
        opt_(opt),
        screen_(screen_frame),
        stepper_([this](double, const Vec& y, Vec& dy) { sys_.rhs(y, dy); }, opt.ode) {}

  void start(double s, const Vec& y0) {
    chart_ = 0;
    Vec y = y0;
    const int n = sys_.n();
    const double vn = y.segment(n, n).norm();
    stepper_.set_h_max(std::min(opt_.ode.h_max, sys_.model().max_step_hint() / std::max(vn, 1e-300)));
    const int pc = sys_.model().preferred_chart(y.segment(0, n), 0);
    if (pc != 0) {
      y = sys_.convert(y, 0, pc);
      chart_ = pc;
    }
    stepper_.reset(s, y);
    since_reorth_ = 0;
  }

  double s() const { return stepper_.s(); }
  Vec state() const { return to_chart0(stepper_.y()); }
  size_t steps() const { return stepper_.steps(); }

  /// Integrates toward s_end. Returns the index of the first event whose
  /// function goes from > 0 to <= 0, or -1 if s_end was reached.
  int advance(double s_end, const std::vector<EventFn>& events = {}) {
    constexpr int kSub = 4;
    std::vector<double> prev(events.size());
    {
      const Vec y0 = state();
      for (size_t i = 0; i < events.size(); ++i) prev[i] = events[i](y0);
    }
    const ChartBox box = sys_.model().chart_box();
    const MetricModel& m = sys_.model();
    const int n = sys_.n();
    while (stepper_.s() != s_end) {
      stepper_.step(s_end);
      const DenseStep d = stepper_.dense();
      double s_b = stepper_.s();
      Vec y_b = stepper_.y();

      // Truncate the step where the current chart stops being preferred.
      if (m.chart_count() > 1) {
        auto wrong_chart = [&](const Vec& yc) {
          return m.preferred_chart(yc.segment(0, n), chart_) != chart_ ? -1.0 : 1.0;
        };
        double sa = d.s0;
        for (int q = 1; q <= kSub; ++q) {
          const double sb = q == kSub ? s_b : d.s0 + d.h * q / kSub;
          if (wrong_chart(q == kSub ? y_b : d.eval(sb)) < 0) {
            const double cut = bisect_dense(d, sa, sb, wrong_chart);
            if (cut != s_b) {
              y_b = integrate_from(d, cut);
              s_b = cut;
            }
            break;
          }
          sa = sb;
        }
      }

      // earliest event crossing inside [d.s0, s_b]
      int fired = -1;
      double s_root = 0.0;
      for (size_t i = 0; i < events.size(); ++i) {
        double g_prev = prev[i];
        double sa = d.s0;
        for (int q = 1; q <= kSub; ++q) {
          const double sb = q == kSub ? s_b : d.s0 + (s_b - d.s0) * q / kSub;
          const double gb = events[i](to_chart0(q == kSub ? y_b : d.eval(sb)));
          if (g_prev > 0.0 && gb <= 0.0) {
            auto g = [&](const Vec& yc) { return events[i](to_chart0(yc)); };
            const double r = bisect_dense(d, sa, sb, g);
            if (fired < 0 || (d.h > 0 ? r < s_root : r > s_root)) {
              fired = static_cast<int>(i);
              s_root = r;
            }
            break;
          }
          g_prev = gb;
          sa = sb;
        }
        prev[i] = g_prev;
      }
      if (fired >= 0) {
        polish(d, s_root, events[fired]);
        return fired;
      }

      if (!box.contains(to_chart0(y_b).segment(0, n)))
        throw Error(ErrorKind::escape, "trajectory left the chart box");

      bool restart = s_b != stepper_.s();
      if (screen_ && opt_.reorth_every > 0 && ++since_reorth_ >= opt_.reorth_every) {
        sys_.reorthonormalize(y_b);
        since_reorth_ = 0;
        restart = true;
      }
      const int pc = m.preferred_chart(y_b.segment(0, n), chart_);
      if (pc != chart_) {
        y_b = sys_.convert(y_b, chart_, pc);
        chart_ = pc;
        restart = true;
      }
      if (restart) stepper_.reset(s_b, y_b);
      for (size_t i = 0; i < events.size(); ++i) prev[i] = events[i](to_chart0(y_b));
    }
    return -1;
  }

 private:
  Vec to_chart0(const Vec& y) const { return sys_.convert(y, chart_, 0); }

  // Re-integrates from the start of the step to the bisected root, then
  // applies one Newton correction with a directional finite-difference slope.
  Vec integrate_from(const DenseStep& d, double s_to) const {
    Dopri5 sub([this](double, const Vec& y, Vec& dy) { sys_.rhs(y, dy); }, opt_.ode);
    sub.reset(d.s0, d.r1);
    sub.advance_to(s_to);
    return sub.y();
  }

  void polish(const DenseStep& d, double s_root, const EventFn& ev) {
    Dopri5 sub([this](double, const Vec& y, Vec& dy) { sys_.rhs(y, dy); }, opt_.ode);
    sub.reset(d.s0, d.r1);
    sub.advance_to(s_root);
    Vec y = sub.y();
    const double g0 = ev(to_chart0(y));
    Vec dy;
    sys_.rhs(y, dy);
    const double eps = 1e-7 * (1.0 + y.norm()) / std::max(dy.norm(), 1e-300);
    const double g1 = ev(to_chart0(y + eps * dy));
    const double slope = (g1 - g0) / eps;
    double s_new = s_root;
    if (slope != 0.0 && std::isfinite(slope)) {
      const double ds = -g0 / slope;
      if (std::abs(ds) < std::abs(d.h)) s_new = s_root + ds;
    }
    if (s_new != s_root) {
      sub.advance_to(s_new);
      y = sub.y();
    }
    stepper_.reset(s_new, y);
  }

  const GeodesicSystem& sys_;
  EngineOptions opt_;
  bool screen_;
  Dopri5 stepper_;
  int chart_ = 0;
  int since_reorth_ = 0;
};

inline double budget_for(const MetricModel& m, const EngineOptions& opt, const PointVector& pv) {
  return opt.max_affine / std::max(m.embed_vector(pv.x, pv.v).norm(), 1e-300);
}

}  // namespace detail

// ---------------------------------------------------------------------------

/// Geodesic flow for affine parameter ds (may be negative). Frame vectors in
/// the state are parallel-transported.
inline GeodesicState flow(const MetricModel& m, const GeodesicState& st, double ds, const EngineOptions& opt = {}) {
  if (!m.chart_box().contains(st.x)) throw Error(ErrorKind::domain, "start point outside chart box");
  detail::GeodesicSystem sys(m, static_cast<int>(st.frame.size()), detail::Payload::none);
  detail::Tracer tr(sys, opt, false);
  tr.start(st.s, sys.pack(st.x, st.v, st.frame));
  tr.advance(st.s + ds);
  const Vec y = tr.state();
  GeodesicState out;
  out.x = m.canonical(y.segment(0, m.dim()));
  out.v = y.segment(m.dim(), m.dim());
  out.s = st.s + ds;
  out.frame = sys.frame_of(y);
  return out;
}

/// Affine time until the geodesic of pv meets the boundary, and the velocity there.
inline BoundaryHit time_to_boundary(const MetricModel& m, const PointVector& pv, FlowDir dir,
                                    const EngineOptions& opt = {}) {
  if (pv.v.squaredNorm() == 0.0) throw Error(ErrorKind::zero_vector, "zero initial velocity");
  if (!m.chart_box().contains(pv.x)) throw Error(ErrorKind::domain, "start point outside chart box");
  if (!(m.boundary_function(pv.x) > opt.tol.boundary))
    throw Error(ErrorKind::domain, "start point is not strictly interior");

  const int n = m.dim();
  detail::GeodesicSystem sys(m, 0, detail::Payload::none);
  detail::Tracer tr(sys, opt, false);
  tr.start(0.0, sys.pack(pv.x, pv.v, {}));
  const double sign = dir == FlowDir::forward ? 1.0 : -1.0;
  const double budget = detail::budget_for(m, opt, pv);
  const detail::EventFn F = [&](const Vec& y) { return m.boundary_function(y.segment(0, n)); };
  if (tr.advance(sign * budget, {F}) < 0)
    throw Error(ErrorKind::non_exiting, "no boundary crossing within the affine budget (causality suspect)");

  const Vec y = tr.state();
  BoundaryHit hit;
  hit.T = std::abs(tr.s());
  PointVector e{m.canonical(y.segment(0, n)), y.segment(n, n)};
  const Mat g = m.metric(e.x);
  const Vec dF = m.boundary_gradient(e.x);
  const Vec sharp = g.ldlt().solve(dF);
  hit.exit.pv = e;
  const double q = e.v.dot(g * e.v);
  hit.exit.causal = std::abs(q) <= opt.tol.import_lightlike * e.v.squaredNorm()
                        ? Causal::lightlike
                        : (q < 0 ? Causal::timelike : Causal::spacelike);
  hit.exit.direction = e.v.dot(g * m.time_orientation(e.x)) < 0 ? TimeDir::future : TimeDir::past;
  hit.exit.transversal = std::abs(dF.dot(e.v)) > opt.tol.transversality * e.v.norm() * sharp.norm();

  if (opt.detect_reentry) {
    const detail::EventFn outside = [&](const Vec& yy) { return -m.boundary_function(yy.segment(0, n)); };
    try {
      // step slightly off the boundary so the outside test is armed
      hit.reentry = tr.advance(tr.s() + sign * budget, {outside}) >= 0;
    } catch (const Error& err) {
      if (err.kind() != ErrorKind::escape && err.kind() != ErrorKind::budget) throw;
    }
  }
  return hit;
}

/// Flows a lightlike vector to its past boundary footprint: backward for
/// future-directed input, forward for past-directed input.
inline BoundaryHit alpha(const MetricModel& m, const PointVector& pv, const EngineOptions& opt = {}) {
  const CausalTag tag = causal_classify(m, pv, opt.tol);
  if (tag.causal != Causal::lightlike) throw Error(ErrorKind::classification, "alpha needs a lightlike vector");
  return time_to_boundary(m, pv, tag.direction == TimeDir::future ? FlowDir::backward : FlowDir::forward, opt);
}

struct Approach {
  PointVector at;          // first local minimum within tol.match, else the closest one
  double s = 0.0;          // signed affine parameter of that state
  double distance = 0.0;   // embedded distance to the target
  bool reached = false;    // false when the boundary came first
};

/// Closest approach of the geodesic of pv to a target point, measured in
/// the model embedding. The start may lie on the boundary.
inline Approach closest_approach(const MetricModel& m, const PointVector& pv, const Vec& target, FlowDir dir,
                                 const EngineOptions& opt = {}) {
  const int n = m.dim();
  const double sign = dir == FlowDir::forward ? 1.0 : -1.0;
  detail::GeodesicSystem sys(m, 0, detail::Payload::none);
  detail::Tracer tr(sys, opt, false);
  tr.start(0.0, sys.pack(pv.x, pv.v, {}));
  const Vec et = m.embed_point(target);
  const detail::EventFn approach = [&](const Vec& z) {
    const Vec x = z.segment(0, n);
    return -sign * m.embed_vector(x, z.segment(n, n)).dot(m.embed_point(x) - et);
  };
  const detail::EventFn F = [&](const Vec& z) { return m.boundary_function(z.segment(0, n)); };
  const double s_end = sign * detail::budget_for(m, opt, pv);
  // a geodesic can pass near the target more than once (refocusing); keep
  // going past local minima that miss by more than the match tolerance
  Approach best;
  best.distance = std::numeric_limits<double>::infinity();
  for (;;) {
    const int ev = tr.advance(s_end, {approach, F});
    if (ev != 0) break;
    const Vec z = tr.state();
    Approach a;
    a.at = {m.canonical(z.segment(0, n)), z.segment(n, n)};
    a.s = tr.s();
    a.distance = (m.embed_point(a.at.x) - et).norm();
    a.reached = true;
    if (a.distance < best.distance) best = a;
    if (a.distance <= opt.tol.match) break;
    if (tr.advance(tr.s() + sign * 1e-6, {F}) == 0) break;
  }
  if (best.reached) return best;
  const Vec z = tr.state();
  best.at = {m.canonical(z.segment(0, n)), z.segment(n, n)};
  best.s = tr.s();
  best.distance = (m.embed_point(best.at.x) - et).norm();
  return best;
}

/// Integrates A'' = -R A along a lightlike geodesic whose frame is a screen frame.
inline std::pair<GeodesicState, JacobiState> jacobi_flow(const MetricModel& m, const GeodesicState& st,
                                                         const JacobiState& J, double ds,
                                                         const EngineOptions& opt = {}) {
  const int k = m.dim() - 2;
  if (static_cast<int>(st.frame.size()) != k)
    throw Error(ErrorKind::classification, "jacobi_flow needs an (n-2)-vector screen frame");
  detail::GeodesicSystem sys(m, k, detail::Payload::jacobi);
  Vec y = sys.pack(st.x, st.v, st.frame);
  sys.set_payload_matrix(y, 0, J.A);
  sys.set_payload_matrix(y, 1, J.Ad);
  detail::Tracer tr(sys, opt, true);
  tr.start(st.s, y);
  tr.advance(st.s + ds);
  const Vec z = tr.state();
  GeodesicState out{m.canonical(z.segment(0, m.dim())), z.segment(m.dim(), m.dim()), st.s + ds, sys.frame_of(z)};
  return {out, JacobiState{sys.payload_matrix(z, 0), sys.payload_matrix(z, 1)}};
}

}  // namespace causal_lens
