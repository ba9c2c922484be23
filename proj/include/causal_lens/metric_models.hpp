#pragma once

// Analytic single-chart Lorentzian manifolds with boundary.
//
// Every model supplies the metric, its Christoffel symbols and their first
// derivatives in closed form; the Riemann tensor is assembled from those.
// The boundary is the zero set of a function F that is positive inside.

#include "causal_lens/types.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <numbers>
#include <random>
#include <string>

namespace causal_lens {

using ModelParams = std::map<std::string, double>;

struct ChartBox {
  Vec lo;
  Vec hi;

  bool contains(const Vec& x) const {
    for (Eigen::Index i = 0; i < x.size(); ++i)
      if (!(x[i] >= lo[i] && x[i] <= hi[i])) return false;
    return true;
  }
};

/// Gamma^k_ij, symmetric in (i, j).
class Christoffel {
 public:
  Christoffel() = default;
  explicit Christoffel(int n) { resize(n); }

  void resize(int n) {
    n_ = n;
    c_.assign(static_cast<size_t>(n) * n * n, 0.0);
  }
  void zero() { std::fill(c_.begin(), c_.end(), 0.0); }
  int dim() const { return n_; }

  double& operator()(int k, int i, int j) { return c_[(static_cast<size_t>(k) * n_ + i) * n_ + j]; }
  double operator()(int k, int i, int j) const { return c_[(static_cast<size_t>(k) * n_ + i) * n_ + j]; }

 private:
  int n_ = 0;
  std::vector<double> c_;
};

/// d_l Gamma^k_ij.
class ChristoffelDerivative {
 public:
  ChristoffelDerivative() = default;
  explicit ChristoffelDerivative(int n) { resize(n); }

  void resize(int n) {
    n_ = n;
    d_.assign(static_cast<size_t>(n) * n * n * n, 0.0);
  }
  void zero() { std::fill(d_.begin(), d_.end(), 0.0); }
  int dim() const { return n_; }

  double& operator()(int k, int i, int j, int l) {
    return d_[((static_cast<size_t>(k) * n_ + i) * n_ + j) * n_ + l];
  }
  double operator()(int k, int i, int j, int l) const {
    return d_[((static_cast<size_t>(k) * n_ + i) * n_ + j) * n_ + l];
  }

 private:
  int n_ = 0;
  std::vector<double> d_;
};

/// R^a_bcd with R^a_bcd = d_c G^a_db - d_d G^a_cb + G^a_ce G^e_db - G^a_de G^e_cb.
/// With this convention the Jacobi equation reads J'' = -R^a_bcd v^b J^c v^d.
class Riemann {
 public:
  explicit Riemann(int n) : n_(n), r_(static_cast<size_t>(n) * n * n * n, 0.0) {}

  int dim() const { return n_; }
  double& operator()(int a, int b, int c, int d) {
    return r_[((static_cast<size_t>(a) * n_ + b) * n_ + c) * n_ + d];
  }
  double operator()(int a, int b, int c, int d) const {
    return r_[((static_cast<size_t>(a) * n_ + b) * n_ + c) * n_ + d];
  }

 private:
  int n_;
  std::vector<double> r_;
};

inline Riemann riemann_from(const Christoffel& G, const ChristoffelDerivative& dG) {
  const int n = G.dim();
  Riemann R(n);
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b)
      for (int c = 0; c < n; ++c)
        for (int d = 0; d < n; ++d) {
          double s = dG(a, d, b, c) - dG(a, c, b, d);
          for (int e = 0; e < n; ++e) s += G(a, c, e) * G(e, d, b) - G(a, d, e) * G(e, c, b);
          R(a, b, c, d) = s;
        }
  return R;
}

class MetricModel {
 public:
  explicit MetricModel(int n) : n_(n) {
    if (n < 3) throw Error(ErrorKind::model_definition, "dimension must be at least 3");
  }
  virtual ~MetricModel() = default;

  int dim() const { return n_; }

  virtual std::string name() const = 0;
  virtual ModelParams params() const = 0;

  virtual Mat metric(const Vec& x) const = 0;
  virtual void christoffel(const Vec& x, Christoffel& out) const = 0;
  virtual void christoffel_derivative(const Vec& x, ChristoffelDerivative& out) const = 0;
  virtual Vec time_orientation(const Vec& x) const = 0;
  virtual double boundary_function(const Vec& x) const = 0;
  virtual Vec boundary_gradient(const Vec& x) const = 0;
  virtual ChartBox chart_box() const = 0;
  virtual bool flat() const { return false; }

  /// Candidate point for interior sampling (caller applies the F margin).
  virtual Vec sample_candidate(std::mt19937_64& rng) const {
    const ChartBox b = chart_box();
    Vec x(n_);
    for (int i = 0; i < n_; ++i) x[i] = std::uniform_real_distribution<double>(b.lo[i], b.hi[i])(rng);
    return x;
  }

  // Atlas hooks. Models with a coordinate singularity expose a companion
  // chart; integration switches charts when preferred_chart says so. All
  // public results are expressed in chart 0.
  virtual int chart_count() const { return 1; }
  virtual int preferred_chart(const Vec& /*x*/, int chart) const { return chart; }
  virtual Vec chart_map(int /*from*/, int /*to*/, const Vec& x) const { return x; }
  virtual Mat chart_jacobian(int /*from*/, int /*to*/, const Vec& /*x*/) const {
    return Mat::Identity(n_, n_);
  }
  virtual Vec canonical(const Vec& x) const { return x; }
  /// Upper bound on the chart-length of one integration step, so that chart
  /// switches cannot be stepped over.
  virtual double max_step_hint() const { return std::numeric_limits<double>::infinity(); }

  /// Chart-independent Euclidean representation used for tolerance matching.
  virtual Vec embed_point(const Vec& x) const { return x; }
  virtual Vec embed_vector(const Vec& /*x*/, const Vec& v) const { return v; }
  /// Chart-0 point nearest to an embedded representation.
  virtual Vec from_embedded(const Vec& e) const { return e; }

  Riemann riemann(const Vec& x) const {
    Christoffel G(n_);
    ChristoffelDerivative dG(n_);
    christoffel(x, G);
    christoffel_derivative(x, dG);
    return riemann_from(G, dG);
  }

  double inner(const Vec& x, const Vec& a, const Vec& b) const { return a.dot(metric(x) * b); }

 protected:
  int n_;
};

using ModelPtr = std::shared_ptr<const MetricModel>;

namespace detail {

/// Smooth minimum of the face distances of the box [0, L]^n.
/// Inside: F = (sum d_i^-8)^(-1/8); outside: F = min d_i. Evaluated with the
/// minimum factored out so it never overflows near a face.
inline double box_smooth_min(const Vec& x, double L, Vec* grad) {
  constexpr double p = 8.0;
  const Eigen::Index n = x.size();
  double m = std::numeric_limits<double>::infinity();
  Eigen::Index arg = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double lo = x[i], hi = L - x[i];
    if (lo < m) { m = lo; arg = 2 * i; }
    if (hi < m) { m = hi; arg = 2 * i + 1; }
  }
  if (m <= 0.0) {
    if (grad) {
      grad->setZero(n);
      (*grad)[arg / 2] = (arg % 2 == 0) ? 1.0 : -1.0;
    }
    return m;
  }
  double s = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    s += std::pow(m / x[i], p);
    s += std::pow(m / (L - x[i]), p);
  }
  const double F = m * std::pow(s, -1.0 / p);
  if (grad) {
    grad->setZero(n);
    const double scale = std::pow(s, -(p + 1.0) / p);
    for (Eigen::Index i = 0; i < n; ++i) {
      (*grad)[i] += std::pow(m / x[i], p + 1.0) * scale;
      (*grad)[i] -= std::pow(m / (L - x[i]), p + 1.0) * scale;
    }
  }
  return F;
}

inline ChartBox padded_cube(int n, double L) {
  return ChartBox{Vec::Constant(n, -0.5 * L), Vec::Constant(n, 1.5 * L)};
}

inline double param(const ModelParams& p, const std::string& key, double fallback) {
  auto it = p.find(key);
  return it == p.end() ? fallback : it->second;
}

}  // namespace detail

/// Flat block [0, L]^n with g = diag(-1, 1, ..., 1).
class MinkowskiBlock final : public MetricModel {
 public:
  explicit MinkowskiBlock(int n = 3, double L = 1.0) : MetricModel(n), L_(L) {
    if (!(L > 0)) throw Error(ErrorKind::model_definition, "block side must be positive");
  }

  std::string name() const override { return "minkowski-block"; }
  ModelParams params() const override { return {{"n", n_}, {"L", L_}}; }

  Mat metric(const Vec& /*x*/) const override {
    Mat g = Mat::Identity(n_, n_);
    g(0, 0) = -1.0;
    return g;
  }
  void christoffel(const Vec&, Christoffel& out) const override {
    out.resize(n_);
  }
  void christoffel_derivative(const Vec&, ChristoffelDerivative& out) const override {
    out.resize(n_);
  }
  Vec time_orientation(const Vec&) const override { return Vec::Unit(n_, 0); }
  double boundary_function(const Vec& x) const override { return detail::box_smooth_min(x, L_, nullptr); }
  Vec boundary_gradient(const Vec& x) const override {
    Vec g;
    detail::box_smooth_min(x, L_, &g);
    return g;
  }
  ChartBox chart_box() const override { return detail::padded_cube(n_, L_); }
  bool flat() const override { return true; }

  double side() const { return L_; }

 private:
  double L_;
};

/// g = Omega(x)^2 * eta on the block [0, L]^n with Omega = 1 + c * x_axis.
class ConformalFlat final : public MetricModel {
 public:
  ConformalFlat(int n = 3, double L = 1.0, double c = 0.1, int axis = 1)
      : MetricModel(n), L_(L), c_(c), axis_(axis) {
    if (!(L > 0)) throw Error(ErrorKind::model_definition, "block side must be positive");
    if (axis < 0 || axis >= n) throw Error(ErrorKind::model_definition, "conformal axis out of range");
    const ChartBox b = chart_box();
    if (omega_at(b.lo[axis]) <= 0.0 || omega_at(b.hi[axis]) <= 0.0)
      throw Error(ErrorKind::model_definition, "conformal factor must stay positive on the chart box");
  }

  std::string name() const override { return "conformal-flat"; }
  ModelParams params() const override {
    return {{"n", n_}, {"L", L_}, {"c", c_}, {"axis", axis_}};
  }

  double omega(const Vec& x) const { return omega_at(x[axis_]); }

  Mat metric(const Vec& x) const override {
    Mat g = Mat::Identity(n_, n_);
    g(0, 0) = -1.0;
    const double w = omega(x);
    return w * w * g;
  }

  // Gamma^k_ij = d^k_i f_j + d^k_j f_i - eta_ij eta^kk f_k with f = ln Omega.
  void christoffel(const Vec& x, Christoffel& out) const override {
    out.resize(n_);
    const double f = c_ / omega(x);
    fill_gamma(out, f);
  }

  void christoffel_derivative(const Vec& x, ChristoffelDerivative& out) const override {
    out.resize(n_);
    const double w = omega(x);
    const double ff = -c_ * c_ / (w * w);  // d_a d_a ln Omega
    const int a = axis_;
    for (int k = 0; k < n_; ++k)
      for (int i = 0; i < n_; ++i)
        for (int j = 0; j < n_; ++j) {
          double s = 0.0;
          if (k == i && j == a) s += ff;
          if (k == j && i == a) s += ff;
          if (i == j && k == a) s -= eta(i) * eta(k) * ff;
          out(k, i, j, a) = s;
        }
  }

  Vec time_orientation(const Vec&) const override { return Vec::Unit(n_, 0); }
  double boundary_function(const Vec& x) const override { return detail::box_smooth_min(x, L_, nullptr); }
  Vec boundary_gradient(const Vec& x) const override {
    Vec g;
    detail::box_smooth_min(x, L_, &g);
    return g;
  }
  ChartBox chart_box() const override { return detail::padded_cube(n_, L_); }

 private:
  double omega_at(double s) const { return 1.0 + c_ * s; }
  static double eta(int i) { return i == 0 ? -1.0 : 1.0; }

  void fill_gamma(Christoffel& G, double f) const {
    const int a = axis_;
    for (int k = 0; k < n_; ++k)
      for (int i = 0; i < n_; ++i)
        for (int j = 0; j < n_; ++j) {
          double s = 0.0;
          if (k == i && j == a) s += f;
          if (k == j && i == a) s += f;
          if (i == j && k == a) s -= eta(i) * eta(k) * f;
          G(k, i, j) = s;
        }
  }

  double L_;
  double c_;
  int axis_;
};

/// [0, T] x S^2 with g = -dt^2 + round metric, chart (t, theta, phi).
///
/// Chart 1 is a rotated copy whose poles sit on the equator of chart 0; the
/// metric has the same form in both, so only the transition maps differ.
class Cylinder final : public MetricModel {
 public:
  explicit Cylinder(double T = 3.0) : MetricModel(3), T_(T) {
    if (!(T > 0)) throw Error(ErrorKind::model_definition, "cylinder height must be positive");
  }

  std::string name() const override { return "cylinder"; }
  ModelParams params() const override { return {{"n", 3}, {"T", T_}}; }
  double height() const { return T_; }

  Mat metric(const Vec& x) const override {
    Mat g = Mat::Zero(3, 3);
    const double s = std::sin(x[1]);
    g(0, 0) = -1.0;
    g(1, 1) = 1.0;
    g(2, 2) = s * s;
    return g;
  }

  void christoffel(const Vec& x, Christoffel& out) const override {
    out.resize(3);
    const double s = std::sin(x[1]), c = std::cos(x[1]);
    out(1, 2, 2) = -s * c;
    out(2, 1, 2) = c / s;
    out(2, 2, 1) = c / s;
  }

  void christoffel_derivative(const Vec& x, ChristoffelDerivative& out) const override {
    out.resize(3);
    const double s = std::sin(x[1]);
    out(1, 2, 2, 1) = -std::cos(2.0 * x[1]);
    out(2, 1, 2, 1) = -1.0 / (s * s);
    out(2, 2, 1, 1) = -1.0 / (s * s);
  }

  Vec time_orientation(const Vec&) const override { return Vec::Unit(3, 0); }

  // The caps are disjoint, so the distance to the nearest cap is already
  // smooth on a neighbourhood of the boundary.
  double boundary_function(const Vec& x) const override { return std::min(x[0], T_ - x[0]); }
  Vec boundary_gradient(const Vec& x) const override {
    Vec g = Vec::Zero(3);
    g[0] = x[0] <= 0.5 * T_ ? 1.0 : -1.0;
    return g;
  }

  ChartBox chart_box() const override {
    Vec lo(3), hi(3);
    lo << -0.5 * T_ - 1.0, 0.0, -1e9;
    hi << 1.5 * T_ + 1.0, std::numbers::pi, 1e9;
    return ChartBox{lo, hi};
  }

  Vec sample_candidate(std::mt19937_64& rng) const override {
    constexpr double pole_gap = 1e-2;
    std::uniform_real_distribution<double> U(0.0, 1.0);
    Vec x(3);
    x[0] = U(rng) * T_;
    // uniform on the sphere restricted to |theta - pole| >= pole_gap
    const double zmax = std::cos(pole_gap);
    x[1] = std::acos(-zmax + 2.0 * zmax * U(rng));
    x[2] = -std::numbers::pi + 2.0 * std::numbers::pi * U(rng);
    return x;
  }

  int chart_count() const override { return 2; }
  int preferred_chart(const Vec& x, int chart) const override {
    return std::abs(std::sin(x[1])) < 0.25 ? 1 - chart : chart;
  }

  Vec chart_map(int from, int to, const Vec& x) const override {
    if (from == to) return x;
    const Eigen::Vector3d u = unit(from, x[1], x[2]);
    Vec y(3);
    y[0] = x[0];
    angles(to, u, y[1], y[2]);
    return y;
  }

  Mat chart_jacobian(int from, int to, const Vec& x) const override {
    Mat J = Mat::Identity(3, 3);
    if (from == to) return J;
    const Vec y = chart_map(from, to, x);
    Eigen::Matrix<double, 3, 2> Da = tangent_basis(from, x[1], x[2]);
    Eigen::Matrix<double, 3, 2> Db = tangent_basis(to, y[1], y[2]);
    const double sb = std::sin(y[1]);
    // v_to^theta = w . d_theta u,  v_to^phi = w . d_phi u / sin^2
    J(1, 1) = Db.col(0).dot(Da.col(0));
    J(1, 2) = Db.col(0).dot(Da.col(1));
    J(2, 1) = Db.col(1).dot(Da.col(0)) / (sb * sb);
    J(2, 2) = Db.col(1).dot(Da.col(1)) / (sb * sb);
    return J;
  }

  double max_step_hint() const override { return 0.1; }

  Vec canonical(const Vec& x) const override {
    Vec y = x;
    y[2] = std::remainder(x[2], 2.0 * std::numbers::pi);
    return y;
  }

  Vec embed_point(const Vec& x) const override {
    const Eigen::Vector3d u = unit(0, x[1], x[2]);
    Vec e(4);
    e << x[0], u[0], u[1], u[2];
    return e;
  }

  Vec embed_vector(const Vec& x, const Vec& v) const override {
    const Eigen::Matrix<double, 3, 2> D = tangent_basis(0, x[1], x[2]);
    const Eigen::Vector3d w = D.col(0) * v[1] + D.col(1) * v[2];
    Vec e(4);
    e << v[0], w[0], w[1], w[2];
    return e;
  }

  /// Inverse of embed_point for points on the cylinder (|u| = 1).
  Vec from_embedded(const Vec& e) const override {
    Eigen::Vector3d u(e[1], e[2], e[3]);
    u.normalize();
    Vec x(3);
    x[0] = e[0];
    angles(0, u, x[1], x[2]);
    return x;
  }

 private:
  // chart 0: u = (s c_phi, s s_phi, c); chart 1: u = (c, s c_phi, s s_phi)
  static Eigen::Vector3d unit(int chart, double th, double ph) {
    const double s = std::sin(th), c = std::cos(th);
    const Eigen::Vector3d a(s * std::cos(ph), s * std::sin(ph), c);
    return chart == 0 ? a : Eigen::Vector3d(a[2], a[0], a[1]);
  }

  static Eigen::Matrix<double, 3, 2> tangent_basis(int chart, double th, double ph) {
    const double s = std::sin(th), c = std::cos(th);
    Eigen::Vector3d dth(c * std::cos(ph), c * std::sin(ph), -s);
    Eigen::Vector3d dph(-s * std::sin(ph), s * std::cos(ph), 0.0);
    if (chart == 1) {
      dth = Eigen::Vector3d(dth[2], dth[0], dth[1]);
      dph = Eigen::Vector3d(dph[2], dph[0], dph[1]);
    }
    Eigen::Matrix<double, 3, 2> D;
    D.col(0) = dth;
    D.col(1) = dph;
    return D;
  }

  static void angles(int chart, const Eigen::Vector3d& u, double& th, double& ph) {
    const Eigen::Vector3d a = chart == 0 ? u : Eigen::Vector3d(u[1], u[2], u[0]);
    th = std::acos(std::clamp(a[2], -1.0, 1.0));
    ph = std::atan2(a[1], a[0]);
  }

  double T_;
};

/// Builds a model from its CLI name and parameter list.
inline ModelPtr make_model(const std::string& name, const ModelParams& p = {}) {
  using detail::param;
  if (name == "minkowski-block" || name == "minkowski")
    return std::make_shared<MinkowskiBlock>(static_cast<int>(param(p, "n", 3)), param(p, "L", 1.0));
  if (name == "conformal-flat" || name == "conformal")
    return std::make_shared<ConformalFlat>(static_cast<int>(param(p, "n", 3)), param(p, "L", 1.0),
                                           param(p, "c", 0.1), static_cast<int>(param(p, "axis", 1)));
  if (name == "cylinder") {
    if (param(p, "n", 3) != 3) throw Error(ErrorKind::model_definition, "cylinder model is only available for n = 3");
    return std::make_shared<Cylinder>(param(p, "T", 3.0));
  }
  throw Error(ErrorKind::model_definition, "unknown model '" + name + "'");
}

// ---------------------------------------------------------------------------
// Pointwise operations

inline Mat metric_at(const MetricModel& m, const Vec& x) {
  if (x.size() != m.dim() || !m.chart_box().contains(x))
    throw Error(ErrorKind::domain, "point outside chart box");
  return m.metric(x);
}

struct CausalTag {
  Causal causal;
  TimeDir direction;
  bool ill_conditioned = false;
};

inline CausalTag causal_classify(const MetricModel& m, const PointVector& pv, const Tolerances& tol = {}) {
  const double n2 = pv.v.squaredNorm();
  if (n2 == 0.0) throw Error(ErrorKind::zero_vector, "cannot classify the zero vector");
  const Mat g = m.metric(pv.x);
  const double q = pv.v.dot(g * pv.v);
  CausalTag tag{};
  if (std::abs(q) <= tol.classification * n2) {
    tag.causal = Causal::lightlike;
    tag.ill_conditioned = n2 < 1e-16;
  } else {
    tag.causal = q < 0 ? Causal::timelike : Causal::spacelike;
  }
  tag.direction = pv.v.dot(g * m.time_orientation(pv.x)) < 0 ? TimeDir::future : TimeDir::past;
  return tag;
}

inline PointVector normalize_timelike(const MetricModel& m, const PointVector& pv, const Tolerances& tol = {}) {
  if (causal_classify(m, pv, tol).causal != Causal::timelike)
    throw Error(ErrorKind::classification, "normalize_timelike needs a timelike vector");
  const double q = pv.v.dot(m.metric(pv.x) * pv.v);
  return PointVector{pv.x, pv.v / std::sqrt(-q)};
}

/// g-orthonormal frame {E0, ..., E_{n-1}} at x with E0 future unit timelike.
inline std::vector<Vec> orthonormal_frame(const MetricModel& m, const Vec& x) {
  const int n = m.dim();
  const Mat g = m.metric(x);
  std::vector<Vec> E;
  std::vector<double> sign;
  Vec t = m.time_orientation(x);
  t /= std::sqrt(-t.dot(g * t));
  E.push_back(t);
  sign.push_back(-1.0);
  for (int i = 0; i < n && static_cast<int>(E.size()) < n; ++i) {
    Vec c = Vec::Unit(n, i);
    for (int pass = 0; pass < 2; ++pass)
      for (size_t j = 0; j < E.size(); ++j) c -= sign[j] * c.dot(g * E[j]) * E[j];
    const double q = c.dot(g * c);
    if (q > 1e-10 * c.squaredNorm() && q > 1e-20) {
      E.push_back(c / std::sqrt(q));
      sign.push_back(1.0);
    }
  }
  return E;
}

/// Spacelike orthonormal basis of the quotient v-perp / R v for lightlike v.
inline std::vector<Vec> screen_frame(const MetricModel& m, const PointVector& pv, const Tolerances& tol = {}) {
  if (causal_classify(m, pv, tol).causal != Causal::lightlike)
    throw Error(ErrorKind::classification, "screen_frame needs a lightlike vector");
  const int n = m.dim();
  const Mat g = m.metric(pv.x);
  const std::vector<Vec> E = orthonormal_frame(m, pv.x);
  // spatial part w of v in the frame; the screen is the spatial complement of w
  Vec w = pv.v + pv.v.dot(g * E[0]) * E[0];
  w /= std::sqrt(w.dot(g * w));
  std::vector<Vec> S{w};
  for (int i = 1; i < n && static_cast<int>(S.size()) < n - 1; ++i) {
    Vec c = E[i];
    for (int pass = 0; pass < 2; ++pass)
      for (const Vec& s : S) c -= c.dot(g * s) * s;
    const double q = c.dot(g * c);
    if (q > 1e-8) S.push_back(c / std::sqrt(q));
  }
  return std::vector<Vec>(S.begin() + 1, S.end());
}

struct BoundaryEval {
  double F;
  Vec grad;
};

inline BoundaryEval boundary_eval(const MetricModel& m, const Vec& x) {
  if (!m.chart_box().contains(x)) throw Error(ErrorKind::domain, "point outside chart box");
  return BoundaryEval{m.boundary_function(x), m.boundary_gradient(x)};
}

/// Tags a boundary vector from its geometry. Throws if x is off the boundary.
inline BoundaryVector make_boundary_vector(const MetricModel& m, const PointVector& pv, const Tolerances& tol = {}) {
  const BoundaryEval be = boundary_eval(m, pv.x);
  if (std::abs(be.F) > tol.boundary) throw Error(ErrorKind::domain, "base point is not on the boundary");
  const CausalTag tag = causal_classify(m, pv, tol);
  const Mat g = m.metric(pv.x);
  const Vec gradSharp = g.ldlt().solve(be.grad);
  const double dF = be.grad.dot(pv.v);
  BoundaryVector bv;
  bv.pv = pv;
  bv.causal = tag.causal;
  bv.direction = tag.direction;
  bv.transversal = std::abs(dF) > tol.transversality * pv.v.norm() * gradSharp.norm();
  return bv;
}

}  // namespace causal_lens
