#pragma once

// Sky shadows from lightlike scattering data (maximal cliques of the
// incidence relation), the structural hypothesis check, and the conformal
// map between two models built from Psi^-1 on shared shadow data.

#include "causal_lens/boundary_data.hpp"
#include "causal_lens/matching.hpp"

#include <map>
#include <set>

namespace causal_lens {

// ---------------------------------------------------------------------------
// Hypothesis check: no refocusing of lightlike geodesics inside the manifold

struct HypothesisOptions {
  int points = 12;
  int directions = 8;
  std::uint64_t seed = 99;
  EngineOptions engine{};
};

namespace detail {

/// Affine distance to the first point conjugate to the start along the
/// lightlike geodesic of zeta (in the given direction), if it comes before
/// the boundary.
inline std::optional<double> first_conjugate(const MetricModel& m, const PointVector& zeta, FlowDir dir,
                                             const EngineOptions& opt) {
  const int n = m.dim(), k = n - 2;
  const double sign = dir == FlowDir::forward ? 1.0 : -1.0;
  detail::GeodesicSystem sys(m, k, detail::Payload::jacobi);
  Vec y = sys.pack(zeta.x, zeta.v, screen_frame(m, zeta, opt.tol));
  sys.set_payload_matrix(y, 0, Mat::Zero(k, k));
  sys.set_payload_matrix(y, 1, sign * Mat::Identity(k, k));
  detail::Tracer tr(sys, opt, true);
  tr.start(0.0, y);
  const detail::EventFn F = [&](const Vec& z) { return m.boundary_function(z.segment(0, n)); };
  const detail::EventFn detA = [&](const Vec& z) { return sys.payload_matrix(z, 0).determinant(); };
  const int ev = tr.advance(sign * detail::budget_for(m, opt, zeta), {F, detA});
  if (ev == 1) return std::abs(tr.s());
  return std::nullopt;
}

}  // namespace detail

/// Samples lightlike geodesics and refuses the model if any of them carries a
/// pair of conjugate points (the generic way two lightlike geodesics from one
/// point meet again). Throws ErrorKind::hypothesis.
inline void check_lightlike_hypotheses(const MetricModel& m, const HypothesisOptions& opt = {}) {
  const auto pts = sample_interior(m, static_cast<size_t>(opt.points), opt.seed);
  for (size_t i = 0; i < pts.size(); ++i) {
    const PointFans f = make_fans(m, pts[i], FanSizes{0, opt.directions}, nullptr);
    for (const Vec& k : f.lightlike)
      for (FlowDir dir : {FlowDir::forward, FlowDir::backward})
        if (auto d = detail::first_conjugate(m, {pts[i], k}, dir, opt.engine))
          throw Error(ErrorKind::hypothesis,
                      "lightlike geodesics refocus inside the manifold (conjugate point at affine distance " +
                          std::to_string(*d) + "); sky shadows do not separate points");
  }
}

// ---------------------------------------------------------------------------
// Cliques

struct CliqueOptions {
  double match_tol = 1e-5;
  size_t node_cap = 1'000'000;
  bool check_hypotheses = true;
  HypothesisOptions hypotheses{};
};

struct ShadowSet {
  std::vector<int> members;             // xi ids
  std::vector<BoundaryVector> vectors;  // representatives, parallel to members
  std::optional<PointId> point_id;      // when every member carries the same id
};

struct CliqueResult {
  std::vector<ShadowSet> shadows;
  size_t universe = 0;    // number of distinct xi
  size_t edges = 0;
  size_t nodes_visited = 0;
};

namespace detail {

/// Maximal cliques of an undirected graph: Bron-Kerbosch with pivoting,
/// outer loop in degeneracy order.
class CliqueEnumerator {
 public:
  CliqueEnumerator(const std::vector<std::set<int>>& adj, size_t cap) : adj_(adj), cap_(cap) {}

  std::vector<std::vector<int>> run() {
    for (int v : degeneracy_order()) {
      std::vector<int> P, X;
      for (int w : adj_[static_cast<size_t>(v)]) (done_.count(w) ? X : P).push_back(w);
      std::vector<int> R{v};
      expand(R, P, X);
      done_.insert(v);
    }
    return cliques_;
  }

  size_t nodes() const { return nodes_; }

 private:
  std::vector<int> degeneracy_order() const {
    const size_t n = adj_.size();
    std::vector<size_t> deg(n);
    std::set<std::pair<size_t, int>> q;
    for (size_t v = 0; v < n; ++v) {
      deg[v] = adj_[v].size();
      q.insert({deg[v], static_cast<int>(v)});
    }
    std::vector<bool> removed(n, false);
    std::vector<int> order;
    while (!q.empty()) {
      const int v = q.begin()->second;
      q.erase(q.begin());
      removed[static_cast<size_t>(v)] = true;
      order.push_back(v);
      for (int w : adj_[static_cast<size_t>(v)]) {
        if (removed[static_cast<size_t>(w)]) continue;
        q.erase({deg[static_cast<size_t>(w)], w});
        q.insert({--deg[static_cast<size_t>(w)], w});
      }
    }
    return order;
  }

  void expand(std::vector<int>& R, std::vector<int> P, std::vector<int> X) {
    if (++nodes_ > cap_) throw Error(ErrorKind::budget, "clique enumeration exceeded its node cap");
    if (P.empty()) {
      if (X.empty()) {
        std::vector<int> c = R;
        std::sort(c.begin(), c.end());
        cliques_.push_back(std::move(c));
      }
      return;
    }
    // pivot: vertex of P u X with most neighbours in P
    int pivot = -1;
    size_t best = 0;
    for (const auto* S : {&P, &X})
      for (int u : *S) {
        size_t c = 0;
        for (int w : P) c += adj_[static_cast<size_t>(u)].count(w);
        if (pivot < 0 || c > best) {
          pivot = u;
          best = c;
        }
      }
    std::vector<int> cand;
    for (int v : P)
      if (!adj_[static_cast<size_t>(pivot)].count(v)) cand.push_back(v);
    for (int v : cand) {
      const auto& Nv = adj_[static_cast<size_t>(v)];
      std::vector<int> P2, X2;
      for (int w : P)
        if (Nv.count(w)) P2.push_back(w);
      for (int w : X)
        if (Nv.count(w)) X2.push_back(w);
      R.push_back(v);
      expand(R, P2, X2);
      R.pop_back();
      P.erase(std::find(P.begin(), P.end(), v));
      X.push_back(v);
    }
  }

  const std::vector<std::set<int>>& adj_;
  size_t cap_;
  size_t nodes_ = 0;
  std::set<int> done_;
  std::vector<std::vector<int>> cliques_;
};

}  // namespace detail

/// Shadow sets recovered from unbroken (S) and broken (B) lightlike
/// scattering pairs: xi1 ~ xi2 iff (xi1, eta2) and (xi2, eta1) are in B, where
/// eta_i is the S-partner of xi_i. Maximal cliques with at least two members
/// are returned.
inline CliqueResult scattering_to_sky_shadows(const MetricModel& m, const std::vector<ScatterPair>& pairs,
                                              const CliqueOptions& opt = {}) {
  if (opt.check_hypotheses) check_lightlike_hypotheses(m, opt.hypotheses);
  std::vector<Vec> xk, ek;
  for (const auto& p : pairs) {
    xk.push_back(vector_key(m, p.xi.pv));
    ek.push_back(vector_key(m, p.eta.pv));
  }
  const auto xid = cluster_features(xk, opt.match_tol);
  const auto eid = cluster_features(ek, opt.match_tol);
  int nx = 0;
  for (int x : xid) nx = std::max(nx, x + 1);

  std::vector<int> partner(static_cast<size_t>(nx), -1);
  std::vector<const ScatterPair*> rep(static_cast<size_t>(nx), nullptr);
  std::vector<std::set<std::optional<PointId>>> ids(static_cast<size_t>(nx));
  std::set<std::pair<int, int>> B;
  for (size_t i = 0; i < pairs.size(); ++i) {
    const auto x = static_cast<size_t>(xid[i]);
    if (!rep[x]) rep[x] = &pairs[i];
    ids[x].insert(pairs[i].point_id);
    if (pairs[i].kind == ScatterKind::unbroken) {
      if (partner[x] >= 0 && partner[x] != eid[i])
        throw Error(ErrorKind::data_inconsistency, "boundary vector with two different unbroken partners");
      partner[x] = eid[i];
      B.insert({xid[i], eid[i]});
    } else {
      B.insert({xid[i], eid[i]});
    }
  }
  for (int x = 0; x < nx; ++x)
    if (partner[static_cast<size_t>(x)] < 0)
      throw Error(ErrorKind::data_inconsistency, "boundary vector without an unbroken partner (xi id " +
                                                     std::to_string(x) + ")");

  // candidates for x ~ y: y's partner appears among x's broken continuations
  std::vector<std::vector<int>> out_etas(static_cast<size_t>(nx));
  std::map<int, std::vector<int>> by_partner;
  for (int x = 0; x < nx; ++x) by_partner[partner[static_cast<size_t>(x)]].push_back(x);
  for (const auto& [x, e] : B) out_etas[static_cast<size_t>(x)].push_back(e);

  CliqueResult res;
  res.universe = static_cast<size_t>(nx);
  std::vector<std::set<int>> adj(static_cast<size_t>(nx));
  for (int x = 0; x < nx; ++x)
    for (int e : out_etas[static_cast<size_t>(x)]) {
      auto it = by_partner.find(e);
      if (it == by_partner.end()) continue;
      for (int y : it->second)
        if (y != x && B.count({y, partner[static_cast<size_t>(x)]})) adj[static_cast<size_t>(x)].insert(y);
    }
  for (const auto& a : adj) res.edges += a.size();
  res.edges /= 2;

  detail::CliqueEnumerator en(adj, opt.node_cap);
  auto cliques = en.run();
  res.nodes_visited = en.nodes();
  std::sort(cliques.begin(), cliques.end());
  for (auto& c : cliques) {
    if (c.size() < 2) continue;
    ShadowSet s;
    s.members = c;
    std::set<std::optional<PointId>> pid;
    for (int x : c) {
      s.vectors.push_back(rep[static_cast<size_t>(x)]->xi);
      pid.insert(ids[static_cast<size_t>(x)].begin(), ids[static_cast<size_t>(x)].end());
    }
    if (pid.size() == 1) s.point_id = *pid.begin();
    res.shadows.push_back(std::move(s));
  }
  return res;
}

// ---------------------------------------------------------------------------
// Conformal map

struct ConformalOptions {
  double map_tol = 1e-4;  // fiber spread allowed (embedded chart units)
  int apex_iterations = 40;
  EngineOptions engine{};
};

struct MatchedPair {
  Vec p1, p2;
  double factor = 0.0;  // g2 ~ factor * g1 at the matched point
  double spread = 0.0;  // largest fiber spread over both models
  std::optional<PointId> point_id;
};

namespace detail {

/// Embedded points along the future geodesic of a boundary vector, until it
/// leaves again, at roughly `count` samples per unit chart length.
inline std::vector<Vec> generator_samples(const MetricModel& m, const PointVector& pv, const ConformalOptions& opt,
                                          double per_unit = 64.0) {
  const int n = m.dim();
  detail::GeodesicSystem sys(m, 0, detail::Payload::none);
  detail::Tracer tr(sys, opt.engine, false);
  tr.start(0.0, sys.pack(pv.x, pv.v, {}));
  const detail::EventFn F = [&](const Vec& z) { return m.boundary_function(z.segment(0, n)); };
  const double ds = 1.0 / (per_unit * m.embed_vector(pv.x, pv.v).norm());
  const double budget = detail::budget_for(m, opt.engine, pv);
  std::vector<Vec> out;
  for (double s = ds; s < budget; s += ds) {
    const int ev = tr.advance(s, {F});
    if (ev == 0) break;
    out.push_back(m.embed_point(tr.state().segment(0, n)));
  }
  return out;
}

/// Point where the lightlike geodesics of a shadow concur: fixed point of
/// "average of the closest approaches". Returns the point and the spread.
inline std::pair<Vec, double> shadow_apex(const MetricModel& m, const std::vector<ShadowVector>& vs,
                                          const ConformalOptions& opt) {
  // start: the sample of the first generator that comes closest to all others
  std::vector<std::vector<Vec>> samples;
  for (const auto& v : vs) samples.push_back(generator_samples(m, v.eta.pv, opt));
  Vec c;
  double best = std::numeric_limits<double>::infinity();
  for (const Vec& e : samples[0]) {
    double worst = 0.0;
    for (size_t j = 1; j < samples.size() && worst < best; ++j) {
      double near = std::numeric_limits<double>::infinity();
      for (const Vec& f : samples[j]) near = std::min(near, (e - f).squaredNorm());
      worst = std::max(worst, near);
    }
    if (worst < best) {
      best = worst;
      c = e;
    }
  }
  if (c.size() == 0) throw Error(ErrorKind::not_well_defined, "shadow generator has no interior samples");
  c = m.from_embedded(c);
  double spread = std::numeric_limits<double>::infinity();
  for (int it = 0; it < opt.apex_iterations; ++it) {
    Vec mean = Vec::Zero(m.embed_point(c).size());
    double worst = 0.0;
    for (const auto& v : vs) {
      const Approach a = closest_approach(m, v.eta.pv, c, FlowDir::forward, opt.engine);
      if (!a.reached) throw Error(ErrorKind::not_well_defined, "shadow generator leaves before meeting the apex");
      mean += m.embed_point(a.at.x);
      worst = std::max(worst, a.distance);
    }
    const Vec next = m.from_embedded(mean / static_cast<double>(vs.size()));
    const double move = (m.embed_point(next) - m.embed_point(c)).norm();
    c = next;
    spread = worst;
    if (move < 1e-12) break;
  }
  return {c, spread};
}

struct FiberImage {
  std::vector<PointVector> apexes;  // Psi^-1 of every vector
  Vec mean;
  double spread = 0.0;
};

inline FiberImage fiber_image(const MetricModel& m, const SkyShadowSample& s, bool use_attached,
                              const ConformalOptions& opt) {
  FiberImage fi;
  std::vector<Mat> bs;
  bool have_all = use_attached;
  for (const auto& v : s.vectors) have_all = have_all && v.b.has_value();
  if (have_all) {
    for (const auto& v : s.vectors) bs.push_back(*v.b);
  } else {
    const auto [apex, spread] = shadow_apex(m, s.vectors, opt);
    if (spread > opt.map_tol)
      throw Error(ErrorKind::not_well_defined,
                  "fiber disagreement: shadow generators miss a common point by " + std::to_string(spread));
    for (const auto& v : s.vectors) bs.push_back(weingarten_of_cone(m, apex, v.eta, opt.engine, opt.map_tol).b);
  }
  RiccatiOptions ro;
  ro.engine = opt.engine;
  Vec mean = Vec::Zero(m.embed_point(s.vectors[0].eta.pv.x).size());
  for (size_t i = 0; i < s.vectors.size(); ++i) {
    fi.apexes.push_back(psi_inverse(m, s.vectors[i].eta.pv, bs[i], ro));
    mean += m.embed_point(fi.apexes.back().x);
  }
  mean /= static_cast<double>(s.vectors.size());
  for (const auto& a : fi.apexes) fi.spread = std::max(fi.spread, (m.embed_point(a.x) - mean).norm());
  fi.mean = m.from_embedded(mean);
  return fi;
}

}  // namespace detail

/// Matches every shadow's Psi^-1 fiber in model 1 (attached Weingarten maps
/// when present) with the fiber of the same boundary data read in model 2,
/// and estimates the conformal factor on the recovered lightlike directions.
/// Throws not_well_defined when a fiber does not collapse to one point.
inline std::vector<MatchedPair> build_conformal_map(const MetricModel& m1, const MetricModel& m2,
                                                    const std::vector<SkyShadowSample>& shadows,
                                                    const ConformalOptions& opt = {}) {
  if (m1.dim() != m2.dim()) throw Error(ErrorKind::not_well_defined, "models have different dimensions");
  std::vector<MatchedPair> out(shadows.size());
  parallel_for(shadows.size(), [&](size_t i) {
    const SkyShadowSample& s = shadows[i];
    if (s.vectors.size() < 2) throw Error(ErrorKind::data_inconsistency, "shadow with fewer than two vectors");
    const detail::FiberImage f1 = detail::fiber_image(m1, s, true, opt);
    detail::FiberImage f2;
    try {
      // model 2 sees the same boundary vectors; its own Weingarten maps come
      // from its own geometry
      SkyShadowSample bare = s;
      for (auto& v : bare.vectors) {
        v.b.reset();
        v.eta = detail::tag_boundary(m2, v.eta.pv, opt.engine.tol);
        if (v.eta.causal != Causal::lightlike || !v.eta.transversal)
          throw Error(ErrorKind::not_well_defined, "fiber disagreement: shadow vector is not a transverse lightlike vector of model 2");
      }
      f2 = detail::fiber_image(m2, bare, false, opt);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::not_well_defined) throw;
      throw Error(ErrorKind::not_well_defined, std::string("fiber disagreement in model 2: ") + e.what());
    }
    MatchedPair mp;
    mp.p1 = f1.mean;
    mp.p2 = f2.mean;
    mp.spread = std::max(f1.spread, f2.spread);
    mp.point_id = s.point_id;
    if (mp.spread > opt.map_tol)
      throw Error(ErrorKind::not_well_defined,
                  "fiber disagreement: shadow maps to points spread by " + std::to_string(mp.spread));

    // factor from cross inner products of the unit-normalized lightlike directions
    const Mat g1 = m1.metric(mp.p1), g2 = m2.metric(mp.p2);
    double num = 0.0, den = 0.0;
    for (size_t a = 0; a < f1.apexes.size(); ++a)
      for (size_t b = a + 1; b < f1.apexes.size(); ++b) {
        const Vec u1 = f1.apexes[a].v.normalized(), w1 = f1.apexes[b].v.normalized();
        const Vec u2 = f2.apexes[a].v.normalized(), w2 = f2.apexes[b].v.normalized();
        const double x = u1.dot(g1 * w1), y = u2.dot(g2 * w2);
        num += x * y;
        den += x * x;
      }
    mp.factor = den > 0 ? num / den : std::numeric_limits<double>::quiet_NaN();
    out[i] = mp;
  });
  return out;
}

}  // namespace causal_lens
