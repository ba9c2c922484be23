#pragma once

// Reconstruction of interior points from time-probe data: shadow classes of
// (xi, t) pairs, the shifted-membership equivalence, connectivity grouping,
// metric fits on the recovered unit timelike fans, and extraction of
// time-probe triples from broken lens ladders.

#include "causal_lens/boundary_data.hpp"
#include "causal_lens/matching.hpp"

#include <map>
#include <set>

namespace causal_lens {

inline std::vector<double> default_tau_grid() {
  std::vector<double> g;
  for (int j = 0; j < 16; ++j) g.push_back((j - 7) * 0.0625);
  return g;
}

struct ReconOptions {
  double match_tol = 1e-5;   // boundary vectors: base + normalized direction, max-norm
  double length_tol = 1e-5;  // lengths t
  std::vector<double> tau_grid = default_tau_grid();
  int knn = 4;
  double merge_factor = 2.0;  // bridge radius for split strips, in units of the k-th neighbour distance
  double fit_tol = 1e-6;
  bool chart_aware = true;    // recover tangent fans by flowing xi for length t
  EngineOptions engine{};
};

struct OmegaElement {
  BoundaryVector xi;
  double t = 0.0;
  int xi_id = -1;
  std::optional<PointId> point_id;  // carried through from the records when present
};

struct SigmaClass {
  std::string key;
  std::vector<int> members;  // omega indices
  std::vector<int> sigma;    // eta ids, sorted
};

/// Immutable index over a time-probe dataset.
class TimeProbeIndex {
 public:
  TimeProbeIndex(const MetricModel& m, const std::vector<TimeProbeTriple>& recs, const ReconOptions& opt = {})
      : length_tol_(opt.length_tol) {
    std::vector<Vec> xk, ek;
    xk.reserve(recs.size());
    ek.reserve(recs.size());
    for (const auto& r : recs) {
      xk.push_back(vector_key(m, r.xi.pv));
      ek.push_back(vector_key(m, r.eta.pv));
    }
    const auto xid = cluster_features(xk, opt.match_tol);
    const auto eid = cluster_features(ek, opt.match_tol);
    int n_eta = 0;
    for (int e : eid) n_eta = std::max(n_eta, e + 1);
    etas_.resize(static_cast<size_t>(n_eta));
    for (size_t i = 0; i < recs.size(); ++i) etas_[static_cast<size_t>(eid[i])] = recs[i].eta;

    // omega elements: same xi id and t within length_tol
    std::map<int, std::vector<size_t>> by_xi;
    for (size_t i = 0; i < recs.size(); ++i) by_xi[xid[i]].push_back(i);
    std::vector<std::set<int>> sig;
    for (auto& [x, idx] : by_xi) {
      std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return recs[a].t < recs[b].t; });
      auto& line = lines_[x];
      double anchor = -1.0;
      for (size_t i : idx) {
        if (line.empty() || recs[i].t - anchor > length_tol_) {
          anchor = recs[i].t;
          omegas_.push_back({recs[i].xi, recs[i].t, x, recs[i].point_id});
          sig.emplace_back();
          line.push_back({recs[i].t, static_cast<int>(omegas_.size() - 1)});
        }
        sig[static_cast<size_t>(line.back().second)].insert(eid[i]);
      }
    }
    for (auto& s : sig) sigma_.emplace_back(s.begin(), s.end());
  }

  const std::vector<OmegaElement>& omegas() const { return omegas_; }
  const std::vector<int>& sigma(int omega) const { return sigma_[static_cast<size_t>(omega)]; }
  const std::vector<BoundaryVector>& etas() const { return etas_; }

  /// Omega element with this xi id at length t (within length_tol), if any.
  std::optional<int> find(int xi_id, double t) const {
    auto it = lines_.find(xi_id);
    if (it == lines_.end()) return std::nullopt;
    const auto& line = it->second;
    auto lo = std::lower_bound(line.begin(), line.end(), t - length_tol_,
                               [](const std::pair<double, int>& a, double v) { return a.first < v; });
    if (lo != line.end() && std::abs(lo->first - t) <= length_tol_) return lo->second;
    return std::nullopt;
  }

 private:
  double length_tol_;
  std::vector<OmegaElement> omegas_;
  std::vector<std::vector<int>> sigma_;
  std::vector<BoundaryVector> etas_;
  std::map<int, std::vector<std::pair<double, int>>> lines_;
};

/// Shifted-membership equivalence: for every tau in the grid, the eta-sets at
/// (xi, t + tau) and (zeta, s + tau) coincide (both possibly empty).
inline bool asymp_equiv(const TimeProbeIndex& idx, int a, int b, const std::vector<double>& tau_grid) {
  if (tau_grid.empty()) throw Error(ErrorKind::config, "empty tau grid");
  static const std::vector<int> none;
  const auto& oa = idx.omegas()[static_cast<size_t>(a)];
  const auto& ob = idx.omegas()[static_cast<size_t>(b)];
  for (double tau : tau_grid) {
    const auto fa = idx.find(oa.xi_id, oa.t + tau);
    const auto fb = idx.find(ob.xi_id, ob.t + tau);
    const auto& sa = fa ? idx.sigma(*fa) : none;
    const auto& sb = fb ? idx.sigma(*fb) : none;
    if (sa != sb) return false;
  }
  return true;
}

inline std::vector<SigmaClass> sigma_partition(const TimeProbeIndex& idx) {
  std::map<std::vector<int>, std::vector<int>> classes;
  for (size_t i = 0; i < idx.omegas().size(); ++i) classes[idx.sigma(static_cast<int>(i))].push_back(static_cast<int>(i));
  std::vector<SigmaClass> out;
  for (auto& [sig, members] : classes) {
    SigmaClass c;
    for (size_t i = 0; i < sig.size(); ++i) c.key += (i ? "," : "") + std::to_string(sig[i]);
    c.members = members;
    c.sigma = sig;
    out.push_back(std::move(c));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metric fit

struct MetricFit {
  Mat Q;
  double residual = 0.0;  // RMS of Q(u,u) + 1
};

/// Least-squares symmetric form with Q(u,u) = -1 on the fan.
inline MetricFit fit_metric(const std::vector<Vec>& fan, double fit_tol = 1e-6) {
  if (fan.empty()) throw Error(ErrorKind::underdetermined, "empty fan");
  const int n = static_cast<int>(fan[0].size());
  const int unknowns = n * (n + 1) / 2;
  if (static_cast<int>(fan.size()) < unknowns + 2)
    throw Error(ErrorKind::underdetermined, "fan has " + std::to_string(fan.size()) + " vectors, need " +
                                                std::to_string(unknowns + 2));
  Mat A(fan.size(), unknowns);
  for (size_t r = 0; r < fan.size(); ++r) {
    int c = 0;
    for (int i = 0; i < n; ++i)
      for (int j = i; j < n; ++j) A(static_cast<Eigen::Index>(r), c++) = (i == j ? 1.0 : 2.0) * fan[r][i] * fan[r][j];
  }
  const Vec rhs = -Vec::Ones(static_cast<Eigen::Index>(fan.size()));
  Eigen::JacobiSVD<Mat> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vec sv = svd.singularValues();
  if (sv[sv.size() - 1] <= 1e-10 * sv[0]) throw Error(ErrorKind::underdetermined, "fan too flat: rank deficient fit");
  const Vec q = svd.solve(rhs);
  MetricFit f;
  f.Q = Mat::Zero(n, n);
  int c = 0;
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) f.Q(i, j) = f.Q(j, i) = q[c++];
  f.residual = std::sqrt((A * q - rhs).squaredNorm() / static_cast<double>(fan.size()));
  if (!(f.residual <= fit_tol))
    throw Error(ErrorKind::inconsistent_fan, "no form with Q(u,u) = -1 on the fan (residual " +
                                                 std::to_string(f.residual) + ")");
  Eigen::SelfAdjointEigenSolver<Mat> es(f.Q);
  const Vec ev = es.eigenvalues();
  if (!(ev[0] < 0 && ev[1] > 0)) throw Error(ErrorKind::inconsistent_fan, "fitted form is not Lorentzian");
  return f;
}

// ---------------------------------------------------------------------------
// Grouping

struct ReconstructedPoint {
  int label = 0;
  std::vector<int> members;  // omega indices
  std::vector<int> sigma;    // eta ids shared by the members
  std::vector<Vec> tangent_fan;
  Vec position;              // chart-aware mode only
  std::optional<Mat> fitted_g;
  double residual = 0.0;
  std::string fit_error;     // set when the fit was refused
};

struct GroupReport {
  std::vector<OmegaElement> omegas;
  std::vector<ReconstructedPoint> points;
  std::vector<std::string> conflicts;
};

namespace detail {

inline Vec strip_feature(const MetricModel& m, const OmegaElement& o) {
  const Vec k = vector_key(m, o.xi.pv);
  Vec f(k.size() + 1);
  f << k, o.t;
  return f;
}

inline void recover_fan(const MetricModel& m, ReconstructedPoint& p, const std::vector<OmegaElement>& omegas,
                        const ReconOptions& opt) {
  std::vector<Vec> ends;
  for (int i : p.members) {
    const auto& o = omegas[static_cast<size_t>(i)];
    const PointVector u = normalize_timelike(m, o.xi.pv, opt.engine.tol);
    const GeodesicState st = flow(m, {u.x, u.v, 0.0, {}}, o.t, opt.engine);
    ends.push_back(st.x);
    p.tangent_fan.push_back(st.v);
  }
  Vec mean = Vec::Zero(m.embed_point(ends[0]).size());
  for (const Vec& x : ends) mean += m.embed_point(x);
  p.position = m.from_embedded(mean / static_cast<double>(ends.size()));
  try {
    const MetricFit f = fit_metric(p.tangent_fan, opt.fit_tol);
    p.fitted_g = f.Q;
    p.residual = f.residual;
  } catch (const Error& e) {
    p.fit_error = e.what();
  }
}

}  // namespace detail

/// Groups the (xi, t) pairs of a time-probe dataset into reconstructed points.
/// Ambiguous merges are reported in `conflicts` and left unmerged.
inline GroupReport group_points(const MetricModel& m, const std::vector<TimeProbeTriple>& recs,
                                const ReconOptions& opt = {}) {
  if (opt.tau_grid.empty()) throw Error(ErrorKind::config, "empty tau grid");
  const TimeProbeIndex idx(m, recs, opt);
  GroupReport rep;
  rep.omegas = idx.omegas();
  const size_t N = rep.omegas.size();
  UnionFind uf(N);
  std::vector<Vec> feat(N);
  for (size_t i = 0; i < N; ++i) feat[i] = detail::strip_feature(m, rep.omegas[i]);

  for (const SigmaClass& c : sigma_partition(idx)) {
    const auto& M = c.members;
    if (M.size() < 2) continue;
    const size_t k = std::min<size_t>(static_cast<size_t>(std::max(opt.knn, 1)), M.size() - 1);
    std::vector<double> rk(M.size());
    UnionFind local(M.size());
    for (size_t a = 0; a < M.size(); ++a) {
      std::vector<std::pair<double, size_t>> d;
      for (size_t b = 0; b < M.size(); ++b)
        if (b != a) d.push_back({(feat[static_cast<size_t>(M[a])] - feat[static_cast<size_t>(M[b])]).norm(), b});
      std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end());
      rk[a] = d[k - 1].first;
      for (size_t q = 0; q < k; ++q) {
        const size_t b = d[q].second;
        if (asymp_equiv(idx, M[a], M[b], opt.tau_grid))
          local.unite(a, b);
        else
          rep.conflicts.push_back("neighbouring members " + std::to_string(M[a]) + " and " + std::to_string(M[b]) +
                                  " of shadow class [" + c.key + "] are not equivalent");
      }
    }
    // bridge strips that the k-NN graph left apart when they are close enough
    for (bool changed = true; changed;) {
      changed = false;
      for (size_t a = 0; a < M.size(); ++a)
        for (size_t b = a + 1; b < M.size(); ++b) {
          if (local.find(a) == local.find(b)) continue;
          const double d = (feat[static_cast<size_t>(M[a])] - feat[static_cast<size_t>(M[b])]).norm();
          if (d <= opt.merge_factor * std::max(rk[a], rk[b]) && asymp_equiv(idx, M[a], M[b], opt.tau_grid)) {
            local.unite(a, b);
            changed = true;
          }
        }
    }
    std::set<size_t> roots;
    for (size_t a = 0; a < M.size(); ++a) {
      roots.insert(local.find(a));
      uf.unite(static_cast<size_t>(M[a]), static_cast<size_t>(M[local.find(a)]));
    }
    if (roots.size() > 1)
      rep.conflicts.push_back("shadow class [" + c.key + "] splits into " + std::to_string(roots.size()) +
                              " disconnected strips; not merged");
  }

  // groups whose shadow sets overlap without coinciding: merge only if equivalent
  std::map<size_t, std::vector<int>> groups;
  for (size_t i = 0; i < N; ++i) groups[uf.find(i)].push_back(static_cast<int>(i));
  std::map<int, std::set<size_t>> by_eta;
  for (const auto& [root, members] : groups)
    for (int e : idx.sigma(members[0])) by_eta[e].insert(root);
  std::set<std::pair<size_t, size_t>> tested;
  for (const auto& [e, roots] : by_eta) {
    for (auto a = roots.begin(); a != roots.end(); ++a)
      for (auto b = std::next(a); b != roots.end(); ++b) {
        if (!tested.insert({*a, *b}).second) continue;
        const int ra = groups[*a][0], rb = groups[*b][0];
        if (idx.sigma(ra) == idx.sigma(rb)) continue;  // split strips, already reported
        if (asymp_equiv(idx, ra, rb, opt.tau_grid))
          uf.unite(*a, *b);
        else
          rep.conflicts.push_back("groups of omega " + std::to_string(ra) + " and " + std::to_string(rb) +
                                  " share boundary vectors but are not equivalent; not merged");
      }
  }

  std::map<size_t, std::vector<int>> final_groups;
  for (size_t i = 0; i < N; ++i) final_groups[uf.find(i)].push_back(static_cast<int>(i));
  std::vector<std::vector<int>> ordered;
  for (auto& [root, members] : final_groups) ordered.push_back(std::move(members));
  std::sort(ordered.begin(), ordered.end());
  rep.points.resize(ordered.size());
  parallel_for(ordered.size(), [&](size_t g) {
    ReconstructedPoint& p = rep.points[g];
    p.label = static_cast<int>(g);
    p.members = ordered[g];
    p.sigma = idx.sigma(p.members[0]);
    if (opt.chart_aware) detail::recover_fan(m, p, rep.omegas, opt);
  });
  return rep;
}

// ---------------------------------------------------------------------------
// Broken lens ladders -> time-probe triples

struct LensOptions {
  double match_tol = 1e-5;
  double ladder_tol = 1e-3;    // the deepest rung must have |g(eta,eta)|/|eta|_emb^2 below this
  double limit_tol = 1e-4;     // extrapolated |g|/|eta|^2 above this: the limit stays timelike
  double rung_ratio_lo = 2.0;  // consecutive mu ratios accepted when chaining rungs
  double rung_ratio_hi = 8.0;
  double cauchy_growth = 8.0;  // max growth of the rung spacing from one rung to the next
  int min_rungs = 3;
};

/// One ladder: record indices ordered from the deepest (most lightlike) rung up.
struct Ladder {
  std::vector<size_t> rungs;
};

struct LensExtraction {
  std::vector<TimeProbeTriple> triples;
  std::vector<Ladder> ladders;  // accepted ladders, parallel to triples
  std::vector<std::string> warnings;
};

namespace detail {

inline double lightlikeness(const MetricModel& m, const PointVector& pv) {
  // embedded norm, so coordinate singularities of the chart do not skew the ratio
  return std::abs(pv.v.dot(m.metric(pv.x) * pv.v)) / m.embed_vector(pv.x, pv.v).squaredNorm();
}

/// Chart components of an embedded tangent vector at x (least squares).
inline Vec chart_vector(const MetricModel& m, const Vec& x, const Vec& e) {
  const int n = m.dim();
  Mat J(e.size(), n);
  for (int i = 0; i < n; ++i) J.col(i) = m.embed_vector(x, Vec::Unit(n, i));
  return J.colPivHouseholderQr().solve(e);
}

/// Value at h = 0 of the quadratic through (h_i, y_i), i = 0..2.
inline Vec extrapolate0(const double h[3], const Vec y[3]) {
  Vec out = Vec::Zero(y[0].size());
  for (int i = 0; i < 3; ++i) {
    double w = 1.0;
    for (int j = 0; j < 3; ++j)
      if (j != i) w *= (0.0 - h[j]) / (h[i] - h[j]);
    out += w * y[i];
  }
  return out;
}

}  // namespace detail

/// Chains records sharing a xi into Cauchy ladders toward the light cone.
inline std::vector<Ladder> find_ladders(const MetricModel& m, const std::vector<LensTriple>& recs,
                                        const LensOptions& opt, std::vector<std::string>* warnings = nullptr) {
  std::vector<Vec> xk;
  for (const auto& r : recs) xk.push_back(vector_key(m, r.xi.pv));
  const auto xid = cluster_features(xk, opt.match_tol);
  std::map<int, std::vector<size_t>> by_xi;
  for (size_t i = 0; i < recs.size(); ++i) by_xi[xid[i]].push_back(i);

  std::vector<double> mu(recs.size());
  std::vector<Vec> ek(recs.size());
  for (size_t i = 0; i < recs.size(); ++i) {
    mu[i] = detail::lightlikeness(m, recs[i].eta.pv);
    ek[i] = vector_key(m, recs[i].eta.pv);
  }

  std::vector<Ladder> out;
  for (auto& [x, idx] : by_xi) {
    std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return mu[a] < mu[b]; });
    std::vector<bool> used(recs.size(), false);
    for (size_t start : idx) {
      if (used[start] || !(mu[start] <= opt.ladder_tol)) continue;
      Ladder L;
      L.rungs.push_back(start);
      used[start] = true;
      double prev_d = -1.0;
      for (;;) {
        const size_t cur = L.rungs.back();
        size_t best = recs.size();
        double best_d = std::numeric_limits<double>::infinity();
        double best_score = best_d;
        for (size_t c : idx) {
          if (used[c] || !(recs[c].t > recs[cur].t)) continue;
          const double ratio = mu[c] / std::max(mu[cur], 1e-300);
          if (ratio < opt.rung_ratio_lo || ratio > opt.rung_ratio_hi) continue;
          const double d = (ek[c] - ek[cur]).norm();
          // keys move roughly linearly in mu along a ladder: past the first
          // step, score candidates against that prediction
          double score = d;
          if (L.rungs.size() >= 2) {
            const size_t prev = L.rungs[L.rungs.size() - 2];
            const Vec pred = ek[cur] + (mu[c] - mu[cur]) / (mu[cur] - mu[prev]) * (ek[cur] - ek[prev]);
            score = (ek[c] - pred).norm();
          }
          if (score < best_score) {
            best_score = score;
            best_d = d;
            best = c;
          }
        }
        if (best == recs.size()) break;
        if (prev_d >= 0 && best_d > opt.cauchy_growth * prev_d) break;
        if (prev_d >= 0 && best_d < prev_d) {
          if (warnings) warnings->push_back("non-monotone ladder skipped");
          L.rungs.clear();
          break;
        }
        L.rungs.push_back(best);
        used[best] = true;
        prev_d = best_d;
      }
      if (L.rungs.empty()) continue;
      if (static_cast<int>(L.rungs.size()) < opt.min_rungs) {
        if (warnings) warnings->push_back("ladder too short for extrapolation (" + std::to_string(L.rungs.size()) + " rungs)");
        continue;
      }
      out.push_back(std::move(L));
    }
  }
  return out;
}

/// Limit triple of one ladder from its three deepest rungs; nullopt when the
/// limit is not lightlike or degenerates.
inline std::optional<TimeProbeTriple> extrapolate_ladder(const MetricModel& m, const std::vector<LensTriple>& recs,
                                                         const Ladder& L, const LensOptions& opt = {},
                                                         std::string* why = nullptr) {
  auto reject = [&](const std::string& w) -> std::optional<TimeProbeTriple> {
    if (why) *why = w;
    return std::nullopt;
  };
  if (L.rungs.size() < 3) return reject("ladder too short");
  double h[3];
  Vec t[3], e[3], d[3];
  for (int i = 0; i < 3; ++i) {
    const LensTriple& r = recs[L.rungs[static_cast<size_t>(i)]];
    h[i] = std::sqrt(detail::lightlikeness(m, r.eta.pv));
    t[i] = Vec::Constant(1, r.t);
    e[i] = m.embed_point(r.eta.pv.x);
    d[i] = m.embed_vector(r.eta.pv.x, r.eta.pv.v);
    d[i] /= d[i].norm();
  }
  if (!(h[0] < h[1] && h[1] < h[2])) return reject("non-monotone ladder");
  const double ts = detail::extrapolate0(h, t)[0];
  const Vec xs = m.from_embedded(detail::extrapolate0(h, e));
  const Vec ds = detail::extrapolate0(h, d);
  if (ds.norm() < 1e-12) return reject("zero limit vector");
  if (!m.chart_box().contains(xs) || std::abs(m.boundary_function(xs)) > 1e-6)
    return reject("limit base point is off the boundary");
  Vec v = detail::chart_vector(m, xs, ds);
  if (detail::lightlikeness(m, {xs, v}) > opt.limit_tol) return reject("limit stays timelike");

  // keep the spatial part, rescale the time part onto the light cone
  const auto E = orthonormal_frame(m, xs);
  const Mat g = m.metric(xs);
  Vec spatial = Vec::Zero(m.dim());
  for (size_t i = 1; i < E.size(); ++i) spatial += v.dot(g * E[i]) * E[i];
  const double a = std::sqrt(spatial.dot(g * spatial));
  if (!(a > 0)) return reject("zero limit vector");
  v = a * E[0] + spatial;
  if (!(ts > 0)) return reject("non-positive limit length");

  const LensTriple& deep = recs[L.rungs[0]];
  TimeProbeTriple out;
  out.xi = deep.xi;
  out.t = ts;
  out.eta = detail::tag_boundary(m, {xs, v}, Tolerances{});
  std::optional<PointId> pid = deep.point_id;
  for (size_t r : L.rungs)
    if (recs[r].point_id != pid) pid.reset();
  out.point_id = pid;
  return out;
}

/// Time-probe triples recovered from (blind) lens data. Approach indices in
/// the input are ignored.
inline LensExtraction lens_to_time_probe(const MetricModel& m, const std::vector<LensTriple>& recs,
                                         const LensOptions& opt = {}) {
  LensExtraction out;
  const auto ladders = find_ladders(m, recs, opt, &out.warnings);
  std::vector<std::optional<TimeProbeTriple>> res(ladders.size());
  std::vector<std::string> why(ladders.size());
  parallel_for(ladders.size(), [&](size_t i) { res[i] = extrapolate_ladder(m, recs, ladders[i], opt, &why[i]); });
  for (size_t i = 0; i < ladders.size(); ++i) {
    if (res[i]) {
      out.triples.push_back(*res[i]);
      out.ladders.push_back(ladders[i]);
    } else {
      out.warnings.push_back(why[i]);
    }
  }
  return out;
}

}  // namespace causal_lens
