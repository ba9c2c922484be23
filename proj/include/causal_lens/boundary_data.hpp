#pragma once

// Sampled boundary data. Every family is generated constructively: hidden
// interior points shoot fans of geodesics to the boundary and the footprints
// are recorded, so each record carries its ground-truth point id.

#include "causal_lens/optics.hpp"
#include "causal_lens/parallel.hpp"

#include <cstdint>
#include <optional>
#include <random>

namespace causal_lens {

using PointId = std::int64_t;

struct TimeProbeTriple {
  BoundaryVector xi;   // timelike, future
  double t = 0.0;      // proper length from xi to the meeting point
  BoundaryVector eta;  // lightlike, future
  std::optional<PointId> point_id;
};

struct LensTriple {
  BoundaryVector xi;   // timelike, future
  double t = 0.0;      // total proper length of both legs
  BoundaryVector eta;  // timelike, future
  std::optional<int> approach;  // rung index when the second leg belongs to a ladder
  std::optional<PointId> point_id;
};

enum class ScatterKind { broken, unbroken };

struct ScatterPair {
  BoundaryVector xi;
  BoundaryVector eta;
  ScatterKind kind = ScatterKind::broken;
  std::optional<PointId> point_id;
};

struct ShadowVector {
  BoundaryVector eta;
  std::optional<Mat> b;  // null Weingarten map in screen_frame(eta)
};

struct SkyShadowSample {
  std::optional<PointId> point_id;
  std::vector<ShadowVector> vectors;
};

struct FanSizes {
  int timelike = 16;
  int lightlike = 16;
};

struct GenOptions {
  EngineOptions engine{};
  double min_rapidity = 0.1;
  double max_rapidity = 0.8;
  double jitter = 0.1;           // angular jitter, in units of the mean fan spacing
  int ladder_depth = 8;          // rungs per lightlike direction in lens data
  double ladder_start = 0.5;     // epsilon of the first rung; halves per rung
  bool attach_weingarten = false;
};

/// Counters and warnings accumulated by the generators.
struct GenReport {
  size_t discarded_nontransverse = 0;
  size_t skipped_points = 0;
  std::vector<std::string> warnings;

  void merge(const GenReport& o) {
    discarded_nontransverse += o.discarded_nontransverse;
    skipped_points += o.skipped_points;
    warnings.insert(warnings.end(), o.warnings.begin(), o.warnings.end());
  }
};

// ---------------------------------------------------------------------------
// Interior points and fans

inline std::mt19937_64 point_rng(std::uint64_t seed, std::uint64_t idx) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(idx), static_cast<std::uint32_t>(idx >> 32), 0x5eedu};
  return std::mt19937_64(seq);
}

/// Interior points with F > margin, seeded-uniform in the model's sampling box.
inline std::vector<Vec> sample_interior(const MetricModel& m, size_t count, std::uint64_t seed,
                                        double margin = 0.05, size_t budget_per_point = 100000) {
  if (count == 0) throw Error(ErrorKind::config, "sample_interior needs count >= 1");
  std::mt19937_64 rng = point_rng(seed, 0xffffffffull);
  std::vector<Vec> out;
  out.reserve(count);
  size_t tries = 0;
  while (out.size() < count) {
    if (++tries > budget_per_point * count)
      throw Error(ErrorKind::domain, "domain too thin: interior rejection sampling exhausted its budget");
    Vec x = m.sample_candidate(rng);
    if (m.boundary_function(x) > margin) out.push_back(std::move(x));
  }
  return out;
}

/// Unit directions in R^dim: equispaced on the circle, spherical Fibonacci on
/// S^2, Gaussian samples above that. Jitter (if rng given) perturbs each.
inline std::vector<Vec> sphere_directions(int dim, int count, std::mt19937_64* rng, double jitter) {
  std::vector<Vec> out;
  if (count <= 0) return out;
  std::normal_distribution<double> N;
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  std::mt19937_64 fallback(12345);
  for (int i = 0; i < count; ++i) {
    Vec d(dim);
    if (dim == 1) {
      d[0] = i % 2 == 0 ? 1.0 : -1.0;
    } else if (dim == 2) {
      const double a = 2.0 * std::numbers::pi * (i + 0.5) / count;
      d << std::cos(a), std::sin(a);
    } else if (dim == 3) {
      const double z = 1.0 - (2.0 * i + 1.0) / count;
      const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
      d << r * std::cos(golden * i), r * std::sin(golden * i), z;
    } else {
      for (int j = 0; j < dim; ++j) d[j] = N(rng ? *rng : fallback);
      d.normalize();
    }
    if (rng && jitter > 0 && dim > 1) {
      const double spacing = std::pow(4.0 * std::numbers::pi / count, 1.0 / (dim - 1));
      Vec e(dim);
      for (int j = 0; j < dim; ++j) e[j] = N(*rng);
      d += jitter * spacing * (e - e.dot(d) * d) / std::sqrt(static_cast<double>(dim));
      d.normalize();
    }
    out.push_back(d);
  }
  return out;
}

/// Tangent fans at one point, in chart components.
struct PointFans {
  Vec p;
  std::vector<Vec> frame;      // orthonormal, frame[0] future unit timelike
  std::vector<Vec> timelike;   // future unit timelike
  std::vector<Vec> spatial;    // unit spatial directions of the lightlike fan
  std::vector<Vec> lightlike;  // frame[0] + spatial
};

inline PointFans make_fans(const MetricModel& m, const Vec& p, const FanSizes& sizes, std::mt19937_64* rng,
                           const GenOptions& opt = {}) {
  const int n = m.dim();
  PointFans f;
  f.p = p;
  f.frame = orthonormal_frame(m, p);
  auto spatial = [&](const Vec& w) {
    Vec s = Vec::Zero(n);
    for (int j = 0; j < n - 1; ++j) s += w[j] * f.frame[j + 1];
    return s;
  };
  // separate streams so that the lightlike fan does not depend on the timelike count
  std::optional<std::mt19937_64> rt, rl;
  if (rng) {
    rl.emplace((*rng)());
    rt.emplace((*rng)());
  }
  std::mt19937_64* pt = rt ? &*rt : nullptr;
  std::mt19937_64* pl = rl ? &*rl : nullptr;
  const auto dt = sphere_directions(n - 1, sizes.timelike, pt, opt.jitter);
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  std::uniform_real_distribution<double> U(-0.5, 0.5);
  for (int i = 0; i < sizes.timelike; ++i) {
    double frac = std::fmod(0.5 + phi * i, 1.0);
    if (pt) frac = std::clamp(frac + opt.jitter * U(*pt) / std::max(1, sizes.timelike), 0.0, 1.0);
    const double r = opt.min_rapidity + (opt.max_rapidity - opt.min_rapidity) * frac;
    f.timelike.push_back(std::cosh(r) * f.frame[0] + std::sinh(r) * spatial(dt[i]));
  }
  for (const Vec& w : sphere_directions(n - 1, sizes.lightlike, pl, opt.jitter)) {
    f.spatial.push_back(spatial(w));
    f.lightlike.push_back(f.frame[0] + f.spatial.back());
  }
  return f;
}

namespace detail {

struct Exit {
  BoundaryVector bv;
  double T = 0.0;
};

/// Boundary footprint of the geodesic of (p, v); nullopt when the crossing is
/// not transverse.
inline std::optional<Exit> trace_exit(const MetricModel& m, const Vec& p, const Vec& v, FlowDir dir,
                                      const EngineOptions& opt) {
  const BoundaryHit hit = time_to_boundary(m, {p, v}, dir, opt);
  if (!hit.exit.transversal) return std::nullopt;
  return Exit{hit.exit, hit.T};
}

inline void require_interior(const MetricModel& m, const Vec& p, const Tolerances& tol) {
  if (p.size() != m.dim() || !m.chart_box().contains(p) || !(m.boundary_function(p) > tol.boundary))
    throw Error(ErrorKind::domain, "generation point is not interior");
}

template <class Rec, class PerPoint>
std::vector<Rec> gather(size_t count, GenReport* report, PerPoint&& per_point) {
  std::vector<std::vector<Rec>> slots(count);
  std::vector<GenReport> reps(count);
  parallel_for(count, [&](size_t i) { slots[i] = per_point(i, reps[i]); });
  std::vector<Rec> out;
  for (size_t i = 0; i < count; ++i) {
    out.insert(out.end(), std::make_move_iterator(slots[i].begin()), std::make_move_iterator(slots[i].end()));
    if (report) report->merge(reps[i]);
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Time-probe data

/// Past timelike legs from one point: (xi, t) pairs, xi future-directed.
struct TimelikeLeg {
  BoundaryVector xi;
  double t = 0.0;
};

inline std::vector<TimelikeLeg> past_timelike_legs(const MetricModel& m, const PointFans& f, const EngineOptions& opt,
                                                   GenReport& rep) {
  std::vector<TimelikeLeg> legs;
  for (const Vec& u : f.timelike) {
    auto e = detail::trace_exit(m, f.p, u, FlowDir::backward, opt);
    if (!e) {
      ++rep.discarded_nontransverse;
      continue;
    }
    // u is unit, so the affine time is the proper length
    legs.push_back({e->bv, e->T});
  }
  return legs;
}

inline std::vector<BoundaryVector> future_lightlike_exits(const MetricModel& m, const PointFans& f,
                                                          const EngineOptions& opt, GenReport& rep) {
  std::vector<BoundaryVector> out;
  for (const Vec& k : f.lightlike) {
    auto e = detail::trace_exit(m, f.p, k, FlowDir::forward, opt);
    if (!e) {
      ++rep.discarded_nontransverse;
      continue;
    }
    out.push_back(e->bv);
  }
  return out;
}

/// Time-probe triples of one point with explicit fans.
inline std::vector<TimeProbeTriple> time_probe_at(const MetricModel& m, const PointFans& f, PointId id,
                                                  const GenOptions& opt, GenReport& rep) {
  detail::require_interior(m, f.p, opt.engine.tol);
  const auto legs = past_timelike_legs(m, f, opt.engine, rep);
  const auto etas = future_lightlike_exits(m, f, opt.engine, rep);
  std::vector<TimeProbeTriple> out;
  if (legs.empty() || etas.empty()) {
    ++rep.skipped_points;
    rep.warnings.push_back("point " + std::to_string(id) + " skipped: no transverse rays");
    return out;
  }
  for (const auto& l : legs)
    for (const auto& e : etas) out.push_back({l.xi, l.t, e, id});
  return out;
}

inline std::vector<TimeProbeTriple> gen_time_probe(const MetricModel& m, const std::vector<Vec>& points,
                                                   const FanSizes& fans, std::uint64_t seed,
                                                   const GenOptions& opt = {}, GenReport* report = nullptr) {
  return detail::gather<TimeProbeTriple>(points.size(), report, [&](size_t i, GenReport& rep) {
    auto rng = point_rng(seed, i);
    return time_probe_at(m, make_fans(m, points[i], fans, &rng, opt), static_cast<PointId>(i), opt, rep);
  });
}

// ---------------------------------------------------------------------------
// Broken timelike lens data

/// Second-leg direction of rung k toward the lightlike direction e0 + w:
/// e0 + sqrt(1 - eps^2) w, so that sqrt(-g(z, z)) = eps.
inline Vec ladder_direction(const Vec& e0, const Vec& w, double eps) { return e0 + std::sqrt(1.0 - eps * eps) * w; }

inline double ladder_epsilon(const GenOptions& opt, int k) { return opt.ladder_start * std::ldexp(1.0, -k); }

inline std::vector<LensTriple> lens_at(const MetricModel& m, const PointFans& f, PointId id, const GenOptions& opt,
                                       GenReport& rep) {
  detail::require_interior(m, f.p, opt.engine.tol);
  const auto legs = past_timelike_legs(m, f, opt.engine, rep);
  struct Leg2 {
    BoundaryVector eta;
    double len;
    std::optional<int> approach;
  };
  std::vector<Leg2> second;
  for (const Vec& u : f.timelike) {
    auto e = detail::trace_exit(m, f.p, u, FlowDir::forward, opt.engine);
    if (!e) {
      ++rep.discarded_nontransverse;
      continue;
    }
    second.push_back({e->bv, e->T, std::nullopt});
  }
  for (const Vec& w : f.spatial) {
    for (int k = 0; k < opt.ladder_depth; ++k) {
      const double eps = ladder_epsilon(opt, k);
      auto e = detail::trace_exit(m, f.p, ladder_direction(f.frame[0], w, eps), FlowDir::forward, opt.engine);
      if (!e) {
        ++rep.discarded_nontransverse;
        continue;
      }
      const double len = e->T * eps;
      if (!(len > 0)) continue;
      second.push_back({e->bv, len, k});
    }
  }
  std::vector<LensTriple> out;
  if (legs.empty() || second.empty()) {
    ++rep.skipped_points;
    rep.warnings.push_back("point " + std::to_string(id) + " skipped: no transverse rays");
    return out;
  }
  for (const auto& l : legs)
    for (const auto& s : second) out.push_back({l.xi, l.t + s.len, s.eta, s.approach, id});
  return out;
}

inline std::vector<LensTriple> gen_lens(const MetricModel& m, const std::vector<Vec>& points, const FanSizes& fans,
                                        std::uint64_t seed, const GenOptions& opt = {},
                                        GenReport* report = nullptr) {
  return detail::gather<LensTriple>(points.size(), report, [&](size_t i, GenReport& rep) {
    auto rng = point_rng(seed, i);
    return lens_at(m, make_fans(m, points[i], fans, &rng, opt), static_cast<PointId>(i), opt, rep);
  });
}

// ---------------------------------------------------------------------------
// Lightlike scattering data

inline std::vector<ScatterPair> scattering_at(const MetricModel& m, const PointFans& f, PointId id,
                                              const GenOptions& opt, GenReport& rep) {
  detail::require_interior(m, f.p, opt.engine.tol);
  std::vector<BoundaryVector> in, out_;
  for (const Vec& k : f.lightlike) {
    auto a = detail::trace_exit(m, f.p, k, FlowDir::backward, opt.engine);
    auto b = detail::trace_exit(m, f.p, k, FlowDir::forward, opt.engine);
    if (!a || !b) {
      ++rep.discarded_nontransverse;
      continue;
    }
    in.push_back(a->bv);
    out_.push_back(b->bv);
  }
  std::vector<ScatterPair> out;
  if (in.empty()) {
    ++rep.skipped_points;
    rep.warnings.push_back("point " + std::to_string(id) + " skipped: no transverse rays");
    return out;
  }
  for (size_t i = 0; i < in.size(); ++i) out.push_back({in[i], out_[i], ScatterKind::unbroken, id});
  for (size_t i = 0; i < in.size(); ++i)
    for (size_t j = 0; j < out_.size(); ++j) out.push_back({in[i], out_[j], ScatterKind::broken, id});
  return out;
}

inline std::vector<ScatterPair> gen_scattering(const MetricModel& m, const std::vector<Vec>& points,
                                               const FanSizes& fans, std::uint64_t seed,
                                               const GenOptions& opt = {}, GenReport* report = nullptr) {
  return detail::gather<ScatterPair>(points.size(), report, [&](size_t i, GenReport& rep) {
    auto rng = point_rng(seed, i);
    return scattering_at(m, make_fans(m, points[i], fans, &rng, opt), static_cast<PointId>(i), opt, rep);
  });
}

// ---------------------------------------------------------------------------
// Past sky shadows

/// Shadow of p for an explicit lightlike fan (future-directed vectors at p).
inline SkyShadowSample sky_shadow_at(const MetricModel& m, const Vec& p, const std::vector<Vec>& lightlike,
                                     std::optional<PointId> id, const GenOptions& opt, GenReport& rep) {
  detail::require_interior(m, p, opt.engine.tol);
  SkyShadowSample s;
  s.point_id = id;
  for (const Vec& k : lightlike) {
    if (opt.attach_weingarten) {
      const WeingartenState w = cone_weingarten(m, {p, k}, opt.engine);
      if (!w.eta.transversal) {
        ++rep.discarded_nontransverse;
        continue;
      }
      s.vectors.push_back({w.eta, w.b});
    } else {
      auto e = detail::trace_exit(m, p, k, FlowDir::backward, opt.engine);
      if (!e) {
        ++rep.discarded_nontransverse;
        continue;
      }
      s.vectors.push_back({e->bv, std::nullopt});
    }
  }
  if (static_cast<int>(s.vectors.size()) < m.dim())
    rep.warnings.push_back("degenerate shadow: only " + std::to_string(s.vectors.size()) + " transverse rays");
  return s;
}

/// Shadow of p from an unjittered fan of m rays, so that equal frames give
/// equal fans (used by the refocusing comparisons).
inline SkyShadowSample gen_sky_shadow(const MetricModel& m, const Vec& p, int count, const GenOptions& opt = {},
                                      GenReport* report = nullptr, std::optional<PointId> id = std::nullopt) {
  GenReport rep;
  const PointFans f = make_fans(m, p, FanSizes{0, count}, nullptr, opt);
  SkyShadowSample s = sky_shadow_at(m, p, f.lightlike, id, opt, rep);
  if (report) report->merge(rep);
  return s;
}

/// Shadows of many points, seeded fans (the same fans gen_scattering uses).
inline std::vector<SkyShadowSample> gen_sky_shadows(const MetricModel& m, const std::vector<Vec>& points, int count,
                                                    std::uint64_t seed, const GenOptions& opt = {},
                                                    GenReport* report = nullptr) {
  std::vector<SkyShadowSample> out(points.size());
  std::vector<GenReport> reps(points.size());
  parallel_for(points.size(), [&](size_t i) {
    auto rng = point_rng(seed, i);
    const PointFans f = make_fans(m, points[i], FanSizes{0, count}, &rng, opt);
    out[i] = sky_shadow_at(m, points[i], f.lightlike, static_cast<PointId>(i), opt, reps[i]);
  });
  if (report)
    for (const auto& r : reps) report->merge(r);
  return out;
}

}  // namespace causal_lens
