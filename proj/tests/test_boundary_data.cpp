#include "causal_lens/data_io.hpp"
#include "causal_lens/matching.hpp"

#include <gtest/gtest.h>

#include <numbers>
#include <set>

using namespace causal_lens;

namespace {

Vec vec(std::initializer_list<double> xs) {
  Vec v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

// Entry parameter of the ray x + s v into the unit box from inside.
double line_box_exit(const Vec& x, const Vec& v) {
  double s = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (v[i] > 0) s = std::min(s, (1.0 - x[i]) / v[i]);
    if (v[i] < 0) s = std::min(s, -x[i] / v[i]);
  }
  return s;
}

PointFans fans_of(const MetricModel& m, const Vec& p, std::vector<Vec> timelike, std::vector<Vec> lightlike) {
  PointFans f;
  f.p = p;
  f.frame = orthonormal_frame(m, p);
  f.timelike = std::move(timelike);
  for (const Vec& k : lightlike) {
    const Vec kk = k / k[0];
    f.lightlike.push_back(kk);
    f.spatial.push_back(kk - f.frame[0]);
  }
  return f;
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorKind::io;
}

bool same_vector_sets(const MetricModel& m, const std::vector<PointVector>& a, const std::vector<PointVector>& b,
                      double tol) {
  if (a.size() != b.size()) return false;
  std::vector<bool> used(b.size(), false);
  for (const auto& x : a) {
    bool found = false;
    for (size_t j = 0; j < b.size() && !found; ++j)
      if (!used[j] && vectors_match(m, x, b[j], tol)) used[j] = found = true;
    if (!found) return false;
  }
  return true;
}

std::vector<PointVector> footprints(const SkyShadowSample& s) {
  std::vector<PointVector> out;
  for (const auto& v : s.vectors) out.push_back(v.eta.pv);
  return out;
}

}  // namespace

TEST(SampleInterior, RespectsMarginAndSeed) {
  auto box = make_model("minkowski-block");
  const auto one = sample_interior(*box, 1, 7);
  ASSERT_EQ(one.size(), 1u);
  for (Eigen::Index i = 0; i < 3; ++i) {
    EXPECT_GT(one[0][i], 0.05);
    EXPECT_LT(one[0][i], 0.95);
  }
  EXPECT_EQ(sample_interior(*box, 5, 3), sample_interior(*box, 5, 3));
  EXPECT_EQ(kind_of([&] { sample_interior(*box, 0, 1); }), ErrorKind::config);

  auto cyl = make_model("cylinder", {{"T", 3}});
  for (const Vec& x : sample_interior(*cyl, 100, 1)) {
    EXPECT_GT(x[0], 0.05);
    EXPECT_LT(x[0], 2.95);
    EXPECT_GT(std::sin(x[1]), 0.0);
  }
}

TEST(GenTimeProbe, StraightLineOracle) {
  auto m = make_model("minkowski-block");
  const Vec p = vec({0.5, 0.5, 0.5});
  GenReport rep;
  const auto recs = time_probe_at(*m, fans_of(*m, p, {vec({1, 0, 0})}, {vec({1, 0.6, 0.8})}), 0, {}, rep);
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_LE((recs[0].xi.pv.x - vec({0, 0.5, 0.5})).norm(), 1e-9);
  EXPECT_LE((recs[0].xi.pv.v - vec({1, 0, 0})).norm(), 1e-9);
  EXPECT_NEAR(recs[0].t, 0.5, 1e-9);
  EXPECT_LE((recs[0].eta.pv.x - vec({1, 0.8, 0.9})).norm(), 1e-9);
}

TEST(GenTimeProbe, LineBoxOracleOnRandomFans) {
  auto m = make_model("minkowski-block");
  const auto pts = sample_interior(*m, 4, 11);
  GenReport rep;
  const auto recs = gen_time_probe(*m, pts, {6, 6}, 3, {}, &rep);
  EXPECT_GT(recs.size(), 0u);
  EXPECT_LE(recs.size(), 4u * 36u);
  for (const auto& r : recs) {
    const Vec p = pts[static_cast<size_t>(*r.point_id)];
    const Vec u = r.xi.pv.v / std::sqrt(-m->inner(r.xi.pv.x, r.xi.pv.v, r.xi.pv.v));
    // xi + t u reaches p, and the lightlike ray from p exits where the oracle says
    EXPECT_LE((r.xi.pv.x + r.t * u - p).norm(), 1e-8);
    const Vec k = r.eta.pv.v;
    EXPECT_LE((p + line_box_exit(p, k) * k - r.eta.pv.x).norm(), 1e-8);
    EXPECT_EQ(r.xi.causal, Causal::timelike);
    EXPECT_EQ(r.eta.causal, Causal::lightlike);
  }
}

TEST(GenTimeProbe, ReplayMeetsWithinMatchTolerance) {
  for (const char* name : {"cylinder", "conformal-flat"}) {
    auto m = make_model(name, {{"T", 3}});
    const auto pts = sample_interior(*m, 3, 5);
    const auto recs = gen_time_probe(*m, pts, {4, 4}, 9);
    ASSERT_FALSE(recs.empty());
    for (size_t i = 0; i < recs.size(); i += 3) {
      const auto& r = recs[i];
      const auto pv = normalize_timelike(*m, r.xi.pv);
      const auto st = flow(*m, {pv.x, pv.v, 0.0, {}}, r.t);
      const Approach a = closest_approach(*m, r.eta.pv, st.x, FlowDir::backward);
      EXPECT_TRUE(a.reached) << name;
      EXPECT_LE(a.distance, 1e-6) << name;
    }
  }
}

TEST(GenLens, StraightLineOracleAndLadder) {
  auto m = make_model("minkowski-block");
  const Vec p = vec({0.5, 0.5, 0.5});
  GenReport rep;
  GenOptions opt;
  opt.ladder_depth = 10;
  PointFans f = fans_of(*m, p, {vec({1, 0, 0})}, {vec({1, 1, 0})});
  // second timelike leg (1, 0.5, 0) normalized
  f.timelike.push_back(vec({1, 0.5, 0}) / std::sqrt(0.75));
  const auto recs = lens_at(*m, f, 0, opt, rep);
  bool found = false;
  std::vector<const LensTriple*> ladder;
  for (const auto& r : recs) {
    if (r.xi.pv.v[1] != 0.0) continue;  // keep leg 1 = (1,0,0)
    if (!r.approach && std::abs(r.eta.pv.v[1] - 0.5 / std::sqrt(0.75)) < 1e-9) {
      EXPECT_NEAR(r.t, 0.5 + 0.5 * std::sqrt(0.75), 1e-9);
      found = true;
    }
    if (r.approach) ladder.push_back(&r);
  }
  EXPECT_TRUE(found);
  ASSERT_EQ(ladder.size(), 10u);
  // leg-2 length eps_k * s_k -> 0 and exit base -> the lightlike exit (1, 1, 0.5)
  double prev_len = 1.0, prev_dist = 1.0;
  for (const auto* r : ladder) {
    const double len = r->t - 0.5;
    const double dist = (r->eta.pv.x - vec({1, 1, 0.5})).norm();
    EXPECT_GT(len, 0.0);
    EXPECT_LT(len, prev_len);
    EXPECT_LE(dist, prev_dist + 1e-12);
    prev_len = len;
    prev_dist = dist;
  }
  EXPECT_LT(prev_len, 1e-3);
  EXPECT_LT(prev_dist, 1e-5);
}

TEST(GenScattering, LineBoxPartnerAndInclusion) {
  auto m = make_model("minkowski-block");
  GenReport rep;
  const auto pairs = scattering_at(*m, fans_of(*m, vec({0.4, 0.5, 0.5}), {}, {vec({1, 1, 0})}), 0, {}, rep);
  ASSERT_EQ(pairs.size(), 2u);
  const auto& u = pairs[0];
  EXPECT_EQ(u.kind, ScatterKind::unbroken);
  EXPECT_LE((u.xi.pv.x - vec({0, 0.1, 0.5})).norm(), 1e-9);
  EXPECT_LE((u.eta.pv.x - vec({0.9, 1.0, 0.5})).norm(), 1e-9);
  EXPECT_LE((u.eta.pv.v - u.xi.pv.v).norm(), 1e-9);

  const auto pts = sample_interior(*m, 3, 2);
  const auto all = gen_scattering(*m, pts, {0, 8}, 4);
  for (const auto& s : all) {
    if (s.kind != ScatterKind::unbroken) continue;
    bool in_b = false;
    for (const auto& b : all)
      if (b.kind == ScatterKind::broken && vectors_match(*m, b.xi.pv, s.xi.pv, 1e-12) &&
          vectors_match(*m, b.eta.pv, s.eta.pv, 1e-12))
        in_b = true;
    EXPECT_TRUE(in_b);
  }
}

TEST(GenScattering, CrossPairsThroughTwoPoints) {
  // q on the future light cone of p: the ray p -> q yields broken pairs at both points
  auto m = make_model("minkowski-block");
  const Vec p = vec({0.3, 0.4, 0.5});
  const Vec k = vec({1, 0.6, 0.8});
  const Vec q = p + 0.3 * k;
  GenReport rep;
  auto a = scattering_at(*m, fans_of(*m, p, {}, {k, vec({1, -1, 0})}), 0, {}, rep);
  auto b = scattering_at(*m, fans_of(*m, q, {}, {k, vec({1, 0, -1})}), 1, {}, rep);
  const PointVector shared_in = a[0].xi.pv;
  EXPECT_TRUE(vectors_match(*m, shared_in, b[0].xi.pv, 1e-9));
  // the shared incoming ray pairs with the other outgoing rays of both points
  int partners = 0;
  for (const auto* set : {&a, &b})
    for (const auto& s : *set)
      if (s.kind == ScatterKind::broken && vectors_match(*m, s.xi.pv, shared_in, 1e-9)) ++partners;
  EXPECT_EQ(partners, 4);
}

TEST(GenSkyShadow, FlatCircleOracle) {
  auto m = make_model("minkowski-block");
  const Vec p = vec({0.4, 0.5, 0.5});
  const auto s = gen_sky_shadow(*m, p, 24);
  ASSERT_EQ(s.vectors.size(), 24u);
  for (const auto& v : s.vectors) {
    EXPECT_NEAR(v.eta.pv.x[0], 0.0, 1e-12);
    EXPECT_NEAR(std::hypot(v.eta.pv.x[1] - 0.5, v.eta.pv.x[2] - 0.5), 0.4, 1e-9);
    EXPECT_EQ(v.eta.direction, TimeDir::future);
    EXPECT_TRUE(v.eta.transversal);
  }
  EXPECT_EQ(kind_of([&] { gen_sky_shadow(*m, vec({0.0, 0.5, 0.5}), 8); }), ErrorKind::domain);
}

TEST(GenSkyShadow, CylinderRefocusingGivesEqualShadows) {
  auto m = make_model("cylinder", {{"T", 7}});
  const double t0 = 0.4;
  const Vec p = vec({t0, 1.2, 0.3});
  const Vec q = vec({t0 + 2.0 * std::numbers::pi, 1.2, 0.3});
  const auto a = gen_sky_shadow(*m, p, 12);
  const auto b = gen_sky_shadow(*m, q, 12);
  EXPECT_TRUE(same_vector_sets(*m, footprints(a), footprints(b), 1e-6));
}

TEST(GenSkyShadow, WeingartenAttachmentMatchesConeOracle) {
  auto m = make_model("minkowski-block");
  GenOptions opt;
  opt.attach_weingarten = true;
  const auto s = gen_sky_shadow(*m, vec({0.4, 0.5, 0.5}), 6, opt);
  for (const auto& v : s.vectors) {
    ASSERT_TRUE(v.b.has_value());
    // affine distance 0.4 / k^0 with k^0 = 1
    EXPECT_NEAR((*v.b)(0, 0), -1.0 / 0.4, 1e-8);
  }
}

TEST(ConformalInvariance, LightlikeDataAgreeUpToRescaling) {
  auto flat = make_model("minkowski-block", {{"n", 3}});
  auto conf = make_model("conformal-flat", {{"n", 3}, {"c", 0.1}});
  const auto pts = sample_interior(*flat, 3, 8);
  for (const Vec& p : pts) {
    // same directions at p; the conformal frame is a rescaled flat frame
    EXPECT_TRUE(same_vector_sets(*flat, footprints(gen_sky_shadow(*flat, p, 10)),
                                 footprints(gen_sky_shadow(*conf, p, 10)), 1e-5));
  }
  const auto sa = gen_scattering(*flat, pts, {0, 6}, 2);
  const auto sb = gen_scattering(*conf, pts, {0, 6}, 2);
  ASSERT_EQ(sa.size(), sb.size());
  for (size_t i = 0; i < sa.size(); ++i) {
    EXPECT_TRUE(vectors_match(*flat, sa[i].xi.pv, sb[i].xi.pv, 1e-5));
    EXPECT_TRUE(vectors_match(*flat, sa[i].eta.pv, sb[i].eta.pv, 1e-5));
  }
}

TEST(DataIo, RoundTripIsByteIdentical) {
  auto m = make_model("minkowski-block");
  Dataset d;
  d.header = header_for(*m, 17);
  d.time_probe = gen_time_probe(*m, sample_interior(*m, 10, 1), {10, 10}, 17);
  ASSERT_EQ(d.time_probe.size(), 1000u);
  d.shadows.push_back(gen_sky_shadow(*m, Vec::Constant(3, 0.5), 5, GenOptions{.attach_weingarten = true}));
  const std::string once = to_jsonl(d);
  std::istringstream is(once);
  const Dataset back = read_dataset(is);
  EXPECT_EQ(to_jsonl(back), once);
  EXPECT_EQ(back.time_probe.size(), 1000u);
  ASSERT_EQ(back.shadows.size(), 1u);
  EXPECT_TRUE(back.shadows[0].vectors[0].b.has_value());
}

TEST(DataIo, DeterministicGeneration) {
  auto m = make_model("cylinder", {{"T", 3}});
  Dataset a, b;
  a.header = b.header = header_for(*m, 5);
  const auto pts = sample_interior(*m, 4, 5);
  a.scatter = gen_scattering(*m, pts, {0, 5}, 5);
  b.scatter = gen_scattering(*m, sample_interior(*m, 4, 5), {0, 5}, 5);
  EXPECT_EQ(to_jsonl(a), to_jsonl(b));
}

TEST(DataIo, BlindModeStripsProvenance) {
  auto m = make_model("minkowski-block");
  Dataset d;
  d.header = header_for(*m, 1);
  d.lens = gen_lens(*m, {Vec::Constant(3, 0.5)}, {2, 1}, 1, GenOptions{.ladder_depth = 2});
  const std::string blind = to_jsonl(d, true);
  EXPECT_EQ(blind.find("point_id"), std::string::npos);
  EXPECT_EQ(blind.find("\"approach\":1"), std::string::npos);
  EXPECT_NE(to_jsonl(d).find("\"approach\":1"), std::string::npos);
}

TEST(DataIo, RejectsBadRecords) {
  const std::string head = R"({"kind":"header","model":"minkowski-block","params":{"L":1.0},"n":3,"seed":0,"version":1})";
  auto parse = [&](const std::string& rec) {
    std::istringstream is(head + "\n" + rec + "\n");
    return read_dataset(is);
  };
  const std::string xi = R"("xi":{"x":[0.0,0.5,0.5],"v":[1.0,0.0,0.0]})";
  const std::string eta = R"("eta":{"x":[1.0,0.5,0.5],"v":[1.0,1.0,0.0]})";
  EXPECT_NO_THROW(parse(R"({"kind":"time_probe",)" + xi + R"(,"t":0.5,)" + eta + "}"));
  try {
    parse(R"({"kind":"time_probe",)" + xi + R"(,"t":-0.1,)" + eta + "}");
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::parse);
    EXPECT_NE(std::string(e.what()).find("negative length"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
  // g(v, v) = 0.5 with a lightlike tag
  const std::string bad_eta = R"("eta":{"x":[1.0,0.5,0.5],"v":[0.5,0.866025403784438597,0.5]})";
  try {
    parse(R"({"kind":"time_probe",)" + xi + R"(,"t":0.5,)" + bad_eta + "}");
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("tag mismatch"), std::string::npos);
  }
  EXPECT_EQ(kind_of([&] { parse(R"({"kind":"time_probe",)" + xi + R"(,"t":null,)" + eta + "}"); }),
            ErrorKind::parse);
  EXPECT_EQ(kind_of([&] { parse(R"({"kind":"mystery"})"); }), ErrorKind::parse);
  EXPECT_EQ(kind_of([&] {
              std::istringstream is(R"({"kind":"time_probe"})");
              read_dataset(is);
            }),
            ErrorKind::parse);
}

TEST(Matching, ClusterFeaturesIsSingleLinkage) {
  std::vector<Vec> f{vec({0, 0}), vec({0.6e-5, 0}), vec({1.2e-5, 0}), vec({1, 1}), vec({0, 0})};
  const auto ids = cluster_features(f, 1e-5);
  EXPECT_EQ(ids[0], ids[1]);
  EXPECT_EQ(ids[1], ids[2]);
  EXPECT_EQ(ids[0], ids[4]);
  EXPECT_NE(ids[0], ids[3]);
  EXPECT_EQ(std::set<int>(ids.begin(), ids.end()).size(), 2u);
}
