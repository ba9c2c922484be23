#pragma once

// Tolerance matching of boundary vectors: keys in the chart-independent
// embedding, single-linkage clustering with a sort-and-sweep, union-find.

#include "causal_lens/metric_models.hpp"

#include <algorithm>
#include <map>
#include <numeric>

namespace causal_lens {

class UnionFind {
 public:
  explicit UnionFind(size_t n = 0) : parent_(n), rank_(n, 0) { std::iota(parent_.begin(), parent_.end(), size_t{0}); }

  size_t find(size_t a) {
    while (parent_[a] != a) {
      parent_[a] = parent_[parent_[a]];
      a = parent_[a];
    }
    return a;
  }

  bool unite(size_t a, size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    if (rank_[a] < rank_[b]) std::swap(a, b);
    parent_[b] = a;
    if (rank_[a] == rank_[b]) ++rank_[a];
    return true;
  }

  size_t size() const { return parent_.size(); }

 private:
  std::vector<size_t> parent_;
  std::vector<unsigned> rank_;
};

/// Matching key of a tangent vector: embedded base point followed by the
/// embedded direction normalized to unit Euclidean length. Positive rescaling
/// leaves the key unchanged.
inline Vec vector_key(const MetricModel& m, const PointVector& pv) {
  const Vec e = m.embed_point(pv.x);
  Vec d = m.embed_vector(pv.x, pv.v);
  const double nd = d.norm();
  if (nd > 0) d /= nd;
  Vec k(e.size() + d.size());
  k << e, d;
  return k;
}

inline double max_abs_diff(const Vec& a, const Vec& b) { return (a - b).cwiseAbs().maxCoeff(); }

inline bool vectors_match(const MetricModel& m, const PointVector& a, const PointVector& b, double tol) {
  return max_abs_diff(vector_key(m, a), vector_key(m, b)) <= tol;
}

/// Single-linkage clusters of feature vectors under the max-norm with
/// threshold tol. Cluster ids are dense and numbered by first appearance.
inline std::vector<int> cluster_features(const std::vector<Vec>& feats, double tol) {
  const size_t n = feats.size();
  std::vector<int> out(n, -1);
  if (n == 0) return out;

  // collapse exact duplicates first; generated data repeats vectors a lot
  auto less = [](const Vec& a, const Vec& b) {
    return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(), b.data() + b.size());
  };
  std::map<Vec, size_t, decltype(less)> uniq(less);
  std::vector<size_t> rep(n);
  std::vector<const Vec*> keys;
  for (size_t i = 0; i < n; ++i) {
    auto [it, inserted] = uniq.emplace(feats[i], keys.size());
    if (inserted) keys.push_back(&it->first);
    rep[i] = it->second;
  }

  // sweep along the coordinate with the widest spread
  const size_t u = keys.size();
  Eigen::Index axis = 0;
  {
    Vec lo = *keys[0], hi = *keys[0];
    for (const Vec* k : keys) {
      lo = lo.cwiseMin(*k);
      hi = hi.cwiseMax(*k);
    }
    (hi - lo).maxCoeff(&axis);
  }
  std::vector<size_t> order(u);
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return (*keys[a])[axis] < (*keys[b])[axis]; });
  UnionFind uf(u);
  for (size_t i = 0; i < u; ++i) {
    const Vec& a = *keys[order[i]];
    for (size_t j = i + 1; j < u; ++j) {
      const Vec& b = *keys[order[j]];
      if (b[axis] - a[axis] > tol) break;
      if (max_abs_diff(a, b) <= tol) uf.unite(order[i], order[j]);
    }
  }

  std::map<size_t, int> ids;
  for (size_t i = 0; i < n; ++i) {
    const size_t root = uf.find(rep[i]);
    auto [it, inserted] = ids.emplace(root, static_cast<int>(ids.size()));
    out[i] = it->second;
  }
  return out;
}

}  // namespace causal_lens
