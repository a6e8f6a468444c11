#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>
#include <utility>

#include "rnnc/types.hpp"

namespace rnnc {

enum class OrderingStrategy { CoordSort, MaxMin };

inline double dist2_rows(const Matrix& coords, int i, int j) {
  double s = 0.0;
  for (int c = 0; c < coords.cols(); ++c) {
    const double d = coords(i, c) - coords(j, c);
    s += d * d;
  }
  return s;
}

inline double dist2_to(const Matrix& coords, int i, const Vector& p) {
  double s = 0.0;
  for (int c = 0; c < coords.cols(); ++c) {
    const double d = coords(i, c) - p[c];
    s += d * d;
  }
  return s;
}

namespace detail {

// Static k-d tree over a coordinate matrix, median-split on cycling axes.
// Queries keep a bounded worst-first heap keyed by (dist2, key) so distance
// ties resolve identically to the brute-force path.
class KdTree {
 public:
  KdTree() = default;

  void build(const Matrix& coords) {
    coords_ = &coords;
    const int n = static_cast<int>(coords.rows());
    idx_.resize(n);
    std::iota(idx_.begin(), idx_.end(), 0);
    nodes_.clear();
    nodes_.reserve(n);
    if (n > 0) root_ = build_rec(0, n, 0);
  }

  bool empty() const { return nodes_.empty(); }

  // Collect up to m points minimizing (dist2, key(point)); points failing
  // accept(point) are skipped. Result sorted ascending by that pair.
  template <typename KeyFn, typename AcceptFn>
  void knn(const Vector& target, int m, KeyFn key, AcceptFn accept,
           std::vector<std::pair<double, int>>& out) const {
    out.clear();
    if (m <= 0 || root_ < 0) return;
    Heap heap;
    search(root_, target, m, key, accept, heap);
    out.resize(heap.size());
    for (int i = static_cast<int>(heap.size()) - 1; !heap.empty(); --i) {
      const auto& top = heap.top();
      out[i] = {top.first, top.second.second};
      heap.pop();
    }
  }

 private:
  struct Node {
    int point;
    int left = -1, right = -1;
    int axis = 0;
  };
  // worst candidate on top: larger (dist2, key) pairs evicted first
  using Entry = std::pair<double, std::pair<int, int>>;  // dist2, (key, point)
  using Heap = std::priority_queue<Entry>;

  int build_rec(int lo, int hi, int depth) {
    if (lo >= hi) return -1;
    const int axis = depth % static_cast<int>(coords_->cols());
    const int mid = (lo + hi) / 2;
    std::nth_element(idx_.begin() + lo, idx_.begin() + mid, idx_.begin() + hi,
                     [&](int a, int b) {
                       const double ca = (*coords_)(a, axis);
                       const double cb = (*coords_)(b, axis);
                       return ca < cb || (ca == cb && a < b);
                     });
    Node node;
    node.point = idx_[mid];
    node.axis = axis;
    const int self = static_cast<int>(nodes_.size());
    nodes_.push_back(node);
    nodes_[self].left = build_rec(lo, mid, depth + 1);
    nodes_[self].right = build_rec(mid + 1, hi, depth + 1);
    return self;
  }

  template <typename KeyFn, typename AcceptFn>
  void search(int ni, const Vector& target, int m, KeyFn& key, AcceptFn& accept,
              Heap& heap) const {
    const Node& node = nodes_[ni];
    const int p = node.point;
    if (accept(p)) {
      const double d2 = dist2_to(*coords_, p, target);
      const Entry cand{d2, {key(p), p}};
      if (static_cast<int>(heap.size()) < m) {
        heap.push(cand);
      } else if (cand < heap.top()) {
        heap.pop();
        heap.push(cand);
      }
    }
    const double delta = target[node.axis] - (*coords_)(p, node.axis);
    const int near = delta < 0 ? node.left : node.right;
    const int far = delta < 0 ? node.right : node.left;
    if (near >= 0) search(near, target, m, key, accept, heap);
    if (far >= 0) {
      // ties on dist2 must still compete on key, hence <=
      if (static_cast<int>(heap.size()) < m || delta * delta <= heap.top().first)
        search(far, target, m, key, accept, heap);
    }
  }

  const Matrix* coords_ = nullptr;
  std::vector<int> idx_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

}  // namespace detail

inline Ordering order_locations(const LocationSet& locs,
                                OrderingStrategy strategy) {
  const int n = locs.n();
  if (n == 0) throw validation_error("empty reference set");
  Ordering ord;
  ord.order.resize(n);
  std::iota(ord.order.begin(), ord.order.end(), 0);
  if (strategy == OrderingStrategy::CoordSort) {
    std::sort(ord.order.begin(), ord.order.end(), [&](int a, int b) {
      for (int c = 0; c < locs.dim(); ++c) {
        if (locs.coords(a, c) != locs.coords(b, c))
          return locs.coords(a, c) < locs.coords(b, c);
      }
      return locs.ids[a] < locs.ids[b];
    });
    return ord;
  }
  // max-min: seed nearest the centroid, then greedily maximize the minimum
  // distance to the points already ordered; ties go to the lowest id.
  Vector centroid = locs.coords.colwise().mean().transpose();
  int seed = 0;
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) {
    const double d2 = dist2_to(locs.coords, i, centroid);
    if (d2 < best || (d2 == best && locs.ids[i] < locs.ids[seed])) {
      best = d2;
      seed = i;
    }
  }
  std::vector<double> mind(n);
  std::vector<char> used(n, 0);
  ord.order[0] = seed;
  used[seed] = 1;
  for (int i = 0; i < n; ++i) mind[i] = dist2_rows(locs.coords, i, seed);
  for (int k = 1; k < n; ++k) {
    int pick = -1;
    double far = -1.0;
    for (int i = 0; i < n; ++i) {
      if (used[i]) continue;
      if (mind[i] > far ||
          (mind[i] == far && locs.ids[i] < locs.ids[pick])) {
        far = mind[i];
        pick = i;
      }
    }
    ord.order[k] = pick;
    used[pick] = 1;
    for (int i = 0; i < n; ++i) {
      if (!used[i]) mind[i] = std::min(mind[i], dist2_rows(locs.coords, i, pick));
    }
  }
  return ord;
}

// Conditioning sets over the ordering: for each ordered position k, the
// min(k, m) nearest predecessors, sorted by (distance, position).
inline NeighborIndex build_neighbor_index(const LocationSet& locs,
                                          const Ordering& ord, int m) {
  const int n = locs.n();
  if (static_cast<int>(ord.order.size()) != n)
    throw validation_error("ordering does not match location set");
  if (m < 0) throw validation_error("neighbor budget m must be >= 0");
  static std::atomic<std::uint64_t> next_pattern{1};
  NeighborIndex nbr;
  nbr.m = m;
  nbr.sets.resize(n);
  nbr.pattern_id = next_pattern.fetch_add(1);
  if (n == 0 || m == 0) return nbr;

  Matrix pts(n, locs.dim());
  for (int k = 0; k < n; ++k) pts.row(k) = locs.coords.row(ord.order[k]);

  detail::KdTree tree;
  const bool use_tree = n > kBruteForceMax;
  if (use_tree) tree.build(pts);

  std::vector<std::pair<double, int>> cand;
  for (int k = 1; k < n; ++k) {
    const int take = std::min(k, m);
    auto& set = nbr.sets[k];
    // for small prefixes the scan is cheaper than the filtered tree query
    if (!use_tree || k <= std::max(4 * m, 64)) {
      cand.clear();
      cand.reserve(k);
      for (int j = 0; j < k; ++j)
        cand.emplace_back(dist2_rows(pts, k, j), j);
      std::partial_sort(cand.begin(), cand.begin() + take, cand.end());
      set.resize(take);
      for (int j = 0; j < take; ++j) set[j] = cand[j].second;
    } else {
      Vector target = pts.row(k).transpose();
      tree.knn(
          target, take, [](int p) { return p; },
          [&](int p) { return p < k; }, cand);
      set.resize(cand.size());
      for (size_t j = 0; j < cand.size(); ++j) set[j] = cand[j].second;
    }
  }
  return nbr;
}

struct NeighborQueryOptions {
  bool exclude_self = false;  // drop reference points coincident with target
};

// Repeated-query helper over one reference set; builds its k-d tree once.
class NeighborQuery {
 public:
  explicit NeighborQuery(const LocationSet& locs) : locs_(&locs) {
    if (locs.n() == 0) throw validation_error("empty reference set");
    if (locs.n() > kBruteForceMax) tree_.build(locs.coords);
  }

  std::vector<int> nearest(const Vector& target, int m,
                           NeighborQueryOptions opts = {}) const {
    const LocationSet& locs = *locs_;
    const int n = locs.n();
    if (target.size() != locs.dim())
      throw validation_error("target dimension mismatch");
    if (m <= 0) return {};
    auto accept = [&](int i) {
      return !opts.exclude_self || dist2_to(locs.coords, i, target) > 0.0;
    };
    if (!tree_.empty()) {
      std::vector<std::pair<double, int>> found;
      tree_.knn(
          target, m, [&](int p) { return locs.ids[p]; }, accept, found);
      std::vector<int> rows(found.size());
      for (size_t j = 0; j < found.size(); ++j) rows[j] = found[j].second;
      return rows;
    }
    std::vector<std::pair<std::pair<double, int>, int>> cand;  // ((d2,id),row)
    cand.reserve(n);
    for (int i = 0; i < n; ++i) {
      if (!accept(i)) continue;
      cand.push_back({{dist2_to(locs.coords, i, target), locs.ids[i]}, i});
    }
    const int take = std::min<int>(m, static_cast<int>(cand.size()));
    std::partial_sort(cand.begin(), cand.begin() + take, cand.end());
    std::vector<int> rows(take);
    for (int j = 0; j < take; ++j) rows[j] = cand[j].second;
    return rows;
  }

 private:
  const LocationSet* locs_;
  detail::KdTree tree_;
};

// The min(m, n) reference rows nearest to target, tie-break (distance, id).
inline std::vector<int> query_neighbors(const LocationSet& locs,
                                        const Vector& target, int m,
                                        NeighborQueryOptions opts = {}) {
  return NeighborQuery(locs).nearest(target, m, opts);
}

}  // namespace rnnc
