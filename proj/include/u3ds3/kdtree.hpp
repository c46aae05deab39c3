#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <queue>
#include <vector>

namespace u3ds3 {

// Static 3-D kd-tree for k-nearest-neighbor queries. Ties on distance are
// broken by point index so query results do not depend on traversal order.
class KdTree {
 public:
  KdTree() = default;

  explicit KdTree(const std::vector<std::array<double, 3>>& pts) { build(pts); }

  void build(const std::vector<std::array<double, 3>>& pts) {
    pts_ = pts;
    order_.resize(pts.size());
    for (uint32_t i = 0; i < pts.size(); ++i) order_[i] = i;
    nodes_.clear();
    nodes_.reserve(pts.size());
    if (!pts.empty()) root_ = build_range(0, static_cast<uint32_t>(pts.size()));
  }

  size_t size() const { return pts_.size(); }

  // Returns the k nearest point indices to q (fewer if the tree is smaller),
  // sorted by (distance, index) ascending. A point at the query position is
  // its own nearest neighbor.
  std::vector<uint32_t> knn(const std::array<double, 3>& q, uint32_t k) const {
    std::priority_queue<Entry> heap;  // max-heap keeps the current worst on top
    if (root_ >= 0 && k > 0) search(root_, q, k, heap);
    std::vector<Entry> tmp;
    tmp.reserve(heap.size());
    while (!heap.empty()) {
      tmp.push_back(heap.top());
      heap.pop();
    }
    std::vector<uint32_t> out(tmp.size());
    for (size_t i = 0; i < tmp.size(); ++i) out[tmp.size() - 1 - i] = tmp[i].idx;
    return out;
  }

  // All point indices within radius r of q, sorted by (distance, index).
  std::vector<uint32_t> radius(const std::array<double, 3>& q, double r) const {
    std::vector<Entry> found;
    if (root_ >= 0) search_radius(root_, q, r * r, found);
    std::sort(found.begin(), found.end());
    std::vector<uint32_t> out(found.size());
    for (size_t i = 0; i < found.size(); ++i) out[i] = found[i].idx;
    return out;
  }

 private:
  struct Node {
    uint32_t point;
    int32_t left = -1, right = -1;
    uint8_t axis;
  };
  struct Entry {
    double d2;
    uint32_t idx;
    bool operator<(const Entry& o) const {
      return d2 != o.d2 ? d2 < o.d2 : idx < o.idx;
    }
  };

  int32_t build_range(uint32_t lo, uint32_t hi) {
    if (lo >= hi) return -1;
    std::array<double, 3> mn = pts_[order_[lo]], mx = pts_[order_[lo]];
    for (uint32_t i = lo + 1; i < hi; ++i) {
      for (int a = 0; a < 3; ++a) {
        mn[a] = std::min(mn[a], pts_[order_[i]][a]);
        mx[a] = std::max(mx[a], pts_[order_[i]][a]);
      }
    }
    int axis = 0;
    for (int a = 1; a < 3; ++a)
      if (mx[a] - mn[a] > mx[axis] - mn[axis]) axis = a;
    uint32_t mid = (lo + hi) / 2;
    std::nth_element(order_.begin() + lo, order_.begin() + mid, order_.begin() + hi,
                     [&](uint32_t a, uint32_t b) {
                       double va = pts_[a][axis], vb = pts_[b][axis];
                       return va != vb ? va < vb : a < b;
                     });
    Node n;
    n.point = order_[mid];
    n.axis = static_cast<uint8_t>(axis);
    int32_t id = static_cast<int32_t>(nodes_.size());
    nodes_.push_back(n);
    nodes_[id].left = build_range(lo, mid);
    nodes_[id].right = build_range(mid + 1, hi);
    return id;
  }

  void search(int32_t node, const std::array<double, 3>& q, uint32_t k,
              std::priority_queue<Entry>& heap) const {
    const Node& n = nodes_[node];
    const auto& p = pts_[n.point];
    double d2 = 0;
    for (int a = 0; a < 3; ++a) d2 += (p[a] - q[a]) * (p[a] - q[a]);
    Entry e{d2, n.point};
    if (heap.size() < k) {
      heap.push(e);
    } else if (e < heap.top()) {
      heap.pop();
      heap.push(e);
    }
    double delta = q[n.axis] - p[n.axis];
    int32_t near = delta < 0 ? n.left : n.right;
    int32_t far = delta < 0 ? n.right : n.left;
    if (near >= 0) search(near, q, k, heap);
    if (far >= 0 && (heap.size() < k || delta * delta <= heap.top().d2))
      search(far, q, k, heap);
  }

  void search_radius(int32_t node, const std::array<double, 3>& q, double r2,
                     std::vector<Entry>& out) const {
    const Node& n = nodes_[node];
    const auto& p = pts_[n.point];
    double d2 = 0;
    for (int a = 0; a < 3; ++a) d2 += (p[a] - q[a]) * (p[a] - q[a]);
    if (d2 <= r2) out.push_back({d2, n.point});
    double delta = q[n.axis] - p[n.axis];
    int32_t near = delta < 0 ? n.left : n.right;
    int32_t far = delta < 0 ? n.right : n.left;
    if (near >= 0) search_radius(near, q, r2, out);
    if (far >= 0 && delta * delta <= r2) search_radius(far, q, r2, out);
  }

  std::vector<std::array<double, 3>> pts_;
  std::vector<uint32_t> order_;
  std::vector<Node> nodes_;
  int32_t root_ = -1;
};

}  // namespace u3ds3
