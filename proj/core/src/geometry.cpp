#include "deudf/geometry.hpp"

#include "deudf/error.hpp"
#include "parallel.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <string>

namespace deudf {

namespace {

bool neighbor_less(const Neighbor& a, const Neighbor& b) {
  if (a.distance_squared != b.distance_squared) return a.distance_squared < b.distance_squared;
  return a.index < b.index;
}

// Max-heap keyed on (distance, index): the top is the current worst candidate.
class BoundedHeap {
 public:
  explicit BoundedHeap(std::size_t k) : k_(k) { items_.reserve(k + 1); }

  bool full() const { return items_.size() >= k_; }
  const Neighbor& worst() const { return items_.front(); }

  void offer(const Neighbor& n) {
    if (!full()) {
      items_.push_back(n);
      std::push_heap(items_.begin(), items_.end(), neighbor_less);
    } else if (neighbor_less(n, items_.front())) {
      std::pop_heap(items_.begin(), items_.end(), neighbor_less);
      items_.back() = n;
      std::push_heap(items_.begin(), items_.end(), neighbor_less);
    }
  }

  std::vector<Neighbor> sorted() && {
    std::sort_heap(items_.begin(), items_.end(), neighbor_less);
    return std::move(items_);
  }

 private:
  std::size_t k_;
  std::vector<Neighbor> items_;
};

}  // namespace

std::pair<PointCloud, NormalizeTransform> normalize_to_cube(const PointCloud& cloud) {
  if (cloud.points.empty()) throw Error(ErrorCode::EmptyInput, "point list is empty");

  Vec3 lo = cloud.points.front();
  Vec3 hi = lo;
  for (const Vec3& p : cloud.points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const double longest = (hi - lo).maxCoeff();
  if (!(longest > 0.0)) {
    throw Error(ErrorCode::DegenerateBounds, "all points are identical");
  }

  NormalizeTransform transform;
  transform.translation = 0.5 * (lo + hi);
  transform.scale = 2.0 / longest;

  PointCloud out;
  out.points.reserve(cloud.size());
  for (const Vec3& p : cloud.points) {
    Vec3 q = transform.apply(p);
    // Guard against the last-ulp overshoot of the scaled extremes.
    out.points.push_back(q.cwiseMax(-1.0).cwiseMin(1.0));
  }
  out.normals = cloud.normals;
  return {std::move(out), transform};
}

std::pair<PointCloud, NormalizeTransform> normalize_to_cube(std::span<const Vec3> points) {
  PointCloud cloud;
  cloud.points.assign(points.begin(), points.end());
  return normalize_to_cube(cloud);
}

SpatialIndex::SpatialIndex(std::span<const Vec3> points, std::size_t leaf_size)
    : points_(points.begin(), points.end()), leaf_size_(std::max<std::size_t>(1, leaf_size)) {
  order_.resize(points_.size());
  for (std::uint32_t i = 0; i < order_.size(); ++i) order_[i] = i;
  if (!points_.empty()) {
    nodes_.reserve(2 * points_.size() / leaf_size_ + 1);
    build(0, static_cast<std::uint32_t>(points_.size()));
  }
}

std::int32_t SpatialIndex::build(std::uint32_t begin, std::uint32_t end) {
  const auto id = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back(Node{begin, end});
  if (end - begin <= leaf_size_) return id;

  Vec3 lo = points_[order_[begin]];
  Vec3 hi = lo;
  for (std::uint32_t i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_[order_[i]]);
    hi = hi.cwiseMax(points_[order_[i]]);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  if (hi[axis] == lo[axis]) return id;  // all coincident: keep as a leaf

  const std::uint32_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) {
                     return points_[a][axis] < points_[b][axis];
                   });
  const double split = points_[order_[mid]][axis];

  const std::int32_t left = build(begin, mid);
  const std::int32_t right = build(mid, end);
  nodes_[id].axis = axis;
  nodes_[id].split = split;
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

template <typename Heap>
void SpatialIndex::search(std::int32_t node_id, const Vec3& query, std::size_t k,
                          Heap& heap) const {
  const Node& node = nodes_[node_id];
  if (node.left < 0) {
    for (std::uint32_t i = node.begin; i < node.end; ++i) {
      const std::uint32_t idx = order_[i];
      heap.offer(Neighbor{idx, (points_[idx] - query).squaredNorm()});
    }
    return;
  }
  const double diff = query[node.axis] - node.split;
  const std::int32_t near = diff < 0.0 ? node.left : node.right;
  const std::int32_t far = diff < 0.0 ? node.right : node.left;
  search(near, query, k, heap);
  // Inclusive bound: an equidistant point with a lower index may sit across the plane.
  if (!heap.full() || diff * diff <= heap.worst().distance_squared) {
    search(far, query, k, heap);
  }
}

std::vector<Neighbor> SpatialIndex::knn(const Vec3& query, std::size_t k) const {
  if (k == 0 || k > points_.size()) {
    throw Error(ErrorCode::KTooLarge, "k=" + std::to_string(k) + " with " +
                                          std::to_string(points_.size()) + " points");
  }
  BoundedHeap heap(k);
  search(0, query, k, heap);
  return std::move(heap).sorted();
}

std::vector<std::uint32_t> SpatialIndex::knn_indices(const Vec3& query, std::size_t k) const {
  const auto neighbors = knn(query, k);
  std::vector<std::uint32_t> out(neighbors.size());
  std::transform(neighbors.begin(), neighbors.end(), out.begin(),
                 [](const Neighbor& n) { return n.index; });
  return out;
}

Neighbor SpatialIndex::nearest(const Vec3& query) const { return knn(query, 1).front(); }

SpatialIndex build_index(std::span<const Vec3> points) { return SpatialIndex(points); }

std::vector<std::uint32_t> knn_query(const SpatialIndex& index, const Vec3& query, std::size_t k) {
  return index.knn_indices(query, k);
}

PointCloud estimate_normals_pca(const PointCloud& cloud, std::size_t k,
                                NormalEstimationStats* stats, unsigned threads) {
  if (k < 3) throw Error(ErrorCode::TooFewPoints, "PCA needs k >= 3, got " + std::to_string(k));
  if (cloud.size() < k) {
    throw Error(ErrorCode::TooFewPoints, std::to_string(cloud.size()) +
                                             " points is fewer than k=" + std::to_string(k));
  }

  const SpatialIndex index(cloud.points);
  std::vector<Vec3> normals(cloud.size());
  std::vector<unsigned char> degenerate(cloud.size(), 0);

  detail::parallel_for(cloud.size(), threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto neighbors = index.knn(cloud.points[i], k);
      Vec3 mean = Vec3::Zero();
      for (const Neighbor& n : neighbors) mean += cloud.points[n.index];
      mean /= static_cast<double>(neighbors.size());
      Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
      for (const Neighbor& n : neighbors) {
        const Vec3 d = cloud.points[n.index] - mean;
        cov.noalias() += d * d.transpose();
      }
      cov /= static_cast<double>(neighbors.size());

      Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> solver(cov);
      const Vec3 eigenvalues = solver.eigenvalues();
      if (eigenvalues.cwiseAbs().maxCoeff() < 1e-12) {
        normals[i] = Vec3::UnitZ();
        degenerate[i] = 1;
        continue;
      }
      Vec3 n = solver.eigenvectors().col(0).normalized();
      for (int c = 0; c < 3; ++c) {
        if (std::abs(n[c]) > 1e-12) {
          if (n[c] < 0.0) n = -n;
          break;
        }
      }
      normals[i] = n;
    }
  });

  if (stats != nullptr) {
    stats->rank_deficient = static_cast<std::size_t>(
        std::count(degenerate.begin(), degenerate.end(), static_cast<unsigned char>(1)));
  }
  PointCloud out;
  out.points = cloud.points;
  out.normals = std::move(normals);
  return out;
}

}  // namespace deudf
