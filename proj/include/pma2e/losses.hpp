#pragma once

// Chamfer distance (squared, mean-per-side) and the pretraining objectives
// built on it.

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <vector>

#include "autograd.hpp"
#include "geometry.hpp"

namespace pma2e {

/// Static k-d tree for exact nearest-neighbor queries. Ties resolve to the
/// lowest point index, matching a linear scan.
class NearestNeighborIndex {
 public:
  explicit NearestNeighborIndex(std::span<const Vec3> points) : points_(points.begin(), points.end()) {
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    nodes_.reserve(2 * points_.size() / kLeaf + 2);
    if (!points_.empty()) build(0, points_.size());
  }

  /// (squared distance, index) of the nearest point to q.
  std::pair<double, std::size_t> nearest(const Vec3& q) const {
    std::pair<double, std::size_t> best{std::numeric_limits<double>::infinity(), 0};
    if (!nodes_.empty()) search(0, q, best);
    return best;
  }

 private:
  static constexpr std::size_t kLeaf = 8;
  struct KdNode {
    std::size_t begin, end;
    int axis = -1;  // -1 marks a leaf
    double split = 0.0;
    std::size_t left = 0, right = 0;
  };

  std::size_t build(std::size_t begin, std::size_t end) {
    const std::size_t id = nodes_.size();
    nodes_.push_back({begin, end});
    if (end - begin <= kLeaf) return id;
    Vec3 lo{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
            std::numeric_limits<double>::infinity()};
    Vec3 hi{-lo[0], -lo[1], -lo[2]};
    for (std::size_t i = begin; i < end; ++i)
      for (int a = 0; a < 3; ++a) {
        lo[a] = std::min(lo[a], points_[order_[i]][a]);
        hi[a] = std::max(hi[a], points_[order_[i]][a]);
      }
    int axis = 0;
    for (int a = 1; a < 3; ++a)
      if (hi[a] - lo[a] > hi[axis] - lo[axis]) axis = a;
    if (hi[axis] == lo[axis]) return id;  // all coincident: keep as leaf
    const std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin), order_.begin() + static_cast<std::ptrdiff_t>(mid),
                     order_.begin() + static_cast<std::ptrdiff_t>(end),
                     [&](std::size_t x, std::size_t y) { return points_[x][axis] < points_[y][axis]; });
    const double split = points_[order_[mid]][axis];
    const std::size_t l = build(begin, mid);
    const std::size_t r = build(mid, end);
    nodes_[id].axis = axis;
    nodes_[id].split = split;
    nodes_[id].left = l;
    nodes_[id].right = r;
    return id;
  }

  void search(std::size_t id, const Vec3& q, std::pair<double, std::size_t>& best) const {
    const KdNode& n = nodes_[id];
    if (n.axis < 0) {
      for (std::size_t i = n.begin; i < n.end; ++i) {
        const std::size_t p = order_[i];
        const double d2 = squared_distance(points_[p], q);
        if (d2 < best.first || (d2 == best.first && p < best.second)) best = {d2, p};
      }
      return;
    }
    // left holds coordinates <= split, right holds coordinates >= split
    const double diff = q[n.axis] - n.split;
    const std::size_t near = diff <= 0 ? n.left : n.right;
    const std::size_t far = diff <= 0 ? n.right : n.left;
    search(near, q, best);
    if (diff * diff <= best.first) search(far, q, best);
  }

  std::vector<Vec3> points_;
  std::vector<std::size_t> order_;
  std::vector<KdNode> nodes_;
};

/// Mean over a of the squared distance to the nearest point of b.
inline double directed_chamfer(const PointCloud& a, const PointCloud& b) {
  const NearestNeighborIndex index(b.points());
  double s = 0.0;
  for (const auto& p : a) s += index.nearest(p).first;
  return s / static_cast<double>(a.size());
}

/// Symmetric Chamfer distance with squared Euclidean point distances.
inline double chamfer(const PointCloud& a, const PointCloud& b) {
  return directed_chamfer(a, b) + directed_chamfer(b, a);
}

/// Reconstruction loss for the global-feature (non-Transformer) path.
inline double loss_nontransformer(const PointCloud& recon, const PointCloud& clean) { return chamfer(recon, clean); }

/// Differentiable Chamfer distance. Inputs are [P,3] and [G,3], or batched
/// [B,P,3] and [B,G,3] in which case the per-item distances are averaged.
template <typename T>
Tensor<T> chamfer_loss(const Tensor<T>& a, const Tensor<T>& b) {
  const bool batched = a.rank() == 3;
  if (a.rank() != b.rank() || (a.rank() != 2 && a.rank() != 3) || a.shape().back() != 3 || b.shape().back() != 3 ||
      (batched && a.dim(0) != b.dim(0)))
    shape_error("chamfer_loss", a.shape(), b.shape());
  const std::size_t B = batched ? a.dim(0) : 1;
  const std::size_t P = a.dim(batched ? 1 : 0), G = b.dim(batched ? 1 : 0);
  require(B >= 1 && P >= 1 && G >= 1, ErrorKind::InvalidArgument, "chamfer_loss: empty point set");

  // nearest indices per direction, ties to the first index
  auto nn_ab = std::make_shared<std::vector<std::size_t>>(B * P);
  auto nn_ba = std::make_shared<std::vector<std::size_t>>(B * G);
  const auto& av = a.values();
  const auto& bv = b.values();
  auto d2 = [](const T* x, const T* y) {
    const double dx = static_cast<double>(x[0]) - y[0], dy = static_cast<double>(x[1]) - y[1],
                 dz = static_cast<double>(x[2]) - y[2];
    return dx * dx + dy * dy + dz * dz;
  };
  double total = 0.0;
  for (std::size_t bi = 0; bi < B; ++bi) {
    const T* A = av.data() + bi * P * 3;
    const T* Bp = bv.data() + bi * G * 3;
    std::vector<double> best_b(G, std::numeric_limits<double>::infinity());
    double sa = 0.0;
    for (std::size_t i = 0; i < P; ++i) {
      double best = std::numeric_limits<double>::infinity();
      std::size_t arg = 0;
      for (std::size_t j = 0; j < G; ++j) {
        const double d = d2(A + 3 * i, Bp + 3 * j);
        if (d < best) {
          best = d;
          arg = j;
        }
        if (d < best_b[j]) {
          best_b[j] = d;
          (*nn_ba)[bi * G + j] = i;
        }
      }
      (*nn_ab)[bi * P + i] = arg;
      sa += best;
    }
    double sb = 0.0;
    for (double v : best_b) sb += v;
    total += sa / static_cast<double>(P) + sb / static_cast<double>(G);
  }
  total /= static_cast<double>(B);

  auto an = a.node_ptr(), bn = b.node_ptr();
  return detail::make_op<T>("chamfer", {}, {static_cast<T>(total)}, {a, b}, [=](auto& self) {
    const double g = static_cast<double>(self.grad[0]) / static_cast<double>(B);
    std::vector<T>* ga = an->requires_grad ? &an->grad_buffer() : nullptr;
    std::vector<T>* gb = bn->requires_grad ? &bn->grad_buffer() : nullptr;
    auto push = [&](std::size_t bi, std::size_t i, std::size_t j, double w) {
      for (int c = 0; c < 3; ++c) {
        const double diff = static_cast<double>(an->data[(bi * P + i) * 3 + c]) - bn->data[(bi * G + j) * 3 + c];
        if (ga) (*ga)[(bi * P + i) * 3 + c] += static_cast<T>(2.0 * w * diff);
        if (gb) (*gb)[(bi * G + j) * 3 + c] -= static_cast<T>(2.0 * w * diff);
      }
    };
    for (std::size_t bi = 0; bi < B; ++bi) {
      for (std::size_t i = 0; i < P; ++i) push(bi, i, (*nn_ab)[bi * P + i], g / static_cast<double>(P));
      for (std::size_t j = 0; j < G; ++j) push(bi, (*nn_ba)[bi * G + j], j, g / static_cast<double>(G));
    }
  });
}

template <typename T>
Tensor<T> loss_nontransformer(const Tensor<T>& recon, const Tensor<T>& clean) {
  return chamfer_loss(recon, clean);
}

/// Mean Chamfer distance over paired patches: [m,k,3] vs [m,k,3].
template <typename T>
Tensor<T> loss_local(const Tensor<T>& pred_patches, const Tensor<T>& gt_patches) {
  if (pred_patches.rank() != 3 || pred_patches.shape() != gt_patches.shape())
    shape_error("loss_local", pred_patches.shape(), gt_patches.shape());
  return chamfer_loss(pred_patches, gt_patches);
}

/// Chamfer distance between predicted and reference patch centers.
template <typename T>
Tensor<T> loss_global(const Tensor<T>& pred_centers, const Tensor<T>& gt_centers) {
  if (pred_centers.rank() != 2 || pred_centers.shape() != gt_centers.shape())
    shape_error("loss_global", pred_centers.shape(), gt_centers.shape());
  return chamfer_loss(pred_centers, gt_centers);
}

/// Chamfer distance of a directly reconstructed whole cloud.
template <typename T>
Tensor<T> loss_whole(const Tensor<T>& pred_cloud, const Tensor<T>& clean) {
  return chamfer_loss(pred_cloud, clean);
}

struct LossReport {
  double total = 0.0;
  double local = 0.0;
  double global = 0.0;
  double lambda = 1.0;
};

inline LossReport loss_all(double local, double global, double lambda) {
  require(lambda >= 0.0 && std::isfinite(lambda), ErrorKind::InvalidArgument, "loss weight lambda must be >= 0");
  return {local + lambda * global, local, global, lambda};
}

/// Differentiable local + lambda * global.
template <typename T>
Tensor<T> loss_all(const Tensor<T>& local, const Tensor<T>& global, double lambda) {
  require(lambda >= 0.0 && std::isfinite(lambda), ErrorKind::InvalidArgument, "loss weight lambda must be >= 0");
  return add(local, scale(global, static_cast<T>(lambda)));
}

}  // namespace pma2e
