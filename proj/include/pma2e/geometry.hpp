#pragma once

// Geometric kernels: point clouds, affine maps, farthest-point sampling,
// k-nearest-neighbor queries and patch grouping.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "error.hpp"
#include "rng.hpp"

namespace pma2e {

using Vec3 = std::array<double, 3>;

inline double squared_distance(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0];
  const double dy = a[1] - b[1];
  const double dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

inline bool is_finite(const Vec3& p) {
  return std::isfinite(p[0]) && std::isfinite(p[1]) && std::isfinite(p[2]);
}

/// Non-empty ordered set of finite 3D points.
class PointCloud {
 public:
  explicit PointCloud(std::vector<Vec3> points) : points_(std::move(points)) {
    require(!points_.empty(), ErrorKind::InvalidArgument, "point cloud must hold at least one point");
    for (std::size_t i = 0; i < points_.size(); ++i) {
      if (!is_finite(points_[i])) {
        fail(ErrorKind::InvalidArgument, "point " + std::to_string(i) + " has a non-finite coordinate");
      }
    }
  }

  std::size_t size() const noexcept { return points_.size(); }
  const Vec3& operator[](std::size_t i) const { return points_[i]; }
  std::span<const Vec3> points() const noexcept { return points_; }
  auto begin() const noexcept { return points_.begin(); }
  auto end() const noexcept { return points_.end(); }

  /// Sub-cloud at the given indices, in the given order.
  PointCloud select(std::span<const std::size_t> indices) const {
    std::vector<Vec3> out;
    out.reserve(indices.size());
    for (auto i : indices) {
      require(i < points_.size(), ErrorKind::InvalidArgument, "select index out of range");
      out.push_back(points_[i]);
    }
    return PointCloud(std::move(out));
  }

  friend bool operator==(const PointCloud&, const PointCloud&) = default;

 private:
  std::vector<Vec3> points_;
};

/// Affine sub-families; bit flags recording which ones produced a transform.
enum AffineFamily : std::uint8_t {
  kScale = 1u << 0,
  kShear = 1u << 1,
  kReflect = 1u << 2,
  kRotate = 1u << 3,
  kTranslate = 1u << 4,
  kAllFamilies = 0x1f,
};

/// Upper 3x4 block of a homogeneous affine matrix; the bottom row is
/// implicitly [0 0 0 1].
struct AffineTransform {
  std::array<double, 12> m{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0};
  std::uint8_t families = 0;
  std::uint8_t reflect_mask = 0;  // bit a set => axis a was flipped

  static AffineTransform identity() { return {}; }

  static AffineTransform from_rows(const std::array<double, 12>& rows) {
    AffineTransform t;
    t.m = rows;
    for (double v : rows) require(std::isfinite(v), ErrorKind::InvalidArgument, "affine matrix entry is not finite");
    return t;
  }

  double operator()(int row, int col) const { return m[static_cast<std::size_t>(row * 4 + col)]; }
  double& operator()(int row, int col) { return m[static_cast<std::size_t>(row * 4 + col)]; }

  Vec3 apply(const Vec3& p) const {
    return {m[0] * p[0] + m[1] * p[1] + m[2] * p[2] + m[3],
            m[4] * p[0] + m[5] * p[1] + m[6] * p[2] + m[7],
            m[8] * p[0] + m[9] * p[1] + m[10] * p[2] + m[11]};
  }

  /// Determinant of the linear 3x3 part.
  double linear_determinant() const {
    const auto& a = m;
    return a[0] * (a[5] * a[10] - a[6] * a[9]) - a[1] * (a[4] * a[10] - a[6] * a[8]) +
           a[2] * (a[4] * a[9] - a[5] * a[8]);
  }

  bool is_finite() const {
    return std::all_of(m.begin(), m.end(), [](double v) { return std::isfinite(v); });
  }
};

/// Homogeneous product `after * before`: the transform that applies
/// `before` first.
inline AffineTransform compose(const AffineTransform& after, const AffineTransform& before) {
  AffineTransform out;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 4; ++c) {
      double v = 0.0;
      for (int j = 0; j < 3; ++j) v += after(r, j) * before(j, c);
      if (c == 3) v += after(r, 3);
      out(r, c) = v;
    }
  }
  out.families = after.families | before.families;
  out.reflect_mask = after.reflect_mask ^ before.reflect_mask;
  return out;
}

inline PointCloud affine_apply(const PointCloud& cloud, const AffineTransform& t) {
  require(t.is_finite(), ErrorKind::InvalidArgument, "affine matrix has non-finite entries");
  std::vector<Vec3> out;
  out.reserve(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    Vec3 q = t.apply(cloud[i]);
    if (!is_finite(q)) {
      std::ostringstream os;
      os << "affine_apply produced a non-finite point at index " << i << " from (" << cloud[i][0] << ", "
         << cloud[i][1] << ", " << cloud[i][2] << ")";
      fail(ErrorKind::InvalidArgument, os.str());
    }
    out.push_back(q);
  }
  return PointCloud(std::move(out));
}

/// Farthest-point sampling from an explicit start index. Each later pick
/// maximizes the squared distance to the already-picked set; ties go to the
/// lowest index and picked points are never revisited.
inline std::vector<std::size_t> farthest_point_sample_from(const PointCloud& cloud, std::size_t n,
                                                           std::size_t start) {
  const std::size_t w = cloud.size();
  require(n >= 1, ErrorKind::InvalidArgument, "farthest_point_sample: n must be >= 1");
  require(n <= w, ErrorKind::InvalidArgument,
          "farthest_point_sample: n=" + std::to_string(n) + " exceeds cloud size " + std::to_string(w));
  require(start < w, ErrorKind::InvalidArgument, "farthest_point_sample: start index out of range");

  std::vector<std::size_t> picked;
  picked.reserve(n);
  std::vector<double> min_d2(w, std::numeric_limits<double>::infinity());
  std::vector<char> taken(w, 0);
  std::size_t current = start;
  for (std::size_t s = 0; s < n; ++s) {
    picked.push_back(current);
    taken[current] = 1;
    if (s + 1 == n) break;
    std::size_t best = w;
    double best_d2 = -1.0;
    for (std::size_t i = 0; i < w; ++i) {
      if (taken[i]) continue;
      const double d2 = squared_distance(cloud[i], cloud[current]);
      if (d2 < min_d2[i]) min_d2[i] = d2;
      if (min_d2[i] > best_d2) {
        best_d2 = min_d2[i];
        best = i;
      }
    }
    current = best;
  }
  return picked;
}

/// Farthest-point sampling with a start index drawn uniformly from `rng`.
inline std::vector<std::size_t> farthest_point_sample(const PointCloud& cloud, std::size_t n, Rng& rng) {
  require(n >= 1 && n <= cloud.size(), ErrorKind::InvalidArgument,
          "farthest_point_sample: need 1 <= n <= w (n=" + std::to_string(n) + ", w=" + std::to_string(cloud.size()) +
              ")");
  return farthest_point_sample_from(cloud, n, uniform_index(rng, cloud.size()));
}

struct Neighborhood {
  static constexpr std::size_t kNoIndex = std::numeric_limits<std::size_t>::max();
  std::size_t query_index = kNoIndex;
  std::vector<std::size_t> indices;  // ascending distance, ties by index
  std::vector<double> distances;     // squared Euclidean
};

/// Exact k nearest neighbors of `query` by squared distance.
inline Neighborhood knn(const PointCloud& cloud, const Vec3& query, std::size_t k) {
  const std::size_t w = cloud.size();
  require(k >= 1 && k <= w, ErrorKind::InvalidArgument,
          "knn: need 1 <= k <= w (k=" + std::to_string(k) + ", w=" + std::to_string(w) + ")");
  std::vector<std::pair<double, std::size_t>> d(w);
  for (std::size_t i = 0; i < w; ++i) d[i] = {squared_distance(cloud[i], query), i};
  std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end());
  Neighborhood nb;
  nb.indices.reserve(k);
  nb.distances.reserve(k);
  for (std::size_t j = 0; j < k; ++j) {
    nb.distances.push_back(d[j].first);
    nb.indices.push_back(d[j].second);
  }
  return nb;
}

inline Neighborhood knn_of_index(const PointCloud& cloud, std::size_t query_index, std::size_t k) {
  require(query_index < cloud.size(), ErrorKind::InvalidArgument, "knn: query index out of range");
  Neighborhood nb = knn(cloud, cloud[query_index], k);
  nb.query_index = query_index;
  return nb;
}

/// Patch centers plus their k-point neighborhoods. `patches` is row-major
/// n x k.
struct PatchSet {
  std::size_t n = 0;
  std::size_t k = 0;
  std::vector<Vec3> centers;
  std::vector<std::size_t> center_indices;
  std::vector<Vec3> patches;
  std::vector<std::size_t> point_indices;
  bool normalized = false;

  const Vec3& point(std::size_t patch, std::size_t j) const { return patches[patch * k + j]; }
};

inline PatchSet patchify(const PointCloud& cloud, std::size_t n, std::size_t k, Rng& rng) {
  require(k >= 1 && k <= cloud.size(), ErrorKind::InvalidArgument,
          "patchify: need 1 <= k <= w (k=" + std::to_string(k) + ", w=" + std::to_string(cloud.size()) + ")");
  PatchSet ps;
  ps.n = n;
  ps.k = k;
  ps.center_indices = farthest_point_sample(cloud, n, rng);
  ps.centers.reserve(n);
  ps.patches.reserve(n * k);
  ps.point_indices.reserve(n * k);
  for (auto c : ps.center_indices) {
    ps.centers.push_back(cloud[c]);
    const Neighborhood nb = knn(cloud, cloud[c], k);
    for (auto i : nb.indices) {
      ps.patches.push_back(cloud[i]);
      ps.point_indices.push_back(i);
    }
  }
  return ps;
}

inline PatchSet normalize_patches(PatchSet ps) {
  require(!ps.normalized, ErrorKind::InvalidArgument, "normalize_patches: patch set is already normalized");
  for (std::size_t i = 0; i < ps.n; ++i) {
    for (std::size_t j = 0; j < ps.k; ++j) {
      Vec3& p = ps.patches[i * ps.k + j];
      for (int a = 0; a < 3; ++a) p[a] -= ps.centers[i][a];
    }
  }
  ps.normalized = true;
  return ps;
}

inline PatchSet denormalize_patches(PatchSet ps) {
  require(ps.normalized, ErrorKind::InvalidArgument, "denormalize_patches: patch set is not normalized");
  for (std::size_t i = 0; i < ps.n; ++i) {
    for (std::size_t j = 0; j < ps.k; ++j) {
      Vec3& p = ps.patches[i * ps.k + j];
      for (int a = 0; a < 3; ++a) p[a] += ps.centers[i][a];
    }
  }
  ps.normalized = false;
  return ps;
}

/// Applies one affine matrix point-wise to every center and (absolute)
/// patch point.
inline PatchSet affine_apply(PatchSet ps, const AffineTransform& t) {
  require(!ps.normalized, ErrorKind::InvalidArgument, "affine_apply: patch set must be in absolute coordinates");
  for (auto& c : ps.centers) c = t.apply(c);
  for (auto& p : ps.patches) p = t.apply(p);
  for (const auto& p : ps.patches) require(is_finite(p), ErrorKind::InvalidArgument, "affine_apply: non-finite patch point");
  for (const auto& c : ps.centers) require(is_finite(c), ErrorKind::InvalidArgument, "affine_apply: non-finite center");
  return ps;
}

}  // namespace pma2e
