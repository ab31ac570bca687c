#pragma once

// Input corruptions: random affine transforms drawn from configurable
// sub-families, and the masking strategies (random-sized KNN clusters,
// fixed-sized KNN clusters, view occlusion, patch masking).

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <numbers>
#include <string>
#include <unordered_map>
#include <vector>

#include "geometry.hpp"

namespace pma2e {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  friend bool operator==(const Range&, const Range&) = default;
};

/// Sampling ranges for the five affine sub-families. Clouds are expected to
/// be normalized to the unit sphere, which is what the default magnitudes
/// are calibrated against.
struct AffineFamilySpec {
  std::array<Range, 3> rotate{{{-std::numbers::pi, std::numbers::pi},
                               {-std::numbers::pi, std::numbers::pi},
                               {-std::numbers::pi, std::numbers::pi}}};
  std::array<Range, 3> translate{{{-0.2, 0.2}, {-0.2, 0.2}, {-0.2, 0.2}}};
  std::array<double, 3> reflect{0.5, 0.5, 0.5};
  Range shear{-0.25, 0.25};
  std::array<Range, 3> scale{{{2.0 / 3.0, 1.5}, {2.0 / 3.0, 1.5}, {2.0 / 3.0, 1.5}}};
  std::uint8_t enabled = kAllFamilies;

  static AffineFamilySpec none() {
    AffineFamilySpec s;
    s.enabled = 0;
    return s;
  }

  static AffineFamilySpec only(std::uint8_t families) {
    AffineFamilySpec s;
    s.enabled = families;
    return s;
  }

  /// Every range collapsed to the identity value and no flips.
  static AffineFamilySpec zero_magnitude() {
    AffineFamilySpec s;
    for (auto& r : s.rotate) r = {0.0, 0.0};
    for (auto& r : s.translate) r = {0.0, 0.0};
    s.reflect = {0.0, 0.0, 0.0};
    s.shear = {0.0, 0.0};
    for (auto& r : s.scale) r = {1.0, 1.0};
    return s;
  }

  void validate() const {
    auto ordered = [](const Range& r, const char* what) {
      require(std::isfinite(r.lo) && std::isfinite(r.hi) && r.lo <= r.hi, ErrorKind::Config,
              std::string("affine spec: ") + what + " range must be finite with lo <= hi");
    };
    for (const auto& r : rotate) ordered(r, "rotate");
    for (const auto& r : translate) ordered(r, "translate");
    ordered(shear, "shear");
    for (const auto& r : scale) {
      ordered(r, "scale");
      require(r.lo > 0.0, ErrorKind::Config, "affine spec: scale range must be strictly positive");
    }
    for (double p : reflect) {
      require(p >= 0.0 && p <= 1.0, ErrorKind::Config, "affine spec: reflect probability must lie in [0,1]");
    }
    require((enabled & ~kAllFamilies) == 0, ErrorKind::Config, "affine spec: unknown sub-family flag");
  }

  friend bool operator==(const AffineFamilySpec&, const AffineFamilySpec&) = default;
};

namespace detail {

inline AffineTransform linear(const std::array<double, 9>& a, std::uint8_t family) {
  AffineTransform t;
  t.m = {a[0], a[1], a[2], 0, a[3], a[4], a[5], 0, a[6], a[7], a[8], 0};
  t.families = family;
  return t;
}

}  // namespace detail

/// Sampled sub-transforms of the enabled families, in application order
/// Scale, Shear, Reflect, Rotate, Translate.
inline std::vector<AffineTransform> sample_affine_components(const AffineFamilySpec& spec, Rng& rng) {
  spec.validate();
  std::vector<AffineTransform> parts;
  if (spec.enabled & kScale) {
    const double sx = uniform_real(rng, spec.scale[0].lo, spec.scale[0].hi);
    const double sy = uniform_real(rng, spec.scale[1].lo, spec.scale[1].hi);
    const double sz = uniform_real(rng, spec.scale[2].lo, spec.scale[2].hi);
    parts.push_back(detail::linear({sx, 0, 0, 0, sy, 0, 0, 0, sz}, kScale));
  }
  if (spec.enabled & kShear) {
    std::array<double, 6> s{};
    for (auto& v : s) v = uniform_real(rng, spec.shear.lo, spec.shear.hi);
    parts.push_back(detail::linear({1, s[0], s[1], s[2], 1, s[3], s[4], s[5], 1}, kShear));
  }
  if (spec.enabled & kReflect) {
    std::array<double, 3> f{1, 1, 1};
    std::uint8_t mask = 0;
    for (int a = 0; a < 3; ++a) {
      if (std::bernoulli_distribution(spec.reflect[static_cast<std::size_t>(a)])(rng)) {
        f[static_cast<std::size_t>(a)] = -1;
        mask |= static_cast<std::uint8_t>(1u << a);
      }
    }
    auto t = detail::linear({f[0], 0, 0, 0, f[1], 0, 0, 0, f[2]}, kReflect);
    t.reflect_mask = mask;
    parts.push_back(t);
  }
  if (spec.enabled & kRotate) {
    const double ax = uniform_real(rng, spec.rotate[0].lo, spec.rotate[0].hi);
    const double ay = uniform_real(rng, spec.rotate[1].lo, spec.rotate[1].hi);
    const double az = uniform_real(rng, spec.rotate[2].lo, spec.rotate[2].hi);
    const auto rx = detail::linear({1, 0, 0, 0, std::cos(ax), -std::sin(ax), 0, std::sin(ax), std::cos(ax)}, kRotate);
    const auto ry = detail::linear({std::cos(ay), 0, std::sin(ay), 0, 1, 0, -std::sin(ay), 0, std::cos(ay)}, kRotate);
    const auto rz = detail::linear({std::cos(az), -std::sin(az), 0, std::sin(az), std::cos(az), 0, 0, 0, 1}, kRotate);
    parts.push_back(compose(rz, compose(ry, rx)));
  }
  if (spec.enabled & kTranslate) {
    AffineTransform t;
    for (int a = 0; a < 3; ++a) {
      const auto& r = spec.translate[static_cast<std::size_t>(a)];
      t(a, 3) = uniform_real(rng, r.lo, r.hi);
    }
    t.families = kTranslate;
    parts.push_back(t);
  }
  return parts;
}

/// One random affine transform: the product of the enabled sub-transforms.
/// An empty enabled set yields the identity.
inline AffineTransform sample_affine(const AffineFamilySpec& spec, Rng& rng) {
  AffineTransform total = AffineTransform::identity();
  for (const auto& part : sample_affine_components(spec, rng)) total = compose(part, total);
  return total;
}

// ---------------------------------------------------------------------------
// Masking

struct MaskPlan {
  std::vector<std::size_t> masked;   // sorted
  std::vector<std::size_t> visible;  // sorted complement
  double ratio = 0.0;
  std::vector<std::size_t> cluster_sizes;
  std::vector<std::size_t> cluster_centers;  // KNN cluster masking only, in drop order

  std::size_t total() const noexcept { return masked.size(); }
  std::size_t clusters() const noexcept { return cluster_sizes.size(); }
  std::size_t count() const noexcept { return masked.size() + visible.size(); }
};

struct MaskedCloud {
  MaskPlan plan;
  PointCloud visible;
};

/// floor(ratio * count). The small slack absorbs products such as
/// 0.57 * 100 that land one ulp below an integer.
inline std::size_t mask_budget(double ratio, std::size_t count) {
  require(ratio > 0.0 && ratio < 1.0, ErrorKind::DegenerateMask,
          "masking ratio must lie in (0,1), got " + std::to_string(ratio));
  const auto budget = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(count) + 1e-9));
  require(budget >= 1, ErrorKind::DegenerateMask, "mask would be empty");
  require(budget < count, ErrorKind::DegenerateMask, "mask would consume all points");
  return budget;
}

namespace detail {

inline MaskPlan finish_plan(std::vector<char> dropped, double ratio, std::vector<std::size_t> sizes) {
  MaskPlan plan;
  plan.ratio = ratio;
  plan.cluster_sizes = std::move(sizes);
  for (std::size_t i = 0; i < dropped.size(); ++i) (dropped[i] ? plan.masked : plan.visible).push_back(i);
  return plan;
}

}  // namespace detail

/// Chooses a cluster center among the currently surviving point indices.
using CenterPicker = std::function<std::size_t(std::span<const std::size_t> surviving)>;

/// Drops clusters of the given sizes in order. Each cluster removes the
/// nearest not-yet-dropped points (ties by index) around a surviving center
/// supplied by `pick`.
inline MaskedCloud drop_knn_clusters(const PointCloud& cloud, double ratio, std::vector<std::size_t> sizes,
                                     const CenterPicker& pick) {
  const std::size_t w = cloud.size();
  std::vector<char> dropped(w, 0);
  std::vector<std::size_t> surviving(w);
  std::iota(surviving.begin(), surviving.end(), std::size_t{0});
  std::vector<std::pair<double, std::size_t>> d;
  std::vector<std::size_t> centers;
  for (std::size_t size : sizes) {
    require(size >= 1 && size <= surviving.size(), ErrorKind::DegenerateMask, "cluster size exceeds surviving points");
    const std::size_t center = pick(surviving);
    require(center < w && !dropped[center], ErrorKind::InvalidArgument, "cluster center must be a surviving point");
    centers.push_back(center);
    d.clear();
    for (auto i : surviving) d.emplace_back(squared_distance(cloud[i], cloud[center]), i);
    std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(size), d.end());
    for (std::size_t j = 0; j < size; ++j) dropped[d[j].second] = 1;
    std::erase_if(surviving, [&](std::size_t i) { return dropped[i] != 0; });
  }
  MaskPlan plan = detail::finish_plan(std::move(dropped), ratio, std::move(sizes));
  plan.cluster_centers = std::move(centers);
  PointCloud vis = cloud.select(plan.visible);
  return {std::move(plan), std::move(vis)};
}

inline CenterPicker random_center_picker(Rng& rng) {
  return [&rng](std::span<const std::size_t> surviving) { return surviving[uniform_index(rng, surviving.size())]; };
}

/// Uniform composition of `total` into `parts` positive integers
/// (stars and bars over the total - 1 gaps).
inline std::vector<std::size_t> random_composition(std::size_t total, std::size_t parts, Rng& rng) {
  require(parts >= 1 && parts <= total, ErrorKind::InvalidArgument, "composition needs 1 <= parts <= total");
  std::vector<std::size_t> gaps(total - 1);
  std::iota(gaps.begin(), gaps.end(), std::size_t{1});
  // partial Fisher-Yates to choose parts-1 distinct cut positions
  for (std::size_t i = 0; i + 1 < parts; ++i) {
    const std::size_t j = i + uniform_index(rng, gaps.size() - i);
    std::swap(gaps[i], gaps[j]);
  }
  std::vector<std::size_t> cuts(gaps.begin(), gaps.begin() + static_cast<std::ptrdiff_t>(parts - 1));
  std::sort(cuts.begin(), cuts.end());
  std::vector<std::size_t> sizes;
  std::size_t prev = 0;
  for (auto c : cuts) {
    sizes.push_back(c - prev);
    prev = c;
  }
  sizes.push_back(total - prev);
  return sizes;
}

/// Random-sized KNN cluster masking with kappa drawn from [1, kappa_max].
inline MaskedCloud mask_random_clusters(const PointCloud& cloud, double ratio, Rng& rng, std::size_t kappa_max = 8) {
  require(kappa_max >= 1, ErrorKind::Config, "kappa_max must be >= 1");
  const std::size_t budget = mask_budget(ratio, cloud.size());
  const std::size_t kappa = 1 + uniform_index(rng, std::min(kappa_max, budget));
  auto sizes = random_composition(budget, kappa, rng);
  return drop_knn_clusters(cloud, ratio, std::move(sizes), random_center_picker(rng));
}

inline std::vector<std::size_t> fixed_cluster_sizes(std::size_t budget, std::size_t cluster_size) {
  require(cluster_size >= 1, ErrorKind::Config, "cluster_size must be >= 1");
  std::vector<std::size_t> sizes(budget / cluster_size, cluster_size);
  if (budget % cluster_size) sizes.push_back(budget % cluster_size);
  return sizes;
}

inline MaskedCloud mask_fixed_clusters(const PointCloud& cloud, double ratio, std::size_t cluster_size, Rng& rng) {
  const std::size_t budget = mask_budget(ratio, cloud.size());
  return drop_knn_clusters(cloud, ratio, fixed_cluster_sizes(budget, cluster_size), random_center_picker(rng));
}

/// View-occlusion masking for a camera looking from direction `view`
/// (points with larger projection on `view` are nearer the camera). A grid
/// depth buffer on the image plane decides occlusion; the resolution is the
/// coarsest that keeps at least w - budget points, and the visible set is
/// then trimmed by depth to exactly that size.
inline MaskedCloud mask_view_occlusion_along(const PointCloud& cloud, double ratio, Vec3 view) {
  const std::size_t w = cloud.size();
  const std::size_t budget = mask_budget(ratio, w);
  const std::size_t keep = w - budget;
  const double norm = std::sqrt(view[0] * view[0] + view[1] * view[1] + view[2] * view[2]);
  require(norm > 0.0 && std::isfinite(norm), ErrorKind::InvalidArgument, "view direction must be non-zero");
  for (auto& v : view) v /= norm;

  // orthonormal image-plane basis
  Vec3 helper = std::abs(view[0]) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
  Vec3 u{view[1] * helper[2] - view[2] * helper[1], view[2] * helper[0] - view[0] * helper[2],
         view[0] * helper[1] - view[1] * helper[0]};
  const double un = std::sqrt(u[0] * u[0] + u[1] * u[1] + u[2] * u[2]);
  for (auto& c : u) c /= un;
  const Vec3 v{view[1] * u[2] - view[2] * u[1], view[2] * u[0] - view[0] * u[2], view[0] * u[1] - view[1] * u[0]};

  std::vector<double> depth(w), pu(w), pv(w);
  double umin = std::numeric_limits<double>::infinity(), umax = -umin, vmin = umin, vmax = -umin;
  for (std::size_t i = 0; i < w; ++i) {
    const auto& p = cloud[i];
    depth[i] = p[0] * view[0] + p[1] * view[1] + p[2] * view[2];
    pu[i] = p[0] * u[0] + p[1] * u[1] + p[2] * u[2];
    pv[i] = p[0] * v[0] + p[1] * v[1] + p[2] * v[2];
    umin = std::min(umin, pu[i]);
    umax = std::max(umax, pu[i]);
    vmin = std::min(vmin, pv[i]);
    vmax = std::max(vmax, pv[i]);
  }
  const double extent = std::max(umax - umin, vmax - vmin);

  auto zbuffer = [&](std::size_t g) {
    std::unordered_map<std::size_t, std::size_t> front;
    for (std::size_t i = 0; i < w; ++i) {
      std::size_t cu = 0, cv = 0;
      if (extent > 0.0) {
        cu = std::min(g - 1, static_cast<std::size_t>((pu[i] - umin) / extent * static_cast<double>(g)));
        cv = std::min(g - 1, static_cast<std::size_t>((pv[i] - vmin) / extent * static_cast<double>(g)));
      }
      auto [it, inserted] = front.try_emplace(cu * g + cv, i);
      if (!inserted && depth[i] > depth[it->second]) it->second = i;
    }
    std::vector<std::size_t> out;
    out.reserve(front.size());
    for (const auto& [cell, i] : front) out.push_back(i);
    return out;
  };

  const auto max_grid = static_cast<std::size_t>(8.0 * std::sqrt(static_cast<double>(w))) + 8;
  std::vector<std::size_t> front;
  for (std::size_t g = 1; g <= max_grid; ++g) {
    front = zbuffer(g);
    if (front.size() >= keep) break;
  }

  auto nearer = [&](std::size_t a, std::size_t b) { return depth[a] > depth[b] || (depth[a] == depth[b] && a < b); };
  std::vector<char> visible(w, 0);
  if (front.size() >= keep) {
    std::sort(front.begin(), front.end(), nearer);
    for (std::size_t j = 0; j < keep; ++j) visible[front[j]] = 1;
  } else {
    for (auto i : front) visible[i] = 1;
    std::vector<std::size_t> rest;
    for (std::size_t i = 0; i < w; ++i)
      if (!visible[i]) rest.push_back(i);
    std::sort(rest.begin(), rest.end(), nearer);
    for (std::size_t j = 0; j < keep - front.size(); ++j) visible[rest[j]] = 1;
  }
  std::vector<char> dropped(w);
  for (std::size_t i = 0; i < w; ++i) dropped[i] = !visible[i];
  MaskPlan plan = detail::finish_plan(std::move(dropped), ratio, {budget});
  PointCloud vis = cloud.select(plan.visible);
  return {std::move(plan), std::move(vis)};
}

inline Vec3 random_unit_vector(Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  for (;;) {
    Vec3 v{g(rng), g(rng), g(rng)};
    const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    if (n > 1e-12) return {v[0] / n, v[1] / n, v[2] / n};
  }
}

inline MaskedCloud mask_view_occlusion(const PointCloud& cloud, double ratio, Rng& rng) {
  mask_budget(ratio, cloud.size());
  return mask_view_occlusion_along(cloud, ratio, random_unit_vector(rng));
}

/// Masks floor(ratio * n) of n patches uniformly without replacement. Each
/// masked patch counts as a unit-size cluster.
inline MaskPlan mask_patches(std::size_t n, double ratio, Rng& rng) {
  const std::size_t m = mask_budget(ratio, n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = 0; i < m; ++i) std::swap(order[i], order[i + uniform_index(rng, n - i)]);
  std::vector<char> dropped(n, 0);
  for (std::size_t i = 0; i < m; ++i) dropped[order[i]] = 1;
  return detail::finish_plan(std::move(dropped), ratio, std::vector<std::size_t>(m, 1));
}

/// Plan that masks nothing: every index visible.
inline MaskPlan unmasked_plan(std::size_t n) {
  MaskPlan plan;
  plan.visible.resize(n);
  std::iota(plan.visible.begin(), plan.visible.end(), std::size_t{0});
  return plan;
}

}  // namespace pma2e
