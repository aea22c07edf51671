#pragma once

// Metal localization: a two-level balanced-histogram split (soft vs dense,
// then bone vs metal within the dense voxels), DBSCAN cleanup of the metal
// candidates, the metal-only volume, and the per-view metal-shadow mask.

#include "raymar/core.hpp"
#include "raymar/projector.hpp"
#include "raymar/registration.hpp"

#include <optional>
#include <unordered_map>

namespace raymar {

struct DbscanParams {
  double eps = 0;       // mm; <= 0 picks 2x the largest voxel spacing
  int min_pts = 10;     // neighborhood count including the point itself
  int min_cluster_voxels = 20;
  std::optional<int> expected_clusters;

  void validate() const {
    if (min_pts < 1) throw std::invalid_argument("dbscan: min_pts >= 1");
    if (min_cluster_voxels < 1)
      throw std::invalid_argument("dbscan: cluster floor >= 1");
  }
};

// Plain DBSCAN over 3D points with a uniform-grid neighborhood index.
// Returns one label per point, -1 for noise.
inline std::vector<int> dbscan_labels(const std::vector<Vec3>& pts,
                                      double eps, int min_pts) {
  if (eps <= 0) throw std::invalid_argument("dbscan: eps must be > 0");
  const int n = int(pts.size());
  std::vector<int> label(std::size_t(n), -2);  // -2 unvisited, -1 noise
  auto key = [&](const Vec3& p) {
    auto cell = [&](double x) { return std::int64_t(std::floor(x / eps)); };
    return (cell(p.x) * 73856093) ^ (cell(p.y) * 19349663) ^
           (cell(p.z) * 83492791);
  };
  std::unordered_map<std::int64_t, std::vector<int>> grid;
  for (int i = 0; i < n; ++i) grid[key(pts[i])].push_back(i);
  const double eps2 = eps * eps;
  std::vector<int> hood;
  auto neighbors = [&](int i) {
    hood.clear();
    const Vec3& p = pts[std::size_t(i)];
    for (int dx = -1; dx <= 1; ++dx)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dz = -1; dz <= 1; ++dz) {
          Vec3 probe{p.x + dx * eps, p.y + dy * eps, p.z + dz * eps};
          auto it = grid.find(key(probe));
          if (it == grid.end()) continue;
          for (int j : it->second) {
            Vec3 d = pts[std::size_t(j)] - p;
            if (d.dot(d) <= eps2) hood.push_back(j);
          }
        }
  };
  int next = 0;
  std::vector<int> frontier;
  for (int i = 0; i < n; ++i) {
    if (label[std::size_t(i)] != -2) continue;
    neighbors(i);
    if (int(hood.size()) < min_pts) {
      label[std::size_t(i)] = -1;
      continue;
    }
    int cl = next++;
    label[std::size_t(i)] = cl;
    frontier = hood;
    for (std::size_t f = 0; f < frontier.size(); ++f) {
      int j = frontier[f];
      if (label[std::size_t(j)] == -1) label[std::size_t(j)] = cl;  // border
      if (label[std::size_t(j)] != -2) continue;
      label[std::size_t(j)] = cl;
      neighbors(j);
      if (int(hood.size()) >= min_pts)
        frontier.insert(frontier.end(), hood.begin(), hood.end());
    }
  }
  return label;
}

struct MetalSegmentation {
  BinaryMask3D mask;
  int cluster_count = 0;
};

// Two-level histogram split followed by DBSCAN cleanup. The first balance
// threshold separates the dense voxels (bone + metal) from soft tissue and
// air; the second, computed over the dense values only, separates metal
// from bone. Noise points and clusters under the size floor are discarded.
inline MetalSegmentation segment_metal(const Volume3D& vol,
                                       DbscanParams p = {}) {
  p.validate();
  if (p.eps <= 0)
    p.eps = 2.0 * std::max(vol.spacing.x,
                           std::max(vol.spacing.y, vol.spacing.z));
  double lo, hi;
  auto h1 = intensity_histogram(vol, lo, hi);
  if (hi == lo) throw std::runtime_error("no metal found");
  int t1 = bht_threshold(h1);
  const double scale1 = 256.0 / (hi - lo);
  std::vector<std::size_t> dense;
  double dlo = std::numeric_limits<double>::infinity();
  double dhi = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < vol.size(); ++i) {
    int b = std::clamp(int((vol.data[i] - lo) * scale1), 0, 255);
    if (b > t1) {
      dense.push_back(i);
      dlo = std::min(dlo, vol.data[i]);
      dhi = std::max(dhi, vol.data[i]);
    }
  }
  if (dense.empty() || dhi == dlo) throw std::runtime_error("no metal found");
  std::vector<std::uint64_t> h2(256, 0);
  const double scale2 = 256.0 / (dhi - dlo);
  for (std::size_t i : dense)
    h2[std::size_t(std::clamp(int((vol.data[i] - dlo) * scale2), 0, 255))]++;
  int t2 = bht_threshold(h2);
  // The balance point is a mass median, so on reconstructed (continuous)
  // data it lands inside the dominant dense mode. Metal is a sparse, far
  // mode, leaving a wide empty valley in the upper histogram; the threshold
  // is advanced to the far edge of the widest empty run above the balance
  // point. No valley spanning at least a tenth of the range means no
  // separated bright mode exists.
  {
    int best_w = 0, best_end = -1, run = 0;
    for (int b = t2 + 1; b < 256; ++b) {
      if (h2[std::size_t(b)] == 0) {
        if (++run > best_w) {
          best_w = run;
          best_end = b;
        }
      } else {
        run = 0;
      }
    }
    if (best_w < 26) throw std::runtime_error("no metal found");
    t2 = best_end;
  }
  // Bone-over-soft contrast also produces a wide valley, so the bright mode
  // additionally has to stand clear of everything below it: metal
  // attenuation is several times bone's, while bone is under twice the
  // brightest soft/streak values it would be confused with.
  {
    double cand_min = std::numeric_limits<double>::infinity();
    double rest_max = -std::numeric_limits<double>::infinity();
    for (std::size_t i : dense) {
      int b = std::clamp(int((vol.data[i] - dlo) * scale2), 0, 255);
      if (b > t2)
        cand_min = std::min(cand_min, vol.data[i]);
      else
        rest_max = std::max(rest_max, vol.data[i]);
    }
    if (cand_min < 2.0 * rest_max) throw std::runtime_error("no metal found");
  }
  std::vector<std::size_t> cand;
  for (std::size_t i : dense)
    if (std::clamp(int((vol.data[i] - dlo) * scale2), 0, 255) > t2)
      cand.push_back(i);
  if (cand.empty()) throw std::runtime_error("no metal found");

  std::vector<Vec3> pts;
  pts.reserve(cand.size());
  const int nx = vol.dims[0], ny = vol.dims[1];
  for (std::size_t i : cand) {
    int ix = int(i % nx);
    int iy = int((i / nx) % ny);
    int iz = int(i / (std::size_t(nx) * ny));
    pts.push_back(vol.voxel_center(ix, iy, iz));
  }
  auto labels = dbscan_labels(pts, p.eps, p.min_pts);
  int n_clusters = 0;
  for (int l : labels) n_clusters = std::max(n_clusters, l + 1);
  std::vector<std::size_t> sizes(std::size_t(n_clusters), 0);
  for (int l : labels)
    if (l >= 0) sizes[std::size_t(l)]++;

  MetalSegmentation out;
  out.mask.dims = vol.dims;
  out.mask.spacing = vol.spacing;
  out.mask.origin = vol.origin;
  out.mask.data.assign(vol.size(), 0);
  std::vector<bool> keep(std::size_t(n_clusters), false);
  for (int c = 0; c < n_clusters; ++c)
    keep[std::size_t(c)] = sizes[std::size_t(c)] >= std::size_t(p.min_cluster_voxels);
  for (std::size_t s = 0; s < cand.size(); ++s) {
    int l = labels[s];
    if (l >= 0 && keep[std::size_t(l)]) out.mask.data[cand[s]] = 1;
  }
  for (bool k : keep) out.cluster_count += k;
  if (out.cluster_count == 0) throw std::runtime_error("no metal found");
  if (p.expected_clusters && out.cluster_count != *p.expected_clusters)
    throw std::runtime_error(
        "metal cluster count " + std::to_string(out.cluster_count) +
        " does not match expected " + std::to_string(*p.expected_clusters));
  return out;
}

// Constant-rho volume over the mask; the paper's metal-only CT volume.
inline Volume3D metal_only_volume(const Volume3D& vol,
                                  const BinaryMask3D& mask, double rho) {
  if (!mask.same_grid(vol))
    throw std::invalid_argument("metal_only_volume: grid mismatch");
  if (rho <= 0) throw std::invalid_argument("metal_only_volume: rho <= 0");
  Volume3D out(vol.dims, vol.spacing, vol.origin);
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data[i] = mask.data[i] ? rho : 0.0;
  return out;
}

// Default metal attenuation: mean uncorrected intensity over the metal
// mask, clamped to at least 1.5x the bone value.
inline double estimate_rho(const Volume3D& vol, const BinaryMask3D& mask,
                           double bone_mu) {
  if (!mask.same_grid(vol))
    throw std::invalid_argument("estimate_rho: grid mismatch");
  double sum = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < vol.size(); ++i)
    if (mask.data[i]) {
      sum += vol.data[i];
      ++n;
    }
  if (n == 0) throw std::invalid_argument("estimate_rho: empty metal mask");
  return std::max(sum / double(n), 1.5 * bone_mu);
}

struct MetalShadowMask {
  ConeBeamGeometry geom;
  std::vector<std::uint8_t> data;

  MetalShadowMask() = default;
  explicit MetalShadowMask(const ConeBeamGeometry& g)
      : geom(g), data(std::size_t(g.n_views()) * g.nv * g.nu, 0) {}

  std::size_t index(int view, int v, int u) const {
    return (std::size_t(view) * geom.nv + v) * geom.nu + u;
  }
  bool get(int view, int v, int u) const {
    return data[index(view, v, u)] != 0;
  }
  std::size_t count() const {
    std::size_t n = 0;
    for (auto b : data) n += (b != 0);
    return n;
  }
};

// Pixels whose ray accumulates more than epsilon of metal line integral.
// The default threshold is half of one pure-metal sample, which separates
// genuine traversal from trilinear bleed at the metal boundary.
inline MetalShadowMask metal_shadow(const Volume3D& metal_vol,
                                    const ConeBeamGeometry& geom, double step,
                                    std::optional<double> epsilon = {}) {
  double eps;
  if (epsilon) {
    eps = *epsilon;
  } else {
    double rho = 0;
    for (double v : metal_vol.data) rho = std::max(rho, v);
    eps = 0.5 * rho * step;
  }
  auto proj = forward_project(metal_vol, geom, step);
  MetalShadowMask out(geom);
  for (std::size_t i = 0; i < proj.data.size(); ++i)
    out.data[i] = proj.data[i] > eps;
  return out;
}

}  // namespace raymar
