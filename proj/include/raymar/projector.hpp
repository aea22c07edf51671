#pragma once

// Ray generation and ray-profile extraction/integration for the circular
// cone-beam geometry, plus the full forward projector. Line integrals are
// midpoint-rule sums over uniformly spaced trilinear samples; profile
// correction re-integrates on the same lattice, so the two stay consistent
// by construction.

#include "raymar/core.hpp"
#include "raymar/parallel.hpp"

#include <utility>

namespace raymar {

struct RayProfile {
  std::vector<double> samples;  // mu, mm^-1
  double step = 0;              // mm between samples
  Vec3 entry;                   // world position of sample 0
  Vec3 direction;               // unit vector

  std::size_t size() const { return samples.size(); }
};

struct RayIndex {
  int view = 0;
  int u = 0;
  int v = 0;
};

inline double default_step(const Volume3D& vol) {
  return 0.5 * vol.min_spacing();
}

// Source position and detector-bin-center position for fractional detector
// coordinates (u, v). Bin centers live at integer indices; the detector
// center is at (nu/2 - 0.5, nv/2 - 0.5).
inline std::pair<Vec3, Vec3> ray_endpoints(const ConeBeamGeometry& g,
                                           int view, double u, double v) {
  if (view < 0 || view >= g.n_views())
    throw std::out_of_range("ray_endpoints: view out of range");
  double a = g.angles[view];
  double ca = std::cos(a), sa = std::sin(a);
  Vec3 src{g.sad * ca, g.sad * sa, 0.0};
  Vec3 det_center{-(g.sdd - g.sad) * ca, -(g.sdd - g.sad) * sa, 0.0};
  Vec3 u_dir{-sa, ca, 0.0};
  double pu = (u + 0.5 - g.nu / 2.0) * g.du();
  double pv = (v + 0.5 - g.nv / 2.0) * g.dv();
  Vec3 det = det_center + u_dir * pu + Vec3{0, 0, pv};
  return {src, det};
}

inline std::pair<Vec3, Vec3> ray_for(const ConeBeamGeometry& g,
                                     const RayIndex& idx) {
  if (idx.u < 0 || idx.u >= g.nu || idx.v < 0 || idx.v >= g.nv)
    throw std::out_of_range("ray_for: detector index out of range");
  return ray_endpoints(g, idx.view, double(idx.u), double(idx.v));
}

namespace detail {

// Clips the parametric segment src + t*dir, t in [0, tmax], against the
// voxel-center bounding box. Returns false when they do not intersect.
inline bool clip_to_volume(const Volume3D& vol, const Vec3& src,
                           const Vec3& dir, double tmax, double& t0,
                           double& t1) {
  Vec3 lo = vol.bbox_min(), hi = vol.bbox_max();
  t0 = 0.0;
  t1 = tmax;
  const double s[3] = {src.x, src.y, src.z};
  const double d[3] = {dir.x, dir.y, dir.z};
  const double l[3] = {lo.x, lo.y, lo.z};
  const double h[3] = {hi.x, hi.y, hi.z};
  for (int ax = 0; ax < 3; ++ax) {
    if (std::abs(d[ax]) < 1e-300) {
      if (s[ax] < l[ax] || s[ax] > h[ax]) return false;
      continue;
    }
    double ta = (l[ax] - s[ax]) / d[ax];
    double tb = (h[ax] - s[ax]) / d[ax];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  // Tiny shrink keeps midpoint samples strictly inside the box in the
  // presence of rounding.
  double pad = 1e-9 * std::max(1.0, std::abs(t1));
  t0 += pad;
  t1 -= pad;
  return t1 > t0;
}

// Trilinear sampler in grid coordinates, no bounds checks; callers must
// guarantee 0 <= g <= n-1 per axis.
inline double trilinear_unchecked(const Volume3D& vol, double gx, double gy,
                                  double gz) {
  const int nx = vol.dims[0], ny = vol.dims[1], nz = vol.dims[2];
  int i0 = int(gx), j0 = int(gy), k0 = int(gz);
  if (i0 >= nx - 1) i0 = nx - 2;
  if (j0 >= ny - 1) j0 = ny - 2;
  if (k0 >= nz - 1) k0 = nz - 2;
  if (i0 < 0) i0 = 0;
  if (j0 < 0) j0 = 0;
  if (k0 < 0) k0 = 0;
  double fx = gx - i0, fy = gy - j0, fz = gz - k0;
  const std::size_t sy = nx, sz = std::size_t(nx) * ny;
  const double* p = vol.data.data() + vol.index(i0, j0, k0);
  double c00 = p[0] + (p[1] - p[0]) * fx;
  double c10 = p[sy] + (p[sy + 1] - p[sy]) * fx;
  double c01 = p[sz] + (p[sz + 1] - p[sz]) * fx;
  double c11 = p[sz + sy] + (p[sz + sy + 1] - p[sz + sy]) * fx;
  double c0 = c00 + (c10 - c00) * fy;
  double c1 = c01 + (c11 - c01) * fy;
  return c0 + (c1 - c0) * fz;
}

}  // namespace detail

// Uniformly spaced samples of vol along the source->detector segment,
// restricted to the volume's bounding box. Empty when the ray misses.
inline RayProfile extract_profile(const Volume3D& vol, const Vec3& source,
                                  const Vec3& det, double step) {
  if (step <= 0) throw std::invalid_argument("extract_profile: step <= 0");
  Vec3 seg = det - source;
  double tmax = seg.norm();
  Vec3 dir = seg / tmax;
  RayProfile prof;
  prof.step = step;
  prof.direction = dir;
  double t0, t1;
  if (!detail::clip_to_volume(vol, source, dir, tmax, t0, t1)) return prof;
  int n = int((t1 - t0) / step);
  if (n <= 0) return prof;
  prof.entry = source + dir * (t0 + 0.5 * step);
  prof.samples.resize(n);
  // March in grid coordinates.
  double gx = (prof.entry.x - vol.origin.x) / vol.spacing.x;
  double gy = (prof.entry.y - vol.origin.y) / vol.spacing.y;
  double gz = (prof.entry.z - vol.origin.z) / vol.spacing.z;
  double dx = dir.x * step / vol.spacing.x;
  double dy = dir.y * step / vol.spacing.y;
  double dz = dir.z * step / vol.spacing.z;
  for (int i = 0; i < n; ++i) {
    prof.samples[i] = detail::trilinear_unchecked(vol, gx, gy, gz);
    gx += dx;
    gy += dy;
    gz += dz;
  }
  return prof;
}

// Midpoint-rule quadrature: sum(samples) * step.
inline double integrate_profile(const RayProfile& p) {
  double s = 0.0;
  for (double v : p.samples) s += v;
  return s * p.step;
}

// Full forward projection; parallel over views, each ray integrated on the
// fly without materializing the profile.
inline Sinogram forward_project(const Volume3D& vol,
                                const ConeBeamGeometry& geom, double step) {
  if (step <= 0) throw std::invalid_argument("forward_project: step <= 0");
  geom.validate();
  Sinogram sino(geom);
  const double inv_sx = 1.0 / vol.spacing.x;
  const double inv_sy = 1.0 / vol.spacing.y;
  const double inv_sz = 1.0 / vol.spacing.z;
  parallel_for_chunks(geom.n_views(), [&](std::int64_t vb, std::int64_t ve) {
    for (int view = int(vb); view < int(ve); ++view) {
      for (int v = 0; v < geom.nv; ++v)
        for (int u = 0; u < geom.nu; ++u) {
          auto [src, det] = ray_endpoints(geom, view, double(u), double(v));
          Vec3 seg = det - src;
          double tmax = seg.norm();
          Vec3 dir = seg / tmax;
          double t0, t1;
          if (!detail::clip_to_volume(vol, src, dir, tmax, t0, t1)) continue;
          int n = int((t1 - t0) / step);
          if (n <= 0) continue;
          double px = src.x + dir.x * (t0 + 0.5 * step);
          double py = src.y + dir.y * (t0 + 0.5 * step);
          double pz = src.z + dir.z * (t0 + 0.5 * step);
          double gx = (px - vol.origin.x) * inv_sx;
          double gy = (py - vol.origin.y) * inv_sy;
          double gz = (pz - vol.origin.z) * inv_sz;
          double dx = dir.x * step * inv_sx;
          double dy = dir.y * step * inv_sy;
          double dz = dir.z * step * inv_sz;
          double acc = 0.0;
          for (int i = 0; i < n; ++i) {
            acc += detail::trilinear_unchecked(vol, gx, gy, gz);
            gx += dx;
            gy += dy;
            gz += dz;
          }
          sino.at(view, v, u) = acc * step;
        }
    }
  });
  return sino;
}

}  // namespace raymar
