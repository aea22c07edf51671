#pragma once

// Core data types: volumes, cone-beam geometry, sinograms, rigid transforms,
// and trilinear resampling. Everything here is a value type; once constructed
// the grids are treated as immutable and safe for concurrent reads.

#include "raymar/parallel.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace raymar {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  double norm() const { return std::sqrt(dot(*this)); }
  Vec3 normalized() const {
    double n = norm();
    return n > 0 ? *this / n : Vec3{};
  }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }

using Mat3 = std::array<double, 9>;  // row-major

inline Vec3 mat_apply(const Mat3& m, const Vec3& p) {
  return {m[0] * p.x + m[1] * p.y + m[2] * p.z,
          m[3] * p.x + m[4] * p.y + m[5] * p.z,
          m[6] * p.x + m[7] * p.y + m[8] * p.z};
}

inline Vec3 mat_apply_transposed(const Mat3& m, const Vec3& p) {
  return {m[0] * p.x + m[3] * p.y + m[6] * p.z,
          m[1] * p.x + m[4] * p.y + m[7] * p.z,
          m[2] * p.x + m[5] * p.y + m[8] * p.z};
}

// 6-parameter rigid motion: translation (mm) plus intrinsic Z-Y-X Euler
// rotation (rad) about the world origin. Volumes are centered on the
// isocenter (= world origin) by convention, so this rotates about the
// volume center.
struct RigidTransform {
  Vec3 t;  // tx, ty, tz in mm
  Vec3 r;  // rx, ry, rz in rad

  Mat3 rotation() const {
    double cx = std::cos(r.x), sx = std::sin(r.x);
    double cy = std::cos(r.y), sy = std::sin(r.y);
    double cz = std::cos(r.z), sz = std::sin(r.z);
    // R = Rz * Ry * Rx
    return Mat3{cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx,
                sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx,
                -sy,     cy * sx,                cy * cx};
  }

  Vec3 apply(const Vec3& p) const { return mat_apply(rotation(), p) + t; }
  Vec3 apply_inverse(const Vec3& p) const {
    return mat_apply_transposed(rotation(), p - t);
  }

  bool is_identity() const {
    return t.x == 0 && t.y == 0 && t.z == 0 && r.x == 0 && r.y == 0 &&
           r.z == 0;
  }
};

// Regular 3D grid of linear attenuation values (mm^-1), x-fastest layout.
// origin is the world position of the center of voxel (0,0,0).
struct Volume3D {
  std::array<int, 3> dims{0, 0, 0};
  Vec3 spacing{1, 1, 1};
  Vec3 origin{0, 0, 0};
  std::vector<double> data;

  Volume3D() = default;
  Volume3D(std::array<int, 3> d, Vec3 sp, Vec3 org)
      : dims(d), spacing(sp), origin(org) {
    validate_grid();
    data.assign(size(), 0.0);
  }

  // Grid of the given shape centered on the isocenter.
  static Volume3D centered(std::array<int, 3> d, Vec3 sp) {
    Vec3 org{-sp.x * (d[0] - 1) / 2.0, -sp.y * (d[1] - 1) / 2.0,
             -sp.z * (d[2] - 1) / 2.0};
    return Volume3D(d, sp, org);
  }

  std::size_t size() const {
    return std::size_t(dims[0]) * dims[1] * dims[2];
  }
  std::size_t index(int i, int j, int k) const {
    return (std::size_t(k) * dims[1] + j) * dims[0] + i;
  }
  double& at(int i, int j, int k) { return data[index(i, j, k)]; }
  double at(int i, int j, int k) const { return data[index(i, j, k)]; }

  Vec3 voxel_center(int i, int j, int k) const {
    return {origin.x + i * spacing.x, origin.y + j * spacing.y,
            origin.z + k * spacing.z};
  }

  // Voxel-center bounding box.
  Vec3 bbox_min() const { return origin; }
  Vec3 bbox_max() const {
    return {origin.x + (dims[0] - 1) * spacing.x,
            origin.y + (dims[1] - 1) * spacing.y,
            origin.z + (dims[2] - 1) * spacing.z};
  }

  double min_spacing() const {
    return std::min(spacing.x, std::min(spacing.y, spacing.z));
  }

  bool same_grid(const Volume3D& o) const {
    return dims == o.dims && spacing.x == o.spacing.x &&
           spacing.y == o.spacing.y && spacing.z == o.spacing.z &&
           origin.x == o.origin.x && origin.y == o.origin.y &&
           origin.z == o.origin.z;
  }

  void validate_grid() const {
    if (dims[0] < 1 || dims[1] < 1 || dims[2] < 1)
      throw std::invalid_argument("Volume3D: dims must be >= 1");
    if (spacing.x <= 0 || spacing.y <= 0 || spacing.z <= 0)
      throw std::invalid_argument("Volume3D: spacing must be > 0");
  }
};

// Boolean companion mask on the same grid as a Volume3D.
struct BinaryMask3D {
  std::array<int, 3> dims{0, 0, 0};
  Vec3 spacing{1, 1, 1};
  Vec3 origin{0, 0, 0};
  std::vector<std::uint8_t> data;

  BinaryMask3D() = default;
  explicit BinaryMask3D(const Volume3D& companion)
      : dims(companion.dims),
        spacing(companion.spacing),
        origin(companion.origin),
        data(companion.size(), 0) {}

  std::size_t size() const {
    return std::size_t(dims[0]) * dims[1] * dims[2];
  }
  std::size_t index(int i, int j, int k) const {
    return (std::size_t(k) * dims[1] + j) * dims[0] + i;
  }
  bool get(int i, int j, int k) const { return data[index(i, j, k)] != 0; }
  void set(int i, int j, int k, bool v) { data[index(i, j, k)] = v ? 1 : 0; }

  std::size_t count() const {
    std::size_t n = 0;
    for (auto b : data) n += (b != 0);
    return n;
  }

  bool same_grid(const Volume3D& v) const {
    return dims == v.dims && spacing.x == v.spacing.x &&
           spacing.y == v.spacing.y && spacing.z == v.spacing.z &&
           origin.x == v.origin.x && origin.y == v.origin.y &&
           origin.z == v.origin.z;
  }
};

// Circular-orbit cone-beam scanner. The source moves on a radius-sad circle
// in the z=0 plane; the flat detector sits at distance sdd from the source,
// centered on and perpendicular to the source-isocenter line. u runs along
// the tangential direction, v along +z.
struct ConeBeamGeometry {
  double sad = 0;  // source-to-axis distance, mm
  double sdd = 0;  // source-to-detector distance, mm
  int nu = 0, nv = 0;
  double wu = 0, wv = 0;  // active detector area, mm
  std::vector<double> angles;  // view angles, rad, strictly increasing

  int n_views() const { return int(angles.size()); }
  double du() const { return wu / nu; }
  double dv() const { return wv / nv; }

  static ConeBeamGeometry uniform(double sad, double sdd, int nu, int nv,
                                  double wu, double wv, int n_views) {
    ConeBeamGeometry g{sad, sdd, nu, nv, wu, wv, {}};
    g.angles.resize(n_views);
    for (int i = 0; i < n_views; ++i)
      g.angles[i] = 2.0 * M_PI * i / n_views;
    g.validate();
    return g;
  }

  void validate() const {
    if (!(0 < sad && sad < sdd))
      throw std::invalid_argument("ConeBeamGeometry: need 0 < sad < sdd");
    if (nu < 1 || nv < 1)
      throw std::invalid_argument("ConeBeamGeometry: detector bins >= 1");
    if (wu <= 0 || wv <= 0)
      throw std::invalid_argument("ConeBeamGeometry: detector area > 0");
    if (angles.empty())
      throw std::invalid_argument("ConeBeamGeometry: no view angles");
    for (std::size_t i = 1; i < angles.size(); ++i)
      if (!(angles[i] > angles[i - 1]))
        throw std::invalid_argument(
            "ConeBeamGeometry: angles must be strictly increasing");
  }

  bool same_as(const ConeBeamGeometry& o) const {
    return sad == o.sad && sdd == o.sdd && nu == o.nu && nv == o.nv &&
           wu == o.wu && wv == o.wv && angles == o.angles;
  }
};

// Stack of 2D projections (dimensionless line integrals), u-fastest.
struct Sinogram {
  ConeBeamGeometry geom;
  std::vector<double> data;

  Sinogram() = default;
  explicit Sinogram(const ConeBeamGeometry& g)
      : geom(g), data(std::size_t(g.n_views()) * g.nv * g.nu, 0.0) {}

  std::size_t index(int view, int v, int u) const {
    return (std::size_t(view) * geom.nv + v) * geom.nu + u;
  }
  double& at(int view, int v, int u) { return data[index(view, v, u)]; }
  double at(int view, int v, int u) const { return data[index(view, v, u)]; }
};

// Trilinear interpolation at a world point; 0 outside the voxel-center
// bounding box (air fill).
inline double sample_trilinear(const Volume3D& vol, const Vec3& p) {
  double gx = (p.x - vol.origin.x) / vol.spacing.x;
  double gy = (p.y - vol.origin.y) / vol.spacing.y;
  double gz = (p.z - vol.origin.z) / vol.spacing.z;
  const int nx = vol.dims[0], ny = vol.dims[1], nz = vol.dims[2];
  if (gx < 0 || gx > nx - 1 || gy < 0 || gy > ny - 1 || gz < 0 ||
      gz > nz - 1)
    return 0.0;

  auto split = [](double g, int n, int& i0, double& f) {
    if (n == 1) {
      i0 = 0;
      f = 0.0;
      return;
    }
    i0 = int(g);
    if (i0 >= n - 1) i0 = n - 2;
    f = g - i0;
  };
  int i0, j0, k0;
  double fx, fy, fz;
  split(gx, nx, i0, fx);
  split(gy, ny, j0, fy);
  split(gz, nz, k0, fz);
  const int i1 = std::min(i0 + 1, nx - 1);
  const int j1 = std::min(j0 + 1, ny - 1);
  const int k1 = std::min(k0 + 1, nz - 1);

  const double* d = vol.data.data();
  auto v = [&](int i, int j, int k) { return d[vol.index(i, j, k)]; };
  double c00 = v(i0, j0, k0) * (1 - fx) + v(i1, j0, k0) * fx;
  double c10 = v(i0, j1, k0) * (1 - fx) + v(i1, j1, k0) * fx;
  double c01 = v(i0, j0, k1) * (1 - fx) + v(i1, j0, k1) * fx;
  double c11 = v(i0, j1, k1) * (1 - fx) + v(i1, j1, k1) * fx;
  double c0 = c00 * (1 - fy) + c10 * fy;
  double c1 = c01 * (1 - fy) + c11 * fy;
  return c0 * (1 - fz) + c1 * fz;
}

// Nearest-neighbor mask lookup; false outside.
inline bool sample_nearest(const BinaryMask3D& m, const Vec3& p) {
  int i = int(std::lround((p.x - m.origin.x) / m.spacing.x));
  int j = int(std::lround((p.y - m.origin.y) / m.spacing.y));
  int k = int(std::lround((p.z - m.origin.z) / m.spacing.z));
  if (i < 0 || i >= m.dims[0] || j < 0 || j >= m.dims[1] || k < 0 ||
      k >= m.dims[2])
    return false;
  return m.get(i, j, k);
}

// Resample vol onto ref's grid under the rigid motion T: each output voxel
// center c receives sample_trilinear(vol, T^-1(c)).
inline Volume3D resample_rigid(const Volume3D& vol, const RigidTransform& T,
                               const Volume3D& ref) {
  Volume3D out(ref.dims, ref.spacing, ref.origin);
  const Mat3 R = T.rotation();
  parallel_for_chunks(ref.dims[2], [&](std::int64_t kb, std::int64_t ke) {
    for (int k = int(kb); k < int(ke); ++k)
      for (int j = 0; j < ref.dims[1]; ++j)
        for (int i = 0; i < ref.dims[0]; ++i) {
          Vec3 c = ref.voxel_center(i, j, k);
          Vec3 q = mat_apply_transposed(R, c - T.t);
          out.at(i, j, k) = sample_trilinear(vol, q);
        }
  });
  return out;
}

// Same, nearest-neighbor, for masks.
inline BinaryMask3D resample_mask_rigid(const BinaryMask3D& mask,
                                        const RigidTransform& T,
                                        const Volume3D& ref) {
  BinaryMask3D out(ref);
  const Mat3 R = T.rotation();
  parallel_for_chunks(ref.dims[2], [&](std::int64_t kb, std::int64_t ke) {
    for (int k = int(kb); k < int(ke); ++k)
      for (int j = 0; j < ref.dims[1]; ++j)
        for (int i = 0; i < ref.dims[0]; ++i) {
          Vec3 c = ref.voxel_center(i, j, k);
          Vec3 q = mat_apply_transposed(R, c - T.t);
          out.set(i, j, k, sample_nearest(mask, q));
        }
  });
  return out;
}

}  // namespace raymar
