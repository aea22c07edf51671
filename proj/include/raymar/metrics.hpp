#pragma once

// Quantitative evaluation against simulation ground truth: masked RMSE,
// the exact anisotropic Euclidean distance transform, Dice overlap, and the
// artifact-band report used for acceptance.

#include "raymar/core.hpp"
#include "raymar/parallel.hpp"

#include <limits>
#include <sstream>

namespace raymar {

inline double rmse_masked(const Volume3D& a, const Volume3D& b,
                          const BinaryMask3D& mask) {
  if (!a.same_grid(b) || !mask.same_grid(a))
    throw std::invalid_argument("rmse_masked: grid mismatch");
  double se = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (mask.data[i]) {
      double d = a.data[i] - b.data[i];
      se += d * d;
      ++n;
    }
  if (n == 0) throw std::invalid_argument("rmse_masked: empty mask");
  return std::sqrt(se / double(n));
}

inline double dice(const BinaryMask3D& a, const BinaryMask3D& b) {
  if (a.dims != b.dims)
    throw std::invalid_argument("dice: dim mismatch");
  std::size_t inter = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    bool x = a.data[i] != 0, y = b.data[i] != 0;
    inter += (x && y);
    na += x;
    nb += y;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * double(inter) / double(na + nb);
}

namespace detail {

// 1D squared-distance transform by lower envelope of parabolas
// (Felzenszwalb-Huttenlocher), with physical sample spacing. Callers encode
// "no feature" as a finite sentinel larger than any attainable squared
// distance; the envelope then stays exact for every reachable cell.
inline void dt_1d_squared(std::vector<double>& f, double spacing,
                          std::vector<double>& scratch_d,
                          std::vector<int>& scratch_v,
                          std::vector<double>& scratch_z) {
  const int n = int(f.size());
  auto& d = scratch_d;
  auto& vidx = scratch_v;
  auto& z = scratch_z;
  d.assign(n, 0.0);
  vidx.assign(n, 0);
  z.assign(n + 1, 0.0);
  const double s2 = spacing * spacing;
  int k = 0;
  vidx[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  for (int q = 1; q < n; ++q) {
    double s;
    while (true) {
      int p = vidx[k];
      s = ((f[q] + s2 * q * q) - (f[p] + s2 * p * p)) /
          (2.0 * s2 * (q - p));
      if (s <= z[k] && k > 0) {
        --k;
        continue;
      }
      break;
    }
    if (s <= z[k]) {
      // q's parabola dominates everything so far
      k = 0;
      vidx[0] = q;
      z[0] = -std::numeric_limits<double>::infinity();
      z[1] = std::numeric_limits<double>::infinity();
      continue;
    }
    ++k;
    vidx[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    int p = vidx[k];
    d[q] = s2 * (q - p) * (q - p) + f[p];
  }
  f = d;
}

}  // namespace detail

// Exact Euclidean distance (mm) to the nearest mask-true voxel center,
// anisotropic spacing respected. Mask-true voxels map to 0; an empty mask
// yields +infinity everywhere.
inline Volume3D euclidean_dt_3d(const BinaryMask3D& mask) {
  Volume3D out;
  out.dims = mask.dims;
  out.spacing = mask.spacing;
  out.origin = mask.origin;
  const int nx = out.dims[0], ny = out.dims[1], nz = out.dims[2];
  const double inf = std::numeric_limits<double>::infinity();
  bool any = false;
  for (auto b : mask.data)
    if (b) {
      any = true;
      break;
    }
  if (!any) {
    out.data.assign(out.size(), inf);
    return out;
  }
  // sentinel strictly above any attainable squared distance
  auto ext = [&](int n, double s) { return double(n) * s; };
  double dx = ext(nx, out.spacing.x), dy = ext(ny, out.spacing.y),
         dz = ext(nz, out.spacing.z);
  const double big = 4.0 * (dx * dx + dy * dy + dz * dz) + 1.0;
  out.data.assign(out.size(), big);
  for (std::size_t i = 0; i < mask.data.size(); ++i)
    if (mask.data[i]) out.data[i] = 0.0;

  // pass along x
  parallel_for_chunks(std::int64_t(ny) * nz, [&](std::int64_t b,
                                                 std::int64_t e) {
    std::vector<double> line, sd, sz;
    std::vector<int> sv;
    for (std::int64_t r = b; r < e; ++r) {
      int j = int(r % ny), k = int(r / ny);
      line.resize(nx);
      for (int i = 0; i < nx; ++i) line[i] = out.at(i, j, k);
      detail::dt_1d_squared(line, out.spacing.x, sd, sv, sz);
      for (int i = 0; i < nx; ++i) out.at(i, j, k) = line[i];
    }
  });
  // pass along y
  parallel_for_chunks(std::int64_t(nx) * nz, [&](std::int64_t b,
                                                 std::int64_t e) {
    std::vector<double> line, sd, sz;
    std::vector<int> sv;
    for (std::int64_t r = b; r < e; ++r) {
      int i = int(r % nx), k = int(r / nx);
      line.resize(ny);
      for (int j = 0; j < ny; ++j) line[j] = out.at(i, j, k);
      detail::dt_1d_squared(line, out.spacing.y, sd, sv, sz);
      for (int j = 0; j < ny; ++j) out.at(i, j, k) = line[j];
    }
  });
  // pass along z
  parallel_for_chunks(std::int64_t(nx) * ny, [&](std::int64_t b,
                                                 std::int64_t e) {
    std::vector<double> line, sd, sz;
    std::vector<int> sv;
    for (std::int64_t r = b; r < e; ++r) {
      int i = int(r % nx), j = int(r / nx);
      line.resize(nz);
      for (int k = 0; k < nz; ++k) line[k] = out.at(i, j, k);
      detail::dt_1d_squared(line, out.spacing.z, sd, sv, sz);
      for (int k = 0; k < nz; ++k) out.at(i, j, k) = line[k];
    }
  });
  for (auto& v : out.data)
    if (v != std::numeric_limits<double>::infinity()) v = std::sqrt(v);
  return out;
}

// Band of non-metal voxels within `radius` mm of the metal mask. Voxels
// within `edge_margin` mm of the metal are excluded from both masks: the
// partial-volume shell around a high-contrast object carries a large edge
// response even in an ideal reconstruction, which would otherwise swamp the
// artifact measurement. A negative margin selects twice the largest voxel
// spacing, wide enough to cover the shell of boundary voxels.
struct ArtifactBandSpec {
  double radius = 20.0;     // mm
  double edge_margin = -1;  // mm; < 0 picks 2x the largest voxel spacing

  double resolved_margin(const Vec3& spacing) const {
    if (edge_margin >= 0) return edge_margin;
    return 2.0 * std::max(spacing.x, std::max(spacing.y, spacing.z));
  }
};

struct BandMasks {
  BinaryMask3D band;     // near metal; metal and its edge shell excluded
  BinaryMask3D outside;  // far from metal
};

inline BandMasks artifact_band_masks(const BinaryMask3D& metal,
                                     const ArtifactBandSpec& spec) {
  if (spec.radius <= 0)
    throw std::invalid_argument("artifact band radius must be > 0");
  const double margin = spec.resolved_margin(metal.spacing);
  if (margin >= spec.radius)
    throw std::invalid_argument(
        "artifact band edge margin must be below the radius");
  auto dt = euclidean_dt_3d(metal);
  BandMasks out;
  out.band.dims = out.outside.dims = metal.dims;
  out.band.spacing = out.outside.spacing = metal.spacing;
  out.band.origin = out.outside.origin = metal.origin;
  out.band.data.assign(metal.data.size(), 0);
  out.outside.data.assign(metal.data.size(), 0);
  for (std::size_t i = 0; i < metal.data.size(); ++i) {
    if (metal.data[i] || dt.data[i] <= margin) continue;
    if (dt.data[i] <= spec.radius)
      out.band.data[i] = 1;
    else
      out.outside.data[i] = 1;
  }
  return out;
}

struct EvaluationReport {
  double rmse_full = 0;
  double rmse_band = 0;
  double rmse_outside = 0;
  double dice_metal = -1;  // -1 when no mask pair was given

  std::string to_text() const {
    std::ostringstream os;
    os.precision(9);
    os << "rmse_full: " << rmse_full << "\n";
    os << "rmse_band: " << rmse_band << "\n";
    os << "rmse_outside: " << rmse_outside << "\n";
    if (dice_metal >= 0) os << "dice_metal: " << dice_metal << "\n";
    return os.str();
  }
};

inline EvaluationReport evaluate_against_truth(
    const Volume3D& result, const Volume3D& truth,
    const BinaryMask3D& metal, const ArtifactBandSpec& band_spec) {
  auto bands = artifact_band_masks(metal, band_spec);
  BinaryMask3D all;
  all.dims = metal.dims;
  all.spacing = metal.spacing;
  all.origin = metal.origin;
  all.data.assign(metal.data.size(), 1);
  EvaluationReport r;
  r.rmse_full = rmse_masked(result, truth, all);
  r.rmse_band = rmse_masked(result, truth, bands.band);
  r.rmse_outside = rmse_masked(result, truth, bands.outside);
  return r;
}

}  // namespace raymar
