#pragma once

// Phantom construction and polychromatic cone-beam acquisition. The material
// table and spectrum are configuration data chosen so that low energies
// attenuate more strongly; metal dominates the low bin so reconstructions of
// simulated scans show the familiar dark streaks between implants.

#include "raymar/core.hpp"
#include "raymar/parallel.hpp"
#include "raymar/projector.hpp"

#include <fstream>
#include <optional>
#include <random>
#include <sstream>

namespace raymar {

enum class Material : std::uint8_t { air = 0, soft = 1, bone = 2, metal = 3 };
inline constexpr int kNumMaterials = 4;

inline Material material_from_name(const std::string& name) {
  if (name == "air") return Material::air;
  if (name == "soft") return Material::soft;
  if (name == "bone") return Material::bone;
  if (name == "metal") return Material::metal;
  throw std::invalid_argument("unknown material: " + name);
}

struct MaterialSpectrumModel {
  std::vector<double> energies;  // keV, strictly increasing
  std::vector<double> weights;   // fractions, sum 1
  // mu[material][bin], mm^-1, non-increasing in energy
  std::array<std::vector<double>, kNumMaterials> mu_of;

  int n_bins() const { return int(energies.size()); }

  double mu(Material m, int bin) const {
    return mu_of[std::size_t(m)][bin];
  }

  int bin_of_energy(double kev) const {
    for (int k = 0; k < n_bins(); ++k)
      if (energies[k] == kev) return k;
    throw std::invalid_argument("energy is not a spectrum bin");
  }

  void validate() const {
    if (energies.empty() || weights.size() != energies.size())
      throw std::invalid_argument("spectrum: bins/weights mismatch");
    double sum = 0;
    for (double w : weights) {
      if (w < 0) throw std::invalid_argument("spectrum: negative weight");
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw std::invalid_argument("spectrum: weights must sum to 1");
    for (const auto& mus : mu_of) {
      if (mus.size() != energies.size())
        throw std::invalid_argument("spectrum: mu table size mismatch");
      for (std::size_t k = 0; k < mus.size(); ++k) {
        if (mus[k] < 0) throw std::invalid_argument("spectrum: mu < 0");
        if (k > 0 && mus[k] > mus[k - 1] + 1e-15)
          throw std::invalid_argument(
              "spectrum: mu must be non-increasing in energy");
      }
    }
  }

  // 3-bin default; values are configuration, not physics claims.
  static MaterialSpectrumModel default_model() {
    MaterialSpectrumModel m;
    m.energies = {50.0, 70.0, 90.0};
    m.weights = {0.3, 0.5, 0.2};
    m.mu_of[std::size_t(Material::air)] = {0.0, 0.0, 0.0};
    m.mu_of[std::size_t(Material::soft)] = {0.0227, 0.0193, 0.0176};
    m.mu_of[std::size_t(Material::bone)] = {0.0573, 0.0410, 0.0333};
    m.mu_of[std::size_t(Material::metal)] = {1.1500, 0.5800, 0.3600};
    m.validate();
    return m;
  }
};

// Geometric primitives; later entries overwrite earlier ones.
struct PhantomPrimitive {
  enum class Shape { ellipsoid, box, cylinder } shape;
  Material material = Material::soft;
  Vec3 a;       // ellipsoid/box: center; cylinder: axis start
  Vec3 b;       // ellipsoid: semi-axes; box: half-sizes; cylinder: axis end
  double radius = 0;  // cylinder only

  bool contains(const Vec3& p) const {
    switch (shape) {
      case Shape::ellipsoid: {
        Vec3 q = p - a;
        double s = (q.x / b.x) * (q.x / b.x) + (q.y / b.y) * (q.y / b.y) +
                   (q.z / b.z) * (q.z / b.z);
        return s <= 1.0;
      }
      case Shape::box: {
        Vec3 q = p - a;
        return std::abs(q.x) <= b.x && std::abs(q.y) <= b.y &&
               std::abs(q.z) <= b.z;
      }
      case Shape::cylinder: {
        Vec3 axis = b - a;
        double len2 = axis.dot(axis);
        if (len2 == 0) return false;
        double t = (p - a).dot(axis) / len2;
        if (t < 0 || t > 1) return false;
        Vec3 closest = a + axis * t;
        return (p - closest).norm() <= radius;
      }
    }
    return false;
  }
};

struct PhantomSpec {
  std::array<int, 3> dims{0, 0, 0};
  Vec3 spacing{1, 1, 1};
  std::vector<PhantomPrimitive> primitives;
};

// Label field on the phantom grid.
struct LabelVolume {
  std::array<int, 3> dims{0, 0, 0};
  Vec3 spacing{1, 1, 1};
  Vec3 origin{0, 0, 0};
  std::vector<std::uint8_t> labels;

  std::size_t index(int i, int j, int k) const {
    return (std::size_t(k) * dims[1] + j) * dims[0] + i;
  }
  Material at(int i, int j, int k) const {
    return Material(labels[index(i, j, k)]);
  }
};

struct PhantomResult {
  Volume3D volume;      // mu at the reference energy
  LabelVolume labels;   // ground-truth material per voxel
};

// Rasterizes the primitives onto a centered grid. Each voxel takes the label
// of the last primitive containing its center; the volume value is that
// material's mu at ref_energy_kev.
inline PhantomResult build_phantom(const PhantomSpec& spec,
                                   const MaterialSpectrumModel& model,
                                   double ref_energy_kev) {
  model.validate();
  int ref_bin = model.bin_of_energy(ref_energy_kev);
  Volume3D vol = Volume3D::centered(spec.dims, spec.spacing);
  LabelVolume lab;
  lab.dims = vol.dims;
  lab.spacing = vol.spacing;
  lab.origin = vol.origin;
  lab.labels.assign(vol.size(), std::uint8_t(Material::air));
  parallel_for_chunks(spec.dims[2], [&](std::int64_t kb, std::int64_t ke) {
    for (int k = int(kb); k < int(ke); ++k)
      for (int j = 0; j < spec.dims[1]; ++j)
        for (int i = 0; i < spec.dims[0]; ++i) {
          Vec3 c = vol.voxel_center(i, j, k);
          Material m = Material::air;
          for (const auto& prim : spec.primitives)
            if (prim.contains(c)) m = prim.material;
          lab.labels[lab.index(i, j, k)] = std::uint8_t(m);
          vol.at(i, j, k) = model.mu(m, ref_bin);
        }
  });
  return {std::move(vol), std::move(lab)};
}

namespace detail {

inline Material nearest_label(const LabelVolume& lab, double gx, double gy,
                              double gz) {
  int i = int(gx + 0.5), j = int(gy + 0.5), k = int(gz + 0.5);
  if (i < 0) i = 0;
  if (j < 0) j = 0;
  if (k < 0) k = 0;
  if (i >= lab.dims[0]) i = lab.dims[0] - 1;
  if (j >= lab.dims[1]) j = lab.dims[1] - 1;
  if (k >= lab.dims[2]) k = lab.dims[2] - 1;
  return lab.at(i, j, k);
}

}  // namespace detail

// Polychromatic acquisition over the label field. Per ray and material, the
// path length is accumulated with the rectangle rule; the detected fraction
// is the weighted sum of per-bin Beer-Lambert terms. With a photon budget
// N0, counts are drawn Poisson per ray (counter-seeded, so results do not
// depend on threading) and floored at one photon.
inline Sinogram simulate_polychromatic(const LabelVolume& labels,
                                       const MaterialSpectrumModel& model,
                                       const ConeBeamGeometry& geom,
                                       double step,
                                       std::optional<double> photons,
                                       std::uint64_t seed = 0) {
  if (step <= 0)
    throw std::invalid_argument("simulate_polychromatic: step <= 0");
  model.validate();
  geom.validate();
  Sinogram sino(geom);
  // bounding volume descriptor for clipping
  Volume3D shell(labels.dims, labels.spacing, labels.origin);
  shell.data.clear();
  shell.data.shrink_to_fit();
  const double inv_sx = 1.0 / labels.spacing.x;
  const double inv_sy = 1.0 / labels.spacing.y;
  const double inv_sz = 1.0 / labels.spacing.z;
  const int n_bins = model.n_bins();
  parallel_for_chunks(geom.n_views(), [&](std::int64_t vb, std::int64_t ve) {
    for (int view = int(vb); view < int(ve); ++view)
      for (int v = 0; v < geom.nv; ++v)
        for (int u = 0; u < geom.nu; ++u) {
          auto [src, det] = ray_endpoints(geom, view, double(u), double(v));
          Vec3 seg = det - src;
          double tmax = seg.norm();
          Vec3 dir = seg / tmax;
          double t0, t1;
          double len[kNumMaterials] = {0, 0, 0, 0};
          if (detail::clip_to_volume(shell, src, dir, tmax, t0, t1)) {
            int n = int((t1 - t0) / step);
            double gx = (src.x + dir.x * (t0 + 0.5 * step) - labels.origin.x) *
                        inv_sx;
            double gy = (src.y + dir.y * (t0 + 0.5 * step) - labels.origin.y) *
                        inv_sy;
            double gz = (src.z + dir.z * (t0 + 0.5 * step) - labels.origin.z) *
                        inv_sz;
            double dx = dir.x * step * inv_sx;
            double dy = dir.y * step * inv_sy;
            double dz = dir.z * step * inv_sz;
            for (int i = 0; i < n; ++i) {
              len[std::size_t(detail::nearest_label(labels, gx, gy, gz))] +=
                  step;
              gx += dx;
              gy += dy;
              gz += dz;
            }
          }
          double frac = 0.0;
          for (int k = 0; k < n_bins; ++k) {
            double att = 0.0;
            for (int m = 0; m < kNumMaterials; ++m)
              att += model.mu_of[m][k] * len[m];
            frac += model.weights[k] * std::exp(-att);
          }
          if (photons) {
            std::size_t ray = sino.index(view, v, u);
            std::mt19937_64 rng(hash_seed(seed, ray));
            double n0 = *photons;
            std::poisson_distribution<long long> poisson(n0 * frac);
            long long n = poisson(rng);
            frac = std::max<long long>(n, 1) / n0;  // photon starvation floor
          }
          sino.at(view, v, u) = -std::log(frac);
        }
  });
  return sino;
}

}  // namespace raymar
