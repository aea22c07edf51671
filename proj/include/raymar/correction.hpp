#pragma once

// Per-ray profile correction: inside the metal shadow each ray is resampled
// from the uncorrected volume, the aligned prior, and the metal-only volume
// on one shared lattice, blended sample by sample, and re-integrated into a
// corrected sinogram.

#include "raymar/core.hpp"
#include "raymar/metal.hpp"
#include "raymar/parallel.hpp"
#include "raymar/projector.hpp"

namespace raymar {

inline double lerp(double alpha, double beta, double omega) {
  return omega * alpha + (1.0 - omega) * beta;
}

// Per-sample distance (mm) to the nearest flagged sample along the ray.
// Two sweeps; an all-false input returns +infinity everywhere, which the
// blend weight maps to zero (pure noisy).
inline std::vector<double> distance_transform_1d(
    const std::vector<std::uint8_t>& flags, double step) {
  if (step <= 0)
    throw std::invalid_argument("distance_transform_1d: step <= 0");
  const std::ptrdiff_t n = std::ptrdiff_t(flags.size());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> d(flags.size(), inf);
  // nearest flagged index per sweep; the distance is formed by a single
  // multiply so it matches |i - j| * step exactly
  std::ptrdiff_t last = -1;
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    if (flags[std::size_t(i)]) last = i;
    if (last >= 0) d[std::size_t(i)] = double(i - last) * step;
  }
  last = -1;
  for (std::ptrdiff_t i = n; i-- > 0;) {
    if (flags[std::size_t(i)]) last = i;
    if (last >= 0)
      d[std::size_t(i)] =
          std::min(d[std::size_t(i)], double(last - i) * step);
  }
  return d;
}

struct CorrectionParams {
  double rho = 0;          // mm^-1, metal attenuation
  double h = 10.0;         // mm, weight smoothness scale
  double prior_trust = 0.7;

  void validate() const {
    if (rho <= 0) throw std::invalid_argument("correction: rho must be > 0");
    if (h <= 0) throw std::invalid_argument("correction: h must be > 0");
    if (prior_trust < 0 || prior_trust > 1)
      throw std::invalid_argument("correction: prior_trust in [0, 1]");
  }
};

// Fraction of rho above which a sample is treated as metal; partial-volume
// boundary samples fall into the metal branch.
inline constexpr double kMetalMembershipFraction = 0.05;

struct ProfileBundle {
  RayProfile noisy;   // from the uncorrected volume
  RayProfile clean;   // from the aligned prior
  RayProfile metal;   // from the metal-only volume
  std::vector<double> dt;  // mm to the nearest metal sample along the ray

  void validate() const {
    if (clean.size() != noisy.size() || metal.size() != noisy.size() ||
        dt.size() != noisy.size())
      throw std::invalid_argument("profile bundle: length mismatch");
    if (clean.step != noisy.step || metal.step != noisy.step)
      throw std::invalid_argument("profile bundle: step mismatch");
  }
};

// Sample-by-sample blend. Metal samples take lerp(rho, clean, metal/rho)
// with the metal value clamped into [0, rho]; non-metal samples take
// lerp(clean, noisy, prior_trust * exp(-dt/h)).
inline RayProfile correct_profile(const ProfileBundle& b,
                                  const CorrectionParams& p) {
  p.validate();
  b.validate();
  RayProfile out;
  out.step = b.noisy.step;
  out.entry = b.noisy.entry;
  out.direction = b.noisy.direction;
  out.samples.resize(b.noisy.size());
  const double cut = kMetalMembershipFraction * p.rho;
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    double m = std::clamp(b.metal.samples[i], 0.0, p.rho);
    if (m > cut) {
      out.samples[i] = lerp(p.rho, b.clean.samples[i], m / p.rho);
    } else {
      double w = p.prior_trust * std::exp(-b.dt[i] / p.h);
      out.samples[i] = lerp(b.clean.samples[i], b.noisy.samples[i], w);
    }
  }
  return out;
}

// The three profiles for one ray, all on the noisy ray's lattice, plus the
// metal distance transform.
inline ProfileBundle extract_bundle(const Volume3D& unc_vol,
                                    const Volume3D& prior_aligned,
                                    const Volume3D& metal_vol,
                                    const Vec3& src, const Vec3& det,
                                    double step, double rho) {
  ProfileBundle b;
  b.noisy = extract_profile(unc_vol, src, det, step);
  b.clean.step = b.metal.step = step;
  b.clean.entry = b.metal.entry = b.noisy.entry;
  b.clean.direction = b.metal.direction = b.noisy.direction;
  const std::size_t n = b.noisy.size();
  b.clean.samples.resize(n);
  b.metal.samples.resize(n);
  std::vector<std::uint8_t> flags(n, 0);
  const double cut = kMetalMembershipFraction * rho;
  for (std::size_t i = 0; i < n; ++i) {
    Vec3 pt = b.noisy.entry + b.noisy.direction * (double(i) * step);
    b.clean.samples[i] = sample_trilinear(prior_aligned, pt);
    double m = sample_trilinear(metal_vol, pt);
    b.metal.samples[i] = m;
    flags[i] = std::clamp(m, 0.0, rho) > cut;
  }
  b.dt = distance_transform_1d(flags, step);
  return b;
}

// Corrected sinogram: shadow pixels are rebuilt from blended ray profiles,
// everything else keeps the measured value.
inline Sinogram build_corrected_sinogram(const Sinogram& measured,
                                         const Volume3D& unc_vol,
                                         const Volume3D& prior_aligned,
                                         const Volume3D& metal_vol,
                                         const MetalShadowMask& shadow,
                                         const ConeBeamGeometry& geom,
                                         double step,
                                         const CorrectionParams& p) {
  p.validate();
  if (!measured.geom.same_as(geom) || !shadow.geom.same_as(geom))
    throw std::invalid_argument(
        "build_corrected_sinogram: geometry mismatch");
  if (step <= 0)
    throw std::invalid_argument("build_corrected_sinogram: step <= 0");
  Sinogram out = measured;
  parallel_for_chunks(geom.n_views(), [&](std::int64_t vb, std::int64_t ve) {
    for (int view = int(vb); view < int(ve); ++view)
      for (int v = 0; v < geom.nv; ++v)
        for (int u = 0; u < geom.nu; ++u) {
          if (!shadow.get(view, v, u)) continue;
          auto [src, det] = ray_endpoints(geom, view, double(u), double(v));
          auto bundle = extract_bundle(unc_vol, prior_aligned, metal_vol,
                                       src, det, step, p.rho);
          out.at(view, v, u) = integrate_profile(correct_profile(bundle, p));
        }
  });
  return out;
}

}  // namespace raymar
