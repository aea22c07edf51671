#pragma once

// Feldkamp-type filtered backprojection for the circular cone-beam orbit:
// cosine pre-weighting, row-wise ramp filtering via zero-padded FFT
// convolution, and voxel-driven distance-weighted backprojection with
// bilinear detector interpolation.

#include "raymar/core.hpp"
#include "raymar/parallel.hpp"

#include <complex>

namespace raymar {

enum class RampWindow { ramlak, shepplogan };

namespace detail {

// In-place iterative radix-2 FFT; n must be a power of two.
inline void fft_pow2(std::vector<std::complex<double>>& a, bool inverse) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    double ang = 2.0 * M_PI / double(len) * (inverse ? 1.0 : -1.0);
    std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        auto u = a[i + k], v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
  if (inverse)
    for (auto& x : a) x /= double(n);
}

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

}  // namespace detail

// Discrete spatial-domain ramp kernel plus its padded spectrum for fast
// row convolution. Tap k covers offsets -(nu-1)..(nu-1) wrapped into the
// padded circular buffer, so the zero-padded convolution is exact (linear).
struct RampFilter {
  RampWindow window = RampWindow::shepplogan;
  double du = 1.0;
  int nu = 0;
  std::size_t padded_len = 0;
  std::vector<double> taps;  // taps[k] = kernel at offset k, k in [0, nu-1]
  std::vector<std::complex<double>> spectrum;

  static RampFilter make(RampWindow window, int nu, double du) {
    if (nu < 1 || du <= 0)
      throw std::invalid_argument("RampFilter: bad detector row");
    RampFilter f;
    f.window = window;
    f.du = du;
    f.nu = nu;
    f.padded_len = detail::next_pow2(std::size_t(2) * nu);
    f.taps.resize(nu);
    const double inv_du2 = 1.0 / (du * du);
    for (int k = 0; k < nu; ++k) {
      if (window == RampWindow::ramlak) {
        if (k == 0)
          f.taps[k] = 0.25 * inv_du2;
        else if (k % 2 == 1)
          f.taps[k] = -inv_du2 / (M_PI * M_PI * k * k);
        else
          f.taps[k] = 0.0;
      } else {
        f.taps[k] = -2.0 * inv_du2 / (M_PI * M_PI * (4.0 * k * k - 1.0));
      }
    }
    std::vector<std::complex<double>> ker(f.padded_len, 0.0);
    for (int k = 0; k < nu; ++k) {
      ker[k] += f.taps[k];
      if (k > 0) ker[f.padded_len - k] += f.taps[k];
    }
    detail::fft_pow2(ker, false);
    f.spectrum = std::move(ker);
    return f;
  }
};

// Cosine pre-weight each bin by sdd/sqrt(sdd^2+u^2+v^2), then convolve each
// detector row (u-direction) with the ramp kernel. Output is the discrete
// convolution; quadrature and geometry scale factors are applied during
// backprojection.
inline Sinogram filter_rows(const Sinogram& sino, const RampFilter& f) {
  const auto& g = sino.geom;
  if (f.nu != g.nu || f.du != g.du())
    throw std::invalid_argument("filter_rows: filter does not match geometry");
  Sinogram out(g);
  const std::size_t pad = f.padded_len;
  std::vector<double> cosw(std::size_t(g.nu) * g.nv);
  for (int v = 0; v < g.nv; ++v) {
    double pv = (v + 0.5 - g.nv / 2.0) * g.dv();
    for (int u = 0; u < g.nu; ++u) {
      double pu = (u + 0.5 - g.nu / 2.0) * g.du();
      cosw[std::size_t(v) * g.nu + u] =
          g.sdd / std::sqrt(g.sdd * g.sdd + pu * pu + pv * pv);
    }
  }
  const std::int64_t n_rows = std::int64_t(g.n_views()) * g.nv;
  parallel_for_chunks(n_rows, [&](std::int64_t rb, std::int64_t re) {
    std::vector<std::complex<double>> buf(pad);
    for (std::int64_t row = rb; row < re; ++row) {
      int view = int(row / g.nv), v = int(row % g.nv);
      std::fill(buf.begin(), buf.end(), std::complex<double>(0.0));
      for (int u = 0; u < g.nu; ++u)
        buf[u] = sino.at(view, v, u) * cosw[std::size_t(v) * g.nu + u];
      detail::fft_pow2(buf, false);
      for (std::size_t i = 0; i < pad; ++i) buf[i] *= f.spectrum[i];
      detail::fft_pow2(buf, true);
      for (int u = 0; u < g.nu; ++u) out.at(view, v, u) = buf[u].real();
    }
  });
  return out;
}

// FDK backprojection of an already configured output grid. `grid` supplies
// dims/spacing/origin; its data is ignored.
inline Volume3D fdk_reconstruct(const Sinogram& sino, const Volume3D& grid,
                                RampWindow window = RampWindow::shepplogan) {
  const auto& g = sino.geom;
  g.validate();
  if (g.n_views() < 2)
    throw std::invalid_argument("fdk_reconstruct: need at least 2 views");
  auto filt = filter_rows(sino, RampFilter::make(window, g.nu, g.du()));

  Volume3D out(grid.dims, grid.spacing, grid.origin);
  const double dbeta = 2.0 * M_PI / g.n_views();
  const double scale = 0.5 * dbeta * g.du() * (g.sdd / g.sad);
  const int nx = out.dims[0], ny = out.dims[1], nz = out.dims[2];

  parallel_for_chunks(nz, [&](std::int64_t kb, std::int64_t ke) {
    for (int view = 0; view < g.n_views(); ++view) {
      const double a = g.angles[view];
      const double ca = std::cos(a), sa = std::sin(a);
      const Vec3 src{g.sad * ca, g.sad * sa, 0.0};
      const double* view_data = filt.data.data() + filt.index(view, 0, 0);
      for (int k = int(kb); k < int(ke); ++k)
        for (int j = 0; j < ny; ++j)
          for (int i = 0; i < nx; ++i) {
            Vec3 x = out.voxel_center(i, j, k);
            // distance from source along the central-ray direction
            double U = g.sad - (x.x * ca + x.y * sa);
            if (U <= 1e-6) continue;
            double mag = g.sdd / U;
            double pu = ((x.x - src.x) * -sa + (x.y - src.y) * ca) * mag;
            double pv = x.z * mag;
            double bu = pu / g.du() + g.nu / 2.0 - 0.5;
            double bv = pv / g.dv() + g.nv / 2.0 - 0.5;
            if (bu < 0 || bu > g.nu - 1 || bv < 0 || bv > g.nv - 1)
              continue;
            int u0 = std::min(int(bu), g.nu - 2);
            int v0 = std::min(int(bv), g.nv - 2);
            if (g.nu == 1) u0 = 0;
            if (g.nv == 1) v0 = 0;
            double fu = bu - u0, fv = bv - v0;
            const double* r0 = view_data + std::size_t(v0) * g.nu + u0;
            const double* r1 =
                view_data + std::size_t(std::min(v0 + 1, g.nv - 1)) * g.nu +
                u0;
            int u1 = (g.nu == 1) ? 0 : 1;
            double q0 = r0[0] + (r0[u1] - r0[0]) * fu;
            double q1 = r1[0] + (r1[u1] - r1[0]) * fu;
            double q = q0 + (q1 - q0) * fv;
            out.at(i, j, k) += scale * (g.sad * g.sad) / (U * U) * q;
          }
    }
  });
  return out;
}

}  // namespace raymar
