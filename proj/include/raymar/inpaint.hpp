#pragma once

// Gradient-domain in-painting of the metal-shadow region of each projection
// view: the corrected data supplies the gradients inside the region, the
// measured data anchors the seam, and the resulting sparse SPD system is
// solved per view by conjugate gradients.

#include "raymar/core.hpp"
#include "raymar/metal.hpp"
#include "raymar/parallel.hpp"

#include <sstream>

namespace raymar {

struct InpaintProblem {
  int nu = 0, nv = 0;
  std::vector<double> orig;        // measured view, u-fastest
  std::vector<double> corr;        // corrected view, same layout
  std::vector<std::uint8_t> mask;  // the region R to replace
  double tolerance = 1e-6;         // relative residual
  int max_iterations = 10000;

  std::size_t index(int v, int u) const {
    return std::size_t(v) * nu + u;
  }

  void validate() const {
    if (nu < 1 || nv < 1)
      throw std::invalid_argument("inpaint: view dims must be >= 1");
    std::size_t n = std::size_t(nu) * nv;
    if (orig.size() != n || corr.size() != n || mask.size() != n)
      throw std::invalid_argument("inpaint: array shape mismatch");
    if (tolerance <= 0 || max_iterations < 1)
      throw std::invalid_argument("inpaint: bad solver settings");
  }
};

// Minimizes, over the region pixels x_i (everything else pinned to orig):
//   sum_{i in R} [ sum_{j in N_i, j in R} ((x_i - x_j) - (corr_i - corr_j))^2
//                + sum_{j in N_i, j not in R}
//                      ((x_i - orig_j) - (corr_i - corr_j))^2 ]
// with N_i the 8-connected in-image neighborhood: the corrected data guides
// every gradient, seam pairs included, so matching inputs are reproduced
// exactly. The stationarity system is symmetric positive definite as long
// as every connected component of R has at least one neighbor outside R.
inline std::vector<double> inpaint_view(const InpaintProblem& p) {
  p.validate();
  const int nu = p.nu, nv = p.nv;
  std::vector<double> out = p.orig;
  std::vector<std::int64_t> unknown(p.mask.size(), -1);
  std::vector<std::size_t> cells;
  for (std::size_t i = 0; i < p.mask.size(); ++i)
    if (p.mask[i]) {
      unknown[i] = std::int64_t(cells.size());
      cells.push_back(i);
    }
  const std::size_t n = cells.size();
  if (n == 0) return out;

  // per unknown: diagonal, right-hand side, interior neighbor list
  std::vector<double> diag(n, 0.0), rhs(n, 0.0);
  std::vector<std::vector<std::int64_t>> nbr(n);
  std::vector<std::uint8_t> anchored(n, 0);
  for (std::size_t s = 0; s < n; ++s) {
    std::size_t i = cells[s];
    int u = int(i % nu), v = int(i / nu);
    for (int dv = -1; dv <= 1; ++dv)
      for (int du = -1; du <= 1; ++du) {
        if (du == 0 && dv == 0) continue;
        int uu = u + du, vv = v + dv;
        if (uu < 0 || uu >= nu || vv < 0 || vv >= nv) continue;
        std::size_t j = p.index(vv, uu);
        if (p.mask[j]) {
          diag[s] += 4.0;
          rhs[s] += 4.0 * (p.corr[i] - p.corr[j]);
          nbr[s].push_back(unknown[j]);
        } else {
          diag[s] += 2.0;
          rhs[s] += 2.0 * (p.orig[j] + p.corr[i] - p.corr[j]);
          anchored[s] = 1;
        }
      }
  }

  // flood the anchor property through the interior adjacency to verify
  // every component can see the boundary
  {
    std::vector<std::size_t> frontier;
    std::vector<std::uint8_t> seen(n, 0);
    for (std::size_t s = 0; s < n; ++s)
      if (anchored[s]) {
        seen[s] = 1;
        frontier.push_back(s);
      }
    for (std::size_t f = 0; f < frontier.size(); ++f)
      for (std::int64_t t : nbr[frontier[f]])
        if (!seen[std::size_t(t)]) {
          seen[std::size_t(t)] = 1;
          frontier.push_back(std::size_t(t));
        }
    for (std::size_t s = 0; s < n; ++s)
      if (!seen[s])
        throw std::invalid_argument(
            "inpaint: a shadow component has no boundary anchor");
  }

  auto apply = [&](const std::vector<double>& x, std::vector<double>& y) {
    for (std::size_t s = 0; s < n; ++s) {
      double acc = diag[s] * x[s];
      for (std::int64_t t : nbr[s]) acc -= 4.0 * x[std::size_t(t)];
      y[s] = acc;
    }
  };

  // conjugate gradients from the naive paste as the starting point
  std::vector<double> x(n), r(n), d(n), q(n);
  for (std::size_t s = 0; s < n; ++s) x[s] = p.corr[cells[s]];
  apply(x, q);
  double bnorm2 = 0;
  for (std::size_t s = 0; s < n; ++s) {
    r[s] = rhs[s] - q[s];
    bnorm2 += rhs[s] * rhs[s];
  }
  if (bnorm2 == 0) bnorm2 = 1;
  d = r;
  double rho = 0;
  for (std::size_t s = 0; s < n; ++s) rho += r[s] * r[s];
  const double stop2 = p.tolerance * p.tolerance * bnorm2;
  int it = 0;
  while (rho > stop2) {
    if (it++ >= p.max_iterations) {
      std::ostringstream os;
      os << "inpaint: no convergence after " << p.max_iterations
         << " iterations, relative residual "
         << std::sqrt(rho / bnorm2);
      throw std::runtime_error(os.str());
    }
    apply(d, q);
    double dq = 0;
    for (std::size_t s = 0; s < n; ++s) dq += d[s] * q[s];
    double alpha = rho / dq;
    for (std::size_t s = 0; s < n; ++s) {
      x[s] += alpha * d[s];
      r[s] -= alpha * q[s];
    }
    double rho_new = 0;
    for (std::size_t s = 0; s < n; ++s) rho_new += r[s] * r[s];
    double beta = rho_new / rho;
    rho = rho_new;
    for (std::size_t s = 0; s < n; ++s) d[s] = r[s] + beta * d[s];
  }
  for (std::size_t s = 0; s < n; ++s) out[cells[s]] = x[s];
  return out;
}

// Per-view in-painting over the shadow mask; views are independent.
inline Sinogram inpaint_sinogram(const Sinogram& orig, const Sinogram& corr,
                                 const MetalShadowMask& shadow,
                                 double tolerance = 1e-6,
                                 int max_iterations = 10000) {
  if (!orig.geom.same_as(corr.geom) || !orig.geom.same_as(shadow.geom))
    throw std::invalid_argument("inpaint_sinogram: geometry mismatch");
  const auto& g = orig.geom;
  Sinogram out = orig;
  parallel_for_chunks(g.n_views(), [&](std::int64_t vb, std::int64_t ve) {
    for (int view = int(vb); view < int(ve); ++view) {
      InpaintProblem p;
      p.nu = g.nu;
      p.nv = g.nv;
      p.tolerance = tolerance;
      p.max_iterations = max_iterations;
      std::size_t base = orig.index(view, 0, 0);
      std::size_t len = std::size_t(g.nu) * g.nv;
      p.orig.assign(orig.data.begin() + base, orig.data.begin() + base + len);
      p.corr.assign(corr.data.begin() + base, corr.data.begin() + base + len);
      p.mask.assign(shadow.data.begin() + std::ptrdiff_t(base),
                    shadow.data.begin() + std::ptrdiff_t(base + len));
      auto solved = inpaint_view(p);
      std::copy(solved.begin(), solved.end(), out.data.begin() + base);
    }
  });
  return out;
}

}  // namespace raymar
