#pragma once

// Bone-mask construction and rigid alignment of the prior volume to the
// uncorrected volume: penalized L1 objective minimized by a particle swarm
// with periodic randomization and crossover of poor particles.

#include "raymar/core.hpp"
#include "raymar/parallel.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <random>

namespace raymar {

// Balanced histogram threshold: the center bin where the mass strictly left
// and strictly right balances. The center starts at the histogram midpoint
// and trims toward the heavier side while that does not worsen the
// imbalance; equal-imbalance runs (empty bins) are crossed, so the walk
// settles on the balance point of the full histogram.
inline int bht_threshold(const std::vector<std::uint64_t>& counts) {
  const int n = int(counts.size());
  if (n < 2) throw std::invalid_argument("bht_threshold: need >= 2 bins");
  std::uint64_t total = std::accumulate(counts.begin(), counts.end(),
                                        std::uint64_t(0));
  if (total == 0) throw std::invalid_argument("bht_threshold: empty histogram");
  int c = (n - 1) / 2;
  std::int64_t w_l = 0, w_r = 0;
  for (int i = 0; i < c; ++i) w_l += counts[i];
  for (int i = c + 1; i < n; ++i) w_r += counts[i];
  int dir = 0;  // last trim direction; the walk never reverses
  while (w_l != w_r) {
    std::int64_t imbalance = std::llabs(w_l - w_r);
    if (w_l > w_r) {
      if (c == 0 || dir > 0) break;
      std::int64_t nl = w_l - std::int64_t(counts[c - 1]);
      std::int64_t nr = w_r + std::int64_t(counts[c]);
      if (std::llabs(nl - nr) > imbalance) break;
      w_l = nl;
      w_r = nr;
      --c;
      dir = -1;
    } else {
      if (c == n - 1 || dir < 0) break;
      std::int64_t nl = w_l + std::int64_t(counts[c]);
      std::int64_t nr = w_r - std::int64_t(counts[c + 1]);
      if (std::llabs(nl - nr) > imbalance) break;
      w_l = nl;
      w_r = nr;
      ++c;
      dir = 1;
    }
  }
  return c;
}

// 256-bin histogram over [min, max] of the volume values.
inline std::vector<std::uint64_t> intensity_histogram(const Volume3D& vol,
                                                      double& lo,
                                                      double& hi,
                                                      int bins = 256) {
  lo = *std::min_element(vol.data.begin(), vol.data.end());
  hi = *std::max_element(vol.data.begin(), vol.data.end());
  std::vector<std::uint64_t> h(bins, 0);
  if (hi == lo) return h;
  const double scale = bins / (hi - lo);
  for (double v : vol.data) {
    int b = int((v - lo) * scale);
    h[std::clamp(b, 0, bins - 1)]++;
  }
  return h;
}

// Voxels in histogram bins above the balanced threshold.
inline BinaryMask3D extract_bone_mask(const Volume3D& vol) {
  double lo, hi;
  auto h = intensity_histogram(vol, lo, hi);
  if (hi == lo)
    throw std::invalid_argument(
        "extract_bone_mask: constant volume has no two materials");
  int t = bht_threshold(h);
  const double scale = 256.0 / (hi - lo);
  BinaryMask3D mask(vol);
  for (std::size_t i = 0; i < vol.size(); ++i) {
    int b = std::clamp(int((vol.data[i] - lo) * scale), 0, 255);
    mask.data[i] = b > t;
  }
  return mask;
}

struct RegistrationObjectiveParams {
  double penalty_factor = 2.0;  // >= 1
  const BinaryMask3D* unc_mask = nullptr;
  const BinaryMask3D* pri_mask = nullptr;
  int stride = 2;  // voxels

  void validate() const {
    if (penalty_factor < 1.0)
      throw std::invalid_argument("penalty_factor must be >= 1");
    if (stride < 1) throw std::invalid_argument("stride must be >= 1");
    if (!unc_mask || !pri_mask)
      throw std::invalid_argument("objective needs both bone masks");
  }
};

// Penalized L1 data term: sum over sampled voxels of the uncorrected grid of
// p_i * |f_unc,i - T(f_pri)_i| where p_i = 1 when the fixed bone mask and
// the transported moving bone mask agree, penalty_factor otherwise.
inline double registration_objective(const RigidTransform& T,
                                     const Volume3D& f_unc,
                                     const Volume3D& f_pri,
                                     const RegistrationObjectiveParams& p) {
  p.validate();
  const Mat3 R = T.rotation();
  const int s = p.stride;
  const int nz = (f_unc.dims[2] + s - 1) / s;
  std::vector<double> partial(nz, 0.0);
  parallel_for_chunks(nz, [&](std::int64_t zb, std::int64_t ze) {
    for (int kz = int(zb); kz < int(ze); ++kz) {
      int k = kz * s;
      double acc = 0.0;
      for (int j = 0; j < f_unc.dims[1]; j += s)
        for (int i = 0; i < f_unc.dims[0]; i += s) {
          Vec3 c = f_unc.voxel_center(i, j, k);
          Vec3 q = mat_apply_transposed(R, c - T.t);
          double moving = sample_trilinear(f_pri, q);
          bool unc_bone = p.unc_mask->data[f_unc.index(i, j, k)] != 0;
          bool pri_bone = sample_nearest(*p.pri_mask, q);
          double w = (unc_bone == pri_bone) ? 1.0 : p.penalty_factor;
          acc += w * std::abs(f_unc.at(i, j, k) - moving);
        }
      partial[kz] = acc;
    }
  });
  double sum = 0.0;
  for (double v : partial) sum += v;
  return sum;
}

struct SwarmConfig {
  int n_particles = 64;   // even, >= 10
  int n_generations = 300;
  std::array<double, 6> lo{-30, -30, -30, -15 * M_PI / 180,
                           -15 * M_PI / 180, -15 * M_PI / 180};
  std::array<double, 6> hi{30, 30, 30, 15 * M_PI / 180, 15 * M_PI / 180,
                           15 * M_PI / 180};
  double inertia = 0.729;
  double cognitive = 1.49445;
  double social = 1.49445;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_particles < 10 || n_particles % 2 != 0)
      throw std::invalid_argument("n_particles must be even and >= 10");
    if (n_generations < 1)
      throw std::invalid_argument("n_generations must be >= 1");
    for (int d = 0; d < 6; ++d)
      if (!(lo[d] < hi[d]) || !std::isfinite(lo[d]) || !std::isfinite(hi[d]))
        throw std::invalid_argument("swarm bounds must be finite and ordered");
  }
};

using ParamVec = std::array<double, 6>;

inline RigidTransform transform_from_params(const ParamVec& x) {
  RigidTransform T;
  T.t = {x[0], x[1], x[2]};
  T.r = {x[3], x[4], x[5]};
  return T;
}

struct SwarmResult {
  ParamVec best{};
  double best_value = 0;
};

// Particle swarm with the randomization schedule: every generation half the
// particles get one uniformly re-drawn parameter; every third generation the
// worst half is split into full re-initialization, single-parameter
// perturbation (three fifths of the rest) and crossover toward the global
// best. The global best is kept outside the swarm, so its fitness is
// non-increasing across generations.
inline SwarmResult hybrid_pso_minimize(
    const std::function<double(const ParamVec&)>& objective,
    const SwarmConfig& cfg,
    const std::function<void(int, double)>& per_generation = {}) {
  cfg.validate();
  const int n = cfg.n_particles;
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto draw_in = [&](int d) {
    return cfg.lo[d] + unit(rng) * (cfg.hi[d] - cfg.lo[d]);
  };

  std::vector<ParamVec> pos(n), vel(n), pbest(n);
  std::vector<double> fit(n), pbest_fit(n);
  for (int i = 0; i < n; ++i)
    for (int d = 0; d < 6; ++d) {
      pos[i][d] = draw_in(d);
      vel[i][d] = 0.0;
    }

  auto evaluate_all = [&]() {
    parallel_for(n, [&](std::int64_t i) { fit[i] = objective(pos[i]); });
  };

  evaluate_all();
  pbest = pos;
  pbest_fit = fit;
  SwarmResult result;
  result.best_value = std::numeric_limits<double>::infinity();
  auto update_best = [&]() {
    for (int i = 0; i < n; ++i) {
      if (fit[i] < pbest_fit[i]) {
        pbest_fit[i] = fit[i];
        pbest[i] = pos[i];
      }
      if (fit[i] < result.best_value) {
        result.best_value = fit[i];
        result.best = pos[i];
      }
    }
  };
  update_best();

  std::vector<int> order(n);
  for (int gen = 0; gen < cfg.n_generations; ++gen) {
    // velocity/position update
    for (int i = 0; i < n; ++i)
      for (int d = 0; d < 6; ++d) {
        double r1 = unit(rng), r2 = unit(rng);
        vel[i][d] = cfg.inertia * vel[i][d] +
                    cfg.cognitive * r1 * (pbest[i][d] - pos[i][d]) +
                    cfg.social * r2 * (result.best[d] - pos[i][d]);
        pos[i][d] =
            std::clamp(pos[i][d] + vel[i][d], cfg.lo[d], cfg.hi[d]);
      }

    evaluate_all();
    update_best();
    if (per_generation) per_generation(gen, result.best_value);

    // (a) every generation: a random half probes one re-drawn parameter;
    // the probe is kept only when it improves the particle, so the swarm's
    // fine convergence is not destroyed by the exploration kicks
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    {
      const int half = n / 2;
      std::vector<ParamVec> cand(half);
      std::vector<double> cand_fit(half);
      for (int s = 0; s < half; ++s) {
        cand[s] = pos[order[s]];
        int d = int(unit(rng) * 6.0);
        if (d > 5) d = 5;
        cand[s][d] = draw_in(d);
      }
      parallel_for(half,
                   [&](std::int64_t s) { cand_fit[s] = objective(cand[s]); });
      for (int s = 0; s < half; ++s) {
        int i = order[s];
        if (cand_fit[s] < fit[i]) {
          pos[i] = cand[s];
          fit[i] = cand_fit[s];
          if (fit[i] < pbest_fit[i]) {
            pbest_fit[i] = fit[i];
            pbest[i] = pos[i];
          }
          if (fit[i] < result.best_value) {
            result.best_value = fit[i];
            result.best = pos[i];
          }
        }
      }
    }

    // the third-generation rework below reshapes the starting positions of
    // the next generation; its fitness is picked up by the next evaluation

    // (b) every third generation: rework the worst half
    if ((gen + 1) % 3 == 0) {
      std::iota(order.begin(), order.end(), 0);
      std::sort(order.begin(), order.end(),
                [&](int a, int b) { return fit[a] > fit[b]; });
      const int worst = n / 2;
      const int reinit = worst / 2;
      const int rest = worst - reinit;
      const int perturb = (3 * rest + 4) / 5;  // ceil(3/5 * rest)
      for (int s = 0; s < worst; ++s) {
        int i = order[s];
        if (s < reinit) {
          for (int d = 0; d < 6; ++d) {
            pos[i][d] = draw_in(d);
            vel[i][d] = 0.0;
          }
        } else if (s < reinit + perturb) {
          int d = int(unit(rng) * 6.0);
          if (d > 5) d = 5;
          pos[i][d] = draw_in(d);
        } else {
          double lambda = unit(rng);
          for (int d = 0; d < 6; ++d)
            pos[i][d] = lambda * pos[i][d] +
                        (1.0 - lambda) * result.best[d];
        }
      }
    }
  }
  return result;
}

// Deterministic coordinate pattern search used as the final polish pass.
inline SwarmResult pattern_search(
    const std::function<double(const ParamVec&)>& objective,
    const ParamVec& start, ParamVec step, double shrink = 0.5,
    int max_rounds = 40, double min_step_scale = 1e-3) {
  SwarmResult r;
  r.best = start;
  r.best_value = objective(start);
  ParamVec step0 = step;
  for (int round = 0; round < max_rounds; ++round) {
    bool improved = false;
    for (int d = 0; d < 6; ++d) {
      for (double sgn : {+1.0, -1.0}) {
        ParamVec cand = r.best;
        cand[d] += sgn * step[d];
        double v = objective(cand);
        if (v < r.best_value) {
          r.best_value = v;
          r.best = cand;
          improved = true;
        }
      }
    }
    if (!improved) {
      bool done = true;
      for (int d = 0; d < 6; ++d) {
        step[d] *= shrink;
        if (step[d] > min_step_scale * step0[d]) done = false;
      }
      if (done) break;
    }
  }
  return r;
}

struct RegistrationResult {
  RigidTransform transform;
  double objective_value = 0;
};

// End-to-end rigid registration: stride-sampled PSO search followed by a
// stride-1 pattern-search polish around the swarm optimum.
inline RegistrationResult register_volumes(
    const Volume3D& f_unc, const Volume3D& f_pri,
    const BinaryMask3D& unc_mask, const BinaryMask3D& pri_mask,
    double penalty_factor, const SwarmConfig& cfg, int stride = 2,
    bool polish = true) {
  RegistrationObjectiveParams params;
  params.penalty_factor = penalty_factor;
  params.unc_mask = &unc_mask;
  params.pri_mask = &pri_mask;
  params.stride = stride;
  auto coarse = [&](const ParamVec& x) {
    return registration_objective(transform_from_params(x), f_unc, f_pri,
                                  params);
  };
  auto swarm = hybrid_pso_minimize(coarse, cfg);
  SwarmResult final = swarm;
  if (polish) {
    RegistrationObjectiveParams fine = params;
    fine.stride = 1;
    auto fine_obj = [&](const ParamVec& x) {
      return registration_objective(transform_from_params(x), f_unc, f_pri,
                                    fine);
    };
    ParamVec step;
    double t_step = 2.0 * f_unc.min_spacing();
    double r_step = 2.0 * M_PI / 180.0;
    step = {t_step, t_step, t_step, r_step, r_step, r_step};
    final = pattern_search(fine_obj, swarm.best, step);
  }
  return {transform_from_params(final.best), final.best_value};
}

}  // namespace raymar
