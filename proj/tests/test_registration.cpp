#include "raymar/registration.hpp"

#include "raymar/metrics.hpp"

#include "test_helpers.hpp"

#include <catch2/catch_amalgamated.hpp>
#include <random>

using namespace raymar;

namespace {

// Brute-force balance-point oracle: all center bins minimizing the absolute
// difference between the mass strictly left and strictly right.
std::vector<int> balance_argmin(const std::vector<std::uint64_t>& h) {
  const int n = int(h.size());
  std::vector<std::int64_t> imb(n);
  std::int64_t best = std::numeric_limits<std::int64_t>::max();
  for (int m = 0; m < n; ++m) {
    std::int64_t l = 0, r = 0;
    for (int i = 0; i < m; ++i) l += h[i];
    for (int i = m + 1; i < n; ++i) r += h[i];
    imb[m] = std::llabs(l - r);
    best = std::min(best, imb[m]);
  }
  std::vector<int> out;
  for (int m = 0; m < n; ++m)
    if (imb[m] == best) out.push_back(m);
  return out;
}

// Two offset gaussian bumps of unequal strength on a soft background; the
// asymmetry pins down all six pose parameters.
double bone_scene(const Vec3& p) {
  auto bump = [](Vec3 q, Vec3 c, double s, double a) {
    Vec3 d = q - c;
    return a * std::exp(-d.dot(d) / (2 * s * s));
  };
  double soft = 0.02 * std::exp(-p.dot(p) / (2 * 24.0 * 24.0));
  return soft + bump(p, {8, 2, -5}, 6.0, 0.05) +
         bump(p, {-6, -7, 6}, 4.0, 0.04) + bump(p, {0, 9, 2}, 3.0, 0.03);
}

Volume3D sample_scene() {
  Volume3D vol = Volume3D::centered({32, 32, 32}, {2, 2, 2});
  for (int k = 0; k < 32; ++k)
    for (int j = 0; j < 32; ++j)
      for (int i = 0; i < 32; ++i)
        vol.at(i, j, k) = bone_scene(vol.voxel_center(i, j, k));
  return vol;
}

}  // namespace

TEST_CASE("the balance threshold of two equal spikes is their midpoint") {
  std::vector<std::uint64_t> h{10, 0, 0, 0, 10};
  CHECK(bht_threshold(h) == 2);
  auto set = balance_argmin(h);
  CHECK(std::find(set.begin(), set.end(), 2) != set.end());
}

TEST_CASE("all mass in one bin thresholds at that bin") {
  for (int b = 0; b < 5; ++b) {
    std::vector<std::uint64_t> h(5, 0);
    h[std::size_t(b)] = 7;
    CHECK(bht_threshold(h) == b);
  }
}

TEST_CASE("two equal modes at bins 10 and 40 threshold strictly between") {
  std::vector<std::uint64_t> h(64, 0);
  for (int d = -3; d <= 3; ++d) {
    std::uint64_t c = std::uint64_t(100.0 * std::exp(-d * d / 4.0));
    h[std::size_t(10 + d)] += c;
    h[std::size_t(40 + d)] += c;
  }
  int t = bht_threshold(h);
  CHECK(t > 10);
  CHECK(t < 40);
}

TEST_CASE("the threshold always lands on a brute-force balance point") {
  std::mt19937_64 rng(99);
  for (int rep = 0; rep < 200; ++rep) {
    int n = 2 + int(rng() % 63);
    std::vector<std::uint64_t> h(std::size_t(n), 0);
    // sparse histograms exercise the empty-bin plateaus
    int spikes = 1 + int(rng() % 6);
    for (int s = 0; s < spikes; ++s)
      h[rng() % std::size_t(n)] += 1 + rng() % 40;
    auto set = balance_argmin(h);
    int got = bht_threshold(h);
    INFO("n=" << n << " rep=" << rep);
    CHECK(std::find(set.begin(), set.end(), got) != set.end());
  }
}

TEST_CASE("degenerate histograms are rejected") {
  CHECK_THROWS_AS(bht_threshold({}), std::invalid_argument);
  CHECK_THROWS_AS(bht_threshold({5}), std::invalid_argument);
  CHECK_THROWS_AS(bht_threshold({0, 0, 0}), std::invalid_argument);
}

TEST_CASE("a two-valued volume masks exactly the brighter value") {
  Volume3D v = Volume3D::centered({10, 10, 10}, {1, 1, 1});
  std::mt19937_64 rng(3);
  for (auto& x : v.data) x = (rng() % 4 == 0) ? 0.06 : 0.02;
  auto mask = extract_bone_mask(v);
  for (std::size_t i = 0; i < v.size(); ++i)
    CHECK((mask.data[i] != 0) == (v.data[i] == 0.06));
}

TEST_CASE("a constant volume has no bone threshold") {
  Volume3D v = Volume3D::centered({6, 6, 6}, {1, 1, 1});
  std::fill(v.data.begin(), v.data.end(), 0.02);
  CHECK_THROWS_AS(extract_bone_mask(v), std::invalid_argument);
}

TEST_CASE("a sparse bright component is recovered with high dice") {
  // soft background with 1% bone-valued voxels
  Volume3D v = Volume3D::centered({24, 24, 24}, {1, 1, 1});
  BinaryMask3D truth(v);
  std::mt19937_64 rng(7);
  for (std::size_t i = 0; i < v.size(); ++i) {
    bool bone = (rng() % 100) == 0;
    truth.data[i] = bone;
    v.data[i] = bone ? 0.041 : 0.0193;
  }
  if (truth.count() == 0) {
    truth.data[0] = 1;
    v.data[0] = 0.041;
  }
  auto mask = extract_bone_mask(v);
  CHECK(dice(mask, truth) >= 0.95);
}

TEST_CASE("dense structures survive the coarse bone mask") {
  Volume3D v = Volume3D::centered({20, 20, 20}, {2, 2, 2});
  BinaryMask3D dense(v);
  for (int k = 0; k < 20; ++k)
    for (int j = 0; j < 20; ++j)
      for (int i = 0; i < 20; ++i) {
        Vec3 p = v.voxel_center(i, j, k);
        double r = p.norm();
        double val = 0.0;              // air shell
        if (r < 16) val = 0.0193;      // soft interior
        if (r < 6) val = 0.041;        // bone core
        if (r < 2.5) val = 0.58;       // metal center
        v.at(i, j, k) = val;
        dense.set(i, j, k, val >= 0.041);
      }
  auto mask = extract_bone_mask(v);
  for (std::size_t i = 0; i < v.size(); ++i)
    if (dense.data[i]) CHECK(mask.data[i] != 0);
}

TEST_CASE("the objective vanishes for identical volumes at identity") {
  auto v = testutil::make_gaussian_blob({12, 12, 12}, {1.5, 1.5, 1.5}, 0.05,
                                        6.0);
  auto mask = extract_bone_mask(v);
  RegistrationObjectiveParams p;
  p.unc_mask = &mask;
  p.pri_mask = &mask;
  p.stride = 1;
  CHECK(registration_objective({}, v, v, p) == 0.0);
}

TEST_CASE("a mask disagreement doubles the single-voxel mismatch") {
  Volume3D unc({1, 1, 1}, {1, 1, 1}, {0, 0, 0});
  Volume3D pri = unc;
  unc.data[0] = 1.0;
  pri.data[0] = 0.4;
  BinaryMask3D unc_mask(unc), pri_mask(pri);
  unc_mask.data[0] = 1;
  pri_mask.data[0] = 0;
  RegistrationObjectiveParams p;
  p.penalty_factor = 2.0;
  p.unc_mask = &unc_mask;
  p.pri_mask = &pri_mask;
  p.stride = 1;
  CHECK(registration_objective({}, unc, pri, p) ==
        Catch::Approx(1.2).margin(1e-15));
}

TEST_CASE("the objective is positively homogeneous in the intensities") {
  std::mt19937_64 rng(11);
  Volume3D a = Volume3D::centered({8, 8, 8}, {2, 2, 2});
  Volume3D b = a;
  for (std::size_t i = 0; i < a.size(); ++i) {
    a.data[i] = testutil::rand_in(rng, 0, 0.06);
    b.data[i] = testutil::rand_in(rng, 0, 0.06);
  }
  BinaryMask3D ma(a), mb(b);
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma.data[i] = a.data[i] > 0.03;
    mb.data[i] = b.data[i] > 0.03;
  }
  RegistrationObjectiveParams p;
  p.unc_mask = &ma;
  p.pri_mask = &mb;
  p.stride = 1;
  RigidTransform T{{1.0, -0.5, 0.25}, {0.02, -0.01, 0.03}};
  double base = registration_objective(T, a, b, p);
  const double k = 3.7;
  Volume3D ak = a, bk = b;
  for (auto& x : ak.data) x *= k;
  for (auto& x : bk.data) x *= k;
  double scaled = registration_objective(T, ak, bk, p);
  CHECK(scaled == Catch::Approx(k * base).epsilon(1e-12));
}

TEST_CASE("the swarm minimizes a six-dimensional quadratic bowl") {
  SwarmConfig cfg;
  cfg.n_particles = 64;
  cfg.n_generations = 200;
  cfg.lo.fill(-5);
  cfg.hi.fill(5);
  cfg.seed = 42;
  auto obj = [](const ParamVec& x) {
    double s = 0;
    for (double v : x) s += v * v;
    return s;
  };
  auto r = hybrid_pso_minimize(obj, cfg);
  CHECK(r.best_value < 1e-3);
}

TEST_CASE("a constant objective returns an in-bounds point with its value") {
  SwarmConfig cfg;
  cfg.n_particles = 16;
  cfg.n_generations = 10;
  cfg.seed = 5;
  auto r = hybrid_pso_minimize([](const ParamVec&) { return 4.5; }, cfg);
  CHECK(r.best_value == 4.5);
  for (int d = 0; d < 6; ++d) {
    CHECK(r.best[d] >= cfg.lo[d]);
    CHECK(r.best[d] <= cfg.hi[d]);
  }
}

TEST_CASE("the global best never worsens between generations") {
  SwarmConfig cfg;
  cfg.n_particles = 20;
  cfg.n_generations = 60;
  cfg.lo.fill(-4);
  cfg.hi.fill(4);
  cfg.seed = 77;
  // rugged multimodal objective
  auto obj = [](const ParamVec& x) {
    double s = 0;
    for (double v : x) s += v * v - 2.0 * std::cos(5.0 * v) + 2.0;
    return s;
  };
  std::vector<double> history;
  hybrid_pso_minimize(obj, cfg,
                      [&](int, double best) { history.push_back(best); });
  REQUIRE(history.size() == 60);
  for (std::size_t g = 1; g < history.size(); ++g)
    CHECK(history[g] <= history[g - 1]);
}

TEST_CASE("identical seeds give bitwise identical swarm results") {
  SwarmConfig cfg;
  cfg.n_particles = 24;
  cfg.n_generations = 30;
  cfg.seed = 1234;
  auto obj = [](const ParamVec& x) {
    double s = 0;
    for (int d = 0; d < 6; ++d) s += std::abs(x[d] - 0.3 * d);
    return s;
  };
  auto a = hybrid_pso_minimize(obj, cfg);
  auto b = hybrid_pso_minimize(obj, cfg);
  CHECK(a.best == b.best);
  CHECK(a.best_value == b.best_value);
}

TEST_CASE("invalid swarm configurations are rejected") {
  SwarmConfig cfg;
  cfg.n_particles = 9;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.n_particles = 16;
  cfg.lo[2] = 1.0;
  cfg.hi[2] = -1.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("a known rigid displacement is recovered") {
  RigidTransform truth;
  truth.t = {4.15, -2.1, 1.66};
  truth.r = {2 * M_PI / 180, -3 * M_PI / 180, 1 * M_PI / 180};
  Volume3D pri = sample_scene();
  Volume3D unc = resample_rigid(pri, truth, pri);
  auto pri_mask = extract_bone_mask(pri);
  auto unc_mask = extract_bone_mask(unc);
  SwarmConfig cfg;
  cfg.n_particles = 32;
  cfg.n_generations = 80;
  for (int d = 0; d < 3; ++d) {
    cfg.lo[d] = -10;
    cfg.hi[d] = 10;
  }
  for (int d = 3; d < 6; ++d) {
    cfg.lo[d] = -8 * M_PI / 180;
    cfg.hi[d] = 8 * M_PI / 180;
  }
  cfg.seed = 3;
  auto r = register_volumes(unc, pri, unc_mask, pri_mask, 2.0, cfg);
  double tol_t = 0.5 * pri.min_spacing();
  double tol_r = 0.5 * M_PI / 180;
  CHECK(std::abs(r.transform.t.x - truth.t.x) < tol_t);
  CHECK(std::abs(r.transform.t.y - truth.t.y) < tol_t);
  CHECK(std::abs(r.transform.t.z - truth.t.z) < tol_t);
  CHECK(std::abs(r.transform.r.x - truth.r.x) < tol_r);
  CHECK(std::abs(r.transform.r.y - truth.r.y) < tol_r);
  CHECK(std::abs(r.transform.r.z - truth.r.z) < tol_r);
}
