#pragma once

// End-to-end orchestration: a plain-text config drives the full correction
// chain (reconstruct, register, localize metal, correct profiles, in-paint,
// reconstruct again), every intermediate is persisted under the output
// directory, and a run can resume from whatever artifacts already exist.

#include "raymar/core.hpp"
#include "raymar/correction.hpp"
#include "raymar/fdk.hpp"
#include "raymar/inpaint.hpp"
#include "raymar/io.hpp"
#include "raymar/metal.hpp"
#include "raymar/metrics.hpp"
#include "raymar/projector.hpp"
#include "raymar/registration.hpp"
#include "raymar/simulation.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>

namespace raymar {

// ---------------------------------------------------------------------------
// Config grammar: one `key = value` per line, `#` starts a comment, blank
// lines ignored. Keys are dotted names; values are whitespace-separated
// tokens. Repeating a key overrides the earlier value, except
// `phantom.primitive`, which accumulates. CLI flags write into the same map,
// so a flag overrides its config key by arriving later.
// ---------------------------------------------------------------------------

struct ConfigMap {
  std::vector<std::pair<std::string, std::string>> entries;

  static ConfigMap parse_text(const std::string& text) {
    ConfigMap m;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos) continue;
      auto eq = line.find('=');
      if (eq == std::string::npos)
        throw std::invalid_argument("config line " + std::to_string(lineno) +
                                    ": expected key = value");
      auto trim = [](std::string s) {
        auto b = s.find_first_not_of(" \t\r");
        auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
      };
      std::string key = trim(line.substr(0, eq));
      std::string val = trim(line.substr(eq + 1));
      if (key.empty())
        throw std::invalid_argument("config line " + std::to_string(lineno) +
                                    ": empty key");
      m.entries.emplace_back(key, val);
    }
    return m;
  }

  static ConfigMap parse_file(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f)
      throw std::invalid_argument("cannot open config: " + path.string());
    std::ostringstream buf;
    buf << f.rdbuf();
    return parse_text(buf.str());
  }

  void set(const std::string& key, const std::string& value) {
    entries.emplace_back(key, value);
  }

  std::optional<std::string> get(const std::string& key) const {
    std::optional<std::string> out;
    for (const auto& [k, v] : entries)
      if (k == key) out = v;
    return out;
  }

  std::vector<std::string> get_all(const std::string& key) const {
    std::vector<std::string> out;
    for (const auto& [k, v] : entries)
      if (k == key) out.push_back(v);
    return out;
  }
};

namespace detail {

inline double cfg_double(const ConfigMap& m, const std::string& key,
                         double fallback) {
  auto v = m.get(key);
  if (!v) return fallback;
  std::istringstream in(*v);
  double x;
  if (!(in >> x)) throw std::invalid_argument("config " + key + ": not a number");
  return x;
}

inline int cfg_int(const ConfigMap& m, const std::string& key, int fallback) {
  auto v = m.get(key);
  if (!v) return fallback;
  std::istringstream in(*v);
  int x;
  if (!(in >> x))
    throw std::invalid_argument("config " + key + ": not an integer");
  return x;
}

inline bool cfg_bool(const ConfigMap& m, const std::string& key,
                     bool fallback) {
  auto v = m.get(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1") return true;
  if (*v == "false" || *v == "0") return false;
  throw std::invalid_argument("config " + key + ": expected true or false");
}

inline std::string cfg_string(const ConfigMap& m, const std::string& key,
                              const std::string& fallback) {
  auto v = m.get(key);
  return v ? *v : fallback;
}

template <typename T, std::size_t N>
std::array<T, N> cfg_tuple(const ConfigMap& m, const std::string& key,
                           const std::array<T, N>& fallback) {
  auto v = m.get(key);
  if (!v) return fallback;
  std::istringstream in(*v);
  std::array<T, N> out;
  for (auto& x : out)
    if (!(in >> x))
      throw std::invalid_argument("config " + key + ": expected " +
                                  std::to_string(N) + " values");
  return out;
}

inline PhantomPrimitive parse_primitive(const std::string& text) {
  std::istringstream in(text);
  std::string shape, material;
  if (!(in >> shape >> material))
    throw std::invalid_argument("phantom.primitive: expected shape material");
  PhantomPrimitive p;
  p.material = material_from_name(material);
  auto read = [&](double& x) {
    if (!(in >> x))
      throw std::invalid_argument("phantom.primitive: too few numbers in '" +
                                  text + "'");
  };
  if (shape == "ellipsoid" || shape == "box") {
    p.shape = shape == "ellipsoid" ? PhantomPrimitive::Shape::ellipsoid
                                   : PhantomPrimitive::Shape::box;
    read(p.a.x); read(p.a.y); read(p.a.z);
    read(p.b.x); read(p.b.y); read(p.b.z);
  } else if (shape == "cylinder") {
    p.shape = PhantomPrimitive::Shape::cylinder;
    read(p.a.x); read(p.a.y); read(p.a.z);
    read(p.b.x); read(p.b.y); read(p.b.z);
    read(p.radius);
  } else {
    throw std::invalid_argument("phantom.primitive: unknown shape " + shape);
  }
  return p;
}

inline std::string primitive_text(const PhantomPrimitive& p) {
  std::ostringstream os;
  os.precision(17);
  switch (p.shape) {
    case PhantomPrimitive::Shape::ellipsoid: os << "ellipsoid"; break;
    case PhantomPrimitive::Shape::box: os << "box"; break;
    case PhantomPrimitive::Shape::cylinder: os << "cylinder"; break;
  }
  switch (p.material) {
    case Material::air: os << " air"; break;
    case Material::soft: os << " soft"; break;
    case Material::bone: os << " bone"; break;
    case Material::metal: os << " metal"; break;
  }
  os << " " << p.a.x << " " << p.a.y << " " << p.a.z
     << " " << p.b.x << " " << p.b.y << " " << p.b.z;
  if (p.shape == PhantomPrimitive::Shape::cylinder) os << " " << p.radius;
  return os.str();
}

}  // namespace detail

struct PipelineConfig {
  // inputs and outputs
  std::string prior_volume;   // input.prior_volume
  std::string sinogram;       // input.sinogram (measured projections)
  std::string output_dir;     // output.dir

  // reconstruction grid
  std::array<int, 3> recon_dims{128, 128, 128};  // recon.dims
  Vec3 recon_spacing{1, 1, 1};                   // recon.spacing
  RampWindow window = RampWindow::shepplogan;    // recon.window
  double step = 0;  // recon.step (mm); 0 picks half the min voxel spacing

  // registration
  double penalty_factor = 2.0;  // registration.penalty_factor
  int reg_stride = 2;           // registration.stride
  bool reg_polish = true;       // registration.polish
  SwarmConfig swarm;            // registration.particles / .generations /
                                // .bound_t (mm) / .bound_r (deg)

  // metal localization
  DbscanParams dbscan;       // metal.eps / .min_pts / .min_cluster_voxels /
                             // .expected_clusters
  double rho_override = 0;   // metal.rho; 0 estimates from the segmentation
  double bone_mu = 0.041;    // metal.bone_mu, floor for the estimate

  // profile correction
  double h = 10.0;          // correction.h (mm)
  double prior_trust = 0.7; // correction.prior_trust

  // in-painting
  double inpaint_tolerance = 1e-6;    // inpaint.tolerance
  int inpaint_max_iterations = 10000; // inpaint.max_iterations

  bool reinsert_metal = false;  // final.reinsert_metal
  std::uint64_t seed = 0;       // seed

  // acquisition simulation (simulate subcommand)
  std::array<int, 3> phantom_dims{0, 0, 0};  // phantom.dims
  Vec3 phantom_spacing{1, 1, 1};             // phantom.spacing
  std::vector<PhantomPrimitive> primitives;  // phantom.primitive (repeatable)
  double sim_photons = 0;    // sim.photons; 0 is noiseless
  double sim_step = 0;       // sim.step (mm); 0 picks half the min spacing
  double ref_energy = 70.0;  // sim.ref_energy (keV)

  // acquisition geometry (simulate / reconstruct without a sinogram file)
  bool has_geometry = false;
  double sad = 0, sdd = 0;   // geometry.sad / geometry.sdd
  int nu = 0, nv = 0;        // geometry.nu / geometry.nv
  double wu = 0, wv = 0;     // geometry.wu / geometry.wv
  int n_views = 0;           // geometry.n_views

  static PipelineConfig from_map(const ConfigMap& m) {
    PipelineConfig c;
    c.prior_volume = detail::cfg_string(m, "input.prior_volume", "");
    c.sinogram = detail::cfg_string(m, "input.sinogram", "");
    c.output_dir = detail::cfg_string(m, "output.dir", "");
    c.recon_dims = detail::cfg_tuple<int, 3>(m, "recon.dims", c.recon_dims);
    auto sp = detail::cfg_tuple<double, 3>(
        m, "recon.spacing",
        {c.recon_spacing.x, c.recon_spacing.y, c.recon_spacing.z});
    c.recon_spacing = {sp[0], sp[1], sp[2]};
    std::string w = detail::cfg_string(m, "recon.window", "shepplogan");
    if (w == "ramlak") c.window = RampWindow::ramlak;
    else if (w == "shepplogan") c.window = RampWindow::shepplogan;
    else throw std::invalid_argument("recon.window: ramlak or shepplogan");
    c.step = detail::cfg_double(m, "recon.step", 0);

    c.penalty_factor =
        detail::cfg_double(m, "registration.penalty_factor", 2.0);
    c.reg_stride = detail::cfg_int(m, "registration.stride", 2);
    c.reg_polish = detail::cfg_bool(m, "registration.polish", true);
    c.swarm.n_particles = detail::cfg_int(m, "registration.particles", 64);
    c.swarm.n_generations =
        detail::cfg_int(m, "registration.generations", 300);
    double bt = detail::cfg_double(m, "registration.bound_t", 30.0);
    double br = detail::cfg_double(m, "registration.bound_r", 15.0);
    double brr = br * M_PI / 180.0;
    c.swarm.lo = {-bt, -bt, -bt, -brr, -brr, -brr};
    c.swarm.hi = {bt, bt, bt, brr, brr, brr};

    c.dbscan.eps = detail::cfg_double(m, "metal.eps", 0);
    c.dbscan.min_pts = detail::cfg_int(m, "metal.min_pts", 10);
    c.dbscan.min_cluster_voxels =
        detail::cfg_int(m, "metal.min_cluster_voxels", 20);
    if (auto v = m.get("metal.expected_clusters"))
      c.dbscan.expected_clusters = detail::cfg_int(m, "metal.expected_clusters", 0);
    c.rho_override = detail::cfg_double(m, "metal.rho", 0);
    c.bone_mu = detail::cfg_double(m, "metal.bone_mu", 0.041);

    c.h = detail::cfg_double(m, "correction.h", 10.0);
    c.prior_trust = detail::cfg_double(m, "correction.prior_trust", 0.7);

    c.inpaint_tolerance = detail::cfg_double(m, "inpaint.tolerance", 1e-6);
    c.inpaint_max_iterations =
        detail::cfg_int(m, "inpaint.max_iterations", 10000);

    c.reinsert_metal = detail::cfg_bool(m, "final.reinsert_metal", false);
    c.seed = std::uint64_t(detail::cfg_double(m, "seed", 0));
    c.swarm.seed = c.seed;

    c.phantom_dims =
        detail::cfg_tuple<int, 3>(m, "phantom.dims", c.phantom_dims);
    auto ps = detail::cfg_tuple<double, 3>(
        m, "phantom.spacing",
        {c.phantom_spacing.x, c.phantom_spacing.y, c.phantom_spacing.z});
    c.phantom_spacing = {ps[0], ps[1], ps[2]};
    for (const auto& text : m.get_all("phantom.primitive"))
      c.primitives.push_back(detail::parse_primitive(text));
    c.sim_photons = detail::cfg_double(m, "sim.photons", 0);
    c.sim_step = detail::cfg_double(m, "sim.step", 0);
    c.ref_energy = detail::cfg_double(m, "sim.ref_energy", 70.0);

    c.has_geometry = m.get("geometry.sad").has_value();
    if (c.has_geometry) {
      c.sad = detail::cfg_double(m, "geometry.sad", 0);
      c.sdd = detail::cfg_double(m, "geometry.sdd", 0);
      c.nu = detail::cfg_int(m, "geometry.nu", 0);
      c.nv = detail::cfg_int(m, "geometry.nv", 0);
      c.wu = detail::cfg_double(m, "geometry.wu", 0);
      c.wv = detail::cfg_double(m, "geometry.wv", 0);
      c.n_views = detail::cfg_int(m, "geometry.n_views", 0);
    }
    return c;
  }

  ConeBeamGeometry geometry() const {
    if (!has_geometry)
      throw std::invalid_argument("config has no geometry block");
    return ConeBeamGeometry::uniform(sad, sdd, nu, nv, wu, wv, n_views);
  }

  // Fully resolved echo, itself valid config text.
  std::string to_text() const {
    std::ostringstream os;
    os.precision(17);
    os << "input.prior_volume = " << prior_volume << "\n";
    os << "input.sinogram = " << sinogram << "\n";
    os << "output.dir = " << output_dir << "\n";
    os << "recon.dims = " << recon_dims[0] << " " << recon_dims[1] << " "
       << recon_dims[2] << "\n";
    os << "recon.spacing = " << recon_spacing.x << " " << recon_spacing.y
       << " " << recon_spacing.z << "\n";
    os << "recon.window = "
       << (window == RampWindow::ramlak ? "ramlak" : "shepplogan") << "\n";
    os << "recon.step = " << step << "\n";
    os << "registration.penalty_factor = " << penalty_factor << "\n";
    os << "registration.stride = " << reg_stride << "\n";
    os << "registration.polish = " << (reg_polish ? "true" : "false") << "\n";
    os << "registration.particles = " << swarm.n_particles << "\n";
    os << "registration.generations = " << swarm.n_generations << "\n";
    os << "registration.bound_t = " << swarm.hi[0] << "\n";
    os << "registration.bound_r = " << swarm.hi[3] * 180.0 / M_PI << "\n";
    os << "metal.eps = " << dbscan.eps << "\n";
    os << "metal.min_pts = " << dbscan.min_pts << "\n";
    os << "metal.min_cluster_voxels = " << dbscan.min_cluster_voxels << "\n";
    if (dbscan.expected_clusters)
      os << "metal.expected_clusters = " << *dbscan.expected_clusters << "\n";
    os << "metal.rho = " << rho_override << "\n";
    os << "metal.bone_mu = " << bone_mu << "\n";
    os << "correction.h = " << h << "\n";
    os << "correction.prior_trust = " << prior_trust << "\n";
    os << "inpaint.tolerance = " << inpaint_tolerance << "\n";
    os << "inpaint.max_iterations = " << inpaint_max_iterations << "\n";
    os << "final.reinsert_metal = " << (reinsert_metal ? "true" : "false")
       << "\n";
    os << "seed = " << seed << "\n";
    if (phantom_dims[0] > 0) {
      os << "phantom.dims = " << phantom_dims[0] << " " << phantom_dims[1]
         << " " << phantom_dims[2] << "\n";
      os << "phantom.spacing = " << phantom_spacing.x << " "
         << phantom_spacing.y << " " << phantom_spacing.z << "\n";
      for (const auto& p : primitives)
        os << "phantom.primitive = " << detail::primitive_text(p) << "\n";
      os << "sim.photons = " << sim_photons << "\n";
      os << "sim.step = " << sim_step << "\n";
      os << "sim.ref_energy = " << ref_energy << "\n";
    }
    if (has_geometry) {
      os << "geometry.sad = " << sad << "\n";
      os << "geometry.sdd = " << sdd << "\n";
      os << "geometry.nu = " << nu << "\n";
      os << "geometry.nv = " << nv << "\n";
      os << "geometry.wu = " << wu << "\n";
      os << "geometry.wv = " << wv << "\n";
      os << "geometry.n_views = " << n_views << "\n";
    }
    return os.str();
  }
};

// The shadow mask travels through the sinogram container as 0/1 values.
inline void write_shadow(const std::filesystem::path& path,
                         const MetalShadowMask& shadow) {
  Sinogram s(shadow.geom);
  for (std::size_t i = 0; i < s.data.size(); ++i)
    s.data[i] = shadow.data[i] ? 1.0 : 0.0;
  write_sinogram(path, s);
}

inline MetalShadowMask read_shadow(const std::filesystem::path& path) {
  Sinogram s = read_sinogram(path);
  MetalShadowMask shadow(s.geom);
  for (std::size_t i = 0; i < s.data.size(); ++i)
    shadow.data[i] = s.data[i] > 0.5;
  return shadow;
}

namespace detail {

// Every stage writes its artifact and reads it straight back, so downstream
// stages always consume the same disk-rounded data whether the run is fresh
// or resumed. Stage failures are rethrown with the stage name attached;
// artifacts already on disk stay there.
template <typename Load, typename Compute, typename Store>
auto stage(const std::filesystem::path& file, const char* name,
           const Load& load, const Compute& compute, const Store& store) {
  try {
    if (!std::filesystem::exists(file)) store(file, compute());
    return load(file);
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("stage ") + name + ": " + e.what());
  }
}

struct TransformRecord {
  RigidTransform transform;
  double objective = 0;
};

inline void write_transform(const std::filesystem::path& path,
                            const TransformRecord& rec) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open for write: " + path.string());
  f.precision(17);
  f << "t: " << rec.transform.t.x << " " << rec.transform.t.y << " "
    << rec.transform.t.z << "\n";
  f << "r: " << rec.transform.r.x << " " << rec.transform.r.y << " "
    << rec.transform.r.z << "\n";
  f << "objective: " << rec.objective << "\n";
}

inline TransformRecord read_transform(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open: " + path.string());
  TransformRecord rec;
  std::string key;
  f >> key >> rec.transform.t.x >> rec.transform.t.y >> rec.transform.t.z;
  if (key != "t:") throw std::runtime_error("bad transform file: " + path.string());
  f >> key >> rec.transform.r.x >> rec.transform.r.y >> rec.transform.r.z;
  if (key != "r:") throw std::runtime_error("bad transform file: " + path.string());
  f >> key >> rec.objective;
  if (!f || key != "objective:")
    throw std::runtime_error("bad transform file: " + path.string());
  return rec;
}

struct MetalRecord {
  int clusters = 0;
  double rho = 0;
};

inline void write_metal_record(const std::filesystem::path& path,
                               const MetalRecord& rec) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open for write: " + path.string());
  f.precision(17);
  f << "clusters: " << rec.clusters << "\n";
  f << "rho: " << rec.rho << "\n";
}

inline MetalRecord read_metal_record(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open: " + path.string());
  MetalRecord rec;
  std::string key;
  f >> key >> rec.clusters;
  if (key != "clusters:")
    throw std::runtime_error("bad metal record: " + path.string());
  f >> key >> rec.rho;
  if (!f || key != "rho:")
    throw std::runtime_error("bad metal record: " + path.string());
  return rec;
}

}  // namespace detail

struct MarResult {
  Volume3D final_volume;
  RigidTransform transform;
  double registration_objective = 0;
  int metal_clusters = 0;
  double rho = 0;
  std::string report;
};

// Runs the full chain, persisting every intermediate under cfg.output_dir:
//   unc_volume.vol, bone_unc.mask, bone_prior.mask, transform.txt,
//   prior_aligned.vol, metal.mask, metal.txt, metal_only.vol, shadow.sino,
//   corrected.sino, inpainted.sino, final.vol, report.txt
// Artifacts already present are reused, which makes a rerun resume from the
// first missing stage and makes fresh runs with the same config and seed
// bitwise identical.
inline MarResult run_mar(const PipelineConfig& cfg) {
  namespace fs = std::filesystem;
  if (cfg.output_dir.empty())
    throw std::invalid_argument("run_mar: output.dir is required");
  if (cfg.sinogram.empty())
    throw std::invalid_argument("run_mar: input.sinogram is required");
  if (cfg.prior_volume.empty())
    throw std::invalid_argument("run_mar: input.prior_volume is required");
  fs::path dir(cfg.output_dir);
  fs::create_directories(dir);

  const Sinogram measured = read_sinogram(cfg.sinogram);
  const Volume3D prior = read_volume(cfg.prior_volume);
  const ConeBeamGeometry geom = measured.geom;

  Volume3D grid = Volume3D::centered(cfg.recon_dims, cfg.recon_spacing);
  const double step = cfg.step > 0 ? cfg.step : default_step(grid);

  auto load_vol = [](const fs::path& p) { return read_volume(p); };
  auto store_vol = [](const fs::path& p, const Volume3D& v) {
    write_volume(p, v);
  };
  auto load_mask = [](const fs::path& p) { return read_mask(p); };
  auto store_mask = [](const fs::path& p, const BinaryMask3D& m) {
    write_mask(p, m);
  };
  auto load_sino = [](const fs::path& p) { return read_sinogram(p); };
  auto store_sino = [](const fs::path& p, const Sinogram& s) {
    write_sinogram(p, s);
  };

  Volume3D unc = detail::stage(
      dir / "unc_volume.vol", "reconstruct-uncorrected", load_vol,
      [&] { return fdk_reconstruct(measured, grid, cfg.window); }, store_vol);

  BinaryMask3D bone_unc = detail::stage(
      dir / "bone_unc.mask", "bone-mask", load_mask,
      [&] { return extract_bone_mask(unc); }, store_mask);
  BinaryMask3D bone_prior = detail::stage(
      dir / "bone_prior.mask", "bone-mask", load_mask,
      [&] { return extract_bone_mask(prior); }, store_mask);

  detail::TransformRecord reg = detail::stage(
      dir / "transform.txt", "register", detail::read_transform,
      [&] {
        auto r = register_volumes(unc, prior, bone_unc, bone_prior,
                                  cfg.penalty_factor, cfg.swarm,
                                  cfg.reg_stride, cfg.reg_polish);
        return detail::TransformRecord{r.transform, r.objective_value};
      },
      detail::write_transform);

  Volume3D prior_aligned = detail::stage(
      dir / "prior_aligned.vol", "align-prior", load_vol,
      [&] { return resample_rigid(prior, reg.transform, unc); }, store_vol);

  BinaryMask3D metal_mask = detail::stage(
      dir / "metal.mask", "segment-metal", load_mask,
      [&] { return segment_metal(unc, cfg.dbscan).mask; }, store_mask);
  detail::MetalRecord metal_rec = detail::stage(
      dir / "metal.txt", "segment-metal", detail::read_metal_record,
      [&] {
        auto seg = segment_metal(unc, cfg.dbscan);
        double rho = cfg.rho_override > 0
                         ? cfg.rho_override
                         : estimate_rho(unc, seg.mask, cfg.bone_mu);
        return detail::MetalRecord{seg.cluster_count, rho};
      },
      detail::write_metal_record);

  Volume3D metal_only = detail::stage(
      dir / "metal_only.vol", "metal-only", load_vol,
      [&] { return metal_only_volume(unc, metal_mask, metal_rec.rho); },
      store_vol);

  MetalShadowMask shadow = detail::stage(
      dir / "shadow.sino", "metal-shadow", read_shadow,
      [&] { return metal_shadow(metal_only, geom, step); }, write_shadow);

  Sinogram corrected = detail::stage(
      dir / "corrected.sino", "correct-profiles", load_sino,
      [&] {
        CorrectionParams p{metal_rec.rho, cfg.h, cfg.prior_trust};
        return build_corrected_sinogram(measured, unc, prior_aligned,
                                        metal_only, shadow, geom, step, p);
      },
      store_sino);

  Sinogram inpainted = detail::stage(
      dir / "inpainted.sino", "inpaint", load_sino,
      [&] {
        return inpaint_sinogram(measured, corrected, shadow,
                                cfg.inpaint_tolerance,
                                cfg.inpaint_max_iterations);
      },
      store_sino);

  Volume3D final_vol = detail::stage(
      dir / "final.vol", "reconstruct-final", load_vol,
      [&] {
        Volume3D v = fdk_reconstruct(inpainted, grid, cfg.window);
        if (cfg.reinsert_metal)
          for (std::size_t i = 0; i < v.data.size(); ++i)
            if (metal_mask.data[i]) v.data[i] = metal_rec.rho;
        return v;
      },
      store_vol);

  MarResult out;
  out.final_volume = std::move(final_vol);
  out.transform = reg.transform;
  out.registration_objective = reg.objective;
  out.metal_clusters = metal_rec.clusters;
  out.rho = metal_rec.rho;
  {
    std::ostringstream os;
    os.precision(17);
    os << "status: ok\n";
    os << "transform_t: " << reg.transform.t.x << " " << reg.transform.t.y
       << " " << reg.transform.t.z << "\n";
    os << "transform_r: " << reg.transform.r.x << " " << reg.transform.r.y
       << " " << reg.transform.r.z << "\n";
    os << "registration_objective: " << reg.objective << "\n";
    os << "metal_clusters: " << metal_rec.clusters << "\n";
    os << "rho: " << metal_rec.rho << "\n";
    os << "shadow_pixels: " << shadow.count() << "\n";
    os << "config_begin\n" << cfg.to_text() << "config_end\n";
    out.report = os.str();
  }
  std::ofstream rep(dir / "report.txt");
  if (!rep) throw std::runtime_error("cannot write report");
  rep << out.report;
  return out;
}

// 8-bit binary portable graymap slices with linear windowing: lo maps to
// black, hi to white, values outside clamp.
inline std::vector<std::filesystem::path> export_slices(
    const Volume3D& vol, int axis, const std::vector<int>& indices,
    double lo, double hi, const std::filesystem::path& dir,
    const std::string& prefix = "slice") {
  if (axis < 0 || axis > 2)
    throw std::invalid_argument("export_slices: axis must be 0, 1 or 2");
  if (!(lo < hi))
    throw std::invalid_argument("export_slices: need lo < hi");
  for (int idx : indices)
    if (idx < 0 || idx >= vol.dims[axis])
      throw std::invalid_argument("export_slices: slice index out of bounds");
  std::filesystem::create_directories(dir);
  // in-plane axes, u fastest
  int ua = axis == 0 ? 1 : 0;
  int va = axis == 2 ? 1 : 2;
  const double scale = 255.0 / (hi - lo);
  std::vector<std::filesystem::path> out;
  for (int idx : indices) {
    std::ostringstream name;
    name << prefix << "_a" << axis << "_" << std::setw(4)
         << std::setfill('0') << idx << ".pgm";
    std::filesystem::path path = dir / name.str();
    std::ofstream f(path, std::ios::binary);
    if (!f)
      throw std::runtime_error("cannot open for write: " + path.string());
    f << "P5\n" << vol.dims[ua] << " " << vol.dims[va] << "\n255\n";
    std::vector<unsigned char> row(std::size_t(vol.dims[ua]));
    for (int vv = 0; vv < vol.dims[va]; ++vv) {
      for (int uu = 0; uu < vol.dims[ua]; ++uu) {
        int ijk[3];
        ijk[axis] = idx;
        ijk[ua] = uu;
        ijk[va] = vv;
        double x = (vol.at(ijk[0], ijk[1], ijk[2]) - lo) * scale;
        row[std::size_t(uu)] =
            (unsigned char)(std::lround(std::clamp(x, 0.0, 255.0)));
      }
      f.write(reinterpret_cast<const char*>(row.data()),
              std::streamsize(row.size()));
    }
    out.push_back(path);
  }
  return out;
}

}  // namespace raymar
