// Command-line front end: one subcommand per pipeline stage plus the full
// chain. Options mirror config keys; a flag given on the command line
// overrides the same key from the config file.

#include "raymar/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

using namespace raymar;

namespace {

// Options shared by every subcommand. Flags are folded into the config map
// after parsing, so they override file-provided keys.
struct Common {
  std::string config_path;
  std::vector<std::string> sets;
  int threads = 0;

  void attach(CLI::App* cmd) {
    cmd->add_option("-c,--config", config_path, "config file (key = value)");
    cmd->add_option("--set", sets, "override a config key (key=value)")
        ->type_name("KEY=VALUE");
    cmd->add_option("--threads", threads, "cap worker threads");
  }

  ConfigMap map() const {
    ConfigMap m;
    if (!config_path.empty()) m = ConfigMap::parse_file(config_path);
    for (const auto& kv : sets) {
      auto eq = kv.find('=');
      if (eq == std::string::npos)
        throw std::invalid_argument("--set expects key=value, got: " + kv);
      m.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (threads > 0) set_max_threads(threads);
    return m;
  }
};

// Registers a flag that, when given, overrides `key` in the config map.
struct FlagSet {
  std::vector<std::pair<CLI::Option*, std::pair<std::string, std::string*>>>
      bound;
  std::vector<std::unique_ptr<std::string>> storage;

  void add(CLI::App* cmd, const std::string& flag, const std::string& key,
           const std::string& desc) {
    storage.push_back(std::make_unique<std::string>());
    auto* slot = storage.back().get();
    auto* opt = cmd->add_option(flag, *slot, desc);
    bound.push_back({opt, {key, slot}});
  }

  void apply(ConfigMap& m) const {
    for (const auto& [opt, kv] : bound)
      if (opt->count() > 0) m.set(kv.first, *kv.second);
  }
};

BinaryMask3D labels_to_mask(const LabelVolume& lab, Material mat) {
  BinaryMask3D m;
  m.dims = lab.dims;
  m.spacing = lab.spacing;
  m.origin = lab.origin;
  m.data.assign(lab.labels.size(), 0);
  for (std::size_t i = 0; i < lab.labels.size(); ++i)
    m.data[i] = lab.labels[i] == std::uint8_t(mat);
  return m;
}

int run(int argc, char** argv) {
  CLI::App app{"cone-beam CT metal artifact reduction toolkit"};
  app.require_subcommand(1);

  // ---- simulate -----------------------------------------------------------
  auto* sim = app.add_subcommand(
      "simulate", "rasterize a phantom and acquire a polychromatic sinogram");
  Common sim_common;
  sim_common.attach(sim);
  FlagSet sim_flags;
  sim_flags.add(sim, "--photons", "sim.photons",
                "photon budget per ray (0 = noiseless)");
  sim_flags.add(sim, "--seed", "seed", "random seed");
  std::string sim_out;
  sim->add_option("-o,--output", sim_out, "output directory")->required();

  // ---- reconstruct --------------------------------------------------------
  auto* rec = app.add_subcommand("reconstruct",
                                 "filtered backprojection of a sinogram");
  Common rec_common;
  rec_common.attach(rec);
  FlagSet rec_flags;
  rec_flags.add(rec, "--dims", "recon.dims", "grid size, e.g. '128 128 128'");
  rec_flags.add(rec, "--spacing", "recon.spacing", "voxel size in mm");
  rec_flags.add(rec, "--window", "recon.window", "ramlak or shepplogan");
  std::string rec_in, rec_out;
  rec->add_option("-s,--sinogram", rec_in, "input sinogram")->required();
  rec->add_option("-o,--output", rec_out, "output volume file")->required();

  // ---- register -----------------------------------------------------------
  auto* reg = app.add_subcommand(
      "register", "rigidly align a prior volume to an uncorrected volume");
  Common reg_common;
  reg_common.attach(reg);
  FlagSet reg_flags;
  reg_flags.add(reg, "--particles", "registration.particles", "swarm size");
  reg_flags.add(reg, "--generations", "registration.generations",
                "swarm generations");
  reg_flags.add(reg, "--bound-t", "registration.bound_t",
                "translation bound in mm");
  reg_flags.add(reg, "--bound-r", "registration.bound_r",
                "rotation bound in degrees");
  reg_flags.add(reg, "--penalty", "registration.penalty_factor",
                "bone-mask disagreement weight");
  reg_flags.add(reg, "--stride", "registration.stride", "voxel stride");
  reg_flags.add(reg, "--seed", "seed", "random seed");
  std::string reg_unc, reg_prior, reg_out, reg_aligned;
  reg->add_option("--unc", reg_unc, "uncorrected volume")->required();
  reg->add_option("--prior", reg_prior, "prior volume")->required();
  reg->add_option("-o,--output", reg_out, "transform output file")->required();
  reg->add_option("--aligned", reg_aligned,
                  "also write the aligned prior volume here");

  // ---- segment-metal ------------------------------------------------------
  auto* seg = app.add_subcommand("segment-metal",
                                 "threshold and cluster the metal voxels");
  Common seg_common;
  seg_common.attach(seg);
  FlagSet seg_flags;
  seg_flags.add(seg, "--eps", "metal.eps", "clustering radius in mm");
  seg_flags.add(seg, "--min-pts", "metal.min_pts", "density threshold");
  seg_flags.add(seg, "--min-cluster", "metal.min_cluster_voxels",
                "cluster size floor");
  seg_flags.add(seg, "--expected", "metal.expected_clusters",
                "expected implant count");
  seg_flags.add(seg, "--rho", "metal.rho", "metal attenuation override");
  std::string seg_in, seg_out;
  seg->add_option("-v,--volume", seg_in, "input volume")->required();
  seg->add_option("-o,--output", seg_out, "output directory")->required();

  // ---- correct ------------------------------------------------------------
  auto* cor = app.add_subcommand(
      "correct", "rebuild shadowed sinogram pixels from blended profiles");
  Common cor_common;
  cor_common.attach(cor);
  FlagSet cor_flags;
  cor_flags.add(cor, "--h-scale", "correction.h", "blend length scale in mm");
  cor_flags.add(cor, "--prior-trust", "correction.prior_trust",
                "prior weight at the metal boundary");
  cor_flags.add(cor, "--step", "recon.step", "ray sampling step in mm");
  std::string cor_sino, cor_unc, cor_prior, cor_metal, cor_out, cor_shadow;
  cor->add_option("-s,--sinogram", cor_sino, "measured sinogram")->required();
  cor->add_option("--unc", cor_unc, "uncorrected volume")->required();
  cor->add_option("--prior-aligned", cor_prior, "aligned prior volume")
      ->required();
  cor->add_option("--metal-only", cor_metal, "metal-only volume")->required();
  cor->add_option("-o,--output", cor_out, "corrected sinogram")->required();
  cor->add_option("--shadow-out", cor_shadow,
                  "also write the shadow mask here");

  // ---- inpaint ------------------------------------------------------------
  auto* inp = app.add_subcommand(
      "inpaint", "blend corrected data into the shadow seamlessly");
  Common inp_common;
  inp_common.attach(inp);
  FlagSet inp_flags;
  inp_flags.add(inp, "--tolerance", "inpaint.tolerance",
                "relative residual target");
  inp_flags.add(inp, "--max-iterations", "inpaint.max_iterations",
                "solver iteration cap per view");
  std::string inp_sino, inp_corr, inp_shadow, inp_out;
  inp->add_option("-s,--sinogram", inp_sino, "measured sinogram")->required();
  inp->add_option("--corrected", inp_corr, "corrected sinogram")->required();
  inp->add_option("--shadow", inp_shadow, "shadow mask sinogram")->required();
  inp->add_option("-o,--output", inp_out, "in-painted sinogram")->required();

  // ---- evaluate -----------------------------------------------------------
  auto* eva = app.add_subcommand("evaluate",
                                 "metrics of a volume against ground truth");
  Common eva_common;
  eva_common.attach(eva);
  std::string eva_result, eva_truth, eva_metal, eva_metal_result, eva_out;
  double eva_radius = 20.0;
  double eva_margin = -1.0;
  eva->add_option("--result", eva_result, "volume under test")->required();
  eva->add_option("--truth", eva_truth, "ground-truth volume")->required();
  eva->add_option("--metal", eva_metal, "ground-truth metal mask")->required();
  eva->add_option("--metal-result", eva_metal_result,
                  "segmented metal mask to score with Dice");
  eva->add_option("--band-radius", eva_radius, "artifact band radius in mm");
  eva->add_option("--edge-margin", eva_margin,
                  "metal edge shell excluded from the band in mm; negative "
                  "picks 2x the largest voxel spacing");
  eva->add_option("-o,--output", eva_out, "write the report here too");

  // ---- mar ----------------------------------------------------------------
  auto* mar = app.add_subcommand("mar", "run the full correction chain");
  Common mar_common;
  mar_common.attach(mar);
  FlagSet mar_flags;
  mar_flags.add(mar, "--prior", "input.prior_volume", "prior volume");
  mar_flags.add(mar, "--sinogram", "input.sinogram", "measured sinogram");
  mar_flags.add(mar, "--output", "output.dir", "artifact directory");
  mar_flags.add(mar, "--seed", "seed", "random seed");
  mar_flags.add(mar, "--reinsert-metal", "final.reinsert_metal",
                "paste metal voxels at rho into the final volume");

  // ---- export -------------------------------------------------------------
  auto* exp = app.add_subcommand("export",
                                 "windowed 8-bit graymap slices of a volume");
  Common exp_common;
  exp_common.attach(exp);
  std::string exp_vol, exp_axis = "z", exp_out, exp_prefix = "slice";
  std::vector<int> exp_indices;
  double exp_lo = 0, exp_hi = 0;
  exp->add_option("-v,--volume", exp_vol, "input volume")->required();
  exp->add_option("--axis", exp_axis, "slice axis: x, y or z");
  exp->add_option("--index", exp_indices, "slice indices (repeatable)")
      ->required();
  exp->add_option("--lo", exp_lo, "window low (black)")->required();
  exp->add_option("--hi", exp_hi, "window high (white)")->required();
  exp->add_option("-o,--output", exp_out, "output directory")->required();
  exp->add_option("--prefix", exp_prefix, "file name prefix");

  CLI11_PARSE(app, argc, argv);

  if (sim->parsed()) {
    auto m = sim_common.map();
    sim_flags.apply(m);
    auto cfg = PipelineConfig::from_map(m);
    if (cfg.phantom_dims[0] < 1 || cfg.primitives.empty())
      throw std::invalid_argument(
          "simulate: config needs phantom.dims and phantom.primitive lines");
    auto model = MaterialSpectrumModel::default_model();
    PhantomSpec spec{cfg.phantom_dims, cfg.phantom_spacing, cfg.primitives};
    auto phantom = build_phantom(spec, model, cfg.ref_energy);
    auto geom = cfg.geometry();
    double step = cfg.sim_step > 0 ? cfg.sim_step
                                   : 0.5 * phantom.volume.min_spacing();
    std::optional<double> photons;
    if (cfg.sim_photons > 0) photons = cfg.sim_photons;
    auto sino = simulate_polychromatic(phantom.labels, model, geom, step,
                                       photons, cfg.seed);
    std::filesystem::path dir(sim_out);
    std::filesystem::create_directories(dir);
    write_volume(dir / "truth.vol", phantom.volume);
    write_mask(dir / "metal_truth.mask",
               labels_to_mask(phantom.labels, Material::metal));
    write_sinogram(dir / "sinogram.sino", sino);
    std::cout << "wrote " << (dir / "sinogram.sino").string() << "\n";
    return 0;
  }

  if (rec->parsed()) {
    auto m = rec_common.map();
    rec_flags.apply(m);
    auto cfg = PipelineConfig::from_map(m);
    auto sino = read_sinogram(rec_in);
    auto grid = Volume3D::centered(cfg.recon_dims, cfg.recon_spacing);
    write_volume(rec_out, fdk_reconstruct(sino, grid, cfg.window));
    std::cout << "wrote " << rec_out << "\n";
    return 0;
  }

  if (reg->parsed()) {
    auto m = reg_common.map();
    reg_flags.apply(m);
    auto cfg = PipelineConfig::from_map(m);
    auto unc = read_volume(reg_unc);
    auto prior = read_volume(reg_prior);
    auto unc_mask = extract_bone_mask(unc);
    auto pri_mask = extract_bone_mask(prior);
    auto result = register_volumes(unc, prior, unc_mask, pri_mask,
                                   cfg.penalty_factor, cfg.swarm,
                                   cfg.reg_stride, cfg.reg_polish);
    detail::write_transform(reg_out,
                            {result.transform, result.objective_value});
    if (!reg_aligned.empty())
      write_volume(reg_aligned, resample_rigid(prior, result.transform, unc));
    std::cout << "objective: " << result.objective_value << "\n";
    return 0;
  }

  if (seg->parsed()) {
    auto m = seg_common.map();
    seg_flags.apply(m);
    auto cfg = PipelineConfig::from_map(m);
    auto vol = read_volume(seg_in);
    auto result = segment_metal(vol, cfg.dbscan);
    double rho = cfg.rho_override > 0
                     ? cfg.rho_override
                     : estimate_rho(vol, result.mask, cfg.bone_mu);
    std::filesystem::path dir(seg_out);
    std::filesystem::create_directories(dir);
    write_mask(dir / "metal.mask", result.mask);
    detail::write_metal_record(dir / "metal.txt",
                               {result.cluster_count, rho});
    write_volume(dir / "metal_only.vol",
                 metal_only_volume(vol, result.mask, rho));
    std::cout << "metal_clusters: " << result.cluster_count << "\n"
              << "rho: " << rho << "\n";
    return 0;
  }

  if (cor->parsed()) {
    auto m = cor_common.map();
    cor_flags.apply(m);
    auto cfg = PipelineConfig::from_map(m);
    auto measured = read_sinogram(cor_sino);
    auto unc = read_volume(cor_unc);
    auto prior = read_volume(cor_prior);
    auto metal = read_volume(cor_metal);
    double step = cfg.step > 0 ? cfg.step : default_step(unc);
    double rho = cfg.rho_override;
    if (rho <= 0)
      for (double v : metal.data) rho = std::max(rho, v);
    if (rho <= 0)
      throw std::invalid_argument("correct: metal-only volume is empty");
    auto shadow = metal_shadow(metal, measured.geom, step);
    CorrectionParams p{rho, cfg.h, cfg.prior_trust};
    auto corrected = build_corrected_sinogram(measured, unc, prior, metal,
                                              shadow, measured.geom, step, p);
    write_sinogram(cor_out, corrected);
    if (!cor_shadow.empty()) write_shadow(cor_shadow, shadow);
    std::cout << "shadow_pixels: " << shadow.count() << "\n";
    return 0;
  }

  if (inp->parsed()) {
    auto m = inp_common.map();
    inp_flags.apply(m);
    auto cfg = PipelineConfig::from_map(m);
    auto measured = read_sinogram(inp_sino);
    auto corrected = read_sinogram(inp_corr);
    auto shadow = read_shadow(inp_shadow);
    auto out = inpaint_sinogram(measured, corrected, shadow,
                                cfg.inpaint_tolerance,
                                cfg.inpaint_max_iterations);
    write_sinogram(inp_out, out);
    std::cout << "wrote " << inp_out << "\n";
    return 0;
  }

  if (eva->parsed()) {
    eva_common.map();
    auto result = read_volume(eva_result);
    auto truth = read_volume(eva_truth);
    auto metal = read_mask(eva_metal);
    auto report =
        evaluate_against_truth(result, truth, metal,
                               {eva_radius, eva_margin});
    if (!eva_metal_result.empty())
      report.dice_metal = dice(metal, read_mask(eva_metal_result));
    std::cout << report.to_text();
    if (!eva_out.empty()) {
      std::ofstream f(eva_out);
      if (!f) throw std::runtime_error("cannot write: " + eva_out);
      f << report.to_text();
    }
    return 0;
  }

  if (mar->parsed()) {
    auto m = mar_common.map();
    mar_flags.apply(m);
    auto result = run_mar(PipelineConfig::from_map(m));
    std::cout << result.report;
    return 0;
  }

  if (exp->parsed()) {
    exp_common.map();
    auto vol = read_volume(exp_vol);
    int axis;
    if (exp_axis == "x" || exp_axis == "0") axis = 0;
    else if (exp_axis == "y" || exp_axis == "1") axis = 1;
    else if (exp_axis == "z" || exp_axis == "2") axis = 2;
    else throw std::invalid_argument("export: axis must be x, y or z");
    auto files = export_slices(vol, axis, exp_indices, exp_lo, exp_hi,
                               exp_out, exp_prefix);
    for (const auto& f : files) std::cout << "wrote " << f.string() << "\n";
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::runtime_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
