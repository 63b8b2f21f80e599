// mtvnet: data generation, training, evaluation, attribution and memory
// profiling from the command line.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mtvnet/analysis.hpp"
#include "mtvnet/checkpoint.hpp"
#include "mtvnet/config.hpp"
#include "mtvnet/evaluator.hpp"
#include "mtvnet/io_util.hpp"
#include "mtvnet/plot.hpp"
#include "mtvnet/sr_model.hpp"
#include "mtvnet/synthetic.hpp"
#include "mtvnet/trainer.hpp"
#include "mtvnet/volume.hpp"

namespace fs = std::filesystem;
using namespace mtvnet;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

fs::path data_root(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("MTVNET_DATA_DIR"); env != nullptr && *env != '\0') return env;
  return "data";
}

fs::path hr_dir(const fs::path& root) { return root / "hr"; }
fs::path lr_dir(const fs::path& root, int scale) { return root / ("lr_x" + std::to_string(scale)); }

std::vector<fs::path> volume_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error("no volume store at " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".mtvvol") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  if (out.empty()) throw std::runtime_error("volume store " + dir.string() + " is empty");
  return out;
}

// HR volumes paired with their stored LR counterparts, or degraded on the fly.
std::vector<VolumePair> load_pairs(const fs::path& root, const ExperimentConfig& cfg) {
  std::vector<VolumePair> pairs;
  const auto lrd = lr_dir(root, cfg.model.scale);
  for (const auto& p : volume_files(hr_dir(root))) {
    auto hr = read_volume(p);
    const auto lr_path = lrd / p.filename();
    if (fs::exists(lr_path)) {
      pairs.push_back({hr, read_volume(lr_path)});
    } else {
      pairs.push_back(make_training_pair(hr, cfg));
    }
  }
  return pairs;
}

ExperimentConfig resolve_config(const std::string& config_path, const std::string& preset_name,
                                const std::vector<std::string>& sets) {
  if (!config_path.empty() && !preset_name.empty()) throw UsageError("--config and --preset are mutually exclusive");
  ExperimentConfig cfg;
  if (!config_path.empty()) {
    cfg = load_config(config_path);
  } else {
    cfg = preset(preset_name.empty() ? "desk" : preset_name);
  }
  cfg = apply_overrides(cfg, sets);
  validate(cfg);
  return cfg;
}

void summary(const std::string& cmd, const std::map<std::string, std::string>& fields) {
  std::cout << "mtvnet " << cmd;
  for (const auto& [k, v] : fields) std::cout << ' ' << k << '=' << v;
  std::cout << '\n';
}

// ------------------------------------------------------------ make-data

struct MakeDataArgs {
  std::string generator = "ellipsoid";
  int count = 1;
  int edge = 64;
  std::optional<int> scale;
  std::uint64_t seed = 0;
  double cutoff = 4.0;
  bool no_blur = false;
  std::string out;
};

int run_make_data(const MakeDataArgs& a) {
  if (!a.scale) throw UsageError("make-data: --scale is required");
  const int s = *a.scale;
  if (s < 1 || s > 4) throw UsageError("make-data: --scale must be 1..4");
  if (a.edge % s != 0) throw UsageError("make-data: --edge must be divisible by --scale");
  const auto root = data_root(a.out);
  GeneratorSpec spec{a.generator, a.count, a.edge, a.seed, a.cutoff};
  auto corpus = make_synthetic_corpus(spec);
  fs::create_directories(hr_dir(root));
  fs::create_directories(lr_dir(root, s));
  for (const auto& hr : corpus) {
    write_volume(hr, hr_dir(root) / (hr.name + ".mtvvol"));
    write_volume(degrade(hr, s, !a.no_blur), lr_dir(root, s) / (hr.name + ".mtvvol"));
  }
  summary("make-data", {{"count", std::to_string(corpus.size())}, {"root", root.string()}});
  return 0;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string config, preset_name, data, out = "runs/default";
  std::vector<std::string> sets;
  std::optional<std::int64_t> steps;
  std::optional<std::uint64_t> seed;
  bool resume = false;
  bool quiet = false;
  int log_every = 50;
};

int run_train(const TrainArgs& a) {
  auto sets = a.sets;
  if (a.steps) sets.push_back("train.total_iters=" + std::to_string(*a.steps));
  if (a.seed) sets.push_back("train.seed=" + std::to_string(*a.seed));
  auto cfg = resolve_config(a.config, a.preset_name, sets);
  auto pairs = load_pairs(data_root(a.data), cfg);
  const fs::path out = a.out;
  Trainer trainer(cfg, std::move(pairs));
  trainer.set_output_dir(out);
  if (a.resume) {
    const auto last = out / "last.mtvckpt";
    if (!fs::exists(last)) throw std::runtime_error("--resume: no checkpoint at " + last.string());
    auto ck = load_checkpoint(last);
    // Only the run length may change on resume.
    auto stored = parse_config(ck.config_text);
    stored.train.total_iters = cfg.train.total_iters;
    stored.train.milestones = cfg.train.milestones;
    if (to_text(stored) != to_text(cfg)) throw std::runtime_error("--resume: checkpoint was trained with another config");
    trainer.restore(ck);
  }
  fs::create_directories(out);
  save_config(cfg, out / "config.cfg");
  trainer.run(-1, [&](const LossRecord& r) {
    if (!a.quiet && a.log_every > 0 && (r.iter % a.log_every == 0 || r.iter == 1)) {
      std::cerr << "iter " << r.iter << " loss " << r.loss << " lr " << r.lr << '\n';
    }
  });
  summary("train", {{"iterations", std::to_string(trainer.iteration())},
                    {"final_loss", trainer.trace().empty() ? "nan" : format_double(trainer.trace().back().loss)},
                    {"checkpoint", (out / "last.mtvckpt").string()}});
  return 0;
}

// ----------------------------------------------------------------- eval

struct EvalArgs {
  std::string model = "mtvnet";
  std::string ckpt, run = "runs/default", data, out = "eval";
  std::string config, preset_name;
  std::vector<std::string> sets;
  int scale = 0;
  bool save_sr = false;
};

fs::path resolve_ckpt(const std::string& ckpt, const std::string& run) {
  if (ckpt.empty() || ckpt == "last") return fs::path(run) / "last.mtvckpt";
  return ckpt;
}

std::unique_ptr<SrModel> load_sr_model(const std::string& kind, const std::string& ckpt, const std::string& run,
                                       const ExperimentConfig& base, int scale_flag, ExperimentConfig* used) {
  if (kind == "trilinear") {
    ExperimentConfig cfg = base;
    if (scale_flag > 0) cfg.model.scale = scale_flag;
    if (used) *used = cfg;
    return std::make_unique<TrilinearUpsampler>(cfg.model.scale, cfg.model.finest().context_extent);
  }
  if (kind != "mtvnet") throw UsageError("--model must be mtvnet or trilinear");
  const auto path = resolve_ckpt(ckpt, run);
  if (!fs::exists(path)) throw std::runtime_error("checkpoint not found: " + path.string());
  auto ck = load_checkpoint(path);
  auto cfg = parse_config(ck.config_text);
  validate(cfg);
  Mtvnet net(cfg.model);
  load_module_state(*net, ck);
  if (used) *used = cfg;
  return std::make_unique<MtvnetSrModel>(net);
}

int run_eval(const EvalArgs& a) {
  auto base = resolve_config(a.config, a.preset_name, a.sets);
  ExperimentConfig cfg;
  auto model = load_sr_model(a.model, a.ckpt, a.run, base, a.scale, &cfg);
  auto pairs = load_pairs(data_root(a.data), cfg);
  std::vector<Volume> preds;
  auto report = evaluate(pairs, *model, {}, a.save_sr ? &preds : nullptr);
  const fs::path out = a.out;
  fs::create_directories(out);
  atomic_write_text(out / "metrics.csv", report.to_csv());
  atomic_write_text(out / "metrics.txt", report.to_text());
  for (const auto& v : report.volumes)
    if (v.skipped) std::cerr << "warning: " << v.name << " skipped (no slice with >= 25% foreground)\n";
  for (const auto& p : preds) write_volume(p, out / (p.name + "_sr.mtvvol"));
  std::cout << report.to_text();
  summary("eval", {{"model", a.model},
                   {"psnr", format_double(report.mean_psnr)},
                   {"ssim", format_double(report.mean_ssim)},
                   {"nrmse", format_double(report.mean_nrmse)},
                   {"volumes", std::to_string(report.volumes_used)}});
  return report.volumes_used > 0 ? 0 : kExitRuntime;
}

// ------------------------------------------------------------------ lam

struct LamArgs {
  std::string model = "mtvnet";
  std::string ckpt, run = "runs/default", data, out = "lam", volume;
  std::string config, preset_name;
  std::vector<std::string> sets;
  std::vector<std::int64_t> center;
  std::vector<std::int64_t> box;
  int steps = 64;
  double sigma = 4.0;
  int scale = 0;
};

int run_lam(const LamArgs& a) {
  auto base = resolve_config(a.config, a.preset_name, a.sets);
  ExperimentConfig cfg;
  auto model = load_sr_model(a.model, a.ckpt, a.run, base, a.scale, &cfg);
  const auto extents = model->context_extents();
  const int s = model->scale();

  fs::path vol_path = a.volume;
  if (vol_path.empty()) {
    vol_path = volume_files(lr_dir(data_root(a.data), s)).front();
  } else if (!fs::exists(vol_path)) {
    vol_path = lr_dir(data_root(a.data), s) / (a.volume + ".mtvvol");
  }
  auto lr = read_volume(vol_path);
  const auto dims = lr.dims();
  Index3 center{dims[0] / 2, dims[1] / 2, dims[2] / 2};
  if (!a.center.empty()) {
    if (a.center.size() != 3) throw UsageError("--center takes three integers");
    center = {a.center[0], a.center[1], a.center[2]};
  }
  const std::int64_t out_edge = static_cast<std::int64_t>(s) * extents.back();
  Box box{{out_edge / 2 - 2, out_edge / 2 - 2, out_edge / 2 - 2}, {4, 4, 4}};
  if (!a.box.empty()) {
    if (a.box.size() != 6) throw UsageError("--box takes six integers: origin then extent");
    box = {{a.box[0], a.box[1], a.box[2]}, {a.box[3], a.box[4], a.box[5]}};
  }
  auto patch = extract_nested(lr, nullptr, {extents.front()}, s, center, model->pad_mode());

  ContextModel fn;
  if (auto* m = dynamic_cast<MtvnetSrModel*>(model.get())) {
    fn = as_context_model(m->net());
  } else {
    auto* tri = model.get();
    fn = [tri](const std::vector<torch::Tensor>& ctx) { return tri->predict(ctx); };
  }
  auto map = lam_3d(fn, patch.lr_contexts.front(), extents, s, box, {a.steps, a.sigma});

  const fs::path out = a.out;
  fs::create_directories(out);
  Volume attr;
  attr.data = map.attribution.to(torch::kFloat32).unsqueeze(0).contiguous();
  attr.name = lr.name + "_lam";
  write_volume(attr, out / "attribution.mtvvol");

  std::string csv = "row,col,value\n";
  auto sa = map.slice_average.contiguous();
  auto acc = sa.accessor<double, 2>();
  for (std::int64_t r = 0; r < sa.size(0); ++r)
    for (std::int64_t c = 0; c < sa.size(1); ++c)
      csv += std::to_string(r) + ',' + std::to_string(c) + ',' + format_double(acc[r][c]) + '\n';
  atomic_write_text(out / "slice_average.csv", csv);

  const std::int64_t off = (extents.front() - extents.back()) / 2;
  auto lo = [&](int ax) { return static_cast<int>(off + box.origin[ax] / s); };
  auto hi = [&](int ax) { return static_cast<int>(off + (box.origin[ax] + box.extent[ax] + s - 1) / s); };
  write_png(heatmap(map.slice_average, lo(0), hi(0), lo(1), hi(1)), out / "lam.png");

  const std::string text = "di," + format_double(map.di) + "\nf_input," + format_double(map.f_input) +
                           "\nf_baseline," + format_double(map.f_baseline) + "\nattribution_sum," +
                           format_double(map.signed_attribution.sum().item<double>()) + "\n";
  atomic_write_text(out / "lam_summary.csv", text);
  summary("lam", {{"di", format_double(map.di)}, {"out", out.string()}});
  return 0;
}

// -------------------------------------------------------------- profile

struct ProfileArgs {
  std::vector<std::string> presets;
  std::vector<int> resolutions{16, 32, 48, 64, 128};
  std::vector<std::string> sets;
  bool measure = false;
  std::string out = "profile";
};

int run_profile(const ProfileArgs& a) {
  auto presets = a.presets.empty() ? std::vector<std::string>{"L3"} : a.presets;
  std::vector<ProfileRow> rows;
  std::vector<Series> series;
  for (const auto& name : presets) {
    auto cfg = apply_overrides(preset(name), a.sets);
    auto part = profile_memory(cfg.model, name, a.resolutions, {a.measure, 1});
    Series s{name, {}, {}};
    for (const auto& r : part) {
      if (!r.valid) {
        std::cerr << "note: " << name << " at " << r.resolution << "^3 is not a valid geometry: " << r.error << '\n';
        continue;
      }
      s.x.push_back(r.resolution);
      s.y.push_back(static_cast<double>(r.activation_elements) * 4.0 / (1024.0 * 1024.0));
    }
    series.push_back(s);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  const fs::path out = a.out;
  fs::create_directories(out);
  atomic_write_text(out / "profile.csv", profile_csv(rows));
  write_png(line_chart(series, "activation memory vs input size", "outermost LR edge (voxels)",
                       "float32 activations (MiB)", true),
            out / "profile.png");
  summary("profile", {{"rows", std::to_string(rows.size())}, {"out", out.string()}});
  return 0;
}

void add_config_flags(CLI::App* sub, std::string& config, std::string& preset_name, std::vector<std::string>& sets) {
  sub->add_option("--config", config, "Config file (key = value lines)");
  sub->add_option("--preset", preset_name, "Named preset: desk, desk2, L1, L2, L3");
  sub->add_option("--set", sets, "Override a config key, e.g. --set model.heads=2")->allow_extra_args(false);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-scale volumetric super-resolution: data, training, evaluation and analysis"};
  app.require_subcommand(1);

  MakeDataArgs md;
  auto* c_md = app.add_subcommand("make-data", "Generate a synthetic HR corpus and its degraded LR store");
  c_md->add_option("--generator", md.generator, "ellipsoid, noise or trabecular")
      ->check(CLI::IsMember({"ellipsoid", "noise", "trabecular"}));
  c_md->add_option("--count", md.count, "Number of volumes")->check(CLI::PositiveNumber);
  c_md->add_option("--edge", md.edge, "HR edge length in voxels")->check(CLI::PositiveNumber);
  c_md->add_option("--scale", md.scale, "Downsampling factor (required)");
  c_md->add_option("--seed", md.seed, "Generator seed");
  c_md->add_option("--cutoff", md.cutoff, "Band limit for the noise generator");
  c_md->add_flag("--no-blur", md.no_blur, "Skip the Gaussian blur before downsampling");
  c_md->add_option("--out", md.out, "Store root (default: $MTVNET_DATA_DIR or ./data)");

  TrainArgs tr;
  auto* c_tr = app.add_subcommand("train", "Train a network on a volume store");
  add_config_flags(c_tr, tr.config, tr.preset_name, tr.sets);
  c_tr->add_option("--steps", tr.steps, "Total iterations (overrides train.total_iters)");
  c_tr->add_option("--seed", tr.seed, "Seed (overrides train.seed)");
  c_tr->add_option("--data", tr.data, "Store root (default: $MTVNET_DATA_DIR or ./data)");
  c_tr->add_option("--out", tr.out, "Run directory for checkpoints and loss.csv");
  c_tr->add_flag("--resume", tr.resume, "Continue from <out>/last.mtvckpt");
  c_tr->add_option("--log-every", tr.log_every, "Progress line interval (0 disables)");
  c_tr->add_flag("--quiet", tr.quiet, "No progress output");

  EvalArgs ev;
  auto* c_ev = app.add_subcommand("eval", "Tiled reconstruction and slice-wise metrics");
  c_ev->add_option("--model", ev.model, "mtvnet or trilinear")->check(CLI::IsMember({"mtvnet", "trilinear"}));
  c_ev->add_option("--ckpt", ev.ckpt, "Checkpoint path, or 'last' for <run>/last.mtvckpt");
  c_ev->add_option("--run", ev.run, "Run directory used by --ckpt last");
  c_ev->add_option("--data", ev.data, "Store root (default: $MTVNET_DATA_DIR or ./data)");
  c_ev->add_option("--out", ev.out, "Output directory for metrics.csv / metrics.txt");
  c_ev->add_option("--scale", ev.scale, "Scale for the trilinear baseline (default: from config)");
  c_ev->add_flag("--save-sr", ev.save_sr, "Also write reconstructed volumes");
  add_config_flags(c_ev, ev.config, ev.preset_name, ev.sets);

  LamArgs lm;
  auto* c_lam = app.add_subcommand("lam", "Integrated-gradient attribution map and diffusion index");
  c_lam->add_option("--model", lm.model, "mtvnet or trilinear")->check(CLI::IsMember({"mtvnet", "trilinear"}));
  c_lam->add_option("--ckpt", lm.ckpt, "Checkpoint path, or 'last'");
  c_lam->add_option("--run", lm.run, "Run directory used by --ckpt last");
  c_lam->add_option("--data", lm.data, "Store root (default: $MTVNET_DATA_DIR or ./data)");
  c_lam->add_option("--volume", lm.volume, "LR volume file or name in the store (default: first)");
  c_lam->add_option("--center", lm.center, "LR centre voxel: three integers")->expected(3);
  c_lam->add_option("--box", lm.box, "Prediction box in SR voxels: ox oy oz ex ey ez")->expected(6);
  c_lam->add_option("--steps", lm.steps, "Path steps K (>= 8)");
  c_lam->add_option("--sigma", lm.sigma, "Baseline blur sigma in LR voxels");
  c_lam->add_option("--scale", lm.scale, "Scale for the trilinear baseline");
  c_lam->add_option("--out", lm.out, "Output directory");
  add_config_flags(c_lam, lm.config, lm.preset_name, lm.sets);

  ProfileArgs pf;
  auto* c_pf = app.add_subcommand("profile", "Token, parameter and activation scaling table");
  c_pf->add_option("--preset", pf.presets, "Preset(s) to profile (repeatable, default L3)");
  c_pf->add_option("--resolutions", pf.resolutions, "Outermost LR edges")->delimiter(',');
  c_pf->add_option("--set", pf.sets, "Config override applied to every preset");
  c_pf->add_flag("--measure", pf.measure, "Also run an instrumented forward pass per row");
  c_pf->add_option("--out", pf.out, "Output directory");

  std::string cf_config, cf_preset;
  std::vector<std::string> cf_sets;
  auto* c_cf = app.add_subcommand("config", "Print a resolved configuration in file form");
  add_config_flags(c_cf, cf_config, cf_preset, cf_sets);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (c_md->parsed()) return run_make_data(md);
    if (c_tr->parsed()) return run_train(tr);
    if (c_ev->parsed()) return run_eval(ev);
    if (c_lam->parsed()) return run_lam(lm);
    if (c_pf->parsed()) return run_profile(pf);
    if (c_cf->parsed()) {
      std::cout << to_text(resolve_config(cf_config, cf_preset, cf_sets));
      return 0;
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
