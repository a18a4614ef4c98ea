#include "mkrecon/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "mkrecon/config.hpp"
#include "mkrecon/data.hpp"
#include "mkrecon/error.hpp"
#include "mkrecon/metrics.hpp"
#include "mkrecon/pipeline.hpp"
#include "mkrecon/rng.hpp"
#include "mkrecon/training.hpp"

namespace mkr::cli {

namespace {

namespace fs = std::filesystem;

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
  int gap = 0;
  std::vector<std::string> data;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* gap_opt = nullptr;
};

void add_common(CLI::App* cmd, Common& c, bool with_data) {
  cmd->add_option("--config", c.config, "JSON job configuration");
  c.seed_opt = cmd->add_option("--seed", c.seed, "job seed (overrides config)");
  cmd->add_option("--out", c.out, "output path");
  c.gap_opt = cmd->add_option("--gap", c.gap, "slice gap 2, 4 or 8 (overrides config)");
  if (with_data) cmd->add_option("--data", c.data, "volume files, directories or dir/*.ext patterns");
}

JobConfig resolve_config(const Common& c) {
  JobConfig cfg = c.config.empty() ? JobConfig{} : load_job_config(c.config);
  if (c.seed_opt->count() > 0) cfg.seed = c.seed;
  if (c.gap_opt->count() > 0) cfg.gap = c.gap;
  if (!c.data.empty()) cfg.data = c.data;
  cfg.validate();
  return cfg;
}

fs::path out_or(const Common& c, const JobConfig& cfg, const char* sub) {
  return c.out.empty() ? fs::path(cfg.output_dir) / sub : fs::path(c.out);
}

// File name without the volume extension (.raw, .nii, .nii.gz, .hdr, ...).
std::string volume_stem(const fs::path& p) {
  std::string name = p.filename().string();
  for (const char* ext : {".nii.gz", ".hdr.gz", ".raw", ".nii", ".hdr"}) {
    const std::string e(ext);
    if (name.size() > e.size() && name.compare(name.size() - e.size(), e.size(), e) == 0) {
      return name.substr(0, name.size() - e.size());
    }
  }
  return p.stem().string();
}

Volume load_prepared(const fs::path& p, const JobConfig& cfg) {
  return preprocess(load_volume(p), cfg.resize_h, cfg.resize_w);
}

struct Dataset {
  std::vector<std::string> ids;
  std::vector<Volume> volumes;
  std::vector<bool> is_val;
};

Dataset load_dataset(const JobConfig& cfg) {
  if (cfg.data.empty()) throw UsageError("no input data: set 'data' in the config or pass --data");
  Dataset ds;
  for (const auto& p : resolve_data(cfg.data)) {
    ds.ids.push_back(volume_stem(p));
    ds.volumes.push_back(load_prepared(p, cfg));
  }
  ds.is_val = validation_split(ds.ids);
  return ds;
}

std::vector<int> source_gaps(int gap) {
  std::vector<int> out;
  for (int s = gap; s >= 2; s /= 2) out.push_back(s);
  return out;
}

fs::path stage1_path(const fs::path& dir, int gap) {
  return dir / (gap == 0 ? std::string("stage1_shared.ckpt") : "stage1_gap" + std::to_string(gap) + ".ckpt");
}

ModelRegistry load_registry(const std::string& source, const JobConfig& cfg, int gap) {
  ModelRegistry reg;
  if (source == "zero-init") {
    // Zero output head: every level reduces to the slice average.
    const UNetConfig arch{cfg.stage1.levels, cfg.stage1.base_channels};
    reg.set_shared(init_slice_model(arch, cfg.seed.value_or(0)));
    return reg;
  }
  if (source.empty()) throw UsageError("no Stage-1 models: pass --models DIR (or zero-init)");
  const fs::path dir(source);
  if (fs::exists(stage1_path(dir, 0))) {
    reg.set_shared(slice_model_from(load_checkpoint(stage1_path(dir, 0))));
    return reg;
  }
  for (int s : source_gaps(gap)) {
    const fs::path p = stage1_path(dir, s);
    if (!fs::exists(p)) throw FormatError("missing Stage-1 checkpoint " + p.string());
    reg.set(s, slice_model_from(load_checkpoint(p)));
  }
  return reg;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

void write_epochs(const fs::path& path, const std::vector<EpochRecord>& epochs, const char* metric) {
  std::ostringstream os;
  os << "epoch," << metric << ",lr,improved\n";
  char buf[128];
  for (const auto& e : epochs) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%d\n", e.epoch, e.val_metric, e.lr, e.improved ? 1 : 0);
    os << buf;
  }
  write_text(path, os.str());
}

std::string log_text(const std::vector<LossLogEntry>& log) {
  std::ostringstream os;
  write_loss_log(log, os);
  return os.str();
}

// ---------------------------------------------------------------------------

int cmd_synth(const Common& c, const JobConfig& cfg0, std::ostream& out) {
  JobConfig cfg = cfg0;
  const fs::path dir = out_or(c, cfg, "data");
  fs::create_directories(dir);
  SplitMix64 seeds(cfg.seed.value_or(0));
  const PhantomOptions opts{cfg.synth.depth, cfg.synth.height, cfg.synth.width, cfg.synth.ellipsoids,
                            cfg.synth.lesion};
  for (std::size_t i = 0; i < cfg.synth.count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "phantom_%03zu.raw", i);
    save_volume(generate_phantom(seeds.next(), opts), dir / name);
  }
  out << "wrote " << cfg.synth.count << " phantoms to " << dir.string() << "\n";
  return kOk;
}

int cmd_train1(const Common& c, const JobConfig& cfg, std::ostream& out) {
  if (!cfg.seed) throw UsageError("train-stage1 needs a seed (config 'seed' or --seed)");
  const Dataset ds = load_dataset(cfg);
  std::vector<Volume> train, val;
  for (std::size_t i = 0; i < ds.volumes.size(); ++i) (ds.is_val[i] ? val : train).push_back(ds.volumes[i]);
  const fs::path dir = out_or(c, cfg, "stage1");
  fs::create_directories(dir);

  const std::vector<int> gaps = cfg.stage1.shared_model ? std::vector<int>{cfg.gap} : cfg.stage1.gaps;
  for (int g : gaps) {
    const Stage1TrainConfig tc = stage1_train_config(cfg, g);
    const Stage1Result r = train_stage1(train, val, tc);
    const int key = cfg.stage1.shared_model ? 0 : g;
    const std::string base = key == 0 ? "stage1_shared" : "stage1_gap" + std::to_string(g);

    ModelCheckpoint best = make_checkpoint(r.best, key);
    best.seed = tc.seed;
    best.epoch = r.epochs_run;
    save_checkpoint(best, dir / (base + ".ckpt"));
    ModelCheckpoint last = make_checkpoint(r.last, key);
    last.seed = tc.seed;
    last.epoch = r.epochs_run;
    last.rng_state = r.rng_state;
    last.adam = r.adam;
    last.plateau = r.plateau;
    save_checkpoint(last, dir / (base + ".last.ckpt"));
    write_text(dir / (base + ".log.csv"), log_text(r.log));
    write_epochs(dir / (base + ".epochs.csv"), r.epochs, "val_psnr");

    char line[256];
    std::snprintf(line, sizeof line,
                  "stage1 gap %d: %zu steps, val PSNR best %.4f dB (untrained %.4f, linear %.4f)\n", g,
                  r.log.size(), r.best_val_psnr, r.initial_val_psnr, r.baseline_val_psnr);
    out << line;
  }
  return kOk;
}

std::vector<VolumePair> coarse_pairs(const std::vector<Volume>& truths, const ModelRegistry& reg, int gap) {
  std::vector<VolumePair> pairs;
  for (const auto& t : truths) {
    const Volume sparse = sparse_sample(t, gap);
    Volume coarse = synthesize_volume(sparse, doubling_plan(sparse.depth, gap), reg);
    pairs.push_back({std::move(coarse), t.sub_depth(0, sparse.depth)});
  }
  return pairs;
}

int cmd_train2(const Common& c, const JobConfig& cfg, const std::string& models, std::ostream& out) {
  if (!cfg.seed) throw UsageError("train-stage2 needs a seed (config 'seed' or --seed)");
  const Dataset ds = load_dataset(cfg);
  const ModelRegistry reg = load_registry(models.empty() ? cfg.models.stage1_dir : models, cfg, cfg.gap);
  std::vector<Volume> train_v, val_v;
  for (std::size_t i = 0; i < ds.volumes.size(); ++i) (ds.is_val[i] ? val_v : train_v).push_back(ds.volumes[i]);
  const auto train = coarse_pairs(train_v, reg, cfg.gap);
  const auto val = coarse_pairs(val_v, reg, cfg.gap);

  const Stage2TrainConfig tc = stage2_train_config(cfg);
  const Stage2Result r = train_stage2(train, val, tc);
  const fs::path dir = out_or(c, cfg, "stage2");
  fs::create_directories(dir);
  ModelCheckpoint best = make_checkpoint(r.best);
  best.seed = tc.seed;
  best.epoch = r.epochs_run;
  save_checkpoint(best, dir / "stage2.ckpt");
  ModelCheckpoint last = make_checkpoint(r.last);
  last.seed = tc.seed;
  last.epoch = r.epochs_run;
  last.rng_state = r.rng_state;
  last.adam = r.adam;
  save_checkpoint(last, dir / "stage2.last.ckpt");
  write_text(dir / "stage2.log.csv", log_text(r.log));
  write_epochs(dir / "stage2.epochs.csv", r.epochs, "val_ssim");

  char line[256];
  std::snprintf(line, sizeof line, "stage2: %zu steps, val SSIM best %.6f (identity %.6f)\n", r.log.size(),
                r.best_val_ssim, r.identity_val_ssim);
  out << line;
  return kOk;
}

std::optional<RefineModel> load_refiner(const std::string& flag, bool no_refine, const JobConfig& cfg) {
  if (no_refine) return std::nullopt;
  const std::string path = flag.empty() ? cfg.models.stage2_path : flag;
  if (path.empty()) return std::nullopt;
  return refine_model_from(load_checkpoint(path));
}

int cmd_reconstruct(const Common& c, const JobConfig& cfg, const std::vector<std::string>& inputs,
                    const std::string& models, const std::string& refine_flag, bool no_refine, bool write_truth,
                    std::ostream& out) {
  const auto files = resolve_data(inputs.empty() ? cfg.data : inputs);
  if (files.empty()) throw UsageError("reconstruct: no inputs");
  const ModelRegistry reg = load_registry(models.empty() ? cfg.models.stage1_dir : models, cfg, cfg.gap);
  const auto refiner = load_refiner(refine_flag, no_refine, cfg);
  std::optional<RefineOptions> ro;
  if (refiner) ro = RefineOptions{&*refiner, refiner->config.alpha};
  const fs::path dir = out_or(c, cfg, "recon");
  fs::create_directories(dir);
  for (const auto& f : files) {
    const Volume truth = load_prepared(f, cfg);
    const Volume sparse = sparse_sample(truth, cfg.gap);
    const Volume recon = reconstruct_volume(sparse, doubling_plan(sparse.depth, cfg.gap), reg, ro);
    const std::string stem = volume_stem(f);
    save_volume(recon, dir / (stem + ".raw"));
    if (write_truth) save_volume(truth.sub_depth(0, sparse.depth), dir / (stem + "_truth.raw"));
    out << "reconstructed " << stem << " (" << recon.dims_str() << ", gap " << cfg.gap
        << (refiner ? ", refined" : "") << ")\n";
  }
  return kOk;
}

void emit_reports(const std::vector<ReconReport>& reports, const std::string& path, const std::string& per_slice,
                  std::ostream& out) {
  std::ostringstream os;
  write_report_csv(reports, os);
  if (path.empty()) {
    out << os.str();
  } else {
    write_text(path, os.str());
  }
  if (!per_slice.empty()) {
    std::ostringstream ps;
    write_per_slice_csv(reports, ps);
    write_text(per_slice, ps.str());
  }
}

int cmd_evaluate(const Common& c, const JobConfig& cfg, const std::vector<std::string>& preds,
                 const std::vector<std::string>& truths, const std::string& method, bool refined, bool windowed,
                 const std::string& per_slice, std::ostream& out) {
  if (preds.empty() || preds.size() != truths.size()) {
    throw UsageError("evaluate: --pred and --truth need the same, nonzero number of files");
  }
  std::vector<ReconReport> reports;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const Volume p = load_volume(preds[i]);
    const Volume t = load_volume(truths[i]);
    if (!p.same_dims(t)) {
      throw FormatError("dimension mismatch: " + preds[i] + " is " + p.dims_str() + " but " + truths[i] + " is " +
                        t.dims_str());
    }
    ReconReport r = evaluate_volume(p, t, EvalOptions{windowed, !per_slice.empty()});
    r.volume = volume_stem(preds[i]);
    r.method = method;
    r.slice_gap = cfg.gap;
    r.refined = refined;
    reports.push_back(std::move(r));
  }
  emit_reports(reports, c.out, per_slice, out);
  return kOk;
}

int cmd_compare(const Common& c, const JobConfig& cfg, const std::vector<std::string>& inputs,
                const std::vector<std::string>& methods, const std::string& models, const std::string& refine_flag,
                bool windowed, std::ostream& out) {
  const auto files = resolve_data(inputs.empty() ? cfg.data : inputs);
  std::optional<ModelRegistry> reg;
  std::optional<RefineModel> refiner;
  for (const auto& m : methods) {
    if (m != "linear" && m != "cubic" && m != "model" && m != "refined") {
      throw UsageError("compare-baseline: unknown method '" + m + "' (linear, cubic, model, refined)");
    }
    if ((m == "model" || m == "refined") && !reg) {
      reg = load_registry(models.empty() ? cfg.models.stage1_dir : models, cfg, cfg.gap);
    }
    if (m == "refined" && !refiner) {
      refiner = load_refiner(refine_flag, false, cfg);
      if (!refiner) throw UsageError("compare-baseline: 'refined' needs --refine or models.stage2_path");
    }
  }
  std::vector<ReconReport> reports;
  for (const auto& f : files) {
    const Volume full = load_prepared(f, cfg);
    const Volume sparse = sparse_sample(full, cfg.gap);
    const Volume truth = full.sub_depth(0, sparse.depth);
    std::optional<Volume> coarse;
    for (const auto& m : methods) {
      Volume pred;
      if (m == "linear") {
        pred = baseline_interpolate(sparse, BaselineMethod::linear);
      } else if (m == "cubic") {
        pred = baseline_interpolate(sparse, BaselineMethod::cubic);
      } else {
        if (!coarse) coarse = synthesize_volume(sparse, doubling_plan(sparse.depth, cfg.gap), *reg);
        pred = m == "model" ? *coarse : refine_volume(*coarse, RefineOptions{&*refiner, refiner->config.alpha});
      }
      ReconReport r = evaluate_volume(pred, truth, EvalOptions{windowed, false});
      r.volume = volume_stem(f);
      r.method = m == "refined" ? "model" : m;
      r.slice_gap = cfg.gap;
      r.refined = m == "refined";
      reports.push_back(std::move(r));
    }
  }
  emit_reports(reports, c.out, "", out);
  return kOk;
}

int cmd_export(const Common& c, const JobConfig& cfg, const std::string& input, const std::vector<std::size_t>& indices,
               std::ostream& out) {
  const Volume v = load_volume(input);
  std::vector<std::size_t> which = indices;
  if (which.empty()) {
    which.resize(v.depth);
    for (std::size_t i = 0; i < v.depth; ++i) which[i] = i;
  }
  const fs::path dir = out_or(c, cfg, "slices");
  fs::create_directories(dir);
  const std::string stem = volume_stem(input);
  for (std::size_t i : which) {
    char name[64];
    std::snprintf(name, sizeof name, "_slice%03zu.pgm", i);
    export_slice_pgm(v, i, dir / (stem + name));
  }
  out << "exported " << which.size() << " slices to " << dir.string() << "\n";
  return kOk;
}

void draw_line(GrayImage& img, long x0, long y0, long x1, long y1, std::uint8_t value) {
  const long dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const long sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  long err = dx + dy;
  for (;;) {
    if (x0 >= 0 && y0 >= 0 && x0 < static_cast<long>(img.width) && y0 < static_cast<long>(img.height)) {
      img.pixels[static_cast<std::size_t>(y0) * img.width + static_cast<std::size_t>(x0)] = value;
    }
    if (x0 == x1 && y0 == y1) break;
    const long e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

int cmd_plot(const std::string& log_path, const std::string& out_path, std::size_t width, std::size_t height,
             std::ostream& out) {
  if (width < 32 || height < 32) throw UsageError("plot-log: image must be at least 32x32");
  std::ifstream in(log_path);
  if (!in) throw FormatError("plot-log: cannot read " + log_path);
  const auto log = read_loss_log(in);
  if (log.empty()) throw FormatError("plot-log: " + log_path + " has no entries");

  // log10 scale on the y axis; black = total, dark gray = filtered, light gray = L1.
  double lo = 1e300, hi = -1e300;
  for (const auto& e : log) {
    for (double v : {e.total, e.l1, e.filtered}) {
      if (v > 0.0) {
        lo = std::min(lo, std::log10(v));
        hi = std::max(hi, std::log10(v));
      }
    }
  }
  if (!(hi >= lo)) throw FormatError("plot-log: no positive loss values");
  if (hi - lo < 1e-9) {
    lo -= 0.5;
    hi += 0.5;
  }
  GrayImage img{width, height, std::vector<std::uint8_t>(width * height, 255)};
  const long margin = 8;
  const long x_end = static_cast<long>(width) - margin, y_end = static_cast<long>(height) - margin;
  draw_line(img, margin, margin, margin, y_end, 0);
  draw_line(img, margin, y_end, x_end, y_end, 0);
  const auto px = [&](std::size_t i) {
    const double t = log.size() > 1 ? static_cast<double>(i) / static_cast<double>(log.size() - 1) : 0.0;
    return margin + 1 + static_cast<long>(std::lround(t * static_cast<double>(x_end - margin - 1)));
  };
  const auto py = [&](double v) {
    const double t = v > 0.0 ? (std::log10(v) - lo) / (hi - lo) : 0.0;
    return y_end - 1 - static_cast<long>(std::lround(t * static_cast<double>(y_end - margin - 1)));
  };
  const std::pair<double LossLogEntry::*, std::uint8_t> series[] = {
      {&LossLogEntry::l1, 170}, {&LossLogEntry::filtered, 90}, {&LossLogEntry::total, 0}};
  for (const auto& [field, shade] : series) {
    for (std::size_t i = 0; i + 1 < log.size(); ++i) {
      draw_line(img, px(i), py(log[i].*field), px(i + 1), py(log[i + 1].*field), shade);
    }
    if (log.size() == 1) draw_line(img, px(0), py(log[0].*field), px(0), py(log[0].*field), shade);
  }
  write_pgm(img, out_path);
  out << "plotted " << log.size() << " steps to " << out_path << "\n";
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Two-stage sparse-slice MRI volume reconstruction", "mkrecon"};
  app.require_subcommand(1);

  std::map<CLI::App*, Common> commons;  // node-stable, one per subcommand
  auto* synth = app.add_subcommand("synth-data", "write seeded phantom volumes");
  add_common(synth, commons[synth], false);
  std::size_t count = 0, depth = 0, height = 0, width = 0;
  int ellipsoids = 0;
  bool no_lesion = false;
  auto* count_opt = synth->add_option("--count", count, "number of volumes");
  auto* depth_opt = synth->add_option("--depth", depth);
  auto* height_opt = synth->add_option("--height", height);
  auto* width_opt = synth->add_option("--width", width);
  auto* ell_opt = synth->add_option("--ellipsoids", ellipsoids);
  synth->add_flag("--no-lesion", no_lesion, "omit the bright lesion");

  auto* train1 = app.add_subcommand("train-stage1", "train slice synthesis models");
  add_common(train1, commons[train1], true);
  std::vector<int> gaps;
  bool shared = false;
  TrainSchedule sched;
  int levels = 0, base = 0, hidden = 0;
  double alpha = 0.0;
  auto* gaps_opt = train1->add_option("--gaps", gaps, "source gaps to train, e.g. 8,4,2")->delimiter(',');
  train1->add_flag("--shared", shared, "one model for every level (trained at --gap)");
  auto* levels_opt = train1->add_option("--levels", levels);
  auto* base_opt = train1->add_option("--base-channels", base);
  CLI::Option* epochs_opt[2];
  CLI::Option* steps_opt[2];
  CLI::Option* lr_opt[2];
  CLI::Option* batch_opt[2];

  auto* train2 = app.add_subcommand("train-stage2", "train the volumetric refiner");
  add_common(train2, commons[train2], true);
  std::string models;
  train2->add_option("--models", models, "Stage-1 checkpoint directory");
  auto* hidden_opt = train2->add_option("--hidden", hidden);
  auto* alpha_opt = train2->add_option("--alpha", alpha);

  int k = 0;
  for (auto* cmd : {train1, train2}) {
    epochs_opt[k] = cmd->add_option("--epochs", sched.epochs);
    steps_opt[k] = cmd->add_option("--max-steps", sched.max_steps, "stop after this many optimizer steps");
    lr_opt[k] = cmd->add_option("--lr", sched.lr);
    batch_opt[k] = cmd->add_option("--batch", sched.batch);
    ++k;
  }

  auto* recon = app.add_subcommand("reconstruct", "subsample and reconstruct volumes");
  add_common(recon, commons[recon], false);
  std::vector<std::string> inputs;
  std::string refine;
  bool no_refine = false, write_truth = false;
  recon->add_option("--input", inputs, "volumes to reconstruct (default: config data)");
  recon->add_option("--models", models, "Stage-1 checkpoint directory or zero-init");
  recon->add_option("--refine", refine, "Stage-2 checkpoint");
  recon->add_flag("--no-refine", no_refine, "skip Stage 2");
  recon->add_flag("--write-truth", write_truth, "also write the depth-cropped ground truth");

  auto* eval = app.add_subcommand("evaluate", "PSNR/SSIM of predictions against ground truth");
  add_common(eval, commons[eval], false);
  std::vector<std::string> preds, truths;
  std::string method = "model", per_slice;
  bool refined = false, windowed = false;
  eval->add_option("--pred", preds)->required();
  eval->add_option("--truth", truths)->required();
  eval->add_option("--method", method, "label for the method column");
  eval->add_flag("--refined", refined, "label rows as refined");
  eval->add_flag("--windowed", windowed, "also compute windowed SSIM");
  eval->add_option("--per-slice", per_slice, "per-slice CSV output");

  auto* compare = app.add_subcommand("compare-baseline", "linear/cubic baselines and the model in one report");
  add_common(compare, commons[compare], false);
  std::vector<std::string> methods{"linear", "cubic", "model"};
  compare->add_option("--input", inputs, "ground-truth volumes (default: config data)");
  compare->add_option("--methods", methods, "linear, cubic, model, refined")->delimiter(',');
  compare->add_option("--models", models, "Stage-1 checkpoint directory or zero-init");
  compare->add_option("--refine", refine, "Stage-2 checkpoint for 'refined'");
  compare->add_flag("--windowed", windowed, "also compute windowed SSIM");

  auto* exp = app.add_subcommand("export-slices", "write slices as 8-bit PGM");
  add_common(exp, commons[exp], false);
  std::string input;
  std::vector<std::size_t> indices;
  exp->add_option("--input", input)->required();
  exp->add_option("--indices", indices, "slice indices (default: all)")->delimiter(',');

  auto* plot = app.add_subcommand("plot-log", "render a loss log as a PGM line chart");
  std::string log_path, plot_out;
  std::size_t plot_w = 640, plot_h = 360;
  plot->add_option("--log", log_path)->required();
  plot->add_option("--out", plot_out)->required();
  plot->add_option("--width", plot_w);
  plot->add_option("--height", plot_h);

  std::vector<const char*> argv{"mkrecon"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (plot->parsed()) return cmd_plot(log_path, plot_out, plot_w, plot_h, out);

    const Common& c = commons.at(app.get_subcommands().front());
    JobConfig cfg = resolve_config(c);
    if (synth->parsed()) {
      if (count_opt->count()) cfg.synth.count = count;
      if (depth_opt->count()) cfg.synth.depth = depth;
      if (height_opt->count()) cfg.synth.height = height;
      if (width_opt->count()) cfg.synth.width = width;
      if (ell_opt->count()) cfg.synth.ellipsoids = ellipsoids;
      if (no_lesion) cfg.synth.lesion = false;
      cfg.validate();
      return cmd_synth(c, cfg, out);
    }
    if (train1->parsed() || train2->parsed()) {
      const int i = train1->parsed() ? 0 : 1;
      TrainSchedule& s = i == 0 ? cfg.stage1.schedule : cfg.stage2.schedule;
      if (epochs_opt[i]->count()) s.epochs = sched.epochs;
      if (steps_opt[i]->count()) s.max_steps = sched.max_steps;
      if (lr_opt[i]->count()) s.lr = sched.lr;
      if (batch_opt[i]->count()) s.batch = sched.batch;
      if (i == 0) {
        if (gaps_opt->count()) cfg.stage1.gaps = gaps;
        if (shared) cfg.stage1.shared_model = true;
        if (levels_opt->count()) cfg.stage1.levels = levels;
        if (base_opt->count()) cfg.stage1.base_channels = base;
      } else {
        if (hidden_opt->count()) cfg.stage2.hidden_channels = hidden;
        if (alpha_opt->count()) cfg.stage2.alpha = alpha;
      }
      cfg.validate();
      return i == 0 ? cmd_train1(c, cfg, out) : cmd_train2(c, cfg, models, out);
    }
    if (recon->parsed()) {
      if (no_refine && !refine.empty()) throw UsageError("reconstruct: --refine and --no-refine conflict");
      return cmd_reconstruct(c, cfg, inputs, models, refine, no_refine, write_truth, out);
    }
    if (eval->parsed()) return cmd_evaluate(c, cfg, preds, truths, method, refined, windowed, per_slice, out);
    if (compare->parsed()) return cmd_compare(c, cfg, inputs, methods, models, refine, windowed, out);
    if (exp->parsed()) return cmd_export(c, cfg, input, indices, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const std::exception& e) {
    err << "data error: " << e.what() << "\n";
    return kData;
  }
  err << "no command given\n";
  return kUsage;
}

}  // namespace mkr::cli
