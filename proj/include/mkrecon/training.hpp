#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "mkrecon/losses.hpp"
#include "mkrecon/models.hpp"
#include "mkrecon/volume.hpp"

namespace mkr {

// ---------------------------------------------------------------------------
// Optimizer and scheduler

struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  // beta^step, tracked by repeated multiplication so that no pow() enters
  // the update path.
  double beta1_power = 1.0;
  double beta2_power = 1.0;
  std::vector<std::vector<double>> m;  // aligned with ParameterSet entries
  std::vector<std::vector<double>> v;
};

AdamState make_adam(const ParameterSet& params, double lr);

/// Bias-corrected Adam update with explicit gradients (one vector per
/// parameter, in entry order). Throws NumericError naming the parameter on a
/// non-finite gradient, before anything is modified.
void adam_step(ParameterSet& params, const std::vector<std::vector<double>>& grads, AdamState& state);

/// Same, reading the gradients accumulated on the parameters.
void adam_step(ParameterSet& params, AdamState& state);

/// Reduce-on-plateau in max mode. A metric counts as an improvement only if
/// it is strictly greater than the best seen; once more than `patience`
/// evaluations in a row fail to improve, lr = max(lr·factor, min_lr) and the
/// counter restarts.
struct PlateauState {
  double lr = 1e-4;
  double best = -std::numeric_limits<double>::infinity();
  int bad_evals = 0;
  int patience = 5;
  double factor = 0.5;
  double min_lr = 1e-6;
};

/// Returns true when the learning rate was reduced.
bool plateau_step(PlateauState& state, double metric);

// ---------------------------------------------------------------------------
// Loss log: one CSV row per optimizer step.

struct LossLogEntry {
  std::uint64_t step = 0;
  int epoch = 0;
  double l1 = 0.0;
  double filtered = 0.0;
  double total = 0.0;
  double lr = 0.0;
};

void write_loss_log(const std::vector<LossLogEntry>& log, std::ostream& out);
std::vector<LossLogEntry> read_loss_log(std::istream& in);

struct EpochRecord {
  int epoch = 0;
  double val_metric = 0.0;
  double lr = 0.0;
  bool improved = false;
};

// ---------------------------------------------------------------------------
// Validation split

/// Deterministic ~90/10 split: an id goes to validation when
/// splitmix_hash(FNV-1a(id)) is 0 mod 10. If that leaves either side empty
/// (with ≥ 2 ids), the id with the smallest hash is moved to validation, or
/// the largest back to training. Returns a flag per id, true = validation.
std::vector<bool> validation_split(const std::vector<std::string>& ids);

// ---------------------------------------------------------------------------
// Stage 1

struct TrainSchedule {
  double lr = 1e-4;
  std::size_t batch = 8;
  int epochs = 1;
  std::size_t max_steps = 0;  // 0: run every epoch to completion
  int patience = 5;
  double factor = 0.5;
  double min_lr = 1e-6;
};

struct Stage1TrainConfig {
  UNetConfig arch;
  Stage1LossConfig loss;
  TrainSchedule schedule;
  std::uint64_t seed = 0;
  std::size_t half_gap = 4;
};

struct Stage1Result {
  SliceModel best;   // best validation PSNR, the untrained model if nothing beat it
  SliceModel last;
  AdamState adam;    // state after the final step
  PlateauState plateau;
  std::uint64_t rng_state = 0;
  int epochs_run = 0;
  std::vector<LossLogEntry> log;
  std::vector<EpochRecord> epochs;
  double baseline_val_psnr = 0.0;  // linear midpoint on the validation triplets
  double initial_val_psnr = 0.0;
  double best_val_psnr = 0.0;
};

/// Mean PSNR over every (i−h, i, i+h) triplet of the given volumes.
double triplet_psnr(const std::vector<Volume>& volumes, std::size_t half_gap, const SliceModel& model);
double triplet_psnr_linear(const std::vector<Volume>& volumes, std::size_t half_gap);

/// Seeded Stage-1 training on triplets of `train` with half gap cfg.half_gap.
/// Each step averages the loss over a batch; each epoch (or the step cap)
/// ends with a validation PSNR on `val` that drives the plateau scheduler.
/// The scheduler's best is seeded with the untrained model's PSNR.
Stage1Result train_stage1(const std::vector<Volume>& train, const std::vector<Volume>& val,
                          const Stage1TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Stage 2

struct VolumePair {
  Volume coarse;  // Stage-1 output, acquisition mask set
  Volume truth;
};

struct Stage2TrainConfig {
  RefineConfig arch;
  Stage2LossConfig loss;
  TrainSchedule schedule{1e-4, 4, 50, 0, 5, 0.5, 1e-6};
  std::uint64_t seed = 0;
};

struct Stage2Result {
  RefineModel best;  // best validation SSIM, the identity model if nothing beat it
  RefineModel last;
  AdamState adam;
  std::uint64_t rng_state = 0;
  int epochs_run = 0;
  std::vector<LossLogEntry> log;
  std::vector<EpochRecord> epochs;
  std::vector<double> alpha2_trace;  // per epoch
  double identity_val_ssim = 0.0;
  double best_val_ssim = 0.0;
};

/// Mean global SSIM of refined volumes (infer mode) against truth.
double refined_ssim(const std::vector<VolumePair>& pairs, const RefineModel& model);

/// Seeded Stage-2 training at a constant learning rate; α₂ follows the
/// per-epoch schedule and selection uses validation SSIM, seeded with the
/// identity model's score.
Stage2Result train_stage2(const std::vector<VolumePair>& train, const std::vector<VolumePair>& val,
                          const Stage2TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Checkpoints

enum class ModelKind { slice, refine };

struct ModelCheckpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  ModelKind kind = ModelKind::slice;
  UNetConfig unet;
  RefineConfig refine;
  int source_gap = 0;  // slice models: the input spacing trained for, 0 = shared
  ParameterSet params;
  std::optional<AdamState> adam;
  std::optional<PlateauState> plateau;
  int epoch = 0;
  std::uint64_t seed = 0;
  std::uint64_t rng_state = 0;
};

ModelCheckpoint make_checkpoint(const SliceModel& model, int source_gap);
ModelCheckpoint make_checkpoint(const RefineModel& model);
SliceModel slice_model_from(const ModelCheckpoint& ckpt);
RefineModel refine_model_from(const ModelCheckpoint& ckpt);

/// Binary layout documented in docs/formats.md. Throws FormatError on bad
/// magic, version mismatch, truncation or checksum failure.
void save_checkpoint(const ModelCheckpoint& ckpt, const std::filesystem::path& path);
ModelCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mkr
