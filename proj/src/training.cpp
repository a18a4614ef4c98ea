#include "mkrecon/training.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "mkrecon/data.hpp"
#include "mkrecon/error.hpp"
#include "mkrecon/metrics.hpp"
#include "mkrecon/rng.hpp"

namespace mkr {

namespace {

// Independent generator streams derived from the one job seed.
constexpr std::uint64_t kInitStream = 0x696e6974ULL;     // "init"
constexpr std::uint64_t kShuffleStream = 0x73687566ULL;  // "shuf"

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void check_schedule(const TrainSchedule& s, const char* who) {
  if (s.batch == 0) throw std::invalid_argument(std::string(who) + ": batch size must be positive");
  if (s.epochs <= 0) throw std::invalid_argument(std::string(who) + ": epochs must be positive");
  if (!(s.lr > 0.0)) throw std::invalid_argument(std::string(who) + ": learning rate must be positive");
}

PlateauState make_plateau(const TrainSchedule& s) {
  PlateauState p;
  p.lr = s.lr;
  p.patience = s.patience;
  p.factor = s.factor;
  p.min_lr = s.min_lr;
  return p;
}

[[noreturn]] void rethrow_at_step(const NumericError& e, std::uint64_t step) {
  throw NumericError("step " + std::to_string(step) + ": " + e.what());
}

}  // namespace

AdamState make_adam(const ParameterSet& params, double lr) {
  AdamState s;
  s.lr = lr;
  for (const auto& e : params.entries()) {
    s.m.emplace_back(e.value.size(), 0.0);
    s.v.emplace_back(e.value.size(), 0.0);
  }
  return s;
}

void adam_step(ParameterSet& params, const std::vector<std::vector<double>>& grads, AdamState& state) {
  auto& entries = params.entries();
  if (grads.size() != entries.size() || state.m.size() != entries.size() || state.v.size() != entries.size()) {
    throw std::invalid_argument("adam_step: gradient/state count does not match parameters");
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const std::size_t n = entries[i].value.size();
    if (grads[i].size() != n || state.m[i].size() != n || state.v[i].size() != n) {
      throw std::invalid_argument("adam_step: shape mismatch for " + entries[i].name);
    }
    for (std::size_t k = 0; k < n; ++k) {
      if (!std::isfinite(grads[i][k])) {
        throw NumericError("non-finite gradient in " + entries[i].name + " at element " + std::to_string(k));
      }
    }
  }
  state.step += 1;
  state.beta1_power *= state.beta1;
  state.beta2_power *= state.beta2;
  const double c1 = 1.0 - state.beta1_power;
  const double c2 = 1.0 - state.beta2_power;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto p = entries[i].value.mutable_values();
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto& g = grads[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      p[k] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

void adam_step(ParameterSet& params, AdamState& state) {
  std::vector<std::vector<double>> grads;
  grads.reserve(params.size());
  for (const auto& e : params.entries()) {
    auto g = e.value.grad();
    if (g.empty()) {
      grads.emplace_back(e.value.size(), 0.0);
    } else {
      grads.emplace_back(g.begin(), g.end());
    }
  }
  adam_step(params, grads, state);
}

bool plateau_step(PlateauState& state, double metric) {
  if (metric > state.best) {
    state.best = metric;
    state.bad_evals = 0;
    return false;
  }
  state.bad_evals += 1;
  if (state.bad_evals <= state.patience) return false;
  state.bad_evals = 0;
  const double next = std::max(state.lr * state.factor, state.min_lr);
  const bool reduced = next < state.lr;
  state.lr = next;
  return reduced;
}

void write_loss_log(const std::vector<LossLogEntry>& log, std::ostream& out) {
  out << "step,epoch,l1,filtered,total,lr\n";
  char buf[256];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof buf, "%" PRIu64 ",%d,%.17g,%.17g,%.17g,%.17g\n", e.step, e.epoch, e.l1, e.filtered,
                  e.total, e.lr);
    out << buf;
  }
}

std::vector<LossLogEntry> read_loss_log(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("step,epoch,l1,filtered,total", 0) != 0) {
    throw FormatError("loss log: missing header");
  }
  std::vector<LossLogEntry> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    LossLogEntry e;
    std::uint64_t step = 0;
    int epoch = 0;
    const int n = std::sscanf(line.c_str(), "%" SCNu64 ",%d,%lf,%lf,%lf,%lf", &step, &epoch, &e.l1, &e.filtered,
                              &e.total, &e.lr);
    if (n < 5) throw FormatError("loss log: malformed line " + std::to_string(lineno));
    e.step = step;
    e.epoch = epoch;
    out.push_back(e);
  }
  return out;
}

std::vector<bool> validation_split(const std::vector<std::string>& ids) {
  std::vector<std::uint64_t> h(ids.size());
  std::vector<bool> val(ids.size(), false);
  std::size_t n_val = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    h[i] = splitmix_hash(fnv1a(ids[i]));
    val[i] = h[i] % 10 == 0;
    n_val += val[i] ? 1 : 0;
  }
  if (ids.size() >= 2) {
    if (n_val == 0) {
      val[static_cast<std::size_t>(std::min_element(h.begin(), h.end()) - h.begin())] = true;
    } else if (n_val == ids.size()) {
      val[static_cast<std::size_t>(std::max_element(h.begin(), h.end()) - h.begin())] = false;
    }
  }
  return val;
}

// ---------------------------------------------------------------------------
// Stage 1

double triplet_psnr(const std::vector<Volume>& volumes, std::size_t half_gap, const SliceModel& model) {
  const auto triplets = make_triplets(volumes, half_gap);
  if (triplets.empty()) throw std::invalid_argument("triplet_psnr: no triplets");
  NoGradGuard no_grad;
  double total = 0.0;
  for (const auto& t : triplets) {
    const Volume& v = volumes[t.volume_id];
    Tensor pred = slice_forward(v.slice_tensor(t.left), v.slice_tensor(t.right), model, Mode::infer);
    total += psnr(pred.values(), v.slice(t.target));
  }
  return total / static_cast<double>(triplets.size());
}

double triplet_psnr_linear(const std::vector<Volume>& volumes, std::size_t half_gap) {
  const auto triplets = make_triplets(volumes, half_gap);
  if (triplets.empty()) throw std::invalid_argument("triplet_psnr_linear: no triplets");
  double total = 0.0;
  std::vector<double> mid;
  for (const auto& t : triplets) {
    const Volume& v = volumes[t.volume_id];
    const auto a = v.slice(t.left), b = v.slice(t.right);
    mid.resize(a.size());
    for (std::size_t p = 0; p < a.size(); ++p) mid[p] = 0.5 * (a[p] + b[p]);
    total += psnr(mid, v.slice(t.target));
  }
  return total / static_cast<double>(triplets.size());
}

Stage1Result train_stage1(const std::vector<Volume>& train, const std::vector<Volume>& val,
                          const Stage1TrainConfig& cfg) {
  check_schedule(cfg.schedule, "train_stage1");
  const auto triplets = make_triplets(train, cfg.half_gap);
  if (triplets.empty()) throw std::invalid_argument("train_stage1: empty dataset");
  // Without a held-out set the training volumes stand in for validation.
  const std::vector<Volume>& val_set = val.empty() ? train : val;

  Stage1Result res;
  SliceModel model = init_slice_model(cfg.arch, splitmix_hash(cfg.seed ^ kInitStream));
  SplitMix64 rng(splitmix_hash(cfg.seed ^ kShuffleStream));
  AdamState adam = make_adam(model.params, cfg.schedule.lr);
  PlateauState plateau = make_plateau(cfg.schedule);

  res.baseline_val_psnr = triplet_psnr_linear(val_set, cfg.half_gap);
  res.initial_val_psnr = triplet_psnr(val_set, cfg.half_gap, model);
  plateau.best = res.initial_val_psnr;
  res.best = SliceModel{model.config, model.params.clone()};
  res.best_val_psnr = res.initial_val_psnr;

  std::vector<std::size_t> order(triplets.size());
  std::uint64_t step = 0;
  const std::size_t cap = cfg.schedule.max_steps;
  for (int epoch = 0; epoch < cfg.schedule.epochs; ++epoch) {
    if (cap != 0 && step >= cap) break;
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += cfg.schedule.batch) {
      if (cap != 0 && step >= cap) break;
      const std::size_t end = std::min(start + cfg.schedule.batch, order.size());
      const double inv = 1.0 / static_cast<double>(end - start);
      LossLogEntry entry;
      entry.step = step;
      entry.epoch = epoch;
      entry.lr = plateau.lr;
      model.params.zero_grad();
      try {
        for (std::size_t k = start; k < end; ++k) {
          const auto& t = triplets[order[k]];
          const Volume& v = train[t.volume_id];
          Tensor pred = slice_forward(v.slice_tensor(t.left), v.slice_tensor(t.right), model, Mode::train);
          LossTerms terms = stage1_loss(pred, v.slice_tensor(t.target), cfg.loss);
          backprop(scale(terms.total, inv));
          entry.l1 += inv * terms.l1.item();
          entry.filtered += inv * terms.filtered.item();
          entry.total += inv * terms.total.item();
        }
        adam.lr = plateau.lr;
        adam_step(model.params, adam);
      } catch (const NumericError& e) {
        rethrow_at_step(e, step);
      }
      res.log.push_back(entry);
      ++step;
    }
    const double metric = triplet_psnr(val_set, cfg.half_gap, model);
    const bool improved = metric > plateau.best;
    plateau_step(plateau, metric);
    if (improved) {
      res.best = SliceModel{model.config, model.params.clone()};
      res.best_val_psnr = metric;
    }
    res.epochs.push_back({epoch, metric, plateau.lr, improved});
    res.epochs_run = epoch + 1;
  }
  model.params.zero_grad();
  res.last = std::move(model);
  res.adam = std::move(adam);
  res.plateau = plateau;
  res.rng_state = rng.state();
  return res;
}

// ---------------------------------------------------------------------------
// Stage 2

double refined_ssim(const std::vector<VolumePair>& pairs, const RefineModel& model) {
  if (pairs.empty()) throw std::invalid_argument("refined_ssim: no volumes");
  NoGradGuard no_grad;
  double total = 0.0;
  for (const auto& p : pairs) {
    Tensor x = p.coarse.as_tensor();
    Tensor out = apply_refinement(x, refine_forward(x, model), model.config.alpha, Mode::infer);
    total += ssim_global(out.values(), p.truth.voxels);
  }
  return total / static_cast<double>(pairs.size());
}

Stage2Result train_stage2(const std::vector<VolumePair>& train, const std::vector<VolumePair>& val,
                          const Stage2TrainConfig& cfg) {
  check_schedule(cfg.schedule, "train_stage2");
  if (train.empty()) throw std::invalid_argument("train_stage2: empty dataset");
  for (const auto* set : {&train, &val}) {
    for (std::size_t i = 0; i < set->size(); ++i) {
      const auto& p = (*set)[i];
      p.coarse.check_consistent();
      p.truth.check_consistent();
      if (!p.coarse.same_dims(p.truth)) {
        throw std::invalid_argument("train_stage2: pair " + std::to_string(i) + " shape mismatch: coarse " +
                                    p.coarse.dims_str() + " vs truth " + p.truth.dims_str());
      }
    }
  }
  const std::vector<VolumePair>& val_set = val.empty() ? train : val;

  Stage2Result res;
  RefineModel model = init_refine_model(cfg.arch, splitmix_hash(cfg.seed ^ kInitStream));
  SplitMix64 rng(splitmix_hash(cfg.seed ^ kShuffleStream));
  AdamState adam = make_adam(model.params, cfg.schedule.lr);

  res.identity_val_ssim = refined_ssim(val_set, model);
  res.best = RefineModel{model.config, model.params.clone()};
  res.best_val_ssim = res.identity_val_ssim;

  std::vector<std::size_t> order(train.size());
  std::uint64_t step = 0;
  const std::size_t cap = cfg.schedule.max_steps;
  for (int epoch = 0; epoch < cfg.schedule.epochs; ++epoch) {
    if (cap != 0 && step >= cap) break;
    res.alpha2_trace.push_back(cfg.loss.alpha2(epoch));
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += cfg.schedule.batch) {
      if (cap != 0 && step >= cap) break;
      const std::size_t end = std::min(start + cfg.schedule.batch, order.size());
      const double inv = 1.0 / static_cast<double>(end - start);
      LossLogEntry entry;
      entry.step = step;
      entry.epoch = epoch;
      entry.lr = adam.lr;
      model.params.zero_grad();
      try {
        for (std::size_t k = start; k < end; ++k) {
          const auto& p = train[order[k]];
          Tensor x = p.coarse.as_tensor();
          Tensor pred = apply_refinement(x, refine_forward(x, model), model.config.alpha, Mode::train);
          LossTerms terms = stage2_loss(pred, p.truth.as_tensor(), epoch, p.coarse.acquired, cfg.loss);
          backprop(scale(terms.total, inv));
          entry.l1 += inv * terms.l1.item();
          entry.filtered += inv * terms.filtered.item();
          entry.total += inv * terms.total.item();
        }
        adam_step(model.params, adam);
      } catch (const NumericError& e) {
        rethrow_at_step(e, step);
      }
      res.log.push_back(entry);
      ++step;
    }
    const double metric = refined_ssim(val_set, model);
    const bool improved = metric > res.best_val_ssim;
    if (improved) {
      res.best = RefineModel{model.config, model.params.clone()};
      res.best_val_ssim = metric;
    }
    res.epochs.push_back({epoch, metric, adam.lr, improved});
    res.epochs_run = epoch + 1;
  }
  model.params.zero_grad();
  res.last = std::move(model);
  res.adam = std::move(adam);
  res.rng_state = rng.state();
  return res;
}

}  // namespace mkr
