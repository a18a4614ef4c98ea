#include "mkrecon/pipeline.hpp"

#include <algorithm>
#include <stdexcept>

namespace mkr {

namespace {

void require_gap(int gap) {
  if (gap != 2 && gap != 4 && gap != 8) {
    throw std::invalid_argument("gap must be 2, 4 or 8, got " + std::to_string(gap));
  }
}

}  // namespace

std::size_t aligned_depth(std::size_t depth, int gap) {
  require_gap(gap);
  const auto g = static_cast<std::size_t>(gap);
  if (depth < g + 1) {
    throw std::invalid_argument("volume depth " + std::to_string(depth) + " too shallow for gap " +
                                std::to_string(gap));
  }
  return g * ((depth - 1) / g) + 1;
}

Volume sparse_sample(const Volume& volume, int gap) {
  volume.check_consistent();
  const std::size_t d = aligned_depth(volume.depth, gap);
  Volume out = volume.sub_depth(0, d);
  const auto g = static_cast<std::size_t>(gap);
  for (std::size_t z = 0; z < d; ++z) {
    const bool keep = z % g == 0;
    out.acquired[z] = keep ? 1 : 0;
    if (!keep) std::fill(out.slice(z).begin(), out.slice(z).end(), 0.0);
  }
  return out;
}

DoublingPlan doubling_plan(std::size_t depth, int gap) {
  require_gap(gap);
  const auto g = static_cast<std::size_t>(gap);
  if (depth < g + 1 || (depth - 1) % g != 0) {
    throw std::invalid_argument("doubling_plan: depth " + std::to_string(depth) +
                                " is not aligned to gap " + std::to_string(gap));
  }
  DoublingPlan plan;
  plan.depth = depth;
  plan.gap = gap;
  for (std::size_t s = g; s >= 2; s /= 2) {
    PlanLevel level{static_cast<int>(s), {}};
    for (std::size_t left = 0; left + s < depth; left += s) {
      level.triples.push_back({left + s / 2, left, left + s});
    }
    plan.levels.push_back(std::move(level));
  }
  return plan;
}

void ModelRegistry::set(int gap, SliceModel model) { per_gap_[gap] = std::move(model); }

void ModelRegistry::set_shared(SliceModel model) { shared_ = std::move(model); }

bool ModelRegistry::has(int gap) const { return shared_.has_value() || per_gap_.count(gap) > 0; }

const SliceModel& ModelRegistry::for_gap(int gap) const {
  if (shared_) return *shared_;
  auto it = per_gap_.find(gap);
  if (it == per_gap_.end()) {
    throw std::invalid_argument("no slice model registered for gap " + std::to_string(gap));
  }
  return it->second;
}

Volume synthesize_volume(const Volume& sparse, const DoublingPlan& plan, const ModelRegistry& models) {
  sparse.check_consistent();
  if (plan.depth != sparse.depth) {
    throw std::invalid_argument("plan depth " + std::to_string(plan.depth) + " != volume depth " +
                                std::to_string(sparse.depth));
  }
  const auto g = static_cast<std::size_t>(plan.gap);
  for (std::size_t z = 0; z < sparse.depth; ++z) {
    if ((z % g == 0) != (sparse.acquired[z] != 0)) {
      throw std::invalid_argument("plan/volume mismatch: acquisition mask disagrees at slice " +
                                  std::to_string(z));
    }
  }
  for (const auto& level : plan.levels) {
    if (!models.has(level.source_gap)) {
      throw std::invalid_argument("no slice model registered for gap " +
                                  std::to_string(level.source_gap));
    }
  }

  NoGradGuard no_grad;
  Volume work = sparse;
  for (const auto& level : plan.levels) {
    const SliceModel& model = models.for_gap(level.source_gap);
    // Sources of a level are all written by earlier levels, so targets within
    // a level are independent of each other.
    for (const auto& t : level.triples) {
      Tensor out = slice_forward(work.slice_tensor(t.left), work.slice_tensor(t.right), model, Mode::infer);
      work.set_slice(t.target, out.values());
    }
  }
  return work;
}

Volume refine_volume(const Volume& coarse, const RefineOptions& refine) {
  coarse.check_consistent();
  if (refine.model == nullptr) throw std::invalid_argument("refine_volume: no model");
  if (refine.chunk_depth == 0 || refine.chunk_overlap >= refine.chunk_depth) {
    throw std::invalid_argument("refine_volume: bad chunking parameters");
  }
  NoGradGuard no_grad;
  const std::size_t plane = coarse.slice_size();
  std::vector<double> r_sum(coarse.size(), 0.0);

  if (coarse.size() <= refine.voxel_budget || coarse.depth <= refine.chunk_depth) {
    Tensor r = refine_forward(coarse.as_tensor(), *refine.model);
    std::copy(r.values().begin(), r.values().end(), r_sum.begin());
  } else {
    std::vector<double> w_sum(coarse.depth, 0.0);
    const std::size_t step = refine.chunk_depth - refine.chunk_overlap;
    const double ramp = static_cast<double>(refine.chunk_overlap + 1);
    for (std::size_t begin = 0;; begin += step) {
      const std::size_t end = std::min(begin + refine.chunk_depth, coarse.depth);
      const bool first = begin == 0, last = end == coarse.depth;
      Tensor r = refine_forward(coarse.sub_depth(begin, end).as_tensor(), *refine.model);
      const std::size_t len = end - begin;
      for (std::size_t i = 0; i < len; ++i) {
        double w = 1.0;
        if (!first && i < refine.chunk_overlap) w = std::min(w, static_cast<double>(i + 1) / ramp);
        if (!last && i + refine.chunk_overlap >= len) w = std::min(w, static_cast<double>(len - i) / ramp);
        w_sum[begin + i] += w;
        for (std::size_t p = 0; p < plane; ++p) r_sum[(begin + i) * plane + p] += w * r[i * plane + p];
      }
      if (last) break;
    }
    for (std::size_t z = 0; z < coarse.depth; ++z)
      for (std::size_t p = 0; p < plane; ++p) r_sum[z * plane + p] /= w_sum[z];
  }

  Tensor refined = apply_refinement(coarse.as_tensor(),
                                    Tensor(Shape{1, coarse.depth, coarse.height, coarse.width}, std::move(r_sum)),
                                    refine.alpha, Mode::infer);
  Volume out = coarse;
  std::copy(refined.values().begin(), refined.values().end(), out.voxels.begin());
  return out;
}

Volume reconstruct_volume(const Volume& sparse, const DoublingPlan& plan, const ModelRegistry& models,
                          const std::optional<RefineOptions>& refine) {
  Volume coarse = synthesize_volume(sparse, plan, models);
  if (!refine) return coarse;
  return refine_volume(coarse, *refine);
}

Volume baseline_interpolate(const Volume& sparse, BaselineMethod method) {
  sparse.check_consistent();
  const auto known = sparse.acquired_indices();
  const std::size_t need = method == BaselineMethod::linear ? 2 : 4;
  if (known.size() < need) {
    throw std::invalid_argument("baseline_interpolate: needs at least " + std::to_string(need) +
                                " acquired slices, have " + std::to_string(known.size()));
  }
  Volume out = sparse;
  const std::size_t plane = sparse.slice_size();
  std::size_t span = 0;  // known[span] <= z < known[span + 1] once inside
  for (std::size_t z = 0; z < sparse.depth; ++z) {
    if (sparse.acquired[z]) continue;
    if (z < known.front() || z > known.back()) {
      // Outside the acquired range: hold the nearest acquired slice.
      const std::size_t src = z < known.front() ? known.front() : known.back();
      out.set_slice(z, sparse.slice(src));
      continue;
    }
    while (known[span + 1] < z) ++span;
    const std::size_t l = known[span], r = known[span + 1];
    auto dst = out.slice(z);
    if (method == BaselineMethod::linear) {
      const double t = static_cast<double>(z - l) / static_cast<double>(r - l);
      const auto a = sparse.slice(l), b = sparse.slice(r);
      for (std::size_t p = 0; p < plane; ++p) dst[p] = (1.0 - t) * a[p] + t * b[p];
    } else {
      const std::size_t s = std::min(span == 0 ? 0 : span - 1, known.size() - 4);
      double wts[4];
      const double x = static_cast<double>(z);
      for (std::size_t i = 0; i < 4; ++i) {
        double w = 1.0;
        const double xi = static_cast<double>(known[s + i]);
        for (std::size_t j = 0; j < 4; ++j) {
          if (j == i) continue;
          const double xj = static_cast<double>(known[s + j]);
          w *= (x - xj) / (xi - xj);
        }
        wts[i] = w;
      }
      const std::span<const double> src[4] = {sparse.slice(known[s]), sparse.slice(known[s + 1]),
                                              sparse.slice(known[s + 2]), sparse.slice(known[s + 3])};
      for (std::size_t p = 0; p < plane; ++p) {
        double v = 0.0;
        for (std::size_t i = 0; i < 4; ++i) v += wts[i] * src[i][p];
        // Cubic overshoot is clipped to the intensity range.
        dst[p] = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return out;
}

}  // namespace mkr
