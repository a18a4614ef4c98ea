#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <vector>

#include "mkrecon/models.hpp"
#include "mkrecon/volume.hpp"

namespace mkr {

/// Crops depth to gap·floor((D−1)/gap) + 1, marks every gap-th slice as
/// acquired and zeroes the rest. gap ∈ {2, 4, 8}; needs D ≥ gap + 1.
Volume sparse_sample(const Volume& volume, int gap);

// Largest depth ≤ depth with (D'−1) divisible by gap.
std::size_t aligned_depth(std::size_t depth, int gap);

struct SynthesisTriple {
  std::size_t target;
  std::size_t left;
  std::size_t right;
};

struct PlanLevel {
  int source_gap;  // distance between left and right; also the model key
  std::vector<SynthesisTriple> triples;
};

/// Recursive doubling schedule: level 1 fills midpoints of slices `gap`
/// apart, each later level halves the spacing until it reaches 2.
struct DoublingPlan {
  std::size_t depth = 0;
  int gap = 0;
  std::vector<PlanLevel> levels;
};

DoublingPlan doubling_plan(std::size_t depth, int gap);

/// Stage-1 models keyed by source gap, or one shared model for every level.
class ModelRegistry {
 public:
  void set(int gap, SliceModel model);
  void set_shared(SliceModel model);
  bool has(int gap) const;
  const SliceModel& for_gap(int gap) const;

 private:
  std::map<int, SliceModel> per_gap_;
  std::optional<SliceModel> shared_;
};

struct RefineOptions {
  const RefineModel* model = nullptr;
  double alpha = 0.1;
  // Volumes above this many voxels are refined in overlapping depth chunks.
  std::size_t voxel_budget = std::size_t{32} * 256 * 256;
  std::size_t chunk_depth = 32;
  std::size_t chunk_overlap = 4;
};

/// Stage 1 only: runs the plan level by level; acquired slices are kept
/// untouched and synthesized slices become sources for later levels.
Volume synthesize_volume(const Volume& sparse, const DoublingPlan& plan, const ModelRegistry& models);

/// Stage 2 only: P = clamp01(I + αR) over the whole volume, chunked along
/// depth with a linear cross-fade of R in the overlaps when over budget.
Volume refine_volume(const Volume& coarse, const RefineOptions& refine);

/// Stage 1 followed by optional Stage 2.
Volume reconstruct_volume(const Volume& sparse, const DoublingPlan& plan, const ModelRegistry& models,
                          const std::optional<RefineOptions>& refine = std::nullopt);

enum class BaselineMethod { linear, cubic };

/// Per-voxel interpolation along depth between acquired slices. Linear needs
/// ≥ 2 acquired slices; cubic uses the 4-point Lagrange interpolant over the
/// nearest acquired slices (one-sided stencil at the ends) and needs ≥ 4.
Volume baseline_interpolate(const Volume& sparse, BaselineMethod method);

}  // namespace mkr
