#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "mkrecon/kernels.hpp"
#include "mkrecon/tensor.hpp"

namespace mkr {

struct Stage1LossConfig {
  double lambda1 = 0.1;  // plain L1
  double lambda2 = 1.0;  // multi-kernel filtered L1
  KernelBank bank = load_bank(2);
};

struct Stage2LossConfig {
  double alpha1 = 0.25;
  double alpha2_initial = 1.0;
  double alpha2_decrement_per_epoch = 0.016;
  double acquired_slice_weight = 2.0;
  KernelBank bank = load_bank(3);

  // max(0, alpha2_initial - epoch * decrement); epoch must be >= 0.
  double alpha2(int epoch) const;
};

/// Individual terms of a composite loss; `total` carries the graph.
struct LossTerms {
  Tensor l1;
  Tensor filtered;
  Tensor total;
};

Tensor l1_loss(const Tensor& pred, const Tensor& target,
               const std::optional<Tensor>& weight_map = std::nullopt);

/// Σ_k w_k · mean over the valid region of |F_k ⋆ pred − F_k ⋆ target|.
/// pred/target are [1, H, W] for a 2D bank or [1, D, H, W] for a 3D bank.
/// A weight map, if given, has the full input shape and is cropped to the
/// valid region.
Tensor filtered_l1_loss(const Tensor& pred, const Tensor& target, const KernelBank& bank,
                        const std::optional<Tensor>& weight_map = std::nullopt);

LossTerms stage1_loss(const Tensor& pred, const Tensor& target, const Stage1LossConfig& cfg);

/// α1·L1 + α2(epoch)·Filtered, both terms weighted by depth_weight_map(mask).
LossTerms stage2_loss(const Tensor& pred, const Tensor& target, int epoch,
                      const std::vector<std::uint8_t>& acquired_mask, const Stage2LossConfig& cfg);

/// Per-voxel weight: w_acq on acquired slices, 1 elsewhere, rescaled to mean 1.
/// `shape` is [1, D, H, W] or [D, H, W]; depth is the third axis from the end.
Tensor depth_weight_map(const std::vector<std::uint8_t>& acquired_mask, const Shape& shape,
                        double acquired_weight);

}  // namespace mkr
