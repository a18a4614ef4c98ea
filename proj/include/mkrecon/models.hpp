#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mkrecon/tensor.hpp"

namespace mkr {

struct NamedTensor {
  std::string name;
  Tensor value;
};

/// Ordered, named collection of trainable tensors.
class ParameterSet {
 public:
  void add(std::string name, Tensor value);
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);
  bool contains(const std::string& name) const;

  std::vector<NamedTensor>& entries() { return entries_; }
  const std::vector<NamedTensor>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;

  void zero_grad();
  // Deep copy: fresh leaves with the same values.
  ParameterSet clone() const;

 private:
  std::vector<NamedTensor> entries_;
};

enum class Mode { train, infer };

// ---------------------------------------------------------------------------
// Stage 1: attention-residual U-Net for middle-slice synthesis.

struct UNetConfig {
  int levels = 3;
  int base_channels = 32;
};

struct SliceModel {
  UNetConfig config;
  ParameterSet params;
};

/// Seeded init: conv weights ~ U(-b, b), b = sqrt(6/fan_in), biases 0, and
/// the final 1×1 projection all zeros so the untrained model predicts the
/// average of its inputs.
SliceModel init_slice_model(const UNetConfig& config, std::uint64_t seed);

struct AttentionGateParams {
  Tensor w_gating;  // [inter, C, 1, 1]
  Tensor b_gating;  // [inter]
  Tensor w_skip;    // [inter, C, 1, 1]
  Tensor w_psi;     // [1, inter, 1, 1]
  Tensor b_psi;     // [1]
};

AttentionGateParams attention_gate_params(const ParameterSet& params, const std::string& prefix);

/// Additive attention: skip ⊙ sigmoid(ψ(relu(W_g·gating + W_x·skip))), with
/// the one-channel gate broadcast over the skip channels.
Tensor attention_gate(const Tensor& gating, const Tensor& skip, const AttentionGateParams& p);

/// Middle slice from two [1, H, W] slices: 0.5·(a + b) + U-Net([a; b]).
/// H and W must be divisible by 2^levels and inputs within [0, 1].
/// Infer mode clamps the output to [0, 1].
Tensor slice_forward(const Tensor& slice_a, const Tensor& slice_b, const SliceModel& model, Mode mode);

// ---------------------------------------------------------------------------
// Stage 2: lightweight volumetric refiner.

struct RefineConfig {
  int hidden_channels = 8;
  double alpha = 0.1;
};

struct RefineModel {
  RefineConfig config;
  ParameterSet params;
};

/// Three 3×3×3 convs (1 → hidden → hidden → 1); last layer zero-initialized.
RefineModel init_refine_model(const RefineConfig& config, std::uint64_t seed);

/// Raw refinement R for a [1, D, H, W] volume.
Tensor refine_forward(const Tensor& volume, const RefineModel& model);

/// P = I + alpha·R, clamped to [0, 1] in infer mode.
Tensor apply_refinement(const Tensor& volume, const Tensor& refinement, double alpha, Mode mode);

}  // namespace mkr
