#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "mkrecon/tensor.hpp"

namespace mkr {

struct BankKernel {
  std::string name;
  // Entries as printed, row-major; 3D kernels are depth-slice major
  // (front slice first).
  std::vector<double> raw;
  // Kernel applied by the loss: [1, 1, 3, 3] or [1, 1, 3, 3, 3].
  Tensor kernel;
  double raw_weight = 0.0;
  double weight = 0.0;
};

/// Fixed filter bank for the multi-kernel L1 loss. Immutable once built.
struct KernelBank {
  int dims = 2;
  double epsilon = 1e-6;
  bool normalized = false;
  std::vector<BankKernel> kernels;

  std::size_t size() const { return kernels.size(); }
  const BankKernel& at(const std::string& name) const;
};

/// Unnormalized bank: kernels and weights exactly as published.
///   2D: sobel_x, sobel_y, diag1, diag2, laplacian, checkerboard
///   3D: sobel_x, sobel_y, sobel_z, laplacian, diag1, diag2, gaussian,
///       highpass, log, cross_diag, checkerboard
KernelBank raw_bank(int dims);

/// Each kernel divided by (Σ|F| + ε); weights divided by their sum.
/// Throws on an all-zero kernel or a non-positive weight sum.
KernelBank normalize_bank(const KernelBank& bank);

/// raw_bank followed by normalize_bank.
KernelBank load_bank(int dims);

/// Plain-text dump: one block per kernel with name, weights and matrix rows.
void write_bank_text(const KernelBank& bank, std::ostream& os);

}  // namespace mkr
