#include "mkrecon/kernels.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>
#include <stdexcept>

namespace mkr {

namespace {

using Rows = std::vector<double>;

// A 3D kernel given as three identical 3×3 depth slices.
Rows repeat3(const Rows& slice) {
  Rows out;
  for (int i = 0; i < 3; ++i) out.insert(out.end(), slice.begin(), slice.end());
  return out;
}

Rows stack3(const Rows& front, const Rows& middle, const Rows& back) {
  Rows out(front);
  out.insert(out.end(), middle.begin(), middle.end());
  out.insert(out.end(), back.begin(), back.end());
  return out;
}

Shape kernel_shape(int dims) {
  return dims == 2 ? Shape{1, 1, 3, 3} : Shape{1, 1, 3, 3, 3};
}

BankKernel make_kernel(int dims, std::string name, Rows raw, double weight) {
  BankKernel k;
  k.name = std::move(name);
  k.kernel = Tensor(kernel_shape(dims), raw);
  k.raw = std::move(raw);
  k.raw_weight = weight;
  k.weight = weight;
  return k;
}

KernelBank bank_2d() {
  const Rows horizontal_edge{1, 2, 1, 0, 0, 0, -1, -2, -1};
  const Rows vertical_edge{1, 0, -1, 2, 0, -2, 1, 0, -1};
  const Rows diag1{0, 1, 2, -1, 0, 1, -2, -1, 0};
  const Rows diag2{2, 1, 0, 1, 0, -1, 0, -1, -2};
  const Rows laplacian{0, 1, 0, 1, -4, 1, 0, 1, 0};
  const Rows checkerboard{1, -1, 1, -1, 1, -1, 1, -1, 1};

  KernelBank bank;
  bank.dims = 2;
  bank.kernels = {
      make_kernel(2, "sobel_x", horizontal_edge, 0.1),
      make_kernel(2, "sobel_y", vertical_edge, 0.1),
      make_kernel(2, "diag1", diag1, 0.5),
      make_kernel(2, "diag2", diag2, 0.5),
      make_kernel(2, "laplacian", laplacian, 2.0),
      make_kernel(2, "checkerboard", checkerboard, 0.05),
  };
  return bank;
}

KernelBank bank_3d() {
  const Rows sobel_x = repeat3({-1, 0, 1, -2, 0, 2, -1, 0, 1});
  const Rows sobel_y = repeat3({1, 2, 1, 0, 0, 0, -1, -2, -1});
  const Rows sobel_z = stack3({1, 1, 1, 1, 1, 1, 1, 1, 1}, {0, 0, 0, 0, 0, 0, 0, 0, 0},
                              {-1, -1, -1, -1, -1, -1, -1, -1, -1});
  const Rows laplacian = stack3({0, 1, 0, 1, -6, 1, 0, 1, 0}, {1, -6, 1, -6, 24, -6, 1, -6, 1},
                                {0, 1, 0, 1, -6, 1, 0, 1, 0});
  const Rows diag1 = repeat3({0, 1, 2, -1, 0, 1, -2, -1, 0});
  const Rows diag2 = repeat3({2, 1, 0, 1, 0, -1, 0, -1, -2});
  const Rows gaussian =
      stack3({1, 2, 1, 2, 4, 2, 1, 2, 1}, {2, 4, 2, 4, 8, 4, 2, 4, 2}, {1, 2, 1, 2, 4, 2, 1, 2, 1});
  const Rows highpass = repeat3({-1, -1, -1, -1, 8, -1, -1, -1, -1});
  const Rows log = stack3({0, 0, -1, 0, -1, -2, -1, -2, -1}, {0, -1, -2, -1, 16, -2, -2, -1, 0},
                          {-1, -2, -1, -2, -1, 0, 0, 0, 0});
  const Rows cross_diag = repeat3({1, 0, -1, 0, 0, 0, -1, 0, 1});
  const Rows checkerboard = stack3({1, -1, 1, -1, 1, -1, 1, -1, 1},
                                   {-1, 1, -1, 1, -1, 1, -1, 1, -1},
                                   {1, -1, 1, -1, 1, -1, 1, -1, 1});

  KernelBank bank;
  bank.dims = 3;
  bank.kernels = {
      make_kernel(3, "sobel_x", sobel_x, 1.0),
      make_kernel(3, "sobel_y", sobel_y, 1.0),
      make_kernel(3, "sobel_z", sobel_z, 1.0),
      make_kernel(3, "laplacian", laplacian, 2.0),
      make_kernel(3, "diag1", diag1, 0.8),
      make_kernel(3, "diag2", diag2, 0.8),
      make_kernel(3, "gaussian", gaussian, 0.5),
      make_kernel(3, "highpass", highpass, 1.2),
      make_kernel(3, "log", log, 1.5),
      make_kernel(3, "cross_diag", cross_diag, 0.8),
      make_kernel(3, "checkerboard", checkerboard, 0.5),
  };
  return bank;
}

}  // namespace

const BankKernel& KernelBank::at(const std::string& name) const {
  for (const auto& k : kernels) {
    if (k.name == name) return k;
  }
  throw std::out_of_range("KernelBank: no kernel named " + name);
}

KernelBank raw_bank(int dims) {
  if (dims == 2) return bank_2d();
  if (dims == 3) return bank_3d();
  throw std::invalid_argument("raw_bank: dims must be 2 or 3");
}

KernelBank normalize_bank(const KernelBank& bank) {
  KernelBank out = bank;
  double weight_sum = 0.0;
  for (const auto& k : bank.kernels) {
    if (k.raw_weight < 0.0) throw std::invalid_argument("normalize_bank: negative weight for " + k.name);
    weight_sum += k.raw_weight;
  }
  if (!(weight_sum > 0.0)) throw std::invalid_argument("normalize_bank: weights sum to zero");

  for (auto& k : out.kernels) {
    double abs_sum = 0.0;
    for (double v : k.raw) abs_sum += std::abs(v);
    if (abs_sum == 0.0) throw std::invalid_argument("normalize_bank: all-zero kernel " + k.name);
    const double denom = abs_sum + bank.epsilon;
    std::vector<double> scaled(k.raw.size());
    for (std::size_t i = 0; i < scaled.size(); ++i) scaled[i] = k.raw[i] / denom;
    k.kernel = Tensor(k.kernel.shape(), std::move(scaled));
    k.weight = k.raw_weight / weight_sum;
  }
  out.normalized = true;
  return out;
}

KernelBank load_bank(int dims) { return normalize_bank(raw_bank(dims)); }

void write_bank_text(const KernelBank& bank, std::ostream& os) {
  os << "# dims " << bank.dims << " kernels " << bank.size() << " normalized "
     << (bank.normalized ? "yes" : "no") << " epsilon " << bank.epsilon << "\n";
  const auto old_precision = os.precision(17);
  for (const auto& k : bank.kernels) {
    os << "kernel " << k.name << " raw_weight " << k.raw_weight << " weight " << k.weight << "\n";
    const auto v = k.kernel.values();
    const std::size_t depth = bank.dims == 3 ? 3 : 1;
    for (std::size_t d = 0; d < depth; ++d) {
      if (depth > 1) os << "  slice " << d << "\n";
      for (std::size_t r = 0; r < 3; ++r) {
        os << "   ";
        for (std::size_t c = 0; c < 3; ++c) os << " " << v[(d * 3 + r) * 3 + c];
        os << "\n";
      }
    }
  }
  os.precision(old_precision);
}

}  // namespace mkr
