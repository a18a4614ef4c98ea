#pragma once

// Reference implementations and helpers shared by the unit and acceptance
// binaries. Oracles here deliberately avoid the library's code paths: plain
// nested loops, explicit bounds checks, long double accumulation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "mkrecon/rng.hpp"
#include "mkrecon/tensor.hpp"

namespace mkt {

using mkr::Shape;
using mkr::SplitMix64;
using mkr::Tensor;

inline std::vector<double> random_values(SplitMix64& rng, std::size_t n, double lo, double hi) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

inline Tensor random_tensor(SplitMix64& rng, Shape shape, double lo, double hi,
                            bool requires_grad = false) {
  const std::size_t n = mkr::shape_numel(shape);
  return Tensor(std::move(shape), random_values(rng, n, lo, hi), requires_grad);
}

// Values with |v| in [gap, gap + span], random sign. Keeps finite-difference
// probes away from the kink of relu and |.|.
inline Tensor away_from_zero(SplitMix64& rng, Shape shape, double gap, double span,
                             bool requires_grad = false) {
  const std::size_t n = mkr::shape_numel(shape);
  std::vector<double> v(n);
  for (auto& x : v) {
    const double m = gap + span * rng.uniform();
    x = rng.uniform() < 0.5 ? -m : m;
  }
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

inline std::vector<long long> random_ints(SplitMix64& rng, std::size_t n, int lo, int hi) {
  std::vector<long long> v(n);
  for (auto& x : v) x = lo + static_cast<long long>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
  return v;
}

// Cross-correlation with a centered odd kernel on [C_in, (D,) H, W].
// spatial = {D, H, W} (D = 1 for 2D), kspatial likewise.
struct ConvGeometry {
  std::size_t cin, cout;
  std::size_t d, h, w;
  std::size_t kd, kh, kw;
  bool same;
};

template <typename T>
std::vector<T> naive_conv(const std::vector<T>& in, const std::vector<T>& k, const ConvGeometry& g) {
  const long rd = static_cast<long>(g.kd / 2), rh = static_cast<long>(g.kh / 2),
             rw = static_cast<long>(g.kw / 2);
  const long od = g.same ? static_cast<long>(g.d) : static_cast<long>(g.d) - 2 * rd;
  const long oh = g.same ? static_cast<long>(g.h) : static_cast<long>(g.h) - 2 * rh;
  const long ow = g.same ? static_cast<long>(g.w) : static_cast<long>(g.w) - 2 * rw;
  const long off_d = g.same ? 0 : rd, off_h = g.same ? 0 : rh, off_w = g.same ? 0 : rw;
  std::vector<T> out(static_cast<std::size_t>(g.cout * od * oh * ow), T{});
  for (std::size_t oc = 0; oc < g.cout; ++oc)
    for (long z = 0; z < od; ++z)
      for (long y = 0; y < oh; ++y)
        for (long x = 0; x < ow; ++x) {
          T acc{};
          for (std::size_t ic = 0; ic < g.cin; ++ic)
            for (long a = -rd; a <= rd; ++a)
              for (long b = -rh; b <= rh; ++b)
                for (long c = -rw; c <= rw; ++c) {
                  const long iz = z + off_d + a, iy = y + off_h + b, ix = x + off_w + c;
                  if (iz < 0 || iy < 0 || ix < 0 || iz >= static_cast<long>(g.d) ||
                      iy >= static_cast<long>(g.h) || ix >= static_cast<long>(g.w))
                    continue;
                  const std::size_t ii = ((ic * g.d + iz) * g.h + iy) * g.w + ix;
                  const std::size_t ki =
                      (((oc * g.cin + ic) * g.kd + (a + rd)) * g.kh + (b + rh)) * g.kw + (c + rw);
                  acc += in[ii] * k[ki];
                }
          out[static_cast<std::size_t>(((static_cast<long>(oc) * od + z) * oh + y) * ow + x)] = acc;
        }
  return out;
}

// Population statistics in long double, two passes.
struct PairStats {
  long double mx = 0, my = 0, vx = 0, vy = 0, cxy = 0;
};

inline PairStats pair_stats(const std::vector<double>& x, const std::vector<double>& y) {
  PairStats s;
  const long double n = static_cast<long double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    s.mx += x[i];
    s.my += y[i];
  }
  s.mx /= n;
  s.my /= n;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const long double dx = x[i] - s.mx, dy = y[i] - s.my;
    s.vx += dx * dx;
    s.vy += dy * dy;
    s.cxy += dx * dy;
  }
  s.vx /= n;
  s.vy /= n;
  s.cxy /= n;
  return s;
}

inline double ssim_oracle(const std::vector<double>& x, const std::vector<double>& y) {
  const PairStats s = pair_stats(x, y);
  const long double c1 = 1e-4L, c2 = 9e-4L;
  const long double num = (2 * s.mx * s.my + c1) * (2 * s.cxy + c2);
  const long double den = (s.mx * s.mx + s.my * s.my + c1) * (s.vx + s.vy + c2);
  return static_cast<double>(num / den);
}

inline double psnr_oracle(const std::vector<double>& x, const std::vector<double>& y) {
  long double se = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const long double d = static_cast<long double>(x[i]) - y[i];
    se += d * d;
  }
  const long double mse = se / static_cast<long double>(x.size());
  if (mse < 1e-10L) return 100.0;
  return static_cast<double>(10.0L * std::log10(1.0L / mse));
}

// Mean of w·|a − b| by direct summation; w empty means all ones.
inline double mean_abs_oracle(const std::vector<double>& a, const std::vector<double>& b,
                              const std::vector<double>& w = {}) {
  long double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const long double d = std::fabs(static_cast<long double>(a[i]) - b[i]);
    acc += w.empty() ? d : w[i] * d;
  }
  return static_cast<double>(acc / static_cast<long double>(a.size()));
}

// FNV-1a over the little-endian bytes of each double.
inline std::uint64_t hash_values(std::span<const double> v) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (double x : v) {
    std::uint64_t u;
    std::memcpy(&u, &x, 8);
    for (int b = 0; b < 8; ++b) {
      h ^= (u >> (8 * b)) & 0xff;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

inline std::vector<double> to_vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

// ---------------------------------------------------------------------------
// Finite-difference gradient check.

struct GradCheck {
  double worst_rel = 0.0;
  std::size_t worst_input = 0;
};

// Compares backprop of f() against central differences for every input.
// Inputs must be leaves with requires_grad. Relative error per input is
// ||g_a − g_n|| / max(||g_a||, ||g_n||), both norms over all entries; an input
// whose two gradients are below 1e-12 in norm counts as agreeing.
inline GradCheck check_gradients(std::vector<Tensor> inputs, const std::function<Tensor()>& f,
                                 double eps = 1e-5) {
  for (auto& t : inputs) t.zero_grad();
  Tensor loss = f();
  mkr::backprop(loss);
  GradCheck result;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor& t = inputs[k];
    std::vector<double> analytic(t.size(), 0.0);
    if (!t.grad().empty()) analytic.assign(t.grad().begin(), t.grad().end());
    std::vector<double> numeric(t.size());
    {
      mkr::NoGradGuard guard;
      auto v = t.mutable_values();
      for (std::size_t i = 0; i < v.size(); ++i) {
        const double orig = v[i];
        v[i] = orig + eps;
        const double up = f().item();
        v[i] = orig - eps;
        const double down = f().item();
        v[i] = orig;
        numeric[i] = (up - down) / (2.0 * eps);
      }
    }
    long double diff = 0, na = 0, nn = 0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      diff += (analytic[i] - numeric[i]) * static_cast<long double>(analytic[i] - numeric[i]);
      na += analytic[i] * static_cast<long double>(analytic[i]);
      nn += numeric[i] * static_cast<long double>(numeric[i]);
    }
    const double scale = static_cast<double>(std::sqrt(std::max(na, nn)));
    const double rel = scale < 1e-12 ? 0.0 : static_cast<double>(std::sqrt(diff)) / scale;
    if (rel > result.worst_rel) {
      result.worst_rel = rel;
      result.worst_input = k;
    }
  }
  for (auto& t : inputs) t.zero_grad();
  return result;
}

// ---------------------------------------------------------------------------
// Files

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("mkrecon_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::vector<double> read_f64_file(const std::filesystem::path& p) {
  const std::string bytes = read_file(p);
  std::vector<double> v(bytes.size() / 8);
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::uint64_t u = 0;
    for (int b = 7; b >= 0; --b) u = (u << 8) | static_cast<unsigned char>(bytes[i * 8 + b]);
    std::memcpy(&v[i], &u, 8);
  }
  return v;
}

inline std::filesystem::path test_data_dir() { return MKR_TEST_DATA_DIR; }

// Hand-transcribed kernel matrices and raw weights, data/kernel_banks.txt.
struct KernelRow {
  int dims = 0;
  std::string name;
  double raw_weight = 0.0;
  std::vector<double> entries;
};

inline std::vector<KernelRow> kernel_table(int dims) {
  std::ifstream in(test_data_dir() / "kernel_banks.txt");
  std::vector<KernelRow> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    KernelRow r;
    ss >> r.dims >> r.name >> r.raw_weight;
    double v;
    while (ss >> v) r.entries.push_back(v);
    if (r.dims == dims) rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace mkt
