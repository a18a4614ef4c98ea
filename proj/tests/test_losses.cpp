#include <cmath>
#include <stdexcept>

#include "doctest.h"
#include "mkrecon/losses.hpp"
#include "support.hpp"

using namespace mkr;

namespace {

// Filtered L1 by explicit nested loops over the transcribed kernels,
// normalized here independently of the library.
double filtered_oracle(const std::vector<double>& p, const std::vector<double>& t, int dims, std::size_t d,
                       std::size_t h, std::size_t w, const std::vector<double>& weight_map = {}) {
  const auto table = mkt::kernel_table(dims);
  double wsum = 0.0;
  for (const auto& r : table) wsum += r.raw_weight;
  const std::size_t kd = dims == 3 ? 3 : 1;
  long double total = 0;
  for (const auto& r : table) {
    double s = 0.0;
    for (double v : r.entries) s += std::abs(v);
    std::vector<double> k(r.entries.size());
    for (std::size_t i = 0; i < k.size(); ++i) k[i] = r.entries[i] / (s + 1e-6);
    mkt::ConvGeometry g{1, 1, d, h, w, kd, 3, 3, false};
    const auto fp = mkt::naive_conv(p, k, g);
    const auto ft = mkt::naive_conv(t, k, g);
    std::vector<double> wc;
    if (!weight_map.empty()) {
      const std::size_t dz = dims == 3 ? 1 : 0;
      for (std::size_t z = dz; z < d - dz; ++z)
        for (std::size_t y = 1; y + 1 < h; ++y)
          for (std::size_t x = 1; x + 1 < w; ++x) wc.push_back(weight_map[(z * h + y) * w + x]);
    }
    total += (r.raw_weight / wsum) * static_cast<long double>(mkt::mean_abs_oracle(fp, ft, wc));
  }
  return static_cast<double>(total);
}

}  // namespace

TEST_CASE("l1_loss") {
  SplitMix64 rng(1);
  Tensor x = mkt::random_tensor(rng, {1, 16, 16}, 0, 1);
  CHECK(l1_loss(x, x).item() == 0.0);
  CHECK(l1_loss(Tensor({1, 8, 8}, 0.25), Tensor({1, 8, 8}, 0.75)).item() == 0.5);
  Tensor y = mkt::random_tensor(rng, {1, 16, 16}, 0, 1);
  CHECK(l1_loss(x, y).item() ==
        doctest::Approx(mkt::mean_abs_oracle(mkt::to_vec(x), mkt::to_vec(y))).epsilon(1e-14));
  CHECK_THROWS_AS(l1_loss(x, Tensor({1, 16, 15}, 0.0)), std::invalid_argument);
}

TEST_CASE("filtered_l1_loss") {
  SplitMix64 rng(2);
  const KernelBank b2 = load_bank(2);
  const KernelBank b3 = load_bank(3);
  Tensor x = mkt::random_tensor(rng, {1, 8, 8}, 0, 1);
  CHECK(filtered_l1_loss(x, x, b2).item() == 0.0);
  CHECK_THROWS_AS(filtered_l1_loss(x, x, b3), std::invalid_argument);
  CHECK_THROWS_AS(filtered_l1_loss(Tensor({1, 2, 8}, 0.0), Tensor({1, 2, 8}, 0.0), b2), std::invalid_argument);

  // Shift by a constant: zero-sum kernels see no difference.
  KernelBank zero_sum = b2;
  zero_sum.kernels.pop_back();  // checkerboard sums to 1
  Tensor shifted({1, 8, 8}, mkt::to_vec(x));
  for (auto& v : shifted.mutable_values()) v += 0.3;
  CHECK(filtered_l1_loss(x, shifted, zero_sum).item() < 1e-15);
  CHECK(filtered_l1_loss(x, shifted, b2).item() > 0.0);

  Tensor y = mkt::random_tensor(rng, {1, 8, 8}, 0, 1);
  const double oracle = filtered_oracle(mkt::to_vec(x), mkt::to_vec(y), 2, 1, 8, 8);
  CHECK(filtered_l1_loss(x, y, b2).item() == doctest::Approx(oracle).epsilon(1e-13));

  Tensor a = mkt::random_tensor(rng, {1, 5, 6, 7}, 0, 1);
  Tensor b = mkt::random_tensor(rng, {1, 5, 6, 7}, 0, 1);
  Tensor wm = mkt::random_tensor(rng, {1, 5, 6, 7}, 0.5, 2);
  const double o3 = filtered_oracle(mkt::to_vec(a), mkt::to_vec(b), 3, 5, 6, 7, mkt::to_vec(wm));
  CHECK(filtered_l1_loss(a, b, b3, wm).item() == doctest::Approx(o3).epsilon(1e-13));
}

TEST_CASE("stage1_loss") {
  SplitMix64 rng(3);
  Tensor x = mkt::random_tensor(rng, {1, 12, 12}, 0, 1);
  Tensor y = mkt::random_tensor(rng, {1, 12, 12}, 0, 1);
  Stage1LossConfig cfg;
  CHECK(stage1_loss(x, x, cfg).total.item() == 0.0);

  Stage1LossConfig l1_only;
  l1_only.lambda1 = 1.0;
  l1_only.lambda2 = 0.0;
  CHECK(stage1_loss(x, y, l1_only).total.item() == l1_loss(x, y).item());

  const auto t = stage1_loss(x, y, cfg);
  const double l1 = mkt::mean_abs_oracle(mkt::to_vec(x), mkt::to_vec(y));
  const double f = filtered_oracle(mkt::to_vec(x), mkt::to_vec(y), 2, 1, 12, 12);
  CHECK(t.l1.item() == doctest::Approx(l1).epsilon(1e-14));
  CHECK(t.filtered.item() == doctest::Approx(f).epsilon(1e-13));
  CHECK(t.total.item() == doctest::Approx(0.1 * l1 + 1.0 * f).epsilon(1e-13));

  Stage1LossConfig bad;
  bad.lambda1 = -1.0;
  CHECK_THROWS_AS(stage1_loss(x, y, bad), std::invalid_argument);
}

TEST_CASE("alpha2 schedule and stage2_loss") {
  Stage2LossConfig cfg;
  CHECK(cfg.alpha2(0) == 1.0);
  CHECK(cfg.alpha2(10) == doctest::Approx(0.84).epsilon(1e-15));
  CHECK(cfg.alpha2(49) == doctest::Approx(0.216).epsilon(1e-14));
  CHECK(cfg.alpha2(62) == doctest::Approx(0.008).epsilon(1e-12));
  CHECK(cfg.alpha2(63) == 0.0);
  CHECK(cfg.alpha2(1000) == 0.0);
  CHECK_THROWS_AS(cfg.alpha2(-1), std::invalid_argument);

  SplitMix64 rng(4);
  Tensor x = mkt::random_tensor(rng, {1, 16, 16, 16}, 0, 1);
  Tensor y = mkt::random_tensor(rng, {1, 16, 16, 16}, 0, 1);
  std::vector<std::uint8_t> mask(16, 0);
  for (std::size_t i = 0; i < 16; i += 4) mask[i] = 1;
  for (int e : {0, 10, 70}) CHECK(stage2_loss(x, x, e, mask, cfg).total.item() == 0.0);

  const auto t = stage2_loss(x, y, 0, mask, cfg);
  // Weight map by hand: 4 acquired slices at w=2, 12 at 1; mean 20/16.
  std::vector<double> w(16 * 256);
  for (std::size_t d = 0; d < 16; ++d)
    for (std::size_t i = 0; i < 256; ++i) w[d * 256 + i] = (mask[d] ? 2.0 : 1.0) / (20.0 / 16.0);
  const double l1 = mkt::mean_abs_oracle(mkt::to_vec(x), mkt::to_vec(y), w);
  const double f = filtered_oracle(mkt::to_vec(x), mkt::to_vec(y), 3, 16, 16, 16, w);
  CHECK(t.l1.item() == doctest::Approx(l1).epsilon(1e-13));
  CHECK(t.filtered.item() == doctest::Approx(f).epsilon(1e-12));
  CHECK(t.total.item() == doctest::Approx(0.25 * l1 + f).epsilon(1e-12));
  const auto t10 = stage2_loss(x, y, 10, mask, cfg);
  CHECK(t10.total.item() == doctest::Approx(0.25 * l1 + 0.84 * f).epsilon(1e-12));
}

TEST_CASE("depth_weight_map") {
  const Shape s{1, 9, 2, 3};
  auto values = [](const Tensor& t) { return mkt::to_vec(t); };
  for (double v : values(depth_weight_map(std::vector<std::uint8_t>(9, 1), s, 2.0))) CHECK(v == doctest::Approx(1.0).epsilon(1e-15));
  std::vector<std::uint8_t> m(9, 0);
  m[0] = m[8] = 1;
  for (double v : values(depth_weight_map(m, s, 1.0))) CHECK(v == 1.0);
  const Tensor w = depth_weight_map(m, s, 2.0);
  CHECK(w[0] == doctest::Approx(2.0 / (11.0 / 9.0)).epsilon(1e-15));
  CHECK(w[8 * 6] == doctest::Approx(2.0 / (11.0 / 9.0)).epsilon(1e-15));
  CHECK(w[6] == doctest::Approx(1.0 / (11.0 / 9.0)).epsilon(1e-15));
  double sum = 0.0;
  for (double v : w.values()) sum += v;
  CHECK(sum / static_cast<double>(w.size()) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK_THROWS_AS(depth_weight_map(std::vector<std::uint8_t>(8, 1), s, 2.0), std::invalid_argument);
  CHECK_THROWS_AS(depth_weight_map(m, s, 0.5), std::invalid_argument);
}

TEST_CASE("loss gradients match finite differences") {
  SplitMix64 rng(77);
  Stage1LossConfig s1;
  Stage2LossConfig s2;
  for (int seed = 0; seed < 3; ++seed) {
    Tensor p = mkt::random_tensor(rng, {1, 7, 8}, 0, 1, true);
    Tensor t = mkt::random_tensor(rng, {1, 7, 8}, 0, 1);
    CHECK(mkt::check_gradients({p}, [&] { return l1_loss(p, t); }, 1e-7).worst_rel < 1e-4);
    CHECK(mkt::check_gradients({p}, [&] { return filtered_l1_loss(p, t, s1.bank); }, 1e-7).worst_rel < 1e-4);
    CHECK(mkt::check_gradients({p}, [&] { return stage1_loss(p, t, s1).total; }, 1e-7).worst_rel < 1e-4);
    Tensor p3 = mkt::random_tensor(rng, {1, 5, 5, 6}, 0, 1, true);
    Tensor t3 = mkt::random_tensor(rng, {1, 5, 5, 6}, 0, 1);
    std::vector<std::uint8_t> mask{1, 0, 1, 0, 1};
    CHECK(mkt::check_gradients({p3}, [&] { return stage2_loss(p3, t3, 3, mask, s2).total; }, 1e-7).worst_rel < 1e-4);
  }
}
