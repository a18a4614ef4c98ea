#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "doctest.h"
#include "mkrecon/models.hpp"
#include "support.hpp"

using namespace mkr;

namespace {

bool same_params(const ParameterSet& a, const ParameterSet& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a.entries()[i].name != b.entries()[i].name) return false;
    if (mkt::to_vec(a.entries()[i].value) != mkt::to_vec(b.entries()[i].value)) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("init is seeded") {
  const UNetConfig cfg{2, 4};
  CHECK(same_params(init_slice_model(cfg, 7).params, init_slice_model(cfg, 7).params));
  CHECK_FALSE(same_params(init_slice_model(cfg, 7).params, init_slice_model(cfg, 8).params));
  const RefineConfig rc{4, 0.1};
  const RefineModel r = init_refine_model(rc, 3);
  CHECK(same_params(r.params, init_refine_model(rc, 3).params));
  CHECK_FALSE(same_params(r.params, init_refine_model(rc, 4).params));
  for (double v : r.params.get("conv3.w").values()) CHECK(v == 0.0);
  for (double v : r.params.get("conv3.b").values()) CHECK(v == 0.0);
  const SliceModel s = init_slice_model(cfg, 7);
  for (double v : s.params.get("head.w").values()) CHECK(v == 0.0);

  // Uniform bound sqrt(6 / fan_in) on the first conv: fan_in = 2·3·3.
  const double bound = std::sqrt(6.0 / 18.0);
  double maxabs = 0.0;
  for (double v : s.params.get("enc0.conv1.w").values()) maxabs = std::max(maxabs, std::abs(v));
  CHECK(maxabs <= bound);
  CHECK(maxabs > 0.5 * bound);
  CHECK(s.params.get("enc0.conv1.w").shape() == Shape{4, 2, 3, 3});
  CHECK_THROWS(init_slice_model({0, 4}, 1));
  CHECK_THROWS(init_refine_model({0, 0.1}, 1));
}

TEST_CASE("parameter set") {
  ParameterSet ps;
  ps.add("a", Tensor({2, 3}, 1.0, true));
  ps.add("b", Tensor({4}, 2.0, true));
  CHECK(ps.scalar_count() == 10);
  CHECK(ps.contains("a"));
  CHECK_FALSE(ps.contains("c"));
  CHECK_THROWS(ps.get("c"));
  CHECK_THROWS(ps.add("a", Tensor({1}, 0.0)));
  ParameterSet c = ps.clone();
  c.get("a").mutable_values()[0] = 5.0;
  CHECK(ps.get("a")[0] == 1.0);
}

TEST_CASE("attention gate") {
  SplitMix64 rng(5);
  const std::size_t ch = 3, inter = 2;
  Tensor gating = mkt::random_tensor(rng, {ch, 4, 4}, -1, 1);
  Tensor skip = mkt::random_tensor(rng, {ch, 4, 4}, -1, 1);
  AttentionGateParams p{mkt::random_tensor(rng, {inter, ch, 1, 1}, -1, 1), mkt::random_tensor(rng, {inter}, -1, 1),
                        mkt::random_tensor(rng, {inter, ch, 1, 1}, -1, 1), mkt::random_tensor(rng, {1, inter, 1, 1}, -1, 1),
                        Tensor({1}, 0.0)};
  Tensor out = attention_gate(gating, skip, p);
  CHECK(out.shape() == skip.shape());
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(std::abs(out[i]) <= std::abs(skip[i]));

  p.w_psi = Tensor({1, inter, 1, 1}, 0.0);
  p.b_psi = Tensor({1}, -60.0);
  for (double v : mkt::to_vec(attention_gate(gating, skip, p))) CHECK(std::abs(v) < 1e-20);
  p.b_psi = Tensor({1}, 60.0);
  Tensor open = attention_gate(gating, skip, p);
  for (std::size_t i = 0; i < open.size(); ++i) CHECK(open[i] == doctest::Approx(skip[i]).epsilon(1e-15));
  CHECK_THROWS_AS(attention_gate(Tensor({ch, 2, 4}, 0.0), skip, p), std::invalid_argument);
}

TEST_CASE("slice_forward") {
  SplitMix64 rng(6);
  const SliceModel m = init_slice_model({2, 4}, 11);
  Tensor a = mkt::random_tensor(rng, {1, 8, 8}, 0, 1);
  Tensor b = mkt::random_tensor(rng, {1, 8, 8}, 0, 1);
  for (Mode mode : {Mode::train, Mode::infer}) {
    Tensor out = slice_forward(a, b, m, mode);
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == 0.5 * (a[i] + b[i]));
  }
  // Same input twice with zero delta returns the input.
  Tensor same = slice_forward(a, a, m, Mode::infer);
  CHECK(mkt::to_vec(same) == mkt::to_vec(a));

  CHECK_THROWS_AS(slice_forward(Tensor({1, 6, 8}, 0.5), Tensor({1, 6, 8}, 0.5), m, Mode::infer),
                  std::invalid_argument);
  CHECK_THROWS_AS(slice_forward(Tensor({1, 8, 8}, 1.5), b, m, Mode::infer), std::invalid_argument);

  // With a random head the network is order-sensitive.
  SliceModel r = init_slice_model({2, 4}, 11);
  SplitMix64 hr(99);
  for (auto& v : r.params.get("head.w").mutable_values()) v = hr.uniform(-0.5, 0.5);
  Tensor ab = slice_forward(a, b, r, Mode::train);
  Tensor ba = slice_forward(b, a, r, Mode::train);
  CHECK(mkt::to_vec(ab) != mkt::to_vec(ba));
  const std::uint64_t h_ab = mkt::hash_values(ab.values());
  const std::uint64_t h_ba = mkt::hash_values(ba.values());
  CHECK(h_ab == 0xaf0778f3b6ac78f4ULL);
  CHECK(h_ba == 0x6aa788e3429d54faULL);
}

TEST_CASE("refiner") {
  SplitMix64 rng(7);
  const RefineModel zero = init_refine_model({4, 0.1}, 2);
  Tensor vol = mkt::random_tensor(rng, {1, 5, 6, 7}, 0, 1);
  for (double v : mkt::to_vec(refine_forward(vol, zero))) CHECK(v == 0.0);

  RefineModel r = init_refine_model({4, 0.1}, 2);
  SplitMix64 hr(5);
  for (auto& v : r.params.get("conv3.w").mutable_values()) v = hr.uniform(-0.5, 0.5);
  for (auto& v : r.params.get("conv1.b").mutable_values()) v = hr.uniform(0, 0.5);
  Tensor c({1, 9, 9, 9}, 0.4);
  Tensor rc = refine_forward(c, r);
  // Three 3×3×3 layers: voxels at distance ≥ 3 from every border see no padding.
  const double ref = rc[(4 * 9 + 4) * 9 + 4];
  CHECK(ref != 0.0);
  for (std::size_t z = 3; z < 6; ++z)
    for (std::size_t y = 3; y < 6; ++y)
      for (std::size_t x = 3; x < 6; ++x) CHECK(rc[(z * 9 + y) * 9 + x] == doctest::Approx(ref).epsilon(1e-14));

  Tensor rv = refine_forward(vol, r);
  CHECK(mkt::hash_values(rv.values()) == 0xd41809837cf20e59ULL);
  CHECK_THROWS_AS(refine_forward(Tensor({2, 5, 6, 7}, 0.0), r), std::invalid_argument);
}

TEST_CASE("apply_refinement") {
  SplitMix64 rng(8);
  Tensor vol = mkt::random_tensor(rng, {1, 4, 5, 6}, 0, 1);
  Tensor r = mkt::random_tensor(rng, {1, 4, 5, 6}, -1, 1);
  CHECK(mkt::to_vec(apply_refinement(vol, r, 0.0, Mode::infer)) == mkt::to_vec(vol));
  CHECK(mkt::to_vec(apply_refinement(vol, Tensor({1, 4, 5, 6}, 0.0), 0.1, Mode::train)) == mkt::to_vec(vol));
  Tensor p = apply_refinement(Tensor({1, 2, 2, 2}, 0.5), Tensor({1, 2, 2, 2}, 1.0), 0.1, Mode::infer);
  for (double v : p.values()) CHECK(v == doctest::Approx(0.6).epsilon(1e-15));
  Tensor clipped = apply_refinement(Tensor({1, 2, 2, 2}, 0.95), Tensor({1, 2, 2, 2}, 1.0), 0.1, Mode::infer);
  for (double v : clipped.values()) CHECK(v == 1.0);
  CHECK_THROWS_AS(apply_refinement(vol, Tensor({1, 4, 5, 5}, 0.0), 0.1, Mode::train), std::invalid_argument);
}

TEST_CASE("model gradients match finite differences") {
  SplitMix64 rng(9);
  SliceModel m = init_slice_model({1, 2}, 4);
  for (auto& v : m.params.get("head.w").mutable_values()) v = rng.uniform(-0.5, 0.5);
  Tensor a = mkt::random_tensor(rng, {1, 4, 4}, 0.2, 0.8);
  Tensor b = mkt::random_tensor(rng, {1, 4, 4}, 0.2, 0.8);
  Tensor w = mkt::random_tensor(rng, {1, 4, 4}, -1, 1);
  std::vector<Tensor> params;
  for (auto& e : m.params.entries()) params.push_back(e.value);
  CHECK(mkt::check_gradients(params, [&] { return sum(mul(slice_forward(a, b, m, Mode::train), w)); }).worst_rel < 1e-4);

  RefineModel r = init_refine_model({2, 0.1}, 4);
  for (auto& v : r.params.get("conv3.w").mutable_values()) v = rng.uniform(-0.5, 0.5);
  Tensor vol = mkt::random_tensor(rng, {1, 3, 4, 4}, 0, 1);
  Tensor wv = mkt::random_tensor(rng, {1, 3, 4, 4}, -1, 1);
  std::vector<Tensor> rp;
  for (auto& e : r.params.entries()) rp.push_back(e.value);
  CHECK(mkt::check_gradients(rp, [&] { return sum(mul(refine_forward(vol, r), wv)); }).worst_rel < 1e-4);
}
