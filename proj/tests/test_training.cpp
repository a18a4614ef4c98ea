#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "doctest.h"
#include "mkrecon/data.hpp"
#include "mkrecon/error.hpp"
#include "mkrecon/pipeline.hpp"
#include "mkrecon/training.hpp"
#include "support.hpp"

using namespace mkr;

namespace {

std::vector<Volume> phantoms(std::uint64_t first_seed, std::size_t count, std::size_t depth = 33) {
  PhantomOptions o;
  o.depth = depth;
  std::vector<Volume> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(preprocess(generate_phantom(first_seed + i, o), 32, 32));
  return out;
}

ParameterSet scalar_param(double x) {
  ParameterSet ps;
  ps.add("x", Tensor({1}, std::vector<double>{x}, true));
  return ps;
}

}  // namespace

TEST_CASE("adam") {
  ParameterSet ps = scalar_param(0.5);
  AdamState s = make_adam(ps, 1e-3);
  adam_step(ps, {{0.0}}, s);
  CHECK(ps.get("x")[0] == 0.5);
  CHECK(s.step == 1);

  ParameterSet one = scalar_param(0.0);
  AdamState s1 = make_adam(one, 1e-3);
  adam_step(one, {{1.0}}, s1);
  // m̂ = 1, v̂ = 1: Δ = −lr·1/(1 + ε).
  CHECK(one.get("x")[0] == doctest::Approx(-1e-3 / (1.0 + 1e-8)).epsilon(1e-12));

  ParameterSet q = scalar_param(1.0);
  AdamState sq = make_adam(q, 1e-2);
  int steps = 0;
  while (steps < 5000 && std::abs(q.get("x")[0]) >= 1e-3) {
    adam_step(q, {{2.0 * q.get("x")[0]}}, sq);
    ++steps;
  }
  MESSAGE("x^2 converged after " << steps << " steps");
  CHECK(std::abs(q.get("x")[0]) < 1e-3);

  ParameterSet n = scalar_param(0.25);
  AdamState sn = make_adam(n, 1e-3);
  CHECK_THROWS_AS(adam_step(n, {{std::nan("")}}, sn), NumericError);
  CHECK(n.get("x")[0] == 0.25);
  CHECK(sn.step == 0);
  CHECK_THROWS_AS(adam_step(n, {{1.0, 2.0}}, sn), std::invalid_argument);

  // Accumulated-gradient overload agrees with the explicit one.
  ParameterSet a = scalar_param(0.3), b = scalar_param(0.3);
  AdamState sa = make_adam(a, 1e-2), sb = make_adam(b, 1e-2);
  backprop(mul(a.get("x"), a.get("x")));
  adam_step(a, sa);
  adam_step(b, {{0.6}}, sb);
  CHECK(a.get("x")[0] == b.get("x")[0]);
}

TEST_CASE("plateau scheduler") {
  PlateauState inc;
  inc.lr = 1e-3;
  for (int i = 0; i < 30; ++i) CHECK_FALSE(plateau_step(inc, 20.0 + i));
  CHECK(inc.lr == 1e-3);

  PlateauState flat;
  flat.lr = 1e-3;
  flat.best = 25.0;
  for (int i = 1; i <= 6; ++i) {
    const bool cut = plateau_step(flat, 25.0);
    CHECK(cut == (i == 6));
  }
  CHECK(flat.lr == 5e-4);
  CHECK(flat.bad_evals == 0);

  // Fresh state: the first value improves on −inf, halving follows six later.
  PlateauState fresh;
  fresh.lr = 1e-3;
  int first_cut = 0;
  for (int i = 1; i <= 20 && first_cut == 0; ++i)
    if (plateau_step(fresh, 25.0)) first_cut = i;
  CHECK(first_cut == 7);

  PlateauState floor;
  floor.lr = 1e-6;
  floor.best = 30.0;
  for (int i = 0; i < 20; ++i) plateau_step(floor, 10.0);
  CHECK(floor.lr == 1e-6);
  PlateauState near;
  near.lr = 1.5e-6;
  near.best = 30.0;
  for (int i = 0; i < 6; ++i) plateau_step(near, 10.0);
  CHECK(near.lr == 1e-6);
}

TEST_CASE("loss log round trip") {
  std::vector<LossLogEntry> log{{0, 0, 0.1, 0.2, 0.3, 1e-4}, {1, 0, 1.0 / 3.0, 0.25, 0.7, 5e-5}};
  std::stringstream ss;
  write_loss_log(log, ss);
  CHECK(ss.str().rfind("step,epoch,l1,filtered,total,lr\n", 0) == 0);
  const auto back = read_loss_log(ss);
  REQUIRE(back.size() == 2);
  CHECK(back[1].l1 == log[1].l1);
  CHECK(back[1].lr == log[1].lr);
  std::stringstream bad("nope\n1,2\n");
  CHECK_THROWS(read_loss_log(bad));
}

TEST_CASE("validation split") {
  std::vector<std::string> ids;
  for (int i = 0; i < 200; ++i) ids.push_back("phantom_" + std::to_string(i));
  const auto s = validation_split(ids);
  CHECK(s == validation_split(ids));
  std::size_t n = 0;
  for (bool b : s) n += b ? 1 : 0;
  CHECK(n > 5);
  CHECK(n < 40);
  const auto two = validation_split({"a", "b"});
  CHECK(two[0] != two[1]);
  CHECK(validation_split({"only"}) == std::vector<bool>{false});
}

TEST_CASE("stage 1 training is deterministic") {
  const auto train = phantoms(100, 2, 17);
  const auto val = phantoms(900, 1, 17);
  Stage1TrainConfig cfg;
  cfg.arch = {1, 2};
  cfg.schedule.lr = 1e-3;
  cfg.schedule.batch = 4;
  cfg.schedule.max_steps = 3;
  cfg.seed = 5;
  const auto a = train_stage1(train, val, cfg);
  const auto b = train_stage1(train, val, cfg);
  CHECK(a.log.size() == 3);
  mkt::TempDir dir("det");
  save_checkpoint(make_checkpoint(a.last, 8), dir / "a.ckpt");
  save_checkpoint(make_checkpoint(b.last, 8), dir / "b.ckpt");
  CHECK(mkt::read_file(dir / "a.ckpt") == mkt::read_file(dir / "b.ckpt"));
  cfg.seed = 6;
  const auto c = train_stage1(train, val, cfg);
  save_checkpoint(make_checkpoint(c.last, 8), dir / "c.ckpt");
  CHECK(mkt::read_file(dir / "a.ckpt") != mkt::read_file(dir / "c.ckpt"));
}

TEST_CASE("stage 1 training on phantom triplets") {
  // h = 4, 32×32 slices, one-level net with 16 base channels, 200 steps.
  const auto train = phantoms(100, 4);
  const auto val = phantoms(900, 3);
  Stage1TrainConfig cfg;
  cfg.arch = {1, 16};
  cfg.schedule.lr = 3e-3;
  cfg.schedule.batch = 8;
  cfg.schedule.epochs = 1000;
  cfg.schedule.max_steps = 200;
  cfg.seed = 1;
  const auto r = train_stage1(train, val, cfg);
  REQUIRE(r.log.size() == 200);
  double first = 0.0, last = 0.0;
  for (std::size_t i = 0; i < 20; ++i) {
    first += r.log[i].total;
    last += r.log[r.log.size() - 1 - i].total;
  }
  MESSAGE("loss ratio last20/first20 = " << last / first << ", val PSNR linear " << r.baseline_val_psnr << " best "
                                         << r.best_val_psnr);
  // Pinned from the seeded run (measured 0.823).
  CHECK(last / first < 0.85);
  CHECK(r.initial_val_psnr == r.baseline_val_psnr);
  CHECK(r.best_val_psnr > r.baseline_val_psnr + 0.5);
  CHECK(triplet_psnr(val, 4, r.best) == doctest::Approx(r.best_val_psnr).epsilon(1e-12));
}

TEST_CASE("stage 2 training") {
  const auto truths = phantoms(200, 3, 17);
  std::vector<VolumePair> pairs;
  ModelRegistry reg;
  reg.set_shared(init_slice_model({1, 2}, 1));
  for (const auto& t : truths) {
    const Volume s = sparse_sample(t, 4);
    pairs.push_back({synthesize_volume(s, doubling_plan(s.depth, 4), reg), t});
  }
  Stage2TrainConfig cfg;
  cfg.arch = {4, 0.1};
  cfg.schedule.batch = 1;
  cfg.schedule.epochs = 50;
  cfg.schedule.max_steps = 0;
  cfg.seed = 3;
  std::vector<VolumePair> one{pairs[0]};

  Stage2TrainConfig short_cfg = cfg;
  short_cfg.schedule.max_steps = 1;
  const auto r = train_stage2(one, one, short_cfg);
  REQUIRE(r.log.size() == 1);
  const auto expect = stage2_loss(pairs[0].coarse.as_tensor(), pairs[0].truth.as_tensor(), 0,
                                  pairs[0].coarse.acquired, cfg.loss);
  CHECK(r.log[0].total == expect.total.item());
  CHECK(r.log[0].l1 == expect.l1.item());

  // α₂ trace over 50 epochs with a step cap that still reaches every epoch.
  Stage2TrainConfig trace_cfg = cfg;
  trace_cfg.schedule.lr = 1e-300;
  const auto t = train_stage2(one, one, trace_cfg);
  REQUIRE(t.alpha2_trace.size() == 50);
  for (int e = 0; e < 50; ++e) CHECK(t.alpha2_trace[e] == doctest::Approx(1.0 - 0.016 * e).epsilon(1e-14));
  CHECK(t.alpha2_trace.back() == doctest::Approx(0.216).epsilon(1e-14));

  std::vector<VolumePair> bad{pairs[0]};
  bad[0].truth = truths[0].sub_depth(0, 9);
  CHECK_THROWS_AS(train_stage2(bad, {}, cfg), std::invalid_argument);
}

TEST_CASE("checkpoint round trip and corruption") {
  mkt::TempDir dir("ckpt");
  SliceModel m = init_slice_model({1, 2}, 9);
  ModelCheckpoint c = make_checkpoint(m, 4);
  c.adam = make_adam(m.params, 1e-3);
  c.adam->step = 3;
  c.adam->m[0][0] = 0.125;
  c.plateau = PlateauState{};
  c.epoch = 2;
  c.seed = 77;
  c.rng_state = 0xdeadbeefULL;
  save_checkpoint(c, dir / "m.ckpt");
  const ModelCheckpoint back = load_checkpoint(dir / "m.ckpt");
  CHECK(back.kind == ModelKind::slice);
  CHECK(back.source_gap == 4);
  CHECK(back.epoch == 2);
  CHECK(back.seed == 77);
  CHECK(back.rng_state == 0xdeadbeefULL);
  REQUIRE(back.adam.has_value());
  CHECK(back.adam->step == 3);
  CHECK(back.adam->m[0][0] == 0.125);
  REQUIRE(back.plateau.has_value());
  CHECK(back.plateau->best == -std::numeric_limits<double>::infinity());
  const SliceModel mb = slice_model_from(back);
  for (std::size_t i = 0; i < m.params.size(); ++i)
    CHECK(mkt::to_vec(mb.params.entries()[i].value) == mkt::to_vec(m.params.entries()[i].value));
  save_checkpoint(back, dir / "again.ckpt");
  CHECK(mkt::read_file(dir / "m.ckpt") == mkt::read_file(dir / "again.ckpt"));

  RefineModel r = init_refine_model({3, 0.2}, 1);
  save_checkpoint(make_checkpoint(r), dir / "r.ckpt");
  const RefineModel rb = refine_model_from(load_checkpoint(dir / "r.ckpt"));
  CHECK(rb.config.hidden_channels == 3);
  CHECK(rb.config.alpha == 0.2);
  CHECK_THROWS(slice_model_from(load_checkpoint(dir / "r.ckpt")));

  const std::string bytes = mkt::read_file(dir / "m.ckpt");
  auto write = [&](const std::string& name, const std::string& data) {
    std::ofstream(dir / name, std::ios::binary) << data;
    return dir / name;
  };
  std::string magic = bytes;
  magic[0] = 'X';
  CHECK_THROWS_AS(load_checkpoint(write("magic.ckpt", magic)), FormatError);
  std::string version = bytes;
  version[8] = 2;
  try {
    load_checkpoint(write("version.ckpt", version));
    FAIL("version 2 accepted");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("version") != std::string::npos);
  }
  std::string flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x01;
  CHECK_THROWS_AS(load_checkpoint(write("flip.ckpt", flipped)), FormatError);
  CHECK_THROWS_AS(load_checkpoint(write("trunc.ckpt", bytes.substr(0, bytes.size() - 9))), FormatError);
  CHECK_THROWS_AS(load_checkpoint(dir / "none.ckpt"), FormatError);
}
