#include <cmath>
#include <sstream>
#include <stdexcept>

#include "doctest.h"
#include "mkrecon/error.hpp"
#include "mkrecon/metrics.hpp"
#include "mkrecon/pipeline.hpp"
#include "support.hpp"

using namespace mkr;

TEST_CASE("psnr") {
  SplitMix64 rng(1);
  auto x = mkt::random_values(rng, 256, 0, 0.9);
  auto y = x;
  for (auto& v : y) v += 0.1;
  CHECK(std::abs(psnr(x, y) - 20.0) <= 1e-9);
  CHECK(psnr(x, x) == 100.0);
  auto z = mkt::random_values(rng, 256, 0, 1);
  CHECK(psnr(x, z) == doctest::Approx(mkt::psnr_oracle(x, z)).epsilon(1e-13));
  CHECK(psnr(x, z, 2.0) == doctest::Approx(mkt::psnr_oracle(x, z) + 20.0 * std::log10(2.0)).epsilon(1e-12));
  CHECK_THROWS_AS(psnr(x, std::vector<double>(3, 0.0)), std::invalid_argument);
}

TEST_CASE("ssim_global") {
  SplitMix64 rng(2);
  auto x = mkt::random_values(rng, 1024, 0, 1);
  CHECK(std::abs(ssim_global(x, x) - 1.0) <= 1e-12);
  std::vector<double> c(100, 0.4);
  CHECK(ssim_global(c, c) == 1.0);
  auto y = mkt::random_values(rng, 1024, 0, 1);
  CHECK(std::abs(ssim_global(x, y) - mkt::ssim_oracle(x, y)) <= 1e-10);
  for (int i = 0; i < 20; ++i) {
    auto a = mkt::random_values(rng, 32 * 32, 0, 1);
    auto b = a;
    for (auto& v : b) v = 0.7 * v + 0.2 * rng.uniform();
    CHECK(std::abs(ssim_global(a, b) - mkt::ssim_oracle(a, b)) <= 1e-10);
  }
}

TEST_CASE("ssim_windowed against per-window statistics") {
  SplitMix64 rng(3);
  const std::size_t d = 8, h = 9, w = 10, win = 7;
  auto x = mkt::random_values(rng, d * h * w, 0, 1);
  auto y = x;
  for (auto& v : y) v = 0.5 * v + 0.5 * rng.uniform();
  CHECK(ssim_windowed(x, x, d, h, w, win) == doctest::Approx(1.0).epsilon(1e-12));

  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t z = 0; z + win <= d; ++z)
    for (std::size_t r = 0; r + win <= h; ++r)
      for (std::size_t c = 0; c + win <= w; ++c) {
        std::vector<double> a, b;
        for (std::size_t i = 0; i < win; ++i)
          for (std::size_t j = 0; j < win; ++j)
            for (std::size_t k = 0; k < win; ++k) {
              const std::size_t idx = ((z + i) * h + r + j) * w + c + k;
              a.push_back(x[idx]);
              b.push_back(y[idx]);
            }
        acc += mkt::ssim_oracle(a, b);
        ++n;
      }
  CHECK(ssim_windowed(x, y, d, h, w, win) == doctest::Approx(acc / static_cast<double>(n)).epsilon(1e-10));
  CHECK_THROWS_AS(ssim_windowed(x, y, d, h, w, 11), std::invalid_argument);

  // depth 1: 2D windows
  auto s = mkt::random_values(rng, 12 * 12, 0, 1);
  auto t = mkt::random_values(rng, 12 * 12, 0, 1);
  double acc2 = 0.0;
  for (std::size_t r = 0; r + 7 <= 12; ++r)
    for (std::size_t c = 0; c + 7 <= 12; ++c) {
      std::vector<double> a, b;
      for (std::size_t j = 0; j < 7; ++j)
        for (std::size_t k = 0; k < 7; ++k) {
          a.push_back(s[(r + j) * 12 + c + k]);
          b.push_back(t[(r + j) * 12 + c + k]);
        }
      acc2 += mkt::ssim_oracle(a, b);
    }
  CHECK(ssim_windowed(s, t, 1, 12, 12) == doctest::Approx(acc2 / 36.0).epsilon(1e-10));
}

TEST_CASE("scan_time_factor") {
  CHECK(scan_time_factor(40, 40) == 1.0);
  Volume v(161, 2, 2, 0.5);
  Volume sparse = sparse_sample(v, 8);
  CHECK(sparse.acquired_count() == 21);
  CHECK(scan_time_factor(161, sparse.acquired_count()) == doctest::Approx(7.67).epsilon(1e-3));
  CHECK(scan_time_factor(161, 21) == 161.0 / 21.0);
  Volume v160(160, 2, 2, 0.5);
  Volume s160 = sparse_sample(v160, 8);
  CHECK(s160.depth == 153);
  CHECK(s160.acquired_count() == 20);
  CHECK(scan_time_factor(s160.depth, s160.acquired_count()) == doctest::Approx(7.65).epsilon(1e-12));
  CHECK_THROWS_AS(scan_time_factor(10, 0), std::invalid_argument);
  CHECK_THROWS_AS(scan_time_factor(10, 11), std::invalid_argument);
}

TEST_CASE("evaluate_volume and report csv") {
  SplitMix64 rng(4);
  Volume a(9, 8, 8);
  a.voxels = mkt::random_values(rng, a.size(), 0, 1);
  a.acquired.assign(9, 1);
  ReconReport r = evaluate_volume(a, a, {true, true});
  CHECK(r.psnr_db == 100.0);
  CHECK(r.ssim == doctest::Approx(1.0).epsilon(1e-12));
  REQUIRE(r.ssim_windowed.has_value());
  CHECK(r.per_slice.size() == 9);
  CHECK(r.scan_time_factor == 1.0);

  Volume b = a;
  b.voxels.pop_back();
  b.width = 7;
  b.voxels.assign(9 * 8 * 7, 0.0);
  CHECK_THROWS_AS(evaluate_volume(a, b), FormatError);

  r.volume = "v0";
  r.method = "model";
  r.slice_gap = 4;
  r.refined = true;
  std::stringstream ss;
  write_report_csv({r}, ss);
  CHECK(ss.str().rfind("volume,method,slice_gap,refined,psnr_db,ssim,ssim_windowed,scan_time_factor\n", 0) == 0);
  const auto back = read_report_csv(ss);
  REQUIRE(back.size() == 1);
  CHECK(back[0].volume == "v0");
  CHECK(back[0].method == "model");
  CHECK(back[0].slice_gap == 4);
  CHECK(back[0].refined);
  CHECK(back[0].psnr_db == r.psnr_db);
  CHECK(back[0].ssim == r.ssim);
  CHECK(*back[0].ssim_windowed == *r.ssim_windowed);
  std::stringstream ps;
  write_per_slice_csv({r}, ps);
  CHECK(ps.str().rfind("volume,method,index,psnr_db,ssim\n", 0) == 0);
}
