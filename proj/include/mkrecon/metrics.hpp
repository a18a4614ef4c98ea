#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mkrecon/volume.hpp"

namespace mkr {

inline constexpr double kSsimC1 = 1e-4;
inline constexpr double kSsimC2 = 9e-4;
inline constexpr double kPsnrCapDb = 100.0;

/// 10·log10(L²/MSE); 100 dB when MSE < 1e-10.
double psnr(std::span<const double> pred, std::span<const double> target, double peak = 1.0);

/// SSIM with a single set of statistics over all samples (population
/// variance and covariance).
double ssim_global(std::span<const double> pred, std::span<const double> target);

/// Mean SSIM over every complete window × window (× window) block of a
/// depth × height × width grid; depth = 1 gives 2D windows.
double ssim_windowed(std::span<const double> pred, std::span<const double> target,
                     std::size_t depth, std::size_t height, std::size_t width,
                     std::size_t window = 7);

/// Relative scan-time reduction N / n for n of N slices acquired.
double scan_time_factor(std::size_t full_slices, std::size_t acquired_slices);

struct SliceMetric {
  std::size_t index = 0;
  double psnr_db = 0.0;
  double ssim = 0.0;
};

struct ReconReport {
  std::string volume;
  std::string method;
  int slice_gap = 0;
  bool refined = false;
  double psnr_db = 0.0;
  double ssim = 0.0;
  std::optional<double> ssim_windowed;
  double scan_time_factor = 1.0;
  std::vector<SliceMetric> per_slice;
};

struct EvalOptions {
  bool windowed = false;
  bool per_slice = false;
};

/// Whole-volume PSNR/SSIM of pred against truth (identical dims required).
/// The scan-time factor uses truth depth over pred's acquired-slice count.
ReconReport evaluate_volume(const Volume& pred, const Volume& truth, const EvalOptions& opts = {});

// Header: volume,method,slice_gap,refined,psnr_db,ssim,ssim_windowed,scan_time_factor
void write_report_csv(const std::vector<ReconReport>& reports, std::ostream& os);
// Header: volume,method,index,psnr_db,ssim
void write_per_slice_csv(const std::vector<ReconReport>& reports, std::ostream& os);
std::vector<ReconReport> read_report_csv(std::istream& is);

}  // namespace mkr
