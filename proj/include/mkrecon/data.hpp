#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mkrecon/volume.hpp"

namespace mkr {

// ---------------------------------------------------------------------------
// Volume files

enum class VolumeFormat { nifti, raw };

/// Raw format: payload file of D·H·W little-endian float32 values
/// (depth-major, then row-major) plus a JSON sidecar at `<path>.json`
/// holding dims, spacing, normalization range, byte order and the
/// acquired-slice indices. See docs/formats.md.
void save_volume(const Volume& volume, const std::filesystem::path& path);

/// Loads a raw volume or a NIfTI-1 file (.nii, .nii.gz, or .hdr/.img pair).
/// NIfTI voxels are returned in scanner units (scl_slope/scl_inter applied)
/// with every slice marked acquired; run preprocess() to normalize.
Volume load_volume(const std::filesystem::path& path, VolumeFormat format);

/// Picks the format from the extension (.nii, .nii.gz, .hdr → NIfTI).
Volume load_volume(const std::filesystem::path& path);

std::filesystem::path raw_sidecar_path(const std::filesystem::path& payload);

/// Binary PGM (P5), 8-bit, value = floor(255·v + 0.5) clipped to [0, 255].
void export_slice_pgm(const Volume& volume, std::size_t index, const std::filesystem::path& path);

struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;
};

void write_pgm(const GrayImage& image, const std::filesystem::path& path);
GrayImage read_pgm(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Preprocessing

/// Bilinear in-plane resize (pixel-centre aligned) followed by per-volume
/// min-max normalization to [0, 1]. A constant volume becomes all zeros with
/// `constant_source` set. The original range is kept in norm_min/norm_max.
Volume preprocess(const Volume& volume, std::size_t target_h = 256, std::size_t target_w = 256);

/// Bilinear resize of one H×W grid, pixel-centre aligned with edge clamping.
std::vector<double> resize_bilinear(std::span<const double> src, std::size_t h, std::size_t w,
                                    std::size_t out_h, std::size_t out_w);

// ---------------------------------------------------------------------------
// Synthetic phantoms

struct PhantomOptions {
  std::size_t depth = 32;
  std::size_t height = 32;
  std::size_t width = 32;
  int ellipsoids = 6;
  bool lesion = true;
};

struct PhantomEllipsoid {
  std::array<double, 3> center;  // normalized coordinates in [-1, 1]: z, y, x
  std::array<double, 3> radii;
  double cos_theta = 1.0;  // in-plane rotation
  double sin_theta = 0.0;
  double intensity = 0.0;
};

struct PhantomLayout {
  double background_base = 0.0;
  std::array<double, 3> background_slope{};  // per normalized z, y, x
  std::vector<PhantomEllipsoid> ellipsoids;
  std::optional<PhantomEllipsoid> lesion;
  double edge_softness = 0.0;
};

/// Deterministic layout drawn from SplitMix64(seed).
PhantomLayout phantom_layout(std::uint64_t seed, const PhantomOptions& opts);

/// Soft-edged ellipsoids over a smooth background gradient, optional small
/// bright sphere. Values lie in [0, 1] and are rounded to float32 so that
/// the raw format round-trips them exactly.
Volume generate_phantom(std::uint64_t seed, const PhantomOptions& opts = {});

/// Upper bound of background plus every ellipsoid's intensity.
double phantom_envelope_max(const PhantomLayout& layout);

// ---------------------------------------------------------------------------
// Training pairs

struct TrainingTriplet {
  std::size_t volume_id = 0;
  std::size_t left = 0;
  std::size_t target = 0;
  std::size_t right = 0;
  std::size_t half_gap = 0;
};

/// Every (i−h, i, i+h) with stride 1, volumes in order; max(0, D − 2h) each.
std::vector<TrainingTriplet> make_triplets(const std::vector<Volume>& volumes, std::size_t half_gap);

}  // namespace mkr
