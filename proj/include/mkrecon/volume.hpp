#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mkrecon/tensor.hpp"

namespace mkr {

/// Depth-ordered stack of H×W slices, stored depth-major then row-major.
struct Volume {
  std::size_t depth = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> voxels;
  // One flag per slice: 1 = physically acquired, 0 = to be synthesized.
  std::vector<std::uint8_t> acquired;
  // Intensity range the voxels were min-max normalized from.
  double norm_min = 0.0;
  double norm_max = 1.0;
  // Set by preprocessing when the source had no intensity range.
  bool constant_source = false;
  std::optional<std::array<double, 3>> spacing_mm;  // depth, row, column

  Volume() = default;
  Volume(std::size_t d, std::size_t h, std::size_t w, double fill = 0.0);

  std::size_t slice_size() const { return height * width; }
  std::size_t size() const { return voxels.size(); }
  double& at(std::size_t d, std::size_t y, std::size_t x) {
    return voxels[(d * height + y) * width + x];
  }
  double at(std::size_t d, std::size_t y, std::size_t x) const {
    return voxels[(d * height + y) * width + x];
  }
  std::span<double> slice(std::size_t d);
  std::span<const double> slice(std::size_t d) const;

  std::vector<std::size_t> acquired_indices() const;
  std::size_t acquired_count() const;

  // [1, H, W] copy of one slice.
  Tensor slice_tensor(std::size_t d) const;
  // [1, D, H, W] copy of the whole volume.
  Tensor as_tensor() const;
  void set_slice(std::size_t d, std::span<const double> values);

  // Copy of slices [begin, end), metadata carried over.
  Volume sub_depth(std::size_t begin, std::size_t end) const;

  void check_consistent() const;
  bool same_dims(const Volume& other) const {
    return depth == other.depth && height == other.height && width == other.width;
  }
  std::string dims_str() const;
};

}  // namespace mkr
