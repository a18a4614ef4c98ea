#include "mkrecon/volume.hpp"

#include <algorithm>
#include <stdexcept>

namespace mkr {

Volume::Volume(std::size_t d, std::size_t h, std::size_t w, double fill)
    : depth(d), height(h), width(w), voxels(d * h * w, fill), acquired(d, 1) {}

std::span<double> Volume::slice(std::size_t d) {
  if (d >= depth) throw std::out_of_range("Volume::slice index " + std::to_string(d));
  return std::span<double>(voxels).subspan(d * slice_size(), slice_size());
}

std::span<const double> Volume::slice(std::size_t d) const {
  if (d >= depth) throw std::out_of_range("Volume::slice index " + std::to_string(d));
  return std::span<const double>(voxels).subspan(d * slice_size(), slice_size());
}

std::vector<std::size_t> Volume::acquired_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t d = 0; d < acquired.size(); ++d)
    if (acquired[d]) out.push_back(d);
  return out;
}

std::size_t Volume::acquired_count() const {
  return static_cast<std::size_t>(std::count_if(acquired.begin(), acquired.end(),
                                                [](std::uint8_t m) { return m != 0; }));
}

Tensor Volume::slice_tensor(std::size_t d) const {
  auto s = slice(d);
  return Tensor(Shape{1, height, width}, std::vector<double>(s.begin(), s.end()));
}

Tensor Volume::as_tensor() const { return Tensor(Shape{1, depth, height, width}, voxels); }

void Volume::set_slice(std::size_t d, std::span<const double> values) {
  if (values.size() != slice_size()) throw std::invalid_argument("Volume::set_slice: size mismatch");
  std::copy(values.begin(), values.end(), slice(d).begin());
}

Volume Volume::sub_depth(std::size_t begin, std::size_t end) const {
  if (begin >= end || end > depth) throw std::out_of_range("Volume::sub_depth: bad range");
  Volume out = *this;
  out.depth = end - begin;
  out.voxels.assign(voxels.begin() + static_cast<std::ptrdiff_t>(begin * slice_size()),
                    voxels.begin() + static_cast<std::ptrdiff_t>(end * slice_size()));
  out.acquired.assign(acquired.begin() + static_cast<std::ptrdiff_t>(begin),
                      acquired.begin() + static_cast<std::ptrdiff_t>(end));
  return out;
}

void Volume::check_consistent() const {
  if (depth == 0 || height == 0 || width == 0) {
    throw std::invalid_argument("Volume: empty dimension " + dims_str());
  }
  if (voxels.size() != depth * height * width) throw std::invalid_argument("Volume: voxel count mismatch");
  if (acquired.size() != depth) throw std::invalid_argument("Volume: acquisition mask length mismatch");
}

std::string Volume::dims_str() const {
  return std::to_string(depth) + "x" + std::to_string(height) + "x" + std::to_string(width);
}

}  // namespace mkr
