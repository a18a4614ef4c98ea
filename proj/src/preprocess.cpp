#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mkrecon/data.hpp"

namespace mkr {

std::vector<double> resize_bilinear(std::span<const double> src, std::size_t h, std::size_t w,
                                    std::size_t out_h, std::size_t out_w) {
  if (src.size() != h * w || h == 0 || w == 0 || out_h == 0 || out_w == 0) {
    throw std::invalid_argument("resize_bilinear: bad dimensions");
  }
  const double sy = static_cast<double>(h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(w) / static_cast<double>(out_w);
  std::vector<double> out(out_h * out_w);
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    const double fy = std::clamp((static_cast<double>(oy) + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double ty = fy - static_cast<double>(y0);
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      const double fx = std::clamp((static_cast<double>(ox) + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double tx = fx - static_cast<double>(x0);
      const double top = (1.0 - tx) * src[y0 * w + x0] + tx * src[y0 * w + x1];
      const double bottom = (1.0 - tx) * src[y1 * w + x0] + tx * src[y1 * w + x1];
      out[oy * out_w + ox] = (1.0 - ty) * top + ty * bottom;
    }
  }
  return out;
}

Volume preprocess(const Volume& volume, std::size_t target_h, std::size_t target_w) {
  volume.check_consistent();
  if (volume.height < 2 || volume.width < 2) throw std::invalid_argument("preprocess: slices smaller than 2x2");
  if (target_h == 0 || target_w == 0) throw std::invalid_argument("preprocess: empty target size");

  Volume out(volume.depth, target_h, target_w);
  out.acquired = volume.acquired;
  for (std::size_t d = 0; d < volume.depth; ++d) {
    out.set_slice(d, resize_bilinear(volume.slice(d), volume.height, volume.width, target_h, target_w));
  }
  if (volume.spacing_mm) {
    auto sp = *volume.spacing_mm;
    sp[1] *= static_cast<double>(volume.height) / static_cast<double>(target_h);
    sp[2] *= static_cast<double>(volume.width) / static_cast<double>(target_w);
    out.spacing_mm = sp;
  }

  const auto [lo_it, hi_it] = std::minmax_element(out.voxels.begin(), out.voxels.end());
  const double lo = *lo_it, hi = *hi_it;
  out.norm_min = lo;
  out.norm_max = hi;
  if (!(hi > lo)) {
    std::fill(out.voxels.begin(), out.voxels.end(), 0.0);
    out.constant_source = true;
    return out;
  }
  const double range = hi - lo;
  for (double& v : out.voxels) v = std::clamp((v - lo) / range, 0.0, 1.0);
  return out;
}

}  // namespace mkr
