#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mkrecon/data.hpp"
#include "mkrecon/rng.hpp"

namespace mkr {

namespace {

constexpr std::size_t kMinPhantomDim = 16;

// Cubic smoothstep falling from 1 inside r <= 1 - s to 0 outside r >= 1 + s.
double soft_inside(double r, double softness) {
  const double t = std::clamp((1.0 + softness - r) / (2.0 * softness), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

double ellipsoid_weight(const PhantomEllipsoid& e, double z, double y, double x, double softness) {
  const double dz = z - e.center[0];
  const double dy = y - e.center[1];
  const double dx = x - e.center[2];
  const double xr = e.cos_theta * dx + e.sin_theta * dy;
  const double yr = -e.sin_theta * dx + e.cos_theta * dy;
  const double q = (dz / e.radii[0]) * (dz / e.radii[0]) + (yr / e.radii[1]) * (yr / e.radii[1]) +
                   (xr / e.radii[2]) * (xr / e.radii[2]);
  return soft_inside(std::sqrt(q), softness);
}

// Uniform direction on the unit circle by rejection; sqrt is correctly
// rounded, so the draw is platform independent.
void draw_rotation(SplitMix64& rng, PhantomEllipsoid& e) {
  for (;;) {
    const double u = rng.uniform(-1.0, 1.0), v = rng.uniform(-1.0, 1.0);
    const double r2 = u * u + v * v;
    if (r2 > 0.01 && r2 <= 1.0) {
      const double r = std::sqrt(r2);
      e.cos_theta = u / r;
      e.sin_theta = v / r;
      return;
    }
  }
}

}  // namespace

PhantomLayout phantom_layout(std::uint64_t seed, const PhantomOptions& opts) {
  if (opts.depth < kMinPhantomDim || opts.height < kMinPhantomDim || opts.width < kMinPhantomDim) {
    throw std::invalid_argument("generate_phantom: every dimension must be >= 16");
  }
  if (opts.ellipsoids < 0) throw std::invalid_argument("generate_phantom: negative ellipsoid count");
  SplitMix64 rng(seed);
  PhantomLayout layout;
  layout.edge_softness = 0.25;
  layout.background_base = rng.uniform(0.02, 0.08);
  for (double& s : layout.background_slope) s = rng.uniform(-0.03, 0.03);
  for (int i = 0; i < opts.ellipsoids; ++i) {
    PhantomEllipsoid e;
    for (double& c : e.center) c = rng.uniform(-0.5, 0.5);
    e.radii[0] = rng.uniform(0.35, 0.8);
    e.radii[1] = rng.uniform(0.15, 0.5);
    e.radii[2] = rng.uniform(0.15, 0.5);
    draw_rotation(rng, e);
    e.intensity = rng.uniform(0.08, 0.25);
    layout.ellipsoids.push_back(e);
  }
  // Drawn unconditionally so toggling the lesion leaves the rest unchanged.
  PhantomEllipsoid lesion;
  for (double& c : lesion.center) c = rng.uniform(-0.4, 0.4);
  const double r = rng.uniform(0.1, 0.16);
  lesion.radii = {r, r, r};
  lesion.intensity = rng.uniform(0.3, 0.45);
  if (opts.lesion) layout.lesion = lesion;
  return layout;
}

double phantom_envelope_max(const PhantomLayout& layout) {
  double m = layout.background_base;
  for (double s : layout.background_slope) m += std::abs(s);
  for (const auto& e : layout.ellipsoids) m += e.intensity;
  return m;
}

Volume generate_phantom(std::uint64_t seed, const PhantomOptions& opts) {
  const PhantomLayout layout = phantom_layout(seed, opts);
  Volume v(opts.depth, opts.height, opts.width);
  const auto norm = [](std::size_t i, std::size_t n) {
    return 2.0 * (static_cast<double>(i) + 0.5) / static_cast<double>(n) - 1.0;
  };
  for (std::size_t d = 0; d < opts.depth; ++d) {
    const double z = norm(d, opts.depth);
    for (std::size_t yi = 0; yi < opts.height; ++yi) {
      const double y = norm(yi, opts.height);
      for (std::size_t xi = 0; xi < opts.width; ++xi) {
        const double x = norm(xi, opts.width);
        double val = layout.background_base + layout.background_slope[0] * z +
                     layout.background_slope[1] * y + layout.background_slope[2] * x;
        for (const auto& e : layout.ellipsoids) val += e.intensity * ellipsoid_weight(e, z, y, x, layout.edge_softness);
        if (layout.lesion) {
          // Sharper edge than the anatomy so the lesion stays compact.
          val += layout.lesion->intensity * ellipsoid_weight(*layout.lesion, z, y, x, 0.3 * layout.edge_softness);
        }
        v.at(d, yi, xi) = static_cast<double>(static_cast<float>(std::clamp(val, 0.0, 1.0)));
      }
    }
  }
  return v;
}

std::vector<TrainingTriplet> make_triplets(const std::vector<Volume>& volumes, std::size_t half_gap) {
  if (half_gap == 0) throw std::invalid_argument("make_triplets: half gap must be positive");
  std::vector<TrainingTriplet> out;
  for (std::size_t id = 0; id < volumes.size(); ++id) {
    const std::size_t depth = volumes[id].depth;
    for (std::size_t i = half_gap; i + half_gap < depth; ++i) {
      out.push_back({id, i - half_gap, i, i + half_gap, half_gap});
    }
  }
  return out;
}

}  // namespace mkr
