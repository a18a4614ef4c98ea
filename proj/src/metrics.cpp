#include "mkrecon/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "mkrecon/error.hpp"

namespace mkr {

namespace {

void require_pair(std::span<const double> a, std::span<const double> b, const char* what) {
  if (a.size() != b.size()) {
    throw std::invalid_argument(std::string(what) + ": size mismatch " + std::to_string(a.size()) +
                                " vs " + std::to_string(b.size()));
  }
  if (a.empty()) throw std::invalid_argument(std::string(what) + ": empty input");
}

double ssim_formula(double mp, double mt, double vp, double vt, double cov) {
  return ((2.0 * mp * mt + kSsimC1) * (2.0 * cov + kSsimC2)) /
         ((mp * mp + mt * mt + kSsimC1) * (vp + vt + kSsimC2));
}

// Sliding sums of length `window` along one axis of a d×h×w grid, in place
// of a freshly sized output grid.
std::vector<double> box_sum_axis(const std::vector<double>& in, std::size_t d, std::size_t h,
                                 std::size_t w, int axis, std::size_t window,
                                 std::size_t& od, std::size_t& oh, std::size_t& ow) {
  od = d, oh = h, ow = w;
  std::size_t stride = 1;
  if (axis == 0) od = d - window + 1, stride = h * w;
  if (axis == 1) oh = h - window + 1, stride = w;
  if (axis == 2) ow = w - window + 1;
  std::vector<double> out(od * oh * ow);
  for (std::size_t z = 0; z < od; ++z)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        const std::size_t base = (z * h + y) * w + x;
        double acc = 0.0;
        for (std::size_t k = 0; k < window; ++k) acc += in[base + k * stride];
        out[(z * oh + y) * ow + x] = acc;
      }
  return out;
}

std::vector<double> box_sums(std::vector<double> grid, std::size_t d, std::size_t h, std::size_t w,
                             std::size_t wd, std::size_t window) {
  std::size_t od, oh, ow;
  grid = box_sum_axis(grid, d, h, w, 2, window, od, oh, ow);
  w = ow;
  grid = box_sum_axis(grid, d, h, w, 1, window, od, oh, ow);
  h = oh;
  if (wd > 1) grid = box_sum_axis(grid, d, h, w, 0, wd, od, oh, ow);
  return grid;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

}  // namespace

double psnr(std::span<const double> pred, std::span<const double> target, double peak) {
  require_pair(pred, target, "psnr");
  if (!(peak > 0.0)) throw std::invalid_argument("psnr: peak must be positive");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    acc += d * d;
  }
  const double mse = acc / static_cast<double>(pred.size());
  if (mse < 1e-10) return kPsnrCapDb;
  return 10.0 * std::log10(peak * peak / mse);
}

double ssim_global(std::span<const double> pred, std::span<const double> target) {
  require_pair(pred, target, "ssim");
  const double n = static_cast<double>(pred.size());
  double sp = 0.0, st = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    sp += pred[i];
    st += target[i];
  }
  const double mp = sp / n, mt = st / n;
  double vp = 0.0, vt = 0.0, cov = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double a = pred[i] - mp, b = target[i] - mt;
    vp += a * a;
    vt += b * b;
    cov += a * b;
  }
  return ssim_formula(mp, mt, vp / n, vt / n, cov / n);
}

double ssim_windowed(std::span<const double> pred, std::span<const double> target,
                     std::size_t depth, std::size_t height, std::size_t width, std::size_t window) {
  require_pair(pred, target, "ssim_windowed");
  if (pred.size() != depth * height * width) throw std::invalid_argument("ssim_windowed: dims mismatch");
  if (window == 0) throw std::invalid_argument("ssim_windowed: zero window");
  const std::size_t wd = depth == 1 ? 1 : window;
  if (depth < wd || height < window || width < window) {
    throw std::invalid_argument("ssim_windowed: grid smaller than the window");
  }
  std::vector<double> p(pred.begin(), pred.end()), t(target.begin(), target.end());
  std::vector<double> pp(p.size()), tt(p.size()), pt(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    pp[i] = p[i] * p[i];
    tt[i] = t[i] * t[i];
    pt[i] = p[i] * t[i];
  }
  const auto sp = box_sums(std::move(p), depth, height, width, wd, window);
  const auto st = box_sums(std::move(t), depth, height, width, wd, window);
  const auto spp = box_sums(std::move(pp), depth, height, width, wd, window);
  const auto stt = box_sums(std::move(tt), depth, height, width, wd, window);
  const auto spt = box_sums(std::move(pt), depth, height, width, wd, window);
  const double n = static_cast<double>(wd * window * window);
  double acc = 0.0;
  for (std::size_t i = 0; i < sp.size(); ++i) {
    const double mp = sp[i] / n, mt = st[i] / n;
    const double vp = spp[i] / n - mp * mp;
    const double vt = stt[i] / n - mt * mt;
    const double cov = spt[i] / n - mp * mt;
    acc += ssim_formula(mp, mt, vp, vt, cov);
  }
  return acc / static_cast<double>(sp.size());
}

double scan_time_factor(std::size_t full_slices, std::size_t acquired_slices) {
  if (acquired_slices == 0) throw std::invalid_argument("scan_time_factor: no acquired slices");
  if (acquired_slices > full_slices) {
    throw std::invalid_argument("scan_time_factor: more acquired than total slices");
  }
  return static_cast<double>(full_slices) / static_cast<double>(acquired_slices);
}

ReconReport evaluate_volume(const Volume& pred, const Volume& truth, const EvalOptions& opts) {
  if (!pred.same_dims(truth)) {
    throw FormatError("dimension mismatch: prediction " + pred.dims_str() + " vs truth " +
                      truth.dims_str());
  }
  ReconReport r;
  r.psnr_db = psnr(pred.voxels, truth.voxels);
  r.ssim = ssim_global(pred.voxels, truth.voxels);
  if (opts.windowed) {
    r.ssim_windowed = ssim_windowed(pred.voxels, truth.voxels, pred.depth, pred.height, pred.width);
  }
  const std::size_t n_acq = pred.acquired_count();
  r.scan_time_factor = scan_time_factor(truth.depth, n_acq == 0 ? truth.depth : n_acq);
  if (opts.per_slice) {
    for (std::size_t d = 0; d < pred.depth; ++d) {
      r.per_slice.push_back({d, psnr(pred.slice(d), truth.slice(d)),
                             ssim_global(pred.slice(d), truth.slice(d))});
    }
  }
  return r;
}

void write_report_csv(const std::vector<ReconReport>& reports, std::ostream& os) {
  os << "volume,method,slice_gap,refined,psnr_db,ssim,ssim_windowed,scan_time_factor\n";
  for (const auto& r : reports) {
    os << r.volume << ',' << r.method << ',' << r.slice_gap << ',' << (r.refined ? 1 : 0) << ','
       << fmt_double(r.psnr_db) << ',' << fmt_double(r.ssim) << ','
       << (r.ssim_windowed ? fmt_double(*r.ssim_windowed) : std::string()) << ','
       << fmt_double(r.scan_time_factor) << '\n';
  }
}

void write_per_slice_csv(const std::vector<ReconReport>& reports, std::ostream& os) {
  os << "volume,method,index,psnr_db,ssim\n";
  for (const auto& r : reports)
    for (const auto& s : r.per_slice)
      os << r.volume << ',' << r.method << ',' << s.index << ',' << fmt_double(s.psnr_db) << ','
         << fmt_double(s.ssim) << '\n';
}

std::vector<ReconReport> read_report_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line.rfind("volume,method,", 0) != 0) {
    throw FormatError("report: missing header");
  }
  std::vector<ReconReport> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (line.back() == ',') f.emplace_back();
    if (f.size() != 8) throw FormatError("report: expected 8 fields in '" + line + "'");
    ReconReport r;
    try {
      r.volume = f[0];
      r.method = f[1];
      r.slice_gap = std::stoi(f[2]);
      r.refined = f[3] == "1";
      r.psnr_db = std::stod(f[4]);
      r.ssim = std::stod(f[5]);
      if (!f[6].empty()) r.ssim_windowed = std::stod(f[6]);
      r.scan_time_factor = std::stod(f[7]);
    } catch (const std::logic_error&) {
      throw FormatError("report: bad number in '" + line + "'");
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace mkr
