#include "mkrecon/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

#include "mkrecon/error.hpp"

namespace mkr {

namespace {

thread_local bool g_grad_enabled = true;

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

void check_finite(const std::vector<double>& v, const char* op) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw NumericError(std::string("non-finite value produced by ") + op);
    }
  }
}

std::vector<double>& grad_of(Node& n) {
  if (n.grad.size() != n.values.size()) n.grad.assign(n.values.size(), 0.0);
  return n.grad;
}

// Builds an op result; records the graph only when needed.
Tensor make_result(const char* op, Shape shape, std::vector<double> values,
                   std::initializer_list<const Tensor*> inputs,
                   std::function<void(Node&)> backward) {
  check_finite(values, op);
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->op = op;
  bool any = false;
  for (const Tensor* t : inputs) any = any || t->requires_grad();
  if (any && g_grad_enabled) {
    node->requires_grad = true;
    for (const Tensor* t : inputs) node->parents.push_back(t->node());
    node->backward = std::move(backward);
  }
  return Tensor::from_node(std::move(node));
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw std::invalid_argument(std::string(op) + ": undefined tensor");
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require_defined(a, op);
  require_defined(b, op);
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
}

// Spatial view of a [C, (D,) H, W] tensor, 2D inputs treated as D = 1.
struct Spatial {
  std::size_t c, d, h, w;
};

Spatial spatial_of(const Tensor& t, const char* op) {
  const Shape& s = t.shape();
  if (s.size() == 3) return {s[0], 1, s[1], s[2]};
  if (s.size() == 4) return {s[0], s[1], s[2], s[3]};
  throw std::invalid_argument(std::string(op) + ": expected [C,H,W] or [C,D,H,W], got " +
                              shape_str(s));
}

Shape make_spatial_shape(std::size_t c, std::size_t d, std::size_t h, std::size_t w,
                         std::size_t rank) {
  if (rank == 3) return {c, h, w};
  return {c, d, h, w};
}

struct AxisRange {
  std::ptrdiff_t lo, hi;
};

// Output positions o with 0 <= o + k - pad < in, clipped to [0, out).
AxisRange axis_range(std::size_t in, std::size_t out, std::size_t k, std::size_t pad) {
  const auto ik = static_cast<std::ptrdiff_t>(k);
  const auto ip = static_cast<std::ptrdiff_t>(pad);
  std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, ip - ik);
  std::ptrdiff_t hi = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(out),
                                               static_cast<std::ptrdiff_t>(in) + ip - ik);
  return {lo, std::max(lo, hi)};
}

struct ConvGeom {
  std::size_t cin, cout;
  std::size_t d, h, w;
  std::size_t kd, kh, kw;
  std::size_t od, oh, ow;
  std::size_t pd, ph, pw;
  std::size_t rank;
};

ConvGeom conv_geometry(const Tensor& input, const Tensor& kernel, Padding padding, int dims) {
  if (dims != 2 && dims != 3) throw std::invalid_argument("conv: dims must be 2 or 3");
  require_defined(input, "conv");
  require_defined(kernel, "conv");
  const Shape& is = input.shape();
  const Shape& ks = kernel.shape();
  const auto rank = static_cast<std::size_t>(dims) + 1;
  if (is.size() != rank) {
    throw std::invalid_argument("conv: input " + shape_str(is) + " does not have " +
                                std::to_string(dims) + " spatial dimensions");
  }
  if (ks.size() != rank + 1) {
    throw std::invalid_argument("conv: kernel " + shape_str(ks) + " has wrong rank");
  }
  if (ks[1] != is[0]) {
    throw std::invalid_argument("conv: kernel expects " + std::to_string(ks[1]) +
                                " input channels, input has " + std::to_string(is[0]));
  }
  ConvGeom g{};
  g.rank = rank;
  g.cin = is[0];
  g.cout = ks[0];
  if (dims == 2) {
    g.d = 1, g.h = is[1], g.w = is[2];
    g.kd = 1, g.kh = ks[2], g.kw = ks[3];
  } else {
    g.d = is[1], g.h = is[2], g.w = is[3];
    g.kd = ks[2], g.kh = ks[3], g.kw = ks[4];
  }
  for (std::size_t k : {g.kd, g.kh, g.kw}) {
    if (k % 2 == 0) throw std::invalid_argument("conv: kernel extent must be odd");
  }
  if (padding == Padding::zero_same) {
    g.pd = g.kd / 2, g.ph = g.kh / 2, g.pw = g.kw / 2;
    g.od = g.d, g.oh = g.h, g.ow = g.w;
  } else {
    if (g.d < g.kd || g.h < g.kh || g.w < g.kw) {
      throw std::invalid_argument("conv: input " + shape_str(is) + " smaller than kernel " +
                                  shape_str(ks));
    }
    g.pd = g.ph = g.pw = 0;
    g.od = g.d - g.kd + 1, g.oh = g.h - g.kh + 1, g.ow = g.w - g.kw + 1;
  }
  return g;
}

// Visits every (kernel tap, output row) pair that reads inside the input.
// fn(kernel_index, in_offset, out_offset, x_lo, x_hi) where offsets locate
// the start of the row (x = 0) in input and output channel-planes, and the
// input row is already shifted by the tap's x offset.
template <typename Fn>
void for_each_tap_row(const ConvGeom& g, Fn&& fn) {
  for (std::size_t a = 0; a < g.kd; ++a) {
    const AxisRange zr = axis_range(g.d, g.od, a, g.pd);
    for (std::size_t b = 0; b < g.kh; ++b) {
      const AxisRange yr = axis_range(g.h, g.oh, b, g.ph);
      for (std::size_t c = 0; c < g.kw; ++c) {
        const AxisRange xr = axis_range(g.w, g.ow, c, g.pw);
        if (xr.lo >= xr.hi) continue;
        const std::size_t tap = (a * g.kh + b) * g.kw + c;
        const std::ptrdiff_t xshift =
            static_cast<std::ptrdiff_t>(c) - static_cast<std::ptrdiff_t>(g.pw);
        for (std::ptrdiff_t oz = zr.lo; oz < zr.hi; ++oz) {
          const std::size_t iz = static_cast<std::size_t>(oz + static_cast<std::ptrdiff_t>(a) -
                                                          static_cast<std::ptrdiff_t>(g.pd));
          for (std::ptrdiff_t oy = yr.lo; oy < yr.hi; ++oy) {
            const std::size_t iy =
                static_cast<std::size_t>(oy + static_cast<std::ptrdiff_t>(b) -
                                         static_cast<std::ptrdiff_t>(g.ph));
            const std::ptrdiff_t in_off =
                static_cast<std::ptrdiff_t>((iz * g.h + iy) * g.w) + xshift;
            const std::size_t out_off = (static_cast<std::size_t>(oz) * g.oh +
                                         static_cast<std::size_t>(oy)) * g.ow;
            fn(tap, in_off, out_off, xr.lo, xr.hi);
          }
        }
      }
    }
  }
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(Shape shape, double fill, bool requires_grad) {
  node_ = std::make_shared<Node>();
  node_->values.assign(shape_numel(shape), fill);
  node_->shape = std::move(shape);
  node_->requires_grad = requires_grad;
  check_finite(node_->values, "constructor");
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  if (values.size() != shape_numel(shape)) {
    throw std::invalid_argument("Tensor: " + std::to_string(values.size()) +
                                " values for shape " + shape_str(shape));
  }
  check_finite(values, "constructor");
  node_ = std::make_shared<Node>();
  node_->shape = std::move(shape);
  node_->values = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{1}, std::vector<double>{value}, requires_grad);
}

Tensor Tensor::from_node(std::shared_ptr<detail::Node> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

const Shape& Tensor::shape() const {
  static const Shape empty;
  return node_ ? node_->shape : empty;
}

std::size_t Tensor::size() const { return node_ ? node_->values.size() : 0; }

std::span<const double> Tensor::values() const {
  if (!node_) return {};
  return node_->values;
}

std::span<double> Tensor::mutable_values() {
  if (!node_) return {};
  if (!node_->parents.empty()) throw std::logic_error("mutable_values on a non-leaf tensor");
  return node_->values;
}

double Tensor::item() const {
  if (size() != 1) throw std::invalid_argument("item: tensor has " + std::to_string(size()) + " elements");
  return node_->values[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

bool Tensor::is_leaf() const { return node_ && node_->parents.empty(); }

std::span<const double> Tensor::grad() const {
  if (!node_) return {};
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

Tensor Tensor::detach(bool requires_grad) const {
  require_defined(*this, "detach");
  return Tensor(node_->shape, node_->values, requires_grad);
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_recording_enabled() { return g_grad_enabled; }

// ---------------------------------------------------------------------------
// Convolution

namespace {

// Above this many column entries conv falls back to the direct row loops.
constexpr std::size_t kMaxColumnEntries = std::size_t{1} << 25;

// Column matrix [cin·taps, out_plane]: row r = ic·taps + tap holds the input
// samples that tap reads for every output position, zero where padded.
std::vector<double> im2col(const ConvGeom& g, const double* in) {
  const std::size_t in_plane = g.d * g.h * g.w;
  const std::size_t out_plane = g.od * g.oh * g.ow;
  const std::size_t taps = g.kd * g.kh * g.kw;
  std::vector<double> col(g.cin * taps * out_plane, 0.0);
  for (std::size_t ic = 0; ic < g.cin; ++ic) {
    const double* src = in + ic * in_plane;
    double* base = col.data() + ic * taps * out_plane;
    for_each_tap_row(g, [&](std::size_t tap, std::ptrdiff_t in_off, std::size_t out_off,
                            std::ptrdiff_t lo, std::ptrdiff_t hi) {
      double* row = base + tap * out_plane + out_off;
      for (std::ptrdiff_t x = lo; x < hi; ++x) row[x] = src[in_off + x];
    });
  }
  return col;
}

}  // namespace

Tensor conv(const Tensor& input, const Tensor& kernel, Padding padding, int dims) {
  const ConvGeom g = conv_geometry(input, kernel, padding, dims);
  const std::size_t in_plane = g.d * g.h * g.w;
  const std::size_t out_plane = g.od * g.oh * g.ow;
  const std::size_t taps = g.kd * g.kh * g.kw;
  const std::size_t rows = g.cin * taps;
  const bool use_col = rows * out_plane <= kMaxColumnEntries;

  std::vector<double> out(g.cout * out_plane, 0.0);
  const double* in = input.values().data();
  const double* k = kernel.values().data();
  // Both paths accumulate each output in (ic, tap) order, so they agree bit for bit.
  if (use_col) {
    const std::vector<double> col = im2col(g, in);
    std::size_t oc = 0;
    // Four output channels per pass share each column load.
    for (; oc + 4 <= g.cout; oc += 4) {
      double* d0 = out.data() + oc * out_plane;
      double* d1 = d0 + out_plane;
      double* d2 = d1 + out_plane;
      double* d3 = d2 + out_plane;
      for (std::size_t r = 0; r < rows; ++r) {
        const double w0 = k[oc * rows + r], w1 = k[(oc + 1) * rows + r];
        const double w2 = k[(oc + 2) * rows + r], w3 = k[(oc + 3) * rows + r];
        const double* c = col.data() + r * out_plane;
        for (std::size_t p = 0; p < out_plane; ++p) {
          const double v = c[p];
          d0[p] += w0 * v;
          d1[p] += w1 * v;
          d2[p] += w2 * v;
          d3[p] += w3 * v;
        }
      }
    }
    for (; oc < g.cout; ++oc) {
      double* dst = out.data() + oc * out_plane;
      for (std::size_t r = 0; r < rows; ++r) {
        const double wv = k[oc * rows + r];
        const double* c = col.data() + r * out_plane;
        for (std::size_t p = 0; p < out_plane; ++p) dst[p] += wv * c[p];
      }
    }
  } else {
    for (std::size_t oc = 0; oc < g.cout; ++oc) {
      for (std::size_t ic = 0; ic < g.cin; ++ic) {
        const double* kin = k + (oc * g.cin + ic) * taps;
        const double* src = in + ic * in_plane;
        double* dst = out.data() + oc * out_plane;
        for_each_tap_row(g, [&](std::size_t tap, std::ptrdiff_t in_off, std::size_t out_off,
                                std::ptrdiff_t lo, std::ptrdiff_t hi) {
          const double wv = kin[tap];
          double* o = dst + out_off;
          for (std::ptrdiff_t x = lo; x < hi; ++x) o[x] += wv * src[in_off + x];
        });
      }
    }
  }

  Shape out_shape = make_spatial_shape(g.cout, g.od, g.oh, g.ow, g.rank);
  return make_result("conv", std::move(out_shape), std::move(out), {&input, &kernel},
                     [g, in_plane, out_plane, taps, rows, use_col](Node& self) {
    Node& in_n = *self.parents[0];
    Node& k_n = *self.parents[1];
    const double* gout = self.grad.data();
    const double* kv = k_n.values.data();
    if (use_col) {
      if (in_n.requires_grad) {
        std::vector<double> gcol(rows * out_plane, 0.0);
        std::size_t r = 0;
        for (; r + 4 <= rows; r += 4) {
          double* g0 = gcol.data() + r * out_plane;
          double* g1 = g0 + out_plane;
          double* g2 = g1 + out_plane;
          double* g3 = g2 + out_plane;
          for (std::size_t oc = 0; oc < g.cout; ++oc) {
            const double* go = gout + oc * out_plane;
            const double* kr = kv + oc * rows + r;
            const double w0 = kr[0], w1 = kr[1], w2 = kr[2], w3 = kr[3];
            for (std::size_t p = 0; p < out_plane; ++p) {
              const double v = go[p];
              g0[p] += w0 * v;
              g1[p] += w1 * v;
              g2[p] += w2 * v;
              g3[p] += w3 * v;
            }
          }
        }
        for (; r < rows; ++r) {
          double* gc = gcol.data() + r * out_plane;
          for (std::size_t oc = 0; oc < g.cout; ++oc) {
            const double wv = kv[oc * rows + r];
            const double* go = gout + oc * out_plane;
            for (std::size_t p = 0; p < out_plane; ++p) gc[p] += wv * go[p];
          }
        }
        double* gin = grad_of(in_n).data();
        for (std::size_t ic = 0; ic < g.cin; ++ic) {
          double* dst = gin + ic * in_plane;
          const double* base = gcol.data() + ic * taps * out_plane;
          for_each_tap_row(g, [&](std::size_t tap, std::ptrdiff_t in_off, std::size_t out_off,
                                  std::ptrdiff_t lo, std::ptrdiff_t hi) {
            const double* row = base + tap * out_plane + out_off;
            for (std::ptrdiff_t x = lo; x < hi; ++x) dst[in_off + x] += row[x];
          });
        }
      }
      if (k_n.requires_grad) {
        const std::vector<double> col = im2col(g, in_n.values.data());
        double* gk = grad_of(k_n).data();
        for (std::size_t oc = 0; oc < g.cout; ++oc) {
          const double* go = gout + oc * out_plane;
          std::size_t r = 0;
          for (; r + 4 <= rows; r += 4) {
            const double* c0 = col.data() + r * out_plane;
            const double* c1 = c0 + out_plane;
            const double* c2 = c1 + out_plane;
            const double* c3 = c2 + out_plane;
            double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
            for (std::size_t p = 0; p < out_plane; ++p) {
              const double v = go[p];
              a0 += v * c0[p];
              a1 += v * c1[p];
              a2 += v * c2[p];
              a3 += v * c3[p];
            }
            gk[oc * rows + r] += a0;
            gk[oc * rows + r + 1] += a1;
            gk[oc * rows + r + 2] += a2;
            gk[oc * rows + r + 3] += a3;
          }
          for (; r < rows; ++r) {
            const double* c = col.data() + r * out_plane;
            double acc = 0.0;
            for (std::size_t p = 0; p < out_plane; ++p) acc += go[p] * c[p];
            gk[oc * rows + r] += acc;
          }
        }
      }
      return;
    }
    if (in_n.requires_grad) {
      double* gin = grad_of(in_n).data();
      for (std::size_t oc = 0; oc < g.cout; ++oc) {
        for (std::size_t ic = 0; ic < g.cin; ++ic) {
          const double* kin = kv + (oc * g.cin + ic) * taps;
          double* dst = gin + ic * in_plane;
          const double* src = gout + oc * out_plane;
          for_each_tap_row(g, [&](std::size_t tap, std::ptrdiff_t in_off, std::size_t out_off,
                                  std::ptrdiff_t lo, std::ptrdiff_t hi) {
            const double wv = kin[tap];
            const double* s = src + out_off;
            for (std::ptrdiff_t x = lo; x < hi; ++x) dst[in_off + x] += wv * s[x];
          });
        }
      }
    }
    if (k_n.requires_grad) {
      double* gk = grad_of(k_n).data();
      const double* iv = in_n.values.data();
      for (std::size_t oc = 0; oc < g.cout; ++oc) {
        for (std::size_t ic = 0; ic < g.cin; ++ic) {
          double* gkin = gk + (oc * g.cin + ic) * taps;
          const double* src = iv + ic * in_plane;
          const double* go = gout + oc * out_plane;
          for_each_tap_row(g, [&](std::size_t tap, std::ptrdiff_t in_off, std::size_t out_off,
                                  std::ptrdiff_t lo, std::ptrdiff_t hi) {
            const double* o = go + out_off;
            double acc = 0.0;
            for (std::ptrdiff_t x = lo; x < hi; ++x) acc += o[x] * src[in_off + x];
            gkin[tap] += acc;
          });
        }
      }
    }
  });
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  require_defined(x, "add_channel_bias");
  require_defined(bias, "add_channel_bias");
  const std::size_t c = x.dim(0);
  if (bias.size() != c) throw std::invalid_argument("add_channel_bias: bias size mismatch");
  const std::size_t plane = x.size() / c;
  std::vector<double> out(x.values().begin(), x.values().end());
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double b = bias[ch];
    for (std::size_t i = 0; i < plane; ++i) out[ch * plane + i] += b;
  }
  return make_result("add_channel_bias", x.shape(), std::move(out), {&x, &bias},
                     [c, plane](Node& self) {
    Node& xn = *self.parents[0];
    Node& bn = *self.parents[1];
    if (xn.requires_grad) {
      auto& gx = grad_of(xn);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
    }
    if (bn.requires_grad) {
      auto& gb = grad_of(bn);
      for (std::size_t ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) acc += self.grad[ch * plane + i];
        gb[ch] += acc;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Resampling

Tensor pool_avg(const Tensor& x, std::size_t factor) {
  require_defined(x, "pool_avg");
  if (factor == 0) throw std::invalid_argument("pool_avg: factor must be positive");
  const Spatial s = spatial_of(x, "pool_avg");
  const std::size_t fd = x.rank() == 4 ? factor : 1;
  if (s.d % fd || s.h % factor || s.w % factor) {
    throw std::invalid_argument("pool_avg: spatial dims " + shape_str(x.shape()) +
                                " not divisible by " + std::to_string(factor));
  }
  const std::size_t od = s.d / fd, oh = s.h / factor, ow = s.w / factor;
  const double inv = 1.0 / static_cast<double>(fd * factor * factor);
  const auto in = x.values();
  std::vector<double> out(s.c * od * oh * ow, 0.0);
  for (std::size_t c = 0; c < s.c; ++c)
    for (std::size_t z = 0; z < od; ++z)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xo = 0; xo < ow; ++xo) {
          double acc = 0.0;
          for (std::size_t a = 0; a < fd; ++a)
            for (std::size_t b = 0; b < factor; ++b)
              for (std::size_t e = 0; e < factor; ++e)
                acc += in[((c * s.d + z * fd + a) * s.h + y * factor + b) * s.w + xo * factor + e];
          out[((c * od + z) * oh + y) * ow + xo] = acc * inv;
        }
  return make_result("pool_avg", make_spatial_shape(s.c, od, oh, ow, x.rank()), std::move(out),
                     {&x}, [s, fd, factor, od, oh, ow, inv](Node& self) {
    auto& gx = grad_of(*self.parents[0]);
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t z = 0; z < od; ++z)
        for (std::size_t y = 0; y < oh; ++y)
          for (std::size_t xo = 0; xo < ow; ++xo) {
            const double g = self.grad[((c * od + z) * oh + y) * ow + xo] * inv;
            for (std::size_t a = 0; a < fd; ++a)
              for (std::size_t b = 0; b < factor; ++b)
                for (std::size_t e = 0; e < factor; ++e)
                  gx[((c * s.d + z * fd + a) * s.h + y * factor + b) * s.w + xo * factor + e] += g;
          }
  });
}

Tensor upsample_nearest(const Tensor& x, std::size_t factor) {
  require_defined(x, "upsample_nearest");
  if (factor == 0) throw std::invalid_argument("upsample_nearest: factor must be positive");
  const Spatial s = spatial_of(x, "upsample_nearest");
  const std::size_t fd = x.rank() == 4 ? factor : 1;
  const std::size_t od = s.d * fd, oh = s.h * factor, ow = s.w * factor;
  const auto in = x.values();
  std::vector<double> out(s.c * od * oh * ow);
  for (std::size_t c = 0; c < s.c; ++c)
    for (std::size_t z = 0; z < od; ++z)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xo = 0; xo < ow; ++xo)
          out[((c * od + z) * oh + y) * ow + xo] =
              in[((c * s.d + z / fd) * s.h + y / factor) * s.w + xo / factor];
  return make_result("upsample_nearest", make_spatial_shape(s.c, od, oh, ow, x.rank()),
                     std::move(out), {&x}, [s, fd, factor, od, oh, ow](Node& self) {
    auto& gx = grad_of(*self.parents[0]);
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t z = 0; z < od; ++z)
        for (std::size_t y = 0; y < oh; ++y)
          for (std::size_t xo = 0; xo < ow; ++xo)
            gx[((c * s.d + z / fd) * s.h + y / factor) * s.w + xo / factor] +=
                self.grad[((c * od + z) * oh + y) * ow + xo];
  });
}

// ---------------------------------------------------------------------------
// Pointwise

Tensor relu(const Tensor& x) {
  require_defined(x, "relu");
  std::vector<double> out(x.size());
  const auto in = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
  return make_result("relu", x.shape(), std::move(out), {&x}, [](Node& self) {
    Node& xn = *self.parents[0];
    auto& gx = grad_of(xn);
    for (std::size_t i = 0; i < gx.size(); ++i)
      if (xn.values[i] > 0.0) gx[i] += self.grad[i];
  });
}

Tensor sigmoid(const Tensor& x) {
  require_defined(x, "sigmoid");
  std::vector<double> out(x.size());
  const auto in = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    // Branch keeps exp() from overflowing for large |x|.
    const double v = in[i];
    if (v >= 0.0) {
      out[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      out[i] = e / (1.0 + e);
    }
  }
  return make_result("sigmoid", x.shape(), std::move(out), {&x}, [](Node& self) {
    auto& gx = grad_of(*self.parents[0]);
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const double s = self.values[i];
      gx[i] += self.grad[i] * s * (1.0 - s);
    }
  });
}

Tensor clamp01(const Tensor& x) {
  require_defined(x, "clamp01");
  std::vector<double> out(x.size());
  const auto in = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(in[i], 0.0, 1.0);
  return make_result("clamp01", x.shape(), std::move(out), {&x}, [](Node& self) {
    Node& xn = *self.parents[0];
    auto& gx = grad_of(xn);
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const double v = xn.values[i];
      if (v >= 0.0 && v <= 1.0) gx[i] += self.grad[i];
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_result("add", a.shape(), std::move(out), {&a, &b}, [](Node& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& g = grad_of(*p);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return make_result("sub", a.shape(), std::move(out), {&a, &b}, [](Node& self) {
    if (self.parents[0]->requires_grad) {
      auto& g = grad_of(*self.parents[0]);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (self.parents[1]->requires_grad) {
      auto& g = grad_of(*self.parents[1]);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_result("mul", a.shape(), std::move(out), {&a, &b}, [](Node& self) {
    Node& an = *self.parents[0];
    Node& bn = *self.parents[1];
    if (an.requires_grad) {
      auto& g = grad_of(an);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bn.values[i];
    }
    if (bn.requires_grad) {
      auto& g = grad_of(bn);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * an.values[i];
    }
  });
}

Tensor scale(const Tensor& x, double s) {
  require_defined(x, "scale");
  std::vector<double> out(x.size());
  const auto in = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] * s;
  return make_result("scale", x.shape(), std::move(out), {&x}, [s](Node& self) {
    auto& g = grad_of(*self.parents[0]);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
  });
}

Tensor mul_channel_broadcast(const Tensor& x, const Tensor& gate) {
  require_defined(x, "mul_channel_broadcast");
  require_defined(gate, "mul_channel_broadcast");
  if (x.rank() < 2 || gate.rank() != x.rank() || gate.dim(0) != 1 ||
      !std::equal(x.shape().begin() + 1, x.shape().end(), gate.shape().begin() + 1)) {
    throw std::invalid_argument("mul_channel_broadcast: gate " + shape_str(gate.shape()) +
                                " does not match " + shape_str(x.shape()));
  }
  const std::size_t c = x.dim(0);
  const std::size_t plane = gate.size();
  std::vector<double> out(x.size());
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < plane; ++i) out[ch * plane + i] = x[ch * plane + i] * gate[i];
  return make_result("mul_channel_broadcast", x.shape(), std::move(out), {&x, &gate},
                     [c, plane](Node& self) {
    Node& xn = *self.parents[0];
    Node& gn = *self.parents[1];
    if (xn.requires_grad) {
      auto& g = grad_of(xn);
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < plane; ++i)
          g[ch * plane + i] += self.grad[ch * plane + i] * gn.values[i];
    }
    if (gn.requires_grad) {
      auto& g = grad_of(gn);
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < plane; ++i)
          g[i] += self.grad[ch * plane + i] * xn.values[ch * plane + i];
    }
  });
}

// ---------------------------------------------------------------------------
// Channel plumbing

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require_defined(a, "concat_channels");
  require_defined(b, "concat_channels");
  if (a.rank() < 2 || a.rank() != b.rank() ||
      !std::equal(a.shape().begin() + 1, a.shape().end(), b.shape().begin() + 1)) {
    throw std::invalid_argument("concat_channels: spatial mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
  Shape shape = a.shape();
  shape[0] += b.dim(0);
  std::vector<double> out;
  out.reserve(a.size() + b.size());
  out.insert(out.end(), a.values().begin(), a.values().end());
  out.insert(out.end(), b.values().begin(), b.values().end());
  const std::size_t na = a.size();
  return make_result("concat_channels", std::move(shape), std::move(out), {&a, &b},
                     [na](Node& self) {
    Node& an = *self.parents[0];
    Node& bn = *self.parents[1];
    if (an.requires_grad) {
      auto& g = grad_of(an);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (bn.requires_grad) {
      auto& g = grad_of(bn);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[na + i];
    }
  });
}

Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t count) {
  require_defined(x, "slice_channels");
  if (x.rank() < 1 || begin + count > x.dim(0) || count == 0) {
    throw std::invalid_argument("slice_channels: range out of bounds for " + shape_str(x.shape()));
  }
  const std::size_t plane = x.size() / x.dim(0);
  Shape shape = x.shape();
  shape[0] = count;
  std::vector<double> out(x.values().begin() + static_cast<std::ptrdiff_t>(begin * plane),
                          x.values().begin() + static_cast<std::ptrdiff_t>((begin + count) * plane));
  const std::size_t offset = begin * plane;
  return make_result("slice_channels", std::move(shape), std::move(out), {&x},
                     [offset](Node& self) {
    auto& g = grad_of(*self.parents[0]);
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[offset + i] += self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& x) {
  require_defined(x, "sum");
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  return make_result("sum", Shape{1}, {acc}, {&x}, [](Node& self) {
    auto& g = grad_of(*self.parents[0]);
    for (double& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  require_defined(x, "mean");
  if (x.size() == 0) throw std::invalid_argument("mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor reduce_mean_abs(const Tensor& a, const Tensor& b, const std::optional<Tensor>& weight_map) {
  require_same_shape(a, b, "reduce_mean_abs");
  if (a.size() == 0) throw std::invalid_argument("reduce_mean_abs: empty tensors");
  std::vector<double> w;
  if (weight_map) {
    require_same_shape(a, *weight_map, "reduce_mean_abs weight map");
    w.assign(weight_map->values().begin(), weight_map->values().end());
    for (double v : w) {
      if (v < 0.0) throw std::invalid_argument("reduce_mean_abs: negative weight");
    }
  }
  const double inv = 1.0 / static_cast<double>(a.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = std::abs(a[i] - b[i]);
    acc += w.empty() ? d : w[i] * d;
  }
  return make_result("reduce_mean_abs", Shape{1}, {acc * inv}, {&a, &b},
                     [w = std::move(w), inv](Node& self) {
    Node& an = *self.parents[0];
    Node& bn = *self.parents[1];
    const double g0 = self.grad[0] * inv;
    auto contrib = [&](std::size_t i) {
      const double d = an.values[i] - bn.values[i];
      const double sgn = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
      return g0 * sgn * (w.empty() ? 1.0 : w[i]);
    };
    if (an.requires_grad) {
      auto& g = grad_of(an);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += contrib(i);
    }
    if (bn.requires_grad) {
      auto& g = grad_of(bn);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= contrib(i);
    }
  });
}

// ---------------------------------------------------------------------------
// Reverse pass

void backprop(const Tensor& loss) {
  require_defined(loss, "backprop");
  if (loss.size() != 1) {
    throw std::invalid_argument("backprop: loss must have exactly one element, got " +
                                shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  // Iterative DFS post-order; a grey node reached again means a cycle.
  enum class Mark : char { grey, black };
  std::unordered_map<Node*, Mark> marks;
  std::vector<Node*> order;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  marks[loss.node().get()] = Mark::grey;
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (!p->requires_grad) continue;
      auto it = marks.find(p);
      if (it == marks.end()) {
        marks[p] = Mark::grey;
        stack.emplace_back(p, 0);
      } else if (it->second == Mark::grey) {
        throw std::logic_error("backprop: cycle in computation graph");
      }
    } else {
      marks[n] = Mark::black;
      order.push_back(n);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (!n->parents.empty()) n->grad.assign(n->values.size(), 0.0);
  }
  Node* root = loss.node().get();
  grad_of(*root);
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward) n->backward(*n);
  }
  for (Node* n : order) {
    if (n->parents.empty()) check_finite(n->grad, "backprop");
  }
}

}  // namespace mkr
