#include "mkrecon/models.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mkrecon/rng.hpp"

namespace mkr {

// ---------------------------------------------------------------------------
// ParameterSet

void ParameterSet::add(std::string name, Tensor value) {
  if (contains(name)) throw std::invalid_argument("ParameterSet: duplicate name " + name);
  entries_.push_back({std::move(name), std::move(value)});
}

const Tensor& ParameterSet::get(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e.value;
  throw std::out_of_range("ParameterSet: missing parameter " + name);
}

Tensor& ParameterSet::get(const std::string& name) {
  return const_cast<Tensor&>(std::as_const(*this).get(name));
}

bool ParameterSet::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const NamedTensor& e) { return e.name == name; });
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& e : entries_) e.value.zero_grad();
}

ParameterSet ParameterSet::clone() const {
  ParameterSet out;
  for (const auto& e : entries_) out.add(e.name, e.value.detach(true));
  return out;
}

namespace {

// Adds conv weight + bias. Weights ~ U(-b, b) with b = sqrt(6/fan_in) (He
// uniform), which keeps ReLU activations from shrinking layer by layer.
void add_conv(ParameterSet& ps, SplitMix64& rng, const std::string& name, std::size_t cout,
              std::size_t cin, std::size_t k, int dims, bool zero = false, bool with_bias = true) {
  Shape shape{cout, cin, k, k};
  if (dims == 3) shape.insert(shape.begin() + 2, k);
  const std::size_t n = shape_numel(shape);
  const std::size_t fan_in = n / cout;
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<double> w(n, 0.0);
  if (!zero) {
    for (double& v : w) v = rng.uniform(-bound, bound);
  }
  ps.add(name + ".w", Tensor(std::move(shape), std::move(w), true));
  if (with_bias) ps.add(name + ".b", Tensor(Shape{cout}, 0.0, true));
}

Tensor conv_bias(const Tensor& x, const ParameterSet& ps, const std::string& name, int dims) {
  return add_channel_bias(conv(x, ps.get(name + ".w"), Padding::zero_same, dims), ps.get(name + ".b"));
}

Tensor conv_relu(const Tensor& x, const ParameterSet& ps, const std::string& name, int dims) {
  return relu(conv_bias(x, ps, name, dims));
}

std::size_t channels_at(const UNetConfig& c, int level) {
  return static_cast<std::size_t>(c.base_channels) << level;
}

std::size_t gate_channels(std::size_t ch) { return std::max<std::size_t>(1, ch / 2); }

}  // namespace

// ---------------------------------------------------------------------------
// Stage 1

SliceModel init_slice_model(const UNetConfig& config, std::uint64_t seed) {
  if (config.levels < 1 || config.base_channels < 1) {
    throw std::invalid_argument("init_slice_model: levels and base_channels must be positive");
  }
  SplitMix64 rng(seed);
  SliceModel m{config, {}};
  auto& ps = m.params;
  std::size_t in_ch = 2;
  for (int l = 0; l < config.levels; ++l) {
    const std::size_t ch = channels_at(config, l);
    const std::string p = "enc" + std::to_string(l);
    add_conv(ps, rng, p + ".conv1", ch, in_ch, 3, 2);
    add_conv(ps, rng, p + ".conv2", ch, ch, 3, 2);
    in_ch = ch;
  }
  const std::size_t bott = channels_at(config, config.levels);
  add_conv(ps, rng, "bottleneck.conv1", bott, in_ch, 3, 2);
  add_conv(ps, rng, "bottleneck.conv2", bott, bott, 3, 2);
  for (int l = config.levels - 1; l >= 0; --l) {
    const std::size_t ch = channels_at(config, l);
    const std::size_t below = channels_at(config, l + 1);
    const std::string p = "dec" + std::to_string(l);
    const std::string a = "att" + std::to_string(l);
    const std::size_t inter = gate_channels(ch);
    add_conv(ps, rng, p + ".up", ch, below, 3, 2);
    add_conv(ps, rng, a + ".gating", inter, ch, 1, 2);
    add_conv(ps, rng, a + ".skip", inter, ch, 1, 2, false, false);
    add_conv(ps, rng, a + ".psi", 1, inter, 1, 2);
    add_conv(ps, rng, p + ".conv1", ch, 2 * ch, 3, 2);
    add_conv(ps, rng, p + ".conv2", ch, ch, 3, 2);
  }
  add_conv(ps, rng, "head", 1, channels_at(config, 0), 1, 2, true);
  return m;
}

AttentionGateParams attention_gate_params(const ParameterSet& params, const std::string& prefix) {
  return {params.get(prefix + ".gating.w"), params.get(prefix + ".gating.b"),
          params.get(prefix + ".skip.w"), params.get(prefix + ".psi.w"),
          params.get(prefix + ".psi.b")};
}

Tensor attention_gate(const Tensor& gating, const Tensor& skip, const AttentionGateParams& p) {
  if (gating.rank() != 3 || skip.rank() != 3 || gating.dim(1) != skip.dim(1) ||
      gating.dim(2) != skip.dim(2)) {
    throw std::invalid_argument("attention_gate: spatial mismatch " + shape_str(gating.shape()) +
                                " vs " + shape_str(skip.shape()));
  }
  Tensor g = add_channel_bias(conv(gating, p.w_gating, Padding::zero_same, 2), p.b_gating);
  Tensor x = conv(skip, p.w_skip, Padding::zero_same, 2);
  Tensor psi = add_channel_bias(conv(relu(add(g, x)), p.w_psi, Padding::zero_same, 2), p.b_psi);
  return mul_channel_broadcast(skip, sigmoid(psi));
}

Tensor slice_forward(const Tensor& slice_a, const Tensor& slice_b, const SliceModel& model, Mode mode) {
  if (slice_a.shape() != slice_b.shape() || slice_a.rank() != 3 || slice_a.dim(0) != 1) {
    throw std::invalid_argument("slice_forward: expected two [1,H,W] slices, got " +
                                shape_str(slice_a.shape()) + " and " + shape_str(slice_b.shape()));
  }
  const std::size_t div = std::size_t{1} << model.config.levels;
  if (slice_a.dim(1) % div || slice_a.dim(2) % div) {
    throw std::invalid_argument("slice_forward: H and W must be divisible by " + std::to_string(div));
  }
  for (const Tensor* t : {&slice_a, &slice_b})
    for (double v : t->values())
      if (v < 0.0 || v > 1.0) throw std::invalid_argument("slice_forward: input outside [0,1]");

  const auto& ps = model.params;
  const int levels = model.config.levels;
  std::vector<Tensor> skips;
  Tensor x = concat_channels(slice_a, slice_b);
  for (int l = 0; l < levels; ++l) {
    const std::string p = "enc" + std::to_string(l);
    x = conv_relu(conv_relu(x, ps, p + ".conv1", 2), ps, p + ".conv2", 2);
    skips.push_back(x);
    x = pool_avg(x, 2);
  }
  x = conv_relu(conv_relu(x, ps, "bottleneck.conv1", 2), ps, "bottleneck.conv2", 2);
  for (int l = levels - 1; l >= 0; --l) {
    const std::string p = "dec" + std::to_string(l);
    Tensor up = conv_relu(upsample_nearest(x, 2), ps, p + ".up", 2);
    Tensor gated = attention_gate(up, skips[static_cast<std::size_t>(l)],
                                  attention_gate_params(ps, "att" + std::to_string(l)));
    x = concat_channels(up, gated);
    x = conv_relu(conv_relu(x, ps, p + ".conv1", 2), ps, p + ".conv2", 2);
  }
  Tensor delta = conv_bias(x, ps, "head", 2);
  Tensor base = scale(add(slice_a, slice_b), 0.5);
  Tensor out = add(base, delta);
  return mode == Mode::infer ? clamp01(out) : out;
}

// ---------------------------------------------------------------------------
// Stage 2

RefineModel init_refine_model(const RefineConfig& config, std::uint64_t seed) {
  if (config.hidden_channels < 1) throw std::invalid_argument("init_refine_model: hidden_channels < 1");
  SplitMix64 rng(seed);
  RefineModel m{config, {}};
  const auto h = static_cast<std::size_t>(config.hidden_channels);
  add_conv(m.params, rng, "conv1", h, 1, 3, 3);
  add_conv(m.params, rng, "conv2", h, h, 3, 3);
  add_conv(m.params, rng, "conv3", 1, h, 3, 3, true);
  return m;
}

Tensor refine_forward(const Tensor& volume, const RefineModel& model) {
  if (volume.rank() != 4 || volume.dim(0) != 1) {
    throw std::invalid_argument("refine_forward: expected a [1,D,H,W] volume, got " +
                                shape_str(volume.shape()));
  }
  const auto& ps = model.params;
  Tensor x = conv_relu(volume, ps, "conv1", 3);
  x = conv_relu(x, ps, "conv2", 3);
  return conv_bias(x, ps, "conv3", 3);
}

Tensor apply_refinement(const Tensor& volume, const Tensor& refinement, double alpha, Mode mode) {
  if (volume.shape() != refinement.shape()) {
    throw std::invalid_argument("apply_refinement: shape mismatch " + shape_str(volume.shape()) +
                                " vs " + shape_str(refinement.shape()));
  }
  Tensor out = add(volume, scale(refinement, alpha));
  return mode == Mode::infer ? clamp01(out) : out;
}

}  // namespace mkr
