#include "mkrecon/losses.hpp"

#include <stdexcept>

namespace mkr {

namespace {

// Values of a [1, (D,) H, W] weight map restricted to the valid region of a
// 3-wide kernel (one voxel trimmed from every spatial border).
Tensor crop_valid(const Tensor& map, int dims) {
  const Shape& s = map.shape();
  const std::size_t d = dims == 3 ? s[1] : 1;
  const std::size_t h = s[s.size() - 2];
  const std::size_t w = s[s.size() - 1];
  const std::size_t dz = dims == 3 ? 1 : 0;
  const std::size_t od = d - 2 * dz, oh = h - 2, ow = w - 2;
  std::vector<double> out;
  out.reserve(od * oh * ow);
  const auto v = map.values();
  for (std::size_t z = 0; z < od; ++z)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) out.push_back(v[((z + dz) * h + y + 1) * w + x + 1]);
  Shape cropped = dims == 3 ? Shape{1, od, oh, ow} : Shape{1, oh, ow};
  return Tensor(std::move(cropped), std::move(out));
}

}  // namespace

double Stage2LossConfig::alpha2(int epoch) const {
  if (epoch < 0) throw std::invalid_argument("alpha2: negative epoch");
  const double a = alpha2_initial - static_cast<double>(epoch) * alpha2_decrement_per_epoch;
  return a > 0.0 ? a : 0.0;
}

Tensor l1_loss(const Tensor& pred, const Tensor& target, const std::optional<Tensor>& weight_map) {
  return reduce_mean_abs(pred, target, weight_map);
}

Tensor filtered_l1_loss(const Tensor& pred, const Tensor& target, const KernelBank& bank,
                        const std::optional<Tensor>& weight_map) {
  if (pred.shape() != target.shape()) {
    throw std::invalid_argument("filtered_l1_loss: shape mismatch " + shape_str(pred.shape()) +
                                " vs " + shape_str(target.shape()));
  }
  if (bank.kernels.empty()) throw std::invalid_argument("filtered_l1_loss: empty bank");
  if (pred.rank() != static_cast<std::size_t>(bank.dims) + 1) {
    throw std::invalid_argument("filtered_l1_loss: " + std::to_string(bank.dims) +
                                "D bank needs a rank-" + std::to_string(bank.dims + 1) + " input");
  }
  for (std::size_t i = 1; i < pred.rank(); ++i) {
    if (pred.dim(i) < 3) {
      throw std::invalid_argument("filtered_l1_loss: input " + shape_str(pred.shape()) +
                                  " smaller than kernel");
    }
  }
  std::optional<Tensor> cropped;
  if (weight_map) {
    if (weight_map->shape() != pred.shape()) {
      throw std::invalid_argument("filtered_l1_loss: weight map shape mismatch");
    }
    cropped = crop_valid(*weight_map, bank.dims);
  }

  Tensor total;
  for (const auto& k : bank.kernels) {
    Tensor fp = conv(pred, k.kernel, Padding::valid, bank.dims);
    Tensor ft = conv(target, k.kernel, Padding::valid, bank.dims);
    Tensor term = scale(reduce_mean_abs(fp, ft, cropped), k.weight);
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

LossTerms stage1_loss(const Tensor& pred, const Tensor& target, const Stage1LossConfig& cfg) {
  if (cfg.lambda1 < 0.0 || cfg.lambda2 < 0.0) throw std::invalid_argument("stage1_loss: negative weight");
  if (cfg.bank.dims != 2) throw std::invalid_argument("stage1_loss: needs a 2D bank");
  LossTerms t;
  t.l1 = l1_loss(pred, target);
  t.filtered = filtered_l1_loss(pred, target, cfg.bank);
  t.total = add(scale(t.l1, cfg.lambda1), scale(t.filtered, cfg.lambda2));
  return t;
}

LossTerms stage2_loss(const Tensor& pred, const Tensor& target, int epoch,
                      const std::vector<std::uint8_t>& acquired_mask, const Stage2LossConfig& cfg) {
  if (cfg.alpha1 < 0.0) throw std::invalid_argument("stage2_loss: negative alpha1");
  if (cfg.bank.dims != 3) throw std::invalid_argument("stage2_loss: needs a 3D bank");
  const double a2 = cfg.alpha2(epoch);
  const Tensor weights = depth_weight_map(acquired_mask, pred.shape(), cfg.acquired_slice_weight);
  LossTerms t;
  t.l1 = l1_loss(pred, target, weights);
  t.filtered = filtered_l1_loss(pred, target, cfg.bank, weights);
  t.total = add(scale(t.l1, cfg.alpha1), scale(t.filtered, a2));
  return t;
}

Tensor depth_weight_map(const std::vector<std::uint8_t>& acquired_mask, const Shape& shape,
                        double acquired_weight) {
  if (shape.size() < 3) throw std::invalid_argument("depth_weight_map: need a volume shape");
  if (acquired_weight < 1.0) throw std::invalid_argument("depth_weight_map: w_acq must be >= 1");
  const std::size_t depth = shape[shape.size() - 3];
  if (acquired_mask.size() != depth) {
    throw std::invalid_argument("depth_weight_map: mask length " +
                                std::to_string(acquired_mask.size()) + " != depth " +
                                std::to_string(depth));
  }
  std::size_t n_acq = 0;
  for (auto m : acquired_mask) n_acq += m ? 1 : 0;
  // Mean of the two-level map over the volume; every slice has equal size.
  const double mean = (static_cast<double>(n_acq) * acquired_weight +
                       static_cast<double>(depth - n_acq)) /
                      static_cast<double>(depth);
  const double w_acq = acquired_weight / mean;
  const double w_other = 1.0 / mean;
  const std::size_t plane = shape[shape.size() - 2] * shape[shape.size() - 1];
  const std::size_t outer = shape_numel(shape) / (depth * plane);
  std::vector<double> v(shape_numel(shape));
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t d = 0; d < depth; ++d) {
      const double w = acquired_mask[d] ? w_acq : w_other;
      std::fill_n(v.begin() + static_cast<std::ptrdiff_t>((o * depth + d) * plane), plane, w);
    }
  return Tensor(shape, std::move(v));
}

}  // namespace mkr
