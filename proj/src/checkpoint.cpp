#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <stdexcept>

#include <json.hpp>

#include "mkrecon/error.hpp"
#include "mkrecon/training.hpp"

namespace mkr {

namespace {

constexpr char kMagic[8] = {'M', 'K', 'R', 'C', 'K', 'P', 'T', '\0'};

std::uint64_t fnv1a(const std::string& bytes, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(bytes[i]);
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Writer {
 public:
  void raw(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void doubles(std::span<const double> v) {
    for (double x : v) f64(x);
  }
  std::string& buffer() { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(const std::string& buf, std::size_t end) : buf_(buf), end_(end) {}

  void need(std::size_t n) const {
    if (n > end_ - pos_) throw FormatError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(buf_[pos_++]);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_++])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_++])) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::vector<double> doubles(std::size_t n) {
    need(n * 8);
    std::vector<double> v(n);
    for (double& x : v) x = f64();
    return v;
  }
  std::size_t pos() const { return pos_; }

 private:
  const std::string& buf_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

// Non-finite doubles have no JSON spelling; -inf (the fresh plateau best)
// is written as null.
nlohmann::json json_double(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }
double double_json(const nlohmann::json& j) {
  return j.is_null() ? -std::numeric_limits<double>::infinity() : j.get<double>();
}

ParameterSet reference_params(const ModelCheckpoint& c) {
  if (c.kind == ModelKind::slice) return init_slice_model(c.unet, 0).params;
  return init_refine_model(c.refine, 0).params;
}

}  // namespace

ModelCheckpoint make_checkpoint(const SliceModel& model, int source_gap) {
  ModelCheckpoint c;
  c.kind = ModelKind::slice;
  c.unet = model.config;
  c.source_gap = source_gap;
  c.params = model.params.clone();
  return c;
}

ModelCheckpoint make_checkpoint(const RefineModel& model) {
  ModelCheckpoint c;
  c.kind = ModelKind::refine;
  c.refine = model.config;
  c.params = model.params.clone();
  return c;
}

SliceModel slice_model_from(const ModelCheckpoint& ckpt) {
  if (ckpt.kind != ModelKind::slice) throw FormatError("checkpoint holds a refinement model, not a slice model");
  return SliceModel{ckpt.unet, ckpt.params.clone()};
}

RefineModel refine_model_from(const ModelCheckpoint& ckpt) {
  if (ckpt.kind != ModelKind::refine) throw FormatError("checkpoint holds a slice model, not a refinement model");
  return RefineModel{ckpt.refine, ckpt.params.clone()};
}

void save_checkpoint(const ModelCheckpoint& ckpt, const std::filesystem::path& path) {
  nlohmann::json meta;
  meta["kind"] = ckpt.kind == ModelKind::slice ? "slice" : "refine";
  meta["unet"] = {{"levels", ckpt.unet.levels}, {"base_channels", ckpt.unet.base_channels}};
  meta["refine"] = {{"hidden_channels", ckpt.refine.hidden_channels}, {"alpha", ckpt.refine.alpha}};
  meta["source_gap"] = ckpt.source_gap;
  meta["epoch"] = ckpt.epoch;
  meta["seed"] = ckpt.seed;
  meta["rng_state"] = ckpt.rng_state;
  if (ckpt.adam) {
    const auto& a = *ckpt.adam;
    meta["adam"] = {{"lr", a.lr},       {"beta1", a.beta1}, {"beta2", a.beta2},
                    {"eps", a.eps},     {"step", a.step},   {"beta1_power", a.beta1_power},
                    {"beta2_power", a.beta2_power}};
  }
  if (ckpt.plateau) {
    const auto& p = *ckpt.plateau;
    meta["plateau"] = {{"lr", p.lr},           {"best", json_double(p.best)}, {"bad_evals", p.bad_evals},
                       {"patience", p.patience}, {"factor", p.factor},        {"min_lr", p.min_lr}};
  }
  const std::string meta_text = meta.dump();

  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.u32(ModelCheckpoint::kFormatVersion);
  w.u64(meta_text.size());
  w.raw(meta_text.data(), meta_text.size());
  const auto& entries = ckpt.params.entries();
  w.u32(static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    w.u32(static_cast<std::uint32_t>(e.name.size()));
    w.raw(e.name.data(), e.name.size());
    w.u32(static_cast<std::uint32_t>(e.value.rank()));
    for (std::size_t d : e.value.shape()) w.u64(d);
    w.doubles(e.value.values());
  }
  if (ckpt.adam) {
    if (ckpt.adam->m.size() != entries.size() || ckpt.adam->v.size() != entries.size()) {
      throw std::invalid_argument("save_checkpoint: optimizer state does not match parameters");
    }
    w.u8(1);
    for (std::size_t i = 0; i < entries.size(); ++i) {
      if (ckpt.adam->m[i].size() != entries[i].value.size() || ckpt.adam->v[i].size() != entries[i].value.size()) {
        throw std::invalid_argument("save_checkpoint: optimizer moment size mismatch for " + entries[i].name);
      }
      w.doubles(ckpt.adam->m[i]);
      w.doubles(ckpt.adam->v[i]);
    }
  } else {
    w.u8(0);
  }
  w.u64(fnv1a(w.buffer(), w.buffer().size()));

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
  if (!out) throw std::runtime_error("short write on checkpoint " + path.string());
}

ModelCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = "checkpoint " + path.string() + ": ";

  if (buf.size() < sizeof kMagic + 4 || std::memcmp(buf.data(), kMagic, sizeof kMagic) != 0) {
    throw FormatError(where + "bad magic");
  }
  Reader head(buf, buf.size());
  head.raw(sizeof kMagic);
  const std::uint32_t version = head.u32();
  if (version != ModelCheckpoint::kFormatVersion) {
    throw FormatError(where + "format version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(ModelCheckpoint::kFormatVersion) + ")");
  }
  if (buf.size() < sizeof kMagic + 4 + 8 + 8) throw FormatError(where + "truncated");
  const std::size_t body = buf.size() - 8;
  Reader tail(buf, buf.size());
  tail.raw(body);
  if (tail.u64() != fnv1a(buf, body)) throw FormatError(where + "checksum mismatch (corrupt or truncated)");

  try {
    Reader r(buf, body);
    r.raw(sizeof kMagic + 4);
    const std::uint64_t meta_len = r.u64();
    r.need(meta_len);
    const auto meta = nlohmann::json::parse(r.raw(meta_len));

    ModelCheckpoint c;
    const std::string kind = meta.at("kind").get<std::string>();
    if (kind == "slice") {
      c.kind = ModelKind::slice;
    } else if (kind == "refine") {
      c.kind = ModelKind::refine;
    } else {
      throw FormatError(where + "unknown model kind '" + kind + "'");
    }
    c.unet.levels = meta.at("unet").at("levels").get<int>();
    c.unet.base_channels = meta.at("unet").at("base_channels").get<int>();
    c.refine.hidden_channels = meta.at("refine").at("hidden_channels").get<int>();
    c.refine.alpha = meta.at("refine").at("alpha").get<double>();
    c.source_gap = meta.at("source_gap").get<int>();
    c.epoch = meta.at("epoch").get<int>();
    c.seed = meta.at("seed").get<std::uint64_t>();
    c.rng_state = meta.at("rng_state").get<std::uint64_t>();

    const ParameterSet ref = reference_params(c);
    const std::uint32_t count = r.u32();
    if (count != ref.size()) {
      throw FormatError(where + "expected " + std::to_string(ref.size()) + " tensors, found " + std::to_string(count));
    }
    for (std::uint32_t i = 0; i < count; ++i) {
      const std::string name = r.raw(r.u32());
      const std::uint32_t rank = r.u32();
      Shape shape(rank);
      for (auto& d : shape) d = r.u64();
      const auto& expect = ref.entries()[i];
      if (name != expect.name || shape != expect.value.shape()) {
        throw FormatError(where + "tensor " + std::to_string(i) + " is " + name + " " + shape_str(shape) +
                          ", architecture expects " + expect.name + " " + shape_str(expect.value.shape()));
      }
      c.params.add(name, Tensor(shape, r.doubles(shape_numel(shape)), true));
    }
    if (r.u8() != 0) {
      if (!meta.contains("adam")) throw FormatError(where + "optimizer moments without optimizer metadata");
      const auto& a = meta.at("adam");
      AdamState s;
      s.lr = a.at("lr").get<double>();
      s.beta1 = a.at("beta1").get<double>();
      s.beta2 = a.at("beta2").get<double>();
      s.eps = a.at("eps").get<double>();
      s.step = a.at("step").get<std::uint64_t>();
      s.beta1_power = a.at("beta1_power").get<double>();
      s.beta2_power = a.at("beta2_power").get<double>();
      for (const auto& e : c.params.entries()) {
        s.m.push_back(r.doubles(e.value.size()));
        s.v.push_back(r.doubles(e.value.size()));
      }
      c.adam = std::move(s);
    }
    if (meta.contains("plateau")) {
      const auto& p = meta.at("plateau");
      PlateauState s;
      s.lr = p.at("lr").get<double>();
      s.best = double_json(p.at("best"));
      s.bad_evals = p.at("bad_evals").get<int>();
      s.patience = p.at("patience").get<int>();
      s.factor = p.at("factor").get<double>();
      s.min_lr = p.at("min_lr").get<double>();
      c.plateau = s;
    }
    if (r.pos() != body) throw FormatError(where + "trailing bytes after payload");
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(where + "bad metadata: " + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError(where + "bad architecture: " + e.what());
  }
}

}  // namespace mkr
