#include <zlib.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mkrecon/data.hpp"
#include "mkrecon/error.hpp"

namespace mkr {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr int kRawVersion = 1;

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Whole file through zlib, which passes non-gzip files through unchanged.
std::vector<std::uint8_t> read_maybe_gzip(const fs::path& path) {
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (!f) throw FormatError("cannot open " + path.string());
  std::vector<std::uint8_t> out;
  std::uint8_t buf[1 << 16];
  for (;;) {
    const int n = gzread(f, buf, sizeof buf);
    if (n < 0) {
      gzclose(f);
      throw FormatError("decompression failed for " + path.string());
    }
    if (n == 0) break;
    out.insert(out.end(), buf, buf + n);
  }
  gzclose(f);
  return out;
}

// Reads a T in host order, byte-reversed when `swap` is set.
template <typename T>
T load_as(const std::uint8_t* p, bool swap) {
  T v;
  std::memcpy(&v, p, sizeof v);
  if (swap) {
    auto bytes = std::bit_cast<std::array<std::uint8_t, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    v = std::bit_cast<T>(bytes);
  }
  return v;
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

Volume load_nifti(const fs::path& path) {
  const auto bytes = read_maybe_gzip(path);
  if (bytes.size() < 348) throw FormatError(path.string() + ": truncated NIfTI header");
  const std::uint8_t* h = bytes.data();

  // Host order if sizeof_hdr reads as 348, otherwise the file is byte-swapped.
  bool swap = false;
  if (load_as<std::int32_t>(h, false) != 348) {
    swap = true;
    if (load_as<std::int32_t>(h, true) != 348) throw FormatError(path.string() + ": bad sizeof_hdr");
  }

  const std::string magic(reinterpret_cast<const char*>(h + 344), 3);
  const bool single_file = magic == "n+1";
  if (!single_file && magic != "ni1") throw FormatError(path.string() + ": bad NIfTI magic");

  std::int16_t dim[8];
  for (int i = 0; i < 8; ++i) dim[i] = load_as<std::int16_t>(h + 40 + 2 * i, swap);
  if (dim[0] < 1 || dim[0] > 7) throw FormatError(path.string() + ": bad dim[0]");
  for (int i = 4; i <= dim[0]; ++i) {
    if (dim[i] > 1) throw FormatError(path.string() + ": only 3D volumes are supported");
  }
  const auto extent = [&](int i) -> std::size_t {
    if (i > dim[0]) return 1;
    if (dim[i] < 1) throw FormatError(path.string() + ": non-positive dimension");
    return static_cast<std::size_t>(dim[i]);
  };
  const std::size_t nx = extent(1), ny = extent(2), nz = extent(3);

  const std::int16_t datatype = load_as<std::int16_t>(h + 70, swap);
  std::size_t elem = 0;
  switch (datatype) {
    case 2: elem = 1; break;    // unsigned char
    case 4: elem = 2; break;    // signed short
    case 16: elem = 4; break;   // float
    default:
      throw FormatError(path.string() + ": unsupported NIfTI datatype " + std::to_string(datatype));
  }
  float pixdim[8];
  for (int i = 0; i < 8; ++i) pixdim[i] = load_as<float>(h + 76 + 4 * i, swap);
  const float vox_offset = load_as<float>(h + 108, swap);
  const float slope = load_as<float>(h + 112, swap);
  const float inter = load_as<float>(h + 116, swap);

  std::vector<std::uint8_t> image_file;
  const std::uint8_t* data = nullptr;
  std::size_t available = 0;
  const std::size_t offset = vox_offset > 0 ? static_cast<std::size_t>(vox_offset) : 0;
  if (single_file) {
    if (offset < 348) throw FormatError(path.string() + ": vox_offset inside header");
    if (bytes.size() >= offset) {
      data = bytes.data() + offset;
      available = bytes.size() - offset;
    }
  } else {
    std::string img = path.string();
    if (ends_with(img, ".gz")) img.resize(img.size() - 3);
    if (!ends_with(img, ".hdr")) throw FormatError(path.string() + ": ni1 header must be a .hdr file");
    img.replace(img.size() - 4, 4, ".img");
    if (!fs::exists(img) && fs::exists(img + ".gz")) img += ".gz";
    image_file = read_maybe_gzip(img);
    if (image_file.size() >= offset) {
      data = image_file.data() + offset;
      available = image_file.size() - offset;
    }
  }
  const std::size_t count = nx * ny * nz;
  if (data == nullptr || available < count * elem) {
    throw FormatError(path.string() + ": truncated payload");
  }

  const bool scaled = std::isfinite(slope) && slope != 0.0f;
  Volume v(nz, ny, nx);
  for (std::size_t i = 0; i < count; ++i) {
    double raw = 0.0;
    const std::uint8_t* p = data + i * elem;
    if (datatype == 2) raw = static_cast<double>(*p);
    else if (datatype == 4) raw = static_cast<double>(load_as<std::int16_t>(p, swap));
    else raw = static_cast<double>(load_as<float>(p, swap));
    const double val = scaled ? raw * static_cast<double>(slope) + static_cast<double>(inter) : raw;
    if (!std::isfinite(val)) throw FormatError(path.string() + ": non-finite voxel");
    v.voxels[i] = val;
  }
  v.spacing_mm = std::array<double, 3>{pixdim[3], pixdim[2], pixdim[1]};
  return v;
}

Volume load_raw(const fs::path& path) {
  json header;
  try {
    header = json::parse(read_text(raw_sidecar_path(path)));
  } catch (const json::exception& e) {
    throw FormatError(raw_sidecar_path(path).string() + ": " + e.what());
  }
  Volume v;
  try {
    if (header.at("format") != "mkrecon-raw") throw FormatError("not an mkrecon-raw sidecar");
    if (header.at("version").get<int>() != kRawVersion) {
      throw FormatError("unsupported raw version " + header.at("version").dump());
    }
    if (header.at("dtype") != "float32" || header.at("byte_order") != "little") {
      throw FormatError("raw payload must be little-endian float32");
    }
    const auto dims = header.at("dims").get<std::vector<std::size_t>>();
    if (dims.size() != 3 || dims[0] == 0 || dims[1] == 0 || dims[2] == 0) {
      throw FormatError("bad dims in sidecar");
    }
    v = Volume(dims[0], dims[1], dims[2]);
    v.norm_min = header.at("norm_min").get<double>();
    v.norm_max = header.at("norm_max").get<double>();
    v.constant_source = header.value("constant_source", false);
    if (header.contains("spacing_mm") && !header["spacing_mm"].is_null()) {
      v.spacing_mm = header["spacing_mm"].get<std::array<double, 3>>();
    }
    std::fill(v.acquired.begin(), v.acquired.end(), 0);
    for (std::size_t idx : header.at("acquired").get<std::vector<std::size_t>>()) {
      if (idx >= v.depth) throw FormatError("acquired index out of range");
      v.acquired[idx] = 1;
    }
  } catch (const json::exception& e) {
    throw FormatError(raw_sidecar_path(path).string() + ": " + e.what());
  } catch (const FormatError& e) {
    throw FormatError(raw_sidecar_path(path).string() + ": " + e.what());
  }

  const std::string payload = read_text(path);
  if (payload.size() != 4 * v.size()) {
    throw FormatError(path.string() + ": payload has " + std::to_string(payload.size()) +
                      " bytes, expected " + std::to_string(4 * v.size()));
  }
  const auto* p = reinterpret_cast<const std::uint8_t*>(payload.data());
  const bool swap = std::endian::native == std::endian::big;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const float f = load_as<float>(p + 4 * i, swap);
    if (!std::isfinite(f)) throw FormatError(path.string() + ": non-finite voxel");
    v.voxels[i] = static_cast<double>(f);
  }
  return v;
}

}  // namespace

fs::path raw_sidecar_path(const fs::path& payload) {
  fs::path p = payload;
  p += ".json";
  return p;
}

void save_volume(const Volume& volume, const fs::path& path) {
  volume.check_consistent();
  std::string payload(4 * volume.size(), '\0');
  for (std::size_t i = 0; i < volume.size(); ++i) {
    const double v = volume.voxels[i];
    if (!std::isfinite(v)) throw std::invalid_argument("save_volume: non-finite voxel");
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    for (int b = 0; b < 4; ++b) payload[4 * i + b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
  }
  json header;
  header["format"] = "mkrecon-raw";
  header["version"] = kRawVersion;
  header["dtype"] = "float32";
  header["byte_order"] = "little";
  header["dims"] = {volume.depth, volume.height, volume.width};
  header["spacing_mm"] = volume.spacing_mm ? json(*volume.spacing_mm) : json(nullptr);
  header["norm_min"] = volume.norm_min;
  header["norm_max"] = volume.norm_max;
  header["constant_source"] = volume.constant_source;
  header["acquired"] = volume.acquired_indices();

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  std::ofstream side(raw_sidecar_path(path), std::ios::trunc);
  if (!side) throw FormatError("cannot write " + raw_sidecar_path(path).string());
  side << header.dump(2) << "\n";
  if (!out || !side) throw FormatError("write failed for " + path.string());
}

Volume load_volume(const fs::path& path, VolumeFormat format) {
  return format == VolumeFormat::nifti ? load_nifti(path) : load_raw(path);
}

Volume load_volume(const fs::path& path) {
  const std::string s = path.string();
  if (ends_with(s, ".nii") || ends_with(s, ".nii.gz") || ends_with(s, ".hdr") || ends_with(s, ".hdr.gz")) {
    return load_nifti(path);
  }
  return load_raw(path);
}

void write_pgm(const GrayImage& image, const fs::path& path) {
  if (image.pixels.size() != image.width * image.height) throw std::invalid_argument("write_pgm: size mismatch");
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "P5\n" << image.width << " " << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size()));
}

GrayImage read_pgm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string magic;
  std::size_t maxval = 0;
  GrayImage img;
  in >> magic >> img.width >> img.height >> maxval;
  if (magic != "P5" || maxval != 255 || !in) throw FormatError(path.string() + ": not an 8-bit P5 PGM");
  in.get();
  img.pixels.resize(img.width * img.height);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!in) throw FormatError(path.string() + ": truncated PGM");
  return img;
}

void export_slice_pgm(const Volume& volume, std::size_t index, const fs::path& path) {
  if (index >= volume.depth) {
    throw std::out_of_range("export_slice_pgm: slice " + std::to_string(index) + " out of range (depth " +
                            std::to_string(volume.depth) + ")");
  }
  GrayImage img{volume.width, volume.height, {}};
  img.pixels.reserve(volume.slice_size());
  for (double v : volume.slice(index)) {
    const double scaled = std::floor(255.0 * v + 0.5);
    img.pixels.push_back(static_cast<std::uint8_t>(std::clamp(scaled, 0.0, 255.0)));
  }
  write_pgm(img, path);
}

}  // namespace mkr
