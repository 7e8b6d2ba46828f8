#include "kemvol/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "kemvol/random.hpp"

namespace kemvol {

using nlohmann::json;
namespace fs = std::filesystem;

int Dims::max_extent() const { return std::max({x, y, z}); }

std::string to_string(const Dims& d) {
  std::ostringstream os;
  os << d.x << "x" << d.y << "x" << d.z;
  return os.str();
}

VoxelCoord coord_of(const Dims& dims, std::size_t flat) {
  const auto dx = static_cast<std::size_t>(dims.x);
  const auto dy = static_cast<std::size_t>(dims.y);
  VoxelCoord c;
  c.i = static_cast<int>(flat % dx);
  flat /= dx;
  c.j = static_cast<int>(flat % dy);
  c.k = static_cast<int>(flat / dy);
  return c;
}

std::array<double, 3> normalized_position(const Dims& dims, VoxelCoord c) {
  return {static_cast<double>(c.i + 1) / dims.x,
          static_cast<double>(c.j + 1) / dims.y,
          static_cast<double>(c.k + 1) / dims.z};
}

// --- Volume3D ---------------------------------------------------------------

Volume3D::Volume3D(Dims dims, double fill) : dims_(dims) {
  if (!dims.valid()) {
    throw VolumeError("volume dims must be positive, got " + to_string(dims));
  }
  data_.assign(dims.voxels(), fill);
}

Volume3D::Volume3D(Dims dims, std::vector<double> data,
                   std::optional<ValueRange> range)
    : dims_(dims), data_(std::move(data)), range_(range) {
  if (!dims.valid()) {
    throw VolumeError("volume dims must be positive, got " + to_string(dims));
  }
  if (data_.size() != dims.voxels()) {
    throw VolumeError("volume data length " + std::to_string(data_.size()) +
                      " does not match dims " + to_string(dims));
  }
}

// --- LabelVolume ------------------------------------------------------------

LabelVolume::LabelVolume(Dims dims, int M, std::uint8_t fill)
    : dims_(dims), M_(M) {
  if (!dims.valid()) throw VolumeError("label dims must be positive");
  if (M < 1 || M > 255) throw VolumeError("label count M must be in 1..255");
  if (fill < 1 || fill > M) throw VolumeError("label fill outside 1..M");
  labels_.assign(dims.voxels(), fill);
}

LabelVolume::LabelVolume(Dims dims, int M, std::vector<std::uint8_t> labels)
    : dims_(dims), M_(M), labels_(std::move(labels)) {
  if (!dims.valid()) throw VolumeError("label dims must be positive");
  if (M < 1 || M > 255) throw VolumeError("label count M must be in 1..255");
  if (labels_.size() != dims.voxels()) {
    throw VolumeError("label data length does not match dims");
  }
  for (std::size_t idx = 0; idx < labels_.size(); ++idx) {
    if (labels_[idx] < 1 || labels_[idx] > M) {
      throw VolumeError("label " + std::to_string(labels_[idx]) +
                        " at voxel " + std::to_string(idx) +
                        " outside 1.." + std::to_string(M));
    }
  }
}

void LabelVolume::set(std::size_t idx, std::uint8_t label) {
  if (label < 1 || label > M_) throw VolumeError("label outside 1..M");
  labels_.at(idx) = label;
}

// --- SampleMask -------------------------------------------------------------

const char* to_string(MaskRole role) {
  switch (role) {
    case MaskRole::train: return "train";
    case MaskRole::test: return "test";
    case MaskRole::subsample: return "subsample";
  }
  return "unknown";
}

SampleMask SampleMask::full(Dims dims) {
  SampleMask m;
  m.dims = dims;
  m.included.assign(dims.voxels(), 1);
  m.ratio = 1.0;
  m.role = MaskRole::subsample;
  return m;
}

std::size_t SampleMask::count() const {
  return static_cast<std::size_t>(
      std::count(included.begin(), included.end(), std::uint8_t{1}));
}

std::vector<std::size_t> SampleMask::indices() const {
  std::vector<std::size_t> out;
  out.reserve(count());
  for (std::size_t idx = 0; idx < included.size(); ++idx) {
    if (included[idx]) out.push_back(idx);
  }
  return out;
}

// --- ParameterField ---------------------------------------------------------

ParameterField::ParameterField(Dims d, int components) : dims(d), M(components) {
  if (components < 1) throw VolumeError("parameter field needs M >= 1");
  pi.assign(components, Volume3D(d, 1.0 / components));
  mu.assign(components, Volume3D(d, 0.0));
  sigma.assign(components, Volume3D(d, 1.0));
}

void ParameterField::validate(double sigma_floor, double simplex_tol) const {
  if (static_cast<int>(pi.size()) != M || static_cast<int>(mu.size()) != M ||
      static_cast<int>(sigma.size()) != M) {
    throw VolumeError("parameter field has inconsistent component count");
  }
  const std::size_t n = dims.voxels();
  for (std::size_t idx = 0; idx < n; ++idx) {
    double total = 0.0;
    for (int m = 0; m < M; ++m) {
      const double p = pi[m][idx];
      if (!(p >= 0.0)) {
        throw VolumeError("negative prior at voxel " + std::to_string(idx));
      }
      if (!(sigma[m][idx] >= sigma_floor)) {
        throw VolumeError("sigma below floor at voxel " + std::to_string(idx));
      }
      total += p;
    }
    if (std::abs(total - 1.0) > simplex_tol) {
      throw VolumeError("priors do not sum to 1 at voxel " +
                        std::to_string(idx));
    }
  }
}

// --- file I/O ---------------------------------------------------------------

namespace {

fs::path stem_of(const fs::path& path) {
  const auto ext = path.extension();
  if (ext == ".json" || ext == ".raw" || ext == ".kvol") {
    return fs::path(path).replace_extension();
  }
  return path;
}

json read_sidecar(const fs::path& path) {
  const auto side = sidecar_path(path);
  std::ifstream in(side);
  if (!in) throw VolumeError("missing sidecar " + side.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw VolumeError("malformed sidecar " + side.string() + ": " + e.what());
  }
}

Dims dims_from_sidecar(const json& side) {
  if (!side.contains("dims") || !side["dims"].is_array() ||
      side["dims"].size() != 3) {
    throw VolumeError("sidecar lacks a 3-element \"dims\" array");
  }
  Dims d{side["dims"][0].get<int>(), side["dims"][1].get<int>(),
         side["dims"][2].get<int>()};
  if (!d.valid()) throw VolumeError("sidecar dims must be positive");
  if (side.value("order", std::string("x-fastest")) != "x-fastest") {
    throw VolumeError("only x-fastest order is supported");
  }
  return d;
}

std::vector<char> read_payload(const fs::path& path) {
  const auto raw = payload_path(path);
  std::ifstream in(raw, std::ios::binary);
  if (!in) throw VolumeError("missing payload " + raw.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in),
                           std::istreambuf_iterator<char>());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw VolumeError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw VolumeError("write failed for " + path.string());
}

void write_bytes(const fs::path& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw VolumeError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw VolumeError("write failed for " + path.string());
}

void ensure_parent(const fs::path& path) {
  const auto parent = path.parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

float decode_f32le(const char* p) {
  std::uint32_t bits = 0;
  for (int b = 3; b >= 0; --b) {
    bits = (bits << 8) | static_cast<unsigned char>(p[b]);
  }
  return std::bit_cast<float>(bits);
}

void encode_f32le(float value, char* p) {
  auto bits = std::bit_cast<std::uint32_t>(value);
  for (int b = 0; b < 4; ++b) {
    p[b] = static_cast<char>(bits & 0xFFu);
    bits >>= 8;
  }
}

Volume3D decode_volume(Dims d, const std::vector<char>& bytes,
                       std::optional<ValueRange> range) {
  const std::size_t n = d.voxels();
  if (bytes.size() != 4 * n) {
    throw VolumeError("payload size " + std::to_string(bytes.size()) +
                      " bytes does not match dims " + to_string(d) +
                      " (expected " + std::to_string(4 * n) + ")");
  }
  std::vector<double> data(n);
  for (std::size_t idx = 0; idx < n; ++idx) {
    const double value = decode_f32le(bytes.data() + 4 * idx);
    if (!std::isfinite(value)) {
      throw VolumeError("non-finite value at voxel " + std::to_string(idx));
    }
    data[idx] = value;
  }
  return Volume3D(d, std::move(data), range);
}

}  // namespace

fs::path sidecar_path(const fs::path& path) {
  return fs::path(stem_of(path)).concat(".json");
}

fs::path payload_path(const fs::path& path) {
  return fs::path(stem_of(path)).concat(".raw");
}

Volume3D load_volume(const fs::path& path) {
  const json side = read_sidecar(path);
  const Dims d = dims_from_sidecar(side);
  if (side.value("dtype", std::string()) != "f32le") {
    throw VolumeError("volume sidecar dtype must be \"f32le\"");
  }
  std::optional<ValueRange> range;
  if (side.contains("value_range") && !side["value_range"].is_null()) {
    const auto& vr = side["value_range"];
    if (!vr.is_array() || vr.size() != 2) {
      throw VolumeError("value_range must be [min, max] or null");
    }
    range = ValueRange{vr[0].get<double>(), vr[1].get<double>()};
  }
  return decode_volume(d, read_payload(path), range);
}

void store_volume(const Volume3D& v, const fs::path& path) {
  const Dims d = v.dims();
  json side;
  side["dims"] = {d.x, d.y, d.z};
  side["dtype"] = "f32le";
  side["order"] = "x-fastest";
  if (v.value_range()) {
    side["value_range"] = {v.value_range()->min, v.value_range()->max};
  } else {
    side["value_range"] = nullptr;
  }

  std::vector<char> bytes(4 * v.size());
  const auto values = v.values();
  for (std::size_t idx = 0; idx < values.size(); ++idx) {
    encode_f32le(static_cast<float>(values[idx]), bytes.data() + 4 * idx);
  }

  const auto side_file = sidecar_path(path);
  ensure_parent(side_file);
  write_text(side_file, side.dump(2) + "\n");
  write_bytes(payload_path(path), bytes);
}

LabelVolume load_labels(const fs::path& path, int M) {
  const json side = read_sidecar(path);
  const Dims d = dims_from_sidecar(side);
  if (side.value("dtype", std::string()) != "u8") {
    throw VolumeError("label sidecar dtype must be \"u8\"");
  }
  const auto bytes = read_payload(path);
  if (bytes.size() != d.voxels()) {
    throw VolumeError("label payload size " + std::to_string(bytes.size()) +
                      " does not match dims " + to_string(d));
  }
  std::vector<std::uint8_t> labels(bytes.size());
  std::transform(bytes.begin(), bytes.end(), labels.begin(),
                 [](char c) { return static_cast<std::uint8_t>(c); });
  return LabelVolume(d, M, std::move(labels));
}

void store_labels(const LabelVolume& labels, const fs::path& path) {
  const Dims d = labels.dims();
  json side;
  side["dims"] = {d.x, d.y, d.z};
  side["dtype"] = "u8";
  side["order"] = "x-fastest";
  side["value_range"] = nullptr;
  std::vector<char> bytes(labels.size());
  std::transform(labels.labels().begin(), labels.labels().end(), bytes.begin(),
                 [](std::uint8_t c) { return static_cast<char>(c); });
  const auto side_file = sidecar_path(path);
  ensure_parent(side_file);
  write_text(side_file, side.dump(2) + "\n");
  write_bytes(payload_path(path), bytes);
}

Volume3D load_metaimage(const fs::path& mhd_path) {
  std::ifstream in(mhd_path);
  if (!in) throw VolumeError("cannot open " + mhd_path.string());
  int ndims = 0;
  Dims d;
  std::string element_type;
  std::string data_file;
  bool msb = false;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    std::istringstream vs(value);
    if (key == "NDims") {
      vs >> ndims;
    } else if (key == "DimSize") {
      vs >> d.x >> d.y >> d.z;
    } else if (key == "ElementType") {
      element_type = value;
    } else if (key == "ElementDataFile") {
      data_file = value;
    } else if (key == "BinaryDataByteOrderMSB" || key == "ElementByteOrderMSB") {
      msb = (value == "True" || value == "true");
    }
  }
  if (ndims != 3) throw VolumeError("MetaImage import requires NDims = 3");
  if (!d.valid()) throw VolumeError("MetaImage DimSize must be positive");
  if (element_type != "MET_FLOAT") {
    throw VolumeError("MetaImage import requires ElementType = MET_FLOAT");
  }
  if (msb) throw VolumeError("big-endian MetaImage payloads are not supported");
  if (data_file.empty() || data_file == "LOCAL") {
    throw VolumeError("MetaImage import requires an external ElementDataFile");
  }
  const fs::path raw = mhd_path.parent_path() / data_file;
  std::ifstream rin(raw, std::ios::binary);
  if (!rin) throw VolumeError("missing MetaImage payload " + raw.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(rin)),
                          std::istreambuf_iterator<char>());
  return decode_volume(d, bytes, std::nullopt);
}

// --- value transforms -------------------------------------------------------

Volume3D normalize_to_unit(const Volume3D& v) {
  const auto values = v.values();
  if (values.empty()) throw VolumeError("cannot normalize an empty volume");
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double mn = *lo;
  const double mx = *hi;
  if (!(mx > mn)) throw VolumeError("cannot normalize a constant volume");
  const double scale = 1.0 / (mx - mn);
  std::vector<double> out(values.size());
  for (std::size_t idx = 0; idx < values.size(); ++idx) {
    out[idx] = (values[idx] - mn) * scale;
  }
  return Volume3D(v.dims(), std::move(out), ValueRange{mn, mx});
}

Volume3D denormalize(const Volume3D& v, ValueRange range) {
  if (!(range.max > range.min)) {
    throw VolumeError("denormalize needs range.max > range.min");
  }
  const double width = range.max - range.min;
  std::vector<double> out(v.size());
  const auto values = v.values();
  for (std::size_t idx = 0; idx < values.size(); ++idx) {
    out[idx] = range.min + values[idx] * width;
  }
  return Volume3D(v.dims(), std::move(out));
}

ParameterField denormalize_parameters(const ParameterField& theta,
                                      ValueRange range) {
  if (!(range.max > range.min)) {
    throw VolumeError("denormalize needs range.max > range.min");
  }
  const double width = range.max - range.min;
  ParameterField out = theta;
  for (int m = 0; m < theta.M; ++m) {
    for (auto& x : out.mu[m].values()) x = range.min + x * width;
    for (auto& x : out.sigma[m].values()) x *= width;
  }
  return out;
}

Volume3D apply_mask(const Volume3D& v, const Volume3D& mask) {
  if (v.dims() != mask.dims()) {
    throw VolumeError("mask dims " + to_string(mask.dims()) +
                      " do not match volume dims " + to_string(v.dims()));
  }
  std::vector<double> out(v.size());
  for (std::size_t idx = 0; idx < v.size(); ++idx) {
    const double m = mask[idx];
    if (m != 0.0 && m != 1.0) {
      throw VolumeError("mask is not binary at voxel " + std::to_string(idx));
    }
    out[idx] = v[idx] * m;
  }
  return Volume3D(v.dims(), std::move(out), v.value_range());
}

// --- sampling masks ---------------------------------------------------------

namespace {

// Seeded uniform selection of `k` items from `candidates` without
// replacement: each candidate gets a counter-based key, the k smallest win.
std::vector<std::size_t> choose_k(const std::vector<std::size_t>& candidates,
                                  std::size_t k, std::uint64_t seed) {
  std::vector<std::pair<std::uint64_t, std::size_t>> keyed;
  keyed.reserve(candidates.size());
  for (const auto idx : candidates) {
    keyed.emplace_back(rng::hash3(seed, 0x6D61736BULL, idx), idx);
  }
  if (k < keyed.size()) {
    std::nth_element(keyed.begin(), keyed.begin() + static_cast<long>(k),
                     keyed.end());
    keyed.resize(k);
  }
  std::vector<std::size_t> chosen;
  chosen.reserve(keyed.size());
  for (const auto& [key, idx] : keyed) chosen.push_back(idx);
  return chosen;
}

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

}  // namespace

std::pair<SampleMask, SampleMask> split_train_test(Dims dims,
                                                   double train_fraction,
                                                   std::uint64_t seed) {
  if (!dims.valid()) throw VolumeError("split dims must be positive");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw VolumeError("train fraction must lie in (0, 1)");
  }
  const std::size_t n = dims.voxels();
  if (n < 2) throw VolumeError("cannot split a single-voxel grid");
  auto k = static_cast<std::size_t>(
      std::llround(train_fraction * static_cast<double>(n)));
  k = std::clamp<std::size_t>(k, 1, n - 1);

  SampleMask train;
  train.dims = dims;
  train.included.assign(n, 0);
  train.role = MaskRole::train;
  for (const auto idx : choose_k(all_indices(n), k, seed)) {
    train.included[idx] = 1;
  }
  train.ratio = static_cast<double>(k) / static_cast<double>(n);

  SampleMask test;
  test.dims = dims;
  test.role = MaskRole::test;
  test.included.resize(n);
  for (std::size_t idx = 0; idx < n; ++idx) {
    test.included[idx] = train.included[idx] ? 0 : 1;
  }
  test.ratio = static_cast<double>(n - k) / static_cast<double>(n);
  return {std::move(train), std::move(test)};
}

SampleMask subsample_within(const SampleMask& base, double r,
                            std::uint64_t seed) {
  if (!(r > 0.0 && r <= 1.0)) {
    throw VolumeError("sampling ratio must lie in (0, 1]");
  }
  const auto candidates = base.indices();
  if (candidates.empty()) throw VolumeError("cannot subsample an empty mask");
  SampleMask out;
  out.dims = base.dims;
  out.role = MaskRole::subsample;
  out.included.assign(base.dims.voxels(), 0);
  if (r == 1.0) {
    out.included = base.included;
    out.ratio = 1.0;
    return out;
  }
  auto k = static_cast<std::size_t>(
      std::llround(r * static_cast<double>(candidates.size())));
  k = std::clamp<std::size_t>(k, 1, candidates.size());
  for (const auto idx : choose_k(candidates, k, seed)) out.included[idx] = 1;
  out.ratio = static_cast<double>(k) / static_cast<double>(candidates.size());
  return out;
}

SampleMask subsample_mask(Dims dims, double r, std::uint64_t seed) {
  if (!dims.valid()) throw VolumeError("subsample dims must be positive");
  return subsample_within(SampleMask::full(dims), r, seed);
}

SampleMask mask_from_volume(const Volume3D& binary) {
  SampleMask m;
  m.dims = binary.dims();
  m.role = MaskRole::subsample;
  m.included.resize(binary.size());
  for (std::size_t idx = 0; idx < binary.size(); ++idx) {
    const double v = binary[idx];
    if (v != 0.0 && v != 1.0) {
      throw VolumeError("mask is not binary at voxel " + std::to_string(idx));
    }
    m.included[idx] = v == 1.0 ? 1 : 0;
  }
  m.ratio = static_cast<double>(m.count()) / static_cast<double>(binary.size());
  return m;
}

std::vector<double> masked_values(const Volume3D& v, const SampleMask& mask) {
  if (v.dims() != mask.dims) throw VolumeError("mask dims mismatch");
  std::vector<double> out;
  out.reserve(mask.count());
  for (std::size_t idx = 0; idx < v.size(); ++idx) {
    if (mask.included[idx]) out.push_back(v[idx]);
  }
  return out;
}

}  // namespace kemvol
