#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace kemvol {

class VolumeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Grid extents. Storage is x-fastest: index = i + dx * (j + dy * k).
struct Dims {
  int x = 0;
  int y = 0;
  int z = 0;

  std::size_t voxels() const {
    return static_cast<std::size_t>(x) * static_cast<std::size_t>(y) *
           static_cast<std::size_t>(z);
  }
  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(x) *
               (static_cast<std::size_t>(j) +
                static_cast<std::size_t>(y) * static_cast<std::size_t>(k));
  }
  int extent(int axis) const { return axis == 0 ? x : (axis == 1 ? y : z); }
  int max_extent() const;
  bool valid() const { return x > 0 && y > 0 && z > 0; }

  bool operator==(const Dims&) const = default;
};

std::string to_string(const Dims& d);

struct VoxelCoord {
  int i = 0;
  int j = 0;
  int k = 0;

  bool operator==(const VoxelCoord&) const = default;
};

VoxelCoord coord_of(const Dims& dims, std::size_t flat);

/// Position in the unit cube: ((i+1)/dx, (j+1)/dy, (k+1)/dz), each in (0, 1].
std::array<double, 3> normalized_position(const Dims& dims, VoxelCoord c);

struct ValueRange {
  double min = 0.0;
  double max = 1.0;

  bool operator==(const ValueRange&) const = default;
};

/// Dense scalar field on a 3D grid.
class Volume3D {
 public:
  Volume3D() = default;
  explicit Volume3D(Dims dims, double fill = 0.0);
  Volume3D(Dims dims, std::vector<double> data,
           std::optional<ValueRange> range = std::nullopt);

  const Dims& dims() const { return dims_; }
  std::size_t size() const { return data_.size(); }

  std::span<const double> values() const { return data_; }
  std::span<double> values() { return data_; }

  double operator[](std::size_t idx) const { return data_[idx]; }
  double& operator[](std::size_t idx) { return data_[idx]; }
  double at(int i, int j, int k) const { return data_[dims_.index(i, j, k)]; }

  const std::optional<ValueRange>& value_range() const { return range_; }
  void set_value_range(std::optional<ValueRange> r) { range_ = r; }

 private:
  Dims dims_{};
  std::vector<double> data_;
  std::optional<ValueRange> range_;
};

/// Class labels in {1..M}, one byte per voxel.
class LabelVolume {
 public:
  LabelVolume() = default;
  LabelVolume(Dims dims, int M, std::uint8_t fill = 1);
  LabelVolume(Dims dims, int M, std::vector<std::uint8_t> labels);

  const Dims& dims() const { return dims_; }
  int M() const { return M_; }
  std::size_t size() const { return labels_.size(); }

  std::span<const std::uint8_t> labels() const { return labels_; }
  std::uint8_t operator[](std::size_t idx) const { return labels_[idx]; }
  void set(std::size_t idx, std::uint8_t label);

 private:
  Dims dims_{};
  int M_ = 0;
  std::vector<std::uint8_t> labels_;
};

enum class MaskRole { train, test, subsample };

const char* to_string(MaskRole role);

/// Voxel subset used as the sample side of every kernel sum.
struct SampleMask {
  Dims dims{};
  std::vector<std::uint8_t> included;  // 0 or 1 per voxel
  double ratio = 1.0;
  MaskRole role = MaskRole::subsample;

  static SampleMask full(Dims dims);

  std::size_t count() const;
  bool contains(std::size_t idx) const { return included[idx] != 0; }
  std::vector<std::size_t> indices() const;
};

/// Per-voxel mixture parameters: M prior, mean and standard-deviation fields.
struct ParameterField {
  Dims dims{};
  int M = 0;
  std::vector<Volume3D> pi;
  std::vector<Volume3D> mu;
  std::vector<Volume3D> sigma;

  ParameterField() = default;
  ParameterField(Dims d, int components);

  // Throws VolumeError naming the first voxel that breaks the simplex or
  // the sigma floor.
  void validate(double sigma_floor, double simplex_tol = 1e-10) const;
};

// --- file I/O ---------------------------------------------------------------

/// `<stem>.json` sidecar path for a `.kvol` pair; accepts the stem itself or
/// either member of the pair.
std::filesystem::path sidecar_path(const std::filesystem::path& path);
std::filesystem::path payload_path(const std::filesystem::path& path);

Volume3D load_volume(const std::filesystem::path& path);
void store_volume(const Volume3D& v, const std::filesystem::path& path);

LabelVolume load_labels(const std::filesystem::path& path, int M);
void store_labels(const LabelVolume& labels, const std::filesystem::path& path);

/// MetaImage import restricted to NDims = 3, ElementType = MET_FLOAT.
Volume3D load_metaimage(const std::filesystem::path& mhd_path);

// --- value transforms -------------------------------------------------------

Volume3D normalize_to_unit(const Volume3D& v);
Volume3D denormalize(const Volume3D& v, ValueRange range);

/// Maps a parameter field fitted on [0,1]-normalized data back to `range`.
ParameterField denormalize_parameters(const ParameterField& theta,
                                      ValueRange range);

Volume3D apply_mask(const Volume3D& v, const Volume3D& mask);

// --- sampling masks ---------------------------------------------------------

std::pair<SampleMask, SampleMask> split_train_test(Dims dims,
                                                   double train_fraction,
                                                   std::uint64_t seed);

SampleMask subsample_mask(Dims dims, double r, std::uint64_t seed);

/// Restricts `base` to a seeded r-fraction of its own voxels.
SampleMask subsample_within(const SampleMask& base, double r,
                            std::uint64_t seed);

SampleMask mask_from_volume(const Volume3D& binary);

std::vector<double> masked_values(const Volume3D& v, const SampleMask& mask);

}  // namespace kemvol
