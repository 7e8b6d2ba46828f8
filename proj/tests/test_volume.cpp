#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include <unistd.h>

#include <json.hpp>

#include "kemvol/volume.hpp"

using namespace kemvol;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() /
                   ("kemvol_volume_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Volume3D random_volume(Dims d, unsigned seed, double lo = -5.0, double hi = 5.0) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> data(d.voxels());
  // float-representable so the f32 payload round-trips exactly
  for (auto& x : data) x = static_cast<float>(u(gen));
  return Volume3D(d, std::move(data));
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

}  // namespace

TEST(Dims, IndexIsXFastest) {
  const Dims d{4, 3, 2};
  EXPECT_EQ(d.voxels(), 24u);
  EXPECT_EQ(d.index(0, 0, 0), 0u);
  EXPECT_EQ(d.index(1, 0, 0), 1u);
  EXPECT_EQ(d.index(0, 1, 0), 4u);
  EXPECT_EQ(d.index(0, 0, 1), 12u);
  EXPECT_EQ(d.index(3, 2, 1), 23u);
}

TEST(Dims, CoordinateMapIsABijection) {
  for (const Dims d : {Dims{1, 1, 1}, Dims{5, 1, 3}, Dims{7, 6, 5}, Dims{2, 9, 4}}) {
    std::set<std::size_t> seen;
    for (int k = 0; k < d.z; ++k)
      for (int j = 0; j < d.y; ++j)
        for (int i = 0; i < d.x; ++i) {
          const auto flat = d.index(i, j, k);
          ASSERT_LT(flat, d.voxels());
          seen.insert(flat);
          EXPECT_EQ(coord_of(d, flat), (VoxelCoord{i, j, k}));
        }
    EXPECT_EQ(seen.size(), d.voxels());
  }
}

TEST(Dims, NormalizedPositionIsOneBasedOverExtent) {
  const Dims d{4, 5, 8};
  const auto p = normalized_position(d, {0, 4, 3});
  EXPECT_DOUBLE_EQ(p[0], 0.25);
  EXPECT_DOUBLE_EQ(p[1], 1.0);
  EXPECT_DOUBLE_EQ(p[2], 0.5);
}

TEST(VolumeIO, RoundTripIsBitExact) {
  const auto dir = scratch_dir("roundtrip");
  const Dims d{5, 4, 3};
  Volume3D v = random_volume(d, 11);
  v.set_value_range(ValueRange{-3.5, 8.25});
  store_volume(v, dir / "vol");
  ASSERT_TRUE(fs::exists(dir / "vol.json"));
  ASSERT_TRUE(fs::exists(dir / "vol.raw"));
  EXPECT_EQ(fs::file_size(dir / "vol.raw"), 4 * d.voxels());

  for (const auto& name : {"vol", "vol.json", "vol.raw", "vol.kvol"}) {
    const Volume3D back = load_volume(dir / name);
    ASSERT_EQ(back.dims(), d);
    for (std::size_t q = 0; q < v.size(); ++q) {
      EXPECT_EQ(std::bit_cast<std::uint64_t>(back[q]), std::bit_cast<std::uint64_t>(v[q]));
    }
    ASSERT_TRUE(back.value_range().has_value());
    EXPECT_EQ(*back.value_range(), (ValueRange{-3.5, 8.25}));
  }
}

TEST(VolumeIO, SidecarLayout) {
  const auto dir = scratch_dir("sidecar");
  store_volume(Volume3D(Dims{2, 3, 4}, 1.5), dir / "v");
  std::ifstream in(dir / "v.json");
  const auto side = nlohmann::json::parse(in);
  EXPECT_EQ(side["dims"], nlohmann::json({2, 3, 4}));
  EXPECT_EQ(side["dtype"], "f32le");
  EXPECT_EQ(side["order"], "x-fastest");
  EXPECT_TRUE(side["value_range"].is_null());
}

TEST(VolumeIO, PayloadIsLittleEndianFloat) {
  const auto dir = scratch_dir("endian");
  Volume3D v(Dims{2, 1, 1});
  v[0] = 1.0;
  v[1] = -2.0;
  store_volume(v, dir / "v");
  std::ifstream in(dir / "v.raw", std::ios::binary);
  std::vector<unsigned char> b((std::istreambuf_iterator<char>(in)), {});
  ASSERT_EQ(b.size(), 8u);
  // 1.0f = 0x3F800000, -2.0f = 0xC0000000
  EXPECT_EQ(b[0], 0x00);
  EXPECT_EQ(b[3], 0x3F);
  EXPECT_EQ(b[2], 0x80);
  EXPECT_EQ(b[7], 0xC0);
}

TEST(VolumeIO, SizeMismatchIsReported) {
  const auto dir = scratch_dir("mismatch");
  store_volume(Volume3D(Dims{2, 2, 2}, 1.0), dir / "v");
  fs::resize_file(dir / "v.raw", 28);
  try {
    load_volume(dir / "v");
    FAIL() << "expected VolumeError";
  } catch (const VolumeError& e) {
    EXPECT_NE(std::string(e.what()).find("28 bytes"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("expected 32"), std::string::npos) << e.what();
  }
}

TEST(VolumeIO, NonFiniteValueNamesTheVoxel) {
  const auto dir = scratch_dir("nan");
  Volume3D v(Dims{3, 1, 1}, 0.0);
  store_volume(v, dir / "v");
  {
    std::fstream f(dir / "v.raw", std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(8);
    const float nan = std::nanf("");
    f.write(reinterpret_cast<const char*>(&nan), 4);
  }
  try {
    load_volume(dir / "v");
    FAIL() << "expected VolumeError";
  } catch (const VolumeError& e) {
    EXPECT_NE(std::string(e.what()).find("voxel 2"), std::string::npos) << e.what();
  }
}

TEST(VolumeIO, MissingSidecar) {
  const auto dir = scratch_dir("missing");
  write_file(dir / "only.raw", std::string(8, '\0'));
  EXPECT_THROW(load_volume(dir / "only"), VolumeError);
}

TEST(VolumeIO, WrongDtypeAndOrderRejected) {
  const auto dir = scratch_dir("dtype");
  write_file(dir / "a.json", R"({"dims":[1,1,1],"dtype":"f64le","order":"x-fastest"})");
  write_file(dir / "a.raw", std::string(4, '\0'));
  EXPECT_THROW(load_volume(dir / "a"), VolumeError);
  write_file(dir / "b.json", R"({"dims":[1,1,1],"dtype":"f32le","order":"z-fastest"})");
  write_file(dir / "b.raw", std::string(4, '\0'));
  EXPECT_THROW(load_volume(dir / "b"), VolumeError);
}

TEST(LabelIO, RoundTripAndRangeCheck) {
  const auto dir = scratch_dir("labels");
  const Dims d{3, 2, 2};
  std::vector<std::uint8_t> raw{1, 2, 3, 1, 2, 3, 3, 3, 2, 1, 1, 2};
  const LabelVolume labels(d, 3, raw);
  store_labels(labels, dir / "lab");
  const LabelVolume back = load_labels(dir / "lab", 3);
  EXPECT_TRUE(std::equal(raw.begin(), raw.end(), back.labels().begin()));
  EXPECT_THROW(load_labels(dir / "lab", 2), std::exception);  // label 3 > M
  EXPECT_THROW(LabelVolume(d, 3, std::vector<std::uint8_t>(12, 0)), std::exception);
}

TEST(MetaImage, ReadsFloatVolume) {
  const auto dir = scratch_dir("mhd");
  const Dims d{3, 2, 2};
  const Volume3D v = random_volume(d, 4);
  store_volume(v, dir / "payload");
  write_file(dir / "img.mhd",
             "ObjectType = Image\nNDims = 3\nDimSize = 3 2 2\nElementType = MET_FLOAT\n"
             "BinaryDataByteOrderMSB = False\nElementDataFile = payload.raw\n");
  const Volume3D back = load_metaimage(dir / "img.mhd");
  ASSERT_EQ(back.dims(), d);
  for (std::size_t q = 0; q < v.size(); ++q) EXPECT_EQ(back[q], v[q]);

  write_file(dir / "short.mhd",
             "NDims = 2\nDimSize = 3 2\nElementType = MET_FLOAT\nElementDataFile = payload.raw\n");
  EXPECT_THROW(load_metaimage(dir / "short.mhd"), VolumeError);
  write_file(dir / "short.mhd",
             "NDims = 3\nDimSize = 3 2 2\nElementType = MET_SHORT\nElementDataFile = payload.raw\n");
  EXPECT_THROW(load_metaimage(dir / "short.mhd"), VolumeError);
}

TEST(Normalize, MapsToUnitAndBack) {
  const Volume3D v = random_volume(Dims{4, 4, 4}, 9, -1000.0, 400.0);
  const Volume3D u = normalize_to_unit(v);
  const auto [lo, hi] = std::minmax_element(u.values().begin(), u.values().end());
  EXPECT_DOUBLE_EQ(*lo, 0.0);
  EXPECT_DOUBLE_EQ(*hi, 1.0);
  ASSERT_TRUE(u.value_range());
  const Volume3D back = denormalize(u, *u.value_range());
  for (std::size_t q = 0; q < v.size(); ++q) EXPECT_NEAR(back[q], v[q], 1e-10);
  EXPECT_THROW(normalize_to_unit(Volume3D(Dims{2, 2, 2}, 3.0)), VolumeError);
}

TEST(Normalize, ParametersMapAffinely) {
  ParameterField theta(Dims{1, 1, 1}, 2);
  theta.pi[0][0] = 0.4;
  theta.pi[1][0] = 0.6;
  theta.mu[0][0] = 0.25;
  theta.mu[1][0] = 0.5;
  theta.sigma[0][0] = 0.1;
  theta.sigma[1][0] = 0.2;
  const auto out = denormalize_parameters(theta, ValueRange{-100.0, 300.0});
  EXPECT_DOUBLE_EQ(out.pi[0][0], 0.4);
  EXPECT_DOUBLE_EQ(out.mu[0][0], 0.0);
  EXPECT_DOUBLE_EQ(out.mu[1][0], 100.0);
  EXPECT_DOUBLE_EQ(out.sigma[0][0], 40.0);
  EXPECT_DOUBLE_EQ(out.sigma[1][0], 80.0);
}

TEST(ParameterField, ValidateFindsBrokenVoxel) {
  ParameterField theta(Dims{2, 1, 1}, 2);
  for (int m = 0; m < 2; ++m) {
    theta.pi[m] = Volume3D(theta.dims, 0.5);
    theta.mu[m] = Volume3D(theta.dims, 0.5);
    theta.sigma[m] = Volume3D(theta.dims, 0.1);
  }
  EXPECT_NO_THROW(theta.validate(1e-4));
  theta.pi[0][1] = 0.6;
  try {
    theta.validate(1e-4);
    FAIL();
  } catch (const VolumeError& e) {
    EXPECT_NE(std::string(e.what()).find("voxel 1"), std::string::npos);
  }
  theta.pi[0][1] = 0.5;
  theta.sigma[1][0] = 1e-5;
  EXPECT_THROW(theta.validate(1e-4), VolumeError);
}

TEST(Masks, ApplyMaskRequiresBinary) {
  const Volume3D v(Dims{2, 1, 1}, 3.0);
  Volume3D m(Dims{2, 1, 1}, 1.0);
  m[0] = 0.0;
  const Volume3D out = apply_mask(v, m);
  EXPECT_EQ(out[0], 0.0);
  EXPECT_EQ(out[1], 3.0);
  m[0] = 0.5;
  EXPECT_THROW(apply_mask(v, m), VolumeError);
  EXPECT_THROW(apply_mask(v, Volume3D(Dims{1, 2, 1}, 1.0)), VolumeError);
}

TEST(Masks, TrainTestSplitPartitionsTheGrid) {
  const Dims d{10, 9, 8};
  const auto [train, test] = split_train_test(d, 0.8, 42);
  EXPECT_EQ(train.count(), static_cast<std::size_t>(std::llround(0.8 * 720)));
  EXPECT_EQ(train.count() + test.count(), d.voxels());
  for (std::size_t q = 0; q < d.voxels(); ++q) {
    EXPECT_NE(train.contains(q), test.contains(q)) << q;
  }
  EXPECT_EQ(train.role, MaskRole::train);
  EXPECT_EQ(test.role, MaskRole::test);

  const auto again = split_train_test(d, 0.8, 42);
  EXPECT_EQ(again.first.included, train.included);
  const auto other = split_train_test(d, 0.8, 43);
  EXPECT_NE(other.first.included, train.included);
  EXPECT_THROW(split_train_test(d, 1.0, 1), VolumeError);
}

TEST(Masks, SubsampleCountsAndNesting) {
  const Dims d{16, 16, 16};
  for (const double r : {0.1, 0.5, 1.0}) {
    const SampleMask s = subsample_mask(d, r, 5);
    EXPECT_EQ(s.count(), static_cast<std::size_t>(std::llround(r * d.voxels())));
  }
  const auto [train, test] = split_train_test(d, 0.8, 3);
  const SampleMask sub = subsample_within(train, 0.25, 8);
  EXPECT_EQ(sub.count(), static_cast<std::size_t>(std::llround(0.25 * train.count())));
  for (std::size_t q = 0; q < d.voxels(); ++q) {
    if (sub.contains(q)) EXPECT_TRUE(train.contains(q));
  }
  EXPECT_THROW(subsample_mask(d, 0.0, 1), VolumeError);
  EXPECT_THROW(subsample_mask(d, 1.5, 1), VolumeError);
}

TEST(Masks, SubsampleIsRoughlyUniformInSpace) {
  // Each octant of the grid should receive close to its share.
  const Dims d{32, 32, 32};
  const SampleMask s = subsample_mask(d, 0.3, 77);
  std::array<int, 8> counts{};
  for (std::size_t q = 0; q < d.voxels(); ++q) {
    if (!s.contains(q)) continue;
    const auto c = coord_of(d, q);
    counts[(c.i >= 16) + 2 * (c.j >= 16) + 4 * (c.k >= 16)]++;
  }
  const double expect = 0.3 * d.voxels() / 8.0;
  for (const int c : counts) EXPECT_NEAR(c, expect, 5.0 * std::sqrt(expect));
}

TEST(Masks, FromVolumeAndValues) {
  Volume3D b(Dims{3, 1, 1}, 0.0);
  b[1] = 1.0;
  const SampleMask m = mask_from_volume(b);
  EXPECT_EQ(m.count(), 1u);
  EXPECT_EQ(m.indices(), std::vector<std::size_t>{1});
  Volume3D v(Dims{3, 1, 1});
  v[0] = 4.0;
  v[1] = 5.0;
  v[2] = 6.0;
  EXPECT_EQ(masked_values(v, m), std::vector<double>{5.0});
  b[2] = 2.0;
  EXPECT_THROW(mask_from_volume(b), VolumeError);
}
