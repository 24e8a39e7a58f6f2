// Copyright Contributors to the ssasc Project
// SPDX-License-Identifier: Apache-2.0
//
#include <gtest/gtest.h>

#include <bit>
#include <cstring>

#include "ssasc/kitti_io.hpp"
#include "ssasc/rng.hpp"
#include "temp_dir.hpp"

namespace {

using namespace ssasc;
using ssasc::testing::read_bytes;
using ssasc::testing::TempDir;
using ssasc::testing::write_bytes;

void put_f32(std::vector<char>& out, float v) {
    const auto u = std::bit_cast<std::uint32_t>(v);
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((u >> (8 * b)) & 0xFF));
}

TEST(Scan, ReadsLittleEndianFloatQuads) {
    TempDir dir;
    std::vector<char> bytes;
    for (float v : {1.5f, -2.25f, 0.125f, 0.5f, 3.0f, 4.0f, -5.0f, 1.0f}) put_f32(bytes, v);
    write_bytes(dir / "a.bin", bytes);
    const auto cloud = read_scan(dir / "a.bin");
    ASSERT_EQ(cloud.size(), 2u);
    EXPECT_EQ(cloud.points[0], (Point{1.5, -2.25, 0.125, 0.5}));
    EXPECT_EQ(cloud.points[1], (Point{3.0, 4.0, -5.0, 1.0}));
}

TEST(Scan, EmptyFileIsEmptyCloud) {
    TempDir dir;
    write_bytes(dir / "e.bin", {});
    EXPECT_TRUE(read_scan(dir / "e.bin").empty());
}

TEST(Scan, TruncationNamesByteOffset) {
    TempDir dir;
    write_bytes(dir / "t.bin", std::vector<char>(20, 0));
    try {
        read_scan(dir / "t.bin");
        FAIL() << "expected IoError";
    } catch (const IoError& e) {
        EXPECT_NE(std::string(e.what()).find("byte offset 16"), std::string::npos) << e.what();
    }
    EXPECT_THROW(read_scan(dir / "missing.bin"), IoError);
}

TEST(Scan, RoundTripsBitExactly) {
    TempDir dir;
    Rng rng(31);
    PointCloud cloud;
    for (int i = 0; i < 500; ++i) {
        cloud.points.push_back({static_cast<float>(uniform(rng, -50, 50)), static_cast<float>(uniform(rng, -50, 50)),
                                static_cast<float>(uniform(rng, -3, 3)), static_cast<float>(uniform(rng, 0, 1))});
    }
    write_scan(dir / "s.bin", cloud);
    EXPECT_EQ(read_scan(dir / "s.bin"), cloud);
    const auto first = read_bytes(dir / "s.bin");
    write_scan(dir / "s2.bin", read_scan(dir / "s.bin"));
    EXPECT_EQ(read_bytes(dir / "s2.bin"), first);
}

TEST(LabelMap, ParsesAndRejectsBadEntries) {
    const auto m = LabelMap::parse("10:1, 11:2 40:3 44:3");
    EXPECT_EQ(m.to_train(0), 0);
    EXPECT_EQ(m.to_train(44), 3);
    EXPECT_EQ(m.to_train(99), kInvalidLabel);
    EXPECT_EQ(m.to_raw(3), 40);
    EXPECT_EQ(LabelMap::parse(m.to_string()), m);
    EXPECT_THROW(LabelMap::parse("10-1"), std::invalid_argument);
    EXPECT_THROW(LabelMap::parse("10:1 10:2"), std::invalid_argument);
    EXPECT_THROW(LabelMap::parse("70000:1"), std::invalid_argument);
}

TEST(VoxelLabels, AllZeroFileIsEmptyGrid) {
    TempDir dir;
    const Extents3 e{4, 3, 2};
    write_bytes(dir / "z.label", std::vector<char>(48, 0));
    const auto g = read_voxel_labels(dir / "z.label", e, LabelMap::identity(5), 5);
    EXPECT_EQ(g.occupied_count(), 0u);
    EXPECT_EQ(g.labels.size(), 24u);
}

TEST(VoxelLabels, MappedRawIdLandsOnOneVoxel) {
    TempDir dir;
    const Extents3 e{4, 3, 2};
    const auto map = LabelMap::parse("10:1 30:2 252:3");
    std::vector<char> bytes(48, 0);
    const std::size_t at = (2 * 3 + 1) * 2 + 1;  // voxel (2, 1, 1)
    bytes[2 * at] = static_cast<char>(252);
    write_bytes(dir / "one.label", bytes);
    const auto g = read_voxel_labels(dir / "one.label", e, map, 3);
    EXPECT_EQ(g.at(2, 1, 1), 3);
    EXPECT_EQ(g.occupied_count(), 1u);
    bytes[2 * at] = 77;  // unmapped
    write_bytes(dir / "bad.label", bytes);
    EXPECT_EQ(read_voxel_labels(dir / "bad.label", e, map, 3).at(2, 1, 1), kInvalidLabel);
}

TEST(VoxelLabels, WrongSizeThrows) {
    TempDir dir;
    write_bytes(dir / "w.label", std::vector<char>(47, 0));
    EXPECT_THROW(read_voxel_labels(dir / "w.label", {4, 3, 2}, LabelMap::identity(3), 3), IoError);
}

TEST(VoxelLabels, RoundTripsWithInvalidSentinel) {
    TempDir dir;
    Rng rng(32);
    const auto map = LabelMap::parse("10:1 11:2 15:3 18:4 20:5");
    SceneLabelGrid g({8, 6, 3}, 5);
    std::uniform_int_distribution<int> d(0, 6);
    for (auto& l : g.labels) {
        const int v = d(rng);
        l = v == 6 ? kInvalidLabel : static_cast<std::uint8_t>(v);
    }
    write_voxel_labels(dir / "g.label", g, map);
    EXPECT_EQ(read_voxel_labels(dir / "g.label", g.extents, map, 5), g);
}

TEST(InvalidMask, PacksMostSignificantBitFirst) {
    TempDir dir;
    const Extents3 e{3, 2, 2};  // 12 voxels, 2 bytes
    write_bytes(dir / "f.invalid", {static_cast<char>(0xFF), static_cast<char>(0xFF)});
    EXPECT_EQ(read_invalid_mask(dir / "f.invalid", e).count(), 12u);
    write_bytes(dir / "n.invalid", {0, 0});
    EXPECT_EQ(read_invalid_mask(dir / "n.invalid", e).count(), 0u);
    write_bytes(dir / "o.invalid", {static_cast<char>(0x80), 0});
    const auto m = read_invalid_mask(dir / "o.invalid", e);
    EXPECT_EQ(m.count(), 1u);
    EXPECT_EQ(m.bits[0], 1);
    write_bytes(dir / "s.invalid", {0, 0, 0});
    EXPECT_THROW(read_invalid_mask(dir / "s.invalid", e), IoError);
}

TEST(InvalidMask, RoundTripsBitExactly) {
    TempDir dir;
    Rng rng(33);
    VoxelMask m({5, 5, 3});
    for (auto& b : m.bits) b = uniform(rng, 0, 1) < 0.3 ? 1 : 0;
    write_invalid_mask(dir / "m.invalid", m);
    EXPECT_EQ(read_bytes(dir / "m.invalid").size(), 10u);
    EXPECT_EQ(read_invalid_mask(dir / "m.invalid", m.extents), m);
}

TEST(SceneLabelGrid, ValidateRejectsOutOfRangeLabels) {
    SceneLabelGrid g({2, 2, 2}, 3);
    g.labels[3] = kInvalidLabel;
    EXPECT_NO_THROW(g.validate());
    g.labels[4] = 4;
    EXPECT_THROW(g.validate(), std::invalid_argument);
}

}  // namespace
