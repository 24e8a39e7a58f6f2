// Copyright Contributors to the ssasc Project
// SPDX-License-Identifier: Apache-2.0
//
#include "ssasc/kitti_io.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace ssasc {

namespace {

std::vector<char> slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()));
    in.seekg(0, std::ios::end);
    const auto size = static_cast<std::size_t>(in.tellg());
    in.seekg(0, std::ios::beg);
    std::vector<char> bytes(size);
    if (size > 0 && !in.read(bytes.data(), static_cast<std::streamsize>(size))) {
        throw IoError(fmt::format("short read on '{}'", path.string()));
    }
    return bytes;
}

void spill(const std::filesystem::path& path, const std::vector<char>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError(fmt::format("write failed on '{}'", path.string()));
}

template <class T>
T load_le(const char* p) {
    T v;
    std::memcpy(&v, p, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        auto* b = reinterpret_cast<unsigned char*>(&v);
        std::reverse(b, b + sizeof(T));
    }
    return v;
}

template <class T>
void store_le(char* p, T v) {
    if constexpr (std::endian::native == std::endian::big) {
        auto* b = reinterpret_cast<unsigned char*>(&v);
        std::reverse(b, b + sizeof(T));
    }
    std::memcpy(p, &v, sizeof(T));
}

}  // namespace

SceneLabelGrid::SceneLabelGrid(Extents3 e, std::int32_t classes, std::uint8_t fill)
    : extents(e), class_count(classes), labels(static_cast<std::size_t>(e.volume()), fill) {}

std::size_t SceneLabelGrid::occupied_count() const {
    return static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](std::uint8_t l) {
        return l != kEmptyLabel && l != kInvalidLabel;
    }));
}

void SceneLabelGrid::validate() const {
    if (static_cast<std::int64_t>(labels.size()) != extents.volume()) {
        throw std::invalid_argument("label count does not match grid extents");
    }
    for (auto l : labels) {
        if (l != kInvalidLabel && l > class_count) {
            throw std::invalid_argument(fmt::format("label {} outside 0..{}", l, class_count));
        }
    }
}

VoxelMask::VoxelMask(Extents3 e, bool fill) : extents(e), bits(static_cast<std::size_t>(e.volume()), fill ? 1 : 0) {}

std::size_t VoxelMask::count() const { return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), 1)); }

LabelMap::LabelMap(std::map<std::uint16_t, std::uint8_t> raw_to_train) : raw_to_train_(std::move(raw_to_train)) {
    for (const auto& [raw, train] : raw_to_train_) train_to_raw_.emplace(train, raw);  // keeps the smallest raw id
}

LabelMap LabelMap::identity(std::int32_t class_count) {
    std::map<std::uint16_t, std::uint8_t> m;
    for (std::int32_t c = 0; c <= class_count; ++c) m.emplace(static_cast<std::uint16_t>(c), static_cast<std::uint8_t>(c));
    return LabelMap(std::move(m));
}

LabelMap LabelMap::parse(const std::string& text) {
    std::string cleaned = text;
    std::replace(cleaned.begin(), cleaned.end(), ',', ' ');
    std::istringstream in(cleaned);
    std::map<std::uint16_t, std::uint8_t> m;
    std::string item;
    while (in >> item) {
        const auto colon = item.find(':');
        if (colon == std::string::npos) throw std::invalid_argument(fmt::format("bad label map entry '{}'", item));
        const int raw = std::stoi(item.substr(0, colon));
        const int train = std::stoi(item.substr(colon + 1));
        if (raw < 0 || raw > 0xFFFF || train < 0 || train > 254) {
            throw std::invalid_argument(fmt::format("label map entry '{}' out of range", item));
        }
        if (!m.emplace(static_cast<std::uint16_t>(raw), static_cast<std::uint8_t>(train)).second) {
            throw std::invalid_argument(fmt::format("raw id {} mapped twice", raw));
        }
    }
    return LabelMap(std::move(m));
}

std::string LabelMap::to_string() const {
    std::string s;
    for (const auto& [raw, train] : raw_to_train_) {
        if (!s.empty()) s += ' ';
        s += fmt::format("{}:{}", raw, train);
    }
    return s;
}

std::uint8_t LabelMap::to_train(std::uint16_t raw) const {
    if (raw == 0) return kEmptyLabel;
    auto it = raw_to_train_.find(raw);
    return it == raw_to_train_.end() ? kInvalidLabel : it->second;
}

std::uint16_t LabelMap::to_raw(std::uint8_t train) const {
    if (train == kEmptyLabel) return 0;
    if (train == kInvalidLabel) return kInvalidRawId;
    auto it = train_to_raw_.find(train);
    if (it == train_to_raw_.end()) throw std::invalid_argument(fmt::format("train id {} has no raw id", train));
    return it->second;
}

PointCloud read_scan(const std::filesystem::path& path) {
    const auto bytes = slurp(path);
    if (bytes.size() % 16 != 0) {
        const auto offset = bytes.size() - bytes.size() % 16;
        throw IoError(fmt::format("'{}': truncated point record at byte offset {} ({} trailing bytes)",
                                  path.string(), offset, bytes.size() % 16));
    }
    PointCloud cloud;
    cloud.points.resize(bytes.size() / 16);
    for (std::size_t i = 0; i < cloud.points.size(); ++i) {
        const char* p = bytes.data() + i * 16;
        cloud.points[i] = {load_le<float>(p), load_le<float>(p + 4), load_le<float>(p + 8), load_le<float>(p + 12)};
    }
    return cloud;
}

void write_scan(const std::filesystem::path& path, const PointCloud& cloud) {
    std::vector<char> bytes(cloud.size() * 16);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const auto& pt = cloud.points[i];
        char* p = bytes.data() + i * 16;
        store_le(p, static_cast<float>(pt.x));
        store_le(p + 4, static_cast<float>(pt.y));
        store_le(p + 8, static_cast<float>(pt.z));
        store_le(p + 12, static_cast<float>(pt.r));
    }
    spill(path, bytes);
}

SceneLabelGrid read_voxel_labels(const std::filesystem::path& path, Extents3 extents, const LabelMap& map,
                                 std::int32_t class_count) {
    const auto bytes = slurp(path);
    const auto expected = static_cast<std::size_t>(extents.volume()) * 2;
    if (bytes.size() != expected) {
        throw IoError(fmt::format("'{}': expected {} bytes for {}x{}x{} labels, found {}", path.string(), expected,
                                  extents.x, extents.y, extents.z, bytes.size()));
    }
    SceneLabelGrid grid(extents, class_count);
    for (std::size_t i = 0; i < grid.labels.size(); ++i) {
        const std::uint8_t t = map.to_train(load_le<std::uint16_t>(bytes.data() + 2 * i));
        grid.labels[i] = (t != kInvalidLabel && t > class_count) ? kInvalidLabel : t;
    }
    return grid;
}

void write_voxel_labels(const std::filesystem::path& path, const SceneLabelGrid& grid, const LabelMap& map) {
    std::vector<char> bytes(grid.labels.size() * 2);
    for (std::size_t i = 0; i < grid.labels.size(); ++i) store_le(bytes.data() + 2 * i, map.to_raw(grid.labels[i]));
    spill(path, bytes);
}

VoxelMask read_invalid_mask(const std::filesystem::path& path, Extents3 extents) {
    const auto bytes = slurp(path);
    const auto voxels = static_cast<std::size_t>(extents.volume());
    const auto expected = (voxels + 7) / 8;
    if (bytes.size() != expected) {
        throw IoError(fmt::format("'{}': expected {} mask bytes for {} voxels, found {}", path.string(), expected,
                                  voxels, bytes.size()));
    }
    VoxelMask mask(extents);
    for (std::size_t i = 0; i < voxels; ++i) {
        const auto byte = static_cast<unsigned char>(bytes[i / 8]);
        mask.bits[i] = (byte >> (7 - i % 8)) & 1u;
    }
    return mask;
}

void write_invalid_mask(const std::filesystem::path& path, const VoxelMask& mask) {
    std::vector<char> bytes((mask.bits.size() + 7) / 8, 0);
    for (std::size_t i = 0; i < mask.bits.size(); ++i) {
        if (mask.bits[i]) bytes[i / 8] = static_cast<char>(static_cast<unsigned char>(bytes[i / 8]) | (0x80u >> (i % 8)));
    }
    spill(path, bytes);
}

}  // namespace ssasc
