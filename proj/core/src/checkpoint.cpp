// Copyright Contributors to the ssasc Project
// SPDX-License-Identifier: Apache-2.0
//
#include <fmt/format.h>

#include <bit>
#include <cstring>
#include <fstream>

#include "ssasc/config.hpp"
#include "ssasc/model.hpp"

namespace ssasc {

namespace {

constexpr char kMagic[8] = {'S', 'S', 'A', 'S', 'C', 'C', 'K', 'P'};

template <class T>
void put(std::ostream& out, T v) {
    if constexpr (std::endian::native == std::endian::big) {
        auto* b = reinterpret_cast<unsigned char*>(&v);
        std::reverse(b, b + sizeof(T));
    }
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in, const std::filesystem::path& path) {
    T v;
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) {
        throw CheckpointError(fmt::format("'{}': truncated checkpoint", path.string()));
    }
    if constexpr (std::endian::native == std::endian::big) {
        auto* b = reinterpret_cast<unsigned char*>(&v);
        std::reverse(b, b + sizeof(T));
    }
    return v;
}

std::string read_header(std::istream& in, const std::filesystem::path& path) {
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
        throw CheckpointError(fmt::format("'{}' is not a checkpoint (bad magic)", path.string()));
    }
    const auto version = get<std::uint32_t>(in, path);
    if (version != kCheckpointVersion) {
        throw CheckpointError(fmt::format("'{}': checkpoint format version {} (expected {})", path.string(), version,
                                          kCheckpointVersion));
    }
    const auto len = get<std::uint64_t>(in, path);
    if (len > (1u << 20)) throw CheckpointError(fmt::format("'{}': implausible config length {}", path.string(), len));
    std::string text(len, '\0');
    if (!in.read(text.data(), static_cast<std::streamsize>(len))) {
        throw CheckpointError(fmt::format("'{}': truncated config block", path.string()));
    }
    return text;
}

void read_blocks(std::istream& in, const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
    for (const auto& nt : tensors) {
        const auto n = get<std::uint64_t>(in, path);
        if (n != static_cast<std::uint64_t>(nt.tensor.numel())) {
            throw CheckpointError(fmt::format("'{}': '{}' has {} values, model expects {}", path.string(), nt.name, n,
                                              nt.tensor.numel()));
        }
        Tensor t = nt.tensor;
        for (auto& v : t.mutable_values()) v = get<double>(in, path);
    }
}

}  // namespace

void save_checkpoint(const SsaScModel& model, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError(fmt::format("cannot open '{}' for writing", path.string()));
    out.write(kMagic, 8);
    put<std::uint32_t>(out, kCheckpointVersion);
    const auto text = model_config_text(model.config());
    put<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto* list : {&model.parameters().parameters(), &model.parameters().buffers()}) {
        for (const auto& nt : *list) {
            put<std::uint64_t>(out, static_cast<std::uint64_t>(nt.tensor.numel()));
            for (double v : nt.tensor.values()) put<double>(out, v);
        }
    }
    if (!out) throw CheckpointError(fmt::format("write failed on '{}'", path.string()));
}

ModelConfig read_checkpoint_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError(fmt::format("cannot open '{}'", path.string()));
    try {
        return model_config_from_text(read_header(in, path));
    } catch (const ConfigError& e) {
        throw CheckpointError(fmt::format("'{}': bad embedded config: {}", path.string(), e.what()));
    }
}

void load_checkpoint_into(SsaScModel& model, const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError(fmt::format("cannot open '{}'", path.string()));
    ModelConfig stored;
    try {
        stored = model_config_from_text(read_header(in, path));
    } catch (const ConfigError& e) {
        throw CheckpointError(fmt::format("'{}': bad embedded config: {}", path.string(), e.what()));
    }
    if (!(stored == model.config())) {
        throw CheckpointError(fmt::format("'{}': checkpoint config differs from the model config:\n{}---\n{}",
                                          path.string(), model_config_text(stored), model_config_text(model.config())));
    }
    read_blocks(in, path, model.parameters().parameters());
    read_blocks(in, path, model.parameters().buffers());
    if (in.peek() != std::char_traits<char>::eof()) {
        throw CheckpointError(fmt::format("'{}': trailing bytes after the last block", path.string()));
    }
}

std::unique_ptr<SsaScModel> load_checkpoint(const std::filesystem::path& path) {
    auto model = std::make_unique<SsaScModel>(read_checkpoint_config(path));
    load_checkpoint_into(*model, path);
    return model;
}

}  // namespace ssasc
