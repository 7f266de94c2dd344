#pragma once

// Sectioned binary checkpoint container:
//
//   magic   "VIDTCKPT" (8 bytes)
//   version u32 (currently 1)
//   config  u64 length + canonical config text
//   count   u64 number of sections
//   section u16 name length, name bytes, u8 kind (1 tensor | 2 blob),
//           payload (tensor block from serialize.hpp, or u64 length + bytes)
//
// Version bumps are forward-incompatible by design; loading a different
// version is an explicit error.

#include <fstream>

#include "vidt/nn.hpp"
#include "vidt/serialize.hpp"

namespace vidt {

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
struct Checkpoint {
    std::string config_text;
    std::vector<std::pair<std::string, Tensor<T>>> tensors;
    std::vector<std::pair<std::string, std::string>> blobs;

    const Tensor<T>* find_tensor(const std::string& name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return &t;
        return nullptr;
    }
    const std::string* find_blob(const std::string& name) const {
        for (const auto& [n, b] : blobs)
            if (n == name) return &b;
        return nullptr;
    }
};

template <typename T>
void save_checkpoint(const std::string& path, const Checkpoint<T>& ckpt) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write checkpoint " + path);
    os.write("VIDTCKPT", 8);
    detail::write_raw<std::uint32_t>(os, kCheckpointVersion);
    detail::write_raw<std::uint64_t>(os, ckpt.config_text.size());
    os.write(ckpt.config_text.data(), static_cast<std::streamsize>(ckpt.config_text.size()));
    detail::write_raw<std::uint64_t>(os, ckpt.tensors.size() + ckpt.blobs.size());
    auto write_name = [&](const std::string& name, std::uint8_t kind) {
        detail::write_raw<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_raw<std::uint8_t>(os, kind);
    };
    for (const auto& [name, t] : ckpt.tensors) {
        write_name(name, 1);
        write_tensor(os, t);
    }
    for (const auto& [name, b] : ckpt.blobs) {
        write_name(name, 2);
        detail::write_raw<std::uint64_t>(os, b.size());
        os.write(b.data(), static_cast<std::streamsize>(b.size()));
    }
    if (!os) throw std::runtime_error("short write on checkpoint " + path);
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read checkpoint " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, "VIDTCKPT", 8) != 0)
        throw std::runtime_error(path + " is not a checkpoint (bad magic)");
    const auto version = detail::read_raw<std::uint32_t>(is);
    if (version != kCheckpointVersion)
        throw std::runtime_error("checkpoint version " + std::to_string(version) +
                                 " is incompatible with this build (expected " +
                                 std::to_string(kCheckpointVersion) + ")");
    Checkpoint<T> ckpt;
    const auto cfg_len = detail::read_raw<std::uint64_t>(is);
    ckpt.config_text.resize(cfg_len);
    is.read(ckpt.config_text.data(), static_cast<std::streamsize>(cfg_len));
    const auto count = detail::read_raw<std::uint64_t>(is);
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto name_len = detail::read_raw<std::uint16_t>(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        const auto kind = detail::read_raw<std::uint8_t>(is);
        if (kind == 1) {
            ckpt.tensors.push_back({name, read_tensor<T>(is)});
        } else if (kind == 2) {
            const auto len = detail::read_raw<std::uint64_t>(is);
            std::string blob(len, '\0');
            is.read(blob.data(), static_cast<std::streamsize>(len));
            ckpt.blobs.push_back({name, blob});
        } else {
            throw std::runtime_error("checkpoint: unknown section kind");
        }
    }
    if (!is) throw std::runtime_error("checkpoint truncated: " + path);
    return ckpt;
}

// Copy checkpoint tensors into an existing parameter set by name; any
// mismatch in either direction is an error.
template <typename T>
void restore_params(const Checkpoint<T>& ckpt, ParamSet<T>& params) {
    std::map<std::string, const Tensor<T>*> by_name;
    for (const auto& [name, t] : ckpt.tensors) by_name[name] = &t;
    for (auto& [name, p] : params.items) {
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw std::runtime_error("checkpoint missing parameter '" + name + "'");
        if (it->second->shape() != p.shape())
            throw std::runtime_error("checkpoint parameter '" + name + "' has shape " +
                                     shape_str(it->second->shape()) + ", model expects " +
                                     shape_str(p.shape()));
        p.vec() = it->second->vec();
        by_name.erase(it);
    }
    // leftover optimizer state sections are fine; leftover model params are not
    for (const auto& [name, t] : by_name)
        if (name.rfind("opt.", 0) != 0)
            throw std::runtime_error("checkpoint has unexpected parameter '" + name + "'");
}

}  // namespace vidt
