#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "mminforec/params.hpp"

namespace mminforec {

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are little-endian; big-endian hosts are unsupported");

// Checkpoint = manifest.json (name/shape/byte-offset per tensor + model
// geometry) next to params.bin, one flat little-endian float64 blob.
// Round-trips are bit-exact.
inline void save_checkpoint(const std::string& dir, const ModelParams& params) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);

    nlohmann::json manifest;
    manifest["format"] = "mminforec-checkpoint";
    manifest["version"] = 1;
    manifest["d"] = params.d;
    manifest["num_items"] = params.num_items;
    manifest["num_attrs"] = params.num_attrs;
    manifest["memory_slots"] = params.memory_slots;
    manifest["max_len"] = params.max_len;
    manifest["layers"] = static_cast<int>(params.enc_blocks.size());

    std::ofstream blob(fs::path(dir) / "params.bin", std::ios::binary);
    if (!blob) throw std::runtime_error("save_checkpoint: cannot write params.bin under " + dir);
    uint64_t offset = 0;
    nlohmann::json tensors = nlohmann::json::array();
    for (auto& [name, t] : params.named()) {
        tensors.push_back({{"name", name}, {"rows", t->rows}, {"cols", t->cols}, {"offset", offset}});
        blob.write(reinterpret_cast<const char*>(t->data.data()),
                   static_cast<std::streamsize>(t->data.size() * sizeof(double)));
        offset += t->data.size() * sizeof(double);
    }
    manifest["tensors"] = tensors;
    manifest["total_bytes"] = offset;
    blob.close();

    std::ofstream mf(fs::path(dir) / "manifest.json");
    if (!mf) throw std::runtime_error("save_checkpoint: cannot write manifest.json under " + dir);
    mf << manifest.dump(2) << "\n";
}

inline ModelParams load_checkpoint(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream mf(fs::path(dir) / "manifest.json");
    if (!mf) throw std::runtime_error("load_checkpoint: cannot read manifest.json under " + dir);
    nlohmann::json manifest = nlohmann::json::parse(mf);
    if (manifest.value("format", "") != "mminforec-checkpoint")
        throw std::runtime_error("load_checkpoint: not a checkpoint manifest: " + dir);

    ModelConfig geom;
    geom.d = manifest.at("d").get<int>();
    geom.b = manifest.at("memory_slots").get<int>();
    geom.max_len = manifest.at("max_len").get<int>();
    geom.layers = manifest.at("layers").get<int>();
    ModelParams params = ModelParams::init(geom, manifest.at("num_items").get<int>(),
                                           manifest.at("num_attrs").get<int>(), /*seed=*/0);

    std::ifstream blob(fs::path(dir) / "params.bin", std::ios::binary);
    if (!blob) throw std::runtime_error("load_checkpoint: cannot read params.bin under " + dir);

    auto named = params.named();
    const auto& tensors = manifest.at("tensors");
    if (tensors.size() != named.size())
        throw std::runtime_error("load_checkpoint: tensor count mismatch in " + dir);
    for (size_t k = 0; k < named.size(); ++k) {
        auto& [name, t] = named[k];
        const auto& entry = tensors[k];
        if (entry.at("name").get<std::string>() != name ||
            entry.at("rows").get<int>() != t->rows || entry.at("cols").get<int>() != t->cols)
            throw std::runtime_error("load_checkpoint: manifest entry mismatch for " + name);
        blob.seekg(static_cast<std::streamoff>(entry.at("offset").get<uint64_t>()));
        blob.read(reinterpret_cast<char*>(t->data.data()),
                  static_cast<std::streamsize>(t->data.size() * sizeof(double)));
        if (!blob) throw std::runtime_error("load_checkpoint: truncated blob reading " + name);
    }
    return params;
}

}  // namespace mminforec
