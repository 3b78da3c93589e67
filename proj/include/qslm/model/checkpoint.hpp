#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "qslm/error.hpp"
#include "qslm/model/config.hpp"
#include "qslm/model/params.hpp"

namespace qslm {

using Json = nlohmann::ordered_json;

inline constexpr const char* kCheckpointFormat = "qslm-ckpt-1";

inline Json config_to_json(const ModelConfig& c) {
    Json j;
    j["vocab_size"] = c.vocab_size;
    j["embed_dim"] = c.embed_dim;
    j["num_blocks"] = c.num_blocks;
    j["ffn_hidden_dim"] = c.ffn_dim();
    j["context_len"] = c.context_len;
    j["spike_threshold"] = c.spike_threshold;
    if (c.head.kind == HeadKind::Classification) {
        j["task_head"] = {{"kind", "classification"}, {"num_classes", c.head.num_classes}};
    } else {
        j["task_head"] = {{"kind", "generation"}};
    }
    return j;
}

inline ModelConfig config_from_json(const Json& j) {
    try {
        ModelConfig c;
        c.vocab_size = j.at("vocab_size").get<std::size_t>();
        c.embed_dim = j.at("embed_dim").get<std::size_t>();
        c.num_blocks = j.at("num_blocks").get<std::size_t>();
        c.ffn_hidden_dim = j.value("ffn_hidden_dim", std::size_t{0});
        c.context_len = j.at("context_len").get<std::size_t>();
        c.spike_threshold = j.value("spike_threshold", 1.0);
        const auto& head = j.at("task_head");
        const std::string kind = head.at("kind").get<std::string>();
        if (kind == "classification") {
            c.head = TaskHead::classification(head.at("num_classes").get<std::size_t>());
        } else if (kind == "generation") {
            c.head = TaskHead::generation();
        } else {
            throw InputError("unknown task_head kind '" + kind + "'");
        }
        c.validate();
        return c;
    } catch (const Json::exception& e) {
        throw InputError(std::string("malformed model config: ") + e.what());
    }
}

/// On-disk model: a directory holding manifest.json and weights.bin
/// (little-endian float32 tensors concatenated in manifest order).
struct Checkpoint {
    ModelConfig config;
    ModelParams params;
    std::vector<std::uint8_t> vocab;  // tokenizer bytes, id = position + 1
    Json metadata = Json::object();   // free-form, e.g. the applied bit-width assignment
};

namespace detail {

inline void write_le_floats(std::ostream& os, std::span<const float> values) {
    static_assert(sizeof(float) == 4);
    std::vector<char> buf(values.size() * 4);
    for (std::size_t i = 0; i < values.size(); ++i) {
        std::uint32_t bits = std::bit_cast<std::uint32_t>(values[i]);
        for (int b = 0; b < 4; ++b) buf[i * 4 + static_cast<std::size_t>(b)] = static_cast<char>((bits >> (8 * b)) & 0xFFu);
    }
    os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

inline float read_le_float(const unsigned char* p) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(p[b]) << (8 * b);
    return std::bit_cast<float>(bits);
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());

    Json manifest;
    manifest["format"] = kCheckpointFormat;
    manifest["config"] = config_to_json(ckpt.config);
    manifest["vocab"] = ckpt.vocab;
    Json table = Json::array();
    std::ofstream weights(dir / "weights.bin", std::ios::binary | std::ios::trunc);
    if (!weights) throw IoError("cannot write " + (dir / "weights.bin").string());
    std::size_t offset = 0;
    for_each_tensor(ckpt.params, [&](const std::string& name, const ModuleId&, const Tensor& t) {
        table.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}, {"count", t.size()}});
        detail::write_le_floats(weights, t.values());
        offset += t.size() * 4;
    });
    if (!weights) throw IoError("short write to weights.bin");
    manifest["tensors"] = std::move(table);
    if (!ckpt.metadata.empty()) manifest["metadata"] = ckpt.metadata;

    std::ofstream mf(dir / "manifest.json", std::ios::trunc);
    if (!mf) throw IoError("cannot write " + (dir / "manifest.json").string());
    mf << manifest.dump(2) << "\n";
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
    std::ifstream mf(dir / "manifest.json");
    if (!mf) throw IoError("cannot open " + (dir / "manifest.json").string());
    Json manifest;
    try {
        manifest = Json::parse(mf);
    } catch (const Json::exception& e) {
        throw InputError("malformed manifest.json: " + std::string(e.what()));
    }
    if (manifest.value("format", std::string{}) != kCheckpointFormat) {
        throw InputError("unsupported checkpoint format (expected " + std::string(kCheckpointFormat) + ")");
    }

    Checkpoint ckpt;
    ckpt.config = config_from_json(manifest.at("config"));
    ckpt.vocab = manifest.value("vocab", std::vector<std::uint8_t>{});
    if (manifest.contains("metadata")) ckpt.metadata = manifest["metadata"];
    ckpt.params = zero_params(ckpt.config);

    std::ifstream wf(dir / "weights.bin", std::ios::binary);
    if (!wf) throw IoError("cannot open " + (dir / "weights.bin").string());
    const std::vector<unsigned char> blob((std::istreambuf_iterator<char>(wf)), std::istreambuf_iterator<char>());

    std::map<std::string, Json> entries;
    for (const auto& e : manifest.at("tensors")) entries[e.at("name").get<std::string>()] = e;
    for_each_tensor(ckpt.params, [&](const std::string& name, const ModuleId&, Tensor& t) {
        auto it = entries.find(name);
        if (it == entries.end()) throw ModelIntegrityError("checkpoint is missing tensor " + name);
        const auto shape = it->second.at("shape").get<std::vector<std::size_t>>();
        if (shape != t.shape()) {
            throw ModelIntegrityError("tensor " + name + " has shape " + shape_string(shape) + ", config implies " +
                                      shape_string(t.shape()));
        }
        const auto offset = it->second.at("offset").get<std::size_t>();
        const auto count = it->second.at("count").get<std::size_t>();
        if (count != t.size() || offset + count * 4 > blob.size()) {
            throw ModelIntegrityError("tensor " + name + " extends past the end of weights.bin");
        }
        for (std::size_t i = 0; i < count; ++i) t[i] = detail::read_le_float(blob.data() + offset + i * 4);
        entries.erase(it);
    });
    if (!entries.empty()) throw ModelIntegrityError("checkpoint has unexpected tensor " + entries.begin()->first);
    return ckpt;
}

}  // namespace qslm
