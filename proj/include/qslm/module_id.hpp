#pragma once

#include <compare>
#include <string>

#include "qslm/error.hpp"

namespace qslm {

enum class BlockKind { Input = 0, Attention = 1, Output = 2 };

/// One top-level block of the network. Ordering follows the dataflow:
/// input, attention 0..B-1, output.
struct BlockId {
    BlockKind kind = BlockKind::Input;
    int index = 0;  // attention block number; 0 for input/output

    static BlockId input() { return {BlockKind::Input, 0}; }
    static BlockId attention(int i) { return {BlockKind::Attention, i}; }
    static BlockId output() { return {BlockKind::Output, 0}; }

    bool is_attention() const noexcept { return kind == BlockKind::Attention; }

    std::string name() const {
        switch (kind) {
            case BlockKind::Input: return "input";
            case BlockKind::Output: return "output";
            case BlockKind::Attention: return "attention." + std::to_string(index);
        }
        return "?";
    }

    static BlockId parse(const std::string& s) {
        if (s == "input") return input();
        if (s == "output") return output();
        const std::string prefix = "attention.";
        if (s.rfind(prefix, 0) == 0 && s.size() > prefix.size()) {
            const std::string digits = s.substr(prefix.size());
            if (digits.find_first_not_of("0123456789") == std::string::npos) {
                return attention(std::stoi(digits));
            }
        }
        throw AssignmentError("unknown block name '" + s + "'");
    }

    friend auto operator<=>(const BlockId&, const BlockId&) = default;
};

/// A (block, module) pair, e.g. (attention.2, srffn). The address space of the search.
struct ModuleId {
    BlockId block;
    std::string module;

    std::string name() const { return block.name() + "/" + module; }

    friend auto operator<=>(const ModuleId&, const ModuleId&) = default;
};

namespace modules {
inline constexpr const char* kEmbedding = "embedding";
inline constexpr const char* kLayerNorm = "layer_norm";
inline constexpr const char* kSrwkv = "srwkv";
inline constexpr const char* kSrffn = "srffn";
inline constexpr const char* kHead = "head";
}  // namespace modules

}  // namespace qslm
