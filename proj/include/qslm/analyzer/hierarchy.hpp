#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "qslm/error.hpp"
#include "qslm/model/config.hpp"
#include "qslm/model/params.hpp"
#include "qslm/module_id.hpp"

namespace qslm {

struct HierarchyEntry {
    ModuleId id;
    std::size_t param_count = 0;
    std::vector<std::string> tensor_names;
};

/// Block -> module tree with parameter counts, in dataflow order.
class Hierarchy {
public:
    Hierarchy() = default;

    explicit Hierarchy(std::vector<HierarchyEntry> entries) : entries_(std::move(entries)) {
        for (std::size_t i = 0; i < entries_.size(); ++i) {
            for (std::size_t j = i + 1; j < entries_.size(); ++j) {
                if (entries_[i].id == entries_[j].id) {
                    throw ModelIntegrityError("duplicate module " + entries_[i].id.name() + " in hierarchy");
                }
            }
            if (blocks_.empty() || blocks_.back() != entries_[i].id.block) {
                if (std::find(blocks_.begin(), blocks_.end(), entries_[i].id.block) != blocks_.end()) {
                    throw ModelIntegrityError("modules of block " + entries_[i].id.block.name() + " are not contiguous");
                }
                blocks_.push_back(entries_[i].id.block);
            }
        }
    }

    const std::vector<HierarchyEntry>& entries() const noexcept { return entries_; }
    const std::vector<BlockId>& blocks() const noexcept { return blocks_; }
    std::size_t size() const noexcept { return entries_.size(); }

    bool contains(const ModuleId& id) const { return index_of(id) != npos; }
    bool contains(const BlockId& b) const { return std::find(blocks_.begin(), blocks_.end(), b) != blocks_.end(); }

    static constexpr std::size_t npos = static_cast<std::size_t>(-1);

    std::size_t index_of(const ModuleId& id) const {
        for (std::size_t i = 0; i < entries_.size(); ++i) {
            if (entries_[i].id == id) return i;
        }
        return npos;
    }

    std::vector<ModuleId> modules_of(const BlockId& b) const {
        std::vector<ModuleId> out;
        for (const auto& e : entries_) {
            if (e.id.block == b) out.push_back(e.id);
        }
        return out;
    }

    std::vector<BlockId> attention_blocks() const {
        std::vector<BlockId> out;
        for (const auto& b : blocks_) {
            if (b.is_attention()) out.push_back(b);
        }
        return out;
    }

    std::size_t block_param_count(const BlockId& b) const {
        std::size_t n = 0;
        for (const auto& e : entries_) {
            if (e.id.block == b) n += e.param_count;
        }
        return n;
    }

    std::size_t total_params() const {
        std::size_t n = 0;
        for (const auto& e : entries_) n += e.param_count;
        return n;
    }

private:
    std::vector<HierarchyEntry> entries_;
    std::vector<BlockId> blocks_;
};

namespace detail {

inline Hierarchy hierarchy_from_specs(const std::vector<TensorSpec>& specs) {
    std::vector<HierarchyEntry> entries;
    for (const auto& s : specs) {
        auto it = std::find_if(entries.begin(), entries.end(), [&](const HierarchyEntry& e) { return e.id == s.module; });
        if (it == entries.end()) {
            entries.push_back({s.module, 0, {}});
            it = entries.end() - 1;
        }
        it->param_count += s.count();
        it->tensor_names.push_back(s.name);
    }
    return Hierarchy(std::move(entries));
}

}  // namespace detail

/// Counts-only hierarchy for a config; needs no weights (used for large descriptors).
inline Hierarchy describe_hierarchy(const ModelConfig& config) {
    return detail::hierarchy_from_specs(tensor_layout(config));
}

/// Hierarchy of a concrete model. Every tensor must have the shape the config implies.
inline Hierarchy extract_hierarchy(const ModelParams& params, const ModelConfig& config) {
    config.validate();
    if (params.blocks.size() != config.num_blocks) {
        throw ModelIntegrityError("model has " + std::to_string(params.blocks.size()) + " attention blocks, config says " +
                                  std::to_string(config.num_blocks));
    }
    const auto layout = tensor_layout(config);
    std::vector<TensorSpec> actual;
    for_each_tensor(params, [&](const std::string& name, const ModuleId& id, const Tensor& t) {
        actual.push_back({name, id, t.shape()});
    });
    if (actual.size() != layout.size()) throw ModelIntegrityError("tensor count does not match config");
    for (std::size_t i = 0; i < layout.size(); ++i) {
        if (actual[i].name != layout[i].name || actual[i].shape != layout[i].shape) {
            throw ModelIntegrityError("tensor " + actual[i].name + " has shape " + shape_string(actual[i].shape) +
                                      ", expected " + shape_string(layout[i].shape));
        }
    }
    return detail::hierarchy_from_specs(actual);
}

}  // namespace qslm
