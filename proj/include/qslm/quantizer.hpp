#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "qslm/analyzer/hierarchy.hpp"
#include "qslm/error.hpp"
#include "qslm/model/params.hpp"
#include "qslm/tensor.hpp"

namespace qslm {

/// Weight bit-width, 2..32. 32 means "not quantized".
class PrecisionLevel {
public:
    constexpr PrecisionLevel() = default;
    explicit PrecisionLevel(int bits) : bits_(bits) {
        if (bits < 2 || bits > 32) throw AssignmentError("bit-width " + std::to_string(bits) + " outside [2, 32]");
    }

    constexpr int bits() const noexcept { return bits_; }
    constexpr bool is_full() const noexcept { return bits_ == 32; }
    static PrecisionLevel full() { return PrecisionLevel(32); }

    friend constexpr auto operator<=>(const PrecisionLevel&, const PrecisionLevel&) = default;

private:
    int bits_ = 32;
};

/// Symmetric per-tensor uniform quantize-dequantize:
///   scale = max|t| / (2^(bits-1) - 1)
///   out   = clamp(round(t / scale), -(2^(bits-1) - 1), 2^(bits-1) - 1) * scale
/// The largest-magnitude element maps back onto itself exactly, so a second
/// pass sees the same scale and the operation is idempotent.
inline Tensor quantize_tensor(const Tensor& t, PrecisionLevel p) {
    if (p.is_full()) return t;
    double max_abs = 0.0;
    for (float v : t.values()) max_abs = std::max(max_abs, std::fabs(static_cast<double>(v)));
    if (max_abs == 0.0) return t;
    const double levels = std::ldexp(1.0, p.bits() - 1) - 1.0;
    const double scale = max_abs / levels;
    Tensor out(t.shape());
    for (std::size_t i = 0; i < t.size(); ++i) {
        double q = std::nearbyint(static_cast<double>(t[i]) / scale);
        q = std::clamp(q, -levels, levels);
        out[i] = static_cast<float>(q * scale);
    }
    return out;
}

inline double quantization_scale(const Tensor& t, PrecisionLevel p) {
    double max_abs = 0.0;
    for (float v : t.values()) max_abs = std::max(max_abs, std::fabs(static_cast<double>(v)));
    return max_abs / (std::ldexp(1.0, p.bits() - 1) - 1.0);
}

/// A complete module -> bit-width mapping. Resolution precedence:
/// module override, then block override, then the default.
struct Assignment {
    PrecisionLevel default_bits = PrecisionLevel::full();
    std::map<BlockId, PrecisionLevel> block_overrides;
    std::map<ModuleId, PrecisionLevel> module_overrides;

    static Assignment uniform(int bits) { return Assignment{PrecisionLevel(bits), {}, {}}; }
    static Assignment full_precision() { return uniform(32); }

    PrecisionLevel resolve(const ModuleId& id) const {
        if (auto it = module_overrides.find(id); it != module_overrides.end()) return it->second;
        if (auto it = block_overrides.find(id.block); it != block_overrides.end()) return it->second;
        return default_bits;
    }

    Assignment& set_block(const BlockId& b, int bits) {
        block_overrides[b] = PrecisionLevel(bits);
        return *this;
    }
    Assignment& set_module(const ModuleId& m, int bits) {
        module_overrides[m] = PrecisionLevel(bits);
        return *this;
    }

    /// Throws AssignmentError when an override names something outside `h`.
    void validate(const Hierarchy& h) const {
        for (const auto& [b, _] : block_overrides) {
            if (!h.contains(b)) throw AssignmentError("override for unknown block " + b.name());
        }
        for (const auto& [m, _] : module_overrides) {
            if (!h.contains(m)) throw AssignmentError("override for unknown module " + m.name());
        }
    }

    /// Resolved bits per hierarchy entry, in hierarchy order.
    std::vector<int> resolved(const Hierarchy& h) const {
        std::vector<int> out;
        out.reserve(h.size());
        for (const auto& e : h.entries()) out.push_back(resolve(e.id).bits());
        return out;
    }

    friend bool operator==(const Assignment&, const Assignment&) = default;
};

/// Quantizes every tensor at its owning module's resolved precision. Returns a
/// new parameter set; the input is untouched.
inline ModelParams apply_assignment(const ModelParams& params, const Hierarchy& h, const Assignment& a) {
    a.validate(h);
    ModelParams out = params;
    for_each_tensor(out, [&](const std::string& name, const ModuleId& id, Tensor& t) {
        if (!h.contains(id)) throw AssignmentError("tensor " + name + " belongs to module outside the hierarchy");
        const PrecisionLevel p = a.resolve(id);
        if (!p.is_full()) t = quantize_tensor(t, p);
    });
    return out;
}

/// Exact weight storage: sum of param_count x resolved bits, no padding.
struct Footprint {
    std::uint64_t bits = 0;

    double bytes() const noexcept { return static_cast<double>(bits) / 8.0; }
    friend auto operator<=>(const Footprint&, const Footprint&) = default;
};

inline Footprint memory_footprint(const Hierarchy& h, const Assignment& a) {
    Footprint f;
    for (const auto& e : h.entries()) {
        f.bits += static_cast<std::uint64_t>(e.param_count) * static_cast<std::uint64_t>(a.resolve(e.id).bits());
    }
    return f;
}

// {"default_bits": int, "overrides": [{"block": str, "module": str|null, "bits": int}]}
inline nlohmann::ordered_json assignment_to_json(const Assignment& a) {
    nlohmann::ordered_json j;
    j["default_bits"] = a.default_bits.bits();
    auto overrides = nlohmann::ordered_json::array();
    for (const auto& [b, p] : a.block_overrides) {
        overrides.push_back({{"block", b.name()}, {"module", nullptr}, {"bits", p.bits()}});
    }
    for (const auto& [m, p] : a.module_overrides) {
        overrides.push_back({{"block", m.block.name()}, {"module", m.module}, {"bits", p.bits()}});
    }
    j["overrides"] = std::move(overrides);
    return j;
}

template <class JsonT>
Assignment assignment_from_json(const JsonT& j) {
    try {
        Assignment a;
        a.default_bits = PrecisionLevel(j.at("default_bits").template get<int>());
        if (j.contains("overrides")) {
            for (const auto& o : j.at("overrides")) {
                const BlockId b = BlockId::parse(o.at("block").template get<std::string>());
                const int bits = o.at("bits").template get<int>();
                if (!o.contains("module") || o.at("module").is_null()) {
                    a.set_block(b, bits);
                } else {
                    a.set_module(ModuleId{b, o.at("module").template get<std::string>()}, bits);
                }
            }
        }
        return a;
    } catch (const nlohmann::json::exception& e) {
        throw AssignmentError(std::string("malformed assignment JSON: ") + e.what());
    }
}

}  // namespace qslm
