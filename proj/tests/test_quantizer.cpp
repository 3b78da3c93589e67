#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "qslm/analyzer/hierarchy.hpp"
#include "qslm/quantizer.hpp"
#include "test_util.hpp"

using namespace qslm;
using qslm::testing::random_model;

namespace {

// Nearest point of the symmetric grid {q * scale : |q| <= 2^(b-1) - 1}, ties to even q.
std::vector<float> grid_snap(const std::vector<float>& t, int bits) {
    double mx = 0;
    for (float v : t) mx = std::max(mx, std::fabs(static_cast<double>(v)));
    const long L = (1L << (bits - 1)) - 1;
    const double scale = mx / static_cast<double>(L);
    std::vector<float> out;
    for (float v : t) {
        long best = -L;
        double best_d = std::fabs(v - static_cast<double>(-L) * scale);
        for (long q = -L + 1; q <= L; ++q) {
            const double d = std::fabs(v - static_cast<double>(q) * scale);
            if (d < best_d || (d == best_d && q % 2 == 0)) {
                best = q;
                best_d = d;
            }
        }
        out.push_back(static_cast<float>(static_cast<double>(best) * scale));
    }
    return out;
}

}  // namespace

TEST(Quantize, FullPrecisionIsIdentity) {
    const Tensor t({4}, {0.1f, -3.5f, 1e-30f, 7.0f});
    EXPECT_EQ(quantize_tensor(t, PrecisionLevel(32)), t);
}

TEST(Quantize, AllZeroTensorUnchanged) {
    const Tensor z({3});
    EXPECT_EQ(quantize_tensor(z, PrecisionLevel(2)), z);
}

TEST(Quantize, EndpointsRepresentableAtTwoBits) {
    const Tensor t({3}, {-1.0f, 0.0f, 1.0f});
    EXPECT_DOUBLE_EQ(quantization_scale(t, PrecisionLevel(2)), 1.0);
    EXPECT_EQ(quantize_tensor(t, PrecisionLevel(2)), t);
}

TEST(Quantize, MatchesGridSnapOracle) {
    const std::vector<float> v{0.3f, -0.7f, 0.05f};
    const Tensor q = quantize_tensor(Tensor({3}, v), PrecisionLevel(4));
    const auto expect = grid_snap(v, 4);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(q[i], expect[i]);
    // Step 0.7/7: 0.3 -> level 3, -0.7 -> level -7. As floats, 0.05 sits just
    // above half a step, so it lands on level 1.
    const double step = static_cast<double>(0.7f) / 7.0;
    EXPECT_EQ(q[0], static_cast<float>(3 * step));
    EXPECT_EQ(q[1], -0.7f);
    EXPECT_EQ(q[2], static_cast<float>(step));

    std::mt19937_64 rng(5);
    std::normal_distribution<float> nd;
    for (int bits : {2, 3, 5, 8}) {
        std::vector<float> t(64);
        for (float& x : t) x = nd(rng);
        const Tensor out = quantize_tensor(Tensor({64}, t), PrecisionLevel(bits));
        const auto ref = grid_snap(t, bits);
        for (std::size_t i = 0; i < t.size(); ++i) EXPECT_EQ(out[i], ref[i]) << bits << " bits, element " << i;
    }
}

TEST(Quantize, IdempotentAndBounded) {
    std::mt19937_64 rng(7);
    std::normal_distribution<float> nd(0.0f, 2.0f);
    for (int bits = 2; bits <= 16; ++bits) {
        Tensor t({200});
        for (float& x : t.values()) x = nd(rng);
        const PrecisionLevel p(bits);
        const Tensor q = quantize_tensor(t, p);
        EXPECT_EQ(quantize_tensor(q, p), q);
        const double s = quantization_scale(t, p);
        for (std::size_t i = 0; i < t.size(); ++i) EXPECT_LE(std::fabs(q[i] - static_cast<double>(t[i])), s / 2 * (1 + 1e-6));
    }
}

TEST(Quantize, PrecisionLevelRange) {
    EXPECT_THROW(PrecisionLevel(1), AssignmentError);
    EXPECT_THROW(PrecisionLevel(33), AssignmentError);
    EXPECT_NO_THROW(PrecisionLevel(2));
    EXPECT_TRUE(PrecisionLevel::full().is_full());
}

TEST(Assignment, ResolutionPrecedence) {
    Assignment a = Assignment::uniform(8);
    const ModuleId att0{BlockId::attention(0), modules::kSrwkv};
    const ModuleId att0_ffn{BlockId::attention(0), modules::kSrffn};
    EXPECT_EQ(a.resolve(att0).bits(), 8);
    a.set_block(BlockId::attention(0), 6);
    EXPECT_EQ(a.resolve(att0).bits(), 6);
    a.set_module(att0, 4);
    EXPECT_EQ(a.resolve(att0).bits(), 4);
    EXPECT_EQ(a.resolve(att0_ffn).bits(), 6);
    EXPECT_EQ(a.resolve(ModuleId{BlockId::output(), modules::kHead}).bits(), 8);
}

TEST(Assignment, ValidateRejectsUnknownModules) {
    const Model m = random_model(10, 8, 2, 8, TaskHead::generation(), 1);
    const Hierarchy h = extract_hierarchy(m.params, m.config);
    Assignment a;
    a.set_block(BlockId::attention(5), 4);
    EXPECT_THROW(a.validate(h), AssignmentError);
    EXPECT_THROW((void)apply_assignment(m.params, h, a), AssignmentError);
    Assignment b;
    b.set_module(ModuleId{BlockId::input(), "srwkv"}, 4);
    EXPECT_THROW(b.validate(h), AssignmentError);
}

TEST(Assignment, JsonRoundTrip) {
    Assignment a = Assignment::uniform(12);
    a.set_block(BlockId::input(), 16);
    a.set_block(BlockId::attention(1), 8);
    a.set_module(ModuleId{BlockId::attention(1), modules::kSrffn}, 4);
    const auto j = assignment_to_json(a);
    EXPECT_EQ(j["overrides"].size(), 3u);
    EXPECT_EQ(assignment_from_json(j), a);
    EXPECT_EQ(assignment_from_json(nlohmann::ordered_json::parse(j.dump())), a);
    EXPECT_THROW(assignment_from_json(nlohmann::ordered_json{{"overrides", 1}}), AssignmentError);
    EXPECT_THROW(assignment_from_json(nlohmann::ordered_json{{"default_bits", 40}}), AssignmentError);
}

TEST(ApplyAssignment, FullPrecisionIsBitIdentical) {
    const Model m = random_model(10, 8, 2, 8, TaskHead::generation(), 1);
    const Hierarchy h = extract_hierarchy(m.params, m.config);
    EXPECT_EQ(apply_assignment(m.params, h, Assignment::full_precision()), m.params);
}

TEST(ApplyAssignment, OnlyTargetBlockChanges) {
    const Model m = random_model(10, 8, 3, 8, TaskHead::generation(), 1);
    const ModelParams before = m.params;
    const Hierarchy h = extract_hierarchy(m.params, m.config);
    Assignment a;
    a.set_block(BlockId::attention(0), 4);
    const ModelParams q = apply_assignment(m.params, h, a);
    EXPECT_EQ(m.params, before);
    std::vector<const Tensor*> orig;
    for_each_tensor(m.params, [&](const std::string&, const ModuleId&, const Tensor& t) { orig.push_back(&t); });
    std::size_t i = 0;
    for_each_tensor(q, [&](const std::string& name, const ModuleId& id, const Tensor& t) {
        const bool differs = !(t == *orig[i++]);
        if (id.block != BlockId::attention(0)) {
            EXPECT_FALSE(differs) << name;
        }
        if (name == "attention.0.srwkv.key") {
            EXPECT_TRUE(differs);
        }
    });
}

TEST(ApplyAssignment, LayerNormFollowsBlockOverride) {
    Model m = random_model(10, 8, 1, 8, TaskHead::generation(), 1);
    for (std::size_t i = 0; i < 8; ++i) m.params.input.layer_norm.gain[i] = 1.0f + 0.01f * static_cast<float>(i);
    const Hierarchy h = extract_hierarchy(m.params, m.config);
    Assignment a;
    a.set_block(BlockId::input(), 2);
    const ModelParams q = apply_assignment(m.params, h, a);
    EXPECT_EQ(q.input.layer_norm.gain, quantize_tensor(m.params.input.layer_norm.gain, PrecisionLevel(2)));
}

TEST(Footprint, ExactBytes) {
    const Hierarchy h({HierarchyEntry{{BlockId::input(), "embedding"}, 1000, {"e"}}});
    EXPECT_EQ(memory_footprint(h, Assignment::uniform(8)).bytes(), 1000.0);
    EXPECT_EQ(memory_footprint(h, Assignment::uniform(3)).bits, 3000u);
}

TEST(Footprint, MixedAssignmentMatchesPerTensorSum) {
    const Model m = random_model(13, 8, 3, 8, TaskHead::generation(), 1);
    const Hierarchy h = extract_hierarchy(m.params, m.config);
    Assignment a = Assignment::uniform(12);
    a.set_block(BlockId::attention(1), 6);
    a.set_module(ModuleId{BlockId::attention(1), modules::kSrffn}, 4);
    a.set_block(BlockId::output(), 16);
    std::uint64_t bits = 0;
    for_each_tensor(m.params, [&](const std::string&, const ModuleId& id, const Tensor& t) {
        bits += t.size() * static_cast<std::uint64_t>(a.resolve(id).bits());
    });
    EXPECT_EQ(memory_footprint(h, a).bits, bits);
    EXPECT_EQ(memory_footprint(h, a).bytes(), static_cast<double>(bits) / 8.0);
}

TEST(Footprint, MonotoneUnderBitDecrease) {
    const Model m = random_model(13, 8, 2, 8, TaskHead::generation(), 1);
    const Hierarchy h = extract_hierarchy(m.params, m.config);
    const Assignment base = Assignment::uniform(10);
    const auto ref = memory_footprint(h, base);
    for (const auto& e : h.entries()) {
        Assignment a = base;
        a.set_module(e.id, 9);
        EXPECT_LT(memory_footprint(h, a), ref) << e.id.name();
    }
}
