#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "qslm/workbench/datasets.hpp"

namespace qslm {

// Filler, positive and negative words use disjoint letter sets, so the two
// classes separate on character counts alone.
inline constexpr std::array<std::string_view, 12> kFillerWords{
    "thin", "mint", "chin", "kit", "hint", "tick", "mimic", "inch", "itch", "nick", "chit", "mink"};
inline constexpr std::array<std::string_view, 8> kPositiveWords{
    "love", "good", "yes", "jolly", "glee", "solve", "goes", "lovely"};
inline constexpr std::array<std::string_view, 10> kNegativeWords{
    "bad", "dud", "drab", "fraud", "bump", "warp", "pub", "draw", "barf", "dump"};

/// Balanced two-class keyword dataset: label 1 sentences carry positive
/// keywords, label 0 sentences negative ones, mixed among filler words.
inline std::vector<TextExample> make_sentiment_examples(std::size_t count, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto pick = [&](auto const& words) {
        std::uniform_int_distribution<std::size_t> d(0, words.size() - 1);
        return std::string(words[d(rng)]);
    };
    std::uniform_int_distribution<int> fillers(2, 4);
    std::uniform_int_distribution<int> keywords(1, 2);
    std::vector<TextExample> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const int label = static_cast<int>(i % 2);
        std::vector<std::string> words;
        for (int f = fillers(rng); f > 0; --f) words.push_back(pick(kFillerWords));
        for (int k = keywords(rng); k > 0; --k) {
            words.push_back(label == 1 ? pick(kPositiveWords) : pick(kNegativeWords));
        }
        std::shuffle(words.begin(), words.end(), rng);
        std::string text;
        for (const auto& w : words) text += (text.empty() ? "" : " ") + w;
        out.push_back({text, label});
    }
    return out;
}

}  // namespace qslm
