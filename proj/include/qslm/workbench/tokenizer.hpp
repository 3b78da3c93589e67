#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "qslm/error.hpp"
#include "qslm/model/forward.hpp"

namespace qslm {

/// Byte-level tokenizer. Id 0 is reserved for bytes absent from the training
/// text; ids 1..n map to the distinct bytes of that text in ascending order.
class Tokenizer {
public:
    static constexpr Token kUnknown = 0;

    Tokenizer() { lookup_.fill(kUnknown); }

    explicit Tokenizer(std::vector<std::uint8_t> bytes) : bytes_(std::move(bytes)) {
        std::sort(bytes_.begin(), bytes_.end());
        bytes_.erase(std::unique(bytes_.begin(), bytes_.end()), bytes_.end());
        lookup_.fill(kUnknown);
        for (std::size_t i = 0; i < bytes_.size(); ++i) lookup_[bytes_[i]] = static_cast<Token>(i + 1);
    }

    static Tokenizer fit(std::string_view text) {
        std::array<bool, 256> seen{};
        for (unsigned char ch : text) seen[ch] = true;
        std::vector<std::uint8_t> bytes;
        for (int b = 0; b < 256; ++b) {
            if (seen[static_cast<std::size_t>(b)]) bytes.push_back(static_cast<std::uint8_t>(b));
        }
        return Tokenizer(std::move(bytes));
    }

    std::size_t vocab_size() const noexcept { return bytes_.size() + 1; }
    const std::vector<std::uint8_t>& bytes() const noexcept { return bytes_; }

    std::vector<Token> encode(std::string_view text) const {
        std::vector<Token> ids;
        ids.reserve(text.size());
        for (unsigned char ch : text) ids.push_back(lookup_[ch]);
        return ids;
    }

    // Unknown ids decode to '?'.
    std::string decode(const std::vector<Token>& ids) const {
        std::string out;
        out.reserve(ids.size());
        for (Token id : ids) {
            if (id <= 0 || static_cast<std::size_t>(id) > bytes_.size()) {
                if (id != kUnknown) throw InputError("token id " + std::to_string(id) + " outside tokenizer vocab");
                out.push_back('?');
            } else {
                out.push_back(static_cast<char>(bytes_[static_cast<std::size_t>(id - 1)]));
            }
        }
        return out;
    }

    friend bool operator==(const Tokenizer& a, const Tokenizer& b) { return a.bytes_ == b.bytes_; }

private:
    std::vector<std::uint8_t> bytes_;
    std::array<Token, 256> lookup_{};
};

}  // namespace qslm
