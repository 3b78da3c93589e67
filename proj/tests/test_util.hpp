#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "qslm/model/forward.hpp"
#include "qslm/model/params.hpp"

namespace qslm::testing {

inline std::filesystem::path fixture(const std::string& name) { return std::filesystem::path(QSLM_FIXTURES) / name; }

inline Model random_model(std::size_t vocab, std::size_t dim, std::size_t blocks, std::size_t context, TaskHead head,
                          std::uint64_t seed) {
    const ModelConfig cfg = make_config(vocab, dim, blocks, context, head);
    std::mt19937_64 rng(seed);
    return Model{cfg, init_params(cfg, rng)};
}

inline std::vector<Token> random_tokens(std::size_t n, std::size_t vocab, std::mt19937_64& rng) {
    std::uniform_int_distribution<Token> d(0, static_cast<Token>(vocab - 1));
    std::vector<Token> out(n);
    for (auto& t : out) t = d(rng);
    return out;
}

// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("qslm-" + tag + "-" + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const noexcept { return path_; }
    std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

private:
    std::filesystem::path path_;
};

}  // namespace qslm::testing
