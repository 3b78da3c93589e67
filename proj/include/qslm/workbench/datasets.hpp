#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "qslm/error.hpp"
#include "qslm/model/trainer.hpp"
#include "qslm/workbench/tokenizer.hpp"

namespace qslm {

struct TextExample {
    std::string text;
    int label = 0;

    friend bool operator==(const TextExample&, const TextExample&) = default;
};

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed for " + path.string());
}

/// One example per line: `text<TAB>label`, label a non-negative integer.
inline std::vector<TextExample> parse_classification_tsv(const std::string& content, const std::string& origin) {
    std::vector<TextExample> out;
    std::istringstream in(content);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto tab = line.rfind('\t');
        if (tab == std::string::npos) {
            throw InputError(origin + ":" + std::to_string(lineno) + ": expected text<TAB>label");
        }
        const std::string label = line.substr(tab + 1);
        int value = -1;
        try {
            std::size_t used = 0;
            value = std::stoi(label, &used);
            if (used != label.size()) value = -1;
        } catch (const std::exception&) {
        }
        if (value < 0) throw InputError(origin + ":" + std::to_string(lineno) + ": bad label '" + label + "'");
        out.push_back({line.substr(0, tab), value});
    }
    if (out.empty()) throw InputError(origin + ": no examples");
    return out;
}

inline std::vector<TextExample> read_classification_tsv(const std::filesystem::path& path) {
    return parse_classification_tsv(read_text_file(path), path.string());
}

inline std::string format_classification_tsv(const std::vector<TextExample>& rows) {
    std::string out;
    for (const auto& r : rows) {
        if (r.text.find('\t') != std::string::npos || r.text.find('\n') != std::string::npos) {
            throw InputError("example text contains a tab or newline");
        }
        out += r.text + "\t" + std::to_string(r.label) + "\n";
    }
    return out;
}

inline std::vector<LabeledSequence> encode_examples(const Tokenizer& tok, const std::vector<TextExample>& rows) {
    std::vector<LabeledSequence> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back({tok.encode(r.text), r.label});
    return out;
}

inline std::size_t class_count(const std::vector<TextExample>& rows) {
    int mx = -1;
    for (const auto& r : rows) mx = std::max(mx, r.label);
    return static_cast<std::size_t>(mx + 1);
}

// Concatenated example texts, one per line; the tokenizer is fitted on this.
inline std::string joined_text(const std::vector<TextExample>& rows) {
    std::string out;
    for (const auto& r : rows) out += r.text + "\n";
    return out;
}

}  // namespace qslm
