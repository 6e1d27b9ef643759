#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "plrn/tensor.hpp"

namespace plrn {

/// Token -> index map. Index 0 is reserved for unknown tokens; real tokens
/// get contiguous indices from 1 in insertion order.
class Vocabulary {
public:
    static constexpr int kUnknown = 0;

    int add(const std::string& token) {
        auto it = index_.find(token);
        if (it != index_.end()) return it->second;
        tokens_.push_back(token);
        const int idx = static_cast<int>(tokens_.size());
        index_[token] = idx;
        return idx;
    }

    /// Total lookup: unknown tokens map to index 0.
    int lookup(const std::string& token) const {
        auto it = index_.find(token);
        return it == index_.end() ? kUnknown : it->second;
    }

    /// Number of indices including the reserved unknown slot.
    int size() const { return static_cast<int>(tokens_.size()) + 1; }

    const std::vector<std::string>& tokens() const { return tokens_; }

    // File format: one token per line; the token on line k gets index k
    // (index 0 stays reserved).

    void save(const std::string& path) const {
        std::ofstream os(path);
        if (!os) throw IoError("cannot open vocabulary file '" + path + "' for writing");
        for (const auto& t : tokens_) os << t << "\n";
        if (!os) throw IoError("write failed for '" + path + "'");
    }

    static Vocabulary load(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw IoError("cannot open vocabulary file '" + path + "'");
        Vocabulary v;
        std::string line;
        while (std::getline(is, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (!line.empty()) v.add(line);
        }
        return v;
    }

private:
    std::unordered_map<std::string, int> index_;
    std::vector<std::string> tokens_;
};

/// Lowercases and strips everything that is not a letter, digit or
/// apostrophe, then splits on whitespace.
inline std::vector<std::string> normalize_words(const std::string& sentence) {
    std::vector<std::string> words;
    std::string cur;
    for (char ch : sentence) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            if (!cur.empty()) {
                words.push_back(cur);
                cur.clear();
            }
            continue;
        }
        const char lc = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        if (std::isalnum(static_cast<unsigned char>(lc)) || lc == '\'') cur += lc;
    }
    if (!cur.empty()) words.push_back(cur);
    return words;
}

struct QueryTokens {
    std::vector<int> ids;
    int length() const { return static_cast<int>(ids.size()); }
};

/// Tokenization contract: lowercase, strip punctuation, split on whitespace,
/// map through the vocabulary (unknown -> 0), keep at most the first
/// `max_words` tokens.
inline QueryTokens tokenize(const std::string& sentence, const Vocabulary& vocab,
                            int max_words = 25) {
    auto words = normalize_words(sentence);
    if (words.empty()) throw DataError("empty query: '" + sentence + "'");
    if (static_cast<int>(words.size()) > max_words) words.resize(max_words);
    QueryTokens q;
    q.ids.reserve(words.size());
    for (const auto& w : words) q.ids.push_back(vocab.lookup(w));
    return q;
}

/// Deterministic vocabulary over a corpus: unique normalized tokens in
/// sorted order.
inline Vocabulary build_vocabulary(const std::vector<std::string>& sentences) {
    std::set<std::string> uniq;
    for (const auto& s : sentences)
        for (const auto& w : normalize_words(s)) uniq.insert(w);
    Vocabulary v;
    for (const auto& w : uniq) v.add(w);
    return v;
}

}  // namespace plrn
