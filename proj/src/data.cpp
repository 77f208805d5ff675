#include "grasp/data.hpp"

#include <algorithm>
#include <fstream>
#include <random>

#include "grasp/errors.hpp"

namespace grasp {

TokenSequence tokenize(std::string_view text) {
    TokenSequence t;
    t.ids.reserve(text.size());
    for (unsigned char c : text) {
        t.ids.push_back(static_cast<int>(c));
    }
    return t;
}

std::string detokenize(const TokenSequence& tokens) {
    std::string s;
    s.reserve(tokens.ids.size());
    for (int id : tokens.ids) {
        if (id < 0 || id >= kByteVocab) {
            throw ValidationError("detokenize: id " + std::to_string(id) +
                                  " outside byte range");
        }
        s.push_back(static_cast<char>(static_cast<unsigned char>(id)));
    }
    return s;
}

Corpus load_corpus(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("corpus file not found: " + path);
    }
    Corpus c;
    c.name = path;
    c.bytes.assign(std::istreambuf_iterator<char>(in),
                   std::istreambuf_iterator<char>());
    if (c.bytes.empty()) {
        throw DataError("corpus file is empty: " + path);
    }
    return c;
}

CalibrationSet sample_calibration(const Corpus& corpus, int n, int seq_len,
                                  std::uint64_t seed) {
    if (n < 1) {
        throw ValidationError("sample_calibration: n must be >= 1");
    }
    if (seq_len < 2) {
        throw ValidationError("sample_calibration: seq_len must be >= 2");
    }
    if (corpus.bytes.size() < static_cast<std::size_t>(seq_len)) {
        throw DataError("corpus too short: " +
                        std::to_string(corpus.bytes.size()) + " bytes < window " +
                        std::to_string(seq_len));
    }

    std::mt19937_64 rng(seed);
    const std::size_t max_start = corpus.bytes.size() - seq_len;
    std::uniform_int_distribution<std::size_t> dist(0, max_start);

    CalibrationSet set;
    set.source_name = corpus.name;
    set.seed = seed;
    set.samples.reserve(static_cast<std::size_t>(n));

    const long max_attempts = 10000L * n;
    long attempts = 0;
    while (set.samples.size() < static_cast<std::size_t>(n)) {
        if (++attempts > max_attempts) {
            throw DataError("sample_calibration: could not find windows free "
                            "of document separators");
        }
        const std::size_t start = dist(rng);
        const auto begin = corpus.bytes.begin() + static_cast<long>(start);
        if (std::find(begin, begin + seq_len, 0u) != begin + seq_len) {
            continue;  // window straddles a document boundary
        }
        TokenSequence t;
        t.ids.reserve(static_cast<std::size_t>(seq_len));
        for (int i = 0; i < seq_len; ++i) {
            t.ids.push_back(static_cast<int>(corpus.bytes[start + i]));
        }
        set.samples.push_back(std::move(t));
    }
    set.sample_count = n;
    return set;
}

}  // namespace grasp
