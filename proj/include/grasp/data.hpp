#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace grasp {

// Byte-level tokens: id == byte value, vocabulary size 256.
inline constexpr int kByteVocab = 256;

struct TokenSequence {
    std::vector<int> ids;

    std::size_t size() const { return ids.size(); }
    bool operator==(const TokenSequence&) const = default;
};

TokenSequence tokenize(std::string_view text);
std::string detokenize(const TokenSequence& tokens);

struct Corpus {
    std::vector<std::uint8_t> bytes;
    std::string name;
};

// Reads a whole file; DataError if missing or empty.
Corpus load_corpus(const std::string& path);

struct CalibrationSet {
    std::vector<TokenSequence> samples;
    std::string source_name;
    int sample_count = 0;
    std::uint64_t seed = 0;
};

// n windows of seq_len bytes drawn uniformly with a seeded PRNG. Windows
// containing the 0x00 document separator are re-drawn so samples never
// cross document boundaries.
CalibrationSet sample_calibration(const Corpus& corpus, int n, int seq_len,
                                  std::uint64_t seed);

}  // namespace grasp
