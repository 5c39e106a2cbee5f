#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "genadapt/common.hpp"
#include "genadapt/rng.hpp"

namespace genadapt {

// A token segment split into a context prefix and a continuation: the
// context feeds the generator, reconstruction re-scores the context, and
// completion scores the continuation.
struct TrainingExample {
    std::vector<int> tokens;  // x_1 .. x_n
    int split = 0;            // m, with 1 <= m < n

    std::vector<int> context() const {
        return {tokens.begin(), tokens.begin() + split};
    }
    std::vector<int> continuation() const {
        return {tokens.begin() + split, tokens.end()};
    }
};

inline std::vector<std::uint8_t> load_corpus_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open corpus file '" + path + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)),
                                    std::istreambuf_iterator<char>());
    return bytes;
}

inline std::vector<std::uint8_t> load_corpus(
    const std::vector<std::string>& paths) {
    std::vector<std::uint8_t> all;
    for (const std::string& p : paths) {
        std::vector<std::uint8_t> one = load_corpus_file(p);
        all.insert(all.end(), one.begin(), one.end());
    }
    return all;
}

// Non-overlapping segments in corpus order; the split point is sampled
// uniformly from [ceil(0.25 n), floor(0.75 n)] per segment.
inline std::vector<TrainingExample> make_examples(
    const std::vector<std::uint8_t>& corpus, int segment_length,
    std::uint64_t seed) {
    if (segment_length < 2)
        throw DataError("segment_length must be at least 2");
    if (static_cast<int>(corpus.size()) < segment_length)
        throw DataError("corpus of " + std::to_string(corpus.size()) +
                        " bytes is shorter than one segment of " +
                        std::to_string(segment_length));
    Rng rng(split_seed(seed, 0xda7a));
    std::vector<TrainingExample> out;
    const std::size_t count = corpus.size() / static_cast<std::size_t>(segment_length);
    for (std::size_t i = 0; i < count; ++i) {
        TrainingExample ex;
        const std::size_t base = i * static_cast<std::size_t>(segment_length);
        for (int j = 0; j < segment_length; ++j)
            ex.tokens.push_back(
                static_cast<int>(corpus[base + static_cast<std::size_t>(j)]));
        const int n = segment_length;
        const int lo = std::max(1, (n + 3) / 4);          // ceil(0.25 n)
        const int hi = std::min(n - 1, (3 * n) / 4);      // floor(0.75 n)
        ex.split = static_cast<int>(rng.uniform_int(lo, hi));
        out.push_back(std::move(ex));
    }
    return out;
}

// --- synthetic toy corpus ---------------------------------------------------
//
// Fixed-size blocks sized to the training segment length, each holding a
// fact section of key:value pairs, filler sentences from a small
// pseudo-word pool, and a shuffled re-listing of a subset of the pairs at
// the end. With the split point drawn from [0.25 n, 0.75 n], the facts
// always land in the context and the re-listing always lands in the
// continuation, so completion rewards recall through the adapter while the
// filler keeps reconstruction non-trivial.

struct CorpusSpec {
    std::size_t target_bytes = 1 << 20;
    int block_bytes = 256;  // keep equal to the training segment length
    int min_pairs = 8;
    int max_pairs = 16;
    int key_len = 3;    // lowercase letters
    int value_len = 3;  // digits
    std::uint64_t seed = 1;
};

namespace detail {

inline std::string synth_word(Rng& rng) {
    static const char* pool[] = {
        "stream", "vector", "matrix", "signal", "branch", "kernel", "window",
        "copper", "meadow", "harbor", "lantern", "quartz", "marble", "cinder",
        "willow", "ember",  "falcon", "garnet", "hollow", "ingot",  "juniper",
        "keel",   "lumen",  "mantle", "nectar", "onyx",   "prism",  "quill",
        "ridge",  "saddle", "timber", "umber",  "vellum", "wicker", "yarrow",
        "zephyr", "anchor", "basalt", "canyon", "delta"};
    return pool[rng.uniform_int(0, 39)];
}

inline std::string synth_key(Rng& rng, int len) {
    std::string s;
    for (int i = 0; i < len; ++i)
        s.push_back(static_cast<char>('a' + rng.uniform_int(0, 25)));
    return s;
}

inline std::string synth_value(Rng& rng, int len) {
    std::string s;
    for (int i = 0; i < len; ++i)
        s.push_back(static_cast<char>('0' + rng.uniform_int(0, 9)));
    return s;
}

}  // namespace detail

inline std::vector<std::uint8_t> make_synthetic_corpus(const CorpusSpec& spec) {
    Rng rng(split_seed(spec.seed, 0xc0));
    const int pair_bytes = spec.key_len + spec.value_len + 2;  // "k:v;"
    const int min_filler = 16;
    if (spec.block_bytes <
        spec.min_pairs * 2 * pair_bytes + min_filler + 1)
        throw DataError("block_bytes too small for the requested pair count");

    std::string text;
    text.reserve(spec.target_bytes + static_cast<std::size_t>(spec.block_bytes));
    while (text.size() < spec.target_bytes) {
        int pairs = static_cast<int>(
            rng.uniform_int(spec.min_pairs, spec.max_pairs));
        // Keep facts plus a re-list subset plus filler inside the block.
        while (pairs * pair_bytes >
               (spec.block_bytes - min_filler - 1) / 2 + pair_bytes)
            --pairs;
        std::vector<std::string> keys, values;
        while (static_cast<int>(keys.size()) < pairs) {
            std::string k = detail::synth_key(rng, spec.key_len);
            bool dup = false;
            for (const std::string& seen : keys) dup = dup || seen == k;
            if (dup) continue;
            keys.push_back(k);
            values.push_back(detail::synth_value(rng, spec.value_len));
        }

        std::string block;
        for (int i = 0; i < pairs; ++i)
            block += keys[static_cast<std::size_t>(i)] + ":" +
                     values[static_cast<std::size_t>(i)] + ";";

        const int relist_count =
            std::min(pairs, (spec.block_bytes -
                             pairs * pair_bytes - min_filler - 1) /
                                pair_bytes);
        std::vector<int> order(static_cast<std::size_t>(pairs));
        for (int i = 0; i < pairs; ++i) order[static_cast<std::size_t>(i)] = i;
        for (int i = pairs - 1; i > 0; --i)
            std::swap(order[static_cast<std::size_t>(i)],
                      order[static_cast<std::size_t>(rng.uniform_int(0, i))]);

        std::string relist;
        for (int i = 0; i < relist_count; ++i)
            relist += keys[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] +
                      ":" +
                      values[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] +
                      ";";

        // Filler words pad the middle to land the re-list flush at the end.
        const std::size_t filler_bytes = static_cast<std::size_t>(
            spec.block_bytes - 1) - block.size() - relist.size();
        std::string filler;
        while (filler.size() < filler_bytes) {
            if (!filler.empty()) filler.push_back(' ');
            filler += detail::synth_word(rng);
        }
        filler.resize(filler_bytes);

        block += filler;
        block += relist;
        block.push_back('\n');
        text += block;
    }
    text.resize(spec.target_bytes);
    return {text.begin(), text.end()};
}

}  // namespace genadapt
