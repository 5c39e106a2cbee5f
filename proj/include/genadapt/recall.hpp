#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "genadapt/stream.hpp"

namespace genadapt {

// Synthetic associative-recall task: adapt on rendered key:value pairs,
// then query each key closed-book. Keys are lowercase letters and values
// digits, disjoint alphabets so the values cannot be copied from the query.
struct RecallTask {
    std::vector<std::pair<std::string, std::string>> pairs;
    int value_len = 3;

    std::string render() const {
        std::string out;
        for (const auto& [k, v] : pairs) out += k + ":" + v + ";";
        return out;
    }

    static RecallTask build(int count, std::uint64_t seed, int key_len = 3,
                            int value_len = 3) {
        RecallTask task;
        task.value_len = value_len;
        Rng rng(split_seed(seed, 0x4eca11));
        while (static_cast<int>(task.pairs.size()) < count) {
            std::string k;
            for (int i = 0; i < key_len; ++i)
                k.push_back(static_cast<char>('a' + rng.uniform_int(0, 25)));
            bool dup = false;
            for (const auto& [seen, v] : task.pairs) dup = dup || seen == k;
            if (dup) continue;
            std::string v;
            for (int i = 0; i < value_len; ++i)
                v.push_back(static_cast<char>('0' + rng.uniform_int(0, 9)));
            task.pairs.emplace_back(std::move(k), std::move(v));
        }
        return task;
    }
};

struct RecallReport {
    int pairs = 0;
    double adapted_exact_match = 0.0;
    double adapted_token_f1 = 0.0;
    double control_exact_match = 0.0;
    double control_token_f1 = 0.0;
};

namespace detail {

inline std::vector<int> text_tokens(const std::string& s) {
    std::vector<int> out;
    for (unsigned char c : s) out.push_back(static_cast<int>(c));
    return out;
}

inline std::string decode_until_separator(const std::vector<int>& tokens) {
    std::string out;
    for (int t : tokens) {
        if (t == ';' || t < 0 || t > 255) break;
        out.push_back(static_cast<char>(t));
    }
    return out;
}

// Bag-of-bytes F1, the byte-level analogue of answer-token F1.
inline double byte_f1(const std::string& predicted, const std::string& gold) {
    if (predicted.empty() || gold.empty())
        return predicted == gold ? 1.0 : 0.0;
    std::map<char, int> want;
    for (char c : gold) ++want[c];
    int overlap = 0;
    for (char c : predicted) {
        auto it = want.find(c);
        if (it != want.end() && it->second > 0) {
            --it->second;
            ++overlap;
        }
    }
    if (overlap == 0) return 0.0;
    const double precision =
        static_cast<double>(overlap) / static_cast<double>(predicted.size());
    const double recall =
        static_cast<double>(overlap) / static_cast<double>(gold.size());
    return 2.0 * precision * recall / (precision + recall);
}

}  // namespace detail

// Adapts on the rendered pairs (merged for querying), then asks for every
// value with a greedy closed-book prompt; the unadapted base model answers
// the same prompts as the control.
inline RecallReport run_recall_bench(const BaseModel& model,
                                     const GeneratorParams& params,
                                     int num_pairs, std::uint64_t seed,
                                     int chunk_size = 64) {
    RecallReport report;
    report.pairs = num_pairs;
    if (num_pairs == 0) return report;

    RecallTask task = RecallTask::build(num_pairs, seed);
    const std::vector<int> context = detail::text_tokens(task.render());
    auto [state, adapter] = contextualize(
        model, params, context,
        ChunkPlan::build(static_cast<int>(context.size()), chunk_size));
    BaseModel merged = merge_adapter(model, params.config.injection, adapter);

    for (const auto& [key, value] : task.pairs) {
        std::vector<int> prompt = {kTokenBos};
        for (unsigned char c : key + ":") prompt.push_back(c);
        const int budget = task.value_len + 1;

        std::vector<int> adapted_tokens = generate_tokens(
            merged, nullptr, nullptr, prompt, budget, true);
        std::vector<int> control_tokens = generate_tokens(
            model, nullptr, nullptr, prompt, budget, true);

        const std::string adapted = detail::decode_until_separator(adapted_tokens);
        const std::string control = detail::decode_until_separator(control_tokens);
        report.adapted_exact_match += adapted == value ? 1.0 : 0.0;
        report.adapted_token_f1 += detail::byte_f1(adapted, value);
        report.control_exact_match += control == value ? 1.0 : 0.0;
        report.control_token_f1 += detail::byte_f1(control, value);
    }
    const double inv = 1.0 / static_cast<double>(num_pairs);
    report.adapted_exact_match *= inv;
    report.adapted_token_f1 *= inv;
    report.control_exact_match *= inv;
    report.control_token_f1 *= inv;
    return report;
}

}  // namespace genadapt
