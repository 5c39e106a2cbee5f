#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "genadapt/generator.hpp"

namespace genadapt {

// Analytic cost model. Convention: a multiply-add counts as 2 FLOPs;
// attention score and value matmuls are included; softmax, norms and
// embedding lookups are excluded (dominated terms). Counts are exact
// integers so scenario comparisons can assert equality.

struct FlopsScenario {
    std::string name;
    std::uint64_t contextualization_flops = 0;
    std::uint64_t per_query_flops = 0;
    std::uint64_t extra_storage_floats = 0;
};

struct FlopsRow {
    std::uint64_t context_length = 0;
    FlopsScenario closed_book;
    FlopsScenario full_prompting;
    FlopsScenario adapted;
};

namespace detail {

// Forward cost for `m` new tokens attending over `k` total positions.
inline std::uint64_t forward_flops(const ModelConfig& cfg, std::uint64_t m,
                                   std::uint64_t k) {
    const std::uint64_t dh = static_cast<std::uint64_t>(cfg.hidden_dim);
    const std::uint64_t ffn = static_cast<std::uint64_t>(cfg.ffn_dim);
    const std::uint64_t vocab = static_cast<std::uint64_t>(cfg.vocab_size);
    const std::uint64_t layers = static_cast<std::uint64_t>(cfg.num_layers);
    const std::uint64_t projections = 8 * m * dh * dh;      // q, k, v, o
    const std::uint64_t attention = 4 * m * k * dh;         // scores + values
    const std::uint64_t feed_forward = 4 * m * dh * ffn;    // up + down
    return layers * (projections + attention + feed_forward) +
           2 * m * dh * vocab;
}

// Unmerged low-rank injections during context encoding.
inline std::uint64_t injection_flops(const ModelConfig& cfg,
                                     const InjectionConfig& inj,
                                     std::uint64_t rank, std::uint64_t m) {
    std::uint64_t total = 0;
    for (InjectionTarget t : inj.targets)
        total += 2 * m * rank *
                 (static_cast<std::uint64_t>(target_in_dim(t, cfg)) +
                  static_cast<std::uint64_t>(target_out_dim(t, cfg)));
    return static_cast<std::uint64_t>(cfg.num_layers) * total;
}

// State update plus normalization plus emission for one chunk of m tokens.
inline std::uint64_t generator_flops(const ModelConfig& cfg,
                                     const InjectionConfig& inj,
                                     std::uint64_t d_r, std::uint64_t rank,
                                     std::uint64_t m) {
    const std::uint64_t dh = static_cast<std::uint64_t>(cfg.hidden_dim);
    std::uint64_t per_slot = 0;
    // Projected Gram: (A2 H^T)(H B1).
    per_slot += 4 * d_r * m * dh + 2 * d_r * d_r * m;
    // Randomized range finder with one power iteration plus the small SVD
    // of the projected matrix (approximate cost, dominated terms only).
    const std::uint64_t width = rank + std::min<std::uint64_t>(rank, 8);
    per_slot += 6 * d_r * d_r * width + 8 * width * width * d_r;
    std::uint64_t emission = 0;
    for (InjectionTarget t : inj.targets)
        emission += 2 * rank * d_r *
                    (static_cast<std::uint64_t>(target_in_dim(t, cfg)) +
                     static_cast<std::uint64_t>(target_out_dim(t, cfg)));
    return static_cast<std::uint64_t>(cfg.num_layers) *
               static_cast<std::uint64_t>(inj.targets.size()) * per_slot +
           static_cast<std::uint64_t>(cfg.num_layers) * emission;
}

// Baking alpha * P * Q into the base weights.
inline std::uint64_t merge_flops(const ModelConfig& cfg,
                                 const InjectionConfig& inj,
                                 std::uint64_t rank) {
    std::uint64_t total = 0;
    for (InjectionTarget t : inj.targets)
        total += 2 * rank * static_cast<std::uint64_t>(target_in_dim(t, cfg)) *
                 static_cast<std::uint64_t>(target_out_dim(t, cfg));
    return static_cast<std::uint64_t>(cfg.num_layers) * total;
}

}  // namespace detail

inline std::uint64_t adapter_storage_floats(const ModelConfig& cfg,
                                            const InjectionConfig& inj,
                                            std::uint64_t rank) {
    return count_parameters(cfg, inj, 1, rank).adapter_params;
}

inline std::uint64_t state_storage_floats(const ModelConfig& cfg,
                                          const InjectionConfig& inj,
                                          std::uint64_t d_r) {
    return static_cast<std::uint64_t>(cfg.num_layers) *
           static_cast<std::uint64_t>(inj.targets.size()) * d_r * d_r;
}

// One row per context length. The adapted scenario merges the adapter, so
// its per-query cost is the closed-book cost by construction; prompting
// reuses a KV cache built during contextualization but still attends over
// the whole context per query.
inline std::vector<FlopsRow> build_flops_report(
    const ModelConfig& cfg, const InjectionConfig& inj, std::uint64_t d_r,
    std::uint64_t rank, const std::vector<std::uint64_t>& context_lengths,
    std::uint64_t query_tokens, std::uint64_t chunk_size) {
    if (query_tokens == 0 || chunk_size == 0)
        throw ConfigError("flops report: query_tokens and chunk_size must be positive");
    std::vector<FlopsRow> rows;
    for (std::uint64_t c : context_lengths) {
        FlopsRow row;
        row.context_length = c;

        row.closed_book.name = "closed_book";
        row.closed_book.per_query_flops =
            detail::forward_flops(cfg, query_tokens, query_tokens);

        row.full_prompting.name = "full_prompting";
        row.full_prompting.contextualization_flops =
            c == 0 ? 0 : detail::forward_flops(cfg, c, c);
        row.full_prompting.per_query_flops =
            detail::forward_flops(cfg, query_tokens, c + query_tokens);
        row.full_prompting.extra_storage_floats =
            2 * c * static_cast<std::uint64_t>(cfg.hidden_dim) *
            static_cast<std::uint64_t>(cfg.num_layers);  // KV cache

        row.adapted.name = "adapted";
        std::uint64_t ctx = 0;
        std::uint64_t remaining = c;
        while (remaining > 0) {
            const std::uint64_t m = std::min(remaining, chunk_size);
            ctx += detail::forward_flops(cfg, m, m) -
                   2 * m * static_cast<std::uint64_t>(cfg.hidden_dim) *
                       static_cast<std::uint64_t>(cfg.vocab_size);
            ctx += detail::injection_flops(cfg, inj, rank, m);
            ctx += detail::generator_flops(cfg, inj, d_r, rank, m);
            remaining -= m;
        }
        if (c > 0) ctx += detail::merge_flops(cfg, inj, rank);
        row.adapted.contextualization_flops = ctx;
        row.adapted.per_query_flops = row.closed_book.per_query_flops;
        row.adapted.extra_storage_floats =
            c == 0 ? 0 : adapter_storage_floats(cfg, inj, rank);

        rows.push_back(row);
    }
    return rows;
}

inline std::string flops_report_csv(const std::vector<FlopsRow>& rows) {
    std::string out =
        "# flop convention: multiply-add = 2 flops; attention score/value "
        "matmuls included; softmax/norms/embedding excluded\n"
        "context_length,scenario,contextualization_flops,per_query_flops,"
        "extra_storage_floats\n";
    for (const FlopsRow& row : rows) {
        for (const FlopsScenario* s :
             {&row.closed_book, &row.full_prompting, &row.adapted}) {
            out += std::to_string(row.context_length) + "," + s->name + "," +
                   std::to_string(s->contextualization_flops) + "," +
                   std::to_string(s->per_query_flops) + "," +
                   std::to_string(s->extra_storage_floats) + "\n";
        }
    }
    return out;
}

}  // namespace genadapt
