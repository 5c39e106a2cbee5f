#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "genadapt/generator.hpp"

namespace genadapt {

// Partition of a token stream into chunks. Every chunk is `chunk_size`
// tokens except possibly the last, which is processed as-is (padding would
// pollute the Gram sums).
struct ChunkPlan {
    int chunk_size = 64;
    std::vector<std::pair<int, int>> boundaries;  // [start, end)

    static ChunkPlan build(int num_tokens, int chunk_size) {
        if (chunk_size <= 0) throw PlanError("chunk_size must be positive");
        ChunkPlan plan;
        plan.chunk_size = chunk_size;
        for (int start = 0; start < num_tokens; start += chunk_size)
            plan.boundaries.emplace_back(start,
                                         std::min(start + chunk_size,
                                                  num_tokens));
        return plan;
    }

    void validate(int num_tokens) const {
        int expected = 0;
        for (std::size_t i = 0; i < boundaries.size(); ++i) {
            const auto [s, e] = boundaries[i];
            if (s != expected || e <= s)
                throw PlanError("chunk plan does not partition the context");
            if (e - s > chunk_size)
                throw PlanError("chunk " + std::to_string(i) + " exceeds " +
                                std::to_string(chunk_size) + " tokens");
            if (e - s < chunk_size && i + 1 != boundaries.size())
                throw PlanError("only the final chunk may be short");
            expected = e;
        }
        if (expected != num_tokens)
            throw PlanError("chunk plan covers " + std::to_string(expected) +
                            " of " + std::to_string(num_tokens) + " tokens");
    }
};

// Architecture fingerprint: digest over the model dims, injection targets
// and generator dims. Archives refuse to load into a different shape.
inline Digest fingerprint(const ModelConfig& model, const InjectionConfig& inj,
                          int d_r, int rank) {
    std::string s = "vocab=" + std::to_string(model.vocab_size) +
                    ";layers=" + std::to_string(model.num_layers) +
                    ";hidden=" + std::to_string(model.hidden_dim) +
                    ";heads=" + std::to_string(model.num_heads) +
                    ";ffn=" + std::to_string(model.ffn_dim) +
                    ";maxseq=" + std::to_string(model.max_seq_len) +
                    ";targets=";
    for (InjectionTarget t : inj.targets) {
        s += to_string(t);
        s += ',';
    }
    s += ";d_r=" + std::to_string(d_r) + ";rank=" + std::to_string(rank);
    return sha256(s.data(), s.size());
}

struct ContextualizeOptions {
    // When set, chunk t attends to the raw tokens of earlier chunks as well
    // (one growing attention window) instead of being encoded in isolation.
    bool cross_chunk_attention = false;
};

// Sequential streaming pipeline: encode chunk t under the adapter emitted
// from chunks 1..t-1, tap its hidden states, fold them into the state, and
// emit the next adapter. `contextualize_from` resumes from a saved state.
inline std::pair<StreamState, AdapterFactors> contextualize_from(
    const BaseModel& model, const GeneratorParams& params, StreamState state,
    const std::vector<int>& tokens, const ChunkPlan& plan,
    const ContextualizeOptions& opts = {}) {
    plan.validate(static_cast<int>(tokens.size()));
    AdapterFactors delta = emit_adapter(state, params);
    const int layers = model.config.num_layers;
    for (const auto& [start, end] : plan.boundaries) {
        std::vector<int> window;
        if (opts.cross_chunk_attention)
            window.assign(tokens.begin(), tokens.begin() + end);
        else
            window.assign(tokens.begin() + start, tokens.begin() + end);
        ForwardTrace trace = forward_adapted(model, params.config.injection,
                                             delta, window, true, false);
        std::vector<Matrix> layer_hidden;
        for (int l = 0; l < layers; ++l) {
            const Matrix& h = trace.hidden[static_cast<std::size_t>(l)];
            if (opts.cross_chunk_attention) {
                // Only the new rows belong to this chunk.
                layer_hidden.push_back(Matrix(
                    EMat(h.em().bottomRows(end - start)), h.precision()));
            } else {
                layer_hidden.push_back(h);
            }
        }
        state = update_state(state, params, layer_hidden);
        delta = emit_adapter(state, params);
    }
    return {state, delta};
}

inline std::pair<StreamState, AdapterFactors> contextualize(
    const BaseModel& model, const GeneratorParams& params,
    const std::vector<int>& tokens, const ChunkPlan& plan,
    const ContextualizeOptions& opts = {}) {
    return contextualize_from(model, params, init_state(params), tokens, plan,
                              opts);
}

// Layer-by-layer pipeline that yields the adapter of every prefix in one
// pass: for each block, accumulate the per-chunk Grams into prefix states,
// emit that layer's factors for all prefixes, then push every chunk through
// the block under its own prefix adapter.
inline std::vector<AdapterFactors> parallel_prefix_contextualize(
    const BaseModel& model, const GeneratorParams& params,
    const std::vector<int>& tokens, const ChunkPlan& plan) {
    plan.validate(static_cast<int>(tokens.size()));
    const std::size_t chunks = plan.boundaries.size();
    const std::size_t spl = params.config.injection.slots_per_layer();
    std::vector<AdapterFactors> result(chunks);
    for (AdapterFactors& a : result) {
        a.alpha = params.config.alpha;
        a.p.resize(params.num_slots());
        a.q.resize(params.num_slots());
    }
    if (chunks == 0) return result;

    Tape tape(false);
    ModelNodes mn = ModelNodes::lift(tape, model, false);
    std::vector<NodeRef> cur;
    for (const auto& [start, end] : plan.boundaries) {
        std::vector<int> chunk(tokens.begin() + start, tokens.begin() + end);
        cur.push_back(tape.embedding(mn.embedding, chunk));
    }

    for (int layer = 0; layer < model.config.num_layers; ++layer) {
        // Prefix states and emissions for this layer's slots.
        for (std::size_t j = 0; j < spl; ++j) {
            const std::size_t slot = static_cast<std::size_t>(layer) * spl + j;
            Matrix s = Matrix::zeros(params.config.d_r, params.config.d_r,
                                     Precision::f64);
            for (std::size_t t = 0; t < chunks; ++t) {
                s = update_slot(s, params.slots[slot], cur[t]->value);
                auto [p, q] =
                    emit_slot(s, params.slots[slot], params.config);
                result[t].p[slot] = std::move(p);
                result[t].q[slot] = std::move(q);
            }
        }
        // Advance every chunk through the block under its prefix adapter.
        for (std::size_t t = chunks; t-- > 0;) {
            AdapterNodes an;
            an.alpha = params.config.alpha;
            for (std::size_t j = 0; j < spl; ++j) {
                const std::size_t slot =
                    static_cast<std::size_t>(layer) * spl + j;
                if (t == 0) {
                    an.p.push_back(tape.constant(Matrix::zeros(
                        result[0].p[slot].rows(), result[0].p[slot].cols(),
                        result[0].p[slot].precision())));
                    an.q.push_back(tape.constant(Matrix::zeros(
                        result[0].q[slot].rows(), result[0].q[slot].cols(),
                        result[0].q[slot].precision())));
                } else {
                    an.p.push_back(tape.constant(result[t - 1].p[slot]));
                    an.q.push_back(tape.constant(result[t - 1].q[slot]));
                }
            }
            cur[t] = apply_block(tape, model.config,
                                 mn.blocks[static_cast<std::size_t>(layer)],
                                 cur[t], &params.config.injection, &an, 0);
        }
    }
    return result;
}

// Training-time contextualization on a live tape; gradients flow through
// every chunk's hidden states and (unless truncated) through the adapters
// used to encode later chunks.
struct TapeContext {
    StateNodes state;
    AdapterNodes adapter;
    std::uint64_t tokens_consumed = 0;
};

inline TapeContext contextualize_nodes(Tape& tape, const ModelNodes& model,
                                       const GeneratorNodes& gen,
                                       const InjectionConfig& inj,
                                       const std::vector<int>& tokens,
                                       const ChunkPlan& plan,
                                       bool truncate_unroll = false) {
    plan.validate(static_cast<int>(tokens.size()));
    TapeContext ctx;
    ctx.state = init_state_nodes(tape, gen);
    ctx.adapter = emit_adapter_nodes(tape, ctx.state, gen);
    const std::size_t spl = inj.slots_per_layer();
    for (const auto& [start, end] : plan.boundaries) {
        std::vector<int> chunk(tokens.begin() + start, tokens.begin() + end);
        AdapterNodes encoding = ctx.adapter;
        if (truncate_unroll) {
            for (std::size_t i = 0; i < encoding.p.size(); ++i) {
                encoding.p[i] = tape.detach(encoding.p[i]);
                encoding.q[i] = tape.detach(encoding.q[i]);
            }
        }
        ForwardNodes f = build_forward(tape, model, chunk, &inj, &encoding,
                                       true, false);
        std::vector<NodeRef> layer_hidden(
            f.hidden.begin(),
            f.hidden.begin() + static_cast<std::ptrdiff_t>(model.blocks.size()));
        ctx.state = update_state_nodes(tape, ctx.state, gen, layer_hidden, spl);
        ctx.adapter = emit_adapter_nodes(tape, ctx.state, gen);
        ctx.tokens_consumed += static_cast<std::uint64_t>(end - start);
    }
    return ctx;
}

// --- archives -------------------------------------------------------------

inline constexpr char kAdapterMagic[4] = {'G', 'A', 'D', 'P'};
inline constexpr char kStateMagic[4] = {'G', 'A', 'S', 'T'};
inline constexpr char kGeneratorMagic[4] = {'G', 'G', 'E', 'N'};
inline constexpr std::uint32_t kArchiveVersion = 1;

// Self-describing: carries the injection targets and generator dims so a
// consumer can verify compatibility against its model and apply the
// factors without the generator archive.
struct AdapterArchive {
    Digest fingerprint{};
    InjectionConfig injection;
    int d_r = 0;
    int rank = 0;
    std::uint64_t tokens_consumed = 0;
    std::uint64_t chunks_consumed = 0;
    AdapterFactors factors;
};

inline AdapterArchive make_adapter_archive(const ModelConfig& model,
                                           const GeneratorParams& params,
                                           const StreamState& state,
                                           const AdapterFactors& factors) {
    AdapterArchive a;
    a.fingerprint = fingerprint(model, params.config.injection,
                                params.config.d_r, params.config.rank);
    a.injection = params.config.injection;
    a.d_r = params.config.d_r;
    a.rank = params.config.rank;
    a.tokens_consumed = state.tokens_consumed;
    a.chunks_consumed = state.chunks_consumed;
    a.factors = factors;
    return a;
}

// Throws unless the archive was produced for this model architecture.
inline void verify_adapter(const AdapterArchive& a, const ModelConfig& model) {
    const Digest expected =
        fingerprint(model, a.injection, a.d_r, a.rank);
    if (a.fingerprint != expected)
        throw CompatibilityError(
            "adapter fingerprint " + hex(a.fingerprint) +
            " does not match architecture fingerprint " + hex(expected));
}

inline void save_adapter(const AdapterArchive& a, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open '" + path + "' for writing");
    io::write_bytes(os, kAdapterMagic, 4);
    io::write_u32(os, kArchiveVersion);
    io::write_bytes(os, a.fingerprint.data(), a.fingerprint.size());
    io::write_u32(os, static_cast<std::uint32_t>(a.d_r));
    io::write_u32(os, static_cast<std::uint32_t>(a.rank));
    io::write_u32(os, static_cast<std::uint32_t>(a.injection.targets.size()));
    for (InjectionTarget t : a.injection.targets)
        io::write_u32(os, static_cast<std::uint32_t>(t));
    io::write_u64(os, a.tokens_consumed);
    io::write_u64(os, a.chunks_consumed);
    io::write_f64(os, a.factors.alpha);
    io::write_u32(os, static_cast<std::uint32_t>(a.factors.p.size()));
    for (std::size_t i = 0; i < a.factors.p.size(); ++i) {
        io::write_u32(os, static_cast<std::uint32_t>(a.factors.p[i].rows()));
        io::write_u32(os, static_cast<std::uint32_t>(a.factors.p[i].cols()));
        io::write_u32(os, static_cast<std::uint32_t>(a.factors.q[i].rows()));
        io::write_u32(os, static_cast<std::uint32_t>(a.factors.q[i].cols()));
        io::write_tensor_f32(os, a.factors.p[i]);
        io::write_tensor_f32(os, a.factors.q[i]);
    }
    if (!os) throw FormatError("write failed for '" + path + "'");
}

inline AdapterArchive load_adapter(const std::string& path,
                                   Precision prec = Precision::f64) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open adapter archive '" + path + "'");
    io::expect_magic(is, kAdapterMagic, "adapter archive");
    const std::uint32_t version = io::read_u32(is, "adapter version");
    if (version != kArchiveVersion)
        throw FormatError("unsupported adapter archive version " +
                          std::to_string(version));
    AdapterArchive a;
    io::read_bytes(is, a.fingerprint.data(), a.fingerprint.size(),
                   "fingerprint");
    a.d_r = static_cast<int>(io::read_u32(is, "d_r"));
    a.rank = static_cast<int>(io::read_u32(is, "rank"));
    const std::uint32_t ntargets = io::read_u32(is, "target count");
    a.injection.targets.clear();
    for (std::uint32_t i = 0; i < ntargets; ++i)
        a.injection.targets.push_back(
            static_cast<InjectionTarget>(io::read_u32(is, "target")));
    a.tokens_consumed = io::read_u64(is, "tokens_consumed");
    a.chunks_consumed = io::read_u64(is, "chunks_consumed");
    a.factors.alpha = io::read_f64(is, "alpha");
    const std::uint32_t slots = io::read_u32(is, "slot count");
    for (std::uint32_t i = 0; i < slots; ++i) {
        const auto pr = static_cast<Eigen::Index>(io::read_u32(is, "p rows"));
        const auto pc = static_cast<Eigen::Index>(io::read_u32(is, "p cols"));
        const auto qr = static_cast<Eigen::Index>(io::read_u32(is, "q rows"));
        const auto qc = static_cast<Eigen::Index>(io::read_u32(is, "q cols"));
        a.factors.p.push_back(io::read_tensor_f32(is, pr, pc, prec, "P"));
        a.factors.q.push_back(io::read_tensor_f32(is, qr, qc, prec, "Q"));
    }
    return a;
}

struct StateArchive {
    Digest fingerprint{};
    StreamState state;
};

inline void save_state(const StateArchive& a, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open '" + path + "' for writing");
    io::write_bytes(os, kStateMagic, 4);
    io::write_u32(os, kArchiveVersion);
    io::write_bytes(os, a.fingerprint.data(), a.fingerprint.size());
    io::write_u64(os, a.state.tokens_consumed);
    io::write_u64(os, a.state.chunks_consumed);
    io::write_u32(os, static_cast<std::uint32_t>(a.state.s.size()));
    io::write_u32(os, a.state.s.empty()
                          ? 0u
                          : static_cast<std::uint32_t>(a.state.s[0].rows()));
    // Accumulators keep their full double width on disk.
    for (const Matrix& s : a.state.s) io::write_tensor_f64(os, s);
    if (!os) throw FormatError("write failed for '" + path + "'");
}

inline StateArchive load_state(const std::string& path,
                               const Digest& expected) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open state archive '" + path + "'");
    io::expect_magic(is, kStateMagic, "state archive");
    const std::uint32_t version = io::read_u32(is, "state version");
    if (version != kArchiveVersion)
        throw FormatError("unsupported state archive version " +
                          std::to_string(version));
    StateArchive a;
    io::read_bytes(is, a.fingerprint.data(), a.fingerprint.size(),
                   "fingerprint");
    if (a.fingerprint != expected)
        throw CompatibilityError(
            "state fingerprint " + hex(a.fingerprint) +
            " does not match architecture fingerprint " + hex(expected));
    a.state.tokens_consumed = io::read_u64(is, "tokens_consumed");
    a.state.chunks_consumed = io::read_u64(is, "chunks_consumed");
    const std::uint32_t slots = io::read_u32(is, "slot count");
    const auto dr = static_cast<Eigen::Index>(io::read_u32(is, "d_r"));
    for (std::uint32_t i = 0; i < slots; ++i)
        a.state.s.push_back(io::read_tensor_f64(is, dr, dr, "S"));
    return a;
}

inline void save_generator(const GeneratorParams& params,
                           const Digest& fp, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open '" + path + "' for writing");
    io::write_bytes(os, kGeneratorMagic, 4);
    io::write_u32(os, kArchiveVersion);
    io::write_bytes(os, fp.data(), fp.size());
    io::write_u32(os, static_cast<std::uint32_t>(params.config.d_r));
    io::write_u32(os, static_cast<std::uint32_t>(params.config.rank));
    io::write_f64(os, params.config.alpha);
    io::write_u32(os, static_cast<std::uint32_t>(params.config.norm));
    io::write_u32(os,
                  static_cast<std::uint32_t>(params.config.injection.targets.size()));
    for (InjectionTarget t : params.config.injection.targets)
        io::write_u32(os, static_cast<std::uint32_t>(t));
    io::write_u32(os, static_cast<std::uint32_t>(params.num_slots()));
    for (const GeneratorSlot& s : params.slots) {
        io::write_u32(os, static_cast<std::uint32_t>(s.a1.rows()));
        io::write_u32(os, static_cast<std::uint32_t>(s.b2.cols()));
        io::write_tensor_f32(os, s.a1);
        io::write_tensor_f32(os, s.a2);
        io::write_tensor_f32(os, s.b1);
        io::write_tensor_f32(os, s.b2);
    }
    if (!os) throw FormatError("write failed for '" + path + "'");
}

inline GeneratorParams load_generator(const std::string& path,
                                      const ModelConfig& model,
                                      Precision prec = Precision::f64) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open generator archive '" + path + "'");
    io::expect_magic(is, kGeneratorMagic, "generator archive");
    const std::uint32_t version = io::read_u32(is, "generator version");
    if (version != kArchiveVersion)
        throw FormatError("unsupported generator archive version " +
                          std::to_string(version));
    Digest fp;
    io::read_bytes(is, fp.data(), fp.size(), "fingerprint");
    GeneratorParams params;
    params.config.d_r = static_cast<int>(io::read_u32(is, "d_r"));
    params.config.rank = static_cast<int>(io::read_u32(is, "rank"));
    params.config.alpha = io::read_f64(is, "alpha");
    params.config.norm =
        static_cast<NormKind>(io::read_u32(is, "norm kind"));
    const std::uint32_t ntargets = io::read_u32(is, "target count");
    params.config.injection.targets.clear();
    for (std::uint32_t i = 0; i < ntargets; ++i)
        params.config.injection.targets.push_back(
            static_cast<InjectionTarget>(io::read_u32(is, "target")));
    const Digest expected = fingerprint(model, params.config.injection,
                                        params.config.d_r, params.config.rank);
    if (fp != expected)
        throw CompatibilityError(
            "generator fingerprint " + hex(fp) +
            " does not match architecture fingerprint " + hex(expected));
    const std::uint32_t slots = io::read_u32(is, "slot count");
    const Eigen::Index dr = params.config.d_r;
    const Eigen::Index dh = model.hidden_dim;
    for (std::uint32_t i = 0; i < slots; ++i) {
        const auto dout = static_cast<Eigen::Index>(io::read_u32(is, "d_out"));
        const auto din = static_cast<Eigen::Index>(io::read_u32(is, "d_in"));
        GeneratorSlot s;
        s.a1 = io::read_tensor_f32(is, dout, dr, prec, "a1");
        s.a2 = io::read_tensor_f32(is, dr, dh, prec, "a2");
        s.b1 = io::read_tensor_f32(is, dh, dr, prec, "b1");
        s.b2 = io::read_tensor_f32(is, dr, din, prec, "b2");
        params.slots.push_back(std::move(s));
    }
    params.config.validate(model);
    if (params.num_slots() !=
        static_cast<std::size_t>(model.num_layers) *
            params.config.injection.slots_per_layer())
        throw CompatibilityError("generator archive slot count mismatch");
    return params;
}

}  // namespace genadapt
