#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "genadapt/hash.hpp"
#include "genadapt/io.hpp"
#include "genadapt/tape.hpp"

namespace genadapt {

// Byte-level vocabulary: 256 raw bytes plus three reserved ids. kTokenBos
// starts continuation scoring and generation, kTokenRecon starts
// reconstruction scoring (the third reserved slot doubles as padding, which
// the pipeline never emits).
inline constexpr int kTokenBos = 256;
inline constexpr int kTokenEos = 257;
inline constexpr int kTokenRecon = 258;
inline constexpr int kVocabSize = 259;

struct ModelConfig {
    int vocab_size = kVocabSize;
    int num_layers = 4;
    int hidden_dim = 64;
    int num_heads = 4;
    int ffn_dim = 256;
    int max_seq_len = 512;

    int head_dim() const { return hidden_dim / num_heads; }

    void validate() const {
        if (vocab_size <= 0 || num_layers <= 0 || hidden_dim <= 0 ||
            num_heads <= 0 || ffn_dim <= 0 || max_seq_len <= 0)
            throw ConfigError("model dims must be positive");
        if (hidden_dim % num_heads != 0)
            throw ConfigError("hidden_dim " + std::to_string(hidden_dim) +
                              " not divisible by num_heads " +
                              std::to_string(num_heads));
        if (head_dim() % 2 != 0)
            throw ConfigError("head_dim must be even for rotary positions");
    }

    bool operator==(const ModelConfig&) const = default;
};

enum class InjectionTarget {
    AttnQuery,
    AttnKey,
    AttnValue,
    AttnOutput,
    FfnUp,
    FfnDown,
};

inline const char* to_string(InjectionTarget t) {
    switch (t) {
        case InjectionTarget::AttnQuery: return "attention-query";
        case InjectionTarget::AttnKey: return "attention-key";
        case InjectionTarget::AttnValue: return "attention-value";
        case InjectionTarget::AttnOutput: return "attention-output";
        case InjectionTarget::FfnUp: return "ffn-up";
        case InjectionTarget::FfnDown: return "ffn-down";
    }
    return "?";
}

inline InjectionTarget parse_injection_target(const std::string& s) {
    for (InjectionTarget t :
         {InjectionTarget::AttnQuery, InjectionTarget::AttnKey,
          InjectionTarget::AttnValue, InjectionTarget::AttnOutput,
          InjectionTarget::FfnUp, InjectionTarget::FfnDown})
        if (s == to_string(t)) return t;
    throw ConfigError("unknown injection target '" + s + "'");
}

// Which linear projections receive generated adapters. Slot order is
// layer-major: all targets of block 0, then block 1, and so on.
struct InjectionConfig {
    std::vector<InjectionTarget> targets = {InjectionTarget::AttnOutput};

    void validate() const {
        if (targets.empty())
            throw ConfigError("injection config must name at least one target");
        for (std::size_t i = 0; i < targets.size(); ++i)
            for (std::size_t j = i + 1; j < targets.size(); ++j)
                if (targets[i] == targets[j])
                    throw ConfigError("duplicate injection target");
    }

    std::size_t slots_per_layer() const { return targets.size(); }

    bool operator==(const InjectionConfig&) const = default;
};

// d_in of the projection the target names.
inline int target_in_dim(InjectionTarget t, const ModelConfig& c) {
    return t == InjectionTarget::FfnDown ? c.ffn_dim : c.hidden_dim;
}

// d_out of the projection the target names.
inline int target_out_dim(InjectionTarget t, const ModelConfig& c) {
    return t == InjectionTarget::FfnUp ? c.ffn_dim : c.hidden_dim;
}

struct BlockParams {
    Matrix wq, wk, wv, wo;        // hidden x hidden
    Matrix w_up;                  // ffn x hidden
    Matrix w_down;                // hidden x ffn
    Matrix norm_attn, norm_ffn;   // 1 x hidden
};

// Frozen decoder-only transformer with pre-norm blocks and rotary
// positions. Parameters are canonically f32-representable so that the
// on-disk format (f32 tensors) round-trips bit-exactly.
struct BaseModel {
    ModelConfig config;
    Precision precision = Precision::f64;
    Matrix embedding;   // vocab x hidden
    std::vector<BlockParams> blocks;
    Matrix final_norm;  // 1 x hidden
    Matrix head;        // vocab x hidden
    bool frozen = false;

    static BaseModel init(const ModelConfig& cfg, std::uint64_t seed,
                          Precision prec = Precision::f64) {
        cfg.validate();
        Rng rng(split_seed(seed, 0xba5e));
        const double proj_std = 1.0 / std::sqrt(cfg.hidden_dim);
        const double ffn_std = 1.0 / std::sqrt(cfg.ffn_dim);
        BaseModel m;
        m.config = cfg;
        m.precision = prec;
        auto f32 = [&](Matrix x) { return x.to(Precision::f32).to(prec); };
        m.embedding =
            f32(Matrix::gaussian(cfg.vocab_size, cfg.hidden_dim, rng, 0.5));
        for (int l = 0; l < cfg.num_layers; ++l) {
            BlockParams b;
            b.wq = f32(Matrix::gaussian(cfg.hidden_dim, cfg.hidden_dim, rng,
                                        proj_std));
            b.wk = f32(Matrix::gaussian(cfg.hidden_dim, cfg.hidden_dim, rng,
                                        proj_std));
            b.wv = f32(Matrix::gaussian(cfg.hidden_dim, cfg.hidden_dim, rng,
                                        proj_std));
            b.wo = f32(Matrix::gaussian(cfg.hidden_dim, cfg.hidden_dim, rng,
                                        proj_std));
            b.w_up = f32(Matrix::gaussian(cfg.ffn_dim, cfg.hidden_dim, rng,
                                          proj_std));
            b.w_down = f32(Matrix::gaussian(cfg.hidden_dim, cfg.ffn_dim, rng,
                                            ffn_std));
            Matrix ones(1, cfg.hidden_dim, prec);
            ones.em().setOnes();
            b.norm_attn = ones;
            b.norm_ffn = ones;
            m.blocks.push_back(std::move(b));
        }
        Matrix ones(1, cfg.hidden_dim, prec);
        ones.em().setOnes();
        m.final_norm = ones;
        m.head =
            f32(Matrix::gaussian(cfg.vocab_size, cfg.hidden_dim, rng, proj_std));
        return m;
    }

    // Visits every parameter tensor in the declared serialization order.
    template <class Fn>
    void for_each_param(Fn&& fn) const {
        fn(embedding);
        for (const BlockParams& b : blocks) {
            fn(b.wq);
            fn(b.wk);
            fn(b.wv);
            fn(b.wo);
            fn(b.w_up);
            fn(b.w_down);
            fn(b.norm_attn);
            fn(b.norm_ffn);
        }
        fn(final_norm);
        fn(head);
    }

    template <class Fn>
    void for_each_param_mut(Fn&& fn) {
        fn(embedding);
        for (BlockParams& b : blocks) {
            fn(b.wq);
            fn(b.wk);
            fn(b.wv);
            fn(b.wo);
            fn(b.w_up);
            fn(b.w_down);
            fn(b.norm_attn);
            fn(b.norm_ffn);
        }
        fn(final_norm);
        fn(head);
    }

    // Digest over the raw double bytes of every parameter; any training
    // step that touched a frozen base changes it.
    Digest checksum() const {
        Sha256 h;
        for_each_param([&](const Matrix& m) {
            for (Eigen::Index i = 0; i < m.rows(); ++i)
                for (Eigen::Index j = 0; j < m.cols(); ++j) {
                    const double v = m(i, j);
                    h.update(&v, sizeof(v));
                }
        });
        return h.finish();
    }
};

// Per-slot adapter factors lifted onto a tape (slot order: layer-major over
// the injection targets). `alpha` scales the low-rank update at the
// injection site.
struct AdapterNodes {
    double alpha = 0.0;
    std::vector<NodeRef> p;  // d_out x r per slot
    std::vector<NodeRef> q;  // r x d_in per slot
};

struct BlockNodes {
    NodeRef wq, wk, wv, wo, w_up, w_down, norm_attn, norm_ffn;
};

// The model's parameters as tape nodes; trainable controls whether the
// leaves require gradients (base pretraining) or stay frozen (everything
// else).
struct ModelNodes {
    const ModelConfig* config = nullptr;
    NodeRef embedding = nullptr;
    std::vector<BlockNodes> blocks;
    NodeRef final_norm = nullptr;
    NodeRef head = nullptr;

    static ModelNodes lift(Tape& tape, const BaseModel& m, bool trainable) {
        ModelNodes out;
        out.config = &m.config;
        out.embedding = tape.leaf(m.embedding, trainable);
        for (const BlockParams& b : m.blocks) {
            BlockNodes bn;
            bn.wq = tape.leaf(b.wq, trainable);
            bn.wk = tape.leaf(b.wk, trainable);
            bn.wv = tape.leaf(b.wv, trainable);
            bn.wo = tape.leaf(b.wo, trainable);
            bn.w_up = tape.leaf(b.w_up, trainable);
            bn.w_down = tape.leaf(b.w_down, trainable);
            bn.norm_attn = tape.leaf(b.norm_attn, trainable);
            bn.norm_ffn = tape.leaf(b.norm_ffn, trainable);
            out.blocks.push_back(bn);
        }
        out.final_norm = tape.leaf(m.final_norm, trainable);
        out.head = tape.leaf(m.head, trainable);
        return out;
    }

    std::vector<NodeRef> leaves() const {
        std::vector<NodeRef> out;
        out.push_back(embedding);
        for (const BlockNodes& b : blocks) {
            out.push_back(b.wq);
            out.push_back(b.wk);
            out.push_back(b.wv);
            out.push_back(b.wo);
            out.push_back(b.w_up);
            out.push_back(b.w_down);
            out.push_back(b.norm_attn);
            out.push_back(b.norm_ffn);
        }
        out.push_back(final_norm);
        out.push_back(head);
        return out;
    }
};

struct ForwardNodes {
    std::vector<NodeRef> hidden;  // H^(0) .. H^(L) when requested
    NodeRef logits = nullptr;     // when requested
};

namespace detail {

// y = x W^T (+ alpha (x Q^T) P^T when this projection has an adapter slot).
inline NodeRef linear(Tape& tape, NodeRef x, NodeRef w,
                      const AdapterNodes* adapters, int slot) {
    NodeRef y = tape.matmul(x, tape.transpose(w));
    if (adapters != nullptr && slot >= 0) {
        if (x->value.cols() !=
            adapters->q[static_cast<std::size_t>(slot)]->value.cols())
            throw DimensionError(
                "adapter slot " + std::to_string(slot) + ": input dim " +
                std::to_string(x->value.cols()) + " vs Q cols " +
                std::to_string(adapters->q[static_cast<std::size_t>(slot)]
                                   ->value.cols()));
        NodeRef low = tape.matmul(
            x, tape.transpose(adapters->q[static_cast<std::size_t>(slot)]));
        NodeRef up = tape.matmul(
            low, tape.transpose(adapters->p[static_cast<std::size_t>(slot)]));
        y = tape.add(y, tape.scale(up, adapters->alpha));
    }
    return y;
}

}  // namespace detail

// One pre-norm block: attention with rotary positions, then the
// feed-forward, with adapters applied at whatever projections the layer's
// slots name. `layer` selects the slot offset inside `adapters` (pass 0
// when `adapters` holds just this layer's slots).
inline NodeRef apply_block(Tape& tape, const ModelConfig& cfg,
                           const BlockNodes& b, NodeRef h,
                           const InjectionConfig* inj,
                           const AdapterNodes* adapters, int layer) {
    auto slot_of = [&](InjectionTarget t) -> int {
        if (inj == nullptr || adapters == nullptr) return -1;
        for (std::size_t i = 0; i < inj->targets.size(); ++i)
            if (inj->targets[i] == t)
                return layer * static_cast<int>(inj->targets.size()) +
                       static_cast<int>(i);
        return -1;
    };
    const int hd = cfg.head_dim();
    const double attn_scale = 1.0 / std::sqrt(static_cast<double>(hd));

    NodeRef an = tape.rmsnorm(h, b.norm_attn);
    NodeRef q = detail::linear(tape, an, b.wq, adapters,
                               slot_of(InjectionTarget::AttnQuery));
    NodeRef k = detail::linear(tape, an, b.wk, adapters,
                               slot_of(InjectionTarget::AttnKey));
    NodeRef v = detail::linear(tape, an, b.wv, adapters,
                               slot_of(InjectionTarget::AttnValue));

    std::vector<NodeRef> ctx_heads;
    for (int head = 0; head < cfg.num_heads; ++head) {
        NodeRef qh = tape.rotary(tape.col_slice(q, head * hd, hd));
        NodeRef kh = tape.rotary(tape.col_slice(k, head * hd, hd));
        NodeRef vh = tape.col_slice(v, head * hd, hd);
        NodeRef scores =
            tape.scale(tape.matmul(qh, tape.transpose(kh)), attn_scale);
        NodeRef probs = tape.causal_softmax(scores);
        ctx_heads.push_back(tape.matmul(probs, vh));
    }
    NodeRef ctx = tape.col_concat(ctx_heads);
    NodeRef attn_out = detail::linear(tape, ctx, b.wo, adapters,
                                      slot_of(InjectionTarget::AttnOutput));
    h = tape.add(h, attn_out);

    NodeRef fn = tape.rmsnorm(h, b.norm_ffn);
    NodeRef up = detail::linear(tape, fn, b.w_up, adapters,
                                slot_of(InjectionTarget::FfnUp));
    NodeRef down = detail::linear(tape, tape.silu(up), b.w_down, adapters,
                                  slot_of(InjectionTarget::FfnDown));
    return tape.add(h, down);
}

// Causal decoder forward over one attention window. Positions restart at
// zero: a context chunk is its own window and cross-chunk information flows
// only through the adapters.
inline ForwardNodes build_forward(Tape& tape, const ModelNodes& m,
                                  const std::vector<int>& tokens,
                                  const InjectionConfig* inj = nullptr,
                                  const AdapterNodes* adapters = nullptr,
                                  bool want_hidden = false,
                                  bool want_logits = true) {
    const ModelConfig& cfg = *m.config;
    if (tokens.empty()) throw LengthError("forward: empty token sequence");
    if (static_cast<int>(tokens.size()) > cfg.max_seq_len)
        throw LengthError("forward: " + std::to_string(tokens.size()) +
                          " tokens exceed max sequence length " +
                          std::to_string(cfg.max_seq_len));
    if (adapters != nullptr && inj == nullptr)
        throw DimensionError("forward: adapters given without injection config");

    ForwardNodes out;
    NodeRef h = tape.embedding(m.embedding, tokens);
    if (want_hidden) out.hidden.push_back(h);

    for (int l = 0; l < cfg.num_layers; ++l) {
        h = apply_block(tape, cfg, m.blocks[static_cast<std::size_t>(l)], h,
                        inj, adapters, l);
        if (want_hidden) out.hidden.push_back(h);
    }

    if (want_logits) {
        NodeRef fin = tape.rmsnorm(h, m.final_norm);
        out.logits = tape.matmul(fin, tape.transpose(m.head));
    }
    return out;
}

struct ForwardTrace {
    std::vector<Matrix> hidden;  // H^(0) .. H^(L)
    Matrix logits;
};

// Plain (unadapted) forward; adapted variants live with the generator.
inline ForwardTrace forward(const BaseModel& model,
                            const std::vector<int>& tokens,
                            bool want_trace = false) {
    Tape tape(false);
    ModelNodes nodes = ModelNodes::lift(tape, model, false);
    ForwardNodes f =
        build_forward(tape, nodes, tokens, nullptr, nullptr, want_trace, true);
    ForwardTrace trace;
    for (NodeRef n : f.hidden) trace.hidden.push_back(n->value);
    trace.logits = f.logits->value;
    return trace;
}

// Mean negative log-likelihood over the masked positions.
inline double lm_loss(const Matrix& logits, const std::vector<int>& targets,
                      const std::vector<bool>& mask) {
    Tape tape(false);
    return tape.cross_entropy_mean(tape.constant(logits), targets, mask)
        ->value(0, 0);
}

struct ParamCounts {
    std::uint64_t generator_params = 0;
    std::uint64_t adapter_params = 0;
};

// Learnable generator size and emitted adapter size, summed over every
// (layer, target) slot: per slot the generator holds A1 (d_out x d_r),
// A2 (d_r x d_h), B1 (d_h x d_r), B2 (d_r x d_in) and emits P (d_out x r),
// Q (r x d_in).
inline ParamCounts count_parameters(const ModelConfig& cfg,
                                    const InjectionConfig& inj,
                                    std::uint64_t d_r, std::uint64_t rank) {
    if (d_r == 0 || rank == 0)
        throw ConfigError("count_parameters: dims must be positive");
    inj.validate();
    ParamCounts out;
    const std::uint64_t dh = static_cast<std::uint64_t>(cfg.hidden_dim);
    for (int l = 0; l < cfg.num_layers; ++l) {
        for (InjectionTarget t : inj.targets) {
            const std::uint64_t din =
                static_cast<std::uint64_t>(target_in_dim(t, cfg));
            const std::uint64_t dout =
                static_cast<std::uint64_t>(target_out_dim(t, cfg));
            out.generator_params +=
                dout * d_r + d_r * dh + dh * d_r + d_r * din;
            out.adapter_params += rank * (dout + din);
        }
    }
    return out;
}

inline constexpr char kModelMagic[4] = {'G', 'A', 'L', 'M'};
inline constexpr std::uint32_t kModelVersion = 1;

inline void save_model(const BaseModel& m, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open '" + path + "' for writing");
    io::write_bytes(os, kModelMagic, 4);
    io::write_u32(os, kModelVersion);
    io::write_u32(os, static_cast<std::uint32_t>(m.config.vocab_size));
    io::write_u32(os, static_cast<std::uint32_t>(m.config.num_layers));
    io::write_u32(os, static_cast<std::uint32_t>(m.config.hidden_dim));
    io::write_u32(os, static_cast<std::uint32_t>(m.config.num_heads));
    io::write_u32(os, static_cast<std::uint32_t>(m.config.ffn_dim));
    io::write_u32(os, static_cast<std::uint32_t>(m.config.max_seq_len));
    m.for_each_param([&](const Matrix& p) { io::write_tensor_f32(os, p); });
    if (!os) throw FormatError("write failed for '" + path + "'");
}

inline BaseModel load_model(const std::string& path,
                            Precision prec = Precision::f64) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open model file '" + path + "'");
    io::expect_magic(is, kModelMagic, "model file");
    const std::uint32_t version = io::read_u32(is, "model version");
    if (version != kModelVersion)
        throw FormatError("unsupported model format version " +
                          std::to_string(version) + " (expected " +
                          std::to_string(kModelVersion) + ")");
    ModelConfig cfg;
    cfg.vocab_size = static_cast<int>(io::read_u32(is, "vocab_size"));
    cfg.num_layers = static_cast<int>(io::read_u32(is, "num_layers"));
    cfg.hidden_dim = static_cast<int>(io::read_u32(is, "hidden_dim"));
    cfg.num_heads = static_cast<int>(io::read_u32(is, "num_heads"));
    cfg.ffn_dim = static_cast<int>(io::read_u32(is, "ffn_dim"));
    cfg.max_seq_len = static_cast<int>(io::read_u32(is, "max_seq_len"));
    cfg.validate();
    BaseModel m;
    m.config = cfg;
    m.precision = prec;
    m.embedding = io::read_tensor_f32(is, cfg.vocab_size, cfg.hidden_dim,
                                      prec, "embedding");
    for (int l = 0; l < cfg.num_layers; ++l) {
        BlockParams b;
        b.wq = io::read_tensor_f32(is, cfg.hidden_dim, cfg.hidden_dim, prec,
                                   "wq");
        b.wk = io::read_tensor_f32(is, cfg.hidden_dim, cfg.hidden_dim, prec,
                                   "wk");
        b.wv = io::read_tensor_f32(is, cfg.hidden_dim, cfg.hidden_dim, prec,
                                   "wv");
        b.wo = io::read_tensor_f32(is, cfg.hidden_dim, cfg.hidden_dim, prec,
                                   "wo");
        b.w_up = io::read_tensor_f32(is, cfg.ffn_dim, cfg.hidden_dim, prec,
                                     "w_up");
        b.w_down = io::read_tensor_f32(is, cfg.hidden_dim, cfg.ffn_dim, prec,
                                       "w_down");
        b.norm_attn =
            io::read_tensor_f32(is, 1, cfg.hidden_dim, prec, "norm_attn");
        b.norm_ffn =
            io::read_tensor_f32(is, 1, cfg.hidden_dim, prec, "norm_ffn");
        m.blocks.push_back(std::move(b));
    }
    m.final_norm =
        io::read_tensor_f32(is, 1, cfg.hidden_dim, prec, "final_norm");
    m.head =
        io::read_tensor_f32(is, cfg.vocab_size, cfg.hidden_dim, prec, "head");
    return m;
}

}  // namespace genadapt
