#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "genadapt/model.hpp"

namespace genadapt {

enum class NormKind { Svd, Frobenius, None };

inline const char* to_string(NormKind k) {
    switch (k) {
        case NormKind::Svd: return "svd";
        case NormKind::Frobenius: return "frobenius";
        case NormKind::None: return "none";
    }
    return "?";
}

inline NormKind parse_norm_kind(const std::string& s) {
    if (s == "svd") return NormKind::Svd;
    if (s == "frobenius") return NormKind::Frobenius;
    if (s == "none") return NormKind::None;
    throw ConfigError("unknown normalization kind '" + s + "'");
}

struct GeneratorConfig {
    int d_r = 32;
    int rank = 8;
    double alpha = 1.0 / 16.0;
    NormKind norm = NormKind::Svd;
    InjectionConfig injection;

    void validate(const ModelConfig& model) const {
        injection.validate();
        if (d_r <= 0 || rank <= 0)
            throw ConfigError("generator dims must be positive");
        if (rank > d_r)
            throw ConfigError("rank " + std::to_string(rank) +
                              " exceeds intermediate dim " +
                              std::to_string(d_r));
        for (InjectionTarget t : injection.targets) {
            const int bound =
                std::min({target_in_dim(t, model), target_out_dim(t, model),
                          model.hidden_dim});
            if (d_r > bound)
                throw ConfigError("d_r " + std::to_string(d_r) +
                                  " exceeds min(d_in, d_out, d_h) = " +
                                  std::to_string(bound) + " for target " +
                                  to_string(t));
        }
    }

    bool operator==(const GeneratorConfig&) const = default;
};

// One bilinear generator: W_delta = A1 norm(A2 H^T H B1) B2.
struct GeneratorSlot {
    Matrix a1;  // d_out x d_r
    Matrix a2;  // d_r x d_h
    Matrix b1;  // d_h x d_r
    Matrix b2;  // d_r x d_in
};

// Per-(layer, target) bilinear generators, slot order layer-major.
struct GeneratorParams {
    GeneratorConfig config;
    std::vector<GeneratorSlot> slots;

    static GeneratorParams init(const ModelConfig& model,
                                const GeneratorConfig& cfg, std::uint64_t seed,
                                Precision prec = Precision::f64) {
        cfg.validate(model);
        GeneratorParams out;
        out.config = cfg;
        Rng rng(split_seed(seed, 0x6e67));
        const double std = 1.0 / std::sqrt(static_cast<double>(cfg.d_r));
        auto f32 = [&](Matrix m) { return m.to(Precision::f32).to(prec); };
        for (int l = 0; l < model.num_layers; ++l) {
            for (InjectionTarget t : cfg.injection.targets) {
                GeneratorSlot s;
                s.a1 = f32(Matrix::gaussian(target_out_dim(t, model), cfg.d_r,
                                            rng, std));
                s.a2 = f32(Matrix::gaussian(cfg.d_r, model.hidden_dim, rng,
                                            std));
                s.b1 = f32(Matrix::gaussian(model.hidden_dim, cfg.d_r, rng,
                                            std));
                s.b2 = f32(Matrix::gaussian(cfg.d_r, target_in_dim(t, model),
                                            rng, std));
                out.slots.push_back(std::move(s));
            }
        }
        return out;
    }

    std::size_t num_slots() const { return slots.size(); }

    // Layer index (0-based block) whose input hidden states feed a slot.
    int layer_of_slot(std::size_t slot) const {
        return static_cast<int>(slot / config.injection.slots_per_layer());
    }

    template <class Fn>
    void for_each_param(Fn&& fn) const {
        for (const GeneratorSlot& s : slots) {
            fn(s.a1);
            fn(s.a2);
            fn(s.b1);
            fn(s.b2);
        }
    }

    template <class Fn>
    void for_each_param_mut(Fn&& fn) {
        for (GeneratorSlot& s : slots) {
            fn(s.a1);
            fn(s.a2);
            fn(s.b1);
            fn(s.b2);
        }
    }
};

// The streaming memory: one d_r x d_r accumulator per slot plus counts.
// Size is independent of how many tokens have been consumed. Accumulation
// happens at full double width regardless of the model precision.
struct StreamState {
    std::vector<Matrix> s;
    std::uint64_t tokens_consumed = 0;
    std::uint64_t chunks_consumed = 0;
};

// Emitted low-rank factors; the dense update per slot is alpha * P * Q.
struct AdapterFactors {
    double alpha = 0.0;
    std::vector<Matrix> p;  // d_out x rank
    std::vector<Matrix> q;  // rank x d_in
};

inline StreamState init_state(const GeneratorParams& params) {
    StreamState st;
    for (std::size_t i = 0; i < params.num_slots(); ++i)
        st.s.push_back(Matrix::zeros(params.config.d_r, params.config.d_r,
                                     Precision::f64));
    return st;
}

// S <- S + A2 H^T H B1 for one slot, accumulated at double width.
inline Matrix update_slot(const Matrix& s, const GeneratorSlot& g,
                          const Matrix& h) {
    return add(s, projected_gram(h, g.a2, g.b1).to(Precision::f64));
}

// P = A1 U, Q = V^T B2 in SVD mode; the other modes factor the (normalized)
// state through a plain rank-`rank` SVD so every mode emits the same shape.
inline std::pair<Matrix, Matrix> emit_slot(const Matrix& s,
                                           const GeneratorSlot& g,
                                           const GeneratorConfig& cfg) {
    const Precision prec = g.a1.precision();
    Matrix p, q;
    if (cfg.norm == NormKind::Svd) {
        auto [u, v] = svd_normalize(s, cfg.rank);
        p = matmul(g.a1, u);
        q = matmul(transpose(v), g.b2);
    } else {
        Matrix n = cfg.norm == NormKind::Frobenius ? frobenius_normalize(s)
                                                   : s;
        SvdResult svd = low_rank_svd(n, cfg.rank);
        Matrix us = svd.left_vectors;
        for (Eigen::Index j = 0; j < us.cols(); ++j)
            us.em().col(j) *= svd.singular_values[static_cast<std::size_t>(j)];
        p = matmul(g.a1, us);
        q = matmul(transpose(svd.right_vectors), g.b2);
    }
    return {p.to(prec), q.to(prec)};
}

// S <- S + A2 H^T H B1 per slot, where `layer_hidden[l]` holds the chunk's
// hidden states from block l's input (H^(l-1), with H^(0) the embedding
// output). An empty chunk leaves the state untouched.
inline StreamState update_state(const StreamState& state,
                                const GeneratorParams& params,
                                const std::vector<Matrix>& layer_hidden) {
    if (state.s.size() != params.num_slots())
        throw DimensionError("update_state: state has " +
                             std::to_string(state.s.size()) + " slots, params " +
                             std::to_string(params.num_slots()));
    StreamState out = state;
    if (layer_hidden.empty() || layer_hidden[0].rows() == 0) return out;
    for (std::size_t slot = 0; slot < params.num_slots(); ++slot) {
        const int layer = params.layer_of_slot(slot);
        if (layer >= static_cast<int>(layer_hidden.size()))
            throw DimensionError("update_state: missing hidden states for layer " +
                                 std::to_string(layer));
        out.s[slot] =
            update_slot(out.s[slot], params.slots[slot],
                        layer_hidden[static_cast<std::size_t>(layer)]);
    }
    out.tokens_consumed += static_cast<std::uint64_t>(layer_hidden[0].rows());
    out.chunks_consumed += 1;
    return out;
}

inline AdapterFactors emit_adapter(const StreamState& state,
                                   const GeneratorParams& params) {
    if (state.s.size() != params.num_slots())
        throw DimensionError("emit_adapter: state/params slot mismatch");
    AdapterFactors out;
    out.alpha = params.config.alpha;
    for (std::size_t slot = 0; slot < params.num_slots(); ++slot) {
        auto [p, q] =
            emit_slot(state.s[slot], params.slots[slot], params.config);
        out.p.push_back(std::move(p));
        out.q.push_back(std::move(q));
    }
    return out;
}

// Bakes W_base + alpha * P * Q into a copy of the model.
inline BaseModel merge_adapter(const BaseModel& model,
                               const InjectionConfig& inj,
                               const AdapterFactors& adapter) {
    inj.validate();
    if (adapter.p.size() !=
        static_cast<std::size_t>(model.config.num_layers) *
            inj.slots_per_layer())
        throw DimensionError("merge_adapter: adapter has " +
                             std::to_string(adapter.p.size()) +
                             " slots for " +
                             std::to_string(model.config.num_layers) +
                             " layers");
    BaseModel out = model;
    std::size_t slot = 0;
    for (int l = 0; l < model.config.num_layers; ++l) {
        for (InjectionTarget t : inj.targets) {
            Matrix delta =
                scale(matmul(adapter.p[slot], adapter.q[slot]), adapter.alpha);
            BlockParams& b = out.blocks[static_cast<std::size_t>(l)];
            Matrix* w = nullptr;
            switch (t) {
                case InjectionTarget::AttnQuery: w = &b.wq; break;
                case InjectionTarget::AttnKey: w = &b.wk; break;
                case InjectionTarget::AttnValue: w = &b.wv; break;
                case InjectionTarget::AttnOutput: w = &b.wo; break;
                case InjectionTarget::FfnUp: w = &b.w_up; break;
                case InjectionTarget::FfnDown: w = &b.w_down; break;
            }
            if (!w->same_shape(delta))
                throw DimensionError(
                    "merge_adapter: slot " + std::to_string(slot) + " delta " +
                    shape_str(delta.rows(), delta.cols()) + " vs weight " +
                    shape_str(w->rows(), w->cols()));
            *w = add(*w, delta);
            ++slot;
        }
    }
    return out;
}

// Adapted forward on a no-grad tape.
inline ForwardTrace forward_adapted(const BaseModel& model,
                                    const InjectionConfig& inj,
                                    const AdapterFactors& adapter,
                                    const std::vector<int>& tokens,
                                    bool want_trace = false,
                                    bool want_logits = true) {
    Tape tape(false);
    ModelNodes nodes = ModelNodes::lift(tape, model, false);
    AdapterNodes an;
    an.alpha = adapter.alpha;
    for (std::size_t i = 0; i < adapter.p.size(); ++i) {
        an.p.push_back(tape.constant(adapter.p[i]));
        an.q.push_back(tape.constant(adapter.q[i]));
    }
    ForwardNodes f = build_forward(tape, nodes, tokens, &inj, &an, want_trace,
                                   want_logits);
    ForwardTrace trace;
    for (NodeRef n : f.hidden) trace.hidden.push_back(n->value);
    if (want_logits) trace.logits = f.logits->value;
    return trace;
}

// --- tape-side mirror of the generator, used by training -----------------

struct GeneratorSlotNodes {
    NodeRef a1, a2, b1, b2;
};

struct GeneratorNodes {
    const GeneratorConfig* config = nullptr;
    std::vector<GeneratorSlotNodes> slots;

    static GeneratorNodes lift(Tape& tape, const GeneratorParams& p,
                               bool trainable) {
        GeneratorNodes out;
        out.config = &p.config;
        for (const GeneratorSlot& s : p.slots)
            out.slots.push_back({tape.leaf(s.a1, trainable),
                                 tape.leaf(s.a2, trainable),
                                 tape.leaf(s.b1, trainable),
                                 tape.leaf(s.b2, trainable)});
        return out;
    }

    std::vector<NodeRef> leaves() const {
        std::vector<NodeRef> out;
        for (const GeneratorSlotNodes& s : slots) {
            out.push_back(s.a1);
            out.push_back(s.a2);
            out.push_back(s.b1);
            out.push_back(s.b2);
        }
        return out;
    }
};

// State chain on the tape: one node per slot.
using StateNodes = std::vector<NodeRef>;

inline StateNodes init_state_nodes(Tape& tape, const GeneratorNodes& gen) {
    StateNodes st;
    for (std::size_t i = 0; i < gen.slots.size(); ++i)
        st.push_back(tape.constant(
            Matrix::zeros(gen.config->d_r, gen.config->d_r, Precision::f64)));
    return st;
}

inline StateNodes update_state_nodes(Tape& tape, const StateNodes& state,
                                     const GeneratorNodes& gen,
                                     const std::vector<NodeRef>& layer_hidden,
                                     std::size_t slots_per_layer) {
    StateNodes out;
    for (std::size_t slot = 0; slot < gen.slots.size(); ++slot) {
        const std::size_t layer = slot / slots_per_layer;
        NodeRef h = layer_hidden[layer];
        const GeneratorSlotNodes& g = gen.slots[slot];
        NodeRef gram = tape.matmul(tape.matmul(g.a2, tape.transpose(h)),
                                   tape.matmul(h, g.b1));
        out.push_back(tape.add(state[slot], gram));
    }
    return out;
}

// Training-path adapter: P = A1 norm(S) and Q = B2, a dense d_r-rank pairing
// whose product equals A1 norm(S) B2. In SVD mode norm(S) is itself rank
// `rank`, so this matches the emitted factors exactly; the other modes train
// dense and truncate only at emission.
inline AdapterNodes emit_adapter_nodes(Tape& tape, const StateNodes& state,
                                       const GeneratorNodes& gen) {
    AdapterNodes out;
    out.alpha = gen.config->alpha;
    for (std::size_t slot = 0; slot < gen.slots.size(); ++slot) {
        NodeRef n = nullptr;
        switch (gen.config->norm) {
            case NormKind::Svd:
                n = tape.svd_normalize(state[slot], gen.config->rank);
                break;
            case NormKind::Frobenius:
                n = tape.frobenius_normalize(state[slot]);
                break;
            case NormKind::None:
                n = state[slot];
                break;
        }
        out.p.push_back(tape.matmul(gen.slots[slot].a1, n));
        out.q.push_back(gen.slots[slot].b2);
    }
    return out;
}

// Greedy or seeded-sampling generation by repeated full-prefix forwards.
inline std::vector<int> generate_tokens(const BaseModel& model,
                                        const InjectionConfig* inj,
                                        const AdapterFactors* adapter,
                                        std::vector<int> prompt,
                                        int max_new_tokens, bool greedy,
                                        std::uint64_t seed = 0) {
    Rng rng(split_seed(seed, 0x9e4));
    std::vector<int> out;
    for (int step = 0; step < max_new_tokens; ++step) {
        if (static_cast<int>(prompt.size()) >= model.config.max_seq_len) break;
        Matrix logits;
        if (adapter != nullptr) {
            logits = forward_adapted(model, *inj, *adapter, prompt).logits;
        } else {
            logits = forward(model, prompt).logits;
        }
        const Eigen::Index last = logits.rows() - 1;
        int next = 0;
        if (greedy) {
            double best = logits(last, 0);
            for (Eigen::Index j = 1; j < logits.cols(); ++j)
                if (logits(last, j) > best) {
                    best = logits(last, j);
                    next = static_cast<int>(j);
                }
        } else {
            const auto row = logits.em().row(last);
            const double mx = row.maxCoeff();
            Eigen::RowVectorXd p = (row.array() - mx).exp();
            p /= p.sum();
            double r = rng.uniform();
            for (Eigen::Index j = 0; j < p.size(); ++j) {
                r -= p(j);
                if (r <= 0.0) {
                    next = static_cast<int>(j);
                    break;
                }
            }
        }
        if (next == kTokenEos) break;
        out.push_back(next);
        prompt.push_back(next);
    }
    return out;
}

}  // namespace genadapt
