#include <gtest/gtest.h>

#include "genadapt/generator.hpp"
#include "genadapt/stream.hpp"
#include "oracles.hpp"

using namespace genadapt;

namespace {

ModelConfig toy_model_config() {
    ModelConfig cfg;
    cfg.num_layers = 2;
    cfg.hidden_dim = 16;
    cfg.num_heads = 4;
    cfg.ffn_dim = 32;
    cfg.max_seq_len = 64;
    return cfg;
}

GeneratorConfig toy_gen_config() {
    GeneratorConfig cfg;
    cfg.d_r = 8;
    cfg.rank = 4;
    return cfg;
}

std::vector<Matrix> random_hidden(const ModelConfig& cfg, Eigen::Index rows,
                                  Rng& rng) {
    std::vector<Matrix> out;
    for (int l = 0; l < cfg.num_layers; ++l)
        out.push_back(Matrix::gaussian(rows, cfg.hidden_dim, rng));
    return out;
}

}  // namespace

TEST(Generator, FreshStateIsZero) {
    GeneratorParams params =
        GeneratorParams::init(toy_model_config(), toy_gen_config(), 1);
    StreamState st = init_state(params);
    EXPECT_EQ(st.tokens_consumed, 0u);
    EXPECT_EQ(st.chunks_consumed, 0u);
    ASSERT_EQ(st.s.size(), params.num_slots());
    for (const Matrix& s : st.s) {
        EXPECT_EQ(s.rows(), params.config.d_r);
        EXPECT_DOUBLE_EQ(s.max_abs(), 0.0);
    }
}

TEST(Generator, EmitOnFreshStateIsZeroAdapter) {
    GeneratorParams params =
        GeneratorParams::init(toy_model_config(), toy_gen_config(), 2);
    AdapterFactors a = emit_adapter(init_state(params), params);
    for (std::size_t i = 0; i < a.p.size(); ++i) {
        EXPECT_DOUBLE_EQ(a.p[i].max_abs(), 0.0);
        EXPECT_DOUBLE_EQ(a.q[i].max_abs(), 0.0);
    }
}

TEST(Generator, EmptyChunkLeavesStateUntouched) {
    ModelConfig mc = toy_model_config();
    GeneratorParams params = GeneratorParams::init(mc, toy_gen_config(), 3);
    Rng rng(4);
    StreamState st = update_state(init_state(params), params,
                                  random_hidden(mc, 5, rng));
    std::vector<Matrix> empty;
    for (int l = 0; l < mc.num_layers; ++l)
        empty.push_back(Matrix(0, mc.hidden_dim));
    StreamState after = update_state(st, params, empty);
    EXPECT_EQ(after.tokens_consumed, st.tokens_consumed);
    EXPECT_EQ(after.chunks_consumed, st.chunks_consumed);
    for (std::size_t i = 0; i < st.s.size(); ++i)
        EXPECT_EQ(after.s[i], st.s[i]);
}

TEST(Generator, FirstChunkEqualsBatchFormula) {
    ModelConfig mc = toy_model_config();
    GeneratorParams params = GeneratorParams::init(mc, toy_gen_config(), 5);
    Rng rng(6);
    std::vector<Matrix> hidden = random_hidden(mc, 7, rng);
    StreamState st = update_state(init_state(params), params, hidden);
    EXPECT_EQ(st.tokens_consumed, 7u);
    EXPECT_EQ(st.chunks_consumed, 1u);
    for (std::size_t slot = 0; slot < params.num_slots(); ++slot) {
        const int layer = params.layer_of_slot(slot);
        Matrix expected =
            projected_gram(hidden[static_cast<std::size_t>(layer)],
                           params.slots[slot].a2, params.slots[slot].b1);
        EXPECT_LE(max_abs_diff(st.s[slot], expected), 1e-12);
    }
}

TEST(Generator, SequentialChunksMatchConcatenationOracle) {
    ModelConfig mc = toy_model_config();
    GeneratorParams params = GeneratorParams::init(mc, toy_gen_config(), 7);
    Rng rng(8);
    std::vector<Matrix> h1 = random_hidden(mc, 5, rng);
    std::vector<Matrix> h2 = random_hidden(mc, 3, rng);

    StreamState st = update_state(
        update_state(init_state(params), params, h1), params, h2);

    std::vector<Matrix> concat;
    for (int l = 0; l < mc.num_layers; ++l) {
        Matrix c(8, mc.hidden_dim);
        c.em().topRows(5) = h1[static_cast<std::size_t>(l)].em();
        c.em().bottomRows(3) = h2[static_cast<std::size_t>(l)].em();
        concat.push_back(std::move(c));
    }
    StreamState batch = update_state(init_state(params), params, concat);
    for (std::size_t slot = 0; slot < params.num_slots(); ++slot)
        EXPECT_LE(rel_diff(st.s[slot], batch.s[slot]), 1e-10);
    EXPECT_EQ(st.tokens_consumed, batch.tokens_consumed);
}

// Streaming/batch equivalence over random chunkings of a fixed sequence.
TEST(Generator, StreamingMatchesBatchOverRandomChunkings) {
    ModelConfig mc = toy_model_config();
    GeneratorParams params = GeneratorParams::init(mc, toy_gen_config(), 9);
    for (std::uint64_t seed = 0; seed < 25; ++seed) {
        Rng rng(split_seed(777, seed));
        const Eigen::Index total = 6 + static_cast<Eigen::Index>(rng.uniform_int(0, 26));
        std::vector<Matrix> full = random_hidden(mc, total, rng);

        StreamState streamed = init_state(params);
        Eigen::Index at = 0;
        while (at < total) {
            const Eigen::Index len = std::min<Eigen::Index>(
                total - at, 1 + static_cast<Eigen::Index>(rng.uniform_int(0, 7)));
            std::vector<Matrix> chunk;
            for (int l = 0; l < mc.num_layers; ++l)
                chunk.push_back(Matrix(
                    EMat(full[static_cast<std::size_t>(l)].em().middleRows(
                        at, len)),
                    Precision::f64));
            streamed = update_state(streamed, params, chunk);
            at += len;
        }
        StreamState batch = update_state(init_state(params), params, full);
        for (std::size_t slot = 0; slot < params.num_slots(); ++slot)
            EXPECT_LE(rel_diff(streamed.s[slot], batch.s[slot]), 1e-10)
                << "seed " << seed;
    }
}

TEST(Generator, StateSizeIndependentOfTokensConsumed) {
    ModelConfig mc = toy_model_config();
    GeneratorParams params = GeneratorParams::init(mc, toy_gen_config(), 10);
    Rng rng(11);
    StreamState st = init_state(params);
    for (int i = 0; i < 5; ++i)
        st = update_state(st, params, random_hidden(mc, 9, rng));
    EXPECT_EQ(st.tokens_consumed, 45u);
    for (const Matrix& s : st.s)
        EXPECT_EQ(s.size(), static_cast<Eigen::Index>(params.config.d_r) *
                                params.config.d_r);
}

TEST(Generator, DiagonalSpectrumEmitsIdentityProduct) {
    GeneratorParams params;
    params.config.d_r = 2;
    params.config.rank = 2;
    params.config.norm = NormKind::Svd;
    GeneratorSlot slot;
    slot.a1 = Matrix::identity(2);
    slot.a2 = Matrix::identity(2);
    slot.b1 = Matrix::identity(2);
    slot.b2 = Matrix::identity(2);
    params.slots.push_back(slot);

    StreamState st;
    st.s.push_back(Matrix{{3, 0}, {0, 0.5}});
    AdapterFactors a = emit_adapter(st, params);
    EXPECT_LE(max_abs_diff(matmul(a.p[0], a.q[0]), Matrix::identity(2)),
              1e-10);
}

TEST(Generator, EmitMatchesFullSvdOracle) {
    Rng rng(13);
    Matrix s = oracles::plant_spectrum(6, 6, {5.5, 4.1, 3.3, 2.2, 1.4, 0.8},
                                       rng);
    GeneratorParams params;
    params.config.d_r = 6;
    params.config.rank = 6;
    params.config.norm = NormKind::Svd;
    GeneratorSlot slot;
    slot.a1 = Matrix::gaussian(10, 6, rng);
    slot.a2 = Matrix::identity(6);
    slot.b1 = Matrix::identity(6);
    slot.b2 = Matrix::gaussian(6, 9, rng);
    params.slots.push_back(slot);
    StreamState st;
    st.s.push_back(s);

    AdapterFactors a = emit_adapter(st, params);
    oracles::FullSvd ref = oracles::jacobi_svd(s);
    Matrix uvt = matmul(ref.u, transpose(ref.v));
    Matrix expected = matmul(matmul(slot.a1, uvt), slot.b2);
    EXPECT_LE(rel_diff(matmul(a.p[0], a.q[0]), expected), 1e-5);
}

TEST(Generator, EmittedProductHasRankAtMostR) {
    ModelConfig mc = toy_model_config();
    GeneratorConfig gc = toy_gen_config();  // d_r 8, rank 4
    GeneratorParams params = GeneratorParams::init(mc, gc, 14);
    Rng rng(15);
    StreamState st = update_state(init_state(params), params,
                                  random_hidden(mc, 20, rng));
    AdapterFactors a = emit_adapter(st, params);
    for (std::size_t slot = 0; slot < a.p.size(); ++slot) {
        oracles::FullSvd svd = oracles::jacobi_svd(matmul(a.p[slot], a.q[slot]));
        for (std::size_t i = static_cast<std::size_t>(gc.rank); i < svd.s.size();
             ++i)
            EXPECT_LE(svd.s[i], 1e-9 * svd.s[0]);
    }
}

TEST(Generator, MergeZeroAdapterKeepsForwardBitIdentical) {
    ModelConfig mc = toy_model_config();
    BaseModel model = BaseModel::init(mc, 20);
    GeneratorParams params = GeneratorParams::init(mc, toy_gen_config(), 21);
    AdapterFactors zero = emit_adapter(init_state(params), params);
    BaseModel merged = merge_adapter(model, params.config.injection, zero);
    const std::vector<int> tokens = {3, 14, 15, 92, 65};
    EXPECT_EQ(forward(merged, tokens).logits, forward(model, tokens).logits);
}

TEST(Generator, MergedEqualsInjectedForward) {
    ModelConfig mc = toy_model_config();
    BaseModel model = BaseModel::init(mc, 22);
    GeneratorParams params = GeneratorParams::init(mc, toy_gen_config(), 23);
    Rng rng(24);
    StreamState st = update_state(init_state(params), params,
                                  random_hidden(mc, 12, rng));
    AdapterFactors a = emit_adapter(st, params);

    std::vector<int> tokens;
    for (int i = 0; i < 16; ++i)
        tokens.push_back(static_cast<int>(rng.uniform_int(0, 255)));

    Matrix injected =
        forward_adapted(model, params.config.injection, a, tokens).logits;
    Matrix merged =
        forward(merge_adapter(model, params.config.injection, a), tokens)
            .logits;
    EXPECT_LE(max_abs_diff(injected, merged), 1e-10);
}

TEST(Generator, MergeAndUnmergeRecoversForward) {
    ModelConfig mc = toy_model_config();
    BaseModel model = BaseModel::init(mc, 25);
    GeneratorParams params = GeneratorParams::init(mc, toy_gen_config(), 26);
    Rng rng(27);
    StreamState st = update_state(init_state(params), params,
                                  random_hidden(mc, 10, rng));
    AdapterFactors a = emit_adapter(st, params);
    AdapterFactors neg = a;
    for (Matrix& p : neg.p) p = scale(p, -1.0);

    BaseModel round = merge_adapter(
        merge_adapter(model, params.config.injection, a),
        params.config.injection, neg);
    const std::vector<int> tokens = {9, 8, 7, 6, 5};
    EXPECT_LE(
        max_abs_diff(forward(round, tokens).logits, forward(model, tokens).logits),
        1e-9);
}

TEST(Generator, MergeRejectsSlotMismatch) {
    ModelConfig mc = toy_model_config();
    BaseModel model = BaseModel::init(mc, 28);
    AdapterFactors a;
    a.alpha = 1.0;
    a.p.push_back(Matrix::zeros(16, 4));
    a.q.push_back(Matrix::zeros(4, 16));
    InjectionConfig inj;
    EXPECT_THROW(merge_adapter(model, inj, a), DimensionError);
}

TEST(Generator, ConfigValidation) {
    ModelConfig mc = toy_model_config();
    GeneratorConfig gc;
    gc.d_r = 32;  // exceeds hidden_dim 16
    gc.rank = 4;
    EXPECT_THROW(gc.validate(mc), ConfigError);
    gc.d_r = 8;
    gc.rank = 9;
    EXPECT_THROW(gc.validate(mc), ConfigError);
    gc.rank = 4;
    EXPECT_NO_THROW(gc.validate(mc));
}
