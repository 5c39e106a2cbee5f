#include <gtest/gtest.h>

#include <cmath>

#include "genadapt/fdcheck.hpp"
#include "genadapt/train.hpp"
#include "oracles.hpp"

using namespace genadapt;

namespace {

ModelConfig grad_model_config() {
    ModelConfig cfg;
    cfg.num_layers = 2;
    cfg.hidden_dim = 8;
    cfg.num_heads = 2;
    cfg.ffn_dim = 16;
    cfg.max_seq_len = 64;
    return cfg;
}

GeneratorConfig grad_gen_config() {
    GeneratorConfig cfg;
    cfg.d_r = 4;
    cfg.rank = 2;
    return cfg;
}

std::vector<Matrix> params_to_vec(const GeneratorParams& p) {
    std::vector<Matrix> out;
    p.for_each_param([&](const Matrix& m) { out.push_back(m); });
    return out;
}

GeneratorParams vec_to_params(const GeneratorParams& tmpl,
                              const std::vector<Matrix>& vec) {
    GeneratorParams out = tmpl;
    std::size_t i = 0;
    out.for_each_param_mut([&](Matrix& m) { m = vec[i++]; });
    return out;
}

TrainingExample grad_example(std::uint64_t seed) {
    Rng rng(seed);
    TrainingExample ex;
    for (int i = 0; i < 16; ++i)
        ex.tokens.push_back(static_cast<int>(rng.uniform_int(0, 255)));
    ex.split = 8;
    return ex;
}

std::vector<std::uint8_t> repeated_corpus(std::size_t bytes) {
    const std::string pattern = "abc:123;def:456;ghi:789; quartz lumen. ";
    std::string s;
    while (s.size() < bytes) s += pattern;
    s.resize(bytes);
    return {s.begin(), s.end()};
}

}  // namespace

TEST(MakeExamples, SingleSegmentCorpus) {
    std::vector<std::uint8_t> corpus(64, 'x');
    auto examples = make_examples(corpus, 64, 1);
    ASSERT_EQ(examples.size(), 1u);
    EXPECT_EQ(examples[0].tokens.size(), 64u);
    EXPECT_GE(examples[0].split, 16);
    EXPECT_LE(examples[0].split, 48);
}

TEST(MakeExamples, DeterministicForFixedSeed) {
    std::vector<std::uint8_t> corpus(640, 'y');
    auto a = make_examples(corpus, 64, 42);
    auto b = make_examples(corpus, 64, 42);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].split, b[i].split);
        EXPECT_EQ(a[i].tokens, b[i].tokens);
    }
    auto c = make_examples(corpus, 64, 43);
    bool any_diff = false;
    for (std::size_t i = 0; i < a.size(); ++i)
        any_diff = any_diff || (a[i].split != c[i].split);
    EXPECT_TRUE(any_diff);
}

TEST(MakeExamples, TenSegmentsCoverCorpusDisjointly) {
    std::vector<std::uint8_t> corpus;
    for (int i = 0; i < 10 * 32; ++i)
        corpus.push_back(static_cast<std::uint8_t>(i & 0xff));
    auto examples = make_examples(corpus, 32, 7);
    ASSERT_EQ(examples.size(), 10u);
    std::size_t covered = 0;
    for (std::size_t e = 0; e < examples.size(); ++e) {
        const auto ctx = examples[e].context();
        const auto cont = examples[e].continuation();
        EXPECT_EQ(ctx.size() + cont.size(), 32u);
        for (std::size_t j = 0; j < 32; ++j)
            EXPECT_EQ(examples[e].tokens[j],
                      static_cast<int>(corpus[e * 32 + j]));
        covered += examples[e].tokens.size();
    }
    EXPECT_EQ(covered, corpus.size());
}

TEST(MakeExamples, CorpusTooShortRejected) {
    std::vector<std::uint8_t> corpus(10, 'z');
    EXPECT_THROW(make_examples(corpus, 64, 1), DataError);
}

TEST(Losses, AlphaZeroReconstructionEqualsClosedBookNll) {
    ModelConfig mc = grad_model_config();
    BaseModel model = BaseModel::init(mc, 100);
    GeneratorConfig gc = grad_gen_config();
    gc.alpha = 0.0;
    GeneratorParams params = GeneratorParams::init(mc, gc, 101);
    TrainingExample ex = grad_example(102);

    const double loss = reconstruction_loss(model, params, ex, 4);
    std::vector<int> input = {kTokenRecon};
    input.insert(input.end(), ex.tokens.begin(),
                 ex.tokens.begin() + ex.split - 1);
    const std::vector<int> targets = ex.context();
    const double base = lm_loss(forward(model, input).logits, targets,
                                std::vector<bool>(targets.size(), true));
    EXPECT_DOUBLE_EQ(loss, base);
}

TEST(Losses, AlphaZeroCompletionEqualsClosedBookNll) {
    ModelConfig mc = grad_model_config();
    BaseModel model = BaseModel::init(mc, 103);
    GeneratorConfig gc = grad_gen_config();
    gc.alpha = 0.0;
    GeneratorParams params = GeneratorParams::init(mc, gc, 104);
    TrainingExample ex = grad_example(105);

    const double loss = completion_loss(model, params, ex, 4);
    std::vector<int> input = {kTokenBos};
    input.insert(input.end(), ex.tokens.begin() + ex.split,
                 ex.tokens.end() - 1);
    const std::vector<int> targets = ex.continuation();
    const double base = lm_loss(forward(model, input).logits, targets,
                                std::vector<bool>(targets.size(), true));
    EXPECT_DOUBLE_EQ(loss, base);
}

// Full training loss against central finite differences, through the
// contextualization chain and the SVD normalization, at the small dims
// where the sketch width covers the full spectrum.
TEST(Gradients, FullTrainingLossMatchesFiniteDifferences) {
    ModelConfig mc = grad_model_config();
    BaseModel model = BaseModel::init(mc, 110);
    GeneratorParams params = GeneratorParams::init(mc, grad_gen_config(), 111);
    TrainingExample ex = grad_example(112);
    const int chunk = 4;

    Tape tape;
    ModelNodes mn = ModelNodes::lift(tape, model, false);
    GeneratorNodes gn = GeneratorNodes::lift(tape, params, true);
    LossNodes loss = build_example_loss(tape, mn, gn, params.config.injection,
                                        ex, chunk, false, Objective::Both);

    // Precondition: the accumulated states have well-separated spectra.
    for (NodeRef s : loss.context.state) {
        oracles::FullSvd svd = oracles::jacobi_svd(s->value);
        const double smax2 = svd.s[0] * svd.s[0];
        for (std::size_t i = 0; i + 1 < svd.s.size(); ++i)
            ASSERT_GE(std::abs(svd.s[i] * svd.s[i] - svd.s[i + 1] * svd.s[i + 1]),
                      1e-4 * smax2);
    }

    tape.backward(loss.total);
    std::vector<Matrix> grads;
    for (NodeRef leaf : gn.leaves()) grads.push_back(tape.grad_of(leaf));

    auto f = [&](const std::vector<Matrix>& vec) {
        GeneratorParams p = vec_to_params(params, vec);
        Tape t(false);
        ModelNodes m2 = ModelNodes::lift(t, model, false);
        GeneratorNodes g2 = GeneratorNodes::lift(t, p, false);
        return build_example_loss(t, m2, g2, p.config.injection, ex, chunk,
                                  false, Objective::Both)
            .total->value(0, 0);
    };
    const double err =
        finite_difference_check(f, params_to_vec(params), grads, 1e-5);
    EXPECT_LE(err, 1e-4);
}

TEST(Gradients, CrossChunkBackpropagationReachesEarlyLayers) {
    ModelConfig mc = grad_model_config();
    BaseModel model = BaseModel::init(mc, 120);
    GeneratorParams params = GeneratorParams::init(mc, grad_gen_config(), 121);
    TrainingExample ex = grad_example(122);  // split 8 -> two chunks of 4

    Tape tape;
    ModelNodes mn = ModelNodes::lift(tape, model, false);
    GeneratorNodes gn = GeneratorNodes::lift(tape, params, true);
    LossNodes loss = build_example_loss(tape, mn, gn, params.config.injection,
                                        ex, 4, false,
                                        Objective::CompletionOnly);
    tape.backward(loss.total);
    const Matrix a2_grad = tape.grad_of(gn.slots[0].a2);
    EXPECT_GT(a2_grad.max_abs(), 0.0);
}

TEST(Gradients, MixedObjectiveGradientIsSumOfParts) {
    ModelConfig mc = grad_model_config();
    BaseModel model = BaseModel::init(mc, 130);
    GeneratorParams params = GeneratorParams::init(mc, grad_gen_config(), 131);
    TrainingExample ex = grad_example(132);

    auto grads_for = [&](Objective obj) {
        Tape tape;
        ModelNodes mn = ModelNodes::lift(tape, model, false);
        GeneratorNodes gn = GeneratorNodes::lift(tape, params, true);
        LossNodes loss = build_example_loss(tape, mn, gn,
                                            params.config.injection, ex, 4,
                                            false, obj);
        tape.backward(loss.total);
        std::vector<Matrix> out;
        for (NodeRef leaf : gn.leaves()) out.push_back(tape.grad_of(leaf));
        return out;
    };

    auto both = grads_for(Objective::Both);
    auto recon = grads_for(Objective::ReconstructionOnly);
    auto compl_only = grads_for(Objective::CompletionOnly);
    for (std::size_t i = 0; i < both.size(); ++i) {
        Matrix sum = add(recon[i], compl_only[i]);
        EXPECT_LE(rel_diff(both[i], sum), 1e-11) << "param " << i;
    }
}

TEST(Train, ZeroStepsLeaveParamsUnchanged) {
    ModelConfig mc = grad_model_config();
    BaseModel model = BaseModel::init(mc, 140);
    GeneratorParams params = GeneratorParams::init(mc, grad_gen_config(), 141);
    TrainConfig cfg;
    cfg.total_steps = 0;
    cfg.warmup_steps = 0;
    cfg.segment_length = 16;
    cfg.chunk_size = 4;
    cfg.batch_size = 2;
    TrainResult result = train(model, params, repeated_corpus(256), cfg);
    EXPECT_TRUE(result.log.empty());
    std::size_t i = 0;
    auto before = params_to_vec(params);
    result.params.for_each_param([&](const Matrix& m) {
        EXPECT_EQ(m, before[i++]);
    });
}

TEST(Train, DeterministicMetricsLogForFixedSeed) {
    ModelConfig mc = grad_model_config();
    BaseModel model = BaseModel::init(mc, 150);
    GeneratorParams params = GeneratorParams::init(mc, grad_gen_config(), 151);
    TrainConfig cfg;
    cfg.total_steps = 4;
    cfg.warmup_steps = 2;
    cfg.segment_length = 16;
    cfg.chunk_size = 4;
    cfg.batch_size = 2;
    cfg.seed = 9;
    TrainResult a = train(model, params, repeated_corpus(512), cfg);
    TrainResult b = train(model, params, repeated_corpus(512), cfg);
    ASSERT_EQ(a.log.size(), b.log.size());
    for (std::size_t i = 0; i < a.log.size(); ++i) {
        EXPECT_EQ(a.log[i].loss, b.log[i].loss);
        EXPECT_EQ(a.log[i].reconstruction, b.log[i].reconstruction);
        EXPECT_EQ(a.log[i].completion, b.log[i].completion);
        EXPECT_EQ(a.log[i].lr, b.log[i].lr);
    }
    auto va = params_to_vec(a.params);
    auto vb = params_to_vec(b.params);
    for (std::size_t i = 0; i < va.size(); ++i) EXPECT_EQ(va[i], vb[i]);
}

TEST(Train, FrozenBaseChecksumUnchanged) {
    ModelConfig mc = grad_model_config();
    BaseModel model = BaseModel::init(mc, 160);
    model.frozen = true;
    const Digest before = model.checksum();
    GeneratorParams params = GeneratorParams::init(mc, grad_gen_config(), 161);
    TrainConfig cfg;
    cfg.total_steps = 6;
    cfg.warmup_steps = 1;
    cfg.segment_length = 16;
    cfg.chunk_size = 4;
    cfg.batch_size = 2;
    train(model, params, repeated_corpus(512), cfg);
    EXPECT_EQ(hex(before), hex(model.checksum()));
}

TEST(Train, OverfitsSingleSegment) {
    ModelConfig mc = grad_model_config();
    BaseModel model = BaseModel::init(mc, 170);
    BaseTrainConfig bcfg;
    bcfg.total_steps = 120;
    bcfg.warmup_steps = 10;
    bcfg.segment_length = 16;
    bcfg.batch_size = 4;
    train_base(model, repeated_corpus(2048), bcfg);

    GeneratorParams params = GeneratorParams::init(mc, grad_gen_config(), 171);
    TrainConfig cfg;
    cfg.total_steps = 150;
    cfg.warmup_steps = 5;
    cfg.learning_rate = 3e-3;
    cfg.weight_decay = 0.0;
    cfg.segment_length = 16;
    cfg.chunk_size = 4;
    cfg.batch_size = 1;
    TrainResult result = train(model, params, repeated_corpus(16), cfg);
    double first = 0.0, last = 0.0;
    for (int i = 0; i < 10; ++i) {
        first += result.log[static_cast<std::size_t>(i)].loss;
        last += result.log[result.log.size() - 1 - static_cast<std::size_t>(i)]
                    .loss;
    }
    EXPECT_LT(last, first - 1.0);  // clear decrease, not noise
}

TEST(Validate, UniformHeadGivesVocabPerplexity) {
    ModelConfig mc = grad_model_config();
    BaseModel model = BaseModel::init(mc, 180);
    model.head = Matrix::zeros(mc.vocab_size, mc.hidden_dim);
    std::vector<TrainingExample> heldout = {grad_example(181),
                                            grad_example(182)};
    ValidationMetrics m = validate_closed_book(model, heldout);
    EXPECT_NEAR(m.reconstruction_ppl, 259.0, 1e-9);
    EXPECT_NEAR(m.completion_ppl, 259.0, 1e-9);
}

TEST(Validate, PerplexityBoundedBelowByOne) {
    ModelConfig mc = grad_model_config();
    BaseModel model = BaseModel::init(mc, 190);
    GeneratorParams params = GeneratorParams::init(mc, grad_gen_config(), 191);
    std::vector<TrainingExample> heldout = {grad_example(192)};
    ValidationMetrics m = validate(model, params, heldout, 4);
    EXPECT_GE(m.reconstruction_ppl, 1.0);
    EXPECT_GE(m.completion_ppl, 1.0);
    EXPECT_THROW(validate(model, params, {}, 4), DataError);
}

TEST(Scheduler, WarmupThenLinearDecay) {
    EXPECT_DOUBLE_EQ(warmup_decay_lr(1.0, 1, 10, 100), 0.1);
    EXPECT_DOUBLE_EQ(warmup_decay_lr(1.0, 10, 10, 100), 1.0);
    EXPECT_DOUBLE_EQ(warmup_decay_lr(1.0, 55, 10, 100), 0.5);
    EXPECT_DOUBLE_EQ(warmup_decay_lr(1.0, 100, 10, 100), 0.0);
}

TEST(TrainBase, LossDecreasesAndParamsAreF32Canonical) {
    ModelConfig mc = grad_model_config();
    BaseModel model = BaseModel::init(mc, 200);
    BaseTrainConfig cfg;
    cfg.total_steps = 30;
    cfg.warmup_steps = 5;
    cfg.segment_length = 16;
    cfg.batch_size = 4;
    auto log = train_base(model, repeated_corpus(1024), cfg);
    ASSERT_EQ(log.size(), 30u);
    EXPECT_LT(log.back().loss, log.front().loss);
    model.for_each_param([&](const Matrix& p) {
        for (Eigen::Index i = 0; i < p.rows(); ++i)
            for (Eigen::Index j = 0; j < p.cols(); ++j)
                ASSERT_EQ(p(i, j),
                          static_cast<double>(static_cast<float>(p(i, j))));
    });
}

TEST(TrainConfig, Validation) {
    TrainConfig cfg;
    cfg.warmup_steps = 10;
    cfg.total_steps = 5;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg.total_steps = 20;
    cfg.learning_rate = 0.0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg.learning_rate = 1e-4;
    EXPECT_NO_THROW(cfg.validate());
}
