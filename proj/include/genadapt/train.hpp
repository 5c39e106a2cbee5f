#pragma once

#include <cmath>
#include <cstdio>
#include <exception>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include "genadapt/data.hpp"
#include "genadapt/stream.hpp"

namespace genadapt {

enum class Objective { Both, ReconstructionOnly, CompletionOnly };

inline const char* to_string(Objective o) {
    switch (o) {
        case Objective::Both: return "both";
        case Objective::ReconstructionOnly: return "reconstruction_only";
        case Objective::CompletionOnly: return "completion_only";
    }
    return "?";
}

inline Objective parse_objective(const std::string& s) {
    if (s == "both") return Objective::Both;
    if (s == "reconstruction_only") return Objective::ReconstructionOnly;
    if (s == "completion_only") return Objective::CompletionOnly;
    throw ConfigError("unknown objective '" + s + "'");
}

struct TrainConfig {
    Objective objective = Objective::Both;
    double learning_rate = 3e-4;
    int warmup_steps = 100;
    int total_steps = 2000;
    double weight_decay = 0.01;
    int batch_size = 8;
    int chunk_size = 64;
    int segment_length = 256;
    bool truncate_unroll = false;
    std::uint64_t seed = 1;
    Precision precision = Precision::f64;
    int num_threads = 0;      // 0 = hardware concurrency
    int heldout_segments = 64;  // carved off the end of the corpus
    int validate_every = 0;     // 0 = no periodic validation

    void validate() const {
        if (learning_rate <= 0.0) throw ConfigError("learning_rate must be > 0");
        if (warmup_steps < 0 || total_steps < 0)
            throw ConfigError("step counts must be non-negative");
        if (warmup_steps > total_steps)
            throw ConfigError("warmup_steps " + std::to_string(warmup_steps) +
                              " exceeds total_steps " +
                              std::to_string(total_steps));
        if (batch_size <= 0) throw ConfigError("batch_size must be > 0");
        if (chunk_size <= 0) throw ConfigError("chunk_size must be > 0");
        if (segment_length < 2)
            throw ConfigError("segment_length must be at least 2");
    }
};

// --- losses ---------------------------------------------------------------

namespace detail {

inline std::vector<int> recon_input(const TrainingExample& ex) {
    std::vector<int> in = {kTokenRecon};
    in.insert(in.end(), ex.tokens.begin(), ex.tokens.begin() + ex.split - 1);
    return in;
}

inline std::vector<int> completion_input(const TrainingExample& ex) {
    std::vector<int> in = {kTokenBos};
    in.insert(in.end(), ex.tokens.begin() + ex.split, ex.tokens.end() - 1);
    return in;
}

}  // namespace detail

struct LossNodes {
    NodeRef reconstruction = nullptr;
    NodeRef completion = nullptr;
    NodeRef total = nullptr;
    TapeContext context;
};

// Shared contextualization pass, then one scoring forward per objective.
// Reconstruction scores the context behind the reserved begin-of-
// reconstruction token; completion scores the continuation closed-book
// behind BOS.
inline LossNodes build_example_loss(Tape& tape, const ModelNodes& model,
                                    const GeneratorNodes& gen,
                                    const InjectionConfig& inj,
                                    const TrainingExample& ex, int chunk_size,
                                    bool truncate_unroll, Objective objective) {
    if (ex.split < 1 || ex.split >= static_cast<int>(ex.tokens.size()))
        throw DataError("example split " + std::to_string(ex.split) +
                        " leaves an empty target");
    LossNodes out;
    const std::vector<int> context = ex.context();
    out.context = contextualize_nodes(
        tape, model, gen, inj, context,
        ChunkPlan::build(static_cast<int>(context.size()), chunk_size),
        truncate_unroll);

    if (objective != Objective::CompletionOnly) {
        ForwardNodes f = build_forward(tape, model, detail::recon_input(ex),
                                       &inj, &out.context.adapter, false, true);
        const std::vector<int> targets = ex.context();
        out.reconstruction = tape.cross_entropy_mean(
            f.logits, targets, std::vector<bool>(targets.size(), true));
    }
    if (objective != Objective::ReconstructionOnly) {
        ForwardNodes f =
            build_forward(tape, model, detail::completion_input(ex), &inj,
                          &out.context.adapter, false, true);
        const std::vector<int> targets = ex.continuation();
        out.completion = tape.cross_entropy_mean(
            f.logits, targets, std::vector<bool>(targets.size(), true));
    }

    if (out.reconstruction != nullptr && out.completion != nullptr)
        out.total = tape.add(out.reconstruction, out.completion);
    else
        out.total = out.reconstruction != nullptr ? out.reconstruction
                                                  : out.completion;
    return out;
}

inline double reconstruction_loss(const BaseModel& model,
                                  const GeneratorParams& params,
                                  const TrainingExample& ex,
                                  int chunk_size = 64) {
    Tape tape(false);
    ModelNodes mn = ModelNodes::lift(tape, model, false);
    GeneratorNodes gn = GeneratorNodes::lift(tape, params, false);
    return build_example_loss(tape, mn, gn, params.config.injection, ex,
                              chunk_size, false,
                              Objective::ReconstructionOnly)
        .total->value(0, 0);
}

inline double completion_loss(const BaseModel& model,
                              const GeneratorParams& params,
                              const TrainingExample& ex, int chunk_size = 64) {
    Tape tape(false);
    ModelNodes mn = ModelNodes::lift(tape, model, false);
    GeneratorNodes gn = GeneratorNodes::lift(tape, params, false);
    return build_example_loss(tape, mn, gn, params.config.injection, ex,
                              chunk_size, false, Objective::CompletionOnly)
        .total->value(0, 0);
}

// --- optimizer --------------------------------------------------------------

// Adam with decoupled weight decay and the WarmupDecayLR schedule (linear
// warmup, then linear decay to zero at total_steps).
struct Adam {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::vector<Matrix> m;
    std::vector<Matrix> v;
    int t = 0;

    void step(std::vector<Matrix*> params, const std::vector<Matrix>& grads,
              double lr, double weight_decay) {
        if (m.empty()) {
            for (const Matrix* p : params) {
                m.push_back(Matrix::zeros(p->rows(), p->cols()));
                v.push_back(Matrix::zeros(p->rows(), p->cols()));
            }
        }
        ++t;
        const double bc1 = 1.0 - std::pow(beta1, t);
        const double bc2 = 1.0 - std::pow(beta2, t);
        for (std::size_t i = 0; i < params.size(); ++i) {
            EMat& mi = m[i].em();
            EMat& vi = v[i].em();
            const EMat& g = grads[i].em();
            mi = beta1 * mi + (1.0 - beta1) * g;
            vi = beta2 * vi + (1.0 - beta2) * g.cwiseProduct(g);
            EMat update =
                (mi / bc1).array() / ((vi / bc2).array().sqrt() + eps);
            params[i]->em() -=
                lr * (update + weight_decay * params[i]->em()).matrix();
            params[i]->round_to_precision();
        }
    }
};

inline double warmup_decay_lr(double base, int step, int warmup, int total) {
    if (warmup > 0 && step <= warmup)
        return base * static_cast<double>(step) / static_cast<double>(warmup);
    if (total <= warmup) return base;
    return base *
           static_cast<double>(std::max(0, total - step)) /
           static_cast<double>(total - warmup);
}

// --- metrics ----------------------------------------------------------------

struct StepRecord {
    int step = 0;
    double loss = 0.0;
    double reconstruction = 0.0;
    double completion = 0.0;
    double lr = 0.0;
};

class MetricsWriter {
  public:
    explicit MetricsWriter(const std::string& path) {
        if (!path.empty()) {
            os_.open(path, std::ios::trunc);
            if (!os_)
                throw DataError("cannot open metrics log '" + path + "'");
        }
    }

    void write(const StepRecord& r) {
        if (!os_.is_open()) return;
        char buf[256];
        std::snprintf(buf, sizeof(buf),
                      "{\"step\":%d,\"loss\":%.17g,\"reconstruction\":%.17g,"
                      "\"completion\":%.17g,\"lr\":%.17g}\n",
                      r.step, r.loss, r.reconstruction, r.completion, r.lr);
        os_ << buf;
    }

    void write_validation(int step, double recon_ppl, double compl_ppl) {
        if (!os_.is_open()) return;
        char buf[256];
        std::snprintf(buf, sizeof(buf),
                      "{\"step\":%d,\"reconstruction_ppl\":%.17g,"
                      "\"completion_ppl\":%.17g}\n",
                      step, recon_ppl, compl_ppl);
        os_ << buf;
    }

  private:
    std::ofstream os_;
};

// --- validation ---------------------------------------------------------

struct ValidationMetrics {
    double reconstruction_ppl = 0.0;
    double completion_ppl = 0.0;
};

namespace detail {

template <class Fn>
inline void parallel_over(int count, int num_threads, Fn&& fn);

}  // namespace detail

// exp of the token-weighted mean NLL per metric over the held-out set.
inline ValidationMetrics validate(const BaseModel& model,
                                  const GeneratorParams& params,
                                  const std::vector<TrainingExample>& heldout,
                                  int chunk_size = 64, int num_threads = 0) {
    if (heldout.empty()) throw DataError("validate: empty held-out set");
    std::vector<double> recon_nll(heldout.size());
    std::vector<double> compl_nll(heldout.size());
    detail::parallel_over(
        static_cast<int>(heldout.size()), num_threads, [&](int i) {
            const TrainingExample& ex = heldout[static_cast<std::size_t>(i)];
            recon_nll[static_cast<std::size_t>(i)] =
                reconstruction_loss(model, params, ex, chunk_size) *
                ex.split;
            compl_nll[static_cast<std::size_t>(i)] =
                completion_loss(model, params, ex, chunk_size) *
                (static_cast<double>(ex.tokens.size()) - ex.split);
        });
    double rsum = 0.0, csum = 0.0, rtok = 0.0, ctok = 0.0;
    for (std::size_t i = 0; i < heldout.size(); ++i) {
        rsum += recon_nll[i];
        csum += compl_nll[i];
        rtok += heldout[i].split;
        ctok += static_cast<double>(heldout[i].tokens.size()) -
                heldout[i].split;
    }
    return {std::exp(rsum / rtok), std::exp(csum / ctok)};
}

// Same scoring inputs without any contextualization: the closed-book
// baseline the adapted model has to beat.
inline ValidationMetrics validate_closed_book(
    const BaseModel& model, const std::vector<TrainingExample>& heldout,
    int num_threads = 0) {
    if (heldout.empty()) throw DataError("validate: empty held-out set");
    std::vector<double> recon_nll(heldout.size());
    std::vector<double> compl_nll(heldout.size());
    detail::parallel_over(
        static_cast<int>(heldout.size()), num_threads, [&](int i) {
            const TrainingExample& ex = heldout[static_cast<std::size_t>(i)];
            const std::vector<int> rt = ex.context();
            recon_nll[static_cast<std::size_t>(i)] =
                lm_loss(forward(model, detail::recon_input(ex)).logits, rt,
                        std::vector<bool>(rt.size(), true)) *
                ex.split;
            const std::vector<int> ct = ex.continuation();
            compl_nll[static_cast<std::size_t>(i)] =
                lm_loss(forward(model, detail::completion_input(ex)).logits,
                        ct, std::vector<bool>(ct.size(), true)) *
                static_cast<double>(ct.size());
        });
    double rsum = 0.0, csum = 0.0, rtok = 0.0, ctok = 0.0;
    for (std::size_t i = 0; i < heldout.size(); ++i) {
        rsum += recon_nll[i];
        csum += compl_nll[i];
        rtok += heldout[i].split;
        ctok += static_cast<double>(heldout[i].tokens.size()) -
                heldout[i].split;
    }
    return {std::exp(rsum / rtok), std::exp(csum / ctok)};
}

// --- generator training -----------------------------------------------------

struct ExampleSplit {
    std::vector<TrainingExample> train;
    std::vector<TrainingExample> heldout;
};

// Held-out segments come off the end of the corpus; both training loops use
// the same split so no baseline ever trains on evaluation text.
inline ExampleSplit split_examples(const std::vector<std::uint8_t>& corpus,
                                   int segment_length, int heldout_segments,
                                   std::uint64_t seed) {
    std::vector<TrainingExample> all =
        make_examples(corpus, segment_length, seed);
    ExampleSplit out;
    const std::size_t keep =
        heldout_segments > 0 &&
                static_cast<std::size_t>(heldout_segments) < all.size()
            ? all.size() - static_cast<std::size_t>(heldout_segments)
            : all.size();
    out.train.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep));
    out.heldout.assign(all.begin() + static_cast<std::ptrdiff_t>(keep),
                       all.end());
    return out;
}

struct ValidationRecord {
    int step = 0;
    double reconstruction_ppl = 0.0;
    double completion_ppl = 0.0;
};

struct TrainResult {
    GeneratorParams params;
    std::vector<StepRecord> log;
    std::vector<ValidationRecord> validations;
};

namespace detail {

struct ExampleEval {
    std::vector<Matrix> grads;
    double loss = 0.0;
    double reconstruction = 0.0;
    double completion = 0.0;
    double state_max_abs = 0.0;
    int worst_layer = 0;
};

inline ExampleEval eval_generator_example(const BaseModel& model,
                                          const GeneratorParams& params,
                                          const TrainingExample& ex,
                                          const TrainConfig& cfg) {
    Tape tape;
    ModelNodes mn = ModelNodes::lift(tape, model, false);
    GeneratorNodes gn = GeneratorNodes::lift(tape, params, true);
    LossNodes loss =
        build_example_loss(tape, mn, gn, params.config.injection, ex,
                           cfg.chunk_size, cfg.truncate_unroll, cfg.objective);
    ExampleEval out;
    out.loss = loss.total->value(0, 0);
    out.reconstruction =
        loss.reconstruction ? loss.reconstruction->value(0, 0) : 0.0;
    out.completion = loss.completion ? loss.completion->value(0, 0) : 0.0;
    const std::size_t spl = params.config.injection.slots_per_layer();
    for (std::size_t slot = 0; slot < loss.context.state.size(); ++slot) {
        const double mx = loss.context.state[slot]->value.max_abs();
        if (mx > out.state_max_abs) {
            out.state_max_abs = mx;
            out.worst_layer = static_cast<int>(slot / spl);
        }
    }
    if (!std::isfinite(out.loss)) return out;  // caller raises with context
    tape.backward(loss.total);
    for (NodeRef leaf : gn.leaves()) out.grads.push_back(tape.grad_of(leaf));
    return out;
}

template <class Fn>
inline void parallel_over(int count, int num_threads, Fn&& fn) {
    const int hw = static_cast<int>(std::thread::hardware_concurrency());
    int threads = num_threads > 0 ? num_threads : (hw > 0 ? hw : 1);
    threads = std::min(threads, count);
    if (threads <= 1) {
        for (int i = 0; i < count; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) {
        pool.emplace_back([&, t]() {
            try {
                for (int i = t; i < count; i += threads) fn(i);
            } catch (...) {
                errors[static_cast<std::size_t>(t)] = std::current_exception();
            }
        });
    }
    for (std::thread& th : pool) th.join();
    for (const std::exception_ptr& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace detail

// Self-supervised pretraining of the generator against a frozen base model.
// Deterministic for a fixed seed and thread count: batch gradients are
// reduced in example order regardless of which thread produced them.
inline TrainResult train_on_examples(
    const BaseModel& model, GeneratorParams params,
    const std::vector<TrainingExample>& examples,
    const std::vector<TrainingExample>& heldout, const TrainConfig& cfg,
    const std::string& metrics_path = "",
    const std::function<void(const StepRecord&)>& on_step = nullptr) {
    cfg.validate();
    params.config.validate(model.config);
    if (examples.empty()) throw DataError("train: no training examples");
    const Digest frozen_before = model.checksum();
    MetricsWriter metrics(metrics_path);

    TrainResult result;
    Adam adam;
    std::vector<std::size_t> order(examples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::size_t cursor = 0;
    std::uint64_t epoch = 0;
    auto reshuffle = [&]() {
        Rng rng(split_seed(cfg.seed, 0xe70c + epoch));
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1],
                      order[static_cast<std::size_t>(
                          rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
    };
    reshuffle();

    for (int step = 1; step <= cfg.total_steps; ++step) {
        std::vector<TrainingExample> batch;
        for (int b = 0; b < cfg.batch_size; ++b) {
            if (cursor == order.size()) {
                cursor = 0;
                ++epoch;
                reshuffle();
                if (model.checksum() != frozen_before)
                    throw NumericError(
                        "frozen base model changed during training");
            }
            batch.push_back(examples[order[cursor++]]);
        }

        std::vector<detail::ExampleEval> evals(batch.size());
        detail::parallel_over(
            static_cast<int>(batch.size()), cfg.num_threads, [&](int i) {
                evals[static_cast<std::size_t>(i)] = detail::eval_generator_example(
                    model, params, batch[static_cast<std::size_t>(i)], cfg);
            });

        StepRecord rec;
        rec.step = step;
        std::vector<Matrix> grads;
        for (std::size_t i = 0; i < evals.size(); ++i) {
            const detail::ExampleEval& e = evals[i];
            if (!std::isfinite(e.loss))
                throw NumericError(
                    "non-finite loss at step " + std::to_string(step) +
                    ", layer " + std::to_string(e.worst_layer) +
                    ", max |S| entry " + std::to_string(e.state_max_abs));
            rec.loss += e.loss;
            rec.reconstruction += e.reconstruction;
            rec.completion += e.completion;
            if (grads.empty()) {
                grads = e.grads;
            } else {
                for (std::size_t g = 0; g < grads.size(); ++g)
                    grads[g] = add(grads[g], e.grads[g]);
            }
        }
        const double inv = 1.0 / static_cast<double>(batch.size());
        rec.loss *= inv;
        rec.reconstruction *= inv;
        rec.completion *= inv;
        for (Matrix& g : grads) g = scale(g, inv);

        rec.lr = warmup_decay_lr(cfg.learning_rate, step, cfg.warmup_steps,
                                 cfg.total_steps);
        std::vector<Matrix*> leaves;
        params.for_each_param_mut([&](Matrix& p) { leaves.push_back(&p); });
        adam.step(leaves, grads, rec.lr, cfg.weight_decay);

        metrics.write(rec);
        result.log.push_back(rec);
        if (on_step) on_step(rec);

        if (cfg.validate_every > 0 && !heldout.empty() &&
            (step % cfg.validate_every == 0 || step == cfg.total_steps)) {
            ValidationMetrics vm = validate(model, params, heldout,
                                            cfg.chunk_size, cfg.num_threads);
            result.validations.push_back(
                {step, vm.reconstruction_ppl, vm.completion_ppl});
            metrics.write_validation(step, vm.reconstruction_ppl,
                                     vm.completion_ppl);
        }
    }

    if (model.checksum() != frozen_before)
        throw NumericError("frozen base model changed during training");
    result.params = std::move(params);
    return result;
}

inline TrainResult train(const BaseModel& model, GeneratorParams params,
                         const std::vector<std::uint8_t>& corpus,
                         const TrainConfig& cfg,
                         const std::string& metrics_path = "",
                         const std::function<void(const StepRecord&)>& on_step =
                             nullptr) {
    ExampleSplit split = split_examples(corpus, cfg.segment_length,
                                        cfg.heldout_segments, cfg.seed);
    return train_on_examples(model, std::move(params), split.train,
                             split.heldout, cfg, metrics_path, on_step);
}

// --- base-model pretraining ---------------------------------------------

struct BaseTrainConfig {
    double learning_rate = 1e-3;
    int warmup_steps = 100;
    int total_steps = 2000;
    double weight_decay = 0.01;
    int batch_size = 8;
    int segment_length = 256;
    std::uint64_t seed = 1;
    int num_threads = 0;
    int heldout_segments = 64;  // excluded here too, so baselines stay honest
};

// Plain next-token pretraining of the toy base model; parameters are then
// rounded to f32-representable values so the in-memory model matches its
// archived form exactly.
inline std::vector<StepRecord> train_base(BaseModel& model,
                                          const std::vector<std::uint8_t>& corpus,
                                          const BaseTrainConfig& cfg,
                                          const std::string& metrics_path = "",
                                          const std::function<void(
                                              const StepRecord&)>& on_step =
                                              nullptr) {
    std::vector<TrainingExample> examples =
        split_examples(corpus, cfg.segment_length, cfg.heldout_segments,
                       cfg.seed)
            .train;
    if (examples.empty()) throw DataError("train_base: no training examples");
    MetricsWriter metrics(metrics_path);
    std::vector<StepRecord> log;
    Adam adam;
    std::vector<std::size_t> order(examples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::size_t cursor = 0;
    std::uint64_t epoch = 0;
    auto reshuffle = [&]() {
        Rng rng(split_seed(cfg.seed, 0xba5e + epoch));
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1],
                      order[static_cast<std::size_t>(
                          rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
    };
    reshuffle();

    for (int step = 1; step <= cfg.total_steps; ++step) {
        std::vector<const TrainingExample*> batch;
        for (int b = 0; b < cfg.batch_size; ++b) {
            if (cursor == order.size()) {
                cursor = 0;
                ++epoch;
                reshuffle();
            }
            batch.push_back(&examples[order[cursor++]]);
        }

        struct Eval {
            std::vector<Matrix> grads;
            double loss = 0.0;
        };
        std::vector<Eval> evals(batch.size());
        detail::parallel_over(
            static_cast<int>(batch.size()), cfg.num_threads, [&](int i) {
                const TrainingExample& ex = *batch[static_cast<std::size_t>(i)];
                Tape tape;
                ModelNodes mn = ModelNodes::lift(tape, model, true);
                std::vector<int> input = {kTokenBos};
                input.insert(input.end(), ex.tokens.begin(),
                             ex.tokens.end() - 1);
                ForwardNodes f = build_forward(tape, mn, input, nullptr,
                                               nullptr, false, true);
                NodeRef loss = tape.cross_entropy_mean(
                    f.logits, ex.tokens,
                    std::vector<bool>(ex.tokens.size(), true));
                Eval& out = evals[static_cast<std::size_t>(i)];
                out.loss = loss->value(0, 0);
                if (!std::isfinite(out.loss)) return;
                tape.backward(loss);
                for (NodeRef leaf : mn.leaves())
                    out.grads.push_back(tape.grad_of(leaf));
            });

        StepRecord rec;
        rec.step = step;
        std::vector<Matrix> grads;
        for (const Eval& e : evals) {
            if (!std::isfinite(e.loss))
                throw NumericError("non-finite base-model loss at step " +
                                   std::to_string(step));
            rec.loss += e.loss;
            if (grads.empty()) {
                grads = e.grads;
            } else {
                for (std::size_t g = 0; g < grads.size(); ++g)
                    grads[g] = add(grads[g], e.grads[g]);
            }
        }
        const double inv = 1.0 / static_cast<double>(batch.size());
        rec.loss *= inv;
        for (Matrix& g : grads) g = scale(g, inv);

        rec.lr = warmup_decay_lr(cfg.learning_rate, step, cfg.warmup_steps,
                                 cfg.total_steps);
        std::vector<Matrix*> leaves;
        model.for_each_param_mut([&](Matrix& p) { leaves.push_back(&p); });
        adam.step(leaves, grads, rec.lr, cfg.weight_decay);

        metrics.write(rec);
        log.push_back(rec);
        if (on_step) on_step(rec);
    }

    // Canonical f32 form so the in-memory model equals its saved archive.
    model.for_each_param_mut([&](Matrix& p) {
        p = p.to(Precision::f32).to(model.precision);
    });
    return log;
}

}  // namespace genadapt
