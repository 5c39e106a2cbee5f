#pragma once

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "genadapt/config.hpp"
#include "genadapt/fdcheck.hpp"
#include "genadapt/flops.hpp"
#include "genadapt/recall.hpp"
#include "genadapt/train.hpp"

namespace genadapt::cli {

struct GlobalOptions {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<Precision> precision;
    std::string out_dir = ".";
};

inline AppConfig resolve_config(const GlobalOptions& g) {
    AppConfig cfg =
        g.config_path.empty() ? AppConfig{} : parse_config_file(g.config_path);
    if (g.seed) {
        cfg.train.seed = *g.seed;
        cfg.base_train.seed = *g.seed;
    }
    if (g.precision) cfg.train.precision = *g.precision;
    return cfg;
}

inline std::vector<std::uint8_t> require_corpus(const AppConfig& cfg) {
    if (cfg.corpus_paths.empty())
        throw ConfigError("config key 'corpus' is required (path to one or "
                          "more UTF-8 text files)");
    return load_corpus(cfg.corpus_paths);
}

inline std::string join_path(const std::string& dir, const std::string& name) {
    return (std::filesystem::path(dir) / name).string();
}

// Maps error categories onto exit codes: 2 for bad input or incompatible
// artifacts, 1 for anything unexpected.
template <class Fn>
inline int run_guarded(Fn&& fn) {
    try {
        return fn();
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
    } catch (const CompatibilityError& e) {
        std::cerr << "error: " << e.what() << "\n";
    } catch (const PlanError& e) {
        std::cerr << "error: " << e.what() << "\n";
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

inline int cmd_pretrain_base(const GlobalOptions& g, bool dry_run) {
    return run_guarded([&]() {
        AppConfig cfg = resolve_config(g);
        if (dry_run) {
            std::cout << render_config(cfg);
            return 0;
        }
        std::vector<std::uint8_t> corpus = require_corpus(cfg);
        std::filesystem::create_directories(g.out_dir);
        BaseModel model = BaseModel::init(cfg.model, cfg.base_train.seed,
                                          cfg.train.precision);
        auto log = train_base(model, corpus, cfg.base_train,
                              join_path(g.out_dir, "base_metrics.jsonl"),
                              [](const StepRecord& r) {
                                  if (r.step % 100 == 0)
                                      std::printf("step %d loss %.4f\n",
                                                  r.step, r.loss);
                              });
        model.frozen = true;
        save_model(model, join_path(g.out_dir, "base.gam"));
        ExampleSplit split =
            split_examples(corpus, cfg.base_train.segment_length,
                           cfg.base_train.heldout_segments,
                           cfg.base_train.seed);
        if (!split.heldout.empty()) {
            ValidationMetrics cb = validate_closed_book(
                model, split.heldout, cfg.base_train.num_threads);
            std::printf(
                "closed-book held-out: reconstruction_ppl %.4f "
                "completion_ppl %.4f\n",
                cb.reconstruction_ppl, cb.completion_ppl);
        }
        std::printf("wrote %s\n", join_path(g.out_dir, "base.gam").c_str());
        return 0;
    });
}

inline int cmd_pretrain_generator(const GlobalOptions& g,
                                  const std::string& base_path,
                                  bool dry_run) {
    return run_guarded([&]() {
        AppConfig cfg = resolve_config(g);
        if (dry_run) {
            std::cout << render_config(cfg);
            return 0;
        }
        std::vector<std::uint8_t> corpus = require_corpus(cfg);
        std::filesystem::create_directories(g.out_dir);
        BaseModel model = load_model(base_path, cfg.train.precision);
        model.frozen = true;
        if (model.config != cfg.model)
            throw CompatibilityError(
                "model architecture in '" + base_path +
                "' does not match the config");
        GeneratorParams params = GeneratorParams::init(
            cfg.model, cfg.generator, cfg.train.seed, cfg.train.precision);
        TrainResult result =
            train(model, std::move(params), corpus, cfg.train,
                  join_path(g.out_dir, "generator_metrics.jsonl"),
                  [](const StepRecord& r) {
                      if (r.step % 100 == 0)
                          std::printf("step %d loss %.4f recon %.4f compl %.4f\n",
                                      r.step, r.loss, r.reconstruction,
                                      r.completion);
                  });
        const Digest fp = fingerprint(cfg.model, cfg.generator.injection,
                                      cfg.generator.d_r, cfg.generator.rank);
        save_generator(result.params, fp,
                       join_path(g.out_dir, "generator.ggen"));
        ExampleSplit split =
            split_examples(corpus, cfg.train.segment_length,
                           cfg.train.heldout_segments, cfg.train.seed);
        if (!split.heldout.empty()) {
            ValidationMetrics vm =
                validate(model, result.params, split.heldout,
                         cfg.train.chunk_size, cfg.train.num_threads);
            std::printf("held-out: reconstruction_ppl %.4f completion_ppl %.4f\n",
                        vm.reconstruction_ppl, vm.completion_ppl);
        }
        std::printf("wrote %s\n",
                    join_path(g.out_dir, "generator.ggen").c_str());
        return 0;
    });
}

inline int cmd_adapt(const GlobalOptions& g, const std::string& model_path,
                     const std::string& generator_path,
                     const std::string& context_path, int chunk_size,
                     const std::string& out_path,
                     const std::string& state_in,
                     const std::string& state_out) {
    return run_guarded([&]() {
        AppConfig cfg = resolve_config(g);
        BaseModel model = load_model(model_path, cfg.train.precision);
        GeneratorParams params =
            load_generator(generator_path, model.config, cfg.train.precision);
        const Digest fp = fingerprint(model.config, params.config.injection,
                                      params.config.d_r, params.config.rank);

        std::vector<std::uint8_t> context = load_corpus_file(context_path);
        if (context.empty())
            std::cerr << "warning: empty context file, emitting a zero adapter\n";

        StreamState state = init_state(params);
        if (!state_in.empty()) state = load_state(state_in, fp).state;

        std::vector<int> tokens;
        for (std::uint8_t b : context) tokens.push_back(static_cast<int>(b));
        auto [final_state, adapter] = contextualize_from(
            model, params, std::move(state), tokens,
            ChunkPlan::build(static_cast<int>(tokens.size()), chunk_size));

        save_adapter(
            make_adapter_archive(model.config, params, final_state, adapter),
            out_path);
        if (!state_out.empty()) save_state({fp, final_state}, state_out);
        std::printf("adapted on %llu tokens in %llu chunks -> %s\n",
                    static_cast<unsigned long long>(final_state.tokens_consumed),
                    static_cast<unsigned long long>(final_state.chunks_consumed),
                    out_path.c_str());
        return 0;
    });
}

inline int cmd_generate(const GlobalOptions& g, const std::string& model_path,
                        const std::string& adapter_path,
                        const std::string& prompt, int max_tokens,
                        bool greedy) {
    return run_guarded([&]() {
        AppConfig cfg = resolve_config(g);
        BaseModel model = load_model(model_path, cfg.train.precision);
        std::vector<int> tokens = {kTokenBos};
        for (unsigned char c : prompt) tokens.push_back(static_cast<int>(c));

        std::vector<int> out;
        const std::uint64_t seed = g.seed.value_or(cfg.train.seed);
        if (!adapter_path.empty()) {
            AdapterArchive a = load_adapter(adapter_path, cfg.train.precision);
            verify_adapter(a, model.config);
            out = generate_tokens(model, &a.injection, &a.factors, tokens,
                                  max_tokens, greedy, seed);
        } else {
            out = generate_tokens(model, nullptr, nullptr, tokens, max_tokens,
                                  greedy, seed);
        }
        std::string text;
        for (int t : out)
            if (t >= 0 && t <= 255) text.push_back(static_cast<char>(t));
        std::printf("%s\n", text.c_str());
        return 0;
    });
}

inline int cmd_eval(const GlobalOptions& g, const std::string& model_path,
                    const std::string& generator_path,
                    const std::string& out_csv) {
    return run_guarded([&]() {
        AppConfig cfg = resolve_config(g);
        std::vector<std::uint8_t> corpus = require_corpus(cfg);
        BaseModel model = load_model(model_path, cfg.train.precision);
        GeneratorParams params =
            load_generator(generator_path, model.config, cfg.train.precision);
        ExampleSplit split =
            split_examples(corpus, cfg.train.segment_length,
                           cfg.train.heldout_segments, cfg.train.seed);
        if (split.heldout.empty())
            throw DataError("no held-out segments (check heldout_segments)");
        ValidationMetrics vm = validate(model, params, split.heldout,
                                        cfg.train.chunk_size,
                                        cfg.train.num_threads);
        ValidationMetrics cb =
            validate_closed_book(model, split.heldout, cfg.train.num_threads);

        std::string csv =
            "model,generator,norm,reconstruction_ppl,completion_ppl,"
            "closed_book_reconstruction_ppl,closed_book_completion_ppl\n";
        char row[512];
        std::snprintf(row, sizeof(row), "%s,%s,%s,%.6f,%.6f,%.6f,%.6f\n",
                      model_path.c_str(), generator_path.c_str(),
                      to_string(params.config.norm), vm.reconstruction_ppl,
                      vm.completion_ppl, cb.reconstruction_ppl,
                      cb.completion_ppl);
        csv += row;
        std::cout << csv;
        if (!out_csv.empty()) {
            std::ofstream os(out_csv, std::ios::trunc);
            if (!os) throw DataError("cannot open '" + out_csv + "'");
            os << csv;
        }
        return 0;
    });
}

inline int cmd_recall_bench(const GlobalOptions& g,
                            const std::string& model_path,
                            const std::string& generator_path, int pairs,
                            const std::string& out_json) {
    return run_guarded([&]() {
        AppConfig cfg = resolve_config(g);
        BaseModel model = load_model(model_path, cfg.train.precision);
        GeneratorParams params =
            load_generator(generator_path, model.config, cfg.train.precision);
        RecallReport r = run_recall_bench(model, params, pairs,
                                          g.seed.value_or(cfg.train.seed),
                                          cfg.train.chunk_size);
        char buf[512];
        std::snprintf(
            buf, sizeof(buf),
            "{\"pairs\":%d,\"adapted_exact_match\":%.6f,"
            "\"adapted_token_f1\":%.6f,\"control_exact_match\":%.6f,"
            "\"control_token_f1\":%.6f}\n",
            r.pairs, r.adapted_exact_match, r.adapted_token_f1,
            r.control_exact_match, r.control_token_f1);
        std::cout << buf;
        if (!out_json.empty()) {
            std::ofstream os(out_json, std::ios::trunc);
            if (!os) throw DataError("cannot open '" + out_json + "'");
            os << buf;
        }
        return 0;
    });
}

inline int cmd_flops_report(const GlobalOptions& g,
                            const std::vector<std::uint64_t>& context_lengths,
                            int query_tokens, const std::string& out_csv) {
    return run_guarded([&]() {
        AppConfig cfg = resolve_config(g);
        std::vector<FlopsRow> rows = build_flops_report(
            cfg.model, cfg.generator.injection,
            static_cast<std::uint64_t>(cfg.generator.d_r),
            static_cast<std::uint64_t>(cfg.generator.rank), context_lengths,
            static_cast<std::uint64_t>(query_tokens),
            static_cast<std::uint64_t>(cfg.train.chunk_size));
        const std::string csv = flops_report_csv(rows);
        std::cout << csv;
        if (!out_csv.empty()) {
            std::ofstream os(out_csv, std::ios::trunc);
            if (!os) throw DataError("cannot open '" + out_csv + "'");
            os << csv;
        }
        return 0;
    });
}

inline int cmd_gradcheck(const GlobalOptions& g) {
    return run_guarded([&]() {
        AppConfig cfg = resolve_config(g);
        ModelConfig mc;
        mc.num_layers = 2;
        mc.hidden_dim = 8;
        mc.num_heads = 2;
        mc.ffn_dim = 16;
        mc.max_seq_len = 64;
        GeneratorConfig gc;
        gc.d_r = 4;
        gc.rank = 2;
        gc.injection = cfg.generator.injection;

        const std::uint64_t seed = g.seed.value_or(112);
        BaseModel model = BaseModel::init(mc, 110);
        GeneratorParams params = GeneratorParams::init(mc, gc, 111);
        Rng rng(seed);
        TrainingExample ex;
        for (int i = 0; i < 16; ++i)
            ex.tokens.push_back(static_cast<int>(rng.uniform_int(0, 255)));
        ex.split = 8;

        Tape tape;
        ModelNodes mn = ModelNodes::lift(tape, model, false);
        GeneratorNodes gn = GeneratorNodes::lift(tape, params, true);
        LossNodes loss = build_example_loss(tape, mn, gn, gc.injection, ex, 4,
                                            false, Objective::Both);
        tape.backward(loss.total);
        std::vector<Matrix> grads;
        for (NodeRef leaf : gn.leaves()) grads.push_back(tape.grad_of(leaf));

        std::vector<Matrix> vec;
        params.for_each_param([&](const Matrix& m) { vec.push_back(m); });
        auto f = [&](const std::vector<Matrix>& v) {
            GeneratorParams p = params;
            std::size_t i = 0;
            p.for_each_param_mut([&](Matrix& m) { m = v[i++]; });
            Tape t(false);
            ModelNodes m2 = ModelNodes::lift(t, model, false);
            GeneratorNodes g2 = GeneratorNodes::lift(t, p, false);
            return build_example_loss(t, m2, g2, gc.injection, ex, 4, false,
                                      Objective::Both)
                .total->value(0, 0);
        };
        const double err = finite_difference_check(f, vec, grads, 1e-5);
        std::printf("max relative gradient error: %.3e (tolerance 1e-4)\n",
                    err);
        return err <= 1e-4 ? 0 : 1;
    });
}

}  // namespace genadapt::cli
