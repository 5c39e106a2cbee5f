#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "genadapt/train.hpp"

namespace genadapt {

// Everything the CLI needs, resolved from one flat key=value file.
struct AppConfig {
    ModelConfig model;
    GeneratorConfig generator;
    TrainConfig train;
    BaseTrainConfig base_train;
    std::vector<std::string> corpus_paths;
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("key '" + key + "': expected a boolean, got '" + v + "'");
}

inline int parse_int(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const int out = std::stoi(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': expected an integer, got '" + v +
                          "'");
    }
}

inline double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double out = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': expected a number, got '" + v +
                          "'");
    }
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const std::uint64_t out = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': expected an unsigned integer, got '" +
                          v + "'");
    }
}

inline std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

}  // namespace detail

// Flat `key = value` lines; `#` starts a comment; unknown keys are errors.
inline AppConfig parse_config_text(const std::string& text) {
    AppConfig cfg;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) +
                              ": expected 'key = value', got '" + line + "'");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (key.empty() || value.empty())
            throw ConfigError("line " + std::to_string(lineno) +
                              ": empty key or value");

        if (key == "vocab_size") cfg.model.vocab_size = detail::parse_int(key, value);
        else if (key == "num_layers") cfg.model.num_layers = detail::parse_int(key, value);
        else if (key == "hidden_dim") cfg.model.hidden_dim = detail::parse_int(key, value);
        else if (key == "num_heads") cfg.model.num_heads = detail::parse_int(key, value);
        else if (key == "ffn_dim") cfg.model.ffn_dim = detail::parse_int(key, value);
        else if (key == "max_seq_len") cfg.model.max_seq_len = detail::parse_int(key, value);
        else if (key == "d_r") cfg.generator.d_r = detail::parse_int(key, value);
        else if (key == "rank") cfg.generator.rank = detail::parse_int(key, value);
        else if (key == "alpha") cfg.generator.alpha = detail::parse_double(key, value);
        else if (key == "norm") cfg.generator.norm = parse_norm_kind(value);
        else if (key == "injection_targets") {
            cfg.generator.injection.targets.clear();
            for (const std::string& t : detail::split_list(value))
                cfg.generator.injection.targets.push_back(
                    parse_injection_target(t));
        } else if (key == "objective") cfg.train.objective = parse_objective(value);
        else if (key == "learning_rate") cfg.train.learning_rate = detail::parse_double(key, value);
        else if (key == "warmup_steps") cfg.train.warmup_steps = detail::parse_int(key, value);
        else if (key == "total_steps") cfg.train.total_steps = detail::parse_int(key, value);
        else if (key == "weight_decay") cfg.train.weight_decay = detail::parse_double(key, value);
        else if (key == "batch_size") cfg.train.batch_size = detail::parse_int(key, value);
        else if (key == "chunk_size") cfg.train.chunk_size = detail::parse_int(key, value);
        else if (key == "segment_length") cfg.train.segment_length = detail::parse_int(key, value);
        else if (key == "truncate_unroll") cfg.train.truncate_unroll = detail::parse_bool(key, value);
        else if (key == "seed") cfg.train.seed = detail::parse_u64(key, value);
        else if (key == "precision") {
            if (value == "f32") cfg.train.precision = Precision::f32;
            else if (value == "f64") cfg.train.precision = Precision::f64;
            else throw ConfigError("key 'precision': expected f32 or f64, got '" + value + "'");
        } else if (key == "num_threads") cfg.train.num_threads = detail::parse_int(key, value);
        else if (key == "heldout_segments") cfg.train.heldout_segments = detail::parse_int(key, value);
        else if (key == "validate_every") cfg.train.validate_every = detail::parse_int(key, value);
        else if (key == "base_learning_rate") cfg.base_train.learning_rate = detail::parse_double(key, value);
        else if (key == "base_warmup_steps") cfg.base_train.warmup_steps = detail::parse_int(key, value);
        else if (key == "base_total_steps") cfg.base_train.total_steps = detail::parse_int(key, value);
        else if (key == "base_weight_decay") cfg.base_train.weight_decay = detail::parse_double(key, value);
        else if (key == "base_batch_size") cfg.base_train.batch_size = detail::parse_int(key, value);
        else if (key == "corpus") cfg.corpus_paths = detail::split_list(value);
        else throw ConfigError("unknown config key '" + key + "'");
    }
    // Shared fields flow into the base-training phase.
    cfg.base_train.segment_length = cfg.train.segment_length;
    cfg.base_train.seed = cfg.train.seed;
    cfg.base_train.num_threads = cfg.train.num_threads;
    cfg.base_train.heldout_segments = cfg.train.heldout_segments;
    return cfg;
}

inline AppConfig parse_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file '" + path + "'");
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_config_text(ss.str());
}

inline std::string render_config(const AppConfig& cfg) {
    std::ostringstream os;
    os << "vocab_size = " << cfg.model.vocab_size << "\n"
       << "num_layers = " << cfg.model.num_layers << "\n"
       << "hidden_dim = " << cfg.model.hidden_dim << "\n"
       << "num_heads = " << cfg.model.num_heads << "\n"
       << "ffn_dim = " << cfg.model.ffn_dim << "\n"
       << "max_seq_len = " << cfg.model.max_seq_len << "\n"
       << "d_r = " << cfg.generator.d_r << "\n"
       << "rank = " << cfg.generator.rank << "\n"
       << "alpha = " << cfg.generator.alpha << "\n"
       << "norm = " << to_string(cfg.generator.norm) << "\n"
       << "injection_targets = ";
    for (std::size_t i = 0; i < cfg.generator.injection.targets.size(); ++i)
        os << (i ? "," : "")
           << to_string(cfg.generator.injection.targets[i]);
    os << "\n"
       << "objective = " << to_string(cfg.train.objective) << "\n"
       << "learning_rate = " << cfg.train.learning_rate << "\n"
       << "warmup_steps = " << cfg.train.warmup_steps << "\n"
       << "total_steps = " << cfg.train.total_steps << "\n"
       << "weight_decay = " << cfg.train.weight_decay << "\n"
       << "batch_size = " << cfg.train.batch_size << "\n"
       << "chunk_size = " << cfg.train.chunk_size << "\n"
       << "segment_length = " << cfg.train.segment_length << "\n"
       << "truncate_unroll = " << (cfg.train.truncate_unroll ? "true" : "false")
       << "\n"
       << "seed = " << cfg.train.seed << "\n"
       << "precision = " << to_string(cfg.train.precision) << "\n"
       << "num_threads = " << cfg.train.num_threads << "\n"
       << "heldout_segments = " << cfg.train.heldout_segments << "\n"
       << "validate_every = " << cfg.train.validate_every << "\n"
       << "base_learning_rate = " << cfg.base_train.learning_rate << "\n"
       << "base_warmup_steps = " << cfg.base_train.warmup_steps << "\n"
       << "base_total_steps = " << cfg.base_train.total_steps << "\n"
       << "base_weight_decay = " << cfg.base_train.weight_decay << "\n"
       << "base_batch_size = " << cfg.base_train.batch_size << "\n"
       << "corpus = ";
    for (std::size_t i = 0; i < cfg.corpus_paths.size(); ++i)
        os << (i ? "," : "") << cfg.corpus_paths[i];
    os << "\n";
    return os.str();
}

}  // namespace genadapt
