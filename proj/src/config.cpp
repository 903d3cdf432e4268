#include "adpipe/config.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace adpipe::cfg {

namespace {

struct Binding {
    const char* key;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const unsigned long long x = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument("");
        return x;
    } catch (...) {
        throw ConfigError("config key '" + key + "': expected an unsigned integer, got '" + v + "'");
    }
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double x = std::stod(v, &used);
        if (used != v.size() || !std::isfinite(x)) throw std::invalid_argument("");
        return x;
    } catch (...) {
        throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

#define U64_FIELD(KEY, EXPR, MIN)                                                              \
    Binding{KEY,                                                                               \
            [](RunConfig& c, const std::string& v) {                                           \
                const std::uint64_t x = parse_u64(KEY, v);                                     \
                constexpr std::uint64_t lower = (MIN);                                         \
                if constexpr (lower != 0)                                                      \
                    if (x < lower) throw ConfigError("config key '" KEY "': must be >= " #MIN);\
                c.EXPR = static_cast<decltype(c.EXPR)>(x);                                     \
            },                                                                                 \
            [](const RunConfig& c) { return std::to_string(c.EXPR); }}

#define DBL_FIELD(KEY, EXPR, CHECK, WHAT)                                                      \
    Binding{KEY,                                                                               \
            [](RunConfig& c, const std::string& v) {                                           \
                const double x = parse_double(KEY, v);                                         \
                if (!(CHECK)) throw ConfigError("config key '" KEY "': must be " WHAT);        \
                c.EXPR = x;                                                                    \
            },                                                                                 \
            [](const RunConfig& c) { return fmt_double(c.EXPR); }}

#define BOOL_FIELD(KEY, EXPR)                                                                  \
    Binding{KEY, [](RunConfig& c, const std::string& v) { c.EXPR = parse_bool(KEY, v); },      \
            [](const RunConfig& c) { return c.EXPR ? std::string("true") : std::string("false"); }}

const std::vector<Binding>& bindings() {
    static const std::vector<Binding> table = {
        U64_FIELD("seed", seed, 0),
        U64_FIELD("threads", threads, 1),

        U64_FIELD("syn.movies", synthetic.num_movies, 1),
        U64_FIELD("syn.clips_per_movie", synthetic.clips_per_movie, 1),
        U64_FIELD("syn.scene_length", synthetic.scene_length, 2),
        U64_FIELD("syn.channels", synthetic.channels, 2),
        U64_FIELD("syn.frames", synthetic.frames_per_clip, 1),
        U64_FIELD("syn.names", synthetic.name_pool, 1),
        U64_FIELD("syn.verbs", synthetic.verb_pool, 1),
        U64_FIELD("syn.nouns", synthetic.noun_pool, 1),
        U64_FIELD("syn.adjectives", synthetic.adjective_pool, 0),
        DBL_FIELD("syn.sigma", synthetic.noise_sigma, x >= 0.0, ">= 0"),
        DBL_FIELD("syn.distinct_weight", synthetic.distinct_weight, x >= 0.0, ">= 0"),

        DBL_FIELD("s1.gamma", gamma, x >= 0.0 && x <= 1.0, "in [0, 1]"),
        DBL_FIELD("s1.tau_f", tau_f, x > 0.0, "> 0"),
        U64_FIELD("s1.frames_sampled", frames_sampled, 1),
        DBL_FIELD("s1.logit_scale", logit_scale, x > 0.0, "> 0"),
        DBL_FIELD("s1.lr", s1_lr, x > 0.0, "> 0"),
        U64_FIELD("s1.epochs", s1_epochs, 0),
        U64_FIELD("s1.batch", s1_batch, 1),

        U64_FIELD("s2.window", window_n, 1),
        U64_FIELD("s2.frames", frames_t, 1),
        U64_FIELD("s2.prompts", prompts_t, 1),
        U64_FIELD("s2.bases", bases_k, 1),
        U64_FIELD("s2.em_iters", em_iters, 1),
        DBL_FIELD("s2.tau_e", tau_e, x > 0.0, "> 0"),
        DBL_FIELD("s2.alpha", alpha, x >= 0.0, ">= 0"),
        DBL_FIELD("s2.beta", beta, x >= 0.0, ">= 0"),
        DBL_FIELD("s2.lr", s2_lr, x > 0.0, "> 0"),
        U64_FIELD("s2.epochs", s2_epochs, 0),
        U64_FIELD("s2.stride", window_stride, 1),
        U64_FIELD("s2.batch", batch_windows, 1),
        BOOL_FIELD("s2.consecutive", consecutive),
        BOOL_FIELD("s2.use_ema", use_ema),
        BOOL_FIELD("s2.use_xattn", use_xattn),
        BOOL_FIELD("s2.use_dist", use_dist),
        BOOL_FIELD("s2.train_decoder", train_decoder),
        BOOL_FIELD("s2.train_adapter", train_adapter),

        U64_FIELD("dec.dim", dec_dim, 1),
        U64_FIELD("dec.layers", dec_layers, 1),
        U64_FIELD("dec.heads", dec_heads, 1),
        U64_FIELD("dec.context", dec_context, 8),

        U64_FIELD("eval.k", recall_k, 1),
        U64_FIELD("eval.n", recall_n, 1),
        Binding{"eval.similarity",
                [](RunConfig& c, const std::string& v) {
                    if (v != "lcs-f1" && v != "tfidf-cosine" && v != "char-ngram-cosine")
                        throw ConfigError(
                            "config key 'eval.similarity': must be one of lcs-f1, tfidf-cosine, "
                            "char-ngram-cosine");
                    c.similarity = v;
                },
                [](const RunConfig& c) { return c.similarity; }},
        DBL_FIELD("eval.rouge_beta", rouge_beta, x > 0.0, "> 0"),
        U64_FIELD("eval.max_len", max_generate_len, 1),
        U64_FIELD("analyze.window", redundancy_window, 1),
    };
    return table;
}

#undef U64_FIELD
#undef DBL_FIELD
#undef BOOL_FIELD

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
    for (const Binding& b : bindings()) {
        if (key == b.key) {
            b.set(*this, value);
            return;
        }
    }
    throw ConfigError("unknown config key '" + key + "'");
}

std::vector<std::pair<std::string, std::string>> RunConfig::snapshot() const {
    std::vector<std::pair<std::string, std::string>> out;
    out.reserve(bindings().size());
    for (const Binding& b : bindings()) out.emplace_back(b.key, b.get(*this));
    return out;
}

void RunConfig::validate() const {
    if (recall_k > recall_n) throw ConfigError("config key 'eval.k': must be <= eval.n");
    if (dec_dim % dec_heads != 0)
        throw ConfigError("config key 'dec.heads': must divide dec.dim");
    try {
        synthetic.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config key 'syn.*': ") + e.what());
    }
}

RunConfig RunConfig::from_sources(const std::string& file_path,
                                  const std::map<std::string, std::string>& overrides) {
    RunConfig config;
    if (!file_path.empty())
        for (const auto& [k, v] : parse_config_file(file_path)) config.set(k, v);
    for (const auto& [k, v] : overrides) config.set(k, v);
    config.validate();
    return config;
}

std::map<std::string, std::string> parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::map<std::string, std::string> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        const auto last = line.find_last_not_of(" \t\r");
        line = line.substr(first, last - first + 1);
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config file " + path + ":" + std::to_string(lineno) +
                              ": expected key=value");
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t");
            const auto e = s.find_last_not_of(" \t");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return out;
}

std::string file_digest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file for digest: " + path);
    std::uint64_t h = 0xcbf29ce484222325ull;
    char buf[4096];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ull;
        }
        if (!in) break;
    }
    char hex[17];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
    return hex;
}

std::string RunManifest::now_iso8601() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void RunManifest::write(const std::string& path) const {
    nlohmann::ordered_json j;
    j["version"] = version.empty() ? kVersionString : version;
    j["started"] = started;
    j["finished"] = finished;
    nlohmann::ordered_json cfg_json;
    for (const auto& [k, v] : config.snapshot()) cfg_json[k] = v;
    j["config"] = cfg_json;
    nlohmann::ordered_json out_json;
    for (const auto& [p, digest] : outputs) out_json[p] = digest;
    j["outputs"] = out_json;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write manifest: " + path);
    out << j.dump(2) << '\n';
}

}  // namespace adpipe::cfg
