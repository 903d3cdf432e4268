#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "adpipe/dataio.hpp"

namespace adpipe::cfg {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Every tunable of the pipeline as one flat key=value namespace. Files and
/// CLI flags write the same keys; flag > file > default. Unknown keys and
/// out-of-range values are rejected with the offending key named.
struct RunConfig {
    std::uint64_t seed = 0;
    std::size_t threads = 1;

    data::SyntheticSpec synthetic;

    // stage 1
    double gamma = 0.5;
    double tau_f = 0.1;
    std::size_t frames_sampled = 1;
    double logit_scale = 1.0 / 0.07;
    double s1_lr = 1e-2;
    std::size_t s1_epochs = 5;
    std::size_t s1_batch = 8;

    // stage 2
    std::size_t window_n = 16;
    std::size_t frames_t = 8;
    std::size_t prompts_t = 4;
    std::size_t bases_k = 32;
    std::size_t em_iters = 3;
    double tau_e = 0.05;
    double alpha = 3.0;
    double beta = 1.0;
    double s2_lr = 1e-3;
    std::size_t s2_epochs = 10;
    std::size_t window_stride = 1;
    std::size_t batch_windows = 8;
    bool consecutive = true;
    bool use_ema = true;
    bool use_xattn = true;
    bool use_dist = true;
    bool train_decoder = true;
    bool train_adapter = false;

    // decoder
    std::size_t dec_dim = 64;
    std::size_t dec_layers = 2;
    std::size_t dec_heads = 2;
    std::size_t dec_context = 256;

    // eval / analyze
    std::size_t recall_k = 5;
    std::size_t recall_n = 16;
    std::string similarity = "tfidf-cosine";
    double rouge_beta = 1.2;
    std::size_t max_generate_len = 12;
    std::size_t redundancy_window = 3;

    /// Sets one key, validating range; throws ConfigError naming the key.
    void set(const std::string& key, const std::string& value);

    /// Ordered key=value snapshot of every setting.
    std::vector<std::pair<std::string, std::string>> snapshot() const;

    /// Cross-field checks that single keys cannot see (e.g. k <= N).
    void validate() const;

    static RunConfig from_sources(const std::string& file_path,
                                  const std::map<std::string, std::string>& overrides);
};

/// key=value per line; '#' starts a comment; blank lines ignored.
std::map<std::string, std::string> parse_config_file(const std::string& path);

/// FNV-1a 64-bit digest of a file's bytes, as 16 hex chars.
std::string file_digest(const std::string& path);

/// Run provenance record, written as JSON before the run starts and
/// finalized (with end timestamp and output digests) afterwards.
struct RunManifest {
    RunConfig config;
    std::string version;
    std::string started;
    std::string finished;
    std::vector<std::pair<std::string, std::string>> outputs;  // path, digest

    void write(const std::string& path) const;
    static std::string now_iso8601();
};

inline constexpr const char* kVersionString = "adpipe 0.1.0";

}  // namespace adpipe::cfg
