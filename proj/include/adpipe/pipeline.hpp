#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "adpipe/alignment.hpp"
#include "adpipe/contextual_ema.hpp"
#include "adpipe/dataio.hpp"
#include "adpipe/narration.hpp"

namespace adpipe::pipeline {

template <class T>
using VarId = typename ag::Tape<T>::VarId;

/// Stage-II settings shared by training, evaluation and analysis.
struct Stage2Config {
    std::size_t window = 16;  // clips per context window (N)
    std::size_t frames = 8;   // frames fed per clip (T)
    std::size_t prompts = 4;  // resampled vectors per clip (T')
    ema::EmaConfig em;
    ema::FusionConfig fusion;
    narr::DecoderConfig decoder;
    bool use_ema = true;    // reconstruction branch (and base refinement)
    bool use_xattn = true;  // cross-attention branch, needs use_ema for bases
    bool use_dist = true;   // distinctive loss term
    bool consecutive = true;
    std::size_t stride = 1;
    double learning_rate = 1e-3;   // peak rate under the schedule
    double warmup_fraction = 0.1;  // linear warmup, then cosine decay; 0 disables
    std::size_t epochs = 10;
    std::size_t batch_windows = 8;  // gradient step granularity
    std::uint64_t seed = 0;
    bool train_decoder = true;
    bool train_adapter = false;

    void validate() const {
        if (window < 1 || frames < 1 || prompts < 1)
            throw std::invalid_argument("stage2: window, frames and prompts must be >= 1");
        if (batch_windows < 1) throw std::invalid_argument("stage2: batch_windows must be >= 1");
        em.validate();
        fusion.validate();
        decoder.validate();
    }
};

/// One context window, fully tokenized: per-clip frames (already subsampled
/// to T rows), per-clip character-name ids, and the final clip's target.
template <class T>
struct WindowInput {
    std::vector<Tensor<T>> clip_frames;
    std::vector<std::vector<int>> name_ids;
    std::vector<int> target;
    narr::DistinctiveSet distinctive;
    std::uint32_t target_clip_id = 0;
    std::uint32_t movie_id = 0;
};

/// Evenly spaced frame row selection (first and last rows always included
/// when the clip is longer than `count`).
template <class T>
Tensor<T> subsample_frames(const TensorF& frames, std::size_t count) {
    const std::size_t n = frames.rows();
    const std::size_t take = std::min(n, count);
    Tensor<T> out({take, frames.cols()});
    for (std::size_t j = 0; j < take; ++j) {
        const std::size_t src =
            take == 1 ? 0 : (j * (n - 1) + (take - 1) / 2) / (take - 1);
        for (std::size_t c = 0; c < frames.cols(); ++c)
            out.at(j, c) = static_cast<T>(frames.at(src, c));
    }
    return out;
}

template <class T>
WindowInput<T> make_window_input(const data::Corpus& corpus,
                                 const std::vector<std::size_t>& window,
                                 const data::Vocabulary& vocab,
                                 const std::map<std::uint32_t, std::string>& characters,
                                 std::size_t frames, const std::set<int>& stopwords = {}) {
    if (window.empty()) throw std::invalid_argument("window_input: empty window");
    WindowInput<T> input;
    std::vector<std::vector<int>> contexts;
    for (std::size_t i = 0; i < window.size(); ++i) {
        const data::ClipRecord& rec = corpus.records[window[i]];
        input.clip_frames.push_back(subsample_frames<T>(rec.frames, frames));
        const auto it = characters.find(rec.clip_id);
        input.name_ids.push_back(it == characters.end() ? std::vector<int>()
                                                        : data::tokenize(it->second, vocab));
        const std::vector<int> ids = data::tokenize(rec.ad_text, vocab);
        if (i + 1 == window.size()) {
            input.target = ids;
            input.target_clip_id = rec.clip_id;
            input.movie_id = rec.movie_id;
        } else {
            contexts.push_back(ids);
        }
    }
    input.distinctive = narr::build_distinctive_set(input.target, contexts, stopwords);
    return input;
}

template <class T>
struct WindowLoss {
    VarId<T> total{};
    T auto_part = 0;
    T dist_part = 0;
    narr::PromptSequence prompt;
};

/// adapter -> per-clip resampler -> (optional) EM over the window ->
/// (optional) cross-attention -> fusion/projection -> decoder losses.
template <class T>
WindowLoss<T> build_window_loss(ag::Tape<T>& tape, const ag::ParamVars<T>& params,
                                const WindowInput<T>& input, const Stage2Config& config) {
    std::vector<VarId<T>> clip_vectors;
    for (const Tensor<T>& frames : input.clip_frames) {
        VarId<T> adapted = align::adapt_frames(tape, params, tape.constant(frames));
        clip_vectors.push_back(ema::resample_node(tape, params, adapted));
    }
    VarId<T> h = tape.concat_rows(clip_vectors);

    VarId<T> hat{};
    VarId<T> tilde{};
    bool have_hat = false, have_tilde = false;
    if (config.use_ema) {
        auto [z, m] = ema::em_iterate_node(tape, h, params(ema::kEmaBases), config.em.iterations,
                                           static_cast<T>(config.em.tau));
        hat = tape.matmul(z, m);
        have_hat = true;
        if (config.use_xattn) {
            tilde = ema::cross_attend_node(tape, params, h, m);
            have_tilde = true;
        }
    }
    VarId<T> fused = ema::fuse_project_node(tape, params, h, have_hat ? &hat : nullptr,
                                            have_tilde ? &tilde : nullptr, config.fusion);

    WindowLoss<T> out;
    out.prompt = narr::assemble_prompt(input.clip_frames.size(), config.prompts, input.name_ids,
                                       input.target, config.decoder.context);
    VarId<T> auto_id = narr::auto_loss_node(tape, params, config.decoder, out.prompt, fused);
    out.auto_part = tape.scalar(auto_id);
    out.total = auto_id;
    if (config.use_dist) {
        VarId<T> dist_id = narr::distinctive_loss_node(tape, params, config.decoder, out.prompt,
                                                       fused, input.distinctive);
        out.dist_part = tape.scalar(dist_id);
        out.total = tape.add(auto_id, dist_id);
    }
    return out;
}

/// Per-window forward without a loss: the three branch matrices and the
/// fused projection, as plain tensors (analysis and export).
template <class T>
struct WindowFeatures {
    Tensor<T> raw;            // H
    Tensor<T> reconstructed;  // Z M (zeros when the branch is off)
    Tensor<T> attended;       // cross-attention output (zeros when off)
    Tensor<T> fused;          // projected decoder input
};

template <class T>
WindowFeatures<T> window_features(const ParamStore<T>& models, const WindowInput<T>& input,
                                  const Stage2Config& config) {
    ag::Tape<T> tape;
    auto params = ag::make_constants(tape, models);
    std::vector<VarId<T>> clip_vectors;
    for (const Tensor<T>& frames : input.clip_frames) {
        VarId<T> adapted = align::adapt_frames(tape, params, tape.constant(frames));
        clip_vectors.push_back(ema::resample_node(tape, params, adapted));
    }
    VarId<T> h = tape.concat_rows(clip_vectors);
    WindowFeatures<T> out;
    out.raw = tape.value(h);
    out.reconstructed = Tensor<T>(out.raw.shape);
    out.attended = Tensor<T>(out.raw.shape);

    VarId<T> hat{};
    VarId<T> tilde{};
    bool have_hat = false, have_tilde = false;
    if (config.use_ema) {
        auto [z, m] = ema::em_iterate_node(tape, h, params(ema::kEmaBases), config.em.iterations,
                                           static_cast<T>(config.em.tau));
        hat = tape.matmul(z, m);
        have_hat = true;
        out.reconstructed = tape.value(hat);
        if (config.use_xattn) {
            tilde = ema::cross_attend_node(tape, params, h, m);
            have_tilde = true;
            out.attended = tape.value(tilde);
        }
    }
    VarId<T> fused = ema::fuse_project_node(tape, params, h, have_hat ? &hat : nullptr,
                                            have_tilde ? &tilde : nullptr, config.fusion);
    out.fused = tape.value(fused);
    return out;
}

/// Greedy (or sampled) AD for the window's final clip.
template <class T>
std::vector<int> generate_for_window(const ParamStore<T>& models, const WindowInput<T>& input,
                                     const Stage2Config& config, std::size_t max_len,
                                     narr::DecodeMode mode = narr::DecodeMode::kGreedy,
                                     double temperature = 1.0, std::uint64_t seed = 0) {
    WindowFeatures<T> features = window_features(models, input, config);
    narr::PromptSequence prompt = narr::assemble_prompt(
        input.clip_frames.size(), config.prompts, input.name_ids, {}, config.decoder.context);
    return narr::generate(models, config.decoder, prompt, features.fused, max_len, mode,
                          temperature, seed);
}

/// Everything Stage-II owns, in one deterministic store. The adapter slot is
/// copied in (Stage-I output or identity).
template <class T>
ParamStore<T> init_stage2_models(const ParamStore<T>& adapter, std::size_t channels,
                                 const Stage2Config& config, Rng& rng) {
    ParamStore<T> models;
    models.create(align::kAdapterWeight, adapter.at(align::kAdapterWeight).shape) =
        adapter.at(align::kAdapterWeight);
    models.create(align::kAdapterBias, adapter.at(align::kAdapterBias).shape) =
        adapter.at(align::kAdapterBias);
    ema::ResamplerConfig rc;
    rc.prompts = config.prompts;
    rc.channels = channels;
    ema::init_resampler(models, rc, rng);
    ema::init_bases(models, config.em.bases, channels, rng);
    ema::init_cross_attention(models, channels, rng);
    ema::init_fusion(models, channels, config.decoder.dim, rng);
    narr::init_decoder(models, config.decoder, rng);
    return models;
}

struct Stage2StepLog {
    std::size_t epoch = 0;
    std::size_t step = 0;
    double auto_loss = 0.0;
    double dist_loss = 0.0;
    double total_loss = 0.0;
};

template <class T>
struct Stage2Result {
    ParamStore<T> models;
    std::vector<Stage2StepLog> log;
    double first_epoch_mean = 0.0;
    double final_epoch_mean = 0.0;
    std::size_t skipped_movies = 0;
};

/// Which parameter groups receive gradients. The EM bases, resampler,
/// cross-attention and projector always train; the decoder and adapter are
/// flag-controlled.
inline bool stage2_trainable(const std::string& name, bool train_decoder, bool train_adapter) {
    if (name.rfind("decoder.", 0) == 0) return train_decoder;
    if (name.rfind("adapter.", 0) == 0) return train_adapter;
    return true;
}

template <class T>
Stage2Result<T> train_stage2(const data::Corpus& corpus, const data::Vocabulary& vocab,
                             const std::map<std::uint32_t, std::string>& characters,
                             const ParamStore<T>& adapter, const Stage2Config& config,
                             const std::set<int>& stopwords = {}) {
    config.validate();
    corpus.validate();
    Stage2Result<T> result;
    Rng init_rng(config.seed);
    result.models = init_stage2_models(adapter, corpus.channels, config, init_rng);

    data::WindowSet windows =
        data::sample_windows(corpus, config.window, config.consecutive, config.seed ^ 0x77,
                             config.stride);
    result.skipped_movies = windows.skipped_movies;
    std::vector<WindowInput<T>> inputs;
    inputs.reserve(windows.windows.size());
    for (const auto& w : windows.windows)
        inputs.push_back(
            make_window_input<T>(corpus, w, vocab, characters, config.frames, stopwords));

    const auto trainable = [&](const std::string& name) {
        return stage2_trainable(name, config.train_decoder, config.train_adapter);
    };

    AdamOptimizer<T> optimizer(config.learning_rate);
    std::vector<std::size_t> order(inputs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng loop_rng(config.seed + 1);

    std::map<std::string, Tensor<T>> grad_accum;
    for (const auto& [name, tensor] : result.models) grad_accum[name] = Tensor<T>(tensor.shape);

    // linear warmup then cosine decay over the whole run
    const std::size_t steps_per_epoch =
        (order.size() + config.batch_windows - 1) / config.batch_windows;
    const double total_steps =
        static_cast<double>(std::max<std::size_t>(1, steps_per_epoch * config.epochs));
    const double warmup_steps = config.warmup_fraction * total_steps;
    std::size_t global_step = 0;
    const auto scheduled_lr = [&]() {
        if (config.warmup_fraction <= 0.0) return config.learning_rate;
        const double s = static_cast<double>(global_step);
        if (s < warmup_steps) return config.learning_rate * (s + 1.0) / warmup_steps;
        const double progress = (s - warmup_steps) / std::max(1.0, total_steps - warmup_steps);
        return config.learning_rate * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
    };

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        loop_rng.shuffle(order.begin(), order.end());
        double epoch_sum = 0.0;
        std::size_t steps = 0, windows_seen = 0;
        for (std::size_t pos = 0; pos < order.size(); pos += config.batch_windows) {
            const std::size_t batch_end = std::min(order.size(), pos + config.batch_windows);
            double auto_sum = 0.0, dist_sum = 0.0, total_sum = 0.0;
            std::size_t in_batch = 0;
            for (auto& [name, g] : grad_accum) std::fill(g.data.begin(), g.data.end(), T(0));
            for (std::size_t b = pos; b < batch_end; ++b) {
                const WindowInput<T>& input = inputs[order[b]];
                if (input.target.empty()) continue;
                double auto_part = 0.0, dist_part = 0.0;
                const LossBuilder<T> builder = [&](ag::Tape<T>& tape,
                                                   const ag::ParamVars<T>& params) {
                    WindowLoss<T> loss = build_window_loss(tape, params, input, config);
                    auto_part = static_cast<double>(loss.auto_part);
                    dist_part = static_cast<double>(loss.dist_part);
                    return loss.total;
                };
                result.models.zero_grads();
                total_sum += static_cast<double>(
                    evaluate_with_gradients(result.models, builder, trainable));
                auto_sum += auto_part;
                dist_sum += dist_part;
                for (auto& [name, g] : grad_accum) {
                    const Tensor<T>& step_grad = result.models.grad(name);
                    for (std::size_t i = 0; i < g.numel(); ++i) g.data[i] += step_grad.data[i];
                }
                ++in_batch;
            }
            if (!in_batch) continue;
            const T inv = T(1) / static_cast<T>(in_batch);
            for (auto& [name, g] : grad_accum) {
                Tensor<T>& slot = result.models.grad(name);
                for (std::size_t i = 0; i < g.numel(); ++i) slot.data[i] = g.data[i] * inv;
            }
            optimizer.set_learning_rate(scheduled_lr());
            ++global_step;
            optimizer.step(result.models);
            const double denom = static_cast<double>(in_batch);
            result.log.push_back(
                {epoch, steps, auto_sum / denom, dist_sum / denom, total_sum / denom});
            epoch_sum += total_sum;
            windows_seen += in_batch;
            ++steps;
        }
        if (windows_seen) {
            const double mean = epoch_sum / static_cast<double>(windows_seen);
            if (epoch == 0) result.first_epoch_mean = mean;
            result.final_epoch_mean = mean;
        }
    }
    return result;
}

/// CSV columns: epoch,step,L_auto,L_dist,L_II.
void write_stage2_loss_csv(const std::vector<Stage2StepLog>& log, const std::string& path);

}  // namespace adpipe::pipeline
