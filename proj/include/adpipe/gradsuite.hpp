#pragma once

#include <string>
#include <vector>

#include "adpipe/pipeline.hpp"

namespace adpipe::gradsuite {

struct CheckResult {
    std::string name;
    GradReport report;
};

namespace detail {

template <class T>
align::AlignmentBatch<T> random_batch(Rng& rng, std::size_t b, std::size_t n, std::size_t m,
                                      std::size_t c) {
    align::AlignmentBatch<T> batch;
    for (std::size_t i = 0; i < b; ++i) {
        Tensor<T> clip({n, c});
        for (T& v : clip.data) v = static_cast<T>(rng.normal());
        batch.clips.push_back(clip);
        align::AdEntry<T> ad;
        ad.words = Tensor<T>({m, c});
        for (T& v : ad.words.data) v = static_cast<T>(rng.normal());
        ad.cls = kernels::l2_normalize_rows(kernels::mean_rows(ad.words));
        batch.ads.push_back(std::move(ad));
    }
    return batch;
}

}  // namespace detail

/// The standard finite-difference verification set: the two Stage-I losses
/// and their blend, the unrolled resampler/EM/fusion path, and the three
/// Stage-II losses, each instantiated `instances` times from the seed.
/// Runs at extended precision by default: central differences on parameters
/// with structurally zero gradients (attention key biases) otherwise measure
/// nothing but double round-off against the 1e-8 relative-error floor.
template <class T = long double>
std::vector<CheckResult> run_default_suite(std::uint64_t seed = 0, double h = 1e-5,
                                           double tolerance = 1e-4, std::size_t instances = 3) {
    std::vector<CheckResult> results;
    const std::size_t channels = 5;

    const auto stage1_check = [&](const std::string& name, double gamma, std::uint64_t s) {
        Rng rng(s);
        auto batch = detail::random_batch<T>(rng, 4, 2, 3, channels);
        std::vector<std::vector<std::size_t>> sampled(batch.size());
        for (std::size_t i = 0; i < batch.size(); ++i)
            sampled[i].push_back(rng.uniform_index(batch.clips[i].rows()));
        align::AlignmentConfig config;
        config.gamma = gamma;
        config.tau_f = 0.2;
        config.logit_scale = 3.0;
        ParamStore<T> adapter;
        Rng arng(s + 1000);
        align::init_adapter(adapter, channels, arng, 0.1);
        const LossBuilder<T> builder = [&](ag::Tape<T>& t, const ag::ParamVars<T>& p) {
            return align::stage1_node(t, p, batch, sampled, config);
        };
        results.push_back({name, grad_check(adapter, builder, h, tolerance)});
    };

    const auto ema_path_check = [&](const std::string& name, std::uint64_t s) {
        Rng rng(s);
        ParamStore<T> store;
        ema::ResamplerConfig rc;
        rc.prompts = 2;
        rc.channels = channels;
        ema::init_resampler(store, rc, rng);
        ema::init_bases(store, 2, channels, rng);
        ema::init_cross_attention(store, channels, rng);
        ema::init_fusion(store, channels, 4, rng);
        std::vector<Tensor<T>> clips(2, Tensor<T>({3, channels}));
        for (auto& clip : clips)
            for (T& v : clip.data) v = static_cast<T>(rng.normal());
        ema::FusionConfig fusion;
        const LossBuilder<T> builder = [&](ag::Tape<T>& t, const ag::ParamVars<T>& p) {
            std::vector<typename ag::Tape<T>::VarId> parts;
            for (const auto& clip : clips) parts.push_back(ema::resample_node(t, p, t.constant(clip)));
            auto hidden = t.concat_rows(parts);
            auto [z, m] = ema::em_iterate_node(t, hidden, p(ema::kEmaBases), 3, T(0.2));
            auto hat = t.matmul(z, m);
            auto tilde = ema::cross_attend_node(t, p, hidden, m);
            auto fused = ema::fuse_project_node(t, p, hidden, &hat, &tilde, fusion);
            return t.sum_all(t.mul(fused, fused));
        };
        results.push_back({name, grad_check(store, builder, h, tolerance)});
    };

    const auto stage2_check = [&](const std::string& name, bool with_auto, bool with_dist,
                                  std::uint64_t s) {
        Rng rng(s);
        pipeline::Stage2Config config;
        config.window = 2;
        config.frames = 2;
        config.prompts = 2;
        config.em.bases = 2;
        config.em.iterations = 2;
        config.decoder.vocab = 12;
        config.decoder.dim = 8;
        config.decoder.layers = 1;
        config.decoder.heads = 2;
        config.decoder.context = 24;
        config.decoder.ff_mult = 2;
        config.use_dist = with_dist;

        ParamStore<T> adapter;
        align::init_adapter(adapter, channels, rng, 0.1);
        Rng mrng(s + 1);
        ParamStore<T> models = pipeline::init_stage2_models(adapter, channels, config, mrng);

        pipeline::WindowInput<T> input;
        for (std::size_t i = 0; i < config.window; ++i) {
            Tensor<T> frames({config.frames, channels});
            for (T& v : frames.data) v = static_cast<T>(rng.normal());
            input.clip_frames.push_back(frames);
            input.name_ids.push_back({static_cast<int>(5 + rng.uniform_index(3))});
        }
        input.target = {static_cast<int>(8 + rng.uniform_index(2)),
                        static_cast<int>(10 + rng.uniform_index(2))};
        input.distinctive.tokens = {input.target[1]};

        const LossBuilder<T> builder = [&](ag::Tape<T>& t, const ag::ParamVars<T>& p) {
            if (with_auto && with_dist) {
                pipeline::WindowLoss<T> loss = pipeline::build_window_loss(t, p, input, config);
                return loss.total;
            }
            std::vector<typename ag::Tape<T>::VarId> parts;
            for (const auto& frames : input.clip_frames) {
                auto adapted = align::adapt_frames(t, p, t.constant(frames));
                parts.push_back(ema::resample_node(t, p, adapted));
            }
            auto hidden = t.concat_rows(parts);
            auto [z, m] =
                ema::em_iterate_node(t, hidden, p(ema::kEmaBases), config.em.iterations, T(0.05));
            auto hat = t.matmul(z, m);
            auto tilde = ema::cross_attend_node(t, p, hidden, m);
            auto fused = ema::fuse_project_node(t, p, hidden, &hat, &tilde, config.fusion);
            auto prompt = narr::assemble_prompt(input.clip_frames.size(), config.prompts,
                                                input.name_ids, input.target,
                                                config.decoder.context);
            return with_auto
                       ? narr::auto_loss_node(t, p, config.decoder, prompt, fused)
                       : narr::distinctive_loss_node(t, p, config.decoder, prompt, fused,
                                                     input.distinctive);
        };
        results.push_back({name, grad_check(models, builder, h, tolerance)});
    };

    for (std::size_t i = 0; i < instances; ++i) {
        const std::uint64_t s = seed + i * 101;
        const std::string tag = "#" + std::to_string(i);
        stage1_check("L_g " + tag, 1.0, s);
        stage1_check("L_f " + tag, 0.0, s + 7);
        stage1_check("L_I " + tag, 0.5, s + 13);
        ema_path_check("resample-em-fuse " + tag, s + 19);
        stage2_check("L_auto " + tag, true, false, s + 29);
        stage2_check("L_dist " + tag, false, true, s + 37);
        stage2_check("L_II " + tag, true, true, s + 43);
    }
    return results;
}

}  // namespace adpipe::gradsuite
