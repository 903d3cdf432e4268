#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "adpipe/metrics.hpp"
#include "adpipe/pipeline.hpp"

namespace adpipe::pipeline {

struct EvalParams {
    std::size_t recall_k = 5;
    std::size_t recall_n = 16;
    std::string similarity = "tfidf-cosine";
    double rouge_beta = 1.2;
    std::size_t max_len = 12;
    std::size_t threads = 1;
};

struct EvalItem {
    std::uint32_t clip_id = 0;
    std::uint32_t movie_id = 0;
    std::vector<int> candidate;
    std::vector<int> reference;
    double rouge = 0.0;
    double cider = 0.0;
    bool recall_hit = false;
    double distinct_recall = 0.0;  // fraction of gold distinctive tokens generated
    bool has_distinctive = false;
};

struct EvalReport {
    std::vector<EvalItem> items;  // window targets in corpus time order
    double rouge_mean = 0.0;
    double cider = 0.0;
    double recall = 0.0;
    double distinct_recall = 0.0;
    double redundancy_contrast = 0.0;
};

/// Mean-pooled per-clip feature matrices, one per movie, for the redundancy
/// statistic.
inline std::vector<TensorD> pooled_clip_features(const data::Corpus& corpus) {
    std::vector<TensorD> features;
    for (auto [begin, end] : corpus.movie_ranges()) {
        TensorD pooled({end - begin, corpus.channels});
        for (std::size_t i = begin; i < end; ++i) {
            const TensorD mean = kernels::mean_rows(corpus.records[i].frames.cast<double>());
            std::copy(mean.data.begin(), mean.data.end(), pooled.row_ptr(i - begin));
        }
        features.push_back(kernels::l2_normalize_rows(pooled));
    }
    return features;
}

/// Generates an AD for every consecutive window's final clip and scores the
/// results. Generation is pure per window, so windows are fanned out over
/// `threads` workers and collected back in order.
template <class T>
EvalReport evaluate_model(const data::Corpus& corpus, const data::Vocabulary& vocab,
                          const std::map<std::uint32_t, std::string>& characters,
                          const ParamStore<T>& models, const Stage2Config& config,
                          const EvalParams& params) {
    EvalReport report;
    const data::WindowSet windows = data::sample_windows(corpus, config.window, true, 0);
    if (windows.windows.empty()) return report;

    std::vector<WindowInput<T>> inputs;
    inputs.reserve(windows.windows.size());
    for (const auto& w : windows.windows)
        inputs.push_back(make_window_input<T>(corpus, w, vocab, characters, config.frames));

    std::vector<std::vector<int>> candidates(inputs.size());
    const auto worker = [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i)
            candidates[i] = generate_for_window(models, inputs[i], config, params.max_len);
    };
    const std::size_t workers = std::max<std::size_t>(1, params.threads);
    if (workers == 1 || inputs.size() < 2 * workers) {
        worker(0, inputs.size());
    } else {
        std::vector<std::thread> pool;
        const std::size_t chunk = (inputs.size() + workers - 1) / workers;
        for (std::size_t w = 0; w < workers; ++w) {
            const std::size_t begin = w * chunk;
            const std::size_t end = std::min(inputs.size(), begin + chunk);
            if (begin < end) pool.emplace_back(worker, begin, end);
        }
        for (auto& t : pool) t.join();
    }

    std::vector<std::vector<int>> refs;
    std::vector<metrics::EvalPair> pairs;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        EvalItem item;
        item.clip_id = inputs[i].target_clip_id;
        item.movie_id = inputs[i].movie_id;
        item.candidate = candidates[i];
        item.reference = inputs[i].target;
        if (!inputs[i].distinctive.tokens.empty()) {
            item.has_distinctive = true;
            std::size_t found = 0;
            for (int id : inputs[i].distinctive.tokens)
                for (int c : candidates[i])
                    if (c == id) {
                        ++found;
                        break;
                    }
            item.distinct_recall =
                static_cast<double>(found) / static_cast<double>(inputs[i].distinctive.size());
        }
        report.items.push_back(std::move(item));
        refs.push_back(inputs[i].target);
        pairs.push_back({candidates[i], inputs[i].target, inputs[i].target_clip_id,
                         inputs[i].movie_id});
    }

    const metrics::SimilarityFn sim = metrics::SimilarityFn::from_name(params.similarity, refs, vocab);
    const auto recall =
        metrics::recall_at_k_within_n_detailed(pairs, params.recall_k, params.recall_n, sim);
    std::vector<std::vector<int>> cands;
    for (const auto& item : report.items) cands.push_back(item.candidate);
    const auto cider = metrics::cider_detailed(cands, refs);

    double rouge_sum = 0.0, distinct_sum = 0.0;
    std::size_t distinct_count = 0;
    for (std::size_t i = 0; i < report.items.size(); ++i) {
        EvalItem& item = report.items[i];
        item.rouge = metrics::rouge_l(item.candidate, item.reference, params.rouge_beta);
        item.cider = cider.per_pair[i];
        item.recall_hit = recall.hit[i];
        rouge_sum += item.rouge;
        if (item.has_distinctive) {
            distinct_sum += item.distinct_recall;
            ++distinct_count;
        }
    }
    report.rouge_mean = rouge_sum / static_cast<double>(report.items.size());
    report.cider = cider.mean;
    report.recall = recall.recall;
    report.distinct_recall = distinct_count ? distinct_sum / static_cast<double>(distinct_count) : 0.0;
    report.redundancy_contrast = metrics::redundancy_contrast(pooled_clip_features(corpus));
    return report;
}

}  // namespace adpipe::pipeline
