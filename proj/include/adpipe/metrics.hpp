#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "adpipe/dataio.hpp"
#include "adpipe/tensor.hpp"

namespace adpipe::metrics {

/// One candidate/reference pair, positioned in corpus time order so that
/// neighbourhood metrics can find its temporal context.
struct EvalPair {
    std::vector<int> candidate;
    std::vector<int> reference;
    std::uint32_t clip_id = 0;
    std::uint32_t movie_id = 0;
};

/// LCS F-measure: P = LCS/|cand|, R = LCS/|ref|, F = (1+b^2)PR / (R + b^2 P).
/// Returns 0 when either side is empty.
double rouge_l(const std::vector<int>& candidate, const std::vector<int>& reference,
               double beta = 1.2);

std::size_t lcs_length(const std::vector<int>& a, const std::vector<int>& b);

/// TF-IDF n-gram consensus score on the x10 scale. Per pair and n in 1..max_n,
/// the clipped cosine between TF-IDF vectors (IDF over the reference corpus)
/// with a Gaussian length penalty exp(-(lc-lr)^2 / 2 sigma^2); the result is
/// the pair mean of the n-average, times 10.
struct CiderResult {
    double mean = 0.0;
    std::vector<double> per_pair;
};
CiderResult cider_detailed(const std::vector<std::vector<int>>& candidates,
                           const std::vector<std::vector<int>>& references, std::size_t max_n = 4,
                           double sigma_len = 6.0);
double cider(const std::vector<std::vector<int>>& candidates,
             const std::vector<std::vector<int>>& references, std::size_t max_n = 4,
             double sigma_len = 6.0);

/// Text-similarity strategy used by recall_at_k_within_n. All strategies map
/// to [0, 1]; the cosine strategies are symmetric.
class SimilarityFn {
public:
    static SimilarityFn lcs_f1();
    static SimilarityFn tfidf_cosine(const std::vector<std::vector<int>>& reference_corpus);
    static SimilarityFn char_ngram_cosine(const data::Vocabulary& vocab, std::size_t n = 3);
    /// name is one of: lcs-f1, tfidf-cosine, char-ngram-cosine.
    static SimilarityFn from_name(const std::string& name,
                                  const std::vector<std::vector<int>>& reference_corpus,
                                  const data::Vocabulary& vocab);

    double operator()(const std::vector<int>& a, const std::vector<int>& b) const { return fn_(a, b); }
    const std::string& name() const { return name_; }

private:
    std::string name_;
    std::function<double(const std::vector<int>&, const std::vector<int>&)> fn_;
};

/// Fraction of candidates whose own reference ranks in the top k among the
/// n_window temporally nearest references of the same movie. The window is
/// centered (asymmetric by one for even n_window) and truncated at movie
/// boundaries. Ties rank by smaller temporal distance, then lower index.
struct RecallResult {
    double recall = 0.0;
    std::vector<bool> hit;
};
RecallResult recall_at_k_within_n_detailed(const std::vector<EvalPair>& pairs, std::size_t k,
                                           std::size_t n_window, const SimilarityFn& sim);
double recall_at_k_within_n(const std::vector<EvalPair>& pairs, std::size_t k, std::size_t n_window,
                            const SimilarityFn& sim);

/// Near-minus-far mean cosine similarity of per-clip features, one matrix
/// [num_clips x C] per movie, rows taken in time order. Pairs at temporal
/// index distance <= w are "near". Positive values mean neighbouring clips
/// look more alike than distant ones.
double redundancy_contrast(const std::vector<TensorD>& clip_features_per_movie, std::size_t w = 3);

}  // namespace adpipe::metrics
