#include "adpipe/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <set>
#include <stdexcept>
#include <unordered_map>

namespace adpipe::metrics {

std::size_t lcs_length(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.empty() || b.empty()) return 0;
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            if (a[i - 1] == b[j - 1])
                cur[j] = prev[j - 1] + 1;
            else
                cur[j] = std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

double rouge_l(const std::vector<int>& candidate, const std::vector<int>& reference, double beta) {
    if (candidate.empty() || reference.empty()) return 0.0;
    const double lcs = static_cast<double>(lcs_length(candidate, reference));
    if (lcs == 0.0) return 0.0;
    const double p = lcs / static_cast<double>(candidate.size());
    const double r = lcs / static_cast<double>(reference.size());
    const double b2 = beta * beta;
    return (1.0 + b2) * p * r / (r + b2 * p);
}

// ---- cider ----

namespace {

using NgramCounts = std::map<std::vector<int>, double>;

std::vector<NgramCounts> count_ngrams(const std::vector<int>& tokens, std::size_t max_n) {
    std::vector<NgramCounts> counts(max_n);
    for (std::size_t n = 1; n <= max_n; ++n) {
        if (tokens.size() < n) continue;
        for (std::size_t i = 0; i + n <= tokens.size(); ++i)
            counts[n - 1][std::vector<int>(tokens.begin() + i, tokens.begin() + i + n)] += 1.0;
    }
    return counts;
}

}  // namespace

CiderResult cider_detailed(const std::vector<std::vector<int>>& candidates,
                           const std::vector<std::vector<int>>& references, std::size_t max_n,
                           double sigma_len) {
    if (candidates.size() != references.size())
        throw std::invalid_argument("cider: candidate/reference count mismatch");
    if (references.empty()) throw std::invalid_argument("cider: empty corpus");

    // Document frequency over the reference corpus, per n-gram order.
    std::vector<NgramCounts> df(max_n);
    std::vector<std::vector<NgramCounts>> ref_counts;
    ref_counts.reserve(references.size());
    for (const auto& ref : references) {
        ref_counts.push_back(count_ngrams(ref, max_n));
        for (std::size_t n = 0; n < max_n; ++n)
            for (const auto& [ngram, c] : ref_counts.back()[n]) df[n][ngram] += 1.0;
    }
    const double log_corpus = std::log(static_cast<double>(references.size()));

    const auto tfidf = [&](const NgramCounts& counts, std::size_t n, double& norm) {
        NgramCounts vec;
        norm = 0.0;
        for (const auto& [ngram, c] : counts) {
            const auto it = df[n].find(ngram);
            const double d = std::log(std::max(1.0, it == df[n].end() ? 0.0 : it->second));
            const double v = c * (log_corpus - d);
            vec[ngram] = v;
            norm += v * v;
        }
        norm = std::sqrt(norm);
        return vec;
    };

    CiderResult result;
    result.per_pair.reserve(candidates.size());
    double total = 0.0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        const auto cand_counts = count_ngrams(candidates[i], max_n);
        const double delta =
            static_cast<double>(candidates[i].size()) - static_cast<double>(references[i].size());
        const double penalty = std::exp(-(delta * delta) / (2.0 * sigma_len * sigma_len));
        double score = 0.0;
        for (std::size_t n = 0; n < max_n; ++n) {
            double cand_norm = 0.0, ref_norm = 0.0;
            const NgramCounts cand_vec = tfidf(cand_counts[n], n, cand_norm);
            const NgramCounts ref_vec = tfidf(ref_counts[i][n], n, ref_norm);
            if (cand_norm == 0.0 || ref_norm == 0.0) continue;
            double dot = 0.0;
            for (const auto& [ngram, vc] : cand_vec) {
                const auto it = ref_vec.find(ngram);
                if (it != ref_vec.end()) dot += std::min(vc, it->second) * it->second;
            }
            score += penalty * dot / (cand_norm * ref_norm);
        }
        score *= 10.0 / static_cast<double>(max_n);
        result.per_pair.push_back(score);
        total += score;
    }
    result.mean = total / static_cast<double>(candidates.size());
    return result;
}

double cider(const std::vector<std::vector<int>>& candidates,
             const std::vector<std::vector<int>>& references, std::size_t max_n, double sigma_len) {
    return cider_detailed(candidates, references, max_n, sigma_len).mean;
}

// ---- similarity strategies ----

namespace {

double cosine(const std::map<std::string, double>& a, const std::map<std::string, double>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (const auto& [k, v] : a) {
        na += v * v;
        const auto it = b.find(k);
        if (it != b.end()) dot += v * it->second;
    }
    for (const auto& [k, v] : b) nb += v * v;
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace

SimilarityFn SimilarityFn::lcs_f1() {
    SimilarityFn s;
    s.name_ = "lcs-f1";
    s.fn_ = [](const std::vector<int>& a, const std::vector<int>& b) { return rouge_l(a, b, 1.0); };
    return s;
}

SimilarityFn SimilarityFn::tfidf_cosine(const std::vector<std::vector<int>>& reference_corpus) {
    // Smoothed IDF keeps every weight positive, so the cosine stays in [0,1].
    auto idf = std::make_shared<std::unordered_map<int, double>>();
    const double docs = static_cast<double>(reference_corpus.size());
    std::unordered_map<int, double> df;
    for (const auto& ref : reference_corpus) {
        std::set<int> seen(ref.begin(), ref.end());
        for (int tok : seen) df[tok] += 1.0;
    }
    for (const auto& [tok, d] : df) (*idf)[tok] = std::log((docs + 1.0) / (d + 1.0)) + 1.0;
    const double default_idf = std::log(docs + 1.0) + 1.0;

    SimilarityFn s;
    s.name_ = "tfidf-cosine";
    s.fn_ = [idf, default_idf](const std::vector<int>& a, const std::vector<int>& b) {
        const auto vec = [&](const std::vector<int>& toks) {
            std::map<std::string, double> v;
            for (int tok : toks) {
                const auto it = idf->find(tok);
                v[std::to_string(tok)] += it == idf->end() ? default_idf : it->second;
            }
            return v;
        };
        return cosine(vec(a), vec(b));
    };
    return s;
}

SimilarityFn SimilarityFn::char_ngram_cosine(const data::Vocabulary& vocab, std::size_t n) {
    // Character n-grams of the detokenized string, space-joined.
    auto tokens = std::make_shared<std::vector<std::string>>();
    for (std::size_t i = 0; i < vocab.size(); ++i) tokens->push_back(vocab.token(static_cast<int>(i)));
    SimilarityFn s;
    s.name_ = "char-ngram-cosine";
    s.fn_ = [tokens, n](const std::vector<int>& a, const std::vector<int>& b) {
        const auto vec = [&](const std::vector<int>& ids) {
            std::string text;
            for (std::size_t i = 0; i < ids.size(); ++i) {
                if (i) text.push_back(' ');
                if (ids[i] >= 0 && static_cast<std::size_t>(ids[i]) < tokens->size())
                    text += (*tokens)[static_cast<std::size_t>(ids[i])];
            }
            std::map<std::string, double> v;
            if (text.size() >= n)
                for (std::size_t i = 0; i + n <= text.size(); ++i) v[text.substr(i, n)] += 1.0;
            else if (!text.empty())
                v[text] += 1.0;
            return v;
        };
        return cosine(vec(a), vec(b));
    };
    return s;
}

SimilarityFn SimilarityFn::from_name(const std::string& name,
                                     const std::vector<std::vector<int>>& reference_corpus,
                                     const data::Vocabulary& vocab) {
    if (name == "lcs-f1") return lcs_f1();
    if (name == "tfidf-cosine") return tfidf_cosine(reference_corpus);
    if (name == "char-ngram-cosine") return char_ngram_cosine(vocab);
    throw std::invalid_argument("unknown similarity strategy '" + name + "'");
}

// ---- recall @ k within n ----

RecallResult recall_at_k_within_n_detailed(const std::vector<EvalPair>& pairs, std::size_t k,
                                           std::size_t n_window, const SimilarityFn& sim) {
    if (k < 1 || n_window < 1) throw std::invalid_argument("recall: k and N must be >= 1");
    if (k > n_window) throw std::invalid_argument("recall: k must be <= N");
    RecallResult result;
    if (pairs.empty()) return result;

    // Movie spans in input order; pairs are expected in time order per movie.
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    std::size_t begin = 0;
    for (std::size_t i = 1; i <= pairs.size(); ++i) {
        if (i == pairs.size() || pairs[i].movie_id != pairs[begin].movie_id) {
            spans.emplace_back(begin, i);
            begin = i;
        }
    }

    const std::size_t back = (n_window - 1) / 2;
    const std::size_t fwd = n_window - 1 - back;
    std::size_t hits = 0;
    for (auto [lo, hi] : spans) {
        for (std::size_t i = lo; i < hi; ++i) {
            const std::size_t wlo = i >= lo + back ? i - back : lo;
            const std::size_t whi = std::min(hi - 1, i + fwd);
            struct Entry {
                double score;
                std::size_t dist;
                std::size_t idx;
            };
            std::vector<Entry> ranked;
            ranked.reserve(whi - wlo + 1);
            for (std::size_t j = wlo; j <= whi; ++j)
                ranked.push_back({sim(pairs[i].candidate, pairs[j].reference),
                                  j > i ? j - i : i - j, j});
            std::sort(ranked.begin(), ranked.end(), [](const Entry& a, const Entry& b) {
                if (a.score != b.score) return a.score > b.score;
                if (a.dist != b.dist) return a.dist < b.dist;
                return a.idx < b.idx;
            });
            bool hit = false;
            for (std::size_t r = 0; r < std::min(k, ranked.size()); ++r)
                if (ranked[r].idx == i) hit = true;
            result.hit.push_back(hit);
            if (hit) ++hits;
        }
    }
    result.recall = static_cast<double>(hits) / static_cast<double>(pairs.size());
    return result;
}

double recall_at_k_within_n(const std::vector<EvalPair>& pairs, std::size_t k, std::size_t n_window,
                            const SimilarityFn& sim) {
    return recall_at_k_within_n_detailed(pairs, k, n_window, sim).recall;
}

// ---- redundancy contrast ----

double redundancy_contrast(const std::vector<TensorD>& clip_features_per_movie, std::size_t w) {
    double total = 0.0;
    std::size_t movies = 0;
    for (const TensorD& raw : clip_features_per_movie) {
        if (raw.rank() != 2 || raw.rows() < 2)
            throw std::invalid_argument("redundancy_contrast: each movie needs >= 2 clips");
        const TensorD feats = kernels::l2_normalize_rows(raw);
        double near_sum = 0.0, far_sum = 0.0;
        std::size_t near_count = 0, far_count = 0;
        for (std::size_t i = 0; i < feats.rows(); ++i) {
            for (std::size_t j = i + 1; j < feats.rows(); ++j) {
                const double cs = kernels::dot(feats.row_ptr(i), feats.row_ptr(j), feats.cols());
                if (j - i <= w) {
                    near_sum += cs;
                    ++near_count;
                } else {
                    far_sum += cs;
                    ++far_count;
                }
            }
        }
        if (near_count == 0 || far_count == 0) continue;  // movie too short for both classes
        total += near_sum / static_cast<double>(near_count) - far_sum / static_cast<double>(far_count);
        ++movies;
    }
    if (movies == 0)
        throw std::invalid_argument(
            "redundancy_contrast: undefined, every movie has all its pairs in one distance class");
    return total / static_cast<double>(movies);
}

}  // namespace adpipe::metrics
