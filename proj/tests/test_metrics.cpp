#include <cmath>

#include "adpipe/metrics.hpp"
#include "adpipe/rng.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace adpipe;
using namespace adpipe::metrics;

namespace {

std::vector<int> seq(std::initializer_list<int> v) { return std::vector<int>(v); }

std::vector<std::vector<int>> random_sentences(Rng& rng, std::size_t count, std::size_t vocab,
                                               std::size_t min_len, std::size_t max_len) {
    std::vector<std::vector<int>> out(count);
    for (auto& s : out) {
        const std::size_t len = min_len + rng.uniform_index(max_len - min_len + 1);
        for (std::size_t i = 0; i < len; ++i)
            s.push_back(static_cast<int>(rng.uniform_index(vocab)));
    }
    return out;
}

}  // namespace

TEST_CASE("rouge_l basics") {
    CHECK(rouge_l(seq({1, 2, 3}), seq({1, 2, 3})) == doctest::Approx(1.0));
    // cand "a b c", ref "a c", beta=1 -> LCS=2, P=2/3, R=1, F=0.8
    CHECK(rouge_l(seq({1, 2, 3}), seq({1, 3}), 1.0) == doctest::Approx(0.8));
    CHECK(rouge_l(seq({1, 2}), seq({3, 4})) == doctest::Approx(0.0));
    CHECK(rouge_l({}, seq({1})) == doctest::Approx(0.0));
    CHECK(rouge_l(seq({1}), {}) == doctest::Approx(0.0));
}

TEST_CASE("rouge_l stays in [0,1] on random inputs") {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        auto a = random_sentences(rng, 1, 8, 1, 10)[0];
        auto b = random_sentences(rng, 1, 8, 1, 10)[0];
        const double f = rouge_l(a, b, 0.5 + 2.0 * rng.uniform());
        CHECK(f >= 0.0);
        CHECK(f <= 1.0);
    }
}

TEST_CASE("cider: identical corpus scores 10") {
    // pairwise-distinct references, each >= 4 tokens so every n-gram order
    // is populated
    std::vector<std::vector<int>> refs = {
        seq({1, 2, 3, 4, 5}), seq({6, 7, 8, 9}), seq({10, 11, 12, 13, 14}), seq({2, 4, 6, 8, 10})};
    CHECK(cider(refs, refs) == doctest::Approx(10.0).epsilon(1e-9));
}

TEST_CASE("cider: disjoint n-grams score 0") {
    std::vector<std::vector<int>> refs = {seq({1, 2, 3, 4}), seq({5, 6, 7, 8})};
    std::vector<std::vector<int>> cands = {seq({20, 21, 22, 23}), seq({30, 31, 32, 33})};
    CHECK(cider(cands, refs) == doctest::Approx(0.0));
}

TEST_CASE("cider matches the brute-force TF-IDF oracle") {
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t count = 2 + rng.uniform_index(4);
        auto refs = random_sentences(rng, count, 10, 2, 8);
        auto cands = random_sentences(rng, count, 10, 2, 8);
        // make some candidates partially overlap their reference
        for (std::size_t i = 0; i < count; ++i)
            if (rng.uniform() < 0.5) cands[i] = refs[i];
        const double fast = cider(cands, refs);
        const double slow = oracles::cider_bruteforce(cands, refs);
        CHECK(fast == doctest::Approx(slow).epsilon(1e-9));
        CHECK(fast >= 0.0);
        CHECK(fast <= 10.0 + 1e-9);
    }
}

TEST_CASE("recall@k/N: perfect candidates with distinct references") {
    std::vector<EvalPair> pairs;
    for (int i = 0; i < 12; ++i) {
        EvalPair p;
        p.candidate = seq({i * 3 + 1, i * 3 + 2, i * 3 + 3});
        p.reference = p.candidate;
        p.clip_id = static_cast<std::uint32_t>(i);
        p.movie_id = 0;
        pairs.push_back(p);
    }
    auto sim = SimilarityFn::lcs_f1();
    for (std::size_t k : {1u, 2u, 5u}) CHECK(recall_at_k_within_n(pairs, k, 5, sim) == doctest::Approx(1.0));
}

TEST_CASE("recall@k/N: k=N always succeeds") {
    Rng rng(8);
    std::vector<EvalPair> pairs;
    for (int i = 0; i < 10; ++i) {
        EvalPair p;
        p.candidate = random_sentences(rng, 1, 6, 1, 5)[0];
        p.reference = random_sentences(rng, 1, 6, 1, 5)[0];
        p.clip_id = static_cast<std::uint32_t>(i);
        p.movie_id = 0;
        pairs.push_back(p);
    }
    auto sim = SimilarityFn::lcs_f1();
    CHECK(recall_at_k_within_n(pairs, 7, 7, sim) == doctest::Approx(1.0));
}

TEST_CASE("recall@k/N: identical references resolved by the tie rule") {
    // all references equal: every similarity ties, the own reference wins
    // through its temporal distance of zero
    std::vector<EvalPair> pairs;
    for (int i = 0; i < 9; ++i) {
        EvalPair p;
        p.candidate = seq({1, 2});
        p.reference = seq({1, 2, 3});
        p.clip_id = static_cast<std::uint32_t>(i);
        p.movie_id = 0;
        pairs.push_back(p);
    }
    auto sim = SimilarityFn::lcs_f1();
    const double ours = recall_at_k_within_n(pairs, 2, 5, sim);
    CHECK(ours == doctest::Approx(oracles::recall_bruteforce(pairs, 2, 5, sim)));
}

TEST_CASE("recall@k/N matches exhaustive ranking on random corpora") {
    Rng rng(71);
    auto make_pairs = [&](std::size_t count, std::size_t movies) {
        std::vector<EvalPair> pairs;
        for (std::size_t m = 0; m < movies; ++m) {
            for (std::size_t i = 0; i < count; ++i) {
                EvalPair p;
                p.candidate = random_sentences(rng, 1, 12, 1, 6)[0];
                p.reference = random_sentences(rng, 1, 12, 1, 6)[0];
                p.clip_id = static_cast<std::uint32_t>(pairs.size());
                p.movie_id = static_cast<std::uint32_t>(m);
                pairs.push_back(p);
            }
        }
        return pairs;
    };
    for (int trial = 0; trial < 10; ++trial) {
        auto pairs = make_pairs(6 + rng.uniform_index(8), 1 + rng.uniform_index(2));
        std::vector<std::vector<int>> refs;
        for (const auto& p : pairs) refs.push_back(p.reference);
        auto sim = trial % 2 ? SimilarityFn::tfidf_cosine(refs) : SimilarityFn::lcs_f1();
        const std::size_t n = 3 + rng.uniform_index(6);
        const std::size_t k = 1 + rng.uniform_index(n);
        CHECK(recall_at_k_within_n(pairs, k, n, sim) ==
              doctest::Approx(oracles::recall_bruteforce(pairs, k, n, sim)));
    }
}

TEST_CASE("recall@k/N is monotone in k") {
    Rng rng(13);
    std::vector<EvalPair> pairs;
    for (int i = 0; i < 20; ++i) {
        EvalPair p;
        p.candidate = random_sentences(rng, 1, 9, 1, 6)[0];
        p.reference = random_sentences(rng, 1, 9, 1, 6)[0];
        p.clip_id = static_cast<std::uint32_t>(i);
        p.movie_id = 0;
        pairs.push_back(p);
    }
    auto sim = SimilarityFn::lcs_f1();
    double prev = 0.0;
    for (std::size_t k = 1; k <= 7; ++k) {
        const double r = recall_at_k_within_n(pairs, k, 7, sim);
        CHECK(r >= prev - 1e-12);
        prev = r;
    }
    CHECK_THROWS_AS(recall_at_k_within_n(pairs, 0, 5, SimilarityFn::lcs_f1()), std::invalid_argument);
}

TEST_CASE("similarity strategies are bounded and symmetric where promised") {
    Rng rng(55);
    data::Vocabulary vocab;
    for (int i = 0; i < 30; ++i) vocab.add("tok" + std::to_string(i));
    auto refs = random_sentences(rng, 8, 20, 1, 6);
    for (auto& r : refs)
        for (auto& t : r) t += data::Vocabulary::kNumReserved;
    std::vector<SimilarityFn> sims = {SimilarityFn::lcs_f1(), SimilarityFn::tfidf_cosine(refs),
                                      SimilarityFn::char_ngram_cosine(vocab)};
    for (const auto& sim : sims) {
        for (int trial = 0; trial < 20; ++trial) {
            auto a = random_sentences(rng, 1, 20, 0, 5)[0];
            auto b = random_sentences(rng, 1, 20, 0, 5)[0];
            for (auto& t : a) t += data::Vocabulary::kNumReserved;
            for (auto& t : b) t += data::Vocabulary::kNumReserved;
            const double s = sim(a, b);
            CHECK(s >= 0.0);
            CHECK(s <= 1.0 + 1e-12);
            if (sim.name() != "lcs-f1") CHECK(sim(a, b) == doctest::Approx(sim(b, a)));
        }
    }
    CHECK_THROWS_AS(SimilarityFn::from_name("bertscore", refs, vocab), std::invalid_argument);
}

TEST_CASE("redundancy_contrast: identical, random, structured") {
    // identical features: both class means are 1, contrast 0
    TensorD same({6, 4});
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 4; ++j) same.at(i, j) = j == 1 ? 2.0 : 0.5;
    CHECK(redundancy_contrast({same}, 2) == doctest::Approx(0.0));

    // i.i.d. random unit vectors: near zero
    Rng rng(21);
    TensorD random_feats({50, 32});
    for (double& v : random_feats.data) v = rng.normal();
    CHECK(std::fabs(redundancy_contrast({kernels::l2_normalize_rows(random_feats)}, 3)) < 0.05);

    // block structure: strongly positive
    TensorD blocks({12, 8});
    for (std::size_t i = 0; i < 12; ++i) {
        blocks.at(i, i / 4) = 1.0;  // three blocks of four clips
        blocks.at(i, 4 + i % 4) = 0.2;
    }
    CHECK(redundancy_contrast({blocks}, 2) > 0.2);

    // too short for both classes -> undefined
    TensorD tiny({2, 3});
    tiny.at(0, 0) = 1.0;
    tiny.at(1, 1) = 1.0;
    CHECK_THROWS_AS(redundancy_contrast({tiny}, 3), std::invalid_argument);
}

TEST_CASE("redundancy_contrast is rotation invariant") {
    Rng rng(42);
    TensorD feats({20, 6});
    for (double& v : feats.data) v = rng.normal();
    feats = kernels::l2_normalize_rows(feats);

    // random rotation via Gram-Schmidt on a random matrix
    TensorD q({6, 6});
    for (double& v : q.data) v = rng.normal();
    for (std::size_t c = 0; c < 6; ++c) {
        for (std::size_t p = 0; p < c; ++p) {
            double d = 0;
            for (std::size_t r = 0; r < 6; ++r) d += q.at(r, c) * q.at(r, p);
            for (std::size_t r = 0; r < 6; ++r) q.at(r, c) -= d * q.at(r, p);
        }
        double norm = 0;
        for (std::size_t r = 0; r < 6; ++r) norm += q.at(r, c) * q.at(r, c);
        norm = std::sqrt(norm);
        for (std::size_t r = 0; r < 6; ++r) q.at(r, c) /= norm;
    }
    const TensorD rotated = kernels::matmul(feats, q);
    CHECK(redundancy_contrast({feats}, 3) ==
          doctest::Approx(redundancy_contrast({rotated}, 3)).epsilon(1e-6));
}
