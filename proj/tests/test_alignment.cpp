#include <cmath>
#include <cstring>

#include "adpipe/alignment.hpp"
#include "adpipe/dataio.hpp"
#include "doctest.h"

using namespace adpipe;
using namespace adpipe::align;

namespace {

AlignmentBatch<double> toy_batch(Rng& rng, std::size_t b, std::size_t n, std::size_t m,
                                 std::size_t c) {
    AlignmentBatch<double> batch;
    for (std::size_t i = 0; i < b; ++i) {
        TensorD clip({n, c});
        for (double& v : clip.data) v = rng.normal();
        batch.clips.push_back(clip);
        AdEntry<double> ad;
        ad.words = TensorD({m, c});
        for (double& v : ad.words.data) v = rng.normal();
        ad.cls = kernels::l2_normalize_rows(kernels::mean_rows(ad.words));
        batch.ads.push_back(std::move(ad));
    }
    return batch;
}

}  // namespace

TEST_CASE("pool_global: single frame, degenerate mean, hand example") {
    // single frame: v equals the normalized frame
    auto [v1, t1] = pool_global<double>({TensorD::matrix({{3.0, 4.0}})},
                                        {TensorD::matrix({{1.0, 0.0}})});
    CHECK(v1.at(0, 0) == doctest::Approx(0.6));
    CHECK(v1.at(0, 1) == doctest::Approx(0.8));
    CHECK(t1.at(0, 0) == doctest::Approx(1.0));

    // two opposite frames: mean is zero, epsilon guard keeps it finite
    auto [v2, t2] = pool_global<double>({TensorD::matrix({{1.0, 2.0}, {-1.0, -2.0}})},
                                        {TensorD::matrix({{0.0, 1.0}})});
    (void)t2;
    CHECK(v2.all_finite());
    CHECK(v2.at(0, 0) == doctest::Approx(0.0));
    CHECK(v2.at(0, 1) == doctest::Approx(0.0));

    // two unit frames: normalized mean direction
    auto [v3, t3] = pool_global<double>({TensorD::matrix({{1.0, 0.0}, {0.0, 1.0}})},
                                        {TensorD::matrix({{0.0, 1.0}})});
    (void)t3;
    CHECK(v3.at(0, 0) == doctest::Approx(0.70710678).epsilon(1e-6));
    CHECK(v3.at(0, 1) == doctest::Approx(0.70710678).epsilon(1e-6));
}

TEST_CASE("global contrastive loss closed forms") {
    // B=1: the softmax over a single entry is 1, loss 0
    CHECK(global_contrastive_loss(TensorD::matrix({{1.0, 0.0}}), TensorD::matrix({{1.0, 0.0}}),
                                  1.0) == doctest::Approx(0.0));

    // B=2 orthonormal matched pairs, logit_scale=1: 2 ln(1 + e^-1)
    const TensorD basis = TensorD::matrix({{1.0, 0.0}, {0.0, 1.0}});
    const double expected = 2.0 * std::log(1.0 + std::exp(-1.0));
    CHECK(global_contrastive_loss(basis, basis, 1.0) == doctest::Approx(expected).epsilon(1e-4));

    // mismatched pairs: 2 ln(1 + e)
    const TensorD swapped = TensorD::matrix({{0.0, 1.0}, {1.0, 0.0}});
    CHECK(global_contrastive_loss(basis, swapped, 1.0) ==
          doctest::Approx(2.0 * std::log(1.0 + std::exp(1.0))).epsilon(1e-6));
}

TEST_CASE("global contrastive loss invariances") {
    Rng rng(4);
    TensorD v({4, 6}), t({4, 6});
    for (double& x : v.data) x = rng.normal();
    for (double& x : t.data) x = rng.normal();
    v = kernels::l2_normalize_rows(v);
    t = kernels::l2_normalize_rows(t);
    const double base = global_contrastive_loss(v, t, 3.0);

    // common permutation of matched pairs preserves the loss
    const std::vector<std::size_t> perm = {2, 0, 3, 1};
    TensorD vp({4, 6}), tp({4, 6});
    for (std::size_t i = 0; i < 4; ++i) {
        std::copy(v.row_ptr(perm[i]), v.row_ptr(perm[i]) + 6, vp.row_ptr(i));
        std::copy(t.row_ptr(perm[i]), t.row_ptr(perm[i]) + 6, tp.row_ptr(i));
    }
    CHECK(global_contrastive_loss(vp, tp, 3.0) == doctest::Approx(base).epsilon(1e-9));

    // raising diagonal similarity with off-diagonals fixed lowers the loss
    for (int trial = 0; trial < 3; ++trial) {
        const double d1 = 0.2 + 0.2 * trial, d2 = d1 + 0.3;
        auto batch_loss = [&](double diag) {
            // identity-like similarity structure built directly from vectors
            TensorD a({2, 2}), b({2, 2});
            a.at(0, 0) = 1.0;
            a.at(1, 1) = 1.0;
            b.at(0, 0) = diag;
            b.at(0, 1) = std::sqrt(1.0 - diag * diag);
            b.at(1, 1) = diag;
            b.at(1, 0) = std::sqrt(1.0 - diag * diag);
            return global_contrastive_loss(a, b, 2.0);
        };
        CHECK(batch_loss(d2) < batch_loss(d1));
    }
}

TEST_CASE("frame_aware_ad") {
    // m=1: every output row equals the single word vector
    auto single = frame_aware_ad(TensorD::matrix({{1.0, 0.0}, {0.0, 1.0}}),
                                 TensorD::matrix({{0.5, 0.25}}), 0.37);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(single.at(i, 0) == doctest::Approx(0.5));
        CHECK(single.at(i, 1) == doctest::Approx(0.25));
    }

    // hand evaluation: frame (1,0), words e1,e2, tau=1
    auto hand = frame_aware_ad(TensorD::matrix({{1.0, 0.0}}),
                               TensorD::matrix({{1.0, 0.0}, {0.0, 1.0}}), 1.0);
    CHECK(hand.at(0, 0) == doctest::Approx(0.7310585786).epsilon(1e-6));
    CHECK(hand.at(0, 1) == doctest::Approx(0.2689414214).epsilon(1e-6));

    // large tau approaches the unweighted word mean
    auto flat = frame_aware_ad(TensorD::matrix({{1.0, 0.0}}),
                               TensorD::matrix({{1.0, 0.0}, {0.0, 1.0}}), 1e6);
    CHECK(flat.at(0, 0) == doctest::Approx(0.5).epsilon(1e-5));

    CHECK_THROWS_AS(frame_aware_ad(TensorD::matrix({{1.0, 0.0}}), TensorD({0, 2}), 1.0),
                    std::invalid_argument);
}

TEST_CASE("frame_aware_ad rows stay in the convex hull of the words") {
    Rng rng(9);
    for (int trial = 0; trial < 20; ++trial) {
        TensorD frames({3, 5}), words({4, 5});
        for (double& v : frames.data) v = rng.normal(0.0, 2.0);
        for (double& v : words.data) v = rng.normal(0.0, 2.0);
        auto out = frame_aware_ad(frames, words, 0.2 + rng.uniform());
        for (std::size_t j = 0; j < 5; ++j) {
            double lo = words.at(0, j), hi = words.at(0, j);
            for (std::size_t r = 1; r < 4; ++r) {
                lo = std::min(lo, words.at(r, j));
                hi = std::max(hi, words.at(r, j));
            }
            for (std::size_t r = 0; r < 3; ++r) {
                CHECK(out.at(r, j) >= lo - 1e-9);
                CHECK(out.at(r, j) <= hi + 1e-9);
            }
        }
    }
}

TEST_CASE("mil_loss closed forms") {
    // B=1: the negative set is empty, numerator equals denominator
    CHECK(mil_loss<double>({TensorD::matrix({{1.0, 0.0}})}, {TensorD::matrix({{1.0, 0.0}})},
                           {{0}}, 0.1, 1.0) == doctest::Approx(0.0));

    // one positive at similarity 1, one negative at 0: ln(1 + e^-1)
    const double ln_1e = std::log(1.0 + std::exp(-1.0));
    CHECK(mil_loss<double>(
              {TensorD::matrix({{1.0, 0.0}}), TensorD::matrix({{0.0, 1.0}})},
              {TensorD::matrix({{1.0, 0.0}}), TensorD::matrix({{0.0, 1.0}})}, {{0}, {0}}, 0.1,
              1.0) == doctest::Approx(ln_1e).epsilon(1e-6));

    // positive and negative both at similarity 0: ln 2
    CHECK(mil_loss<double>(
              {TensorD::matrix({{1.0, 0.0, 0.0}}), TensorD::matrix({{1.0, 0.0, 0.0}})},
              {TensorD::matrix({{0.0, 1.0, 0.0}}), TensorD::matrix({{0.0, 0.0, 1.0}})}, {{0}, {0}},
              0.1, 1.0) == doctest::Approx(std::log(2.0)).epsilon(1e-6));
}

TEST_CASE("stage1_loss: blend reductions, linearity, grad check") {
    Rng rng(15);
    AlignmentBatch<double> batch = toy_batch(rng, 3, 2, 3, 4);
    const std::vector<std::vector<std::size_t>> sampled = {{1}, {0}, {1}};

    ParamStore<double> adapter;
    Rng arng(2);
    init_adapter(adapter, 4, arng);

    AlignmentConfig config;
    config.tau_f = 0.3;
    config.logit_scale = 4.0;

    auto loss_at = [&](double gamma) {
        AlignmentConfig c = config;
        c.gamma = gamma;
        return stage1_loss(adapter, batch, sampled, c);
    };

    const double lg = loss_at(1.0);
    const double lf = loss_at(0.0);
    // gamma extremes reduce exactly to the single component
    Stage1Components<double> parts;
    AlignmentConfig cg = config;
    cg.gamma = 1.0;
    CHECK(stage1_loss(adapter, batch, sampled, cg, &parts) == parts.global);
    AlignmentConfig cf = config;
    cf.gamma = 0.0;
    CHECK(stage1_loss(adapter, batch, sampled, cf, &parts) == parts.fine);

    for (double gamma : {0.25, 0.5, 0.9}) {
        CHECK(loss_at(gamma) == doctest::Approx(gamma * lg + (1.0 - gamma) * lf).epsilon(1e-6));
    }
    CHECK(loss_at(0.5) == doctest::Approx(0.5 * (lg + lf)).epsilon(1e-9));

    // finite differences against the adapter parameters
    AlignmentConfig c = config;
    c.gamma = 0.5;
    const LossBuilder<double> builder = [&](ag::Tape<double>& t, const ag::ParamVars<double>& p) {
        return stage1_node(t, p, batch, sampled, c);
    };
    auto report = grad_check(adapter, builder, 1e-5, 1e-4);
    CHECK(report.pass);
}

TEST_CASE("adapt_train: zero epochs, learning, frozen text") {
    data::SyntheticSpec spec;
    spec.num_movies = 1;
    spec.clips_per_movie = 24;
    spec.scene_length = 4;
    spec.channels = 8;
    spec.frames_per_clip = 2;
    spec.noun_pool = 24;
    spec.verb_pool = 6;
    spec.seed = 5;
    auto syn = data::gen_synthetic(spec);

    AlignmentConfig config;
    config.epochs = 0;
    config.batch_size = 6;
    config.seed = 11;
    auto zero = adapt_train<double>(syn.corpus, syn.vocab, config);
    ParamStore<double> reference;
    Rng rng(config.seed);
    init_adapter(reference, spec.channels, rng);
    CHECK(zero.adapter.at(kAdapterWeight).data == reference.at(kAdapterWeight).data);
    CHECK(zero.log.empty());

    const TensorF before = data::token_embeddings(syn.vocab, spec.channels);
    config.epochs = 4;
    config.learning_rate = 5e-3;
    auto trained = adapt_train<double>(syn.corpus, syn.vocab, config);
    CHECK(trained.final_epoch_mean < trained.first_epoch_mean);
    CHECK_FALSE(trained.log.empty());
    for (const auto& row : trained.log)
        CHECK(row.total_loss ==
              doctest::Approx(0.5 * row.global_loss + 0.5 * row.fine_loss).epsilon(1e-9));

    const TensorF after = data::token_embeddings(syn.vocab, spec.channels);
    REQUIRE(before.data.size() == after.data.size());
    CHECK(std::memcmp(before.data.data(), after.data.data(),
                      before.data.size() * sizeof(float)) == 0);
}
