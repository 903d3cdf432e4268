#include <cmath>

#include "adpipe/narration.hpp"
#include "adpipe/pipeline.hpp"
#include "doctest.h"

using namespace adpipe;
using namespace adpipe::narr;

namespace {

DecoderConfig tiny_decoder(std::size_t vocab, std::size_t dim = 16, std::size_t context = 32) {
    DecoderConfig config;
    config.vocab = vocab;
    config.dim = dim;
    config.layers = 1;
    config.heads = 2;
    config.context = context;
    config.ff_mult = 2;
    return config;
}

PromptSequence visual_prompt(std::size_t clips, std::size_t per_clip,
                             const std::vector<int>& target, std::size_t context = 32) {
    return assemble_prompt(clips, per_clip, std::vector<std::vector<int>>(clips), target, context);
}

}  // namespace

TEST_CASE("build_distinctive_set") {
    data::Vocabulary vocab;
    for (const char* w : {"jack", "looks", "at", "mary", "smiles", "opens", "the", "old", "door"})
        vocab.add(w);
    const auto tok = [&](const char* s) { return data::tokenize(s, vocab); };

    auto set = build_distinctive_set(tok("jack opens the old door"),
                                     {tok("jack looks at mary"), tok("jack smiles at mary")});
    CHECK(set.size() == 4);
    for (const char* w : {"opens", "the", "old", "door"}) CHECK(set.contains(vocab.id_of(w)));
    CHECK_FALSE(set.contains(vocab.id_of("jack")));

    // fully covered target
    CHECK(build_distinctive_set(tok("jack looks"), {tok("jack looks at mary")}).size() == 0);

    // no contexts: all unique target tokens
    auto all = build_distinctive_set(tok("jack opens jack"), {});
    CHECK(all.size() == 2);

    // stopwords are removed
    auto stopped = build_distinctive_set(tok("jack opens the door"), {},
                                         {vocab.id_of("the"), vocab.id_of("jack")});
    CHECK(stopped.size() == 2);

    // never intersects any context set
    Rng rng(3);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<int> target;
        std::vector<std::vector<int>> contexts(3);
        for (int i = 0; i < 6; ++i) target.push_back(static_cast<int>(rng.uniform_index(15)));
        for (auto& c : contexts)
            for (int i = 0; i < 4; ++i) c.push_back(static_cast<int>(rng.uniform_index(15)));
        auto d = build_distinctive_set(target, contexts);
        for (const auto& c : contexts)
            for (int id : c) CHECK_FALSE(d.contains(id));
    }
}

TEST_CASE("assemble_prompt ordering, BOS, and truncation") {
    // N=1, no names: T' visual slots, then BOS, then target + EOS
    auto p1 = visual_prompt(1, 3, {7, 8});
    REQUIRE(p1.slots.size() == 4);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(p1.slots[i].is_visual);
        CHECK(p1.slots[i].visual_row == i);
    }
    CHECK_FALSE(p1.slots[3].is_visual);
    CHECK(p1.slots[3].token_id == data::Vocabulary::kBos);
    REQUIRE(p1.target.size() == 3);
    CHECK(p1.target.back() == data::Vocabulary::kEos);

    // N=2 with names: clip1-vis, clip1-names, clip2-vis, clip2-names, BOS
    auto p2 = assemble_prompt(2, 2, {{10, 11}, {12}}, {}, 32);
    REQUIRE(p2.slots.size() == 2 + 2 + 2 + 1 + 1);
    CHECK(p2.slots[0].is_visual);
    CHECK(p2.slots[1].is_visual);
    CHECK(p2.slots[2].token_id == 10);
    CHECK(p2.slots[3].token_id == 11);
    CHECK(p2.slots[4].is_visual);
    CHECK(p2.slots[4].visual_row == 2);
    CHECK(p2.slots[6].token_id == 12);
    CHECK(p2.slots[7].token_id == data::Vocabulary::kBos);
    CHECK(p2.target.empty());

    // exactly one BOS, and assembly is pure
    auto p3 = assemble_prompt(2, 2, {{10, 11}, {12}}, {}, 32);
    CHECK(p2.slots.size() == p3.slots.size());
    std::size_t bos_count = 0;
    for (const auto& s : p2.slots)
        if (!s.is_visual && s.token_id == data::Vocabulary::kBos) ++bos_count;
    CHECK(bos_count == 1);

    // overflow names the clip
    try {
        assemble_prompt(3, 4, std::vector<std::vector<int>>(3), {1, 2, 3}, 12);
        FAIL("expected TruncationError");
    } catch (const TruncationError& e) {
        CHECK(e.clip_index >= 1);
    }
}

TEST_CASE("auto_loss: uniform predictor closed form") {
    const std::size_t vocab = 10;
    DecoderConfig config = tiny_decoder(vocab);
    ParamStore<double> model;
    Rng rng(2);
    init_decoder(model, config, rng);
    // zeroed embedding table makes every logit zero: a uniform predictor
    auto& emb = model.at("decoder.tok_emb");
    std::fill(emb.data.begin(), emb.data.end(), 0.0);

    TensorD visuals({2, config.dim});
    for (double& v : visuals.data) v = 0.3;
    auto prompt = visual_prompt(1, 2, {5, 6});  // two tokens + EOS
    CHECK(auto_loss(model, config, prompt, visuals) ==
          doctest::Approx(3.0 * std::log(10.0)).epsilon(1e-9));
}

TEST_CASE("auto_loss: sum of independently computed per-position terms") {
    DecoderConfig config = tiny_decoder(12);
    ParamStore<double> model;
    Rng rng(4);
    init_decoder(model, config, rng);
    TensorD visuals({3, config.dim});
    Rng vr(9);
    for (double& v : visuals.data) v = vr.normal();
    auto prompt = visual_prompt(1, 3, {7, 9, 11});

    const double loss = auto_loss(model, config, prompt, visuals);
    const TensorD logits = decoder_full_logits(model, config, prompt, visuals);
    double manual = 0.0;
    for (std::size_t i = 0; i < prompt.target.size(); ++i) {
        const std::size_t row = prompt.slots.size() - 1 + i;
        double mx = logits.at(row, 0);
        for (std::size_t j = 1; j < logits.cols(); ++j) mx = std::max(mx, logits.at(row, j));
        double lse = 0.0;
        for (std::size_t j = 0; j < logits.cols(); ++j) lse += std::exp(logits.at(row, j) - mx);
        manual += mx + std::log(lse) - logits.at(row, static_cast<std::size_t>(prompt.target[i]));
    }
    CHECK(loss == doctest::Approx(manual).epsilon(1e-6));
}

TEST_CASE("distinctive_loss: closed forms and relation to auto_loss") {
    const std::size_t vocab = 10;
    DecoderConfig config = tiny_decoder(vocab);
    ParamStore<double> model;
    Rng rng(6);
    init_decoder(model, config, rng);

    TensorD visuals({2, config.dim});
    for (double& v : visuals.data) v = -0.2;
    auto prompt = visual_prompt(1, 2, {5, 6, 7});

    // empty set -> exactly zero
    CHECK(distinctive_loss(model, config, prompt, visuals, {}) == 0.0);

    // uniform predictor, two of three gold tokens distinctive -> 2 ln 10
    ParamStore<double> uniform = model;
    std::fill(uniform.at("decoder.tok_emb").data.begin(),
              uniform.at("decoder.tok_emb").data.end(), 0.0);
    DistinctiveSet two;
    two.tokens = {6, 7};
    CHECK(distinctive_loss(uniform, config, prompt, visuals, two) ==
          doctest::Approx(2.0 * std::log(10.0)).epsilon(1e-9));

    // all target tokens distinctive -> auto_loss minus the EOS term
    DistinctiveSet all;
    all.tokens = {5, 6, 7};
    const double full = auto_loss(model, config, prompt, visuals);
    const double dist = distinctive_loss(model, config, prompt, visuals, all);
    const TensorD logits = decoder_full_logits(model, config, prompt, visuals);
    const std::size_t eos_row = prompt.slots.size() - 1 + prompt.target.size() - 1;
    double mx = logits.at(eos_row, 0);
    for (std::size_t j = 1; j < logits.cols(); ++j) mx = std::max(mx, logits.at(eos_row, j));
    double lse = 0.0;
    for (std::size_t j = 0; j < logits.cols(); ++j) lse += std::exp(logits.at(eos_row, j) - mx);
    const double eos_term =
        mx + std::log(lse) - logits.at(eos_row, static_cast<std::size_t>(data::Vocabulary::kEos));
    CHECK(dist == doctest::Approx(full - eos_term).epsilon(1e-6));
    CHECK(dist <= full + 1e-12);

    // stage2 composition
    CHECK(stage2_loss(model, config, prompt, visuals, {}) == doctest::Approx(full));
    CHECK(stage2_loss(model, config, prompt, visuals, all) == doctest::Approx(full + dist));
}

TEST_CASE("causality: later target tokens never change earlier logits") {
    DecoderConfig config = tiny_decoder(14);
    ParamStore<double> model;
    Rng rng(12);
    init_decoder(model, config, rng);
    TensorD visuals({2, config.dim});
    Rng vr(5);
    for (double& v : visuals.data) v = vr.normal();

    auto prompt_a = visual_prompt(1, 2, {6, 7, 8});
    auto prompt_b = visual_prompt(1, 2, {6, 7, 13});  // differs at position 2

    const TensorD la = decoder_full_logits(model, config, prompt_a, visuals);
    const TensorD lb = decoder_full_logits(model, config, prompt_b, visuals);
    // inputs differ first at sequence index prompt_len + 2; all earlier rows
    // must agree bitwise
    const std::size_t first_diff = prompt_a.slots.size() + 2;
    for (std::size_t i = 0; i < first_diff; ++i)
        for (std::size_t j = 0; j < la.cols(); ++j) CHECK(la.at(i, j) == lb.at(i, j));
}

TEST_CASE("stage2 loss gradients pass finite differences") {
    // extended precision, same reasoning as the EM gradient test
    using T = long double;
    DecoderConfig config = tiny_decoder(8, 8, 24);
    config.heads = 2;
    ParamStore<T> model;
    Rng rng(3);
    init_decoder(model, config, rng);
    Tensor<T> visuals({2, config.dim});
    Rng vr(8);
    for (T& v : visuals.data) v = static_cast<T>(vr.normal(0.0, 0.5));
    auto prompt = visual_prompt(1, 2, {5, 6});
    DistinctiveSet dset;
    dset.tokens = {6};

    const LossBuilder<T> builder = [&](ag::Tape<T>& t, const ag::ParamVars<T>& p) {
        auto v = t.constant(visuals);
        return t.add(auto_loss_node(t, p, config, prompt, v),
                     distinctive_loss_node(t, p, config, prompt, v, dset));
    };
    auto report = grad_check(model, builder, 1e-5, 1e-4);
    CHECK(report.pass);
}

TEST_CASE("generate: EOS-first model, determinism, max_len") {
    DecoderConfig config = tiny_decoder(9);
    ParamStore<double> model;
    Rng rng(10);
    init_decoder(model, config, rng);
    TensorD visuals({2, config.dim});
    for (double& v : visuals.data) v = 0.1;
    auto prompt = visual_prompt(1, 2, {});

    // force EOS: collapse the final layer norm onto a direction only the EOS
    // embedding points at
    ParamStore<double> eos_first = model;
    std::fill(eos_first.at("decoder.ln_f.g").data.begin(),
              eos_first.at("decoder.ln_f.g").data.end(), 0.0);
    auto& lnb = eos_first.at("decoder.ln_f.b");
    std::fill(lnb.data.begin(), lnb.data.end(), 0.0);
    lnb[0] = 10.0;
    auto& emb = eos_first.at("decoder.tok_emb");
    std::fill(emb.data.begin(), emb.data.end(), 0.0);
    emb.at(data::Vocabulary::kEos, 0) = 1.0;
    CHECK(generate(eos_first, config, prompt, visuals, 8).empty());

    // greedy decoding is run-to-run identical
    auto a = generate(model, config, prompt, visuals, 6);
    auto b = generate(model, config, prompt, visuals, 6);
    CHECK(a == b);
    CHECK(a.size() <= 6);

    CHECK(generate(model, config, prompt, visuals, 1).size() <= 1);

    // sampled decoding is reproducible for a fixed seed
    auto s1 = generate(model, config, prompt, visuals, 6, DecodeMode::kSample, 1.0, 99);
    auto s2 = generate(model, config, prompt, visuals, 6, DecodeMode::kSample, 1.0, 99);
    CHECK(s1 == s2);

    CHECK_THROWS_AS(generate(model, config, PromptSequence{}, visuals, 4), std::invalid_argument);
}

TEST_CASE("train_stage2: zero epochs keep the init, training reduces the loss") {
    data::SyntheticSpec spec;
    spec.num_movies = 1;
    spec.clips_per_movie = 12;
    spec.scene_length = 4;
    spec.channels = 8;
    spec.frames_per_clip = 3;
    spec.noun_pool = 12;
    spec.verb_pool = 4;
    spec.adjective_pool = 2;
    spec.seed = 21;
    auto syn = data::gen_synthetic(spec);
    std::map<std::uint32_t, std::string> characters(syn.characters.begin(), syn.characters.end());

    pipeline::Stage2Config config;
    config.window = 4;
    config.frames = 3;
    config.prompts = 2;
    config.em.bases = 3;
    config.em.iterations = 2;
    config.decoder = tiny_decoder(syn.vocab.size(), 16, 48);
    config.decoder.vocab = syn.vocab.size();
    config.epochs = 0;
    config.seed = 7;

    ParamStore<double> adapter;
    align::init_adapter_identity(adapter, spec.channels);

    auto zero = pipeline::train_stage2(syn.corpus, syn.vocab, characters, adapter, config);
    Rng ref_rng(config.seed);
    auto reference = pipeline::init_stage2_models(adapter, spec.channels, config, ref_rng);
    for (const auto& [name, tensor] : reference)
        CHECK(zero.models.at(name).data == tensor.data);

    config.epochs = 3;
    config.learning_rate = 3e-3;
    auto trained = pipeline::train_stage2(syn.corpus, syn.vocab, characters, adapter, config);
    CHECK(trained.final_epoch_mean < trained.first_epoch_mean);
    CHECK_FALSE(trained.log.empty());
    for (const auto& row : trained.log)
        CHECK(row.total_loss == doctest::Approx(row.auto_loss + row.dist_loss).epsilon(1e-9));

    // adapter stays frozen by default
    CHECK(trained.models.at(align::kAdapterWeight).data == adapter.at(align::kAdapterWeight).data);

    // generation for a window produces token ids within the vocabulary
    auto windows = data::sample_windows(syn.corpus, config.window, true, 1);
    auto input = pipeline::make_window_input<double>(syn.corpus, windows.windows.front(), syn.vocab,
                                                     characters, config.frames);
    auto ids = pipeline::generate_for_window(trained.models, input, config, 8);
    for (int id : ids) {
        CHECK(id >= 0);
        CHECK(static_cast<std::size_t>(id) < syn.vocab.size());
    }
}

TEST_CASE("window features expose the three branches") {
    data::SyntheticSpec spec;
    spec.num_movies = 1;
    spec.clips_per_movie = 6;
    spec.scene_length = 3;
    spec.channels = 6;
    spec.frames_per_clip = 2;
    spec.noun_pool = 6;
    spec.seed = 2;
    auto syn = data::gen_synthetic(spec);

    pipeline::Stage2Config config;
    config.window = 3;
    config.frames = 2;
    config.prompts = 2;
    config.em.bases = 2;
    config.em.iterations = 2;
    config.decoder = tiny_decoder(syn.vocab.size(), 8, 32);

    ParamStore<double> adapter;
    align::init_adapter_identity(adapter, spec.channels);
    Rng rng(5);
    auto models = pipeline::init_stage2_models(adapter, spec.channels, config, rng);

    auto windows = data::sample_windows(syn.corpus, 3, true, 0);
    auto input = pipeline::make_window_input<double>(syn.corpus, windows.windows.front(), syn.vocab,
                                                     {}, 2);
    auto features = pipeline::window_features(models, input, config);
    CHECK(features.raw.shape == std::vector<std::size_t>{6, 6});
    CHECK(features.reconstructed.shape == features.raw.shape);
    CHECK(features.attended.shape == features.raw.shape);
    CHECK(features.fused.shape == std::vector<std::size_t>{6, 8});

    // disabling the EM path zeroes both derived branches
    pipeline::Stage2Config off = config;
    off.use_ema = false;
    auto plain = pipeline::window_features(models, input, off);
    for (double v : plain.reconstructed.data) CHECK(v == 0.0);
    for (double v : plain.attended.data) CHECK(v == 0.0);
}
