#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "adpipe/dataio.hpp"
#include "adpipe/metrics.hpp"
#include "adpipe/rng.hpp"
#include "doctest.h"

using namespace adpipe;
using namespace adpipe::data;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

Corpus random_corpus(Rng& rng, std::uint32_t channels) {
    Corpus corpus;
    corpus.channels = channels;
    const std::size_t movies = 1 + rng.uniform_index(3);
    std::uint32_t clip_id = 0;
    for (std::size_t m = 0; m < movies; ++m) {
        const std::size_t clips = rng.uniform_index(4);  // may be zero
        std::uint64_t t = rng.uniform_index(1000);
        for (std::size_t i = 0; i < clips; ++i) {
            ClipRecord rec;
            rec.clip_id = clip_id++;
            rec.movie_id = static_cast<std::uint32_t>(m);
            rec.start_ms = t;
            rec.end_ms = t + 1 + rng.uniform_index(500);
            t = rec.end_ms + rng.uniform_index(300);
            const std::size_t n = 1 + rng.uniform_index(3);
            rec.frames = TensorF({n, channels});
            for (float& v : rec.frames.data) v = static_cast<float>(rng.normal());
            std::string text;
            const std::size_t words = rng.uniform_index(5);
            for (std::size_t w = 0; w < words; ++w) {
                if (w) text.push_back(' ');
                text += "w" + std::to_string(rng.uniform_index(20));
            }
            rec.ad_text = text;
            corpus.records.push_back(std::move(rec));
        }
    }
    return corpus;
}

bool bitwise_equal(const Corpus& a, const Corpus& b) {
    if (a.channels != b.channels || a.records.size() != b.records.size()) return false;
    for (std::size_t i = 0; i < a.records.size(); ++i) {
        const ClipRecord &x = a.records[i], &y = b.records[i];
        if (x.clip_id != y.clip_id || x.movie_id != y.movie_id) return false;
        if (x.start_ms != y.start_ms || x.end_ms != y.end_ms) return false;
        if (x.ad_text != y.ad_text) return false;
        if (x.frames.shape != y.frames.shape) return false;
        if (std::memcmp(x.frames.data.data(), y.frames.data.data(),
                        x.frames.data.size() * sizeof(float)) != 0)
            return false;
    }
    return true;
}

}  // namespace

TEST_CASE("tokenize: punctuation, case folding, unknowns") {
    Vocabulary vocab;
    for (const char* w : {"jack", "opens", "the", "door"}) vocab.add(w);
    auto ids = tokenize("Jack opens the door.", vocab);
    REQUIRE(ids.size() == 4);
    CHECK(vocab.token(ids[0]) == "jack");
    CHECK(vocab.token(ids[3]) == "door");

    CHECK(tokenize("", vocab).empty());

    auto folded = tokenize("Jack, JACK", vocab);
    REQUIRE(folded.size() == 2);
    CHECK(folded[0] == folded[1]);

    auto unknown = tokenize("zebra", vocab);
    REQUIRE(unknown.size() == 1);
    CHECK(unknown[0] == Vocabulary::kUnk);

    // idempotent on its own detokenized output
    auto once = tokenize("Hello; (strange)-text! again", vocab);
    auto twice = tokenize(detokenize(once, vocab), vocab);
    CHECK(once == twice);
}

TEST_CASE("vocabulary sidecar round trip") {
    Vocabulary vocab;
    vocab.add("alpha");
    vocab.add("beta");
    const std::string path = temp_path("adpipe_vocab_test.txt");
    vocab.save(path);
    Vocabulary loaded = Vocabulary::load(path);
    CHECK(loaded.size() == vocab.size());
    CHECK(loaded.id_of("alpha") == vocab.id_of("alpha"));
    CHECK(loaded.token(Vocabulary::kBos) == "<bos>");
    std::remove(path.c_str());
}

TEST_CASE("container: empty corpus is header-only") {
    Corpus corpus;
    corpus.channels = 3;
    const std::string path = temp_path("adpipe_empty.dadf");
    const std::uint64_t bytes = write_container(corpus, path);
    CHECK(bytes == 20);  // magic + version + channels + record count
    Corpus back = read_container(path);
    CHECK(back.records.empty());
    CHECK(back.channels == 3);
    std::remove(path.c_str());
}

TEST_CASE("container: known record size and bitwise round trip") {
    Corpus corpus;
    corpus.channels = 3;
    ClipRecord rec;
    rec.clip_id = 7;
    rec.movie_id = 1;
    rec.start_ms = 100;
    rec.end_ms = 200;
    rec.ad_text = "hi there";
    rec.frames = TensorF({2, 3}, {0.5f, -1.25f, 3e-7f, 42.0f, -0.0f, 1.0f});
    corpus.records.push_back(rec);

    const std::string path = temp_path("adpipe_one.dadf");
    const std::uint64_t bytes = write_container(corpus, path);
    // header 20 + fixed fields 32 + text 8 + 2*3 floats 24
    CHECK(bytes == 20 + 32 + 8 + 24);
    Corpus back = read_container(path);
    CHECK(bitwise_equal(corpus, back));
    std::remove(path.c_str());
}

TEST_CASE("container: corrupted magic reports offset 0") {
    Corpus corpus;
    corpus.channels = 2;
    const std::string path = temp_path("adpipe_bad.dadf");
    write_container(corpus, path);
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.put('X');
    }
    try {
        read_container(path);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(e.offset == 0);
    }
    std::remove(path.c_str());
}

TEST_CASE("container: truncation reports a useful offset") {
    SyntheticSpec spec;
    spec.num_movies = 1;
    spec.clips_per_movie = 4;
    spec.scene_length = 2;
    spec.channels = 4;
    spec.frames_per_clip = 2;
    spec.noun_pool = 4;
    auto syn = gen_synthetic(spec);
    const std::string path = temp_path("adpipe_trunc.dadf");
    const std::uint64_t bytes = write_container(syn.corpus, path);
    std::filesystem::resize_file(path, bytes - 5);
    CHECK_THROWS_AS(read_container(path), FormatError);
    std::remove(path.c_str());
}

TEST_CASE("container round trip property over randomized corpora") {
    Rng rng(99);
    const std::string path = temp_path("adpipe_prop.dadf");
    for (int trial = 0; trial < 100; ++trial) {
        Corpus corpus = random_corpus(rng, static_cast<std::uint32_t>(1 + rng.uniform_index(5)));
        write_container(corpus, path);
        CHECK(bitwise_equal(corpus, read_container(path)));
    }
    std::remove(path.c_str());
}

TEST_CASE("sample_windows: consecutive counts and boundaries") {
    SyntheticSpec spec;
    spec.num_movies = 2;
    spec.clips_per_movie = 17;
    spec.scene_length = 4;
    spec.channels = 4;
    spec.frames_per_clip = 2;
    spec.noun_pool = 20;
    auto syn = gen_synthetic(spec);

    auto windows16 = sample_windows(syn.corpus, 16, true, 0);
    CHECK(windows16.windows.size() == 4);  // 2 per movie of 17 clips
    for (const auto& w : windows16.windows) {
        REQUIRE(w.size() == 16);
        const auto movie = syn.corpus.records[w.front()].movie_id;
        for (std::size_t i = 0; i < w.size(); ++i) {
            CHECK(syn.corpus.records[w[i]].movie_id == movie);
            if (i) CHECK(w[i] == w[i - 1] + 1);
        }
    }

    auto exact = sample_windows(syn.corpus, 17, true, 0);
    CHECK(exact.windows.size() == 2);
    CHECK(exact.skipped_movies == 0);

    auto too_long = sample_windows(syn.corpus, 18, true, 0);
    CHECK(too_long.windows.empty());
    CHECK(too_long.skipped_movies == 2);
}

TEST_CASE("sample_windows: non-consecutive is reproducible and ordered") {
    SyntheticSpec spec;
    spec.num_movies = 1;
    spec.clips_per_movie = 30;
    spec.scene_length = 5;
    spec.channels = 4;
    spec.frames_per_clip = 2;
    spec.noun_pool = 30;
    auto syn = gen_synthetic(spec);

    auto a = sample_windows(syn.corpus, 6, false, 1234);
    auto b = sample_windows(syn.corpus, 6, false, 1234);
    CHECK(a.windows == b.windows);
    CHECK(a.windows.size() == sample_windows(syn.corpus, 6, true, 0).windows.size());
    for (const auto& w : a.windows)
        for (std::size_t i = 1; i < w.size(); ++i) CHECK(w[i] > w[i - 1]);

    auto c = sample_windows(syn.corpus, 6, false, 5678);
    CHECK(a.windows != c.windows);
}

TEST_CASE("synthetic: sigma=0 single scene shares everything but the noun") {
    SyntheticSpec spec;
    spec.num_movies = 1;
    spec.clips_per_movie = 6;
    spec.scene_length = 6;
    spec.channels = 8;
    spec.frames_per_clip = 3;
    spec.noun_pool = 6;
    spec.noise_sigma = 0.0;
    spec.distinct_weight = 0.0;  // remove the distinctive component entirely
    auto syn = gen_synthetic(spec);
    const auto& first = syn.corpus.records.front().frames;
    for (const auto& rec : syn.corpus.records)
        for (std::size_t i = 0; i < rec.frames.numel(); ++i)
            CHECK(rec.frames.data[i] == doctest::Approx(first.data[i % first.numel()]));
}

TEST_CASE("synthetic: scene structure yields positive redundancy contrast") {
    SyntheticSpec spec;
    spec.num_movies = 2;
    spec.clips_per_movie = 32;
    spec.scene_length = 8;
    spec.channels = 16;
    spec.frames_per_clip = 4;
    spec.noun_pool = 40;
    spec.noise_sigma = 0.05;
    spec.seed = 3;
    auto syn = gen_synthetic(spec);

    std::vector<TensorD> features;
    for (auto [begin, end] : syn.corpus.movie_ranges()) {
        TensorD pooled({end - begin, spec.channels});
        for (std::size_t i = begin; i < end; ++i) {
            auto mean = kernels::mean_rows(syn.corpus.records[i].frames.cast<double>());
            std::copy(mean.data.begin(), mean.data.end(), pooled.row_ptr(i - begin));
        }
        features.push_back(kernels::l2_normalize_rows(pooled));
    }
    CHECK(metrics::redundancy_contrast(features, 3) > 0.2);
}

TEST_CASE("synthetic: fixed seed reproduces byte-identical container") {
    SyntheticSpec spec;
    spec.num_movies = 1;
    spec.clips_per_movie = 10;
    spec.scene_length = 5;
    spec.channels = 6;
    spec.frames_per_clip = 2;
    spec.noun_pool = 10;
    spec.seed = 77;
    const std::string p1 = temp_path("adpipe_seed1.dadf");
    const std::string p2 = temp_path("adpipe_seed2.dadf");
    write_container(gen_synthetic(spec).corpus, p1);
    write_container(gen_synthetic(spec).corpus, p2);
    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(s1 == s2);
    std::remove(p1.c_str());
    std::remove(p2.c_str());
}

TEST_CASE("synthetic ADs are 3 to 6 tokens and nouns stay locally unique") {
    SyntheticSpec spec;
    spec.num_movies = 2;
    spec.clips_per_movie = 30;
    spec.scene_length = 4;
    spec.channels = 8;
    spec.frames_per_clip = 2;
    spec.noun_pool = 12;  // smaller than the movie, so nouns recur cyclically
    auto syn = gen_synthetic(spec);
    std::vector<std::string> nouns;
    for (const auto& rec : syn.corpus.records) {
        auto words = split_words(rec.ad_text);
        CHECK(words.size() >= 3);
        CHECK(words.size() <= 6);
        const std::string noun = words.back();
        CHECK(noun.rfind("noun", 0) == 0);
        nouns.push_back(noun);
    }
    // any run of noun_pool clips inside one movie sees each noun once
    for (auto [begin, end] : syn.corpus.movie_ranges()) {
        for (std::size_t i = begin; i + spec.noun_pool <= end; ++i) {
            std::set<std::string> window(nouns.begin() + i, nouns.begin() + i + spec.noun_pool);
            CHECK(window.size() == spec.noun_pool);
        }
    }
    CHECK(syn.characters.size() == syn.corpus.records.size());
}
