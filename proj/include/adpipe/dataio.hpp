#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "adpipe/tensor.hpp"

namespace adpipe::data {

/// Token table with fixed reserved ids. Tokens are lowercase by contract;
/// add() rejects anything containing uppercase ASCII or whitespace.
class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kUnk = 3;
    static constexpr int kCharSlot = 4;
    static constexpr int kNumReserved = 5;

    Vocabulary();

    int add(const std::string& token);
    int id_of(const std::string& token) const;  // kUnk when missing
    bool contains(const std::string& token) const;
    const std::string& token(int id) const;
    std::size_t size() const { return id_to_token_.size(); }

    /// Sidecar format: one token per line, line number = id.
    void save(const std::string& path) const;
    static Vocabulary load(const std::string& path);

private:
    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, int> token_to_id_;
};

/// Lowercases, maps the ASCII punctuation set .,!?;:'"()- to spaces, and
/// splits on whitespace. Bytes outside ASCII pass through untouched.
std::vector<std::string> split_words(const std::string& text);

std::vector<int> tokenize(const std::string& text, const Vocabulary& vocab);
std::string detokenize(const std::vector<int>& ids, const Vocabulary& vocab);

/// One clip: its frame-embedding matrix and the AD narration text.
struct ClipRecord {
    std::uint32_t clip_id = 0;
    std::uint32_t movie_id = 0;
    std::uint64_t start_ms = 0;
    std::uint64_t end_ms = 0;
    TensorF frames;  // [n x C]
    std::string ad_text;
};

struct Corpus {
    std::uint32_t channels = 0;
    std::vector<ClipRecord> records;  // ordered by (movie_id, start_ms)

    void validate() const;  // throws std::invalid_argument

    /// Contiguous [first, last) index ranges per movie, in record order.
    std::vector<std::pair<std::size_t, std::size_t>> movie_ranges() const;
};

/// Container parse/write failure; carries the byte offset of the problem.
struct FormatError : std::runtime_error {
    std::uint64_t offset;
    FormatError(std::uint64_t off, const std::string& what)
        : std::runtime_error(what + " (at byte " + std::to_string(off) + ")"), offset(off) {}
};

/// Binary clip container. Layout, all little-endian:
///   magic "DADF" | u32 version=1 | u32 channels | u64 record_count
///   per record: u32 clip_id | u32 movie_id | u64 start_ms | u64 end_ms |
///               u32 n | u32 text_len | text bytes | n*channels f32 frames
std::uint64_t write_container(const Corpus& corpus, const std::string& path);
Corpus read_container(const std::string& path);

struct WindowSet {
    std::vector<std::vector<std::size_t>> windows;  // record indices, time order
    std::size_t skipped_movies = 0;                 // movies shorter than N
};

/// Consecutive mode: sliding windows of N adjacent records within one movie.
/// Non-consecutive: the same number of windows per movie, each drawing N
/// records uniformly without replacement (time order preserved inside).
WindowSet sample_windows(const Corpus& corpus, std::size_t n_clips, bool consecutive,
                         std::uint64_t seed, std::size_t stride = 1);

/// Synthetic corpus layout: each movie is a run of scenes of scene_length
/// clips. A scene shares one verb (and its embedding direction); every clip
/// carries a unique noun whose embedding is mixed into its frames, so
/// neighbours look alike while each clip keeps a distinctive component.
struct SyntheticSpec {
    std::size_t num_movies = 2;
    std::size_t clips_per_movie = 100;
    std::size_t scene_length = 8;
    std::size_t channels = 24;
    std::size_t frames_per_clip = 8;
    std::size_t name_pool = 4;       // character names per corpus (2 per movie)
    std::size_t verb_pool = 16;      // scene verbs
    std::size_t noun_pool = 64;      // distinctive nouns, cycled per movie; keep >= any window size
    std::size_t adjective_pool = 6;  // optional filler adjectives
    double noise_sigma = 0.1;        // per-coordinate Gaussian noise stddev
    double distinct_weight = 0.7;    // noun-direction weight inside frames
    std::uint64_t seed = 0;

    void validate() const;
};

struct SyntheticCorpus {
    Corpus corpus;
    Vocabulary vocab;
    /// clip_id -> character name token, in record order.
    std::vector<std::pair<std::uint32_t, std::string>> characters;
};

SyntheticCorpus gen_synthetic(const SyntheticSpec& spec);

/// Deterministic unit-norm embedding per vocabulary id, a pure function of
/// the vocabulary order and channel count (fixed internal seed). This is the
/// frozen "text encoder" used by synthetic corpora.
TensorF token_embeddings(const Vocabulary& vocab, std::size_t channels);

/// characters.csv sidecar: header clip_id,name then one line per clip.
void write_characters_csv(const std::vector<std::pair<std::uint32_t, std::string>>& characters,
                          const std::string& path);
std::map<std::uint32_t, std::string> read_characters_csv(const std::string& path);

}  // namespace adpipe::data
