#include "adpipe/dataio.hpp"

#include <algorithm>
#include <cctype>
#include <cstring>
#include <fstream>
#include <sstream>

#include "adpipe/rng.hpp"

namespace adpipe::data {

namespace {

const char* kReserved[Vocabulary::kNumReserved] = {"<pad>", "<bos>", "<eos>", "<unk>", "<char>"};

// Embeddings must agree between the corpus generator and any later training
// run, so they depend on nothing but the vocabulary itself.
constexpr std::uint64_t kEmbeddingSeed = 0x41445046u;  // "ADPF"

bool is_stripped_punct(char c) {
    switch (c) {
        case '.': case ',': case '!': case '?': case ';': case ':':
        case '\'': case '"': case '(': case ')': case '-':
            return true;
        default:
            return false;
    }
}

}  // namespace

Vocabulary::Vocabulary() {
    for (const char* tok : kReserved) {
        token_to_id_[tok] = static_cast<int>(id_to_token_.size());
        id_to_token_.push_back(tok);
    }
}

int Vocabulary::add(const std::string& token) {
    if (token.empty()) throw std::invalid_argument("vocabulary: empty token");
    for (char c : token)
        if ((c >= 'A' && c <= 'Z') || c == ' ' || c == '\t' || c == '\n' || c == '\r')
            throw std::invalid_argument("vocabulary: token must be lowercase without whitespace: '" +
                                        token + "'");
    auto it = token_to_id_.find(token);
    if (it != token_to_id_.end()) return it->second;
    const int id = static_cast<int>(id_to_token_.size());
    token_to_id_[token] = id;
    id_to_token_.push_back(token);
    return id;
}

int Vocabulary::id_of(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(const std::string& token) const { return token_to_id_.count(token) != 0; }

const std::string& Vocabulary::token(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size())
        throw std::invalid_argument("vocabulary: id out of range: " + std::to_string(id));
    return id_to_token_[static_cast<std::size_t>(id)];
}

void Vocabulary::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open vocabulary file for writing: " + path);
    for (const std::string& tok : id_to_token_) out << tok << '\n';
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open vocabulary file: " + path);
    Vocabulary vocab;
    std::string line;
    int id = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (id < kNumReserved) {
            if (line != kReserved[id])
                throw std::runtime_error("vocabulary file: line " + std::to_string(id) +
                                         " must be the reserved token " + kReserved[id]);
        } else {
            vocab.add(line);
        }
        ++id;
    }
    if (id < kNumReserved) throw std::runtime_error("vocabulary file: missing reserved tokens");
    return vocab;
}

std::vector<std::string> split_words(const std::string& text) {
    std::string cleaned;
    cleaned.reserve(text.size());
    for (char c : text) {
        if (is_stripped_punct(c))
            cleaned.push_back(' ');
        else if (c >= 'A' && c <= 'Z')
            cleaned.push_back(static_cast<char>(c - 'A' + 'a'));
        else
            cleaned.push_back(c);
    }
    std::vector<std::string> words;
    std::istringstream is(cleaned);
    std::string w;
    while (is >> w) words.push_back(w);
    return words;
}

std::vector<int> tokenize(const std::string& text, const Vocabulary& vocab) {
    std::vector<int> ids;
    for (const std::string& w : split_words(text)) ids.push_back(vocab.id_of(w));
    return ids;
}

std::string detokenize(const std::vector<int>& ids, const Vocabulary& vocab) {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i) out.push_back(' ');
        out += vocab.token(ids[i]);
    }
    return out;
}

void Corpus::validate() const {
    for (std::size_t i = 0; i < records.size(); ++i) {
        const ClipRecord& r = records[i];
        if (r.start_ms >= r.end_ms)
            throw std::invalid_argument("corpus: clip " + std::to_string(r.clip_id) +
                                        " has start_ms >= end_ms");
        if (r.frames.rank() != 2 || r.frames.rows() < 1)
            throw std::invalid_argument("corpus: clip " + std::to_string(r.clip_id) +
                                        " must have at least one frame");
        if (r.frames.cols() != channels)
            throw std::invalid_argument("corpus: clip " + std::to_string(r.clip_id) +
                                        " channel count differs from corpus");
        if (i > 0) {
            const ClipRecord& p = records[i - 1];
            if (p.movie_id > r.movie_id)
                throw std::invalid_argument("corpus: records not ordered by movie_id");
            if (p.movie_id == r.movie_id) {
                if (p.start_ms >= r.start_ms)
                    throw std::invalid_argument("corpus: records not strictly ordered by start_ms");
                if (p.end_ms > r.start_ms)
                    throw std::invalid_argument("corpus: overlapping clips in movie " +
                                                std::to_string(r.movie_id));
            }
        }
    }
}

std::vector<std::pair<std::size_t, std::size_t>> Corpus::movie_ranges() const {
    std::vector<std::pair<std::size_t, std::size_t>> ranges;
    std::size_t begin = 0;
    for (std::size_t i = 1; i <= records.size(); ++i) {
        if (i == records.size() || records[i].movie_id != records[begin].movie_id) {
            ranges.emplace_back(begin, i);
            begin = i;
        }
    }
    return ranges;
}

// ---- container io ----

namespace {

struct Writer {
    std::ofstream out;
    std::uint64_t offset = 0;

    explicit Writer(const std::string& path) : out(path, std::ios::binary) {
        if (!out) throw FormatError(0, "cannot open container for writing: " + path);
    }

    void bytes(const void* p, std::size_t n) {
        out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
        if (!out) throw FormatError(offset, "write failure");
        offset += n;
    }
    void u32(std::uint32_t v) {
        unsigned char b[4];
        for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
        bytes(b, 4);
    }
    void u64(std::uint64_t v) {
        unsigned char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
        bytes(b, 8);
    }
    void f32(float v) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        u32(bits);
    }
};

struct Reader {
    std::ifstream in;
    std::uint64_t offset = 0;

    explicit Reader(const std::string& path) : in(path, std::ios::binary) {
        if (!in) throw FormatError(0, "cannot open container: " + path);
    }

    void bytes(void* p, std::size_t n, const char* what) {
        in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in.gcount()) != n)
            throw FormatError(offset, std::string("truncated container while reading ") + what);
        offset += n;
    }
    std::uint32_t u32(const char* what) {
        unsigned char b[4];
        bytes(b, 4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
        return v;
    }
    std::uint64_t u64(const char* what) {
        unsigned char b[8];
        bytes(b, 8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
        return v;
    }
    float f32(const char* what) {
        const std::uint32_t bits = u32(what);
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
};

constexpr unsigned char kMagic[4] = {0x44, 0x41, 0x44, 0x46};  // "DADF"
constexpr std::uint32_t kVersion = 1;

}  // namespace

std::uint64_t write_container(const Corpus& corpus, const std::string& path) {
    corpus.validate();
    Writer w(path);
    w.bytes(kMagic, 4);
    w.u32(kVersion);
    w.u32(corpus.channels);
    w.u64(corpus.records.size());
    for (const ClipRecord& r : corpus.records) {
        w.u32(r.clip_id);
        w.u32(r.movie_id);
        w.u64(r.start_ms);
        w.u64(r.end_ms);
        w.u32(static_cast<std::uint32_t>(r.frames.rows()));
        w.u32(static_cast<std::uint32_t>(r.ad_text.size()));
        w.bytes(r.ad_text.data(), r.ad_text.size());
        for (float v : r.frames.data) w.f32(v);
    }
    w.out.flush();
    if (!w.out) throw FormatError(w.offset, "flush failure");
    return w.offset;
}

Corpus read_container(const std::string& path) {
    Reader r(path);
    unsigned char magic[4];
    r.bytes(magic, 4, "magic");
    if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError(0, "bad magic, not a DADF container");
    const std::uint64_t version_off = r.offset;
    const std::uint32_t version = r.u32("version");
    if (version != kVersion)
        throw FormatError(version_off, "unsupported container version " + std::to_string(version));
    Corpus corpus;
    corpus.channels = r.u32("channel count");
    const std::uint64_t count = r.u64("record count");
    corpus.records.reserve(static_cast<std::size_t>(count));
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::uint64_t record_off = r.offset;
        ClipRecord rec;
        rec.clip_id = r.u32("clip_id");
        rec.movie_id = r.u32("movie_id");
        rec.start_ms = r.u64("start_ms");
        rec.end_ms = r.u64("end_ms");
        const std::uint32_t n = r.u32("frame count");
        if (n == 0) throw FormatError(record_off, "record with zero frames");
        const std::uint32_t text_len = r.u32("text length");
        rec.ad_text.resize(text_len);
        if (text_len) r.bytes(rec.ad_text.data(), text_len, "ad text");
        rec.frames = TensorF({n, corpus.channels});
        for (float& v : rec.frames.data) v = r.f32("frame data");
        corpus.records.push_back(std::move(rec));
    }
    try {
        corpus.validate();
    } catch (const std::invalid_argument& e) {
        throw FormatError(r.offset, std::string("container violates corpus invariants: ") + e.what());
    }
    return corpus;
}

// ---- windows ----

WindowSet sample_windows(const Corpus& corpus, std::size_t n_clips, bool consecutive,
                         std::uint64_t seed, std::size_t stride) {
    if (n_clips < 1) throw std::invalid_argument("sample_windows: window size must be >= 1");
    if (stride < 1) throw std::invalid_argument("sample_windows: stride must be >= 1");
    WindowSet set;
    Rng rng(seed);
    for (auto [begin, end] : corpus.movie_ranges()) {
        const std::size_t len = end - begin;
        if (len < n_clips) {
            ++set.skipped_movies;
            continue;
        }
        const std::size_t count = (len - n_clips) / stride + 1;
        for (std::size_t w = 0; w < count; ++w) {
            std::vector<std::size_t> window;
            window.reserve(n_clips);
            if (consecutive) {
                for (std::size_t j = 0; j < n_clips; ++j) window.push_back(begin + w * stride + j);
            } else {
                for (std::size_t idx : rng.sample_without_replacement(len, n_clips))
                    window.push_back(begin + idx);
            }
            set.windows.push_back(std::move(window));
        }
    }
    return set;
}

// ---- synthetic corpus ----

void SyntheticSpec::validate() const {
    if (num_movies < 1) throw std::invalid_argument("synthetic: num_movies must be >= 1");
    if (clips_per_movie < 1) throw std::invalid_argument("synthetic: clips_per_movie must be >= 1");
    if (scene_length < 2) throw std::invalid_argument("synthetic: scene_length must be >= 2");
    if (channels < 2) throw std::invalid_argument("synthetic: channels must be >= 2");
    if (frames_per_clip < 1) throw std::invalid_argument("synthetic: frames_per_clip must be >= 1");
    if (noun_pool < scene_length)
        throw std::invalid_argument("synthetic: noun_pool must be at least scene_length");
    if (name_pool < 1 || verb_pool < 1) throw std::invalid_argument("synthetic: empty token pool");
    if (noise_sigma < 0.0) throw std::invalid_argument("synthetic: noise_sigma must be >= 0");
    if (distinct_weight < 0.0) throw std::invalid_argument("synthetic: distinct_weight must be >= 0");
}

TensorF token_embeddings(const Vocabulary& vocab, std::size_t channels) {
    Rng rng(kEmbeddingSeed);
    TensorF table({vocab.size(), channels});
    for (std::size_t i = 0; i < vocab.size(); ++i) {
        float* row = table.row_ptr(i);
        double norm = 0.0;
        for (std::size_t c = 0; c < channels; ++c) {
            row[c] = static_cast<float>(rng.normal());
            norm += static_cast<double>(row[c]) * row[c];
        }
        norm = std::sqrt(std::max(norm, 1e-12));
        for (std::size_t c = 0; c < channels; ++c) row[c] = static_cast<float>(row[c] / norm);
    }
    return table;
}

SyntheticCorpus gen_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    SyntheticCorpus out;
    Vocabulary& vocab = out.vocab;

    const auto pool = [&vocab](const char* prefix, std::size_t count) {
        std::vector<int> ids;
        ids.reserve(count);
        for (std::size_t i = 0; i < count; ++i) ids.push_back(vocab.add(prefix + std::to_string(i)));
        return ids;
    };
    const int the_id = vocab.add("the");
    const std::vector<int> names = pool("name", spec.name_pool);
    const std::vector<int> verbs = pool("verb", spec.verb_pool);
    const std::vector<int> adjectives = pool("adj", spec.adjective_pool);
    const std::vector<int> nouns = pool("noun", spec.noun_pool);

    const TensorF emb = token_embeddings(vocab, spec.channels);
    const std::size_t C = spec.channels;

    Rng rng(spec.seed);
    out.corpus.channels = static_cast<std::uint32_t>(C);
    std::uint32_t next_clip_id = 0;
    for (std::size_t m = 0; m < spec.num_movies; ++m) {
        // Two recurring characters per movie, taken round-robin from the pool.
        const int name_a = names[(2 * m) % names.size()];
        const int name_b = names[(2 * m + 1) % names.size()];
        // One shuffled cycle per movie: a noun recurs only at distances of a
        // full pool length, so any window shorter than the pool sees each
        // noun at most once.
        std::vector<int> movie_nouns = nouns;
        rng.shuffle(movie_nouns.begin(), movie_nouns.end());

        int scene_verb = verbs[0];
        std::vector<float> scene_dir(C, 0.0f);
        for (std::size_t i = 0; i < spec.clips_per_movie; ++i) {
            if (i % spec.scene_length == 0) {
                scene_verb = verbs[rng.uniform_index(verbs.size())];
                const float* v = emb.row_ptr(static_cast<std::size_t>(scene_verb));
                scene_dir.assign(v, v + C);
            }
            const int name = rng.uniform() < 0.5 ? name_a : name_b;
            const int noun = movie_nouns[i % movie_nouns.size()];

            std::vector<int> text_ids = {name, scene_verb};
            if (rng.uniform() < 0.7) text_ids.push_back(the_id);
            if (!adjectives.empty()) {
                // occasional filler adjectives keep AD lengths uneven
                const double u = rng.uniform();
                std::size_t n_adj = u < 0.05 ? 2 : (u < 0.3 ? 1 : 0);
                for (std::size_t a = 0; a < n_adj; ++a)
                    text_ids.push_back(adjectives[rng.uniform_index(adjectives.size())]);
            }
            text_ids.push_back(noun);

            ClipRecord rec;
            rec.clip_id = next_clip_id++;
            rec.movie_id = static_cast<std::uint32_t>(m);
            rec.start_ms = static_cast<std::uint64_t>(i) * 2000;
            rec.end_ms = rec.start_ms + 1800;
            rec.ad_text = detokenize(text_ids, vocab);

            // Base direction: scene verb plus the clip's distinctive noun.
            std::vector<double> base(C);
            const float* noun_dir = emb.row_ptr(static_cast<std::size_t>(noun));
            double norm = 0.0;
            for (std::size_t c = 0; c < C; ++c) {
                base[c] = static_cast<double>(scene_dir[c]) + spec.distinct_weight * noun_dir[c];
                norm += base[c] * base[c];
            }
            norm = std::sqrt(std::max(norm, 1e-12));
            rec.frames = TensorF({spec.frames_per_clip, C});
            for (std::size_t f = 0; f < spec.frames_per_clip; ++f) {
                float* row = rec.frames.row_ptr(f);
                for (std::size_t c = 0; c < C; ++c)
                    row[c] = static_cast<float>(base[c] / norm + spec.noise_sigma * rng.normal());
            }
            out.characters.emplace_back(rec.clip_id, vocab.token(name));
            out.corpus.records.push_back(std::move(rec));
        }
    }
    out.corpus.validate();
    return out;
}

void write_characters_csv(const std::vector<std::pair<std::uint32_t, std::string>>& characters,
                          const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open characters file for writing: " + path);
    out << "clip_id,name\n";
    for (const auto& [clip_id, name] : characters) out << clip_id << ',' << name << '\n';
}

std::map<std::uint32_t, std::string> read_characters_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open characters file: " + path);
    std::map<std::uint32_t, std::string> out;
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (header) {
            header = false;
            continue;
        }
        if (line.empty()) continue;
        const std::size_t comma = line.find(',');
        if (comma == std::string::npos)
            throw std::runtime_error("characters file: malformed line '" + line + "'");
        out[static_cast<std::uint32_t>(std::stoul(line.substr(0, comma)))] = line.substr(comma + 1);
    }
    return out;
}

}  // namespace adpipe::data
