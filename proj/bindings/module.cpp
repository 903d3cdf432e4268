// Python bindings for the core operations: tensor primitives, contextual EM,
// caption metrics, and the clip container / synthetic corpus utilities.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "adpipe/contextual_ema.hpp"
#include "adpipe/dataio.hpp"
#include "adpipe/gradsuite.hpp"
#include "adpipe/metrics.hpp"
#include "adpipe/tensor.hpp"

namespace py = pybind11;
using namespace adpipe;

namespace {

TensorD tensor_from(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 2) throw std::invalid_argument("expected a 2-D array");
    TensorD t({static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1))});
    std::copy(a.data(), a.data() + t.numel(), t.data.begin());
    return t;
}

py::array_t<double> array_from(const TensorD& t) {
    py::array_t<double> out({t.rows(), t.cols()});
    std::copy(t.data.begin(), t.data.end(), out.mutable_data());
    return out;
}

py::dict corpus_to_dict(const data::Corpus& corpus) {
    py::dict d;
    d["channels"] = corpus.channels;
    py::list records;
    for (const auto& rec : corpus.records) {
        py::dict r;
        r["clip_id"] = rec.clip_id;
        r["movie_id"] = rec.movie_id;
        r["start_ms"] = rec.start_ms;
        r["end_ms"] = rec.end_ms;
        r["ad_text"] = rec.ad_text;
        r["frames"] = array_from(rec.frames.cast<double>());
        records.append(r);
    }
    d["records"] = records;
    return d;
}

data::Corpus corpus_from_dict(const py::dict& d) {
    data::Corpus corpus;
    corpus.channels = d["channels"].cast<std::uint32_t>();
    for (auto item : d["records"].cast<py::list>()) {
        py::dict r = item.cast<py::dict>();
        data::ClipRecord rec;
        rec.clip_id = r["clip_id"].cast<std::uint32_t>();
        rec.movie_id = r["movie_id"].cast<std::uint32_t>();
        rec.start_ms = r["start_ms"].cast<std::uint64_t>();
        rec.end_ms = r["end_ms"].cast<std::uint64_t>();
        rec.ad_text = r["ad_text"].cast<std::string>();
        rec.frames = tensor_from(r["frames"].cast<py::array_t<double>>()).cast<float>();
        corpus.records.push_back(std::move(rec));
    }
    return corpus;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "contextual audio-description pipeline: core numeric and metric operations";

    m.def(
        "softmax_rows",
        [](const py::array_t<double>& logits, double temperature) {
            return array_from(kernels::softmax_rows(tensor_from(logits), temperature));
        },
        py::arg("logits"), py::arg("temperature") = 1.0,
        "Row-wise temperature softmax, stabilized by the per-row max.");

    m.def(
        "scaled_attention",
        [](const py::array_t<double>& q, const py::array_t<double>& k,
           const py::array_t<double>& v) {
            return array_from(
                kernels::scaled_attention(tensor_from(q), tensor_from(k), tensor_from(v)));
        },
        py::arg("query"), py::arg("key"), py::arg("value"),
        "softmax(Q K^T / sqrt(d)) V.");

    m.def(
        "em_iterate",
        [](const py::array_t<double>& h, const py::array_t<double>& m0, std::size_t iterations,
           double tau) {
            auto state = ema::em_iterate(tensor_from(h), tensor_from(m0), iterations, tau);
            return py::make_tuple(array_from(state.bases), array_from(state.responsibilities),
                                  state.rescued);
        },
        py::arg("embeddings"), py::arg("initial_bases"), py::arg("iterations") = 3,
        py::arg("tau") = 0.05,
        "Contextual EM rounds; returns (bases, responsibilities, rescued_count).");

    m.def(
        "reconstruct",
        [](const py::array_t<double>& z, const py::array_t<double>& bases) {
            return array_from(kernels::matmul(tensor_from(z), tensor_from(bases)));
        },
        py::arg("responsibilities"), py::arg("bases"),
        "Data re-estimation: responsibilities x bases.");

    m.def("rouge_l", &metrics::rouge_l, py::arg("candidate"), py::arg("reference"),
          py::arg("beta") = 1.2);

    m.def(
        "cider",
        [](const std::vector<std::vector<int>>& cands, const std::vector<std::vector<int>>& refs,
           std::size_t max_n, double sigma) { return metrics::cider(cands, refs, max_n, sigma); },
        py::arg("candidates"), py::arg("references"), py::arg("max_n") = 4,
        py::arg("sigma_len") = 6.0);

    m.def(
        "recall_at_k_within_n",
        [](const std::vector<std::tuple<std::vector<int>, std::vector<int>, std::uint32_t,
                                        std::uint32_t>>& raw,
           std::size_t k, std::size_t n, const std::string& similarity) {
            std::vector<metrics::EvalPair> pairs;
            std::vector<std::vector<int>> refs;
            for (const auto& [cand, ref, clip, movie] : raw) {
                pairs.push_back({cand, ref, clip, movie});
                refs.push_back(ref);
            }
            data::Vocabulary vocab;  // only needed by the char-ngram strategy
            return metrics::recall_at_k_within_n(
                pairs, k, n, metrics::SimilarityFn::from_name(similarity, refs, vocab));
        },
        py::arg("pairs"), py::arg("k"), py::arg("n"), py::arg("similarity") = "tfidf-cosine",
        "pairs: list of (candidate_ids, reference_ids, clip_id, movie_id) in time order.");

    m.def(
        "redundancy_contrast",
        [](const std::vector<py::array_t<double>>& per_movie, std::size_t w) {
            std::vector<TensorD> features;
            for (const auto& a : per_movie) features.push_back(tensor_from(a));
            return metrics::redundancy_contrast(features, w);
        },
        py::arg("clip_features_per_movie"), py::arg("w") = 3);

    py::class_<data::Vocabulary>(m, "Vocabulary")
        .def(py::init<>())
        .def("add", &data::Vocabulary::add)
        .def("id_of", &data::Vocabulary::id_of)
        .def("token", &data::Vocabulary::token)
        .def("__len__", &data::Vocabulary::size)
        .def("save", &data::Vocabulary::save)
        .def_static("load", &data::Vocabulary::load);

    m.def("tokenize", &data::tokenize, py::arg("text"), py::arg("vocab"));
    m.def("detokenize", &data::detokenize, py::arg("ids"), py::arg("vocab"));

    m.def(
        "read_container",
        [](const std::string& path) { return corpus_to_dict(data::read_container(path)); },
        py::arg("path"));
    m.def(
        "write_container",
        [](const py::dict& corpus, const std::string& path) {
            return data::write_container(corpus_from_dict(corpus), path);
        },
        py::arg("corpus"), py::arg("path"));

    m.def(
        "gen_synthetic",
        [](std::size_t movies, std::size_t clips_per_movie, std::size_t scene_length,
           std::size_t channels, std::size_t frames, std::size_t nouns, double sigma,
           std::uint64_t seed) {
            data::SyntheticSpec spec;
            spec.num_movies = movies;
            spec.clips_per_movie = clips_per_movie;
            spec.scene_length = scene_length;
            spec.channels = channels;
            spec.frames_per_clip = frames;
            spec.noun_pool = nouns;
            spec.noise_sigma = sigma;
            spec.seed = seed;
            auto syn = data::gen_synthetic(spec);
            py::list characters;
            for (const auto& [clip, name] : syn.characters)
                characters.append(py::make_tuple(clip, name));
            py::list vocab_tokens;
            for (std::size_t i = 0; i < syn.vocab.size(); ++i)
                vocab_tokens.append(syn.vocab.token(static_cast<int>(i)));
            return py::make_tuple(corpus_to_dict(syn.corpus), vocab_tokens, characters);
        },
        py::arg("movies") = 2, py::arg("clips_per_movie") = 32, py::arg("scene_length") = 8,
        py::arg("channels") = 16, py::arg("frames") = 4, py::arg("nouns") = 40,
        py::arg("sigma") = 0.1, py::arg("seed") = 0,
        "Scene-structured synthetic corpus; returns (corpus, vocab_tokens, characters).");

    m.def(
        "grad_suite",
        [](std::uint64_t seed, std::size_t instances) {
            py::list out;
            for (const auto& check : gradsuite::run_default_suite<long double>(seed, 1e-5, 1e-4,
                                                                               instances))
                out.append(py::make_tuple(check.name, check.report.pass, check.report.worst));
            return out;
        },
        py::arg("seed") = 0, py::arg("instances") = 1,
        "Finite-difference gradient verification; returns [(name, pass, max_rel_err)].");
}
