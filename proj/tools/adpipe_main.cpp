// adpipe: synthetic-corpus generation, two-stage training, evaluation and
// analysis for contextual audio-description models.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "adpipe/checkpoint.hpp"
#include "adpipe/config.hpp"
#include "adpipe/evaluation.hpp"
#include "adpipe/gradsuite.hpp"
#include "adpipe/pipeline.hpp"
#include "json.hpp"

namespace {

using namespace adpipe;
namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitIo = 4;

struct CommonArgs {
    std::string config_path;
    std::string out = ".";
    std::map<std::string, std::string> overrides;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "key=value config file");
    cmd->add_option("--out", args.out, "output directory")->capture_default_str();
    const auto bind = [cmd, &args](const char* flag, const char* key, const char* desc) {
        cmd->add_option_function<std::string>(
            flag, [&args, key](const std::string& v) { args.overrides[key] = v; }, desc);
    };
    bind("--seed", "seed", "run seed");
    bind("--threads", "threads", "worker cap (default 1, deterministic)");
}

void bind_key(CLI::App* cmd, CommonArgs& args, const char* flag, const char* key,
              const char* desc) {
    cmd->add_option_function<std::string>(
        flag, [&args, key](const std::string& v) { args.overrides[key] = v; }, desc);
}

void bind_false(CLI::App* cmd, CommonArgs& args, const char* flag, const char* key,
                const char* desc) {
    cmd->add_flag_callback(
        flag, [&args, key]() { args.overrides[key] = "false"; }, desc);
}

void bind_true(CLI::App* cmd, CommonArgs& args, const char* flag, const char* key,
               const char* desc) {
    cmd->add_flag_callback(
        flag, [&args, key]() { args.overrides[key] = "true"; }, desc);
}

void add_stage2_flags(CLI::App* cmd, CommonArgs& args) {
    bind_key(cmd, args, "--window", "s2.window", "clips per context window (N)");
    bind_key(cmd, args, "--frames", "s2.frames", "frames per clip (T)");
    bind_key(cmd, args, "--prompts", "s2.prompts", "resampled vectors per clip (T')");
    bind_key(cmd, args, "--bases", "s2.bases", "EM bases (K)");
    bind_key(cmd, args, "--em-iters", "s2.em_iters", "EM rounds (R)");
    bind_key(cmd, args, "--tau-e", "s2.tau_e", "EM responsibility temperature");
    bind_key(cmd, args, "--alpha", "s2.alpha", "reconstructed-branch weight");
    bind_key(cmd, args, "--beta", "s2.beta", "cross-attention-branch weight");
    bind_key(cmd, args, "--dec-dim", "dec.dim", "decoder width");
    bind_key(cmd, args, "--dec-layers", "dec.layers", "decoder blocks");
    bind_key(cmd, args, "--dec-heads", "dec.heads", "attention heads");
    bind_key(cmd, args, "--dec-context", "dec.context", "decoder context limit");
    bind_false(cmd, args, "--no-ema", "s2.use_ema", "disable the EM module entirely");
    bind_false(cmd, args, "--no-xattn", "s2.use_xattn", "disable the cross-attention branch");
    bind_false(cmd, args, "--no-dist", "s2.use_dist", "disable the distinctive loss");
}

cfg::RunConfig load_config(const CommonArgs& args) {
    return cfg::RunConfig::from_sources(args.config_path, args.overrides);
}

fs::path ensure_out(const CommonArgs& args) {
    fs::path out(args.out);
    fs::create_directories(out);
    return out;
}

void write_snapshot(const cfg::RunConfig& config, const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write config snapshot: " + path.string());
    for (const auto& [k, v] : config.snapshot()) out << k << "=" << v << "\n";
}

/// Writes the manifest up front, then again with digests once outputs exist.
struct ManifestScope {
    cfg::RunManifest manifest;
    fs::path dir;

    ManifestScope(const cfg::RunConfig& config, const fs::path& out) : dir(out) {
        manifest.config = config;
        manifest.version = cfg::kVersionString;
        manifest.started = cfg::RunManifest::now_iso8601();
        manifest.write((dir / "manifest.json").string());
    }

    void finish(const std::vector<fs::path>& outputs) {
        manifest.finished = cfg::RunManifest::now_iso8601();
        for (const fs::path& p : outputs)
            manifest.outputs.emplace_back(p.filename().string(), cfg::file_digest(p.string()));
        manifest.write((dir / "manifest.json").string());
    }
};

pipeline::Stage2Config stage2_config(const cfg::RunConfig& config, std::size_t vocab_size) {
    pipeline::Stage2Config s2;
    s2.window = config.window_n;
    s2.frames = config.frames_t;
    s2.prompts = config.prompts_t;
    s2.em.bases = config.bases_k;
    s2.em.iterations = config.em_iters;
    s2.em.tau = config.tau_e;
    s2.fusion.alpha = config.alpha;
    s2.fusion.beta = config.beta;
    s2.decoder.vocab = vocab_size;
    s2.decoder.dim = config.dec_dim;
    s2.decoder.layers = config.dec_layers;
    s2.decoder.heads = config.dec_heads;
    s2.decoder.context = config.dec_context;
    s2.use_ema = config.use_ema;
    s2.use_xattn = config.use_xattn;
    s2.use_dist = config.use_dist;
    s2.consecutive = config.consecutive;
    s2.stride = config.window_stride;
    s2.learning_rate = config.s2_lr;
    s2.epochs = config.s2_epochs;
    s2.batch_windows = config.batch_windows;
    s2.seed = config.seed;
    s2.train_decoder = config.train_decoder;
    s2.train_adapter = config.train_adapter;
    return s2;
}

align::AlignmentConfig stage1_config(const cfg::RunConfig& config) {
    align::AlignmentConfig s1;
    s1.gamma = config.gamma;
    s1.tau_f = config.tau_f;
    s1.frames_sampled = config.frames_sampled;
    s1.logit_scale = config.logit_scale;
    s1.learning_rate = config.s1_lr;
    s1.epochs = config.s1_epochs;
    s1.batch_size = config.s1_batch;
    s1.seed = config.seed;
    return s1;
}

ParamStore<float> load_adapter_or_identity(const std::string& path, std::size_t channels) {
    if (path.empty()) {
        ParamStore<float> adapter;
        align::init_adapter_identity(adapter, channels);
        return adapter;
    }
    return load_checkpoint(path);
}

std::map<std::uint32_t, std::string> load_characters(const std::string& path) {
    if (path.empty()) return {};
    return data::read_characters_csv(path);
}

// ---- commands ----

int run_gen_synthetic(const CommonArgs& args) {
    cfg::RunConfig config = load_config(args);
    const fs::path out = ensure_out(args);
    ManifestScope manifest(config, out);

    data::SyntheticSpec spec = config.synthetic;
    spec.seed = config.seed;
    data::SyntheticCorpus syn = data::gen_synthetic(spec);

    const fs::path corpus_path = out / "corpus.dadf";
    const fs::path vocab_path = out / "vocab.txt";
    const fs::path chars_path = out / "characters.csv";
    const fs::path snapshot_path = out / "config.snapshot.cfg";
    data::write_container(syn.corpus, corpus_path.string());
    syn.vocab.save(vocab_path.string());
    data::write_characters_csv(syn.characters, chars_path.string());
    write_snapshot(config, snapshot_path);
    manifest.finish({corpus_path, vocab_path, chars_path, snapshot_path});

    std::cout << "wrote " << syn.corpus.records.size() << " clips (" << spec.num_movies
              << " movies) to " << corpus_path.string() << "\n";
    return kExitOk;
}

int run_adapt(const CommonArgs& args, const std::string& corpus_path,
              const std::string& vocab_path) {
    cfg::RunConfig config = load_config(args);
    const fs::path out = ensure_out(args);
    ManifestScope manifest(config, out);

    const data::Corpus corpus = data::read_container(corpus_path);
    const data::Vocabulary vocab = data::Vocabulary::load(vocab_path);
    auto result = align::adapt_train<float>(corpus, vocab, stage1_config(config));

    const fs::path ckpt = out / "adapter.ckpt";
    const fs::path csv = out / "stage1_loss.csv";
    const fs::path snapshot_path = out / "config.snapshot.cfg";
    save_checkpoint(result.adapter, ckpt.string());
    align::write_stage1_loss_csv(result.log, csv.string());
    write_snapshot(config, snapshot_path);
    manifest.finish({ckpt, csv, snapshot_path});

    std::printf("stage1: %zu steps, first epoch mean %.6g, final %.6g\n", result.log.size(),
                result.first_epoch_mean, result.final_epoch_mean);
    return kExitOk;
}

int run_train(const CommonArgs& args, const std::string& corpus_path,
              const std::string& vocab_path, const std::string& characters_path,
              const std::string& adapter_path, bool nonconsecutive) {
    cfg::RunConfig config = load_config(args);
    if (nonconsecutive) config.consecutive = false;
    const fs::path out = ensure_out(args);
    ManifestScope manifest(config, out);

    const data::Corpus corpus = data::read_container(corpus_path);
    const data::Vocabulary vocab = data::Vocabulary::load(vocab_path);
    const auto characters = load_characters(characters_path);
    const ParamStore<float> adapter = load_adapter_or_identity(adapter_path, corpus.channels);

    pipeline::Stage2Config s2 = stage2_config(config, vocab.size());
    auto result = pipeline::train_stage2<float>(corpus, vocab, characters, adapter, s2);
    if (result.skipped_movies)
        std::cerr << "warning: skipped " << result.skipped_movies
                  << " movie(s) shorter than the window\n";

    const fs::path ckpt = out / "model.ckpt";
    const fs::path csv = out / "stage2_loss.csv";
    const fs::path snapshot_path = out / "config.snapshot.cfg";
    save_checkpoint(result.models, ckpt.string());
    pipeline::write_stage2_loss_csv(result.log, csv.string());
    write_snapshot(config, snapshot_path);
    manifest.finish({ckpt, csv, snapshot_path});

    std::printf("stage2: %zu steps, first epoch mean %.6g, final %.6g\n", result.log.size(),
                result.first_epoch_mean, result.final_epoch_mean);
    return kExitOk;
}

int run_eval(const CommonArgs& args, const std::string& corpus_path, const std::string& vocab_path,
             const std::string& characters_path, const std::string& model_path) {
    cfg::RunConfig config = load_config(args);
    const fs::path out = ensure_out(args);
    ManifestScope manifest(config, out);

    const data::Corpus corpus = data::read_container(corpus_path);
    const data::Vocabulary vocab = data::Vocabulary::load(vocab_path);
    const auto characters = load_characters(characters_path);
    const ParamStore<float> models = load_checkpoint(model_path);

    pipeline::EvalParams params;
    params.recall_k = config.recall_k;
    params.recall_n = config.recall_n;
    params.similarity = config.similarity;
    params.rouge_beta = config.rouge_beta;
    params.max_len = config.max_generate_len;
    params.threads = config.threads;
    const pipeline::EvalReport report = pipeline::evaluate_model(
        corpus, vocab, characters, models, stage2_config(config, vocab.size()), params);

    const fs::path json_path = out / "metrics.json";
    const fs::path csv_path = out / "per_clip.csv";
    const fs::path gen_path = out / "generated.jsonl";
    const fs::path snapshot_path = out / "config.snapshot.cfg";

    nlohmann::ordered_json j;
    j["rouge_l"] = report.rouge_mean;
    j["cider"] = report.cider;
    j["recall@" + std::to_string(params.recall_k) + "/" + std::to_string(params.recall_n)] =
        report.recall;
    j["distinct_recall"] = report.distinct_recall;
    j["redundancy_contrast"] = report.redundancy_contrast;
    j["similarity"] = params.similarity;
    j["pairs"] = report.items.size();
    {
        std::ofstream jf(json_path, std::ios::binary);
        jf << j.dump(2) << "\n";
    }
    {
        std::ofstream cf(csv_path, std::ios::binary);
        cf << "clip_id,movie_id,rouge_l,cider,recall_hit,distinct_recall\n";
        char buf[160];
        for (const auto& item : report.items) {
            std::snprintf(buf, sizeof(buf), "%u,%u,%.9g,%.9g,%d,%.9g\n", item.clip_id,
                          item.movie_id, item.rouge, item.cider, item.recall_hit ? 1 : 0,
                          item.distinct_recall);
            cf << buf;
        }
    }
    {
        std::ofstream gf(gen_path, std::ios::binary);
        for (const auto& item : report.items) {
            nlohmann::ordered_json line;
            line["clip_id"] = item.clip_id;
            line["movie_id"] = item.movie_id;
            line["text"] = data::detokenize(item.candidate, vocab);
            line["tokens"] = item.candidate;
            gf << line.dump() << "\n";
        }
    }
    write_snapshot(config, snapshot_path);
    manifest.finish({json_path, csv_path, gen_path, snapshot_path});

    std::cout << j.dump(2) << "\n";
    return kExitOk;
}

int run_analyze(const CommonArgs& args, const std::string& corpus_path,
                const std::string& vocab_path, const std::string& model_path) {
    cfg::RunConfig config = load_config(args);
    const fs::path out = ensure_out(args);
    ManifestScope manifest(config, out);

    const data::Corpus corpus = data::read_container(corpus_path);
    const data::Vocabulary vocab = data::Vocabulary::load(vocab_path);

    const double contrast_raw =
        metrics::redundancy_contrast(pipeline::pooled_clip_features(corpus), config.redundancy_window);

    pipeline::Stage2Config s2 = stage2_config(config, vocab.size());
    ParamStore<float> models;
    if (model_path.empty()) {
        ParamStore<float> adapter;
        align::init_adapter_identity(adapter, corpus.channels);
        Rng rng(config.seed);
        models = pipeline::init_stage2_models(adapter, corpus.channels, s2, rng);
    } else {
        models = load_checkpoint(model_path);
    }

    // redundancy after the adapter projection
    std::vector<TensorD> adapted;
    const TensorD w = models.at(align::kAdapterWeight).cast<double>();
    const TensorD b_row = models.at(align::kAdapterBias).cast<double>();
    for (auto [begin, end] : corpus.movie_ranges()) {
        TensorD pooled({end - begin, corpus.channels});
        for (std::size_t i = begin; i < end; ++i) {
            TensorD proj = kernels::matmul(corpus.records[i].frames.cast<double>(), w);
            for (std::size_t r = 0; r < proj.rows(); ++r)
                for (std::size_t c = 0; c < proj.cols(); ++c) proj.at(r, c) += b_row[c];
            const TensorD mean = kernels::mean_rows(proj);
            std::copy(mean.data.begin(), mean.data.end(), pooled.row_ptr(i - begin));
        }
        adapted.push_back(kernels::l2_normalize_rows(pooled));
    }
    const double contrast_adapted =
        metrics::redundancy_contrast(adapted, config.redundancy_window);

    // branch vectors for the first full window
    const data::WindowSet windows = data::sample_windows(corpus, s2.window, true, 0);
    const fs::path branches_path = out / "branch_vectors.csv";
    bool have_branches = false;
    if (!windows.windows.empty()) {
        auto input = pipeline::make_window_input<float>(corpus, windows.windows.front(), vocab, {},
                                                        s2.frames);
        auto features = pipeline::window_features(models, input, s2);
        ema::export_branch_vectors(features.raw.cast<double>(),
                                   features.reconstructed.cast<double>(),
                                   features.attended.cast<double>(), branches_path.string());
        have_branches = true;
    }

    const fs::path json_path = out / "analysis.json";
    const fs::path snapshot_path = out / "config.snapshot.cfg";
    nlohmann::ordered_json j;
    j["redundancy_contrast"] = contrast_raw;
    j["redundancy_contrast_adapted"] = contrast_adapted;
    j["window"] = config.redundancy_window;
    j["branch_vectors"] = have_branches ? branches_path.filename().string() : "";
    {
        std::ofstream jf(json_path, std::ios::binary);
        jf << j.dump(2) << "\n";
    }
    write_snapshot(config, snapshot_path);
    std::vector<fs::path> outputs = {json_path, snapshot_path};
    if (have_branches) outputs.push_back(branches_path);
    manifest.finish(outputs);

    std::cout << j.dump(2) << "\n";
    return kExitOk;
}

int run_gradcheck(const CommonArgs& args) {
    cfg::RunConfig config = load_config(args);
    const fs::path out = ensure_out(args);
    ManifestScope manifest(config, out);

    const auto results = gradsuite::run_default_suite(config.seed);
    bool all_pass = true;
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (const auto& check : results) {
        all_pass = all_pass && check.report.pass;
        std::printf("%-24s %s  max_rel_err=%.3e (worst: %s)\n", check.name.c_str(),
                    check.report.pass ? "PASS" : "FAIL", check.report.worst,
                    check.report.worst_param.c_str());
        nlohmann::ordered_json entry;
        entry["name"] = check.name;
        entry["pass"] = check.report.pass;
        entry["max_rel_error"] = check.report.worst;
        entry["worst_param"] = check.report.worst_param;
        j.push_back(entry);
    }
    const fs::path json_path = out / "gradcheck.json";
    {
        std::ofstream jf(json_path, std::ios::binary);
        jf << j.dump(2) << "\n";
    }
    manifest.finish({json_path});
    if (!all_pass) throw NumericalError("gradient check suite");
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"contextual audio-description pipeline"};
    app.require_subcommand(1);

    CommonArgs gen_args, adapt_args, train_args, eval_args, analyze_args, grad_args;
    std::string corpus_path, vocab_path, characters_path, adapter_path, model_path;
    bool nonconsecutive = false;

    CLI::App* gen = app.add_subcommand("gen-synthetic", "generate a synthetic scene-structured corpus");
    add_common(gen, gen_args);
    bind_key(gen, gen_args, "--movies", "syn.movies", "number of movies");
    bind_key(gen, gen_args, "--clips-per-movie", "syn.clips_per_movie", "clips per movie");
    bind_key(gen, gen_args, "--scene-length", "syn.scene_length", "clips per scene");
    bind_key(gen, gen_args, "--channels", "syn.channels", "embedding channels (C)");
    bind_key(gen, gen_args, "--frames", "syn.frames", "frames per clip");
    bind_key(gen, gen_args, "--names", "syn.names", "character-name pool size");
    bind_key(gen, gen_args, "--verbs", "syn.verbs", "scene-verb pool size");
    bind_key(gen, gen_args, "--nouns", "syn.nouns", "distinctive-noun pool size");
    bind_key(gen, gen_args, "--adjectives", "syn.adjectives", "adjective pool size");
    bind_key(gen, gen_args, "--sigma", "syn.sigma", "frame noise level");
    bind_key(gen, gen_args, "--distinct-weight", "syn.distinct_weight",
             "noun-direction weight in frames");

    CLI::App* adapt = app.add_subcommand("adapt", "stage-1 vision-adapter training");
    add_common(adapt, adapt_args);
    adapt->add_option("--corpus", corpus_path, "DADF container")->required();
    adapt->add_option("--vocab", vocab_path, "vocabulary sidecar")->required();
    bind_key(adapt, adapt_args, "--gamma", "s1.gamma", "global/fine-grained blend");
    bind_key(adapt, adapt_args, "--tau-f", "s1.tau_f", "word-aggregation temperature");
    bind_key(adapt, adapt_args, "--frames-sampled", "s1.frames_sampled", "frames sampled per clip");
    bind_key(adapt, adapt_args, "--logit-scale", "s1.logit_scale", "similarity scale");
    bind_key(adapt, adapt_args, "--lr", "s1.lr", "learning rate");
    bind_key(adapt, adapt_args, "--epochs", "s1.epochs", "training epochs");
    bind_key(adapt, adapt_args, "--batch", "s1.batch", "batch size");

    CLI::App* train = app.add_subcommand("train", "stage-2 narration training");
    add_common(train, train_args);
    train->add_option("--corpus", corpus_path, "DADF container")->required();
    train->add_option("--vocab", vocab_path, "vocabulary sidecar")->required();
    train->add_option("--characters", characters_path, "clip_id,name CSV");
    train->add_option("--adapter", adapter_path, "stage-1 adapter checkpoint");
    add_stage2_flags(train, train_args);
    bind_key(train, train_args, "--lr", "s2.lr", "learning rate");
    bind_key(train, train_args, "--epochs", "s2.epochs", "training epochs");
    bind_key(train, train_args, "--stride", "s2.stride", "window stride");
    bind_key(train, train_args, "--batch", "s2.batch", "windows per gradient step");
    bind_true(train, train_args, "--train-adapter", "s2.train_adapter", "unfreeze the adapter");
    bind_false(train, train_args, "--freeze-decoder", "s2.train_decoder", "freeze the decoder");
    train->add_flag("--nonconsecutive", nonconsecutive,
                    "sample window clips non-consecutively within each movie");

    CLI::App* eval = app.add_subcommand("eval", "generate ADs and score them");
    add_common(eval, eval_args);
    eval->add_option("--corpus", corpus_path, "DADF container")->required();
    eval->add_option("--vocab", vocab_path, "vocabulary sidecar")->required();
    eval->add_option("--characters", characters_path, "clip_id,name CSV");
    eval->add_option("--model", model_path, "stage-2 checkpoint")->required();
    add_stage2_flags(eval, eval_args);
    bind_key(eval, eval_args, "--recall-k", "eval.k", "recall k");
    bind_key(eval, eval_args, "--recall-n", "eval.n", "recall neighbourhood N");
    bind_key(eval, eval_args, "--similarity", "eval.similarity",
             "lcs-f1 | tfidf-cosine | char-ngram-cosine");
    bind_key(eval, eval_args, "--rouge-beta", "eval.rouge_beta", "ROUGE-L beta");
    bind_key(eval, eval_args, "--max-len", "eval.max_len", "generation length cap");

    CLI::App* analyze = app.add_subcommand("analyze", "redundancy report and branch-vector export");
    add_common(analyze, analyze_args);
    analyze->add_option("--corpus", corpus_path, "DADF container")->required();
    analyze->add_option("--vocab", vocab_path, "vocabulary sidecar")->required();
    analyze->add_option("--model", model_path, "stage-2 checkpoint (fresh init when absent)");
    add_stage2_flags(analyze, analyze_args);
    bind_key(analyze, analyze_args, "--redundancy-window", "analyze.window", "near-pair distance w");

    CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    add_common(gradcheck, grad_args);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (gen->parsed()) return run_gen_synthetic(gen_args);
        if (adapt->parsed()) return run_adapt(adapt_args, corpus_path, vocab_path);
        if (train->parsed())
            return run_train(train_args, corpus_path, vocab_path, characters_path, adapter_path,
                             nonconsecutive);
        if (eval->parsed())
            return run_eval(eval_args, corpus_path, vocab_path, characters_path, model_path);
        if (analyze->parsed()) return run_analyze(analyze_args, corpus_path, vocab_path, model_path);
        if (gradcheck->parsed()) return run_gradcheck(grad_args);
    } catch (const cfg::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const data::FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return kExitIo;
    }
    return kExitOk;
}
