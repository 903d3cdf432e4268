#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "adpipe/dataio.hpp"
#include "adpipe/param_store.hpp"
#include "adpipe/rng.hpp"
#include "adpipe/tensor.hpp"

namespace adpipe::align {

/// Text side of one clip: the sentence vector and its word embeddings. Both
/// are frozen; gradients never flow into them.
template <class T>
struct AdEntry {
    Tensor<T> cls;    // [1 x C]
    Tensor<T> words;  // [m x C], m >= 1
};

template <class T>
struct AlignmentBatch {
    std::vector<Tensor<T>> clips;  // V_i [n_i x C], raw (pre-adapter) frames
    std::vector<AdEntry<T>> ads;

    std::size_t size() const { return clips.size(); }

    void validate() const {
        if (clips.empty() || clips.size() != ads.size())
            throw std::invalid_argument("alignment batch: empty or mismatched clip/ad lists");
        for (std::size_t i = 0; i < clips.size(); ++i) {
            if (clips[i].rank() != 2 || clips[i].rows() < 1)
                throw std::invalid_argument("alignment batch: clip without frames");
            if (ads[i].words.rank() != 2 || ads[i].words.rows() < 1)
                throw std::invalid_argument("alignment batch: ad without words");
        }
    }
};

struct AlignmentConfig {
    double gamma = 0.5;        // blend between global and fine-grained losses
    double tau_f = 0.1;        // word-aggregation temperature
    std::size_t frames_sampled = 1;
    double logit_scale = 1.0 / 0.07;
    double learning_rate = 1e-2;
    std::size_t epochs = 5;
    std::size_t batch_size = 8;
    std::uint64_t seed = 0;

    void validate() const {
        if (gamma < 0.0 || gamma > 1.0) throw std::invalid_argument("gamma must be in [0, 1]");
        if (tau_f <= 0.0) throw std::invalid_argument("tau_f must be positive");
        if (frames_sampled < 1) throw std::invalid_argument("frames_sampled must be >= 1");
        if (logit_scale <= 0.0) throw std::invalid_argument("logit_scale must be positive");
        if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    }
};

inline constexpr const char* kAdapterWeight = "adapter.w";
inline constexpr const char* kAdapterBias = "adapter.b";

/// Near-identity init: identity projection plus small noise, zero bias.
template <class T>
void init_adapter(ParamStore<T>& store, std::size_t channels, Rng& rng, double noise = 0.02) {
    Tensor<T>& w = store.create(kAdapterWeight, {channels, channels});
    for (std::size_t i = 0; i < channels; ++i)
        for (std::size_t j = 0; j < channels; ++j)
            w.at(i, j) = static_cast<T>((i == j ? 1.0 : 0.0) + rng.normal(0.0, noise));
    store.create(kAdapterBias, {channels});
}

template <class T>
void init_adapter_identity(ParamStore<T>& store, std::size_t channels) {
    Tensor<T>& w = store.create(kAdapterWeight, {channels, channels});
    for (std::size_t i = 0; i < channels; ++i) w.at(i, i) = T(1);
    store.create(kAdapterBias, {channels});
}

// ---- tape builders ----

template <class T>
using VarId = typename ag::Tape<T>::VarId;

template <class T>
VarId<T> adapt_frames(ag::Tape<T>& tape, const ag::ParamVars<T>& params, VarId<T> frames) {
    return tape.add_bias(tape.matmul(frames, params(kAdapterWeight)), params(kAdapterBias));
}

/// Mean-pools each adapted clip and L2-normalizes both sides.
/// Returns (v [B x C], t [B x C]).
template <class T>
std::pair<VarId<T>, VarId<T>> pool_global_node(ag::Tape<T>& tape,
                                               const std::vector<VarId<T>>& adapted_clips,
                                               const std::vector<VarId<T>>& cls_rows) {
    std::vector<VarId<T>> v_rows, t_rows;
    for (std::size_t i = 0; i < adapted_clips.size(); ++i) {
        v_rows.push_back(tape.mean_rows(adapted_clips[i]));
        t_rows.push_back(cls_rows[i]);
    }
    return {tape.l2_normalize_rows(tape.concat_rows(v_rows)),
            tape.l2_normalize_rows(tape.concat_rows(t_rows))};
}

/// Symmetric InfoNCE over the B x B similarity matrix: mean row-wise
/// cross-entropy against the diagonal, in both directions.
template <class T>
VarId<T> global_contrastive_node(ag::Tape<T>& tape, VarId<T> v, VarId<T> t, T logit_scale) {
    const std::size_t b = tape.value(v).rows();
    std::vector<int> diag(b);
    std::vector<T> weights(b, T(1) / static_cast<T>(b));
    for (std::size_t i = 0; i < b; ++i) diag[i] = static_cast<int>(i);
    VarId<T> sims = tape.scale(tape.matmul_nt(v, t), logit_scale);
    VarId<T> v2t = tape.cross_entropy_sum(sims, diag, weights);
    VarId<T> t2v = tape.cross_entropy_sum(tape.transpose(sims), diag, std::move(weights));
    return tape.add(v2t, t2v);
}

/// Word aggregation per frame: softmax(V W^T / tau) W.
template <class T>
VarId<T> frame_aware_node(ag::Tape<T>& tape, VarId<T> frames, VarId<T> words, T tau_f) {
    if (tape.value(words).rows() < 1) throw std::invalid_argument("frame_aware: no words");
    return tape.matmul(tape.softmax_rows(tape.matmul_nt(frames, words), tau_f), words);
}

/// Multi-instance loss. For each clip, each sampled frame is pulled towards
/// all rows of its own frame-aware set; the frame-aware rows of the other
/// clips in the batch form the negatives. Similarities are L2-normalized
/// inner products times logit_scale.
template <class T>
VarId<T> mil_node(ag::Tape<T>& tape, const std::vector<VarId<T>>& adapted_clips,
                  const std::vector<VarId<T>>& word_sets,
                  const std::vector<std::vector<std::size_t>>& sampled_frames, T tau_f,
                  T logit_scale) {
    const std::size_t b = adapted_clips.size();
    std::vector<VarId<T>> frame_aware(b);
    for (std::size_t i = 0; i < b; ++i) {
        frame_aware[i] = tape.l2_normalize_rows(
            frame_aware_node(tape, adapted_clips[i], word_sets[i], tau_f));
    }
    VarId<T> total{};
    bool first = true;
    std::size_t terms = 0;
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t f_idx : sampled_frames[i]) {
            VarId<T> f = tape.l2_normalize_rows(tape.slice_rows(adapted_clips[i], f_idx, 1));
            VarId<T> pos = tape.scale(tape.matmul_nt(f, frame_aware[i]), logit_scale);
            std::vector<VarId<T>> pool = {pos};
            for (std::size_t j = 0; j < b; ++j)
                if (j != i) pool.push_back(tape.scale(tape.matmul_nt(f, frame_aware[j]), logit_scale));
            VarId<T> term = tape.sub(tape.logsumexp_all(tape.concat_cols(pool)),
                                     tape.logsumexp_all(pos));
            total = first ? term : tape.add(total, term);
            first = false;
            ++terms;
        }
    }
    return tape.scale(total, T(1) / static_cast<T>(terms));
}

template <class T>
struct Stage1Components {
    T global = 0;
    T fine = 0;
    T blended = 0;
};

/// gamma * L_g + (1 - gamma) * L_f over one batch. Frame sampling is an
/// explicit input so the builder stays pure.
template <class T>
VarId<T> stage1_node(ag::Tape<T>& tape, const ag::ParamVars<T>& params,
                     const AlignmentBatch<T>& batch,
                     const std::vector<std::vector<std::size_t>>& sampled_frames,
                     const AlignmentConfig& config, Stage1Components<T>* components = nullptr) {
    batch.validate();
    config.validate();
    const T gamma = static_cast<T>(config.gamma);
    const T tau = static_cast<T>(config.tau_f);
    const T scale = static_cast<T>(config.logit_scale);

    std::vector<VarId<T>> adapted, cls_rows, word_sets;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        adapted.push_back(adapt_frames(tape, params, tape.constant(batch.clips[i])));
        cls_rows.push_back(tape.constant(batch.ads[i].cls));
        word_sets.push_back(tape.constant(batch.ads[i].words));
    }

    VarId<T> global{}, fine{};
    const bool want_global = gamma > T(0);
    const bool want_fine = gamma < T(1);
    if (want_global) {
        auto [v, t] = pool_global_node(tape, adapted, cls_rows);
        global = global_contrastive_node(tape, v, t, scale);
    }
    if (want_fine) fine = mil_node(tape, adapted, word_sets, sampled_frames, tau, scale);

    VarId<T> blended;
    if (!want_fine)
        blended = global;
    else if (!want_global)
        blended = fine;
    else
        blended = tape.add(tape.scale(global, gamma), tape.scale(fine, T(1) - gamma));

    if (components) {
        components->global = want_global ? tape.scalar(global) : T(0);
        components->fine = want_fine ? tape.scalar(fine) : T(0);
        components->blended = tape.scalar(blended);
    }
    return blended;
}

// ---- plain wrappers (run a throwaway tape over constants) ----

template <class T>
std::pair<Tensor<T>, Tensor<T>> pool_global(const std::vector<Tensor<T>>& adapted_clips,
                                            const std::vector<Tensor<T>>& cls_rows) {
    ag::Tape<T> tape;
    std::vector<VarId<T>> a, c;
    for (const auto& m : adapted_clips) a.push_back(tape.constant(m));
    for (const auto& m : cls_rows) c.push_back(tape.constant(m));
    auto [v, t] = pool_global_node(tape, a, c);
    return {tape.value(v), tape.value(t)};
}

template <class T>
T global_contrastive_loss(const Tensor<T>& v, const Tensor<T>& t, T logit_scale) {
    ag::Tape<T> tape;
    return tape.scalar(global_contrastive_node(tape, tape.constant(v), tape.constant(t), logit_scale));
}

template <class T>
Tensor<T> frame_aware_ad(const Tensor<T>& frames, const Tensor<T>& words, T tau_f) {
    ag::Tape<T> tape;
    return tape.value(frame_aware_node(tape, tape.constant(frames), tape.constant(words), tau_f));
}

template <class T>
T mil_loss(const std::vector<Tensor<T>>& adapted_clips, const std::vector<Tensor<T>>& word_sets,
           const std::vector<std::vector<std::size_t>>& sampled_frames, T tau_f, T logit_scale) {
    ag::Tape<T> tape;
    std::vector<VarId<T>> a, w;
    for (const auto& m : adapted_clips) a.push_back(tape.constant(m));
    for (const auto& m : word_sets) w.push_back(tape.constant(m));
    return tape.scalar(mil_node(tape, a, w, sampled_frames, tau_f, logit_scale));
}

template <class T>
T stage1_loss(const ParamStore<T>& adapter, const AlignmentBatch<T>& batch,
              const std::vector<std::vector<std::size_t>>& sampled_frames,
              const AlignmentConfig& config, Stage1Components<T>* components = nullptr) {
    ag::Tape<T> tape;
    auto params = ag::make_constants(tape, adapter);
    return tape.scalar(stage1_node(tape, params, batch, sampled_frames, config, components));
}

// ---- batches from a corpus ----

/// Builds the constant text side from the deterministic token embeddings:
/// word rows are embedding rows, the sentence vector is their normalized
/// mean. Clips whose AD tokenizes to nothing are rejected.
template <class T>
AlignmentBatch<T> make_batch(const data::Corpus& corpus, const std::vector<std::size_t>& indices,
                             const data::Vocabulary& vocab, const TensorF& embeddings) {
    AlignmentBatch<T> batch;
    for (std::size_t idx : indices) {
        const data::ClipRecord& rec = corpus.records[idx];
        const std::vector<int> ids = data::tokenize(rec.ad_text, vocab);
        if (ids.empty())
            throw std::invalid_argument("clip " + std::to_string(rec.clip_id) + " has an empty AD");
        AdEntry<T> ad;
        ad.words = Tensor<T>({ids.size(), embeddings.cols()});
        for (std::size_t i = 0; i < ids.size(); ++i)
            for (std::size_t c = 0; c < embeddings.cols(); ++c)
                ad.words.at(i, c) =
                    static_cast<T>(embeddings.at(static_cast<std::size_t>(ids[i]), c));
        ad.cls = kernels::l2_normalize_rows(kernels::mean_rows(ad.words));
        batch.ads.push_back(std::move(ad));
        batch.clips.push_back(rec.frames.template cast<T>());
    }
    return batch;
}

struct StepLog {
    std::size_t epoch = 0;
    std::size_t step = 0;
    double global_loss = 0.0;
    double fine_loss = 0.0;
    double total_loss = 0.0;
};

template <class T>
struct AdaptResult {
    ParamStore<T> adapter;
    std::vector<StepLog> log;
    double first_epoch_mean = 0.0;
    double final_epoch_mean = 0.0;
};

/// Stage-I loop: Adam on the adapter only; the text side never enters the
/// parameter store. Aborts with NumericalError if the loss diverges.
template <class T>
AdaptResult<T> adapt_train(const data::Corpus& corpus, const data::Vocabulary& vocab,
                           const AlignmentConfig& config) {
    config.validate();
    corpus.validate();
    const TensorF embeddings = data::token_embeddings(vocab, corpus.channels);

    AdaptResult<T> result;
    Rng init_rng(config.seed);
    init_adapter(result.adapter, corpus.channels, init_rng);
    AdamOptimizer<T> optimizer(config.learning_rate);

    std::vector<std::size_t> order(corpus.records.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    Rng loop_rng(config.seed + 1);
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        loop_rng.shuffle(order.begin(), order.end());
        double epoch_sum = 0.0;
        std::size_t epoch_steps = 0;
        for (std::size_t pos = 0; pos + config.batch_size <= order.size();
             pos += config.batch_size) {
            const std::vector<std::size_t> indices(order.begin() + pos,
                                                   order.begin() + pos + config.batch_size);
            AlignmentBatch<T> batch = make_batch<T>(corpus, indices, vocab, embeddings);
            std::vector<std::vector<std::size_t>> sampled(batch.size());
            for (std::size_t i = 0; i < batch.size(); ++i)
                for (std::size_t s = 0; s < config.frames_sampled; ++s)
                    sampled[i].push_back(loop_rng.uniform_index(batch.clips[i].rows()));

            Stage1Components<T> parts;
            const LossBuilder<T> builder = [&](ag::Tape<T>& tape, const ag::ParamVars<T>& params) {
                return stage1_node(tape, params, batch, sampled, config, &parts);
            };
            result.adapter.zero_grads();
            const double loss = static_cast<double>(evaluate_with_gradients(result.adapter, builder));
            optimizer.step(result.adapter);

            result.log.push_back({epoch, epoch_steps, static_cast<double>(parts.global),
                                  static_cast<double>(parts.fine), loss});
            epoch_sum += loss;
            ++epoch_steps;
        }
        if (epoch_steps) {
            const double mean = epoch_sum / static_cast<double>(epoch_steps);
            if (epoch == 0) result.first_epoch_mean = mean;
            result.final_epoch_mean = mean;
        }
    }
    return result;
}

/// CSV columns: epoch,step,L_g,L_f,L_I.
void write_stage1_loss_csv(const std::vector<StepLog>& log, const std::string& path);

}  // namespace adpipe::align
