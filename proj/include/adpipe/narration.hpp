#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "adpipe/alignment.hpp"
#include "adpipe/contextual_ema.hpp"
#include "adpipe/dataio.hpp"
#include "adpipe/param_store.hpp"

namespace adpipe::narr {

template <class T>
using VarId = typename ag::Tape<T>::VarId;

// ---- prompt assembly ----

struct PromptSlot {
    bool is_visual = false;
    std::size_t visual_row = 0;  // row into the fused visual matrix
    int token_id = 0;
};

/// Interleaved decoder input: per clip its visual slots then its character
/// name tokens, closed by a single BOS. In training the target carries the
/// final clip's AD tokens with EOS appended.
struct PromptSequence {
    std::vector<PromptSlot> slots;
    std::vector<int> target;
    std::size_t visual_rows = 0;

    std::size_t total_length() const { return slots.size() + target.size(); }
};

struct TruncationError : std::runtime_error {
    std::size_t clip_index;
    TruncationError(std::size_t clip, std::size_t limit)
        : std::runtime_error("prompt exceeds the context limit of " + std::to_string(limit) +
                             " at clip " + std::to_string(clip)),
          clip_index(clip) {}
};

/// Orders the window's slots in temporal order and appends BOS, then the
/// target (with EOS) when one is given. Throws TruncationError naming the
/// clip that overflows the context limit.
inline PromptSequence assemble_prompt(std::size_t clips, std::size_t visual_per_clip,
                                      const std::vector<std::vector<int>>& name_ids,
                                      const std::vector<int>& target_ids, std::size_t context_limit) {
    if (name_ids.size() != clips)
        throw std::invalid_argument("assemble_prompt: name list does not match window size");
    PromptSequence prompt;
    for (std::size_t i = 0; i < clips; ++i) {
        for (std::size_t v = 0; v < visual_per_clip; ++v)
            prompt.slots.push_back({true, i * visual_per_clip + v, 0});
        for (int id : name_ids[i]) prompt.slots.push_back({false, 0, id});
        if (prompt.slots.size() + 1 + target_ids.size() + 1 > context_limit)
            throw TruncationError(i, context_limit);
    }
    prompt.slots.push_back({false, 0, data::Vocabulary::kBos});
    prompt.visual_rows = clips * visual_per_clip;
    prompt.target = target_ids;
    if (!target_ids.empty()) prompt.target.push_back(data::Vocabulary::kEos);
    if (prompt.total_length() > context_limit)
        throw TruncationError(clips ? clips - 1 : 0, context_limit);
    return prompt;
}

// ---- distinctive word set ----

/// Target tokens that appear in no context AD (minus explicit stopwords).
struct DistinctiveSet {
    std::set<int> tokens;

    std::size_t size() const { return tokens.size(); }
    bool contains(int id) const { return tokens.count(id) != 0; }
};

inline DistinctiveSet build_distinctive_set(const std::vector<int>& target,
                                            const std::vector<std::vector<int>>& contexts,
                                            const std::set<int>& stopwords = {}) {
    DistinctiveSet out;
    out.tokens.insert(target.begin(), target.end());
    for (const auto& ctx : contexts)
        for (int id : ctx) out.tokens.erase(id);
    for (int id : stopwords) out.tokens.erase(id);
    return out;
}

// ---- decoder ----

struct DecoderConfig {
    std::size_t vocab = 0;
    std::size_t dim = 64;
    std::size_t layers = 2;
    std::size_t heads = 2;
    std::size_t context = 256;
    std::size_t ff_mult = 4;

    void validate() const {
        if (vocab < 1) throw std::invalid_argument("decoder: vocab must be >= 1");
        if (dim < 1 || layers < 1 || heads < 1) throw std::invalid_argument("decoder: bad dims");
        if (dim % heads != 0) throw std::invalid_argument("decoder: heads must divide dim");
        if (context < 8) throw std::invalid_argument("decoder: context too small");
    }
};

inline std::string block_param(std::size_t block, const char* suffix) {
    return "decoder.b" + std::to_string(block) + "." + suffix;
}

template <class T>
void init_decoder(ParamStore<T>& store, const DecoderConfig& config, Rng& rng) {
    config.validate();
    store.create_normal("decoder.tok_emb", {config.vocab, config.dim}, rng, 0.02);
    store.create_normal("decoder.pos_emb", {config.context, config.dim}, rng, 0.02);
    for (std::size_t b = 0; b < config.layers; ++b) {
        for (const char* ln : {"ln1.g", "ln2.g"}) {
            Tensor<T>& gain = store.create(block_param(b, ln), {config.dim});
            std::fill(gain.data.begin(), gain.data.end(), T(1));
        }
        store.create(block_param(b, "ln1.b"), {config.dim});
        store.create(block_param(b, "ln2.b"), {config.dim});
        for (const char* w : {"wq", "wk", "wv"})
            store.create_kaiming(block_param(b, w), {config.dim, config.dim}, rng);
        store.create_normal(block_param(b, "wo"), {config.dim, config.dim}, rng, 0.02);
        for (const char* bias : {"bq", "bk", "bv", "bo"})
            store.create(block_param(b, bias), {config.dim});
        store.create_kaiming(block_param(b, "ff.w1"), {config.dim, config.ff_mult * config.dim},
                             rng);
        store.create(block_param(b, "ff.b1"), {config.ff_mult * config.dim});
        store.create_normal(block_param(b, "ff.w2"), {config.ff_mult * config.dim, config.dim}, rng,
                            0.02);
        store.create(block_param(b, "ff.b2"), {config.dim});
    }
    Tensor<T>& gf = store.create("decoder.ln_f.g", {config.dim});
    std::fill(gf.data.begin(), gf.data.end(), T(1));
    store.create("decoder.ln_f.b", {config.dim});
}

namespace detail {

template <class T>
Tensor<T> causal_mask(std::size_t n) {
    Tensor<T> mask({n, n});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) mask.at(i, j) = T(-1e30);
    return mask;
}

template <class T>
VarId<T> decoder_block(ag::Tape<T>& tape, const ag::ParamVars<T>& params, std::size_t block,
                       VarId<T> x, const DecoderConfig& config) {
    const std::size_t n = tape.value(x).rows();
    const std::size_t dh = config.dim / config.heads;
    const auto p = [&](const char* suffix) { return params(block_param(block, suffix)); };

    VarId<T> normed = tape.layer_norm_rows(x, p("ln1.g"), p("ln1.b"));
    VarId<T> q = tape.add_bias(tape.matmul(normed, p("wq")), p("bq"));
    VarId<T> k = tape.add_bias(tape.matmul(normed, p("wk")), p("bk"));
    VarId<T> v = tape.add_bias(tape.matmul(normed, p("wv")), p("bv"));
    const Tensor<T> mask = causal_mask<T>(n);
    std::vector<VarId<T>> heads;
    for (std::size_t h = 0; h < config.heads; ++h) {
        VarId<T> qh = tape.slice_cols(q, h * dh, dh);
        VarId<T> kh = tape.slice_cols(k, h * dh, dh);
        VarId<T> vh = tape.slice_cols(v, h * dh, dh);
        VarId<T> scores = tape.scale(tape.matmul_nt(qh, kh), T(1) / std::sqrt(static_cast<T>(dh)));
        VarId<T> attn = tape.softmax_rows(tape.add_const(scores, mask), T(1));
        heads.push_back(tape.matmul(attn, vh));
    }
    VarId<T> merged = tape.add_bias(tape.matmul(tape.concat_cols(heads), p("wo")), p("bo"));
    x = tape.add(x, merged);

    VarId<T> normed2 = tape.layer_norm_rows(x, p("ln2.g"), p("ln2.b"));
    VarId<T> hidden = tape.gelu(tape.add_bias(tape.matmul(normed2, p("ff.w1")), p("ff.b1")));
    VarId<T> ff = tape.add_bias(tape.matmul(hidden, p("ff.w2")), p("ff.b2"));
    return tape.add(x, ff);
}

/// Embeds the interleaved sequence (visual rows come from `visuals`, token
/// slots from the tied embedding table), adds positions, and runs the blocks.
/// `extra_tokens` extends the sequence past the prompt (training targets or
/// already-generated ids).
template <class T>
VarId<T> decoder_states(ag::Tape<T>& tape, const ag::ParamVars<T>& params,
                        const DecoderConfig& config, const PromptSequence& prompt,
                        VarId<T> visuals, const std::vector<int>& extra_tokens) {
    const std::size_t total = prompt.slots.size() + extra_tokens.size();
    if (total > config.context)
        throw TruncationError(prompt.slots.size(), config.context);

    std::vector<VarId<T>> rows;
    rows.reserve(total);
    std::vector<int> pending;  // consecutive token ids get one gather
    const auto flush = [&]() {
        if (!pending.empty()) {
            rows.push_back(tape.gather_rows(params("decoder.tok_emb"), pending));
            pending.clear();
        }
    };
    for (const PromptSlot& slot : prompt.slots) {
        if (slot.is_visual) {
            flush();
            rows.push_back(tape.slice_rows(visuals, slot.visual_row, 1));
        } else {
            pending.push_back(slot.token_id);
        }
    }
    for (int id : extra_tokens) pending.push_back(id);
    flush();

    VarId<T> x = rows.size() == 1 ? rows[0] : tape.concat_rows(rows);
    VarId<T> pos = tape.slice_rows(params("decoder.pos_emb"), 0, total);
    x = tape.add(x, pos);
    for (std::size_t b = 0; b < config.layers; ++b)
        x = decoder_block(tape, params, b, x, config);
    return tape.layer_norm_rows(x, params("decoder.ln_f.g"), params("decoder.ln_f.b"));
}

}  // namespace detail

/// Logits for every sequence position, vocab-wide (output projection tied to
/// the embedding table).
template <class T>
VarId<T> decoder_logits_node(ag::Tape<T>& tape, const ag::ParamVars<T>& params,
                             const DecoderConfig& config, const PromptSequence& prompt,
                             VarId<T> visuals, const std::vector<int>& extra_tokens = {}) {
    VarId<T> states = detail::decoder_states(tape, params, config, prompt, visuals, extra_tokens);
    return tape.matmul_nt(states, params("decoder.tok_emb"));
}

/// Per-target-position cross entropy, summed (no averaging), EOS included.
/// `weights` selects/reweights positions; defaults to all ones.
template <class T>
VarId<T> target_cross_entropy_node(ag::Tape<T>& tape, const ag::ParamVars<T>& params,
                                   const DecoderConfig& config, const PromptSequence& prompt,
                                   VarId<T> visuals, const std::vector<T>& weights) {
    if (prompt.target.empty()) throw std::invalid_argument("auto loss: prompt has no target");
    VarId<T> states =
        detail::decoder_states(tape, params, config, prompt, visuals, prompt.target);
    // position prompt_len-1+i predicts target[i]
    VarId<T> scoring = tape.slice_rows(states, prompt.slots.size() - 1, prompt.target.size());
    VarId<T> logits = tape.matmul_nt(scoring, params("decoder.tok_emb"));
    return tape.cross_entropy_sum(logits, prompt.target, weights);
}

template <class T>
VarId<T> auto_loss_node(ag::Tape<T>& tape, const ag::ParamVars<T>& params,
                        const DecoderConfig& config, const PromptSequence& prompt,
                        VarId<T> visuals) {
    return target_cross_entropy_node(tape, params, config, prompt, visuals,
                                     std::vector<T>(prompt.target.size(), T(1)));
}

/// Cross entropy restricted to target positions whose gold token is
/// distinctive. An empty set contributes exactly zero.
template <class T>
VarId<T> distinctive_loss_node(ag::Tape<T>& tape, const ag::ParamVars<T>& params,
                               const DecoderConfig& config, const PromptSequence& prompt,
                               VarId<T> visuals, const DistinctiveSet& distinctive) {
    std::vector<T> weights(prompt.target.size(), T(0));
    bool any = false;
    for (std::size_t i = 0; i < prompt.target.size(); ++i) {
        if (distinctive.contains(prompt.target[i])) {
            weights[i] = T(1);
            any = true;
        }
    }
    if (!any) return tape.constant(Tensor<T>({1}));
    return target_cross_entropy_node(tape, params, config, prompt, visuals, weights);
}

// ---- plain wrappers ----

template <class T>
T auto_loss(const ParamStore<T>& model, const DecoderConfig& config, const PromptSequence& prompt,
            const Tensor<T>& visuals) {
    ag::Tape<T> tape;
    auto params = ag::make_constants(tape, model);
    return tape.scalar(auto_loss_node(tape, params, config, prompt, tape.constant(visuals)));
}

template <class T>
T distinctive_loss(const ParamStore<T>& model, const DecoderConfig& config,
                   const PromptSequence& prompt, const Tensor<T>& visuals,
                   const DistinctiveSet& distinctive) {
    ag::Tape<T> tape;
    auto params = ag::make_constants(tape, model);
    return tape.scalar(
        distinctive_loss_node(tape, params, config, prompt, tape.constant(visuals), distinctive));
}

template <class T>
T stage2_loss(const ParamStore<T>& model, const DecoderConfig& config, const PromptSequence& prompt,
              const Tensor<T>& visuals, const DistinctiveSet& distinctive) {
    return auto_loss(model, config, prompt, visuals) +
           distinctive_loss(model, config, prompt, visuals, distinctive);
}

/// Full-sequence logits as a plain tensor (training layout: prompt + target).
template <class T>
Tensor<T> decoder_full_logits(const ParamStore<T>& model, const DecoderConfig& config,
                              const PromptSequence& prompt, const Tensor<T>& visuals) {
    ag::Tape<T> tape;
    auto params = ag::make_constants(tape, model);
    return tape.value(
        decoder_logits_node(tape, params, config, prompt, tape.constant(visuals), prompt.target));
}

// ---- generation ----

enum class DecodeMode { kGreedy, kSample };

/// Decodes from a BOS-terminated prompt until EOS or max_len. Greedy mode is
/// deterministic (ties resolve to the lowest id); sampling uses the seeded
/// temperature softmax.
template <class T>
std::vector<int> generate(const ParamStore<T>& model, const DecoderConfig& config,
                          const PromptSequence& prompt, const Tensor<T>& visuals,
                          std::size_t max_len, DecodeMode mode = DecodeMode::kGreedy,
                          double temperature = 1.0, std::uint64_t seed = 0) {
    if (prompt.slots.empty() || prompt.slots.back().is_visual ||
        prompt.slots.back().token_id != data::Vocabulary::kBos)
        throw std::invalid_argument("generate: prompt must end with BOS");
    Rng rng(seed);
    std::vector<int> generated;
    while (generated.size() < max_len) {
        ag::Tape<T> tape;
        auto params = ag::make_constants(tape, model);
        PromptSequence open = prompt;
        open.target.clear();
        VarId<T> states =
            detail::decoder_states(tape, params, config, open, tape.constant(visuals), generated);
        VarId<T> last = tape.slice_rows(states, prompt.slots.size() + generated.size() - 1, 1);
        VarId<T> logits = tape.matmul_nt(last, params("decoder.tok_emb"));
        const Tensor<T>& row = tape.value(logits);

        int next = 0;
        if (mode == DecodeMode::kGreedy) {
            for (std::size_t j = 1; j < row.cols(); ++j)
                if (row.at(0, j) > row.at(0, static_cast<std::size_t>(next)))
                    next = static_cast<int>(j);
        } else {
            const Tensor<T> probs =
                kernels::softmax_rows(tape.value(logits), static_cast<T>(temperature));
            double u = rng.uniform(), acc = 0.0;
            next = static_cast<int>(row.cols()) - 1;
            for (std::size_t j = 0; j < row.cols(); ++j) {
                acc += static_cast<double>(probs.at(0, j));
                if (u < acc) {
                    next = static_cast<int>(j);
                    break;
                }
            }
        }
        if (next == data::Vocabulary::kEos) break;
        generated.push_back(next);
    }
    return generated;
}

}  // namespace adpipe::narr
