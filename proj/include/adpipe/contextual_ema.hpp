#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "adpipe/param_store.hpp"
#include "adpipe/rng.hpp"
#include "adpipe/tensor.hpp"

namespace adpipe::ema {

template <class T>
using VarId = typename ag::Tape<T>::VarId;

// ---- perceiver-style resampler ----

struct ResamplerConfig {
    std::size_t prompts = 4;  // output rows per clip
    std::size_t channels = 0;
    std::size_t ff_hidden = 0;  // 0 -> 2 * channels

    std::size_t hidden() const { return ff_hidden ? ff_hidden : 2 * channels; }
};

inline constexpr const char* kResLatents = "resampler.latents";
inline constexpr const char* kResWq = "resampler.wq";
inline constexpr const char* kResWk = "resampler.wk";
inline constexpr const char* kResWv = "resampler.wv";
inline constexpr const char* kResBq = "resampler.bq";
inline constexpr const char* kResBk = "resampler.bk";
inline constexpr const char* kResBv = "resampler.bv";
inline constexpr const char* kResFfW1 = "resampler.ff.w1";
inline constexpr const char* kResFfB1 = "resampler.ff.b1";
inline constexpr const char* kResFfW2 = "resampler.ff.w2";
inline constexpr const char* kResFfB2 = "resampler.ff.b2";

/// Feed-forward output weights start at zero so the fresh resampler is the
/// plain cross-attention readout. Latents start small: they act as queries,
/// and a large additive latent would drown the clip-specific attended
/// content in the residual.
template <class T>
void init_resampler(ParamStore<T>& store, const ResamplerConfig& config, Rng& rng) {
    const std::size_t c = config.channels;
    store.create_normal(kResLatents, {config.prompts, c}, rng, 0.05);
    store.create_kaiming(kResWq, {c, c}, rng);
    store.create_kaiming(kResWk, {c, c}, rng);
    store.create_kaiming(kResWv, {c, c}, rng);
    store.create(kResBq, {c});
    store.create(kResBk, {c});
    store.create(kResBv, {c});
    store.create_kaiming(kResFfW1, {c, config.hidden()}, rng);
    store.create(kResFfB1, {config.hidden()});
    store.create(kResFfW2, {config.hidden(), c});
    store.create(kResFfB2, {c});
}

/// Latents cross-attend to the clip's frames, residual add, then a two-layer
/// feed-forward with residual. Output shape [prompts x C] for any frame count.
template <class T>
VarId<T> resample_node(ag::Tape<T>& tape, const ag::ParamVars<T>& params, VarId<T> frames) {
    const std::size_t c = tape.value(frames).cols();
    VarId<T> latents = params(kResLatents);
    VarId<T> q = tape.add_bias(tape.matmul(latents, params(kResWq)), params(kResBq));
    VarId<T> k = tape.add_bias(tape.matmul(frames, params(kResWk)), params(kResBk));
    VarId<T> v = tape.add_bias(tape.matmul(frames, params(kResWv)), params(kResBv));
    VarId<T> scores = tape.scale(tape.matmul_nt(q, k), T(1) / std::sqrt(static_cast<T>(c)));
    VarId<T> attended = tape.matmul(tape.softmax_rows(scores, T(1)), v);
    VarId<T> x = tape.add(latents, attended);
    VarId<T> hidden = tape.gelu(tape.add_bias(tape.matmul(x, params(kResFfW1)), params(kResFfB1)));
    VarId<T> ff = tape.add_bias(tape.matmul(hidden, params(kResFfW2)), params(kResFfB2));
    return tape.add(x, ff);
}

template <class T>
Tensor<T> resample(const Tensor<T>& frames, const ParamStore<T>& model) {
    ag::Tape<T> tape;
    auto params = ag::make_constants(tape, model);
    return tape.value(resample_node(tape, params, tape.constant(frames)));
}

// ---- contextual EM attention ----

struct EmaConfig {
    std::size_t bases = 32;     // K
    std::size_t iterations = 3; // R
    double tau = 0.05;

    void validate() const {
        if (bases < 1) throw std::invalid_argument("ema: bases must be >= 1");
        if (iterations < 1) throw std::invalid_argument("ema: iterations must be >= 1");
        if (tau <= 0.0) throw std::invalid_argument("ema: tau must be positive");
    }
};

inline constexpr const char* kEmaBases = "ema.bases";

template <class T>
void init_bases(ParamStore<T>& store, std::size_t bases, std::size_t channels, Rng& rng) {
    store.create_kaiming(kEmaBases, {bases, channels}, rng);
}

/// EM state after R rounds: responsibilities from the last estimation step
/// and the bases from the last maximization step (L2-normalized).
template <class T>
struct EmaState {
    Tensor<T> bases;             // M [K x C]
    Tensor<T> responsibilities;  // Z [rows x K], rows sum to 1
    std::size_t iterations = 0;
    T tau = T(0);
    std::size_t rescued = 0;     // dead bases reinitialized during iteration
};

/// Alternates responsibility estimation and base re-averaging R times. A base
/// whose total responsibility falls below 1e-12 is reseeded with the row that
/// the current state reconstructs worst, and counted in `rescued`.
template <class T>
EmaState<T> em_iterate(const Tensor<T>& embeddings, const Tensor<T>& initial_bases, std::size_t r,
                       T tau) {
    kernels::check_matrix(embeddings, "em_iterate embeddings");
    kernels::check_matrix(initial_bases, "em_iterate bases");
    if (embeddings.cols() != initial_bases.cols())
        throw ShapeError("em_iterate: embedding/base widths disagree");
    EmaConfig{initial_bases.rows(), r, static_cast<double>(tau)}.validate();

    const std::size_t rows = embeddings.rows();
    const std::size_t k = initial_bases.rows();
    EmaState<T> state;
    state.iterations = r;
    state.tau = tau;
    state.bases = initial_bases;

    for (std::size_t round = 0; round < r; ++round) {
        state.responsibilities =
            kernels::softmax_rows(kernels::matmul_nt(embeddings, state.bases), tau);
        Tensor<T> sums({k});
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < k; ++j) sums[j] += state.responsibilities.at(i, j);

        Tensor<T> updated = kernels::matmul_tn(state.responsibilities, embeddings);
        std::vector<std::size_t> dead;
        for (std::size_t j = 0; j < k; ++j) {
            if (sums[j] < T(1e-12)) {
                dead.push_back(j);
                continue;
            }
            for (std::size_t c = 0; c < embeddings.cols(); ++c) updated.at(j, c) /= sums[j];
        }
        if (!dead.empty()) {
            // reconstruction under the pre-update bases picks the reseed row
            const Tensor<T> recon = kernels::matmul(state.responsibilities, state.bases);
            for (std::size_t j : dead) {
                std::size_t worst = 0;
                T worst_err = T(-1);
                for (std::size_t i = 0; i < rows; ++i) {
                    T err = 0;
                    for (std::size_t c = 0; c < embeddings.cols(); ++c) {
                        const T d = embeddings.at(i, c) - recon.at(i, c);
                        err += d * d;
                    }
                    if (err > worst_err) {
                        worst_err = err;
                        worst = i;
                    }
                }
                for (std::size_t c = 0; c < embeddings.cols(); ++c)
                    updated.at(j, c) = embeddings.at(worst, c);
                ++state.rescued;
            }
        }
        state.bases = kernels::l2_normalize_rows(updated);
    }
    return state;
}

/// Differentiable unrolled EM used inside training graphs. Division and
/// normalization are epsilon-guarded instead of reseeding dead bases, which
/// would be a discontinuous jump mid-graph.
template <class T>
std::pair<VarId<T>, VarId<T>> em_iterate_node(ag::Tape<T>& tape, VarId<T> embeddings,
                                              VarId<T> initial_bases, std::size_t r, T tau) {
    VarId<T> bases = initial_bases;
    VarId<T> responsibilities{};
    for (std::size_t round = 0; round < r; ++round) {
        responsibilities = tape.softmax_rows(tape.matmul_nt(embeddings, bases), tau);
        VarId<T> sums = tape.col_sums(responsibilities);
        bases = tape.l2_normalize_rows(
            tape.div_rows(tape.matmul_tn(responsibilities, embeddings), sums, T(1e-12)));
    }
    return {responsibilities, bases};
}

/// Data re-estimation: the compact reconstruction Z * M.
template <class T>
Tensor<T> reconstruct(const EmaState<T>& state) {
    return kernels::matmul(state.responsibilities, state.bases);
}

// ---- cross-attention branch ----

inline constexpr const char* kXattnWq = "xattn.wq";
inline constexpr const char* kXattnWk = "xattn.wk";
inline constexpr const char* kXattnWv = "xattn.wv";
inline constexpr const char* kXattnBq = "xattn.bq";
inline constexpr const char* kXattnBk = "xattn.bk";
inline constexpr const char* kXattnBv = "xattn.bv";

template <class T>
void init_cross_attention(ParamStore<T>& store, std::size_t channels, Rng& rng) {
    store.create_kaiming(kXattnWq, {channels, channels}, rng);
    store.create_kaiming(kXattnWk, {channels, channels}, rng);
    store.create_kaiming(kXattnWv, {channels, channels}, rng);
    store.create(kXattnBq, {channels});
    store.create(kXattnBk, {channels});
    store.create(kXattnBv, {channels});
}

/// Raw embeddings attend over the bases: softmax(Q K^T / sqrt(d)) V with
/// projected query from H and projected key/value from M.
template <class T>
VarId<T> cross_attend_node(ag::Tape<T>& tape, const ag::ParamVars<T>& params, VarId<T> embeddings,
                           VarId<T> bases) {
    const std::size_t d = tape.value(bases).cols();
    VarId<T> q = tape.add_bias(tape.matmul(embeddings, params(kXattnWq)), params(kXattnBq));
    VarId<T> k = tape.add_bias(tape.matmul(bases, params(kXattnWk)), params(kXattnBk));
    VarId<T> v = tape.add_bias(tape.matmul(bases, params(kXattnWv)), params(kXattnBv));
    VarId<T> scores = tape.scale(tape.matmul_nt(q, k), T(1) / std::sqrt(static_cast<T>(d)));
    return tape.matmul(tape.softmax_rows(scores, T(1)), v);
}

template <class T>
Tensor<T> cross_attend(const Tensor<T>& embeddings, const Tensor<T>& bases,
                       const ParamStore<T>& projections) {
    ag::Tape<T> tape;
    auto params = ag::make_constants(tape, projections);
    return tape.value(
        cross_attend_node(tape, params, tape.constant(embeddings), tape.constant(bases)));
}

// ---- fusion ----

struct FusionConfig {
    double alpha = 3.0;  // weight of the reconstructed branch
    double beta = 1.0;   // weight of the cross-attended branch

    void validate() const {
        if (alpha < 0.0 || beta < 0.0)
            throw std::invalid_argument("fusion: alpha and beta must be >= 0");
    }
};

inline constexpr const char* kFusionW = "fusion.w";
inline constexpr const char* kFusionB = "fusion.b";

template <class T>
void init_fusion(ParamStore<T>& store, std::size_t channels, std::size_t out_channels, Rng& rng) {
    store.create_kaiming(kFusionW, {channels, out_channels}, rng);
    store.create(kFusionB, {out_channels});
}

/// Proj(H + alpha * Hhat + beta * Htilde); either branch may be absent.
template <class T>
VarId<T> fuse_project_node(ag::Tape<T>& tape, const ag::ParamVars<T>& params, VarId<T> embeddings,
                           const VarId<T>* reconstructed, const VarId<T>* attended,
                           const FusionConfig& config) {
    config.validate();
    VarId<T> combined = embeddings;
    if (reconstructed)
        combined = tape.add_scaled(combined, *reconstructed, static_cast<T>(config.alpha));
    if (attended) combined = tape.add_scaled(combined, *attended, static_cast<T>(config.beta));
    return tape.add_bias(tape.matmul(combined, params(kFusionW)), params(kFusionB));
}

template <class T>
Tensor<T> fuse_project(const Tensor<T>& embeddings, const Tensor<T>& reconstructed,
                       const Tensor<T>& attended, const ParamStore<T>& projector,
                       const FusionConfig& config) {
    ag::Tape<T> tape;
    auto params = ag::make_constants(tape, projector);
    VarId<T> hat = tape.constant(reconstructed);
    VarId<T> tilde = tape.constant(attended);
    return tape.value(
        fuse_project_node(tape, params, tape.constant(embeddings), &hat, &tilde, config));
}

/// CSV export of the three branch matrices for external plotting.
/// Header: branch,index,c0..c{C-1}; tags raw / recon / attended.
void export_branch_vectors(const TensorD& raw, const TensorD& reconstructed,
                           const TensorD& attended, const std::string& path);

}  // namespace adpipe::ema
