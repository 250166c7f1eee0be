#pragma once

#include <cstdint>

#include "stjgcn/nn.hpp"
#include "stjgcn/rng.hpp"
#include "stjgcn/tape.hpp"

namespace stjgcn {

/// Trainable pieces of the spatio-temporal embedding: a per-node spatial
/// table projected to d dimensions, plus time-of-day and day-of-week
/// projections of one-hot time features (a one-hot projection is a row
/// lookup of its weight matrix).
template <typename T>
struct EmbeddingParams {
    Parameter<T> spatial;    // (N, d_e), d_e = d
    Parameter<T> w_spatial;  // (d_e, d)
    Parameter<T> b_spatial;  // (d)
    Parameter<T> tod;        // (slots, d)
    Parameter<T> dow;        // (7, d)
    Parameter<T> interaction;  // (d, d), unconstrained

    void init(int64_t nodes, int64_t d, int64_t slots, Rng& rng) {
        spatial = {"embed.spatial", "embeddings", Array<T>({nodes, d})};
        rng.fill_normal(spatial.value, 0.0, 0.01);
        w_spatial = {"embed.w_spatial", "embeddings", Array<T>({d, d})};
        rng.fill_glorot(w_spatial.value, d, d);
        b_spatial = {"embed.b_spatial", "embeddings", Array<T>({d}, T(0))};
        tod = {"embed.tod", "embeddings", Array<T>({slots, d})};
        rng.fill_glorot(tod.value, slots, d);
        dow = {"embed.dow", "embeddings", Array<T>({7, d})};
        rng.fill_glorot(dow.value, 7, d);
        interaction = {"interaction", "interaction", Array<T>({d, d})};
        rng.fill_glorot(interaction.value, d, d);
    }
};

/// U_t for one (time-of-day slot, day-of-week): project the spatial table
/// and add both temporal rows, broadcasting over nodes. Differentiable
/// end-to-end.
template <typename T>
Var<T> embed_time(ParamBind<T>& bind, EmbeddingParams<T>& emb, int64_t slot,
                  int64_t day_of_week) {
    const int64_t slots = emb.tod.value.shape[0];
    if (slot < 0 || slot >= slots || day_of_week < 0 || day_of_week >= 7)
        throw std::out_of_range("time features (slot=" + std::to_string(slot) +
                                ", dow=" + std::to_string(day_of_week) +
                                ") outside the dataset calendar");
    Var<T> sp = add(matmul(bind(emb.spatial), bind(emb.w_spatial)), bind(emb.b_spatial));
    Var<T> u = add(sp, select0(bind(emb.tod), slot));
    return add(u, select0(bind(emb.dow), day_of_week));
}

/// Adaptive STJG adjacency: row-wise masked softmax of psi(U_a B U_b^T),
/// where psi drops scores below delta_adt. Entries removed by the threshold
/// stay exactly zero and receive no gradient; fully thresholded rows are
/// all-zero. Accepts (N,d) or batched (B,N,d) embeddings.
template <typename T>
Var<T> build_adaptive(Var<T> u_a, Var<T> u_b, Var<T> interaction, T delta_adt) {
    Var<T> scores = matmul(matmul(u_a, interaction), transpose_last2(u_b));
    const Array<T>& sv = scores.value();
    Mask keep(sv.shape, 0);
    for (int64_t i = 0; i < sv.numel(); ++i) keep[i] = sv[i] >= delta_adt ? 1 : 0;
    return masked_softmax(scores, keep);
}

}  // namespace stjgcn
