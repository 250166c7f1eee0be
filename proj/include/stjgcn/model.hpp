#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "stjgcn/adaptive.hpp"
#include "stjgcn/graph.hpp"
#include "stjgcn/nn.hpp"
#include "stjgcn/rng.hpp"
#include "stjgcn/tape.hpp"

namespace stjgcn {

/// Dilation schedule of the causal STJGC stack. gamma[m] is the stride (in
/// original time steps) at which layer m+1 emits outputs; a layer's kernel
/// taps are spaced at its input grid's stride, so layer m+1 reads positions
/// {t, t-s, ..., t-(K-1)s} with s = gamma[m] (s = 1 for the first layer).
struct LayerConfig {
    int64_t kernel = 2;
    std::vector<int64_t> gamma;

    int64_t layers() const { return static_cast<int64_t>(gamma.size()); }

    /// 1 + (K-1) * sum(gamma) — the coverage bound the schedule must satisfy.
    int64_t coverage() const {
        int64_t s = 0;
        for (int64_t g : gamma) s += g;
        return 1 + (kernel - 1) * s;
    }

    /// Span of inputs the final output position actually reads: tap spacings
    /// are 1, gamma[0], ..., gamma[M-2].
    int64_t receptive_field() const {
        int64_t s = 1;
        for (size_t m = 0; m + 1 < gamma.size(); ++m) s += gamma[m];
        return 1 + (kernel - 1) * s;
    }

    void validate(int64_t window) const {
        if (gamma.empty()) throw std::runtime_error("dilation schedule is empty");
        int64_t prev = 1;
        for (int64_t g : gamma) {
            if (g < prev || g % prev != 0)
                throw std::runtime_error("dilation factors must grow by integer multiples");
            prev = g;
        }
        if (coverage() < window || receptive_field() < window)
            throw std::runtime_error("receptive field " + std::to_string(receptive_field()) +
                                     " does not cover the input window " + std::to_string(window));
    }
};

/// Smallest stack whose final output covers all P inputs: dilations grow
/// geometrically by K and the last growth is capped to just close the gap.
/// For (P=12, K=2) this yields gamma = {2,4,4,4}.
inline LayerConfig plan_dilations(int64_t window, int64_t kernel) {
    if (window < 2 || kernel < 2)
        throw std::runtime_error("plan_dilations requires P >= 2 and K >= 2");
    if (window < kernel)
        throw std::runtime_error("input window P=" + std::to_string(window) +
                                 " shorter than kernel K=" + std::to_string(kernel));
    LayerConfig cfg;
    cfg.kernel = kernel;
    // Strides needed before the final layer so that the tap spacings
    // 1, g_1, ..., g_{M-1} sum to at least ceil((P-1)/(K-1)).
    int64_t target = (window - 1 + kernel - 2) / (kernel - 1) - 1;
    if (target <= 0) {
        cfg.gamma = {1};
        return cfg;
    }
    int64_t s = 1, sum = 0;
    while (sum < target) {
        int64_t g = s * kernel;
        int64_t gap = target - sum;
        if (gap < g) g = s * ((gap + s - 1) / s);
        cfg.gamma.push_back(g);
        sum += g;
        s = g;
    }
    cfg.gamma.push_back(cfg.gamma.back());
    cfg.validate(window);
    return cfg;
}

/// Time positions a layer reads/writes, end-aligned on the most recent step.
struct TimeGrid {
    std::vector<int64_t> positions;  // ascending
    int64_t spacing = 1;
};

inline TimeGrid initial_grid(int64_t window) {
    TimeGrid g;
    g.spacing = 1;
    g.positions.resize(static_cast<size_t>(window));
    for (int64_t i = 0; i < window; ++i) g.positions[static_cast<size_t>(i)] = i;
    return g;
}

inline TimeGrid output_grid(const TimeGrid& in, int64_t stride) {
    if (stride % in.spacing != 0)
        throw std::runtime_error("stride " + std::to_string(stride) +
                                 " not aligned to grid spacing " + std::to_string(in.spacing));
    TimeGrid out;
    out.spacing = stride;
    for (int64_t p = in.positions.back(); p >= in.positions.front(); p -= stride)
        out.positions.push_back(p);
    std::reverse(out.positions.begin(), out.positions.end());
    return out;
}

// ---------------------------------------------------------------------------

struct ModelConfig {
    int64_t nodes = 0;
    int64_t channels = 1;
    int64_t hidden = 64;     // d
    int64_t kernel = 2;      // K
    int64_t window = 12;     // P
    int64_t horizons = 12;   // Q
    int64_t slots = 288;     // time-of-day slots
    double delta_adt = 0.5;
    std::vector<int64_t> gamma;  // filled from plan_dilations when empty

    LayerConfig layer_config() const {
        LayerConfig c;
        c.kernel = kernel;
        c.gamma = gamma;
        return c;
    }

    /// Every time difference any layer's (kernel, dilation) pair needs.
    std::vector<int64_t> required_time_diffs() const {
        std::vector<int64_t> out;
        int64_t spacing = 1;
        for (int64_t g : gamma) {
            for (int64_t k = 0; k < kernel; ++k) {
                int64_t off = k * spacing;
                if (std::find(out.begin(), out.end(), off) == out.end()) out.push_back(off);
            }
            spacing = g;
        }
        std::sort(out.begin(), out.end());
        return out;
    }
};

template <typename T>
struct BNLayer {
    std::string name;
    Parameter<T> gamma_p;
    Parameter<T> beta_p;
    BNState<T> state;

    void init(const std::string& n, const std::string& group, int64_t channels) {
        name = n;
        gamma_p = {n + ".gamma", group, Array<T>({channels}, T(1))};
        beta_p = {n + ".beta", group, Array<T>({channels}, T(0))};
        state = BNState<T>(channels);
    }
};

template <typename T>
struct StjgcLayerParams {
    std::vector<Parameter<T>> w_pdf_fw, w_pdf_bw;  // K weights each, (d,d)
    Parameter<T> b_pdf;
    std::vector<Parameter<T>> w_adt_fw, w_adt_bw;
    Parameter<T> b_adt;
    Parameter<T> w_gate;  // (2d, d)
    Parameter<T> b_gate;  // (d)
    std::vector<BNLayer<T>> bn_pdf, bn_adt;  // one per kernel position

    void init(int64_t layer, int64_t d, int64_t kernel, Rng& rng) {
        std::string base = "layer" + std::to_string(layer);
        auto weight = [&](const std::string& n) {
            Parameter<T> p{base + "." + n, "stjgc", Array<T>({d, d})};
            rng.fill_glorot(p.value, d, d);
            return p;
        };
        for (int64_t k = 0; k < kernel; ++k) {
            w_pdf_fw.push_back(weight("pdf.w_fw" + std::to_string(k)));
            w_pdf_bw.push_back(weight("pdf.w_bw" + std::to_string(k)));
            w_adt_fw.push_back(weight("adt.w_fw" + std::to_string(k)));
            w_adt_bw.push_back(weight("adt.w_bw" + std::to_string(k)));
            bn_pdf.emplace_back();
            bn_pdf.back().init(base + ".pdf.bn" + std::to_string(k), "stjgc", d);
            bn_adt.emplace_back();
            bn_adt.back().init(base + ".adt.bn" + std::to_string(k), "stjgc", d);
        }
        b_pdf = {base + ".pdf.b", "stjgc", Array<T>({d}, T(0))};
        b_adt = {base + ".adt.b", "stjgc", Array<T>({d}, T(0))};
        w_gate = {base + ".gate.w", "gate", Array<T>({2 * d, d})};
        rng.fill_glorot(w_gate.value, 2 * d, d);
        b_gate = {base + ".gate.b", "gate", Array<T>({d}, T(0))};
    }
};

template <typename T>
struct AttentionParams {
    Parameter<T> w;  // (d,d)
    Parameter<T> b;  // (d)
    Parameter<T> v;  // (d)

    void init(int64_t d, Rng& rng) {
        w = {"attn.w", "attention", Array<T>({d, d})};
        rng.fill_glorot(w.value, d, d);
        b = {"attn.b", "attention", Array<T>({d}, T(0))};
        v = {"attn.v", "attention", Array<T>({d})};
        rng.fill_glorot(v.value, d, 1);
    }
};

template <typename T>
struct HeadParams {
    Parameter<T> w1;  // (d,d)
    Parameter<T> b1;  // (d)
    Parameter<T> w2;  // (d,1)
    Parameter<T> b2;  // (1)
    BNLayer<T> bn;

    void init(int64_t horizon, int64_t d, Rng& rng) {
        std::string base = "head" + std::to_string(horizon);
        w1 = {base + ".w1", "heads", Array<T>({d, d})};
        rng.fill_glorot(w1.value, d, d);
        b1 = {base + ".b1", "heads", Array<T>({d}, T(0))};
        w2 = {base + ".w2", "heads", Array<T>({d, 1})};
        rng.fill_glorot(w2.value, d, 1);
        b2 = {base + ".b2", "heads", Array<T>({1}, T(0))};
        bn.init(base + ".bn", "heads", d);
    }
};

/// Pre-defined STJG adjacencies cast to the working precision, keyed by
/// time difference.
template <typename T>
struct PredefinedCast {
    std::map<int64_t, std::pair<Array<T>, Array<T>>> by_offset;  // (fw, bw)

    static PredefinedCast from(const PredefinedStjg& s) {
        PredefinedCast c;
        for (auto& [k, e] : s.by_offset) {
            Array<T> fw(e.fw.shape), bw(e.bw.shape);
            for (int64_t i = 0; i < e.fw.numel(); ++i) fw[i] = static_cast<T>(e.fw[i]);
            for (int64_t i = 0; i < e.bw.numel(); ++i) bw[i] = static_cast<T>(e.bw[i]);
            c.by_offset.emplace(k, std::make_pair(std::move(fw), std::move(bw)));
        }
        return c;
    }

    const std::pair<Array<T>, Array<T>>& at(int64_t off) const {
        auto it = by_offset.find(off);
        if (it == by_offset.end())
            throw std::runtime_error("pre-defined STJG missing time difference " +
                                     std::to_string(off));
        return it->second;
    }
};

/// One training/evaluation batch: normalized inputs plus the calendar
/// features of every window position.
template <typename T>
struct BatchInput {
    Array<T> x;  // (B, P, N, C)
    // time_feats[w][p] = {time-of-day slot, day-of-week} of window w, position p
    std::vector<std::vector<std::pair<int64_t, int64_t>>> time_feats;

    int64_t batch() const { return x.shape[0]; }
};

// ---------------------------------------------------------------------------
// Stand-alone STJGC building blocks. The full network composes these; tests
// drive them directly against loop oracles.
// ---------------------------------------------------------------------------

/// phi: batch normalization followed by ReLU.
template <typename T>
Var<T> bn_relu(Var<T> x, ParamBind<T>& bind, BNLayer<T>& bn, bool training) {
    return relu(batch_norm(x, bind(bn.gamma_p), bind(bn.beta_p), bn.state, training));
}

/// STJGC on the pre-defined STJG for one output position:
///   Z = sum_k phi(A_fw^(o_k) X_k W_fw_k + A_bw^(o_k) X_k W_bw_k + b)
/// where X_k is the (B,N,d) input at time offset o_k and A^(o_k) the
/// adjacency for that time difference.
template <typename T>
Var<T> stjgc_predefined(Tape<T>& tape, ParamBind<T>& bind, const std::vector<Var<T>>& x_taps,
                        const std::vector<int64_t>& offsets, const PredefinedCast<T>& stjg,
                        StjgcLayerParams<T>& lp, bool training) {
    if (x_taps.empty() || x_taps.size() != offsets.size())
        throw ShapeError("stjgc_predefined: kernel window and offset list disagree");
    std::optional<Var<T>> acc;
    for (size_t k = 0; k < x_taps.size(); ++k) {
        auto& [fw, bw] = stjg.at(offsets[k]);
        Var<T> afw = tape.constant(fw);
        Var<T> abw = tape.constant(bw);
        Var<T> pre = add(add(matmul(matmul(afw, x_taps[k]), bind(lp.w_pdf_fw[k])),
                             matmul(matmul(abw, x_taps[k]), bind(lp.w_pdf_bw[k]))),
                         bind(lp.b_pdf));
        Var<T> term = bn_relu(pre, bind, lp.bn_pdf[k], training);
        acc = acc ? add(*acc, term) : term;
    }
    return *acc;
}

/// STJGC on the adaptive STJG for one output position. adj[k] supplies the
/// two direction-specific adjacencies (t-o_k -> t and t -> t-o_k).
template <typename T>
Var<T> stjgc_adaptive(ParamBind<T>& bind, const std::vector<Var<T>>& x_taps,
                      const std::vector<std::pair<Var<T>, Var<T>>>& adj, StjgcLayerParams<T>& lp,
                      bool training) {
    if (x_taps.empty() || x_taps.size() != adj.size())
        throw ShapeError("stjgc_adaptive: kernel window and adjacency list disagree");
    std::optional<Var<T>> acc;
    for (size_t k = 0; k < x_taps.size(); ++k) {
        Var<T> pre = add(add(matmul(matmul(adj[k].first, x_taps[k]), bind(lp.w_adt_fw[k])),
                             matmul(matmul(adj[k].second, x_taps[k]), bind(lp.w_adt_bw[k]))),
                         bind(lp.b_adt));
        Var<T> term = bn_relu(pre, bind, lp.bn_adt[k], training);
        acc = acc ? add(*acc, term) : term;
    }
    return *acc;
}

/// Sigmoid-gated fusion: G (.) Z_pdf + (1-G) (.) Z_adt with
/// G = sigmoid(W_g [Z_pdf, Z_adt] + b_g).
template <typename T>
Var<T> gate_fuse(ParamBind<T>& bind, Var<T> z_pdf, Var<T> z_adt, StjgcLayerParams<T>& lp) {
    Var<T> cat = concat_last<T>({z_pdf, z_adt});
    Var<T> g = sigmoid(add(matmul(cat, bind(lp.w_gate)), bind(lp.b_gate)));
    return add(z_adt, mul(g, sub(z_pdf, z_adt)));
}

/// Multi-range attention over the per-layer range outputs:
///   s^m = v^T tanh(W z^m + b), alpha = softmax_m(s), Y = sum_m alpha_m z^m.
template <typename T>
Var<T> multi_range_attention(ParamBind<T>& bind, const std::vector<Var<T>>& ranges,
                             AttentionParams<T>& ap) {
    if (ranges.empty()) throw ShapeError("multi_range_attention needs at least one range");
    const int64_t d = ranges[0].shape().back();
    Var<T> vcol = reshape(bind(ap.v), {d, 1});
    std::vector<Var<T>> scores;
    scores.reserve(ranges.size());
    for (auto z : ranges) {
        Var<T> s = matmul(tanh_op(add(matmul(z, bind(ap.w)), bind(ap.b))), vcol);
        Shape lead(z.shape().begin(), z.shape().end() - 1);
        scores.push_back(reshape(s, lead));
    }
    Var<T> stacked = stack_last(scores);
    Mask all(stacked.shape(), 1);
    Var<T> alpha = masked_softmax(stacked, all);
    std::optional<Var<T>> y;
    for (size_t m = 0; m < ranges.size(); ++m) {
        Shape ashape = ranges[m].shape();
        ashape.back() = 1;
        Var<T> am = reshape(select_last(alpha, static_cast<int64_t>(m)), ashape);
        Var<T> term = mul(am, ranges[m]);
        y = y ? add(*y, term) : term;
    }
    return *y;
}

// ---------------------------------------------------------------------------

/// The full STJGCN: input projection, dilated causal STJGC layers on both
/// graph types with gating fusion and residuals, multi-range attention, and
/// one independent two-layer head per forecasting horizon.
template <typename T>
class Model {
public:
    ModelConfig cfg;
    Parameter<T> w_in, b_in;
    EmbeddingParams<T> embed;
    std::vector<StjgcLayerParams<T>> layers;
    AttentionParams<T> attn;
    std::vector<HeadParams<T>> heads;
    PredefinedCast<T> stjg;

    // the registry holds pointers into this object
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;

    Model(ModelConfig config, const PredefinedStjg& graphs, Rng& rng)
        : Model(std::move(config), PredefinedCast<T>::from(graphs), rng) {}

    Model(ModelConfig config, PredefinedCast<T> graphs, Rng& rng) : cfg(std::move(config)) {
        if (cfg.gamma.empty()) cfg.gamma = plan_dilations(cfg.window, cfg.kernel).gamma;
        cfg.layer_config().validate(cfg.window);
        stjg = std::move(graphs);
        for (int64_t off : cfg.required_time_diffs()) stjg.at(off);  // fail fast if missing

        w_in = {"input.w", "input", Array<T>({cfg.channels, cfg.hidden})};
        rng.fill_glorot(w_in.value, cfg.channels, cfg.hidden);
        b_in = {"input.b", "input", Array<T>({cfg.hidden}, T(0))};
        embed.init(cfg.nodes, cfg.hidden, cfg.slots, rng);
        for (int64_t m = 0; m < static_cast<int64_t>(cfg.gamma.size()); ++m) {
            layers.emplace_back();
            layers.back().init(m, cfg.hidden, cfg.kernel, rng);
        }
        attn.init(cfg.hidden, rng);
        for (int64_t i = 0; i < cfg.horizons; ++i) {
            heads.emplace_back();
            heads.back().init(i + 1, cfg.hidden, rng);
        }
        build_registry();
    }

    const std::vector<Parameter<T>*>& parameters() { return registry_; }

    std::vector<BNLayer<T>*> bn_layers() {
        std::vector<BNLayer<T>*> out;
        for (auto& l : layers) {
            for (auto& b : l.bn_pdf) out.push_back(&b);
            for (auto& b : l.bn_adt) out.push_back(&b);
        }
        for (auto& h : heads) out.push_back(&h.bn);
        return out;
    }

    int64_t parameter_count() {
        int64_t n = 0;
        for (auto* p : registry_) n += p->value.numel();
        return n;
    }

    std::map<std::string, int64_t> parameter_breakdown() {
        std::map<std::string, int64_t> by_group;
        for (auto* p : registry_) by_group[p->group] += p->value.numel();
        return by_group;
    }

    /// Forward pass over a batch. Returns predictions shaped (Q, B, N) in
    /// normalized space, plus the per-layer range outputs if requested.
    Var<T> forward(Tape<T>& tape, ParamBind<T>& bind, const BatchInput<T>& in, bool training,
                   std::vector<Var<T>>* range_outputs = nullptr,
                   std::vector<std::vector<Var<T>>>* hidden_by_layer = nullptr) {
        const int64_t B = in.batch(), P = cfg.window, N = cfg.nodes, C = cfg.channels;
        if (in.x.shape != Shape{B, P, N, C})
            throw ShapeError("batch input shape " + shape_str(in.x.shape) + " != expected " +
                             shape_str({B, P, N, C}));

        // Input projection, per position.
        TimeGrid grid = initial_grid(P);
        std::vector<Var<T>> h;
        h.reserve(static_cast<size_t>(P));
        for (int64_t p = 0; p < P; ++p) {
            Array<T> slice({B, N, C});
            for (int64_t w = 0; w < B; ++w)
                std::copy(in.x.data.begin() + ((w * P + p) * N * C),
                          in.x.data.begin() + ((w * P + p + 1) * N * C),
                          slice.data.begin() + w * N * C);
            h.push_back(add(matmul(tape.constant(std::move(slice)), bind(w_in)), bind(b_in)));
        }
        if (hidden_by_layer) hidden_by_layer->push_back(h);

        // Per-step caches for embeddings and adaptive adjacencies.
        std::map<std::pair<int64_t, int64_t>, Var<T>> u_single;   // (slot,dow) -> (N,d)
        std::map<int64_t, Var<T>> u_batch;                        // position -> (B,N,d)
        std::map<std::pair<int64_t, int64_t>, std::pair<Var<T>, Var<T>>> adj_cache;

        auto embedding_at = [&](int64_t pos) -> Var<T> {
            auto it = u_batch.find(pos);
            if (it != u_batch.end()) return it->second;
            std::vector<Var<T>> per_window;
            per_window.reserve(static_cast<size_t>(B));
            for (int64_t w = 0; w < B; ++w) {
                auto feats = in.time_feats[static_cast<size_t>(w)][static_cast<size_t>(pos)];
                auto uit = u_single.find(feats);
                Var<T> u;
                if (uit != u_single.end()) {
                    u = uit->second;
                } else {
                    u = embed_time(bind, embed, feats.first, feats.second);
                    u_single.emplace(feats, u);
                }
                per_window.push_back(u);
            }
            Var<T> stacked = stack0(per_window);
            u_batch.emplace(pos, stacked);
            return stacked;
        };

        auto adaptive_at = [&](int64_t pos, int64_t off) -> std::pair<Var<T>, Var<T>> {
            auto key = std::make_pair(pos, off);
            auto it = adj_cache.find(key);
            if (it != adj_cache.end()) return it->second;
            Var<T> u_past = embedding_at(pos - off);
            Var<T> u_now = embedding_at(pos);
            Var<T> b = bind(embed.interaction);
            T delta = static_cast<T>(cfg.delta_adt);
            auto pair = std::make_pair(build_adaptive(u_past, u_now, b, delta),
                                       build_adaptive(u_now, u_past, b, delta));
            adj_cache.emplace(key, pair);
            return pair;
        };

        // Dilated causal STJGC layers.
        std::vector<Var<T>> ranges;
        ranges.reserve(layers.size());
        for (size_t m = 0; m < layers.size(); ++m) {
            StjgcLayerParams<T>& lp = layers[m];
            TimeGrid out = output_grid(grid, cfg.gamma[m]);
            int64_t tap_spacing = grid.spacing;
            int64_t lo = grid.positions.front();
            auto grid_index = [&](int64_t pos) {
                return (pos - lo) / grid.spacing;
            };

            // Pre-activations per kernel position, batched over every output
            // position where the tap is valid, so batch norm sees the whole
            // (position, batch, node) extent of its slot.
            struct KTerms {
                std::vector<int64_t> out_idx;
                std::vector<Var<T>> pre;
            };
            std::vector<KTerms> pdf_terms(static_cast<size_t>(cfg.kernel));
            std::vector<KTerms> adt_terms(static_cast<size_t>(cfg.kernel));

            for (size_t oi = 0; oi < out.positions.size(); ++oi) {
                int64_t t = out.positions[oi];
                for (int64_t k = 0; k < cfg.kernel; ++k) {
                    int64_t off = k * tap_spacing;
                    if (t - off < lo) continue;  // causal edge: tap precedes the window
                    Var<T> x = h[static_cast<size_t>(grid_index(t - off))];
                    auto& [afw, abw] = stjg.at(off);
                    Var<T> pdf_pre =
                        add(add(matmul(matmul(tape.constant(afw), x), bind(lp.w_pdf_fw[k])),
                                matmul(matmul(tape.constant(abw), x), bind(lp.w_pdf_bw[k]))),
                            bind(lp.b_pdf));
                    pdf_terms[static_cast<size_t>(k)].out_idx.push_back(static_cast<int64_t>(oi));
                    pdf_terms[static_cast<size_t>(k)].pre.push_back(pdf_pre);

                    auto [lfw, lbw] = adaptive_at(t, off);
                    Var<T> adt_pre = add(add(matmul(matmul(lfw, x), bind(lp.w_adt_fw[k])),
                                             matmul(matmul(lbw, x), bind(lp.w_adt_bw[k]))),
                                         bind(lp.b_adt));
                    adt_terms[static_cast<size_t>(k)].out_idx.push_back(static_cast<int64_t>(oi));
                    adt_terms[static_cast<size_t>(k)].pre.push_back(adt_pre);
                }
            }

            std::vector<std::optional<Var<T>>> z_pdf(out.positions.size());
            std::vector<std::optional<Var<T>>> z_adt(out.positions.size());
            auto accumulate = [&](std::vector<KTerms>& terms, std::vector<BNLayer<T>>& bns,
                                  std::vector<std::optional<Var<T>>>& z) {
                for (int64_t k = 0; k < cfg.kernel; ++k) {
                    KTerms& kt = terms[static_cast<size_t>(k)];
                    if (kt.pre.empty()) continue;
                    Var<T> act = bn_relu(stack0(kt.pre), bind, bns[static_cast<size_t>(k)], training);
                    for (size_t j = 0; j < kt.out_idx.size(); ++j) {
                        Var<T> term = select0(act, static_cast<int64_t>(j));
                        auto& slot = z[static_cast<size_t>(kt.out_idx[j])];
                        slot = slot ? add(*slot, term) : term;
                    }
                }
            };
            accumulate(pdf_terms, lp.bn_pdf, z_pdf);
            accumulate(adt_terms, lp.bn_adt, z_adt);

            std::vector<Var<T>> h_next;
            h_next.reserve(out.positions.size());
            for (size_t oi = 0; oi < out.positions.size(); ++oi) {
                Var<T> fused = gate_fuse(bind, *z_pdf[oi], *z_adt[oi], lp);
                // Residual at the corresponding output time step.
                Var<T> res = h[static_cast<size_t>(grid_index(out.positions[oi]))];
                h_next.push_back(add(fused, res));
            }
            h = std::move(h_next);
            grid = std::move(out);
            // Range output: the most recent position of this layer.
            ranges.push_back(h.back());
            if (hidden_by_layer) hidden_by_layer->push_back(h);
        }
        if (range_outputs) *range_outputs = ranges;

        Var<T> y = multi_range_attention(bind, ranges, attn);

        // Independent two-layer heads, one per horizon.
        std::vector<Var<T>> preds;
        preds.reserve(static_cast<size_t>(cfg.horizons));
        for (int64_t i = 0; i < cfg.horizons; ++i) {
            HeadParams<T>& hp = heads[static_cast<size_t>(i)];
            Var<T> hidden = add(matmul(y, bind(hp.w1)), bind(hp.b1));
            hidden = relu(batch_norm(hidden, bind(hp.bn.gamma_p), bind(hp.bn.beta_p), hp.bn.state,
                                     training));
            Var<T> o = add(matmul(hidden, bind(hp.w2)), bind(hp.b2));
            preds.push_back(reshape(o, {B, N}));
        }
        return stack0(preds);  // (Q, B, N)
    }

private:
    std::vector<Parameter<T>*> registry_;

    void build_registry() {
        registry_.clear();
        auto reg = [&](Parameter<T>& p) { registry_.push_back(&p); };
        reg(w_in);
        reg(b_in);
        reg(embed.spatial);
        reg(embed.w_spatial);
        reg(embed.b_spatial);
        reg(embed.tod);
        reg(embed.dow);
        reg(embed.interaction);
        for (auto& l : layers) {
            for (auto& p : l.w_pdf_fw) reg(p);
            for (auto& p : l.w_pdf_bw) reg(p);
            reg(l.b_pdf);
            for (auto& p : l.w_adt_fw) reg(p);
            for (auto& p : l.w_adt_bw) reg(p);
            reg(l.b_adt);
            reg(l.w_gate);
            reg(l.b_gate);
            for (auto& b : l.bn_pdf) {
                reg(b.gamma_p);
                reg(b.beta_p);
            }
            for (auto& b : l.bn_adt) {
                reg(b.gamma_p);
                reg(b.beta_p);
            }
        }
        reg(attn.w);
        reg(attn.b);
        reg(attn.v);
        for (auto& hp : heads) {
            reg(hp.w1);
            reg(hp.b1);
            reg(hp.w2);
            reg(hp.b2);
            reg(hp.bn.gamma_p);
            reg(hp.bn.beta_p);
        }
    }
};

/// Table-style cost terms for the three modules, instantiated for concrete
/// shapes: graph construction O(N d^2 + N^2 d), one STJGC O(K(|E| d + N d^2)),
/// prediction O(N (M d + Q d^2)).
struct CostReport {
    int64_t graph_construction = 0;
    int64_t stjgc = 0;
    int64_t prediction = 0;
};

inline CostReport estimate_costs(int64_t n, int64_t d, int64_t kernel, int64_t layers,
                                 int64_t horizons, int64_t edges) {
    CostReport r;
    r.graph_construction = n * d * d + n * n * d;
    r.stjgc = kernel * (edges * d + n * d * d);
    r.prediction = n * (layers * d + horizons * d * d);
    return r;
}

}  // namespace stjgcn
