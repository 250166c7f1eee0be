#pragma once

#include <memory>

#include "stjgcn/checkpoint.hpp"
#include "stjgcn/model.hpp"
#include "stjgcn/zscore.hpp"

namespace stjgcn {

/// Serialize a model (trainables, batch-norm state, normalization stats,
/// and the pre-defined graph matrices) into a checkpoint container.
template <typename T>
Checkpoint checkpoint_from_model(Model<T>& model, const ZScoreStats& stats,
                                 nlohmann::json extra_meta = nlohmann::json::object()) {
    Checkpoint ck;
    ck.meta = std::move(extra_meta);
    ck.meta["dtype"] = sizeof(T) == 8 ? "f64" : "f32";
    nlohmann::json m;
    m["nodes"] = model.cfg.nodes;
    m["channels"] = model.cfg.channels;
    m["hidden"] = model.cfg.hidden;
    m["kernel"] = model.cfg.kernel;
    m["window"] = model.cfg.window;
    m["horizons"] = model.cfg.horizons;
    m["slots"] = model.cfg.slots;
    m["delta_adt"] = model.cfg.delta_adt;
    m["gamma"] = model.cfg.gamma;
    ck.meta["model"] = m;

    for (auto* p : model.parameters()) ck.add(p->name, p->value);

    std::vector<std::string> bn_initialized;
    for (auto* bn : model.bn_layers()) {
        if (!bn->state.initialized) continue;
        bn_initialized.push_back(bn->name);
        ck.add("state." + bn->name + ".mean", bn->state.running_mean);
        ck.add("state." + bn->name + ".var", bn->state.running_var);
    }
    ck.meta["bn_initialized"] = bn_initialized;

    ck.add("zscore.mean",
           Array<double>::from({static_cast<int64_t>(stats.mean.size())}, stats.mean));
    ck.add("zscore.std",
           Array<double>::from({static_cast<int64_t>(stats.stddev.size())}, stats.stddev));

    std::vector<int64_t> offsets;
    for (auto& [off, fwbw] : model.stjg.by_offset) {
        offsets.push_back(off);
        Array<double> fw(fwbw.first.shape), bw(fwbw.second.shape);
        for (int64_t i = 0; i < fw.numel(); ++i) fw[i] = static_cast<double>(fwbw.first[i]);
        for (int64_t i = 0; i < bw.numel(); ++i) bw[i] = static_cast<double>(fwbw.second[i]);
        ck.add("graph.fw." + std::to_string(off), fw);
        ck.add("graph.bw." + std::to_string(off), bw);
    }
    ck.meta["graph_offsets"] = offsets;
    return ck;
}

template <typename T>
struct LoadedModel {
    std::unique_ptr<Model<T>> model;
    ZScoreStats stats;
};

/// Rebuild a model from a checkpoint. The requested precision must match
/// the stored dtype.
template <typename T>
LoadedModel<T> model_from_checkpoint(const Checkpoint& ck) {
    const char* want = sizeof(T) == 8 ? "f64" : "f32";
    if (ck.meta.at("dtype").get<std::string>() != want)
        throw std::runtime_error("checkpoint precision is " +
                                 ck.meta.at("dtype").get<std::string>() + ", requested " + want);
    const auto& m = ck.meta.at("model");
    ModelConfig cfg;
    cfg.nodes = m.at("nodes").get<int64_t>();
    cfg.channels = m.at("channels").get<int64_t>();
    cfg.hidden = m.at("hidden").get<int64_t>();
    cfg.kernel = m.at("kernel").get<int64_t>();
    cfg.window = m.at("window").get<int64_t>();
    cfg.horizons = m.at("horizons").get<int64_t>();
    cfg.slots = m.at("slots").get<int64_t>();
    cfg.delta_adt = m.at("delta_adt").get<double>();
    cfg.gamma = m.at("gamma").get<std::vector<int64_t>>();

    PredefinedCast<T> graphs;
    for (int64_t off : ck.meta.at("graph_offsets").get<std::vector<int64_t>>())
        graphs.by_offset.emplace(off,
                                 std::make_pair(ck.get_cast<T>("graph.fw." + std::to_string(off)),
                                                ck.get_cast<T>("graph.bw." + std::to_string(off))));

    Rng rng(0);  // values are overwritten below
    LoadedModel<T> out;
    out.model = std::make_unique<Model<T>>(cfg, std::move(graphs), rng);
    for (auto* p : out.model->parameters()) {
        Array<T> v = ck.get<T>(p->name);
        if (v.shape != p->value.shape)
            throw ShapeError("checkpoint array '" + p->name + "' has shape " +
                             shape_str(v.shape) + ", expected " + shape_str(p->value.shape));
        p->value = std::move(v);
    }
    auto inited = ck.meta.at("bn_initialized").get<std::vector<std::string>>();
    for (auto* bn : out.model->bn_layers()) {
        if (std::find(inited.begin(), inited.end(), bn->name) == inited.end()) continue;
        bn->state.running_mean = ck.get<T>("state." + bn->name + ".mean");
        bn->state.running_var = ck.get<T>("state." + bn->name + ".var");
        bn->state.initialized = true;
    }
    Array<double> zm = ck.get<double>("zscore.mean");
    Array<double> zs = ck.get<double>("zscore.std");
    out.stats.mean = zm.data;
    out.stats.stddev = zs.data;
    return out;
}

}  // namespace stjgcn
