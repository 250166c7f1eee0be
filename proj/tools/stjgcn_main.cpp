// Command-line entry point: graph building, training, evaluation,
// prediction, gradient checking, and parameter/cost reporting.
#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "stjgcn/config.hpp"
#include "stjgcn/dataset.hpp"
#include "stjgcn/gradcheck.hpp"
#include "stjgcn/model_io.hpp"
#include "stjgcn/synthetic.hpp"
#include "stjgcn/trainer.hpp"

using namespace stjgcn;

namespace {

struct CommonFlags {
    std::string config_path;
    std::string format = "table";
    std::map<std::string, std::string> overrides;
};

void add_config_flags(CLI::App* cmd, CommonFlags& cf) {
    cmd->add_option("--config", cf.config_path, "key = value configuration file");
    cmd->add_option("--format", cf.format, "output format")
        ->check(CLI::IsMember({"table", "csv", "json"}));
    // every RunConfig key doubles as a flag; flags win over the file
    for (const char* key : {"P", "Q", "d", "K", "delta_pdf", "delta_adt", "beta", "lr",
                            "batch_size", "epochs", "seed", "precision", "train_frac", "val_frac",
                            "grad_clip", "sigma", "strict", "data", "distances", "out",
                            "checkpoint"}) {
        std::string name = key;
        cmd->add_option_function<std::string>(
            "--" + name, [&cf, name](const std::string& v) { cf.overrides[name] = v; },
            "override config key " + name);
    }
}

RunConfig resolve_config(const CommonFlags& cf) {
    std::optional<std::string> path;
    if (!cf.config_path.empty()) path = cf.config_path;
    return parse_config(path, cf.overrides);
}

ModelConfig model_config_for(const RunConfig& rc, const TrafficDataset& ds) {
    ModelConfig mc;
    mc.nodes = ds.nodes();
    mc.channels = ds.channels();
    mc.hidden = rc.hidden;
    mc.kernel = rc.kernel;
    mc.window = rc.window;
    mc.horizons = rc.horizons;
    mc.slots = ds.calendar().slots_per_day();
    mc.delta_adt = rc.delta_adt;
    mc.gamma = plan_dilations(rc.window, rc.kernel).gamma;
    return mc;
}

PredefinedStjg graphs_for(const RunConfig& rc, const ModelConfig& mc, const DistanceGraph& g) {
    std::optional<double> sigma;
    if (rc.sigma > 0) sigma = rc.sigma;
    return build_predefined_offsets(g, mc.required_time_diffs(), rc.delta_pdf, sigma);
}

void print_metrics(const std::string& format, const std::string& split, const SplitEval& ev) {
    if (format == "json") {
        nlohmann::json j;
        j["split"] = split;
        j["mae"] = ev.overall.mae;
        j["rmse"] = ev.overall.rmse;
        j["mape"] = ev.overall.mape;
        j["loss"] = ev.loss;
        std::cout << j.dump() << "\n";
        for (size_t i = 0; i < ev.per_horizon.size(); ++i) {
            nlohmann::json r;
            r["horizon"] = i + 1;
            r["mae"] = ev.per_horizon[i].mae;
            r["rmse"] = ev.per_horizon[i].rmse;
            r["mape"] = ev.per_horizon[i].mape;
            std::cout << r.dump() << "\n";
        }
        return;
    }
    if (format == "csv") {
        std::cout << "split,horizon,mae,rmse,mape\n";
        std::cout << split << ",all," << format_double(ev.overall.mae) << ','
                  << format_double(ev.overall.rmse) << ',' << format_double(ev.overall.mape)
                  << "\n";
        for (size_t i = 0; i < ev.per_horizon.size(); ++i)
            std::cout << split << ',' << i + 1 << ',' << format_double(ev.per_horizon[i].mae)
                      << ',' << format_double(ev.per_horizon[i].rmse) << ','
                      << format_double(ev.per_horizon[i].mape) << "\n";
        return;
    }
    std::printf("%s: MAE %.4f  RMSE %.4f  MAPE %.4f%%  (loss %.4f)\n", split.c_str(),
                ev.overall.mae, ev.overall.rmse, ev.overall.mape, ev.loss);
    std::printf("%8s %10s %10s %10s\n", "horizon", "MAE", "RMSE", "MAPE%");
    for (size_t i = 0; i < ev.per_horizon.size(); ++i)
        std::printf("%8zu %10.4f %10.4f %10.4f\n", i + 1, ev.per_horizon[i].mae,
                    ev.per_horizon[i].rmse, ev.per_horizon[i].mape);
}

void dump_window_metrics(const std::string& path, const SplitEval& ev,
                         const std::vector<int64_t>& starts) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << "window_start,mae,rmse,mape\n";
    const int64_t q = ev.pred.shape[0], w_cnt = ev.pred.shape[1], n = ev.pred.shape[2];
    for (int64_t w = 0; w < w_cnt; ++w) {
        Array<double> p({q, 1, n}), t({q, 1, n});
        for (int64_t i = 0; i < q; ++i)
            for (int64_t j = 0; j < n; ++j) {
                p.at3(i, 0, j) = ev.pred.at3(i, w, j);
                t.at3(i, 0, j) = ev.truth.at3(i, w, j);
            }
        auto m = evaluate(p, t);
        os << starts[static_cast<size_t>(w)] << ',' << format_double(m.mae) << ','
           << format_double(m.rmse) << ',' << format_double(m.mape) << "\n";
    }
}

// ---------------------------------------------------------------------- train

template <typename T>
int run_train(const RunConfig& rc) {
    if (rc.data.empty() || rc.distances.empty() || rc.out.empty())
        throw std::runtime_error("train needs --data, --distances and --out");
    TrafficDataset ds = load_traffic(rc.data);
    DistanceGraph graph = load_distances(rc.distances, ds.nodes());
    ModelConfig mc = model_config_for(rc, ds);
    auto stjg = graphs_for(rc, mc, graph);

    auto splits = split_windows(ds.steps(), rc.window, rc.horizons,
                                SplitSpec{rc.train_frac, rc.val_frac});
    int64_t t1 = static_cast<int64_t>(rc.train_frac * static_cast<double>(ds.steps()));
    auto stats = ZScoreStats::fit(ds.readings, 0, t1);
    auto series = SeriesData<T>::prepare(ds, stats);

    Rng rng(rc.seed);
    Model<T> model(mc, stjg, rng);

    TrainOptions opt;
    opt.epochs = rc.epochs;
    opt.batch_size = rc.batch_size;
    opt.lr = rc.lr;
    opt.beta = rc.beta;
    opt.grad_clip = rc.grad_clip;
    opt.seed = rc.seed;
    auto result = train_model(model, series, splits, stats, opt);

    std::filesystem::create_directories(rc.out);
    {
        std::ofstream os(rc.out + "/history.csv", std::ios::binary);
        os << history_csv(result.history);
    }
    nlohmann::json extra;
    extra["beta"] = rc.beta;
    extra["train_frac"] = rc.train_frac;
    extra["val_frac"] = rc.val_frac;
    extra["interval_minutes"] = ds.interval_minutes;
    extra["delta_pdf"] = rc.delta_pdf;
    checkpoint_from_model(model, stats, extra).save(rc.out + "/checkpoint.stjgcn");

    if (!result.history.empty()) {
        std::printf("best epoch %lld (val loss %.6f)\n",
                    static_cast<long long>(result.best_epoch), result.best_val_loss);
        auto val = evaluate_split(model, series, splits.val, stats, rc.beta, rc.batch_size);
        std::printf("validation: MAE %.4f  RMSE %.4f  MAPE %.4f%%\n", val.overall.mae,
                    val.overall.rmse, val.overall.mape);
    } else {
        std::printf("0 epochs requested; wrote the initial checkpoint\n");
    }
    return 0;
}

// ------------------------------------------------------------------- evaluate

template <typename T>
int run_evaluate(const Checkpoint& ck, const RunConfig& rc, const std::string& split,
                 const std::string& format, const std::string& dump_path) {
    if (rc.data.empty()) throw std::runtime_error("evaluate needs --data");
    auto loaded = model_from_checkpoint<T>(ck);
    Model<T>& model = *loaded.model;
    TrafficDataset ds = load_traffic(rc.data);
    if (ds.nodes() != model.cfg.nodes || ds.channels() != model.cfg.channels)
        throw std::runtime_error("dataset is (" + std::to_string(ds.nodes()) + " nodes, " +
                                 std::to_string(ds.channels()) + " channels) but the checkpoint " +
                                 "expects (" + std::to_string(model.cfg.nodes) + ", " +
                                 std::to_string(model.cfg.channels) + ")");

    double beta = ck.meta.value("beta", 1.0);
    double train_frac = ck.meta.value("train_frac", 0.6);
    double val_frac = ck.meta.value("val_frac", 0.2);
    auto splits = split_windows(ds.steps(), model.cfg.window, model.cfg.horizons,
                                SplitSpec{train_frac, val_frac});
    auto series = SeriesData<T>::prepare(ds, loaded.stats);

    auto pick = [&](const std::string& name) -> const std::vector<int64_t>& {
        if (name == "train") return splits.train;
        if (name == "val") return splits.val;
        return splits.test;
    };
    const auto& starts = pick(split);
    if (starts.empty()) throw std::runtime_error("split '" + split + "' holds no windows");
    auto ev = evaluate_split(model, series, starts, loaded.stats, beta, rc.batch_size);
    print_metrics(format, split, ev);
    if (!dump_path.empty()) dump_window_metrics(dump_path, ev, starts);
    return 0;
}

// -------------------------------------------------------------------- predict

template <typename T>
int run_predict(const Checkpoint& ck, const RunConfig& rc, int64_t at, const std::string& format) {
    if (rc.data.empty()) throw std::runtime_error("predict needs --data");
    auto loaded = model_from_checkpoint<T>(ck);
    Model<T>& model = *loaded.model;
    TrafficDataset ds = load_traffic(rc.data);
    const int64_t P = model.cfg.window;
    if (at < 0) at = ds.steps() - 1;
    if (at < P - 1 || at >= ds.steps())
        throw std::runtime_error("prediction anchor " + std::to_string(at) +
                                 " needs a full input window in [" + std::to_string(P - 1) + ", " +
                                 std::to_string(ds.steps() - 1) + "]");
    auto series = SeriesData<T>::prepare(ds, loaded.stats);
    std::vector<int64_t> starts = {at - P + 1};
    BatchInput<T> in = make_batch(series, starts, P);
    Tape<T> tape;
    ParamBind<T> bind(tape, false);
    Var<T> pred = denormalize_predictions(model.forward(tape, bind, in, false), loaded.stats);
    const Array<T>& pv = pred.value();
    Calendar cal = ds.calendar();
    if (format != "json") std::cout << "horizon,node,timestamp,value\n";
    for (int64_t q = 0; q < model.cfg.horizons; ++q)
        for (int64_t i = 0; i < model.cfg.nodes; ++i) {
            std::string ts = cal.timestamp(at + 1 + q);
            if (format == "json") {
                nlohmann::json r;
                r["horizon"] = q + 1;
                r["node"] = i;
                r["timestamp"] = ts;
                r["value"] = static_cast<double>(pv.at3(q, 0, i));
                std::cout << r.dump() << "\n";
            } else {
                std::cout << q + 1 << ',' << i << ',' << ts << ','
                          << format_double(static_cast<double>(pv.at3(q, 0, i))) << "\n";
            }
        }
    return 0;
}

// ------------------------------------------------------------------ gradcheck

template <typename T>
int run_gradcheck(const GradCheckOptions& opt, const std::string& format) {
    auto report = gradcheck_model<T>(opt);
    if (format == "json") {
        nlohmann::json j;
        j["tolerance"] = report.tolerance;
        j["passed"] = report.passed;
        j["worst_group"] = report.worst_group;
        for (auto& g : report.groups) j["groups"][g.group] = g.max_rel_err;
        std::cout << j.dump() << "\n";
    } else {
        std::printf("threshold %.0e (%s precision)\n", report.tolerance,
                    sizeof(T) == 8 ? "f64" : "f32");
        for (auto& g : report.groups)
            std::printf("%-12s max rel err %.3e over %lld entries  %s\n", g.group.c_str(),
                        g.max_rel_err, static_cast<long long>(g.entries_checked),
                        g.max_rel_err <= report.tolerance ? "ok" : "FAIL");
        std::printf("%s (worst: %s at %.3e)\n", report.passed ? "PASS" : "FAIL",
                    report.worst_group.c_str(), report.worst_err);
    }
    return report.passed ? 0 : 2;
}

// --------------------------------------------------------------------- params

int run_params(const RunConfig& rc, int64_t nodes, int64_t channels, int64_t edges,
               const std::string& format) {
    ModelConfig mc;
    mc.nodes = nodes;
    mc.channels = channels;
    mc.hidden = rc.hidden;
    mc.kernel = rc.kernel;
    mc.window = rc.window;
    mc.horizons = rc.horizons;
    mc.slots = 288;
    mc.delta_adt = rc.delta_adt;
    mc.gamma = plan_dilations(rc.window, rc.kernel).gamma;

    // synthetic ring distances: parameter counting does not depend on them
    Rng rng(1);
    std::vector<DistanceEdge> ring;
    for (int64_t i = 0; i < nodes; ++i)
        if (i != (i + 1) % nodes) ring.push_back({i, (i + 1) % nodes, rng.uniform(0.5, 2.0)});
    auto graph = DistanceGraph::make(nodes, ring);
    auto stjg = build_predefined_offsets(graph, mc.required_time_diffs(), rc.delta_pdf, 1.0);
    Model<double> model(mc, stjg, rng);

    if (edges <= 0) edges = nodes * nodes;
    auto costs = estimate_costs(nodes, rc.hidden, rc.kernel,
                                static_cast<int64_t>(mc.gamma.size()), rc.horizons, edges);
    int64_t total = model.parameter_count();
    auto groups = model.parameter_breakdown();

    if (format == "json") {
        nlohmann::json j;
        j["total"] = total;
        j["total_millions"] = static_cast<double>(total) / 1e6;
        for (auto& [g, c] : groups) j["groups"][g] = c;
        j["layers"] = mc.gamma.size();
        j["gamma"] = mc.gamma;
        j["cost"]["graph_construction"] = costs.graph_construction;
        j["cost"]["stjgc"] = costs.stjgc;
        j["cost"]["prediction"] = costs.prediction;
        std::cout << j.dump() << "\n";
    } else if (format == "csv") {
        std::cout << "group,count\n";
        for (auto& [g, c] : groups) std::cout << g << ',' << c << "\n";
        std::cout << "total," << total << "\n";
    } else {
        std::printf("trainable parameters: %lld (%.3fM)\n", static_cast<long long>(total),
                    static_cast<double>(total) / 1e6);
        for (auto& [g, c] : groups)
            std::printf("  %-12s %10lld\n", g.c_str(), static_cast<long long>(c));
        std::printf("dilation schedule:");
        for (int64_t g : mc.gamma) std::printf(" %lld", static_cast<long long>(g));
        std::printf("  (M=%zu, K=%lld)\n", mc.gamma.size(), static_cast<long long>(rc.kernel));
        std::printf("cost terms (multiplies): graph %lld, stjgc-per-op %lld, prediction %lld\n",
                    static_cast<long long>(costs.graph_construction),
                    static_cast<long long>(costs.stjgc), static_cast<long long>(costs.prediction));
    }
    return 0;
}

// ----------------------------------------------------------------- build-graph

int run_build_graph(const RunConfig& rc, const std::string& out_prefix, bool sparse,
                    const std::string& format) {
    if (rc.distances.empty()) throw std::runtime_error("build-graph needs --distances");
    DistanceGraph graph = load_distances(rc.distances);
    std::optional<double> sigma;
    if (rc.sigma > 0) sigma = rc.sigma;
    auto stjg = build_predefined(graph, rc.kernel, rc.delta_pdf, sigma);

    for (auto& [k, entry] : stjg.by_offset) {
        if (out_prefix.empty()) break;
        std::string path = out_prefix + ".k" + std::to_string(k) + ".csv";
        std::ofstream os(path, std::ios::binary);
        if (!os) throw std::runtime_error("cannot write " + path);
        const int64_t n = graph.node_count;
        if (sparse) {
            os << "from,to,weight\n";
            for (int64_t i = 0; i < n; ++i)
                for (int64_t j = 0; j < n; ++j)
                    if (entry.raw.at2(i, j) != 0.0)
                        os << i << ',' << j << ',' << format_double(entry.raw.at2(i, j)) << "\n";
        } else {
            for (int64_t i = 0; i < n; ++i) {
                for (int64_t j = 0; j < n; ++j)
                    os << (j ? "," : "") << format_double(entry.raw.at2(i, j));
                os << "\n";
            }
        }
    }

    const int64_t n = graph.node_count;
    for (auto& [k, entry] : stjg.by_offset) {
        int64_t kept = 0;
        for (double v : entry.raw.data) kept += v != 0.0 ? 1 : 0;
        double sparsity = 1.0 - static_cast<double>(kept) / static_cast<double>(n * n);
        if (format == "json") {
            nlohmann::json j;
            j["k"] = k;
            j["kept_edges"] = kept;
            j["sparsity"] = sparsity;
            std::cout << j.dump() << "\n";
        } else if (format == "csv") {
            if (k == 0) std::cout << "k,kept_edges,sparsity\n";
            std::cout << k << ',' << kept << ',' << format_double(sparsity) << "\n";
        } else {
            std::printf("k=%lld: %lld non-zero entries of %lld (sparsity %.4f)\n",
                        static_cast<long long>(k), static_cast<long long>(kept),
                        static_cast<long long>(n * n), sparsity);
        }
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"STJGCN traffic forecasting"};
    app.require_subcommand(1);

    CommonFlags synth_cf, build_cf, train_cf, eval_cf, pred_cf, grad_cf, params_cf;

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset and distance file");
    int64_t sy_nodes = 10, sy_steps = 2016, sy_interval = 5;
    uint64_t sy_seed = 1;
    double sy_noise = 2.0;
    std::string sy_data = "synthetic.csv", sy_dist = "synthetic_distances.csv";
    bool sy_binary = false;
    synth->add_option("--nodes", sy_nodes, "node count")->check(CLI::Range(int64_t(2), int64_t(100000)));
    synth->add_option("--steps", sy_steps, "time steps");
    synth->add_option("--interval", sy_interval, "minutes per step");
    synth->add_option("--seed", sy_seed, "rng seed");
    synth->add_option("--noise", sy_noise, "noise amplitude");
    synth->add_option("--out-data", sy_data, "dataset output path");
    synth->add_option("--out-distances", sy_dist, "distance csv output path");
    synth->add_flag("--binary", sy_binary, "write the binary dataset encoding");

    // build-graph
    auto* build = app.add_subcommand("build-graph", "materialize pre-defined STJG adjacency");
    std::string bg_out;
    bool bg_sparse = false;
    add_config_flags(build, build_cf);
    build->add_option("--out-prefix", bg_out, "write <prefix>.k<k>.csv dumps");
    build->add_flag("--sparse", bg_sparse, "emit sparse triplet csv instead of dense");

    // train
    auto* train = app.add_subcommand("train", "train a model");
    add_config_flags(train, train_cf);

    // evaluate
    auto* eval = app.add_subcommand("evaluate", "evaluate a checkpoint on a split");
    std::string ev_split = "test", ev_dump;
    add_config_flags(eval, eval_cf);
    eval->add_option("--split", ev_split, "train|val|test")
        ->check(CLI::IsMember({"train", "val", "test"}));
    eval->add_option("--dump-windows", ev_dump, "write per-window metrics csv");

    // predict
    auto* pred = app.add_subcommand("predict", "forecast Q steps from a window");
    int64_t pd_at = -1;
    add_config_flags(pred, pred_cf);
    pred->add_option("--at", pd_at, "anchor index (default: last step)");

    // gradcheck
    auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    GradCheckOptions gc;
    double gc_tol = 0.0;
    add_config_flags(grad, grad_cf);
    grad->add_option("--nodes", gc.nodes)->check(CLI::Range(int64_t(2), int64_t(5)));
    grad->add_option("--window", gc.window)->check(CLI::Range(int64_t(2), int64_t(8)));
    grad->add_option("--hidden", gc.hidden)->check(CLI::Range(int64_t(1), int64_t(8)));
    grad->add_option("--samples", gc.samples_per_param);
    grad->add_option("--tolerance", gc_tol, "override the pass threshold");

    // params
    auto* params = app.add_subcommand("params", "parameter count and cost report");
    int64_t pm_nodes = 307, pm_channels = 3, pm_edges = 0;
    add_config_flags(params, params_cf);
    params->add_option("--nodes", pm_nodes, "node count (default: PeMSD4)");
    params->add_option("--channels", pm_channels, "input channels");
    params->add_option("--edges", pm_edges, "edge count for the cost terms (default N^2)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;  // usage error
    }

    try {
        if (*synth) {
            auto s = generate_synthetic(sy_nodes, sy_steps, sy_interval, sy_seed, sy_noise);
            if (sy_binary) save_traffic_binary(s.dataset, sy_data);
            else save_traffic_csv(s.dataset, sy_data);
            save_distances_csv(s.graph, sy_dist);
            std::printf("wrote %s (%lld x %lld x 1) and %s (%zu edges)\n", sy_data.c_str(),
                        static_cast<long long>(sy_steps), static_cast<long long>(sy_nodes),
                        sy_dist.c_str(), s.graph.edges.size());
            return 0;
        }
        if (*build) return run_build_graph(resolve_config(build_cf), bg_out, bg_sparse, build_cf.format);
        if (*train) {
            RunConfig rc = resolve_config(train_cf);
            return rc.precision == "f32" ? run_train<float>(rc) : run_train<double>(rc);
        }
        if (*eval) {
            RunConfig rc = resolve_config(eval_cf);
            if (rc.checkpoint.empty()) throw std::runtime_error("evaluate needs --checkpoint");
            Checkpoint ck = Checkpoint::load(rc.checkpoint);
            std::string dtype = ck.meta.at("dtype").get<std::string>();
            return dtype == "f32"
                       ? run_evaluate<float>(ck, rc, ev_split, eval_cf.format, ev_dump)
                       : run_evaluate<double>(ck, rc, ev_split, eval_cf.format, ev_dump);
        }
        if (*pred) {
            RunConfig rc = resolve_config(pred_cf);
            if (rc.checkpoint.empty()) throw std::runtime_error("predict needs --checkpoint");
            Checkpoint ck = Checkpoint::load(rc.checkpoint);
            std::string dtype = ck.meta.at("dtype").get<std::string>();
            return dtype == "f32" ? run_predict<float>(ck, rc, pd_at, pred_cf.format)
                                  : run_predict<double>(ck, rc, pd_at, pred_cf.format);
        }
        if (*grad) {
            RunConfig rc = resolve_config(grad_cf);
            gc.seed = rc.seed;
            gc.kernel = 2;
            if (rc.precision == "f32") {
                gc.tolerance = gc_tol > 0 ? gc_tol : 1e-2;  // looser threshold at 32-bit
                return run_gradcheck<float>(gc, grad_cf.format);
            }
            gc.tolerance = gc_tol > 0 ? gc_tol : 1e-4;
            return run_gradcheck<double>(gc, grad_cf.format);
        }
        if (*params) return run_params(resolve_config(params_cf), pm_nodes, pm_channels, pm_edges,
                                       params_cf.format);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
