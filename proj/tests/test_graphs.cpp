#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "stjgcn/adaptive.hpp"
#include "stjgcn/calendar.hpp"
#include "stjgcn/graph.hpp"

using namespace stjgcn;

namespace {

DistanceGraph two_node_graph(double dist) {
    // Symmetric two-node graph plus a third edge so sigma is non-degenerate.
    return DistanceGraph::make(3, {{0, 1, dist}, {1, 0, dist}, {0, 2, dist * 2.0}});
}

}  // namespace

TEST_CASE("zero distance gives weight one for every time difference") {
    auto g = DistanceGraph::make(2, {{0, 1, 0.0}, {1, 0, 3.0}});
    auto s = build_predefined(g, 4, 0.2);
    for (int64_t k = 0; k < 4; ++k) {
        CHECK(s.at(k).raw.at2(0, 1) == 1.0);
        CHECK(s.at(k).raw.at2(0, 0) == 1.0);  // self distance is zero by construction
        CHECK(s.at(k).raw.at2(1, 1) == 1.0);
    }
}

TEST_CASE("a distance of one sigma is kept at k=0 and thresholded away at k=1") {
    auto g = two_node_graph(1.0);
    double sigma = g.sigma;
    REQUIRE(sigma > 0.0);

    auto s0 = build_predefined_offsets(g, {0}, 0.3, sigma);
    // dist == sigma: exp(-1)
    auto g2 = DistanceGraph::make(2, {{0, 1, sigma}});
    auto kept = build_predefined_offsets(g2, {0, 1}, 0.3, sigma);
    CHECK(kept.at(0).raw.at2(0, 1) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));

    auto pruned = build_predefined_offsets(g2, {0, 1}, 0.5, sigma);
    CHECK(pruned.at(1).raw.at2(0, 1) == 0.0);  // exp(-4) ~ 0.01832 < 0.5
    CHECK(std::exp(-4.0) == doctest::Approx(0.018315638888734).epsilon(1e-9));
    (void)s0;
}

TEST_CASE("k=0 reproduces the plain spatial Gaussian kernel entry for entry") {
    Rng rng(41);
    std::vector<DistanceEdge> edges;
    for (int i = 0; i < 12; ++i)
        edges.push_back({rng.integer(0, 4), rng.integer(0, 4), rng.uniform(0.1, 5.0)});
    // drop duplicate (from,to) pairs, keeping the first
    std::vector<DistanceEdge> uniq;
    for (auto& e : edges) {
        bool seen = false;
        for (auto& u : uniq) seen = seen || (u.from == e.from && u.to == e.to);
        if (!seen) uniq.push_back(e);
    }
    auto g = DistanceGraph::make(5, uniq);
    auto s = build_predefined(g, 3, 0.0);
    // independent evaluation of the k=0 kernel
    for (auto& e : uniq) {
        double want = std::exp(-(e.dist * e.dist) / (g.sigma * g.sigma));
        CHECK(s.at(0).raw.at2(e.from, e.to) == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("pre-threshold weights are non-increasing in time difference and distance") {
    auto g = DistanceGraph::make(2, {{0, 1, 1.0}, {1, 0, 2.0}});
    auto s = build_predefined(g, 5, 0.0);
    for (int64_t k = 0; k + 1 < 5; ++k) {
        CHECK(s.at(k + 1).raw.at2(0, 1) <= s.at(k).raw.at2(0, 1));
        // larger distance, same k
        CHECK(s.at(k).raw.at2(1, 0) <= s.at(k).raw.at2(0, 1));
    }
}

TEST_CASE("degenerate sigma demands an explicit override") {
    auto g = DistanceGraph::make(2, {{0, 1, 2.0}, {1, 0, 2.0}});
    REQUIRE(g.sigma_degenerate);
    CHECK_THROWS_WITH_AS(build_predefined(g, 2, 0.1), doctest::Contains("sigma override"),
                         std::runtime_error);
    auto s = build_predefined(g, 2, 0.1, 2.0);
    CHECK(s.at(0).raw.at2(0, 1) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
}

TEST_CASE("normalizing the identity is a no-op") {
    Array<double> eye({4, 4}, 0.0);
    for (int64_t i = 0; i < 4; ++i) eye.at2(i, i) = 1.0;
    auto fw = normalize_directed(eye, Direction::Forward);
    auto bw = normalize_directed(eye, Direction::Backward);
    for (int64_t i = 0; i < 16; ++i) {
        CHECK(fw[i] == doctest::Approx(eye[i]).epsilon(1e-15));
        CHECK(bw[i] == doctest::Approx(eye[i]).epsilon(1e-15));
    }
}

TEST_CASE("zero-degree guard divides by one instead of zero") {
    // A = [[0,2],[0,0]]: out-degrees (2, 0 -> guarded to 1), so the formula
    // D_O^{-1/2} A D_O^{-1/2} gives entry (0,1) = 2 / (sqrt(2) * sqrt(1)).
    auto a = Array<double>::from({2, 2}, {0, 2, 0, 0});
    auto fw = normalize_directed(a, Direction::Forward);
    CHECK(fw.at2(0, 1) == doctest::Approx(2.0 / std::sqrt(2.0)).epsilon(1e-12));
    CHECK(fw.at2(0, 0) == 0.0);
    CHECK(fw.at2(1, 0) == 0.0);
    CHECK(fw.at2(1, 1) == 0.0);
    CHECK(fw.all_finite());
}

TEST_CASE("forward and backward normalizations of a symmetric matrix are transposes") {
    Rng rng(43);
    Array<double> a({5, 5}, 0.0);
    for (int64_t i = 0; i < 5; ++i)
        for (int64_t j = i; j < 5; ++j) {
            double v = rng.uniform() < 0.5 ? 0.0 : rng.uniform(0.1, 2.0);
            a.at2(i, j) = v;
            a.at2(j, i) = v;
        }
    auto fw = normalize_directed(a, Direction::Forward);
    auto bw = normalize_directed(a, Direction::Backward);
    for (int64_t i = 0; i < 5; ++i)
        for (int64_t j = 0; j < 5; ++j)
            CHECK(fw.at2(i, j) == doctest::Approx(bw.at2(j, i)).epsilon(1e-12));
}

TEST_CASE("negative adjacency entries are rejected") {
    auto a = Array<double>::from({2, 2}, {0, -1, 0, 0});
    CHECK_THROWS_AS(normalize_directed(a, Direction::Forward), NumericError);
}

TEST_CASE("embedding depends only on slot and weekday") {
    Rng rng(47);
    Tape<double> tape;
    ParamBind<double> bind(tape, false);
    EmbeddingParams<double> emb;
    emb.init(3, 4, 288, rng);

    Calendar cal{parse_iso_timestamp("2018-01-01T00:00"), 5};
    int64_t a = 37, b = a + 7 * 288;  // one week apart: same slot, same weekday
    REQUIRE(cal.slot(a) == cal.slot(b));
    REQUIRE(cal.day_of_week(a) == cal.day_of_week(b));
    auto ua = embed_time(bind, emb, cal.slot(a), cal.day_of_week(a));
    auto ub = embed_time(bind, emb, cal.slot(b), cal.day_of_week(b));
    CHECK(ua.value().data == ub.value().data);

    int64_t c = a + 288;  // next day: same slot, weekday advanced
    REQUIRE(cal.slot(c) == cal.slot(a));
    REQUIRE(cal.day_of_week(c) == (cal.day_of_week(a) + 1) % 7);
    auto uc = embed_time(bind, emb, cal.slot(c), cal.day_of_week(c));
    CHECK(ua.value().data != uc.value().data);
}

TEST_CASE("zeroed projections give a zero embedding") {
    Rng rng(53);
    Tape<double> tape;
    ParamBind<double> bind(tape, false);
    EmbeddingParams<double> emb;
    emb.init(2, 3, 10, rng);
    emb.w_spatial.value.fill(0);
    emb.b_spatial.value.fill(0);
    emb.tod.value.fill(0);
    emb.dow.value.fill(0);
    auto u = embed_time(bind, emb, 4, 2);
    for (double v : u.value().data) CHECK(v == 0.0);
}

TEST_CASE("embedding sum matches a hand computation") {
    Rng rng(59);
    Tape<double> tape;
    ParamBind<double> bind(tape, false);
    EmbeddingParams<double> emb;
    emb.init(2, 2, 4, rng);
    emb.spatial.value = Array<double>::from({2, 2}, {1, 2, 3, 4});
    emb.w_spatial.value = Array<double>::from({2, 2}, {1, 0, 0, 1});  // identity
    emb.b_spatial.value = Array<double>::from({2}, {0.5, -0.5});
    emb.tod.value = Array<double>::from({4, 2}, {0, 0, 10, 20, 0, 0, 0, 0});
    emb.dow.value = Array<double>::from({7 * 2}, std::vector<double>(14, 0.0));
    emb.dow.value.shape = {7, 2};
    emb.dow.value.at2(3, 0) = 100;
    emb.dow.value.at2(3, 1) = 200;
    auto u = embed_time(bind, emb, 1, 3).value();
    CHECK(u.at2(0, 0) == doctest::Approx(1 + 0.5 + 10 + 100).epsilon(1e-14));
    CHECK(u.at2(0, 1) == doctest::Approx(2 - 0.5 + 20 + 200).epsilon(1e-14));
    CHECK(u.at2(1, 0) == doctest::Approx(3 + 0.5 + 10 + 100).epsilon(1e-14));
    CHECK(u.at2(1, 1) == doctest::Approx(4 - 0.5 + 20 + 200).epsilon(1e-14));
}

TEST_CASE("embedding rejects out-of-range time features") {
    Rng rng(61);
    Tape<double> tape;
    ParamBind<double> bind(tape, false);
    EmbeddingParams<double> emb;
    emb.init(2, 2, 4, rng);
    CHECK_THROWS_AS(embed_time(bind, emb, 4, 0), std::out_of_range);
    CHECK_THROWS_AS(embed_time(bind, emb, 0, 7), std::out_of_range);
}

TEST_CASE("single-node adaptive graph is [[1]] when above threshold") {
    Tape<double> tape;
    auto u = tape.constant(Array<double>::from({1, 2}, {1.0, 2.0}));
    auto b = tape.constant(Array<double>::from({2, 2}, {1, 0, 0, 1}));
    auto l = build_adaptive(u, u, b, 0.0);
    CHECK(l.value().data == std::vector<double>{1.0});
}

TEST_CASE("zero interaction matrix yields uniform rows") {
    Tape<double> tape;
    auto u = tape.constant(Array<double>::from({2, 2}, {1, 0, 0, 1}));
    auto b = tape.constant(Array<double>({2, 2}, 0.0));
    auto l = build_adaptive(u, u, b, 0.0).value();
    for (int64_t i = 0; i < 4; ++i) CHECK(l[i] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("threshold masks whole rows to zero and renormalizes the rest") {
    // d=1: U_a=[[1],[2]], U_b=[[1],[1]], B=[[1]]: scores row0 = (1,1), row1 = (2,2)
    Tape<double> tape;
    auto ua = tape.constant(Array<double>::from({2, 1}, {1, 2}));
    auto ub = tape.constant(Array<double>::from({2, 1}, {1, 1}));
    auto b = tape.constant(Array<double>::from({1, 1}, {1}));
    auto l = build_adaptive(ua, ub, b, 1.5).value();
    CHECK(l.at2(0, 0) == 0.0);
    CHECK(l.at2(0, 1) == 0.0);
    CHECK(l.at2(1, 0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(l.at2(1, 1) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("non-masked adaptive rows are row-stochastic within 1e-9") {
    Rng rng(67);
    for (int rep = 0; rep < 50; ++rep) {
        int64_t n = rng.integer(1, 6), d = rng.integer(1, 4);
        Tape<double> tape;
        Array<double> ua({n, d}), ub({n, d}), b({d, d});
        rng.fill_uniform(ua, -1, 1);
        rng.fill_uniform(ub, -1, 1);
        rng.fill_uniform(b, -1, 1);
        auto l = build_adaptive(tape.constant(ua), tape.constant(ub), tape.constant(b), 0.05)
                     .value();
        for (int64_t i = 0; i < n; ++i) {
            double s = 0;
            for (int64_t j = 0; j < n; ++j) s += l.at2(i, j);
            CHECK((std::abs(s - 1.0) < 1e-9 || s == 0.0));
        }
    }
}

TEST_CASE("different time slots generically change the adaptive graph") {
    Rng rng(71);
    Tape<double> tape;
    ParamBind<double> bind(tape, false);
    EmbeddingParams<double> emb;
    emb.init(4, 3, 12, rng);
    // make the temporal rows matter
    rng.fill_uniform(emb.tod.value, -1.0, 1.0);
    auto u1 = embed_time(bind, emb, 2, 1);
    auto u2 = embed_time(bind, emb, 9, 1);
    auto b = bind(emb.interaction);
    auto l1 = build_adaptive(u1, u1, b, -100.0).value();
    auto l2 = build_adaptive(u2, u2, b, -100.0).value();
    CHECK(l1.data != l2.data);
}

TEST_CASE("adaptive graph gradients flow through unmasked entries") {
    Rng rng(73);
    std::vector<double> theta(8);  // U_a (2x2) followed by B (2x2)
    for (auto& v : theta) v = rng.uniform(-1.2, 1.2);
    Array<double> ub_fixed({2, 2});
    rng.fill_uniform(ub_fixed, -1, 1);
    Array<double> wts({2, 2});
    rng.fill_uniform(wts, 0.5, 1.5);

    auto build = [&](Tape<double>& t, Var<double> p) {
        auto both = reshape(p, {2, 2, 2});
        auto ua = select0(both, 0);
        auto b = select0(both, 1);
        auto ub = t.constant(ub_fixed);
        auto l = build_adaptive(ua, ub, b, -5.0);  // keep every entry unmasked
        return sum_all(mul(l, t.constant(wts)));
    };
    Tape<double> tape;
    Var<double> p = tape.leaf(Array<double>::from({8}, theta), true);
    tape.backward(build(tape, p));
    const auto& g = tape.grad(p);
    auto f = [&](const std::vector<double>& th) {
        Tape<double> t2;
        auto p2 = t2.leaf(Array<double>::from({8}, th), false);
        return build(t2, p2).value()[0];
    };
    bool any_nonzero = false;
    for (size_t i = 0; i < theta.size(); ++i) {
        double fd = oracle::central_diff(f, theta, i, 1e-5);
        CHECK(oracle::rel_err(g[static_cast<int64_t>(i)], fd) < 1e-4);
        any_nonzero = any_nonzero || std::abs(fd) > 1e-8;
    }
    CHECK(any_nonzero);

    // With a threshold that prunes entries, pruned entries get no gradient.
    Tape<double> t3;
    auto ua = t3.leaf(Array<double>::from({2, 1}, {1, 2}), true);
    auto ub = t3.constant(Array<double>::from({2, 1}, {1, 1}));
    auto b = t3.constant(Array<double>::from({1, 1}, {1}));
    auto l = build_adaptive(ua, ub, b, 1.5);  // row 0 fully masked
    t3.backward(sum_all(mul(l, l)));
    CHECK(t3.grad(ua)[0] == 0.0);
}
