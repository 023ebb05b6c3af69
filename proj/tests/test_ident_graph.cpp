#include <doctest.h>

#include <algorithm>
#include <random>

#include "spinecycle/ident_graph.hpp"
#include "spinecycle/phantom.hpp"

using namespace spinecycle;
using namespace spinecycle::labels;

namespace {

const VertebraLabel C2{2}, C3{3}, T2{9}, T3{10}, T4{11}, T5{12}, T6{13}, T7{14}, T9{16}, T10{17};
const VertebraLabel L2{21}, L3{22}, L4{23};

std::vector<LocalPrediction> peaked(const std::vector<VertebraLabel>& reported, double peak = 0.8) {
    std::vector<LocalPrediction> out;
    for (auto l : reported) out.push_back(peaked_prediction(l, peak));
    return out;
}

std::vector<LocalPrediction> random_predictions(std::size_t n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<LocalPrediction> out;
    for (std::size_t i = 0; i < n; ++i) {
        std::array<double, 24> f{};
        double s = 0;
        for (auto& v : f) s += (v = u(rng) * u(rng));
        for (auto& v : f) v /= s;
        out.push_back(LocalPrediction::from_fused(f));
    }
    return out;
}

std::vector<std::array<double, 24>> random_unary(std::size_t n, std::mt19937_64& rng, bool coarse) {
    std::uniform_real_distribution<double> u(0.0, 2.0);
    std::uniform_int_distribution<int> k(0, 3);
    std::vector<std::array<double, 24>> out(n);
    for (auto& col : out)
        for (auto& v : col) v = coarse ? 0.5 * k(rng) : u(rng);
    return out;
}

bool groups_monotone(const std::vector<VertebraLabel>& labels) {
    for (std::size_t i = 1; i < labels.size(); ++i)
        if (group_index(group_of(labels[i])) < group_index(group_of(labels[i - 1]))) return false;
    return true;
}

}  // namespace

TEST_CASE("fuse_predictions") {
    // factor-wise mean of group and within-group probabilities
    auto check_mean = [](const LocalPrediction& got, const LocalPrediction& a, const LocalPrediction& b) {
        for (std::size_t g = 0; g < 3; ++g) {
            CHECK(got.group_probs()[g] == doctest::Approx((a.group_probs()[g] + b.group_probs()[g]) / 2));
            for (std::size_t k = 0; k < kGroupSizes[g]; ++k) {
                CHECK(got.within_group_probs()[g][k] ==
                      doctest::Approx((a.within_group_probs()[g][k] + b.within_group_probs()[g][k]) / 2));
            }
        }
        double total = 0;
        for (double v : got.fused()) total += v;
        CHECK(std::abs(total - 1) < 1e-9);
    };
    const auto a = peaked_prediction(T4, 0.8);
    const auto b = peaked_prediction(C3, 0.6);
    const auto uni = LocalPrediction::uniform();
    check_mean(fuse_predictions(a, b), a, b);
    check_mean(fuse_predictions(a, std::nullopt), a, uni);
    const auto self = fuse_predictions(a, a);
    for (std::size_t i = 0; i < 24; ++i) CHECK(self.fused()[i] == doctest::Approx(a.fused()[i]).epsilon(1e-12));
    CHECK(fuse_predictions(std::nullopt, a) == fuse_predictions(a, std::nullopt));
    CHECK_THROWS(fuse_predictions(std::nullopt, std::nullopt));
}

TEST_CASE("graph structure") {
    const auto g1 = build_graph(peaked({T1}));
    CHECK(g1.node_count() == 26);
    CHECK(g1.edge_count() == 48);

    const auto g2 = build_graph(peaked({T1, T2}));
    CHECK(g2.node_count() == 50);
    // 48 endpoint edges, 23 regular steps, 3 special steps
    CHECK(g2.edge_count() == 48 + 23 + 3);

    int specials = 0;
    for (int r = 0; r < 24; ++r) {
        for (const auto& e : g2.out_edges(g2.node(0, r))) {
            if (!e.special) {
                CHECK(g2.row_of(e.to) == r + 1);
                CHECK(e.cost == 0.0);
                continue;
            }
            ++specials;
            CHECK(e.cost == 0.5);
            switch (*e.special) {
                case SpecialEdge::T13: CHECK((r == 18 && g2.row_of(e.to) == 18)); break;
                case SpecialEdge::L6: CHECK((r == 23 && g2.row_of(e.to) == 23)); break;
                case SpecialEdge::AbsentT12: CHECK((r == 17 && g2.row_of(e.to) == 19)); break;
            }
        }
    }
    CHECK(specials == 3);
    CHECK(g2.node_cost(g2.dst()) == 0.0);

    // unary = (1 - Pv) + w_group (1 - P_group)
    const auto p = peaked_prediction(C3, 0.8);
    const auto g = build_graph({p}, GraphWeights{2.0});
    for (int r = 0; r < 24; ++r) {
        const VertebraLabel l(r + 1);
        CHECK(g.unary(0, r) == doctest::Approx(1 - p.probability(l) + 2.0 * (1 - p.group_probability(group_of(l)))));
    }

    CHECK_THROWS(build_graph({}));
    CHECK_THROWS(build_graph(peaked({T1}), GraphWeights{-1.0}));
}

TEST_CASE("shortest_path matches the dynamic program on random graphs") {
    std::mt19937_64 rng(77);
    std::uniform_int_distribution<std::size_t> len(1, 26);
    for (int trial = 0; trial < 200; ++trial) {
        const auto preds = random_predictions(len(rng), rng);
        const auto g = build_graph(preds);
        const auto a = shortest_path(g);
        const auto b = dp_oracle(g);
        CHECK(a.total_cost == doctest::Approx(b.total_cost).epsilon(1e-12));
        CHECK(a.labels == b.labels);
        CHECK(a.used_special == b.used_special);
        CHECK(groups_monotone(a.labels));
    }
}

TEST_CASE("tie-break agrees on graphs full of ties") {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<std::size_t> len(1, 8);
    for (int trial = 0; trial < 200; ++trial) {
        IdentGraph g(random_unary(len(rng), rng, true), GraphWeights{});
        const auto a = shortest_path(g);
        const auto b = dp_oracle(g);
        CHECK(a.total_cost == doctest::Approx(b.total_cost));
        CHECK(a.labels == b.labels);
    }
    // all-zero unary: the lexicographically smallest shortest sequence starts at C1
    IdentGraph flat(std::vector<std::array<double, 24>>(3, std::array<double, 24>{}), GraphWeights{});
    const auto p = shortest_path(flat);
    CHECK(p.labels == std::vector<VertebraLabel>{C1, C2, C3});
    CHECK(p.total_cost == 0.0);
}

TEST_CASE("column offsets do not change the argmin") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        auto u = random_unary(6, rng, false);
        const auto base = shortest_path(IdentGraph(u, GraphWeights{}));
        for (std::size_t c = 0; c < u.size(); ++c)
            for (auto& v : u[c]) v += 0.3 * static_cast<double>(c + 1);
        const auto shifted = shortest_path(IdentGraph(u, GraphWeights{}));
        CHECK(shifted.labels == base.labels);
        CHECK(shifted.total_cost == doctest::Approx(base.total_cost + 0.3 * 21));
    }
}

TEST_CASE("transitional examples") {
    SUBCASE("regular run") {
        const auto r = identify(peaked({T10, T11, T12, L1}));
        CHECK(r.labels == std::vector<VertebraLabel>{T10, T11, T12, L1});
        CHECK(r.events.empty());
        CHECK_FALSE(r.flagged());
    }
    SUBCASE("T13") {
        const auto r = identify(peaked({T11, T12, T12, L1}));
        CHECK(r.labels == std::vector<VertebraLabel>{T11, T12, T13, L1});
        REQUIRE(r.events.size() == 1);
        CHECK(r.events[0] == std::pair<std::size_t, SpecialEdge>{2, SpecialEdge::T13});
        CHECK_FALSE(r.flagged());
    }
    SUBCASE("absent T12") {
        const auto r = identify(peaked({T10, T11, L1, L2}));
        CHECK(r.labels == std::vector<VertebraLabel>{T10, T11, L1, L2});
        REQUIRE(r.events.size() == 1);
        CHECK(r.events[0] == std::pair<std::size_t, SpecialEdge>{2, SpecialEdge::AbsentT12});
    }
    SUBCASE("L6") {
        const auto r = identify(peaked({L3, L4, L5, L5}));
        CHECK(r.labels == std::vector<VertebraLabel>{L3, L4, L5, L6});
        REQUIRE(r.events.size() == 1);
        CHECK(r.events[0].second == SpecialEdge::L6);
    }
    SUBCASE("isolated error is smoothed") {
        const auto r = identify(peaked({T3, T4, T9, T6, T7}));
        CHECK(r.labels == std::vector<VertebraLabel>{T3, T4, T5, T6, T7});
    }
    SUBCASE("heavier special weight forbids the transitional step") {
        GraphWeights w;
        w.t13 = 5.0;
        const auto r = identify(peaked({T11, T12, T12, L1}), w);
        CHECK(std::find(r.labels.begin(), r.labels.end(), T13) == r.labels.end());
    }
}

TEST_CASE("postprocess_transitional") {
    LabelPath p;
    p.labels = {T12, T12, T12};
    p.used_special = {{1, SpecialEdge::T13}, {2, SpecialEdge::T13}};
    auto r = postprocess_transitional(p);
    CHECK(r.labels == std::vector<VertebraLabel>{T12, T13, T12});
    CHECK(r.flags[2].count(RecordFlag::LabelRepeat) == 1);
    CHECK(r.flagged());

    p.labels = {L5, L5};
    p.used_special = {{1, SpecialEdge::L6}};
    r = postprocess_transitional(p);
    CHECK(r.labels == std::vector<VertebraLabel>{L5, L6});
    CHECK_FALSE(r.flagged());

    p.labels = {T11, L1};
    p.used_special = {{1, SpecialEdge::AbsentT12}};
    r = postprocess_transitional(p);
    CHECK(r.labels == std::vector<VertebraLabel>{T11, L1});
    REQUIRE(r.events.size() == 1);
    CHECK(r.events[0].second == SpecialEdge::AbsentT12);

    p.labels = {T3, T5};
    p.used_special.clear();
    r = postprocess_transitional(p);
    CHECK(r.flags[1].count(RecordFlag::LabelRepeat) == 1);

    p.labels = {T3};
    r = postprocess_transitional(p);
    CHECK(r.labels == std::vector<VertebraLabel>{T3});
    CHECK_FALSE(r.flagged());
}

TEST_CASE("synthetic predictions with noise") {
    std::vector<VertebraLabel> truth;
    for (int c = 3; c <= 20; ++c) truth.push_back(VertebraLabel(c));
    const auto clean = generate_predictions(truth, 0.0, 1);
    CHECK(identify(clean.predictions).labels == truth);
    const auto noisy = generate_predictions(truth, 0.15, 99);
    const auto r = identify(noisy.predictions);
    CHECK(groups_monotone(r.labels));
    CHECK(r.labels.size() == truth.size());
}
