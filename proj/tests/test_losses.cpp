#include <doctest.h>

#include "sam/losses.hpp"

#include <cmath>

using namespace sam;

namespace {

// Emulated hierarchical decision over arbitrary scores: selected experts are
// the chosen group's top-k, in descending order.
RoutingDecision fake_decision(const Vector& scores, const Topology& topo, int group, int k) {
    RoutingDecision d;
    d.selected_group = group;
    const int base = topo.first_expert(group);
    Vector local(scores.begin() + base, scores.begin() + base + topo.experts_per_group);
    for (int j : topk(local, k)) {
        d.selected_experts.push_back(base + j);
        d.combine_weights.push_back(scores[base + j]);
    }
    d.expert_scores = scores;
    return d;
}

}  // namespace

TEST_CASE("align_hinge_loss examples") {
    {
        // global top-k already inside the selected group
        const Vector p = {0.4, 0.3, 0.2, 0.1};
        const Topology topo{2, 2, 0};
        const RoutingDecision d = fake_decision(p, topo, 0, 2);
        CHECK(align_hinge_loss(p, d, topo) == 0.0);
    }
    {
        const Vector p = {0.3, 0.1, 0.05, 0.28, 0.22, 0.05};
        const Topology topo{2, 3, 0};
        const RoutingDecision d = fake_decision(p, topo, 1, 2);
        CHECK(align_hinge_loss(p, d, topo) == doctest::Approx(0.08).epsilon(1e-12));
    }
    {
        const Vector p(6, 1.0 / 6.0);
        const Topology topo{3, 2, 0};
        const RoutingDecision d = fake_decision(p, topo, 1, 2);
        CHECK(align_hinge_loss(p, d, topo) == 0.0);
    }
    {
        const Topology topo{2, 2, 0};
        RoutingDecision empty;
        empty.selected_group = 0;
        CHECK_THROWS_AS(align_hinge_loss({0.25, 0.25, 0.25, 0.25}, empty, topo),
                        std::invalid_argument);
    }
}

TEST_CASE("align_hinge_loss is zero iff no outside expert beats the threshold") {
    Rng rng(606);
    for (int trial = 0; trial < 2000; ++trial) {
        const int G = 2 + static_cast<int>(rng.next_u64() % 3);
        const int epg = 1 + static_cast<int>(rng.next_u64() % 4);
        const int k = 1 + static_cast<int>(rng.next_u64() % epg);
        const Topology topo{G, epg, 0};
        Vector scores(G * epg);
        for (double& x : scores) x = rng.next_uniform();
        const int group = static_cast<int>(rng.next_u64() % G);
        const RoutingDecision d = fake_decision(scores, topo, group, k);
        const double loss = align_hinge_loss(scores, d, topo);
        const double threshold = scores[d.selected_experts.back()];
        bool any_above = false;
        for (int e = 0; e < G * epg; ++e)
            if (topo.group_of(e) != group && scores[e] > threshold) any_above = true;
        CHECK(loss >= 0.0);
        CHECK((loss == 0.0) == !any_above);

        // raising any outside score never lowers the loss
        Vector bumped = scores;
        int outside = static_cast<int>(rng.next_u64() % (G * epg));
        while (topo.group_of(outside) == group) outside = (outside + 1) % (G * epg);
        bumped[outside] += rng.next_uniform();
        CHECK(align_hinge_loss(bumped, d, topo) >= loss);
    }
}

TEST_CASE("align_hinge_backward matches finite differences away from kinks") {
    Rng rng(607);
    const Topology topo{2, 3, 0};
    int checked = 0;
    for (int trial = 0; trial < 200 && checked < 50; ++trial) {
        Vector scores(6);
        for (double& x : scores) x = rng.next_uniform();
        const RoutingDecision d = fake_decision(scores, topo, 0, 2);
        const double threshold = scores[d.selected_experts.back()];
        bool near_kink = false;
        for (int e = 3; e < 6; ++e)
            if (std::abs(scores[e] - threshold) < 1e-3) near_kink = true;
        if (near_kink) continue;
        ++checked;
        const Vector grad = align_hinge_backward(scores, d, topo);
        const double eps = 1e-6;
        for (int i = 0; i < 6; ++i) {
            Vector sp = scores, sm = scores;
            sp[i] += eps;
            sm[i] -= eps;
            const double fd =
                (align_hinge_loss(sp, d, topo) - align_hinge_loss(sm, d, topo)) / (2 * eps);
            CHECK(grad[i] == doctest::Approx(fd).epsilon(1e-6));
        }
    }
    CHECK(checked >= 50);
}

TEST_CASE("align_group_nll examples") {
    CHECK(align_group_nll({1.0}, 0) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(align_group_nll({0.7, 0.3}, 0) == doctest::Approx(0.35667494393873245).epsilon(1e-12));
    CHECK(align_group_nll({0.5, 0.5}, 1) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK_THROWS_AS(align_group_nll({0.0, 1.0}, 0), std::invalid_argument);
    CHECK_THROWS_AS(align_group_nll({0.5}, 2), std::invalid_argument);
}

TEST_CASE("align_group_nll equals -log(prob) on softmax scores") {
    Rng rng(608);
    for (int trial = 0; trial < 500; ++trial) {
        const int G = 1 + static_cast<int>(rng.next_u64() % 6);
        Vector logits(G);
        for (double& x : logits) x = 3.0 * rng.next_gaussian();
        const Vector g = softmax(logits);
        const int sel = static_cast<int>(rng.next_u64() % G);
        CHECK(std::abs(align_group_nll(g, sel) - (-std::log(g[sel]))) < 1e-12);
    }
}

TEST_CASE("align_group_nll_backward matches finite differences") {
    Rng rng(609);
    const Vector g = {0.5, 0.2, 0.3};
    const Vector grad = align_group_nll_backward(g, 1);
    const double eps = 1e-7;
    for (int i = 0; i < 3; ++i) {
        Vector gp = g, gm = g;
        gp[i] += eps;
        gm[i] -= eps;
        const double fd = (align_group_nll(gp, 1) - align_group_nll(gm, 1)) / (2 * eps);
        CHECK(grad[i] == doctest::Approx(fd).epsilon(1e-6));
    }
}

TEST_CASE("load_balance_loss examples") {
    for (int n : {1, 2, 5, 16}) {
        const Vector u(n, 1.0 / n);
        CHECK(load_balance_loss(u, u) == doctest::Approx(1.0).epsilon(1e-15));
    }
    CHECK(load_balance_loss({1.0, 0.0}, {1.0, 0.0}) == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(load_balance_loss({1.0, 0.0}, {0.5, 0.5}) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK_THROWS_AS(load_balance_loss({0.5, 0.5}, {1.0}), std::invalid_argument);
}

TEST_CASE("load_balance_loss floor at matched distributions") {
    Rng rng(610);
    for (int trial = 0; trial < 2000; ++trial) {
        const int n = 1 + static_cast<int>(rng.next_u64() % 16);
        Vector f(n);
        double sum = 0.0;
        for (double& x : f) {
            x = rng.next_uniform() + 1e-9;
            sum += x;
        }
        for (double& x : f) x /= sum;
        CHECK(load_balance_loss(f, f) >= 1.0 - 1e-12);
    }
}

TEST_CASE("load_balance_backward matches finite differences") {
    const Vector f = {0.5, 0.3, 0.2};
    const Vector p = {0.1, 0.6, 0.3};
    const Vector grad = load_balance_backward(f);
    const double eps = 1e-7;
    for (int i = 0; i < 3; ++i) {
        Vector pp = p, pm = p;
        pp[i] += eps;
        pm[i] -= eps;
        const double fd = (load_balance_loss(f, pp) - load_balance_loss(f, pm)) / (2 * eps);
        CHECK(grad[i] == doctest::Approx(fd).epsilon(1e-8));
    }
}

TEST_CASE("total_loss combination") {
    {
        const LossBundle parts{3.5, 100.0, 7.0, 9.0};
        CHECK(total_loss(parts, LossWeights{0.0, 0.0, false}) == 3.5);
    }
    {
        const LossBundle parts{1.0, 1.0, 1.0, 1.0};
        CHECK(total_loss(parts, LossWeights{1.0, 1.0, false}) == doctest::Approx(4.0));
    }
    {
        const LossBundle parts{2.0, 3.0, 4.0, 5.0};
        CHECK(total_loss(parts, LossWeights{0.01, 0.1, false}) ==
              doctest::Approx(2.0 + 0.1 * 3.0 + 0.01 * 9.0).epsilon(1e-15));
    }
}
