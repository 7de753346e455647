#include <doctest.h>

#include "sam/harness.hpp"
#include "sam/layer.hpp"

#include <cmath>

using namespace sam;

namespace {

ExpertParams scalar_expert(double w_in, double w_out) {
    ExpertParams e;
    e.w_in = Matrix(1, 1);
    e.w_in.at(0, 0) = w_in;
    e.w_out = Matrix(1, 1);
    e.w_out.at(0, 0) = w_out;
    return e;
}

SamLayer random_layer(RouterKind kind, int n_groups, int epg, int k, int d_model, int d_ffn,
                      uint64_t seed) {
    ExperimentConfig cfg;
    cfg.d_model = d_model;
    cfg.input_dim = d_model;
    cfg.d_ffn_base = d_ffn * k;
    cfg.n_groups = n_groups;
    cfg.experts_per_group = epg;
    cfg.k = k;
    cfg.router = router_kind_name(kind);
    cfg.seed = seed;
    cfg.noise_scale = 0.0;
    return make_layer(cfg, Rng(seed));
}

// Scalar probe of the layer output for finite differencing: r . y(h), with
// the routing selection pinned to `frozen`.
double probe(const SamLayer& layer, const Vector& h, const Vector& r,
             const RoutingDecision& frozen) {
    const RoutingDecision d = reroute_frozen(layer.router, layer.topo, h, frozen);
    const ForwardCache c = layer_forward_with(layer, h, d);
    return dot(r, c.y);
}

}  // namespace

TEST_CASE("expert_forward basics") {
    {
        ExpertParams e;
        e.w_in = Matrix(3, 2);
        e.w_out = Matrix(2, 3);
        CHECK(expert_forward(e, {1.0, 2.0}) == Vector{0.0, 0.0});
    }
    CHECK(expert_forward(scalar_expert(1.0, 1.0), {2.0}) == Vector{2.0});
    CHECK(expert_forward(scalar_expert(1.0, 1.0), {-2.0}) == Vector{0.0});  // relu clamp
    ExpertParams bad = scalar_expert(1.0, 1.0);
    CHECK_THROWS_AS(expert_forward(bad, {1.0, 2.0}), std::invalid_argument);
}

TEST_CASE("layer_forward with switch routing is the single weighted expert") {
    SamLayer layer = random_layer(RouterKind::Switch, 2, 2, 1, 5, 4, 17);
    Rng rng(3);
    const Vector h = gaussian_vector(rng, 5);
    Rng unused(0);
    const ForwardCache c = layer_forward(layer, h, unused, false);
    const int sel = c.decision.selected_experts[0];
    const double w = c.decision.combine_weights[0];
    const Vector direct = expert_forward(layer.experts[sel], h);
    for (int i = 0; i < 5; ++i) CHECK(c.y[i] == doctest::Approx(w * direct[i]).epsilon(1e-14));
}

TEST_CASE("non-shared combination arithmetic") {
    // two groups with equal group scores (0.5 each), in-group probs [0.6, 0.4],
    // expert outputs [2,0] and [0,2] -> y = [0.6, 0.4]
    SamLayer layer;
    layer.topo = Topology{2, 2, 0};
    layer.k = 2;
    layer.d_model = 2;
    layer.d_ffn = 1;
    layer.router.kind = RouterKind::SamNonShared;
    layer.router.w_group = Matrix(2, 2);  // zero: uniform group scores, group 0 wins
    layer.router.w_mixture.assign(2, Matrix(2, 2));
    layer.router.w_mixture[0].at(0, 0) = std::log(0.6);
    layer.router.w_mixture[0].at(1, 0) = std::log(0.4);
    layer.experts.resize(4);
    for (ExpertParams& e : layer.experts) {
        e.w_in = Matrix(1, 2);
        e.w_out = Matrix(2, 1);
    }
    layer.experts[0].w_in.at(0, 0) = 1.0;
    layer.experts[0].w_out.at(0, 0) = 2.0;  // E0 = [2, 0]
    layer.experts[1].w_in.at(0, 0) = 1.0;
    layer.experts[1].w_out.at(1, 0) = 2.0;  // E1 = [0, 2]
    layer.validate();

    Rng unused(0);
    const ForwardCache c = layer_forward(layer, {1.0, 0.0}, unused, false);
    CHECK(c.decision.selected_group == 0);
    CHECK(c.y[0] == doctest::Approx(0.5 * 0.6 * 2.0).epsilon(1e-12));
    CHECK(c.y[1] == doctest::Approx(0.5 * 0.4 * 2.0).epsilon(1e-12));
}

TEST_CASE("layer_forward equals the masked dense oracle") {
    Rng rng(2025);
    for (int trial = 0; trial < 50; ++trial) {
        const RouterKind kinds[] = {RouterKind::Switch, RouterKind::MoeTopK,
                                    RouterKind::SamShared, RouterKind::SamNonShared};
        const RouterKind kind = kinds[trial % 4];
        const int k = kind == RouterKind::Switch ? 1 : 2;
        SamLayer layer = random_layer(kind, 2, 3, k, 4, 3, 1000 + trial);
        const Vector h = gaussian_vector(rng, 4);
        Rng unused(0);
        const ForwardCache c = layer_forward(layer, h, unused, false);
        // dense oracle: run every expert, mask by the decision
        Vector y(4, 0.0);
        for (int e = 0; e < layer.topo.n_experts(); ++e) {
            double w = 0.0;
            for (size_t j = 0; j < c.decision.selected_experts.size(); ++j)
                if (c.decision.selected_experts[j] == e) w = c.decision.combine_weights[j];
            if (w == 0.0) continue;
            const Vector out = expert_forward(layer.experts[e], h);
            for (int i = 0; i < 4; ++i) y[i] += w * out[i];
        }
        for (int i = 0; i < 4; ++i) CHECK(c.y[i] == doctest::Approx(y[i]).epsilon(1e-12));
    }
}

TEST_CASE("inactive slots contribute nothing") {
    SamLayer layer = random_layer(RouterKind::SamShared, 2, 3, 2, 4, 3, 5);
    Rng rng(6), unused(0);
    const Vector h = gaussian_vector(rng, 4);
    const RoutingDecision d = route(layer.router, layer.topo, h, 2, unused, false);
    const std::vector<uint8_t> mask = {1, 0};
    const ForwardCache c = layer_forward_with(layer, h, d, &mask);
    const Vector full = expert_forward(layer.experts[d.selected_experts[0]], h);
    for (int i = 0; i < 4; ++i)
        CHECK(c.y[i] == doctest::Approx(d.combine_weights[0] * full[i]).epsilon(1e-14));
}

TEST_CASE("zero upstream gradient gives zero parameter gradients") {
    SamLayer layer = random_layer(RouterKind::SamNonShared, 2, 2, 2, 4, 3, 9);
    Rng rng(10), unused(0);
    const Vector h = gaussian_vector(rng, 4);
    const ForwardCache c = layer_forward(layer, h, unused, false);
    LayerGrads g = make_layer_grads(layer);
    const Vector dh = layer_backward(layer, c, Vector(4, 0.0), ScoreGrads{}, g);
    for (double x : dh) CHECK(x == 0.0);
    for (const Matrix* m : collect_grads(g, layer.router.kind))
        for (double x : m->data) CHECK(x == 0.0);
}

TEST_CASE("unselected experts receive exactly zero gradient") {
    SamLayer layer = random_layer(RouterKind::SamShared, 2, 4, 2, 4, 3, 12);
    Rng rng(13), unused(0);
    const Vector h = gaussian_vector(rng, 4);
    const ForwardCache c = layer_forward(layer, h, unused, false);
    LayerGrads g = make_layer_grads(layer);
    layer_backward(layer, c, gaussian_vector(rng, 4), ScoreGrads{}, g);
    for (int e = 0; e < layer.topo.n_experts(); ++e) {
        bool selected = false;
        for (int s : c.decision.selected_experts) selected |= (s == e);
        if (selected) continue;
        for (double x : g.experts[e].w_in.data) CHECK(x == 0.0);
        for (double x : g.experts[e].w_out.data) CHECK(x == 0.0);
    }
}

TEST_CASE("layer_backward matches central differences for every kind") {
    // d_model = 4, 2 groups x 2 experts; probe r.y with frozen selection.
    Rng rng(404);
    const RouterKind kinds[] = {RouterKind::Switch, RouterKind::MoeTopK, RouterKind::SamShared,
                                RouterKind::SamNonShared};
    for (const RouterKind kind : kinds) {
        const int k = kind == RouterKind::Switch ? 1 : 2;
        SamLayer layer = random_layer(kind, 2, 2, k, 4, 3, 7000 + static_cast<int>(kind));
        Vector h = gaussian_vector(rng, 4);
        const Vector r = gaussian_vector(rng, 4);
        Rng unused(0);

        // keep clear of relu kinks so the difference quotient is smooth
        bool clean = false;
        while (!clean) {
            Rng probe_rng(0);
            const ForwardCache c = layer_forward(layer, h, probe_rng, false);
            clean = true;
            for (size_t j = 0; j < c.preact.size(); ++j)
                for (double u : c.preact[j])
                    if (std::abs(u) < 1e-3) clean = false;
            if (!clean) h = gaussian_vector(rng, 4);
        }

        const RoutingDecision base = route(layer.router, layer.topo, h, k, unused, false);
        const ForwardCache cache = layer_forward_with(layer, h, base);
        LayerGrads grads = make_layer_grads(layer);
        const Vector dh = layer_backward(layer, cache, r, ScoreGrads{}, grads);

        const double eps = 1e-5;
        auto params = collect_params(layer);
        auto analytic = collect_grads(grads, layer.router.kind);
        double max_err = 0.0;
        for (size_t b = 0; b < params.size(); ++b) {
            for (size_t i = 0; i < params[b]->data.size(); ++i) {
                double& theta = params[b]->data[i];
                const double saved = theta;
                theta = saved + eps;
                const double lp = probe(layer, h, r, base);
                theta = saved - eps;
                const double lm = probe(layer, h, r, base);
                theta = saved;
                const double fd = (lp - lm) / (2 * eps);
                const double a = analytic[b]->data[i];
                max_err = std::max(max_err,
                                   std::abs(fd - a) / std::max({std::abs(fd), std::abs(a), 1.0}));
            }
        }
        // dh as well
        for (int i = 0; i < 4; ++i) {
            Vector hp = h, hm = h;
            hp[i] += eps;
            hm[i] -= eps;
            const double fd = (probe(layer, hp, r, base) - probe(layer, hm, r, base)) / (2 * eps);
            max_err = std::max(max_err,
                               std::abs(fd - dh[i]) / std::max({std::abs(fd), std::abs(dh[i]), 1.0}));
        }
        CHECK(max_err < 1e-6);
    }
}

TEST_CASE("iso-flop identity under the hidden-size scaling rule") {
    const int d_ffn_base = 3072;
    const uint64_t base = flop_count(1, 768, d_ffn_base);
    for (int k : {2, 4, 8, 16}) CHECK(flop_count(k, 768, d_ffn_base / k) == base);
}

TEST_CASE("layer validation rejects inconsistent configs") {
    SamLayer layer = random_layer(RouterKind::SamShared, 2, 2, 2, 4, 3, 77);
    layer.k = 3;  // k > experts_per_group
    CHECK_THROWS_AS(layer.validate(), std::invalid_argument);
    layer.k = 2;
    layer.experts.pop_back();
    CHECK_THROWS_AS(layer.validate(), std::invalid_argument);
}
