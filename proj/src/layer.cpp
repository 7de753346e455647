#include "sam/layer.hpp"

#include <utility>

namespace sam {

Vector expert_forward(const ExpertParams& e, const Vector& h) {
    Vector u = matvec(e.w_in, h);
    for (double& x : u) x = x > 0.0 ? x : 0.0;
    return matvec(e.w_out, u);
}

void SamLayer::validate() const {
    topo.validate();
    router.validate(topo, d_model);
    if (k < 1) throw std::invalid_argument("layer: k must be >= 1");
    if (router.kind == RouterKind::Switch && k != 1)
        throw std::invalid_argument("layer: switch routing requires k = 1");
    if (is_hierarchical(router.kind) && k > topo.experts_per_group)
        throw std::invalid_argument("layer: k exceeds experts_per_group");
    if (static_cast<int>(experts.size()) != topo.n_experts())
        throw std::invalid_argument("layer: expert count must match topology");
    for (const ExpertParams& e : experts)
        if (e.w_in.rows != d_ffn || e.w_in.cols != d_model || e.w_out.rows != d_model ||
            e.w_out.cols != d_ffn)
            throw std::invalid_argument("layer: expert dims inconsistent");
}

LayerGrads make_layer_grads(const SamLayer& layer) {
    LayerGrads g;
    if (layer.router.kind == RouterKind::SamNonShared) {
        g.w_group = Matrix(layer.topo.n_groups, layer.d_model);
        g.w_mixture.assign(layer.topo.n_groups,
                           Matrix(layer.topo.experts_per_group, layer.d_model));
    } else {
        g.w_global = Matrix(layer.topo.n_experts(), layer.d_model);
    }
    g.experts.resize(layer.experts.size());
    for (size_t i = 0; i < layer.experts.size(); ++i) {
        g.experts[i].w_in = Matrix(layer.d_ffn, layer.d_model);
        g.experts[i].w_out = Matrix(layer.d_model, layer.d_ffn);
    }
    return g;
}

std::vector<Matrix*> collect_params(SamLayer& layer) {
    std::vector<Matrix*> out;
    if (layer.router.kind == RouterKind::SamNonShared) {
        out.push_back(&layer.router.w_group);
        for (Matrix& m : layer.router.w_mixture) out.push_back(&m);
    } else {
        out.push_back(&layer.router.w_global);
    }
    for (ExpertParams& e : layer.experts) {
        out.push_back(&e.w_in);
        out.push_back(&e.w_out);
    }
    return out;
}

std::vector<Matrix*> collect_grads(LayerGrads& g, RouterKind kind) {
    std::vector<Matrix*> out;
    if (kind == RouterKind::SamNonShared) {
        out.push_back(&g.w_group);
        for (Matrix& m : g.w_mixture) out.push_back(&m);
    } else {
        out.push_back(&g.w_global);
    }
    for (ExpertGrads& e : g.experts) {
        out.push_back(&e.w_in);
        out.push_back(&e.w_out);
    }
    return out;
}

std::vector<const Matrix*> collect_grads(const LayerGrads& g, RouterKind kind) {
    std::vector<const Matrix*> out;
    if (kind == RouterKind::SamNonShared) {
        out.push_back(&g.w_group);
        for (const Matrix& m : g.w_mixture) out.push_back(&m);
    } else {
        out.push_back(&g.w_global);
    }
    for (const ExpertGrads& e : g.experts) {
        out.push_back(&e.w_in);
        out.push_back(&e.w_out);
    }
    return out;
}

std::vector<std::string> param_block_names(const SamLayer& layer) {
    std::vector<std::string> out;
    if (layer.router.kind == RouterKind::SamNonShared) {
        out.push_back("router.w_group");
        for (size_t g = 0; g < layer.router.w_mixture.size(); ++g)
            out.push_back("router.w_mixture[" + std::to_string(g) + "]");
    } else {
        out.push_back("router.w_global");
    }
    for (size_t i = 0; i < layer.experts.size(); ++i) {
        out.push_back("expert[" + std::to_string(i) + "].w_in");
        out.push_back("expert[" + std::to_string(i) + "].w_out");
    }
    return out;
}

ForwardCache layer_forward_with(const SamLayer& layer, const Vector& h, RoutingDecision decision,
                                const std::vector<uint8_t>* active) {
    if (static_cast<int>(h.size()) != layer.d_model)
        throw std::invalid_argument("layer_forward: h must have d_model entries");
    ForwardCache c;
    c.h = h;
    c.decision = std::move(decision);
    const size_t ns = c.decision.selected_experts.size();
    if (active) {
        if (active->size() != ns)
            throw std::invalid_argument("layer_forward: active mask size mismatch");
        c.active = *active;
    } else {
        c.active.assign(ns, 1);
    }
    c.preact.resize(ns);
    c.hidden.resize(ns);
    c.expert_out.resize(ns);
    c.y.assign(layer.d_model, 0.0);
    for (size_t j = 0; j < ns; ++j) {
        if (!c.active[j]) continue;
        const ExpertParams& e = layer.experts[c.decision.selected_experts[j]];
        c.preact[j] = matvec(e.w_in, h);
        c.hidden[j] = c.preact[j];
        for (double& x : c.hidden[j]) x = x > 0.0 ? x : 0.0;
        c.expert_out[j] = matvec(e.w_out, c.hidden[j]);
        const double w = c.decision.combine_weights[j];
        for (int i = 0; i < layer.d_model; ++i) c.y[i] += w * c.expert_out[j][i];
    }
    return c;
}

ForwardCache layer_forward(const SamLayer& layer, const Vector& h, Rng& rng, bool train_mode) {
    return layer_forward_with(layer, h,
                              route(layer.router, layer.topo, h, layer.k, rng, train_mode));
}

Vector layer_backward(const SamLayer& layer, const ForwardCache& c, const Vector& dy,
                      const ScoreGrads& sg, LayerGrads& acc) {
    const RoutingDecision& d = c.decision;
    const size_t ns = d.selected_experts.size();
    if (c.preact.size() != ns) throw std::invalid_argument("layer_backward: cache mismatch");
    if (dy.size() != static_cast<size_t>(layer.d_model))
        throw std::invalid_argument("layer_backward: dy size mismatch");

    Vector dh(layer.d_model, 0.0);
    Vector dc(ns, 0.0);  // gradient w.r.t. combine weights

    // Expert path: dropped slots contributed nothing, so they get nothing.
    for (size_t j = 0; j < ns; ++j) {
        if (!c.active[j]) continue;
        const int e = d.selected_experts[j];
        const ExpertParams& ep = layer.experts[e];
        dc[j] = dot(dy, c.expert_out[j]);
        Vector d_out(layer.d_model);
        for (int i = 0; i < layer.d_model; ++i) d_out[i] = d.combine_weights[j] * dy[i];
        add_outer(acc.experts[e].w_out, d_out, c.hidden[j]);
        Vector d_hidden = matvec_transposed(ep.w_out, d_out);
        for (int i = 0; i < layer.d_ffn; ++i)
            if (c.preact[j][i] <= 0.0) d_hidden[i] = 0.0;
        add_outer(acc.experts[e].w_in, d_hidden, c.h);
        const Vector dh_expert = matvec_transposed(ep.w_in, d_hidden);
        for (int i = 0; i < layer.d_model; ++i) dh[i] += dh_expert[i];
    }

    // Router path: chain combine-weight and auxiliary score gradients back
    // through the softmax(es) into the router weights and h.
    switch (layer.router.kind) {
        case RouterKind::Switch: {
            Vector dp = sg.d_expert_scores.empty() ? Vector(d.expert_scores.size(), 0.0)
                                                   : sg.d_expert_scores;
            dp[d.selected_experts[0]] += dc[0];
            const Vector dl = softmax_backward(d.expert_scores, dp);
            add_outer(acc.w_global, dl, c.h);
            const Vector dh_r = matvec_transposed(layer.router.w_global, dl);
            for (int i = 0; i < layer.d_model; ++i) dh[i] += dh_r[i];
            break;
        }
        case RouterKind::MoeTopK: {
            Vector dl(d.expert_scores.size(), 0.0);
            // combine weights are a softmax over the k selected logits
            const Vector dq = softmax_backward(d.combine_weights, dc);
            for (size_t j = 0; j < ns; ++j) dl[d.selected_experts[j]] += dq[j];
            if (!sg.d_expert_scores.empty()) {
                const Vector dl_aux = softmax_backward(d.expert_scores, sg.d_expert_scores);
                for (size_t i = 0; i < dl.size(); ++i) dl[i] += dl_aux[i];
            }
            add_outer(acc.w_global, dl, c.h);
            const Vector dh_r = matvec_transposed(layer.router.w_global, dl);
            for (int i = 0; i < layer.d_model; ++i) dh[i] += dh_r[i];
            break;
        }
        case RouterKind::SamShared: {
            Vector dp = sg.d_expert_scores.empty() ? Vector(d.expert_scores.size(), 0.0)
                                                   : sg.d_expert_scores;
            for (size_t j = 0; j < ns; ++j) dp[d.selected_experts[j]] += dc[j];
            const Vector dl = softmax_backward(d.expert_scores, dp);
            add_outer(acc.w_global, dl, c.h);
            const Vector dh_r = matvec_transposed(layer.router.w_global, dl);
            for (int i = 0; i < layer.d_model; ++i) dh[i] += dh_r[i];
            break;
        }
        case RouterKind::SamNonShared: {
            const int sel = d.selected_group;
            const int base = layer.topo.first_expert(sel);
            const double gsel = d.group_scores[sel];
            Vector dg = sg.d_group_scores.empty() ? Vector(d.group_scores.size(), 0.0)
                                                  : sg.d_group_scores;
            Vector dpw = sg.d_expert_scores.empty() ? Vector(d.expert_scores.size(), 0.0)
                                                    : sg.d_expert_scores;
            for (size_t j = 0; j < ns; ++j) {
                const int local = d.selected_experts[j] - base;
                dg[sel] += dc[j] * d.expert_scores[local];
                dpw[local] += dc[j] * gsel;
            }
            const Vector dm = softmax_backward(d.group_scores, dg);
            add_outer(acc.w_group, dm, c.h);
            Vector dh_r = matvec_transposed(layer.router.w_group, dm);
            for (int i = 0; i < layer.d_model; ++i) dh[i] += dh_r[i];
            const Vector dr = softmax_backward(d.expert_scores, dpw);
            add_outer(acc.w_mixture[sel], dr, c.h);
            dh_r = matvec_transposed(layer.router.w_mixture[sel], dr);
            for (int i = 0; i < layer.d_model; ++i) dh[i] += dh_r[i];
            break;
        }
    }
    return dh;
}

}  // namespace sam
