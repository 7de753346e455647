#include "sam/router.hpp"

#include <algorithm>

namespace sam {

void Topology::validate() const {
    if (n_groups < 1) throw std::invalid_argument("topology: n_groups must be >= 1");
    if (experts_per_group < 1)
        throw std::invalid_argument("topology: experts_per_group must be >= 1");
    if (local_group < 0 || local_group >= n_groups)
        throw std::invalid_argument("topology: local_group out of range");
}

RouterKind router_kind_from_string(const std::string& s) {
    if (s == "switch") return RouterKind::Switch;
    if (s == "moe_topk") return RouterKind::MoeTopK;
    if (s == "sam_shared") return RouterKind::SamShared;
    if (s == "sam_nonshared") return RouterKind::SamNonShared;
    throw std::invalid_argument("unknown router kind '" + s +
                                "' (expected switch, moe_topk, sam_shared or sam_nonshared)");
}

const char* router_kind_name(RouterKind k) {
    switch (k) {
        case RouterKind::Switch: return "switch";
        case RouterKind::MoeTopK: return "moe_topk";
        case RouterKind::SamShared: return "sam_shared";
        case RouterKind::SamNonShared: return "sam_nonshared";
    }
    return "?";
}

bool is_hierarchical(RouterKind k) {
    return k == RouterKind::SamShared || k == RouterKind::SamNonShared;
}

void RouterParams::validate(const Topology& topo, int d_model) const {
    topo.validate();
    const int n = topo.n_experts();
    const bool flat_weights = kind != RouterKind::SamNonShared;
    if (flat_weights) {
        if (w_global.rows != n || w_global.cols != d_model)
            throw std::invalid_argument("router params: w_global must be n_experts x d_model");
        if (!w_group.empty() || !w_mixture.empty())
            throw std::invalid_argument("router params: group weights only valid for sam_nonshared");
    } else {
        if (w_group.rows != topo.n_groups || w_group.cols != d_model)
            throw std::invalid_argument("router params: w_group must be n_groups x d_model");
        if (static_cast<int>(w_mixture.size()) != topo.n_groups)
            throw std::invalid_argument("router params: need one mixture matrix per group");
        for (const Matrix& m : w_mixture)
            if (m.rows != topo.experts_per_group || m.cols != d_model)
                throw std::invalid_argument(
                    "router params: mixture matrices must be experts_per_group x d_model");
        if (!w_global.empty())
            throw std::invalid_argument("router params: w_global not valid for sam_nonshared");
    }
    if (noise_scale < 0.0) throw std::invalid_argument("router params: noise_scale must be >= 0");
    if (kind != RouterKind::MoeTopK && noise_scale != 0.0)
        throw std::invalid_argument("router params: noise_scale only valid for moe_topk");
}

RoutingDecision route_switch(const RouterParams& rp, const Vector& h) {
    if (rp.kind != RouterKind::Switch) throw std::invalid_argument("route_switch: wrong kind");
    RoutingDecision d;
    d.expert_scores = softmax(matvec(rp.w_global, h));
    const int sel = argmax(d.expert_scores);
    d.selected_experts = {sel};
    d.combine_weights = {d.expert_scores[sel]};
    return d;
}

RoutingDecision route_moe_topk_with_noise(const RouterParams& rp, const Vector& h, int k,
                                          const Vector& noise) {
    if (rp.kind != RouterKind::MoeTopK) throw std::invalid_argument("route_moe_topk: wrong kind");
    Vector logits = matvec(rp.w_global, h);
    if (!noise.empty()) {
        if (noise.size() != logits.size())
            throw std::invalid_argument("route_moe_topk: noise size mismatch");
        for (size_t i = 0; i < logits.size(); ++i) logits[i] += noise[i];
    }
    RoutingDecision d;
    d.selected_experts = topk(logits, k);
    Vector sel_logits(k);
    for (int j = 0; j < k; ++j) sel_logits[j] = logits[d.selected_experts[j]];
    d.combine_weights = softmax(sel_logits);  // over the k survivors only
    d.expert_scores = softmax(logits);
    d.noise = noise;
    return d;
}

RoutingDecision route_moe_topk(const RouterParams& rp, const Vector& h, int k, Rng& rng,
                               bool train_mode) {
    Vector noise;
    if (train_mode && rp.noise_scale > 0.0) {
        noise = gaussian_vector(rng, rp.w_global.rows);
        for (double& x : noise) x *= rp.noise_scale;
    }
    return route_moe_topk_with_noise(rp, h, k, noise);
}

namespace {

// Sum of the k best entries of the group's slice of `p`.
double group_topk_sum(const Vector& p, int group, int epg, int k) {
    Vector local(p.begin() + static_cast<size_t>(group) * epg,
                 p.begin() + static_cast<size_t>(group + 1) * epg);
    double s = 0.0;
    for (int j : topk(local, k)) s += local[j];
    return s;
}

}  // namespace

RoutingDecision route_sam_shared(const RouterParams& rp, const Topology& topo, const Vector& h,
                                 int k, int forced_group) {
    if (rp.kind != RouterKind::SamShared)
        throw std::invalid_argument("route_sam_shared: wrong kind");
    const int epg = topo.experts_per_group;
    if (k > epg) throw std::invalid_argument("route_sam_shared: k exceeds experts_per_group");
    RoutingDecision d;
    d.expert_scores = softmax(matvec(rp.w_global, h));
    d.group_scores.resize(topo.n_groups);
    for (int g = 0; g < topo.n_groups; ++g)
        d.group_scores[g] = group_topk_sum(d.expert_scores, g, epg, k);
    d.selected_group = forced_group >= 0 ? forced_group : argmax(d.group_scores);
    const int base = topo.first_expert(d.selected_group);
    Vector local(d.expert_scores.begin() + base, d.expert_scores.begin() + base + epg);
    for (int j : topk(local, k)) {
        d.selected_experts.push_back(base + j);
        d.combine_weights.push_back(d.expert_scores[base + j]);  // raw global score
    }
    return d;
}

RoutingDecision route_sam_nonshared(const RouterParams& rp, const Topology& topo, const Vector& h,
                                    int k, int forced_group) {
    if (rp.kind != RouterKind::SamNonShared)
        throw std::invalid_argument("route_sam_nonshared: wrong kind");
    if (k > topo.experts_per_group)
        throw std::invalid_argument("route_sam_nonshared: k exceeds experts_per_group");
    RoutingDecision d;
    d.group_logits = matvec(rp.w_group, h);
    d.group_scores = softmax(d.group_logits);
    d.selected_group = forced_group >= 0 ? forced_group : argmax(d.group_scores);
    d.expert_scores = softmax(matvec(rp.w_mixture[d.selected_group], h));
    const double g = d.group_scores[d.selected_group];
    const int base = topo.first_expert(d.selected_group);
    for (int j : topk(d.expert_scores, k)) {
        d.selected_experts.push_back(base + j);
        d.combine_weights.push_back(g * d.expert_scores[j]);
    }
    return d;
}

RoutingDecision route(const RouterParams& rp, const Topology& topo, const Vector& h, int k,
                      Rng& rng, bool train_mode) {
    switch (rp.kind) {
        case RouterKind::Switch:
            if (k != 1) throw std::invalid_argument("route: switch requires k = 1");
            return route_switch(rp, h);
        case RouterKind::MoeTopK: return route_moe_topk(rp, h, k, rng, train_mode);
        case RouterKind::SamShared: return route_sam_shared(rp, topo, h, k);
        case RouterKind::SamNonShared: return route_sam_nonshared(rp, topo, h, k);
    }
    throw std::invalid_argument("route: bad kind");
}

RoutingDecision reroute_frozen(const RouterParams& rp, const Topology& topo, const Vector& h,
                               const RoutingDecision& frozen) {
    const int k = static_cast<int>(frozen.selected_experts.size());
    RoutingDecision d;
    switch (rp.kind) {
        case RouterKind::Switch: {
            d.expert_scores = softmax(matvec(rp.w_global, h));
            d.selected_experts = frozen.selected_experts;
            d.combine_weights = {d.expert_scores[frozen.selected_experts[0]]};
            break;
        }
        case RouterKind::MoeTopK: {
            Vector logits = matvec(rp.w_global, h);
            if (!frozen.noise.empty())
                for (size_t i = 0; i < logits.size(); ++i) logits[i] += frozen.noise[i];
            d.noise = frozen.noise;
            d.expert_scores = softmax(logits);
            d.selected_experts = frozen.selected_experts;
            Vector sel_logits(k);
            for (int j = 0; j < k; ++j) sel_logits[j] = logits[frozen.selected_experts[j]];
            d.combine_weights = softmax(sel_logits);
            break;
        }
        case RouterKind::SamShared: {
            d.expert_scores = softmax(matvec(rp.w_global, h));
            d.group_scores.resize(topo.n_groups);
            for (int g = 0; g < topo.n_groups; ++g)
                d.group_scores[g] = group_topk_sum(d.expert_scores, g, topo.experts_per_group, k);
            d.selected_group = frozen.selected_group;
            d.selected_experts = frozen.selected_experts;
            for (int e : frozen.selected_experts) d.combine_weights.push_back(d.expert_scores[e]);
            break;
        }
        case RouterKind::SamNonShared: {
            d.group_logits = matvec(rp.w_group, h);
            d.group_scores = softmax(d.group_logits);
            d.selected_group = frozen.selected_group;
            d.expert_scores = softmax(matvec(rp.w_mixture[d.selected_group], h));
            d.selected_experts = frozen.selected_experts;
            const double g = d.group_scores[d.selected_group];
            const int base = topo.first_expert(d.selected_group);
            for (int e : frozen.selected_experts)
                d.combine_weights.push_back(g * d.expert_scores[e - base]);
            break;
        }
    }
    return d;
}

bool same_selection(const RoutingDecision& a, const RoutingDecision& b) {
    return a.selected_group == b.selected_group && a.selected_experts == b.selected_experts;
}

}  // namespace sam
