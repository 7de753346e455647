#pragma once

#include "sam/tensor.hpp"

#include <string>
#include <vector>

namespace sam {

/// Device/group layout: experts live in n_groups groups of experts_per_group,
/// with contiguous global ids (group g owns [g*epg, (g+1)*epg)).
struct Topology {
    int n_groups = 1;
    int experts_per_group = 1;
    int local_group = 0;  // base device for communication accounting

    int n_experts() const { return n_groups * experts_per_group; }
    int group_of(int expert) const { return expert / experts_per_group; }
    int first_expert(int group) const { return group * experts_per_group; }
    void validate() const;
};

enum class RouterKind { Switch, MoeTopK, SamShared, SamNonShared };

RouterKind router_kind_from_string(const std::string& s);
const char* router_kind_name(RouterKind k);
bool is_hierarchical(RouterKind k);  // true for the two SAM kinds

struct RouterParams {
    RouterKind kind = RouterKind::Switch;
    Matrix w_global;                // switch/moe_topk/sam_shared: n_experts x d_model
    Matrix w_group;                 // sam_nonshared: n_groups x d_model
    std::vector<Matrix> w_mixture;  // sam_nonshared: per group, experts_per_group x d_model
    double noise_scale = 0.0;       // moe_topk only; applied in train mode

    void validate(const Topology& topo, int d_model) const;
};

struct RoutingDecision {
    int selected_group = -1;            // -1 for flat routers
    std::vector<int> selected_experts;  // global ids, descending score order
    Vector combine_weights;             // one per selected expert
    // switch/moe_topk/sam_shared: probabilities over all experts;
    // sam_nonshared: probabilities over the selected group's experts.
    Vector expert_scores;
    // sam_shared: sum of the k best in-group scores per group;
    // sam_nonshared: probabilities over groups; flat kinds: empty.
    Vector group_scores;
    Vector group_logits;  // sam_nonshared only; pre-softmax group scores
    Vector noise;         // moe_topk train mode: cached per-logit noise
};

/// Single-expert routing: pick the argmax of softmax(w_global * h), combine
/// weight is that probability.
RoutingDecision route_switch(const RouterParams& p, const Vector& h);

/// Flat top-k routing on (w_global * h) + noise. Combine weights are the
/// softmax over the k surviving logits only, so they sum to 1.
RoutingDecision route_moe_topk(const RouterParams& p, const Vector& h, int k, Rng& rng,
                               bool train_mode);
RoutingDecision route_moe_topk_with_noise(const RouterParams& p, const Vector& h, int k,
                                          const Vector& noise);

/// Hierarchical routing with one global score vector: each group is scored by
/// the sum of its k best probabilities, the best group wins, and the k best
/// experts inside it are activated with their raw global probabilities as
/// combine weights (not renormalized).
RoutingDecision route_sam_shared(const RouterParams& p, const Topology& topo, const Vector& h,
                                 int k, int forced_group = -1);

/// Hierarchical routing with a dedicated group router plus one expert router
/// per group. Combine weight of expert i is group_prob * in-group prob.
RoutingDecision route_sam_nonshared(const RouterParams& p, const Topology& topo, const Vector& h,
                                    int k, int forced_group = -1);

/// Dispatch on params.kind. For switch, k must be 1.
RoutingDecision route(const RouterParams& p, const Topology& topo, const Vector& h, int k,
                      Rng& rng, bool train_mode);

/// Re-route with the discrete selection (group, experts, moe noise) pinned to
/// a previous decision; scores and combine weights are recomputed from the
/// current params. Used for frozen-selection gradient checking.
RoutingDecision reroute_frozen(const RouterParams& p, const Topology& topo, const Vector& h,
                               const RoutingDecision& frozen);

bool same_selection(const RoutingDecision& a, const RoutingDecision& b);

}  // namespace sam
