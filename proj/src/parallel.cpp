#include "sam/parallel.hpp"

#include <cmath>

namespace sam {

int local_group_of(const Topology& topo, int64_t token) {
    return static_cast<int>((topo.local_group + token) % topo.n_groups);
}

DispatchPlan plan_dispatch(const std::vector<RoutingDecision>& decisions, const Topology& topo,
                           double capacity_factor) {
    if (capacity_factor <= 0.0)
        throw std::invalid_argument("plan_dispatch: capacity_factor must be > 0");
    const int64_t n_tokens = static_cast<int64_t>(decisions.size());
    const int n_experts = topo.n_experts();
    const int k = n_tokens > 0 ? static_cast<int>(decisions[0].selected_experts.size()) : 0;

    DispatchPlan plan;
    plan.assignments.resize(decisions.size());
    plan.overflow.resize(decisions.size());
    plan.expert_counts.assign(n_experts, 0);
    plan.capacity =
        n_tokens > 0
            ? static_cast<int64_t>(std::ceil(capacity_factor * static_cast<double>(n_tokens) * k /
                                             n_experts))
            : 0;
    for (size_t t = 0; t < decisions.size(); ++t) {
        const RoutingDecision& d = decisions[t];
        for (size_t j = 0; j < d.selected_experts.size(); ++j) {
            const int e = d.selected_experts[j];
            if (plan.expert_counts[e] < plan.capacity) {
                plan.assignments[t].emplace_back(e, d.combine_weights[j]);
                ++plan.expert_counts[e];
            } else {
                plan.overflow[t].push_back(e);
            }
        }
    }
    return plan;
}

CommReport comm_cost(const std::vector<RoutingDecision>& decisions, const Topology& topo,
                     const CommModel& model, RouterKind policy) {
    CommReport r;
    r.policy = router_kind_name(policy);
    r.n_tokens = static_cast<int64_t>(decisions.size());
    r.k = decisions.empty() ? 0 : static_cast<int>(decisions[0].selected_experts.size());
    r.per_device_load.assign(topo.n_groups, 0.0);
    for (size_t t = 0; t < decisions.size(); ++t) {
        const RoutingDecision& d = decisions[t];
        const int local = local_group_of(topo, static_cast<int64_t>(t));
        if (is_hierarchical(policy)) {
            // One device hosts all k selected experts; the token crosses the
            // wire at most once each way, whatever k is.
            r.per_device_load[d.selected_group] +=
                static_cast<double>(d.selected_experts.size());
            if (d.selected_group != local)
                r.cross_device_messages += CommModel::dispatch_and_gather;
        } else {
            for (int e : d.selected_experts) {
                const int g = topo.group_of(e);
                r.per_device_load[g] += 1.0;
                if (g != local) r.cross_device_messages += CommModel::dispatch_and_gather;
            }
        }
    }
    r.cross_device_bytes =
        r.cross_device_messages * static_cast<int64_t>(model.d_model) * model.bytes_per_element;
    return r;
}

LoadStats load_stats(const DispatchPlan& plan, const Topology& topo) {
    LoadStats s;
    const int n = topo.n_experts();
    if (static_cast<int>(plan.expert_counts.size()) != n)
        throw std::invalid_argument("load_stats: plan/topology mismatch");
    for (int64_t c : plan.expert_counts) s.total_assignments += c;
    if (s.total_assignments == 0) throw std::invalid_argument("load_stats: empty plan");

    s.expert_fractions.resize(n);
    s.group_fractions.assign(topo.n_groups, 0.0);
    const double total = static_cast<double>(s.total_assignments);
    for (int i = 0; i < n; ++i) {
        const double f = static_cast<double>(plan.expert_counts[i]) / total;
        s.expert_fractions[i] = f;
        s.group_fractions[topo.group_of(i)] += f;
        if (f > 0.0) s.entropy -= f * std::log(f);
    }
    return s;
}

}  // namespace sam
