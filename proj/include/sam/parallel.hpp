#pragma once

#include "sam/router.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace sam {

/// Wire-cost accounting for one routed activation vector. Every routed token
/// crosses a device boundary twice: once out to the expert, once back with
/// the result.
struct CommModel {
    int bytes_per_element = 4;  // 32-bit activations on the wire
    int d_model = 0;
    static constexpr int dispatch_and_gather = 2;
};

/// Token-to-expert assignments after capacity clipping. Overflowed
/// assignments are recorded, not errors: the token's output is whatever its
/// surviving experts produce.
struct DispatchPlan {
    std::vector<std::vector<std::pair<int, double>>> assignments;  // per token: (expert, weight)
    std::vector<std::vector<int>> overflow;                        // per token: dropped experts
    std::vector<int64_t> expert_counts;
    int64_t capacity = 0;
};

struct CommReport {
    std::string policy;
    int k = 0;
    int64_t n_tokens = 0;
    int64_t cross_device_messages = 0;
    int64_t cross_device_bytes = 0;
    Vector per_device_load;  // expert computations landing on each device
};

struct LoadStats {
    Vector expert_fractions;
    Vector group_fractions;
    double entropy = 0.0;  // nats, over expert fractions
    int64_t total_assignments = 0;
};

/// Token t's home device under round-robin shard placement.
int local_group_of(const Topology& topo, int64_t token);

/// Assign tokens to experts in batch order; each expert takes at most
/// ceil(capacity_factor * n_tokens * k / n_experts) tokens, the rest
/// overflow. Assumes a uniform k across the batch.
DispatchPlan plan_dispatch(const std::vector<RoutingDecision>& decisions, const Topology& topo,
                           double capacity_factor);

/// Count cross-device traffic for one batch. Flat policies pay per remote
/// selected expert; hierarchical policies pay once per token whose selected
/// group is remote, independent of k, because the k experts share a device
/// and the combination happens there.
CommReport comm_cost(const std::vector<RoutingDecision>& decisions, const Topology& topo,
                     const CommModel& model, RouterKind policy);

LoadStats load_stats(const DispatchPlan& plan, const Topology& topo);

}  // namespace sam
