#pragma once

#include "sam/router.hpp"
#include "sam/tensor.hpp"

#include <vector>

namespace sam {

/// One expert: a two-layer FFN, out = w_out * relu(w_in * h).
struct ExpertParams {
    Matrix w_in;   // d_ffn x d_model
    Matrix w_out;  // d_model x d_ffn
};

Vector expert_forward(const ExpertParams& e, const Vector& h);

/// The sparse expert layer: router + expert bank over a device topology.
struct SamLayer {
    Topology topo;
    RouterParams router;
    std::vector<ExpertParams> experts;
    int k = 1;
    int d_model = 0;
    int d_ffn = 0;

    void validate() const;
};

/// Everything the backward pass needs from one token's forward pass.
/// Per-selected-slot vectors are left empty for slots dropped by capacity.
struct ForwardCache {
    Vector h;
    RoutingDecision decision;
    std::vector<uint8_t> active;  // per selected slot: survived capacity
    std::vector<Vector> preact;   // w_in * h
    std::vector<Vector> hidden;   // relu(preact)
    std::vector<Vector> expert_out;
    Vector y;
};

struct ExpertGrads {
    Matrix w_in;
    Matrix w_out;
};

/// Extra loss gradients flowing into the router's score vectors. Shapes match
/// RoutingDecision::expert_scores / group_scores; empty means zero.
struct ScoreGrads {
    Vector d_expert_scores;
    Vector d_group_scores;
};

struct LayerGrads {
    Matrix w_global;
    Matrix w_group;
    std::vector<Matrix> w_mixture;
    std::vector<ExpertGrads> experts;
};

LayerGrads make_layer_grads(const SamLayer& layer);

/// Parameter blocks in canonical order (router blocks, then each expert's
/// w_in and w_out). make_layer_grads / collect_grads follow the same order.
std::vector<Matrix*> collect_params(SamLayer& layer);
std::vector<Matrix*> collect_grads(LayerGrads& grads, RouterKind kind);
std::vector<const Matrix*> collect_grads(const LayerGrads& grads, RouterKind kind);
std::vector<std::string> param_block_names(const SamLayer& layer);

/// Route with the layer's own router, then run the selected experts.
ForwardCache layer_forward(const SamLayer& layer, const Vector& h, Rng& rng, bool train_mode);

/// Run the selected experts of an existing decision. `active` masks slots
/// dropped by capacity (null = all active). y = sum of weight_i * E_i(h)
/// over active slots.
ForwardCache layer_forward_with(const SamLayer& layer, const Vector& h, RoutingDecision decision,
                                const std::vector<uint8_t>* active = nullptr);

/// Backprop one token. Accumulates parameter gradients into `acc` (experts
/// not touched by this token receive nothing) and returns dL/dh. Routing
/// index choices are treated as constants; gradients flow through combine
/// weights and the selected experts only.
Vector layer_backward(const SamLayer& layer, const ForwardCache& cache, const Vector& dy,
                      const ScoreGrads& sg, LayerGrads& acc);

}  // namespace sam
