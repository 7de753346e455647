#pragma once

#include "sam/router.hpp"
#include "sam/tensor.hpp"

namespace sam {

struct LossWeights {
    double alpha_balance = 0.01;
    double alpha_align = 0.01;
    // Compute the group alignment loss from unnormalized exp-scores instead
    // of probabilities. Same value up to rounding; kept as a knob.
    bool align_raw_denominator = false;
};

/// Hinge penalty pulling the globally best experts into the selected group:
/// sum over experts OUTSIDE the selected group of max(score - threshold, 0),
/// where the threshold is the k-th highest selected score. Zero exactly when
/// no outside expert beats the weakest selected one.
double align_hinge_loss(const Vector& expert_scores, const RoutingDecision& selected,
                        const Topology& topo);

/// d(align_hinge_loss)/d(expert_scores). Subgradient 0 on the hinge boundary.
Vector align_hinge_backward(const Vector& expert_scores, const RoutingDecision& selected,
                            const Topology& topo);

/// Negative log of the selected group's share of the total group score,
/// -log(g_sel / sum_w g_w). The denominator is computed explicitly even when
/// the scores already sum to 1.
double align_group_nll(const Vector& group_scores, int selected_group);
Vector align_group_nll_backward(const Vector& group_scores, int selected_group);

/// Switch-style balance penalty N * sum_i f_i * P_i over N units (groups or
/// experts), where f are dispatch fractions and P mean routing probabilities.
/// Equals 1 at uniform f = P and is minimized there.
double load_balance_loss(const Vector& dispatch_fractions, const Vector& mean_probs);

/// d(load_balance_loss)/d(mean_probs); dispatch fractions are constants.
Vector load_balance_backward(const Vector& dispatch_fractions);

struct LossBundle {
    double task = 0.0;
    double align = 0.0;
    double balance_group = 0.0;
    double balance_expert = 0.0;
};

double total_loss(const LossBundle& parts, const LossWeights& weights);

}  // namespace sam
