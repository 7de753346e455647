#include "sam/losses.hpp"

#include <cmath>

namespace sam {

namespace {

// k-th highest score among the selected experts; the selection list is
// ordered descending, so this is the last entry's score.
double selection_threshold(const Vector& scores, const RoutingDecision& sel) {
    if (sel.selected_experts.empty())
        throw std::invalid_argument("align_hinge_loss: empty selection");
    return scores[sel.selected_experts.back()];
}

}  // namespace

double align_hinge_loss(const Vector& expert_scores, const RoutingDecision& selected,
                        const Topology& topo) {
    const double threshold = selection_threshold(expert_scores, selected);
    const int lo = topo.first_expert(selected.selected_group);
    const int hi = lo + topo.experts_per_group;
    double loss = 0.0;
    for (int e = 0; e < static_cast<int>(expert_scores.size()); ++e) {
        if (e >= lo && e < hi) continue;
        const double over = expert_scores[e] - threshold;
        if (over > 0.0) loss += over;
    }
    return loss;
}

Vector align_hinge_backward(const Vector& expert_scores, const RoutingDecision& selected,
                            const Topology& topo) {
    const double threshold = selection_threshold(expert_scores, selected);
    const int kth = selected.selected_experts.back();
    const int lo = topo.first_expert(selected.selected_group);
    const int hi = lo + topo.experts_per_group;
    Vector grad(expert_scores.size(), 0.0);
    int over_count = 0;
    for (int e = 0; e < static_cast<int>(expert_scores.size()); ++e) {
        if (e >= lo && e < hi) continue;
        if (expert_scores[e] > threshold) {
            grad[e] += 1.0;
            ++over_count;
        }
    }
    grad[kth] -= static_cast<double>(over_count);
    return grad;
}

double align_group_nll(const Vector& group_scores, int selected_group) {
    if (selected_group < 0 || selected_group >= static_cast<int>(group_scores.size()))
        throw std::invalid_argument("align_group_nll: selected_group out of range");
    const double sel = group_scores[selected_group];
    if (sel <= 0.0) throw std::invalid_argument("align_group_nll: selected score must be > 0");
    double sum = 0.0;
    for (double g : group_scores) sum += g;
    if (sum <= 0.0) throw std::invalid_argument("align_group_nll: score sum must be > 0");
    return -std::log(sel / sum);
}

Vector align_group_nll_backward(const Vector& group_scores, int selected_group) {
    const double sel = group_scores[selected_group];
    double sum = 0.0;
    for (double g : group_scores) sum += g;
    Vector grad(group_scores.size());
    for (size_t w = 0; w < group_scores.size(); ++w) grad[w] = 1.0 / sum;
    grad[selected_group] -= 1.0 / sel;
    return grad;
}

double load_balance_loss(const Vector& dispatch_fractions, const Vector& mean_probs) {
    if (dispatch_fractions.size() != mean_probs.size())
        throw std::invalid_argument("load_balance_loss: length mismatch");
    if (dispatch_fractions.empty())
        throw std::invalid_argument("load_balance_loss: empty input");
    const double n = static_cast<double>(dispatch_fractions.size());
    double acc = 0.0;
    for (size_t i = 0; i < dispatch_fractions.size(); ++i)
        acc += dispatch_fractions[i] * mean_probs[i];
    return n * acc;
}

Vector load_balance_backward(const Vector& dispatch_fractions) {
    const double n = static_cast<double>(dispatch_fractions.size());
    Vector grad(dispatch_fractions.size());
    for (size_t i = 0; i < dispatch_fractions.size(); ++i) grad[i] = n * dispatch_fractions[i];
    return grad;
}

double total_loss(const LossBundle& parts, const LossWeights& weights) {
    return parts.task + weights.alpha_align * parts.align +
           weights.alpha_balance * (parts.balance_group + parts.balance_expert);
}

}  // namespace sam
