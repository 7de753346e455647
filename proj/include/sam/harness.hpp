#pragma once

#include "sam/config.hpp"
#include "sam/layer.hpp"
#include "sam/losses.hpp"
#include "sam/parallel.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace sam {

// Named rng streams, all forked from the experiment seed. Forks depend only
// on the seed, so every component is reproducible independent of call order.
namespace stream {
inline constexpr uint64_t kTaskStructure = 1;
inline constexpr uint64_t kModelInit = 2;
inline constexpr uint64_t kTrainLoop = 3;
inline constexpr uint64_t kCommTokens = 4;
}  // namespace stream

// ---------------------------------------------------------------------------
// Cost model
// ---------------------------------------------------------------------------

/// Per-token FFN compute for one sparse layer: k active experts, each with
/// two matmuls of d_model x d_ffn, multiply-add counted as two ops.
uint64_t flop_count(int k, int d_model, int d_ffn);

/// Parameters of the expert bank, counting both FFN matrices per expert.
uint64_t param_count(int n_expert, int d_model, int d_ffn);

/// Single-block convention (one d_model x d_ffn matrix per expert).
uint64_t param_count_nominal(int n_expert, int d_model, int d_ffn);

uint64_t router_param_count(RouterKind kind, const Topology& topo, int d_model);

/// Throws unless every config has the same per-token flop_count; guards
/// comparison sweeps against accidentally unfair baselines.
void require_iso_flop(const std::vector<ExperimentConfig>& configs);

// ---------------------------------------------------------------------------
// Synthetic task
// ---------------------------------------------------------------------------

struct TaskBatch {
    std::vector<Vector> inputs;
    std::vector<Vector> targets;
    std::vector<int> cluster_ids;  // diagnostics only, never fed to the model
};

/// Mixture-of-linear-maps regression: each cluster c has a fixed random
/// center mu_c and map W_c; a sample is x ~ N(mu_c, I), y = W_c x + noise.
/// Structure is drawn once from the constructing rng, so the task is fully
/// reproducible per seed.
struct MixtureTask {
    MixtureTask(const ExperimentConfig& cfg, Rng rng);

    TaskBatch sample(int batch, Rng& rng) const;
    const Vector& center(int cluster) const { return centers_[cluster]; }
    int n_clusters() const { return static_cast<int>(centers_.size()); }

private:
    int dim_;
    double noise_std_;
    std::vector<Vector> centers_;
    std::vector<Matrix> maps_;
};

// ---------------------------------------------------------------------------
// Model construction and optimizer
// ---------------------------------------------------------------------------

RouterParams make_router_params(RouterKind kind, const Topology& topo, int d_model,
                                double noise_scale, Rng rng);
SamLayer make_layer(const ExperimentConfig& cfg, Rng rng);

struct AdamState {
    std::vector<Matrix> m;
    std::vector<Matrix> v;
    int64_t t = 0;
};

AdamState make_adam_state(SamLayer& layer);
void adam_step(SamLayer& layer, AdamState& state, const LayerGrads& grads, double lr,
               double beta1, double beta2, double eps);

// ---------------------------------------------------------------------------
// Batch evaluation (shared by training and gradient checking)
// ---------------------------------------------------------------------------

struct BatchEval {
    LossBundle losses;
    double total = 0.0;
    DispatchPlan plan;
    LoadStats stats;
    std::vector<ForwardCache> caches;
    LayerGrads grads;
    bool has_grads = false;
};

/// Forward the batch through capacity-limited dispatch, compute all loss
/// components, and (optionally) accumulate analytic gradients, including the
/// auxiliary-loss paths into the router scores. Dispatch fractions are
/// treated as constants.
BatchEval evaluate_batch(const SamLayer& layer, const TaskBatch& batch, const LossWeights& lw,
                         double capacity_factor, const std::vector<RoutingDecision>& decisions,
                         bool compute_grads);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct StepMetrics {
    int step = 0;
    double task_loss = 0.0;
    double align_loss = 0.0;
    double balance_group_loss = 0.0;
    double balance_expert_loss = 0.0;
    double total_loss = 0.0;
    int64_t comm_messages = 0;
    int64_t comm_bytes = 0;
    double dropped_fraction = 0.0;
    double expert_entropy = 0.0;
    uint64_t flops_per_token = 0;
    int64_t sparsity_ratio = 0;
};

struct Trainer {
    explicit Trainer(const ExperimentConfig& cfg);

    StepMetrics step();

    const ExperimentConfig& config() const { return cfg_; }
    const SamLayer& layer() const { return layer_; }
    SamLayer& layer() { return layer_; }
    const MixtureTask& task() const { return task_; }

private:
    ExperimentConfig cfg_;
    MixtureTask task_;
    SamLayer layer_;
    AdamState adam_;
    CommModel comm_;
    int step_count_ = 0;
};

struct TrainResult {
    std::vector<StepMetrics> metrics;
    double final_task_loss = 0.0;  // mean task loss over the trailing 5% of steps
};

TrainResult run_training(const ExperimentConfig& cfg);

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

struct GradCheckBlock {
    std::string name;
    double max_rel_err = 0.0;
    int64_t checked = 0;
    int64_t kink_skipped = 0;      // central difference straddled a relu/hinge kink
    int64_t boundary_skipped = 0;  // perturbation changed the routing selection
};

struct GradCheckReport {
    std::vector<GradCheckBlock> blocks;
    double max_rel_err = 0.0;
    int64_t n_params = 0;
    int64_t kink_skipped = 0;
    int64_t boundary_skipped = 0;
    double threshold = 0.0;
    bool passed = false;
};

struct GradCheckOptions {
    double eps = 1e-5;
    double threshold = 1e-5;
    // When nonzero, added to one analytic expert gradient as a self-test of
    // the checker (a corrupted gradient must be reported as a failure).
    double corrupt = 0.0;
};

/// Central-difference check of the full training loss against the analytic
/// gradients, per parameter block. Routing selections (and moe noise, drawn
/// from noise_rng) are frozen during differencing; parameters whose
/// perturbation crosses a routing boundary or a relu/hinge kink are flagged
/// and excluded. Refuses models above 10^4 parameters.
GradCheckReport grad_check(SamLayer& layer, const TaskBatch& batch, const LossWeights& lw,
                           double capacity_factor, Rng noise_rng,
                           const GradCheckOptions& opt = {});

/// Convenience wrapper: builds the model and the first training batch from
/// the config, then checks at the exact point training would visit first.
GradCheckReport grad_check(const ExperimentConfig& cfg, double eps = 1e-5,
                           double threshold = 1e-5, double corrupt = 0.0);

}  // namespace sam
