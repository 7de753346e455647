#pragma once

#include "sam/router.hpp"

#include <cstdint>
#include <string>

namespace sam {

/// One experiment, fully specified. Serializes to flat `key = value` lines
/// (see parse_config_text); defaults describe a small model that trains in
/// seconds.
struct ExperimentConfig {
    int d_model = 32;
    int d_ffn_base = 64;  // expert hidden size at k = 1; actual d_ffn = d_ffn_base / k
    int n_groups = 2;
    int experts_per_group = 2;
    int k = 2;
    std::string router = "sam_shared";
    double capacity_factor = 1.25;
    double alpha_balance = 0.01;
    double alpha_align = 0.01;
    // The group alignment loss divides by the total group score. With
    // probabilities that total is 1; this flag routes the same computation
    // through unnormalized scores instead (numerically equivalent).
    bool align_nll_raw_denominator = false;
    double noise_scale = 1.0;  // moe_topk logit noise in train mode
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double lr = 0.01;
    int batch_size = 64;
    int steps = 200;
    uint64_t seed = 1;
    int n_clusters = 4;
    int input_dim = 32;  // must equal d_model (the toy model has no embedding)
    double noise_std = 0.1;
    double center_scale = 3.0;  // cluster center spread, in input std units

    int n_experts() const { return n_groups * experts_per_group; }
    int d_ffn() const { return d_ffn_base / k; }
    int64_t sparsity_ratio() const { return static_cast<int64_t>(n_experts()) / k; }
    RouterKind router_kind() const { return router_kind_from_string(router); }
    Topology topology() const { return Topology{n_groups, experts_per_group, 0}; }

    void validate() const;
};

/// Flat `key = value` config text. `#` starts a comment, blank lines are
/// skipped, unknown keys are rejected, parse order does not matter.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig parse_config_file(const std::string& path);
std::string serialize_config(const ExperimentConfig& cfg);

/// Shortest decimal string that round-trips the exact double ("%.17g").
std::string format_double(double x);

}  // namespace sam
