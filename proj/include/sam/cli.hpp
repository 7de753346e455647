#pragma once

#include "sam/harness.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace sam {

extern const char* kMetricsCsvHeader;

void write_metrics_csv(std::ostream& out, const std::vector<StepMetrics>& metrics);
void write_comm_csv(std::ostream& out, const std::vector<CommReport>& reports);

/// One communication-cost row per (policy, k): switch at k = 1, then
/// moe_topk / sam_shared / sam_nonshared for every k in k_list. Routing is
/// driven by seed-derived router weights and token vectors. For the
/// hierarchical policies the token-to-group map is computed once per policy
/// (the shared router scores groups at the configured k), then the expert
/// count is swept inside the fixed groups, which is exactly the regime in
/// which their traffic is claimed to be k-independent.
std::vector<CommReport> simulate_comm(const ExperimentConfig& cfg, int64_t n_tokens,
                                      const std::vector<int>& k_list);

/// Entry point shared by the binary and the tests. Exit codes: 0 success,
/// 1 usage/config error, 2 numerical failure.
int cli_main(int argc, char** argv);

}  // namespace sam
