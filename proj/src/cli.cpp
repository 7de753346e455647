#include "sam/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

namespace sam {

const char* kMetricsCsvHeader =
    "step,task_loss,align_loss,balance_group_loss,balance_expert_loss,total_loss,"
    "comm_messages,comm_bytes,dropped_fraction,expert_entropy,flops_per_token,sparsity_ratio";

void write_metrics_csv(std::ostream& out, const std::vector<StepMetrics>& metrics) {
    out << kMetricsCsvHeader << "\n";
    for (const StepMetrics& m : metrics) {
        out << m.step << ',' << format_double(m.task_loss) << ',' << format_double(m.align_loss)
            << ',' << format_double(m.balance_group_loss) << ','
            << format_double(m.balance_expert_loss) << ',' << format_double(m.total_loss) << ','
            << m.comm_messages << ',' << m.comm_bytes << ','
            << format_double(m.dropped_fraction) << ',' << format_double(m.expert_entropy) << ','
            << m.flops_per_token << ',' << m.sparsity_ratio << "\n";
    }
}

void write_comm_csv(std::ostream& out, const std::vector<CommReport>& reports) {
    out << "policy,k,n_tokens,cross_device_messages,cross_device_bytes\n";
    for (const CommReport& r : reports)
        out << r.policy << ',' << r.k << ',' << r.n_tokens << ',' << r.cross_device_messages
            << ',' << r.cross_device_bytes << "\n";
}

std::vector<CommReport> simulate_comm(const ExperimentConfig& cfg, int64_t n_tokens,
                                      const std::vector<int>& k_list) {
    cfg.validate();
    if (n_tokens < 0) throw std::invalid_argument("simulate_comm: n_tokens must be >= 0");
    if (k_list.empty()) throw std::invalid_argument("simulate_comm: empty k list");
    const Topology topo = cfg.topology();
    for (int k : k_list) {
        if (k < 1) throw std::invalid_argument("simulate_comm: k values must be >= 1");
        if (k > topo.experts_per_group)
            throw std::invalid_argument("simulate_comm: k " + std::to_string(k) +
                                        " exceeds experts_per_group");
    }

    const Rng base(cfg.seed);
    Rng init = base.fork(stream::kModelInit);
    const RouterParams switch_params =
        make_router_params(RouterKind::Switch, topo, cfg.d_model, 0.0, init.fork(0));
    const RouterParams moe_params =
        make_router_params(RouterKind::MoeTopK, topo, cfg.d_model, 0.0, init.fork(0));
    const RouterParams shared_params =
        make_router_params(RouterKind::SamShared, topo, cfg.d_model, 0.0, init.fork(0));
    const RouterParams nonshared_params =
        make_router_params(RouterKind::SamNonShared, topo, cfg.d_model, 0.0, init.fork(1));

    const Rng token_base = base.fork(stream::kCommTokens);
    auto token = [&](int64_t t) {
        Rng r = token_base.fork(static_cast<uint64_t>(t));
        return gaussian_vector(r, cfg.d_model);
    };

    CommModel model;
    model.d_model = cfg.d_model;
    std::vector<CommReport> rows;
    Rng unused(0);

    {
        std::vector<RoutingDecision> ds;
        ds.reserve(n_tokens);
        for (int64_t t = 0; t < n_tokens; ++t) ds.push_back(route_switch(switch_params, token(t)));
        CommReport r = comm_cost(ds, topo, model, RouterKind::Switch);
        r.k = 1;
        r.n_tokens = n_tokens;
        rows.push_back(std::move(r));
    }

    for (int k : k_list) {
        std::vector<RoutingDecision> ds;
        ds.reserve(n_tokens);
        for (int64_t t = 0; t < n_tokens; ++t)
            ds.push_back(route_moe_topk(moe_params, token(t), k, unused, false));
        CommReport r = comm_cost(ds, topo, model, RouterKind::MoeTopK);
        r.k = k;
        r.n_tokens = n_tokens;
        rows.push_back(std::move(r));
    }

    // Hierarchical policies: pin each token's group once, then sweep how many
    // experts are activated inside it.
    std::vector<int> shared_groups(n_tokens), nonshared_groups(n_tokens);
    for (int64_t t = 0; t < n_tokens; ++t) {
        const Vector h = token(t);
        shared_groups[t] = route_sam_shared(shared_params, topo, h, cfg.k).selected_group;
        nonshared_groups[t] =
            route_sam_nonshared(nonshared_params, topo, h, cfg.k).selected_group;
    }
    for (int k : k_list) {
        std::vector<RoutingDecision> ds;
        ds.reserve(n_tokens);
        for (int64_t t = 0; t < n_tokens; ++t)
            ds.push_back(route_sam_shared(shared_params, topo, token(t), k, shared_groups[t]));
        CommReport r = comm_cost(ds, topo, model, RouterKind::SamShared);
        r.k = k;
        r.n_tokens = n_tokens;
        rows.push_back(std::move(r));
    }
    for (int k : k_list) {
        std::vector<RoutingDecision> ds;
        ds.reserve(n_tokens);
        for (int64_t t = 0; t < n_tokens; ++t)
            ds.push_back(
                route_sam_nonshared(nonshared_params, topo, token(t), k, nonshared_groups[t]));
        CommReport r = comm_cost(ds, topo, model, RouterKind::SamNonShared);
        r.k = k;
        r.n_tokens = n_tokens;
        rows.push_back(std::move(r));
    }
    return rows;
}

namespace {

std::vector<int> parse_k_list(const std::string& text) {
    std::vector<int> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        size_t pos = 0;
        const int k = std::stoi(item, &pos);
        if (pos != item.size()) throw std::invalid_argument("bad k list entry '" + item + "'");
        out.push_back(k);
    }
    if (out.empty()) throw std::invalid_argument("empty k list");
    return out;
}

ExperimentConfig load_config(const std::string& path, const uint64_t* seed_override) {
    ExperimentConfig cfg = parse_config_file(path);
    if (seed_override) {
        cfg.seed = *seed_override;
        cfg.validate();
    }
    return cfg;
}

void print_vector(std::ostream& out, const char* label, const Vector& v) {
    out << label;
    for (size_t i = 0; i < v.size(); ++i) out << (i ? " " : "") << format_double(v[i]);
    out << "\n";
}

int cmd_train(const ExperimentConfig& cfg, const std::string& out_path) {
    const TrainResult res = run_training(cfg);
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw std::invalid_argument("cannot open output file '" + out_path + "'");
    write_metrics_csv(out, res.metrics);
    out.close();
    std::cout << "seed: " << cfg.seed << "\n";
    std::cout << "wrote " << res.metrics.size() << " metric rows to " << out_path << "\n";
    std::cout << "final: task_loss=" << format_double(res.final_task_loss)
              << " sparsity_ratio=" << cfg.sparsity_ratio() << " policy=" << cfg.router << "\n";
    return 0;
}

int cmd_route(const ExperimentConfig& cfg) {
    const SamLayer layer = make_layer(cfg, Rng(cfg.seed));
    Vector h;
    double x;
    while (std::cin >> x) h.push_back(x);
    if (static_cast<int>(h.size()) != cfg.d_model)
        throw std::invalid_argument("route: expected " + std::to_string(cfg.d_model) +
                                    " values on stdin, got " + std::to_string(h.size()));
    Rng unused(0);
    const RoutingDecision d = route(layer.router, layer.topo, h, layer.k, unused, false);
    std::cout << "policy: " << cfg.router << "\n";
    std::cout << "seed: " << cfg.seed << "\n";
    if (d.group_scores.empty()) {
        std::cout << "group_scores: n/a\n";
        std::cout << "selected_group: n/a\n";
    } else {
        print_vector(std::cout, "group_scores: ", d.group_scores);
        std::cout << "selected_group: " << d.selected_group << "\n";
    }
    print_vector(std::cout, "expert_scores: ", d.expert_scores);
    std::cout << "selected_experts:";
    for (int e : d.selected_experts) std::cout << " " << e;
    std::cout << "\n";
    print_vector(std::cout, "combine_weights: ", d.combine_weights);
    return 0;
}

int cmd_simulate_comm(const ExperimentConfig& cfg, int64_t n_tokens,
                      const std::vector<int>& k_list, const std::string& out_path) {
    const std::vector<CommReport> rows = simulate_comm(cfg, n_tokens, k_list);
    std::ostringstream body;
    body << "# seed: " << cfg.seed << "\n";
    write_comm_csv(body, rows);
    if (out_path.empty()) {
        std::cout << body.str();
    } else {
        std::ofstream out(out_path, std::ios::binary);
        if (!out) throw std::invalid_argument("cannot open output file '" + out_path + "'");
        out << body.str();
        std::cout << "seed: " << cfg.seed << "\n";
        std::cout << "wrote " << rows.size() << " rows to " << out_path << "\n";
    }
    return 0;
}

int cmd_flops(const ExperimentConfig& cfg) {
    const Topology topo = cfg.topology();
    std::cout << "seed: " << cfg.seed << "\n";
    std::cout << "router: " << cfg.router << "\n";
    std::cout << "d_model: " << cfg.d_model << " d_ffn: " << cfg.d_ffn()
              << " n_experts: " << cfg.n_experts() << " k: " << cfg.k << "\n";
    std::cout << "flops_per_token: " << flop_count(cfg.k, cfg.d_model, cfg.d_ffn()) << "\n";
    std::cout << "param_count: " << param_count(cfg.n_experts(), cfg.d_model, cfg.d_ffn())
              << "\n";
    std::cout << "param_count_nominal: "
              << param_count_nominal(cfg.n_experts(), cfg.d_model, cfg.d_ffn()) << "\n";
    std::cout << "router_params: " << router_param_count(cfg.router_kind(), topo, cfg.d_model)
              << "\n";
    std::cout << "sparsity_ratio: " << cfg.sparsity_ratio() << "\n";
    return 0;
}

int cmd_gradcheck(const ExperimentConfig& cfg) {
    const GradCheckReport report = grad_check(cfg);
    std::cout << "seed: " << cfg.seed << "\n";
    for (const GradCheckBlock& b : report.blocks)
        std::cout << "block " << b.name << ": max_rel_err=" << format_double(b.max_rel_err)
                  << " checked=" << b.checked << " kink_skipped=" << b.kink_skipped
                  << " boundary_skipped=" << b.boundary_skipped << "\n";
    std::cout << "gradcheck: max_rel_err=" << format_double(report.max_rel_err) << " over "
              << report.n_params << " params (threshold " << format_double(report.threshold)
              << ") kink_skipped=" << report.kink_skipped
              << " boundary_skipped=" << report.boundary_skipped << " -> "
              << (report.passed ? "PASS" : "FAIL") << "\n";
    return report.passed ? 0 : 2;
}

}  // namespace

int cli_main(int argc, char** argv) {
    CLI::App app{"sparse expert routing workbench"};
    app.require_subcommand(1);

    std::string config_path, out_path;
    uint64_t seed = 0;
    bool have_seed = false;
    std::string k_list_text = "1,2,4,8";
    int64_t n_tokens = 100000;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "experiment config file")->required();
        sub->add_option_function<uint64_t>(
            "--seed", [&](uint64_t s) { seed = s; have_seed = true; },
            "override the config seed");
    };

    CLI::App* train = app.add_subcommand("train", "train on the synthetic task, write metrics CSV");
    add_common(train);
    std::string train_out = "metrics.csv";
    train->add_option("--out", train_out, "metrics CSV path");

    CLI::App* route_cmd = app.add_subcommand("route", "trace one routing decision (vector on stdin)");
    add_common(route_cmd);

    CLI::App* sim = app.add_subcommand("simulate-comm", "cross-device traffic per policy and k");
    add_common(sim);
    sim->add_option("--out", out_path, "CSV path (default: stdout)");
    sim->add_option("--k-list", k_list_text, "comma-separated activation counts");
    sim->add_option("--n-tokens", n_tokens, "tokens to route");

    CLI::App* flops = app.add_subcommand("flops", "per-token compute and parameter counts");
    add_common(flops);

    CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient check");
    add_common(gradcheck);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        const uint64_t* seed_override = have_seed ? &seed : nullptr;
        const ExperimentConfig cfg = load_config(config_path, seed_override);
        if (train->parsed()) return cmd_train(cfg, train_out);
        if (route_cmd->parsed()) return cmd_route(cfg);
        if (sim->parsed()) return cmd_simulate_comm(cfg, n_tokens, parse_k_list(k_list_text), out_path);
        if (flops->parsed()) return cmd_flops(cfg);
        if (gradcheck->parsed()) return cmd_gradcheck(cfg);
    } catch (const NumericalError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}

}  // namespace sam
