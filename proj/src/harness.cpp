#include "sam/harness.hpp"

#include <algorithm>
#include <cmath>

namespace sam {

// ---------------------------------------------------------------------------
// Cost model
// ---------------------------------------------------------------------------

uint64_t flop_count(int k, int d_model, int d_ffn) {
    if (k < 1 || d_model < 1 || d_ffn < 1)
        throw std::invalid_argument("flop_count: arguments must be positive");
    return 4ull * static_cast<uint64_t>(k) * static_cast<uint64_t>(d_model) *
           static_cast<uint64_t>(d_ffn);
}

uint64_t param_count(int n_expert, int d_model, int d_ffn) {
    if (n_expert < 1 || d_model < 1 || d_ffn < 1)
        throw std::invalid_argument("param_count: arguments must be positive");
    return 2ull * static_cast<uint64_t>(n_expert) * static_cast<uint64_t>(d_model) *
           static_cast<uint64_t>(d_ffn);
}

uint64_t param_count_nominal(int n_expert, int d_model, int d_ffn) {
    return param_count(n_expert, d_model, d_ffn) / 2;
}

uint64_t router_param_count(RouterKind kind, const Topology& topo, int d_model) {
    const uint64_t d = static_cast<uint64_t>(d_model);
    if (kind == RouterKind::SamNonShared)
        return static_cast<uint64_t>(topo.n_groups) * d +
               static_cast<uint64_t>(topo.n_experts()) * d;
    return static_cast<uint64_t>(topo.n_experts()) * d;
}

void require_iso_flop(const std::vector<ExperimentConfig>& configs) {
    if (configs.empty()) return;
    const uint64_t base = flop_count(configs[0].k, configs[0].d_model, configs[0].d_ffn());
    for (const ExperimentConfig& c : configs) {
        const uint64_t f = flop_count(c.k, c.d_model, c.d_ffn());
        if (f != base)
            throw std::invalid_argument(
                "configs are not iso-flop: " + std::to_string(base) + " vs " + std::to_string(f) +
                " flops per token; comparison refused");
    }
}

// ---------------------------------------------------------------------------
// Synthetic task
// ---------------------------------------------------------------------------

MixtureTask::MixtureTask(const ExperimentConfig& cfg, Rng rng)
    : dim_(cfg.d_model), noise_std_(cfg.noise_std) {
    Rng structure = rng.fork(stream::kTaskStructure);
    const double map_scale = 1.0 / std::sqrt(static_cast<double>(dim_));
    centers_.reserve(cfg.n_clusters);
    maps_.reserve(cfg.n_clusters);
    for (int c = 0; c < cfg.n_clusters; ++c) {
        Vector mu = gaussian_vector(structure, dim_);
        for (double& x : mu) x *= cfg.center_scale;
        centers_.push_back(std::move(mu));
        Matrix w(dim_, dim_);
        for (double& x : w.data) x = structure.next_gaussian() * map_scale;
        maps_.push_back(std::move(w));
    }
}

TaskBatch MixtureTask::sample(int batch, Rng& rng) const {
    TaskBatch out;
    out.inputs.reserve(batch);
    out.targets.reserve(batch);
    out.cluster_ids.reserve(batch);
    for (int b = 0; b < batch; ++b) {
        const int c = static_cast<int>(rng.next_u64() % centers_.size());
        Vector x = gaussian_vector(rng, dim_);
        for (int i = 0; i < dim_; ++i) x[i] += centers_[c][i];
        Vector y = matvec(maps_[c], x);
        if (noise_std_ > 0.0)
            for (int i = 0; i < dim_; ++i) y[i] += noise_std_ * rng.next_gaussian();
        out.inputs.push_back(std::move(x));
        out.targets.push_back(std::move(y));
        out.cluster_ids.push_back(c);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Model construction and optimizer
// ---------------------------------------------------------------------------

namespace {

void fill_gaussian(Matrix& m, Rng& rng, double scale) {
    for (double& x : m.data) x = rng.next_gaussian() * scale;
}

}  // namespace

RouterParams make_router_params(RouterKind kind, const Topology& topo, int d_model,
                                double noise_scale, Rng rng) {
    RouterParams rp;
    rp.kind = kind;
    const double scale = 1.0 / std::sqrt(static_cast<double>(d_model));
    if (kind == RouterKind::SamNonShared) {
        rp.w_group = Matrix(topo.n_groups, d_model);
        fill_gaussian(rp.w_group, rng, scale);
        rp.w_mixture.resize(topo.n_groups);
        for (Matrix& m : rp.w_mixture) {
            m = Matrix(topo.experts_per_group, d_model);
            fill_gaussian(m, rng, scale);
        }
    } else {
        rp.w_global = Matrix(topo.n_experts(), d_model);
        fill_gaussian(rp.w_global, rng, scale);
    }
    rp.noise_scale = kind == RouterKind::MoeTopK ? noise_scale : 0.0;
    rp.validate(topo, d_model);
    return rp;
}

SamLayer make_layer(const ExperimentConfig& cfg, Rng rng) {
    cfg.validate();
    SamLayer layer;
    layer.topo = cfg.topology();
    layer.k = cfg.k;
    layer.d_model = cfg.d_model;
    layer.d_ffn = cfg.d_ffn();
    Rng init = rng.fork(stream::kModelInit);
    layer.router = make_router_params(cfg.router_kind(), layer.topo, cfg.d_model,
                                      cfg.noise_scale, init.fork(0));
    Rng experts_rng = init.fork(1);
    const double in_scale = std::sqrt(2.0 / cfg.d_model);
    const double out_scale = std::sqrt(1.0 / layer.d_ffn);
    layer.experts.resize(layer.topo.n_experts());
    for (ExpertParams& e : layer.experts) {
        e.w_in = Matrix(layer.d_ffn, cfg.d_model);
        e.w_out = Matrix(cfg.d_model, layer.d_ffn);
        fill_gaussian(e.w_in, experts_rng, in_scale);
        fill_gaussian(e.w_out, experts_rng, out_scale);
    }
    layer.validate();
    return layer;
}

AdamState make_adam_state(SamLayer& layer) {
    AdamState st;
    for (const Matrix* p : collect_params(layer)) {
        st.m.emplace_back(p->rows, p->cols);
        st.v.emplace_back(p->rows, p->cols);
    }
    return st;
}

void adam_step(SamLayer& layer, AdamState& st, const LayerGrads& grads, double lr, double beta1,
               double beta2, double eps) {
    auto params = collect_params(layer);
    auto g = collect_grads(grads, layer.router.kind);
    if (params.size() != g.size() || params.size() != st.m.size())
        throw std::invalid_argument("adam_step: state/gradient mismatch");
    st.t += 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(st.t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(st.t));
    for (size_t i = 0; i < params.size(); ++i) {
        double* p = params[i]->data.data();
        const double* gr = g[i]->data.data();
        double* m = st.m[i].data.data();
        double* v = st.v[i].data.data();
        const size_t n = params[i]->data.size();
        for (size_t j = 0; j < n; ++j) {
            m[j] = beta1 * m[j] + (1.0 - beta1) * gr[j];
            v[j] = beta2 * v[j] + (1.0 - beta2) * gr[j] * gr[j];
            p[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps);
        }
    }
}

// ---------------------------------------------------------------------------
// Batch evaluation
// ---------------------------------------------------------------------------

BatchEval evaluate_batch(const SamLayer& layer, const TaskBatch& batch, const LossWeights& lw,
                         double capacity_factor, const std::vector<RoutingDecision>& decisions,
                         bool compute_grads) {
    const Topology& topo = layer.topo;
    const int B = static_cast<int>(batch.inputs.size());
    const int d = layer.d_model;
    const int n = topo.n_experts();
    const int G = topo.n_groups;
    const int epg = topo.experts_per_group;
    const RouterKind kind = layer.router.kind;
    if (static_cast<int>(decisions.size()) != B)
        throw std::invalid_argument("evaluate_batch: decision count mismatch");

    BatchEval ev;
    ev.plan = plan_dispatch(decisions, topo, capacity_factor);
    ev.stats = load_stats(ev.plan, topo);

    for (int b = 0; b < B; ++b) {
        const RoutingDecision& dec = decisions[b];
        std::vector<uint8_t> active(dec.selected_experts.size(), 1);
        for (int dropped : ev.plan.overflow[b])
            for (size_t j = 0; j < dec.selected_experts.size(); ++j)
                if (dec.selected_experts[j] == dropped) active[j] = 0;
        ev.caches.push_back(layer_forward_with(layer, batch.inputs[b], dec, &active));
    }

    // Task loss: mean squared error over batch and output dims.
    const double inv = 1.0 / (static_cast<double>(B) * d);
    for (int b = 0; b < B; ++b)
        for (int i = 0; i < d; ++i) {
            const double r = ev.caches[b].y[i] - batch.targets[b][i];
            ev.losses.task += r * r;
        }
    ev.losses.task *= inv;

    // Alignment loss, batch mean.
    if (kind == RouterKind::SamShared) {
        for (int b = 0; b < B; ++b)
            ev.losses.align +=
                align_hinge_loss(decisions[b].expert_scores, decisions[b], topo);
        ev.losses.align /= B;
    } else if (kind == RouterKind::SamNonShared) {
        for (int b = 0; b < B; ++b) {
            const RoutingDecision& dec = decisions[b];
            if (lw.align_raw_denominator) {
                // exp(logit - max): unnormalized scores with the same ratios,
                // so the explicit denominator actually carries weight here.
                const double mx =
                    *std::max_element(dec.group_logits.begin(), dec.group_logits.end());
                Vector raw(G);
                for (int w = 0; w < G; ++w) raw[w] = std::exp(dec.group_logits[w] - mx);
                ev.losses.align += align_group_nll(raw, dec.selected_group);
            } else {
                ev.losses.align += align_group_nll(dec.group_scores, dec.selected_group);
            }
        }
        ev.losses.align /= B;
    }

    // Balance losses. Group-level: dispatch fraction per group vs mean group
    // probability mass. Expert-level: flat and shared routers balance over
    // the whole expert bank; the non-shared router balances each group's
    // experts over the tokens that actually reached that group.
    const Vector& f_expert = ev.stats.expert_fractions;
    const Vector& f_group = ev.stats.group_fractions;
    Vector p_group(G, 0.0);
    if (kind == RouterKind::SamNonShared) {
        for (int b = 0; b < B; ++b)
            for (int w = 0; w < G; ++w) p_group[w] += decisions[b].group_scores[w] / B;
    } else {
        for (int b = 0; b < B; ++b)
            for (int i = 0; i < n; ++i)
                p_group[topo.group_of(i)] += decisions[b].expert_scores[i] / B;
    }
    ev.losses.balance_group = load_balance_loss(f_group, p_group);

    std::vector<Vector> f_local(G);  // sam_nonshared: in-group dispatch fractions
    if (kind == RouterKind::SamNonShared) {
        std::vector<double> group_tokens(G, 0.0);
        std::vector<Vector> p_local(G, Vector(epg, 0.0));
        for (int b = 0; b < B; ++b) {
            const int w = decisions[b].selected_group;
            group_tokens[w] += 1.0;
            for (int i = 0; i < epg; ++i) p_local[w][i] += decisions[b].expert_scores[i];
        }
        for (int w = 0; w < G; ++w) {
            if (group_tokens[w] == 0.0) continue;
            int64_t in_group = 0;
            for (int i = 0; i < epg; ++i) in_group += ev.plan.expert_counts[w * epg + i];
            if (in_group == 0) continue;
            f_local[w].resize(epg);
            for (int i = 0; i < epg; ++i)
                f_local[w][i] = static_cast<double>(ev.plan.expert_counts[w * epg + i]) /
                                static_cast<double>(in_group);
            for (int i = 0; i < epg; ++i) p_local[w][i] /= group_tokens[w];
            ev.losses.balance_expert +=
                (group_tokens[w] / B) * load_balance_loss(f_local[w], p_local[w]);
        }
    } else {
        Vector p_expert(n, 0.0);
        for (int b = 0; b < B; ++b)
            for (int i = 0; i < n; ++i) p_expert[i] += decisions[b].expert_scores[i] / B;
        ev.losses.balance_expert = load_balance_loss(f_expert, p_expert);
    }

    ev.total = total_loss(ev.losses, lw);

    if (compute_grads) {
        ev.grads = make_layer_grads(layer);
        for (int b = 0; b < B; ++b) {
            const RoutingDecision& dec = decisions[b];
            Vector dy(d);
            for (int i = 0; i < d; ++i)
                dy[i] = 2.0 * (ev.caches[b].y[i] - batch.targets[b][i]) * inv;

            ScoreGrads sg;
            switch (kind) {
                case RouterKind::Switch:
                case RouterKind::MoeTopK: {
                    sg.d_expert_scores.assign(n, 0.0);
                    for (int i = 0; i < n; ++i)
                        sg.d_expert_scores[i] = lw.alpha_balance *
                                                (n * f_expert[i] + G * f_group[topo.group_of(i)]) /
                                                B;
                    break;
                }
                case RouterKind::SamShared: {
                    sg.d_expert_scores.assign(n, 0.0);
                    for (int i = 0; i < n; ++i)
                        sg.d_expert_scores[i] = lw.alpha_balance *
                                                (n * f_expert[i] + G * f_group[topo.group_of(i)]) /
                                                B;
                    const Vector ha = align_hinge_backward(dec.expert_scores, dec, topo);
                    for (int i = 0; i < n; ++i)
                        sg.d_expert_scores[i] += lw.alpha_align * ha[i] / B;
                    break;
                }
                case RouterKind::SamNonShared: {
                    sg.d_group_scores.assign(G, 0.0);
                    for (int w = 0; w < G; ++w)
                        sg.d_group_scores[w] = lw.alpha_balance * G * f_group[w] / B;
                    const Vector na =
                        align_group_nll_backward(dec.group_scores, dec.selected_group);
                    for (int w = 0; w < G; ++w)
                        sg.d_group_scores[w] += lw.alpha_align * na[w] / B;
                    sg.d_expert_scores.assign(epg, 0.0);
                    const int w = dec.selected_group;
                    if (!f_local[w].empty())
                        for (int i = 0; i < epg; ++i)
                            sg.d_expert_scores[i] = lw.alpha_balance * epg * f_local[w][i] / B;
                    break;
                }
            }
            layer_backward(layer, ev.caches[b], dy, sg, ev.grads);
        }
        ev.has_grads = true;
    }
    return ev;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace {

ExperimentConfig validated(ExperimentConfig cfg) {
    cfg.validate();
    return cfg;
}

}  // namespace

Trainer::Trainer(const ExperimentConfig& cfg)
    : cfg_(validated(cfg)), task_(cfg_, Rng(cfg_.seed)), layer_(make_layer(cfg_, Rng(cfg_.seed))),
      adam_(make_adam_state(layer_)) {
    comm_.d_model = cfg_.d_model;
}

StepMetrics Trainer::step() {
    const int B = cfg_.batch_size;
    Rng step_root = Rng(cfg_.seed).fork(stream::kTrainLoop).fork(step_count_);
    Rng sample_rng = step_root.fork(0);
    const TaskBatch batch = task_.sample(B, sample_rng);

    std::vector<RoutingDecision> decisions;
    decisions.reserve(B);
    for (int b = 0; b < B; ++b) {
        Rng token_rng = step_root.fork(1 + b);
        decisions.push_back(
            route(layer_.router, layer_.topo, batch.inputs[b], layer_.k, token_rng, true));
    }

    const LossWeights lw{cfg_.alpha_balance, cfg_.alpha_align, cfg_.align_nll_raw_denominator};
    BatchEval ev = evaluate_batch(layer_, batch, lw, cfg_.capacity_factor, decisions, true);
    if (!std::isfinite(ev.total))
        throw NumericalError("training diverged at step " + std::to_string(step_count_));
    adam_step(layer_, adam_, ev.grads, cfg_.lr, cfg_.adam_beta1, cfg_.adam_beta2, cfg_.adam_eps);

    const CommReport comm = comm_cost(decisions, layer_.topo, comm_, layer_.router.kind);
    int64_t overflowed = 0;
    for (const auto& of : ev.plan.overflow) overflowed += static_cast<int64_t>(of.size());

    StepMetrics m;
    m.step = step_count_;
    m.task_loss = ev.losses.task;
    m.align_loss = ev.losses.align;
    m.balance_group_loss = ev.losses.balance_group;
    m.balance_expert_loss = ev.losses.balance_expert;
    m.total_loss = ev.total;
    m.comm_messages = comm.cross_device_messages;
    m.comm_bytes = comm.cross_device_bytes;
    m.dropped_fraction =
        static_cast<double>(overflowed) / (static_cast<double>(layer_.k) * B);
    m.expert_entropy = ev.stats.entropy;
    m.flops_per_token = flop_count(layer_.k, layer_.d_model, layer_.d_ffn);
    m.sparsity_ratio = cfg_.sparsity_ratio();
    ++step_count_;
    return m;
}

TrainResult run_training(const ExperimentConfig& cfg) {
    Trainer trainer(cfg);
    TrainResult res;
    res.metrics.reserve(cfg.steps);
    for (int s = 0; s < cfg.steps; ++s) res.metrics.push_back(trainer.step());
    if (!res.metrics.empty()) {
        const int window = std::max(1, cfg.steps / 20);
        double acc = 0.0;
        for (int s = cfg.steps - window; s < cfg.steps; ++s) acc += res.metrics[s].task_loss;
        res.final_task_loss = acc / window;
    }
    return res;
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

namespace {

// Bit pattern of every decision-relevant sign in the batch: relu
// preactivations of active slots plus, for the shared router, which outside
// experts sit above the hinge threshold. If the two central-difference
// evaluations disagree here, the loss is not differentiable between them.
std::vector<uint8_t> kink_signature(const BatchEval& ev, const SamLayer& layer) {
    std::vector<uint8_t> sig;
    for (const ForwardCache& c : ev.caches) {
        for (size_t j = 0; j < c.preact.size(); ++j) {
            if (!c.active[j]) continue;
            for (double u : c.preact[j]) sig.push_back(u > 0.0 ? 1 : 0);
        }
        if (layer.router.kind == RouterKind::SamShared) {
            const RoutingDecision& d = c.decision;
            const double threshold = d.expert_scores[d.selected_experts.back()];
            const int lo = layer.topo.first_expert(d.selected_group);
            const int hi = lo + layer.topo.experts_per_group;
            for (int e = 0; e < static_cast<int>(d.expert_scores.size()); ++e) {
                if (e >= lo && e < hi) continue;
                sig.push_back(d.expert_scores[e] > threshold ? 1 : 0);
            }
        }
    }
    return sig;
}

}  // namespace

GradCheckReport grad_check(SamLayer& layer, const TaskBatch& batch, const LossWeights& lw,
                           double capacity_factor, Rng noise_rng, const GradCheckOptions& opt) {
    layer.validate();
    const int B = static_cast<int>(batch.inputs.size());

    GradCheckReport report;
    report.threshold = opt.threshold;
    for (const Matrix* p : collect_params(layer))
        report.n_params += static_cast<int64_t>(p->data.size());
    if (report.n_params > 10000)
        throw std::invalid_argument("grad_check: model has " + std::to_string(report.n_params) +
                                    " parameters (limit 10000); shrink d_model/d_ffn_base or the "
                                    "expert count");

    std::vector<RoutingDecision> base(B);
    for (int b = 0; b < B; ++b) {
        Rng token_rng = noise_rng.fork(1 + b);
        base[b] = route(layer.router, layer.topo, batch.inputs[b], layer.k, token_rng, true);
    }

    const double eps = opt.eps;
    BatchEval base_ev = evaluate_batch(layer, batch, lw, capacity_factor, base, true);
    if (opt.corrupt != 0.0 && !base_ev.grads.experts.empty())
        base_ev.grads.experts.back().w_out.data[0] += opt.corrupt;

    auto params = collect_params(layer);
    auto grads = collect_grads(base_ev.grads, layer.router.kind);
    const auto names = param_block_names(layer);

    auto frozen_eval = [&](double* total, std::vector<uint8_t>* sig) {
        std::vector<RoutingDecision> frozen(B);
        for (int b = 0; b < B; ++b)
            frozen[b] = reroute_frozen(layer.router, layer.topo, batch.inputs[b], base[b]);
        const BatchEval ev = evaluate_batch(layer, batch, lw, capacity_factor, frozen, false);
        *total = ev.total;
        *sig = kink_signature(ev, layer);
    };
    auto selection_stable = [&]() {
        for (int b = 0; b < B; ++b) {
            RoutingDecision fresh;
            if (layer.router.kind == RouterKind::MoeTopK)
                fresh = route_moe_topk_with_noise(layer.router, batch.inputs[b], layer.k,
                                                  base[b].noise);
            else {
                Rng dummy(0);
                fresh = route(layer.router, layer.topo, batch.inputs[b], layer.k, dummy, false);
            }
            if (!same_selection(fresh, base[b])) return false;
        }
        return true;
    };

    for (size_t blk = 0; blk < params.size(); ++blk) {
        GradCheckBlock block;
        block.name = names[blk];
        for (size_t e = 0; e < params[blk]->data.size(); ++e) {
            double& theta = params[blk]->data[e];
            const double saved = theta;

            double loss_plus = 0.0, loss_minus = 0.0;
            std::vector<uint8_t> sig_plus, sig_minus;
            theta = saved + eps;
            frozen_eval(&loss_plus, &sig_plus);
            const bool stable_plus = selection_stable();
            theta = saved - eps;
            frozen_eval(&loss_minus, &sig_minus);
            const bool stable_minus = selection_stable();
            theta = saved;

            if (!stable_plus || !stable_minus) {
                ++block.boundary_skipped;
                continue;
            }
            if (sig_plus != sig_minus) {
                ++block.kink_skipped;
                continue;
            }
            const double numeric = (loss_plus - loss_minus) / (2.0 * eps);
            const double analytic = grads[blk]->data[e];
            const double rel = std::abs(numeric - analytic) /
                               std::max({std::abs(numeric), std::abs(analytic), 1e-3});
            block.max_rel_err = std::max(block.max_rel_err, rel);
            ++block.checked;
        }
        report.max_rel_err = std::max(report.max_rel_err, block.max_rel_err);
        report.kink_skipped += block.kink_skipped;
        report.boundary_skipped += block.boundary_skipped;
        report.blocks.push_back(std::move(block));
    }
    report.passed = report.max_rel_err < opt.threshold;
    return report;
}

GradCheckReport grad_check(const ExperimentConfig& cfg, double eps, double threshold,
                           double corrupt) {
    cfg.validate();
    SamLayer layer = make_layer(cfg, Rng(cfg.seed));
    const MixtureTask task(cfg, Rng(cfg.seed));

    // Mirror the first training step's streams so the checked point is the
    // one training would actually visit.
    Rng step_root = Rng(cfg.seed).fork(stream::kTrainLoop).fork(0);
    Rng sample_rng = step_root.fork(0);
    const TaskBatch batch = task.sample(std::min(cfg.batch_size, 8), sample_rng);

    const LossWeights lw{cfg.alpha_balance, cfg.alpha_align, cfg.align_nll_raw_denominator};
    GradCheckOptions opt;
    opt.eps = eps;
    opt.threshold = threshold;
    opt.corrupt = corrupt;
    return grad_check(layer, batch, lw, cfg.capacity_factor, step_root, opt);
}

}  // namespace sam
