#include "sam/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace sam {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

int parse_int(const std::string& v) {
    size_t pos = 0;
    const long x = std::stol(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("not an integer: '" + v + "'");
    return static_cast<int>(x);
}

uint64_t parse_u64(const std::string& v) {
    size_t pos = 0;
    const unsigned long long x = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("not an unsigned integer: '" + v + "'");
    return static_cast<uint64_t>(x);
}

double parse_double(const std::string& v) {
    size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("not a number: '" + v + "'");
    return x;
}

bool parse_bool(const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::invalid_argument("not a boolean: '" + v + "'");
}

void set_field(ExperimentConfig& c, const std::string& key, const std::string& val) {
    if (key == "d_model") c.d_model = parse_int(val);
    else if (key == "d_ffn_base") c.d_ffn_base = parse_int(val);
    else if (key == "n_groups") c.n_groups = parse_int(val);
    else if (key == "experts_per_group") c.experts_per_group = parse_int(val);
    else if (key == "k") c.k = parse_int(val);
    else if (key == "router") c.router = val;
    else if (key == "capacity_factor") c.capacity_factor = parse_double(val);
    else if (key == "alpha_balance") c.alpha_balance = parse_double(val);
    else if (key == "alpha_align") c.alpha_align = parse_double(val);
    else if (key == "align_nll_raw_denominator") c.align_nll_raw_denominator = parse_bool(val);
    else if (key == "noise_scale") c.noise_scale = parse_double(val);
    else if (key == "adam_beta1") c.adam_beta1 = parse_double(val);
    else if (key == "adam_beta2") c.adam_beta2 = parse_double(val);
    else if (key == "adam_eps") c.adam_eps = parse_double(val);
    else if (key == "lr") c.lr = parse_double(val);
    else if (key == "batch_size") c.batch_size = parse_int(val);
    else if (key == "steps") c.steps = parse_int(val);
    else if (key == "seed") c.seed = parse_u64(val);
    else if (key == "n_clusters") c.n_clusters = parse_int(val);
    else if (key == "input_dim") c.input_dim = parse_int(val);
    else if (key == "noise_std") c.noise_std = parse_double(val);
    else if (key == "center_scale") c.center_scale = parse_double(val);
    else throw std::invalid_argument("unknown key '" + key + "'");
}

}  // namespace

void ExperimentConfig::validate() const {
    if (d_model < 1) throw std::invalid_argument("d_model must be >= 1");
    if (d_ffn_base < 1) throw std::invalid_argument("d_ffn_base must be >= 1");
    if (n_groups < 1) throw std::invalid_argument("n_groups must be >= 1");
    if (experts_per_group < 1) throw std::invalid_argument("experts_per_group must be >= 1");
    if (k < 1) throw std::invalid_argument("k must be >= 1");
    if (d_ffn_base % k != 0) throw std::invalid_argument("k must divide d_ffn_base");
    const RouterKind kind = router_kind();  // throws on bad name
    if (kind == RouterKind::Switch && k != 1)
        throw std::invalid_argument("switch routing requires k = 1");
    if (is_hierarchical(kind) && k > experts_per_group)
        throw std::invalid_argument("k must be <= experts_per_group for hierarchical routing");
    if (kind == RouterKind::MoeTopK && k > n_experts())
        throw std::invalid_argument("k must be <= n_experts for moe_topk");
    if (capacity_factor <= 0.0) throw std::invalid_argument("capacity_factor must be > 0");
    if (alpha_balance < 0.0 || alpha_align < 0.0)
        throw std::invalid_argument("loss weights must be >= 0");
    if (noise_scale < 0.0) throw std::invalid_argument("noise_scale must be >= 0");
    if (adam_beta1 < 0.0 || adam_beta1 >= 1.0 || adam_beta2 < 0.0 || adam_beta2 >= 1.0)
        throw std::invalid_argument("adam betas must lie in [0, 1)");
    if (adam_eps <= 0.0) throw std::invalid_argument("adam_eps must be > 0");
    if (lr < 0.0) throw std::invalid_argument("lr must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (steps < 0) throw std::invalid_argument("steps must be >= 0");
    if (n_clusters < 1) throw std::invalid_argument("n_clusters must be >= 1");
    if (input_dim != d_model)
        throw std::invalid_argument("input_dim must equal d_model (the toy model has no embedding)");
    if (noise_std < 0.0) throw std::invalid_argument("noise_std must be >= 0");
    if (center_scale < 0.0) throw std::invalid_argument("center_scale must be >= 0");
}

ExperimentConfig parse_config_text(const std::string& text) {
    ExperimentConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(lineno) +
                                        ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        try {
            set_field(cfg, key, val);
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument("config line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open config file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str());
}

std::string format_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

std::string serialize_config(const ExperimentConfig& c) {
    std::ostringstream out;
    out << "d_model = " << c.d_model << "\n";
    out << "d_ffn_base = " << c.d_ffn_base << "\n";
    out << "n_groups = " << c.n_groups << "\n";
    out << "experts_per_group = " << c.experts_per_group << "\n";
    out << "k = " << c.k << "\n";
    out << "router = " << c.router << "\n";
    out << "capacity_factor = " << format_double(c.capacity_factor) << "\n";
    out << "alpha_balance = " << format_double(c.alpha_balance) << "\n";
    out << "alpha_align = " << format_double(c.alpha_align) << "\n";
    out << "align_nll_raw_denominator = " << (c.align_nll_raw_denominator ? "true" : "false")
        << "\n";
    out << "noise_scale = " << format_double(c.noise_scale) << "\n";
    out << "adam_beta1 = " << format_double(c.adam_beta1) << "\n";
    out << "adam_beta2 = " << format_double(c.adam_beta2) << "\n";
    out << "adam_eps = " << format_double(c.adam_eps) << "\n";
    out << "lr = " << format_double(c.lr) << "\n";
    out << "batch_size = " << c.batch_size << "\n";
    out << "steps = " << c.steps << "\n";
    out << "seed = " << c.seed << "\n";
    out << "n_clusters = " << c.n_clusters << "\n";
    out << "input_dim = " << c.input_dim << "\n";
    out << "noise_std = " << format_double(c.noise_std) << "\n";
    out << "center_scale = " << format_double(c.center_scale) << "\n";
    return out.str();
}

}  // namespace sam
