#include "descore/train/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace descore::train {

uint64_t fnv1a64(std::string_view bytes) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

policy::PolicyConfig RunConfig::policy_config() const {
    policy::PolicyConfig cfg;
    cfg.width = model_width;
    cfg.layers = model_layers;
    cfg.heads = model_heads;
    cfg.context = model_context;
    cfg.n_free = model_n_free;
    cfg.init_std = model_init_std;
    return cfg;
}

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::string fmt_double(double v) {
    std::ostringstream out;
    out.precision(17);
    out << v;
    return out.str();
}

// Uniform field table so parsing, resolution, and canonical printing stay in
// one place.
struct Field {
    const char* key;
    enum Kind { kInt, kDouble, kBool, kString, kSeed } kind;
    void* ptr;
};

std::vector<Field> fields(RunConfig& c) {
    return {
        {"run.seed", Field::kSeed, &c.seed},
        {"run.threads", Field::kInt, &c.threads},
        {"model.width", Field::kInt, &c.model_width},
        {"model.layers", Field::kInt, &c.model_layers},
        {"model.heads", Field::kInt, &c.model_heads},
        {"model.context", Field::kInt, &c.model_context},
        {"model.n_free", Field::kInt, &c.model_n_free},
        {"model.init_std", Field::kDouble, &c.model_init_std},
        {"data.dir", Field::kString, &c.data_dir},
        {"data.n_train", Field::kInt, &c.data.n_train},
        {"data.n_eval", Field::kInt, &c.data.n_eval},
        {"data.n_ood", Field::kInt, &c.data.n_ood},
        {"data.prompt_tokens", Field::kInt, &c.data.prompt_tokens},
        {"data.item_noise", Field::kDouble, &c.data.item_noise},
        {"data.ood_item_noise", Field::kDouble, &c.data.ood_item_noise},
        {"data.cot_noise_train", Field::kDouble, &c.data.cot_noise_train},
        {"data.cot_noise_eval", Field::kDouble, &c.data.cot_noise_eval},
        {"data.cot_noise_ood", Field::kDouble, &c.data.cot_noise_ood},
        {"data.think_len_min", Field::kInt, &c.data.think_len_min},
        {"data.think_len_max", Field::kInt, &c.data.think_len_max},
        {"stage1.lr", Field::kDouble, &c.s1_lr},
        {"stage1.weight_decay", Field::kDouble, &c.s1_weight_decay},
        {"stage1.batch_size", Field::kInt, &c.s1_batch_size},
        {"stage1.epochs", Field::kInt, &c.s1_epochs},
        {"stage1.mask_prob", Field::kDouble, &c.s1_mask_prob},
        {"stage1.use_cot", Field::kBool, &c.s1_use_cot},
        {"stage1.eval_every", Field::kInt, &c.s1_eval_every},
        {"stage1.eval_pairs", Field::kInt, &c.s1_eval_pairs},
        {"stage1.max_steps", Field::kInt, &c.s1_max_steps},
        {"stage1.eval_with_cot", Field::kInt, &c.s1_eval_with_cot},
        {"stage2.lr", Field::kDouble, &c.s2_lr},
        {"stage2.steps", Field::kInt, &c.s2_steps},
        {"stage2.group_size", Field::kInt, &c.s2_group_size},
        {"stage2.rollout_pairs", Field::kInt, &c.s2_rollout_pairs},
        {"stage2.minibatch_pairs", Field::kInt, &c.s2_minibatch_pairs},
        {"stage2.clip_eps", Field::kDouble, &c.s2_clip_eps},
        {"stage2.kl_beta", Field::kDouble, &c.s2_kl_beta},
        {"stage2.bt_alpha", Field::kDouble, &c.s2_bt_alpha},
        {"stage2.len_scale", Field::kDouble, &c.s2_len_scale},
        {"stage2.max_rollout_len", Field::kInt, &c.s2_max_rollout_len},
        {"stage2.temperature", Field::kDouble, &c.s2_temperature},
        {"stage2.snapshot_every", Field::kInt, &c.s2_snapshot_every},
        {"stage2.eval_every", Field::kInt, &c.s2_eval_every},
        {"stage2.eval_pairs", Field::kInt, &c.s2_eval_pairs},
        {"stage2.checkpoint_every", Field::kInt, &c.s2_checkpoint_every},
        {"reward.lambda_fmt", Field::kDouble, &c.weights.fmt},
        {"reward.lambda_qual", Field::kDouble, &c.weights.qual},
        {"reward.lambda_len", Field::kDouble, &c.weights.len},
        {"eval.tau", Field::kDouble, &c.eval_tau},
        {"eval.tau_scale", Field::kDouble, &c.eval_tau_scale},
        {"theory.variance_samples", Field::kInt, &c.theory_variance_samples},
        {"theory.step_var_samples", Field::kInt, &c.theory_step_var_samples},
    };
}

void assign(const Field& f, const std::string& raw) {
    const std::string value = trim(raw);
    try {
        switch (f.kind) {
            case Field::kInt:
                *static_cast<int*>(f.ptr) = std::stoi(value);
                break;
            case Field::kDouble:
                *static_cast<double*>(f.ptr) = std::stod(value);
                break;
            case Field::kBool:
                if (value == "true" || value == "1") {
                    *static_cast<bool*>(f.ptr) = true;
                } else if (value == "false" || value == "0") {
                    *static_cast<bool*>(f.ptr) = false;
                } else {
                    throw std::invalid_argument("bool");
                }
                break;
            case Field::kString:
                *static_cast<std::string*>(f.ptr) = value;
                break;
            case Field::kSeed:
                *static_cast<uint64_t*>(f.ptr) = std::stoull(value);
                break;
        }
    } catch (const std::exception&) {
        throw ConfigError(std::string("config: bad value for key ") + f.key + ": '" + value + "'");
    }
}

std::string print(const Field& f) {
    switch (f.kind) {
        case Field::kInt: return std::to_string(*static_cast<const int*>(f.ptr));
        case Field::kDouble: return fmt_double(*static_cast<const double*>(f.ptr));
        case Field::kBool: return *static_cast<const bool*>(f.ptr) ? "true" : "false";
        case Field::kString: return *static_cast<const std::string*>(f.ptr);
        case Field::kSeed: return std::to_string(*static_cast<const uint64_t*>(f.ptr));
    }
    return "";
}

}  // namespace

std::string RunConfig::resolved_text() const {
    auto& self = const_cast<RunConfig&>(*this);
    std::map<std::string, std::string> sorted;
    for (const Field& f : fields(self)) sorted[f.key] = print(f);
    std::ostringstream out;
    for (const auto& [k, v] : sorted) out << k << " = " << v << "\n";
    return out.str();
}

uint64_t RunConfig::fingerprint() const { return fnv1a64(resolved_text()); }

std::map<std::string, std::string> parse_kv_text(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config: line " + std::to_string(lineno) + " is not 'key = value'");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) {
            throw ConfigError("config: empty key on line " + std::to_string(lineno));
        }
        if (!kv.emplace(key, value).second) {
            throw ConfigError("config: duplicate key " + key);
        }
    }
    return kv;
}

std::map<std::string, std::string> parse_kv_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in.good()) throw IoError("config: cannot read " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_kv_text(buf.str());
}

RunConfig resolve_config(const std::map<std::string, std::string>& kv, bool require_seed,
                         const std::optional<uint64_t>& seed_override) {
    RunConfig cfg;
    auto table = fields(cfg);
    bool seed_given = false;
    for (const auto& [key, value] : kv) {
        bool matched = false;
        for (const Field& f : table) {
            if (key == f.key) {
                assign(f, value);
                matched = true;
                if (f.kind == Field::kSeed) seed_given = true;
                break;
            }
        }
        if (!matched) throw ConfigError("config: unknown key " + key);
    }
    if (seed_override) {
        cfg.seed = *seed_override;
        seed_given = true;
    }
    if (require_seed && !seed_given) {
        throw ConfigError("config: missing required key run.seed");
    }
    if (cfg.threads < 1) throw ConfigError("config: run.threads must be >= 1");
    cfg.policy_config().validate();
    cfg.data.validate();
    cfg.weights.validate();
    if (cfg.s1_mask_prob < 0.0 || cfg.s1_mask_prob > 1.0) {
        throw ConfigError("config: stage1.mask_prob must be in [0,1]");
    }
    if (cfg.eval_tau < 0.0) throw ConfigError("config: eval.tau must be >= 0");
    if (cfg.eval_tau_scale <= 0.0) throw ConfigError("config: eval.tau_scale must be > 0");
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path, bool require_seed,
                      const std::optional<uint64_t>& seed_override) {
    return resolve_config(parse_kv_file(path), require_seed, seed_override);
}

}  // namespace descore::train
