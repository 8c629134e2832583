#include "prefopt/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>

#include <CLI11.hpp>
#include <json.hpp>

#include "prefopt/analysis.hpp"
#include "prefopt/dataset.hpp"
#include "prefopt/gradcheck.hpp"
#include "prefopt/model.hpp"
#include "prefopt/trainer.hpp"

namespace prefopt {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct CommonFlags {
    std::string config_path;
    std::string out_dir = ".";
    std::optional<std::uint64_t> seed_flag;
    int threads = 1;
};

void reject_unknown_keys(const json& obj, const std::set<std::string>& allowed,
                         const std::string& ctx) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (!allowed.contains(it.key())) {
            throw std::runtime_error("config: unknown field '" + it.key() + "' in " + ctx);
        }
    }
}

template <typename T>
T get_field(const json& obj, const char* key) {
    if (!obj.contains(key)) {
        throw std::runtime_error("config: missing field '" + std::string(key) + "'");
    }
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw std::runtime_error("config: field '" + std::string(key) + "' has the wrong type");
    }
}

template <typename T>
T get_field_or(const json& obj, const char* key, T def) {
    if (!obj.contains(key)) {
        return def;
    }
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw std::runtime_error("config: field '" + std::string(key) + "' has the wrong type");
    }
}

json load_config(const std::string& path, const std::string& expected_command) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open config " + path);
    }
    json cfg;
    try {
        in >> cfg;
    } catch (const json::parse_error& e) {
        throw std::runtime_error("config " + path + ": " + e.what());
    }
    if (!cfg.is_object()) {
        throw std::runtime_error("config " + path + ": top level must be an object");
    }
    const std::string cmd = get_field<std::string>(cfg, "command");
    if (cmd != expected_command) {
        throw std::runtime_error("config names command '" + cmd + "' but '" + expected_command +
                                 "' was invoked");
    }
    return cfg;
}

// Seed precedence: --seed flag > PREFOPT_SEED env > config value.
std::uint64_t resolve_seed(std::uint64_t config_seed, const CommonFlags& flags) {
    if (flags.seed_flag.has_value()) {
        return *flags.seed_flag;
    }
    if (const char* env = std::getenv("PREFOPT_SEED")) {
        char* end = nullptr;
        const unsigned long long v = std::strtoull(env, &end, 10);
        if (end == env || *end != '\0') {
            throw std::runtime_error("PREFOPT_SEED is not an unsigned integer");
        }
        return static_cast<std::uint64_t>(v);
    }
    return config_seed;
}

fs::path prepare_out_dir(const CommonFlags& flags) {
    fs::path out(flags.out_dir);
    fs::create_directories(out);
    return out;
}

void write_resolved_config(const fs::path& out_dir, const json& resolved) {
    std::ofstream f(out_dir / "config.json");
    if (!f) {
        throw std::runtime_error("cannot write " + (out_dir / "config.json").string());
    }
    f << resolved.dump(2) << "\n";
}

std::string abs_path(const std::string& p) {
    return fs::absolute(fs::path(p)).lexically_normal().string();
}

// ---------------------------------------------------------------- gen-data

int cmd_gen_data(const CommonFlags& flags) {
    if (flags.config_path.empty()) {
        throw std::runtime_error("gen-data requires --config");
    }
    const json cfg = load_config(flags.config_path, "gen-data");
    const std::string generator = get_field<std::string>(cfg, "generator");

    std::set<std::string> allowed = {"command",   "generator",     "seed",
                                     "n_pairs",   "vocab_size",    "resp_len",
                                     "pairing_ratio"};
    if (generator == "pairwise") {
        allowed.insert("prompt_len");
        allowed.insert("teacher_sharpness");
    } else if (generator == "near-duplicate") {
        allowed.insert("edit_tokens");
    } else {
        throw std::runtime_error("config: generator must be 'pairwise' or 'near-duplicate'");
    }
    reject_unknown_keys(cfg, allowed, "gen-data");

    const std::uint64_t seed = resolve_seed(get_field_or<std::uint64_t>(cfg, "seed", 0), flags);
    const double pairing_ratio = get_field_or<double>(cfg, "pairing_ratio", 1.0);

    Rng rng(seed);
    Dataset d;
    json resolved;
    resolved["command"] = "gen-data";
    resolved["generator"] = generator;
    resolved["seed"] = seed;
    resolved["pairing_ratio"] = pairing_ratio;
    if (generator == "pairwise") {
        PairwiseGenConfig gen;
        gen.n_pairs = get_field<int>(cfg, "n_pairs");
        gen.vocab_size = get_field<int>(cfg, "vocab_size");
        gen.prompt_len = get_field_or<int>(cfg, "prompt_len", 8);
        gen.resp_len = get_field_or<int>(cfg, "resp_len", 16);
        gen.teacher_sharpness = get_field_or<double>(cfg, "teacher_sharpness", 2.0);
        d = gen_pairwise_dataset(rng, gen);
        resolved["n_pairs"] = gen.n_pairs;
        resolved["vocab_size"] = gen.vocab_size;
        resolved["prompt_len"] = gen.prompt_len;
        resolved["resp_len"] = gen.resp_len;
        resolved["teacher_sharpness"] = gen.teacher_sharpness;
    } else {
        NearDuplicateGenConfig gen;
        gen.n_pairs = get_field<int>(cfg, "n_pairs");
        gen.vocab_size = get_field<int>(cfg, "vocab_size");
        gen.resp_len = get_field_or<int>(cfg, "resp_len", 16);
        gen.edit_tokens = get_field_or<int>(cfg, "edit_tokens", 1);
        d = gen_near_duplicate_pairs(rng, gen);
        resolved["n_pairs"] = gen.n_pairs;
        resolved["vocab_size"] = gen.vocab_size;
        resolved["resp_len"] = gen.resp_len;
        resolved["edit_tokens"] = gen.edit_tokens;
    }
    if (pairing_ratio < 1.0) {
        d = apply_pairing_mask(rng, d, pairing_ratio);
    }

    const fs::path out = prepare_out_dir(flags);
    write_dataset(out / "dataset.jsonl", d);
    write_resolved_config(out, resolved);
    std::cout << "gen-data: " << d.examples.size() << " examples (vocab " << d.vocab_size
              << ", pairing_ratio " << d.pairing_ratio << ") -> "
              << (out / "dataset.jsonl").string() << "\n";
    return 0;
}

// ---------------------------------------------------------------- gradcheck

int cmd_gradcheck(const CommonFlags& flags) {
    GradcheckConfig gc;
    if (!flags.config_path.empty()) {
        const json cfg = load_config(flags.config_path, "gradcheck");
        reject_unknown_keys(cfg, {"command", "seed", "instances", "h", "tolerance"}, "gradcheck");
        gc.seed = get_field_or<std::uint64_t>(cfg, "seed", gc.seed);
        gc.instances = get_field_or<int>(cfg, "instances", gc.instances);
        gc.h = get_field_or<double>(cfg, "h", gc.h);
        gc.tolerance = get_field_or<double>(cfg, "tolerance", gc.tolerance);
    }
    gc.seed = resolve_seed(gc.seed, flags);

    const std::vector<GradcheckEntry> results = run_gradcheck_suite(gc);
    bool all_pass = true;
    json report;
    report["tolerance"] = gc.tolerance;
    report["h"] = gc.h;
    report["instances"] = gc.instances;
    report["seed"] = gc.seed;
    json losses = json::object();
    for (const GradcheckEntry& e : results) {
        std::printf("gradcheck: %-8s max_rel_err=%.3e %s\n", method_name(e.method), e.max_rel_err,
                    e.pass ? "PASS" : "FAIL");
        losses[method_name(e.method)] = e.max_rel_err;
        all_pass = all_pass && e.pass;
    }
    report["max_rel_err"] = std::move(losses);
    report["pass"] = all_pass;

    const fs::path out = prepare_out_dir(flags);
    {
        std::ofstream f(out / "gradcheck.json");
        f << report.dump(2) << "\n";
    }
    json resolved;
    resolved["command"] = "gradcheck";
    resolved["seed"] = gc.seed;
    resolved["instances"] = gc.instances;
    resolved["h"] = gc.h;
    resolved["tolerance"] = gc.tolerance;
    write_resolved_config(out, resolved);
    return all_pass ? 0 : 2;
}

// ---------------------------------------------------------------- train

int cmd_train(const CommonFlags& flags) {
    if (flags.config_path.empty()) {
        throw std::runtime_error("train requires --config");
    }
    const json cfg = load_config(flags.config_path, "train");
    reject_unknown_keys(cfg, {"command", "data", "model", "train"}, "train");

    const std::string data_path = get_field<std::string>(cfg, "data");
    const Dataset data = read_dataset(data_path);

    const json& model_cfg = cfg.at("model");
    reject_unknown_keys(model_cfg,
                        {"arch", "embed_dim", "hidden_dim", "init_scale", "init_seed"},
                        "train.model");
    const Arch arch = arch_from_name(get_field<std::string>(model_cfg, "arch"));
    const int embed_dim = get_field_or<int>(model_cfg, "embed_dim", 16);
    const int hidden_dim = get_field_or<int>(model_cfg, "hidden_dim", 32);
    const double init_scale = get_field_or<double>(model_cfg, "init_scale", 0.1);
    const std::uint64_t init_seed = get_field_or<std::uint64_t>(model_cfg, "init_seed", 1);

    const json& train_cfg = cfg.at("train");
    reject_unknown_keys(train_cfg,
                        {"method", "steps", "batch_size", "lr_peak", "warmup_frac",
                         "weight_decay", "adam_beta1", "adam_beta2", "adam_eps", "seed",
                         "precision", "clip_norm", "beta", "tau", "delta", "gamma"},
                        "train.train");
    TrainConfig tc;
    tc.method = method_from_name(get_field<std::string>(train_cfg, "method"));
    tc.steps = get_field_or<int>(train_cfg, "steps", 500);
    tc.batch_size = get_field_or<int>(train_cfg, "batch_size", 64);
    tc.lr_peak = get_field_or<double>(train_cfg, "lr_peak",
                                      arch == Arch::TabularBigram ? 1e-2 : 3e-3);
    tc.warmup_frac = get_field_or<double>(train_cfg, "warmup_frac", 0.1);
    tc.weight_decay = get_field_or<double>(train_cfg, "weight_decay", 0.0);
    tc.adam_beta1 = get_field_or<double>(train_cfg, "adam_beta1", 0.9);
    tc.adam_beta2 = get_field_or<double>(train_cfg, "adam_beta2", 0.999);
    tc.adam_eps = get_field_or<double>(train_cfg, "adam_eps", 1e-8);
    tc.seed = resolve_seed(get_field_or<std::uint64_t>(train_cfg, "seed", 0), flags);
    tc.precision = precision_from_name(get_field_or<std::string>(train_cfg, "precision", "double"));
    tc.clip_norm = get_field_or<double>(train_cfg, "clip_norm", 0.0);
    tc.hp.beta = get_field_or<double>(train_cfg, "beta", 0.1);
    tc.hp.tau = get_field_or<double>(train_cfg, "tau", 0.5);
    tc.hp.delta = get_field_or<double>(train_cfg, "delta", 1.0);
    tc.hp.gamma = get_field_or<double>(train_cfg, "gamma", 0.0);
    tc.threads = flags.threads;
    validate_train_config(tc);

    Rng init_rng(init_seed);
    const ModelParams init = init_params(init_rng, arch, data.vocab_size, embed_dim, hidden_dim,
                                         init_scale);
    const TrainResult result = train_run(tc, init, data);

    const fs::path out = prepare_out_dir(flags);
    save_checkpoint(out / "policy.json", result.params);
    save_checkpoint(out / "reference.json", init);
    write_metrics_csv(out / "metrics.csv", result.log);

    json resolved;
    resolved["command"] = "train";
    resolved["data"] = abs_path(data_path);
    resolved["model"] = {{"arch", arch_name(arch)},
                         {"embed_dim", embed_dim},
                         {"hidden_dim", hidden_dim},
                         {"init_scale", init_scale},
                         {"init_seed", init_seed}};
    resolved["train"] = {{"method", method_name(tc.method)},
                         {"steps", tc.steps},
                         {"batch_size", tc.batch_size},
                         {"lr_peak", tc.lr_peak},
                         {"warmup_frac", tc.warmup_frac},
                         {"weight_decay", tc.weight_decay},
                         {"adam_beta1", tc.adam_beta1},
                         {"adam_beta2", tc.adam_beta2},
                         {"adam_eps", tc.adam_eps},
                         {"seed", tc.seed},
                         {"precision", precision_name(tc.precision)},
                         {"clip_norm", tc.clip_norm},
                         {"beta", tc.hp.beta},
                         {"tau", tc.hp.tau},
                         {"delta", tc.hp.delta},
                         {"gamma", tc.hp.gamma}};
    write_resolved_config(out, resolved);

    const double final_loss = result.log.empty() ? 0.0 : result.log.back().loss;
    std::cout << "train: method=" << method_name(tc.method) << " steps=" << tc.steps
              << " final_loss=" << final_loss << " -> " << out.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------- curve

int cmd_curve(const CommonFlags& flags) {
    const json cfg = load_config(flags.config_path, "curve");
    reject_unknown_keys(cfg, {"command", "pi_ref", "grid_size", "kinds"}, "curve");
    const double pi_ref = get_field_or<double>(cfg, "pi_ref", 0.5);
    const int grid_size = get_field_or<int>(cfg, "grid_size", 99);
    const std::vector<std::string> kinds =
        get_field_or<std::vector<std::string>>(cfg, "kinds", {"nll", "bnf"});

    std::vector<std::pair<std::string, std::vector<CurveSample>>> curves;
    for (const std::string& kind : kinds) {
        curves.emplace_back(kind, derivative_curve(curve_kind_from_name(kind), pi_ref, grid_size));
    }

    const fs::path out = prepare_out_dir(flags);
    write_curves_csv(out / "curve.csv", curves);
    write_curves_svg(out / "curve.svg", curves);

    json resolved;
    resolved["command"] = "curve";
    resolved["pi_ref"] = pi_ref;
    resolved["grid_size"] = grid_size;
    resolved["kinds"] = kinds;
    write_resolved_config(out, resolved);
    std::cout << "curve: " << kinds.size() << " series on " << grid_size << " grid points -> "
              << (out / "curve.csv").string() << "\n";
    return 0;
}

// ---------------------------------------------------------------- analyze

int cmd_analyze(const CommonFlags& flags) {
    if (flags.config_path.empty()) {
        throw std::runtime_error("analyze requires --config");
    }
    const json cfg = load_config(flags.config_path, "analyze");
    reject_unknown_keys(cfg,
                        {"command", "policy", "reference", "data", "use_dataset_responses",
                         "max_decode_len", "metrics_csv", "collapse_threshold"},
                        "analyze");
    const std::string policy_path = get_field<std::string>(cfg, "policy");
    const std::string reference_path = get_field<std::string>(cfg, "reference");
    const std::string data_path = get_field<std::string>(cfg, "data");

    const ModelParams policy = load_checkpoint(policy_path);
    const ModelParams reference = load_checkpoint(reference_path);
    const Dataset data = read_dataset(data_path);

    ShiftReportOptions opt;
    opt.use_dataset_responses = get_field_or<bool>(cfg, "use_dataset_responses", false);
    opt.max_decode_len = get_field_or<int>(cfg, "max_decode_len", 16);
    opt.threads = flags.threads;
    const ShiftOutput shifts = shift_report(policy, reference, data, opt);

    const fs::path out = prepare_out_dir(flags);
    write_shift_json(out / "shift_report.json", shifts);
    write_shift_csv(out / "shift_report.csv", shifts);
    write_token_deltas_csv(out / "tokens.csv", shifts);

    const double collapse_threshold = get_field_or<double>(cfg, "collapse_threshold", -10.0);
    std::string collapse_note;
    if (cfg.contains("metrics_csv")) {
        const std::string metrics_path = get_field<std::string>(cfg, "metrics_csv");
        const CollapseReport cr = collapse_metrics(read_metrics_csv(metrics_path),
                                                   collapse_threshold);
        json cj;
        cj["threshold"] = cr.threshold;
        cj["min_mean_per_token_logp_l"] = cr.min_mean_per_token_logp_l;
        cj["collapsed"] = cr.collapsed;
        if (cr.first_crossing) {
            cj["first_crossing"] = *cr.first_crossing;
        } else {
            cj["first_crossing"] = nullptr;
        }
        std::ofstream f(out / "collapse.json");
        f << cj.dump(2) << "\n";
        collapse_note = cr.collapsed ? " collapsed=true" : " collapsed=false";
    }

    json resolved;
    resolved["command"] = "analyze";
    resolved["policy"] = abs_path(policy_path);
    resolved["reference"] = abs_path(reference_path);
    resolved["data"] = abs_path(data_path);
    resolved["use_dataset_responses"] = opt.use_dataset_responses;
    resolved["max_decode_len"] = opt.max_decode_len;
    resolved["collapse_threshold"] = collapse_threshold;
    if (cfg.contains("metrics_csv")) {
        resolved["metrics_csv"] = abs_path(get_field<std::string>(cfg, "metrics_csv"));
    }
    write_resolved_config(out, resolved);
    std::cout << "analyze: " << shifts.sequences.size()
              << " sequences, mean_delta_loglik=" << shifts.summary.mean_delta_loglik
              << collapse_note << " -> " << out.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------- bin-map

int cmd_bin_map(const CommonFlags& flags) {
    if (flags.config_path.empty()) {
        throw std::runtime_error("bin-map requires --config");
    }
    const json cfg = load_config(flags.config_path, "bin-map");
    reject_unknown_keys(cfg, {"command", "anchor_tokens", "other_tokens"}, "bin-map");
    const std::string anchor_path = get_field<std::string>(cfg, "anchor_tokens");
    const std::string other_path = get_field<std::string>(cfg, "other_tokens");

    const std::vector<double> anchor = read_token_deltas_csv(anchor_path);
    const std::vector<double> other = read_token_deltas_csv(other_path);
    const std::array<double, 10> fractions = decile_bin_map(anchor, other);

    const fs::path out = prepare_out_dir(flags);
    {
        std::ofstream f(out / "binmap.csv");
        f << "bin,fraction\n";
        for (std::size_t b = 0; b < fractions.size(); ++b) {
            char buf[64];
            std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", b, fractions[b]);
            f << buf;
        }
    }
    {
        json j;
        j["fractions"] = fractions;
        std::ofstream f(out / "binmap.json");
        f << j.dump(2) << "\n";
    }

    json resolved;
    resolved["command"] = "bin-map";
    resolved["anchor_tokens"] = abs_path(anchor_path);
    resolved["other_tokens"] = abs_path(other_path);
    write_resolved_config(out, resolved);
    std::cout << "bin-map: " << other.size() << " tokens binned against " << anchor.size()
              << " anchor tokens -> " << (out / "binmap.csv").string() << "\n";
    return 0;
}

} // namespace

int run_command(const std::vector<std::string>& args) {
    CLI::App app{"prefopt: a desk-scale preference-optimization laboratory"};
    app.require_subcommand(1);

    CommonFlags flags;
    auto add_common = [&](CLI::App* sub, bool config_required) {
        auto* opt = sub->add_option("--config", flags.config_path, "JSON config file");
        if (config_required) {
            opt->required();
        }
        sub->add_option("--out", flags.out_dir, "output directory (default: .)");
        sub->add_option("--seed", flags.seed_flag,
                        "seed override (precedence: flag > PREFOPT_SEED > config)");
        sub->add_option("--threads", flags.threads, "worker threads for batch evaluation")
            ->check(CLI::PositiveNumber);
    };

    add_common(app.add_subcommand("gen-data", "generate a synthetic preference dataset"), true);
    add_common(app.add_subcommand("gradcheck", "check analytic gradients against the oracle"),
               false);
    add_common(app.add_subcommand("train", "train a policy against a frozen reference"), true);
    add_common(app.add_subcommand("curve", "emit derivative-vs-likelihood curves"), true);
    add_common(app.add_subcommand("analyze", "policy-vs-reference shift reports"), true);
    add_common(app.add_subcommand("bin-map", "decile bin map of token-level shifts"), true);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        const std::string name = app.get_subcommands().front()->get_name();
        if (name == "gen-data") {
            return cmd_gen_data(flags);
        }
        if (name == "gradcheck") {
            return cmd_gradcheck(flags);
        }
        if (name == "train") {
            return cmd_train(flags);
        }
        if (name == "curve") {
            return cmd_curve(flags);
        }
        if (name == "analyze") {
            return cmd_analyze(flags);
        }
        if (name == "bin-map") {
            return cmd_bin_map(flags);
        }
        std::cerr << "error: unknown command '" << name << "'\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

} // namespace prefopt
