#include "prefopt/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>

#include "prefopt/batch_eval.hpp"

namespace prefopt {

const char* precision_name(Precision p) {
    return p == Precision::Double ? "double" : "single";
}

Precision precision_from_name(const std::string& name) {
    if (name == "double") {
        return Precision::Double;
    }
    if (name == "single") {
        return Precision::Single;
    }
    throw std::invalid_argument("unknown precision '" + name + "'");
}

void validate_train_config(const TrainConfig& cfg) {
    if (cfg.batch_size < 1) {
        throw std::invalid_argument("train config: batch_size must be >= 1");
    }
    if (cfg.steps < 0) {
        throw std::invalid_argument("train config: steps must be >= 0");
    }
    if (!(cfg.lr_peak > 0.0)) {
        throw std::invalid_argument("train config: lr_peak must be > 0");
    }
    if (cfg.warmup_frac < 0.0 || cfg.warmup_frac > 1.0) {
        throw std::invalid_argument("train config: warmup_frac must be in [0, 1]");
    }
    if (cfg.warmup_frac > 0.0 && cfg.steps > 0 && cfg.warmup_frac * cfg.steps < 1.0) {
        throw std::invalid_argument("train config: warmup_frac * steps must be >= 1");
    }
    if (cfg.weight_decay < 0.0) {
        throw std::invalid_argument("train config: weight_decay must be >= 0");
    }
    if (cfg.adam_beta1 < 0.0 || cfg.adam_beta1 >= 1.0 || cfg.adam_beta2 < 0.0 ||
        cfg.adam_beta2 >= 1.0) {
        throw std::invalid_argument("train config: adam betas must be in [0, 1)");
    }
    if (!(cfg.adam_eps > 0.0)) {
        throw std::invalid_argument("train config: adam_eps must be > 0");
    }
    if (cfg.clip_norm < 0.0) {
        throw std::invalid_argument("train config: clip_norm must be >= 0");
    }
    if (cfg.threads < 1) {
        throw std::invalid_argument("train config: threads must be >= 1");
    }
}

double lr_schedule(int step, const TrainConfig& cfg) {
    if (step < 0 || step >= cfg.steps) {
        throw std::domain_error("lr_schedule: step outside [0, steps)");
    }
    const int warmup_steps =
        static_cast<int>(std::ceil(cfg.warmup_frac * static_cast<double>(cfg.steps)));
    if (step < warmup_steps) {
        return cfg.lr_peak * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
    }
    const int decay_steps = cfg.steps - warmup_steps;
    if (decay_steps == 0) {
        return cfg.lr_peak;
    }
    const double progress =
        static_cast<double>(step - warmup_steps) / static_cast<double>(decay_steps);
    return cfg.lr_peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

namespace {

std::vector<TrainItem> gather(const std::vector<TrainItem>& items,
                              std::span<const std::size_t> order, std::size_t begin,
                              std::size_t count) {
    std::vector<TrainItem> batch(count);
    for (std::size_t k = 0; k < count; ++k) {
        batch[k] = items[order[begin + k]];
    }
    return batch;
}

template <typename Real>
struct OptimizerStateT {
    ModelParamsT<Real> first_moment;
    ModelParamsT<Real> second_moment;
    long step_count = 0;
};

template <typename Real>
void adamw_step_impl(ModelParamsT<Real>& params, const ModelParamsT<Real>& grads,
                     OptimizerStateT<Real>& state, Real lr, const TrainConfig& cfg) {
    ++state.step_count;
    const Real beta1 = static_cast<Real>(cfg.adam_beta1);
    const Real beta2 = static_cast<Real>(cfg.adam_beta2);
    const Real eps = static_cast<Real>(cfg.adam_eps);
    const Real wd = static_cast<Real>(cfg.weight_decay);
    const Real bias1 =
        Real(1) - static_cast<Real>(std::pow(cfg.adam_beta1, static_cast<double>(state.step_count)));
    const Real bias2 =
        Real(1) - static_cast<Real>(std::pow(cfg.adam_beta2, static_cast<double>(state.step_count)));

    auto update = [&](std::vector<Real>& p, const std::vector<Real>& g, std::vector<Real>& m,
                      std::vector<Real>& v) {
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = beta1 * m[i] + (Real(1) - beta1) * g[i];
            v[i] = beta2 * v[i] + (Real(1) - beta2) * g[i] * g[i];
            const Real m_hat = m[i] / bias1;
            const Real v_hat = v[i] / bias2;
            p[i] -= lr * wd * p[i];
            p[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
        }
    };
    update(params.bigram, grads.bigram, state.first_moment.bigram, state.second_moment.bigram);
    update(params.embed, grads.embed, state.first_moment.embed, state.second_moment.embed);
    update(params.w1, grads.w1, state.first_moment.w1, state.second_moment.w1);
    update(params.b1, grads.b1, state.first_moment.b1, state.second_moment.b1);
    update(params.w2, grads.w2, state.first_moment.w2, state.second_moment.w2);
    update(params.b2, grads.b2, state.first_moment.b2, state.second_moment.b2);
}

template <typename Real>
bool all_finite(const ModelParamsT<Real>& p) {
    bool ok = true;
    p.for_each_array([&](const std::vector<Real>& v) {
        for (Real x : v) {
            if (!std::isfinite(x)) {
                ok = false;
                return;
            }
        }
    });
    return ok;
}

template <typename Real>
Real global_norm(const ModelParamsT<Real>& p) {
    Real acc = Real(0);
    p.for_each_array([&](const std::vector<Real>& v) {
        for (Real x : v) {
            acc += x * x;
        }
    });
    return std::sqrt(acc);
}

template <typename Real>
TrainResult train_run_impl(const TrainConfig& cfg, const ModelParams& init, const Dataset& data) {
    const std::vector<TrainItem> items = build_train_items(data, cfg.method);
    if (items.empty()) {
        throw std::invalid_argument("train_run: dataset has no usable training items");
    }

    ModelParamsT<Real> params = convert_params<Real>(init);
    const ModelParamsT<Real> reference = params; // frozen for the whole run
    OptimizerStateT<Real> opt{params.zeros_like(), params.zeros_like(), 0};

    Rng shuffle_rng(cfg.seed);
    std::vector<std::size_t> order(items.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::size_t cursor = order.size(); // trigger a shuffle before the first step

    TrainResult result;
    result.log.reserve(static_cast<std::size_t>(cfg.steps));
    for (int step = 0; step < cfg.steps; ++step) {
        if (cursor >= order.size()) {
            shuffle(order, shuffle_rng);
            cursor = 0;
        }
        const std::size_t take =
            std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), order.size() - cursor);
        const std::vector<TrainItem> batch = gather(items, order, cursor, take);
        cursor += take;

        BatchEvalT<Real> be =
            eval_batch(params, reference, data, batch, cfg.method, cfg.hp, cfg.threads);
        if (!std::isfinite(be.loss) || !all_finite(be.grad)) {
            throw std::runtime_error("train_run: training diverged at step " +
                                     std::to_string(step) + ": non-finite loss or gradient");
        }
        if (cfg.clip_norm > 0.0) {
            const Real norm = global_norm(be.grad);
            if (norm > static_cast<Real>(cfg.clip_norm)) {
                be.grad.scale(static_cast<Real>(cfg.clip_norm) / norm);
            }
        }
        const double lr = lr_schedule(step, cfg);
        adamw_step_impl(params, be.grad, opt, static_cast<Real>(lr), cfg);

        StepMetrics m;
        m.step = step;
        m.loss = static_cast<double>(be.loss);
        m.lr = lr;
        m.mean_logp_w = static_cast<double>(be.mean_logp_w);
        m.mean_logp_l = static_cast<double>(be.mean_logp_l);
        m.mean_per_token_logp_l = static_cast<double>(be.mean_per_token_logp_l);
        result.log.push_back(m);
    }
    result.params = convert_params<double>(params);
    return result;
}

} // namespace

std::vector<TrainItem> build_train_items(const Dataset& data, Method method) {
    std::vector<TrainItem> items;
    if (!method_is_pairwise(method)) {
        items.reserve(data.examples.size());
        for (std::size_t i = 0; i < data.examples.size(); ++i) {
            items.push_back({static_cast<int>(i), -1});
        }
        return items;
    }
    std::map<std::int64_t, TrainItem> by_pair;
    std::vector<std::int64_t> pair_order;
    for (std::size_t i = 0; i < data.examples.size(); ++i) {
        const auto& ex = data.examples[i];
        if (!ex.pair_id.has_value()) {
            throw std::invalid_argument(std::string(method_name(method)) +
                                        " requires pairwise data; example " + std::to_string(i) +
                                        " has no pair_id");
        }
        auto [it, inserted] = by_pair.try_emplace(*ex.pair_id);
        if (inserted) {
            pair_order.push_back(*ex.pair_id);
        }
        (ex.label == 1 ? it->second.first : it->second.second) = static_cast<int>(i);
    }
    items.reserve(pair_order.size());
    for (std::int64_t pid : pair_order) {
        const TrainItem& item = by_pair.at(pid);
        if (item.first < 0 || item.second < 0) {
            throw std::invalid_argument("pair " + std::to_string(pid) + " is incomplete");
        }
        items.push_back(item);
    }
    return items;
}

OptimizerState make_optimizer_state(const ModelParams& params) {
    return OptimizerState{params.zeros_like(), params.zeros_like(), 0};
}

void adamw_step(ModelParams& params, const ModelParams& grads, OptimizerState& state, double lr,
                const TrainConfig& cfg) {
    if (!all_finite(grads)) {
        throw std::runtime_error("adamw_step: non-finite gradient at step " +
                                 std::to_string(state.step_count + 1));
    }
    OptimizerStateT<double> st{std::move(state.first_moment), std::move(state.second_moment),
                               state.step_count};
    adamw_step_impl(params, grads, st, lr, cfg);
    state.first_moment = std::move(st.first_moment);
    state.second_moment = std::move(st.second_moment);
    state.step_count = st.step_count;
}

TrainResult train_run(const TrainConfig& cfg, const ModelParams& init, const Dataset& data) {
    validate_train_config(cfg);
    validate_dataset(data);
    if (cfg.steps == 0) {
        return TrainResult{init, {}};
    }
    if (cfg.precision == Precision::Single) {
        return train_run_impl<float>(cfg, init, data);
    }
    return train_run_impl<double>(cfg, init, data);
}

namespace {

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace

void write_metrics_csv(const std::filesystem::path& path, const std::vector<StepMetrics>& log) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("write_metrics_csv: cannot open " + path.string());
    }
    out << "step,loss,lr,mean_logp_w,mean_logp_l,mean_per_token_logp_l\n";
    for (const StepMetrics& m : log) {
        out << m.step << ',' << format_double(m.loss) << ',' << format_double(m.lr) << ','
            << format_double(m.mean_logp_w) << ',' << format_double(m.mean_logp_l) << ','
            << format_double(m.mean_per_token_logp_l) << '\n';
    }
    if (!out) {
        throw std::runtime_error("write_metrics_csv: write failed for " + path.string());
    }
}

std::vector<StepMetrics> read_metrics_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("read_metrics_csv: cannot open " + path.string());
    }
    std::string line;
    if (!std::getline(in, line)) {
        throw std::runtime_error("read_metrics_csv: empty file");
    }
    if (line != "step,loss,lr,mean_logp_w,mean_logp_l,mean_per_token_logp_l") {
        throw std::runtime_error("read_metrics_csv: unexpected header '" + line + "'");
    }
    std::vector<StepMetrics> log;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        std::istringstream ss(line);
        std::string field;
        StepMetrics m;
        auto next = [&]() -> std::string {
            if (!std::getline(ss, field, ',')) {
                throw std::runtime_error("read_metrics_csv: line " + std::to_string(line_no) +
                                         ": too few fields");
            }
            return field;
        };
        m.step = std::stoi(next());
        m.loss = std::strtod(next().c_str(), nullptr);
        m.lr = std::strtod(next().c_str(), nullptr);
        m.mean_logp_w = std::strtod(next().c_str(), nullptr);
        m.mean_logp_l = std::strtod(next().c_str(), nullptr);
        m.mean_per_token_logp_l = std::strtod(next().c_str(), nullptr);
        log.push_back(m);
    }
    return log;
}

} // namespace prefopt
