#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "prefopt/dataset.hpp"
#include "prefopt/losses.hpp"
#include "prefopt/model.hpp"

namespace prefopt {

enum class Precision { Double, Single };

const char* precision_name(Precision p);
Precision precision_from_name(const std::string& name);

struct TrainConfig {
    Method method = Method::Bnf;
    LossHyperparams hp;
    double lr_peak = 1e-2;
    double warmup_frac = 0.1;
    int steps = 500;
    int batch_size = 64;
    double weight_decay = 0.0;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;
    Precision precision = Precision::Double;
    double clip_norm = 0.0; // 0 disables global-norm clipping
    int threads = 1;
};

void validate_train_config(const TrainConfig& cfg);

// Linear ramp to lr_peak over the first ceil(warmup_frac * steps) steps
// (lr(step) = lr_peak * (step+1) / warmup_steps), then cosine decay
// lr_peak * 0.5 * (1 + cos(pi * progress)) reaching 0 at step == steps.
double lr_schedule(int step, const TrainConfig& cfg);

struct OptimizerState {
    ModelParams first_moment;
    ModelParams second_moment;
    long step_count = 0;
};

OptimizerState make_optimizer_state(const ModelParams& params);

// Bias-corrected Adam update with decoupled weight decay applied
// independently of the gradient term.
void adamw_step(ModelParams& params, const ModelParams& grads, OptimizerState& state, double lr,
                const TrainConfig& cfg);

struct StepMetrics {
    int step = 0;
    double loss = 0.0;
    double lr = 0.0;
    double mean_logp_w = 0.0;
    double mean_logp_l = 0.0;
    double mean_per_token_logp_l = 0.0;
};

struct TrainResult {
    ModelParams params;
    std::vector<StepMetrics> log;
};

// Deterministic training loop: frozen reference copy of init, seeded epoch
// shuffling without replacement, AdamW with the cosine schedule, one metrics
// row per step. Pairwise methods reject datasets containing singletons.
TrainResult train_run(const TrainConfig& cfg, const ModelParams& init, const Dataset& data);

// CSV log with columns step,loss,lr,mean_logp_w,mean_logp_l,mean_per_token_logp_l.
void write_metrics_csv(const std::filesystem::path& path, const std::vector<StepMetrics>& log);
std::vector<StepMetrics> read_metrics_csv(const std::filesystem::path& path);

} // namespace prefopt
