#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prefopt/dataset.hpp"
#include "prefopt/model.hpp"
#include "prefopt/trainer.hpp"

namespace prefopt {

enum class CurveKind { Nll, Pll, Bnf };

const char* curve_kind_name(CurveKind k);
CurveKind curve_kind_from_name(const std::string& name);

struct CurveSample {
    double pi = 0.0;                   // grid point in (0, 1)
    double derivative_magnitude = 0.0; // |dL/dz_y| at that likelihood
};

// Single-token derivative magnitude as a function of the policy likelihood:
// nll and pll give 1 - pi; bnf gives pi * (1 - pi_ref) / pi_ref below pi_ref
// and 1 - pi above it. Grid points are k / (grid_size + 1), k = 1..grid_size.
std::vector<CurveSample> derivative_curve(CurveKind kind, double pi_ref, int grid_size);

// Per-sequence comparison between policy and reference outputs on the same
// response tokens. Logit shifts are mean absolute elementwise differences of
// the pre-softmax logits over the vocabulary; the raw variant sums over
// positions, the normalized variant averages over them.
struct ShiftReport {
    int length = 0;
    double delta_loglik = 0.0;      // log pi_policy(y) - log pi_ref(y), nats
    double delta_loglik_norm = 0.0; // divided by |y|
    double logit_shift_raw = 0.0;
    double logit_shift_norm = 0.0;
    std::vector<double> per_token_delta;
    std::optional<double> gini_logit_shift; // null when all shifts are zero
};

struct ShiftSummary {
    std::size_t n_sequences = 0;
    double mean_delta_loglik = 0.0;
    double median_delta_loglik = 0.0;
    double mean_delta_loglik_norm = 0.0;
    double median_delta_loglik_norm = 0.0;
    double mean_logit_shift_norm = 0.0;
    double median_logit_shift_norm = 0.0;
    std::vector<double> histogram_edges; // 11 equal-width edges over delta_loglik
    std::vector<std::size_t> histogram_counts;
};

struct ShiftOutput {
    std::vector<ShiftReport> sequences;
    ShiftSummary summary;
};

struct ShiftReportOptions {
    bool use_dataset_responses = false; // default: greedy-decode from the policy
    int max_decode_len = 16;
    int threads = 1;
};

// Argmax decoding from the policy, ties to the lowest token id.
std::vector<int> greedy_decode(const ModelParams& policy, std::span<const int> prompt,
                               int max_len);

ShiftOutput shift_report(const ModelParams& policy, const ModelParams& reference,
                         const Dataset& eval_set, const ShiftReportOptions& opt = {});

// Histogram of `other` over the decile bins of `anchor`: edges are anchor
// deciles, bins are left-closed/right-open with open outer ends, and counts
// are normalized to fractions summing to 1.
std::array<double, 10> decile_bin_map(std::span<const double> anchor_tokens,
                                      std::span<const double> other_tokens);

struct CollapseReport {
    double threshold = -10.0;
    double min_mean_per_token_logp_l = 0.0;
    std::optional<int> first_crossing; // first step strictly below threshold
    bool collapsed = false;
};

// Scans the mean_per_token_logp_l column of a training log; non-finite rows
// (batches without dispreferred examples) are skipped.
CollapseReport collapse_metrics(const std::vector<StepMetrics>& log, double threshold = -10.0);

// Writers. CSV columns are flat per-sequence rows; tokens.csv has one row per
// (sequence, position) carrying the per-token log-likelihood delta.
void write_curves_csv(const std::filesystem::path& path,
                      const std::vector<std::pair<std::string, std::vector<CurveSample>>>& curves);
void write_curves_svg(const std::filesystem::path& path,
                      const std::vector<std::pair<std::string, std::vector<CurveSample>>>& curves);
void write_shift_csv(const std::filesystem::path& path, const ShiftOutput& out);
void write_shift_json(const std::filesystem::path& path, const ShiftOutput& out);
void write_token_deltas_csv(const std::filesystem::path& path, const ShiftOutput& out);
std::vector<double> read_token_deltas_csv(const std::filesystem::path& path);

} // namespace prefopt
