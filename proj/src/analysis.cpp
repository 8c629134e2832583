#include "prefopt/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <json.hpp>

#include "prefopt/numerics.hpp"

namespace prefopt {

using nlohmann::json;

const char* curve_kind_name(CurveKind k) {
    switch (k) {
    case CurveKind::Nll:
        return "nll";
    case CurveKind::Pll:
        return "pll";
    case CurveKind::Bnf:
        return "bnf";
    }
    throw std::invalid_argument("curve_kind_name: unknown kind");
}

CurveKind curve_kind_from_name(const std::string& name) {
    if (name == "nll") return CurveKind::Nll;
    if (name == "pll") return CurveKind::Pll;
    if (name == "bnf") return CurveKind::Bnf;
    throw std::invalid_argument("unknown curve kind '" + name + "'");
}

std::vector<CurveSample> derivative_curve(CurveKind kind, double pi_ref, int grid_size) {
    if (!(pi_ref > 0.0 && pi_ref < 1.0)) {
        throw std::domain_error("derivative_curve: pi_ref must lie in (0, 1)");
    }
    if (grid_size < 3) {
        throw std::invalid_argument("derivative_curve: grid_size must be >= 3");
    }
    std::vector<CurveSample> out;
    out.reserve(static_cast<std::size_t>(grid_size));
    for (int k = 1; k <= grid_size; ++k) {
        const double pi = static_cast<double>(k) / static_cast<double>(grid_size + 1);
        double mag = 0.0;
        switch (kind) {
        case CurveKind::Nll:
        case CurveKind::Pll:
            mag = 1.0 - pi;
            break;
        case CurveKind::Bnf:
            mag = pi < pi_ref ? pi * (1.0 - pi_ref) / pi_ref : 1.0 - pi;
            break;
        }
        out.push_back({pi, mag});
    }
    return out;
}

std::vector<int> greedy_decode(const ModelParams& policy, std::span<const int> prompt,
                               int max_len) {
    if (max_len < 1) {
        throw std::invalid_argument("greedy_decode: max_len must be >= 1");
    }
    std::vector<int> response;
    response.reserve(static_cast<std::size_t>(max_len));
    for (int i = 0; i < max_len; ++i) {
        response.push_back(0); // placeholder for the position being decoded
        const Matrix logits = forward_logits(policy, prompt, response);
        const auto row = logits.row(response.size() - 1);
        std::size_t best = 0;
        for (std::size_t t = 1; t < row.size(); ++t) {
            if (row[t] > row[best]) {
                best = t;
            }
        }
        response.back() = static_cast<int>(best);
    }
    return response;
}

namespace {

ShiftReport shift_for_sequence(const ModelParams& policy, const ModelParams& reference,
                               std::span<const int> prompt, std::span<const int> response) {
    const Matrix z_policy = forward_logits(policy, prompt, response);
    const Matrix z_ref = forward_logits(reference, prompt, response);

    ShiftReport r;
    r.length = static_cast<int>(response.size());
    r.per_token_delta.resize(response.size());
    std::vector<double> per_token_shift(response.size());
    for (std::size_t i = 0; i < response.size(); ++i) {
        const auto zp = z_policy.row(i);
        const auto zr = z_ref.row(i);
        const double lse_p = logsumexp(std::span<const double>(zp.data(), zp.size()));
        const double lse_r = logsumexp(std::span<const double>(zr.data(), zr.size()));
        const std::size_t tok = static_cast<std::size_t>(response[i]);
        r.per_token_delta[i] = (zp[tok] - lse_p) - (zr[tok] - lse_r);
        r.delta_loglik += r.per_token_delta[i];
        double abs_sum = 0.0;
        for (std::size_t t = 0; t < zp.size(); ++t) {
            abs_sum += std::abs(zp[t] - zr[t]);
        }
        per_token_shift[i] = abs_sum / static_cast<double>(zp.size());
        r.logit_shift_raw += per_token_shift[i];
    }
    r.delta_loglik_norm = r.delta_loglik / static_cast<double>(response.size());
    r.logit_shift_norm = r.logit_shift_raw / static_cast<double>(response.size());
    const bool any_shift =
        std::any_of(per_token_shift.begin(), per_token_shift.end(), [](double s) { return s > 0.0; });
    if (any_shift) {
        r.gini_logit_shift = gini_coefficient(per_token_shift);
    }
    return r;
}

double median(std::vector<double> v) {
    if (v.empty()) {
        return 0.0;
    }
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace

ShiftOutput shift_report(const ModelParams& policy, const ModelParams& reference,
                         const Dataset& eval_set, const ShiftReportOptions& opt) {
    if (policy.vocab_size != reference.vocab_size) {
        throw std::invalid_argument("shift_report: policy and reference vocab sizes differ");
    }
    if (eval_set.vocab_size != policy.vocab_size) {
        throw std::invalid_argument("shift_report: dataset vocab does not match the models");
    }

    // Evaluation sequences: dataset responses as-is, or one greedy-decoded
    // response per distinct prompt (first-occurrence order).
    std::vector<std::pair<std::vector<int>, std::vector<int>>> sequences;
    if (opt.use_dataset_responses) {
        sequences.reserve(eval_set.examples.size());
        for (const auto& ex : eval_set.examples) {
            sequences.emplace_back(ex.prompt, ex.response);
        }
    } else {
        std::vector<std::vector<int>> seen;
        for (const auto& ex : eval_set.examples) {
            if (std::find(seen.begin(), seen.end(), ex.prompt) != seen.end()) {
                continue;
            }
            seen.push_back(ex.prompt);
            sequences.emplace_back(ex.prompt, greedy_decode(policy, ex.prompt, opt.max_decode_len));
        }
    }
    if (sequences.empty()) {
        throw std::invalid_argument("shift_report: no evaluation sequences");
    }

    ShiftOutput out;
    out.sequences.resize(sequences.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(std::max(1, opt.threads)) \
    if (opt.threads > 1)
#endif
    for (long long i = 0; i < static_cast<long long>(sequences.size()); ++i) {
        const auto& [prompt, response] = sequences[static_cast<std::size_t>(i)];
        out.sequences[static_cast<std::size_t>(i)] =
            shift_for_sequence(policy, reference, prompt, response);
    }

    ShiftSummary& s = out.summary;
    s.n_sequences = out.sequences.size();
    std::vector<double> dls, dlns, lsns;
    for (const ShiftReport& r : out.sequences) {
        dls.push_back(r.delta_loglik);
        dlns.push_back(r.delta_loglik_norm);
        lsns.push_back(r.logit_shift_norm);
        s.mean_delta_loglik += r.delta_loglik;
        s.mean_delta_loglik_norm += r.delta_loglik_norm;
        s.mean_logit_shift_norm += r.logit_shift_norm;
    }
    const double inv = 1.0 / static_cast<double>(s.n_sequences);
    s.mean_delta_loglik *= inv;
    s.mean_delta_loglik_norm *= inv;
    s.mean_logit_shift_norm *= inv;
    s.median_delta_loglik = median(dls);
    s.median_delta_loglik_norm = median(dlns);
    s.median_logit_shift_norm = median(lsns);

    const auto [lo_it, hi_it] = std::minmax_element(dls.begin(), dls.end());
    const double lo = *lo_it;
    const double hi = *hi_it;
    const double width = (hi > lo) ? (hi - lo) / 10.0 : 1.0;
    s.histogram_edges.resize(11);
    for (int k = 0; k <= 10; ++k) {
        s.histogram_edges[static_cast<std::size_t>(k)] = lo + width * k;
    }
    s.histogram_counts.assign(10, 0);
    for (double v : dls) {
        int bin = static_cast<int>((v - lo) / width);
        bin = std::clamp(bin, 0, 9);
        ++s.histogram_counts[static_cast<std::size_t>(bin)];
    }
    return out;
}

std::array<double, 10> decile_bin_map(std::span<const double> anchor_tokens,
                                      std::span<const double> other_tokens) {
    if (anchor_tokens.size() < 10) {
        throw std::invalid_argument("decile_bin_map: anchor needs at least 10 tokens");
    }
    if (other_tokens.empty()) {
        throw std::invalid_argument("decile_bin_map: other is empty");
    }
    std::vector<double> sorted(anchor_tokens.begin(), anchor_tokens.end());
    std::sort(sorted.begin(), sorted.end());
    std::array<double, 9> edges{};
    for (std::size_t k = 1; k <= 9; ++k) {
        edges[k - 1] = sorted[k * sorted.size() / 10];
    }
    std::array<double, 10> fractions{};
    for (double v : other_tokens) {
        const std::size_t bin = static_cast<std::size_t>(
            std::upper_bound(edges.begin(), edges.end(), v) - edges.begin());
        fractions[bin] += 1.0;
    }
    for (double& f : fractions) {
        f /= static_cast<double>(other_tokens.size());
    }
    return fractions;
}

CollapseReport collapse_metrics(const std::vector<StepMetrics>& log, double threshold) {
    if (log.empty()) {
        throw std::invalid_argument("collapse_metrics: empty log");
    }
    CollapseReport r;
    r.threshold = threshold;
    bool any = false;
    for (const StepMetrics& m : log) {
        if (!std::isfinite(m.mean_per_token_logp_l)) {
            continue;
        }
        if (!any || m.mean_per_token_logp_l < r.min_mean_per_token_logp_l) {
            r.min_mean_per_token_logp_l = m.mean_per_token_logp_l;
        }
        any = true;
        if (!r.first_crossing.has_value() && m.mean_per_token_logp_l < threshold) {
            r.first_crossing = m.step;
        }
    }
    if (!any) {
        throw std::invalid_argument("collapse_metrics: no finite mean_per_token_logp_l values");
    }
    r.collapsed = r.first_crossing.has_value();
    return r;
}

void write_curves_csv(const std::filesystem::path& path,
                      const std::vector<std::pair<std::string, std::vector<CurveSample>>>& curves) {
    if (curves.empty()) {
        throw std::invalid_argument("write_curves_csv: no curves");
    }
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("write_curves_csv: cannot open " + path.string());
    }
    out << "pi";
    for (const auto& [name, _] : curves) {
        out << ',' << name;
    }
    out << '\n';
    const std::size_t n = curves.front().second.size();
    for (const auto& [name, samples] : curves) {
        if (samples.size() != n) {
            throw std::invalid_argument("write_curves_csv: curves must share one grid");
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        out << format_double(curves.front().second[i].pi);
        for (const auto& [name, samples] : curves) {
            out << ',' << format_double(samples[i].derivative_magnitude);
        }
        out << '\n';
    }
}

void write_curves_svg(const std::filesystem::path& path,
                      const std::vector<std::pair<std::string, std::vector<CurveSample>>>& curves) {
    if (curves.empty()) {
        throw std::invalid_argument("write_curves_svg: no curves");
    }
    const int width = 640, height = 440;
    const double margin_left = 60.0, margin_right = 20.0, margin_top = 20.0, margin_bottom = 50.0;
    const double plot_w = width - margin_left - margin_right;
    const double plot_h = height - margin_top - margin_bottom;

    double y_max = 0.0;
    for (const auto& [name, samples] : curves) {
        for (const CurveSample& s : samples) {
            y_max = std::max(y_max, s.derivative_magnitude);
        }
    }
    if (y_max <= 0.0) {
        y_max = 1.0;
    }

    auto sx = [&](double pi) { return margin_left + pi * plot_w; };
    auto sy = [&](double mag) { return margin_top + (1.0 - mag / y_max) * plot_h; };
    auto fmt = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.6g", v);
        return std::string(buf);
    };

    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("write_curves_svg: cannot open " + path.string());
    }
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n";
    out << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
    // axes
    out << "<line x1=\"" << fmt(sx(0)) << "\" y1=\"" << fmt(sy(0)) << "\" x2=\"" << fmt(sx(1))
        << "\" y2=\"" << fmt(sy(0)) << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << fmt(sx(0)) << "\" y1=\"" << fmt(sy(0)) << "\" x2=\"" << fmt(sx(0))
        << "\" y2=\"" << fmt(sy(y_max)) << "\" stroke=\"black\"/>\n";
    for (int k = 0; k <= 4; ++k) {
        const double pi = 0.25 * k;
        out << "<text x=\"" << fmt(sx(pi)) << "\" y=\"" << fmt(sy(0) + 18)
            << "\" font-size=\"11\" text-anchor=\"middle\">" << fmt(pi) << "</text>\n";
        const double mag = y_max * 0.25 * k;
        out << "<text x=\"" << fmt(sx(0) - 8) << "\" y=\"" << fmt(sy(mag) + 4)
            << "\" font-size=\"11\" text-anchor=\"end\">" << fmt(mag) << "</text>\n";
    }
    out << "<text x=\"" << fmt(sx(0.5)) << "\" y=\"" << height - 10
        << "\" font-size=\"12\" text-anchor=\"middle\">policy likelihood</text>\n";
    out << "<text x=\"14\" y=\"" << fmt(margin_top + plot_h / 2)
        << "\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
        << fmt(margin_top + plot_h / 2) << ")\">derivative magnitude</text>\n";

    std::size_t color_idx = 0;
    double legend_y = margin_top + 14.0;
    for (const auto& [name, samples] : curves) {
        const char* color = colors[color_idx % 5];
        out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (const CurveSample& s : samples) {
            out << fmt(sx(s.pi)) << ',' << fmt(sy(s.derivative_magnitude)) << ' ';
        }
        out << "\"/>\n";
        out << "<line x1=\"" << fmt(sx(0) + 10) << "\" y1=\"" << fmt(legend_y - 4) << "\" x2=\""
            << fmt(sx(0) + 34) << "\" y2=\"" << fmt(legend_y - 4) << "\" stroke=\"" << color
            << "\" stroke-width=\"1.5\"/>\n";
        out << "<text x=\"" << fmt(sx(0) + 40) << "\" y=\"" << fmt(legend_y)
            << "\" font-size=\"12\">" << name << "</text>\n";
        legend_y += 16.0;
        ++color_idx;
    }
    out << "</svg>\n";
}

void write_shift_csv(const std::filesystem::path& path, const ShiftOutput& out) {
    std::ofstream f(path);
    if (!f) {
        throw std::runtime_error("write_shift_csv: cannot open " + path.string());
    }
    f << "sequence,length,delta_loglik,delta_loglik_norm,logit_shift_raw,logit_shift_norm,"
         "gini_logit_shift\n";
    for (std::size_t i = 0; i < out.sequences.size(); ++i) {
        const ShiftReport& r = out.sequences[i];
        f << i << ',' << r.length << ',' << format_double(r.delta_loglik) << ','
          << format_double(r.delta_loglik_norm) << ',' << format_double(r.logit_shift_raw) << ','
          << format_double(r.logit_shift_norm) << ','
          << (r.gini_logit_shift ? format_double(*r.gini_logit_shift) : std::string("null"))
          << '\n';
    }
}

namespace {

json shift_summary_to_json(const ShiftSummary& s) {
    json j;
    j["n_sequences"] = s.n_sequences;
    j["mean_delta_loglik"] = s.mean_delta_loglik;
    j["median_delta_loglik"] = s.median_delta_loglik;
    j["mean_delta_loglik_norm"] = s.mean_delta_loglik_norm;
    j["median_delta_loglik_norm"] = s.median_delta_loglik_norm;
    j["mean_logit_shift_norm"] = s.mean_logit_shift_norm;
    j["median_logit_shift_norm"] = s.median_logit_shift_norm;
    j["histogram_edges"] = s.histogram_edges;
    j["histogram_counts"] = s.histogram_counts;
    return j;
}

} // namespace

void write_shift_json(const std::filesystem::path& path, const ShiftOutput& out) {
    json doc;
    doc["summary"] = shift_summary_to_json(out.summary);
    json seqs = json::array();
    for (const ShiftReport& r : out.sequences) {
        json j;
        j["length"] = r.length;
        j["delta_loglik"] = r.delta_loglik;
        j["delta_loglik_norm"] = r.delta_loglik_norm;
        j["logit_shift_raw"] = r.logit_shift_raw;
        j["logit_shift_norm"] = r.logit_shift_norm;
        j["per_token_delta"] = r.per_token_delta;
        if (r.gini_logit_shift) {
            j["gini_logit_shift"] = *r.gini_logit_shift;
        } else {
            j["gini_logit_shift"] = nullptr;
        }
        seqs.push_back(std::move(j));
    }
    doc["sequences"] = std::move(seqs);
    std::ofstream f(path);
    if (!f) {
        throw std::runtime_error("write_shift_json: cannot open " + path.string());
    }
    f << doc.dump(2) << "\n";
}

void write_token_deltas_csv(const std::filesystem::path& path, const ShiftOutput& out) {
    std::ofstream f(path);
    if (!f) {
        throw std::runtime_error("write_token_deltas_csv: cannot open " + path.string());
    }
    f << "sequence,position,delta_loglik\n";
    for (std::size_t i = 0; i < out.sequences.size(); ++i) {
        const ShiftReport& r = out.sequences[i];
        for (std::size_t pos = 0; pos < r.per_token_delta.size(); ++pos) {
            f << i << ',' << pos << ',' << format_double(r.per_token_delta[pos]) << '\n';
        }
    }
}

std::vector<double> read_token_deltas_csv(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) {
        throw std::runtime_error("read_token_deltas_csv: cannot open " + path.string());
    }
    std::string line;
    if (!std::getline(f, line) || line != "sequence,position,delta_loglik") {
        throw std::runtime_error("read_token_deltas_csv: unexpected header in " + path.string());
    }
    std::vector<double> deltas;
    while (std::getline(f, line)) {
        if (line.empty()) {
            continue;
        }
        const std::size_t last_comma = line.rfind(',');
        if (last_comma == std::string::npos) {
            throw std::runtime_error("read_token_deltas_csv: malformed row '" + line + "'");
        }
        deltas.push_back(std::strtod(line.c_str() + last_comma + 1, nullptr));
    }
    return deltas;
}

} // namespace prefopt
