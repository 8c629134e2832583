#include "prefopt/gradcheck.hpp"

#include <cmath>

#include "prefopt/matrix.hpp"
#include "prefopt/numerics.hpp"
#include "prefopt/rng.hpp"

namespace prefopt {

namespace {

Matrix random_logits(Rng& rng, std::size_t rows, std::size_t cols) {
    Matrix m(rows, cols);
    for (double& v : m.data) {
        v = rng.uniform(-4.0, 4.0);
    }
    return m;
}

std::vector<int> random_tokens(Rng& rng, std::size_t len, std::size_t vocab) {
    std::vector<int> y(len);
    for (int& t : y) {
        t = static_cast<int>(rng.uniform_index(vocab));
    }
    return y;
}

Matrix matrix_from_flat(std::span<const double> flat, std::size_t rows, std::size_t cols,
                        std::size_t offset) {
    Matrix m(rows, cols);
    std::copy(flat.begin() + offset, flat.begin() + offset + rows * cols, m.data.begin());
    return m;
}

double max_abs(std::span<const double> v) {
    double m = 0.0;
    for (double x : v) {
        m = std::max(m, std::abs(x));
    }
    return m;
}

double relative_error(std::span<const double> analytic, std::span<const double> numeric) {
    std::vector<double> diff(analytic.size());
    for (std::size_t i = 0; i < diff.size(); ++i) {
        diff[i] = analytic[i] - numeric[i];
    }
    const double denom = std::max(max_abs(analytic), max_abs(numeric));
    const double err = max_abs(diff);
    return denom > 1e-12 ? err / denom : err;
}

struct PairInstance {
    Matrix logits_w, logits_l, ref_w, ref_l;
    std::vector<int> y_w, y_l;
};

PairInstance make_pair_instance(Rng& rng, std::size_t vocab, std::size_t len_w,
                                std::size_t len_l) {
    PairInstance inst;
    inst.logits_w = random_logits(rng, len_w, vocab);
    inst.logits_l = random_logits(rng, len_l, vocab);
    inst.ref_w = random_logits(rng, len_w, vocab);
    inst.ref_l = random_logits(rng, len_l, vocab);
    inst.y_w = random_tokens(rng, len_w, vocab);
    inst.y_l = random_tokens(rng, len_l, vocab);
    return inst;
}

// Gradcheck of a pairwise loss over the concatenated (logits_w, logits_l).
template <typename LossFn>
double check_pair_loss(Rng& rng, std::size_t vocab, std::size_t len_w, std::size_t len_l,
                       double h, LossFn&& loss_fn) {
    const PairInstance inst = make_pair_instance(rng, vocab, len_w, len_l);
    const PairLossGrad base = loss_fn(inst.logits_w, inst.logits_l, inst);

    std::vector<double> flat;
    flat.insert(flat.end(), inst.logits_w.data.begin(), inst.logits_w.data.end());
    flat.insert(flat.end(), inst.logits_l.data.begin(), inst.logits_l.data.end());
    const std::size_t split = inst.logits_w.data.size();

    auto scalar = [&](std::span<const double> z) {
        const Matrix zw = matrix_from_flat(z, len_w, vocab, 0);
        const Matrix zl = matrix_from_flat(z, len_l, vocab, split);
        return static_cast<double>(loss_fn(zw, zl, inst).loss);
    };
    const std::vector<double> fd = finite_diff_grad(scalar, flat, h);

    std::vector<double> analytic;
    analytic.insert(analytic.end(), base.dlogits_w.data.begin(), base.dlogits_w.data.end());
    analytic.insert(analytic.end(), base.dlogits_l.data.begin(), base.dlogits_l.data.end());
    return relative_error(analytic, fd);
}

// Gradcheck of bnf with the dynamic target frozen at the base point.
double check_bnf(Rng& rng, std::size_t vocab, std::size_t len, int label, double h) {
    const Matrix logits = random_logits(rng, len, vocab);
    const Matrix ref_logits = random_logits(rng, len, vocab);
    const std::vector<int> y = random_tokens(rng, len, vocab);

    const ExampleLossGrad base = bnf_loss_grad(logits, ref_logits, y, label);

    // Frozen target rows, built from the public target-distribution op.
    Matrix probs(len, vocab);
    Matrix ref_probs(len, vocab);
    for (std::size_t i = 0; i < len; ++i) {
        const auto lp = log_softmax(logits.row(i));
        const auto ref_lp = log_softmax(ref_logits.row(i));
        for (std::size_t t = 0; t < vocab; ++t) {
            probs.at(i, t) = std::exp(lp[t]);
            ref_probs.at(i, t) = std::exp(ref_lp[t]);
        }
    }
    const Matrix target = bnf_target_distribution(probs, ref_probs, y);

    auto scalar = [&](std::span<const double> z) {
        const Matrix zm = matrix_from_flat(z, len, vocab, 0);
        double acc = 0.0;
        for (std::size_t i = 0; i < len; ++i) {
            const auto lp = log_softmax(zm.row(i));
            for (std::size_t t = 0; t < vocab; ++t) {
                acc += target.at(i, t) * lp[t];
            }
        }
        return -static_cast<double>(label) / static_cast<double>(len) * acc;
    };
    const std::vector<double> fd = finite_diff_grad(scalar, logits.data, h);
    return relative_error(base.dlogits.data, fd);
}

} // namespace

std::vector<GradcheckEntry> run_gradcheck_suite(const GradcheckConfig& cfg) {
    if (cfg.instances < 1) {
        throw std::invalid_argument("gradcheck: instances must be >= 1");
    }
    if (!(cfg.h > 0.0) || !(cfg.tolerance > 0.0)) {
        throw std::invalid_argument("gradcheck: h and tolerance must be > 0");
    }
    static constexpr std::size_t kVocabs[] = {3, 8, 32};
    static constexpr std::size_t kLens[] = {1, 4, 16};
    static constexpr Method kMethods[] = {Method::NllPll, Method::Dpo,   Method::Ipo,
                                          Method::Slic,   Method::Simpo, Method::Bnf};
    const LossHyperparams hp; // defaults

    std::vector<GradcheckEntry> results;
    std::uint64_t stream = 0;
    for (Method method : kMethods) {
        GradcheckEntry entry;
        entry.method = method;
        Rng rng(cfg.seed ^ (++stream * 0x100000001B3ULL));
        for (int k = 0; k < cfg.instances; ++k) {
            const std::size_t vocab = kVocabs[k % 3];
            const std::size_t len_w = kLens[(k / 3) % 3];
            const std::size_t len_l = (k % 2 == 0) ? len_w : kLens[((k / 3) + 1) % 3];
            double err = 0.0;
            switch (method) {
            case Method::NllPll:
                err = check_pair_loss(rng, vocab, len_w, len_l, cfg.h,
                                      [&](const Matrix& zw, const Matrix& zl,
                                          const PairInstance& inst) {
                                          return nll_pll_loss_grad(zw, zl, inst.y_w, inst.y_l);
                                      });
                break;
            case Method::Dpo:
                err = check_pair_loss(rng, vocab, len_w, len_l, cfg.h,
                                      [&](const Matrix& zw, const Matrix& zl,
                                          const PairInstance& inst) {
                                          return dpo_loss_grad(zw, zl, inst.ref_w, inst.ref_l,
                                                               inst.y_w, inst.y_l, hp);
                                      });
                break;
            case Method::Ipo:
                err = check_pair_loss(rng, vocab, len_w, len_l, cfg.h,
                                      [&](const Matrix& zw, const Matrix& zl,
                                          const PairInstance& inst) {
                                          return ipo_loss_grad(zw, zl, inst.ref_w, inst.ref_l,
                                                               inst.y_w, inst.y_l, hp);
                                      });
                break;
            case Method::Slic:
                err = check_pair_loss(rng, vocab, len_w, len_l, cfg.h,
                                      [&](const Matrix& zw, const Matrix& zl,
                                          const PairInstance& inst) {
                                          return slic_loss_grad(zw, zl, inst.y_w, inst.y_l, hp);
                                      });
                break;
            case Method::Simpo:
                err = check_pair_loss(rng, vocab, len_w, len_l, cfg.h,
                                      [&](const Matrix& zw, const Matrix& zl,
                                          const PairInstance& inst) {
                                          return simpo_loss_grad(zw, zl, inst.y_w, inst.y_l, hp);
                                      });
                break;
            case Method::Bnf:
                err = check_bnf(rng, vocab, len_w, k % 2 == 0 ? 1 : -1, cfg.h);
                break;
            }
            entry.max_rel_err = std::max(entry.max_rel_err, err);
        }
        entry.pass = entry.max_rel_err < cfg.tolerance;
        results.push_back(entry);
    }
    return results;
}

} // namespace prefopt
