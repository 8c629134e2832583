#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "prefopt/matrix.hpp"
#include "prefopt/numerics.hpp"

namespace prefopt {

enum class Method {
    NllPll,
    Dpo,
    Ipo,
    Slic,
    Simpo,
    Bnf,
};

const char* method_name(Method m);
Method method_from_name(const std::string& name);
bool method_is_pairwise(Method m);
bool method_uses_reference(Method m);

struct LossHyperparams {
    double beta = 0.1;  // DPO / SimPO scaling
    double tau = 0.5;   // IPO target 1/(2 tau)
    double delta = 1.0; // SLiC hinge margin
    double gamma = 0.0; // SimPO reward margin
};

// Loss value plus gradients with respect to the policy logits of the
// preferred and dispreferred sequences.
template <typename Real>
struct PairLossGradT {
    Real loss = Real(0);
    MatrixT<Real> dlogits_w;
    MatrixT<Real> dlogits_l;
};

// Loss value plus the logit gradient for a single labeled sequence.
template <typename Real>
struct ExampleLossGradT {
    Real loss = Real(0);
    MatrixT<Real> dlogits;
};

using PairLossGrad = PairLossGradT<double>;
using ExampleLossGrad = ExampleLossGradT<double>;

namespace detail {

template <typename Real>
Real sigmoid(Real x) {
    if (x >= Real(0)) {
        return Real(1) / (Real(1) + std::exp(-x));
    }
    const Real e = std::exp(x);
    return e / (Real(1) + e);
}

// -log(sigmoid(x)) = softplus(-x), overflow-safe.
template <typename Real>
Real neg_log_sigmoid(Real x) {
    if (x >= Real(0)) {
        return std::log1p(std::exp(-x));
    }
    return -x + std::log1p(std::exp(x));
}

template <typename Real>
void check_sequence(const MatrixT<Real>& logits, std::span<const int> y, const char* side) {
    if (y.empty()) {
        throw std::invalid_argument(std::string("loss: empty response (") + side + ")");
    }
    if (logits.rows != y.size()) {
        throw std::invalid_argument(std::string("loss: logits rows do not match |y| (") + side +
                                    ")");
    }
    if (logits.cols < 2) {
        throw std::invalid_argument(std::string("loss: vocab must be >= 2 (") + side + ")");
    }
    for (int t : y) {
        if (t < 0 || static_cast<std::size_t>(t) >= logits.cols) {
            throw std::domain_error(std::string("loss: token outside vocab (") + side + ")");
        }
    }
}

template <typename Real>
void check_pair(const MatrixT<Real>& logits_w, const MatrixT<Real>& logits_l,
                std::span<const int> y_w, std::span<const int> y_l) {
    check_sequence(logits_w, y_w, "w");
    check_sequence(logits_l, y_l, "l");
    if (logits_w.cols != logits_l.cols) {
        throw std::invalid_argument("loss: the two sides use different vocab sizes");
    }
}

// Log-softmax of every row plus the summed log-likelihood of y.
template <typename Real>
MatrixT<Real> log_prob_rows(const MatrixT<Real>& logits, std::span<const int> y, Real& seq_logp) {
    MatrixT<Real> lp = logits;
    seq_logp = Real(0);
    for (std::size_t i = 0; i < lp.rows; ++i) {
        log_softmax_inplace(lp.row(i));
        seq_logp += lp.at(i, static_cast<std::size_t>(y[i]));
    }
    return lp;
}

// Fills out rows with scale * (softmax(row) - onehot(y_i)), the gradient of
// -scale * log pi(y) with respect to the logits.
template <typename Real>
MatrixT<Real> scaled_nll_residual(const MatrixT<Real>& log_probs, std::span<const int> y,
                                  Real scale) {
    MatrixT<Real> g(log_probs.rows, log_probs.cols);
    for (std::size_t i = 0; i < g.rows; ++i) {
        const auto lp = log_probs.row(i);
        auto out = g.row(i);
        for (std::size_t t = 0; t < g.cols; ++t) {
            out[t] = scale * std::exp(lp[t]);
        }
        out[static_cast<std::size_t>(y[i])] -= scale;
    }
    return g;
}

} // namespace detail

// L = -log pi(y_w) + log pi(y_l): raises the preferred sequence with NLL and
// lowers the dispreferred one with PLL, with no constraint between them.
template <typename Real>
PairLossGradT<Real> nll_pll_loss_grad(const MatrixT<Real>& logits_w, const MatrixT<Real>& logits_l,
                                      std::span<const int> y_w, std::span<const int> y_l) {
    detail::check_pair(logits_w, logits_l, y_w, y_l);
    Real logp_w = Real(0);
    Real logp_l = Real(0);
    const MatrixT<Real> lp_w = detail::log_prob_rows(logits_w, y_w, logp_w);
    const MatrixT<Real> lp_l = detail::log_prob_rows(logits_l, y_l, logp_l);
    PairLossGradT<Real> out;
    out.loss = -logp_w + logp_l;
    out.dlogits_w = detail::scaled_nll_residual(lp_w, y_w, Real(1));
    out.dlogits_l = detail::scaled_nll_residual(lp_l, y_l, Real(-1));
    return out;
}

// DPO objective with summed sequence log-likelihoods; the scalar pairwise
// factor multiplies the same cross-entropy residual structure on both sides.
template <typename Real>
PairLossGradT<Real> dpo_loss_grad(const MatrixT<Real>& logits_w, const MatrixT<Real>& logits_l,
                                  const MatrixT<Real>& ref_logits_w,
                                  const MatrixT<Real>& ref_logits_l, std::span<const int> y_w,
                                  std::span<const int> y_l, const LossHyperparams& hp) {
    if (!(hp.beta > 0.0)) {
        throw std::invalid_argument("dpo_loss_grad: beta must be > 0");
    }
    detail::check_pair(logits_w, logits_l, y_w, y_l);
    if (!ref_logits_w.same_shape(logits_w) || !ref_logits_l.same_shape(logits_l)) {
        throw std::invalid_argument("dpo_loss_grad: reference logits shape mismatch");
    }
    Real logp_w = Real(0), logp_l = Real(0), ref_w = Real(0), ref_l = Real(0);
    const MatrixT<Real> lp_w = detail::log_prob_rows(logits_w, y_w, logp_w);
    const MatrixT<Real> lp_l = detail::log_prob_rows(logits_l, y_l, logp_l);
    detail::log_prob_rows(ref_logits_w, y_w, ref_w);
    detail::log_prob_rows(ref_logits_l, y_l, ref_l);

    const Real beta = static_cast<Real>(hp.beta);
    const Real margin = beta * ((logp_w - ref_w) - (logp_l - ref_l));
    const Real c = beta * detail::sigmoid(-margin);

    PairLossGradT<Real> out;
    out.loss = detail::neg_log_sigmoid(margin);
    out.dlogits_w = detail::scaled_nll_residual(lp_w, y_w, c);
    out.dlogits_l = detail::scaled_nll_residual(lp_l, y_l, -c);
    return out;
}

// IPO: squared distance between the log-ratio gap and 1/(2 tau).
template <typename Real>
PairLossGradT<Real> ipo_loss_grad(const MatrixT<Real>& logits_w, const MatrixT<Real>& logits_l,
                                  const MatrixT<Real>& ref_logits_w,
                                  const MatrixT<Real>& ref_logits_l, std::span<const int> y_w,
                                  std::span<const int> y_l, const LossHyperparams& hp) {
    if (!(hp.tau > 0.0)) {
        throw std::invalid_argument("ipo_loss_grad: tau must be > 0");
    }
    detail::check_pair(logits_w, logits_l, y_w, y_l);
    if (!ref_logits_w.same_shape(logits_w) || !ref_logits_l.same_shape(logits_l)) {
        throw std::invalid_argument("ipo_loss_grad: reference logits shape mismatch");
    }
    Real logp_w = Real(0), logp_l = Real(0), ref_w = Real(0), ref_l = Real(0);
    const MatrixT<Real> lp_w = detail::log_prob_rows(logits_w, y_w, logp_w);
    const MatrixT<Real> lp_l = detail::log_prob_rows(logits_l, y_l, logp_l);
    detail::log_prob_rows(ref_logits_w, y_w, ref_w);
    detail::log_prob_rows(ref_logits_l, y_l, ref_l);

    const Real gap = (logp_w - ref_w) - (logp_l - ref_l);
    const Real target = Real(1) / (Real(2) * static_cast<Real>(hp.tau));
    const Real c = Real(2) * (target - gap); // multiplies (-grad_w + grad_l)

    PairLossGradT<Real> out;
    out.loss = (gap - target) * (gap - target);
    out.dlogits_w = detail::scaled_nll_residual(lp_w, y_w, c);
    out.dlogits_l = detail::scaled_nll_residual(lp_l, y_l, -c);
    return out;
}

// SLiC hinge on the log-likelihood gap; no reference model. The kink at
// gap == delta counts as inactive (zero loss, zero gradient).
template <typename Real>
PairLossGradT<Real> slic_loss_grad(const MatrixT<Real>& logits_w, const MatrixT<Real>& logits_l,
                                   std::span<const int> y_w, std::span<const int> y_l,
                                   const LossHyperparams& hp) {
    if (hp.delta < 0.0) {
        throw std::invalid_argument("slic_loss_grad: delta must be >= 0");
    }
    detail::check_pair(logits_w, logits_l, y_w, y_l);
    Real logp_w = Real(0), logp_l = Real(0);
    const MatrixT<Real> lp_w = detail::log_prob_rows(logits_w, y_w, logp_w);
    const MatrixT<Real> lp_l = detail::log_prob_rows(logits_l, y_l, logp_l);

    const Real delta = static_cast<Real>(hp.delta);
    const Real gap = logp_w - logp_l;
    PairLossGradT<Real> out;
    if (gap >= delta) {
        out.loss = Real(0);
        out.dlogits_w = MatrixT<Real>(lp_w.rows, lp_w.cols, Real(0));
        out.dlogits_l = MatrixT<Real>(lp_l.rows, lp_l.cols, Real(0));
        return out;
    }
    out.loss = delta - gap;
    out.dlogits_w = detail::scaled_nll_residual(lp_w, y_w, Real(1));
    out.dlogits_l = detail::scaled_nll_residual(lp_l, y_l, Real(-1));
    return out;
}

// SimPO: logistic loss over length-normalized log-likelihoods with margin
// gamma; no reference model. Each side's residual carries beta / |y|.
template <typename Real>
PairLossGradT<Real> simpo_loss_grad(const MatrixT<Real>& logits_w, const MatrixT<Real>& logits_l,
                                    std::span<const int> y_w, std::span<const int> y_l,
                                    const LossHyperparams& hp) {
    if (!(hp.beta > 0.0)) {
        throw std::invalid_argument("simpo_loss_grad: beta must be > 0");
    }
    detail::check_pair(logits_w, logits_l, y_w, y_l);
    Real logp_w = Real(0), logp_l = Real(0);
    const MatrixT<Real> lp_w = detail::log_prob_rows(logits_w, y_w, logp_w);
    const MatrixT<Real> lp_l = detail::log_prob_rows(logits_l, y_l, logp_l);

    const Real beta = static_cast<Real>(hp.beta);
    const Real scale_w = beta / static_cast<Real>(y_w.size());
    const Real scale_l = beta / static_cast<Real>(y_l.size());
    const Real margin = scale_w * logp_w - scale_l * logp_l - static_cast<Real>(hp.gamma);
    const Real outer = detail::sigmoid(-margin);

    PairLossGradT<Real> out;
    out.loss = detail::neg_log_sigmoid(margin);
    out.dlogits_w = detail::scaled_nll_residual(lp_w, y_w, outer * scale_w);
    out.dlogits_l = detail::scaled_nll_residual(lp_l, y_l, -outer * scale_l);
    return out;
}

namespace detail {

// Shared construction of one dynamic-target row given the policy
// probabilities, the observed token, and the clipped on-token ratio.
template <typename Real>
void fill_target_row(std::span<const Real> policy_probs, int y_tok, Real on_target,
                     std::span<Real> out) {
    const Real p_y = policy_probs[static_cast<std::size_t>(y_tok)];
    const Real remainder = Real(1) - p_y;
    if (remainder < Real(1e-12)) {
        // Continuous extension of the 0/0 limit: all mass on the observed token.
        std::fill(out.begin(), out.end(), Real(0));
        out[static_cast<std::size_t>(y_tok)] = Real(1);
        return;
    }
    const Real scale = (Real(1) - on_target) / remainder;
    for (std::size_t t = 0; t < out.size(); ++t) {
        out[t] = scale * policy_probs[t];
    }
    out[static_cast<std::size_t>(y_tok)] = on_target;
}

} // namespace detail

// Dynamic target per position: min(policy/ref, 1) at the observed token and
// rescaled policy mass elsewhere. Each row is a valid probability
// distribution and is treated as a constant during differentiation.
template <typename Real>
MatrixT<Real> bnf_target_distribution(const MatrixT<Real>& policy_probs,
                                      const MatrixT<Real>& ref_probs, std::span<const int> y) {
    if (!policy_probs.same_shape(ref_probs)) {
        throw std::invalid_argument("bnf_target_distribution: shape mismatch");
    }
    if (policy_probs.rows != y.size()) {
        throw std::invalid_argument("bnf_target_distribution: rows do not match |y|");
    }
    MatrixT<Real> target(policy_probs.rows, policy_probs.cols);
    for (std::size_t i = 0; i < y.size(); ++i) {
        const int tok = y[i];
        if (tok < 0 || static_cast<std::size_t>(tok) >= policy_probs.cols) {
            throw std::domain_error("bnf_target_distribution: token outside vocab");
        }
        const Real p_ref = ref_probs.at(i, static_cast<std::size_t>(tok));
        if (!(p_ref >= Real(1e-300))) {
            throw std::domain_error("bnf_target_distribution: reference probability below floor");
        }
        const Real ratio = policy_probs.at(i, static_cast<std::size_t>(tok)) / p_ref;
        detail::fill_target_row(policy_probs.row(i), tok, std::min(ratio, Real(1)),
                                target.row(i));
    }
    return target;
}

// BNF loss: length-normalized cross-entropy against the dynamic target, with
// label +1 pulling the sequence up and -1 pushing it down. The logit
// gradient is (label/|y|) * (policy_probs - target) per row.
template <typename Real>
ExampleLossGradT<Real> bnf_loss_grad(const MatrixT<Real>& policy_logits,
                                     const MatrixT<Real>& ref_logits, std::span<const int> y,
                                     int label) {
    if (label != 1 && label != -1) {
        throw std::invalid_argument("bnf_loss_grad: label must be +1 or -1");
    }
    detail::check_sequence(policy_logits, y, "policy");
    if (!ref_logits.same_shape(policy_logits)) {
        throw std::invalid_argument("bnf_loss_grad: reference logits shape mismatch");
    }

    const Real norm = static_cast<Real>(label) / static_cast<Real>(y.size());
    ExampleLossGradT<Real> out;
    out.dlogits = MatrixT<Real>(policy_logits.rows, policy_logits.cols);
    out.loss = Real(0);

    std::vector<Real> probs(policy_logits.cols);
    std::vector<Real> target(policy_logits.cols);
    for (std::size_t i = 0; i < y.size(); ++i) {
        const int tok = y[i];
        const auto lp = log_softmax(policy_logits.row(i));
        const Real ref_lp_tok = [&] {
            const auto row = ref_logits.row(i);
            const Real lse = logsumexp(std::span<const Real>(row.data(), row.size()));
            return row[static_cast<std::size_t>(tok)] - lse;
        }();
        for (std::size_t t = 0; t < probs.size(); ++t) {
            probs[t] = std::exp(lp[t]);
        }
        // On-token ratio computed in log space before clipping.
        const Real ratio = std::exp(lp[static_cast<std::size_t>(tok)] - ref_lp_tok);
        detail::fill_target_row(std::span<const Real>(probs), tok, std::min(ratio, Real(1)),
                                std::span<Real>(target));

        Real row_ce = Real(0);
        auto g = out.dlogits.row(i);
        for (std::size_t t = 0; t < probs.size(); ++t) {
            row_ce += target[t] * lp[t];
            g[t] = norm * (probs[t] - target[t]);
        }
        out.loss -= norm * row_ce;
    }
    return out;
}

// The scalar pairwise factor of each DPO-family gradient, evaluated from
// sequence-level quantities; used for diagnostics and decomposition checks.
double constraint_value(Method method, double logp_w, double logp_l, double ref_logp_w,
                        double ref_logp_l, std::size_t len_w, std::size_t len_l,
                        const LossHyperparams& hp);

} // namespace prefopt
