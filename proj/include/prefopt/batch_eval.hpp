#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "prefopt/dataset.hpp"
#include "prefopt/losses.hpp"
#include "prefopt/model.hpp"

namespace prefopt {

// One unit of the training batch: a preference pair for the pairwise
// methods, a single labeled example for bnf.
struct TrainItem {
    int first = -1;  // +1 side of a pair, or the lone example
    int second = -1; // -1 side of a pair, or -1 for single-example items
};

// Groups a dataset into train items for the given method. Pairwise methods
// require a pair_id on every example.
std::vector<TrainItem> build_train_items(const Dataset& data, Method method);

template <typename Real>
struct ItemEvalT {
    Real loss = Real(0);
    ModelParamsT<Real> grad;
    Real logp_w = std::numeric_limits<Real>::quiet_NaN();
    Real logp_l = std::numeric_limits<Real>::quiet_NaN();
    Real per_token_logp_l = std::numeric_limits<Real>::quiet_NaN();
};

template <typename Real>
struct BatchEvalT {
    Real loss = Real(0);     // mean over items
    ModelParamsT<Real> grad; // gradient of the mean loss
    Real mean_logp_w = std::numeric_limits<Real>::quiet_NaN();
    Real mean_logp_l = std::numeric_limits<Real>::quiet_NaN();
    Real mean_per_token_logp_l = std::numeric_limits<Real>::quiet_NaN();
};

template <typename Real>
ItemEvalT<Real> eval_item(const ModelParamsT<Real>& policy, const ModelParamsT<Real>& reference,
                          const Dataset& data, const TrainItem& item, Method method,
                          const LossHyperparams& hp) {
    ItemEvalT<Real> out;
    if (method == Method::Bnf) {
        const PreferenceExample& ex = data.examples[static_cast<std::size_t>(item.first)];
        const MatrixT<Real> logits = forward_logits(policy, ex.prompt, ex.response);
        const MatrixT<Real> ref_logits = forward_logits(reference, ex.prompt, ex.response);
        ExampleLossGradT<Real> lg = bnf_loss_grad(logits, ref_logits, ex.response, ex.label);
        out.loss = lg.loss;
        out.grad = backward(policy, ex.prompt, ex.response, lg.dlogits);
        const auto ll = sequence_log_likelihood(policy, ex.prompt, ex.response);
        if (ex.label == 1) {
            out.logp_w = ll.total;
        } else {
            out.logp_l = ll.total;
            out.per_token_logp_l = ll.total / static_cast<Real>(ex.response.size());
        }
        return out;
    }

    const PreferenceExample& ex_w = data.examples[static_cast<std::size_t>(item.first)];
    const PreferenceExample& ex_l = data.examples[static_cast<std::size_t>(item.second)];
    const MatrixT<Real> logits_w = forward_logits(policy, ex_w.prompt, ex_w.response);
    const MatrixT<Real> logits_l = forward_logits(policy, ex_l.prompt, ex_l.response);

    PairLossGradT<Real> lg;
    switch (method) {
    case Method::NllPll:
        lg = nll_pll_loss_grad(logits_w, logits_l, ex_w.response, ex_l.response);
        break;
    case Method::Dpo:
    case Method::Ipo: {
        const MatrixT<Real> ref_w = forward_logits(reference, ex_w.prompt, ex_w.response);
        const MatrixT<Real> ref_l = forward_logits(reference, ex_l.prompt, ex_l.response);
        lg = (method == Method::Dpo)
                 ? dpo_loss_grad(logits_w, logits_l, ref_w, ref_l, ex_w.response, ex_l.response,
                                 hp)
                 : ipo_loss_grad(logits_w, logits_l, ref_w, ref_l, ex_w.response, ex_l.response,
                                 hp);
        break;
    }
    case Method::Slic:
        lg = slic_loss_grad(logits_w, logits_l, ex_w.response, ex_l.response, hp);
        break;
    case Method::Simpo:
        lg = simpo_loss_grad(logits_w, logits_l, ex_w.response, ex_l.response, hp);
        break;
    case Method::Bnf:
        break; // handled above
    }

    out.loss = lg.loss;
    out.grad = backward(policy, ex_w.prompt, ex_w.response, lg.dlogits_w);
    out.grad.accumulate(backward(policy, ex_l.prompt, ex_l.response, lg.dlogits_l));

    const auto ll_w = sequence_log_likelihood(policy, ex_w.prompt, ex_w.response);
    const auto ll_l = sequence_log_likelihood(policy, ex_l.prompt, ex_l.response);
    out.logp_w = ll_w.total;
    out.logp_l = ll_l.total;
    out.per_token_logp_l = ll_l.total / static_cast<Real>(ex_l.response.size());
    return out;
}

namespace detail {

// Index-ordered reduction of per-item results; shared by the serial and
// OpenMP paths so both produce bit-identical batch gradients.
template <typename Real>
BatchEvalT<Real> reduce_items(const ModelParamsT<Real>& policy,
                              std::vector<ItemEvalT<Real>>& evals) {
    BatchEvalT<Real> out;
    out.grad = policy.zeros_like();
    Real sum_w = Real(0), sum_l = Real(0), sum_ptl = Real(0);
    std::size_t n_w = 0, n_l = 0;
    for (const ItemEvalT<Real>& e : evals) {
        out.loss += e.loss;
        out.grad.accumulate(e.grad);
        if (!std::isnan(e.logp_w)) {
            sum_w += e.logp_w;
            ++n_w;
        }
        if (!std::isnan(e.logp_l)) {
            sum_l += e.logp_l;
            sum_ptl += e.per_token_logp_l;
            ++n_l;
        }
    }
    const Real inv = Real(1) / static_cast<Real>(evals.size());
    out.loss *= inv;
    out.grad.scale(inv);
    if (n_w > 0) {
        out.mean_logp_w = sum_w / static_cast<Real>(n_w);
    }
    if (n_l > 0) {
        out.mean_logp_l = sum_l / static_cast<Real>(n_l);
        out.mean_per_token_logp_l = sum_ptl / static_cast<Real>(n_l);
    }
    return out;
}

} // namespace detail

// Serial reference implementation.
template <typename Real>
BatchEvalT<Real> eval_batch_serial(const ModelParamsT<Real>& policy,
                                   const ModelParamsT<Real>& reference, const Dataset& data,
                                   std::span<const TrainItem> items, Method method,
                                   const LossHyperparams& hp) {
    if (items.empty()) {
        throw std::invalid_argument("eval_batch: empty batch");
    }
    std::vector<ItemEvalT<Real>> evals(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) {
        evals[i] = eval_item(policy, reference, data, items[i], method, hp);
    }
    return detail::reduce_items(policy, evals);
}

// OpenMP variant: items are evaluated in parallel into per-item slots and
// reduced in index order, so the result is bit-identical to the serial path
// for any thread count.
template <typename Real>
BatchEvalT<Real> eval_batch(const ModelParamsT<Real>& policy, const ModelParamsT<Real>& reference,
                            const Dataset& data, std::span<const TrainItem> items, Method method,
                            const LossHyperparams& hp, int threads) {
    if (threads <= 1) {
        return eval_batch_serial(policy, reference, data, items, method, hp);
    }
    if (items.empty()) {
        throw std::invalid_argument("eval_batch: empty batch");
    }
    std::vector<ItemEvalT<Real>> evals(items.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(threads)
#endif
    for (long long i = 0; i < static_cast<long long>(items.size()); ++i) {
        evals[static_cast<std::size_t>(i)] =
            eval_item(policy, reference, data, items[static_cast<std::size_t>(i)], method, hp);
    }
    return detail::reduce_items(policy, evals);
}

} // namespace prefopt
