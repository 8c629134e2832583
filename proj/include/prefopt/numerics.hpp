#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace prefopt {

// log(sum(exp(z))) via max-subtraction; exact for a single element.
template <typename Real>
Real logsumexp(std::span<const Real> z) {
    if (z.empty()) {
        throw std::invalid_argument("logsumexp: empty input");
    }
    Real m = z[0];
    for (Real v : z) {
        if (!std::isfinite(v)) {
            throw std::domain_error("logsumexp: non-finite input");
        }
        m = std::max(m, v);
    }
    if (z.size() == 1) {
        return z[0];
    }
    Real acc = Real(0);
    for (Real v : z) {
        acc += std::exp(v - m);
    }
    return m + std::log(acc);
}

template <typename Real>
Real logsumexp(std::span<Real> z) {
    return logsumexp(std::span<const Real>(z.data(), z.size()));
}

template <typename Real>
Real logsumexp(const std::vector<Real>& z) {
    return logsumexp(std::span<const Real>(z.data(), z.size()));
}

// z - logsumexp(z); exponentials of the result sum to 1 and the map is
// invariant under adding a constant to all entries.
template <typename Real>
std::vector<Real> log_softmax(std::span<const Real> z) {
    if (z.size() < 2) {
        throw std::invalid_argument("log_softmax: need at least 2 entries");
    }
    const Real lse = logsumexp(z);
    std::vector<Real> out(z.size());
    for (std::size_t j = 0; j < z.size(); ++j) {
        out[j] = z[j] - lse;
    }
    return out;
}

template <typename Real>
std::vector<Real> log_softmax(std::span<Real> z) {
    return log_softmax(std::span<const Real>(z.data(), z.size()));
}

template <typename Real>
std::vector<Real> log_softmax(const std::vector<Real>& z) {
    return log_softmax(std::span<const Real>(z.data(), z.size()));
}

template <typename Real>
void log_softmax_inplace(std::span<Real> z) {
    if (z.size() < 2) {
        throw std::invalid_argument("log_softmax: need at least 2 entries");
    }
    const Real lse = logsumexp(std::span<const Real>(z.data(), z.size()));
    for (Real& v : z) {
        v -= lse;
    }
}

// Central-difference gradient oracle, (f(z+h e_k) - f(z-h e_k)) / 2h.
// Double precision only; used by tests to certify analytic gradients.
std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& f,
                                     std::span<const double> z, double h = 1e-5);

// Mean-absolute-difference Gini: sum_{i,j} |x_i - x_j| / (2 n^2 mean).
// 0 for uniform input, (n-1)/n for a one-hot vector, scale invariant.
double gini_coefficient(std::span<const double> values);

} // namespace prefopt
