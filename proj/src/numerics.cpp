#include "prefopt/numerics.hpp"

#include <numeric>

namespace prefopt {

std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& f,
                                     std::span<const double> z, double h) {
    if (h <= 0.0) {
        throw std::invalid_argument("finite_diff_grad: h must be positive");
    }
    std::vector<double> point(z.begin(), z.end());
    std::vector<double> grad(z.size(), 0.0);
    for (std::size_t k = 0; k < point.size(); ++k) {
        const double saved = point[k];
        point[k] = saved + h;
        const double fp = f(point);
        point[k] = saved - h;
        const double fm = f(point);
        point[k] = saved;
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            throw std::runtime_error("finite_diff_grad: non-finite function value at coordinate " +
                                     std::to_string(k));
        }
        grad[k] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

double gini_coefficient(std::span<const double> values) {
    if (values.empty()) {
        throw std::invalid_argument("gini_coefficient: empty input");
    }
    double total = 0.0;
    for (double v : values) {
        if (!std::isfinite(v) || v < 0.0) {
            throw std::domain_error("gini_coefficient: entries must be finite and nonnegative");
        }
        total += v;
    }
    if (total == 0.0) {
        throw std::domain_error("gini_coefficient: statistic undefined for all-zero input");
    }
    // Sorted closed form of the pairwise sum: sum_k (2k - n - 1) x_(k).
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    const double n = static_cast<double>(sorted.size());
    double weighted = 0.0;
    for (std::size_t k = 0; k < sorted.size(); ++k) {
        weighted += (2.0 * static_cast<double>(k + 1) - n - 1.0) * sorted[k];
    }
    return weighted / (n * total);
}

} // namespace prefopt
