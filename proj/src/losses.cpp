#include "prefopt/losses.hpp"

namespace prefopt {

const char* method_name(Method m) {
    switch (m) {
    case Method::NllPll:
        return "nll_pll";
    case Method::Dpo:
        return "dpo";
    case Method::Ipo:
        return "ipo";
    case Method::Slic:
        return "slic";
    case Method::Simpo:
        return "simpo";
    case Method::Bnf:
        return "bnf";
    }
    throw std::invalid_argument("method_name: unknown method");
}

Method method_from_name(const std::string& name) {
    if (name == "nll_pll") return Method::NllPll;
    if (name == "dpo") return Method::Dpo;
    if (name == "ipo") return Method::Ipo;
    if (name == "slic") return Method::Slic;
    if (name == "simpo") return Method::Simpo;
    if (name == "bnf") return Method::Bnf;
    throw std::invalid_argument("unknown method '" + name + "'");
}

bool method_is_pairwise(Method m) {
    return m != Method::Bnf;
}

bool method_uses_reference(Method m) {
    return m == Method::Dpo || m == Method::Ipo || m == Method::Bnf;
}

double constraint_value(Method method, double logp_w, double logp_l, double ref_logp_w,
                        double ref_logp_l, std::size_t len_w, std::size_t len_l,
                        const LossHyperparams& hp) {
    switch (method) {
    case Method::Slic: {
        return (logp_w - logp_l) < hp.delta ? 1.0 : 0.0;
    }
    case Method::Dpo: {
        if (!(hp.beta > 0.0)) {
            throw std::invalid_argument("constraint_value: beta must be > 0");
        }
        const double arg =
            hp.beta * ((logp_l - ref_logp_l) - (logp_w - ref_logp_w));
        return hp.beta * detail::sigmoid(arg);
    }
    case Method::Ipo: {
        if (!(hp.tau > 0.0)) {
            throw std::invalid_argument("constraint_value: tau must be > 0");
        }
        return 2.0 * (1.0 / (2.0 * hp.tau) + (logp_l - ref_logp_l) - (logp_w - ref_logp_w));
    }
    case Method::Simpo: {
        if (!(hp.beta > 0.0)) {
            throw std::invalid_argument("constraint_value: beta must be > 0");
        }
        if (len_w == 0 || len_l == 0) {
            throw std::invalid_argument("constraint_value: zero-length response");
        }
        const double arg = hp.gamma + hp.beta / static_cast<double>(len_l) * logp_l -
                           hp.beta / static_cast<double>(len_w) * logp_w;
        return detail::sigmoid(arg);
    }
    default:
        throw std::invalid_argument("constraint_value: method has no pairwise constraint");
    }
}

} // namespace prefopt
