#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "prefopt/matrix.hpp"
#include "prefopt/numerics.hpp"
#include "prefopt/rng.hpp"

namespace prefopt {

enum class Arch {
    TabularBigram, // next-token logits = row of a vocab x vocab table
    MlpPool,       // mean-pooled embeddings -> tanh MLP -> vocab logits
};

const char* arch_name(Arch arch);
Arch arch_from_name(const std::string& name);

// Parameters of the tiny autoregressive model. The same shape doubles as a
// gradient container. Only response positions produce logits rows; prompt
// tokens are context only. With an empty prompt the first response position
// uses token 0 as its bigram context (mlp-pool uses the zero vector).
template <typename Real>
struct ModelParamsT {
    Arch arch = Arch::TabularBigram;
    int vocab_size = 0;
    int embed_dim = 0;  // d (mlp-pool only)
    int hidden_dim = 0; // h (mlp-pool only)
    std::uint64_t init_seed = 0;

    std::vector<Real> bigram; // vocab x vocab, row-major
    std::vector<Real> embed;  // vocab x d
    std::vector<Real> w1;     // h x d
    std::vector<Real> b1;     // h
    std::vector<Real> w2;     // vocab x h
    std::vector<Real> b2;     // vocab

    bool operator==(const ModelParamsT&) const = default;

    std::size_t param_count() const {
        return bigram.size() + embed.size() + w1.size() + b1.size() + w2.size() + b2.size();
    }

    ModelParamsT zeros_like() const {
        ModelParamsT g = *this;
        auto clear = [](std::vector<Real>& v) { std::fill(v.begin(), v.end(), Real(0)); };
        clear(g.bigram);
        clear(g.embed);
        clear(g.w1);
        clear(g.b1);
        clear(g.w2);
        clear(g.b2);
        return g;
    }

    // this += other, element-wise over all parameter arrays.
    void accumulate(const ModelParamsT& other) {
        auto add = [](std::vector<Real>& dst, const std::vector<Real>& src) {
            for (std::size_t i = 0; i < dst.size(); ++i) {
                dst[i] += src[i];
            }
        };
        add(bigram, other.bigram);
        add(embed, other.embed);
        add(w1, other.w1);
        add(b1, other.b1);
        add(w2, other.w2);
        add(b2, other.b2);
    }

    void scale(Real factor) {
        for_each_array([factor](std::vector<Real>& v) {
            for (Real& x : v) {
                x *= factor;
            }
        });
    }

    template <typename F>
    void for_each_array(F&& f) {
        f(bigram);
        f(embed);
        f(w1);
        f(b1);
        f(w2);
        f(b2);
    }

    template <typename F>
    void for_each_array(F&& f) const {
        f(bigram);
        f(embed);
        f(w1);
        f(b1);
        f(w2);
        f(b2);
    }
};

using ModelParams = ModelParamsT<double>;

template <typename To, typename From>
ModelParamsT<To> convert_params(const ModelParamsT<From>& p) {
    ModelParamsT<To> out;
    out.arch = p.arch;
    out.vocab_size = p.vocab_size;
    out.embed_dim = p.embed_dim;
    out.hidden_dim = p.hidden_dim;
    out.init_seed = p.init_seed;
    auto cast = [](const std::vector<From>& src, std::vector<To>& dst) {
        dst.resize(src.size());
        for (std::size_t i = 0; i < src.size(); ++i) {
            dst[i] = static_cast<To>(src[i]);
        }
    };
    cast(p.bigram, out.bigram);
    cast(p.embed, out.embed);
    cast(p.w1, out.w1);
    cast(p.b1, out.b1);
    cast(p.w2, out.w2);
    cast(p.b2, out.b2);
    return out;
}

// Entries drawn i.i.d. uniform in [-scale, +scale]; deterministic given seed.
ModelParams init_params(Rng& rng, Arch arch, int vocab_size, int embed_dim, int hidden_dim,
                        double scale);

std::vector<double> flatten_params(const ModelParams& p);
void unflatten_params(ModelParams& p, std::span<const double> flat);

// Checkpoints as a flat JSON record (arch, dims, seed, parameter arrays).
void save_checkpoint(const std::filesystem::path& path, const ModelParams& p);
ModelParams load_checkpoint(const std::filesystem::path& path);

namespace detail {

template <typename Real>
void check_tokens(const ModelParamsT<Real>& p, std::span<const int> toks, const char* field) {
    for (int t : toks) {
        if (t < 0 || t >= p.vocab_size) {
            throw std::domain_error(std::string("model: ") + field + " token " +
                                    std::to_string(t) + " outside vocab of size " +
                                    std::to_string(p.vocab_size));
        }
    }
}

// Mean embedding of prompt + response[0..i); zero vector for empty context.
template <typename Real>
void pooled_context(const ModelParamsT<Real>& p, std::span<const int> prompt,
                    std::span<const int> response, std::size_t i, std::vector<Real>& h) {
    const std::size_t d = static_cast<std::size_t>(p.embed_dim);
    h.assign(d, Real(0));
    const std::size_t count = prompt.size() + i;
    if (count == 0) {
        return;
    }
    auto add_embedding = [&](int tok) {
        const Real* e = p.embed.data() + static_cast<std::size_t>(tok) * d;
        for (std::size_t k = 0; k < d; ++k) {
            h[k] += e[k];
        }
    };
    for (int tok : prompt) {
        add_embedding(tok);
    }
    for (std::size_t j = 0; j < i; ++j) {
        add_embedding(response[j]);
    }
    const Real inv = Real(1) / static_cast<Real>(count);
    for (std::size_t k = 0; k < d; ++k) {
        h[k] *= inv;
    }
}

inline int bigram_context(std::span<const int> prompt, std::span<const int> response,
                          std::size_t i) {
    if (i > 0) {
        return response[i - 1];
    }
    return prompt.empty() ? 0 : prompt.back();
}

} // namespace detail

// Pre-softmax scores for every response position; row i depends only on the
// prompt and response[0..i).
template <typename Real>
MatrixT<Real> forward_logits(const ModelParamsT<Real>& p, std::span<const int> prompt,
                             std::span<const int> response) {
    detail::check_tokens(p, prompt, "prompt");
    detail::check_tokens(p, response, "response");
    const std::size_t vocab = static_cast<std::size_t>(p.vocab_size);
    MatrixT<Real> logits(response.size(), vocab);

    if (p.arch == Arch::TabularBigram) {
        for (std::size_t i = 0; i < response.size(); ++i) {
            const int prev = detail::bigram_context(prompt, response, i);
            const Real* row = p.bigram.data() + static_cast<std::size_t>(prev) * vocab;
            std::copy(row, row + vocab, logits.row(i).begin());
        }
        return logits;
    }

    const std::size_t d = static_cast<std::size_t>(p.embed_dim);
    const std::size_t hid = static_cast<std::size_t>(p.hidden_dim);
    std::vector<Real> h(d);
    std::vector<Real> act(hid);
    for (std::size_t i = 0; i < response.size(); ++i) {
        detail::pooled_context(p, prompt, response, i, h);
        for (std::size_t k = 0; k < hid; ++k) {
            Real pre = p.b1[k];
            const Real* w1row = p.w1.data() + k * d;
            for (std::size_t j = 0; j < d; ++j) {
                pre += w1row[j] * h[j];
            }
            act[k] = std::tanh(pre);
        }
        auto out = logits.row(i);
        for (std::size_t t = 0; t < vocab; ++t) {
            Real z = p.b2[t];
            const Real* w2row = p.w2.data() + t * hid;
            for (std::size_t k = 0; k < hid; ++k) {
                z += w2row[k] * act[k];
            }
            out[t] = z;
        }
    }
    return logits;
}

// Exact parameter gradient sum_{i,t} dlogits[i][t] * d z[i][t] / d theta.
template <typename Real>
ModelParamsT<Real> backward(const ModelParamsT<Real>& p, std::span<const int> prompt,
                            std::span<const int> response, const MatrixT<Real>& dlogits) {
    if (dlogits.rows != response.size() ||
        dlogits.cols != static_cast<std::size_t>(p.vocab_size)) {
        throw std::invalid_argument("backward: dlogits shape does not match forward output");
    }
    ModelParamsT<Real> grad = p.zeros_like();
    const std::size_t vocab = static_cast<std::size_t>(p.vocab_size);

    if (p.arch == Arch::TabularBigram) {
        for (std::size_t i = 0; i < response.size(); ++i) {
            const int prev = detail::bigram_context(prompt, response, i);
            Real* row = grad.bigram.data() + static_cast<std::size_t>(prev) * vocab;
            const auto g = dlogits.row(i);
            for (std::size_t t = 0; t < vocab; ++t) {
                row[t] += g[t];
            }
        }
        return grad;
    }

    const std::size_t d = static_cast<std::size_t>(p.embed_dim);
    const std::size_t hid = static_cast<std::size_t>(p.hidden_dim);
    std::vector<Real> h(d);
    std::vector<Real> act(hid);
    std::vector<Real> dact(hid);
    std::vector<Real> dpre(hid);
    std::vector<Real> dh(d);
    for (std::size_t i = 0; i < response.size(); ++i) {
        detail::pooled_context(p, prompt, response, i, h);
        for (std::size_t k = 0; k < hid; ++k) {
            Real pre = p.b1[k];
            const Real* w1row = p.w1.data() + k * d;
            for (std::size_t j = 0; j < d; ++j) {
                pre += w1row[j] * h[j];
            }
            act[k] = std::tanh(pre);
        }
        const auto g = dlogits.row(i);
        std::fill(dact.begin(), dact.end(), Real(0));
        for (std::size_t t = 0; t < vocab; ++t) {
            const Real gt = g[t];
            grad.b2[t] += gt;
            Real* gw2row = grad.w2.data() + t * hid;
            const Real* w2row = p.w2.data() + t * hid;
            for (std::size_t k = 0; k < hid; ++k) {
                gw2row[k] += gt * act[k];
                dact[k] += gt * w2row[k];
            }
        }
        for (std::size_t k = 0; k < hid; ++k) {
            dpre[k] = dact[k] * (Real(1) - act[k] * act[k]);
            grad.b1[k] += dpre[k];
        }
        std::fill(dh.begin(), dh.end(), Real(0));
        for (std::size_t k = 0; k < hid; ++k) {
            Real* gw1row = grad.w1.data() + k * d;
            const Real* w1row = p.w1.data() + k * d;
            const Real dp = dpre[k];
            for (std::size_t j = 0; j < d; ++j) {
                gw1row[j] += dp * h[j];
                dh[j] += dp * w1row[j];
            }
        }
        const std::size_t count = prompt.size() + i;
        if (count == 0) {
            continue;
        }
        const Real inv = Real(1) / static_cast<Real>(count);
        auto add_to_embedding = [&](int tok) {
            Real* ge = grad.embed.data() + static_cast<std::size_t>(tok) * d;
            for (std::size_t j = 0; j < d; ++j) {
                ge[j] += inv * dh[j];
            }
        };
        for (int tok : prompt) {
            add_to_embedding(tok);
        }
        for (std::size_t j = 0; j < i; ++j) {
            add_to_embedding(response[j]);
        }
    }
    return grad;
}

template <typename Real>
struct SequenceLogLik {
    Real total = Real(0);
    std::vector<Real> per_token;
};

template <typename Real>
SequenceLogLik<Real> sequence_log_likelihood(const ModelParamsT<Real>& p,
                                             std::span<const int> prompt,
                                             std::span<const int> response) {
    const MatrixT<Real> logits = forward_logits(p, prompt, response);
    SequenceLogLik<Real> out;
    out.per_token.resize(response.size());
    for (std::size_t i = 0; i < response.size(); ++i) {
        const auto row = logits.row(i);
        const Real lse = logsumexp(std::span<const Real>(row.data(), row.size()));
        out.per_token[i] = row[static_cast<std::size_t>(response[i])] - lse;
        out.total += out.per_token[i];
    }
    return out;
}

} // namespace prefopt
