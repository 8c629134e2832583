#include "prefopt/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "prefopt/numerics.hpp"

namespace prefopt {

namespace {

using nlohmann::json;

// Sample one token from the categorical given by a log-probability row.
int sample_from_log_probs(Rng& rng, std::span<const double> log_probs) {
    const double u = rng.uniform01();
    double cum = 0.0;
    for (std::size_t t = 0; t < log_probs.size(); ++t) {
        cum += std::exp(log_probs[t]);
        if (u < cum) {
            return static_cast<int>(t);
        }
    }
    return static_cast<int>(log_probs.size() - 1);
}

void require_keys(const json& obj, std::initializer_list<const char*> keys,
                  const std::string& where) {
    for (const char* k : keys) {
        if (!obj.contains(k)) {
            throw std::runtime_error(where + ": missing key '" + k + "'");
        }
    }
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (std::find_if(keys.begin(), keys.end(),
                         [&](const char* k) { return it.key() == k; }) == keys.end()) {
            throw std::runtime_error(where + ": unknown key '" + it.key() + "'");
        }
    }
}

} // namespace

Dataset gen_pairwise_dataset(Rng& rng, const PairwiseGenConfig& cfg) {
    if (cfg.vocab_size < 4) {
        throw std::invalid_argument("gen_pairwise_dataset: vocab_size must be >= 4");
    }
    if (cfg.n_pairs < 1 || cfg.prompt_len < 1 || cfg.resp_len < 1) {
        throw std::invalid_argument("gen_pairwise_dataset: counts and lengths must be >= 1");
    }
    if (!(cfg.teacher_sharpness > 0.0)) {
        throw std::invalid_argument("gen_pairwise_dataset: teacher_sharpness must be > 0");
    }

    const int vocab = cfg.vocab_size;

    // Hidden teacher: fixed random bigram scores, turned into per-context
    // log-probabilities with the sharpness factor.
    std::vector<std::vector<double>> teacher_log_probs(vocab);
    {
        std::vector<double> scores(vocab);
        for (int prev = 0; prev < vocab; ++prev) {
            for (int t = 0; t < vocab; ++t) {
                scores[t] = cfg.teacher_sharpness * rng.uniform(-1.0, 1.0);
            }
            teacher_log_probs[prev] = log_softmax(std::span<const double>(scores));
        }
    }

    auto sample_response = [&](int start_ctx, std::vector<int>& out, double& log_lik) {
        out.clear();
        log_lik = 0.0;
        int ctx = start_ctx;
        for (int i = 0; i < cfg.resp_len; ++i) {
            const int tok = sample_from_log_probs(rng, teacher_log_probs[ctx]);
            log_lik += teacher_log_probs[ctx][tok];
            out.push_back(tok);
            ctx = tok;
        }
    };

    Dataset d;
    d.vocab_size = vocab;
    d.pairing_ratio = 1.0;
    d.examples.reserve(static_cast<std::size_t>(cfg.n_pairs) * 2);

    std::vector<int> first, second;
    for (int p = 0; p < cfg.n_pairs; ++p) {
        std::vector<int> prompt(cfg.prompt_len);
        for (int& t : prompt) {
            t = static_cast<int>(rng.uniform_index(static_cast<std::size_t>(vocab)));
        }
        double ll_first = 0.0;
        double ll_second = 0.0;
        sample_response(prompt.back(), first, ll_first);
        sample_response(prompt.back(), second, ll_second);
        // Ties go to the first sample.
        const bool first_wins = ll_first >= ll_second;
        d.examples.push_back({prompt, first_wins ? first : second, +1, p});
        d.examples.push_back({prompt, first_wins ? second : first, -1, p});
    }
    return d;
}

Dataset gen_near_duplicate_pairs(Rng& rng, const NearDuplicateGenConfig& cfg) {
    if (cfg.n_pairs < 1 || cfg.resp_len < 1) {
        throw std::invalid_argument("gen_near_duplicate_pairs: counts must be >= 1");
    }
    if (cfg.vocab_size < 2) {
        throw std::invalid_argument("gen_near_duplicate_pairs: vocab_size must be >= 2");
    }
    if (cfg.edit_tokens < 1 || cfg.edit_tokens > cfg.resp_len) {
        throw std::invalid_argument(
            "gen_near_duplicate_pairs: edit_tokens must be in [1, resp_len]");
    }

    const std::size_t vocab = static_cast<std::size_t>(cfg.vocab_size);
    Dataset d;
    d.vocab_size = cfg.vocab_size;
    d.pairing_ratio = 1.0;
    d.examples.reserve(static_cast<std::size_t>(cfg.n_pairs) * 2);

    std::vector<int> positions(cfg.resp_len);
    for (int p = 0; p < cfg.n_pairs; ++p) {
        std::vector<int> prompt{static_cast<int>(rng.uniform_index(vocab))};
        std::vector<int> preferred(cfg.resp_len);
        for (int& t : preferred) {
            t = static_cast<int>(rng.uniform_index(vocab));
        }
        // Partial Fisher-Yates picks edit positions without replacement.
        std::iota(positions.begin(), positions.end(), 0);
        for (int k = 0; k < cfg.edit_tokens; ++k) {
            const std::size_t j = k + rng.uniform_index(positions.size() - k);
            std::swap(positions[k], positions[j]);
        }
        std::vector<int> dispreferred = preferred;
        for (int k = 0; k < cfg.edit_tokens; ++k) {
            const int pos = positions[k];
            int replacement = static_cast<int>(rng.uniform_index(vocab - 1));
            if (replacement >= preferred[pos]) {
                ++replacement;
            }
            dispreferred[pos] = replacement;
        }
        d.examples.push_back({prompt, preferred, +1, p});
        d.examples.push_back({prompt, dispreferred, -1, p});
    }
    return d;
}

Dataset apply_pairing_mask(Rng& rng, const Dataset& d, double pairing_ratio) {
    if (!(pairing_ratio >= 0.0 && pairing_ratio <= 1.0)) {
        throw std::invalid_argument("apply_pairing_mask: pairing_ratio must be in [0, 1]");
    }
    validate_dataset(d);

    // Group example indices by pair, in first-appearance order.
    std::vector<std::int64_t> pair_order;
    std::map<std::int64_t, std::pair<int, int>> members; // pair_id -> (+1 idx, -1 idx)
    for (std::size_t i = 0; i < d.examples.size(); ++i) {
        const auto& ex = d.examples[i];
        if (!ex.pair_id.has_value()) {
            throw std::invalid_argument(
                "apply_pairing_mask: dataset must contain only complete pairs (example " +
                std::to_string(i) + " has no pair_id)");
        }
        auto [it, inserted] = members.try_emplace(*ex.pair_id, -1, -1);
        if (inserted) {
            pair_order.push_back(*ex.pair_id);
        }
        (ex.label == 1 ? it->second.first : it->second.second) = static_cast<int>(i);
    }

    const std::size_t n_pairs = pair_order.size();
    const std::size_t n_broken =
        static_cast<std::size_t>(std::floor((1.0 - pairing_ratio) * static_cast<double>(n_pairs)));

    // Deterministic selection: shuffle pair positions, break the first n_broken.
    std::vector<std::size_t> perm(n_pairs);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (std::size_t k = 0; k + 1 < n_pairs; ++k) {
        const std::size_t j = k + rng.uniform_index(n_pairs - k);
        std::swap(perm[k], perm[j]);
    }

    std::vector<int> drop(d.examples.size(), 0);
    std::vector<int> singleton(d.examples.size(), 0);
    for (std::size_t k = 0; k < n_broken; ++k) {
        const auto [w_idx, l_idx] = members.at(pair_order[perm[k]]);
        const bool drop_preferred = rng.uniform01() < 0.5;
        drop[drop_preferred ? w_idx : l_idx] = 1;
        singleton[drop_preferred ? l_idx : w_idx] = 1;
    }

    Dataset out;
    out.vocab_size = d.vocab_size;
    out.pairing_ratio = pairing_ratio;
    for (std::size_t i = 0; i < d.examples.size(); ++i) {
        if (drop[i]) {
            continue;
        }
        PreferenceExample ex = d.examples[i];
        if (singleton[i]) {
            ex.pair_id.reset();
        }
        out.examples.push_back(std::move(ex));
    }
    return out;
}

void validate_dataset(const Dataset& d) {
    if (d.vocab_size < 2) {
        throw std::runtime_error("dataset: vocab_size must be >= 2");
    }
    std::map<std::int64_t, std::pair<int, int>> pair_members;
    for (std::size_t i = 0; i < d.examples.size(); ++i) {
        const auto& ex = d.examples[i];
        if (ex.label != 1 && ex.label != -1) {
            throw std::runtime_error("dataset: example " + std::to_string(i) +
                                     ": label must be +1 or -1");
        }
        if (ex.response.empty()) {
            throw std::runtime_error("dataset: example " + std::to_string(i) +
                                     ": response must be nonempty");
        }
        auto check_tokens = [&](const std::vector<int>& toks, const char* field) {
            for (int t : toks) {
                if (t < 0 || t >= d.vocab_size) {
                    throw std::runtime_error("dataset: example " + std::to_string(i) + ": " +
                                             field + " token " + std::to_string(t) +
                                             " outside vocab of size " +
                                             std::to_string(d.vocab_size));
                }
            }
        };
        check_tokens(ex.prompt, "prompt");
        check_tokens(ex.response, "response");
        if (ex.pair_id.has_value()) {
            auto& slot = pair_members.try_emplace(*ex.pair_id, -1, -1).first->second;
            int& side = (ex.label == 1) ? slot.first : slot.second;
            if (side != -1) {
                throw std::runtime_error("dataset: pair " + std::to_string(*ex.pair_id) +
                                         " has two examples with label " +
                                         std::to_string(ex.label));
            }
            side = static_cast<int>(i);
        }
    }
    for (const auto& [pid, slot] : pair_members) {
        if (slot.first < 0 || slot.second < 0) {
            throw std::runtime_error("dataset: pair " + std::to_string(pid) +
                                     " is missing one side");
        }
        if (d.examples[slot.first].prompt != d.examples[slot.second].prompt) {
            throw std::runtime_error("dataset: pair " + std::to_string(pid) +
                                     " members have different prompts");
        }
    }
}

void write_dataset(const std::filesystem::path& path, const Dataset& d) {
    validate_dataset(d);
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("write_dataset: cannot open " + path.string());
    }
    json header;
    header["vocab_size"] = d.vocab_size;
    header["pairing_ratio"] = d.pairing_ratio;
    out << header.dump() << "\n";
    for (const auto& ex : d.examples) {
        json line;
        line["prompt"] = ex.prompt;
        line["response"] = ex.response;
        line["label"] = ex.label;
        if (ex.pair_id.has_value()) {
            line["pair_id"] = *ex.pair_id;
        } else {
            line["pair_id"] = nullptr;
        }
        out << line.dump() << "\n";
    }
    if (!out) {
        throw std::runtime_error("write_dataset: write failed for " + path.string());
    }
}

Dataset read_dataset(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("read_dataset: cannot open " + path.string());
    }
    std::string line;
    std::size_t line_no = 0;

    auto parse_line = [&](const std::string& text) {
        try {
            return json::parse(text);
        } catch (const json::parse_error& e) {
            throw std::runtime_error("read_dataset: line " + std::to_string(line_no) + ": " +
                                     e.what());
        }
    };

    Dataset d;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        const json obj = parse_line(line);
        const std::string where = "read_dataset: line " + std::to_string(line_no);
        if (!have_header) {
            require_keys(obj, {"vocab_size", "pairing_ratio"}, where);
            d.vocab_size = obj.at("vocab_size").get<int>();
            d.pairing_ratio = obj.at("pairing_ratio").get<double>();
            have_header = true;
            continue;
        }
        require_keys(obj, {"prompt", "response", "label", "pair_id"}, where);
        PreferenceExample ex;
        ex.prompt = obj.at("prompt").get<std::vector<int>>();
        ex.response = obj.at("response").get<std::vector<int>>();
        ex.label = obj.at("label").get<int>();
        if (ex.label != 1 && ex.label != -1) {
            throw std::runtime_error(where + ": label must be +1 or -1");
        }
        if (!obj.at("pair_id").is_null()) {
            ex.pair_id = obj.at("pair_id").get<std::int64_t>();
        }
        d.examples.push_back(std::move(ex));
    }
    if (!have_header) {
        throw std::runtime_error("read_dataset: missing header");
    }
    validate_dataset(d);
    return d;
}

} // namespace prefopt
