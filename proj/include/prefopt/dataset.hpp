#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "prefopt/rng.hpp"

namespace prefopt {

// One labeled response: prompt tokens, response tokens, +1 (preferred) or
// -1 (dispreferred), and an optional id linking the two sides of a pair.
struct PreferenceExample {
    std::vector<int> prompt;
    std::vector<int> response;
    int label = 1;
    std::optional<std::int64_t> pair_id;

    bool operator==(const PreferenceExample&) const = default;
};

struct Dataset {
    int vocab_size = 0;
    double pairing_ratio = 1.0; // fraction of pairs left intact at generation time
    std::vector<PreferenceExample> examples;

    bool operator==(const Dataset&) const = default;
};

struct PairwiseGenConfig {
    int n_pairs = 1;
    int vocab_size = 64;
    int prompt_len = 8;
    int resp_len = 16;
    double teacher_sharpness = 2.0;
};

struct NearDuplicateGenConfig {
    int n_pairs = 1;
    int vocab_size = 64;
    int resp_len = 16;
    int edit_tokens = 1;
};

// Samples prompts uniformly and two responses per prompt from a hidden
// bigram teacher (softmax of a fixed random score table scaled by
// teacher_sharpness); the response with the higher teacher log-likelihood
// is labeled +1, the other -1. Deterministic given the rng seed.
Dataset gen_pairwise_dataset(Rng& rng, const PairwiseGenConfig& cfg);

// Pairs that share an identical response except at exactly edit_tokens
// positions, where the dispreferred copy carries a different token.
// Prompts are a single uniform token per pair.
Dataset gen_near_duplicate_pairs(Rng& rng, const NearDuplicateGenConfig& cfg);

// Breaks floor((1 - pairing_ratio) * n_pairs) pairs, removing one member of
// each by fair coin. Survivors keep their tokens and labels; their pair_id
// is cleared. Records pairing_ratio on the result.
Dataset apply_pairing_mask(Rng& rng, const Dataset& d, double pairing_ratio);

// Checks every dataset invariant: token ids within vocab, labels in {+1,-1},
// nonempty responses, and each pair_id appearing on exactly one +1 and one
// -1 example with identical prompts. Throws std::runtime_error on violation.
void validate_dataset(const Dataset& d);

// JSONL persistence: a header line {"vocab_size":..,"pairing_ratio":..}
// followed by one example per line with keys prompt, response, label,
// pair_id (null allowed). read_dataset . write_dataset is the identity.
void write_dataset(const std::filesystem::path& path, const Dataset& d);
Dataset read_dataset(const std::filesystem::path& path);

} // namespace prefopt
