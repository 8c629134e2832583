#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "prefopt/dataset.hpp"
#include "prefopt/model.hpp"
#include "prefopt/numerics.hpp"

using namespace prefopt;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const char* name) {
    return fs::temp_directory_path() / name;
}

// Recomputes the teacher log-likelihood labeling oracle: replays the same
// score table from the seed and scores both responses of every pair.
std::vector<std::vector<double>> teacher_table(std::uint64_t seed, int vocab, double sharpness) {
    Rng rng(seed);
    std::vector<std::vector<double>> rows(vocab);
    std::vector<double> scores(vocab);
    for (int prev = 0; prev < vocab; ++prev) {
        for (int t = 0; t < vocab; ++t) {
            scores[t] = sharpness * rng.uniform(-1.0, 1.0);
        }
        rows[prev] = log_softmax(std::span<const double>(scores));
    }
    return rows;
}

double teacher_loglik(const std::vector<std::vector<double>>& table,
                      const PreferenceExample& ex) {
    int ctx = ex.prompt.back();
    double ll = 0.0;
    for (int tok : ex.response) {
        ll += table[static_cast<std::size_t>(ctx)][static_cast<std::size_t>(tok)];
        ctx = tok;
    }
    return ll;
}

} // namespace

TEST_CASE("gen_pairwise_dataset determinism and structure") {
    PairwiseGenConfig cfg;
    cfg.n_pairs = 100;
    cfg.vocab_size = 64;
    cfg.prompt_len = 8;
    cfg.resp_len = 16;
    cfg.teacher_sharpness = 2.0;

    Rng r1(7);
    Rng r2(7);
    const Dataset a = gen_pairwise_dataset(r1, cfg);
    const Dataset b = gen_pairwise_dataset(r2, cfg);
    CHECK(a == b);

    CHECK(a.examples.size() == 200);
    std::set<std::int64_t> ids;
    for (const auto& ex : a.examples) {
        REQUIRE(ex.pair_id.has_value());
        ids.insert(*ex.pair_id);
        CHECK(ex.prompt.size() == 8);
        CHECK(ex.response.size() == 16);
    }
    CHECK(ids.size() == 100);
    validate_dataset(a);
}

TEST_CASE("gen_pairwise_dataset labels follow the teacher") {
    PairwiseGenConfig cfg;
    cfg.n_pairs = 50;
    cfg.vocab_size = 16;
    cfg.prompt_len = 4;
    cfg.resp_len = 8;
    cfg.teacher_sharpness = 1.5;
    Rng rng(21);
    const Dataset d = gen_pairwise_dataset(rng, cfg);

    const auto table = teacher_table(21, cfg.vocab_size, cfg.teacher_sharpness);
    for (std::size_t i = 0; i < d.examples.size(); i += 2) {
        const auto& w = d.examples[i];
        const auto& l = d.examples[i + 1];
        REQUIRE(w.label == 1);
        REQUIRE(l.label == -1);
        REQUIRE(w.pair_id == l.pair_id);
        CHECK(teacher_loglik(table, w) >= teacher_loglik(table, l));
    }
}

TEST_CASE("gen_pairwise_dataset rejects degenerate configs") {
    PairwiseGenConfig cfg;
    cfg.vocab_size = 3;
    Rng rng(1);
    CHECK_THROWS_AS((void)gen_pairwise_dataset(rng, cfg), std::invalid_argument);
    cfg.vocab_size = 8;
    cfg.teacher_sharpness = 0.0;
    CHECK_THROWS_AS((void)gen_pairwise_dataset(rng, cfg), std::invalid_argument);
}

TEST_CASE("gen_near_duplicate_pairs hamming distance") {
    NearDuplicateGenConfig cfg;
    cfg.n_pairs = 40;
    cfg.vocab_size = 32;
    cfg.resp_len = 12;

    for (int edits : {1, 5, 12}) {
        cfg.edit_tokens = edits;
        Rng rng(3);
        const Dataset d = gen_near_duplicate_pairs(rng, cfg);
        validate_dataset(d);
        for (std::size_t i = 0; i < d.examples.size(); i += 2) {
            const auto& w = d.examples[i];
            const auto& l = d.examples[i + 1];
            int distance = 0;
            for (std::size_t k = 0; k < w.response.size(); ++k) {
                distance += w.response[k] != l.response[k];
            }
            CHECK(distance == edits);
        }
    }

    Rng r1(3), r2(3);
    cfg.edit_tokens = 1;
    CHECK(gen_near_duplicate_pairs(r1, cfg) == gen_near_duplicate_pairs(r2, cfg));

    cfg.edit_tokens = cfg.resp_len + 1;
    Rng r3(3);
    CHECK_THROWS_AS((void)gen_near_duplicate_pairs(r3, cfg), std::invalid_argument);
}

TEST_CASE("apply_pairing_mask") {
    PairwiseGenConfig cfg;
    cfg.n_pairs = 100;
    cfg.vocab_size = 16;
    cfg.prompt_len = 2;
    cfg.resp_len = 4;
    Rng gen_rng(5);
    const Dataset d = gen_pairwise_dataset(gen_rng, cfg);

    SUBCASE("ratio 1 is the identity") {
        Rng rng(7);
        const Dataset out = apply_pairing_mask(rng, d, 1.0);
        CHECK(out == d);
    }

    SUBCASE("ratio 0 halves the dataset and clears every pair_id") {
        Rng rng(7);
        const Dataset out = apply_pairing_mask(rng, d, 0.0);
        CHECK(out.examples.size() == 100);
        CHECK(out.pairing_ratio == 0.0);
        for (const auto& ex : out.examples) {
            CHECK_FALSE(ex.pair_id.has_value());
        }
    }

    SUBCASE("ratio 0.5 breaks exactly 50 of 100 pairs") {
        Rng rng(7);
        const Dataset out = apply_pairing_mask(rng, d, 0.5);
        CHECK(out.examples.size() == 150);
        std::set<std::int64_t> paired;
        for (const auto& ex : out.examples) {
            if (ex.pair_id.has_value()) {
                paired.insert(*ex.pair_id);
            }
        }
        CHECK(paired.size() == 50);
        validate_dataset(out);
    }

    SUBCASE("survivors keep tokens and labels") {
        Rng rng(9);
        const Dataset out = apply_pairing_mask(rng, d, 0.25);
        for (const auto& ex : out.examples) {
            bool found = false;
            for (const auto& orig : d.examples) {
                if (orig.prompt == ex.prompt && orig.response == ex.response &&
                    orig.label == ex.label) {
                    found = true;
                    break;
                }
            }
            CHECK(found);
        }
    }

    SUBCASE("invalid ratios and unpaired inputs are rejected") {
        Rng rng(7);
        CHECK_THROWS_AS((void)apply_pairing_mask(rng, d, -0.1), std::invalid_argument);
        CHECK_THROWS_AS((void)apply_pairing_mask(rng, d, 1.5), std::invalid_argument);
        Dataset singleton = d;
        singleton.examples[0].pair_id.reset();
        CHECK_THROWS(apply_pairing_mask(rng, singleton, 0.5));
    }
}

TEST_CASE("dataset jsonl round-trip") {
    PairwiseGenConfig cfg;
    cfg.n_pairs = 20;
    cfg.vocab_size = 16;
    cfg.prompt_len = 3;
    cfg.resp_len = 5;
    Rng rng(13);
    Dataset d = gen_pairwise_dataset(rng, cfg);
    d = apply_pairing_mask(rng, d, 0.5);

    const fs::path path = temp_file("prefopt_test_roundtrip.jsonl");
    write_dataset(path, d);
    const Dataset back = read_dataset(path);
    CHECK(back == d);
    fs::remove(path);
}

TEST_CASE("dataset jsonl error reporting") {
    const fs::path path = temp_file("prefopt_test_bad.jsonl");

    SUBCASE("label 0 names the line") {
        std::ofstream f(path);
        f << R"({"vocab_size":8,"pairing_ratio":1.0})" << "\n";
        f << R"({"prompt":[1],"response":[2],"label":0,"pair_id":null})" << "\n";
        f.close();
        CHECK_THROWS_WITH_AS((void)read_dataset(path), doctest::Contains("line 2"),
                             std::runtime_error);
    }

    SUBCASE("empty file is a missing header") {
        std::ofstream f(path);
        f.close();
        CHECK_THROWS_WITH_AS((void)read_dataset(path), doctest::Contains("missing header"),
                             std::runtime_error);
    }

    SUBCASE("malformed json names the line") {
        std::ofstream f(path);
        f << R"({"vocab_size":8,"pairing_ratio":1.0})" << "\n";
        f << "{not json\n";
        f.close();
        CHECK_THROWS_WITH_AS((void)read_dataset(path), doctest::Contains("line 2"),
                             std::runtime_error);
    }

    SUBCASE("vocab inconsistency is a validation error") {
        std::ofstream f(path);
        f << R"({"vocab_size":4,"pairing_ratio":1.0})" << "\n";
        f << R"({"prompt":[1],"response":[9],"label":1,"pair_id":null})" << "\n";
        f.close();
        CHECK_THROWS_WITH_AS((void)read_dataset(path), doctest::Contains("vocab"),
                             std::runtime_error);
    }

    SUBCASE("unknown keys are rejected") {
        std::ofstream f(path);
        f << R"({"vocab_size":4,"pairing_ratio":1.0})" << "\n";
        f << R"({"prompt":[1],"response":[2],"label":1,"pair_id":null,"extra":3})" << "\n";
        f.close();
        CHECK_THROWS_WITH_AS((void)read_dataset(path), doctest::Contains("unknown key"),
                             std::runtime_error);
    }

    fs::remove(path);
}
