#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "prefopt/batch_eval.hpp"
#include "prefopt/trainer.hpp"

using namespace prefopt;

namespace {

Dataset make_dataset(std::uint64_t seed) {
    PairwiseGenConfig cfg;
    cfg.n_pairs = 32;
    cfg.vocab_size = 24;
    cfg.prompt_len = 3;
    cfg.resp_len = 6;
    cfg.teacher_sharpness = 2.0;
    Rng rng(seed);
    return gen_pairwise_dataset(rng, cfg);
}

} // namespace

TEST_CASE("openmp batch evaluation is bit-identical to the serial reference") {
    const Dataset data = make_dataset(31);
    Rng rng(8);
    const ModelParams policy = init_params(rng, Arch::MlpPool, data.vocab_size, 6, 8, 0.2);
    Rng rng2(9);
    const ModelParams reference = init_params(rng2, Arch::MlpPool, data.vocab_size, 6, 8, 0.2);
    const LossHyperparams hp;

    for (Method method : {Method::NllPll, Method::Dpo, Method::Ipo, Method::Slic, Method::Simpo,
                          Method::Bnf}) {
        const std::vector<TrainItem> items = build_train_items(data, method);
        const BatchEvalT<double> serial =
            eval_batch_serial(policy, reference, data, items, method, hp);
        for (int threads : {2, 3, 4}) {
            const BatchEvalT<double> parallel =
                eval_batch(policy, reference, data, items, method, hp, threads);
            CHECK(parallel.loss == serial.loss);
            CHECK(parallel.grad == serial.grad);
            CHECK(parallel.mean_logp_w == serial.mean_logp_w);
            CHECK(parallel.mean_logp_l == serial.mean_logp_l);
        }
    }
}

TEST_CASE("train_run with threads matches the single-threaded run bitwise") {
    const Dataset data = make_dataset(37);
    Rng rng(4);
    const ModelParams init = init_params(rng, Arch::MlpPool, data.vocab_size, 6, 8, 0.2);

    TrainConfig cfg;
    cfg.method = Method::Bnf;
    cfg.steps = 15;
    cfg.batch_size = 16;
    cfg.lr_peak = 5e-3;
    cfg.seed = 21;

    cfg.threads = 1;
    const TrainResult serial = train_run(cfg, init, data);
    cfg.threads = 4;
    const TrainResult parallel = train_run(cfg, init, data);

    CHECK(serial.params == parallel.params);
    REQUIRE(serial.log.size() == parallel.log.size());
    for (std::size_t i = 0; i < serial.log.size(); ++i) {
        CHECK(serial.log[i].loss == parallel.log[i].loss);
        CHECK(serial.log[i].mean_logp_l == parallel.log[i].mean_logp_l);
    }
}
