// Times the serial reference batch evaluation against the OpenMP kernel and
// verifies that both produce bit-identical gradients.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <vector>

#include "prefopt/batch_eval.hpp"
#include "prefopt/dataset.hpp"
#include "prefopt/model.hpp"

using namespace prefopt;

namespace {

using Clock = std::chrono::steady_clock;

double time_ms(const Clock::time_point& a, const Clock::time_point& b) {
    return std::chrono::duration<double, std::milli>(b - a).count();
}

bool grads_equal(const ModelParams& a, const ModelParams& b) {
    return a == b;
}

} // namespace

int main(int argc, char** argv) {
    int repeats = 20;
    if (argc > 1) {
        repeats = std::atoi(argv[1]);
        if (repeats < 1) {
            std::fprintf(stderr, "usage: prefopt-bench [repeats]\n");
            return 1;
        }
    }

    Rng data_rng(42);
    PairwiseGenConfig gen;
    gen.n_pairs = 256;
    gen.vocab_size = 64;
    gen.prompt_len = 8;
    gen.resp_len = 16;
    gen.teacher_sharpness = 2.0;
    const Dataset data = gen_pairwise_dataset(data_rng, gen);

    Rng init_rng(7);
    const ModelParams policy = init_params(init_rng, Arch::MlpPool, gen.vocab_size, 16, 32, 0.1);
    const ModelParams reference = policy;
    const LossHyperparams hp;

    struct Case {
        Method method;
        const char* name;
    };
    const Case cases[] = {{Method::Bnf, "bnf"}, {Method::Dpo, "dpo"}};

    std::printf("%-6s %-8s %10s %12s %10s\n", "loss", "path", "threads", "ms/batch", "speedup");
    for (const Case& c : cases) {
        const std::vector<TrainItem> items = build_train_items(data, c.method);

        const auto t0 = Clock::now();
        BatchEvalT<double> serial;
        for (int r = 0; r < repeats; ++r) {
            serial = eval_batch_serial(policy, reference, data, items, c.method, hp);
        }
        const auto t1 = Clock::now();
        const double serial_ms = time_ms(t0, t1) / repeats;
        std::printf("%-6s %-8s %10d %12.3f %10s\n", c.name, "serial", 1, serial_ms, "1.00x");

        for (int threads : {2, 4}) {
            const auto t2 = Clock::now();
            BatchEvalT<double> parallel;
            for (int r = 0; r < repeats; ++r) {
                parallel = eval_batch(policy, reference, data, items, c.method, hp, threads);
            }
            const auto t3 = Clock::now();
            const double par_ms = time_ms(t2, t3) / repeats;
            if (!grads_equal(serial.grad, parallel.grad) || serial.loss != parallel.loss) {
                std::fprintf(stderr, "mismatch: %s with %d threads differs from serial\n", c.name,
                             threads);
                return 1;
            }
            std::printf("%-6s %-8s %10d %12.3f %9.2fx\n", c.name, "openmp", threads, par_ms,
                        serial_ms / par_ms);
        }
    }
    std::printf("all parallel results bit-identical to the serial reference\n");
    return 0;
}
