// Serial reference vs OpenMP paths: GEMM kernels, batch gradients, decoding.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "mclas/decoding.hpp"
#include "mclas/kernels.hpp"
#include "mclas/training.hpp"

using namespace mclas;

namespace {

std::vector<double> random_values(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> v(n);
    for (auto& x : v) {
        x = u(rng);
    }
    return v;
}

template <bool Parallel>
void BM_GemmNN(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto a = random_values(n * n, 1);
    const auto b = random_values(n * n, 2);
    std::vector<double> c(n * n);
    for (auto _ : state) {
        std::fill(c.begin(), c.end(), 0.0);
        if constexpr (Parallel) {
            kernels::gemm_nn_parallel(a, b, c, n, n, n);
        } else {
            kernels::gemm_nn_serial(a, b, c, n, n, n);
        }
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * n * n));
}
BENCHMARK(BM_GemmNN<false>)->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(BM_GemmNN<true>)->Arg(64)->Arg(128)->Arg(256);

template <bool Parallel>
void BM_GemmTN(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto a = random_values(n * n, 3);
    const auto b = random_values(n * n, 4);
    std::vector<double> c(n * n);
    for (auto _ : state) {
        std::fill(c.begin(), c.end(), 0.0);
        if constexpr (Parallel) {
            kernels::gemm_tn_parallel(a, b, c, n, n, n);
        } else {
            kernels::gemm_tn_serial(a, b, c, n, n, n);
        }
        benchmark::DoNotOptimize(c.data());
    }
}
BENCHMARK(BM_GemmTN<false>)->Arg(128);
BENCHMARK(BM_GemmTN<true>)->Arg(128);

const Vocabulary kVocab = Vocabulary::with_content_size(30);

ModelConfig desk_model(std::size_t decoders) {
    ModelConfig c;
    c.d_model = 32;
    c.d_ff = 64;
    c.heads = 4;
    c.vocab_size = kVocab.size();
    c.dropout_p = 0.0;
    c.decoder_count = decoders;
    return c;
}

std::vector<Example> examples(std::size_t n) {
    std::mt19937_64 rng(5);
    std::vector<Example> out;
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back(generate_example(rng, kVocab, GenerationParams{}));
        out.back().id = i;
    }
    return out;
}

// One MCLAS optimizer step on a batch of 16; range(0) toggles the OpenMP batch path.
void BM_TrainStep(benchmark::State& state) {
    TrainConfig tc;
    tc.parallel = state.range(0) != 0;
    tc.batch_size = 16;
    const auto data = examples(256);
    Trainer trainer(Seq2SeqModel(desk_model(1), 1), Objective::MCLAS, kVocab, tc);
    for (auto _ : state) {
        benchmark::DoNotOptimize(trainer.step(data).loss);
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * tc.batch_size));
}
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

// Beam search over 32 documents; range(0) toggles document-level threading.
void BM_Decode(benchmark::State& state) {
    const auto docs = examples(32);
    const Seq2SeqModel model(desk_model(1), 2);
    DecodeConfig dc;
    dc.max_len = 40;
    for (auto _ : state) {
        auto res = decode_documents(model, docs, Objective::MCLAS, kVocab, dc, state.range(0) != 0);
        benchmark::DoNotOptimize(res.data());
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * docs.size()));
}
BENCHMARK(BM_Decode)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
