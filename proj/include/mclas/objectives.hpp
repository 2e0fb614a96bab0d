#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mclas/corpus.hpp"
#include "mclas/model.hpp"

namespace mclas {

enum class TrainingMode { NCLS, NCLS_MS, MCLAS };

// Monolingual is the pretraining objective ([BOS] S^A [EOS]).
enum class Objective { Monolingual, NCLS, NCLS_MS, MCLAS };

const char* to_string(TrainingMode mode);
TrainingMode parse_mode(const std::string& text);
Objective objective_for(TrainingMode mode);
const char* to_string(Objective objective);
std::size_t decoder_count_for(Objective objective);

// [BOS] S^A [LSEP] S^B [EOS]. Spans index the predicted tokens: span_a covers
// S^A and the [LSEP] prediction, span_b covers S^B and [EOS].
struct ConcatTarget {
    Tokens tokens;
    std::size_t span_a_begin = 0;
    std::size_t span_a_end = 0;
    std::size_t span_b_begin = 0;
    std::size_t span_b_end = 0;
    std::size_t lsep_index = 0;

    // Decoder input (all but the last token) and the shifted targets.
    Tokens inputs() const { return Tokens(tokens.begin(), tokens.end() - 1); }
    Tokens targets() const { return Tokens(tokens.begin() + 1, tokens.end()); }
};

ConcatTarget build_concat_target(std::span<const TokenId> sum_a, std::span<const TokenId> sum_b,
                                 const Vocabulary& vocab);

// [BOS] tokens [EOS]
Tokens wrap_summary(std::span<const TokenId> tokens);

// Throws ConfigError unless the model's decoder count matches the objective.
void check_model_for(const Seq2SeqModel& model, Objective objective);

struct LossWeights {
    double mono = 1.0;
    double cross = 1.0;
};

// Per-example, sum-reduced NLL with its two components. For MCLAS the parts
// are the span_a/span_b restrictions of the same forward pass; for NCLS+MS
// they are the two decoders' losses; single-target objectives fill one part.
struct ExampleLoss {
    Tensor total;
    double part_a = 0.0;
    double part_b = 0.0;
    std::size_t tokens = 0;
    std::size_t correct = 0;  // teacher-forced next-token hits
};

ExampleLoss example_loss(const Seq2SeqModel& model, ParameterBinder& binder, const Example& ex,
                         Objective objective, const Vocabulary& vocab, const ForwardOptions& opts,
                         const LossWeights& weights = {});

struct BatchOptions {
    bool train = false;  // enables dropout
    bool with_gradients = false;
    bool parallel = true;
    std::uint64_t seed = 0;
    std::uint64_t stream = 0;  // distinguishes micro-batches for dropout draws
    LossWeights weights;
};

// Sums over the batch; callers divide by `examples` for the per-batch mean.
struct BatchResult {
    double loss_sum = 0.0;
    double part_a_sum = 0.0;
    double part_b_sum = 0.0;
    std::size_t examples = 0;
    std::size_t tokens = 0;
    std::size_t correct = 0;
    Gradients grad_sum;
};

BatchResult batch_loss(const Seq2SeqModel& model, std::span<const Example> batch,
                       Objective objective, const Vocabulary& vocab, const BatchOptions& opts);

// Eval-mode batch means (per-example sum reduction, batch mean).
double loss_ncls(const Seq2SeqModel& model, std::span<const Example> batch, const Vocabulary& vocab);
double loss_ncls_ms(const Seq2SeqModel& model, std::span<const Example> batch,
                    const Vocabulary& vocab);
struct McLasLoss {
    double total = 0.0;
    double loss_a_part = 0.0;
    double loss_b_part = 0.0;
};
McLasLoss loss_mclas(const Seq2SeqModel& model, std::span<const Example> batch,
                     const Vocabulary& vocab);
double loss_monolingual(const Seq2SeqModel& model, std::span<const Example> batch,
                        const Vocabulary& vocab);

}  // namespace mclas
