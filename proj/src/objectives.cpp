#include "mclas/objectives.hpp"

#include <algorithm>
#include <stdexcept>

namespace mclas {

namespace {

std::size_t count_hits(const Tensor& logits, std::span<const TokenId> targets,
                       std::size_t begin, std::size_t end) {
    const std::size_t vocab = logits.cols();
    const auto v = logits.values();
    std::size_t hits = 0;
    for (std::size_t r = begin; r < end; ++r) {
        const auto row = v.subspan(r * vocab, vocab);
        const auto best = std::max_element(row.begin(), row.end()) - row.begin();
        hits += static_cast<TokenId>(best) == targets[r] ? 1 : 0;
    }
    return hits;
}

std::vector<std::uint8_t> span_mask(std::size_t rows, std::size_t begin, std::size_t end) {
    std::vector<std::uint8_t> mask(rows, 0);
    for (std::size_t r = begin; r < end; ++r) {
        mask[r] = 1;
    }
    return mask;
}

const Tokens& require_sum_b(const Example& ex) {
    if (!ex.sum_b) {
        throw std::invalid_argument("example " + std::to_string(ex.id) +
                                    " has no cross-lingual summary");
    }
    return *ex.sum_b;
}

// Sum-reduced NLL of [BOS] target [EOS] through one decoder.
Tensor single_target_loss(const Seq2SeqModel& model, ParameterBinder& binder,
                          const Tensor& memory, std::span<const TokenId> target,
                          std::size_t which, const ForwardOptions& opts, std::size_t& tokens,
                          std::size_t& correct) {
    const Tokens seq = wrap_summary(target);
    const Tokens inputs(seq.begin(), seq.end() - 1);
    const Tokens targets(seq.begin() + 1, seq.end());
    auto out = decode_teacher_forced(model, binder, memory, inputs, which, opts);
    tokens += targets.size();
    correct += count_hits(out.logits, targets, 0, targets.size());
    return cross_entropy(out.logits, targets, {}, Reduction::Sum);
}

}  // namespace

const char* to_string(TrainingMode mode) {
    switch (mode) {
        case TrainingMode::NCLS:
            return "ncls";
        case TrainingMode::NCLS_MS:
            return "ncls_ms";
        case TrainingMode::MCLAS:
            return "mclas";
    }
    return "?";
}

TrainingMode parse_mode(const std::string& text) {
    if (text == "ncls") {
        return TrainingMode::NCLS;
    }
    if (text == "ncls_ms" || text == "ncls+ms") {
        return TrainingMode::NCLS_MS;
    }
    if (text == "mclas") {
        return TrainingMode::MCLAS;
    }
    throw std::invalid_argument("unknown mode '" + text + "' (expected ncls|ncls_ms|mclas)");
}

Objective objective_for(TrainingMode mode) {
    switch (mode) {
        case TrainingMode::NCLS:
            return Objective::NCLS;
        case TrainingMode::NCLS_MS:
            return Objective::NCLS_MS;
        case TrainingMode::MCLAS:
            return Objective::MCLAS;
    }
    return Objective::MCLAS;
}

const char* to_string(Objective objective) {
    switch (objective) {
        case Objective::Monolingual:
            return "mono";
        case Objective::NCLS:
            return "ncls";
        case Objective::NCLS_MS:
            return "ncls_ms";
        case Objective::MCLAS:
            return "mclas";
    }
    return "?";
}

std::size_t decoder_count_for(Objective objective) {
    return objective == Objective::NCLS_MS ? 2 : 1;
}

Tokens wrap_summary(std::span<const TokenId> tokens) {
    Tokens out;
    out.reserve(tokens.size() + 2);
    out.push_back(Vocabulary::kBos);
    out.insert(out.end(), tokens.begin(), tokens.end());
    out.push_back(Vocabulary::kEos);
    return out;
}

ConcatTarget build_concat_target(std::span<const TokenId> sum_a, std::span<const TokenId> sum_b,
                                 const Vocabulary& vocab) {
    auto check = [&](std::span<const TokenId> seg, bool lang_a, const char* name) {
        for (auto t : seg) {
            if (t == Vocabulary::kLsep) {
                throw std::invalid_argument(std::string("[LSEP] inside ") + name);
            }
            if (lang_a ? !vocab.in_a(t) : !vocab.in_b(t)) {
                throw std::invalid_argument(std::string(name) + " token " + std::to_string(t) +
                                            " is outside its language range");
            }
        }
    };
    check(sum_a, true, "sum_a");
    check(sum_b, false, "sum_b");
    ConcatTarget t;
    t.tokens.reserve(sum_a.size() + sum_b.size() + 3);
    t.tokens.push_back(Vocabulary::kBos);
    t.tokens.insert(t.tokens.end(), sum_a.begin(), sum_a.end());
    t.lsep_index = t.tokens.size();
    t.tokens.push_back(Vocabulary::kLsep);
    t.tokens.insert(t.tokens.end(), sum_b.begin(), sum_b.end());
    t.tokens.push_back(Vocabulary::kEos);
    t.span_a_begin = 1;
    t.span_a_end = t.lsep_index + 1;
    t.span_b_begin = t.lsep_index + 1;
    t.span_b_end = t.tokens.size();
    return t;
}

void check_model_for(const Seq2SeqModel& model, Objective objective) {
    const auto need = decoder_count_for(objective);
    if (model.decoder_count() != need) {
        throw ConfigError(std::string("objective ") + to_string(objective) + " needs " +
                          std::to_string(need) + " decoder(s), model has " +
                          std::to_string(model.decoder_count()));
    }
}

ExampleLoss example_loss(const Seq2SeqModel& model, ParameterBinder& binder, const Example& ex,
                         Objective objective, const Vocabulary& vocab, const ForwardOptions& opts,
                         const LossWeights& weights) {
    check_model_for(model, objective);
    ExampleLoss out;
    const Tensor memory = encode(model, binder, ex.doc, opts);
    switch (objective) {
        case Objective::Monolingual: {
            out.total = single_target_loss(model, binder, memory, ex.sum_a, 0, opts, out.tokens,
                                           out.correct);
            out.part_a = out.total.item();
            break;
        }
        case Objective::NCLS: {
            out.total = single_target_loss(model, binder, memory, require_sum_b(ex), 0, opts,
                                           out.tokens, out.correct);
            out.part_b = out.total.item();
            break;
        }
        case Objective::NCLS_MS: {
            const auto& sum_b = require_sum_b(ex);
            Tensor la = single_target_loss(model, binder, memory, ex.sum_a, 0, opts, out.tokens,
                                           out.correct);
            Tensor lb = single_target_loss(model, binder, memory, sum_b, 1, opts, out.tokens,
                                           out.correct);
            out.part_a = la.item();
            out.part_b = lb.item();
            out.total = add_scalars({scale(la, weights.mono), scale(lb, weights.cross)});
            break;
        }
        case Objective::MCLAS: {
            const auto target = build_concat_target(ex.sum_a, require_sum_b(ex), vocab);
            const Tokens inputs = target.inputs();
            const Tokens targets = target.targets();
            auto dec = decode_teacher_forced(model, binder, memory, inputs, 0, opts);
            const std::size_t rows = targets.size();
            // Target index i is predicted by logit row i - 1.
            const auto mask_a = span_mask(rows, target.span_a_begin - 1, target.span_a_end - 1);
            const auto mask_b = span_mask(rows, target.span_b_begin - 1, target.span_b_end - 1);
            out.total = cross_entropy(dec.logits, targets, {}, Reduction::Sum);
            {
                NoGradGuard guard;
                out.part_a = cross_entropy(dec.logits, targets, mask_a, Reduction::Sum).item();
                out.part_b = cross_entropy(dec.logits, targets, mask_b, Reduction::Sum).item();
            }
            out.tokens = rows;
            out.correct = count_hits(dec.logits, targets, 0, rows);
            break;
        }
    }
    return out;
}

BatchResult batch_loss(const Seq2SeqModel& model, std::span<const Example> batch,
                       Objective objective, const Vocabulary& vocab, const BatchOptions& opts) {
    check_model_for(model, objective);
    const std::size_t n = batch.size();
    struct Slot {
        double loss = 0.0, part_a = 0.0, part_b = 0.0;
        std::size_t tokens = 0, correct = 0;
        Gradients grads;
    };
    std::vector<Slot> slots(n);

    auto run_one = [&](std::size_t i) {
        std::mt19937_64 rng(derive_seed(opts.seed, opts.stream, i));
        ForwardOptions fwd;
        fwd.train = opts.train;
        fwd.rng = &rng;
        Slot& s = slots[i];
        if (opts.with_gradients) {
            ParameterBinder binder(model.params(), true);
            auto loss = example_loss(model, binder, batch[i], objective, vocab, fwd, opts.weights);
            loss.total.backward();
            s.grads = model.params().zero_gradients();
            binder.accumulate_gradients(s.grads);
            s.loss = loss.total.item();
            s.part_a = loss.part_a;
            s.part_b = loss.part_b;
            s.tokens = loss.tokens;
            s.correct = loss.correct;
        } else {
            NoGradGuard guard;
            ParameterBinder binder(model.params(), false);
            auto loss = example_loss(model, binder, batch[i], objective, vocab, fwd, opts.weights);
            s.loss = loss.total.item();
            s.part_a = loss.part_a;
            s.part_b = loss.part_b;
            s.tokens = loss.tokens;
            s.correct = loss.correct;
        }
    };

    if (opts.parallel && n > 1) {
        std::exception_ptr error;
        const auto count = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(dynamic, 1)
        for (std::int64_t i = 0; i < count; ++i) {
            try {
                run_one(static_cast<std::size_t>(i));
            } catch (...) {
#pragma omp critical(mclas_batch_error)
                if (!error) {
                    error = std::current_exception();
                }
            }
        }
        if (error) {
            std::rethrow_exception(error);
        }
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            run_one(i);
        }
    }

    // Fixed-order reduction keeps results independent of thread scheduling.
    BatchResult out;
    out.examples = n;
    if (opts.with_gradients) {
        out.grad_sum = model.params().zero_gradients();
    }
    for (auto& s : slots) {
        out.loss_sum += s.loss;
        out.part_a_sum += s.part_a;
        out.part_b_sum += s.part_b;
        out.tokens += s.tokens;
        out.correct += s.correct;
        if (opts.with_gradients) {
            for (std::size_t p = 0; p < out.grad_sum.size(); ++p) {
                auto& dst = out.grad_sum[p];
                const auto& src = s.grads[p];
                for (std::size_t j = 0; j < dst.size(); ++j) {
                    dst[j] += src[j];
                }
            }
            s.grads.clear();
        }
    }
    return out;
}

namespace {

BatchResult eval_batch(const Seq2SeqModel& model, std::span<const Example> batch,
                       Objective objective, const Vocabulary& vocab) {
    if (batch.empty()) {
        throw std::invalid_argument("loss over an empty batch");
    }
    BatchOptions opts;
    return batch_loss(model, batch, objective, vocab, opts);
}

}  // namespace

double loss_ncls(const Seq2SeqModel& model, std::span<const Example> batch, const Vocabulary& vocab) {
    auto r = eval_batch(model, batch, Objective::NCLS, vocab);
    return r.loss_sum / static_cast<double>(r.examples);
}

double loss_ncls_ms(const Seq2SeqModel& model, std::span<const Example> batch,
                    const Vocabulary& vocab) {
    auto r = eval_batch(model, batch, Objective::NCLS_MS, vocab);
    return r.loss_sum / static_cast<double>(r.examples);
}

McLasLoss loss_mclas(const Seq2SeqModel& model, std::span<const Example> batch,
                     const Vocabulary& vocab) {
    auto r = eval_batch(model, batch, Objective::MCLAS, vocab);
    const double n = static_cast<double>(r.examples);
    return McLasLoss{r.loss_sum / n, r.part_a_sum / n, r.part_b_sum / n};
}

double loss_monolingual(const Seq2SeqModel& model, std::span<const Example> batch,
                        const Vocabulary& vocab) {
    auto r = eval_batch(model, batch, Objective::Monolingual, vocab);
    return r.loss_sum / static_cast<double>(r.examples);
}

}  // namespace mclas
