#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mclas/objectives.hpp"
#include "mclas/optim.hpp"

namespace mclas {

class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TrainConfig {
    double base_lr_enc = 0.05;
    double base_lr_dec = 0.05;
    std::uint64_t warmup_enc = 200;
    std::uint64_t warmup_dec = 100;
    std::size_t batch_size = 16;
    std::size_t accum = 1;
    std::size_t max_steps = 1000;
    std::size_t eval_every = 100;
    // Evaluations without improvement before stopping; 0 disables early stopping.
    std::size_t patience = 0;
    std::uint64_t seed = 1;
    AdamHyper adam;
    bool parallel = true;

    // Full-scale values from the original training recipe.
    static TrainConfig full_scale_preset();
    static TrainConfig desk_preset() { return {}; }

    std::map<std::string, std::string> to_meta(const std::string& prefix = "train.") const;
};

struct LogRecord {
    std::size_t step = 0;
    double lr_enc = 0.0;
    double lr_dec = 0.0;
    double loss = 0.0;
    double loss_a_part = 0.0;
    double loss_b_part = 0.0;
};

struct EvalRecord {
    std::size_t step = 0;
    double per_token_loss = 0.0;
    double ppl = 0.0;
    double accuracy = 0.0;  // teacher-forced next-token accuracy
};

// Teacher-forced validation over a split (eval mode).
EvalRecord evaluate_split(const Seq2SeqModel& model, const std::vector<Example>& data,
                          Objective objective, const Vocabulary& vocab, bool parallel = true);

// Owns one model and its two optimizers (encoder side / decoders).
class Trainer {
public:
    Trainer(Seq2SeqModel model, Objective objective, Vocabulary vocab, TrainConfig config);

    // One optimizer update built from `accum` micro-batches drawn from `data`.
    LogRecord step(const std::vector<Example>& data);

    // Gradient-accumulated update from explicit micro-batches. The update
    // uses the mean over every example of all micro-batches.
    LogRecord step_on(const std::vector<std::span<const Example>>& micro_batches);

    const Seq2SeqModel& model() const { return model_; }
    Seq2SeqModel& model() { return model_; }
    std::size_t steps_done() const { return steps_; }
    const OptimizerState& encoder_optimizer() const { return enc_opt_; }
    const OptimizerState& decoder_optimizer() const { return dec_opt_; }

    // Model, optimizer moments and sampler position; reload resumes exactly.
    void save_state(const std::filesystem::path& path) const;
    static Trainer load_state(const std::filesystem::path& path, Vocabulary vocab,
                              TrainConfig config);

private:
    std::span<const Example> next_batch(const std::vector<Example>& data);

    Seq2SeqModel model_;
    Objective objective_;
    Vocabulary vocab_;
    TrainConfig config_;
    OptimizerState enc_opt_;
    OptimizerState dec_opt_;
    std::size_t steps_ = 0;
    std::uint64_t consumed_ = 0;      // examples drawn so far
    std::uint64_t micro_batches_ = 0;  // dropout stream counter
    std::vector<Example> batch_buf_;
    std::uint64_t cached_epoch_ = ~std::uint64_t{0};
    std::size_t cached_size_ = 0;
    std::vector<std::size_t> order_;
};

struct TrainResult {
    Seq2SeqModel model;  // best validation checkpoint
    std::vector<LogRecord> log;
    std::vector<EvalRecord> evals;
    std::size_t best_step = 0;
    double best_ppl = 0.0;
};

using LogSink = std::function<void(const LogRecord&)>;

TrainResult train(Seq2SeqModel init, Objective objective, const std::vector<Example>& train_data,
                  const std::vector<Example>& valid_data, const Vocabulary& vocab,
                  const TrainConfig& config, const LogSink& sink = {});

// Trains on [BOS] S^A [EOS] with early stopping on validation perplexity.
TrainResult pretrain_monolingual(const ModelConfig& model_config,
                                 const std::vector<Example>& mono_corpus,
                                 const std::vector<Example>& valid_data, const Vocabulary& vocab,
                                 const TrainConfig& config, const LogSink& sink = {});

// Builds the mode's architecture and initializes it from the pretrained
// monolingual model (or randomly when `pretrained` is null):
//   NCLS: whole model; NCLS+MS: encoder and both decoders; MCLAS: whole model.
Seq2SeqModel init_for_finetune(const Seq2SeqModel* pretrained, TrainingMode mode,
                               const ModelConfig& base_config, std::uint64_t seed);

TrainResult finetune(const Seq2SeqModel* pretrained, TrainingMode mode,
                     const std::vector<Example>& parallel_split,
                     const std::vector<Example>& valid_data, const Vocabulary& vocab,
                     const ModelConfig& base_config, const TrainConfig& config,
                     const LogSink& sink = {});

// Training log as tab-separated records: step lr_enc lr_dec loss loss_a_part loss_b_part
std::string format_log_record(const LogRecord& r);
void append_log(const std::filesystem::path& path, const std::vector<LogRecord>& records);
std::vector<LogRecord> read_log(const std::filesystem::path& path);

}  // namespace mclas
