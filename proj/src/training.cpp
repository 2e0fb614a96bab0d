#include "mclas/training.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace mclas {

namespace {

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

std::uint64_t meta_u64(const std::map<std::string, std::string>& meta, const std::string& key) {
    auto it = meta.find(key);
    if (it == meta.end()) {
        throw FormatError("training state lacks '" + key + "'");
    }
    return std::stoull(it->second);
}

// Dropout is a training setting, so finetuning may change it.
bool congruent_except_decoders(ModelConfig a, ModelConfig b) {
    a.decoder_count = b.decoder_count = 1;
    a.dropout_p = b.dropout_p = 0.0;
    return a == b;
}

}  // namespace

TrainConfig TrainConfig::full_scale_preset() {
    TrainConfig c;
    c.base_lr_enc = 0.005;
    c.base_lr_dec = 0.2;
    c.warmup_enc = 10000;
    c.warmup_dec = 5000;
    c.accum = 5;
    return c;
}

std::map<std::string, std::string> TrainConfig::to_meta(const std::string& prefix) const {
    return {
        {prefix + "base_lr_enc", fmt(base_lr_enc)},
        {prefix + "base_lr_dec", fmt(base_lr_dec)},
        {prefix + "warmup_enc", std::to_string(warmup_enc)},
        {prefix + "warmup_dec", std::to_string(warmup_dec)},
        {prefix + "batch_size", std::to_string(batch_size)},
        {prefix + "accum", std::to_string(accum)},
        {prefix + "max_steps", std::to_string(max_steps)},
        {prefix + "eval_every", std::to_string(eval_every)},
        {prefix + "patience", std::to_string(patience)},
        {prefix + "seed", std::to_string(seed)},
        {prefix + "beta1", fmt(adam.beta1)},
        {prefix + "beta2", fmt(adam.beta2)},
        {prefix + "eps", fmt(adam.eps)},
    };
}

EvalRecord evaluate_split(const Seq2SeqModel& model, const std::vector<Example>& data,
                          Objective objective, const Vocabulary& vocab, bool parallel) {
    EvalRecord rec;
    if (data.empty()) {
        return rec;
    }
    BatchOptions opts;
    opts.parallel = parallel;
    const auto r = batch_loss(model, data, objective, vocab, opts);
    rec.per_token_loss = r.loss_sum / static_cast<double>(r.tokens);
    rec.ppl = std::exp(rec.per_token_loss);
    rec.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.tokens);
    return rec;
}

Trainer::Trainer(Seq2SeqModel model, Objective objective, Vocabulary vocab, TrainConfig config)
    : model_(std::move(model)), objective_(objective), vocab_(vocab), config_(config) {
    check_model_for(model_, objective_);
    if (config_.batch_size == 0 || config_.accum == 0) {
        throw ConfigError("batch_size and accum must be positive");
    }
    enc_opt_ = OptimizerState::for_group(model_.params(), model_.encoder_parameter_indices(),
                                         config_.base_lr_enc, config_.warmup_enc, config_.adam);
    dec_opt_ = OptimizerState::for_group(model_.params(), model_.decoder_parameter_indices(),
                                         config_.base_lr_dec, config_.warmup_dec, config_.adam);
}

std::span<const Example> Trainer::next_batch(const std::vector<Example>& data) {
    if (data.empty()) {
        throw TrainingError("training split is empty");
    }
    const std::size_t n = data.size();
    batch_buf_.clear();
    for (std::size_t j = 0; j < config_.batch_size; ++j) {
        const std::uint64_t g = consumed_++;
        const std::uint64_t epoch = g / n;
        if (epoch != cached_epoch_ || cached_size_ != n) {
            order_.resize(n);
            for (std::size_t i = 0; i < n; ++i) {
                order_[i] = i;
            }
            std::mt19937_64 rng(derive_seed(config_.seed, 0xE90CULL, epoch));
            for (std::size_t i = n; i > 1; --i) {
                std::swap(order_[i - 1], order_[static_cast<std::size_t>(uniform_below(rng, i))]);
            }
            cached_epoch_ = epoch;
            cached_size_ = n;
        }
        batch_buf_.push_back(data[order_[g % n]]);
    }
    return batch_buf_;
}

LogRecord Trainer::step(const std::vector<Example>& data) {
    std::vector<std::vector<Example>> owned;
    owned.reserve(config_.accum);
    for (std::size_t a = 0; a < config_.accum; ++a) {
        auto b = next_batch(data);
        owned.emplace_back(b.begin(), b.end());
    }
    std::vector<std::span<const Example>> micro(owned.begin(), owned.end());
    return step_on(micro);
}

LogRecord Trainer::step_on(const std::vector<std::span<const Example>>& micro_batches) {
    Gradients total = model_.params().zero_gradients();
    double loss = 0.0, part_a = 0.0, part_b = 0.0;
    std::size_t count = 0;
    for (const auto& mb : micro_batches) {
        BatchOptions opts;
        opts.train = true;
        opts.with_gradients = true;
        opts.parallel = config_.parallel;
        opts.seed = config_.seed;
        opts.stream = micro_batches_++;
        auto r = batch_loss(model_, mb, objective_, vocab_, opts);
        for (std::size_t p = 0; p < total.size(); ++p) {
            for (std::size_t j = 0; j < total[p].size(); ++j) {
                total[p][j] += r.grad_sum[p][j];
            }
        }
        loss += r.loss_sum;
        part_a += r.part_a_sum;
        part_b += r.part_b_sum;
        count += r.examples;
    }
    if (count == 0) {
        throw TrainingError("optimizer step without examples");
    }
    const double inv = 1.0 / static_cast<double>(count);
    for (auto& g : total) {
        for (auto& v : g) {
            v *= inv;
        }
    }
    LogRecord rec;
    rec.step = steps_ + 1;
    rec.loss = loss * inv;
    rec.loss_a_part = part_a * inv;
    rec.loss_b_part = part_b * inv;
    rec.lr_enc = warmup_lr(rec.step, enc_opt_.base_lr, enc_opt_.warmup_steps);
    rec.lr_dec = warmup_lr(rec.step, dec_opt_.base_lr, dec_opt_.warmup_steps);
    if (!std::isfinite(rec.loss)) {
        throw TrainingError("non-finite loss at step " + std::to_string(rec.step) + " (lr_enc " +
                            fmt(rec.lr_enc) + ", lr_dec " + fmt(rec.lr_dec) + ", objective " +
                            to_string(objective_) + ")");
    }
    adam_step(model_.params(), total, enc_opt_, rec.lr_enc);
    adam_step(model_.params(), total, dec_opt_, rec.lr_dec);
    steps_ = rec.step;
    return rec;
}

void Trainer::save_state(const std::filesystem::path& path) const {
    Checkpoint ckpt = model_.to_checkpoint();
    ckpt.meta["format"] = "mclas-train-state";
    ckpt.meta["objective"] = to_string(objective_);
    ckpt.meta["state.steps"] = std::to_string(steps_);
    ckpt.meta["state.consumed"] = std::to_string(consumed_);
    ckpt.meta["state.micro_batches"] = std::to_string(micro_batches_);
    ckpt.meta["state.enc_step_count"] = std::to_string(enc_opt_.step_count);
    ckpt.meta["state.dec_step_count"] = std::to_string(dec_opt_.step_count);
    for (const auto& [k, v] : config_.to_meta()) {
        ckpt.meta[k] = v;
    }
    auto add_moments = [&](const OptimizerState& s, const std::string& tag) {
        for (std::size_t g = 0; g < s.param_indices.size(); ++g) {
            const auto& p = model_.params().at(s.param_indices[g]);
            ckpt.tensors.push_back({"opt." + tag + ".m." + p.name, p.shape, s.first_moment[g]});
            ckpt.tensors.push_back({"opt." + tag + ".v." + p.name, p.shape, s.second_moment[g]});
        }
    };
    add_moments(enc_opt_, "enc");
    add_moments(dec_opt_, "dec");
    save_checkpoint(ckpt, path);
}

Trainer Trainer::load_state(const std::filesystem::path& path, Vocabulary vocab,
                            TrainConfig config) {
    Checkpoint ckpt = load_checkpoint(path);
    auto fmt_it = ckpt.meta.find("format");
    if (fmt_it == ckpt.meta.end() || fmt_it->second != "mclas-train-state") {
        throw FormatError("'" + path.string() + "' is not a training state");
    }
    ckpt.meta["format"] = "mclas-model";
    Seq2SeqModel model = Seq2SeqModel::from_checkpoint(ckpt);
    const std::string obj = ckpt.meta.at("objective");
    Objective objective = Objective::Monolingual;
    for (auto o : {Objective::Monolingual, Objective::NCLS, Objective::NCLS_MS, Objective::MCLAS}) {
        if (obj == to_string(o)) {
            objective = o;
        }
    }
    Trainer t(std::move(model), objective, vocab, config);
    t.steps_ = meta_u64(ckpt.meta, "state.steps");
    t.consumed_ = meta_u64(ckpt.meta, "state.consumed");
    t.micro_batches_ = meta_u64(ckpt.meta, "state.micro_batches");
    t.enc_opt_.step_count = meta_u64(ckpt.meta, "state.enc_step_count");
    t.dec_opt_.step_count = meta_u64(ckpt.meta, "state.dec_step_count");
    auto load_moments = [&](OptimizerState& s, const std::string& tag) {
        for (std::size_t g = 0; g < s.param_indices.size(); ++g) {
            const auto& name = t.model_.params().at(s.param_indices[g]).name;
            s.first_moment[g] = ckpt.tensor("opt." + tag + ".m." + name).values;
            s.second_moment[g] = ckpt.tensor("opt." + tag + ".v." + name).values;
        }
    };
    load_moments(t.enc_opt_, "enc");
    load_moments(t.dec_opt_, "dec");
    return t;
}

TrainResult train(Seq2SeqModel init, Objective objective, const std::vector<Example>& train_data,
                  const std::vector<Example>& valid_data, const Vocabulary& vocab,
                  const TrainConfig& config, const LogSink& sink) {
    if (train_data.empty()) {
        throw TrainingError("training split is empty");
    }
    Trainer trainer(std::move(init), objective, vocab, config);
    TrainResult result{trainer.model(), {}, {}, 0, std::numeric_limits<double>::infinity()};
    std::size_t stale = 0;
    for (std::size_t s = 1; s <= config.max_steps; ++s) {
        auto rec = trainer.step(train_data);
        result.log.push_back(rec);
        if (sink) {
            sink(rec);
        }
        const bool eval_now = (config.eval_every && s % config.eval_every == 0) || s == config.max_steps;
        if (!eval_now || valid_data.empty()) {
            continue;
        }
        auto ev = evaluate_split(trainer.model(), valid_data, objective, vocab, config.parallel);
        ev.step = s;
        result.evals.push_back(ev);
        if (ev.ppl < result.best_ppl) {
            result.best_ppl = ev.ppl;
            result.best_step = s;
            result.model = trainer.model();
            stale = 0;
        } else if (config.patience && ++stale >= config.patience) {
            break;
        }
    }
    if (valid_data.empty()) {
        result.model = trainer.model();
        result.best_step = trainer.steps_done();
    }
    return result;
}

TrainResult pretrain_monolingual(const ModelConfig& model_config,
                                 const std::vector<Example>& mono_corpus,
                                 const std::vector<Example>& valid_data, const Vocabulary& vocab,
                                 const TrainConfig& config, const LogSink& sink) {
    ModelConfig cfg = model_config;
    cfg.decoder_count = 1;
    Seq2SeqModel model(cfg, config.seed);
    return train(std::move(model), Objective::Monolingual, mono_corpus, valid_data, vocab, config,
                 sink);
}

Seq2SeqModel init_for_finetune(const Seq2SeqModel* pretrained, TrainingMode mode,
                               const ModelConfig& base_config, std::uint64_t seed) {
    ModelConfig cfg = pretrained ? pretrained->config() : base_config;
    cfg.decoder_count = decoder_count_for(objective_for(mode));
    cfg.dropout_p = base_config.dropout_p;
    if (pretrained && !congruent_except_decoders(pretrained->config(), base_config)) {
        throw ConfigError("pretrained checkpoint config is not congruent with the run config");
    }
    Seq2SeqModel model(cfg, seed);
    if (pretrained == nullptr) {
        return model;
    }
    switch (mode) {
        case TrainingMode::NCLS:
        case TrainingMode::MCLAS:
            copy_parameters(*pretrained, model, CopyPart::All);
            break;
        case TrainingMode::NCLS_MS:
            copy_parameters(*pretrained, model, CopyPart::Encoder);
            copy_parameters(*pretrained, model, CopyPart::DecoderToBoth);
            break;
    }
    return model;
}

TrainResult finetune(const Seq2SeqModel* pretrained, TrainingMode mode,
                     const std::vector<Example>& parallel_split,
                     const std::vector<Example>& valid_data, const Vocabulary& vocab,
                     const ModelConfig& base_config, const TrainConfig& config,
                     const LogSink& sink) {
    if (parallel_split.empty()) {
        throw TrainingError("scenario split is empty");
    }
    Seq2SeqModel model = init_for_finetune(pretrained, mode, base_config, config.seed);
    return train(std::move(model), objective_for(mode), parallel_split, valid_data, vocab, config,
                 sink);
}

std::string format_log_record(const LogRecord& r) {
    std::ostringstream os;
    os.precision(17);
    os << r.step << '\t' << r.lr_enc << '\t' << r.lr_dec << '\t' << r.loss << '\t'
       << r.loss_a_part << '\t' << r.loss_b_part;
    return os.str();
}

void append_log(const std::filesystem::path& path, const std::vector<LogRecord>& records) {
    std::ofstream os(path, std::ios::app);
    if (!os) {
        throw std::runtime_error("cannot append to '" + path.string() + "'");
    }
    for (const auto& r : records) {
        os << format_log_record(r) << '\n';
    }
}

std::vector<LogRecord> read_log(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) {
        throw std::runtime_error("cannot open log '" + path.string() + "'");
    }
    std::vector<LogRecord> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') {
            continue;
        }
        std::istringstream ls(line);
        LogRecord r;
        if (!(ls >> r.step >> r.lr_enc >> r.lr_dec >> r.loss >> r.loss_a_part >> r.loss_b_part)) {
            throw FormatError("malformed log line: " + line);
        }
        out.push_back(r);
    }
    return out;
}

}  // namespace mclas
