#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mclas/corpus.hpp"
#include "mclas/decoding.hpp"
#include "mclas/model.hpp"
#include "mclas/objectives.hpp"
#include "mclas/training.hpp"

namespace mclas {

// Everything one invocation needs, addressable as flat dotted keys
// ("train.max_steps", "run.mode", ...). Sources are applied in order
// file < environment < flags; the resolved result is written next to
// every artifact as manifest.cfg so a run can be replayed from it alone.
struct RunConfig {
    ModelConfig model;  // vocab_size and decoder_count are derived
    TrainConfig train;  // seed is derived from run.seed
    DecodeConfig decode;
    GenerationParams generation;
    CorpusSizes sizes;
    std::size_t content_size = 30;
    std::uint64_t corpus_seed = 7;

    std::string stage = "finetune";  // pretrain | finetune
    std::string mode;  // required for finetuning
    std::string scenario = "minimum";
    // Overrides the named scenario's fraction when set.
    std::optional<double> fraction;
    std::uint64_t seed = 1;
    std::string init;  // checkpoint path, "scratch", or empty
    std::string corpus_dir = "corpus";
    std::string out_dir = "run";
    std::string split = "test";
    // Decode only the first n documents of the split; 0 means all.
    std::size_t limit = 0;

    std::size_t probe_count = 32;
    std::size_t probe_template = 0;  // index into the split

    RunConfig();

    // Throws ConfigError on unknown keys or unparsable values.
    void set(const std::string& key, const std::string& value);
    std::string get(const std::string& key) const;
    static const std::vector<std::string>& keys();
    // Key and one-line description, for --help.
    static const std::vector<std::pair<std::string, std::string>>& documented_keys();

    // "key = value" lines; '#' starts a comment.
    void load_file(const std::filesystem::path& path);
    void apply_text(const std::string& text, const std::string& origin);
    // MCLAS_<KEY> with dots as underscores, upper case (MCLAS_TRAIN_MAX_STEPS).
    void apply_env(const std::function<const char*(const char*)>& getenv_fn);
    static std::string env_name(const std::string& key);

    std::string to_text() const;
    void save(const std::filesystem::path& path) const;

    Vocabulary vocabulary() const;
    ScenarioSpec scenario_spec() const;
    TrainingMode training_mode() const { return parse_mode(mode); }
    // Monolingual for pretraining runs, else the mode's objective.
    Objective objective() const;
    ModelConfig model_config() const;  // derived fields filled in
    TrainConfig train_config() const;

    void validate() const;
};

// Directory holding the manifest and artifacts of a run.
std::filesystem::path manifest_path(const std::filesystem::path& dir);

}  // namespace mclas
