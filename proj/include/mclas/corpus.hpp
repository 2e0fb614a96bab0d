#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mclas {

using TokenId = std::int32_t;
using Tokens = std::vector<TokenId>;

// Shared id space: five specials, then two equally sized content ranges
// (language A, language B) related by a fixed-offset bijection.
struct Vocabulary {
    static constexpr TokenId kPad = 0;
    static constexpr TokenId kBos = 1;
    static constexpr TokenId kEos = 2;
    static constexpr TokenId kLsep = 3;
    static constexpr TokenId kUnk = 4;
    static constexpr TokenId kNumSpecials = 5;

    // Half-open ranges.
    TokenId a_begin = kNumSpecials;
    TokenId a_end = kNumSpecials + 100;
    TokenId b_begin = kNumSpecials + 100;
    TokenId b_end = kNumSpecials + 200;

    static Vocabulary with_content_size(std::size_t per_language);

    std::size_t size() const { return static_cast<std::size_t>(std::max(a_end, b_end)); }
    std::size_t content_size() const { return static_cast<std::size_t>(a_end - a_begin); }
    bool in_a(TokenId id) const { return id >= a_begin && id < a_end; }
    bool in_b(TokenId id) const { return id >= b_begin && id < b_end; }
    static bool is_special(TokenId id) { return id >= 0 && id < kNumSpecials; }

    // Throws std::invalid_argument when the ranges overlap, differ in size or
    // include a special id.
    void validate() const;

    bool operator==(const Vocabulary&) const = default;
};

class CorpusError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

Tokens translate_tokens(const Vocabulary& vocab, std::span<const TokenId> tokens_a);
Tokens inverse_translate_tokens(const Vocabulary& vocab, std::span<const TokenId> tokens_b);

struct Example {
    std::uint64_t id = 0;
    Tokens doc;
    Tokens sum_a;
    std::optional<Tokens> sum_b;

    bool operator==(const Example&) const = default;
};

struct GenerationParams {
    std::size_t doc_len_min = 16;
    std::size_t doc_len_max = 24;
    std::size_t salient_min = 2;
    std::size_t salient_max = 5;
    std::size_t repeat = 2;
    std::size_t n_max = 8;
    // Extra B-side tokens appended to sum_b to emulate length imbalance.
    std::size_t extra_b = 0;

    void validate(const Vocabulary& vocab) const;
};

// Uniform integer in [0, bound) from raw 64-bit draws (platform independent).
std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound);
// Seed for an independent per-item stream.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index);

Example generate_example(std::mt19937_64& rng, const Vocabulary& vocab,
                         const GenerationParams& params);

// Tokens occurring at least `repeat` times, in first-occurrence order, capped.
Tokens salient_summary(std::span<const TokenId> doc, std::size_t repeat, std::size_t n_max);

struct ScenarioSpec {
    std::string name = "full";
    double parallel_fraction = 1.0;
    std::uint64_t seed = 0;

    static ScenarioSpec named(const std::string& name, std::uint64_t seed);
};

struct CorpusSizes {
    std::size_t mono_pretrain = 2000;
    std::size_t parallel_pool = 1000;
    std::size_t valid = 100;
    std::size_t test = 100;
};

struct Corpus {
    Vocabulary vocab;
    std::vector<Example> mono;
    std::vector<Example> pool;
    std::vector<Example> valid;
    std::vector<Example> test;
};

Corpus generate_corpus(std::uint64_t seed, const CorpusSizes& sizes, const Vocabulary& vocab,
                       const GenerationParams& params);

std::size_t scenario_size(double fraction, std::size_t pool_size);
// First ⌈fraction·|pool|⌉ items of a seeded shuffle of the pool.
std::vector<Example> scenario_subset(const std::vector<Example>& pool, const ScenarioSpec& spec);

// Alignment of each S^B position to its S^A position; identity for the
// synthetic bijection.
std::vector<std::size_t> summary_alignment(const Example& example);

// Doc positions holding tokens of sum_a.
std::vector<std::size_t> salient_positions(const Example& example);

struct CorpusFile {
    std::string split;
    bool parallel = true;
    Vocabulary vocab;
    std::vector<Example> examples;
};

// One header line then one record per line:
//   #mclas-corpus v1 split=<name> parallel=<0|1> pad=0 bos=1 eos=2 lsep=3 unk=4
//     a=<begin>:<end> b=<begin>:<end> vocab=<V> count=<n>
//   id=<n>\tdoc=<ids>\tsum_a=<ids>[\tsum_b=<ids>]
void write_corpus(const CorpusFile& file, const std::filesystem::path& path);
CorpusFile read_corpus(const std::filesystem::path& path);
std::string format_corpus_header(const CorpusFile& file);

}  // namespace mclas
