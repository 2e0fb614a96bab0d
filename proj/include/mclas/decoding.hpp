#pragma once

#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mclas/model.hpp"
#include "mclas/objectives.hpp"

namespace mclas {

struct DecodeConfig {
    std::size_t beam_size = 5;
    double length_penalty_alpha = 1.0;
    std::size_t max_len = 72;  // generated tokens, not counting [BOS]
    bool trigram_block = true;
    bool language_constraint = true;
    // Re-runs the winning sequence teacher-forced to collect attention maps.
    bool capture_attention = false;

    void validate() const;
};

enum class Phase { A, B };

class MalformedOutput : public std::runtime_error {
public:
    MalformedOutput(const std::string& what, Tokens raw)
        : std::runtime_error(what), raw_(std::move(raw)) {}
    const Tokens& raw() const { return raw_; }

private:
    Tokens raw_;
};

// Allowed next tokens, one flag per id. The Monolingual objective (and the
// first decoder of NCLS+MS) generates A-range text; NCLS generates B-range
// text; MCLAS switches from A to B at [LSEP]. With the constraint off both
// ranges are allowed but the structural specials keep their places.
std::vector<std::uint8_t> vocab_mask(const Vocabulary& vocab, std::size_t vocab_size, Phase phase,
                                     Objective objective, bool language_constraint = true);

// Log-probabilities renormalized over the allowed ids; -inf elsewhere.
std::vector<double> masked_log_softmax(std::span<const double> logits,
                                       std::span<const std::uint8_t> mask);

// `segment` is the current phase's text so far (no specials).
bool trigram_blocked(std::span<const TokenId> segment, TokenId candidate);

double length_penalty(std::size_t length, double alpha);

struct DecodeResult {
    Tokens raw;  // [BOS] ... as generated by the (last) decoder
    Tokens sum_a;
    Tokens sum_b;
    double score = 0.0;    // penalized score of the cross-lingual (or only) output
    double logprob = 0.0;  // its cumulative log-probability
    bool truncated = false;
    std::vector<AttentionRecord> attention;
};

DecodeResult beam_search(const Seq2SeqModel& model, std::span<const TokenId> doc,
                         Objective objective, const Vocabulary& vocab,
                         const DecodeConfig& config);

DecodeResult greedy_decode(const Seq2SeqModel& model, std::span<const TokenId> doc,
                           Objective objective, const Vocabulary& vocab,
                           const DecodeConfig& config);

// Strips [BOS]/[EOS] and splits at the single [LSEP].
std::pair<Tokens, Tokens> split_at_lsep(std::span<const TokenId> tokens);

// Decodes every document; the parallel path spreads documents over threads
// and returns results in input order.
std::vector<DecodeResult> decode_documents(const Seq2SeqModel& model,
                                           const std::vector<Example>& docs, Objective objective,
                                           const Vocabulary& vocab, const DecodeConfig& config,
                                           bool parallel = true);

struct DecodeRecord {
    std::uint64_t doc_id = 0;
    Tokens sum_a;
    Tokens sum_b;
    double score = 0.0;
    bool truncated = false;

    bool operator==(const DecodeRecord&) const = default;
};

struct DecodeFile {
    std::string mode;
    std::vector<DecodeRecord> records;
};

// Header line then one record per line:
//   #mclas-decode v1 mode=<mode> count=<n>
//   doc_id=<n>\tsum_a=<ids>\tsum_b=<ids>\tscore=<x>\ttruncated=<0|1>
void write_decodes(const DecodeFile& file, const std::filesystem::path& path);
DecodeFile read_decodes(const std::filesystem::path& path);

}  // namespace mclas
