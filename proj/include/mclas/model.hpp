#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mclas/checkpoint.hpp"
#include "mclas/corpus.hpp"
#include "mclas/params.hpp"
#include "mclas/tensor.hpp"

namespace mclas {

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct ModelConfig {
    std::size_t layers_enc = 2;
    std::size_t layers_dec = 2;
    std::size_t heads = 4;
    std::size_t d_model = 64;
    std::size_t d_ff = 128;
    std::size_t vocab_size = 205;
    double dropout_p = 0.1;
    std::size_t max_positions = 256;
    std::size_t decoder_count = 1;
    // Overlong encoder input is cut to max_positions instead of rejected.
    bool truncate_overlong = false;

    void validate() const;
    std::map<std::string, std::string> to_meta() const;
    static ModelConfig from_meta(const std::map<std::string, std::string>& meta);
    bool operator==(const ModelConfig&) const = default;
};

enum class AttentionKind { Self, EncDec };
const char* to_string(AttentionKind kind);

struct AttentionRecord {
    std::size_t layer = 0;
    std::size_t head = 0;
    AttentionKind kind = AttentionKind::Self;
    std::size_t query_len = 0;
    std::size_t key_len = 0;
    std::vector<double> weights;  // query_len × key_len, row-major

    double at(std::size_t q, std::size_t k) const { return weights[q * key_len + k]; }
};

// sin/cos interleave: row p, column 2i = sin(p / 10000^(2i/d)), 2i+1 = cos(...).
Tensor sinusoidal_positions(std::size_t max_positions, std::size_t d_model);

struct ForwardOptions {
    bool train = false;
    std::mt19937_64* rng = nullptr;  // dropout stream; required when train is set
    bool capture_attention = false;
};

class Seq2SeqModel {
public:
    Seq2SeqModel(const ModelConfig& config, std::uint64_t seed);

    const ModelConfig& config() const { return config_; }
    ParameterSet& params() { return params_; }
    const ParameterSet& params() const { return params_; }
    std::size_t decoder_count() const { return config_.decoder_count; }
    const Tensor& positions() const { return positions_; }

    // Parameter indices of the encoder side (encoder stack and the shared
    // embedding) and of all decoders.
    std::vector<std::size_t> encoder_parameter_indices() const;
    std::vector<std::size_t> decoder_parameter_indices() const;

    Checkpoint to_checkpoint() const;
    static Seq2SeqModel from_checkpoint(const Checkpoint& ckpt);
    void save(const std::filesystem::path& path) const;
    static Seq2SeqModel load(const std::filesystem::path& path);

    struct AttnIdx {
        std::size_t wq, bq, wk, bk, wv, bv, wo, bo;
    };
    struct NormIdx {
        std::size_t gain, bias;
    };
    struct FfnIdx {
        std::size_t w1, b1, w2, b2;
    };
    struct EncoderLayerIdx {
        NormIdx ln1, ln2;
        AttnIdx self_attn;
        FfnIdx ffn;
    };
    struct DecoderLayerIdx {
        NormIdx ln1, ln2, ln3;
        AttnIdx self_attn, cross_attn;
        FfnIdx ffn;
    };
    struct DecoderIdx {
        std::vector<DecoderLayerIdx> layers;
        NormIdx final_ln;
    };

    std::size_t embedding_index() const { return embedding_; }
    const std::vector<EncoderLayerIdx>& encoder_layers() const { return enc_layers_; }
    const NormIdx& encoder_final_ln() const { return enc_final_; }
    const DecoderIdx& decoder(std::size_t which) const;

private:
    void build(std::mt19937_64& rng);

    ModelConfig config_;
    ParameterSet params_;
    Tensor positions_;
    std::size_t embedding_ = 0;
    std::vector<EncoderLayerIdx> enc_layers_;
    NormIdx enc_final_{};
    std::vector<DecoderIdx> decoders_;
};

// Graph-building forward passes. Gradients reach the model's parameters
// through `binder` when it tracks gradients.
Tensor encode(const Seq2SeqModel& model, ParameterBinder& binder, std::span<const TokenId> doc,
              const ForwardOptions& opts);

struct DecoderOutput {
    Tensor logits;  // T × vocab
    std::vector<AttentionRecord> attention;
};

// Teacher-forced pass over `inputs` (starting with [BOS]) under a causal mask.
DecoderOutput decode_teacher_forced(const Seq2SeqModel& model, ParameterBinder& binder,
                                    const Tensor& memory, std::span<const TokenId> inputs,
                                    std::size_t which_decoder, const ForwardOptions& opts);

// Eval-mode encoding without graph recording.
Tensor encode(const Seq2SeqModel& model, std::span<const TokenId> doc);

// Step-by-step decoder with cached keys/values. Copies are independent, which
// is how beam hypotheses fork.
class IncrementalDecoder {
public:
    IncrementalDecoder(const Seq2SeqModel& model, const Tensor& memory, std::size_t which_decoder);

    // Feeds the next prefix token; returns logits for the token after it.
    std::vector<double> step(TokenId token, std::vector<AttentionRecord>* capture = nullptr);
    std::size_t length() const { return length_; }

private:
    const Seq2SeqModel* model_;
    std::size_t which_;
    std::size_t length_ = 0;
    std::vector<Tensor> self_k_, self_v_;
    std::vector<Tensor> cross_k_, cross_v_;
};

struct StepOutput {
    std::vector<double> logits;
    std::vector<AttentionRecord> attention;  // final query position only
};

StepOutput decode_step(const Seq2SeqModel& model, const Tensor& memory,
                       std::span<const TokenId> prefix, std::size_t which_decoder,
                       bool capture = false);

enum class CopyPart { Encoder, Decoder, DecoderToBoth, All };

void copy_parameters(const Seq2SeqModel& source, Seq2SeqModel& target, CopyPart part);

}  // namespace mclas
