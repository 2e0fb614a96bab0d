#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mclas/corpus.hpp"
#include "mclas/model.hpp"

namespace mclas {

// Position-wise mean of one head's attention over a probe set.
struct AttentionMap {
    AttentionKind kind = AttentionKind::Self;
    std::size_t layer = 0;
    std::size_t head = 0;
    std::size_t query_len = 0;
    std::size_t key_len = 0;
    std::vector<double> weights;  // query_len × key_len
    Tokens query_labels;          // decoder inputs of the first probe example
    Tokens key_labels;            // decoder inputs (self) or document (enc-dec)

    double at(std::size_t q, std::size_t k) const { return weights[q * key_len + k]; }
};

struct ProbeThresholds {
    double translation = 0.5;  // aligned-argmax hit rate
    double local = 0.5;
    std::size_t window = 3;
    double self = 0.5;
    double salient = 0.5;
    double entropy = 0.9;  // fraction of the maximum entropy
    std::size_t tolerance = 1;
};

struct HeadClassification {
    std::size_t layer = 0;
    std::size_t head = 0;
    AttentionKind kind = AttentionKind::Self;
    std::vector<std::string> labels;
    // Self-attention statistics.
    double hit_rate = 0.0;
    double local_mass = 0.0;
    double self_mass = 0.0;
    // Encoder-decoder statistics.
    double salient_mass_a = 0.0;
    double salient_mass_b = 0.0;
    double entropy_b = 0.0;

    bool has(const std::string& label) const;
};

// Relabels the template's A-range tokens with random bijections, so every
// probe example shares its layout (lengths and salient positions). The first
// example is the template itself.
std::vector<Example> make_probe_set(const Example& templ, std::size_t count,
                                    const Vocabulary& vocab, std::uint64_t seed);

// Teacher-forced MCLAS passes over the probe set; one map per decoder layer,
// head and attention kind. Throws std::invalid_argument on mixed layouts.
std::vector<AttentionMap> collect_attention(const Seq2SeqModel& model,
                                            const std::vector<Example>& probe,
                                            const Vocabulary& vocab);

// Query rows follow the decoder input [BOS] S^A [LSEP] S^B; with n = |S^A|,
// rows 0..n form phase A and rows n+1..2n+1 phase B. `alignment[j]` is the
// S^A index aligned to S^B index j.
HeadClassification classify_self_head(const AttentionMap& map,
                                      const std::vector<std::size_t>& alignment,
                                      const ProbeThresholds& th = {});

HeadClassification classify_encdec_head(const AttentionMap& map,
                                        const std::vector<std::size_t>& salient,
                                        const ProbeThresholds& th = {});

// Grayscale SVG, darker for larger weights, with an [LSEP] gridline.
void emit_heatmap(const AttentionMap& map, const std::filesystem::path& path);
std::string heatmap_svg(const AttentionMap& map);
std::string heatmap_filename(const AttentionMap& map);

struct ProbeReport {
    std::vector<HeadClassification> heads;

    std::size_t count(AttentionKind kind, const std::string& label) const;
    std::size_t total(AttentionKind kind) const;
};

ProbeReport classify_heads(const std::vector<AttentionMap>& maps, const Example& templ,
                           const ProbeThresholds& th = {});

// One line per head with statistics and labels, then label percentages.
void write_probe_summary(const ProbeReport& report, const std::filesystem::path& path);
std::string format_probe_summary(const ProbeReport& report);

}  // namespace mclas
