#include "mclas/probe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

#include "mclas/objectives.hpp"

namespace mclas {

namespace {

std::size_t summary_len_of(const AttentionMap& map) {
    if (map.query_len < 2 || map.query_len % 2 != 0) {
        throw std::invalid_argument("attention map has " + std::to_string(map.query_len) +
                                    " query rows; expected 2n+2 for a concatenated target");
    }
    return (map.query_len - 2) / 2;
}

double row_entropy(const AttentionMap& map, std::size_t q) {
    double h = 0.0;
    for (std::size_t k = 0; k < map.key_len; ++k) {
        const double w = map.at(q, k);
        if (w > 0.0) {
            h -= w * std::log(w);
        }
    }
    return h;
}

}  // namespace

bool HeadClassification::has(const std::string& label) const {
    return std::find(labels.begin(), labels.end(), label) != labels.end();
}

std::vector<Example> make_probe_set(const Example& templ, std::size_t count,
                                    const Vocabulary& vocab, std::uint64_t seed) {
    std::vector<Example> out;
    const std::size_t k = vocab.content_size();
    for (std::size_t i = 0; i < count; ++i) {
        std::vector<TokenId> perm(k);
        std::iota(perm.begin(), perm.end(), vocab.a_begin);
        if (i > 0) {
            std::mt19937_64 rng(derive_seed(seed, 5, i));
            for (std::size_t j = k; j > 1; --j) {
                std::swap(perm[j - 1], perm[static_cast<std::size_t>(uniform_below(rng, j))]);
            }
        }
        auto relabel = [&](const Tokens& ts) {
            Tokens r;
            for (auto t : ts) {
                r.push_back(vocab.in_a(t) ? perm[static_cast<std::size_t>(t - vocab.a_begin)] : t);
            }
            return r;
        };
        Example ex;
        ex.id = templ.id * 1000 + i;
        ex.doc = relabel(templ.doc);
        ex.sum_a = relabel(templ.sum_a);
        if (templ.sum_b) {
            Tokens b = translate_tokens(vocab, ex.sum_a);
            // Filler beyond the aligned part does not depend on A tokens.
            for (std::size_t j = b.size(); j < templ.sum_b->size(); ++j) {
                b.push_back((*templ.sum_b)[j]);
            }
            ex.sum_b = std::move(b);
        }
        out.push_back(std::move(ex));
    }
    return out;
}

std::vector<AttentionMap> collect_attention(const Seq2SeqModel& model,
                                            const std::vector<Example>& probe,
                                            const Vocabulary& vocab) {
    check_model_for(model, Objective::MCLAS);
    if (probe.empty()) {
        throw std::invalid_argument("collect_attention: empty probe set");
    }
    std::vector<AttentionMap> maps;
    for (std::size_t e = 0; e < probe.size(); ++e) {
        const auto& ex = probe[e];
        if (!ex.sum_b) {
            throw std::invalid_argument("probe example " + std::to_string(ex.id) +
                                        " has no cross-lingual summary");
        }
        const auto target = build_concat_target(ex.sum_a, *ex.sum_b, vocab);
        const Tokens inputs = target.inputs();
        NoGradGuard guard;
        ParameterBinder binder(model.params(), false);
        ForwardOptions opts;
        opts.capture_attention = true;
        const Tensor memory = encode(model, binder, ex.doc, opts);
        auto out = decode_teacher_forced(model, binder, memory, inputs, 0, opts);
        if (e == 0) {
            for (auto& rec : out.attention) {
                AttentionMap m;
                m.kind = rec.kind;
                m.layer = rec.layer;
                m.head = rec.head;
                m.query_len = rec.query_len;
                m.key_len = rec.key_len;
                m.weights = std::move(rec.weights);
                m.query_labels = inputs;
                m.key_labels = rec.kind == AttentionKind::Self ? inputs : ex.doc;
                maps.push_back(std::move(m));
            }
            continue;
        }
        if (out.attention.size() != maps.size()) {
            throw std::invalid_argument("collect_attention: inconsistent head count");
        }
        for (std::size_t i = 0; i < maps.size(); ++i) {
            const auto& rec = out.attention[i];
            auto& m = maps[i];
            if (rec.query_len != m.query_len || rec.key_len != m.key_len) {
                throw std::invalid_argument(
                    "collect_attention: probe example " + std::to_string(ex.id) + " has layout " +
                    std::to_string(rec.query_len) + "x" + std::to_string(rec.key_len) +
                    ", expected " + std::to_string(m.query_len) + "x" +
                    std::to_string(m.key_len) + " (probe sets must share one length)");
            }
            for (std::size_t j = 0; j < m.weights.size(); ++j) {
                m.weights[j] += rec.weights[j];
            }
        }
    }
    const double inv = 1.0 / static_cast<double>(probe.size());
    for (auto& m : maps) {
        for (auto& w : m.weights) {
            w *= inv;
        }
    }
    return maps;
}

HeadClassification classify_self_head(const AttentionMap& map,
                                      const std::vector<std::size_t>& alignment,
                                      const ProbeThresholds& th) {
    if (map.kind != AttentionKind::Self) {
        throw std::invalid_argument("classify_self_head: not a self-attention map");
    }
    const std::size_t n = summary_len_of(map);
    HeadClassification c;
    c.layer = map.layer;
    c.head = map.head;
    c.kind = map.kind;
    // Rows n+1 .. 2n predict S^B tokens.
    const std::size_t rows_b = std::min(n, alignment.size());
    if (rows_b == 0) {
        throw std::invalid_argument("classify_self_head: no phase-B rows to score");
    }
    std::size_t hits = 0;
    for (std::size_t j = 0; j < rows_b; ++j) {
        const std::size_t q = n + 1 + j;
        std::size_t best = 0;
        for (std::size_t k = 1; k < map.key_len; ++k) {
            if (map.at(q, k) > map.at(q, best)) {
                best = k;
            }
        }
        const std::size_t aligned = alignment[j] + 1;  // input position of the aligned S^A token
        const std::size_t dist = best > aligned ? best - aligned : aligned - best;
        hits += dist <= th.tolerance ? 1 : 0;
    }
    c.hit_rate = static_cast<double>(hits) / static_cast<double>(rows_b);

    double local = 0.0;
    double self = 0.0;
    std::size_t local_rows = 0;
    for (std::size_t q = 0; q < map.query_len; ++q) {
        self += map.at(q, q);
        if (q == 0) {
            continue;
        }
        double m = 0.0;
        for (std::size_t k = q > th.window ? q - th.window : 0; k < q; ++k) {
            m += map.at(q, k);
        }
        local += m;
        ++local_rows;
    }
    c.self_mass = self / static_cast<double>(map.query_len);
    c.local_mass = local_rows ? local / static_cast<double>(local_rows) : 0.0;

    if (c.hit_rate >= th.translation) {
        c.labels.push_back("translation");
    }
    if (c.local_mass >= th.local) {
        c.labels.push_back("local");
    }
    if (c.self_mass >= th.self) {
        c.labels.push_back("self");
    }
    return c;
}

HeadClassification classify_encdec_head(const AttentionMap& map,
                                        const std::vector<std::size_t>& salient,
                                        const ProbeThresholds& th) {
    if (map.kind != AttentionKind::EncDec) {
        throw std::invalid_argument("classify_encdec_head: not an encoder-decoder map");
    }
    if (salient.empty()) {
        throw std::invalid_argument("classify_encdec_head: empty salient set");
    }
    for (auto s : salient) {
        if (s >= map.key_len) {
            throw std::invalid_argument("classify_encdec_head: salient position out of range");
        }
    }
    const std::size_t n = summary_len_of(map);
    HeadClassification c;
    c.layer = map.layer;
    c.head = map.head;
    c.kind = map.kind;
    auto salient_mass = [&](std::size_t q) {
        double m = 0.0;
        for (auto s : salient) {
            m += map.at(q, s);
        }
        return m;
    };
    for (std::size_t q = 0; q <= n; ++q) {
        c.salient_mass_a += salient_mass(q);
    }
    c.salient_mass_a /= static_cast<double>(n + 1);
    const double max_h = map.key_len > 1 ? std::log(static_cast<double>(map.key_len)) : 1.0;
    for (std::size_t q = n + 1; q < map.query_len; ++q) {
        c.salient_mass_b += salient_mass(q);
        c.entropy_b += map.key_len > 1 ? row_entropy(map, q) / max_h : 0.0;
    }
    c.salient_mass_b /= static_cast<double>(n + 1);
    c.entropy_b /= static_cast<double>(n + 1);

    if (c.salient_mass_a >= th.salient && c.salient_mass_b >= th.salient) {
        c.labels.push_back("summarization");
    }
    if (c.salient_mass_a >= th.salient && c.entropy_b >= th.entropy) {
        c.labels.push_back("translation");
    }
    return c;
}

std::string heatmap_filename(const AttentionMap& map) {
    return "layer" + std::to_string(map.layer) + "-head" + std::to_string(map.head) + "-" +
           to_string(map.kind) + ".svg";
}

std::string heatmap_svg(const AttentionMap& map) {
    constexpr int cell = 14;
    constexpr int margin = 36;
    const int width = margin + cell * static_cast<int>(map.key_len) + 4;
    const int height = margin + cell * static_cast<int>(map.query_len) + 4;
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
       << height << "\" font-family=\"monospace\" font-size=\"7\">\n";
    os << "<title>layer " << map.layer << " head " << map.head << " " << to_string(map.kind)
       << "</title>\n";
    for (std::size_t k = 0; k < map.key_len && k < map.key_labels.size(); ++k) {
        os << "<text x=\"" << margin + cell * static_cast<int>(k) + 2 << "\" y=\"" << margin - 4
           << "\" transform=\"rotate(-60 " << margin + cell * static_cast<int>(k) + 2 << ' '
           << margin - 4 << ")\">" << map.key_labels[k] << "</text>\n";
    }
    for (std::size_t q = 0; q < map.query_len && q < map.query_labels.size(); ++q) {
        os << "<text x=\"2\" y=\"" << margin + cell * static_cast<int>(q) + cell - 4 << "\">"
           << map.query_labels[q] << "</text>\n";
    }
    for (std::size_t q = 0; q < map.query_len; ++q) {
        for (std::size_t k = 0; k < map.key_len; ++k) {
            const double w = std::clamp(map.at(q, k), 0.0, 1.0);
            const int g = static_cast<int>(std::lround(255.0 * (1.0 - w)));
            os << "<rect x=\"" << margin + cell * static_cast<int>(k) << "\" y=\""
               << margin + cell * static_cast<int>(q) << "\" width=\"" << cell << "\" height=\""
               << cell << "\" fill=\"rgb(" << g << ',' << g << ',' << g << ")\"/>\n";
        }
    }
    auto lsep = std::find(map.query_labels.begin(), map.query_labels.end(), Vocabulary::kLsep);
    if (lsep != map.query_labels.end()) {
        const int y = margin + cell * static_cast<int>(lsep - map.query_labels.begin());
        os << "<line class=\"lsep\" x1=\"" << margin << "\" y1=\"" << y << "\" x2=\""
           << width - 4 << "\" y2=\"" << y << "\" stroke=\"red\" stroke-width=\"1\"/>\n";
    }
    os << "</svg>\n";
    return os.str();
}

void emit_heatmap(const AttentionMap& map, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw std::runtime_error("cannot write heatmap '" + path.string() + "'");
    }
    os << heatmap_svg(map);
    if (!os) {
        throw std::runtime_error("failed writing heatmap '" + path.string() + "'");
    }
}

std::size_t ProbeReport::count(AttentionKind kind, const std::string& label) const {
    return static_cast<std::size_t>(std::count_if(heads.begin(), heads.end(), [&](const auto& h) {
        return h.kind == kind && h.has(label);
    }));
}

std::size_t ProbeReport::total(AttentionKind kind) const {
    return static_cast<std::size_t>(std::count_if(
        heads.begin(), heads.end(), [&](const auto& h) { return h.kind == kind; }));
}

ProbeReport classify_heads(const std::vector<AttentionMap>& maps, const Example& templ,
                           const ProbeThresholds& th) {
    ProbeReport report;
    const auto alignment = summary_alignment(templ);
    const auto salient = salient_positions(templ);
    for (const auto& m : maps) {
        report.heads.push_back(m.kind == AttentionKind::Self ? classify_self_head(m, alignment, th)
                                                             : classify_encdec_head(m, salient, th));
    }
    return report;
}

std::string format_probe_summary(const ProbeReport& report) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4);
    os << "# layer\thead\tkind\tlabels\thit_rate\tlocal_mass\tself_mass\tsalient_a\tsalient_b\t"
          "entropy_b\n";
    for (const auto& h : report.heads) {
        std::string labels;
        for (const auto& l : h.labels) {
            labels += (labels.empty() ? "" : ",") + l;
        }
        os << h.layer << '\t' << h.head << '\t' << to_string(h.kind) << '\t'
           << (labels.empty() ? "-" : labels) << '\t' << h.hit_rate << '\t' << h.local_mass
           << '\t' << h.self_mass << '\t' << h.salient_mass_a << '\t' << h.salient_mass_b << '\t'
           << h.entropy_b << '\n';
    }
    auto pct = [&](AttentionKind kind, const std::string& label) {
        const auto total = report.total(kind);
        const auto n = report.count(kind, label);
        os << "# " << to_string(kind) << ' ' << label << ": " << n << '/' << total << " ("
           << std::setprecision(1) << (total ? 100.0 * static_cast<double>(n) / total : 0.0)
           << "%)\n"
           << std::setprecision(4);
    };
    pct(AttentionKind::Self, "translation");
    pct(AttentionKind::Self, "local");
    pct(AttentionKind::Self, "self");
    pct(AttentionKind::EncDec, "summarization");
    pct(AttentionKind::EncDec, "translation");
    return os.str();
}

void write_probe_summary(const ProbeReport& report, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) {
        throw std::runtime_error("cannot write '" + path.string() + "'");
    }
    os << format_probe_summary(report);
}

}  // namespace mclas
