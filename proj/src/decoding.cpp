#include "mclas/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace mclas {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct Hypothesis {
    Tokens tokens;
    double logprob = 0.0;
    Phase phase = Phase::A;
    IncrementalDecoder state;
    std::vector<double> logits;
};

struct Finished {
    Tokens tokens;
    double logprob = 0.0;
};

struct Candidate {
    std::size_t parent;
    TokenId token;
    double logprob;
};

struct SearchOutcome {
    Tokens tokens;
    double logprob = 0.0;
    double score = 0.0;
    bool truncated = false;
};

std::span<const TokenId> phase_segment(const Tokens& tokens) {
    std::size_t start = 1;
    for (std::size_t i = tokens.size(); i-- > 0;) {
        if (tokens[i] == Vocabulary::kLsep) {
            start = i + 1;
            break;
        }
    }
    return std::span<const TokenId>(tokens).subspan(std::min(start, tokens.size()));
}

std::size_t generated(const Tokens& tokens) { return tokens.size() - 1; }

// Higher penalized score first; ties go to the lexicographically smaller sequence.
template <typename T>
const T* pick_best(const std::vector<T>& items, double alpha, double* score_out) {
    const T* best = nullptr;
    double best_score = kNegInf;
    for (const auto& it : items) {
        const double s = it.logprob / length_penalty(generated(it.tokens), alpha);
        if (!best || s > best_score || (s == best_score && it.tokens < best->tokens)) {
            best = &it;
            best_score = s;
        }
    }
    *score_out = best_score;
    return best;
}

SearchOutcome run_search(const Seq2SeqModel& model, const Tensor& memory, std::size_t which,
                         Phase start_phase, Objective objective, const Vocabulary& vocab,
                         const DecodeConfig& config, std::size_t beam_size) {
    const std::size_t vocab_size = model.config().vocab_size;
    const auto mask_a = vocab_mask(vocab, vocab_size, Phase::A, objective, config.language_constraint);
    const auto mask_b = vocab_mask(vocab, vocab_size, Phase::B, objective, config.language_constraint);

    std::vector<Hypothesis> alive;
    {
        Hypothesis h{{Vocabulary::kBos}, 0.0, start_phase, IncrementalDecoder(model, memory, which), {}};
        h.logits = h.state.step(Vocabulary::kBos);
        alive.push_back(std::move(h));
    }
    std::vector<Finished> finished;

    for (std::size_t len = 1; len <= config.max_len && !alive.empty(); ++len) {
        std::vector<Candidate> cands;
        for (std::size_t hi = 0; hi < alive.size(); ++hi) {
            const auto& h = alive[hi];
            const auto& mask = h.phase == Phase::A ? mask_a : mask_b;
            const auto logp = masked_log_softmax(h.logits, mask);
            const auto segment = phase_segment(h.tokens);
            for (std::size_t t = 0; t < vocab_size; ++t) {
                if (!mask[t]) {
                    continue;
                }
                const auto tok = static_cast<TokenId>(t);
                if (config.trigram_block && !Vocabulary::is_special(tok) &&
                    trigram_blocked(segment, tok)) {
                    continue;
                }
                cands.push_back({hi, tok, h.logprob + logp[t]});
            }
        }
        std::sort(cands.begin(), cands.end(), [&](const Candidate& x, const Candidate& y) {
            if (x.logprob != y.logprob) {
                return x.logprob > y.logprob;
            }
            if (x.parent != y.parent && alive[x.parent].tokens != alive[y.parent].tokens) {
                return alive[x.parent].tokens < alive[y.parent].tokens;
            }
            return x.token < y.token;
        });

        std::vector<Hypothesis> next;
        for (std::size_t rank = 0; rank < cands.size(); ++rank) {
            if (next.size() == beam_size && rank >= beam_size) {
                break;
            }
            const auto& c = cands[rank];
            const auto& parent = alive[c.parent];
            Tokens tokens = parent.tokens;
            tokens.push_back(c.token);
            if (c.token == Vocabulary::kEos) {
                if (rank < beam_size) {
                    finished.push_back({std::move(tokens), c.logprob});
                }
                continue;
            }
            if (next.size() == beam_size) {
                continue;
            }
            Hypothesis h{std::move(tokens), c.logprob,
                         c.token == Vocabulary::kLsep ? Phase::B : parent.phase, parent.state, {}};
            if (len < config.max_len) {
                h.logits = h.state.step(c.token);
            }
            next.push_back(std::move(h));
        }
        alive = std::move(next);
        if (finished.size() >= beam_size) {
            break;
        }
    }

    SearchOutcome out;
    if (!finished.empty()) {
        const auto* best = pick_best(finished, config.length_penalty_alpha, &out.score);
        out.tokens = best->tokens;
        out.logprob = best->logprob;
    } else if (!alive.empty()) {
        const auto* best = pick_best(alive, config.length_penalty_alpha, &out.score);
        out.tokens = best->tokens;
        out.logprob = best->logprob;
        out.truncated = true;
    } else {
        out.tokens = {Vocabulary::kBos};
        out.score = kNegInf;
        out.logprob = kNegInf;
        out.truncated = true;
    }
    return out;
}

Tokens strip_specials(std::span<const TokenId> tokens) {
    Tokens out;
    for (auto t : tokens) {
        if (!Vocabulary::is_special(t)) {
            out.push_back(t);
        }
    }
    return out;
}

std::vector<AttentionRecord> capture_for(const Seq2SeqModel& model, const Tensor& memory,
                                         const Tokens& raw, std::size_t which) {
    if (raw.size() < 2) {
        return {};
    }
    NoGradGuard guard;
    ParameterBinder binder(model.params(), false);
    ForwardOptions opts;
    opts.capture_attention = true;
    const Tokens inputs(raw.begin(), raw.end() - 1);
    return decode_teacher_forced(model, binder, memory, inputs, which, opts).attention;
}

DecodeResult run_decode(const Seq2SeqModel& model, std::span<const TokenId> doc,
                        Objective objective, const Vocabulary& vocab, const DecodeConfig& config,
                        std::size_t beam_size) {
    config.validate();
    check_model_for(model, objective);
    if (config.max_len + 1 > model.config().max_positions) {
        throw ConfigError("max_len " + std::to_string(config.max_len) +
                          " exceeds the model's position table");
    }
    const Tensor memory = encode(model, doc);
    DecodeResult r;
    std::size_t capture_decoder = 0;
    switch (objective) {
        case Objective::Monolingual: {
            auto o = run_search(model, memory, 0, Phase::A, objective, vocab, config, beam_size);
            r.raw = o.tokens;
            r.sum_a = strip_specials(o.tokens);
            r.score = o.score;
            r.logprob = o.logprob;
            r.truncated = o.truncated;
            break;
        }
        case Objective::NCLS: {
            auto o = run_search(model, memory, 0, Phase::B, objective, vocab, config, beam_size);
            r.raw = o.tokens;
            r.sum_b = strip_specials(o.tokens);
            r.score = o.score;
            r.logprob = o.logprob;
            r.truncated = o.truncated;
            break;
        }
        case Objective::NCLS_MS: {
            auto oa = run_search(model, memory, 0, Phase::A, objective, vocab, config, beam_size);
            auto ob = run_search(model, memory, 1, Phase::B, objective, vocab, config, beam_size);
            r.raw = ob.tokens;
            r.sum_a = strip_specials(oa.tokens);
            r.sum_b = strip_specials(ob.tokens);
            r.score = ob.score;
            r.logprob = ob.logprob;
            r.truncated = oa.truncated || ob.truncated;
            capture_decoder = 1;
            break;
        }
        case Objective::MCLAS: {
            auto o = run_search(model, memory, 0, Phase::A, objective, vocab, config, beam_size);
            r.raw = o.tokens;
            r.score = o.score;
            r.logprob = o.logprob;
            r.truncated = o.truncated;
            if (o.truncated) {
                // A cut-off sequence may still be in phase A.
                const auto lsep = std::find(o.tokens.begin(), o.tokens.end(), Vocabulary::kLsep);
                r.sum_a = strip_specials(std::span<const TokenId>(o.tokens.begin(), lsep));
                if (lsep != o.tokens.end()) {
                    r.sum_b = strip_specials(std::span<const TokenId>(lsep + 1, o.tokens.end()));
                }
            } else {
                std::tie(r.sum_a, r.sum_b) = split_at_lsep(o.tokens);
            }
            break;
        }
    }
    if (config.capture_attention) {
        r.attention = capture_for(model, memory, r.raw, capture_decoder);
    }
    return r;
}

}  // namespace

void DecodeConfig::validate() const {
    if (beam_size < 1) {
        throw ConfigError("beam_size must be at least 1");
    }
    if (max_len < 3) {
        throw ConfigError("max_len must be at least 3");
    }
    if (!(length_penalty_alpha >= 0.0)) {
        throw ConfigError("length_penalty_alpha must be non-negative");
    }
}

std::vector<std::uint8_t> vocab_mask(const Vocabulary& vocab, std::size_t vocab_size, Phase phase,
                                     Objective objective, bool language_constraint) {
    std::vector<std::uint8_t> mask(vocab_size, 0);
    auto allow_range = [&](TokenId begin, TokenId end) {
        for (TokenId t = begin; t < end && static_cast<std::size_t>(t) < vocab_size; ++t) {
            mask[static_cast<std::size_t>(t)] = 1;
        }
    };
    bool want_a = false;
    bool want_b = false;
    switch (objective) {
        case Objective::Monolingual:
            want_a = true;
            break;
        case Objective::NCLS:
            want_b = true;
            break;
        case Objective::NCLS_MS:
        case Objective::MCLAS:
            (phase == Phase::A ? want_a : want_b) = true;
            break;
    }
    if (!language_constraint) {
        want_a = want_b = true;
    }
    if (want_a) {
        allow_range(vocab.a_begin, vocab.a_end);
    }
    if (want_b) {
        allow_range(vocab.b_begin, vocab.b_end);
    }
    const bool two_phase = objective == Objective::MCLAS;
    if (two_phase && phase == Phase::A) {
        mask[Vocabulary::kLsep] = 1;
    } else {
        mask[Vocabulary::kEos] = 1;
    }
    return mask;
}

std::vector<double> masked_log_softmax(std::span<const double> logits,
                                       std::span<const std::uint8_t> mask) {
    double mx = kNegInf;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        if (mask[i]) {
            mx = std::max(mx, logits[i]);
        }
    }
    std::vector<double> out(logits.size(), kNegInf);
    if (mx == kNegInf) {
        return out;
    }
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        if (mask[i]) {
            z += std::exp(logits[i] - mx);
        }
    }
    const double lz = mx + std::log(z);
    for (std::size_t i = 0; i < logits.size(); ++i) {
        if (mask[i]) {
            out[i] = logits[i] - lz;
        }
    }
    return out;
}

bool trigram_blocked(std::span<const TokenId> segment, TokenId candidate) {
    const std::size_t n = segment.size();
    if (n < 2) {
        return false;
    }
    const TokenId x = segment[n - 2];
    const TokenId y = segment[n - 1];
    for (std::size_t i = 0; i + 2 < n; ++i) {
        if (segment[i] == x && segment[i + 1] == y && segment[i + 2] == candidate) {
            return true;
        }
    }
    return false;
}

double length_penalty(std::size_t length, double alpha) {
    if (length < 1) {
        throw std::invalid_argument("length_penalty: length must be at least 1");
    }
    return std::pow((5.0 + static_cast<double>(length)) / 6.0, alpha);
}

DecodeResult beam_search(const Seq2SeqModel& model, std::span<const TokenId> doc,
                         Objective objective, const Vocabulary& vocab,
                         const DecodeConfig& config) {
    return run_decode(model, doc, objective, vocab, config, config.beam_size);
}

DecodeResult greedy_decode(const Seq2SeqModel& model, std::span<const TokenId> doc,
                           Objective objective, const Vocabulary& vocab,
                           const DecodeConfig& config) {
    return run_decode(model, doc, objective, vocab, config, 1);
}

std::pair<Tokens, Tokens> split_at_lsep(std::span<const TokenId> tokens) {
    const auto n = std::count(tokens.begin(), tokens.end(), Vocabulary::kLsep);
    if (n != 1) {
        throw MalformedOutput("expected exactly one [LSEP], found " + std::to_string(n),
                              Tokens(tokens.begin(), tokens.end()));
    }
    const auto it = std::find(tokens.begin(), tokens.end(), Vocabulary::kLsep);
    const auto cut = static_cast<std::size_t>(it - tokens.begin());
    return {strip_specials(tokens.first(cut)), strip_specials(tokens.subspan(cut + 1))};
}

std::vector<DecodeResult> decode_documents(const Seq2SeqModel& model,
                                           const std::vector<Example>& docs, Objective objective,
                                           const Vocabulary& vocab, const DecodeConfig& config,
                                           bool parallel) {
    std::vector<DecodeResult> out(docs.size());
    if (!parallel) {
        for (std::size_t i = 0; i < docs.size(); ++i) {
            out[i] = beam_search(model, docs[i].doc, objective, vocab, config);
        }
        return out;
    }
    std::exception_ptr error;
    const auto count = static_cast<std::int64_t>(docs.size());
#pragma omp parallel for schedule(dynamic, 1)
    for (std::int64_t i = 0; i < count; ++i) {
        try {
            const auto k = static_cast<std::size_t>(i);
            out[k] = beam_search(model, docs[k].doc, objective, vocab, config);
        } catch (...) {
#pragma omp critical(mclas_decode_error)
            if (!error) {
                error = std::current_exception();
            }
        }
    }
    if (error) {
        std::rethrow_exception(error);
    }
    return out;
}

namespace {

std::string join(const Tokens& ids) {
    std::string s;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i) {
            s += ' ';
        }
        s += std::to_string(ids[i]);
    }
    return s;
}

Tokens split_ids(const std::string& text, std::size_t line_no) {
    Tokens out;
    std::istringstream is(text);
    long long v = 0;
    while (is >> v) {
        out.push_back(static_cast<TokenId>(v));
    }
    if (!is.eof()) {
        throw FormatError("decode file line " + std::to_string(line_no) + ": malformed ids");
    }
    return out;
}

}  // namespace

void write_decodes(const DecodeFile& file, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) {
        throw std::runtime_error("cannot write '" + path.string() + "'");
    }
    os.precision(17);
    os << "#mclas-decode v1 mode=" << file.mode << " count=" << file.records.size() << '\n';
    for (const auto& r : file.records) {
        os << "doc_id=" << r.doc_id << "\tsum_a=" << join(r.sum_a) << "\tsum_b=" << join(r.sum_b)
           << "\tscore=" << r.score << "\ttruncated=" << (r.truncated ? 1 : 0) << '\n';
    }
}

DecodeFile read_decodes(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) {
        throw std::runtime_error("cannot open '" + path.string() + "'");
    }
    DecodeFile file;
    std::string line;
    if (!std::getline(is, line) || line.rfind("#mclas-decode v1", 0) != 0) {
        throw FormatError("'" + path.string() + "' is not a decode file");
    }
    const auto mp = line.find("mode=");
    if (mp != std::string::npos) {
        file.mode = line.substr(mp + 5, line.find(' ', mp) - mp - 5);
    }
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        DecodeRecord r;
        std::istringstream ls(line);
        std::string field;
        int seen = 0;
        while (std::getline(ls, field, '\t')) {
            const auto eq = field.find('=');
            if (eq == std::string::npos) {
                throw FormatError("decode file line " + std::to_string(line_no) +
                                  ": field without '='");
            }
            const auto key = field.substr(0, eq);
            const auto val = field.substr(eq + 1);
            if (key == "doc_id") {
                r.doc_id = std::stoull(val);
            } else if (key == "sum_a") {
                r.sum_a = split_ids(val, line_no);
            } else if (key == "sum_b") {
                r.sum_b = split_ids(val, line_no);
            } else if (key == "score") {
                r.score = std::stod(val);
            } else if (key == "truncated") {
                r.truncated = val == "1";
            } else {
                continue;
            }
            ++seen;
        }
        if (seen != 5) {
            throw FormatError("decode file line " + std::to_string(line_no) +
                              ": expected doc_id, sum_a, sum_b, score, truncated");
        }
        file.records.push_back(std::move(r));
    }
    return file;
}

}  // namespace mclas
