#include "mclas/corpus.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <unordered_map>

namespace mclas {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

enum : std::uint64_t { kStreamMono = 1, kStreamPool = 2, kStreamValid = 3, kStreamTest = 4 };

std::size_t draw_between(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
    return lo + static_cast<std::size_t>(uniform_below(rng, hi - lo + 1));
}

template <typename T>
void shuffle_in_place(std::vector<T>& items, std::mt19937_64& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(uniform_below(rng, i));
        std::swap(items[i - 1], items[j]);
    }
}

std::string join_ids(const Tokens& ids) {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i) {
            out += ' ';
        }
        out += std::to_string(ids[i]);
    }
    return out;
}

Tokens parse_ids(const std::string& text, std::size_t line_no, const std::string& field) {
    Tokens out;
    std::istringstream is(text);
    std::string tok;
    while (is >> tok) {
        std::size_t used = 0;
        long long v = 0;
        try {
            v = std::stoll(tok, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != tok.size() || v < 0 || v > std::numeric_limits<TokenId>::max()) {
            throw CorpusError("line " + std::to_string(line_no) + ": field '" + field +
                              "' has malformed id '" + tok + "'");
        }
        out.push_back(static_cast<TokenId>(v));
    }
    return out;
}

std::pair<TokenId, TokenId> parse_range(const std::string& text) {
    const auto colon = text.find(':');
    if (colon == std::string::npos) {
        throw CorpusError("header: malformed range '" + text + "'");
    }
    return {static_cast<TokenId>(std::stol(text.substr(0, colon))),
            static_cast<TokenId>(std::stol(text.substr(colon + 1)))};
}

}  // namespace

Vocabulary Vocabulary::with_content_size(std::size_t per_language) {
    if (per_language == 0) {
        throw std::invalid_argument("vocabulary needs at least one content token per language");
    }
    Vocabulary v;
    const auto k = static_cast<TokenId>(per_language);
    v.a_begin = kNumSpecials;
    v.a_end = kNumSpecials + k;
    v.b_begin = v.a_end;
    v.b_end = v.b_begin + k;
    return v;
}

void Vocabulary::validate() const {
    if (a_begin < kNumSpecials || b_begin < kNumSpecials) {
        throw std::invalid_argument("content ranges must exclude special ids");
    }
    if (a_end <= a_begin || b_end <= b_begin) {
        throw std::invalid_argument("content ranges must be non-empty");
    }
    if (a_end - a_begin != b_end - b_begin) {
        throw std::invalid_argument("language ranges differ in size; no bijection exists");
    }
    if (a_begin < b_end && b_begin < a_end) {
        throw std::invalid_argument("language ranges overlap");
    }
}

Tokens translate_tokens(const Vocabulary& vocab, std::span<const TokenId> tokens_a) {
    Tokens out;
    out.reserve(tokens_a.size());
    for (auto t : tokens_a) {
        if (!vocab.in_a(t)) {
            throw CorpusError("translate: token " + std::to_string(t) + " is outside the A range [" +
                              std::to_string(vocab.a_begin) + ", " + std::to_string(vocab.a_end) +
                              ")");
        }
        out.push_back(t - vocab.a_begin + vocab.b_begin);
    }
    return out;
}

Tokens inverse_translate_tokens(const Vocabulary& vocab, std::span<const TokenId> tokens_b) {
    Tokens out;
    out.reserve(tokens_b.size());
    for (auto t : tokens_b) {
        if (!vocab.in_b(t)) {
            throw CorpusError("inverse translate: token " + std::to_string(t) +
                              " is outside the B range");
        }
        out.push_back(t - vocab.b_begin + vocab.a_begin);
    }
    return out;
}

void GenerationParams::validate(const Vocabulary& vocab) const {
    if (doc_len_min > doc_len_max || salient_min > salient_max) {
        throw std::invalid_argument("generation ranges must be non-empty (min <= max)");
    }
    if (repeat == 0) {
        throw std::invalid_argument("repeat threshold must be at least 1");
    }
    const std::size_t k = vocab.content_size();
    if (salient_max * repeat > doc_len_min) {
        throw std::invalid_argument("doc_len_min " + std::to_string(doc_len_min) +
                                    " cannot hold " + std::to_string(salient_max) +
                                    " salient tokens repeated " + std::to_string(repeat) +
                                    " times");
    }
    // Distractors occur once each and must be distinct from every salient token.
    const std::size_t distractors = doc_len_max - salient_min * repeat;
    if (distractors + salient_min > k) {
        throw std::invalid_argument("doc_len_max " + std::to_string(doc_len_max) +
                                    " needs more distinct tokens than the " + std::to_string(k) +
                                    " available per language");
    }
    if (repeat == 1 && doc_len_max > salient_min) {
        throw std::invalid_argument("repeat=1 leaves no room for distractors");
    }
    if (extra_b > k) {
        throw std::invalid_argument("extra_b exceeds the B range");
    }
}

std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound) {
    if (bound == 0) {
        throw std::invalid_argument("uniform_below: empty range");
    }
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t x;
    do {
        x = rng();
    } while (x >= limit);
    return x % bound;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
    return splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ index);
}

Tokens salient_summary(std::span<const TokenId> doc, std::size_t repeat, std::size_t n_max) {
    std::unordered_map<TokenId, std::size_t> counts;
    for (auto t : doc) {
        ++counts[t];
    }
    Tokens out;
    for (auto t : doc) {
        if (out.size() >= n_max) {
            break;
        }
        if (counts[t] >= repeat && std::find(out.begin(), out.end(), t) == out.end()) {
            out.push_back(t);
        }
    }
    return out;
}

Example generate_example(std::mt19937_64& rng, const Vocabulary& vocab,
                         const GenerationParams& params) {
    params.validate(vocab);
    const std::size_t salient = draw_between(rng, params.salient_min, params.salient_max);
    const std::size_t lo = std::max(params.doc_len_min, salient * params.repeat);
    const std::size_t hi =
        std::min(params.doc_len_max, salient * params.repeat + vocab.content_size() - salient);
    if (lo > hi) {
        throw std::invalid_argument("generation parameters are infeasible for this vocabulary");
    }
    const std::size_t doc_len = draw_between(rng, lo, hi);
    const std::size_t distractors = doc_len - salient * params.repeat;

    // Partial Fisher-Yates over the A range picks distinct tokens.
    Tokens pool(vocab.content_size());
    for (std::size_t i = 0; i < pool.size(); ++i) {
        pool[i] = vocab.a_begin + static_cast<TokenId>(i);
    }
    const std::size_t picks = salient + distractors;
    for (std::size_t i = 0; i < picks; ++i) {
        const auto j = i + static_cast<std::size_t>(uniform_below(rng, pool.size() - i));
        std::swap(pool[i], pool[j]);
    }
    Example ex;
    ex.doc.reserve(doc_len);
    for (std::size_t i = 0; i < salient; ++i) {
        for (std::size_t r = 0; r < params.repeat; ++r) {
            ex.doc.push_back(pool[i]);
        }
    }
    for (std::size_t i = salient; i < picks; ++i) {
        ex.doc.push_back(pool[i]);
    }
    shuffle_in_place(ex.doc, rng);
    ex.sum_a = salient_summary(ex.doc, params.repeat, params.n_max);
    Tokens sum_b = translate_tokens(vocab, ex.sum_a);
    for (std::size_t i = 0; i < params.extra_b; ++i) {
        sum_b.push_back(vocab.b_end - 1 - static_cast<TokenId>(i));
    }
    ex.sum_b = std::move(sum_b);
    return ex;
}

ScenarioSpec ScenarioSpec::named(const std::string& name, std::uint64_t seed) {
    static const std::map<std::string, double> kFractions = {
        {"minimum", 0.003}, {"medium", 0.015}, {"maximum", 0.030}, {"full", 1.0}};
    auto it = kFractions.find(name);
    if (it == kFractions.end()) {
        throw std::invalid_argument("unknown scenario '" + name +
                                    "' (expected minimum|medium|maximum|full)");
    }
    return ScenarioSpec{name, it->second, seed};
}

Corpus generate_corpus(std::uint64_t seed, const CorpusSizes& sizes, const Vocabulary& vocab,
                       const GenerationParams& params) {
    vocab.validate();
    params.validate(vocab);
    if (sizes.mono_pretrain == 0 || sizes.parallel_pool == 0 || sizes.valid == 0 ||
        sizes.test == 0) {
        throw std::invalid_argument("corpus split sizes must be positive");
    }
    Corpus corpus;
    corpus.vocab = vocab;
    auto fill = [&](std::vector<Example>& split, std::size_t n, std::uint64_t stream,
                    bool parallel) {
        split.resize(n);
        const auto count = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(static)
        for (std::int64_t i = 0; i < count; ++i) {
            const auto idx = static_cast<std::size_t>(i);
            std::mt19937_64 rng(derive_seed(seed, stream, idx));
            Example ex = generate_example(rng, vocab, params);
            ex.id = idx;
            if (!parallel) {
                ex.sum_b.reset();
            }
            split[idx] = std::move(ex);
        }
    };
    fill(corpus.mono, sizes.mono_pretrain, kStreamMono, false);
    fill(corpus.pool, sizes.parallel_pool, kStreamPool, true);
    fill(corpus.valid, sizes.valid, kStreamValid, true);
    fill(corpus.test, sizes.test, kStreamTest, true);
    return corpus;
}

std::size_t scenario_size(double fraction, std::size_t pool_size) {
    if (!(fraction > 0.0 && fraction <= 1.0)) {
        throw std::invalid_argument("parallel fraction must lie in (0, 1]");
    }
    // Tolerance absorbs representation error such as 0.003 · 10000 = 30.000000000000004.
    const double raw = fraction * static_cast<double>(pool_size);
    const auto n = static_cast<std::size_t>(std::ceil(raw - 1e-9));
    if (n == 0) {
        std::ostringstream os;
        os << "fraction " << fraction << " of a pool of " << pool_size
           << " rounds to zero examples; use a larger pool";
        throw std::invalid_argument(os.str());
    }
    return std::min(n, pool_size);
}

std::vector<Example> scenario_subset(const std::vector<Example>& pool, const ScenarioSpec& spec) {
    const std::size_t n = scenario_size(spec.parallel_fraction, pool.size());
    std::vector<std::size_t> order(pool.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    std::mt19937_64 rng(derive_seed(spec.seed, 0x5ce7a210ULL, 0));
    shuffle_in_place(order, rng);
    std::vector<Example> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back(pool[order[i]]);
    }
    return out;
}

std::vector<std::size_t> summary_alignment(const Example& example) {
    std::vector<std::size_t> align;
    if (!example.sum_b) {
        return align;
    }
    const std::size_t n = std::min(example.sum_a.size(), example.sum_b->size());
    for (std::size_t j = 0; j < n; ++j) {
        align.push_back(j);
    }
    return align;
}

std::vector<std::size_t> salient_positions(const Example& example) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < example.doc.size(); ++i) {
        if (std::find(example.sum_a.begin(), example.sum_a.end(), example.doc[i]) !=
            example.sum_a.end()) {
            out.push_back(i);
        }
    }
    return out;
}

std::string format_corpus_header(const CorpusFile& file) {
    const auto& v = file.vocab;
    std::ostringstream os;
    os << "#mclas-corpus v1 split=" << file.split << " parallel=" << (file.parallel ? 1 : 0)
       << " pad=" << Vocabulary::kPad << " bos=" << Vocabulary::kBos << " eos=" << Vocabulary::kEos
       << " lsep=" << Vocabulary::kLsep << " unk=" << Vocabulary::kUnk << " a=" << v.a_begin << ':'
       << v.a_end << " b=" << v.b_begin << ':' << v.b_end << " vocab=" << v.size()
       << " count=" << file.examples.size();
    return os.str();
}

void write_corpus(const CorpusFile& file, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw CorpusError("cannot open '" + path.string() + "' for writing");
    }
    os << format_corpus_header(file) << '\n';
    for (const auto& ex : file.examples) {
        os << "id=" << ex.id << "\tdoc=" << join_ids(ex.doc) << "\tsum_a=" << join_ids(ex.sum_a);
        if (ex.sum_b) {
            os << "\tsum_b=" << join_ids(*ex.sum_b);
        }
        os << '\n';
    }
    if (!os) {
        throw CorpusError("write to '" + path.string() + "' failed");
    }
}

CorpusFile read_corpus(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw CorpusError("cannot open corpus '" + path.string() + "'");
    }
    CorpusFile file;
    std::string line;
    if (!std::getline(is, line)) {
        throw CorpusError("line 1: missing header");
    }
    {
        std::istringstream hs(line);
        std::string magic, version;
        hs >> magic >> version;
        if (magic != "#mclas-corpus" || version != "v1") {
            throw CorpusError("line 1: not an mclas corpus header");
        }
        std::map<std::string, std::string> kv;
        std::string item;
        while (hs >> item) {
            const auto eq = item.find('=');
            if (eq == std::string::npos) {
                throw CorpusError("line 1: malformed header entry '" + item + "'");
            }
            kv[item.substr(0, eq)] = item.substr(eq + 1);
        }
        for (const char* key : {"split", "parallel", "a", "b", "vocab"}) {
            if (!kv.contains(key)) {
                throw CorpusError(std::string("line 1: header lacks '") + key + "'");
            }
        }
        file.split = kv["split"];
        file.parallel = kv["parallel"] == "1";
        std::tie(file.vocab.a_begin, file.vocab.a_end) = parse_range(kv["a"]);
        std::tie(file.vocab.b_begin, file.vocab.b_end) = parse_range(kv["b"]);
        try {
            file.vocab.validate();
        } catch (const std::invalid_argument& e) {
            throw CorpusError(std::string("line 1: ") + e.what());
        }
        if (std::to_string(file.vocab.size()) != kv["vocab"]) {
            throw CorpusError("line 1: vocab=" + kv["vocab"] + " disagrees with declared ranges");
        }
    }
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        std::map<std::string, std::string> fields;
        std::size_t start = 0;
        while (start <= line.size()) {
            const auto tab = line.find('\t', start);
            const std::string part =
                line.substr(start, tab == std::string::npos ? std::string::npos : tab - start);
            const auto eq = part.find('=');
            if (eq == std::string::npos) {
                throw CorpusError("line " + std::to_string(line_no) + ": malformed field '" + part +
                                  "'");
            }
            fields[part.substr(0, eq)] = part.substr(eq + 1);
            if (tab == std::string::npos) {
                break;
            }
            start = tab + 1;
        }
        for (const char* key : {"id", "doc", "sum_a"}) {
            if (!fields.contains(key)) {
                throw CorpusError("line " + std::to_string(line_no) + ": missing field '" + key +
                                  "'");
            }
        }
        Example ex;
        const auto id = parse_ids(fields["id"], line_no, "id");
        if (id.size() != 1) {
            throw CorpusError("line " + std::to_string(line_no) + ": field 'id' must hold one id");
        }
        ex.id = static_cast<std::uint64_t>(id[0]);
        ex.doc = parse_ids(fields["doc"], line_no, "doc");
        ex.sum_a = parse_ids(fields["sum_a"], line_no, "sum_a");
        if (fields.contains("sum_b")) {
            ex.sum_b = parse_ids(fields["sum_b"], line_no, "sum_b");
        } else if (file.parallel) {
            throw CorpusError("line " + std::to_string(line_no) +
                              ": missing field 'sum_b' in parallel split '" + file.split + "'");
        }
        auto check = [&](const Tokens& ids, bool lang_a, const char* field) {
            for (auto t : ids) {
                if (lang_a ? !file.vocab.in_a(t) : !file.vocab.in_b(t)) {
                    throw CorpusError("line " + std::to_string(line_no) + ": field '" + field +
                                      "' id " + std::to_string(t) +
                                      " outside its declared language range");
                }
            }
        };
        check(ex.doc, true, "doc");
        check(ex.sum_a, true, "sum_a");
        if (ex.sum_b) {
            check(*ex.sum_b, false, "sum_b");
        }
        file.examples.push_back(std::move(ex));
    }
    return file;
}

}  // namespace mclas
