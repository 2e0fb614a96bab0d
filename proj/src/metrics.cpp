#include "mclas/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include <json.hpp>

namespace mclas {

using nlohmann::json;

double f1_of(double p, double r) { return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r); }

PRF rouge_n(std::span<const TokenId> candidate, std::span<const TokenId> reference, std::size_t n) {
    if (n < 1) {
        throw std::invalid_argument("rouge_n: n must be at least 1");
    }
    if (candidate.size() < n || reference.size() < n) {
        return {};
    }
    auto grams = [n](std::span<const TokenId> seq) {
        std::map<std::vector<TokenId>, std::size_t> bag;
        for (std::size_t i = 0; i + n <= seq.size(); ++i) {
            ++bag[std::vector<TokenId>(seq.begin() + i, seq.begin() + i + n)];
        }
        return bag;
    };
    const auto cand = grams(candidate);
    const auto ref = grams(reference);
    std::size_t overlap = 0;
    for (const auto& [g, c] : cand) {
        auto it = ref.find(g);
        if (it != ref.end()) {
            overlap += std::min(c, it->second);
        }
    }
    PRF out;
    out.p = static_cast<double>(overlap) / static_cast<double>(candidate.size() - n + 1);
    out.r = static_cast<double>(overlap) / static_cast<double>(reference.size() - n + 1);
    out.f1 = f1_of(out.p, out.r);
    return out;
}

PRF rouge_l(std::span<const TokenId> candidate, std::span<const TokenId> reference) {
    if (candidate.empty() || reference.empty()) {
        return {};
    }
    const std::size_t m = reference.size();
    std::vector<std::size_t> prev(m + 1, 0), cur(m + 1, 0);
    for (auto c : candidate) {
        for (std::size_t j = 1; j <= m; ++j) {
            cur[j] = c == reference[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    const double lcs = static_cast<double>(prev[m]);
    PRF out;
    out.p = lcs / static_cast<double>(candidate.size());
    out.r = lcs / static_cast<double>(m);
    out.f1 = f1_of(out.p, out.r);
    return out;
}

RougeScore rouge(std::span<const TokenId> candidate, std::span<const TokenId> reference) {
    return {rouge_n(candidate, reference, 1), rouge_n(candidate, reference, 2),
            rouge_l(candidate, reference)};
}

double bws_score(const BwsTally& tally) {
    if (tally.total == 0) {
        throw std::invalid_argument("bws_score: no comparison items");
    }
    if (tally.best + tally.worst > tally.total) {
        throw std::invalid_argument("bws_score: best + worst exceeds total");
    }
    return (static_cast<double>(tally.best) - static_cast<double>(tally.worst)) /
           static_cast<double>(tally.total);
}

std::map<std::string, double> bws_scores(const std::map<std::string, BwsTally>& tallies) {
    std::map<std::string, double> out;
    for (const auto& [name, t] : tallies) {
        out[name] = bws_score(t);
    }
    return out;
}

KappaResult fleiss_kappa(const std::vector<std::vector<std::size_t>>& counts) {
    if (counts.empty()) {
        throw std::invalid_argument("fleiss_kappa: no items");
    }
    const std::size_t k = counts.front().size();
    std::size_t raters = 0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
        if (counts[i].size() != k) {
            throw std::invalid_argument("fleiss_kappa: ragged count table");
        }
        std::size_t s = 0;
        for (auto c : counts[i]) {
            s += c;
        }
        if (i == 0) {
            raters = s;
        } else if (s != raters) {
            throw std::invalid_argument("fleiss_kappa: item " + std::to_string(i) + " has " +
                                        std::to_string(s) + " ratings, expected " +
                                        std::to_string(raters));
        }
    }
    if (raters < 2) {
        throw std::invalid_argument("fleiss_kappa: need at least 2 raters per item");
    }
    const double n = static_cast<double>(counts.size());
    const double r = static_cast<double>(raters);
    std::vector<double> marginal(k, 0.0);
    double p_bar = 0.0;
    for (const auto& row : counts) {
        double agree = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            const double c = static_cast<double>(row[j]);
            agree += c * (c - 1.0);
            marginal[j] += c;
        }
        p_bar += agree / (r * (r - 1.0));
    }
    p_bar /= n;
    double p_e = 0.0;
    for (auto m : marginal) {
        const double pj = m / (n * r);
        p_e += pj * pj;
    }
    KappaResult out;
    out.agreement = p_bar;
    out.chance = p_e;
    if (std::abs(1.0 - p_e) < 1e-15) {
        out.diagnostic = "chance agreement is 1: every rating falls in one category";
        return out;
    }
    out.defined = true;
    out.kappa = (p_bar - p_e) / (1.0 - p_e);
    return out;
}

namespace {

struct Accum {
    RougeScore sum;
    double gen = 0.0;
    double gold = 0.0;

    void add(std::span<const TokenId> cand, std::span<const TokenId> ref) {
        const auto s = rouge(cand, ref);
        auto acc = [](PRF& d, const PRF& x) {
            d.p += x.p;
            d.r += x.r;
            d.f1 += x.f1;
        };
        acc(sum.rouge1, s.rouge1);
        acc(sum.rouge2, s.rouge2);
        acc(sum.rougeL, s.rougeL);
        gen += static_cast<double>(cand.size());
        gold += static_cast<double>(ref.size());
    }

    SideReport mean(std::size_t count) const {
        const double c = static_cast<double>(count);
        auto div = [c](PRF x) { return PRF{x.p / c, x.r / c, x.f1 / c}; };
        return {{div(sum.rouge1), div(sum.rouge2), div(sum.rougeL)}, {gen / c, gold / c}};
    }
};

json prf_json(const PRF& x) { return {{"p", x.p}, {"r", x.r}, {"f1", x.f1}}; }

PRF prf_from(const json& j) { return {j.at("p"), j.at("r"), j.at("f1")}; }

json side_json(const std::optional<SideReport>& s) {
    if (!s) {
        return nullptr;
    }
    return {{"rouge1", prf_json(s->rouge.rouge1)},
            {"rouge2", prf_json(s->rouge.rouge2)},
            {"rougeL", prf_json(s->rouge.rougeL)},
            {"len_gen", s->length.gen},
            {"len_gold", s->length.gold},
            {"len_delta", s->length.delta()}};
}

std::optional<SideReport> side_from(const json& j) {
    if (j.is_null()) {
        return std::nullopt;
    }
    SideReport s;
    s.rouge = {prf_from(j.at("rouge1")), prf_from(j.at("rouge2")), prf_from(j.at("rougeL"))};
    s.length = {j.at("len_gen"), j.at("len_gold")};
    return s;
}

void flatten_side(const std::string& prefix, const std::optional<SideReport>& s,
                  std::map<std::string, double>& out) {
    if (!s) {
        return;
    }
    auto prf = [&](const std::string& name, const PRF& x) {
        out[prefix + "." + name + ".p"] = x.p;
        out[prefix + "." + name + ".r"] = x.r;
        out[prefix + "." + name + ".f1"] = x.f1;
    };
    prf("rouge1", s->rouge.rouge1);
    prf("rouge2", s->rouge.rouge2);
    prf("rougeL", s->rouge.rougeL);
    out[prefix + ".len_gen"] = s->length.gen;
    out[prefix + ".len_gold"] = s->length.gold;
    out[prefix + ".len_delta"] = s->length.delta();
}

std::vector<std::string> ordered(const std::set<std::string>& names,
                                 const std::vector<std::string>& canonical) {
    std::vector<std::string> out;
    for (const auto& c : canonical) {
        if (names.contains(c)) {
            out.push_back(c);
        }
    }
    for (const auto& n : names) {
        if (std::find(canonical.begin(), canonical.end(), n) == canonical.end()) {
            out.push_back(n);
        }
    }
    return out;
}

}  // namespace

RunReport evaluate_run(const std::vector<DecodeRecord>& decodes,
                       const std::vector<Example>& references, Objective objective) {
    std::map<std::uint64_t, const Example*> refs;
    for (const auto& ex : references) {
        refs[ex.id] = &ex;
    }
    std::set<std::uint64_t> decoded;
    std::vector<std::uint64_t> unknown;
    for (const auto& d : decodes) {
        if (!refs.contains(d.doc_id)) {
            unknown.push_back(d.doc_id);
        }
        decoded.insert(d.doc_id);
    }
    std::vector<std::uint64_t> missing;
    for (const auto& [id, ex] : refs) {
        if (!decoded.contains(id)) {
            missing.push_back(id);
        }
    }
    if (!unknown.empty() || !missing.empty() || decoded.size() != decodes.size()) {
        std::ostringstream os;
        os << "decode/reference id mismatch;";
        auto list = [&](const char* what, const std::vector<std::uint64_t>& ids) {
            os << ' ' << what << ':';
            for (std::size_t i = 0; i < ids.size() && i < 20; ++i) {
                os << ' ' << ids[i];
            }
            if (ids.size() > 20) {
                os << " ...(" << ids.size() << " total)";
            }
        };
        list("without decode", missing);
        list("without reference", unknown);
        if (decoded.size() != decodes.size()) {
            os << " duplicate decode ids present";
        }
        throw CorpusError(os.str());
    }

    const bool want_cross = objective != Objective::Monolingual;
    const bool want_mono = objective != Objective::NCLS;
    Accum cross, mono;
    for (const auto& d : decodes) {
        const Example& ex = *refs.at(d.doc_id);
        if (want_cross) {
            if (!ex.sum_b) {
                throw CorpusError("reference " + std::to_string(ex.id) +
                                  " has no cross-lingual summary");
            }
            cross.add(d.sum_b, *ex.sum_b);
        }
        if (want_mono) {
            mono.add(d.sum_a, ex.sum_a);
        }
    }
    RunReport report;
    report.mode = to_string(objective);
    report.count = decodes.size();
    if (decodes.empty()) {
        return report;
    }
    if (want_cross) {
        report.cross = cross.mean(decodes.size());
    }
    if (want_mono) {
        report.mono = mono.mean(decodes.size());
    }
    return report;
}

void write_report(const RunReport& report, const std::filesystem::path& path) {
    json j;
    j["format"] = "mclas-report";
    j["mode"] = report.mode;
    j["scenario"] = report.scenario;
    j["seed"] = report.seed;
    j["count"] = report.count;
    j["cross"] = side_json(report.cross);
    j["mono"] = side_json(report.mono);
    j["bertscore"] = nullptr;
    if (report.bws) {
        j["bws"] = *report.bws;
    } else {
        j["bws"] = nullptr;
    }
    if (report.kappa) {
        j["kappa"] = {{"defined", report.kappa->defined},
                      {"kappa", report.kappa->defined ? json(report.kappa->kappa) : json(nullptr)},
                      {"agreement", report.kappa->agreement},
                      {"chance", report.kappa->chance},
                      {"diagnostic", report.kappa->diagnostic}};
    } else {
        j["kappa"] = nullptr;
    }
    std::ofstream os(path);
    if (!os) {
        throw std::runtime_error("cannot write '" + path.string() + "'");
    }
    os << j.dump(2) << '\n';
}

RunReport read_report(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) {
        throw std::runtime_error("cannot open '" + path.string() + "'");
    }
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw FormatError("'" + path.string() + "': " + e.what());
    }
    if (j.value("format", "") != "mclas-report") {
        throw FormatError("'" + path.string() + "' is not a run report");
    }
    RunReport r;
    r.mode = j.at("mode");
    r.scenario = j.at("scenario");
    r.seed = j.at("seed");
    r.count = j.at("count");
    r.cross = side_from(j.at("cross"));
    r.mono = side_from(j.at("mono"));
    if (!j.at("bws").is_null()) {
        r.bws = j.at("bws").get<std::map<std::string, double>>();
    }
    if (!j.at("kappa").is_null()) {
        const auto& k = j.at("kappa");
        KappaResult kr;
        kr.defined = k.at("defined");
        kr.kappa = kr.defined ? k.at("kappa").get<double>() : 0.0;
        kr.agreement = k.at("agreement");
        kr.chance = k.at("chance");
        kr.diagnostic = k.at("diagnostic");
        r.kappa = kr;
    }
    return r;
}

std::optional<CellStats> ComparisonTable::cell(const std::string& metric, const std::string& system,
                                               const std::string& scenario) const {
    auto m = cells.find(metric);
    if (m == cells.end()) {
        return std::nullopt;
    }
    auto c = m->second.find({system, scenario});
    if (c == m->second.end()) {
        return std::nullopt;
    }
    return c->second;
}

ComparisonTable compare_runs(const std::vector<RunReport>& reports) {
    std::map<std::string, std::map<std::pair<std::string, std::string>, std::vector<double>>> values;
    std::set<std::string> systems, scenarios;
    for (const auto& r : reports) {
        systems.insert(r.mode);
        scenarios.insert(r.scenario);
        std::map<std::string, double> flat;
        flatten_side("cross", r.cross, flat);
        flatten_side("mono", r.mono, flat);
        for (const auto& [metric, v] : flat) {
            values[metric][{r.mode, r.scenario}].push_back(v);
        }
    }
    ComparisonTable t;
    t.systems = ordered(systems, {"ncls", "ncls_ms", "mclas", "mclas_scratch"});
    t.scenarios = ordered(scenarios, {"minimum", "medium", "maximum", "full"});
    for (const auto& [metric, by_cell] : values) {
        for (const auto& [key, vs] : by_cell) {
            CellStats c;
            c.runs = vs.size();
            for (auto v : vs) {
                c.mean += v;
            }
            c.mean /= static_cast<double>(vs.size());
            if (vs.size() > 1) {
                double ss = 0.0;
                for (auto v : vs) {
                    ss += (v - c.mean) * (v - c.mean);
                }
                c.stddev = std::sqrt(ss / static_cast<double>(vs.size() - 1));
            }
            t.cells[metric][key] = c;
        }
    }
    return t;
}

std::string format_comparison(const ComparisonTable& table) {
    std::ostringstream os;
    os << std::fixed;
    auto grid = [&](const std::string& title, const std::vector<std::string>& metrics,
                    double scale) {
        os << "## " << title << "\n\n| system | scenario |";
        for (const auto& m : metrics) {
            os << ' ' << m << " |";
        }
        os << " runs |\n|---|---|";
        for (std::size_t i = 0; i <= metrics.size(); ++i) {
            os << "---|";
        }
        os << '\n';
        for (const auto& sys : table.systems) {
            for (const auto& sc : table.scenarios) {
                os << "| " << sys << " | " << sc << " |";
                std::size_t runs = 0;
                for (const auto& m : metrics) {
                    if (auto c = table.cell(m, sys, sc)) {
                        os << ' ' << std::setprecision(2) << c->mean * scale << " ± "
                           << c->stddev * scale << " |";
                        runs = c->runs;
                    } else {
                        os << " absent |";
                    }
                }
                os << ' ' << runs << " |\n";
            }
        }
        os << '\n';
    };
    grid("Cross-lingual ROUGE F1 (x100, seed mean ± sd)",
         {"cross.rouge1.f1", "cross.rouge2.f1", "cross.rougeL.f1"}, 100.0);
    grid("Cross-lingual summary length", {"cross.len_gen", "cross.len_gold", "cross.len_delta"},
         1.0);
    grid("Monolingual ROUGE (x100, seed mean ± sd)",
         {"mono.rouge1.f1", "mono.rouge2.f1", "mono.rougeL.f1", "mono.rouge1.p", "mono.rouge1.r"},
         100.0);
    return os.str();
}

}  // namespace mclas
