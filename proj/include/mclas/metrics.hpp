#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mclas/corpus.hpp"
#include "mclas/decoding.hpp"

namespace mclas {

struct PRF {
    double p = 0.0;
    double r = 0.0;
    double f1 = 0.0;
};

struct RougeScore {
    PRF rouge1;
    PRF rouge2;
    PRF rougeL;
};

// F1 from precision and recall; 0 when both are 0.
double f1_of(double p, double r);

// Clipped n-gram overlap.
PRF rouge_n(std::span<const TokenId> candidate, std::span<const TokenId> reference, std::size_t n);
// Longest-common-subsequence overlap.
PRF rouge_l(std::span<const TokenId> candidate, std::span<const TokenId> reference);
RougeScore rouge(std::span<const TokenId> candidate, std::span<const TokenId> reference);

struct BwsTally {
    std::size_t best = 0;
    std::size_t worst = 0;
    std::size_t total = 0;
};

// (best - worst) / total, in [-1, 1].
double bws_score(const BwsTally& tally);
std::map<std::string, double> bws_scores(const std::map<std::string, BwsTally>& tallies);

struct KappaResult {
    bool defined = false;
    double kappa = 0.0;
    double agreement = 0.0;  // mean per-item agreement
    double chance = 0.0;     // agreement expected from category marginals
    std::string diagnostic;
};

// `counts` is items × categories; every row must sum to the same rater count (≥ 2).
KappaResult fleiss_kappa(const std::vector<std::vector<std::size_t>>& counts);

struct LengthStats {
    double gen = 0.0;
    double gold = 0.0;
    double delta() const { return gen - gold; }
};

struct SideReport {
    RougeScore rouge;
    LengthStats length;
};

struct RunReport {
    std::string mode;
    std::string scenario;
    std::uint64_t seed = 0;
    std::size_t count = 0;
    std::optional<SideReport> cross;  // S^B against gold S^B
    std::optional<SideReport> mono;   // S^A against gold S^A; absent for NCLS
    std::optional<std::map<std::string, double>> bws;
    std::optional<KappaResult> kappa;
};

// Corpus means of per-example scores. Throws CorpusError naming missing ids
// when decodes and references do not cover the same documents.
RunReport evaluate_run(const std::vector<DecodeRecord>& decodes,
                       const std::vector<Example>& references, Objective objective);

void write_report(const RunReport& report, const std::filesystem::path& path);
RunReport read_report(const std::filesystem::path& path);

struct CellStats {
    std::size_t runs = 0;
    double mean = 0.0;
    double stddev = 0.0;  // sample standard deviation across seeds; 0 for one run
};

// System × scenario grids of seed means. Missing cells are absent.
struct ComparisonTable {
    std::vector<std::string> systems;
    std::vector<std::string> scenarios;
    // metric -> (system, scenario) -> cell
    std::map<std::string, std::map<std::pair<std::string, std::string>, CellStats>> cells;

    std::optional<CellStats> cell(const std::string& metric, const std::string& system,
                                  const std::string& scenario) const;
};

ComparisonTable compare_runs(const std::vector<RunReport>& reports);
// Markdown-style tables: cross-lingual ROUGE, lengths and monolingual retention.
std::string format_comparison(const ComparisonTable& table);

}  // namespace mclas
