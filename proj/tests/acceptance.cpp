// Acceptance run: one PASS/FAIL line per criterion. Exit status is nonzero
// when any criterion fails.
//
//   acceptance [artifact-dir] [--quick]
//
// --quick shrinks the training experiment for smoke runs; its verdicts on
// the directional criteria are not meaningful.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mclas/decoding.hpp"
#include "mclas/metrics.hpp"
#include "mclas/probe.hpp"
#include "mclas/run_config.hpp"
#include "mclas/training.hpp"
#include "support/gradcheck.hpp"

namespace fs = std::filesystem;
using namespace mclas;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Verdict {
    int id;
    bool pass;
    std::string title;
    std::string detail;
};

std::vector<Verdict> verdicts;

void report(int id, bool pass, const std::string& title, const std::string& detail) {
    verdicts.push_back({id, pass, title, detail});
    std::printf("criterion %d %s: %s (%s)\n", id, pass ? "PASS" : "FAIL", title.c_str(),
                detail.c_str());
    std::fflush(stdout);
}

std::string fmt(const char* f, double a) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

// ---------------------------------------------------------------- 1

void criterion_gradients() {
    const auto t0 = Clock::now();
    const auto checks = testutil::check_all_ops(5, 2024);
    double worst = 0.0;
    std::string worst_op;
    std::size_t min_shapes = ~std::size_t{0};
    for (const auto& c : checks) {
        if (c.max_rel_error >= worst) {
            worst = c.max_rel_error;
            worst_op = c.op;
        }
        min_shapes = std::min(min_shapes, c.shapes);
    }
    const double secs = seconds_since(t0);
    const bool ok = !checks.empty() && worst < 1e-4 && min_shapes >= 5 && secs < 60.0;
    report(1, ok, "finite-difference gradients",
           std::to_string(checks.size()) + " ops x " + std::to_string(min_shapes) +
               " shapes, max rel err " + fmt("%.2e", worst) + " (" + worst_op + "), " +
               fmt("%.1f", secs) + " s");
}

// ---------------------------------------------------------------- 2

ModelConfig small_model(const Vocabulary& vocab, std::size_t decoders) {
    ModelConfig c;
    c.layers_enc = 2;
    c.layers_dec = 2;
    c.heads = 2;
    c.d_model = 16;
    c.d_ff = 32;
    c.vocab_size = vocab.size();
    c.max_positions = 128;
    c.decoder_count = decoders;
    return c;
}

void criterion_decomposition() {
    const auto vocab = Vocabulary::with_content_size(30);
    Seq2SeqModel model(small_model(vocab, 1), 91);
    std::mt19937_64 rng(92);
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
        const Example ex = generate_example(rng, vocab, GenerationParams{});
        const auto l = loss_mclas(model, std::span<const Example>(&ex, 1), vocab);
        worst = std::max(worst, std::abs(l.total - (l.loss_a_part + l.loss_b_part)));
    }
    report(2, worst <= 1e-9, "two-term loss decomposition",
           "100 examples, max |total - (a + b)| = " + fmt("%.2e", worst));
}

// ---------------------------------------------------------------- 3

void criterion_two_paths() {
    const auto vocab = Vocabulary::with_content_size(30);
    std::mt19937_64 rng(93);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t decoders = trial % 2 ? 2 : 1;
        Seq2SeqModel model(small_model(vocab, decoders), 300 + static_cast<std::uint64_t>(trial));
        Tokens doc(4 + rng() % 20);
        for (auto& t : doc) {
            t = vocab.a_begin + static_cast<TokenId>(rng() % vocab.content_size());
        }
        Tokens prefix(1 + rng() % 16);
        for (auto& t : prefix) {
            t = static_cast<TokenId>(rng() % vocab.size());
        }
        prefix[0] = Vocabulary::kBos;
        const auto memory = encode(model, doc);
        const std::size_t which = decoders - 1;
        ParameterBinder binder(model.params(), false);
        const auto full = decode_teacher_forced(model, binder, memory, prefix, which, {}).logits;
        IncrementalDecoder inc(model, memory, which);
        for (std::size_t t = 0; t < prefix.size(); ++t) {
            const auto step = inc.step(prefix[t]);
            for (std::size_t c = 0; c < vocab.size(); ++c) {
                worst = std::max(worst, std::abs(step[c] - full.at(t, c)));
            }
        }
    }
    report(3, worst <= 1e-9, "teacher-forced vs incremental logits",
           "20 cases, max |diff| = " + fmt("%.2e", worst));
}

// ---------------------------------------------------------------- 9

std::size_t lcs_oracle(const Tokens& a, const Tokens& b) {
    std::vector<std::vector<std::size_t>> t(a.size() + 1, std::vector<std::size_t>(b.size() + 1, 0));
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            t[i][j] = a[i - 1] == b[j - 1] ? t[i - 1][j - 1] + 1 : std::max(t[i - 1][j], t[i][j - 1]);
        }
    }
    return t[a.size()][b.size()];
}

double kappa_oracle(const std::vector<std::vector<std::size_t>>& table) {
    const double items = static_cast<double>(table.size());
    double raters = 0;
    for (auto c : table[0]) {
        raters += static_cast<double>(c);
    }
    std::vector<double> pj(table[0].size(), 0.0);
    double pbar = 0.0;
    for (const auto& row : table) {
        double s = 0.0;
        for (std::size_t j = 0; j < row.size(); ++j) {
            s += static_cast<double>(row[j]) * static_cast<double>(row[j]);
            pj[j] += static_cast<double>(row[j]) / (items * raters);
        }
        pbar += (s - raters) / (raters * (raters - 1.0)) / items;
    }
    double pe = 0.0;
    for (double p : pj) {
        pe += p * p;
    }
    return (pbar - pe) / (1.0 - pe);
}

void criterion_metrics() {
    std::mt19937_64 rng(94);
    std::size_t lcs_mismatch = 0;
    for (int i = 0; i < 100; ++i) {
        Tokens a(rng() % 12), b(rng() % 12);
        for (auto& t : a) {
            t = 5 + static_cast<TokenId>(rng() % 6);
        }
        for (auto& t : b) {
            t = 5 + static_cast<TokenId>(rng() % 6);
        }
        const double lcs = static_cast<double>(lcs_oracle(a, b));
        const double p = a.empty() ? 0.0 : lcs / static_cast<double>(a.size());
        const double r = b.empty() ? 0.0 : lcs / static_cast<double>(b.size());
        const double f = p + r > 0 ? 2 * p * r / (p + r) : 0.0;
        const auto got = rouge_l(a, b);
        lcs_mismatch += got.p != p || got.r != r || got.f1 != f;
    }
    const auto clipped = rouge_n(Tokens{5, 5, 6}, Tokens{5, 6}, 1);
    const bool clip_ok = std::abs(clipped.p - 2.0 / 3.0) < 1e-12 && clipped.r == 1.0 &&
                         std::abs(clipped.f1 - 0.8) < 1e-12;
    const std::vector<std::vector<std::vector<std::size_t>>> tables = {
        {{3, 0}, {0, 3}},
        {{2, 1}, {1, 2}, {3, 0}, {0, 3}},
        {{0, 0, 0, 0, 14}, {0, 2, 6, 4, 2}, {0, 0, 3, 5, 6}, {0, 3, 9, 2, 0}, {2, 2, 8, 1, 1},
         {7, 7, 0, 0, 0}, {3, 2, 6, 3, 0}, {2, 5, 3, 2, 2}, {6, 5, 2, 1, 0}, {0, 2, 2, 3, 7}},
    };
    double kappa_err = 0.0;
    for (const auto& t : tables) {
        const auto k = fleiss_kappa(t);
        kappa_err = std::max(kappa_err, k.defined ? std::abs(k.kappa - kappa_oracle(t)) : 1.0);
    }
    const bool bws_ok = bws_score({6, 2, 20}) == 0.2 && bws_score({5, 0, 5}) == 1.0 &&
                        bws_score({0, 5, 5}) == -1.0;
    const bool ok = lcs_mismatch == 0 && clip_ok && kappa_err <= 1e-9 && bws_ok;
    report(9, ok, "metric oracles",
           "lcs mismatches " + std::to_string(lcs_mismatch) + "/100, clipped R-1 " +
               (clip_ok ? "ok" : "wrong") + ", kappa max err " + fmt("%.1e", kappa_err) + ", bws " +
               (bws_ok ? "ok" : "wrong"));
}

// ---------------------------------------------------------------- experiment

struct Setup {
    bool quick = false;
    RunConfig base;  // corpus, model and pretraining settings
    std::size_t pretrain_steps = 3000;
    std::size_t finetune_steps = 600;
    std::size_t eval_docs = 1000;
};

struct RunOutcome {
    std::string mode;
    std::string scenario;
    std::uint64_t seed = 0;
    RunReport report;
    TrainResult train;
};

RunConfig finetune_config(const Setup& s, const std::string& mode, const std::string& scenario,
                          std::uint64_t seed) {
    RunConfig c = s.base;
    c.stage = "finetune";
    c.mode = mode;
    c.scenario = scenario;
    c.seed = seed;
    c.train.max_steps = s.finetune_steps;
    c.train.warmup_enc = 50;
    c.train.warmup_dec = 50;
    c.train.eval_every = 50;
    return c;
}

std::vector<DecodeRecord> to_records(const std::vector<Example>& docs,
                                     const std::vector<DecodeResult>& res) {
    std::vector<DecodeRecord> out;
    for (std::size_t i = 0; i < docs.size(); ++i) {
        out.push_back({docs[i].id, res[i].sum_a, res[i].sum_b, res[i].score, res[i].truncated});
    }
    return out;
}

RunOutcome run_finetune(const Setup& s, const Corpus& corpus, const Seq2SeqModel* pre,
                        const std::string& mode, const std::string& scenario,
                        std::uint64_t seed, const std::string& label,
                        const std::vector<Example>& test, const fs::path& dir) {
    const auto cfg = finetune_config(s, mode, scenario, seed);
    const auto vocab = cfg.vocabulary();
    const auto subset = scenario_subset(corpus.pool, cfg.scenario_spec());
    auto tr = finetune(pre, cfg.training_mode(), subset, corpus.valid, vocab, cfg.model_config(),
                       cfg.train_config());
    const auto decoded = decode_documents(tr.model, test, cfg.objective(), vocab, cfg.decode);
    auto rep = evaluate_run(to_records(test, decoded), test, cfg.objective());
    rep.mode = mode;
    rep.scenario = label;
    rep.seed = seed;
    const fs::path run_dir = dir / (mode + "-" + label + "-seed" + std::to_string(seed));
    fs::create_directories(run_dir);
    auto run_cfg = cfg;
    run_cfg.init = pre ? "pretrain/model.ckpt" : "scratch";
    run_cfg.out_dir = run_dir.string();
    run_cfg.save(manifest_path(run_dir));
    write_report(rep, run_dir / "report.json");
    return {mode, label, seed, rep, std::move(tr)};
}

double mean_of(const std::vector<RunOutcome>& runs, const std::string& mode,
               const std::string& scenario, double (*get)(const RunReport&)) {
    double total = 0.0;
    std::size_t n = 0;
    for (const auto& r : runs) {
        if (r.mode == mode && r.scenario == scenario) {
            total += get(r.report);
            ++n;
        }
    }
    return n ? total / static_cast<double>(n) : std::nan("");
}

double cross_r1(const RunReport& r) { return 100.0 * r.cross->rouge.rouge1.f1; }
double mono_r1(const RunReport& r) { return r.mono ? 100.0 * r.mono->rouge.rouge1.f1 : std::nan(""); }
double gen_len(const RunReport& r) { return r.cross->length.gen; }
double gold_len(const RunReport& r) { return r.cross->length.gold; }

// ---------------------------------------------------------------- 8

struct ConstraintCount {
    std::size_t docs = 0;
    std::size_t out_of_language = 0;
    std::size_t repeated_trigrams = 0;
};

std::size_t repeated_trigrams(const Tokens& seg) {
    std::set<std::tuple<TokenId, TokenId, TokenId>> seen;
    std::size_t repeats = 0;
    for (std::size_t i = 0; i + 2 < seg.size(); ++i) {
        repeats += !seen.insert({seg[i], seg[i + 1], seg[i + 2]}).second;
    }
    return repeats;
}

ConstraintCount check_constraints(const Vocabulary& vocab, const std::vector<DecodeResult>& res,
                                  Objective objective) {
    ConstraintCount c;
    c.docs = res.size();
    for (const auto& r : res) {
        const bool has_a = objective == Objective::MCLAS || objective == Objective::NCLS_MS;
        const bool has_b = objective != Objective::Monolingual;
        if (has_a) {
            for (auto t : r.sum_a) {
                c.out_of_language += !vocab.in_a(t);
            }
            c.repeated_trigrams += repeated_trigrams(r.sum_a);
        }
        if (has_b) {
            for (auto t : r.sum_b) {
                c.out_of_language += !vocab.in_b(t);
            }
            c.repeated_trigrams += repeated_trigrams(r.sum_b);
        }
        // Specials other than the framing ones never appear inside the raw output.
        for (std::size_t i = 1; i < r.raw.size(); ++i) {
            const auto t = r.raw[i];
            c.out_of_language += t == Vocabulary::kPad || t == Vocabulary::kUnk || t == Vocabulary::kBos;
        }
    }
    return c;
}

// ---------------------------------------------------------------- 10

bool oracle_maps_exact() {
    const std::size_t n = 4;
    const std::vector<std::size_t> align{0, 1, 2, 3};
    AttentionMap tr{AttentionKind::Self, 0, 0, 2 * n + 2, 2 * n + 2, {}};
    tr.weights.assign(tr.query_len * tr.key_len, 0.0);
    // Phase A rows are causal-uniform so only the aligned phase B pattern stands out.
    for (std::size_t q = 0; q <= n; ++q) {
        for (std::size_t k = 0; k <= q; ++k) {
            tr.weights[q * tr.key_len + k] = 1.0 / static_cast<double>(q + 1);
        }
    }
    for (std::size_t j = 0; j < n; ++j) {
        tr.weights[(n + 1 + j) * tr.key_len + align[j] + 1] = 1.0;
    }
    tr.weights[(2 * n + 1) * tr.key_len] = 1.0;
    const auto ct = classify_self_head(tr, align, ProbeThresholds{.translation = 0.8});

    AttentionMap sm{AttentionKind::EncDec, 0, 0, 2 * n + 2, 12, {}};
    sm.weights.assign(sm.query_len * sm.key_len, 0.0);
    for (std::size_t q = 0; q < sm.query_len; ++q) {
        sm.weights[q * sm.key_len + 3] = 0.5;
        sm.weights[q * sm.key_len + 7] = 0.5;
    }
    const auto cs = classify_encdec_head(sm, {3, 7});

    AttentionMap un{AttentionKind::EncDec, 0, 0, 2 * n + 2, 12, {}};
    un.weights.assign(un.query_len * un.key_len, 1.0 / 12.0);
    const auto cu = classify_encdec_head(un, {3, 7});

    return ct.labels == std::vector<std::string>{"translation"} && ct.hit_rate == 1.0 &&
           cs.labels == std::vector<std::string>{"summarization"} && cu.labels.empty();
}

void criterion_probe(const RunOutcome& best, const Vocabulary& vocab,
                     const std::vector<Example>& test, const fs::path& dir) {
    std::size_t ti = 0;
    while (ti < test.size() && test[ti].sum_a.size() < 4) {
        ++ti;
    }
    const Example& templ = test.at(ti);
    const auto probe = make_probe_set(templ, 64, vocab, 95);
    const auto maps = collect_attention(best.train.model, probe, vocab);
    const fs::path heat = dir / "heatmaps";
    fs::create_directories(heat);
    for (const auto& m : maps) {
        emit_heatmap(m, heat / heatmap_filename(m));
    }
    std::size_t files = 0;
    for (const auto& e : fs::directory_iterator(heat)) {
        files += e.path().extension() == ".svg";
    }
    const auto& mc = best.train.model.config();
    const std::size_t expected = 2 * mc.layers_dec * mc.heads;
    ProbeThresholds th;
    th.translation = 0.8;
    const auto rep = classify_heads(maps, templ, th);
    write_probe_summary(rep, dir / "probe-summary.txt");
    double best_hit = 0.0;
    for (const auto& h : rep.heads) {
        if (h.kind == AttentionKind::Self) {
            best_hit = std::max(best_hit, h.hit_rate);
        }
    }
    const std::size_t trans = rep.count(AttentionKind::Self, "translation");
    const std::size_t summ = rep.count(AttentionKind::EncDec, "summarization");
    const bool oracle = oracle_maps_exact();
    const bool ok = trans >= 1 && summ >= 1 && files == expected && oracle;
    report(10, ok, "probing existence",
           "seed " + std::to_string(best.seed) + ": translation heads " + std::to_string(trans) +
               " (best hit rate " + fmt("%.2f", best_hit) + "), summarization heads " +
               std::to_string(summ) + ", heatmaps " + std::to_string(files) + "/" +
               std::to_string(expected) + ", oracle maps " + (oracle ? "exact" : "wrong"));
}

// ---------------------------------------------------------------- 11

void criterion_determinism(const Setup& s, const Corpus& corpus, const Seq2SeqModel& pre,
                           const fs::path& dir) {
    const auto cfg = finetune_config(s, "mclas", "maximum", 11);
    const auto vocab = cfg.vocabulary();
    const auto subset = scenario_subset(corpus.pool, cfg.scenario_spec());
    auto losses = [&] {
        auto init = init_for_finetune(&pre, cfg.training_mode(), cfg.model_config(), cfg.seed);
        Trainer trainer(std::move(init), cfg.objective(), vocab, cfg.train_config());
        std::vector<double> out;
        for (int i = 0; i < 100; ++i) {
            out.push_back(trainer.step(subset).loss);
        }
        return std::make_pair(out, trainer.model());
    };
    const auto [l1, m1] = losses();
    const auto [l2, m2] = losses();
    std::size_t loss_diff = 0;
    for (std::size_t i = 0; i < l1.size(); ++i) {
        loss_diff += std::memcmp(&l1[i], &l2[i], sizeof(double)) != 0;
    }
    const std::vector<Example> docs(corpus.test.begin(), corpus.test.begin() + 100);
    auto decode_to = [&](const fs::path& p) {
        const auto res = decode_documents(m1, docs, cfg.objective(), vocab, cfg.decode);
        write_decodes({cfg.mode, to_records(docs, res)}, p);
        std::ifstream in(p, std::ios::binary);
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };
    const auto d1 = decode_to(dir / "determinism-a.tsv");
    const auto d2 = decode_to(dir / "determinism-b.tsv");
    const bool ok = loss_diff == 0 && l1.size() == 100 && d1 == d2 && !d1.empty();
    report(11, ok, "determinism",
           std::to_string(100 - loss_diff) + "/100 losses bit-identical, decode files " +
               (d1 == d2 ? "byte-identical" : "differ") + " (" + std::to_string(d1.size()) +
               " bytes)");
}

}  // namespace

int main(int argc, char** argv) {
    Setup s;
    fs::path dir = "acceptance-artifacts";
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--quick") {
            s.quick = true;
        } else {
            dir = a;
        }
    }
    if (s.quick) {
        s.pretrain_steps = 300;
        s.finetune_steps = 100;
        s.eval_docs = 100;
    }
    fs::create_directories(dir);
    const auto t_all = Clock::now();

    criterion_gradients();
    criterion_decomposition();
    criterion_two_paths();
    criterion_metrics();

    // Shared corpus and pretrained monolingual model.
    s.base.sizes = CorpusSizes{20000, 10000, 200, 1000};
    s.base.train.max_steps = s.pretrain_steps;
    s.base.train.eval_every = 500;
    s.base.decode.max_len = 40;
    const auto vocab = s.base.vocabulary();
    const auto corpus = generate_corpus(s.base.corpus_seed, s.base.sizes, vocab, s.base.generation);
    const std::vector<Example> test(corpus.test.begin(),
                                    corpus.test.begin() + static_cast<std::ptrdiff_t>(s.eval_docs));

    auto t0 = Clock::now();
    RunConfig pre_cfg = s.base;
    pre_cfg.stage = "pretrain";
    const auto pre = pretrain_monolingual(pre_cfg.model_config(), corpus.mono, corpus.valid, vocab,
                                          pre_cfg.train_config());
    fs::create_directories(dir / "pretrain");
    pre.model.save(dir / "pretrain" / "model.ckpt");
    pre_cfg.out_dir = (dir / "pretrain").string();
    pre_cfg.save(manifest_path(dir / "pretrain"));
    std::printf("info: pretrained %zu steps in %.0f s, best step %zu, validation ppl %.3f\n",
                pre.log.size(), seconds_since(t0), pre.best_step, pre.best_ppl);

    const std::vector<std::string> modes = {"ncls", "ncls_ms", "mclas"};
    const std::vector<std::string> scenarios = {"minimum", "medium", "maximum"};
    std::vector<RunOutcome> runs;
    t0 = Clock::now();
    for (const auto& sc : scenarios) {
        for (const auto& mode : modes) {
            for (std::uint64_t seed = 1; seed <= 3; ++seed) {
                runs.push_back(run_finetune(s, corpus, &pre.model, mode, sc, seed, sc, test, dir / "runs"));
                const auto& r = runs.back();
                std::printf("info: %-8s %-7s seed %llu: best step %zu, cross R-1 %.2f, mono R-1 %.2f, len %.2f/%.2f\n",
                            sc.c_str(), mode.c_str(), static_cast<unsigned long long>(seed),
                            r.train.best_step, cross_r1(r.report), mono_r1(r.report),
                            gen_len(r.report), gold_len(r.report));
                std::fflush(stdout);
            }
        }
    }
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        runs.push_back(run_finetune(s, corpus, nullptr, "mclas", "medium", seed, "medium-scratch", test,
                                    dir / "runs"));
        const auto& r = runs.back();
        std::printf("info: medium   mclas from scratch seed %llu: best step %zu, cross R-1 %.2f\n",
                    static_cast<unsigned long long>(seed), r.train.best_step, cross_r1(r.report));
    }
    std::printf("info: finetuning sweep took %.0f s\n", seconds_since(t0));

    std::vector<RunReport> reports;
    for (const auto& r : runs) {
        reports.push_back(r.report);
    }
    {
        std::ofstream os(dir / "comparison.md");
        os << format_comparison(compare_runs(reports));
    }

    // 4
    {
        std::string detail;
        bool ok = true;
        for (const auto& sc : scenarios) {
            const double m = mean_of(runs, "mclas", sc, cross_r1);
            const double n = mean_of(runs, "ncls", sc, cross_r1);
            const double ms = mean_of(runs, "ncls_ms", sc, cross_r1);
            const double margin = sc == "minimum" ? 2.0 : 0.0;
            ok = ok && m >= n + margin && m >= ms + margin;
            char buf[160];
            std::snprintf(buf, sizeof buf, "%s%s mclas %.2f ncls %.2f ncls_ms %.2f", detail.empty() ? "" : "; ",
                          sc.c_str(), m, n, ms);
            detail += buf;
        }
        report(4, ok, "low-resource cross-lingual ROUGE-1 ordering", detail);
    }
    // 5
    {
        const double init = mean_of(runs, "mclas", "medium", cross_r1);
        const double scratch = mean_of(runs, "mclas", "medium-scratch", cross_r1);
        char buf[120];
        std::snprintf(buf, sizeof buf, "medium mclas pretrained %.2f vs scratch %.2f", init, scratch);
        report(5, init >= scratch + 5.0, "initialization effect", buf);
    }
    // 6
    {
        const double gold = mean_of(runs, "mclas", "maximum", gold_len);
        const double dm = std::abs(mean_of(runs, "mclas", "maximum", gen_len) - gold);
        const double dn = std::abs(mean_of(runs, "ncls", "maximum", gen_len) - gold);
        char buf[160];
        std::snprintf(buf, sizeof buf, "gold %.3f, |mclas - gold| %.3f vs |ncls - gold| %.3f", gold, dm, dn);
        report(6, dm < dn, "length behavior", buf);
    }
    // 7
    {
        const double m = mean_of(runs, "mclas", "maximum", mono_r1);
        const double ms = mean_of(runs, "ncls_ms", "maximum", mono_r1);
        char buf[120];
        std::snprintf(buf, sizeof buf, "maximum mono R-1 mclas %.2f vs ncls_ms %.2f", m, ms);
        report(7, m >= ms, "monolingual retention", buf);
    }
    // Cross-span loss of MCLAS should at least halve over finetuning.
    for (const auto& r : runs) {
        if (r.mode == "mclas" && r.scenario == "maximum" && r.seed == 1) {
            const auto& log = r.train.log;
            const std::size_t w = std::min<std::size_t>(20, log.size() / 2);
            double first = 0.0, last = 0.0;
            for (std::size_t i = 0; i < w; ++i) {
                first += log[i].loss_b_part;
                last += log[log.size() - 1 - i].loss_b_part;
            }
            std::printf("info: mclas cross-span loss %.3f -> %.3f (%.0f%% drop)\n", first / w,
                        last / w, 100.0 * (1.0 - last / first));
        }
    }

    // 8: 1000 documents per mode with the maximum-scenario seed-1 models.
    {
        const std::vector<Example> docs(corpus.test.begin(), corpus.test.begin() + 1000);
        std::string detail;
        bool ok = true;
        for (const auto& mode : modes) {
            const RunOutcome* run = nullptr;
            for (const auto& r : runs) {
                if (r.mode == mode && r.scenario == "maximum" && r.seed == 1) {
                    run = &r;
                }
            }
            const auto cfg = finetune_config(s, mode, "maximum", 1);
            const auto res = decode_documents(run->train.model, docs, cfg.objective(), vocab, cfg.decode);
            const auto c = check_constraints(vocab, res, cfg.objective());
            ok = ok && c.docs == 1000 && c.out_of_language == 0 && c.repeated_trigrams == 0;
            detail += (detail.empty() ? "" : "; ") + mode + ": " + std::to_string(c.docs) + " docs, " +
                      std::to_string(c.out_of_language) + " out-of-language, " +
                      std::to_string(c.repeated_trigrams) + " repeated trigrams";
        }
        report(8, ok, "decoding constraints", detail);
    }

    // 10: the maximum-scenario MCLAS seed with the lowest validation perplexity.
    {
        const RunOutcome* best = nullptr;
        for (const auto& r : runs) {
            if (r.mode == "mclas" && r.scenario == "maximum" &&
                (!best || r.train.best_ppl < best->train.best_ppl)) {
                best = &r;
            }
        }
        criterion_probe(*best, vocab, corpus.test, dir / "probe");
    }

    criterion_determinism(s, corpus, pre.model, dir);

    std::sort(verdicts.begin(), verdicts.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    std::size_t passed = 0;
    std::printf("\nsummary (%.0f s total%s):\n", seconds_since(t_all), s.quick ? ", quick mode" : "");
    for (const auto& v : verdicts) {
        passed += v.pass;
        std::printf("  %2d %s %s\n", v.id, v.pass ? "PASS" : "FAIL", v.title.c_str());
    }
    std::printf("%zu/%zu criteria pass\n", passed, verdicts.size());
    return passed == verdicts.size() ? 0 : 1;
}
