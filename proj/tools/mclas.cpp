// mclas: corpus generation, training, decoding, evaluation, probing and
// comparison from one binary. Exit status: 0 success, 1 runtime failure,
// 2 usage or configuration error.

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "mclas/checkpoint.hpp"
#include "mclas/corpus.hpp"
#include "mclas/decoding.hpp"
#include "mclas/metrics.hpp"
#include "mclas/probe.hpp"
#include "mclas/run_config.hpp"
#include "mclas/training.hpp"

namespace fs = std::filesystem;
using namespace mclas;

namespace {

class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Relative paths live under $MCLAS_OUT_ROOT when it is set.
fs::path rooted(const std::string& p) {
    const fs::path path(p);
    if (path.is_absolute()) {
        return path;
    }
    if (const char* root = std::getenv("MCLAS_OUT_ROOT"); root && *root) {
        return fs::path(root) / path;
    }
    return path;
}

struct Sources {
    std::string config_file;
    std::string run_dir;
    std::vector<std::string> sets;
    std::vector<std::pair<std::string, std::string>> flags;  // in command-line order
    bool quiet = false;
};

void add_key_flag(CLI::App* app, Sources& src, const std::string& name, const std::string& key,
                  const std::string& help) {
    app->add_option_function<std::string>(
        name, [&src, key](const std::string& v) { src.flags.emplace_back(key, v); }, help);
}

void add_common(CLI::App* app, Sources& src) {
    app->add_option("--config", src.config_file, "key = value config file");
    app->add_option("--set", src.sets, "override one config key (key=value), repeatable");
    app->add_flag("--quiet", src.quiet, "do not print the resolved config");
    add_key_flag(app, src, "--seed", "run.seed", "run seed");
    add_key_flag(app, src, "--corpus", "run.corpus_dir", "corpus directory");
}

RunConfig resolve(const Sources& src) {
    RunConfig cfg;
    if (!src.run_dir.empty()) {
        cfg.load_file(manifest_path(rooted(src.run_dir)));
        cfg.out_dir = src.run_dir;
    }
    if (!src.config_file.empty()) {
        cfg.load_file(src.config_file);
    }
    cfg.apply_env([](const char* name) { return std::getenv(name); });
    for (const auto& kv : src.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
            throw UsageError("--set expects key=value, got '" + kv + "'");
        }
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    for (const auto& [k, v] : src.flags) {
        cfg.set(k, v);
    }
    return cfg;
}

void announce(const RunConfig& cfg, const Sources& src, const std::string& what) {
    if (!src.quiet) {
        std::cerr << "# " << what << ": resolved config\n" << cfg.to_text();
    }
}

// Corpus facts come from the corpus directory's own manifest.
void adopt_corpus(RunConfig& cfg) {
    RunConfig corpus_cfg;
    corpus_cfg.load_file(manifest_path(rooted(cfg.corpus_dir)));
    for (const auto& key : RunConfig::keys()) {
        if (key.rfind("corpus.", 0) == 0) {
            cfg.set(key, corpus_cfg.get(key));
        }
    }
}

CorpusFile load_split(const RunConfig& cfg, const std::string& split) {
    auto file = read_corpus(rooted(cfg.corpus_dir) / (split + ".txt"));
    if (!(file.vocab == cfg.vocabulary())) {
        throw CorpusError("split '" + split + "' vocabulary does not match corpus.content_size=" +
                          std::to_string(cfg.content_size));
    }
    return file;
}

std::vector<Example> limited(std::vector<Example> v, std::size_t limit) {
    if (limit && v.size() > limit) {
        v.resize(limit);
    }
    return v;
}

std::string mode_label(const RunConfig& cfg) {
    return cfg.stage == "pretrain" ? "mono" : cfg.mode;
}

// Artifacts are read from --run when given, else from the output directory.
fs::path source_dir(const RunConfig& cfg, const Sources& src) {
    return rooted(src.run_dir.empty() ? cfg.out_dir : src.run_dir);
}

std::string scenario_label(const RunConfig& cfg) {
    if (cfg.stage == "pretrain") {
        return "pretrain";
    }
    std::string label = cfg.init == "scratch" ? cfg.scenario + "-scratch" : cfg.scenario;
    if (cfg.fraction) {
        std::ostringstream os;
        os << label << "@" << *cfg.fraction;
        label = os.str();
    }
    return label;
}

int cmd_gen_corpus(RunConfig cfg) {
    cfg.validate();
    const auto vocab = cfg.vocabulary();
    const auto corpus = generate_corpus(cfg.corpus_seed, cfg.sizes, vocab, cfg.generation);
    const auto spec = cfg.scenario_spec();
    const auto subset = scenario_subset(corpus.pool, spec);
    const fs::path dir = rooted(cfg.corpus_dir);
    fs::create_directories(dir);
    write_corpus({"mono", false, vocab, corpus.mono}, dir / "mono.txt");
    write_corpus({"pool", true, vocab, corpus.pool}, dir / "pool.txt");
    write_corpus({"valid", true, vocab, corpus.valid}, dir / "valid.txt");
    write_corpus({"test", true, vocab, corpus.test}, dir / "test.txt");
    const std::string sname = "scenario-" + spec.name + "-seed" + std::to_string(spec.seed);
    write_corpus({sname, true, vocab, subset}, dir / (sname + ".txt"));
    cfg.save(manifest_path(dir));
    std::cout << "corpus " << dir.string() << ": mono=" << corpus.mono.size()
              << " pool=" << corpus.pool.size() << " valid=" << corpus.valid.size()
              << " test=" << corpus.test.size() << " " << sname << "=" << subset.size() << "\n";
    return 0;
}

void write_evals(const fs::path& path, const TrainResult& r) {
    std::ofstream os(path);
    os.precision(17);
    os << "# best_step=" << r.best_step << "\n# step\tper_token_loss\tppl\taccuracy\n";
    for (const auto& e : r.evals) {
        os << e.step << '\t' << e.per_token_loss << '\t' << e.ppl << '\t' << e.accuracy << '\n';
    }
}

int train_one(RunConfig cfg, const Sources& src) {
    std::optional<Seq2SeqModel> pretrained;
    if (cfg.stage == "finetune" && cfg.init != "scratch") {
        pretrained = Seq2SeqModel::load(rooted(cfg.init));
        // Architecture follows the initializing checkpoint; dropout stays a run setting.
        const auto& pc = pretrained->config();
        cfg.model.layers_enc = pc.layers_enc;
        cfg.model.layers_dec = pc.layers_dec;
        cfg.model.heads = pc.heads;
        cfg.model.d_model = pc.d_model;
        cfg.model.d_ff = pc.d_ff;
        cfg.model.max_positions = pc.max_positions;
        cfg.model.truncate_overlong = pc.truncate_overlong;
    }
    cfg.validate();
    announce(cfg, src, "train " + cfg.stage);
    const auto vocab = cfg.vocabulary();
    const auto valid = load_split(cfg, "valid").examples;
    const fs::path out = rooted(cfg.out_dir);
    fs::create_directories(out);
    cfg.save(manifest_path(out));

    const auto tc = cfg.train_config();
    auto progress = [&](const LogRecord& r) {
        if (!src.quiet && tc.eval_every && r.step % tc.eval_every == 0) {
            std::cerr << "step " << r.step << " loss " << r.loss << "\n";
        }
    };
    TrainResult result = [&] {
        if (cfg.stage == "pretrain") {
            const auto mono = load_split(cfg, "mono").examples;
            return pretrain_monolingual(cfg.model_config(), mono, valid, vocab, tc, progress);
        }
        const auto pool = load_split(cfg, "pool").examples;
        const auto subset = scenario_subset(pool, cfg.scenario_spec());
        return finetune(pretrained ? &*pretrained : nullptr, cfg.training_mode(), subset, valid,
                        vocab, cfg.model_config(), tc, progress);
    }();

    auto ckpt = result.model.to_checkpoint();
    for (const auto& key : RunConfig::keys()) {
        ckpt.meta["cfg." + key] = cfg.get(key);
    }
    ckpt.meta["run.best_step"] = std::to_string(result.best_step);
    save_checkpoint(ckpt, out / "model.ckpt");
    fs::remove(out / "train.log");
    append_log(out / "train.log", result.log);
    write_evals(out / "evals.tsv", result);
    std::cout << "trained " << out.string() << ": steps=" << result.log.size()
              << " best_step=" << result.best_step << " best_ppl=" << result.best_ppl << "\n";
    return 0;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
    std::vector<std::uint64_t> seeds;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        RunConfig probe;
        probe.set("run.seed", item);
        seeds.push_back(probe.seed);
    }
    if (seeds.empty()) {
        throw UsageError("--seeds expects a comma-separated list");
    }
    return seeds;
}

int cmd_train(RunConfig cfg, const Sources& src, const std::string& stage,
              const std::string& seeds) {
    cfg.stage = stage;
    if (stage == "finetune" && cfg.init.empty()) {
        throw UsageError("finetune requires --init <checkpoint> (or --init scratch)");
    }
    if (stage == "finetune" && cfg.mode.empty()) {
        throw UsageError("finetune requires --mode ncls|ncls_ms|mclas");
    }
    adopt_corpus(cfg);
    if (seeds.empty()) {
        return train_one(cfg, src);
    }
    for (auto seed : parse_seed_list(seeds)) {
        RunConfig one = cfg;
        one.seed = seed;
        one.out_dir = (fs::path(cfg.out_dir) / ("seed" + std::to_string(seed))).string();
        train_one(one, src);
    }
    return 0;
}

int cmd_decode(RunConfig cfg, const Sources& src, const std::string& model_path) {
    adopt_corpus(cfg);
    cfg.validate();
    announce(cfg, src, "decode");
    const fs::path mpath = model_path.empty() ? source_dir(cfg, src) / "model.ckpt" : rooted(model_path);
    const auto model = Seq2SeqModel::load(mpath);
    const auto vocab = cfg.vocabulary();
    const auto docs = limited(load_split(cfg, cfg.split).examples, cfg.limit);
    const auto results =
        decode_documents(model, docs, cfg.objective(), vocab, cfg.decode, cfg.train.parallel);
    DecodeFile file{mode_label(cfg), {}};
    std::size_t truncated = 0;
    for (std::size_t i = 0; i < docs.size(); ++i) {
        const auto& r = results[i];
        file.records.push_back({docs[i].id, r.sum_a, r.sum_b, r.score, r.truncated});
        truncated += r.truncated;
    }
    const fs::path out = rooted(cfg.out_dir);
    fs::create_directories(out);
    write_decodes(file, out / "decodes.tsv");
    cfg.save(manifest_path(out));
    std::cout << "decoded " << docs.size() << " documents (" << truncated << " truncated) -> "
              << (out / "decodes.tsv").string() << "\n";
    return 0;
}

int cmd_eval(RunConfig cfg, const Sources& src, const std::string& decodes_path) {
    adopt_corpus(cfg);
    cfg.validate();
    announce(cfg, src, "eval");
    const fs::path out = rooted(cfg.out_dir);
    const fs::path dpath = decodes_path.empty() ? source_dir(cfg, src) / "decodes.tsv" : rooted(decodes_path);
    const auto decodes = read_decodes(dpath);
    const auto refs = limited(load_split(cfg, cfg.split).examples, cfg.limit);
    auto report = evaluate_run(decodes.records, refs, cfg.objective());
    report.mode = mode_label(cfg);
    report.scenario = scenario_label(cfg);
    report.seed = cfg.seed;
    fs::create_directories(out);
    write_report(report, out / "report.json");
    cfg.save(manifest_path(out));
    std::cout << "eval " << report.mode << " " << report.scenario << " seed " << report.seed;
    if (report.cross) {
        std::cout << " cross R1/R2/RL=" << 100 * report.cross->rouge.rouge1.f1 << "/"
                  << 100 * report.cross->rouge.rouge2.f1 << "/" << 100 * report.cross->rouge.rougeL.f1
                  << " len " << report.cross->length.gen << " (gold " << report.cross->length.gold
                  << ")";
    }
    if (report.mono) {
        std::cout << " mono R1=" << 100 * report.mono->rouge.rouge1.f1;
    }
    std::cout << "\n";
    return 0;
}

int cmd_probe(RunConfig cfg, const Sources& src, const std::string& model_path) {
    adopt_corpus(cfg);
    cfg.validate();
    announce(cfg, src, "probe");
    const fs::path mpath = model_path.empty() ? source_dir(cfg, src) / "model.ckpt" : rooted(model_path);
    const auto model = Seq2SeqModel::load(mpath);
    const auto vocab = cfg.vocabulary();
    const auto split = load_split(cfg, cfg.split).examples;
    if (cfg.probe_template >= split.size()) {
        throw UsageError("probe.template " + std::to_string(cfg.probe_template) +
                         " is outside the split");
    }
    const auto& templ = split[cfg.probe_template];
    const auto probe = make_probe_set(templ, cfg.probe_count, vocab, cfg.seed);
    const auto maps = collect_attention(model, probe, vocab);
    const fs::path out = rooted(cfg.out_dir) / "probe";
    fs::create_directories(out / "heatmaps");
    for (const auto& m : maps) {
        emit_heatmap(m, out / "heatmaps" / heatmap_filename(m));
    }
    const auto report = classify_heads(maps, templ);
    write_probe_summary(report, out / "summary.txt");
    cfg.save(manifest_path(rooted(cfg.out_dir)));
    std::cout << format_probe_summary(report);
    return 0;
}

RunReport load_report_arg(const std::string& arg) {
    fs::path p = rooted(arg);
    if (fs::is_directory(p)) {
        p /= "report.json";
    }
    return read_report(p);
}

int cmd_compare(const std::vector<std::string>& inputs, const std::string& out) {
    std::vector<RunReport> reports;
    for (const auto& in : inputs) {
        reports.push_back(load_report_arg(in));
    }
    const auto text = format_comparison(compare_runs(reports));
    if (!out.empty()) {
        const fs::path p = rooted(out);
        if (p.has_parent_path()) {
            fs::create_directories(p.parent_path());
        }
        std::ofstream os(p);
        os << text;
        if (!os) {
            throw std::runtime_error("cannot write " + p.string());
        }
    }
    std::cout << text;
    return 0;
}

std::string keys_help() {
    std::ostringstream os;
    os << "\nConfig keys (file < environment MCLAS_<KEY> < --set/flags):\n";
    for (const auto& [k, doc] : RunConfig::documented_keys()) {
        os << "  " << k << std::string(k.size() < 28 ? 28 - k.size() : 1, ' ') << doc << "\n";
    }
    os << "\nMCLAS_OUT_ROOT prefixes relative paths.\n"
          "Exit status: 0 success, 1 runtime failure, 2 usage or configuration error.\n";
    return os.str();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-task cross-lingual summarization experiments"};
    app.require_subcommand(1);
    app.footer(keys_help());

    Sources gen_src, train_src, dec_src, eval_src, probe_src;

    auto* gen = app.add_subcommand("gen-corpus", "generate the synthetic corpus");
    add_common(gen, gen_src);
    add_key_flag(gen, gen_src, "--out", "run.corpus_dir", "corpus output directory");
    add_key_flag(gen, gen_src, "--scenario", "run.scenario", "scenario whose subset is written");
    add_key_flag(gen, gen_src, "--fraction", "run.fraction", "custom parallel fraction");
    add_key_flag(gen, gen_src, "--content-size", "corpus.content_size", "tokens per language");

    std::string stage, seeds;
    auto* train = app.add_subcommand("train", "pretrain or finetune a model");
    train->add_option("stage", stage, "pretrain | finetune")
        ->required()
        ->check(CLI::IsMember({"pretrain", "finetune"}));
    add_common(train, train_src);
    add_key_flag(train, train_src, "--out", "run.out_dir", "run directory");
    add_key_flag(train, train_src, "--init", "run.init", "checkpoint or 'scratch' (finetune)");
    add_key_flag(train, train_src, "--mode", "run.mode", "ncls | ncls_ms | mclas");
    add_key_flag(train, train_src, "--scenario", "run.scenario", "minimum|medium|maximum|full");
    add_key_flag(train, train_src, "--fraction", "run.fraction", "custom parallel fraction");
    add_key_flag(train, train_src, "--steps", "train.max_steps", "optimizer updates");
    train->add_option("--seeds", seeds, "comma-separated seeds run in sequence into <out>/seed<k>");

    std::string dec_model, eval_decodes, probe_model;
    auto* dec = app.add_subcommand("decode", "beam-decode a split with a trained model");
    add_common(dec, dec_src);
    dec->add_option("--run", dec_src.run_dir, "run directory (manifest and model)");
    dec->add_option("--model", dec_model, "checkpoint overriding <run>/model.ckpt");
    add_key_flag(dec, dec_src, "--out", "run.out_dir", "output directory");
    add_key_flag(dec, dec_src, "--split", "run.split", "valid | test");
    add_key_flag(dec, dec_src, "--limit", "run.limit", "first n documents only");

    auto* ev = app.add_subcommand("eval", "score decodes against the references");
    add_common(ev, eval_src);
    ev->add_option("--run", eval_src.run_dir, "run directory");
    ev->add_option("--decodes", eval_decodes, "decode file overriding <run>/decodes.tsv");
    add_key_flag(ev, eval_src, "--out", "run.out_dir", "output directory");
    add_key_flag(ev, eval_src, "--split", "run.split", "valid | test");
    add_key_flag(ev, eval_src, "--limit", "run.limit", "first n documents only");

    auto* pr = app.add_subcommand("probe", "classify attention heads and emit heatmaps");
    add_common(pr, probe_src);
    pr->add_option("--run", probe_src.run_dir, "run directory");
    pr->add_option("--model", probe_model, "checkpoint overriding <run>/model.ckpt");
    add_key_flag(pr, probe_src, "--out", "run.out_dir", "output directory");
    add_key_flag(pr, probe_src, "--split", "run.split", "valid | test");

    std::vector<std::string> cmp_inputs;
    std::string cmp_out;
    auto* cmp = app.add_subcommand("compare", "systems-by-scenarios tables from run reports");
    cmp->add_option("reports", cmp_inputs, "run directories or report.json files")->required();
    cmp->add_option("--out", cmp_out, "markdown output file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) {
            auto cfg = resolve(gen_src);
            announce(cfg, gen_src, "gen-corpus");
            return cmd_gen_corpus(cfg);
        }
        if (train->parsed()) {
            return cmd_train(resolve(train_src), train_src, stage, seeds);
        }
        if (dec->parsed()) {
            return cmd_decode(resolve(dec_src), dec_src, dec_model);
        }
        if (ev->parsed()) {
            return cmd_eval(resolve(eval_src), eval_src, eval_decodes);
        }
        if (pr->parsed()) {
            return cmd_probe(resolve(probe_src), probe_src, probe_model);
        }
        if (cmp->parsed()) {
            return cmd_compare(cmp_inputs, cmp_out);
        }
    } catch (const std::invalid_argument& e) {
        std::cerr << "mclas: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "mclas: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
