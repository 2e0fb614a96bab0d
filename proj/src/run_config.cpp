#include "mclas/run_config.hpp"

#include <cctype>
#include <cerrno>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace mclas {
namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) {
        return "";
    }
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size() || v.empty()) {
        throw ConfigError("'" + key + "' expects a non-negative integer, got '" + v + "'");
    }
    return out;
}

double parse_f64(const std::string& key, const std::string& v) {
    char* end = nullptr;
    errno = 0;
    const double out = std::strtod(v.c_str(), &end);
    if (v.empty() || end != v.c_str() + v.size() || errno == ERANGE) {
        throw ConfigError("'" + key + "' expects a number, got '" + v + "'");
    }
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true" || v == "on") {
        return true;
    }
    if (v == "0" || v == "false" || v == "off") {
        return false;
    }
    throw ConfigError("'" + key + "' expects 0|1, got '" + v + "'");
}

std::string f64(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

struct Field {
    std::string key;
    std::string doc;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

#define SIZE_FIELD(KEY, MEMBER, DOC)                                                          \
    Field {                                                                                   \
        KEY, DOC, [](RunConfig& c, const std::string& v) { c.MEMBER = parse_u64(KEY, v); }, \
            [](const RunConfig& c) { return std::to_string(c.MEMBER); }                       \
    }
#define REAL_FIELD(KEY, MEMBER, DOC)                                                          \
    Field {                                                                                   \
        KEY, DOC, [](RunConfig& c, const std::string& v) { c.MEMBER = parse_f64(KEY, v); }, \
            [](const RunConfig& c) { return f64(c.MEMBER); }                                  \
    }
#define BOOL_FIELD(KEY, MEMBER, DOC)                                                           \
    Field {                                                                                    \
        KEY, DOC, [](RunConfig& c, const std::string& v) { c.MEMBER = parse_bool(KEY, v); }, \
            [](const RunConfig& c) { return std::string(c.MEMBER ? "1" : "0"); }               \
    }
#define TEXT_FIELD(KEY, MEMBER, DOC)                                              \
    Field {                                                                       \
        KEY, DOC, [](RunConfig& c, const std::string& v) { c.MEMBER = v; },      \
            [](const RunConfig& c) { return std::string(c.MEMBER); }              \
    }

const std::vector<Field>& fields() {
    static const std::vector<Field> table = {
        TEXT_FIELD("run.stage", stage, "pretrain | finetune"),
        TEXT_FIELD("run.mode", mode, "ncls | ncls_ms | mclas"),
        TEXT_FIELD("run.scenario", scenario, "minimum | medium | maximum | full"),
        Field{"run.fraction", "custom parallel fraction overriding the scenario's ('' = named)",
              [](RunConfig& c, const std::string& v) {
                  if (v.empty()) {
                      c.fraction.reset();
                  } else {
                      c.fraction = parse_f64("run.fraction", v);
                  }
              },
              [](const RunConfig& c) { return c.fraction ? f64(*c.fraction) : std::string(); }},
        SIZE_FIELD("run.seed", seed, "seeds initialization, sampling, dropout and the scenario draw"),
        TEXT_FIELD("run.init", init, "finetune initialization: checkpoint path or 'scratch'"),
        TEXT_FIELD("run.corpus_dir", corpus_dir, "corpus directory (relative paths use MCLAS_OUT_ROOT)"),
        TEXT_FIELD("run.out_dir", out_dir, "output directory (relative paths use MCLAS_OUT_ROOT)"),
        TEXT_FIELD("run.split", split, "split decoded/evaluated/probed: valid | test"),
        SIZE_FIELD("run.limit", limit, "decode only the first n documents (0 = all)"),
        SIZE_FIELD("corpus.seed", corpus_seed, "corpus generation seed"),
        SIZE_FIELD("corpus.content_size", content_size, "tokens per language"),
        SIZE_FIELD("corpus.mono", sizes.mono_pretrain, "monolingual pretraining examples"),
        SIZE_FIELD("corpus.pool", sizes.parallel_pool, "parallel pool size"),
        SIZE_FIELD("corpus.valid", sizes.valid, "validation examples"),
        SIZE_FIELD("corpus.test", sizes.test, "test examples"),
        SIZE_FIELD("corpus.doc_len_min", generation.doc_len_min, "shortest document"),
        SIZE_FIELD("corpus.doc_len_max", generation.doc_len_max, "longest document"),
        SIZE_FIELD("corpus.salient_min", generation.salient_min, "fewest salient tokens"),
        SIZE_FIELD("corpus.salient_max", generation.salient_max, "most salient tokens"),
        SIZE_FIELD("corpus.repeat", generation.repeat, "occurrences that make a token salient"),
        SIZE_FIELD("corpus.n_max", generation.n_max, "summary length cap"),
        SIZE_FIELD("corpus.extra_b", generation.extra_b, "filler tokens appended to sum_b"),
        SIZE_FIELD("model.layers_enc", model.layers_enc, "encoder layers"),
        SIZE_FIELD("model.layers_dec", model.layers_dec, "decoder layers"),
        SIZE_FIELD("model.heads", model.heads, "attention heads"),
        SIZE_FIELD("model.d_model", model.d_model, "model width"),
        SIZE_FIELD("model.d_ff", model.d_ff, "feed-forward width"),
        REAL_FIELD("model.dropout_p", model.dropout_p, "dropout probability"),
        SIZE_FIELD("model.max_positions", model.max_positions, "positional table length"),
        BOOL_FIELD("model.truncate_overlong", model.truncate_overlong, "cut overlong documents"),
        // Applies a whole schedule at once; later keys still override single values.
        Field{"train.preset", "schedule preset applied in place: desk | full_scale",
              [](RunConfig& c, const std::string& v) {
                  const bool parallel = c.train.parallel;
                  if (v == "desk") {
                      c.train = TrainConfig::desk_preset();
                  } else if (v == "full_scale") {
                      c.train = TrainConfig::full_scale_preset();
                  } else if (!v.empty()) {
                      throw ConfigError("'train.preset' expects desk|full_scale, got '" + v + "'");
                  }
                  c.train.parallel = parallel;
              },
              [](const RunConfig&) { return std::string(); }},
        REAL_FIELD("train.base_lr_enc", train.base_lr_enc, "encoder-side base learning rate"),
        REAL_FIELD("train.base_lr_dec", train.base_lr_dec, "decoder base learning rate"),
        SIZE_FIELD("train.warmup_enc", train.warmup_enc, "encoder-side warmup steps"),
        SIZE_FIELD("train.warmup_dec", train.warmup_dec, "decoder warmup steps"),
        SIZE_FIELD("train.batch_size", train.batch_size, "examples per micro-batch"),
        SIZE_FIELD("train.accum", train.accum, "micro-batches per update"),
        SIZE_FIELD("train.max_steps", train.max_steps, "optimizer updates"),
        SIZE_FIELD("train.eval_every", train.eval_every, "steps between validation passes"),
        SIZE_FIELD("train.patience", train.patience, "stale evaluations before stopping (0 = off)"),
        BOOL_FIELD("train.parallel", train.parallel, "OpenMP batch gradients"),
        REAL_FIELD("train.beta1", train.adam.beta1, "Adam beta1"),
        REAL_FIELD("train.beta2", train.adam.beta2, "Adam beta2"),
        REAL_FIELD("train.eps", train.adam.eps, "Adam epsilon"),
        SIZE_FIELD("decode.beam_size", decode.beam_size, "beam width (1 = greedy)"),
        REAL_FIELD("decode.alpha", decode.length_penalty_alpha, "length penalty exponent"),
        SIZE_FIELD("decode.max_len", decode.max_len, "generated tokens cap"),
        BOOL_FIELD("decode.trigram_block", decode.trigram_block, "block repeated trigrams"),
        BOOL_FIELD("decode.language_constraint", decode.language_constraint,
                   "restrict each phase to its language"),
        SIZE_FIELD("probe.count", probe_count, "relabeled probe examples"),
        SIZE_FIELD("probe.template", probe_template, "split index of the probe template"),
    };
    return table;
}

const Field& field(const std::string& key) {
    for (const auto& f : fields()) {
        if (f.key == key) {
            return f;
        }
    }
    throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

RunConfig::RunConfig() {
    model.d_model = 32;
    model.d_ff = 64;
    model.heads = 4;
    model.dropout_p = 0.0;
    train.warmup_enc = 100;
    train.warmup_dec = 100;
    sizes = CorpusSizes{20000, 10000, 200, 1000};
}

void RunConfig::set(const std::string& key, const std::string& value) {
    field(key).set(*this, trim(value));
}

std::string RunConfig::get(const std::string& key) const {
    return field(key).get(*this);
}

const std::vector<std::string>& RunConfig::keys() {
    static const std::vector<std::string> out = [] {
        std::vector<std::string> k;
        for (const auto& f : fields()) {
            k.push_back(f.key);
        }
        return k;
    }();
    return out;
}

const std::vector<std::pair<std::string, std::string>>& RunConfig::documented_keys() {
    static const std::vector<std::pair<std::string, std::string>> out = [] {
        std::vector<std::pair<std::string, std::string>> k;
        for (const auto& f : fields()) {
            k.emplace_back(f.key, f.doc);
        }
        return k;
    }();
    return out;
}

void RunConfig::apply_text(const std::string& text, const std::string& origin) {
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) {
            line.erase(hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(origin + " line " + std::to_string(lineno) + ": expected key = value");
        }
        try {
            set(trim(line.substr(0, eq)), line.substr(eq + 1));
        } catch (const ConfigError& e) {
            throw ConfigError(origin + " line " + std::to_string(lineno) + ": " + e.what());
        }
    }
}

void RunConfig::load_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot read config file " + path.string());
    }
    std::stringstream ss;
    ss << in.rdbuf();
    apply_text(ss.str(), path.string());
}

std::string RunConfig::env_name(const std::string& key) {
    std::string out = "MCLAS_";
    for (char ch : key) {
        out += ch == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    }
    return out;
}

void RunConfig::apply_env(const std::function<const char*(const char*)>& getenv_fn) {
    for (const auto& f : fields()) {
        const std::string name = env_name(f.key);
        if (const char* v = getenv_fn(name.c_str())) {
            try {
                set(f.key, v);
            } catch (const ConfigError& e) {
                throw ConfigError("environment " + name + ": " + e.what());
            }
        }
    }
}

std::string RunConfig::to_text() const {
    std::string out;
    for (const auto& f : fields()) {
        out += f.key + " = " + f.get(*this) + "\n";
    }
    return out;
}

void RunConfig::save(const std::filesystem::path& path) const {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path);
    out << to_text();
    if (!out) {
        throw ConfigError("cannot write " + path.string());
    }
}

Vocabulary RunConfig::vocabulary() const {
    return Vocabulary::with_content_size(content_size);
}

ScenarioSpec RunConfig::scenario_spec() const {
    if (fraction) {
        return ScenarioSpec{scenario, *fraction, seed};
    }
    return ScenarioSpec::named(scenario, seed);
}

ModelConfig RunConfig::model_config() const {
    ModelConfig c = model;
    c.vocab_size = vocabulary().size();
    c.decoder_count = decoder_count_for(objective());
    return c;
}

Objective RunConfig::objective() const {
    return stage == "pretrain" ? Objective::Monolingual : objective_for(training_mode());
}

TrainConfig RunConfig::train_config() const {
    TrainConfig c = train;
    c.seed = seed;
    return c;
}

void RunConfig::validate() const {
    if (stage != "pretrain" && stage != "finetune") {
        throw ConfigError("run.stage must be pretrain or finetune, got '" + stage + "'");
    }
    try {
        if (!mode.empty()) {
            (void)parse_mode(mode);
        }
        (void)scenario_spec();
        vocabulary().validate();
        generation.validate(vocabulary());
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    if (fraction && !(*fraction > 0.0 && *fraction <= 1.0)) {
        throw ConfigError("run.fraction must lie in (0, 1]");
    }
    if (split != "valid" && split != "test") {
        throw ConfigError("run.split must be valid or test, got '" + split + "'");
    }
    ModelConfig m = model;
    m.vocab_size = vocabulary().size();
    m.validate();
    decode.validate();
    if (train.batch_size == 0 || train.accum == 0) {
        throw ConfigError("train.batch_size and train.accum must be positive");
    }
}

std::filesystem::path manifest_path(const std::filesystem::path& dir) {
    return dir / "manifest.cfg";
}

}  // namespace mclas
