#include "mclas/model.hpp"

#include <cmath>
#include <sstream>

namespace mclas {

namespace {

std::size_t parse_size(const std::map<std::string, std::string>& meta, const std::string& key) {
    auto it = meta.find(key);
    if (it == meta.end()) {
        throw ConfigError("model config lacks '" + key + "'");
    }
    return static_cast<std::size_t>(std::stoull(it->second));
}

std::string format_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

Tensor linear(ParameterBinder& b, const Tensor& x, std::size_t w, std::size_t bias) {
    return add_bias(matmul(x, b.get(w)), b.get(bias));
}

Tensor norm(ParameterBinder& b, const Tensor& x, const Seq2SeqModel::NormIdx& idx) {
    return layer_norm(x, b.get(idx.gain), b.get(idx.bias), 1e-5);
}

Tensor maybe_dropout(const Tensor& x, const ForwardOptions& opts, double p) {
    if (!opts.train || p <= 0.0) {
        return x;
    }
    if (opts.rng == nullptr) {
        throw std::invalid_argument("training forward pass requires a dropout generator");
    }
    return dropout(x, p, *opts.rng);
}

Tensor position_rows(const Seq2SeqModel& model, std::size_t offset, std::size_t count) {
    const auto& pe = model.positions();
    const std::size_t d = pe.cols();
    if (offset + count > pe.rows()) {
        throw ConfigError("sequence of length " + std::to_string(offset + count) +
                          " exceeds max_positions " + std::to_string(pe.rows()));
    }
    const auto v = pe.values();
    std::vector<double> out(v.begin() + static_cast<std::ptrdiff_t>(offset * d),
                            v.begin() + static_cast<std::ptrdiff_t>((offset + count) * d));
    return Tensor::from({count, d}, std::move(out));
}

Tensor embed(const Seq2SeqModel& model, ParameterBinder& b, std::span<const TokenId> ids,
             std::size_t offset) {
    const double s = std::sqrt(static_cast<double>(model.config().d_model));
    Tensor x = scale(embedding(b.get(model.embedding_index()), ids), s);
    return add(x, position_rows(model, offset, ids.size()));
}

// Scaled dot-product attention over already projected q/k/v, head by head.
// Query row i sits at absolute position offset + i when causal.
Tensor multi_head(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                  bool causal, std::size_t offset, std::vector<AttentionRecord>* capture,
                  std::size_t layer, AttentionKind kind) {
    const std::size_t d = q.cols();
    const std::size_t dh = d / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Tensor> outs;
    outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        Tensor qh = slice_cols(q, h * dh, dh);
        Tensor kh = slice_cols(k, h * dh, dh);
        Tensor vh = slice_cols(v, h * dh, dh);
        Tensor scores = scale(matmul_nt(qh, kh), inv_sqrt);
        if (causal) {
            scores = causal_mask(scores, offset);
        }
        Tensor probs = softmax(scores, 1);
        if (capture != nullptr) {
            capture->push_back(AttentionRecord{layer, h, kind, probs.rows(), probs.cols(),
                                               std::vector<double>(probs.values().begin(),
                                                                   probs.values().end())});
        }
        outs.push_back(matmul(probs, vh));
    }
    return heads == 1 ? outs.front() : concat_cols(outs);
}

Tensor feed_forward(ParameterBinder& b, const Tensor& x, const Seq2SeqModel::FfnIdx& idx,
                    const ForwardOptions& opts, double p) {
    Tensor h = relu(linear(b, x, idx.w1, idx.b1));
    h = maybe_dropout(h, opts, p);
    return linear(b, h, idx.w2, idx.b2);
}

void check_decoder(const Seq2SeqModel& model, std::size_t which) {
    if (which >= model.decoder_count()) {
        throw ConfigError("decoder " + std::to_string(which + 1) + " requested on a model with " +
                          std::to_string(model.decoder_count()) + " decoder(s)");
    }
}

}  // namespace

void ModelConfig::validate() const {
    if (layers_enc == 0 || layers_dec == 0 || heads == 0 || d_model == 0 || d_ff == 0 ||
        vocab_size == 0 || max_positions == 0) {
        throw ConfigError("model dimensions must be positive");
    }
    if (d_model % heads != 0) {
        throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by " +
                          std::to_string(heads) + " heads");
    }
    if (d_model % 2 != 0) {
        throw ConfigError("d_model must be even for sinusoidal positions");
    }
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) {
        throw ConfigError("dropout_p must lie in [0, 1)");
    }
    if (decoder_count != 1 && decoder_count != 2) {
        throw ConfigError("decoder_count must be 1 or 2");
    }
}

std::map<std::string, std::string> ModelConfig::to_meta() const {
    return {
        {"model.layers_enc", std::to_string(layers_enc)},
        {"model.layers_dec", std::to_string(layers_dec)},
        {"model.heads", std::to_string(heads)},
        {"model.d_model", std::to_string(d_model)},
        {"model.d_ff", std::to_string(d_ff)},
        {"model.vocab_size", std::to_string(vocab_size)},
        {"model.dropout_p", format_double(dropout_p)},
        {"model.max_positions", std::to_string(max_positions)},
        {"model.decoder_count", std::to_string(decoder_count)},
        {"model.truncate_overlong", truncate_overlong ? "1" : "0"},
    };
}

ModelConfig ModelConfig::from_meta(const std::map<std::string, std::string>& meta) {
    ModelConfig c;
    c.layers_enc = parse_size(meta, "model.layers_enc");
    c.layers_dec = parse_size(meta, "model.layers_dec");
    c.heads = parse_size(meta, "model.heads");
    c.d_model = parse_size(meta, "model.d_model");
    c.d_ff = parse_size(meta, "model.d_ff");
    c.vocab_size = parse_size(meta, "model.vocab_size");
    c.max_positions = parse_size(meta, "model.max_positions");
    c.decoder_count = parse_size(meta, "model.decoder_count");
    auto it = meta.find("model.dropout_p");
    if (it == meta.end()) {
        throw ConfigError("model config lacks 'model.dropout_p'");
    }
    c.dropout_p = std::stod(it->second);
    auto tr = meta.find("model.truncate_overlong");
    c.truncate_overlong = tr != meta.end() && tr->second == "1";
    c.validate();
    return c;
}

const char* to_string(AttentionKind kind) { return kind == AttentionKind::Self ? "self" : "encdec"; }

Tensor sinusoidal_positions(std::size_t max_positions, std::size_t d_model) {
    if (d_model % 2 != 0) {
        throw ConfigError("sinusoidal positions need an even d_model, got " +
                          std::to_string(d_model));
    }
    std::vector<double> pe(max_positions * d_model);
    for (std::size_t pos = 0; pos < max_positions; ++pos) {
        for (std::size_t i = 0; i < d_model / 2; ++i) {
            const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) /
                                                      static_cast<double>(d_model));
            const double angle = static_cast<double>(pos) * freq;
            pe[pos * d_model + 2 * i] = std::sin(angle);
            pe[pos * d_model + 2 * i + 1] = std::cos(angle);
        }
    }
    return Tensor::from({max_positions, d_model}, std::move(pe));
}

Seq2SeqModel::Seq2SeqModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    std::mt19937_64 rng(seed);
    build(rng);
    positions_ = sinusoidal_positions(config_.max_positions, config_.d_model);
}

void Seq2SeqModel::build(std::mt19937_64& rng) {
    const std::size_t d = config_.d_model, ff = config_.d_ff;
    const double w_std = 1.0 / std::sqrt(static_cast<double>(d));
    const double ff_std = 1.0 / std::sqrt(static_cast<double>(ff));

    embedding_ = params_.add_normal("embedding", {config_.vocab_size, d}, w_std, rng);

    auto add_norm = [&](const std::string& name) {
        return NormIdx{params_.add_constant(name + ".gain", {d}, 1.0),
                       params_.add_constant(name + ".bias", {d}, 0.0)};
    };
    auto add_attn = [&](const std::string& name) {
        AttnIdx a{};
        a.wq = params_.add_normal(name + ".wq", {d, d}, w_std, rng);
        a.bq = params_.add_constant(name + ".bq", {d}, 0.0);
        a.wk = params_.add_normal(name + ".wk", {d, d}, w_std, rng);
        a.bk = params_.add_constant(name + ".bk", {d}, 0.0);
        a.wv = params_.add_normal(name + ".wv", {d, d}, w_std, rng);
        a.bv = params_.add_constant(name + ".bv", {d}, 0.0);
        a.wo = params_.add_normal(name + ".wo", {d, d}, w_std, rng);
        a.bo = params_.add_constant(name + ".bo", {d}, 0.0);
        return a;
    };
    auto add_ffn = [&](const std::string& name) {
        FfnIdx f{};
        f.w1 = params_.add_normal(name + ".w1", {d, ff}, w_std, rng);
        f.b1 = params_.add_constant(name + ".b1", {ff}, 0.0);
        f.w2 = params_.add_normal(name + ".w2", {ff, d}, ff_std, rng);
        f.b2 = params_.add_constant(name + ".b2", {d}, 0.0);
        return f;
    };

    for (std::size_t l = 0; l < config_.layers_enc; ++l) {
        const std::string p = "encoder.layer" + std::to_string(l);
        EncoderLayerIdx layer{};
        layer.ln1 = add_norm(p + ".ln1");
        layer.self_attn = add_attn(p + ".self_attn");
        layer.ln2 = add_norm(p + ".ln2");
        layer.ffn = add_ffn(p + ".ffn");
        enc_layers_.push_back(layer);
    }
    enc_final_ = add_norm("encoder.final_ln");

    for (std::size_t k = 0; k < config_.decoder_count; ++k) {
        DecoderIdx dec;
        for (std::size_t l = 0; l < config_.layers_dec; ++l) {
            const std::string p = "decoder" + std::to_string(k) + ".layer" + std::to_string(l);
            DecoderLayerIdx layer{};
            layer.ln1 = add_norm(p + ".ln1");
            layer.self_attn = add_attn(p + ".self_attn");
            layer.ln2 = add_norm(p + ".ln2");
            layer.cross_attn = add_attn(p + ".cross_attn");
            layer.ln3 = add_norm(p + ".ln3");
            layer.ffn = add_ffn(p + ".ffn");
            dec.layers.push_back(layer);
        }
        dec.final_ln = add_norm("decoder" + std::to_string(k) + ".final_ln");
        decoders_.push_back(std::move(dec));
    }
}

const Seq2SeqModel::DecoderIdx& Seq2SeqModel::decoder(std::size_t which) const {
    check_decoder(*this, which);
    return decoders_[which];
}

std::vector<std::size_t> Seq2SeqModel::encoder_parameter_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const auto& name = params_.at(i).name;
        if (name == "embedding" || name.starts_with("encoder.")) {
            out.push_back(i);
        }
    }
    return out;
}

std::vector<std::size_t> Seq2SeqModel::decoder_parameter_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (params_.at(i).name.starts_with("decoder")) {
            out.push_back(i);
        }
    }
    return out;
}

Checkpoint Seq2SeqModel::to_checkpoint() const {
    Checkpoint ckpt;
    ckpt.meta = config_.to_meta();
    ckpt.meta["format"] = "mclas-model";
    ckpt.add_parameters(params_, "param.");
    return ckpt;
}

Seq2SeqModel Seq2SeqModel::from_checkpoint(const Checkpoint& ckpt) {
    auto it = ckpt.meta.find("format");
    if (it == ckpt.meta.end() || it->second != "mclas-model") {
        throw FormatError("checkpoint does not hold an mclas model");
    }
    Seq2SeqModel model(ModelConfig::from_meta(ckpt.meta), 0);
    ckpt.load_parameters(model.params_, "param.");
    return model;
}

void Seq2SeqModel::save(const std::filesystem::path& path) const {
    save_checkpoint(to_checkpoint(), path);
}

Seq2SeqModel Seq2SeqModel::load(const std::filesystem::path& path) {
    return from_checkpoint(load_checkpoint(path));
}

Tensor encode(const Seq2SeqModel& model, ParameterBinder& b, std::span<const TokenId> doc,
              const ForwardOptions& opts) {
    const auto& cfg = model.config();
    if (doc.empty()) {
        throw std::invalid_argument("encode: empty document");
    }
    if (doc.size() > cfg.max_positions) {
        if (!cfg.truncate_overlong) {
            throw ConfigError("document of " + std::to_string(doc.size()) +
                              " tokens exceeds max_positions " +
                              std::to_string(cfg.max_positions));
        }
        doc = doc.first(cfg.max_positions);
    }
    Tensor x = maybe_dropout(embed(model, b, doc, 0), opts, cfg.dropout_p);
    for (const auto& layer : model.encoder_layers()) {
        Tensor h = norm(b, x, layer.ln1);
        Tensor q = linear(b, h, layer.self_attn.wq, layer.self_attn.bq);
        Tensor k = linear(b, h, layer.self_attn.wk, layer.self_attn.bk);
        Tensor v = linear(b, h, layer.self_attn.wv, layer.self_attn.bv);
        Tensor a = multi_head(q, k, v, cfg.heads, false, 0, nullptr, 0, AttentionKind::Self);
        a = linear(b, a, layer.self_attn.wo, layer.self_attn.bo);
        x = add(x, maybe_dropout(a, opts, cfg.dropout_p));
        Tensor f = feed_forward(b, norm(b, x, layer.ln2), layer.ffn, opts, cfg.dropout_p);
        x = add(x, maybe_dropout(f, opts, cfg.dropout_p));
    }
    return norm(b, x, model.encoder_final_ln());
}

Tensor encode(const Seq2SeqModel& model, std::span<const TokenId> doc) {
    NoGradGuard guard;
    ParameterBinder binder(model.params(), false);
    return encode(model, binder, doc, ForwardOptions{});
}

DecoderOutput decode_teacher_forced(const Seq2SeqModel& model, ParameterBinder& b,
                                    const Tensor& memory, std::span<const TokenId> inputs,
                                    std::size_t which_decoder, const ForwardOptions& opts) {
    const auto& cfg = model.config();
    const auto& dec = model.decoder(which_decoder);
    if (inputs.empty()) {
        throw std::invalid_argument("decode: empty prefix");
    }
    DecoderOutput out;
    auto* capture = opts.capture_attention ? &out.attention : nullptr;
    Tensor x = maybe_dropout(embed(model, b, inputs, 0), opts, cfg.dropout_p);
    for (std::size_t l = 0; l < dec.layers.size(); ++l) {
        const auto& layer = dec.layers[l];
        Tensor h = norm(b, x, layer.ln1);
        Tensor q = linear(b, h, layer.self_attn.wq, layer.self_attn.bq);
        Tensor k = linear(b, h, layer.self_attn.wk, layer.self_attn.bk);
        Tensor v = linear(b, h, layer.self_attn.wv, layer.self_attn.bv);
        Tensor a = multi_head(q, k, v, cfg.heads, true, 0, capture, l, AttentionKind::Self);
        a = linear(b, a, layer.self_attn.wo, layer.self_attn.bo);
        x = add(x, maybe_dropout(a, opts, cfg.dropout_p));

        h = norm(b, x, layer.ln2);
        q = linear(b, h, layer.cross_attn.wq, layer.cross_attn.bq);
        k = linear(b, memory, layer.cross_attn.wk, layer.cross_attn.bk);
        v = linear(b, memory, layer.cross_attn.wv, layer.cross_attn.bv);
        a = multi_head(q, k, v, cfg.heads, false, 0, capture, l, AttentionKind::EncDec);
        a = linear(b, a, layer.cross_attn.wo, layer.cross_attn.bo);
        x = add(x, maybe_dropout(a, opts, cfg.dropout_p));

        Tensor f = feed_forward(b, norm(b, x, layer.ln3), layer.ffn, opts, cfg.dropout_p);
        x = add(x, maybe_dropout(f, opts, cfg.dropout_p));
    }
    Tensor h = norm(b, x, dec.final_ln);
    out.logits = matmul_nt(h, b.get(model.embedding_index()));
    return out;
}

IncrementalDecoder::IncrementalDecoder(const Seq2SeqModel& model, const Tensor& memory,
                                       std::size_t which_decoder)
    : model_(&model), which_(which_decoder) {
    const auto& dec = model.decoder(which_decoder);
    NoGradGuard guard;
    ParameterBinder b(model.params(), false);
    self_k_.resize(dec.layers.size());
    self_v_.resize(dec.layers.size());
    for (const auto& layer : dec.layers) {
        cross_k_.push_back(linear(b, memory, layer.cross_attn.wk, layer.cross_attn.bk));
        cross_v_.push_back(linear(b, memory, layer.cross_attn.wv, layer.cross_attn.bv));
    }
}

std::vector<double> IncrementalDecoder::step(TokenId token, std::vector<AttentionRecord>* capture) {
    const auto& model = *model_;
    const auto& cfg = model.config();
    const auto& dec = model.decoder(which_);
    NoGradGuard guard;
    ParameterBinder b(model.params(), false);
    const TokenId ids[1] = {token};
    const std::size_t pos = length_;
    Tensor x = embed(model, b, ids, pos);
    for (std::size_t l = 0; l < dec.layers.size(); ++l) {
        const auto& layer = dec.layers[l];
        Tensor h = norm(b, x, layer.ln1);
        Tensor q = linear(b, h, layer.self_attn.wq, layer.self_attn.bq);
        Tensor k = linear(b, h, layer.self_attn.wk, layer.self_attn.bk);
        Tensor v = linear(b, h, layer.self_attn.wv, layer.self_attn.bv);
        self_k_[l] = self_k_[l].defined() ? concat_rows(self_k_[l], k) : k;
        self_v_[l] = self_v_[l].defined() ? concat_rows(self_v_[l], v) : v;
        Tensor a = multi_head(q, self_k_[l], self_v_[l], cfg.heads, false, 0, capture, l,
                              AttentionKind::Self);
        a = linear(b, a, layer.self_attn.wo, layer.self_attn.bo);
        x = add(x, a);

        h = norm(b, x, layer.ln2);
        q = linear(b, h, layer.cross_attn.wq, layer.cross_attn.bq);
        a = multi_head(q, cross_k_[l], cross_v_[l], cfg.heads, false, 0, capture, l,
                       AttentionKind::EncDec);
        a = linear(b, a, layer.cross_attn.wo, layer.cross_attn.bo);
        x = add(x, a);

        x = add(x, feed_forward(b, norm(b, x, layer.ln3), layer.ffn, ForwardOptions{}, 0.0));
    }
    Tensor h = norm(b, x, dec.final_ln);
    Tensor logits = matmul_nt(h, b.get(model.embedding_index()));
    ++length_;
    return {logits.values().begin(), logits.values().end()};
}

StepOutput decode_step(const Seq2SeqModel& model, const Tensor& memory,
                       std::span<const TokenId> prefix, std::size_t which_decoder, bool capture) {
    check_decoder(model, which_decoder);
    if (prefix.empty() || prefix.front() != Vocabulary::kBos) {
        throw std::invalid_argument("decode_step: prefix must be non-empty and start with [BOS]");
    }
    IncrementalDecoder dec(model, memory, which_decoder);
    StepOutput out;
    for (std::size_t i = 0; i < prefix.size(); ++i) {
        const bool last = i + 1 == prefix.size();
        auto logits = dec.step(prefix[i], last && capture ? &out.attention : nullptr);
        if (last) {
            out.logits = std::move(logits);
        }
    }
    return out;
}

void copy_parameters(const Seq2SeqModel& source, Seq2SeqModel& target, CopyPart part) {
    auto copy_one = [&](const std::string& from, const std::string& to) {
        const auto& src = source.params().at(from);
        const auto ti = target.params().find(to);
        if (!ti) {
            throw ShapeError("copy_parameters: target has no parameter '" + to + "'");
        }
        const auto& dst = target.params().at(*ti);
        if (src.shape != dst.shape) {
            throw ShapeError("copy_parameters: '" + from + "' has shape " + shape_str(src.shape) +
                             " but '" + to + "' has " + shape_str(dst.shape));
        }
        target.params().values(*ti) = *src.value;
    };
    auto copy_prefix = [&](const std::string& from_prefix, const std::string& to_prefix) {
        bool any = false;
        for (const auto& p : source.params().all()) {
            if (p.name.starts_with(from_prefix)) {
                copy_one(p.name, to_prefix + p.name.substr(from_prefix.size()));
                any = true;
            }
        }
        if (!any) {
            throw ShapeError("copy_parameters: source has no parameters under '" + from_prefix +
                             "'");
        }
    };
    auto copy_encoder = [&] {
        copy_one("embedding", "embedding");
        copy_prefix("encoder.", "encoder.");
    };
    auto copy_decoders = [&] {
        if (source.config().layers_dec != target.config().layers_dec) {
            throw ShapeError("copy_parameters: decoder depth differs (" +
                             std::to_string(source.config().layers_dec) + " vs " +
                             std::to_string(target.config().layers_dec) + ")");
        }
        for (std::size_t k = 0; k < target.decoder_count(); ++k) {
            const std::size_t from = std::min(k, source.decoder_count() - 1);
            copy_prefix("decoder" + std::to_string(from) + ".", "decoder" + std::to_string(k) + ".");
        }
    };
    switch (part) {
        case CopyPart::Encoder:
            copy_encoder();
            break;
        case CopyPart::Decoder:
            copy_decoders();
            break;
        case CopyPart::DecoderToBoth:
            if (target.decoder_count() != 2) {
                throw ConfigError("decoder->both needs a two-decoder target");
            }
            for (std::size_t k = 0; k < 2; ++k) {
                copy_prefix("decoder0.", "decoder" + std::to_string(k) + ".");
            }
            break;
        case CopyPart::All:
            copy_encoder();
            copy_decoders();
            break;
    }
}

}  // namespace mclas
