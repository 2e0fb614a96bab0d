#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "mclas/model.hpp"
#include "mclas/objectives.hpp"

using namespace mclas;

namespace {

ModelConfig tiny(std::size_t decoders = 1) {
    ModelConfig c;
    c.layers_enc = 2;
    c.layers_dec = 2;
    c.heads = 2;
    c.d_model = 8;
    c.d_ff = 16;
    c.vocab_size = 25;
    c.max_positions = 64;
    c.decoder_count = decoders;
    return c;
}

Tokens random_tokens(std::mt19937_64& rng, std::size_t n, TokenId lo, TokenId hi) {
    Tokens t(n);
    for (auto& x : t) {
        x = lo + static_cast<TokenId>(rng() % static_cast<std::uint64_t>(hi - lo));
    }
    return t;
}

std::vector<double> vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

DecoderOutput teacher(const Seq2SeqModel& m, const Tensor& mem, const Tokens& in,
                      std::size_t which = 0, bool capture = false) {
    ParameterBinder b(m.params(), false);
    ForwardOptions o;
    o.capture_attention = capture;
    return decode_teacher_forced(m, b, mem, in, which, o);
}

}  // namespace

TEST(Config, RejectsHeadsNotDividingWidth) {
    auto c = tiny();
    c.heads = 3;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Config, RejectsDropoutOfOne) {
    auto c = tiny();
    c.dropout_p = 1.0;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Config, MetaRoundTrip) {
    auto c = tiny(2);
    c.dropout_p = 0.25;
    c.truncate_overlong = true;
    EXPECT_EQ(ModelConfig::from_meta(c.to_meta()), c);
}

TEST(Positions, ZeroRowAlternatesZeroOne) {
    auto p = sinusoidal_positions(4, 6);
    for (std::size_t j = 0; j < 6; ++j) {
        EXPECT_EQ(p.at(0, j), j % 2 == 0 ? 0.0 : 1.0);
    }
}

TEST(Positions, BoundedByOne) {
    auto p = sinusoidal_positions(50, 16);
    for (double v : p.values()) {
        EXPECT_LE(std::abs(v), 1.0);
    }
}

TEST(Positions, FirstPairAtPositionOne) {
    auto p = sinusoidal_positions(4, 8);
    EXPECT_NEAR(p.at(1, 0), std::sin(1.0), 1e-12);
    EXPECT_NEAR(p.at(1, 1), std::cos(1.0), 1e-12);
    EXPECT_NEAR(p.at(3, 2), std::sin(3.0 / std::pow(10000.0, 2.0 / 8.0)), 1e-12);
}

TEST(Positions, OddWidthThrows) { EXPECT_THROW(sinusoidal_positions(4, 7), ConfigError); }

TEST(Encode, SingleTokenShape) {
    Seq2SeqModel m(tiny(), 1);
    const Tokens doc{Vocabulary::kBos};
    auto mem = encode(m, doc);
    EXPECT_EQ(mem.shape(), (Shape{1, 8}));
}

TEST(Encode, PositionsMatter) {
    Seq2SeqModel m(tiny(), 2);
    const Tokens a{6, 9, 11, 7};
    const Tokens b{9, 6, 11, 7};
    EXPECT_NE(vec(encode(m, a)), vec(encode(m, b)));
}

TEST(Encode, EvalModeIsDeterministic) {
    Seq2SeqModel m(tiny(), 3);
    const Tokens a{6, 9, 11, 7, 8};
    EXPECT_EQ(vec(encode(m, a)), vec(encode(m, a)));
}

TEST(Encode, OverlongInputRejectedOrTruncated) {
    auto c = tiny();
    c.max_positions = 4;
    Seq2SeqModel strict(c, 1);
    const Tokens doc{6, 7, 8, 9, 10, 11};
    EXPECT_THROW(encode(strict, doc), std::invalid_argument);
    c.truncate_overlong = true;
    Seq2SeqModel lenient(c, 1);
    EXPECT_EQ(encode(lenient, doc).rows(), 4u);
}

TEST(Encode, OutOfVocabularyIdThrows) {
    Seq2SeqModel m(tiny(), 1);
    const Tokens doc{6, 25};
    EXPECT_THROW(encode(m, doc), IndexError);
}

TEST(Decode, CausalityHoldsUnderLaterEdits) {
    Seq2SeqModel m(tiny(), 4);
    std::mt19937_64 rng(4);
    const auto doc = random_tokens(rng, 7, 5, 25);
    auto mem = encode(m, doc);
    Tokens in = random_tokens(rng, 6, 5, 25);
    in[0] = Vocabulary::kBos;
    auto base = teacher(m, mem, in).logits;
    for (std::size_t t = 1; t < in.size(); ++t) {
        Tokens edited = in;
        for (std::size_t j = t; j < in.size(); ++j) {
            edited[j] = edited[j] == 5 ? 6 : 5;
        }
        auto other = teacher(m, mem, edited).logits;
        for (std::size_t r = 0; r < t; ++r) {
            for (std::size_t c = 0; c < 25; ++c) {
                EXPECT_EQ(base.at(r, c), other.at(r, c)) << "row " << r << " edit from " << t;
            }
        }
    }
}

TEST(Decode, AttentionRowsAreStochastic) {
    Seq2SeqModel m(tiny(), 5);
    std::mt19937_64 rng(5);
    const auto doc = random_tokens(rng, 9, 5, 25);
    auto mem = encode(m, doc);
    Tokens in = random_tokens(rng, 5, 5, 25);
    in[0] = Vocabulary::kBos;
    auto out = teacher(m, mem, in, 0, true);
    // layers × heads × {self, enc-dec}
    ASSERT_EQ(out.attention.size(), 2u * 2u * 2u);
    for (const auto& rec : out.attention) {
        EXPECT_EQ(rec.query_len, in.size());
        EXPECT_EQ(rec.key_len, rec.kind == AttentionKind::Self ? in.size() : doc.size());
        for (std::size_t q = 0; q < rec.query_len; ++q) {
            double s = 0;
            for (std::size_t k = 0; k < rec.key_len; ++k) {
                s += rec.at(q, k);
                if (rec.kind == AttentionKind::Self && k > q) {
                    EXPECT_EQ(rec.at(q, k), 0.0);
                }
            }
            EXPECT_NEAR(s, 1.0, 1e-9);
        }
    }
}

TEST(Decode, TeacherForcedMatchesIncremental) {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 20; ++trial) {
        auto cfg = tiny(trial % 2 ? 2 : 1);
        Seq2SeqModel m(cfg, static_cast<std::uint64_t>(100 + trial));
        const auto doc = random_tokens(rng, 3 + rng() % 10, 5, 25);
        auto mem = encode(m, doc);
        Tokens in = random_tokens(rng, 1 + rng() % 12, 1, 25);
        in[0] = Vocabulary::kBos;
        const std::size_t which = cfg.decoder_count - 1;
        auto full = teacher(m, mem, in, which).logits;
        IncrementalDecoder inc(m, mem, which);
        for (std::size_t t = 0; t < in.size(); ++t) {
            auto step = inc.step(in[t]);
            for (std::size_t c = 0; c < cfg.vocab_size; ++c) {
                EXPECT_NEAR(step[c], full.at(t, c), 1e-9);
            }
        }
        auto last = decode_step(m, mem, in, which).logits;
        for (std::size_t c = 0; c < cfg.vocab_size; ++c) {
            EXPECT_NEAR(last[c], full.at(in.size() - 1, c), 1e-9);
        }
    }
}

TEST(Decode, StepCaptureCoversFinalQuery) {
    Seq2SeqModel m(tiny(), 7);
    const Tokens doc{6, 7, 8};
    auto mem = encode(m, doc);
    const Tokens prefix{Vocabulary::kBos, 9, 10};
    auto out = decode_step(m, mem, prefix, 0, true);
    ASSERT_EQ(out.attention.size(), 8u);
    for (const auto& rec : out.attention) {
        EXPECT_EQ(rec.query_len, 1u);
        EXPECT_EQ(rec.key_len, rec.kind == AttentionKind::Self ? 3u : 3u);
    }
}

TEST(Decode, PrefixMustStartWithBos) {
    Seq2SeqModel m(tiny(), 7);
    const Tokens doc{6, 7};
    auto mem = encode(m, doc);
    const Tokens bad{9, 10};
    EXPECT_THROW(decode_step(m, mem, bad, 0), std::invalid_argument);
}

TEST(Decode, SecondDecoderOnSingleDecoderModelIsConfigError) {
    Seq2SeqModel m(tiny(1), 8);
    const Tokens doc{6, 7};
    auto mem = encode(m, doc);
    const Tokens prefix{Vocabulary::kBos};
    EXPECT_THROW(decode_step(m, mem, prefix, 1), ConfigError);
}

TEST(Model, NoSegmentEmbedding) {
    Seq2SeqModel m(tiny(2), 9);
    for (const auto& p : m.params().all()) {
        EXPECT_EQ(p.name.find("segment"), std::string::npos) << p.name;
        EXPECT_EQ(p.name.find("token_type"), std::string::npos) << p.name;
    }
}

TEST(Model, ParameterGroupsPartitionTheSet) {
    Seq2SeqModel m(tiny(2), 9);
    auto enc = m.encoder_parameter_indices();
    auto dec = m.decoder_parameter_indices();
    EXPECT_EQ(enc.size() + dec.size(), m.params().size());
    std::vector<int> seen(m.params().size(), 0);
    for (auto i : enc) {
        ++seen[i];
    }
    for (auto i : dec) {
        ++seen[i];
    }
    for (int s : seen) {
        EXPECT_EQ(s, 1);
    }
    EXPECT_NE(std::find(enc.begin(), enc.end(), m.embedding_index()), enc.end());
}

TEST(Model, CheckpointRoundTrip) {
    Seq2SeqModel m(tiny(2), 10);
    const auto path = std::filesystem::temp_directory_path() / "mclas_model_rt.ckpt";
    m.save(path);
    auto back = Seq2SeqModel::load(path);
    EXPECT_EQ(back.config(), m.config());
    for (std::size_t i = 0; i < m.params().size(); ++i) {
        EXPECT_EQ(back.params().values(i), m.params().values(i));
    }
    std::filesystem::remove(path);
}

TEST(Model, CopiesOwnTheirStorage) {
    Seq2SeqModel m(tiny(), 11);
    Seq2SeqModel c = m;
    c.params().values(0)[0] += 1.0;
    EXPECT_NE(c.params().values(0)[0], m.params().values(0)[0]);
}

TEST(Copy, WholeModelIsBitIdentical) {
    Seq2SeqModel src(tiny(), 12);
    Seq2SeqModel dst(tiny(), 13);
    copy_parameters(src, dst, CopyPart::All);
    for (std::size_t i = 0; i < src.params().size(); ++i) {
        EXPECT_EQ(src.params().values(i), dst.params().values(i)) << src.params().at(i).name;
    }
}

TEST(Copy, DecoderToBothLeavesEncoderUntouched) {
    Seq2SeqModel src(tiny(1), 14);
    Seq2SeqModel dst(tiny(2), 15);
    const Seq2SeqModel before = dst;
    copy_parameters(src, dst, CopyPart::DecoderToBoth);
    for (auto i : dst.encoder_parameter_indices()) {
        EXPECT_EQ(dst.params().values(i), before.params().values(i)) << dst.params().at(i).name;
    }
    for (const auto& p : src.params().all()) {
        if (p.name.rfind("decoder0.", 0) != 0) {
            continue;
        }
        const std::string tail = p.name.substr(std::string("decoder0.").size());
        EXPECT_EQ(dst.params().values(dst.params().index_of("decoder0." + tail)), *p.value);
        EXPECT_EQ(dst.params().values(dst.params().index_of("decoder1." + tail)), *p.value);
    }
}

TEST(Copy, ShapeMismatchNamesParameter) {
    Seq2SeqModel src(tiny(), 16);
    auto c = tiny();
    c.d_ff = 12;
    Seq2SeqModel dst(c, 17);
    try {
        copy_parameters(src, dst, CopyPart::All);
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        EXPECT_NE(std::string(e.what()).find("ffn"), std::string::npos) << e.what();
    }
}

TEST(Copy, CopiedModelReproducesLoss) {
    const auto vocab = Vocabulary::with_content_size(10);
    auto cfg = tiny();
    cfg.vocab_size = vocab.size();
    Seq2SeqModel src(cfg, 18);
    Seq2SeqModel dst(cfg, 19);
    copy_parameters(src, dst, CopyPart::All);
    std::vector<Example> batch;
    batch.push_back({1, {5, 6, 7, 5, 6}, {5, 6}, std::nullopt});
    batch.push_back({2, {8, 9, 8, 10}, {8}, std::nullopt});
    EXPECT_NEAR(loss_monolingual(src, batch, vocab), loss_monolingual(dst, batch, vocab), 1e-9);
}

TEST(Dropout, TrainModeUsesRngAndEvalDoesNot) {
    auto cfg = tiny();
    cfg.dropout_p = 0.5;
    Seq2SeqModel m(cfg, 20);
    const Tokens doc{6, 7, 8, 9};
    ParameterBinder b(m.params(), false);
    std::mt19937_64 r1(1), r2(2);
    ForwardOptions o1{true, &r1, false};
    ForwardOptions o2{true, &r2, false};
    NoGradGuard guard;
    EXPECT_NE(vec(encode(m, b, doc, o1)), vec(encode(m, b, doc, o2)));
    EXPECT_EQ(vec(encode(m, doc)), vec(encode(m, doc)));
}
