#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "mclas/checkpoint.hpp"
#include "mclas/kernels.hpp"
#include "mclas/optim.hpp"
#include "mclas/tensor.hpp"
#include "support/gradcheck.hpp"

using namespace mclas;

namespace {

std::vector<double> vals(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

}  // namespace

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
    auto i2 = Tensor::from({2, 2}, {1, 0, 0, 1});
    auto m = Tensor::from({2, 2}, {1, 2, 3, 4});
    EXPECT_EQ(vals(matmul(i2, m)), (std::vector<double>{1, 2, 3, 4}));
}

TEST(Matmul, RowTimesColumn) {
    auto c = matmul(Tensor::from({1, 2}, {1, 2}), Tensor::from({2, 1}, {3, 4}));
    EXPECT_EQ(c.shape(), (Shape{1, 1}));
    EXPECT_EQ(c.at(0), 11.0);
}

TEST(Matmul, MismatchNamesBothShapes) {
    try {
        matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 2}));
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
        EXPECT_NE(msg.find("[4x2]"), std::string::npos) << msg;
    }
}

TEST(Softmax, SymmetricInput) {
    auto s = softmax(Tensor::from({2}, {0, 0}), 0);
    EXPECT_DOUBLE_EQ(s.at(0), 0.5);
    EXPECT_DOUBLE_EQ(s.at(1), 0.5);
}

TEST(Softmax, LargeInputsDoNotOverflow) {
    auto s = softmax(Tensor::from({2}, {1000, 1000}), 0);
    EXPECT_DOUBLE_EQ(s.at(0), 0.5);
    EXPECT_DOUBLE_EQ(s.at(1), 0.5);
}

TEST(Softmax, MatchesLongDoubleEvaluation) {
    auto s = softmax(Tensor::from({3}, {1, 2, 3}), 0);
    long double z = 0;
    for (int i = 1; i <= 3; ++i) {
        z += std::exp(static_cast<long double>(i));
    }
    for (int i = 0; i < 3; ++i) {
        const long double expect = std::exp(static_cast<long double>(i + 1)) / z;
        EXPECT_NEAR(s.at(static_cast<std::size_t>(i)), static_cast<double>(expect), 1e-12);
    }
}

TEST(Softmax, RowsSumToOneAndIgnoreShifts) {
    std::mt19937_64 rng(3);
    auto x = testutil::random_tensor({4, 7}, rng, -5, 5);
    auto shifted = Tensor::from({4, 7}, vals(x));
    for (std::size_t r = 0; r < 4; ++r) {
        for (std::size_t c = 0; c < 7; ++c) {
            shifted.mutable_values()[r * 7 + c] += 3.25 * static_cast<double>(r + 1);
        }
    }
    auto a = softmax(x, 1);
    auto b = softmax(shifted, 1);
    for (std::size_t r = 0; r < 4; ++r) {
        double s = 0;
        for (std::size_t c = 0; c < 7; ++c) {
            s += a.at(r, c);
            EXPECT_NEAR(a.at(r, c), b.at(r, c), 1e-12);
        }
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(Softmax, WorksAlongEveryAxisOfRank3) {
    std::mt19937_64 rng(4);
    auto x = testutil::random_tensor({2, 3, 4}, rng);
    for (std::size_t axis = 0; axis < 3; ++axis) {
        auto s = softmax(x, axis);
        const auto& sh = s.shape();
        std::vector<double> totals(s.numel() / sh[axis], 0.0);
        // Sum over `axis` by collapsing its index.
        std::size_t inner = 1;
        for (std::size_t a = axis + 1; a < 3; ++a) {
            inner *= sh[a];
        }
        for (std::size_t i = 0; i < s.numel(); ++i) {
            const std::size_t outer = i / (inner * sh[axis]);
            totals[outer * inner + i % inner] += s.at(i);
        }
        for (double t : totals) {
            EXPECT_NEAR(t, 1.0, 1e-12);
        }
    }
}

TEST(LayerNorm, ConstantRowCollapsesToZero) {
    auto y = layer_norm(Tensor::from({1, 4}, {2, 2, 2, 2}), Tensor::full({4}, 1.0),
                        Tensor::zeros({4}), 1e-5);
    for (double v : y.values()) {
        EXPECT_EQ(v, 0.0);
    }
}

TEST(LayerNorm, SymmetricStandardization) {
    auto y = layer_norm(Tensor::from({1, 2}, {1, 3}), Tensor::full({2}, 1.0), Tensor::zeros({2}),
                        0.0);
    EXPECT_DOUBLE_EQ(y.at(0), -1.0);
    EXPECT_DOUBLE_EQ(y.at(1), 1.0);
}

TEST(LayerNorm, ConstantRowWithZeroEpsStaysFinite) {
    auto y = layer_norm(Tensor::from({1, 3}, {5, 5, 5}), Tensor::full({3}, 1.0),
                        Tensor::full({3}, 0.5), 0.0);
    for (double v : y.values()) {
        EXPECT_EQ(v, 0.5);
    }
}

TEST(CrossEntropy, ConfidentPredictionHasTinyLoss) {
    std::vector<double> logits(5, 0.0);
    logits[3] = 20.0;
    const std::int32_t target[] = {3};
    EXPECT_LT(cross_entropy(Tensor::from({1, 5}, logits), target).item(), 1e-6);
}

TEST(CrossEntropy, UniformLogitsGiveLogV) {
    const std::int32_t targets[] = {0, 5, 7};
    auto loss = cross_entropy(Tensor::zeros({3, 8}), targets);
    EXPECT_NEAR(loss.item(), std::log(8.0), 1e-15);
}

TEST(CrossEntropy, MatchesIndependentLogSumExp) {
    std::mt19937_64 rng(11);
    auto x = testutil::random_tensor({4, 6}, rng, -3, 3);
    const std::int32_t targets[] = {1, 0, 5, 2};
    double expect = 0.0;
    for (std::size_t r = 0; r < 4; ++r) {
        long double z = 0;
        for (std::size_t c = 0; c < 6; ++c) {
            z += std::exp(static_cast<long double>(x.at(r, c)));
        }
        expect += static_cast<double>(std::log(z) - x.at(r, static_cast<std::size_t>(targets[r])));
    }
    EXPECT_NEAR(cross_entropy(x, targets).item(), expect / 4.0, 1e-10);
    EXPECT_NEAR(cross_entropy(x, targets, {}, Reduction::Sum).item(), expect, 1e-10);
}

TEST(CrossEntropy, MaskSelectsPositions) {
    std::mt19937_64 rng(12);
    auto x = testutil::random_tensor({3, 4}, rng);
    const std::int32_t targets[] = {1, 2, 3};
    const std::uint8_t keep[] = {1, 0, 1};
    auto single = [&](std::size_t r) {
        auto v = vals(x);
        auto one = Tensor::from({1, 4}, std::vector<double>(v.begin() + r * 4, v.begin() + r * 4 + 4));
        const std::int32_t t[] = {targets[r]};
        return cross_entropy(one, t).item();
    };
    const double l0 = single(0), l2 = single(2);
    EXPECT_NEAR(cross_entropy(x, targets, keep, Reduction::Sum).item(), l0 + l2, 1e-14);
    EXPECT_NEAR(cross_entropy(x, targets, keep, Reduction::Mean).item(), (l0 + l2) / 2, 1e-14);
    const std::uint8_t none[] = {0, 0, 0};
    EXPECT_EQ(cross_entropy(x, targets, none, Reduction::Mean).item(), 0.0);
}

TEST(CrossEntropy, OutOfRangeTargetThrows) {
    const std::int32_t targets[] = {8};
    EXPECT_THROW(cross_entropy(Tensor::zeros({1, 8}), targets), IndexError);
}

TEST(CrossEntropy, NeverNegative) {
    std::mt19937_64 rng(13);
    for (int i = 0; i < 20; ++i) {
        auto x = testutil::random_tensor({3, 5}, rng, -10, 10);
        const std::int32_t targets[] = {0, 4, 2};
        EXPECT_GE(cross_entropy(x, targets).item(), 0.0);
    }
}

TEST(Embedding, BadIdThrows) {
    const std::int32_t ids[] = {0, 4};
    EXPECT_THROW(embedding(Tensor::zeros({4, 2}), ids), IndexError);
}

TEST(Gradients, EveryOpMatchesFiniteDifferences) {
    for (const auto& c : testutil::check_all_ops(6, 2024)) {
        EXPECT_GE(c.shapes, 5u) << c.op;
        EXPECT_LT(c.max_rel_error, 1e-4) << c.op;
    }
}

TEST(Gradients, NoGradGuardStopsRecording) {
    auto x = Tensor::from({2}, {1, 2}, true);
    NoGradGuard guard;
    auto y = scale(x, 2.0);
    EXPECT_FALSE(y.requires_grad());
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
    ParameterSet ps;
    ps.add("w", {3}, {0.5, -1.0, 2.0});
    auto st = OptimizerState::for_group(ps, {0}, 0.1, 10);
    Gradients g = ps.zero_gradients();
    adam_step(ps, g, st, 0.01);
    EXPECT_EQ(ps.values(0), (std::vector<double>{0.5, -1.0, 2.0}));
    EXPECT_EQ(st.step_count, 1u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
    ParameterSet ps;
    ps.add("w", {1}, {1.0});
    auto st = OptimizerState::for_group(ps, {0}, 0.1, 10);
    Gradients g{{1.0}};
    const double lr = 0.01;
    adam_step(ps, g, st, lr);
    // m̂ = 1, v̂ = 1, so the step is lr / (1 + eps).
    EXPECT_NEAR(ps.values(0)[0], 1.0 - lr / (1.0 + 1e-9), 1e-15);
}

TEST(Adam, TwoStepsMatchScalarTrace) {
    ParameterSet ps;
    ps.add("w", {1}, {0.3});
    auto st = OptimizerState::for_group(ps, {0}, 0.1, 10);
    const double grads[] = {0.7, -0.2};
    const double lrs[] = {0.01, 0.02};
    double p = 0.3, m = 0.0, v = 0.0;
    for (int t = 1; t <= 2; ++t) {
        const double g = grads[t - 1];
        Gradients gg{{g}};
        adam_step(ps, gg, st, lrs[t - 1]);
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        const double mh = m / (1.0 - std::pow(0.9, t));
        const double vh = v / (1.0 - std::pow(0.999, t));
        p -= lrs[t - 1] * mh / (std::sqrt(vh) + 1e-9);
        EXPECT_NEAR(ps.values(0)[0], p, 1e-12);
    }
    EXPECT_EQ(st.step_count, 2u);
}

TEST(Adam, OnlyTouchesItsGroup) {
    ParameterSet ps;
    ps.add("a", {1}, {1.0});
    ps.add("b", {1}, {1.0});
    auto st = OptimizerState::for_group(ps, {1}, 0.1, 10);
    Gradients g{{1.0}, {1.0}};
    adam_step(ps, g, st, 0.1);
    EXPECT_EQ(ps.values(0)[0], 1.0);
    EXPECT_LT(ps.values(1)[0], 1.0);
}

TEST(WarmupLr, PeakValue) { EXPECT_NEAR(warmup_lr(10000, 0.005, 10000), 5e-5, 1e-18); }

TEST(WarmupLr, FirstStep) { EXPECT_NEAR(warmup_lr(1, 0.005, 10000), 5e-9, 1e-22); }

TEST(WarmupLr, PeaksAtWarmup) {
    for (double base : {0.005, 0.2, 3.0}) {
        for (std::uint64_t w : {2u, 100u, 5000u}) {
            EXPECT_LT(warmup_lr(w - 1, base, w), warmup_lr(w, base, w));
            EXPECT_GT(warmup_lr(w, base, w), warmup_lr(w + 1, base, w));
        }
    }
}

TEST(Kernels, ParallelMatchesSerialBitwise) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-1, 1);
    for (auto [m, k, n] : {std::tuple{1, 1, 1}, {7, 13, 5}, {64, 33, 70}, {3, 100, 2}}) {
        const auto sm = static_cast<std::size_t>(m), sk = static_cast<std::size_t>(k),
                   sn = static_cast<std::size_t>(n);
        std::vector<double> a(sm * sk), b(sk * sn), bt(sn * sk), at(sm * sn);
        for (auto* v : {&a, &b, &bt, &at}) {
            for (auto& x : *v) {
                x = u(rng);
            }
        }
        std::vector<double> c1(sm * sn, 0.5), c2(sm * sn, 0.5);
        kernels::gemm_nn_serial(a, b, c1, sm, sk, sn);
        kernels::gemm_nn_parallel(a, b, c2, sm, sk, sn);
        EXPECT_EQ(c1, c2);
        std::fill(c1.begin(), c1.end(), 0.0);
        std::fill(c2.begin(), c2.end(), 0.0);
        kernels::gemm_nt_serial(a, bt, c1, sm, sk, sn);
        kernels::gemm_nt_parallel(a, bt, c2, sm, sk, sn);
        EXPECT_EQ(c1, c2);
        std::vector<double> d1(sk * sn, 0.0), d2(sk * sn, 0.0);
        kernels::gemm_tn_serial(a, at, d1, sm, sk, sn);
        kernels::gemm_tn_parallel(a, at, d2, sm, sk, sn);
        EXPECT_EQ(d1, d2);
    }
}

TEST(Kernels, SerialMatchesNaiveProduct) {
    const std::vector<double> a{1, 2, 3, 4, 5, 6};  // 2×3
    const std::vector<double> b{7, 8, 9, 10, 11, 12};  // 3×2
    std::vector<double> c(4, 0.0);
    kernels::gemm_nn_serial(a, b, c, 2, 3, 2);
    EXPECT_EQ(c, (std::vector<double>{58, 64, 139, 154}));
}

TEST(Checkpoint, RoundTripIsBitExact) {
    std::mt19937_64 rng(9);
    ParameterSet ps;
    ps.add_normal("x.w", {3, 4}, 1.0, rng);
    ps.add("x.b", {2}, {std::nextafter(1.0, 2.0), -0.0});
    Checkpoint ck;
    ck.meta["k"] = "v";
    ck.add_parameters(ps, "param.");
    const auto path = std::filesystem::temp_directory_path() / "mclas_tensor_ckpt.bin";
    save_checkpoint(ck, path);
    auto back = load_checkpoint(path);
    EXPECT_EQ(back.meta, ck.meta);
    ParameterSet ps2;
    ps2.add_constant("x.w", {3, 4}, 0.0);
    ps2.add_constant("x.b", {2}, 0.0);
    back.load_parameters(ps2, "param.");
    for (std::size_t i = 0; i < 2; ++i) {
        const auto& a = ps.values(i);
        const auto& b = ps2.values(i);
        ASSERT_EQ(a.size(), b.size());
        EXPECT_EQ(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)), 0);
    }
    std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsForeignFile) {
    const auto path = std::filesystem::temp_directory_path() / "mclas_not_ckpt.bin";
    {
        std::ofstream os(path);
        os << "hello";
    }
    EXPECT_THROW(load_checkpoint(path), FormatError);
    std::filesystem::remove(path);
}

TEST(Checkpoint, ShapeMismatchOnLoadThrows) {
    ParameterSet ps;
    ps.add_constant("w", {2, 2}, 1.0);
    Checkpoint ck;
    ck.add_parameters(ps);
    ParameterSet other;
    other.add_constant("w", {4}, 0.0);
    EXPECT_THROW(ck.load_parameters(other), ShapeError);
}
