#include <gtest/gtest.h>

#include "fatlab/evaluation.hpp"
#include "test_support.hpp"

namespace fatlab {
namespace {

using testing::jitter_parameters;

struct Fixture {
    Dataset data;
    ModelSpec spec;
};

Fixture make_fixture(std::uint64_t seed = 5) {
    DatasetSpec ds;
    ds.num_classes = 3;
    ds.train_per_class = 1;
    ds.test_per_class = 10;
    ds.height = 8;
    ds.width = 8;
    ds.seed = seed;
    Fixture f;
    f.data = generate_synthetic(ds).second;
    f.spec.in_channels = 3;
    f.spec.height = 8;
    f.spec.width = 8;
    f.spec.num_classes = 3;
    f.spec.stage_widths = {4, 4, 6, 6, 8};
    f.spec.seed = seed;
    return f;
}

Model<float> jittered(const ModelSpec& spec, std::uint64_t seed) {
    Model<float> m = build_model<float>(spec);
    jitter_parameters(m, seed, 0.3);
    return m;
}

const double kEps = 8.0 / 255.0;

TEST(NoiseParsing, AcceptsFractionsAndRoundTrips) {
    EXPECT_DOUBLE_EQ(parse_level("16/255"), 16.0 / 255.0);
    EXPECT_DOUBLE_EQ(parse_level("0.25"), 0.25);
    EXPECT_THROW(parse_level("abc"), ConfigError);
    EXPECT_THROW(parse_level("1/"), ConfigError);
    EXPECT_THROW(parse_level("0.1x"), ConfigError);
    EXPECT_EQ(parse_noise("none"), NoiseSpec{});
    const auto u = parse_noise("uniform:8/255");
    EXPECT_EQ(u.kind, NoiseKind::uniform);
    EXPECT_EQ(u.level, 8.0 / 255.0);
    EXPECT_EQ(parse_noise(format_noise(u)), u);
    EXPECT_EQ(parse_noise("gaussian:0.1").kind, NoiseKind::gaussian);
    EXPECT_THROW(parse_noise("laplace:0.1"), ConfigError);
    EXPECT_THROW(parse_noise("uniform:0"), ConfigError);
}

TEST(Noise, UniformDrawsAreBoundedClampedAndSeeded) {
    const auto f = make_fixture();
    auto b = f.data.batch<float>(0, 6);
    const NoiseSpec n{NoiseKind::uniform, 0.1};
    const auto a = apply_noise(b.images, b.indices, n, 11, 0);
    const auto again = apply_noise(b.images, b.indices, n, 11, 0);
    const auto other = apply_noise(b.images, b.indices, n, 11, 1);
    EXPECT_EQ(a, again);
    EXPECT_NE(a, other);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_GE(a[i], 0.0f);
        EXPECT_LE(a[i], 1.0f);
        EXPECT_LE(std::abs(a[i] - b.images[i]), 0.1f + 1e-6f);
    }
    // The draw for a sample depends on its dataset index, not batch position.
    auto tail = f.data.batch<float>(3, 3);
    const auto t = apply_noise(tail.images, tail.indices, n, 11, 0);
    for (std::size_t i = 0; i < t.size(); ++i) EXPECT_EQ(t[i], a[3 * b.images.sample_size() + i]);
}

TEST(Evaluate, NoiseFreeCleanAccuracyMatchesDirectCount) {
    const auto f = make_fixture();
    const auto m = jittered(f.spec, 1);
    EvalConfig cfg;
    cfg.batch_size = 7;  // forces a ragged final batch
    const auto r = evaluate(m, f.data, cfg);
    int correct = 0;
    for (int i = 0; i < f.data.size(); ++i) {
        auto b = f.data.batch<float>(i, 1);
        const auto logits = forward(m, b.images).logits;
        int best = 0;
        for (int k = 1; k < 3; ++k)
            if (logits(0, k) > logits(0, best)) best = k;
        correct += best == b.labels[0];
    }
    EXPECT_DOUBLE_EQ(r.clean_accuracy, 100.0 * correct / f.data.size());
    EXPECT_EQ(r.samples, std::size_t(f.data.size()));
    EXPECT_EQ(r.noise, "none");
}

TEST(Evaluate, RepeatedTrialsWithoutNoiseChangeNothing) {
    const auto f = make_fixture();
    const auto m = jittered(f.spec, 2);
    EvalConfig one;
    one.attacks = {fgsm_attack(kEps)};
    EvalConfig three = one;
    three.trials = 3;
    const auto a = evaluate(m, f.data, one);
    const auto b = evaluate(m, f.data, three);
    EXPECT_DOUBLE_EQ(a.clean_accuracy, b.clean_accuracy);
    EXPECT_DOUBLE_EQ(a.attacks[0].accuracy, b.attacks[0].accuracy);
}

TEST(Evaluate, SeededNoiseIsReproducible) {
    const auto f = make_fixture();
    const auto m = jittered(f.spec, 3);
    EvalConfig cfg;
    cfg.attacks = {pgd_attack(kEps, 3)};
    cfg.noise = {NoiseKind::uniform, 0.2};
    cfg.noise_seed = 42;
    cfg.trials = 2;
    const auto a = evaluate(m, f.data, cfg);
    const auto b = evaluate(m, f.data, cfg);
    EXPECT_EQ(a.clean_accuracy, b.clean_accuracy);
    EXPECT_EQ(a.attacks[0].accuracy, b.attacks[0].accuracy);
    EXPECT_EQ(a.attacks[0].adversarial_hash, b.attacks[0].adversarial_hash);
    EXPECT_EQ(a.noise_seed, 42u);
    EXPECT_EQ(a.trials, 2);
}

TEST(Evaluate, AttacksAreCraftedAgainstTheUndefendedModel) {
    // Noise and masking only act at evaluation; the perturbation bytes must
    // be identical to those of a plain run.
    const auto f = make_fixture();
    const auto m = jittered(f.spec, 4);
    EvalConfig plain;
    plain.attacks = {fgsm_attack(kEps), pgd_attack(kEps, 3)};
    EvalConfig noisy = plain;
    noisy.noise = {NoiseKind::gaussian, 0.05};
    noisy.noise_seed = 9;
    EvalConfig masked = plain;
    ChannelMask mask;
    mask.channels["B"] = {0, 2};
    masked.mask = mask;
    const auto a = evaluate(m, f.data, plain);
    const auto b = evaluate(m, f.data, noisy);
    const auto c = evaluate(m, f.data, masked);
    for (std::size_t k = 0; k < 2; ++k) {
        EXPECT_EQ(a.attacks[k].adversarial_hash, b.attacks[k].adversarial_hash);
        EXPECT_EQ(a.attacks[k].adversarial_hash, c.attacks[k].adversarial_hash);
    }
    EXPECT_EQ(c.masked_channels, 2u);
}

TEST(Evaluate, AdaptiveAttackChangesThePerturbation) {
    const auto f = make_fixture();
    const auto m = jittered(f.spec, 5);
    EvalConfig cfg;
    cfg.attacks = {pgd_attack(kEps, 2)};
    cfg.noise = {NoiseKind::uniform, 0.1};
    const auto fixed = evaluate(m, f.data, cfg);
    cfg.adaptive = true;
    cfg.adaptive_samples = 3;
    const auto adaptive = evaluate(m, f.data, cfg);
    const auto again = evaluate(m, f.data, cfg);
    EXPECT_TRUE(adaptive.adaptive);
    EXPECT_NE(fixed.attacks[0].adversarial_hash, adaptive.attacks[0].adversarial_hash);
    EXPECT_EQ(adaptive.attacks[0].adversarial_hash, again.attacks[0].adversarial_hash);
}

TEST(Evaluate, StrongerThreatNeverHelps) {
    // Same start, more steps or a larger ball: accuracy cannot rise by more
    // than the sign-step granularity allows on a handful of samples.
    const auto f = make_fixture(8);
    for (std::uint64_t s = 0; s < 3; ++s) {
        const auto m = jittered(f.spec, 20 + s);
        EvalConfig cfg;
        cfg.attacks = {pgd_attack(kEps, 2), pgd_attack(kEps, 10), pgd_attack(4 * kEps, 10)};
        const auto r = evaluate(m, f.data, cfg);
        const double slack = 100.0 / f.data.size();
        EXPECT_LE(r.attacks[0].accuracy, r.clean_accuracy + slack);
        EXPECT_LE(r.attacks[1].accuracy, r.attacks[0].accuracy + slack);
        EXPECT_LE(r.attacks[2].accuracy, r.attacks[1].accuracy + slack);
    }
}

TEST(Evaluate, SelfTransferEqualsWhiteBox) {
    const auto f = make_fixture();
    const auto m = jittered(f.spec, 6);
    EvalConfig cfg;
    cfg.attacks = {fgsm_attack(kEps), pgd_attack(kEps, 4), cw_attack(kEps, 4)};
    const auto a = evaluate(m, f.data, cfg);
    const auto b = evaluate_transfer(m, m, f.data, cfg);
    for (std::size_t k = 0; k < 3; ++k) {
        EXPECT_EQ(a.attacks[k].accuracy, b.attacks[k].accuracy);
        EXPECT_EQ(a.attacks[k].adversarial_hash, b.attacks[k].adversarial_hash);
    }
    const auto t = transfer_evaluate(m, m, f.data, pgd_attack(kEps, 4));
    EXPECT_EQ(t.attacks[0].accuracy, a.attacks[1].accuracy);
}

TEST(Evaluate, TransferFromAnotherModelUsesTheSourceGradient) {
    const auto f = make_fixture();
    const auto src = jittered(f.spec, 7);
    auto other = f.spec;
    other.seed = 99;
    const auto tgt = jittered(other, 8);
    const auto t = transfer_evaluate(src, tgt, f.data, pgd_attack(kEps, 3));
    EvalConfig cfg;
    cfg.attacks = {pgd_attack(kEps, 3)};
    const auto white = evaluate(src, f.data, cfg);
    EXPECT_EQ(t.attacks[0].adversarial_hash, white.attacks[0].adversarial_hash);
    EXPECT_DOUBLE_EQ(t.clean_accuracy, accuracy(tgt, f.data));

    auto wrong = f.spec;
    wrong.num_classes = 4;
    EXPECT_THROW(transfer_evaluate(src, build_model<float>(wrong), f.data, pgd_attack(kEps, 3)), ShapeError);
}

TEST(MaskedEvaluate, ThresholdAboveOneMasksNothing) {
    const auto f = make_fixture();
    const auto m = jittered(f.spec, 9);
    const auto stats = t_act(m, f.data, attack_source(m, pgd_attack(kEps, 3).config), "B");
    const auto masked = masked_evaluate(m, f.data, stats, 1.0, {pgd_attack(kEps, 3)});
    EvalConfig cfg;
    cfg.attacks = {pgd_attack(kEps, 3)};
    const auto plain = evaluate(m, f.data, cfg);
    EXPECT_EQ(masked.masked_channels, 0u);
    EXPECT_EQ(masked.clean_accuracy, plain.clean_accuracy);
    EXPECT_EQ(masked.attacks[0].accuracy, plain.attacks[0].accuracy);
}

TEST(EvalConfig, RejectsInvalidSettings) {
    const auto f = make_fixture();
    const auto m = jittered(f.spec, 10);
    EvalConfig cfg;
    cfg.trials = 0;
    EXPECT_THROW(evaluate(m, f.data, cfg), ConfigError);
    cfg = {};
    cfg.noise = {NoiseKind::uniform, -1.0};
    EXPECT_THROW(evaluate(m, f.data, cfg), ConfigError);
    cfg = {};
    ChannelMask bad;
    bad.channels["B"] = {1000};
    cfg.mask = bad;
    EXPECT_ANY_THROW(evaluate(m, f.data, cfg));
}

}  // namespace
}  // namespace fatlab
