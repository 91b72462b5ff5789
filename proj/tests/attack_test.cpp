#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "fatlab/attack.hpp"
#include "test_support.hpp"

namespace fatlab {
namespace {

using testing::linear_toy_model;
using testing::random_images;
using testing::random_labels;
using testing::tiny_spec;

constexpr double kXi = 8.0 / 255.0;

template <typename T>
Batch<T> make_batch(const ModelSpec& spec, int n, std::uint64_t seed, double lo = 0.05, double hi = 0.95) {
    Batch<T> b;
    b.images = random_images<T>(n, spec, seed, lo, hi);
    b.labels = random_labels(n, spec.num_classes, seed + 1);
    b.indices.resize(std::size_t(n));
    std::iota(b.indices.begin(), b.indices.end(), 0);
    return b;
}

AttackConfig single_step(double xi) {
    AttackConfig c;
    c.budget = xi;
    c.step_size = xi;
    c.steps = 1;
    return c;
}

TEST(Sign, ZeroMapsToZero) {
    const std::vector<double> g{0.5, -0.2, 0.0};
    std::vector<double> d;
    for (double v : g) d.push_back(project_component(0.5, kXi * sign(v), kXi, true));
    EXPECT_EQ(d, (std::vector<double>{kXi, -kXi, 0.0}));
}

TEST(Fgsm, ComponentsAreSignedBudgetOrZero) {
    auto spec = tiny_spec(1);
    auto m = build_model<double>(spec);
    testing::jitter_parameters(m, 2);
    // Ignore input channel 1 entirely: its gradient, hence its delta, is 0.
    auto& w = m.parameters()[0];
    for (int o = 0; o < w.shape[0]; ++o)
        for (int p = 0; p < 9; ++p) w.values[std::size_t((o * 2 + 1) * 9 + p)] = 0.0;
    auto b = make_batch<double>(spec, 3, 5);
    auto cfg = single_step(kXi);
    cfg.clip_to_image_range = false;
    auto d = fgsm(m, b, cfg);
    EXPECT_EQ(d.role, PerturbationRole::adversarial);
    for (int s = 0; s < 3; ++s)
        for (int c = 0; c < 2; ++c)
            for (double v : d.delta.channel(s, c)) {
                if (c == 1)
                    EXPECT_EQ(v, 0.0);
                else
                    EXPECT_TRUE(v == kXi || v == -kXi || v == 0.0) << v;
            }
}

TEST(Fgsm, ZeroGradientGivesZeroDelta) {
    auto spec = tiny_spec(3);
    auto m = build_model<double>(spec);
    for (auto& v : m.parameters()[0].values) v = 0.0;
    auto b = make_batch<double>(spec, 2, 7);
    auto d = fgsm(m, b, single_step(kXi));
    for (double v : d.delta.values()) EXPECT_EQ(v, 0.0);
}

TEST(Fgsm, MatchesSignOfFiniteDifferenceGradient) {
    // 4-pixel input, two-class affine network.
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto m = linear_toy_model<double>(seed);
        Batch<double> b;
        b.images = random_images<double>(1, m.spec(), seed + 50, 0.2, 0.8);
        b.labels = {int(seed % 2)};
        auto cfg = single_step(kXi);
        cfg.clip_to_image_range = false;
        auto d = fgsm(m, b, cfg);

        std::vector<double> flat(b.images.values().begin(), b.images.values().end());
        auto f = [&] {
            Tensor<double> x = Tensor<double>::like(b.images);
            std::copy(flat.begin(), flat.end(), x.data());
            return testing::reference_loss(forward(m, x).logits, b.labels, LossKind::cross_entropy);
        };
        auto fd = testing::central_differences(flat, f);
        for (std::size_t i = 0; i < fd.size(); ++i) EXPECT_EQ(d.delta[i], kXi * sign(fd[i])) << "seed " << seed;
    }
}

TEST(Pgd, SingleStepEqualsFgsmBitForBit) {
    auto spec = tiny_spec(4);
    auto m = build_model<float>(spec);
    auto b = make_batch<float>(spec, 5, 9, 0.0, 1.0);
    auto cfg = single_step(kXi);
    auto f = fgsm(m, b, cfg);
    auto p = pgd(m, b, cfg);
    ASSERT_EQ(p.trace.size(), 1u);
    EXPECT_TRUE(f.delta == p.perturbation.delta);
}

TEST(Pgd, HugeStrideSaturates) {
    auto spec = tiny_spec(5);
    auto m = build_model<double>(spec);
    testing::jitter_parameters(m, 6);
    auto b = make_batch<double>(spec, 3, 10, 0.2, 0.8);
    AttackConfig cfg;
    cfg.budget = kXi;
    cfg.step_size = 10 * kXi;
    cfg.steps = 4;
    auto r = pgd(m, b, cfg);
    EXPECT_EQ(r.trace.size(), 4u);
    for (double v : r.perturbation.delta.values()) EXPECT_TRUE(v == kXi || v == -kXi || v == 0.0);
}

TEST(Pgd, ReachesBestSignCornerOnFourPixelModel) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto m = linear_toy_model<double>(seed + 100);
        Batch<double> b;
        b.images = random_images<double>(1, m.spec(), seed, 0.2, 0.8);
        b.labels = {int(seed % 2)};
        AttackConfig cfg;
        cfg.budget = kXi;
        cfg.step_size = kXi / 4;
        cfg.steps = 10;
        cfg.clip_to_image_range = false;
        auto r = pgd(m, b, cfg);
        auto loss_at = [&](const Tensor<double>& d) {
            return testing::reference_loss(forward(m, add(b.images, d)).logits, b.labels, LossKind::cross_entropy);
        };
        double best = -1e300;
        Tensor<double> corner = Tensor<double>::like(b.images);
        for (int code = 0; code < 81; ++code) {
            int c = code;
            for (int i = 0; i < 4; ++i, c /= 3) corner[std::size_t(i)] = double(c % 3 - 1) * kXi;
            best = std::max(best, loss_at(corner));
        }
        EXPECT_GE(loss_at(r.perturbation.delta), best - 1e-9) << "seed " << seed;
    }
}

TEST(Pgd, LossIsMonotoneOnAffineTwoClassModel) {
    auto m = linear_toy_model<double>(3, 3, 4);
    Batch<double> b;
    b.images = random_images<double>(4, m.spec(), 77, 0.0, 1.0);
    b.labels = {0, 1, 1, 0};
    AttackConfig cfg;
    cfg.budget = 16.0 / 255;
    cfg.step_size = 3.0 / 255;
    cfg.steps = 10;
    auto r = pgd(m, b, cfg);
    double prev = -1e300;
    for (const auto& d : r.trace) {
        const double l =
            testing::reference_loss(forward(m, add(b.images, d)).logits, b.labels, LossKind::cross_entropy);
        EXPECT_GE(l, prev - 1e-12);
        prev = l;
    }
}

TEST(Attacks, BudgetAndImageRangeInvariants) {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        auto spec = tiny_spec(seed);
        auto m = build_model<float>(spec);
        auto b = make_batch<float>(spec, 3, seed + 3, 0.0, 1.0);
        AttackConfig cfg;
        cfg.budget = (1 + seed % 16) / 255.0;
        cfg.step_size = cfg.budget / 3;
        cfg.steps = 1 + int(seed % 4);
        cfg.init = seed % 2 ? InitKind::uniform_random : InitKind::zero;
        cfg.seed = seed;
        for (const auto& d : {fgsm(m, b, cfg).delta, pgd(m, b, cfg).perturbation.delta}) {
            const float xi = float(cfg.budget);
            for (std::size_t i = 0; i < d.size(); ++i) {
                EXPECT_LE(std::abs(d[i]), xi);
                const float v = b.images[i] + d[i];
                EXPECT_GE(v, 0.0f);
                EXPECT_LE(v, 1.0f);
            }
        }
    }
}

TEST(Attacks, NonFiniteGradientNamesStep) {
    auto spec = tiny_spec(2);
    auto m = build_model<double>(spec);
    auto b = make_batch<double>(spec, 2, 4);
    b.images[3] = std::numeric_limits<double>::infinity();
    AttackConfig cfg;
    cfg.steps = 3;
    cfg.clip_to_image_range = false;
    EXPECT_THROW(pgd(m, b, cfg), NonFiniteError);
}

TEST(Noise, UniformMomentsAndDeterminism) {
    const double a = 16.0 / 255;
    auto n1 = uniform_noise<double>({1, 1, 1, 100000}, a, 42);
    double mean = 0;
    for (double v : n1.delta.values()) {
        EXPECT_LE(std::abs(v), a);
        mean += v;
    }
    mean /= 1e5;
    const double se = a / std::sqrt(3.0) / std::sqrt(1e5);
    EXPECT_LT(std::abs(mean), 3 * se);
    auto n2 = uniform_noise<double>({1, 1, 1, 100000}, a, 42);
    EXPECT_TRUE(n1.delta == n2.delta);
    EXPECT_EQ(n1.role, PerturbationRole::inference_noise);
    EXPECT_EQ(uniform_noise<double>({1, 1, 1, 4}, a, 1, PerturbationRole::random_init).role,
              PerturbationRole::random_init);
    EXPECT_THROW(uniform_noise<double>({1, 1, 1, 4}, 0.0, 1), ConfigError);
}

TEST(Noise, GaussianStdAndDeterminism) {
    const double sigma = 16.0 / 255;
    auto g1 = gaussian_noise<double>({1, 1, 1, 100000}, sigma, 9);
    double mean = 0, sq = 0;
    for (double v : g1.delta.values()) mean += v;
    mean /= 1e5;
    for (double v : g1.delta.values()) sq += (v - mean) * (v - mean);
    const double sd = std::sqrt(sq / (1e5 - 1));
    EXPECT_LT(std::abs(sd - sigma) / sigma, 0.02);
    EXPECT_TRUE(g1.delta == gaussian_noise<double>({1, 1, 1, 100000}, sigma, 9).delta);
    EXPECT_THROW(gaussian_noise<double>({1, 1, 1, 4}, -1.0, 1), ConfigError);
}

TEST(FgnmScale, HandExamples) {
    PerturbationBatch<double> p;
    p.delta = Tensor<double>(1, 1, 1, 4);
    p.delta[0] = kXi;
    p.delta[1] = -kXi;
    p.delta[2] = kXi;
    p.delta[3] = -kXi;
    EXPECT_NEAR(fgnm_scale(p), 1.0 / kXi, 1e-9);

    p.delta = Tensor<double>(2, 3, 5, 5, -kXi);
    EXPECT_NEAR(fgnm_scale(p), 1.0 / kXi, 1e-9);

    p.delta = Tensor<double>(1, 1, 1, 2);
    p.delta[0] = 0.1;
    EXPECT_NEAR(fgnm_scale(p), 10.0, 1e-12);

    p.delta = Tensor<double>(1, 1, 1, 2);
    EXPECT_THROW(fgnm_scale(p), Error);
}

class PriorFgsm : public ::testing::Test {
protected:
    ModelSpec spec = tiny_spec(8);
    Model<float> model = build_model<float>(spec);
    Batch<float> batch = make_batch<float>(spec, 4, 21, 0.0, 1.0);
    PerturbationPrior<float> prior{4, spec.in_channels, spec.height, spec.width, 0.0};
};

TEST_F(PriorFgsm, ZeroMomentumEqualsUniformInitFgsm) {
    auto cfg = single_step(kXi);
    cfg.seed = 5;
    auto p = prior_fgsm(model, batch, cfg, prior);
    cfg.init = InitKind::uniform_random;
    EXPECT_TRUE(p.delta == fgsm(model, batch, cfg).delta);
    for (int s = 0; s < 4; ++s) {
        auto e = prior.entry(s);
        EXPECT_TRUE(std::equal(e.begin(), e.end(), p.delta.sample(s).begin()));
    }
}

TEST_F(PriorFgsm, ZeroPriorFullMomentumEqualsFgsm) {
    prior.set_momentum(1.0);
    auto cfg = single_step(kXi);
    EXPECT_TRUE(prior_fgsm(model, batch, cfg, prior).delta == fgsm(model, batch, cfg).delta);
}

TEST_F(PriorFgsm, SaturatedPriorStaysClipped) {
    auto m = linear_toy_model<float>(4, 2, 6, 3, {2, 3, 3, 4, 4});
    Batch<float> b;
    b.images = random_images<float>(2, m.spec(), 3, 0.3, 0.7);
    b.labels = {0, 1};
    b.indices = {0, 1};
    auto cfg = single_step(kXi);
    PerturbationPrior<float> pr(2, 2, 6, 6, 1.0);
    // Store the gradient-sign corner; another step in the same direction
    // must stay on the boundary.
    auto first = fgsm(m, b, cfg);
    for (int s = 0; s < 2; ++s) pr.write(s, first.delta.sample(s), kXi);
    auto again = prior_fgsm(m, b, cfg, pr);
    for (std::size_t i = 0; i < again.delta.size(); ++i)
        if (first.delta[i] != 0.0f) EXPECT_EQ(again.delta[i], first.delta[i]);
}

TEST_F(PriorFgsm, MissingEntryIsAnError) {
    batch.indices[2] = 17;
    EXPECT_THROW(prior_fgsm(model, batch, single_step(kXi), prior), Error);
}

}  // namespace
}  // namespace fatlab
