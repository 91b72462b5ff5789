#include <gtest/gtest.h>

#include "fatlab/diagnostics.hpp"
#include "test_support.hpp"

namespace fatlab {
namespace {

using testing::random_images;
using testing::tiny_spec;

Tensor<double> filled(int n, int c, int h, int w, std::initializer_list<double> v) {
    Tensor<double> t(n, c, h, w);
    std::copy(v.begin(), v.end(), t.data());
    return t;
}

Dataset tiny_dataset(const ModelSpec& spec, int n, std::uint64_t seed) {
    Dataset d;
    d.images = random_images<float>(n, spec, seed);
    d.labels = testing::random_labels(n, spec.num_classes, seed + 1);
    d.tag = DatasetTag::test;
    return d;
}

TEST(VActNode, HandExamples) {
    auto a = filled(1, 1, 1, 4, {3, 4, 0, 0});
    Tensor<double> z(1, 1, 1, 4);
    EXPECT_DOUBLE_EQ(v_act_node(a, z), 5.0);
    EXPECT_DOUBLE_EQ(v_act_node(a, a), 0.0);
    auto a3 = a;
    for (auto& v : a3.values()) v *= -3.0;
    EXPECT_DOUBLE_EQ(v_act_node(a3, z), 15.0);
    EXPECT_THROW(v_act_node(a, Tensor<double>(1, 1, 1, 3)), ShapeError);
}

TEST(VActNode, ZeroPerturbationOnModel) {
    auto spec = tiny_spec(1);
    auto m = build_model<float>(spec);
    auto d = tiny_dataset(spec, 7, 3);
    Tensor<float> zero = Tensor<float>::like(d.images);
    for (const auto& node : spec.node_names) EXPECT_EQ(v_act_node(m, d, zero, node), 0.0);
    EXPECT_THROW(v_act_node(m, d, zero.slice(0, 6), "B"), ShapeError);
}

TEST(VActChannel, HandExamples) {
    auto a = filled(1, 2, 1, 4, {1, 1, 1, 1, 0, 0, 0, 0});
    Tensor<double> z(1, 2, 1, 4);
    EXPECT_DOUBLE_EQ(v_act_channel(a, z, 0), 4.0);
    EXPECT_DOUBLE_EQ(v_act_channel(a, z, 1), 0.0);
    EXPECT_THROW(v_act_channel(a, z, 2), ShapeError);

    auto one = filled(1, 1, 1, 3, {0.5, -1, 2});
    Tensor<double> z1(1, 1, 1, 3);
    const double node = v_act_node(one, z1);
    EXPECT_NEAR(v_act_channel(one, z1, 0), node * node, 1e-12);
}

TEST(VAct, SymmetryAndNonNegativityOnRandomPairs) {
    Rng rng(11);
    std::uniform_real_distribution<double> u(-2, 2);
    for (int trial = 0; trial < 200; ++trial) {
        Tensor<double> a(3, 4, 2, 3), b(3, 4, 2, 3);
        for (auto& v : a.values()) v = u(rng);
        for (auto& v : b.values()) v = u(rng);
        EXPECT_EQ(v_act_node(a, b), v_act_node(b, a));
        EXPECT_GE(v_act_node(a, b), 0.0);
        EXPECT_EQ(v_act_node(a, a), 0.0);
        for (int k = 0; k < 4; ++k) {
            EXPECT_EQ(v_act_channel(a, b, k, 1), v_act_channel(b, a, k, 1));
            EXPECT_GE(v_act_channel(a, b, k, 2), 0.0);
        }
    }
}

TEST(TAct, ArithmeticAndBounds) {
    EXPECT_NEAR(t_act_value(0.05, 100), 0.999909204262595, 1e-12);
    EXPECT_EQ(t_act_value(0.0, 100), 0.0);
    EXPECT_LT(t_act_value(1e6, 100), 1.0);
    EXPECT_LT(t_act_value(std::numeric_limits<double>::max(), 100), 1.0);
    EXPECT_THROW(t_act_value(1.0, 0.0), ConfigError);
    // Strictly increasing in raw value and alpha while unsaturated.
    EXPECT_LT(t_act_value(0.001, 100), t_act_value(0.002, 100));
    EXPECT_LT(t_act_value(0.001, 100), t_act_value(0.001, 200));
}

TEST(TAct, StatsFromSumsNormalises) {
    // N = 2 channels, plane 2 -> divisor 4; two samples.
    auto sum = channel_stats_from_sums("B", {0.4, 0.0}, 2, 2, 100, Aggregation::sum_over_dataset, DatasetTag::train);
    EXPECT_DOUBLE_EQ(sum.raw[0], 0.1);
    EXPECT_DOUBLE_EQ(sum.t_values[1], 0.0);
    auto mean = channel_stats_from_sums("B", {0.4, 0.0}, 2, 2, 100, Aggregation::mean_over_dataset, DatasetTag::test);
    EXPECT_DOUBLE_EQ(mean.raw[0], 0.05);
    EXPECT_NEAR(mean.t_values[0], std::tanh(5.0), 1e-15);
    EXPECT_EQ(mean.dataset_tag, DatasetTag::test);
    EXPECT_THROW(channel_stats_from_sums("B", {0.1}, 0, 2, 100, Aggregation::mean_over_dataset, DatasetTag::test),
                 Error);
}

TEST(TAct, ZeroPerturbationGivesZeros) {
    auto spec = tiny_spec(2);
    auto m = build_model<float>(spec);
    auto d = tiny_dataset(spec, 5, 4);
    auto st = t_act(m, d, Tensor<float>::like(d.images), "B");
    ASSERT_EQ(st.channels(), 3u);
    for (double t : st.t_values) EXPECT_EQ(t, 0.0);
    EXPECT_EQ(st.samples, 5u);
}

TEST(TAct, MatchesDirectComputation) {
    auto spec = tiny_spec(3);
    auto m = build_model<double>(spec);
    testing::jitter_parameters(m, 5);
    auto d = tiny_dataset(spec, 6, 9);
    auto delta = random_images<double>(6, spec, 10, -0.03, 0.03);
    auto st = t_act(m, d, delta, "C", 100.0, Aggregation::sum_over_dataset);

    auto fa = forward(m, d.images.cast<double>()).capture.at("C");
    auto fb = forward(m, add(d.images.cast<double>(), delta)).capture.at("C");
    for (int k = 0; k < fa.c(); ++k) {
        double s = 0;
        for (int i = 0; i < fa.n(); ++i) s += v_act_channel(fa, fb, k, i);
        const double raw = s / double(fa.c() * fa.plane());
        EXPECT_NEAR(st.raw[std::size_t(k)], raw, 1e-12);
        EXPECT_NEAR(st.t_values[std::size_t(k)], std::tanh(100 * raw), 1e-12);
    }
}

ChannelStats stats_with(std::vector<double> t) {
    ChannelStats st;
    st.node = "B";
    st.raw = t;
    st.t_values = std::move(t);
    return st;
}

TEST(Mask, StrictThreshold) {
    auto st = stats_with({0.2, 0.6, 0.95});
    auto m = mask_from_threshold(st, 0.5);
    EXPECT_EQ(m.channels.at("B"), (std::vector<int>{1, 2}));
    EXPECT_TRUE(mask_from_threshold(st, 1.0).empty());
    EXPECT_TRUE(mask_from_threshold(stats_with({0.5}), 0.5).empty());
    EXPECT_THROW(mask_from_threshold(st, 1.5), ConfigError);
}

TEST(Mask, MonotoneInThreshold) {
    Rng rng(3);
    std::uniform_real_distribution<double> u(0, 1);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> t(16);
        for (auto& v : t) v = t_act_value(u(rng) * 0.05, 100);
        auto st = stats_with(t);
        std::size_t prev = 0;
        for (double a2 : {1.0, 0.99, 0.9, 0.5, 0.1, 0.0}) {
            auto m = mask_from_threshold(st, a2);
            EXPECT_GE(m.count(), prev);
            prev = m.count();
        }
    }
}

TEST(TopChannels, CountsAndTies) {
    std::vector<double> t(100);
    for (int i = 0; i < 100; ++i) t[std::size_t(i)] = i * 0.001;
    auto s = select_top_channels(stats_with(t), 10);
    EXPECT_EQ(s.channels.size(), 10u);
    EXPECT_EQ(s.channels.front(), 99);

    auto eq = select_top_channels(stats_with(std::vector<double>(64, 0.3)), 1);
    EXPECT_EQ(eq.channels, std::vector<int>{0});
    EXPECT_EQ(select_top_channels(stats_with(std::vector<double>(64, 0.3)), 3).channels, (std::vector<int>{0, 1}));
    EXPECT_EQ(select_top_channels(stats_with({0.1, 0.9, 0.9, 0.2}), 50).channels, (std::vector<int>{1, 2}));
    EXPECT_THROW(select_top_channels(stats_with({0.1}), 0), ConfigError);
    EXPECT_THROW(select_top_channels(stats_with({0.1}), 101), ConfigError);
}

TEST(TopChannels, SizeMatchesCeilingForAllPercentages) {
    for (int n : {1, 7, 16, 32, 64, 100})
        for (double p : {1.0, 3.0, 10.0, 20.0, 33.3, 50.0, 100.0}) {
            std::vector<double> t(static_cast<std::size_t>(n));
            for (int i = 0; i < n; ++i) t[std::size_t(i)] = double((i * 7) % 5) / 10;
            auto a = select_top_channels(stats_with(t), p);
            auto b = select_top_channels(stats_with(t), p);
            EXPECT_EQ(a, b);
            // Independent count oracle in exact integer arithmetic on p * 10.
            const long num = std::lround(p * 10) * n, den = 1000;
            const std::size_t expect = std::size_t((num + den - 1) / den);
            EXPECT_EQ(a.channels.size(), expect) << n << " " << p;
            std::set<int> distinct(a.channels.begin(), a.channels.end());
            EXPECT_EQ(distinct.size(), a.channels.size());
        }
}

TEST(Variance, HandExamples) {
    Tensor<double> c(4, 1, 1, 1, 3.0);
    EXPECT_EQ(channel_variance(c)[0], 0.0);
    auto two = filled(2, 1, 1, 2, {0, 2, 2, 0});
    EXPECT_DOUBLE_EQ(channel_variance(two)[0], 1.0);
    auto vm = variance_mask("B", {0.1, 5.0, 0.3, 5.0}, 2);
    EXPECT_EQ(vm.channels.at("B"), (std::vector<int>{1, 3}));
}

TEST(Variance, DatasetPathMatchesCaptureVariance) {
    auto spec = tiny_spec(4);
    auto m = build_model<double>(spec);
    testing::jitter_parameters(m, 8);
    auto d = tiny_dataset(spec, 9, 1);
    auto direct = channel_variance(forward(m, d.images.cast<double>()).capture.at("B"));
    auto streamed = channel_variance(m, d, "B");
    for (std::size_t k = 0; k < direct.size(); ++k) EXPECT_NEAR(direct[k], streamed[k], 1e-12);
}

TEST(Increments, ShapeAndMonotoneOnLinearModel) {
    // One channel everywhere, rectifiers always active: features are affine
    // in the input, and PGD moves each pixel monotonically toward its corner.
    auto m = testing::linear_toy_model<double>(7);
    Dataset d;
    d.images = random_images<float>(3, m.spec(), 2, 0.3, 0.7);
    d.labels = {0, 1, 0};
    AttackConfig cfg;
    cfg.budget = 8.0 / 255;
    cfg.step_size = 1.0 / 255;
    cfg.steps = 6;
    auto inc = activation_increments(m, d, cfg, "B");
    ASSERT_EQ(inc.steps(), 6u);
    ASSERT_EQ(inc.channels(), 1u);
    for (std::size_t j = 1; j < inc.steps(); ++j) EXPECT_GE(inc.rows[j][0], inc.rows[j - 1][0] - 1e-15);
    EXPECT_GT(inc.rows.back()[0], 0.0);

    // Oracle: direct recomputation from the attack trace.
    Batch<double> b = d.batch<double>(0, 3);
    AttackConfig c2 = cfg;
    c2.seed = derive_seed(cfg.seed, 0x1ac, 0);
    auto tr = pgd(m, b, c2).trace;
    auto fa = forward(m, b.images).capture.at("B");
    for (std::size_t j = 0; j < tr.size(); ++j) {
        auto fb = forward(m, add(b.images, tr[j])).capture.at("B");
        double s = 0;
        for (int i = 0; i < 3; ++i) s += v_act_channel(fa, fb, 0, i);
        EXPECT_NEAR(inc.rows[j][0], s / double(fa.plane()), 1e-12);
    }
}

TEST(DetectCo, HandExamples) {
    auto ev = detect_co({60, 61, 60, 20}, 30, 3);
    ASSERT_EQ(ev.size(), 1u);
    EXPECT_EQ(ev[0].epoch, 3);
    EXPECT_EQ(ev[0].robust_before, 61);
    EXPECT_EQ(ev[0].drop, 41);
    EXPECT_TRUE(detect_co({1, 2, 3, 4, 5, 6}, 30, 3).empty());
    EXPECT_TRUE(detect_co({50, 52, 42, 51}, 30, 3).empty());
    EXPECT_TRUE(detect_co({50, 52, 32, 51}, 20, 3).empty());  // exactly 20 is not above 20
    EXPECT_THROW(detect_co({1}, 0, 3), ConfigError);
}

TEST(DetectCo, WindowLimitsLookBack) {
    // The 70 is four epochs back when 40 arrives: outside a window of 3.
    EXPECT_TRUE(detect_co({70, 60, 55, 50, 40}, 20, 3).empty());
    EXPECT_EQ(detect_co({70, 60, 55, 50, 40}, 20, 4).size(), 1u);
}

TEST(DetectCo, OneCollapseOneEvent) {
    auto ev = detect_co({40, 50, 55, 10, 5, 2, 1, 0}, 20, 3);
    ASSERT_EQ(ev.size(), 1u);
    EXPECT_EQ(ev[0].epoch, 3);
}

TEST(DetectCo, AppendingAfterEventsKeepsPrefix) {
    Rng rng(5);
    std::uniform_real_distribution<double> u(0, 100);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> h(12);
        for (auto& v : h) v = u(rng);
        auto base = detect_co(h, 20, 3);
        auto longer = h;
        for (int i = 0; i < 5; ++i) longer.push_back(u(rng));
        auto ext = detect_co(longer, 20, 3);
        ASSERT_GE(ext.size(), base.size());
        EXPECT_TRUE(std::equal(base.begin(), base.end(), ext.begin()));
    }
}

}  // namespace
}  // namespace fatlab
