#include <gtest/gtest.h>

#include "ctsynth/discriminator.hpp"
#include "oracles.hpp"

using namespace ctsynth;
using torch::indexing::Slice;

namespace {

DiscriminatorConfig small(int64_t base) {
    DiscriminatorConfig c;
    c.base_resolution = base;
    c.base_channels = 4;
    c.beta_hidden = 8;
    return c;
}

MultiDiscriminator make(const DiscriminatorConfig &cfg, uint64_t seed = 1) {
    torch::manual_seed(seed);
    MultiDiscriminator d(cfg);
    init_gan_weights(*d);
    return d;
}

torch::Tensor random_maps(int64_t b, int64_t n, uint64_t seed) {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
    return onehot_batch(torch::randint(0, 4, {b, n, n}, gen));
}

// conv arithmetic for the 4x4 kernel, padding-1 schedule with strides 2,2,2,1 and a stride-1 head
int64_t grid_oracle(int64_t n) {
    for (int64_t s : {2, 2, 2, 1, 1}) n = (n + 2 - 4) / s + 1;
    return n;
}

int64_t receptive_field_oracle() {
    int64_t rf = 1, jump = 1;
    for (int64_t s : {2, 2, 2, 1, 1}) {
        rf += (4 - 1) * jump;
        jump *= s;
    }
    return rf;
}

}  // namespace

TEST(PatchGrid, FullScaleGridSizes) {
    EXPECT_EQ(grid_oracle(512), 62);
    EXPECT_EQ(grid_oracle(256), 30);
    EXPECT_EQ(patch_grid_size(512, 3), 62);
    EXPECT_EQ(patch_grid_size(256, 3), 30);
    for (int64_t n = 32; n <= 600; ++n) EXPECT_EQ(patch_grid_size(n, 3), grid_oracle(n)) << n;
}

TEST(PatchGrid, ReceptiveFieldIsSeventy) {
    EXPECT_EQ(receptive_field_oracle(), 70);
    EXPECT_EQ(patch_receptive_field(3), 70);
}

TEST(PatchGrid, ForwardAtFullScale) {
    auto d = make(small(512));
    torch::NoGradGuard ng;
    auto full = d->d_forward(random_maps(1, 512, 1), torch::rand({1, 1, 512, 512}), Resolution::Full);
    EXPECT_EQ(full.grid.sizes(), (std::vector<int64_t>{1, 1, 62, 62}));
    auto half = d->d_forward(random_maps(1, 256, 1), torch::rand({1, 1, 256, 256}), Resolution::Half);
    EXPECT_EQ(half.grid.sizes(), (std::vector<int64_t>{1, 1, 30, 30}));
    EXPECT_EQ(full.taps.size(), 3u);
    EXPECT_EQ(half.taps.size(), 3u);
}

TEST(DiscriminatorShapes, TraceMatchesArchitectureTable) {
    for (int64_t base : {64, 128}) {
        auto cfg = small(base);
        auto d = make(cfg);
        torch::NoGradGuard ng;
        for (auto which : {Resolution::Full, Resolution::Half}) {
            const auto n = d->expected_resolution(which);
            std::vector<LayerShape> trace;
            d->discriminators[static_cast<size_t>(which)]->forward(random_maps(1, n, 2), torch::rand({1, 1, n, n}),
                                                                  &trace);
            EXPECT_EQ(trace, discriminator_architecture(cfg, which)) << "base " << base;
            EXPECT_EQ(trace.back().height, grid_oracle(n));
        }
    }
}

TEST(DiscriminatorShapes, HalfGridEqualsFullGridOfHalfBase) {
    for (int64_t base : {64, 128, 256, 512}) {
        auto half = discriminator_architecture(small(base), Resolution::Half).back();
        auto full = discriminator_architecture(small(base / 2), Resolution::Full).back();
        EXPECT_EQ(half.height, full.height);
    }
}

TEST(DiscriminatorShapes, TapsAlwaysThree) {
    for (int64_t base : {64, 128}) {
        auto d = make(small(base));
        torch::NoGradGuard ng;
        auto outs = d->forward_all(random_maps(2, base, 1), torch::rand({2, 1, base, base}));
        ASSERT_EQ(outs.size(), 2u);
        for (const auto &o : outs) EXPECT_EQ(o.taps.size(), 3u);
        EXPECT_EQ(outs[1].grid.size(2), grid_oracle(base / 2));
    }
}

TEST(DiscriminatorShapes, ParameterCountIndependentOfResolution) {
    EXPECT_EQ(count_parameters(*make(small(64))), count_parameters(*make(small(512))));
}

TEST(DForward, RejectsWrongResolution) {
    auto d = make(small(64));
    EXPECT_THROW(d->d_forward(random_maps(1, 64, 1), torch::rand({1, 1, 64, 64}), Resolution::Half), ShapeError);
    EXPECT_THROW(d->d_forward(random_maps(1, 32, 1), torch::rand({1, 1, 64, 64}), Resolution::Full), ShapeError);
    EXPECT_THROW(d->d_forward(random_maps(1, 16, 1), torch::rand({1, 1, 16, 16}), Resolution::Quarter), ShapeError);
}

TEST(PatchLocality, SinglePixelOnlyMovesCoveringCells) {
    auto cfg = small(128);
    cfg.instance_norm = false;
    auto d = make(cfg, 4);
    d->to(torch::kDouble);
    torch::NoGradGuard ng;
    auto maps = random_maps(1, 128, 5).to(torch::kDouble);
    auto img = torch::rand({1, 1, 128, 128}, torch::kDouble);
    auto base_grid = d->d_forward(maps, img, Resolution::Full).grid[0][0];
    const int64_t g = base_grid.size(0);
    const int64_t offset = 1 + 2 + 4 + 8 + 8;  // accumulated padding in input pixels
    for (auto [py, px] : {std::pair<int64_t, int64_t>{0, 0}, {40, 77}, {64, 64}, {127, 3}, {100, 120}}) {
        auto pert = img.clone();
        pert[0][0][py][px] += 1.0;
        auto grid = d->d_forward(maps, pert, Resolution::Full).grid[0][0];
        auto changed = (grid != base_grid);
        for (int64_t i = 0; i < g; ++i) {
            for (int64_t j = 0; j < g; ++j) {
                const bool covers = py >= 8 * i - offset && py < 8 * i - offset + 70 && px >= 8 * j - offset &&
                                    px < 8 * j - offset + 70;
                EXPECT_EQ(changed[i][j].item<bool>(), covers) << "pixel " << py << "," << px << " cell " << i << "," << j;
            }
        }
    }
}

TEST(BetaNetTest, FixedBeta) {
    auto cfg = small(64);
    cfg.fixed_beta = 0.5;
    auto d = make(cfg);
    EXPECT_TRUE(d->beta_parameters().empty());
    auto b = d->beta_forward(torch::randn({4, 8, 8, 8}));
    EXPECT_TRUE(torch::equal(b, torch::full({4}, 0.5f)));
}

TEST(BetaNetTest, RangeOverRandomTaps) {
    auto d = make(small(64));
    torch::NoGradGuard ng;
    const auto ch = d->discriminators[0]->tap_channels(2);
    auto b = d->beta_forward(torch::randn({1000, ch, 8, 8}) * 5.0);
    EXPECT_GT(b.min().item<float>(), 0.0f);
    EXPECT_LT(b.max().item<float>(), 1.0f);
}

TEST(BetaNetTest, GradientMatchesFiniteDifferences) {
    torch::manual_seed(6);
    BetaNet net(8, 16);
    net->to(torch::kDouble);
    auto tap = torch::randn({1, 8, 8, 8}, torch::kDouble);
    auto params = net->parameters();
    auto loss = [&] { return net->forward(tap).sum(); };
    EXPECT_LT(oracle::gradient_check(loss, params, 1e-3), 1e-4);
    for (uint64_t s = 0; s < 3; ++s) EXPECT_LT(oracle::gradient_check_random(loss, params, 1e-3, s), 1e-4);
}

TEST(BetaNetTest, ReadsConfiguredTap) {
    auto cfg = small(64);
    cfg.beta_tap = 3;
    auto d = make(cfg);
    const auto ch = d->discriminators[0]->tap_channels(3);
    EXPECT_NO_THROW(d->beta_forward(torch::randn({1, ch, 4, 4})));
}

TEST(MultiDiscriminatorTest, AblationCounts) {
    auto one = small(64);
    one.n_discriminators = 1;
    auto d1 = make(one);
    EXPECT_EQ(d1->discriminators.size(), 1u);
    EXPECT_TRUE(d1->beta_parameters().empty());
    auto three = small(64);
    three.n_discriminators = 3;
    auto d3 = make(three);
    torch::NoGradGuard ng;
    auto outs = d3->forward_all(random_maps(1, 64, 1), torch::rand({1, 1, 64, 64}));
    ASSERT_EQ(outs.size(), 3u);
    EXPECT_EQ(outs[2].grid.size(2), patch_grid_size(16, 2));
    EXPECT_GE(outs[2].grid.size(2), 1);
}

TEST(MultiDiscriminatorTest, IndependentParameters) {
    auto d = make(small(64));
    auto p1 = d->discriminators[0]->parameters(), p2 = d->discriminators[1]->parameters();
    ASSERT_EQ(p1.size(), p2.size());
    EXPECT_FALSE(torch::equal(p1[0], p2[0]));
}

TEST(DiscriminatorConfigTest, Validation) {
    auto cfg = small(64);
    cfg.fixed_beta = -0.1;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = small(64);
    cfg.n_discriminators = 0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = small(16);
    EXPECT_THROW(cfg.validate(), ConfigError);
}
