#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "ctsynth/core.hpp"
#include "ctsynth/image_io.hpp"

using namespace ctsynth;
namespace fs = std::filesystem;

namespace {

SegMap random_map(int64_t n, uint64_t seed) {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
    return SegMap(torch::randint(0, 4, {n, n}, gen).to(torch::kUInt8));
}

fs::path scratch(const std::string &name) {
    auto p = fs::temp_directory_path() / ("ctsynth_core_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST(HuWindow, Endpoints) {
    EXPECT_EQ(hu_to_unit(-600.0), 0.0);
    EXPECT_EQ(hu_to_unit(1500.0), 1.0);
    EXPECT_DOUBLE_EQ(hu_to_unit(450.0), 0.5);
    EXPECT_EQ(hu_to_unit(-1000.0), 0.0);
    EXPECT_EQ(hu_to_unit(3000.0), 1.0);
}

TEST(HuWindow, TensorMatchesScalar) {
    auto raw = torch::tensor({{-1000.0, -600.0}, {450.0, 2000.0}});
    auto img = hu_window(raw);
    EXPECT_FLOAT_EQ(img.at(0, 0), 0.0f);
    EXPECT_FLOAT_EQ(img.at(0, 1), 0.0f);
    EXPECT_FLOAT_EQ(img.at(1, 0), 0.5f);
    EXPECT_FLOAT_EQ(img.at(1, 1), 1.0f);
}

TEST(HuWindow, RejectsNonFinite) {
    EXPECT_THROW(hu_to_unit(std::nan("")), DataError);
    auto raw = torch::zeros({2, 2});
    raw[0][0] = std::numeric_limits<float>::infinity();
    EXPECT_THROW(hu_window(raw), DataError);
}

TEST(HuWindow, MonotoneAndIdempotent) {
    auto hu = torch::linspace(-2000, 3000, 1001, torch::kDouble).view({1, 1001});
    auto v = hu_window(hu.view({7, 143})).values().view(-1);
    EXPECT_TRUE((v.slice(0, 1) >= v.slice(0, 0, -1)).all().item<bool>());
    auto back_to_hu = v.to(torch::kDouble) * (kHuHigh - kHuLow) + kHuLow;
    auto again = hu_window(back_to_hu.view({7, 143})).values().view(-1);
    EXPECT_TRUE(torch::allclose(again, v, 0, 1e-6));
}

TEST(SegMapType, ValidatesLabelsAndShape) {
    EXPECT_THROW(SegMap(torch::full({4, 4}, 4, torch::kUInt8)), DataError);
    EXPECT_THROW(SegMap(torch::full({4, 4}, -1, torch::kInt)), DataError);
    EXPECT_THROW(SegMap(torch::zeros({4, 8}, torch::kUInt8)), ShapeError);
    EXPECT_THROW(SegMap(torch::full({4, 4}, 1.5)), DataError);
    EXPECT_NO_THROW(SegMap(torch::full({4, 4}, 3.0)));
}

TEST(CTImageType, ValidatesRange) {
    EXPECT_THROW(CTImage(torch::full({4, 4}, 1.5)), DataError);
    EXPECT_THROW(CTImage(torch::full({4, 4}, std::nan(""))), DataError);
    auto c = CTImage::clamped(torch::tensor({{-1.0, 2.0}, {0.25, 0.5}}));
    EXPECT_EQ(c.at(0, 0), 0.0f);
    EXPECT_EQ(c.at(0, 1), 1.0f);
}

TEST(PairedSampleType, RejectsMismatchedDims) {
    EXPECT_THROW(PairedSample("a", "p", SegMap::filled(8, Label::Lung), CTImage::filled(4, 4, 0.f)), ShapeError);
}

TEST(OneHot, SinglePixelEncodings) {
    auto m = SegMap(torch::tensor({{1, 3}, {0, 2}}, torch::kUInt8));
    auto p = encode_onehot(m).planes();
    EXPECT_TRUE(torch::equal(p.index({torch::indexing::Slice(), 0, 0}), torch::tensor({0.f, 1.f, 0.f, 0.f})));
    EXPECT_TRUE(torch::equal(p.index({torch::indexing::Slice(), 0, 1}), torch::tensor({0.f, 0.f, 0.f, 1.f})));
}

TEST(OneHot, AllBackground) {
    auto p = encode_onehot(SegMap::filled(8, Label::Background)).planes();
    EXPECT_TRUE(torch::equal(p[0], torch::ones({8, 8})));
    EXPECT_EQ(p.slice(0, 1).sum().item<float>(), 0.0f);
}

TEST(OneHot, RoundTripIsExact) {
    for (uint64_t s = 0; s < 10; ++s) {
        auto m = random_map(16, s);
        EXPECT_EQ(argmax_labels(encode_onehot(m)), m);
        auto p = encode_onehot(m).planes();
        EXPECT_TRUE(torch::equal(p.sum(0), torch::ones({16, 16})));
    }
}

TEST(OneHot, ConstructorRejectsNonOneHot) {
    EXPECT_THROW(OneHotMap(torch::zeros({4, 2, 2})), DataError);
    EXPECT_THROW(OneHotMap(torch::zeros({3, 2, 2})), ShapeError);
}

TEST(Masks, LungAndInfection) {
    auto m = SegMap(torch::tensor({{0, 1}, {2, 3}}, torch::kUInt8));
    EXPECT_TRUE(torch::equal(lung_mask(m), torch::tensor({{0, 1}, {1, 1}}, torch::kUInt8)));
    EXPECT_TRUE(torch::equal(infection_mask(m), torch::tensor({{0, 0}, {1, 1}}, torch::kUInt8)));
    EXPECT_TRUE(torch::equal(class_mask(m, Label::GroundGlass), torch::tensor({{0, 0}, {1, 0}}, torch::kUInt8)));
}

TEST(Masks, LungMaskCountsNonBackground) {
    auto m = random_map(32, 3);
    EXPECT_EQ(lung_mask(m).sum().item<int64_t>(), (m.labels() > 0).sum().item<int64_t>());
}

TEST(HalfResolution, ConstantImage) {
    auto h = half_resolution(CTImage::filled(4, 4, 0.3f));
    EXPECT_EQ(h.width(), 2);
    EXPECT_TRUE(torch::allclose(h.values(), torch::full({2, 2}, 0.3f)));
}

TEST(HalfResolution, BlockAverage) {
    auto img = CTImage(torch::tensor({{0.f, 0.f}, {1.f, 1.f}}));
    EXPECT_FLOAT_EQ(half_resolution(img).at(0, 0), 0.5f);
}

TEST(HalfResolution, SingleClassMapStaysSingleClass) {
    auto oh = encode_onehot(SegMap::filled(8, Label::Consolidation));
    auto h = half_resolution(oh);
    EXPECT_EQ(h.width(), 4);
    EXPECT_EQ(argmax_labels(h), SegMap::filled(4, Label::Consolidation));
}

TEST(HalfResolution, TiesGoToHigherClass) {
    auto m = SegMap(torch::tensor({{1, 1}, {2, 2}}, torch::kUInt8));
    EXPECT_EQ(argmax_labels(half_resolution(encode_onehot(m))).at(0, 0), 2);
    auto q = SegMap(torch::tensor({{0, 1}, {2, 3}}, torch::kUInt8));
    EXPECT_EQ(argmax_labels(half_resolution(encode_onehot(q))).at(0, 0), 3);
    auto r = SegMap(torch::tensor({{1, 1}, {1, 3}}, torch::kUInt8));
    EXPECT_EQ(argmax_labels(half_resolution(encode_onehot(r))).at(0, 0), 1);
}

TEST(HalfResolution, TwiceEqualsQuarterPooling) {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(9);
    auto img = CTImage(torch::rand({16, 16}, gen));
    auto twice = half_resolution(half_resolution(img));
    auto direct = torch::nn::functional::avg_pool2d(img.values().view({1, 1, 16, 16}),
                                                    torch::nn::functional::AvgPool2dFuncOptions(4).stride(4))
                      .view({4, 4});
    EXPECT_TRUE(torch::allclose(twice.values(), direct, 0, 1e-6));
}

TEST(HalfResolution, OddDimsRejected) {
    EXPECT_THROW(half_resolution(CTImage::filled(5, 5, 0.f)), ShapeError);
    EXPECT_THROW(half_resolution_onehot(torch::zeros({1, 4, 3, 3})), ShapeError);
}

TEST(Resize, NearestMapAndBilinearImage) {
    auto m = random_map(8, 1);
    auto up = resize_map(m, 16);
    EXPECT_EQ(up.width(), 16);
    EXPECT_EQ(resize_map(up, 8), m);
    auto img = resize_image(CTImage::filled(8, 8, 0.4f), 32);
    EXPECT_TRUE(torch::allclose(img.values(), torch::full({32, 32}, 0.4f)));
}

TEST(Batching, StacksSamples) {
    std::vector<PairedSample> s;
    for (int i = 0; i < 3; ++i) {
        s.emplace_back("id" + std::to_string(i), "p", random_map(8, i), CTImage::filled(8, 8, 0.1f * i));
    }
    auto maps = stack_onehot(s);
    auto imgs = stack_images(s);
    EXPECT_EQ(maps.sizes(), (std::vector<int64_t>{3, 4, 8, 8}));
    EXPECT_EQ(imgs.sizes(), (std::vector<int64_t>{3, 1, 8, 8}));
    EXPECT_TRUE(torch::equal(maps[1], encode_onehot(s[1].map).planes()));
}

TEST(ImageIo, SixteenBitRoundTrip) {
    auto dir = scratch("png16");
    auto gen = at::make_generator<at::CPUGeneratorImpl>(4);
    auto img = CTImage((torch::randint(0, 65536, {16, 16}, gen).to(torch::kDouble) / 65535.0).to(torch::kFloat));
    write_image_png(dir / "a.png", img, 16);
    auto back = read_image_png(dir / "a.png");
    EXPECT_TRUE(torch::allclose(back.values(), img.values(), 0, 1e-7));
}

TEST(ImageIo, EightBitQuantization) {
    auto dir = scratch("png8");
    auto img = CTImage(torch::tensor({{0.0f, 1.0f}, {0.5f, 0.25f}}));
    write_image_png(dir / "a.png", img, 8);
    auto back = read_image_png(dir / "a.png");
    EXPECT_LE((back.values() - img.values()).abs().max().item<float>(), 0.5f / 255.0f + 1e-7f);
}

TEST(ImageIo, MapRoundTrip) {
    auto dir = scratch("map");
    auto m = random_map(32, 6);
    write_map_png(dir / "m.png", m);
    EXPECT_EQ(read_map_png(dir / "m.png"), m);
}

TEST(ImageIo, MissingFileIsDataError) { EXPECT_THROW(read_image_png("/nonexistent/x.png"), DataError); }

TEST(Manifest, RoundTripAndRelativePaths) {
    auto dir = scratch("manifest");
    std::vector<ManifestEntry> rows{{"a", "maps/a.png", "imgs/a.png", "p1"}, {"b", "maps/b.png", "imgs/b.png", "p2"}};
    write_manifest(dir / "list.txt", rows);
    auto back = read_manifest(dir / "list.txt");
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[1].id, "b");
    EXPECT_EQ(back[1].patient_tag, "p2");
    EXPECT_EQ(back[0].map_path, dir / "maps/a.png");
}

TEST(Manifest, SkipsCommentsAndBlankLines) {
    auto dir = scratch("manifest2");
    {
        std::ofstream f(dir / "m.txt");
        f << "# header\n\nx, m.png, i.png, t\n";
    }
    auto rows = read_manifest(dir / "m.txt");
    ASSERT_EQ(rows.size(), 1u);
    EXPECT_EQ(rows[0].id, "x");
}

TEST(Manifest, LoadPairReadsBothFiles) {
    auto dir = scratch("pair");
    auto m = random_map(16, 2);
    write_map_png(dir / "m.png", m);
    write_image_png(dir / "i.png", CTImage::filled(16, 16, 0.5f));
    auto s = load_pair({"q", dir / "m.png", dir / "i.png", "tag"});
    EXPECT_EQ(s.map, m);
    EXPECT_EQ(s.id, "q");
}
