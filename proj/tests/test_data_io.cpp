#include <gtest/gtest.h>
#include <torch/torch.h>

#include <set>

#include "gifd/dataset.hpp"
#include "gifd/image_io.hpp"
#include "gifd/style.hpp"
#include "test_util.hpp"

namespace gifd {
namespace {

using testing::TempDir;

DatasetSpec small_spec(int64_t res = 16) {
    DatasetSpec s;
    s.resolution = res;
    s.gan_train_size = 40;
    s.fl_eval_size = 20;
    return s;
}

TEST(Builtin, DeterministicAcrossLoads) {
    auto a = load_dataset(small_spec(), Split::FlEval);
    auto b = load_dataset(small_spec(), Split::FlEval);
    EXPECT_EQ(a.digest(), b.digest());
    EXPECT_EQ(a.size(), 20);
    EXPECT_EQ(a.images.sizes(), (std::vector<int64_t>{20, 3, 16, 16}));
    EXPECT_GE(a.images.min().item<float>(), 0.0F);
    EXPECT_LE(a.images.max().item<float>(), 1.0F);
}

TEST(Builtin, SplitsAreDisjointAndBalanced) {
    auto train = load_dataset(small_spec(), Split::GanTrain);
    auto eval = load_dataset(small_spec(), Split::FlEval);
    std::set<std::string> ids(train.ids.begin(), train.ids.end());
    for (const auto& id : eval.ids) EXPECT_EQ(ids.count(id), 0u) << id;
    EXPECT_EQ(ids.size(), train.ids.size());
    auto counts = torch::bincount(eval.labels, {}, 10);
    EXPECT_TRUE(torch::equal(counts, torch::full({10}, 2, torch::kInt64)));
}

TEST(Builtin, ImagesDependOnlyOnTheirId) {
    // Changing the train size shifts the eval ids but not how an id renders.
    auto spec = small_spec();
    auto eval = load_dataset(spec, Split::FlEval);  // ids 40..59
    spec.gan_train_size = 60;
    auto train = load_dataset(spec, Split::GanTrain);  // ids 0..59
    EXPECT_TRUE(torch::equal(eval.images[0], train.images[40]));
    EXPECT_EQ(eval.ids[0], train.ids[40]);
}

TEST(Builtin, GrayscaleAndErrors) {
    auto spec = small_spec(8);
    spec.channels = 1;
    EXPECT_EQ(load_dataset(spec, Split::FlEval).images.size(1), 1);
    spec.channels = 2;
    EXPECT_THROW(load_dataset(spec, Split::FlEval), ConfigError);
    auto bad = small_spec();
    bad.num_classes = 5;
    EXPECT_THROW(load_dataset(bad, Split::FlEval), ConfigError);
    bad = small_spec();
    bad.source = "builtin:nope";
    EXPECT_THROW(load_dataset(bad, Split::FlEval), ConfigError);
    EXPECT_EQ(split_from_string("fl-eval"), Split::FlEval);
    EXPECT_THROW(split_from_string("test"), ConfigError);
}

TEST(Builtin, SubsetKeepsIdsAndLabels) {
    auto eval = load_dataset(small_spec(), Split::FlEval);
    auto sub = eval.subset({3, 7});
    EXPECT_EQ(sub.ids, (std::vector<std::string>{eval.ids[3], eval.ids[7]}));
    EXPECT_TRUE(torch::equal(sub.images[1], eval.images[7]));
    EXPECT_EQ(sub.labels[0].item<int64_t>(), eval.labels[3].item<int64_t>());
}

TEST(Folder, LoadsClassFoldersWithDeterministicSplit) {
    TempDir dir;
    const std::vector<std::string> classes{"a", "b"};
    for (std::size_t c = 0; c < classes.size(); ++c) {
        std::filesystem::create_directories(dir / classes[c]);
        for (int i = 0; i < 10; ++i) {
            auto img = torch::full({3, 8, 8}, static_cast<float>(c * 10 + i) / 255.0F);
            save_png(dir / classes[c] / ("img" + std::to_string(i) + ".png"), img);
        }
    }
    DatasetSpec spec;
    spec.source = dir.path().string();
    spec.resolution = 8;
    spec.num_classes = 2;
    auto train = load_dataset(spec, Split::GanTrain);
    auto eval = load_dataset(spec, Split::FlEval);
    EXPECT_EQ(train.size(), 16);
    EXPECT_EQ(eval.size(), 4);
    EXPECT_EQ(eval.class_names, classes);
    // Sorted names: img0 img1 img2 img3 img4 img5 ...; every fifth goes to eval.
    EXPECT_EQ(eval.ids[0], "a/img4.png");
    EXPECT_EQ(eval.ids[1], "a/img9.png");
    EXPECT_EQ(eval.labels[2].item<int64_t>(), 1);
    EXPECT_NEAR(eval.images[0][0][0][0].item<float>(), 4.0F / 255.0F, 1e-7);
    EXPECT_EQ(load_dataset(spec, Split::FlEval).digest(), eval.digest());

    spec.num_classes = 3;
    EXPECT_THROW(load_dataset(spec, Split::FlEval), ConfigError);
    spec.num_classes = 2;
    spec.resolution = 16;
    EXPECT_THROW(load_dataset(spec, Split::FlEval), ConfigError);
    spec.source = (dir / "missing").string();
    EXPECT_THROW(load_dataset(spec, Split::FlEval), RuntimeFailure);
}

TEST(Png, RoundTripWithinQuantization) {
    TempDir dir;
    auto img = testing::random_images(1, 3, 9, 4)[0];
    save_png(dir / "x.png", img);
    auto back = load_png(dir / "x.png");
    EXPECT_EQ(back.sizes(), img.sizes());
    EXPECT_LE((back - img).abs().max().item<float>(), 0.5F / 255.0F + 1e-6F);
    // Exactly representable values survive bit-exactly.
    auto q = torch::round(img * 255.0) / 255.0;
    save_png(dir / "q.png", q);
    EXPECT_TRUE(torch::allclose(load_png(dir / "q.png"), q, 0.0, 1e-7));
    auto gray = torch::rand({1, 5, 7});
    save_png(dir / "g.png", gray);
    EXPECT_EQ(load_png(dir / "g.png", 1).sizes(), (std::vector<int64_t>{1, 5, 7}));
    EXPECT_THROW(save_png(dir / "bad.png", torch::rand({2, 4, 4})), InputError);
    EXPECT_THROW(load_png(dir / "missing.png"), RuntimeFailure);
}

TEST(Png, BatchNamingAndGrid) {
    TempDir dir;
    auto paths = save_images(torch::rand({3, 3, 4, 4}), dir / "imgs", "recon_t000");
    ASSERT_EQ(paths.size(), 3u);
    EXPECT_EQ(paths[2].filename(), "recon_t000_002.png");
    for (const auto& p : paths) EXPECT_TRUE(std::filesystem::exists(p));
    auto grid = image_grid(torch::zeros({5, 3, 4, 4}), 2);
    EXPECT_EQ(grid.sizes(), (std::vector<int64_t>{3, 3 * 6, 2 * 6}));
}

TEST(Style, IdentityAndInvert) {
    auto x = testing::random_images(2, 3, 8, 1);
    StyleTransform s;
    EXPECT_TRUE(torch::equal(apply_style(x, s), x));
    s.variant = StyleTransform::Variant::Invert;
    auto inv = apply_style(x, s);
    EXPECT_TRUE(torch::allclose(apply_style(inv, s), x, 0.0, 1e-6));
}

TEST(Style, PosterizeUsesRequestedLevels) {
    auto x = testing::random_images(2, 3, 8, 2);
    StyleTransform s;
    s.variant = StyleTransform::Variant::Posterize;
    s.levels = 4;
    auto p = apply_style(x, s);
    auto scaled = p * 3.0;
    EXPECT_TRUE(torch::allclose(scaled, torch::round(scaled), 0.0, 1e-5));
    EXPECT_LE((p - x).abs().max().item<float>(), 1.0F / 6.0F + 1e-6F);
    s.levels = 1;
    EXPECT_THROW(apply_style(x, s), ConfigError);
}

TEST(Style, HueRotationPreservesGrayAndComposes) {
    StyleTransform s;
    s.variant = StyleTransform::Variant::HueRotate;
    s.degrees = 120.0;
    auto gray = torch::full({1, 3, 4, 4}, 0.4);
    EXPECT_TRUE(torch::allclose(apply_style(gray, s), gray, 0.0, 1e-6));
    // 120 degrees about the gray axis cycles the primaries: red -> green.
    auto red = torch::zeros({1, 3, 2, 2});
    red.select(1, 0).fill_(1.0);
    auto out = apply_style(red, s);
    EXPECT_NEAR(out[0][1][0][0].item<float>(), 1.0F, 1e-5);
    EXPECT_NEAR(out[0][0][0][0].item<float>(), 0.0F, 1e-5);
    s.degrees = 360.0;
    auto x = testing::random_images(1, 3, 4, 3);
    EXPECT_TRUE(torch::allclose(apply_style(x, s), x, 0.0, 1e-5));
}

TEST(Style, EdgeSketchIsWhiteOnFlatImagesAndInRange) {
    StyleTransform s;
    s.variant = StyleTransform::Variant::EdgeSketch;
    auto flat = torch::full({1, 3, 6, 6}, 0.3);
    EXPECT_TRUE(torch::allclose(apply_style(flat, s), torch::ones({1, 3, 6, 6})));
    auto x = testing::random_images(2, 3, 8, 5);
    auto e = apply_style(x, s);
    EXPECT_EQ(e.sizes(), x.sizes());
    EXPECT_GE(e.min().item<float>(), 0.0F);
    EXPECT_LE(e.max().item<float>(), 1.0F);
    EXPECT_EQ(style_variant_from_string("edge-sketch"), StyleTransform::Variant::EdgeSketch);
    EXPECT_THROW(style_variant_from_string("sepia"), ConfigError);
}

}  // namespace
}  // namespace gifd
