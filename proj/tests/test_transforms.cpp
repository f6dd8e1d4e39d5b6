#include "doctest.h"
#include "mpcs/kernels.hpp"
#include "mpcs/transforms.hpp"
#include "oracles.hpp"

using namespace mpcs;

namespace {

ImageF random_view(int h, int w, Rng& rng) {
    ImageF img(h, w);
    for (double& v : img.px) v = rng.uniform01();
    return img;
}

ViewPair make_pair(const ImageF& a, const ImageF& b) {
    ViewPair p;
    p.specimen_id = "s";
    p.mf1 = Magnification::x40;
    p.mf2 = Magnification::x400;
    p.view1 = a;
    p.view2 = b;
    return p;
}

}  // namespace

TEST_CASE("parameter draws are deterministic under a seed") {
    const auto policy = TransformPolicy::pretrain(32);
    Rng a(0), b(0);
    for (int i = 0; i < 20; ++i) {
        const AugmentationParams pa = sample_params(policy, a);
        const AugmentationParams pb = sample_params(policy, b);
        CHECK(pa.hflip == pb.hflip);
        CHECK(pa.vflip == pb.vflip);
        CHECK(pa.rotation_deg == pb.rotation_deg);
        CHECK(pa.brightness == pb.brightness);
        CHECK(pa.contrast == pb.contrast);
        CHECK(pa.saturation == pb.saturation);
        CHECK(pa.hue_shift == pb.hue_shift);
    }
}

TEST_CASE("degenerate policy draws the identity transform") {
    auto policy = TransformPolicy::identity(24);
    Rng rng(5);
    const AugmentationParams p = sample_params(policy, rng);
    CHECK_FALSE(p.hflip);
    CHECK_FALSE(p.vflip);
    CHECK(p.rotation_deg == 0);
    CHECK(p.brightness == 1.0);
    CHECK(p.contrast == 1.0);
    CHECK(p.saturation == 1.0);
    CHECK(p.hue_shift == 0.0);
    CHECK_FALSE(p.has_crop);
    CHECK_FALSE(p.has_affine);

    Rng rng2(6);
    ImageF img = random_view(48, 48, rng2);
    const ImageF out = apply_transform(p, img);
    const ImageF resized = kernels::resize_bilinear(img, 24, 24);
    CHECK(out.px == resized.px);
}

TEST_CASE("rotation draw is uniform over the four right angles") {
    const auto policy = TransformPolicy::pretrain(16);
    Rng rng(7);
    std::vector<int> counts(4, 0);
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) counts[static_cast<size_t>(sample_params(policy, rng).rotation_deg / 90)]++;
    CHECK(oracle::chi_square_uniform(counts, draws) < oracle::kChi2Crit_df3);
    // 3-sigma band around 2500 as well
    for (int c : counts) CHECK(std::abs(c - 2500) < 3 * std::sqrt(10000 * 0.25 * 0.75) + 1);
}

TEST_CASE("uniform application equals the single-view reference path bit-exactly") {
    Rng rng(11);
    const auto pre = TransformPolicy::pretrain(24);
    const auto fin = TransformPolicy::finetune(24);
    for (int trial = 0; trial < 200; ++trial) {
        const auto& policy = trial % 2 ? fin : pre;
        const AugmentationParams params = sample_params(policy, rng);
        const ImageF v1 = random_view(31 + trial % 5, 29 + trial % 7, rng);
        const ImageF v2 = random_view(31 + trial % 5, 29 + trial % 7, rng);
        const ViewPair out = apply_uniform(params, make_pair(v1, v2));
        CHECK(out.view1.px == apply_transform(params, v1).px);
        CHECK(out.view2.px == apply_transform(params, v2).px);
        CHECK(out.mf1 == Magnification::x40);
        CHECK(out.mf2 == Magnification::x400);
    }
}

TEST_CASE("identical views remain identical after a uniform transform") {
    Rng rng(13);
    const auto policy = TransformPolicy::finetune(20);
    for (int trial = 0; trial < 50; ++trial) {
        const ImageF v = random_view(40, 40, rng);
        const AugmentationParams params = sample_params(policy, rng);
        const ViewPair out = apply_uniform(params, make_pair(v, v));
        CHECK(out.view1.px == out.view2.px);
    }
}

TEST_CASE("applying the same params twice is pure") {
    Rng rng(17);
    const auto policy = TransformPolicy::finetune(28);
    const AugmentationParams params = sample_params(policy, rng);
    const ImageF v = random_view(37, 41, rng);
    const ImageF once = apply_transform(params, v);
    const ImageF twice = apply_transform(params, v);
    CHECK(once.px == twice.px);
}

TEST_CASE("output shape is always square at output_size") {
    Rng rng(19);
    for (const int size : {16, 24, 48}) {
        auto policy = TransformPolicy::finetune(size);
        const AugmentationParams params = sample_params(policy, rng);
        const ImageF out = apply_transform(params, random_view(50, 34, rng));
        CHECK(out.h == size);
        CHECK(out.w == size);
        CHECK(out.px.size() == static_cast<size_t>(size) * size * 3);
    }
}

TEST_CASE("hflip params flip pixels") {
    AugmentationParams p;
    p.output_size = 2;
    p.hflip = true;
    ImageF img(2, 2);
    img.at(0, 0, 0) = 1.0;  // red pixel at (0,0)
    const ImageF out = apply_transform(p, img);
    CHECK(out.at(0, 1, 0) == doctest::Approx(1.0));
    CHECK(out.at(0, 0, 0) == doctest::Approx(0.0));
}

TEST_CASE("crop boxes stay inside the source image") {
    Rng rng(23);
    auto policy = TransformPolicy::finetune(16);
    for (int trial = 0; trial < 500; ++trial) {
        const AugmentationParams params = sample_params(policy, rng);
        const int h = 17 + rng.uniform_index(40), w = 17 + rng.uniform_index(40);
        const auto box = params.resolved_crop_box(h, w);
        CHECK(box.w >= 1);
        CHECK(box.h >= 1);
        CHECK(box.x >= 0);
        CHECK(box.y >= 0);
        CHECK(box.x + box.w <= w);
        CHECK(box.y + box.h <= h);
    }
}
