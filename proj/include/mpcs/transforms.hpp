#pragma once

#include <optional>

#include "mpcs/image.hpp"
#include "mpcs/rng.hpp"
#include "mpcs/sampler.hpp"

namespace mpcs {

// One concrete draw of stochastic augmentation parameters. Applying the same
// params to the same image twice is bit-identical; a pair transformed
// uniformly shares one params value across both views.
struct AugmentationParams {
    bool hflip = false;
    bool vflip = false;
    int rotation_deg = 0;  // 0 / 90 / 180 / 270
    double brightness = 1.0;
    double contrast = 1.0;
    double saturation = 1.0;
    double hue_shift = 0.0;  // in [-0.1, 0.1] of a full hue turn

    // Crop stored scale-relative so one draw applies to any source size;
    // resolved to a pixel box against the image it is applied to.
    bool has_crop = false;
    double crop_scale = 1.0;  // side fraction of min(H, W)
    double crop_u = 0.0;      // left offset fraction of the slack
    double crop_v = 0.0;

    bool has_affine = false;
    double shear_deg = 0.0;     // in [-5, 5]
    double translate_x = 0.0;   // fraction of width, |.| <= 0.05
    double translate_y = 0.0;

    int output_size = 48;

    struct CropBox {
        int x, y, w, h;
    };
    CropBox resolved_crop_box(int img_h, int img_w) const;
};

struct JitterRanges {
    double brightness_lo = 0.8, brightness_hi = 1.2;
    double contrast_lo = 0.8, contrast_hi = 1.2;
    double saturation_lo = 0.8, saturation_hi = 1.2;
    double hue = 0.05;  // symmetric range
};

// Augmentation policy. Pre-training keeps geometry to flips and right-angle
// rotations (the views already differ by magnification); fine-tuning adds
// random crop and a small affine.
struct TransformPolicy {
    JitterRanges jitter;
    bool enable_flips = true;
    bool enable_rotation = true;
    bool enable_crop = false;
    double crop_scale_lo = 0.8;
    bool enable_affine = false;
    double affine_shear_deg = 5.0;
    double affine_translate = 0.05;
    int output_size = 48;

    static TransformPolicy pretrain(int output_size);
    static TransformPolicy finetune(int output_size);
    static TransformPolicy identity(int output_size);  // eval path: resize only
};

AugmentationParams sample_params(const TransformPolicy& policy, Rng& rng);

// Reference single-view path. apply_uniform is defined as this function
// applied to both views with one params value.
ImageF apply_transform(const AugmentationParams& params, const ImageF& view);

ViewPair apply_uniform(const AugmentationParams& params, const ViewPair& pair);

}  // namespace mpcs
