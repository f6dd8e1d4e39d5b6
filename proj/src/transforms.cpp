#include "mpcs/transforms.hpp"

#include <algorithm>
#include <cmath>

#include "mpcs/kernels.hpp"

namespace mpcs {

TransformPolicy TransformPolicy::pretrain(int output_size) {
    TransformPolicy p;
    p.output_size = output_size;
    return p;
}

TransformPolicy TransformPolicy::finetune(int output_size) {
    TransformPolicy p;
    p.output_size = output_size;
    p.enable_crop = true;
    p.enable_affine = true;
    return p;
}

TransformPolicy TransformPolicy::identity(int output_size) {
    TransformPolicy p;
    p.output_size = output_size;
    p.enable_flips = false;
    p.enable_rotation = false;
    p.jitter = {1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0};
    return p;
}

AugmentationParams sample_params(const TransformPolicy& policy, Rng& rng) {
    AugmentationParams p;
    p.output_size = policy.output_size;
    if (policy.enable_flips) {
        p.hflip = rng.bernoulli(0.5);
        p.vflip = rng.bernoulli(0.5);
    }
    if (policy.enable_rotation) p.rotation_deg = rng.uniform_index(4) * 90;
    p.brightness = rng.uniform(policy.jitter.brightness_lo, policy.jitter.brightness_hi);
    p.contrast = rng.uniform(policy.jitter.contrast_lo, policy.jitter.contrast_hi);
    p.saturation = rng.uniform(policy.jitter.saturation_lo, policy.jitter.saturation_hi);
    p.hue_shift = policy.jitter.hue == 0.0 ? 0.0 : rng.uniform(-policy.jitter.hue, policy.jitter.hue);
    if (policy.enable_crop) {
        p.has_crop = true;
        p.crop_scale = rng.uniform(policy.crop_scale_lo, 1.0);
        p.crop_u = rng.uniform01();
        p.crop_v = rng.uniform01();
    }
    if (policy.enable_affine) {
        p.has_affine = true;
        p.shear_deg = rng.uniform(-policy.affine_shear_deg, policy.affine_shear_deg);
        p.translate_x = rng.uniform(-policy.affine_translate, policy.affine_translate);
        p.translate_y = rng.uniform(-policy.affine_translate, policy.affine_translate);
    }
    return p;
}

AugmentationParams::CropBox AugmentationParams::resolved_crop_box(int img_h, int img_w) const {
    const int side = std::max(1, static_cast<int>(std::lround(crop_scale * std::min(img_h, img_w))));
    const int w = std::min(side, img_w);
    const int h = std::min(side, img_h);
    const int x = static_cast<int>(std::lround(crop_u * (img_w - w)));
    const int y = static_cast<int>(std::lround(crop_v * (img_h - h)));
    return {x, y, w, h};
}

namespace {

ImageF crop_image(const ImageF& src, const AugmentationParams::CropBox& box) {
    if (box.w <= 0 || box.h <= 0) throw DataError("DegenerateImage: zero-area crop");
    ImageF out(box.h, box.w);
    for (int y = 0; y < box.h; ++y)
        for (int x = 0; x < box.w; ++x)
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = src.at(box.y + y, box.x + x, c);
    return out;
}

inline double sample_clamped(const ImageF& img, double y, double x, int c) {
    const int x0 = std::clamp(static_cast<int>(std::floor(x)), 0, img.w - 1);
    const int y0 = std::clamp(static_cast<int>(std::floor(y)), 0, img.h - 1);
    const int x1 = std::min(x0 + 1, img.w - 1);
    const int y1 = std::min(y0 + 1, img.h - 1);
    const double fx = std::clamp(x - x0, 0.0, 1.0);
    const double fy = std::clamp(y - y0, 0.0, 1.0);
    return img.at(y0, x0, c) * (1 - fy) * (1 - fx) + img.at(y0, x1, c) * (1 - fy) * fx +
           img.at(y1, x0, c) * fy * (1 - fx) + img.at(y1, x1, c) * fy * fx;
}

// Inverse-mapped shear + translation about the image center, bilinear with
// clamped borders.
ImageF affine_image(const ImageF& src, double shear_deg, double tx_frac, double ty_frac) {
    const double sh = std::tan(shear_deg * M_PI / 180.0);
    const double tx = tx_frac * src.w;
    const double ty = ty_frac * src.h;
    const double cx = (src.w - 1) / 2.0, cy = (src.h - 1) / 2.0;
    ImageF out(src.h, src.w);
    for (int y = 0; y < src.h; ++y)
        for (int x = 0; x < src.w; ++x) {
            const double yc = y - cy - ty;
            const double xc = x - cx - tx - sh * yc;  // inverse of x' = x + sh*y
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = sample_clamped(src, yc + cy, xc + cx, c);
        }
    return out;
}

ImageF flip_h(const ImageF& src) {
    ImageF out(src.h, src.w);
    for (int y = 0; y < src.h; ++y)
        for (int x = 0; x < src.w; ++x)
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = src.at(y, src.w - 1 - x, c);
    return out;
}

ImageF flip_v(const ImageF& src) {
    ImageF out(src.h, src.w);
    for (int y = 0; y < src.h; ++y)
        for (int x = 0; x < src.w; ++x)
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = src.at(src.h - 1 - y, x, c);
    return out;
}

ImageF rot90(const ImageF& src, int quarter_turns) {
    if (quarter_turns % 4 == 0) return src;
    ImageF out;
    switch (((quarter_turns % 4) + 4) % 4) {
        case 1: {  // 90 degrees counterclockwise
            out = ImageF(src.w, src.h);
            for (int y = 0; y < out.h; ++y)
                for (int x = 0; x < out.w; ++x)
                    for (int c = 0; c < 3; ++c) out.at(y, x, c) = src.at(x, src.w - 1 - y, c);
            break;
        }
        case 2: {
            out = ImageF(src.h, src.w);
            for (int y = 0; y < out.h; ++y)
                for (int x = 0; x < out.w; ++x)
                    for (int c = 0; c < 3; ++c) out.at(y, x, c) = src.at(src.h - 1 - y, src.w - 1 - x, c);
            break;
        }
        case 3: {
            out = ImageF(src.w, src.h);
            for (int y = 0; y < out.h; ++y)
                for (int x = 0; x < out.w; ++x)
                    for (int c = 0; c < 3; ++c) out.at(y, x, c) = src.at(src.h - 1 - x, y, c);
            break;
        }
    }
    return out;
}

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
    const double maxc = std::max({r, g, b});
    const double minc = std::min({r, g, b});
    v = maxc;
    const double d = maxc - minc;
    s = maxc <= 0.0 ? 0.0 : d / maxc;
    if (d <= 0.0) {
        h = 0.0;
        return;
    }
    if (maxc == r)
        h = std::fmod((g - b) / d, 6.0) / 6.0;
    else if (maxc == g)
        h = ((b - r) / d + 2.0) / 6.0;
    else
        h = ((r - g) / d + 4.0) / 6.0;
    if (h < 0.0) h += 1.0;
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
    h = h - std::floor(h);
    const double hh = h * 6.0;
    const int sector = std::min(5, static_cast<int>(hh));
    const double f = hh - sector;
    const double p = v * (1.0 - s);
    const double q = v * (1.0 - s * f);
    const double t = v * (1.0 - s * (1.0 - f));
    switch (sector) {
        case 0: r = v; g = t; b = p; break;
        case 1: r = q; g = v; b = p; break;
        case 2: r = p; g = v; b = t; break;
        case 3: r = p; g = q; b = v; break;
        case 4: r = t; g = p; b = v; break;
        default: r = v; g = p; b = q; break;
    }
}

void color_jitter(ImageF& img, const AugmentationParams& p) {
    // identity factors are skipped entirely so an identity params value is a
    // bit-exact no-op
    const bool do_b = p.brightness != 1.0;
    const bool do_c = p.contrast != 1.0;
    const bool do_s = p.saturation != 1.0;
    const bool do_h = p.hue_shift != 0.0;
    if (!do_b && !do_c && !do_s && !do_h) return;
    const size_t n = static_cast<size_t>(img.h) * img.w;
    for (size_t i = 0; i < n; ++i) {
        double r = img.px[3 * i], g = img.px[3 * i + 1], b = img.px[3 * i + 2];
        if (do_b) {
            r *= p.brightness;
            g *= p.brightness;
            b *= p.brightness;
        }
        if (do_c) {
            r = (r - 0.5) * p.contrast + 0.5;
            g = (g - 0.5) * p.contrast + 0.5;
            b = (b - 0.5) * p.contrast + 0.5;
        }
        if (do_s) {
            const double luma = 0.299 * r + 0.587 * g + 0.114 * b;
            r = luma + (r - luma) * p.saturation;
            g = luma + (g - luma) * p.saturation;
            b = luma + (b - luma) * p.saturation;
        }
        if (do_h) {
            double h, s, v;
            rgb_to_hsv(std::clamp(r, 0.0, 1.0), std::clamp(g, 0.0, 1.0), std::clamp(b, 0.0, 1.0),
                       h, s, v);
            hsv_to_rgb(h + p.hue_shift, s, v, r, g, b);
        }
        img.px[3 * i] = std::clamp(r, 0.0, 1.0);
        img.px[3 * i + 1] = std::clamp(g, 0.0, 1.0);
        img.px[3 * i + 2] = std::clamp(b, 0.0, 1.0);
    }
}

}  // namespace

// Pinned op order: crop, affine, flips, right-angle rotation, resize, color.
ImageF apply_transform(const AugmentationParams& params, const ImageF& view) {
    if (view.empty()) throw DataError("DegenerateImage: empty view");
    ImageF img = view;
    if (params.has_crop) img = crop_image(img, params.resolved_crop_box(img.h, img.w));
    if (params.has_affine)
        img = affine_image(img, params.shear_deg, params.translate_x, params.translate_y);
    if (params.hflip) img = flip_h(img);
    if (params.vflip) img = flip_v(img);
    if (params.rotation_deg != 0) img = rot90(img, params.rotation_deg / 90);
    img = kernels::resize_bilinear(img, params.output_size, params.output_size);
    color_jitter(img, params);
    return img;
}

ViewPair apply_uniform(const AugmentationParams& params, const ViewPair& pair) {
    ViewPair out;
    out.specimen_id = pair.specimen_id;
    out.mf1 = pair.mf1;
    out.mf2 = pair.mf2;
    out.view1 = apply_transform(params, pair.view1);
    out.view2 = apply_transform(params, pair.view2);
    return out;
}

}  // namespace mpcs
