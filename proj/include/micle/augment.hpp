#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "micle/io.hpp"

namespace micle {

// One stochastic transform in a pipeline. Parameter ranges are sampled per
// call from the per-sample RNG; every op draws a fixed number of values so a
// seed maps to one parameter vector.
struct TransformSpec {
    enum class Kind {
        random_resized_crop,
        hflip,
        vflip,
        rotate,
        color_jitter,
        brightness_additive,
        contrast_multiplicative,
        gaussian_blur,
    };
    Kind kind;
    double p = 1.0;  // application probability (gates flips, blur, jitter)

    // random_resized_crop
    double scale_lo = 0.08, scale_hi = 1.0;
    double ratio_lo = 3.0 / 4.0, ratio_hi = 4.0 / 3.0;
    // rotate
    double max_deg = 0.0;
    // color_jitter: SimCLR convention, brightness/contrast/saturation factors
    // in [1 - 0.8s, 1 + 0.8s], hue shift in [-0.2s, 0.2s] of the wheel
    double strength = 1.0;
    // brightness_additive / contrast_multiplicative
    double delta_lo = -0.2, delta_hi = 0.2;
    // gaussian_blur
    double sigma_lo = 0.1, sigma_hi = 2.0;
};

std::string transform_kind_name(TransformSpec::Kind k);

struct AugmentPipeline {
    std::string preset;  // derm_pretrain | xray_pretrain | micle_partial | finetune | custom
    std::vector<TransformSpec> ops;
    std::size_t out_height = 32;
    std::size_t out_width = 32;
};

// Preset compositions:
//   derm_pretrain : crop, color jitter (strength 1.0), blur, h+v flips
//   xray_pretrain : crop, color jitter (strength 0.5), rotate 45, hflip (no blur)
//   micle_partial : crop only
//   finetune      : color jitter (0.5), crop, blur, rotate 20, h+v flips
AugmentPipeline preset_build(const std::string& name, std::size_t out_h, std::size_t out_w);

// Applies the pipeline with randomness drawn solely from sample_seed.
// Output is C x out_height x out_width, clipped to [0,1]. When the pipeline
// contains no crop the image is resized to the output size at the end.
Image augment_apply(const AugmentPipeline& pipeline, const Image& image,
                    std::uint64_t sample_seed);

// The full parameter vector the pipeline would draw for this seed (gate draws
// included). Used by seed-sensitivity property tests.
std::vector<double> augment_sample_params(const AugmentPipeline& pipeline, const Image& image,
                                          std::uint64_t sample_seed);

// ---- primitives (deterministic; parameters supplied by the caller) ----
Image resize_bilinear(const Image& img, std::size_t out_h, std::size_t out_w);
Image crop_resize(const Image& img, std::size_t top, std::size_t left, std::size_t h,
                  std::size_t w, std::size_t out_h, std::size_t out_w);
Image flip_horizontal(const Image& img);
Image flip_vertical(const Image& img);
Image rotate_bilinear(const Image& img, double degrees);  // zero fill outside
void adjust_brightness(Image& img, double factor);
void adjust_contrast(Image& img, double factor);    // about the per-channel mean
void adjust_saturation(Image& img, double factor);  // blend with luma gray
void shift_hue(Image& img, double amount);          // amount in wheel fraction [-0.5, 0.5]
void brightness_additive(Image& img, double delta);
// Appendix-style contrast term: multiply deviation from the per-channel mean
// by (1 + s).
void contrast_multiplicative(Image& img, double s);
Image gaussian_blur(const Image& img, double sigma, std::size_t ksize);
void clip01(Image& img);

}  // namespace micle
