#include "micle/augment.hpp"

#include <algorithm>
#include <cmath>

#include "micle/rng.hpp"

namespace micle {

namespace {

constexpr double kPi = 3.14159265358979323846;

float sample_bilinear(const Image& img, std::size_t c, double sy, double sx) {
    const double cy = std::clamp(sy, 0.0, static_cast<double>(img.height - 1));
    const double cx = std::clamp(sx, 0.0, static_cast<double>(img.width - 1));
    const std::size_t y0 = static_cast<std::size_t>(cy);
    const std::size_t x0 = static_cast<std::size_t>(cx);
    const std::size_t y1 = std::min(y0 + 1, img.height - 1);
    const std::size_t x1 = std::min(x0 + 1, img.width - 1);
    const double fy = cy - static_cast<double>(y0);
    const double fx = cx - static_cast<double>(x0);
    const double v00 = img.at(c, y0, x0), v01 = img.at(c, y0, x1);
    const double v10 = img.at(c, y1, x0), v11 = img.at(c, y1, x1);
    return static_cast<float>((v00 * (1 - fx) + v01 * fx) * (1 - fy) +
                              (v10 * (1 - fx) + v11 * fx) * fy);
}

Image like(const Image& img, std::size_t h, std::size_t w) {
    Image out;
    out.channels = img.channels;
    out.height = h;
    out.width = w;
    out.data.resize(img.channels * h * w);
    return out;
}

void luma(const Image& img, std::vector<float>& gray) {
    gray.resize(img.height * img.width);
    if (img.channels >= 3) {
        for (std::size_t i = 0; i < gray.size(); ++i) {
            gray[i] = 0.299f * img.data[i] + 0.587f * img.data[img.height * img.width + i] +
                      0.114f * img.data[2 * img.height * img.width + i];
        }
    } else {
        std::copy(img.data.begin(), img.data.begin() + gray.size(), gray.begin());
    }
}

}  // namespace

std::string transform_kind_name(TransformSpec::Kind k) {
    switch (k) {
        case TransformSpec::Kind::random_resized_crop: return "random_resized_crop";
        case TransformSpec::Kind::hflip: return "hflip";
        case TransformSpec::Kind::vflip: return "vflip";
        case TransformSpec::Kind::rotate: return "rotate";
        case TransformSpec::Kind::color_jitter: return "color_jitter";
        case TransformSpec::Kind::brightness_additive: return "brightness_additive";
        case TransformSpec::Kind::contrast_multiplicative: return "contrast_multiplicative";
        case TransformSpec::Kind::gaussian_blur: return "gaussian_blur";
    }
    return "unknown";
}

Image resize_bilinear(const Image& img, std::size_t out_h, std::size_t out_w) {
    Image out = like(img, out_h, out_w);
    const double sy = static_cast<double>(img.height) / static_cast<double>(out_h);
    const double sx = static_cast<double>(img.width) / static_cast<double>(out_w);
    for (std::size_t c = 0; c < img.channels; ++c) {
        for (std::size_t y = 0; y < out_h; ++y) {
            for (std::size_t x = 0; x < out_w; ++x) {
                out.at(c, y, x) = sample_bilinear(img, c, (y + 0.5) * sy - 0.5,
                                                  (x + 0.5) * sx - 0.5);
            }
        }
    }
    return out;
}

Image crop_resize(const Image& img, std::size_t top, std::size_t left, std::size_t h,
                  std::size_t w, std::size_t out_h, std::size_t out_w) {
    check_dim(top + h <= img.height && left + w <= img.width && h > 0 && w > 0,
              "crop window outside image");
    Image out = like(img, out_h, out_w);
    const double sy = static_cast<double>(h) / static_cast<double>(out_h);
    const double sx = static_cast<double>(w) / static_cast<double>(out_w);
    for (std::size_t c = 0; c < img.channels; ++c) {
        for (std::size_t y = 0; y < out_h; ++y) {
            for (std::size_t x = 0; x < out_w; ++x) {
                out.at(c, y, x) = sample_bilinear(img, c, top + (y + 0.5) * sy - 0.5,
                                                  left + (x + 0.5) * sx - 0.5);
            }
        }
    }
    return out;
}

Image flip_horizontal(const Image& img) {
    Image out = like(img, img.height, img.width);
    for (std::size_t c = 0; c < img.channels; ++c) {
        for (std::size_t y = 0; y < img.height; ++y) {
            for (std::size_t x = 0; x < img.width; ++x) {
                out.at(c, y, x) = img.at(c, y, img.width - 1 - x);
            }
        }
    }
    return out;
}

Image flip_vertical(const Image& img) {
    Image out = like(img, img.height, img.width);
    for (std::size_t c = 0; c < img.channels; ++c) {
        for (std::size_t y = 0; y < img.height; ++y) {
            for (std::size_t x = 0; x < img.width; ++x) {
                out.at(c, y, x) = img.at(c, img.height - 1 - y, x);
            }
        }
    }
    return out;
}

Image rotate_bilinear(const Image& img, double degrees) {
    if (degrees == 0.0) return img;
    Image out = like(img, img.height, img.width);
    const double a = degrees * kPi / 180.0;
    const double ca = std::cos(a), sa = std::sin(a);
    const double cy = (static_cast<double>(img.height) - 1.0) / 2.0;
    const double cx = (static_cast<double>(img.width) - 1.0) / 2.0;
    for (std::size_t c = 0; c < img.channels; ++c) {
        for (std::size_t y = 0; y < img.height; ++y) {
            for (std::size_t x = 0; x < img.width; ++x) {
                const double dy = static_cast<double>(y) - cy;
                const double dx = static_cast<double>(x) - cx;
                const double sy = cy + ca * dy - sa * dx;
                const double sx = cx + sa * dy + ca * dx;
                if (sy < 0 || sy > img.height - 1 || sx < 0 || sx > img.width - 1) {
                    out.at(c, y, x) = 0.0f;  // zero fill
                } else {
                    out.at(c, y, x) = sample_bilinear(img, c, sy, sx);
                }
            }
        }
    }
    return out;
}

void adjust_brightness(Image& img, double factor) {
    for (auto& v : img.data) v = static_cast<float>(v * factor);
}

void adjust_contrast(Image& img, double factor) {
    const std::size_t plane = img.height * img.width;
    for (std::size_t c = 0; c < img.channels; ++c) {
        float* p = img.data.data() + c * plane;
        double mean = 0.0;
        for (std::size_t i = 0; i < plane; ++i) mean += p[i];
        mean /= static_cast<double>(plane);
        for (std::size_t i = 0; i < plane; ++i) {
            p[i] = static_cast<float>(mean + factor * (p[i] - mean));
        }
    }
}

void adjust_saturation(Image& img, double factor) {
    if (img.channels < 3) return;
    std::vector<float> gray;
    luma(img, gray);
    const std::size_t plane = img.height * img.width;
    for (std::size_t c = 0; c < 3; ++c) {
        float* p = img.data.data() + c * plane;
        for (std::size_t i = 0; i < plane; ++i) {
            p[i] = static_cast<float>(gray[i] + factor * (p[i] - gray[i]));
        }
    }
}

void shift_hue(Image& img, double amount) {
    if (img.channels < 3 || amount == 0.0) return;
    const std::size_t plane = img.height * img.width;
    float* r = img.data.data();
    float* g = img.data.data() + plane;
    float* b = img.data.data() + 2 * plane;
    for (std::size_t i = 0; i < plane; ++i) {
        // RGB -> HSV, rotate hue, back. Values may sit outside [0,1] mid-pipeline;
        // work on the clamped value and add back the residual.
        const float rv = r[i], gv = g[i], bv = b[i];
        const float mx = std::max({rv, gv, bv});
        const float mn = std::min({rv, gv, bv});
        const float delta = mx - mn;
        double h = 0.0;
        if (delta > 0) {
            if (mx == rv) h = std::fmod((gv - bv) / delta, 6.0);
            else if (mx == gv) h = (bv - rv) / delta + 2.0;
            else h = (rv - gv) / delta + 4.0;
            h /= 6.0;
            if (h < 0) h += 1.0;
        }
        h = h + amount;
        h -= std::floor(h);
        const double c = delta;
        const double hh = h * 6.0;
        const double xval = c * (1.0 - std::abs(std::fmod(hh, 2.0) - 1.0));
        double rr = 0, gg = 0, bb = 0;
        switch (static_cast<int>(hh) % 6) {
            case 0: rr = c; gg = xval; break;
            case 1: rr = xval; gg = c; break;
            case 2: gg = c; bb = xval; break;
            case 3: gg = xval; bb = c; break;
            case 4: rr = xval; bb = c; break;
            default: rr = c; bb = xval; break;
        }
        r[i] = static_cast<float>(rr + mn);
        g[i] = static_cast<float>(gg + mn);
        b[i] = static_cast<float>(bb + mn);
    }
}

void brightness_additive(Image& img, double delta) {
    for (auto& v : img.data) v = static_cast<float>(v + delta);
}

void contrast_multiplicative(Image& img, double s) {
    adjust_contrast(img, 1.0 + s);
}

Image gaussian_blur(const Image& img, double sigma, std::size_t ksize) {
    check_dim(ksize % 2 == 1 && ksize >= 1, "blur kernel size must be odd");
    if (ksize == 1) return img;
    const std::size_t half = ksize / 2;
    std::vector<double> kernel(ksize);
    double ksum = 0.0;
    for (std::size_t i = 0; i < ksize; ++i) {
        const double d = static_cast<double>(i) - static_cast<double>(half);
        kernel[i] = std::exp(-(d * d) / (2.0 * sigma * sigma));
        ksum += kernel[i];
    }
    for (auto& k : kernel) k /= ksum;

    // Separable convolution with clamped borders.
    Image tmp = like(img, img.height, img.width);
    for (std::size_t c = 0; c < img.channels; ++c) {
        for (std::size_t y = 0; y < img.height; ++y) {
            for (std::size_t x = 0; x < img.width; ++x) {
                double s0 = 0.0;
                for (std::size_t k = 0; k < ksize; ++k) {
                    const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(x + k) -
                                              static_cast<std::ptrdiff_t>(half);
                    const std::size_t xc = static_cast<std::size_t>(
                        std::clamp<std::ptrdiff_t>(xx, 0, static_cast<std::ptrdiff_t>(img.width) - 1));
                    s0 += kernel[k] * img.at(c, y, xc);
                }
                tmp.at(c, y, x) = static_cast<float>(s0);
            }
        }
    }
    Image out = like(img, img.height, img.width);
    for (std::size_t c = 0; c < img.channels; ++c) {
        for (std::size_t y = 0; y < img.height; ++y) {
            for (std::size_t x = 0; x < img.width; ++x) {
                double s0 = 0.0;
                for (std::size_t k = 0; k < ksize; ++k) {
                    const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(y + k) -
                                              static_cast<std::ptrdiff_t>(half);
                    const std::size_t yc = static_cast<std::size_t>(
                        std::clamp<std::ptrdiff_t>(yy, 0, static_cast<std::ptrdiff_t>(img.height) - 1));
                    s0 += kernel[k] * tmp.at(c, yc, x);
                }
                out.at(c, y, x) = static_cast<float>(s0);
            }
        }
    }
    return out;
}

void clip01(Image& img) {
    for (auto& v : img.data) v = std::clamp(v, 0.0f, 1.0f);
}

AugmentPipeline preset_build(const std::string& name, std::size_t out_h, std::size_t out_w) {
    using K = TransformSpec::Kind;
    AugmentPipeline p;
    p.preset = name;
    p.out_height = out_h;
    p.out_width = out_w;
    auto crop = [] {
        TransformSpec t;
        t.kind = K::random_resized_crop;
        return t;
    };
    auto jitter = [](double strength) {
        TransformSpec t;
        t.kind = K::color_jitter;
        t.strength = strength;
        t.p = 0.8;
        return t;
    };
    auto blur = [] {
        TransformSpec t;
        t.kind = K::gaussian_blur;
        t.p = 0.5;
        return t;
    };
    auto flip = [](K kind) {
        TransformSpec t;
        t.kind = kind;
        t.p = 0.5;
        return t;
    };
    auto rot = [](double deg) {
        TransformSpec t;
        t.kind = K::rotate;
        t.max_deg = deg;
        return t;
    };
    if (name == "derm_pretrain") {
        p.ops = {crop(), jitter(1.0), blur(), flip(K::hflip), flip(K::vflip)};
    } else if (name == "xray_pretrain") {
        p.ops = {crop(), jitter(0.5), rot(45.0), flip(K::hflip)};
    } else if (name == "micle_partial") {
        p.ops = {crop()};
    } else if (name == "finetune") {
        p.ops = {jitter(0.5), crop(), blur(), rot(20.0), flip(K::hflip), flip(K::vflip)};
    } else {
        throw UsageError("unknown augmentation preset: " + name);
    }
    return p;
}

namespace {

struct CropWindow {
    std::size_t top = 0, left = 0, h = 0, w = 0;
    bool fallback = false;
};

// torchvision-style sampling: up to 10 area/aspect attempts, otherwise the
// spec'd fallback of a full-image resize.
CropWindow sample_crop(Rng& rng, const TransformSpec& t, std::size_t H, std::size_t W) {
    const double area = static_cast<double>(H) * static_cast<double>(W);
    for (int attempt = 0; attempt < 10; ++attempt) {
        const double target = area * rng.uniform(t.scale_lo, t.scale_hi);
        const double log_ratio = rng.uniform(std::log(t.ratio_lo), std::log(t.ratio_hi));
        const double ratio = std::exp(log_ratio);
        const auto w = static_cast<std::size_t>(std::lround(std::sqrt(target * ratio)));
        const auto h = static_cast<std::size_t>(std::lround(std::sqrt(target / ratio)));
        if (w >= 1 && h >= 1 && w <= W && h <= H) {
            CropWindow win;
            win.h = h;
            win.w = w;
            win.top = static_cast<std::size_t>(rng.below(H - h + 1));
            win.left = static_cast<std::size_t>(rng.below(W - w + 1));
            return win;
        }
    }
    CropWindow win;
    win.fallback = true;
    win.top = 0;
    win.left = 0;
    win.h = H;
    win.w = W;
    return win;
}

// Shared by augment_apply and augment_sample_params so both consume the RNG
// identically.
void run_pipeline(const AugmentPipeline& pipeline, const Image& input, Rng& rng, Image* out,
                  std::vector<double>* params) {
    using K = TransformSpec::Kind;
    Image img;
    if (out) img = input;
    std::size_t cur_h = input.height, cur_w = input.width;
    bool cropped = false;
    auto rec = [&](double v) {
        if (params) params->push_back(v);
    };
    for (const auto& t : pipeline.ops) {
        switch (t.kind) {
            case K::random_resized_crop: {
                CropWindow win = sample_crop(rng, t, cur_h, cur_w);
                rec(static_cast<double>(win.top));
                rec(static_cast<double>(win.left));
                rec(static_cast<double>(win.h));
                rec(static_cast<double>(win.w));
                if (out) {
                    img = win.fallback
                              ? resize_bilinear(img, pipeline.out_height, pipeline.out_width)
                              : crop_resize(img, win.top, win.left, win.h, win.w,
                                            pipeline.out_height, pipeline.out_width);
                }
                cur_h = pipeline.out_height;
                cur_w = pipeline.out_width;
                cropped = true;
                break;
            }
            case K::hflip: {
                const bool on = rng.bernoulli(t.p);
                rec(on ? 1.0 : 0.0);
                if (out && on) img = flip_horizontal(img);
                break;
            }
            case K::vflip: {
                const bool on = rng.bernoulli(t.p);
                rec(on ? 1.0 : 0.0);
                if (out && on) img = flip_vertical(img);
                break;
            }
            case K::rotate: {
                const double deg = rng.uniform(-t.max_deg, t.max_deg);
                rec(deg);
                if (out) img = rotate_bilinear(img, deg);
                break;
            }
            case K::color_jitter: {
                const bool on = rng.bernoulli(t.p);
                const double lo = std::max(0.0, 1.0 - 0.8 * t.strength);
                const double hi = 1.0 + 0.8 * t.strength;
                const double fb = rng.uniform(lo, hi);
                const double fc = rng.uniform(lo, hi);
                const double fs = rng.uniform(lo, hi);
                const double dh = rng.uniform(-0.2 * t.strength, 0.2 * t.strength);
                rec(on ? 1.0 : 0.0);
                rec(fb);
                rec(fc);
                rec(fs);
                rec(dh);
                if (out && on) {
                    adjust_brightness(img, fb);
                    adjust_contrast(img, fc);
                    adjust_saturation(img, fs);
                    shift_hue(img, dh);
                }
                break;
            }
            case K::brightness_additive: {
                const double d = rng.uniform(t.delta_lo, t.delta_hi);
                rec(d);
                if (out) brightness_additive(img, d);
                break;
            }
            case K::contrast_multiplicative: {
                const double s = rng.uniform(t.delta_lo, t.delta_hi);
                rec(s);
                if (out) contrast_multiplicative(img, s);
                break;
            }
            case K::gaussian_blur: {
                const bool on = rng.bernoulli(t.p);
                const double sigma = rng.uniform(t.sigma_lo, t.sigma_hi);
                rec(on ? 1.0 : 0.0);
                rec(sigma);
                if (out && on) {
                    // kernel ~10% of the image side, forced odd
                    std::size_t k = static_cast<std::size_t>(
                        std::lround(0.1 * static_cast<double>(std::min(img.height, img.width))));
                    if (k % 2 == 0) ++k;
                    if (k < 3) k = 3;
                    img = gaussian_blur(img, sigma, k);
                }
                break;
            }
        }
    }
    if (out) {
        if (!cropped && (img.height != pipeline.out_height || img.width != pipeline.out_width)) {
            img = resize_bilinear(img, pipeline.out_height, pipeline.out_width);
        }
        clip01(img);
        *out = std::move(img);
    }
}

}  // namespace

Image augment_apply(const AugmentPipeline& pipeline, const Image& image,
                    std::uint64_t sample_seed) {
    Rng rng(sample_seed);
    Image out;
    run_pipeline(pipeline, image, rng, &out, nullptr);
    return out;
}

std::vector<double> augment_sample_params(const AugmentPipeline& pipeline, const Image& image,
                                          std::uint64_t sample_seed) {
    Rng rng(sample_seed);
    std::vector<double> params;
    run_pipeline(pipeline, image, rng, nullptr, &params);
    return params;
}

}  // namespace micle
