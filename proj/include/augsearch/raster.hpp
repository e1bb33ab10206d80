#pragma once

// Images and the pool of elementary transformations.
//
// Magnitudes arrive normalized to [0,1] and are mapped onto each transform's
// native range. Geometric transforms sample the source with bilinear
// interpolation and a constant zero fill outside the frame.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "augsearch/errors.hpp"
#include "augsearch/random.hpp"

namespace augsearch {

/// Channel-major raster: pixels[(c * height + y) * width + x], values in [0,1].
struct Image {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<float> pixels;

    Image() = default;
    Image(int w, int h, int c, float fill = 0.0f)
        : width(w), height(h), channels(c), pixels(static_cast<std::size_t>(w) * h * c, fill) {
        if (w <= 0 || h <= 0 || (c != 1 && c != 3)) {
            throw ArgumentError("Image: dimensions must be positive and channels 1 or 3");
        }
    }

    std::size_t plane_size() const { return static_cast<std::size_t>(width) * height; }
    std::size_t size() const { return pixels.size(); }

    float& at(int c, int y, int x) { return pixels[(static_cast<std::size_t>(c) * height + y) * width + x]; }
    float at(int c, int y, int x) const { return pixels[(static_cast<std::size_t>(c) * height + y) * width + x]; }

    bool same_shape(const Image& other) const {
        return width == other.width && height == other.height && channels == other.channels;
    }

    friend bool operator==(const Image&, const Image&) = default;
};

enum class TransformId {
    Identity,
    ShearX,
    ShearY,
    TranslateX,
    TranslateY,
    Rotate,
    AutoContrast,
    Equalize,
    Invert,
    Solarize,
    Posterize,
    Contrast,
    Brightness,
    Sharpness,
    Color,
    Cutout,
    RandomCrop,
};

inline constexpr std::array<std::string_view, 17> kTransformNames = {
    "Identity", "ShearX",   "ShearY",   "TranslateX", "TranslateY", "Rotate",     "AutoContrast", "Equalize", "Invert",
    "Solarize", "Posterize", "Contrast", "Brightness", "Sharpness", "Color", "Cutout", "RandomCrop",
};

inline std::string_view to_string(TransformId id) { return kTransformNames[static_cast<std::size_t>(id)]; }

inline std::optional<TransformId> transform_from_string(std::string_view name) {
    for (std::size_t i = 0; i < kTransformNames.size(); ++i) {
        if (kTransformNames[i] == name) return static_cast<TransformId>(i);
    }
    return std::nullopt;
}

struct TransformSpec {
    TransformId id;
    std::pair<double, double> native_range;
    bool parameter_free;
    bool directional;
};

/// The default pool, in fixed order.
inline const std::vector<TransformSpec>& registry() {
    using T = TransformId;
    static const std::vector<TransformSpec> specs = {
        {T::Identity, {0.0, 0.0}, true, false},
        {T::ShearX, {0.0, 1.0}, false, true},
        {T::ShearY, {0.0, 1.0}, false, true},
        {T::TranslateX, {0.0, 0.75}, false, true},
        {T::TranslateY, {0.0, 0.75}, false, true},
        {T::Rotate, {0.0, 90.0}, false, true},
        {T::AutoContrast, {0.0, 0.0}, true, false},
        {T::Equalize, {0.0, 0.0}, true, false},
        {T::Invert, {0.0, 0.0}, true, false},
        {T::Solarize, {0.0, 255.0}, false, false},
        {T::Posterize, {2.0, 8.0}, false, false},
        {T::Contrast, {0.0, 0.99}, false, true},
        {T::Brightness, {0.0, 0.99}, false, true},
        {T::Sharpness, {0.0, 0.99}, false, true},
        {T::Color, {0.0, 0.99}, false, true},
        {T::Cutout, {0.0, 1.0}, false, false},
        {T::RandomCrop, {0.0, 0.5}, false, false},
    };
    return specs;
}

inline const TransformSpec& spec_of(TransformId id) { return registry()[static_cast<std::size_t>(id)]; }

/// Affine map of a [0,1] magnitude onto the native range. Posterize counts
/// bits down from 8 and Solarize lowers its threshold from 255 as m01 grows,
/// so m01 = 0 is the identity for both.
inline double magnitude_to_native(const TransformSpec& spec, double m01) {
    if (!(m01 >= 0.0 && m01 <= 1.0)) {
        throw ArgumentError("magnitude_to_native: magnitude must lie in [0,1]");
    }
    const auto [low, high] = spec.native_range;
    switch (spec.id) {
        case TransformId::Posterize:
            return std::round(high - m01 * (high - low));
        case TransformId::Solarize:
            return high - m01 * (high - low);
        default:
            return low + m01 * (high - low);
    }
}

namespace detail {

inline float clamp01(float v) { return std::clamp(v, 0.0f, 1.0f); }

/// Bilinear sample of one channel; taps outside the frame read as zero.
inline float bilinear(const Image& img, int c, double sx, double sy) {
    const double fx0 = std::floor(sx);
    const double fy0 = std::floor(sy);
    const double fx = sx - fx0;
    const double fy = sy - fy0;
    const long x0 = static_cast<long>(fx0);
    const long y0 = static_cast<long>(fy0);
    auto tap = [&](long x, long y) -> double {
        if (x < 0 || y < 0 || x >= img.width || y >= img.height) return 0.0;
        return img.at(c, static_cast<int>(y), static_cast<int>(x));
    };
    const double v = (1.0 - fx) * (1.0 - fy) * tap(x0, y0) + fx * (1.0 - fy) * tap(x0 + 1, y0) +
                     (1.0 - fx) * fy * tap(x0, y0 + 1) + fx * fy * tap(x0 + 1, y0 + 1);
    return clamp01(static_cast<float>(v));
}

/// Resamples `img` through an output->source coordinate map.
template <typename Map>
Image warp(const Image& img, Map&& to_source) {
    Image out(img.width, img.height, img.channels);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const auto [sx, sy] = to_source(static_cast<double>(x), static_cast<double>(y));
            for (int c = 0; c < img.channels; ++c) out.at(c, y, x) = bilinear(img, c, sx, sy);
        }
    }
    return out;
}

inline Image luminance(const Image& img) {
    Image gray(img.width, img.height, img.channels);
    const std::size_t plane = img.plane_size();
    for (std::size_t i = 0; i < plane; ++i) {
        float g = img.pixels[i];
        if (img.channels == 3) {
            g = 0.299f * img.pixels[i] + 0.587f * img.pixels[plane + i] + 0.114f * img.pixels[2 * plane + i];
        }
        for (int c = 0; c < img.channels; ++c) gray.pixels[c * plane + i] = g;
    }
    return gray;
}

/// out = degenerate + factor * (img - degenerate), clamped.
inline Image blend(const Image& degenerate, const Image& img, double factor) {
    Image out = img;
    for (std::size_t i = 0; i < out.pixels.size(); ++i) {
        const double d = degenerate.pixels[i];
        out.pixels[i] = clamp01(static_cast<float>(d + factor * (img.pixels[i] - d)));
    }
    return out;
}

inline Image smooth(const Image& img) {
    Image out = img;
    for (int c = 0; c < img.channels; ++c) {
        for (int y = 1; y + 1 < img.height; ++y) {
            for (int x = 1; x + 1 < img.width; ++x) {
                double acc = 4.0 * img.at(c, y, x);
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) acc += img.at(c, y + dy, x + dx);
                out.at(c, y, x) = clamp01(static_cast<float>(acc / 13.0));
            }
        }
    }
    return out;
}

inline Image autocontrast(const Image& img) {
    Image out = img;
    const std::size_t plane = img.plane_size();
    for (int c = 0; c < img.channels; ++c) {
        auto first = out.pixels.begin() + static_cast<std::ptrdiff_t>(c * plane);
        auto last = first + static_cast<std::ptrdiff_t>(plane);
        const auto [lo_it, hi_it] = std::minmax_element(first, last);
        const float lo = *lo_it;
        const float hi = *hi_it;
        if (!(hi > lo)) continue;
        for (auto it = first; it != last; ++it) *it = (*it - lo) / (hi - lo);
    }
    return out;
}

// Rank-based equalization over the distinct intensity levels of each channel:
// level i maps to (pixels strictly below it) / (pixels strictly below the top
// level). The output depends only on the ordered level counts, which it
// preserves, so the transform is idempotent.
inline Image equalize(const Image& img) {
    Image out = img;
    const std::size_t plane = img.plane_size();
    std::vector<float> sorted(plane);
    for (int c = 0; c < img.channels; ++c) {
        const float* src = img.pixels.data() + c * plane;
        std::copy(src, src + plane, sorted.begin());
        std::sort(sorted.begin(), sorted.end());
        const float top = sorted.back();
        if (sorted.front() == top) continue;
        const auto below_top = static_cast<double>(std::lower_bound(sorted.begin(), sorted.end(), top) - sorted.begin());
        for (std::size_t i = 0; i < plane; ++i) {
            const auto below = static_cast<double>(std::lower_bound(sorted.begin(), sorted.end(), src[i]) - sorted.begin());
            out.pixels[c * plane + i] = static_cast<float>(below / below_top);
        }
    }
    return out;
}

inline Image posterize(const Image& img, int bits) {
    Image out = img;
    const int mask = (0xFF << (8 - bits)) & 0xFF;
    for (auto& v : out.pixels) {
        const int q = static_cast<int>(std::lround(v * 255.0f)) & mask;
        v = static_cast<float>(q) / 255.0f;
    }
    return out;
}

inline Image cutout(const Image& img, int side, Rng& rng) {
    Image out = img;
    if (side <= 0) return out;
    const int cx = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(img.width)));
    const int cy = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(img.height)));
    const int x0 = std::max(0, cx - side / 2);
    const int y0 = std::max(0, cy - side / 2);
    const int x1 = std::min(img.width, cx - side / 2 + side);
    const int y1 = std::min(img.height, cy - side / 2 + side);
    for (int c = 0; c < img.channels; ++c)
        for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x) out.at(c, y, x) = 0.5f;
    return out;
}

inline Image random_crop(const Image& img, int pad, Rng& rng) {
    if (pad <= 0) return img;
    const int ox = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(2 * pad + 1)));
    const int oy = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(2 * pad + 1)));
    Image out(img.width, img.height, img.channels);
    for (int c = 0; c < img.channels; ++c) {
        for (int y = 0; y < img.height; ++y) {
            for (int x = 0; x < img.width; ++x) {
                const int sx = x + ox - pad;
                const int sy = y + oy - pad;
                const bool inside = sx >= 0 && sy >= 0 && sx < img.width && sy < img.height;
                out.at(c, y, x) = inside ? img.at(c, sy, sx) : 0.0f;
            }
        }
    }
    return out;
}

}  // namespace detail

/// Applies one elementary transformation. `direction` only matters for
/// directional transforms and `rng` is only drawn from by Cutout and RandomCrop.
inline Image apply_transform(const TransformSpec& spec, double m01, int direction, const Image& image, Rng& rng) {
    using T = TransformId;
    const double native = spec.parameter_free ? 0.0 : magnitude_to_native(spec, m01);
    const double sign = spec.directional ? (direction < 0 ? -1.0 : 1.0) : 1.0;
    const double cx = 0.5 * (image.width - 1);
    const double cy = 0.5 * (image.height - 1);

    switch (spec.id) {
        case T::Identity:
            return image;
        case T::ShearX: {
            const double s = sign * native;
            return detail::warp(image, [&](double x, double y) { return std::pair{x + s * (y - cy), y}; });
        }
        case T::ShearY: {
            const double s = sign * native;
            return detail::warp(image, [&](double x, double y) { return std::pair{x, y + s * (x - cx)}; });
        }
        case T::TranslateX: {
            const double shift = sign * native * image.width;
            return detail::warp(image, [&](double x, double y) { return std::pair{x - shift, y}; });
        }
        case T::TranslateY: {
            const double shift = sign * native * image.height;
            return detail::warp(image, [&](double x, double y) { return std::pair{x, y - shift}; });
        }
        case T::Rotate: {
            const double theta = sign * native * std::numbers::pi / 180.0;
            const double cs = std::cos(theta);
            const double sn = std::sin(theta);
            return detail::warp(image, [&](double x, double y) {
                const double dx = x - cx;
                const double dy = y - cy;
                return std::pair{cx + cs * dx + sn * dy, cy - sn * dx + cs * dy};
            });
        }
        case T::AutoContrast:
            return detail::autocontrast(image);
        case T::Equalize:
            return detail::equalize(image);
        case T::Invert: {
            Image out = image;
            for (auto& v : out.pixels) v = 1.0f - v;
            return out;
        }
        case T::Solarize: {
            const float threshold = static_cast<float>(native / 255.0);
            Image out = image;
            for (auto& v : out.pixels)
                if (v > threshold) v = 1.0f - v;
            return out;
        }
        case T::Posterize:
            return detail::posterize(image, static_cast<int>(native));
        case T::Contrast: {
            const Image gray = detail::luminance(image);
            double mean = 0.0;
            for (std::size_t i = 0; i < image.plane_size(); ++i) mean += gray.pixels[i];
            mean /= static_cast<double>(image.plane_size());
            const Image degenerate(image.width, image.height, image.channels, static_cast<float>(mean));
            return detail::blend(degenerate, image, std::max(0.0, 1.0 + sign * native));
        }
        case T::Brightness:
            return detail::blend(Image(image.width, image.height, image.channels), image,
                                 std::max(0.0, 1.0 + sign * native));
        case T::Sharpness:
            return detail::blend(detail::smooth(image), image, std::max(0.0, 1.0 + sign * native));
        case T::Color:
            return detail::blend(detail::luminance(image), image, std::max(0.0, 1.0 + sign * native));
        case T::Cutout: {
            const int side = static_cast<int>(std::lround(native * std::min(image.width, image.height)));
            return detail::cutout(image, side, rng);
        }
        case T::RandomCrop: {
            const int pad = static_cast<int>(std::lround(native * std::min(image.width, image.height)));
            return detail::random_crop(image, pad, rng);
        }
    }
    return image;
}

}  // namespace augsearch
