#pragma once

// Datasets, deterministic splits, the AUGD binary format and the synthetic
// generators used for desk-scale experiments.
//
// AUGD layout (little-endian):
//   "AUGD" | u8 version (=1) | u32 n, width, height, channels, num_classes |
//   u8 labels[n] | u8 pixels[n * channels * height * width]   (value = byte / 255)

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "augsearch/binary_io.hpp"
#include "augsearch/errors.hpp"
#include "augsearch/predictor.hpp"
#include "augsearch/random.hpp"
#include "augsearch/raster.hpp"

namespace augsearch {

struct Dataset {
    std::vector<Image> images;
    std::vector<int> labels;
    int num_classes = 0;

    std::size_t size() const { return images.size(); }
    bool empty() const { return images.empty(); }

    Dataset subset(const std::vector<std::size_t>& indices) const {
        Dataset out{{}, {}, num_classes};
        out.images.reserve(indices.size());
        out.labels.reserve(indices.size());
        for (std::size_t i : indices) {
            out.images.push_back(images.at(i));
            out.labels.push_back(labels.at(i));
        }
        return out;
    }

    Batch batch(const std::vector<std::size_t>& indices) const {
        Batch b;
        b.images.reserve(indices.size());
        b.labels.reserve(indices.size());
        for (std::size_t i : indices) {
            b.images.push_back(images.at(i));
            b.labels.push_back(labels.at(i));
        }
        return b;
    }

    Batch as_batch() const { return Batch{images, labels}; }

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct Splits {
    Dataset train;
    Dataset val;
    Dataset test;
};

inline void validate(const Dataset& d) {
    if (d.images.size() != d.labels.size()) throw ArgumentError("dataset: images and labels differ in length");
    if (d.num_classes < 1) throw ArgumentError("dataset: num_classes must be positive");
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (d.labels[i] < 0 || d.labels[i] >= d.num_classes) throw ArgumentError("dataset: label out of range");
        if (!d.images[i].same_shape(d.images.front())) throw ArgumentError("dataset: images differ in shape");
    }
}

inline Dataset concat(const Dataset& a, const Dataset& b) {
    if (a.num_classes != b.num_classes) throw ArgumentError("concat: class counts differ");
    Dataset out = a;
    out.images.insert(out.images.end(), b.images.begin(), b.images.end());
    out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
    validate(out);
    return out;
}

/// Seeded shuffled partition. The first part receives n - floor(n * (1 - ratio))
/// examples, so ratio 0.5 on 101 examples gives 51/50.
inline std::pair<Dataset, Dataset> split(const Dataset& d, double ratio, std::uint64_t seed) {
    if (!(ratio > 0.0 && ratio < 1.0)) throw ArgumentError("split: ratio must lie in (0,1)");
    if (d.empty()) throw ArgumentError("split: empty dataset");
    std::vector<std::size_t> perm(d.size());
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(seed);
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto n_second = static_cast<std::size_t>(std::floor(static_cast<double>(d.size()) * (1.0 - ratio)));
    const std::size_t n_first = d.size() - n_second;
    const std::vector<std::size_t> first(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_first));
    const std::vector<std::size_t> second(perm.begin() + static_cast<std::ptrdiff_t>(n_first), perm.end());
    return {d.subset(first), d.subset(second)};
}

// ---------------------------------------------------------------------------
// Synthetic data

enum class SyntheticKind { RotationInvariant, TranslationInvariant };

inline SyntheticKind synthetic_kind_from_string(std::string_view s) {
    if (s == "rotation-invariant") return SyntheticKind::RotationInvariant;
    if (s == "translation-invariant") return SyntheticKind::TranslationInvariant;
    throw ArgumentError("unknown synthetic dataset kind '" + std::string(s) + "'");
}

inline constexpr int kSyntheticClasses = 4;
// Share of generated examples that carry the nuisance (a random rotation or a
// random patch position); the rest sit near the canonical pose. Test splits
// always use 1.
inline constexpr double kTrainNuisanceFraction = 1.0;

namespace detail {

inline float quantize(double v) { return static_cast<float>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)) / 255.0f; }

// Classes are star shapes at a random angle: three arms (classes 0, 1) or
// five arms (classes 2, 3), brighter than the background for even classes and
// darker for odd ones. The arm count and the radial profile do not change
// under rotation. The background level is random, so polarity is only visible
// relative to the arms. Everything outside the inscribed disc is mid-grey, so
// Invert leaves it alone and maps class 0 onto class 1 (and 2 onto 3). Without
// the nuisance the angle only jitters around the canonical pose.
inline Image radial_example(int label, int side, bool rotated, Rng& rng) {
    const double c = 0.5 * (side - 1);
    const double half = 0.5 * side;
    const int arms = label >= 2 ? 5 : 3;
    const double polarity = label % 2 == 1 ? -1.0 : 1.0;
    const double background = 0.4 + 0.2 * uniform01(rng);
    const double angle = rotated ? 2.0 * std::numbers::pi * uniform01(rng) : 0.15 * (2.0 * uniform01(rng) - 1.0);
    const double amplitude = 0.3;
    Image img(side, side, 1);
    for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
            const double dx = (x - c) / half;
            const double dy = (y - c) / half;
            const double rho = std::hypot(dx, dy);
            double v = background;
            if (rho > 0.2) {
                const double phase = arms * (std::atan2(dy, dx) - angle);
                v += polarity * amplitude * std::pow(0.5 + 0.5 * std::cos(phase), 4.0);
            }
            v += 0.15 * standard_normal(rng);
            img.at(0, y, x) = rho > 1.0 ? 0.5f : quantize(v);
        }
    }
    return img;
}

// Classes are grating orientations (0, 45, 90, 135 degrees) inside a patch at
// a random position.
inline Image texture_example(int label, int side, bool jittered, Rng& rng) {
    const double theta = label * std::numbers::pi / 4.0;
    const double freq = 2.0 * std::numbers::pi / 4.0;
    const int patch = std::max(4, side / 2);
    const auto slack = static_cast<std::size_t>(side - patch + 1);
    const int ox = jittered ? static_cast<int>(uniform_index(rng, slack)) : (side - patch) / 2;
    const int oy = jittered ? static_cast<int>(uniform_index(rng, slack)) : (side - patch) / 2;
    const double phase = 2.0 * std::numbers::pi * uniform01(rng);
    Image img(side, side, 1);
    for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
            double v = 0.5;
            if (x >= ox && x < ox + patch && y >= oy && y < oy + patch) {
                v += 0.35 * std::sin(freq * (x * std::cos(theta) + y * std::sin(theta)) + phase);
            }
            v += 0.08 * standard_normal(rng);
            img.at(0, y, x) = quantize(v);
        }
    }
    return img;
}

}  // namespace detail

/// Balanced 4-class single-channel dataset. Pixel values sit on the 8-bit grid
/// so the AUGD round trip is exact.
inline Dataset generate_synthetic(SyntheticKind kind, std::size_t n, int side, std::uint64_t seed,
                                  double nuisance_fraction = kTrainNuisanceFraction) {
    if (n < 4 * static_cast<std::size_t>(kSyntheticClasses)) throw ArgumentError("generate_synthetic: need n >= 4 * classes");
    if (side < 4) throw ArgumentError("generate_synthetic: side must be >= 4");
    if (!(nuisance_fraction >= 0.0 && nuisance_fraction <= 1.0)) {
        throw ArgumentError("generate_synthetic: nuisance fraction must lie in [0, 1]");
    }
    Rng rng(seed);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % kSyntheticClasses);
    std::shuffle(labels.begin(), labels.end(), rng);
    Dataset d{{}, std::move(labels), kSyntheticClasses};
    d.images.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const bool nuisance = uniform01(rng) < nuisance_fraction;
        d.images.push_back(kind == SyntheticKind::RotationInvariant ? detail::radial_example(d.labels[i], side, nuisance, rng)
                                                                    : detail::texture_example(d.labels[i], side, nuisance, rng));
    }
    return d;
}

inline Dataset generate_synthetic(std::string_view kind, std::size_t n, int side, std::uint64_t seed,
                                  double nuisance_fraction = kTrainNuisanceFraction) {
    return generate_synthetic(synthetic_kind_from_string(kind), n, side, seed, nuisance_fraction);
}

/// Search data split train/val by `ratio`, plus an independently drawn test set.
inline Splits make_synthetic_splits(SyntheticKind kind, std::size_t n, std::size_t n_test, int side, std::uint64_t seed,
                                    double ratio = 0.5) {
    if (!(ratio > 0.0 && ratio < 1.0)) throw ArgumentError("make_synthetic_splits: ratio must lie in (0, 1)");
    const auto n_val = static_cast<std::size_t>(std::floor(static_cast<double>(n) * (1.0 - ratio)));
    return Splits{generate_synthetic(kind, n - n_val, side, mix_seed(seed, 1), 0.0),
                  generate_synthetic(kind, n_val, side, mix_seed(seed, 3), 1.0),
                  generate_synthetic(kind, n_test, side, mix_seed(seed, 2), 1.0)};
}

// ---------------------------------------------------------------------------
// AUGD format

inline constexpr std::string_view kDatasetMagic = "AUGD";
inline constexpr std::uint8_t kDatasetVersion = 1;

inline std::vector<char> encode_dataset(const Dataset& d) {
    validate(d);
    if (d.num_classes > 256) throw ArgumentError("save: AUGD stores labels as u8 (num_classes <= 256)");
    binary::Writer w;
    w.bytes(kDatasetMagic);
    w.u8(kDatasetVersion);
    const Image probe = d.empty() ? Image(1, 1, 1) : d.images.front();
    w.u32(static_cast<std::uint32_t>(d.size()));
    w.u32(static_cast<std::uint32_t>(probe.width));
    w.u32(static_cast<std::uint32_t>(probe.height));
    w.u32(static_cast<std::uint32_t>(probe.channels));
    w.u32(static_cast<std::uint32_t>(d.num_classes));
    for (int y : d.labels) w.u8(static_cast<std::uint8_t>(y));
    for (const Image& img : d.images) {
        for (float v : img.pixels) w.u8(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)));
    }
    return w.data();
}

inline Dataset decode_dataset(std::vector<char> bytes) {
    binary::Reader r(std::move(bytes));
    if (r.bytes(kDatasetMagic.size(), "magic") != kDatasetMagic) {
        throw FormatError(FormatError::Kind::BadMagic, 0, "bad AUGD magic");
    }
    const std::size_t version_at = r.offset();
    if (r.u8("version") != kDatasetVersion) throw FormatError(FormatError::Kind::UnsupportedVersion, version_at, "unsupported AUGD version");
    const std::size_t dims_at = r.offset();
    const auto n = r.u32("count");
    const auto w = r.u32("width");
    const auto h = r.u32("height");
    const auto c = r.u32("channels");
    const auto classes = r.u32("num_classes");
    if (w == 0 || h == 0 || (c != 1 && c != 3) || classes == 0 || classes > 256) {
        throw FormatError(FormatError::Kind::DimensionMismatch, dims_at, "invalid AUGD dimensions");
    }
    const std::size_t image_bytes = static_cast<std::size_t>(w) * h * c;
    const std::size_t expected = static_cast<std::size_t>(n) * (1 + image_bytes);
    if (r.remaining() < expected) {
        throw FormatError(FormatError::Kind::Truncated, r.offset() + r.remaining(), "truncated AUGD payload");
    }
    if (r.remaining() > expected) {
        throw FormatError(FormatError::Kind::DimensionMismatch, r.offset() + expected, "trailing bytes after AUGD payload");
    }
    Dataset d{{}, {}, static_cast<int>(classes)};
    d.labels.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        const std::size_t at = r.offset();
        const int y = r.u8("labels");
        if (y >= static_cast<int>(classes)) {
            throw FormatError(FormatError::Kind::InvalidLabel, at, "label " + std::to_string(y) + " >= num_classes");
        }
        d.labels.push_back(y);
    }
    d.images.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        Image img(static_cast<int>(w), static_cast<int>(h), static_cast<int>(c));
        for (auto& v : img.pixels) v = static_cast<float>(r.u8("pixels")) / 255.0f;
        d.images.push_back(std::move(img));
    }
    return d;
}

inline void save_dataset(const Dataset& d, const std::string& path) {
    const auto bytes = encode_dataset(d);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline Dataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ArgumentError("cannot open dataset '" + path + "'");
    return decode_dataset(std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()));
}

/// CSV rows of `label,p0,p1,...` with pixels in [0, pixel_scale], channel-major.
inline Dataset dataset_from_csv(std::istream& in, int width, int height, int channels, int num_classes,
                                double pixel_scale = 255.0) {
    if (width <= 0 || height <= 0 || (channels != 1 && channels != 3) || num_classes < 1) {
        throw ArgumentError("convert: invalid dimensions");
    }
    Dataset d{{}, {}, num_classes};
    const std::size_t expected = static_cast<std::size_t>(width) * height * channels;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<double> values;
        while (std::getline(ss, cell, ',')) {
            try {
                values.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw FormatError(FormatError::Kind::Malformed, "CSV line " + std::to_string(line_no) + ": not a number");
            }
        }
        if (values.size() != expected + 1) {
            throw FormatError(FormatError::Kind::DimensionMismatch,
                              "CSV line " + std::to_string(line_no) + ": expected " + std::to_string(expected + 1) + " fields");
        }
        const int label = static_cast<int>(values[0]);
        if (label < 0 || label >= num_classes || label != values[0]) {
            throw FormatError(FormatError::Kind::InvalidLabel, "CSV line " + std::to_string(line_no) + ": invalid label");
        }
        Image img(width, height, channels);
        for (std::size_t j = 0; j < expected; ++j) img.pixels[j] = detail::quantize(values[j + 1] / pixel_scale);
        d.labels.push_back(label);
        d.images.push_back(std::move(img));
    }
    if (d.empty()) throw ArgumentError("convert: CSV contained no rows");
    return d;
}

/// Cycles through a seeded permutation of [0, n), reshuffling every epoch.
class BatchSampler {
public:
    BatchSampler(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed) {
        if (n == 0) throw ArgumentError("BatchSampler: empty dataset");
        std::iota(order_.begin(), order_.end(), 0);
        std::shuffle(order_.begin(), order_.end(), rng_);
    }

    std::vector<std::size_t> next(std::size_t batch_size) {
        std::vector<std::size_t> out;
        out.reserve(batch_size);
        while (out.size() < batch_size) {
            if (pos_ == order_.size()) {
                std::shuffle(order_.begin(), order_.end(), rng_);
                pos_ = 0;
            }
            out.push_back(order_[pos_++]);
        }
        return out;
    }

private:
    std::vector<std::size_t> order_;
    Rng rng_;
    std::size_t pos_ = 0;
};

}  // namespace augsearch
