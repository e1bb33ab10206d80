#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "augsearch/data.hpp"
#include "augsearch/eval.hpp"

namespace augsearch {
namespace {

namespace fs = std::filesystem;

Dataset numbered(std::size_t n) {
    // Pixel value encodes the index so partitions can be read back.
    Dataset d{{}, {}, 2};
    for (std::size_t i = 0; i < n; ++i) {
        Image img(2, 1, 1);
        img.pixels = {static_cast<float>(i % 256) / 255.0f, static_cast<float>(i / 256) / 255.0f};
        d.images.push_back(img);
        d.labels.push_back(static_cast<int>(i % 2));
    }
    return d;
}

std::size_t index_of(const Image& img) {
    return static_cast<std::size_t>(std::lround(img.pixels[0] * 255.0f)) + 256 * static_cast<std::size_t>(std::lround(img.pixels[1] * 255.0f));
}

std::set<std::size_t> indices(const Dataset& d) {
    std::set<std::size_t> out;
    for (const Image& img : d.images) out.insert(index_of(img));
    return out;
}

fs::path temp_file(const std::string& name) { return fs::temp_directory_path() / ("augsearch_data_" + name); }

TEST(Split, SizesFollowTheFloorConvention) {
    const auto [a, b] = split(numbered(100), 0.5, 1);
    EXPECT_EQ(a.size(), 50u);
    EXPECT_EQ(b.size(), 50u);
    const auto [c, d] = split(numbered(101), 0.5, 1);
    EXPECT_EQ(c.size(), 51u);
    EXPECT_EQ(d.size(), 50u);
}

TEST(Split, IsAPartition) {
    const Dataset all = numbered(300);
    const auto [a, b] = split(all, 0.3, 7);
    const auto ia = indices(a), ib = indices(b);
    EXPECT_EQ(ia.size() + ib.size(), 300u);
    std::set<std::size_t> both = ia;
    both.insert(ib.begin(), ib.end());
    EXPECT_EQ(both.size(), 300u);
}

TEST(Split, DeterministicAndOverStoredIndices) {
    const Dataset all = numbered(200);
    const auto [a1, b1] = split(all, 0.5, 3);
    const auto [a2, b2] = split(all, 0.5, 3);
    EXPECT_EQ(a1, a2);
    EXPECT_EQ(b1, b2);
    const auto [a3, b3] = split(all, 0.5, 4);
    EXPECT_NE(indices(a1), indices(a3));

    // Same size, different contents: the same positions land in each part.
    Dataset other = all;
    for (auto& img : other.images) img.pixels[0] = 1.0f - img.pixels[0];
    const auto [oa, ob] = split(other, 0.5, 3);
    for (std::size_t i = 0; i < a1.size(); ++i) EXPECT_FLOAT_EQ(oa.images[i].pixels[0], 1.0f - a1.images[i].pixels[0]);
}

TEST(Split, RejectsBadArguments) {
    EXPECT_THROW(split(numbered(10), 0.0, 1), ArgumentError);
    EXPECT_THROW(split(numbered(10), 1.0, 1), ArgumentError);
    EXPECT_THROW(split(Dataset{{}, {}, 2}, 0.5, 1), ArgumentError);
}

TEST(Synthetic, BalancedDeterministicAndOnTheByteGrid) {
    for (auto kind : {SyntheticKind::RotationInvariant, SyntheticKind::TranslationInvariant}) {
        const Dataset d = generate_synthetic(kind, 400, 16, 5);
        EXPECT_NO_THROW(validate(d));
        std::vector<int> hist(4, 0);
        for (int y : d.labels) ++hist[static_cast<std::size_t>(y)];
        EXPECT_EQ(hist, std::vector<int>(4, 100));
        EXPECT_EQ(d, generate_synthetic(kind, 400, 16, 5));
        EXPECT_NE(d, generate_synthetic(kind, 400, 16, 6));
        for (const Image& img : d.images) {
            EXPECT_EQ(img.width, 16);
            EXPECT_EQ(img.channels, 1);
            // The mid-grey background is exactly 0.5 and only lands on the grid when saved.
            for (float v : img.pixels) {
                if (v == 0.5f) continue;
                ASSERT_EQ(v, static_cast<float>(std::lround(v * 255.0f)) / 255.0f);
            }
        }
    }
}

TEST(Synthetic, RejectsBadArguments) {
    EXPECT_THROW(generate_synthetic("spiral", 100, 16, 0), ArgumentError);
    EXPECT_THROW(generate_synthetic("rotation-invariant", 15, 16, 0), ArgumentError);
    EXPECT_THROW(generate_synthetic("rotation-invariant", 100, 16, 0, 1.5), ArgumentError);
}

TEST(Synthetic, OutsideTheDiscIsMidGrey) {
    const Dataset d = generate_synthetic(SyntheticKind::RotationInvariant, 40, 16, 1);
    for (const Image& img : d.images) {
        EXPECT_EQ(img.at(0, 0, 0), 0.5f);
        EXPECT_EQ(img.at(0, 15, 15), 0.5f);
    }
}

TEST(Synthetic, SplitsUseTheCanonicalPoseOnlyForTraining) {
    const Splits s = make_synthetic_splits(SyntheticKind::RotationInvariant, 2000, 500, 16, 0);
    EXPECT_EQ(s.train.size(), 1000u);
    EXPECT_EQ(s.val.size(), 1000u);
    EXPECT_EQ(s.test.size(), 500u);
    EXPECT_NE(s.train.images.front(), s.val.images.front());
}

// The dataset's contract: Rotate augmentation helps, Invert hurts.
TEST(Synthetic, RotateBeatsInvertByFivePoints) {
    const Splits s = make_synthetic_splits(SyntheticKind::RotationInvariant, 2000, 1000, 16, 0);
    const std::vector<TransformId> ids = {TransformId::Identity, TransformId::Rotate, TransformId::Invert};
    auto only = [&](TransformId id) {
        Policy p = uniform_policy(1, ids, 1.0);
        p.logits.setConstant(-50.0);
        p.logits(0, static_cast<int>(std::find(ids.begin(), ids.end(), id) - ids.begin())) = 50.0;
        return p;
    };
    const EvalConfig cfg;
    const double rotate = evaluate_policy(only(TransformId::Rotate), s, cfg, {0}).mean;
    const double invert = evaluate_policy(only(TransformId::Invert), s, cfg, {0}).mean;
    EXPECT_GE(rotate - invert, 0.05) << "rotate " << rotate << " invert " << invert;
}

TEST(Augd, RoundTripIsBitIdentical) {
    const Dataset d = generate_synthetic("translation-invariant", 64, 8, 2);
    const auto path = temp_file("roundtrip.augd");
    save_dataset(d, path.string());
    EXPECT_EQ(load_dataset(path.string()), d);
    fs::remove(path);
}

TEST(Augd, HeaderLayout) {
    Dataset d{{Image(2, 1, 1)}, {1}, 3};
    d.images[0].pixels = {0.0f, 1.0f};
    const auto bytes = encode_dataset(d);
    const std::vector<unsigned char> want = {'A', 'U', 'G', 'D', 1, 1, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 3, 0, 0, 0, 1, 0, 255};
    ASSERT_EQ(bytes.size(), want.size());
    for (std::size_t i = 0; i < want.size(); ++i) EXPECT_EQ(static_cast<unsigned char>(bytes[i]), want[i]) << i;
}

TEST(Augd, DistinctErrors) {
    auto bytes = encode_dataset(generate_synthetic("rotation-invariant", 16, 4, 3));
    auto expect_kind = [](std::vector<char> b, FormatError::Kind kind) {
        try {
            decode_dataset(std::move(b));
            ADD_FAILURE() << "no error";
        } catch (const FormatError& e) {
            EXPECT_EQ(e.kind(), kind) << e.what();
        }
    };
    auto bad_magic = bytes;
    bad_magic[1] = 'X';
    expect_kind(bad_magic, FormatError::Kind::BadMagic);
    try {
        decode_dataset(bad_magic);
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("offset 0"), std::string::npos) << e.what();
    }
    auto bad_version = bytes;
    bad_version[4] = 9;
    expect_kind(bad_version, FormatError::Kind::UnsupportedVersion);
    expect_kind(std::vector<char>(bytes.begin(), bytes.end() - 3), FormatError::Kind::Truncated);
    auto extra = bytes;
    extra.push_back(0);
    expect_kind(extra, FormatError::Kind::DimensionMismatch);
    auto bad_label = bytes;
    bad_label[25] = 7;  // first label; num_classes is 4
    expect_kind(bad_label, FormatError::Kind::InvalidLabel);
    auto bad_dims = bytes;
    bad_dims[17] = 2;  // two channels
    expect_kind(bad_dims, FormatError::Kind::DimensionMismatch);
}

TEST(Augd, SavingQuantizesTheBackgroundToTheByteGrid) {
    const Dataset d = generate_synthetic("rotation-invariant", 16, 8, 4);
    const Dataset back = decode_dataset(encode_dataset(d));
    EXPECT_EQ(back.labels, d.labels);
    EXPECT_EQ(back.images[0].at(0, 0, 0), 128.0f / 255.0f);
    for (std::size_t i = 0; i < d.size(); ++i)
        for (std::size_t j = 0; j < d.images[i].pixels.size(); ++j)
            EXPECT_LE(std::abs(back.images[i].pixels[j] - d.images[i].pixels[j]), 0.5f / 255.0f + 1e-7f);
}

TEST(Augd, MissingFileIsAnArgumentError) {
    EXPECT_THROW(load_dataset("/nonexistent/augsearch.augd"), ArgumentError);
}

TEST(Csv, ConvertsRows) {
    std::istringstream in("1,0,255,51,102\n0,255,255,255,0\n");
    const Dataset d = dataset_from_csv(in, 2, 2, 1, 2);
    ASSERT_EQ(d.size(), 2u);
    EXPECT_EQ(d.labels, (std::vector<int>{1, 0}));
    EXPECT_EQ(d.images[0].pixels, (std::vector<float>{0.0f, 1.0f, 0.2f, 0.4f}));
}

TEST(Csv, RejectsMalformedRows) {
    std::istringstream short_row("1,0,255\n");
    EXPECT_THROW(dataset_from_csv(short_row, 2, 2, 1, 2), FormatError);
    std::istringstream bad_label("5,0,0,0,0\n");
    EXPECT_THROW(dataset_from_csv(bad_label, 2, 2, 1, 2), FormatError);
    std::istringstream text("1,a,0,0,0\n");
    EXPECT_THROW(dataset_from_csv(text, 2, 2, 1, 2), FormatError);
    std::istringstream empty("");
    EXPECT_THROW(dataset_from_csv(empty, 2, 2, 1, 2), ArgumentError);
}

TEST(BatchSampler, CoversEveryIndexOncePerEpoch) {
    BatchSampler s(10, 4);
    std::vector<std::size_t> seen;
    for (int i = 0; i < 5; ++i) {
        const auto b = s.next(2);
        seen.insert(seen.end(), b.begin(), b.end());
    }
    std::sort(seen.begin(), seen.end());
    std::vector<std::size_t> want(10);
    std::iota(want.begin(), want.end(), 0);
    EXPECT_EQ(seen, want);
    EXPECT_THROW(BatchSampler(0, 1), ArgumentError);
}

TEST(Dataset, ValidationAndConcat) {
    Dataset d = numbered(4);
    d.labels[2] = 2;
    EXPECT_THROW(validate(d), ArgumentError);
    const Dataset c = concat(numbered(3), numbered(5));
    EXPECT_EQ(c.size(), 8u);
    Dataset three = numbered(3);
    three.num_classes = 3;
    EXPECT_THROW(concat(numbered(3), three), ArgumentError);
}

}  // namespace
}  // namespace augsearch
