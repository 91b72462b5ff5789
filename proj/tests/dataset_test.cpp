#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "fatlab/dataset.hpp"

namespace fatlab {
namespace {

DatasetSpec small_spec(std::uint64_t seed) {
    DatasetSpec s;
    s.num_classes = 4;
    s.train_per_class = 12;
    s.test_per_class = 5;
    s.height = 8;
    s.width = 8;
    s.seed = seed;
    return s;
}

std::span<const unsigned char> bytes_of(const std::string& s) {
    return {reinterpret_cast<const unsigned char*>(s.data()), s.size()};
}

std::filesystem::path scratch_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("fatlab_dataset_" + name + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

TEST(Hashing, KnownDigests) {
    // Reference digests from the standard test vectors and `git hash-object`.
    EXPECT_EQ(sha1_hex({}, bytes_of("abc")), "a9993e364706816aba3e25717850c26c9cd0d89d");
    EXPECT_EQ(git_blob_hash(bytes_of("hello\n")), "ce013625030ba8dba906f756967f9e9ca394464a");
    EXPECT_EQ(git_blob_hash({}), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
}

TEST(Synthetic, SameSeedGivesIdenticalBytes) {
    const auto [a_train, a_test] = generate_synthetic(small_spec(3));
    const auto [b_train, b_test] = generate_synthetic(small_spec(3));
    EXPECT_EQ(a_train, b_train);
    EXPECT_EQ(a_test, b_test);
    EXPECT_EQ(dataset_hash(a_train), dataset_hash(b_train));

    const auto [c_train, c_test] = generate_synthetic(small_spec(4));
    EXPECT_NE(dataset_hash(a_train), dataset_hash(c_train));
    EXPECT_NE(dataset_hash(a_train), dataset_hash(a_test));
}

TEST(Synthetic, ShapesLabelsAndRange) {
    const auto spec = small_spec(1);
    const auto [train, test] = generate_synthetic(spec);
    EXPECT_EQ(train.size(), spec.num_classes * spec.train_per_class);
    EXPECT_EQ(test.size(), spec.num_classes * spec.test_per_class);
    EXPECT_EQ(train.tag, DatasetTag::train);
    EXPECT_EQ(test.tag, DatasetTag::test);
    EXPECT_EQ(train.images.c(), 3);
    EXPECT_EQ(train.images.h(), 8);
    std::vector<int> counts(4, 0);
    for (int y : train.labels) ++counts[std::size_t(y)];
    for (int c : counts) EXPECT_EQ(c, spec.train_per_class);
    for (float v : train.images.values()) {
        EXPECT_GE(v, 0.0f);
        EXPECT_LE(v, 1.0f);
    }
}

TEST(Synthetic, NoiseFreeClassesAreLinearlySeparable) {
    // With every noise source off, each class is a single point; a linear
    // nearest-mean rule fit on train must be exact on test.
    auto spec = small_spec(9);
    spec.texture = 0;
    spec.white_noise = 0;
    spec.amplitude = 0.4;
    const auto [train, test] = generate_synthetic(spec);
    const std::size_t dim = std::size_t(spec.channels * spec.height * spec.width);
    std::vector<std::vector<double>> mean(4, std::vector<double>(dim, 0.0));
    for (int i = 0; i < train.size(); ++i) {
        auto img = train.images.sample(i);
        for (std::size_t k = 0; k < dim; ++k) mean[std::size_t(train.labels[std::size_t(i)])][k] += img[k];
    }
    for (auto& m : mean)
        for (auto& v : m) v /= spec.train_per_class;
    int correct = 0;
    for (int i = 0; i < test.size(); ++i) {
        auto img = test.images.sample(i);
        int best = -1;
        double best_score = -1e300;
        for (int c = 0; c < 4; ++c) {
            // w_c . x + b_c with w_c = mu_c, b_c = -|mu_c|^2 / 2
            double score = 0;
            for (std::size_t k = 0; k < dim; ++k)
                score += mean[std::size_t(c)][k] * img[k] - 0.5 * mean[std::size_t(c)][k] * mean[std::size_t(c)][k];
            if (score > best_score) best_score = score, best = c;
        }
        correct += best == test.labels[std::size_t(i)];
    }
    EXPECT_EQ(correct, test.size());
}

TEST(Synthetic, RejectsBadSpecs) {
    auto s = small_spec(0);
    s.num_classes = 1;
    EXPECT_THROW(generate_synthetic(s), ConfigError);
    s = small_spec(0);
    s.texture_block = 3;
    EXPECT_THROW(generate_synthetic(s), ConfigError);
    s = small_spec(0);
    s.source = DatasetSource::binary_dir;
    EXPECT_THROW(generate_synthetic(s), ConfigError);
}

TEST(BinaryRecords, SingleBlackImageWithLabelSeven) {
    std::vector<unsigned char> rec(kBinaryRecord, 0);
    rec[0] = 7;
    const auto d = parse_binary_records(rec, 10);
    ASSERT_EQ(d.size(), 1);
    EXPECT_EQ(d.labels[0], 7);
    EXPECT_EQ(d.images.c(), 3);
    EXPECT_EQ(d.images.h(), 32);
    EXPECT_EQ(d.images.w(), 32);
    for (float v : d.images.values()) EXPECT_EQ(v, 0.0f);
}

TEST(BinaryRecords, ChannelPlanesAreRedGreenBlue) {
    std::vector<unsigned char> rec(kBinaryRecord, 0);
    rec[0] = 1;
    rec[1 + 0 * 1024 + 5] = 255;         // red, row 0, col 5
    rec[1 + 1 * 1024 + 32 * 2 + 3] = 51;  // green, row 2, col 3
    const auto d = parse_binary_records(rec, 10);
    EXPECT_EQ(d.images(0, 0, 0, 5), 1.0f);
    EXPECT_EQ(d.images(0, 1, 2, 3), 51.0f / 255.0f);
    EXPECT_EQ(d.images(0, 2, 2, 3), 0.0f);
}

TEST(BinaryRecords, TruncatedRecordIsAFormatError) {
    std::vector<unsigned char> rec(3072, 0);
    EXPECT_THROW(parse_binary_records(rec, 10), FormatError);
    std::vector<unsigned char> two(2 * kBinaryRecord + 1, 0);
    EXPECT_THROW(parse_binary_records(two, 10), FormatError);
}

TEST(BinaryRecords, LabelOutOfRangeIsAFormatError) {
    std::vector<unsigned char> rec(kBinaryRecord, 0);
    rec[0] = 10;
    EXPECT_THROW(parse_binary_records(rec, 10), FormatError);
}

TEST(BinaryRecords, EncodeParseRoundTripIsByteExact) {
    Rng rng(17);
    std::uniform_int_distribution<int> byte(0, 255), label(0, 9);
    std::vector<unsigned char> bytes(5 * kBinaryRecord);
    for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = (unsigned char)(i % kBinaryRecord == 0 ? label(rng) : byte(rng));
    const auto d = parse_binary_records(bytes, 10);
    EXPECT_EQ(encode_binary_records(d), bytes);
}

TEST(BinaryRecords, DirectoryLoadKeepsFileOrderAndPrefix) {
    const auto dir = scratch_dir("dir");
    auto file = [&](const std::string& name, int label, int count) {
        std::vector<unsigned char> bytes(std::size_t(count) * kBinaryRecord, 128);
        for (int i = 0; i < count; ++i) bytes[std::size_t(i) * kBinaryRecord] = (unsigned char)label;
        std::ofstream(dir / name, std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()),
                                                          std::streamsize(bytes.size()));
    };
    file("data_batch_2.bin", 2, 1);
    file("data_batch_1.bin", 1, 2);
    file("test_batch.bin", 9, 3);
    const auto train = load_binary_dataset(dir, 10, DatasetTag::train, "data_batch");
    EXPECT_EQ(train.labels, (std::vector<int>{1, 1, 2}));
    const auto test = load_binary_dataset(dir, 10, DatasetTag::test, "test_batch");
    EXPECT_EQ(test.labels, (std::vector<int>{9, 9, 9}));
    EXPECT_EQ(test.tag, DatasetTag::test);
    EXPECT_THROW(load_binary_dataset(dir, 10, DatasetTag::train, "missing"), FormatError);

    std::ofstream(dir / "broken_1.bin", std::ios::binary) << std::string(3072, '\0');
    EXPECT_THROW(load_binary_dataset(dir, 10, DatasetTag::train, "broken"), FormatError);
    std::filesystem::remove_all(dir);
}

TEST(BinaryRecords, FileWriteReadRoundTrip) {
    const auto dir = scratch_dir("file");
    DatasetSpec spec;
    spec.num_classes = 3;
    spec.train_per_class = 2;
    spec.test_per_class = 1;
    spec.height = 32;
    spec.width = 32;
    const auto [train, test] = generate_synthetic(spec);
    write_binary_dataset(train, dir / "data_batch_1.bin");
    const auto back = load_binary_dataset(dir / "data_batch_1.bin", 3);
    EXPECT_EQ(back.labels, train.labels);
    for (std::size_t i = 0; i < back.images.size(); ++i)
        EXPECT_NEAR(back.images.values()[i], train.images.values()[i], 0.5 / 255.0 + 1e-6);
    EXPECT_EQ(encode_binary_records(back), encode_binary_records(train));
    std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace fatlab
