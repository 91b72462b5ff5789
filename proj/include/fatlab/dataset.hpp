#pragma once

// In-memory labelled image sets: a seeded synthetic generator, a reader and
// writer for the 3073-byte-record binary format, and a content hash.

#include <openssl/evp.h>

#include <filesystem>
#include <fstream>
#include <cstring>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "fatlab/model.hpp"

namespace fatlab {

enum class DatasetTag { train, test };

inline std::string to_string(DatasetTag t) { return t == DatasetTag::train ? "train" : "test"; }
inline DatasetTag dataset_tag_from_string(const std::string& s) {
    if (s == "train") return DatasetTag::train;
    if (s == "test") return DatasetTag::test;
    throw ConfigError("unknown dataset tag: " + s);
}

struct Dataset {
    Tensor<float> images;
    std::vector<int> labels;
    DatasetTag tag = DatasetTag::train;

    int size() const noexcept { return images.n(); }

    void validate() const {
        if (labels.size() != std::size_t(images.n())) throw ShapeError("dataset label count does not match images");
    }

    /// Samples [first, first + count) as a batch carrying dataset indices.
    template <typename T = float>
    Batch<T> batch(int first, int count) const {
        Batch<T> b;
        if constexpr (std::is_same_v<T, float>)
            b.images = images.slice(first, count);
        else
            b.images = images.slice(first, count).template cast<T>();
        b.labels.assign(labels.begin() + first, labels.begin() + first + count);
        b.indices.resize(std::size_t(count));
        std::iota(b.indices.begin(), b.indices.end(), first);
        return b;
    }

    template <typename T = float>
    Batch<T> gather(std::span<const int> rows) const {
        Batch<T> b;
        if constexpr (std::is_same_v<T, float>)
            b.images = images.gather(rows);
        else
            b.images = images.gather(rows).template cast<T>();
        for (int r : rows) b.labels.push_back(labels[std::size_t(r)]);
        b.indices.assign(rows.begin(), rows.end());
        return b;
    }

    Dataset head(int count) const {
        count = std::min(count, size());
        Dataset d;
        d.images = images.slice(0, count);
        d.labels.assign(labels.begin(), labels.begin() + count);
        d.tag = tag;
        return d;
    }

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

enum class DatasetSource { synthetic, binary_dir };

/// Synthetic set: each class owns a smooth mean pattern made of a few
/// coloured Gaussian blobs; samples add blocky texture, white noise and an
/// optional low-amplitude per-class sign pattern.
struct DatasetSpec {
    DatasetSource source = DatasetSource::synthetic;
    int num_classes = 10;
    int train_per_class = 500;
    int test_per_class = 100;
    int channels = 3;
    int height = 16;
    int width = 16;
    int blobs = 4;
    double amplitude = 0.5;
    double texture = 0.05;
    int texture_block = 4;
    double white_noise = 0.03;
    double pattern = 12.0 / 255.0;
    std::uint64_t seed = 0;
    std::string binary_dir;

    void validate() const {
        if (num_classes < 2) throw ConfigError("dataset needs at least two classes");
        if (source == DatasetSource::binary_dir) {
            if (binary_dir.empty()) throw ConfigError("binary dataset directory not set");
            return;
        }
        if (train_per_class < 1 || test_per_class < 1) throw ConfigError("split sizes must be positive");
        if (channels < 1 || height < 1 || width < 1) throw ConfigError("image shape must be positive");
        if (texture_block < 1 || height % texture_block != 0 || width % texture_block != 0)
            throw ConfigError("texture block must divide the image size");
        if (blobs < 1) throw ConfigError("need at least one blob per class");
        if (amplitude < 0 || texture < 0 || white_noise < 0 || pattern < 0)
            throw ConfigError("dataset noise and signal levels must be non-negative");
    }
};

namespace detail {

struct ClassTemplate {
    std::vector<double> mean;     // c*h*w, peak-normalised to 1
    std::vector<double> pattern;  // +-1
};

inline std::vector<ClassTemplate> class_templates(const DatasetSpec& s, Rng& rng) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::vector<ClassTemplate> out(std::size_t(s.num_classes));
    const std::size_t plane = std::size_t(s.height) * std::size_t(s.width);
    for (auto& ct : out) {
        ct.mean.assign(std::size_t(s.channels) * plane, 0.0);
        for (int b = 0; b < s.blobs; ++b) {
            const double cy = u01(rng) * s.height, cx = u01(rng) * s.width;
            const double r = 1.5 + 2.5 * u01(rng);
            std::vector<double> colour(std::size_t(s.channels));
            for (auto& c : colour) c = 2.0 * u01(rng) - 1.0;
            for (int c = 0; c < s.channels; ++c)
                for (int y = 0; y < s.height; ++y)
                    for (int x = 0; x < s.width; ++x) {
                        const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
                        ct.mean[std::size_t(c) * plane + std::size_t(y * s.width + x)] +=
                            colour[std::size_t(c)] * std::exp(-d2 / (2 * r * r));
                    }
        }
        double peak = 0.0;
        for (double v : ct.mean) peak = std::max(peak, std::abs(v));
        if (peak > 0)
            for (double& v : ct.mean) v /= peak;
        ct.pattern.resize(ct.mean.size());
        for (auto& v : ct.pattern) v = u01(rng) < 0.5 ? -1.0 : 1.0;
    }
    return out;
}

inline Dataset sample_split(const DatasetSpec& s, const std::vector<ClassTemplate>& cts, int per_class, DatasetTag tag,
                            Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Dataset d;
    d.tag = tag;
    d.images = Tensor<float>(s.num_classes * per_class, s.channels, s.height, s.width);
    d.labels.reserve(std::size_t(d.images.n()));
    const int bh = s.height / s.texture_block, bw = s.width / s.texture_block;
    std::vector<double> blocks(std::size_t(s.channels * bh * bw));
    int row = 0;
    for (int c = 0; c < s.num_classes; ++c) {
        const auto& ct = cts[std::size_t(c)];
        for (int i = 0; i < per_class; ++i, ++row) {
            for (auto& v : blocks) v = normal(rng);
            auto img = d.images.sample(row);
            std::size_t k = 0;
            for (int ch = 0; ch < s.channels; ++ch)
                for (int y = 0; y < s.height; ++y)
                    for (int x = 0; x < s.width; ++x, ++k) {
                        const double tex =
                            blocks[std::size_t((ch * bh + y / s.texture_block) * bw + x / s.texture_block)];
                        const double v = 0.5 + s.amplitude * ct.mean[k] + s.pattern * ct.pattern[k] +
                                         s.texture * tex + s.white_noise * normal(rng);
                        img[k] = float(std::clamp(v, 0.0, 1.0));
                    }
            d.labels.push_back(c);
        }
    }
    return d;
}

}  // namespace detail

/// Deterministic (train, test) pair for a synthetic spec. Samples are ordered
/// by class; training code shuffles.
inline std::pair<Dataset, Dataset> generate_synthetic(const DatasetSpec& spec) {
    spec.validate();
    if (spec.source != DatasetSource::synthetic) throw ConfigError("generate_synthetic needs a synthetic spec");
    Rng rng(derive_seed(spec.seed, 0x5157, 0));
    auto cts = detail::class_templates(spec, rng);
    Rng train_rng(derive_seed(spec.seed, 0x5157, 1));
    Rng test_rng(derive_seed(spec.seed, 0x5157, 2));
    return {detail::sample_split(spec, cts, spec.train_per_class, DatasetTag::train, train_rng),
            detail::sample_split(spec, cts, spec.test_per_class, DatasetTag::test, test_rng)};
}

// ---- binary record format --------------------------------------------------

inline constexpr int kBinarySide = 32;
inline constexpr int kBinaryChannels = 3;
inline constexpr std::size_t kBinaryRecord = 1 + std::size_t(kBinaryChannels) * kBinarySide * kBinarySide;

/// Parses a byte buffer of fixed-size records (label byte, then red, green,
/// blue planes, each row-major 32x32).
inline Dataset parse_binary_records(std::span<const unsigned char> bytes, int num_classes,
                                    DatasetTag tag = DatasetTag::train) {
    if (bytes.size() % kBinaryRecord != 0)
        throw FormatError("binary dataset length " + std::to_string(bytes.size()) + " is not a multiple of " +
                          std::to_string(kBinaryRecord));
    const int n = int(bytes.size() / kBinaryRecord);
    Dataset d;
    d.tag = tag;
    d.images = Tensor<float>(n, kBinaryChannels, kBinarySide, kBinarySide);
    d.labels.resize(std::size_t(n));
    for (int i = 0; i < n; ++i) {
        const unsigned char* rec = bytes.data() + std::size_t(i) * kBinaryRecord;
        if (rec[0] >= num_classes)
            throw FormatError("record " + std::to_string(i) + " has label " + std::to_string(int(rec[0])) +
                              " >= class count " + std::to_string(num_classes));
        d.labels[std::size_t(i)] = rec[0];
        auto img = d.images.sample(i);
        for (std::size_t k = 0; k < img.size(); ++k) img[k] = float(rec[1 + k]) / 255.0f;
    }
    return d;
}

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Loads one record file, or every regular `*.bin` file of a directory in
/// name order (optionally only names starting with `prefix`).
inline Dataset load_binary_dataset(const std::filesystem::path& path, int num_classes = 10,
                                   DatasetTag tag = DatasetTag::train, const std::string& prefix = "") {
    std::vector<std::filesystem::path> files;
    if (std::filesystem::is_directory(path)) {
        for (const auto& e : std::filesystem::directory_iterator(path))
            if (e.is_regular_file() && e.path().extension() == ".bin" &&
                e.path().filename().string().rfind(prefix, 0) == 0)
                files.push_back(e.path());
        std::sort(files.begin(), files.end());
        if (files.empty()) throw FormatError("no record files under " + path.string());
    } else {
        files.push_back(path);
    }
    std::vector<unsigned char> all;
    for (const auto& f : files) {
        auto bytes = read_file_bytes(f);
        if (bytes.size() % kBinaryRecord != 0)
            throw FormatError(f.string() + ": length " + std::to_string(bytes.size()) + " is not a multiple of " +
                              std::to_string(kBinaryRecord));
        all.insert(all.end(), bytes.begin(), bytes.end());
    }
    return parse_binary_records(all, num_classes, tag);
}

/// Inverse of parse_binary_records. Pixels are rounded to the nearest byte.
inline std::vector<unsigned char> encode_binary_records(const Dataset& d) {
    if (d.images.c() != kBinaryChannels || d.images.h() != kBinarySide || d.images.w() != kBinarySide)
        throw ShapeError("binary records hold 3x32x32 images");
    std::vector<unsigned char> out;
    out.reserve(std::size_t(d.size()) * kBinaryRecord);
    for (int i = 0; i < d.size(); ++i) {
        const int y = d.labels[std::size_t(i)];
        if (y < 0 || y > 255) throw FormatError("label does not fit in one byte");
        out.push_back((unsigned char)y);
        for (float v : d.images.sample(i))
            out.push_back((unsigned char)std::lround(std::clamp(double(v), 0.0, 1.0) * 255.0));
    }
    return out;
}

inline void write_binary_dataset(const Dataset& d, const std::filesystem::path& path) {
    auto bytes = encode_binary_records(d);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
}

// ---- hashing -----------------------------------------------------------------

inline std::string sha1_hex(std::span<const unsigned char> header, std::span<const unsigned char> body) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr);
    EVP_DigestUpdate(ctx, header.data(), header.size());
    EVP_DigestUpdate(ctx, body.data(), body.size());
    EVP_DigestFinal_ex(ctx, md, &len);
    EVP_MD_CTX_free(ctx);
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
    return os.str();
}

/// Git blob id ("blob <size>\0" + bytes) of an arbitrary byte string.
inline std::string git_blob_hash(std::span<const unsigned char> bytes) {
    const std::string header = "blob " + std::to_string(bytes.size()) + '\0';
    return sha1_hex({reinterpret_cast<const unsigned char*>(header.data()), header.size()}, bytes);
}

/// Content hash of a dataset: git blob id of shape, int32 labels and raw
/// little-endian float32 pixels.
inline std::string dataset_hash(const Dataset& d) {
    std::vector<unsigned char> buf;
    auto put32 = [&](std::uint32_t v) {
        for (int b = 0; b < 4; ++b) buf.push_back((unsigned char)(v >> (8 * b)));
    };
    for (int s : d.images.shape()) put32(std::uint32_t(s));
    for (int y : d.labels) put32(std::uint32_t(y));
    for (float v : d.images.values()) {
        std::uint32_t u;
        std::memcpy(&u, &v, 4);
        put32(u);
    }
    return git_blob_hash(buf);
}

template <typename T>
std::string tensor_hash(const Tensor<T>& t) {
    std::vector<unsigned char> buf(t.size() * sizeof(T));
    std::memcpy(buf.data(), t.data(), buf.size());
    return git_blob_hash(buf);
}

}  // namespace fatlab
