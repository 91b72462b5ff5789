#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace fatlab {

// Error hierarchy shared by every module.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    using Error::Error;
};

/// Raised when a loss or gradient stops being finite. `index` names the
/// offending sample, attack step, or batch depending on the raising site.
class NonFiniteError : public Error {
public:
    NonFiniteError(const std::string& what, std::size_t index)
        : Error(what + " (index " + std::to_string(index) + ")"), index_(index) {}
    std::size_t index() const noexcept { return index_; }

private:
    std::size_t index_;
};

/// Dense sample x channel x height x width tensor.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    Tensor(int n, int c, int h, int w, T fill = T(0))
        : shape_{n, c, h, w}, data_(checked_size(n, c, h, w), fill) {}

    static Tensor like(const Tensor& other, T fill = T(0)) {
        return Tensor(other.n(), other.c(), other.h(), other.w(), fill);
    }

    int n() const noexcept { return shape_[0]; }
    int c() const noexcept { return shape_[1]; }
    int h() const noexcept { return shape_[2]; }
    int w() const noexcept { return shape_[3]; }
    const std::array<int, 4>& shape() const noexcept { return shape_; }

    std::size_t size() const noexcept { return data_.size(); }
    std::size_t plane() const noexcept { return std::size_t(h()) * std::size_t(w()); }
    std::size_t sample_size() const noexcept { return std::size_t(c()) * plane(); }
    bool empty() const noexcept { return data_.empty(); }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }

    std::span<T> sample(int i) noexcept { return {data_.data() + i * sample_size(), sample_size()}; }
    std::span<const T> sample(int i) const noexcept {
        return {data_.data() + i * sample_size(), sample_size()};
    }
    std::span<T> channel(int i, int k) noexcept {
        return {data_.data() + i * sample_size() + k * plane(), plane()};
    }
    std::span<const T> channel(int i, int k) const noexcept {
        return {data_.data() + i * sample_size() + k * plane(), plane()};
    }

    T& operator()(int i, int k, int y, int x) noexcept {
        return data_[((std::size_t(i) * c() + k) * h() + y) * w() + x];
    }
    const T& operator()(int i, int k, int y, int x) const noexcept {
        return data_[((std::size_t(i) * c() + k) * h() + y) * w() + x];
    }
    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    /// Copies samples [first, first + count) into a new tensor.
    Tensor slice(int first, int count) const {
        if (first < 0 || count < 0 || first + count > n()) throw ShapeError("tensor slice out of range");
        Tensor out(count, c(), h(), w());
        std::copy_n(data_.begin() + first * sample_size(), count * sample_size(), out.data_.begin());
        return out;
    }

    /// Gathers the listed samples into a new tensor.
    Tensor gather(std::span<const int> rows) const {
        Tensor out(int(rows.size()), c(), h(), w());
        for (std::size_t r = 0; r < rows.size(); ++r) {
            if (rows[r] < 0 || rows[r] >= n()) throw ShapeError("tensor gather index out of range");
            std::copy_n(data_.begin() + rows[r] * sample_size(), sample_size(),
                        out.data_.begin() + r * sample_size());
        }
        return out;
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(n(), c(), h(), w());
        std::transform(data_.begin(), data_.end(), out.data(), [](T v) { return static_cast<U>(v); });
        return out;
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    static std::size_t checked_size(int n, int c, int h, int w) {
        if (n < 0 || c <= 0 || h <= 0 || w <= 0) throw ShapeError("tensor dimensions must be positive");
        return std::size_t(n) * std::size_t(c) * std::size_t(h) * std::size_t(w);
    }

    std::array<int, 4> shape_{0, 1, 1, 1};
    std::vector<T> data_;
};

template <typename T>
T max_abs(std::span<const T> v) {
    T m = T(0);
    for (T x : v) m = std::max(m, std::abs(x));
    return m;
}

template <typename T>
bool all_finite(std::span<const T> v) {
    return std::all_of(v.begin(), v.end(), [](T x) { return std::isfinite(x); });
}

/// sign(0) = 0.
template <typename T>
constexpr T sign(T v) noexcept {
    return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0));
}

// Seed derivation for independent deterministic random streams.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) noexcept {
    return splitmix64(splitmix64(splitmix64(base) ^ a) ^ (b * 0xd1342543de82ef95ULL));
}

using Rng = std::mt19937_64;

}  // namespace fatlab
