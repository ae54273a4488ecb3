#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <utility>
#include <vector>

#include "bnnib/errors.hpp"

namespace bnnib {

/// Dense row-major matrix of doubles. Always at least 1x1.
class Matrix {
public:
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
    Matrix(std::initializer_list<std::initializer_list<double>> rows);

    static Matrix identity(std::size_t n);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }

    bool all_finite() const noexcept;

    /// Rows selected by index, in the given order.
    Matrix gather_rows(std::span<const std::size_t> indices) const;

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_;
    std::size_t cols_;
    std::vector<double> data_;
};

/// a x b. For every output element the shared dimension is reduced in ascending order.
Matrix matmul(const Matrix& a, const Matrix& b);
/// transpose(a) x b without the caller materializing the transpose.
Matrix matmul_tn(const Matrix& a, const Matrix& b);
/// a x transpose(b).
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);

/// Counter-based generator: draw i of a stream is a pure function of (key, i),
/// so streams split by id never share entropy and never depend on call interleaving.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed) noexcept;

    /// Independent child stream; the parent is not advanced.
    RngStream split(std::uint64_t stream_id) const noexcept;

    std::uint64_t next_u64() noexcept;
    /// Uniform on [0, 1) with 53 random bits.
    double uniform() noexcept;
    double uniform(double lo, double hi) noexcept;
    /// Unbiased integer in [0, n). n must be positive.
    std::uint64_t below(std::uint64_t n) noexcept;

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t counter() const noexcept { return counter_; }

    template <typename T>
    void shuffle(std::span<T> items) noexcept {
        for (std::size_t i = items.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    RngStream(std::uint64_t seed, std::uint64_t key) noexcept : seed_(seed), key_(key) {}

    std::uint64_t seed_;
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

/// SplitMix64 finalizer; also used to derive per-epoch stream ids.
std::uint64_t mix64(std::uint64_t x) noexcept;

/// Entries i.i.d. uniform on +-sqrt(6 / (fan_in + fan_out)).
Matrix glorot_init(RngStream& rng, std::size_t fan_in, std::size_t fan_out);

}  // namespace bnnib
