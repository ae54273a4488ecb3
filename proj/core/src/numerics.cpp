#include "bnnib/numerics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#if defined(__AVX512F__)
#include <immintrin.h>
#endif

namespace bnnib {

namespace {

std::string shape_str(const Matrix& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

// Every product-accumulate in the kernels goes through here so the main and
// edge paths round identically (the build disables implicit contraction).
inline double madd(double a, double b, double acc) noexcept {
#if defined(__FMA__)
    return std::fma(a, b, acc);
#else
    return acc + a * b;
#endif
}

constexpr std::size_t kRowBlock = 8;
constexpr std::size_t kColBlock = 16;
// Rows of the packed panel per pass; 256 x 16 doubles stay in L1.
constexpr std::size_t kDepthBlock = 256;

// C[i0:i0+R, j0:j0+16] += A[i0:i0+R, k0:k1] * panel. The first depth block
// starts from zero, later ones resume from C, so each entry is one fused
// multiply-add chain over ascending k regardless of blocking.
template <std::size_t R>
void kernel_rx16_generic(const Matrix& a, const double* panel, std::size_t i0, std::size_t j0, std::size_t k0, std::size_t k1,
                 Matrix& c) {
    std::array<std::array<double, kColBlock>, R> acc{};
    std::array<const double*, R> rows;
    for (std::size_t r = 0; r < R; ++r) {
        rows[r] = a.row(i0 + r).data();
        if (k0 > 0) std::copy_n(c.row(i0 + r).begin() + static_cast<std::ptrdiff_t>(j0), kColBlock, acc[r].begin());
    }
    for (std::size_t k = k0; k < k1; ++k) {
        const double* b = panel + (k - k0) * kColBlock;
        for (std::size_t r = 0; r < R; ++r) {
            const double x = rows[r][k];
            for (std::size_t j = 0; j < kColBlock; ++j) acc[r][j] = madd(x, b[j], acc[r][j]);
        }
    }
    for (std::size_t r = 0; r < R; ++r) {
        std::copy(acc[r].begin(), acc[r].end(), c.row(i0 + r).begin() + static_cast<std::ptrdiff_t>(j0));
    }
}

#if defined(__AVX512F__)
// Same arithmetic as the generic kernel: lane j of acc[r] is C[i0+r, j0+j].
template <std::size_t R>
void kernel_rx16_avx512(const Matrix& a, const double* panel, std::size_t i0, std::size_t j0, std::size_t k0,
                        std::size_t k1, Matrix& c) {
    __m512d lo[R], hi[R];
    const double* rows[R];
    for (std::size_t r = 0; r < R; ++r) {
        rows[r] = a.row(i0 + r).data();
        double* out = c.row(i0 + r).data() + j0;
        lo[r] = k0 > 0 ? _mm512_loadu_pd(out) : _mm512_setzero_pd();
        hi[r] = k0 > 0 ? _mm512_loadu_pd(out + 8) : _mm512_setzero_pd();
    }
    for (std::size_t k = k0; k < k1; ++k) {
        const double* b = panel + (k - k0) * kColBlock;
        const __m512d b_lo = _mm512_loadu_pd(b), b_hi = _mm512_loadu_pd(b + 8);
        for (std::size_t r = 0; r < R; ++r) {
            const __m512d x = _mm512_set1_pd(rows[r][k]);
            lo[r] = _mm512_fmadd_pd(x, b_lo, lo[r]);
            hi[r] = _mm512_fmadd_pd(x, b_hi, hi[r]);
        }
    }
    for (std::size_t r = 0; r < R; ++r) {
        double* out = c.row(i0 + r).data() + j0;
        _mm512_storeu_pd(out, lo[r]);
        _mm512_storeu_pd(out + 8, hi[r]);
    }
}
#endif

template <std::size_t R>
void kernel_rx16(const Matrix& a, const double* panel, std::size_t i0, std::size_t j0, std::size_t k0, std::size_t k1,
                 Matrix& c) {
#if defined(__AVX512F__)
    kernel_rx16_avx512<R>(a, panel, i0, j0, k0, k1, c);
#else
    kernel_rx16_generic<R>(a, panel, i0, j0, k0, k1, c);
#endif
}


}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill) : rows_(rows), cols_(cols) {
    if (rows == 0 || cols == 0) throw ShapeError("matrix dimensions must be positive, got " + std::to_string(rows) + "x" + std::to_string(cols));
    data_.assign(rows * cols, fill);
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (rows == 0 || cols == 0) throw ShapeError("matrix dimensions must be positive");
    if (data_.size() != rows * cols) {
        throw ShapeError("matrix data length " + std::to_string(data_.size()) + " does not match " +
                         std::to_string(rows) + "x" + std::to_string(cols));
    }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows)
    : rows_(rows.size()), cols_(rows.size() ? rows.begin()->size() : 0) {
    if (rows_ == 0 || cols_ == 0) throw ShapeError("matrix dimensions must be positive");
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
        if (r.size() != cols_) throw ShapeError("ragged matrix literal");
        data_.insert(data_.end(), r.begin(), r.end());
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

bool Matrix::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Matrix Matrix::gather_rows(std::span<const std::size_t> indices) const {
    if (indices.empty()) throw ShapeError("gather_rows needs at least one index");
    Matrix out(indices.size(), cols_);
    for (std::size_t r = 0; r < indices.size(); ++r) {
        if (indices[r] >= rows_) throw ShapeError("row index out of range");
        const auto src = row(indices[r]);
        std::copy(src.begin(), src.end(), out.row(r).begin());
    }
    return out;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) throw ShapeError("matmul: " + shape_str(a) + " times " + shape_str(b));
    const std::size_t m = a.rows(), k_dim = a.cols(), n = b.cols();
    Matrix c(m, n);

    const std::size_t full_cols = n - n % kColBlock;
    const std::size_t full_rows = m - m % kRowBlock;
    std::vector<double> panel(std::min(k_dim, kDepthBlock) * kColBlock);
    for (std::size_t j0 = 0; j0 < full_cols; j0 += kColBlock) {
        for (std::size_t k0 = 0; k0 < k_dim; k0 += kDepthBlock) {
            const std::size_t k1 = std::min(k_dim, k0 + kDepthBlock);
            for (std::size_t k = k0; k < k1; ++k) {
                const double* src = b.row(k).data() + j0;
                std::copy(src, src + kColBlock, panel.data() + (k - k0) * kColBlock);
            }
            std::size_t i = 0;
            for (; i < full_rows; i += kRowBlock) kernel_rx16<kRowBlock>(a, panel.data(), i, j0, k0, k1, c);
            for (; i < m; ++i) kernel_rx16<1>(a, panel.data(), i, j0, k0, k1, c);
        }
    }
    if (full_cols < n) {
        for (std::size_t i = 0; i < m; ++i) {
            const auto ar = a.row(i);
            for (std::size_t j = full_cols; j < n; ++j) {
                double acc = 0.0;
                for (std::size_t k = 0; k < k_dim; ++k) acc = madd(ar[k], b(k, j), acc);
                c(i, j) = acc;
            }
        }
    }
    return c;
}

Matrix transpose(const Matrix& a) {
    Matrix t(a.cols(), a.rows());
    for (std::size_t r = 0; r < a.rows(); ++r) {
        for (std::size_t c = 0; c < a.cols(); ++c) t(c, r) = a(r, c);
    }
    return t;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) throw ShapeError("matmul_tn: transpose(" + shape_str(a) + ") times " + shape_str(b));
    return matmul(transpose(a), b);
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) throw ShapeError("matmul_nt: " + shape_str(a) + " times transpose(" + shape_str(b) + ")");
    return matmul(a, transpose(b));
}

std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

RngStream::RngStream(std::uint64_t seed) noexcept : seed_(seed), key_(mix64(seed ^ 0x5851F42D4C957F2DULL)) {}

RngStream RngStream::split(std::uint64_t stream_id) const noexcept {
    return RngStream(seed_, mix64(key_ ^ mix64(stream_id + 0x632BE59BD9B4E019ULL)));
}

std::uint64_t RngStream::next_u64() noexcept {
    return mix64(key_ + 0x9E3779B97F4A7C15ULL * (++counter_));
}

double RngStream::uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform(double lo, double hi) noexcept {
    return lo + (hi - lo) * uniform();
}

std::uint64_t RngStream::below(std::uint64_t n) noexcept {
    // Rejection on the top of the range keeps the draw unbiased.
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
}

Matrix glorot_init(RngStream& rng, std::size_t fan_in, std::size_t fan_out) {
    if (fan_in == 0 || fan_out == 0) throw ShapeError("glorot_init: fan_in and fan_out must be positive");
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Matrix w(fan_in, fan_out);
    for (double& v : w.data()) v = rng.uniform(-limit, limit);
    return w;
}

}  // namespace bnnib
