#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace sdparse {

/// Row-major dense matrix of doubles.
struct Mat {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Mat() = default;
    Mat(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    double* row(std::size_t r) { return data.data() + r * cols; }
    const double* row(std::size_t r) const { return data.data() + r * cols; }

    std::size_t size() const { return data.size(); }
    void fill(double v) { std::fill(data.begin(), data.end(), v); }

    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
};

/// Row-major order-3 tensor, innermost axis contiguous.
struct Tensor3 {
    std::size_t d0 = 0, d1 = 0, d2 = 0;
    std::vector<double> data;

    Tensor3() = default;
    Tensor3(std::size_t a, std::size_t b, std::size_t c, double fill = 0.0)
        : d0(a), d1(b), d2(c), data(a * b * c, fill) {}

    double& operator()(std::size_t i, std::size_t j, std::size_t k) {
        return data[(i * d1 + j) * d2 + k];
    }
    double operator()(std::size_t i, std::size_t j, std::size_t k) const {
        return data[(i * d1 + j) * d2 + k];
    }

    double* cell(std::size_t i, std::size_t j) { return data.data() + (i * d1 + j) * d2; }
    const double* cell(std::size_t i, std::size_t j) const {
        return data.data() + (i * d1 + j) * d2;
    }

    std::size_t size() const { return data.size(); }
    void fill(double v) { std::fill(data.begin(), data.end(), v); }

    bool same_shape(const Tensor3& o) const {
        return d0 == o.d0 && d1 == o.d1 && d2 == o.d2;
    }
};

inline void require_same_shape(const Tensor3& a, const Tensor3& b, const char* what) {
    if (!a.same_shape(b)) throw std::invalid_argument(std::string("shape mismatch: ") + what);
}

/// Deterministic uniform draws on [-scale, scale]. Wraps a 64-bit engine and
/// maps bits to doubles directly so results do not depend on libstdc++'s
/// distribution internals.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ULL) {}

    std::uint64_t next_u64() {
        // splitmix64
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1).
    double next_unit() {
        return static_cast<double>(next_u64() >> 11) * (1.0 / 9007199254740992.0);
    }

    /// Uniform in [-scale, scale].
    double next_sym(double scale) { return (2.0 * next_unit() - 1.0) * scale; }

    /// Uniform integer in [0, n).
    std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

  private:
    std::uint64_t state_;
};

/// Compensated (Kahan) accumulator array; order-insensitive to ~1e-16 per term.
struct KahanBuffer {
    std::vector<double> sum;
    std::vector<double> carry;

    explicit KahanBuffer(std::size_t n = 0) : sum(n, 0.0), carry(n, 0.0) {}

    void resize(std::size_t n) {
        sum.assign(n, 0.0);
        carry.assign(n, 0.0);
    }

    void add(std::size_t i, double v) {
        double y = v - carry[i];
        double t = sum[i] + y;
        carry[i] = (t - sum[i]) - y;
        sum[i] = t;
    }
};

}  // namespace sdparse
