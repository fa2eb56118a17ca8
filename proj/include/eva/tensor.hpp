#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace eva::ag {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// Dense 64-bit float array, row-major. Rank 0 is a scalar (one element).
struct Tensor {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;

    Tensor() : data(1, 0.0) {}
    Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (shape_numel(shape) != data.size())
            throw std::invalid_argument("Tensor: shape " + shape_str(shape) + " does not match " +
                                        std::to_string(data.size()) + " values");
    }

    static Tensor zeros(Shape s) {
        std::size_t n = shape_numel(s);
        return Tensor(std::move(s), std::vector<double>(n, 0.0));
    }
    static Tensor full(Shape s, double v) {
        std::size_t n = shape_numel(s);
        return Tensor(std::move(s), std::vector<double>(n, v));
    }
    static Tensor scalar(double v) { return Tensor({}, {v}); }
    static Tensor row(std::vector<double> d) {
        Shape s{d.size()};
        return Tensor(std::move(s), std::move(d));
    }
    static Tensor matrix(std::size_t r, std::size_t c, std::vector<double> d) {
        return Tensor({r, c}, std::move(d));
    }

    std::size_t rank() const { return shape.size(); }
    std::size_t size() const { return data.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }

    double& at(std::size_t i) { return data[i]; }
    double at(std::size_t i) const { return data[i]; }
    double& at(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

// --- raw matmul kernels (row-major, accumulate into c) ---

// c[m,n] += a[m,k] b[k,n]
inline void matmul_acc(const double* a, const double* b, double* c,
                       std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        double* ci = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// da[m,k] += g[m,n] b[k,n]^T
inline void matmul_bt_acc(const double* g, const double* b, double* da,
                          std::size_t m, std::size_t n, std::size_t k) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* gi = g + i * n;
        double* di = da + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double* bp = b + p * n;
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += gi[j] * bp[j];
            di[p] += s;
        }
    }
}

// db[k,n] += a[m,k]^T g[m,n]
inline void matmul_at_acc(const double* a, const double* g, double* db,
                          std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        const double* gi = g + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            double* dp = db + p * n;
            for (std::size_t j = 0; j < n; ++j) dp[j] += av * gi[j];
        }
    }
}

}  // namespace eva::ag
