#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace cdcd {

// Dense row-major matrix of doubles. A 1xN Mat doubles as a vector.
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * static_cast<size_t>(c), 0.0) {}
    Mat(int r, int c, double fill)
        : rows(r), cols(c), a(static_cast<size_t>(r) * static_cast<size_t>(c), fill) {}

    double& operator()(int r, int c) { return a[static_cast<size_t>(r) * cols + c]; }
    double operator()(int r, int c) const { return a[static_cast<size_t>(r) * cols + c]; }

    double* row_ptr(int r) { return a.data() + static_cast<size_t>(r) * cols; }
    const double* row_ptr(int r) const { return a.data() + static_cast<size_t>(r) * cols; }
    std::span<double> row(int r) { return {row_ptr(r), static_cast<size_t>(cols)}; }
    std::span<const double> row(int r) const { return {row_ptr(r), static_cast<size_t>(cols)}; }

    size_t size() const { return a.size(); }
    void zero() { std::fill(a.begin(), a.end(), 0.0); }
    void resize(int r, int c) {
        rows = r;
        cols = c;
        a.assign(static_cast<size_t>(r) * static_cast<size_t>(c), 0.0);
    }
};

// C = A * B
inline void matmul(const Mat& A, const Mat& B, Mat& C) {
    assert(A.cols == B.rows);
    C.resize(A.rows, B.cols);
    const int m = A.cols, n = B.cols;
    for (int i = 0; i < A.rows; ++i) {
        double* c = C.row_ptr(i);
        const double* a = A.row_ptr(i);
        for (int k = 0; k < m; ++k) {
            const double aik = a[k];
            const double* b = B.row_ptr(k);
            for (int j = 0; j < n; ++j) c[j] += aik * b[j];
        }
    }
}

// C += A^T * B (weight gradients: dW += X^T * dY)
inline void matmul_at_b_acc(const Mat& A, const Mat& B, Mat& C) {
    assert(A.rows == B.rows && C.rows == A.cols && C.cols == B.cols);
    const int n = B.cols;
    for (int k = 0; k < A.rows; ++k) {
        const double* a = A.row_ptr(k);
        const double* b = B.row_ptr(k);
        for (int i = 0; i < A.cols; ++i) {
            double* c = C.row_ptr(i);
            const double aki = a[i];
            for (int j = 0; j < n; ++j) c[j] += aki * b[j];
        }
    }
}

// C = A * B^T (input gradients: dX = dY * W^T)
inline void matmul_a_bt(const Mat& A, const Mat& B, Mat& C) {
    assert(A.cols == B.cols);
    C.resize(A.rows, B.rows);
    for (int i = 0; i < A.rows; ++i) {
        const double* a = A.row_ptr(i);
        double* c = C.row_ptr(i);
        for (int j = 0; j < B.rows; ++j) {
            const double* b = B.row_ptr(j);
            double s = 0.0;
            for (int k = 0; k < A.cols; ++k) s += a[k] * b[k];
            c[j] = s;
        }
    }
}

inline bool all_finite(std::span<const double> v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

inline bool all_finite(const Mat& m) { return all_finite(std::span<const double>(m.a)); }

inline double dot(std::span<const double> x, std::span<const double> y) {
    assert(x.size() == y.size());
    double s = 0.0;
    for (size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
    return s;
}

inline double l2_norm(std::span<const double> x) { return std::sqrt(dot(x, x)); }

// y += alpha * x
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    assert(x.size() == y.size());
    for (size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

}  // namespace cdcd
