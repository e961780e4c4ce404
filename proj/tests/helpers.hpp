#pragma once

// Shared utilities for the test suite: random tensors, conversions to the
// oracle matrix type, and a central-difference gradient checker.

#include <functional>
#include <string>
#include <vector>

#include "capsrec/rng.hpp"
#include "capsrec/tensor.hpp"
#include "oracles.hpp"

namespace testutil {

using capsrec::NoGradGuard;
using capsrec::Rng;
using capsrec::Tensor;

inline Tensor random_tensor(int rows, int cols, Rng& rng, double lo = -1.0, double hi = 1.0,
                            bool requires_grad = false) {
    Tensor t = Tensor::zeros(rows, cols, requires_grad);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) t.at(i, j) = rng.uniform(lo, hi);
    return t;
}

inline oracle::Mat to_mat(const Tensor& t) {
    oracle::Mat m(t.rows(), oracle::Row(t.cols()));
    for (int i = 0; i < t.rows(); ++i)
        for (int j = 0; j < t.cols(); ++j) m[i][j] = t.at(i, j);
    return m;
}

inline oracle::Row to_row(const Tensor& t) {
    oracle::Row r;
    for (int i = 0; i < t.rows(); ++i)
        for (int j = 0; j < t.cols(); ++j) r.push_back(t.at(i, j));
    return r;
}

inline Tensor from_mat(const oracle::Mat& m, bool requires_grad = false) {
    Tensor t = Tensor::zeros(static_cast<int>(m.size()), static_cast<int>(m[0].size()),
                             requires_grad);
    for (size_t i = 0; i < m.size(); ++i)
        for (size_t j = 0; j < m[0].size(); ++j)
            t.at(static_cast<int>(i), static_cast<int>(j)) = m[i][j];
    return t;
}

inline double max_abs_diff(const Tensor& t, const oracle::Mat& m) {
    double worst = 0;
    for (int i = 0; i < t.rows(); ++i)
        for (int j = 0; j < t.cols(); ++j)
            worst = std::max(worst, std::fabs(t.at(i, j) - m[i][j]));
    return worst;
}

// Error scaled by max(1, |a|, |b|): relative for large values, absolute for
// small ones, the usual gradient-check normalization.
inline double rel_err(double a, double b) {
    return std::fabs(a - b) / std::max({1.0, std::fabs(a), std::fabs(b)});
}

// Central-difference check of d(loss)/d(x) against recorded gradients. The
// closure must rebuild the whole computation from current tensor values.
// Returns the worst rel_err over all entries of x.
inline double fd_check(Tensor x, const std::function<Tensor()>& loss, double h = 1e-5) {
    capsrec::Tape::get().clear();
    x.zero_grad();
    Tensor y = loss();
    capsrec::backward(y);
    std::vector<double> analytic(static_cast<size_t>(x.rows()) * x.cols());
    for (int i = 0; i < x.rows(); ++i)
        for (int j = 0; j < x.cols(); ++j)
            analytic[static_cast<size_t>(i) * x.cols() + j] = x.grad_at(i, j);

    double worst = 0;
    for (int i = 0; i < x.rows(); ++i) {
        for (int j = 0; j < x.cols(); ++j) {
            const double orig = x.at(i, j);
            double up, down;
            {
                NoGradGuard g;
                x.at(i, j) = orig + h;
                up = loss().item();
                x.at(i, j) = orig - h;
                down = loss().item();
                x.at(i, j) = orig;
            }
            const double fd = (up - down) / (2 * h);
            worst = std::max(worst,
                             rel_err(analytic[static_cast<size_t>(i) * x.cols() + j], fd));
        }
    }
    return worst;
}

}  // namespace testutil
