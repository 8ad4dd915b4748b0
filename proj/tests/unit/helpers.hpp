#pragma once

#include <sparsecl/model.hpp>
#include <sparsecl/score_stats.hpp>

#include <cmath>
#include <functional>
#include <random>

namespace unit {

using sparsecl::Index;
using sparsecl::Matrix;
using sparsecl::Vector;

inline double central(const std::function<double(double)>& f, double x, double h) {
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

// log density of a standard bivariate normal with correlation r
inline double bivariate_log_density(double r, double x, double y) {
    const double q = 1.0 - r * r;
    return -std::log(2.0 * M_PI) - 0.5 * std::log(q) - (x * x - 2.0 * r * x * y + y * y) / (2.0 * q);
}

inline Matrix random_psd(std::mt19937_64& rng, Index m, Index n) {
    std::normal_distribution<double> z(0.0, 1.0);
    Matrix s(n, m);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < m; ++j) s(i, j) = z(rng);
    return s.transpose() * s / static_cast<double>(n);
}

inline sparsecl::ScoreCovariance<double> covariance(const Matrix& a) {
    return sparsecl::ScoreCovariance<double>(a, sparsecl::CovarianceSource::Population);
}

inline Matrix abs_difference_delta(Index d) {
    Matrix delta(d, d);
    for (Index j = 0; j < d; ++j)
        for (Index k = 0; k < d; ++k) delta(j, k) = std::abs(static_cast<double>(j - k));
    return delta;
}

}  // namespace unit
