#pragma once

// Reference implementations written independently of the library, used as test oracles.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

namespace oracle {

struct Grid {
    std::size_t h = 0, w = 0;
    std::vector<double> v;
    double at(long long y, long long x) const {
        y = std::clamp<long long>(y, 0, static_cast<long long>(h) - 1);
        x = std::clamp<long long>(x, 0, static_cast<long long>(w) - 1);
        return v[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)];
    }
};

inline std::vector<double> random_values(std::size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> out(n);
    for (double& x : out) x = u(rng);
    return out;
}

// Weighted sum of the four neighbours, weights from the tent function.
inline double bilinear(const Grid& g, double x, double y) {
    x = std::clamp(x, 0.0, double(g.w - 1));
    y = std::clamp(y, 0.0, double(g.h - 1));
    double total = 0.0;
    for (long long cy = 0; cy < static_cast<long long>(g.h); ++cy) {
        const double wy = std::max(0.0, 1.0 - std::abs(y - double(cy)));
        if (wy == 0.0) continue;
        for (long long cx = 0; cx < static_cast<long long>(g.w); ++cx) {
            const double wx = std::max(0.0, 1.0 - std::abs(x - double(cx)));
            total += wx * wy * g.at(cy, cx);
        }
    }
    return total;
}

// Non-separable 2-D Gaussian convolution, radius ceil(3 sigma), edge replication.
inline Grid dense_blur(const Grid& g, double sigma) {
    if (sigma == 0.0) return g;
    const long long r = static_cast<long long>(std::ceil(3.0 * sigma));
    std::vector<double> k;
    double total = 0.0;
    for (long long i = -r; i <= r; ++i) {
        for (long long j = -r; j <= r; ++j) {
            const double v = std::exp(-double(i * i + j * j) / (2.0 * sigma * sigma));
            k.push_back(v);
            total += v;
        }
    }
    Grid out = g;
    const long long n = 2 * r + 1;
    for (long long y = 0; y < static_cast<long long>(g.h); ++y) {
        for (long long x = 0; x < static_cast<long long>(g.w); ++x) {
            double acc = 0.0;
            for (long long i = -r; i <= r; ++i) {
                for (long long j = -r; j <= r; ++j) acc += k[(i + r) * n + (j + r)] / total * g.at(y + i, x + j);
            }
            out.v[y * g.w + x] = acc;
        }
    }
    return out;
}

// Path cells straight from the interpolation formula, rounded half away from zero.
inline std::vector<std::pair<int, int>> path_cells(int x0, int y0, int x1, int y1) {
    const int n = std::max(std::abs(x1 - x0), std::abs(y1 - y0)) + 1;
    std::vector<std::pair<int, int>> cells;
    for (int k = 0; k < n; ++k) {
        const double a = n == 1 ? 0.0 : double(k) / double(n - 1);
        const double x = n == 1 ? x0 : x0 + double(k) * (x1 - x0) / double(n - 1);
        const double y = n == 1 ? y0 : y0 + double(k) * (y1 - y0) / double(n - 1);
        (void)a;
        cells.emplace_back(static_cast<int>(std::round(x)), static_cast<int>(std::round(y)));
    }
    return cells;
}

// Central difference of f along coordinate i of x.
inline double central_difference(const std::function<double(const std::vector<double>&)>& f, std::vector<double> x,
                                 std::size_t i, double h = 1e-4) {
    const double x0 = x[i];
    x[i] = x0 + h;
    const double fp = f(x);
    x[i] = x0 - h;
    const double fm = f(x);
    return (fp - fm) / (2.0 * h);
}

// Relative agreement with an absolute floor for components that are essentially zero.
inline bool gradient_close(double analytic, double numeric, double rel = 1e-4, double floor = 1e-7) {
    const double diff = std::abs(analytic - numeric);
    return diff <= rel * std::max(std::abs(analytic), std::abs(numeric)) || diff <= floor;
}

}  // namespace oracle
