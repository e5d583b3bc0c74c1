#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Core>

#include "thinrod/errors.hpp"

namespace thinrod::fd {

// fourth-order first derivative on a uniform grid, one-sided five-point at the ends
template <typename Vec>
Vec derivative(const Vec& f, double h) {
    const auto n = static_cast<std::ptrdiff_t>(f.size());
    if (n < 5) throw Error(ErrorKind::InvalidCurve, "need at least 5 samples for differentiation");
    Vec d = f;
    const double c = 1.0 / (12.0 * h);
    auto at = [&](std::ptrdiff_t i) { return f[static_cast<std::size_t>(i)]; };
    auto put = [&](std::ptrdiff_t i, auto v) { d[static_cast<std::size_t>(i)] = v; };
    put(0, c * (-25.0 * at(0) + 48.0 * at(1) - 36.0 * at(2) + 16.0 * at(3) - 3.0 * at(4)));
    put(1, c * (-3.0 * at(0) - 10.0 * at(1) + 18.0 * at(2) - 6.0 * at(3) + at(4)));
    for (std::ptrdiff_t i = 2; i < n - 2; ++i)
        put(i, c * (at(i - 2) - 8.0 * at(i - 1) + 8.0 * at(i + 1) - at(i + 2)));
    const auto m = n - 1;
    put(m - 1, -c * (-3.0 * at(m) - 10.0 * at(m - 1) + 18.0 * at(m - 2) - 6.0 * at(m - 3) + at(m - 4)));
    put(m, -c * (-25.0 * at(m) + 48.0 * at(m - 1) - 36.0 * at(m - 2) + 16.0 * at(m - 3) - 3.0 * at(m - 4)));
    return d;
}

} // namespace thinrod::fd
