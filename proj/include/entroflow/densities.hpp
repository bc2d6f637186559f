#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "entroflow/grid.hpp"

namespace entroflow {

/// Named density families, sampled at nodes and renormalized by the trapezoid rule.
namespace densities {

inline double gaussian_pdf(double x, double mean, double variance)
{
    const double z = x - mean;
    return std::exp(-0.5 * z * z / variance) / std::sqrt(2.0 * std::numbers::pi * variance);
}

inline DensityField gaussian(const Grid1D& g, double mean, double variance)
{
    if (!(variance > 0.0)) fail(ErrorKind::invalid_argument, "gaussian variance must be positive");
    return normalize(sample(g, [&](double x) { return gaussian_pdf(x, mean, variance); }), g);
}

struct MixtureComponent {
    double weight = 1.0;
    double mean = 0.0;
    double variance = 1.0;
};

inline DensityField mixture(const Grid1D& g, const std::vector<MixtureComponent>& parts)
{
    if (parts.empty()) fail(ErrorKind::invalid_argument, "mixture needs at least one component");
    for (const auto& c : parts)
        if (!(c.weight > 0.0) || !(c.variance > 0.0))
            fail(ErrorKind::invalid_argument, "mixture weights and variances must be positive");
    return normalize(sample(g,
                            [&](double x) {
                                double s = 0.0;
                                for (const auto& c : parts) s += c.weight * gaussian_pdf(x, c.mean, c.variance);
                                return s;
                            }),
                     g);
}

inline DensityField uniform(const Grid1D& g, double a, double b)
{
    if (!(a < b)) fail(ErrorKind::invalid_argument, "uniform requires a < b");
    return normalize(sample(g, [&](double x) { return (x >= a && x <= b) ? 1.0 / (b - a) : 0.0; }), g);
}

}  // namespace densities
}  // namespace entroflow
