#pragma once

#include <optional>
#include <string>
#include <vector>

#include "difflab/core.hpp"
#include "difflab/diffusion.hpp"
#include "difflab/distributions.hpp"

namespace difflab {

struct ErrorCurve {
    std::vector<double> times;
    std::vector<double> values;
    std::string label;
    /// Monte-Carlo standard errors, when the estimator provides them.
    std::vector<double> std_errors;
};

/// values[i] = ||a(x, t_i) - b(x, t_i)||, or |a_c - b_c| when component is set.
ErrorCurve pointwise_error(const VectorField& a, const VectorField& b, std::span<const double> x,
                           std::span<const double> times, std::optional<std::size_t> component = std::nullopt);

/// (1/n) sum ||a(X_i, t) - b(X_i, t)||^2 over forward samples X_i ~ p(., t).
/// Both fields see the same samples.
double l2_error_over_p(const VectorField& a, const VectorField& b, const DataDistribution& dist, double t,
                       std::size_t n, std::uint64_t seed, std::optional<std::size_t> component = std::nullopt);

struct Absorption {
    std::vector<std::size_t> counts;
    std::vector<double> frequencies;
    std::size_t unabsorbed = 0;
    std::size_t total = 0;
};

/// Assigns each sample to its nearest atom if within tol.
Absorption absorption_frequencies(const Batch& samples, const PointCloud& cloud, double tol = 1e-2);

/// values[i] = ||t_i S(x, t_i) - (x - y_x)|| with y_x the nearest support point.
ErrorCurve singularity_profile(const DriftProvider& drift, const DataDistribution& dist, std::span<const double> x,
                               std::span<const double> times);

/// values[i] ~ E||X_0 - f(X_t, t_i)||^2 from n forward pairs per time.
ErrorCurve lambda_true_estimate(const DataDistribution& dist, const VectorField& f, std::span<const double> times,
                                std::size_t n, std::uint64_t seed);

struct LambdaFit {
    double constant = 0.0;
    /// Squared Pearson correlation between values and e^t - 1.
    double quality = 0.0;
};

LambdaFit fit_lambda_constant(const ErrorCurve& curve);

struct Moments {
    Vector mean;
    Vector std;
};

/// Per-coordinate mean and unbiased standard deviation.
Moments sample_moments(const Batch& samples);

}  // namespace difflab
