#pragma once

#include <cstdint>

#include "difflab/core.hpp"
#include "difflab/distributions.hpp"

namespace difflab {

/// Singular oracles (point clouds, the line) refuse times below this.
inline constexpr double kMinOracleTime = 1e-12;

/// The three equivalent targets at one (x, t).
///   s   = -grad log p(x, t)
///   eps = sqrt(1 - e^-t) s
///   f   = E[X_0 | X_t = x], with s = (x - e^{-t/2} f) / (1 - e^-t)
struct OracleTargets {
    Vector s;
    Vector eps;
    Vector f;
};

OracleTargets targets_from_score(std::span<const double> x, double t, Vector s);
OracleTargets targets_from_cond_exp(std::span<const double> x, double t, Vector f);

/// Posterior mean of the atoms given X_t = x (softmax over atom logits).
Vector oracle_f_pointcloud(const PointCloud& cloud, std::span<const double> x, double t);
Vector oracle_score_pointcloud(const PointCloud& cloud, std::span<const double> x, double t);

/// Score of N(mu, sigma^2 I) pushed forward to time t. Regular at t = 0.
Vector oracle_score_gaussian(std::span<const double> mu, double sigma, std::span<const double> x, double t);

/// Closed forms for the line distribution (X1 ~ N(0,1), X2 = 0).
OracleTargets oracle_targets_line(std::span<const double> x, double t);

/// Score of the cloud convolved with N(0, sigma^2 I). Bounded as t -> 0.
Vector oracle_score_smoothed(const PointCloud& cloud, double sigma, std::span<const double> x, double t);

bool has_analytic_oracle(const DataDistribution& dist);

/// Dispatches to the closed form for dist; Unsupported for the spiral.
OracleTargets oracle_targets(const DataDistribution& dist, std::span<const double> x, double t);

struct McEstimate {
    Vector estimate;
    double effective_sample_size = 0.0;
};

/// Brute-force E[X_0 | X_t = x]: forward pairs weighted by a Gaussian kernel
/// of the given bandwidth around x. The result is independent of the number of
/// worker threads. Throws Degenerate when the effective sample size is < 30.
McEstimate mc_oracle_f(const DataDistribution& dist, std::span<const double> x, double t, std::size_t n,
                       double bandwidth, std::uint64_t seed);

/// Generalization conditioning an intermediate state: E[X_{t_source} | X_t = x]
/// for 0 <= t_source < t. t_source = 0 reproduces mc_oracle_f.
McEstimate mc_conditional_mean(const DataDistribution& dist, std::span<const double> x, double t,
                               double t_source, std::size_t n, double bandwidth, std::uint64_t seed);

}  // namespace difflab
