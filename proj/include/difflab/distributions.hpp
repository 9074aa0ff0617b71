#pragma once

#include <cstdint>
#include <filesystem>
#include <variant>
#include <vector>

#include "difflab/core.hpp"

namespace difflab {

/// Weighted atoms. Construct through make_point_cloud to get validation.
struct PointCloud {
    Batch points;
    std::vector<double> weights;
};

struct IsotropicGaussian {
    Vector mu;
    double sigma = 1.0;
};

/// (X1, 0) with X1 ~ N(0, 1), in R^2.
struct LineGaussian {};

/// (U cos U, U sin U) with U ~ Unif[u_min, u_max].
struct SpiralCurve {
    double u_min = 1.0;
    double u_max = 13.0;
};

/// Base cloud convolved with N(0, sigma^2 I).
struct SmoothedCloud {
    PointCloud base;
    double sigma = 1.0;
};

using DataDistribution =
    std::variant<PointCloud, IsotropicGaussian, LineGaussian, SpiralCurve, SmoothedCloud>;

/// Weights default to uniform; they are normalized to sum to 1.
PointCloud make_point_cloud(Batch points, std::vector<double> weights = {});
IsotropicGaussian make_isotropic_gaussian(Vector mu, double sigma);
SmoothedCloud make_smoothed_cloud(PointCloud base, double sigma);
SpiralCurve make_spiral(double u_min = 1.0, double u_max = 13.0);

/// Fixed clouds used by the experiments.
PointCloud five_point_cloud();
PointCloud four_point_cloud();
PointCloud twenty_point_cloud();

std::size_t dimension(const DataDistribution& dist);
std::string_view name(const DataDistribution& dist);

/// n i.i.d. draws; identical (dist, n, seed) give identical batches.
Batch sample_data(const DataDistribution& dist, std::size_t n, std::uint64_t seed);
/// Fills every row of `out` from a live generator.
void sample_data_into(const DataDistribution& dist, Batch& out, Rng& rng);

bool has_support_manifold(const DataDistribution& dist);

/// Closest support point; equidistant cloud atoms resolve to the lowest index.
/// Throws Unsupported for full-support distributions.
Vector nearest_manifold_point(const DataDistribution& dist, std::span<const double> x);

Vector data_mean(const DataDistribution& dist);

/// Trace of the covariance of p_data (total variance).
double total_variance(const DataDistribution& dist);

/// JSON description: {"type": ..., parameters...}. See README for the schema.
DataDistribution distribution_from_json(const nlohmann::json& doc,
                                        const std::filesystem::path& base_dir = {});
nlohmann::json to_json(const DataDistribution& dist);

/// One point per row; an optional header may name a "weight" column.
PointCloud load_point_cloud_csv(const std::filesystem::path& path);

}  // namespace difflab
