#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace difflab {

/// A point in R^d.
using Vector = std::vector<double>;

bool all_finite(std::span<const double> v);
double norm(std::span<const double> v);
double squared_distance(std::span<const double> a, std::span<const double> b);

/// A row-major collection of points of a common dimension.
class Batch {
public:
    Batch() = default;
    Batch(std::size_t rows, std::size_t dim);
    Batch(std::size_t dim, std::vector<double> data);

    std::size_t size() const { return dim_ == 0 ? 0 : data_.size() / dim_; }
    std::size_t dim() const { return dim_; }
    bool empty() const { return data_.empty(); }

    std::span<double> row(std::size_t i) { return {data_.data() + i * dim_, dim_}; }
    std::span<const double> row(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }
    Vector row_vector(std::size_t i) const;

    void push_back(std::span<const double> point);

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    friend bool operator==(const Batch&, const Batch&) = default;

private:
    std::size_t dim_ = 0;
    std::vector<double> data_;
};

// ---------------------------------------------------------------------------
// Randomness

using Rng = std::mt19937_64;

/// Counter-based sub-seed derivation: stream `stream` of master seed `seed`.
/// Streams are independent of each other and of how many other streams exist.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// Named streams split from a run's master seed.
enum class Stream : std::uint64_t {
    kTrainPool = 1,
    kTrainInit = 2,
    kTrainBatches = 3,
    kSampling = 4,
    kEvaluation = 5,
    kOracle = 6,
};

inline std::uint64_t derive_seed(std::uint64_t seed, Stream s) {
    return derive_seed(seed, static_cast<std::uint64_t>(s));
}

void fill_standard_normal(std::span<double> out, Rng& rng);

// ---------------------------------------------------------------------------
// Time schedule

struct StepQuantities {
    double dt;         // t_{k+1} - t_k
    double beta;       // 1 - exp(-dt)
    double alpha;      // exp(-dt)
    double alpha_bar;  // exp(-t_k)
};

/// Geometric time grid t_1 < ... < t_K = T used by the backward sampler.
class Schedule {
public:
    double t1() const { return grid_.front(); }
    double final_time() const { return grid_.back(); }
    std::size_t size() const { return grid_.size(); }
    /// 0-based access: time(0) == t1, time(size()-1) == T.
    double time(std::size_t i) const { return grid_.at(i); }
    std::span<const double> grid() const { return grid_; }
    double ratio() const { return ratio_; }

private:
    friend Schedule build_exp_schedule(double t1, double T, int K);
    Schedule(std::vector<double> grid, double ratio) : grid_(std::move(grid)), ratio_(ratio) {}

    std::vector<double> grid_;
    double ratio_ = 1.0;
};

/// t_k = t1 * r^(k-1) with r = (T/t1)^(1/(K-1)); endpoints are exact.
Schedule build_exp_schedule(double t1, double T, int K);

/// Step k uses the 1-based convention 1 <= k < K: dt = t_{k+1} - t_k.
StepQuantities step_quantities(const Schedule& schedule, int k);

/// The same quantities for an arbitrary step from t_lo to t_hi.
StepQuantities step_between(double t_lo, double t_hi);

// ---------------------------------------------------------------------------
// Run configuration

enum class TargetKind { kScore, kEpsilon, kCondExp };

std::string_view to_string(TargetKind kind);
TargetKind target_kind_from_string(std::string_view name);

/// Loss weight choice. kDefault resolves per target kind.
enum class LambdaChoice { kDefault, kUniform, kInverseExpm1, kOneMinusExp };

std::string_view to_string(LambdaChoice choice);
LambdaChoice lambda_choice_from_string(std::string_view name);

struct RunConfig {
    std::uint64_t seed = 0;
    int dim = 2;

    double t1 = 0.01;
    double T = 10.0;
    int K = 200;

    std::size_t num_samples = 1'000'000;
    std::size_t batch_size = 10'000;
    double learning_rate = 1e-3;
    std::size_t num_epochs = 100;

    TargetKind target_kind = TargetKind::kCondExp;
    std::vector<std::size_t> hidden_layers = {16, 16};
    LambdaChoice lambda = LambdaChoice::kDefault;

    /// Raw distribution description, interpreted by the distributions module.
    nlohmann::json distribution = {{"type", "line_gaussian"}};

    /// Full network shape: [dim + 1, hidden..., dim].
    std::vector<std::size_t> layer_sizes() const;
    std::size_t steps_per_epoch() const;
    std::size_t total_steps() const { return steps_per_epoch() * num_epochs; }

    /// Throws InvalidArgument naming the offending field.
    void validate() const;

    friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

nlohmann::json to_json(const RunConfig& config);
/// Rejects unknown keys and ill-typed fields; missing keys keep defaults.
RunConfig run_config_from_json(const nlohmann::json& doc);
/// Parses JSON text; syntax errors report the line number.
RunConfig parse_run_config(std::string_view text);

}  // namespace difflab
