#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>

#include "difflab/core.hpp"
#include "difflab/distributions.hpp"
#include "difflab/error.hpp"
#include "difflab/nn.hpp"

namespace difflab {

/// A time-dependent map R^d x (0, T] -> R^d. Must be safe to call concurrently.
struct VectorField {
    std::size_t dim = 0;
    std::function<Vector(std::span<const double>, double)> eval;

    Vector operator()(std::span<const double> x, double t) const { return eval(x, t); }
};

/// Score-valued field S(x, t) = -grad log p(x, t) that drives the backward sampler.
class DriftProvider {
public:
    explicit DriftProvider(VectorField score) : score_(std::move(score)) {}

    Vector operator()(std::span<const double> x, double t) const { return score_(x, t); }
    std::size_t dim() const { return score_.dim; }
    const VectorField& field() const { return score_; }

private:
    VectorField score_;
};

// ---------------------------------------------------------------------------
// Forward process and training targets

struct ForwardDraw {
    Vector xt;
    Vector noise;
};

/// X_t = x0 e^{-t/2} + sqrt(1 - e^{-t}) N.
ForwardDraw forward_sample(std::span<const double> x0, double t, Rng& rng);
ForwardDraw forward_sample(std::span<const double> x0, double t, std::uint64_t seed);

/// SCORE_S -> noise / sqrt(1 - e^-t); EPSILON -> noise; COND_EXP_F -> x0.
Vector make_target(TargetKind kind, std::span<const double> x0, std::span<const double> xt,
                   std::span<const double> noise, double t);

/// Defaults: COND_EXP_F -> 1/(e^t - 1); EPSILON -> 1; SCORE_S -> 1 - e^-t.
double lambda_weight(TargetKind kind, double t, LambdaChoice choice = LambdaChoice::kDefault);

struct TrainingBatch {
    Batch x0;
    std::vector<double> t;
    Batch noise;
    Batch xt;
    Batch target;
    std::vector<double> weight;

    /// Rows of (xt, t): the network input.
    Batch inputs() const;
};

/// Times are drawn uniformly from the schedule's grid points.
TrainingBatch make_training_batch(Batch x0, const Schedule& schedule, TargetKind kind, LambdaChoice choice,
                                  Rng& rng);

struct TrainResult {
    Mlp model;
    std::vector<double> loss_trace;
};

/// Raised when a loss turns non-finite; carries the last finite state.
class TrainingDiverged : public NonFinite {
public:
    TrainingDiverged(const std::string& what, TrainResult last_finite)
        : NonFinite(what), last_(std::make_shared<TrainResult>(std::move(last_finite))) {}
    const TrainResult& last_finite() const { return *last_; }

private:
    std::shared_ptr<TrainResult> last_;
};

using TrainProgress = std::function<void(std::size_t step, double loss)>;

/// Adam on the weighted MSE for config.target_kind. Deterministic per config.seed.
TrainResult train(const DataDistribution& dist, const RunConfig& config, const TrainProgress& progress = {});

// ---------------------------------------------------------------------------
// Parameterization adapters

/// Raw network output as a field; input is concat(x, t).
VectorField model_field(std::shared_ptr<const Mlp> model);

/// Converts a field in parameterization `kind` to the score.
DriftProvider as_score(TargetKind kind, VectorField raw);
DriftProvider as_score(TargetKind kind, std::shared_ptr<const Mlp> model);

/// Expresses a score in parameterization `kind` (inverse of as_score).
VectorField from_score(TargetKind kind, DriftProvider score);

/// Closed-form score for dist (Unsupported for the spiral).
DriftProvider oracle_drift(const DataDistribution& dist);
/// Closed-form target for dist in parameterization `kind`.
VectorField oracle_field(const DataDistribution& dist, TargetKind kind);

// ---------------------------------------------------------------------------
// Backward sampling

/// Splitting step from t_hi down to t_lo with the supplied noise draw:
///   xbar = x - dt S(x, t_hi);  x' = e^{dt/2} xbar + sqrt(1 - e^{-dt}) noise.
Vector splitting_step(std::span<const double> x, double t_hi, double t_lo, const DriftProvider& drift,
                      std::span<const double> noise);

/// DDPM ancestral step with alpha = e^{-dt}, beta = 1 - alpha, alpha_bar = e^{-t_hi}:
///   x' = (x - beta / sqrt(1 - alpha_bar) eps(x, t_hi)) / sqrt(alpha) + sqrt(beta) noise.
Vector ddpm_step(std::span<const double> x, double t_hi, double t_lo, const VectorField& eps,
                 std::span<const double> noise);
Vector ddpm_step(std::span<const double> x, double t_hi, double t_lo, const VectorField& eps,
                 std::uint64_t seed);

struct SampleRun {
    Batch final;
    /// Keyed by 0-based grid index (grid index K-1 is the N(0, I) start).
    std::map<std::size_t, Batch> snapshots;
};

/// Runs n trajectories from N(0, I) at T down the grid, then a drift-only step
/// from t1 to 0. Throws NonFinite naming (x, t) if the drift misbehaves.
Batch backward_sample(const DriftProvider& drift, const Schedule& schedule, std::size_t n, std::uint64_t seed);
SampleRun backward_sample_with_snapshots(const DriftProvider& drift, const Schedule& schedule, std::size_t n,
                                         std::uint64_t seed, const std::vector<std::size_t>& snapshot_indices);

}  // namespace difflab
