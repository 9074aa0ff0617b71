#include "difflab/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "difflab/oracle.hpp"
#include "parallel.hpp"

namespace difflab {

namespace {

double one_minus_exp(double t) { return -std::expm1(-t); }

std::string describe(std::span<const double> x, double t) {
    std::ostringstream os;
    os.precision(17);
    os << "x=(";
    for (std::size_t i = 0; i < x.size(); ++i) os << (i ? ", " : "") << x[i];
    os << "), t=" << t;
    return os.str();
}

Vector checked(const VectorField& f, std::span<const double> x, double t, const char* who) {
    Vector out = f(x, t);
    if (out.size() != x.size()) throw ShapeMismatch(std::string(who) + ": field returned the wrong dimension");
    if (!all_finite(out)) throw NonFinite(std::string(who) + ": non-finite drift at " + describe(x, t));
    return out;
}

void require_positive_time(double t, const char* who) {
    if (!(t > 0.0) || !std::isfinite(t)) throw InvalidTime(std::string(who) + ": time must be positive");
}

}  // namespace

ForwardDraw forward_sample(std::span<const double> x0, double t, Rng& rng) {
    if (!(t >= 0.0) || !std::isfinite(t)) throw InvalidTime("forward_sample: time must be >= 0");
    ForwardDraw d{Vector(x0.size()), Vector(x0.size())};
    fill_standard_normal(d.noise, rng);
    const double a = std::exp(-t / 2.0);
    const double s = std::sqrt(one_minus_exp(t));
    for (std::size_t j = 0; j < x0.size(); ++j) d.xt[j] = x0[j] * a + s * d.noise[j];
    return d;
}

ForwardDraw forward_sample(std::span<const double> x0, double t, std::uint64_t seed) {
    Rng rng(seed);
    return forward_sample(x0, t, rng);
}

Vector make_target(TargetKind kind, std::span<const double> x0, std::span<const double> xt,
                   std::span<const double> noise, double t) {
    if (x0.size() != xt.size() || noise.size() != xt.size())
        throw ShapeMismatch("make_target: x0, xt and noise must share a dimension");
    switch (kind) {
        case TargetKind::kScore: {
            require_positive_time(t, "make_target(SCORE_S)");
            const double s = std::sqrt(one_minus_exp(t));
            Vector out(noise.size());
            for (std::size_t j = 0; j < out.size(); ++j) out[j] = noise[j] / s;
            return out;
        }
        case TargetKind::kEpsilon: return {noise.begin(), noise.end()};
        case TargetKind::kCondExp: return {x0.begin(), x0.end()};
    }
    throw InvalidArgument("make_target: unknown kind");
}

double lambda_weight(TargetKind kind, double t, LambdaChoice choice) {
    require_positive_time(t, "lambda_weight");
    if (choice == LambdaChoice::kDefault) {
        switch (kind) {
            case TargetKind::kCondExp: choice = LambdaChoice::kInverseExpm1; break;
            case TargetKind::kEpsilon: choice = LambdaChoice::kUniform; break;
            case TargetKind::kScore: choice = LambdaChoice::kOneMinusExp; break;
        }
    }
    switch (choice) {
        case LambdaChoice::kUniform: return 1.0;
        case LambdaChoice::kInverseExpm1: return 1.0 / std::expm1(t);
        case LambdaChoice::kOneMinusExp: return one_minus_exp(t);
        case LambdaChoice::kDefault: break;
    }
    throw InvalidArgument("lambda_weight: unresolved choice");
}

Batch TrainingBatch::inputs() const {
    const std::size_t d = xt.dim();
    Batch in(xt.size(), d + 1);
    for (std::size_t i = 0; i < xt.size(); ++i) {
        auto src = xt.row(i);
        auto dst = in.row(i);
        std::copy(src.begin(), src.end(), dst.begin());
        dst[d] = t[i];
    }
    return in;
}

TrainingBatch make_training_batch(Batch x0, const Schedule& schedule, TargetKind kind, LambdaChoice choice,
                                  Rng& rng) {
    const std::size_t n = x0.size();
    const std::size_t d = x0.dim();
    if (n == 0) throw InvalidArgument("make_training_batch: empty batch");
    TrainingBatch b{std::move(x0), std::vector<double>(n), Batch(n, d), Batch(n, d), Batch(n, d),
                    std::vector<double>(n)};
    std::uniform_int_distribution<std::size_t> pick(0, schedule.size() - 1);
    fill_standard_normal(b.noise.data(), rng);
    for (std::size_t i = 0; i < n; ++i) {
        const double t = schedule.time(pick(rng));
        b.t[i] = t;
        const double a = std::exp(-t / 2.0);
        const double s = std::sqrt(one_minus_exp(t));
        auto x0r = b.x0.row(i);
        auto nr = b.noise.row(i);
        auto xr = b.xt.row(i);
        for (std::size_t j = 0; j < d; ++j) xr[j] = x0r[j] * a + s * nr[j];
        const Vector target = make_target(kind, x0r, xr, nr, t);
        std::copy(target.begin(), target.end(), b.target.row(i).begin());
        b.weight[i] = lambda_weight(kind, t, choice);
    }
    return b;
}

TrainResult train(const DataDistribution& dist, const RunConfig& config, const TrainProgress& progress) {
    config.validate();
    if (dimension(dist) != static_cast<std::size_t>(config.dim))
        throw ShapeMismatch("train: config dim " + std::to_string(config.dim) + " does not match the distribution");

    const Schedule schedule = build_exp_schedule(config.t1, config.T, config.K);
    const Batch pool = sample_data(dist, config.num_samples, derive_seed(config.seed, Stream::kTrainPool));
    TrainResult result{init_mlp(config.layer_sizes(), derive_seed(config.seed, Stream::kTrainInit)), {}};
    AdamState adam = AdamState::for_model(result.model, config.learning_rate);
    Rng rng(derive_seed(config.seed, Stream::kTrainBatches));

    const std::size_t d = pool.dim();
    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    result.loss_trace.reserve(config.total_steps());

    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < config.num_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t count = std::min(config.batch_size, order.size() - start);
            Batch x0(count, d);
            for (std::size_t i = 0; i < count; ++i) {
                auto src = pool.row(order[start + i]);
                std::copy(src.begin(), src.end(), x0.row(i).begin());
            }
            const TrainingBatch batch =
                make_training_batch(std::move(x0), schedule, config.target_kind, config.lambda, rng);
            LossAndGrad lg = mlp_loss_grad(result.model, batch.inputs(), batch.target, batch.weight);
            if (!std::isfinite(lg.loss) || !all_finite(lg.grads)) {
                throw TrainingDiverged("train: non-finite loss at step " + std::to_string(step),
                                       std::move(result));
            }
            adam_step(result.model, lg.grads, adam);
            result.loss_trace.push_back(lg.loss);
            if (progress) progress(step, lg.loss);
            ++step;
        }
    }
    return result;
}

// ---------------------------------------------------------------------------

VectorField model_field(std::shared_ptr<const Mlp> model) {
    if (!model) throw InvalidArgument("model_field: null model");
    if (model->input_dim() != model->output_dim() + 1)
        throw ShapeMismatch("model_field: network must map R^(d+1) to R^d");
    const std::size_t d = model->output_dim();
    return {d, [model, d](std::span<const double> x, double t) {
                if (x.size() != d) throw ShapeMismatch("model_field: dimension mismatch");
                thread_local std::vector<double> scratch;
                thread_local std::vector<double> input;
                input.assign(x.begin(), x.end());
                input.push_back(t);
                Vector out(d);
                mlp_forward_into(*model, input, out, scratch);
                return out;
            }};
}

DriftProvider as_score(TargetKind kind, VectorField raw) {
    const std::size_t d = raw.dim;
    switch (kind) {
        case TargetKind::kScore: return DriftProvider(std::move(raw));
        case TargetKind::kEpsilon:
            return DriftProvider({d, [raw = std::move(raw)](std::span<const double> x, double t) {
                                      require_positive_time(t, "as_score(EPSILON)");
                                      Vector s = raw(x, t);
                                      const double root = std::sqrt(one_minus_exp(t));
                                      for (double& c : s) c /= root;
                                      return s;
                                  }});
        case TargetKind::kCondExp:
            return DriftProvider({d, [raw = std::move(raw)](std::span<const double> x, double t) {
                                      require_positive_time(t, "as_score(COND_EXP_F)");
                                      Vector f = raw(x, t);
                                      const double v = one_minus_exp(t);
                                      const double a = std::exp(-t / 2.0);
                                      for (std::size_t j = 0; j < f.size(); ++j) f[j] = x[j] / v - a / v * f[j];
                                      return f;
                                  }});
    }
    throw InvalidArgument("as_score: unknown kind");
}

DriftProvider as_score(TargetKind kind, std::shared_ptr<const Mlp> model) {
    return as_score(kind, model_field(std::move(model)));
}

VectorField from_score(TargetKind kind, DriftProvider score) {
    const std::size_t d = score.dim();
    switch (kind) {
        case TargetKind::kScore: return score.field();
        case TargetKind::kEpsilon:
            return {d, [score = std::move(score)](std::span<const double> x, double t) {
                        Vector e = score(x, t);
                        const double root = std::sqrt(one_minus_exp(t));
                        for (double& c : e) c *= root;
                        return e;
                    }};
        case TargetKind::kCondExp:
            return {d, [score = std::move(score)](std::span<const double> x, double t) {
                        Vector f = score(x, t);
                        const double v = one_minus_exp(t);
                        const double grow = std::exp(t / 2.0);
                        for (std::size_t j = 0; j < f.size(); ++j) f[j] = (x[j] - v * f[j]) * grow;
                        return f;
                    }};
    }
    throw InvalidArgument("from_score: unknown kind");
}

DriftProvider oracle_drift(const DataDistribution& dist) {
    const std::size_t d = dimension(dist);
    if (const auto* c = std::get_if<PointCloud>(&dist))
        return DriftProvider({d, [c = *c](std::span<const double> x, double t) {
                                  return oracle_score_pointcloud(c, x, t);
                              }});
    if (const auto* g = std::get_if<IsotropicGaussian>(&dist))
        return DriftProvider({d, [g = *g](std::span<const double> x, double t) {
                                  return oracle_score_gaussian(g.mu, g.sigma, x, t);
                              }});
    if (std::holds_alternative<LineGaussian>(dist))
        return DriftProvider({d, [](std::span<const double> x, double t) { return oracle_targets_line(x, t).s; }});
    if (const auto* s = std::get_if<SmoothedCloud>(&dist))
        return DriftProvider({d, [s = *s](std::span<const double> x, double t) {
                                  return oracle_score_smoothed(s.base, s.sigma, x, t);
                              }});
    throw Unsupported("no closed-form drift for distribution '" + std::string(name(dist)) + "'");
}

VectorField oracle_field(const DataDistribution& dist, TargetKind kind) {
    if (!has_analytic_oracle(dist))
        throw Unsupported("no closed-form oracle for distribution '" + std::string(name(dist)) + "'");
    return {dimension(dist), [dist, kind](std::span<const double> x, double t) {
                OracleTargets o = oracle_targets(dist, x, t);
                switch (kind) {
                    case TargetKind::kScore: return std::move(o.s);
                    case TargetKind::kEpsilon: return std::move(o.eps);
                    case TargetKind::kCondExp: return std::move(o.f);
                }
                return Vector{};
            }};
}

// ---------------------------------------------------------------------------

Vector splitting_step(std::span<const double> x, double t_hi, double t_lo, const DriftProvider& drift,
                      std::span<const double> noise) {
    if (!(t_hi > t_lo) || !(t_lo >= 0.0)) throw InvalidArgument("splitting_step: need 0 <= t_lo < t_hi");
    if (noise.size() != x.size()) throw ShapeMismatch("splitting_step: noise dimension mismatch");
    const double dt = t_hi - t_lo;
    const Vector s = checked(drift.field(), x, t_hi, "splitting_step");
    const double grow = std::exp(dt / 2.0);
    const double sd = std::sqrt(one_minus_exp(dt));
    Vector out(x.size());
    for (std::size_t j = 0; j < x.size(); ++j) out[j] = grow * (x[j] - dt * s[j]) + sd * noise[j];
    return out;
}

Vector ddpm_step(std::span<const double> x, double t_hi, double t_lo, const VectorField& eps,
                 std::span<const double> noise) {
    if (!(t_hi > t_lo) || !(t_lo > 0.0)) throw InvalidArgument("ddpm_step: need 0 < t_lo < t_hi");
    if (noise.size() != x.size()) throw ShapeMismatch("ddpm_step: noise dimension mismatch");
    const StepQuantities q = step_between(t_lo, t_hi);
    const double alpha_bar = std::exp(-t_hi);
    const Vector e = checked(eps, x, t_hi, "ddpm_step");
    const double coef = q.beta / std::sqrt(1.0 - alpha_bar);
    const double inv_root_alpha = 1.0 / std::sqrt(q.alpha);
    const double sd = std::sqrt(q.beta);
    Vector out(x.size());
    for (std::size_t j = 0; j < x.size(); ++j) out[j] = (x[j] - coef * e[j]) * inv_root_alpha + sd * noise[j];
    return out;
}

Vector ddpm_step(std::span<const double> x, double t_hi, double t_lo, const VectorField& eps,
                 std::uint64_t seed) {
    Rng rng(seed);
    Vector noise(x.size());
    fill_standard_normal(noise, rng);
    return ddpm_step(x, t_hi, t_lo, eps, noise);
}

SampleRun backward_sample_with_snapshots(const DriftProvider& drift, const Schedule& schedule, std::size_t n,
                                         std::uint64_t seed, const std::vector<std::size_t>& snapshot_indices) {
    if (n < 1) throw InvalidArgument("backward_sample: n must be >= 1");
    const std::size_t d = drift.dim();
    const std::size_t K = schedule.size();
    for (auto k : snapshot_indices)
        if (k >= K) throw OutOfRange("backward_sample: snapshot index beyond the grid");

    SampleRun run{Batch(n, d), {}};
    for (auto k : snapshot_indices) run.snapshots.emplace(k, Batch(n, d));

    constexpr std::size_t kBlock = 1024;
    const std::size_t blocks = (n + kBlock - 1) / kBlock;
    const auto grid = schedule.grid();

    detail::for_each_block(blocks, [&](std::size_t b) {
        const std::size_t first = b * kBlock;
        const std::size_t count = std::min(kBlock, n - first);
        Rng rng(derive_seed(seed, b));
        std::vector<double> state(count * d);
        fill_standard_normal(state, rng);

        auto snapshot = [&](std::size_t k) {
            auto it = run.snapshots.find(k);
            if (it == run.snapshots.end()) return;
            std::copy(state.begin(), state.end(), it->second.data().begin() + static_cast<std::ptrdiff_t>(first * d));
        };
        snapshot(K - 1);

        std::vector<double> noise(d);
        for (std::size_t k = K - 1; k-- > 0;) {
            const double t_hi = grid[k + 1];
            const double dt = t_hi - grid[k];
            const double grow = std::exp(dt / 2.0);
            const double sd = std::sqrt(one_minus_exp(dt));
            for (std::size_t i = 0; i < count; ++i) {
                std::span<double> x(state.data() + i * d, d);
                const Vector s = checked(drift.field(), x, t_hi, "backward_sample");
                fill_standard_normal(noise, rng);
                for (std::size_t j = 0; j < d; ++j) x[j] = grow * (x[j] - dt * s[j]) + sd * noise[j];
            }
            snapshot(k);
        }

        // Drift-only step from t1 to 0.
        const double t1 = grid[0];
        const double grow = std::exp(t1 / 2.0);
        for (std::size_t i = 0; i < count; ++i) {
            std::span<double> x(state.data() + i * d, d);
            const Vector s = checked(drift.field(), x, t1, "backward_sample");
            for (std::size_t j = 0; j < d; ++j) x[j] = grow * (x[j] - t1 * s[j]);
        }
        std::copy(state.begin(), state.end(), run.final.data().begin() + static_cast<std::ptrdiff_t>(first * d));
    });
    return run;
}

Batch backward_sample(const DriftProvider& drift, const Schedule& schedule, std::size_t n, std::uint64_t seed) {
    return std::move(backward_sample_with_snapshots(drift, schedule, n, seed, {}).final);
}

}  // namespace difflab
