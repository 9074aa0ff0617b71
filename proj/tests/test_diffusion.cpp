#include <doctest.h>

#include <cmath>
#include <memory>

#include "difflab/diffusion.hpp"
#include "difflab/error.hpp"
#include "difflab/metrics.hpp"
#include "difflab/oracle.hpp"

using namespace difflab;

namespace {

Batch points(std::initializer_list<std::initializer_list<double>> rows) {
    Batch b;
    for (auto r : rows) b.push_back(std::vector<double>(r));
    return b;
}

double max_abs_diff(const Vector& a, const Vector& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

VectorField constant_field(Vector c) {
    const std::size_t d = c.size();
    return {d, [c = std::move(c)](std::span<const double>, double) { return c; }};
}

RunConfig small_config() {
    RunConfig c;
    c.num_samples = 2000;
    c.batch_size = 200;
    c.num_epochs = 3;
    c.hidden_layers = {8};
    return c;
}

}  // namespace

TEST_CASE("forward sampling") {
    const Vector x0{3.0, -2.0};
    SUBCASE("time zero is the identity") {
        const ForwardDraw d = forward_sample(x0, 0.0, std::uint64_t{1});
        CHECK(d.xt == x0);
        CHECK(d.noise.size() == 2);
    }
    SUBCASE("reconstruction from the returned noise") {
        const ForwardDraw d = forward_sample(x0, 10.0, std::uint64_t{2});
        CHECK(std::exp(-5.0) == doctest::Approx(0.0067).epsilon(1e-2));
        for (std::size_t j = 0; j < 2; ++j)
            CHECK(d.xt[j] == x0[j] * std::exp(-5.0) + std::sqrt(-std::expm1(-10.0)) * d.noise[j]);
    }
    SUBCASE("standard normal is invariant") {
        Rng rng(3);
        const Batch x = sample_data(make_isotropic_gaussian({0, 0}, 1.0), 100000, 4);
        for (double t : {0.05, 1.0, 7.0}) {
            Batch xt(x.size(), 2);
            for (std::size_t i = 0; i < x.size(); ++i) {
                const ForwardDraw d = forward_sample(x.row(i), t, rng);
                std::copy(d.xt.begin(), d.xt.end(), xt.row(i).begin());
            }
            const Moments m = sample_moments(xt);
            for (std::size_t j = 0; j < 2; ++j) {
                CHECK(std::abs(m.mean[j]) < 0.015);
                CHECK(std::abs(m.std[j] - 1.0) < 0.015);
            }
        }
    }
    SUBCASE("negative time") { CHECK_THROWS_AS(forward_sample(x0, -1.0, std::uint64_t{1}), InvalidTime); }
}

TEST_CASE("training targets") {
    const Vector x0{1, 2}, xt{0.5, 0.1}, noise{-0.3, 0.9};
    CHECK(make_target(TargetKind::kCondExp, x0, xt, noise, 0.3) == x0);
    CHECK(make_target(TargetKind::kEpsilon, x0, xt, noise, 0.3) == noise);
    const double t = -std::log(0.75);  // 1 - e^{-t} = 0.25
    const Vector s = make_target(TargetKind::kScore, x0, xt, noise, t);
    CHECK(s[0] == doctest::Approx(-0.6).epsilon(1e-14));
    CHECK(s[1] == doctest::Approx(1.8).epsilon(1e-14));
    CHECK_THROWS_AS(make_target(TargetKind::kScore, x0, xt, noise, 0.0), InvalidTime);
    CHECK_THROWS_AS(make_target(TargetKind::kEpsilon, x0, xt, Vector{1.0}, 0.3), ShapeMismatch);
}

TEST_CASE("loss weights") {
    CHECK(lambda_weight(TargetKind::kCondExp, std::log(2.0)) == doctest::Approx(1.0).epsilon(1e-14));
    for (double t : {0.01, 1.0, 10.0}) {
        CHECK(lambda_weight(TargetKind::kEpsilon, t) == 1.0);
        CHECK(lambda_weight(TargetKind::kScore, t) == doctest::Approx(1 - std::exp(-t)).epsilon(1e-14));
        CHECK(lambda_weight(TargetKind::kCondExp, t, LambdaChoice::kUniform) == 1.0);
        CHECK(lambda_weight(TargetKind::kEpsilon, t, LambdaChoice::kInverseExpm1) ==
              doctest::Approx(1 / std::expm1(t)));
        CHECK(lambda_weight(TargetKind::kCondExp, t, LambdaChoice::kOneMinusExp) ==
              doctest::Approx(1 - std::exp(-t)));
    }
    CHECK(lambda_weight(TargetKind::kCondExp, 50.0) < 1e-20);
    CHECK_THROWS_AS(lambda_weight(TargetKind::kCondExp, 0.0), InvalidTime);
}

TEST_CASE("training batches") {
    const Schedule s = build_exp_schedule(0.01, 10.0, 200);
    Rng rng(5);
    for (TargetKind kind : {TargetKind::kScore, TargetKind::kEpsilon, TargetKind::kCondExp}) {
        const TrainingBatch b =
            make_training_batch(sample_data(five_point_cloud(), 500, 6), s, kind, LambdaChoice::kDefault, rng);
        const Batch in = b.inputs();
        REQUIRE(in.dim() == 3);
        for (std::size_t i = 0; i < 500; ++i) {
            const double t = b.t[i];
            CHECK(std::find(s.grid().begin(), s.grid().end(), t) != s.grid().end());
            for (std::size_t j = 0; j < 2; ++j) {
                CHECK(b.xt.row(i)[j] == b.x0.row(i)[j] * std::exp(-t / 2) + std::sqrt(-std::expm1(-t)) * b.noise.row(i)[j]);
                CHECK(in.row(i)[j] == b.xt.row(i)[j]);
            }
            CHECK(in.row(i)[2] == t);
            CHECK(b.weight[i] == lambda_weight(kind, t));
            CHECK(b.target.row_vector(i) == make_target(kind, b.x0.row(i), b.xt.row(i), b.noise.row(i), t));
        }
    }
}

TEST_CASE("conditional expectation minimizes the weighted loss") {
    const Schedule s = build_exp_schedule(0.01, 10.0, 200);
    const PointCloud c = five_point_cloud();
    auto batch_loss = [&](std::uint64_t seed, Vector shift) {
        Rng rng(seed);
        const TrainingBatch b = make_training_batch(sample_data(c, 50000, seed + 1), s, TargetKind::kCondExp,
                                                    LambdaChoice::kUniform, rng);
        double total = 0.0, total_sq = 0.0;
        for (std::size_t i = 0; i < b.t.size(); ++i) {
            Vector f = oracle_f_pointcloud(c, b.xt.row(i), b.t[i]);
            for (std::size_t j = 0; j < 2; ++j) f[j] += shift[j];
            const double e = b.weight[i] * squared_distance(b.x0.row(i), f);
            total += e;
            total_sq += e * e;
        }
        const double n = static_cast<double>(b.t.size());
        const double mean = total / n;
        return std::pair{mean, std::sqrt((total_sq / n - mean * mean) / n)};
    };
    const auto [exact, se] = batch_loss(10, {0, 0});
    CHECK(exact < batch_loss(10, {0.05, 0.0}).first);
    CHECK(exact < batch_loss(10, {0.0, -0.05}).first);
    const auto [other, se2] = batch_loss(20, {0, 0});
    CHECK(std::abs(exact - other) < 5 * std::hypot(se, se2));
}

TEST_CASE("training") {
    SUBCASE("constant target") {
        RunConfig cfg;
        cfg.num_samples = 1000;
        cfg.batch_size = 100;
        cfg.num_epochs = 300;
        cfg.learning_rate = 1e-2;
        cfg.hidden_layers = {8};
        const DataDistribution d = make_point_cloud(points({{1, -3}}));
        std::size_t calls = 0;
        const TrainResult r = train(d, cfg, [&](std::size_t, double) { ++calls; });
        CHECK(r.loss_trace.size() == cfg.total_steps());
        CHECK(calls == cfg.total_steps());
        CHECK(r.loss_trace.back() < 1e-3);
    }
    SUBCASE("deterministic per seed") {
        RunConfig cfg = small_config();
        cfg.seed = 4;
        const TrainResult a = train(LineGaussian{}, cfg);
        const TrainResult b = train(LineGaussian{}, cfg);
        CHECK(a.model == b.model);
        CHECK(a.loss_trace == b.loss_trace);
        cfg.seed = 5;
        CHECK_FALSE(train(LineGaussian{}, cfg).model == a.model);
    }
    SUBCASE("dimension mismatch") {
        RunConfig cfg = small_config();
        cfg.dim = 3;
        CHECK_THROWS_AS(train(LineGaussian{}, cfg), ShapeMismatch);
    }
    SUBCASE("divergence keeps the last finite state") {
        RunConfig cfg = small_config();
        const DataDistribution d = make_point_cloud(points({{1e200, 1e200}}));
        try {
            train(d, cfg);
            FAIL("expected divergence");
        } catch (const TrainingDiverged& e) {
            CHECK(e.last_finite().loss_trace.empty());
            CHECK(e.last_finite().model == init_mlp(cfg.layer_sizes(), derive_seed(cfg.seed, Stream::kTrainInit)));
        }
    }
    SUBCASE("score network misses the singular component near t1") {
        RunConfig cfg;
        cfg.num_samples = 10000;
        cfg.batch_size = 1000;
        cfg.num_epochs = 30;
        cfg.target_kind = TargetKind::kScore;
        const auto model = std::make_shared<const Mlp>(train(LineGaussian{}, cfg).model);
        const Schedule s = build_exp_schedule(cfg.t1, cfg.T, cfg.K);
        const Vector times{s.time(0), s.time(50), s.time(100)};
        const ErrorCurve e =
            pointwise_error(model_field(model), oracle_field(LineGaussian{}, TargetKind::kScore), Vector{1, -0.1},
                            times, std::size_t{1});
        CHECK(e.values[0] > e.values[1]);
        CHECK(e.values[1] > e.values[2]);
    }
}

TEST_CASE("parameterization adapters") {
    SUBCASE("vanishing f") {
        const DriftProvider s = as_score(TargetKind::kCondExp, constant_field({0, 0}));
        const Vector x{0.4, -1.1};
        for (double t : {0.01, 0.5, 3.0}) {
            const Vector v = s(x, t);
            CHECK(v[0] == doctest::Approx(x[0] / (1 - std::exp(-t))).epsilon(1e-14));
            CHECK(v[1] == doctest::Approx(x[1] / (1 - std::exp(-t))).epsilon(1e-14));
        }
        CHECK_THROWS_AS(s(x, 0.0), InvalidTime);
    }
    SUBCASE("exact line f and gaussian eps") {
        Rng rng(7);
        std::normal_distribution<double> g(0.0, 2.0);
        const DriftProvider line = as_score(TargetKind::kCondExp, oracle_field(LineGaussian{}, TargetKind::kCondExp));
        const DataDistribution gauss = make_isotropic_gaussian({1, 2}, 0.5);
        const DriftProvider gs = as_score(TargetKind::kEpsilon, oracle_field(gauss, TargetKind::kEpsilon));
        for (int i = 0; i < 100; ++i) {
            const Vector x{g(rng), g(rng)};
            const double t = 1e-3 + std::abs(g(rng));
            const Vector sl = oracle_targets_line(x, t).s;
            CHECK(max_abs_diff(line(x, t), sl) <= 1e-10 * std::max(1.0, norm(sl)));
            const Vector sg = oracle_score_gaussian(Vector{1, 2}, 0.5, x, t);
            CHECK(max_abs_diff(gs(x, t), sg) <= 1e-12 * std::max(1.0, norm(sg)));
        }
    }
    SUBCASE("round trips") {
        Rng rng(8);
        std::normal_distribution<double> g(0.0, 2.0);
        for (const DataDistribution& d : std::vector<DataDistribution>{
                 five_point_cloud(), LineGaussian{}, make_isotropic_gaussian({1, 2}, 0.5),
                 make_smoothed_cloud(four_point_cloud(), 0.3)}) {
            const DriftProvider s = oracle_drift(d);
            for (TargetKind kind : {TargetKind::kScore, TargetKind::kEpsilon, TargetKind::kCondExp}) {
                const DriftProvider back = as_score(kind, from_score(kind, s));
                const VectorField direct = oracle_field(d, kind);
                const VectorField via = from_score(kind, s);
                for (int i = 0; i < 30; ++i) {
                    const Vector x{g(rng), g(rng)};
                    const double t = 1e-3 + std::abs(g(rng));
                    const Vector ref = s(x, t);
                    CHECK(max_abs_diff(back(x, t), ref) <= 1e-10 * std::max(1.0, norm(ref)));
                    const Vector dv = direct(x, t);
                    CHECK(max_abs_diff(via(x, t), dv) <= 1e-10 * std::max(1.0, norm(dv)));
                }
            }
        }
        CHECK_THROWS_AS(oracle_drift(make_spiral()), Unsupported);
    }
    SUBCASE("network input is (x, t)") {
        const auto m = std::make_shared<const Mlp>(init_mlp({3, 5, 2}, 3));
        const VectorField f = model_field(m);
        CHECK(f(Vector{0.2, 0.3}, 0.7) == mlp_forward(*m, Vector{0.2, 0.3, 0.7}));
        CHECK_THROWS_AS(f(Vector{0.2}, 0.7), ShapeMismatch);
        CHECK_THROWS_AS(model_field(std::make_shared<const Mlp>(init_mlp({3, 5, 3}, 3))), ShapeMismatch);
    }
}

TEST_CASE("single steps") {
    const Vector x{0.7, -1.3}, noise{0.2, 0.5};
    const DataDistribution gauss = make_isotropic_gaussian({1, 2}, 0.5);
    SUBCASE("splitting step formula") {
        const DriftProvider s = oracle_drift(gauss);
        const double hi = 0.8, lo = 0.6, dt = 0.2;
        const Vector sx = s(x, hi);
        const Vector y = splitting_step(x, hi, lo, s, noise);
        for (std::size_t j = 0; j < 2; ++j)
            CHECK(y[j] == doctest::Approx(std::exp(dt / 2) * (x[j] - dt * sx[j]) + std::sqrt(1 - std::exp(-dt)) * noise[j])
                              .epsilon(1e-14));
    }
    SUBCASE("ddpm with zero eps and zero noise rescales") {
        const Vector y = ddpm_step(x, 1.0, 0.7, constant_field({0, 0}), Vector{0, 0});
        CHECK(y[0] == doctest::Approx(x[0] * std::exp(0.15)).epsilon(1e-14));
        CHECK(y[1] == doctest::Approx(x[1] * std::exp(0.15)).epsilon(1e-14));
    }
    SUBCASE("ddpm and splitting agree to second order") {
        const DriftProvider s = oracle_drift(gauss);
        const VectorField eps = oracle_field(gauss, TargetKind::kEpsilon);
        const double hi = 1.0;
        double prev = 0.0;
        for (double dt : {0.2, 0.1, 0.05, 0.025}) {
            const double gap = std::sqrt(squared_distance(ddpm_step(x, hi, hi - dt, eps, noise),
                                                          splitting_step(x, hi, hi - dt, s, noise)));
            if (prev > 0.0) {
                CHECK(prev / gap > 3.5);
                CHECK(prev / gap < 4.5);
            }
            prev = gap;
        }
        CHECK(prev < 2e-3);
    }
    SUBCASE("seeded ddpm step is reproducible") {
        const VectorField eps = oracle_field(gauss, TargetKind::kEpsilon);
        CHECK(ddpm_step(x, 1.0, 0.9, eps, std::uint64_t{3}) == ddpm_step(x, 1.0, 0.9, eps, std::uint64_t{3}));
    }
    SUBCASE("preconditions") {
        const DriftProvider s = oracle_drift(gauss);
        CHECK_THROWS_AS(splitting_step(x, 0.5, 0.6, s, noise), InvalidArgument);
        CHECK_THROWS_AS(ddpm_step(x, 0.5, 0.0, constant_field({0, 0}), noise), InvalidArgument);
        CHECK_THROWS_AS(splitting_step(x, 0.6, 0.5, s, Vector{1.0}), ShapeMismatch);
    }
}

TEST_CASE("backward sampling") {
    const Schedule s = build_exp_schedule(0.01, 10.0, 200);
    SUBCASE("five atoms absorb every trajectory") {
        const PointCloud c = five_point_cloud();
        const Batch out = backward_sample(oracle_drift(c), s, 10000, 1);
        const Absorption a = absorption_frequencies(out, c, 1e-2);
        CHECK(a.unabsorbed == 0);
        for (double f : a.frequencies) CHECK(std::abs(f - 0.2) < 0.02);
        // The drift-only last step leaves a residual of about t1/2 times the noise scale.
        CHECK(absorption_frequencies(out, c, 2e-3).unabsorbed < 200);
    }
    SUBCASE("deterministic and block-stable") {
        const DriftProvider d = oracle_drift(five_point_cloud());
        const Batch a = backward_sample(d, s, 2000, 3);
        CHECK(a == backward_sample(d, s, 2000, 3));
        const Batch b = backward_sample(d, s, 3000, 3);
        for (std::size_t i = 0; i < 1024; ++i) CHECK(a.row_vector(i) == b.row_vector(i));
    }
    SUBCASE("gaussian moments follow the linear recursion of the scheme") {
        const Vector mu{1, 2};
        const double sigma = 0.5;
        const std::size_t n = 100000;
        const std::vector<std::size_t> idx{150, 100, 50, 0};
        const SampleRun run = backward_sample_with_snapshots(oracle_drift(make_isotropic_gaussian(mu, sigma)), s, n,
                                                             4, idx);
        REQUIRE(run.snapshots.size() == idx.size());
        // Per coordinate the step is x' = a x + b + c N, so mean and variance propagate in closed form.
        Vector mean{0, 0};
        double var = 1.0;
        for (std::size_t k = s.size() - 1; k-- > 0;) {
            const double hi = s.time(k + 1), dt = hi - s.time(k);
            const double s2 = sigma * sigma * std::exp(-hi) + 1 - std::exp(-hi);
            const double a = std::exp(dt / 2) * (1 - dt / s2);
            for (std::size_t j = 0; j < 2; ++j)
                mean[j] = a * mean[j] + std::exp(dt / 2) * dt * mu[j] * std::exp(-hi / 2) / s2;
            var = a * a * var + (1 - std::exp(-dt));
            if (std::find(idx.begin(), idx.end(), k) == idx.end()) continue;
            const Moments m = sample_moments(run.snapshots.at(k));
            const double sd = std::sqrt(var);
            for (std::size_t j = 0; j < 2; ++j) {
                CHECK(std::abs(m.mean[j] - mean[j]) < 4 * sd / std::sqrt(double(n)));
                CHECK(std::abs(m.std[j] - sd) < 4 * sd / std::sqrt(2.0 * double(n)));
            }
        }
    }
    SUBCASE("non-finite drift is reported") {
        const DriftProvider bad({2, [](std::span<const double>, double t) {
                                     return t < 1.0 ? Vector{NAN, 0.0} : Vector{0.0, 0.0};
                                 }});
        try {
            backward_sample(bad, s, 10, 1);
            FAIL("expected a non-finite error");
        } catch (const NonFinite& e) {
            CHECK(std::string(e.what()).find("t=") != std::string::npos);
        }
    }
    SUBCASE("bad arguments") {
        const DriftProvider d = oracle_drift(five_point_cloud());
        CHECK_THROWS_AS(backward_sample(d, s, 0, 1), InvalidArgument);
        CHECK_THROWS_AS(backward_sample_with_snapshots(d, s, 5, 1, {200}), OutOfRange);
    }
}
