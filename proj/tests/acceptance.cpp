// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
// Tolerances are fixed here and nowhere else.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "difflab/core.hpp"
#include "difflab/diffusion.hpp"
#include "difflab/distributions.hpp"
#include "difflab/error.hpp"
#include "difflab/metrics.hpp"
#include "difflab/nn.hpp"
#include "difflab/oracle.hpp"

using namespace difflab;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double rel_err(const Vector& a, const Vector& ref) {
    double d = 0.0, r = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        d += (a[i] - ref[i]) * (a[i] - ref[i]);
        r += ref[i] * ref[i];
    }
    return std::sqrt(d) / std::max(std::sqrt(r), 1e-300);
}

double median3(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
}

// ---------------------------------------------------------------------------

Outcome table1() {
    constexpr double kTol = 1e-2, kFreqBand = 0.03, kMaxUnabsorbed = 0.01;
    const PointCloud c = five_point_cloud();
    const Batch out = backward_sample(oracle_drift(c), build_exp_schedule(0.01, 10.0, 200), 10000, 1);
    const Absorption a = absorption_frequencies(out, c, kTol);
    bool ok = double(a.unabsorbed) / double(a.total) < kMaxUnabsorbed;
    std::string freqs;
    for (double f : a.frequencies) {
        ok = ok && std::abs(f - 0.2) <= kFreqBand;
        freqs += fmt("%s%.4f", freqs.empty() ? "" : "/", f);
    }
    return {ok, "frequencies " + freqs + fmt(", unabsorbed %zu of %zu", a.unabsorbed, a.total)};
}

// Line distribution replaced by Gauss-Hermite-like atoms on the x1 axis, then smoothed.
PointCloud line_quadrature_cloud() {
    Batch pts;
    std::vector<double> w;
    const int m = 161;
    for (int i = 0; i < m; ++i) {
        const double u = -8.0 + 16.0 * i / (m - 1);
        pts.push_back(Vector{u, 0.0});
        w.push_back(std::exp(-0.5 * u * u));
    }
    return make_point_cloud(std::move(pts), std::move(w));
}

Outcome singular_asymptotics() {
    const Vector x{1.0, -0.1}, gap{0.0, -0.1};
    const Schedule grid = build_exp_schedule(1e-5, 10.0, 200);
    const DriftProvider exact = oracle_drift(LineGaussian{});
    double worst_ratio = 0.0;
    std::size_t checked = 0;
    for (double t : grid.grid()) {
        if (t > 0.01) break;
        const Vector s = exact(x, t);
        const double r = std::hypot(t * s[0] - gap[0], t * s[1] - gap[1]);
        worst_ratio = std::max(worst_ratio, r / t);
        ++checked;
    }
    const bool exact_ok = worst_ratio <= 2.0;

    constexpr double kSigma = 0.1;
    const PointCloud base = line_quadrature_cloud();
    const DriftProvider smooth = oracle_drift(make_smoothed_cloud(base, kSigma));
    double max_atom = 0.0;
    for (std::size_t i = 0; i < base.points.size(); ++i) max_atom = std::max(max_atom, norm(base.points.row(i)));
    // Every component variance is at least kSigma^2, which bounds the mixture score.
    const double bound = (norm(x) + max_atom) / (kSigma * kSigma);
    bool bounded = true;
    double last_ts = 0.0;
    for (double t : grid.grid()) {
        if (t > 0.01) break;
        const double ns = norm(smooth(x, t));
        bounded = bounded && ns <= bound;
        if (t == grid.t1()) last_ts = t * ns;
    }
    const bool smooth_ok = bounded && last_ts < 1e-3;
    return {exact_ok && smooth_ok,
            fmt("exact: max ||tS-(x-y)||/t = %.4f over %zu grid times (limit 2); smoothed sigma=%.1f: "
                "||S|| <= %.1f %s, t1*||S|| = %.2e at t1 = 1e-5",
                worst_ratio, checked, kSigma, bound, bounded ? "holds" : "violated", last_ts)};
}

// log p(x, t) for N(mu, s^2 I) data: per-coordinate trapezoid quadrature of the forward kernel.
double log_marginal_quadrature(const Vector& mu, double s, const Vector& x, double t) {
    const double a = std::exp(-t / 2.0), v = -std::expm1(-t);
    const int n = 8000;
    double logp = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) {
        const double half = 12.0 * s, h = 2.0 * half / n;
        double total = 0.0;
        for (int i = 0; i <= n; ++i) {
            const double y = mu[j] - half + i * h;
            const double w = (i == 0 || i == n) ? 0.5 : 1.0;
            const double prior = std::exp(-(y - mu[j]) * (y - mu[j]) / (2 * s * s)) / std::sqrt(2 * M_PI * s * s);
            const double d = x[j] - a * y;
            total += w * prior * std::exp(-d * d / (2 * v)) / std::sqrt(2 * M_PI * v);
        }
        logp += std::log(total * h);
    }
    return logp;
}

// Trace of Cov(X_0 | X_t = x) for a point cloud, from the exact posterior atom weights.
double posterior_trace_cov(const PointCloud& c, const Vector& x, double t) {
    const double a = std::exp(-t / 2.0), v = -std::expm1(-t);
    std::vector<double> logw(c.points.size());
    for (std::size_t i = 0; i < logw.size(); ++i) {
        Vector ay(c.points.row_vector(i));
        for (double& y : ay) y *= a;
        logw[i] = std::log(c.weights[i]) - squared_distance(x, ay) / (2 * v);
    }
    const double top = *std::max_element(logw.begin(), logw.end());
    double z = 0.0;
    for (double& l : logw) z += (l = std::exp(l - top));
    const Vector f = oracle_f_pointcloud(c, x, t);
    double tr = 0.0;
    for (std::size_t i = 0; i < logw.size(); ++i) tr += logw[i] / z * squared_distance(c.points.row(i), f);
    return tr;
}

Outcome oracle_cross_validation() {
    constexpr double kMcRel = 0.01, kQuadRel = 1e-4, kBandwidth = 0.05;
    constexpr std::size_t kMcSamples = 1'000'000;
    const PointCloud c = five_point_cloud();
    Rng rng(20240601);
    std::uniform_real_distribution<double> ut(0.1, 2.0);
    double worst_mc = 0.0;
    for (int k = 0; k < 10; ++k) {
        const double t = ut(rng);
        // x drawn from the forward marginal so the kernel sees data.
        const Batch x0 = sample_data(c, 1, rng());
        const Vector x = forward_sample(x0.row(0), t, rng).xt;
        const Vector f = oracle_f_pointcloud(c, x, t);
        const McEstimate mc = mc_oracle_f(c, x, t, kMcSamples, kBandwidth, derive_seed(17, k));
        const double e = rel_err(mc.estimate, f);
        worst_mc = std::max(worst_mc, e);
        std::printf("    3a: t=%.3f x=(%.3f, %.3f) |f|=%.3f ess=%.0f rel=%.4f, error/expected-MC-error %.2f\n", t,
                    x[0], x[1], norm(f), mc.effective_sample_size, e,
                    std::sqrt(squared_distance(mc.estimate, f)) /
                        std::sqrt(posterior_trace_cov(c, x, t) / mc.effective_sample_size));
    }

    const Vector mu{1.0, 2.0};
    const double sigma = 0.5, h = 1e-4;
    std::uniform_real_distribution<double> ux(-2.0, 3.0);
    double worst_quad = 0.0;
    for (int k = 0; k < 10; ++k) {
        const double t = ut(rng);
        const Vector x{ux(rng), ux(rng)};
        Vector fd(2);
        for (std::size_t j = 0; j < 2; ++j) {
            Vector up = x, down = x;
            up[j] += h;
            down[j] -= h;
            fd[j] = -(log_marginal_quadrature(mu, sigma, up, t) - log_marginal_quadrature(mu, sigma, down, t)) / (2 * h);
        }
        worst_quad = std::max(worst_quad, rel_err(oracle_score_gaussian(mu, sigma, x, t), fd));
    }
    return {worst_mc <= kMcRel && worst_quad <= kQuadRel,
            fmt("point cloud vs kernel regression: max rel %.4f (limit %.2f); gaussian vs quadrature FD: max rel "
                "%.2e (limit %.0e)",
                worst_mc, kMcRel, worst_quad, kQuadRel)};
}

double loss_only(const Mlp& m, const Batch& x, const Batch& y, const std::vector<double>& w) {
    double total = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const Vector out = mlp_forward(m, x.row(i));
        total += w[i] * squared_distance(y.row(i), out);
    }
    return total / static_cast<double>(x.size());
}

Outcome gradient_check() {
    constexpr double kStep = 1e-6, kMaxRel = 1e-5, kFloor = 1e-4;
    Rng rng(99);
    std::uniform_real_distribution<double> pos(0.1, 3.0);
    double worst = 0.0;
    std::size_t params = 0;
    for (int k = 0; k < 20; ++k) {
        Mlp m = init_mlp({3, 16, 16, 2}, derive_seed(5, k));
        for (std::size_t l = 0; l < m.num_layers(); ++l)
            for (double& b : m.biases(l)) b = 0.2 * (pos(rng) - 1.5);
        Batch x(16, 3), y(16, 2);
        fill_standard_normal(x.data(), rng);
        fill_standard_normal(y.data(), rng);
        std::vector<double> w(16);
        for (double& v : w) v = pos(rng);
        const LossAndGrad lg = mlp_loss_grad(m, x, y, w);
        for (std::size_t p = 0; p < m.parameter_count(); ++p) {
            const double orig = m.parameters()[p];
            m.parameters()[p] = orig + kStep;
            const double up = loss_only(m, x, y, w);
            m.parameters()[p] = orig - kStep;
            const double down = loss_only(m, x, y, w);
            m.parameters()[p] = orig;
            const double fd = (up - down) / (2 * kStep);
            worst = std::max(worst, std::abs(lg.grads[p] - fd) / std::max({std::abs(lg.grads[p]), std::abs(fd), kFloor}));
            ++params;
        }
    }
    return {worst < kMaxRel, fmt("max relative error %.2e over %zu parameters (limit %.0e)", worst, params, kMaxRel)};
}

Outcome parameterization_identities() {
    constexpr double kEpsTol = 1e-12, kFTol = 1e-10;
    const std::vector<DataDistribution> dists{five_point_cloud(),
                                              four_point_cloud(),
                                              twenty_point_cloud(),
                                              LineGaussian{},
                                              make_isotropic_gaussian({1.0, 2.0}, 0.5),
                                              make_smoothed_cloud(four_point_cloud(), 0.3)};
    Rng rng(55);
    std::normal_distribution<double> g(0.0, 2.0);
    std::uniform_real_distribution<double> lt(std::log(1e-3), std::log(10.0));
    double worst_eps = 0.0, worst_f = 0.0, worst_trip = 0.0;
    for (const DataDistribution& d : dists) {
        const DriftProvider s = oracle_drift(d);
        for (int i = 0; i < 100; ++i) {
            const Vector x{g(rng), g(rng)};
            const double t = std::exp(lt(rng));
            const OracleTargets o = oracle_targets(d, x, t);
            const double scale = std::max(1.0, norm(o.s));
            const double c = std::sqrt(-std::expm1(-t));
            Vector eps_from_s(2), s_from_f(2);
            for (std::size_t j = 0; j < 2; ++j) {
                eps_from_s[j] = c * o.s[j];
                s_from_f[j] = (x[j] - std::exp(-t / 2) * o.f[j]) / -std::expm1(-t);
            }
            worst_eps = std::max(worst_eps, std::sqrt(squared_distance(o.eps, eps_from_s)) / std::max(1.0, norm(o.eps)));
            worst_f = std::max(worst_f, std::sqrt(squared_distance(o.s, s_from_f)) / scale);
            for (TargetKind kind : {TargetKind::kScore, TargetKind::kEpsilon, TargetKind::kCondExp}) {
                const Vector back = as_score(kind, from_score(kind, s))(x, t);
                const double tol = kind == TargetKind::kEpsilon ? kEpsTol : kFTol;
                worst_trip = std::max(worst_trip, std::sqrt(squared_distance(back, o.s)) / scale / tol);
            }
        }
    }
    return {worst_eps <= kEpsTol && worst_f <= kFTol && worst_trip <= 1.0,
            fmt("eps vs scaled S %.1e (limit %.0e), S from f %.1e (limit %.0e), round trips at %.2f of tolerance",
                worst_eps, kEpsTol, worst_f, kFTol, worst_trip)};
}

Outcome gaussian_sampling() {
    constexpr double kTol = 0.05;
    const Vector mu{1.0, 2.0};
    const Batch out =
        backward_sample(oracle_drift(make_isotropic_gaussian(mu, 0.5)), build_exp_schedule(0.01, 10.0, 200), 100000, 6);
    const Moments m = sample_moments(out);
    bool ok = true;
    for (std::size_t j = 0; j < 2; ++j) ok = ok && std::abs(m.mean[j] - mu[j]) <= kTol && std::abs(m.std[j] - 0.5) <= kTol;
    return {ok, fmt("mean (%.4f, %.4f), std (%.4f, %.4f); target (1, 2), 0.5, tolerance %.2f", m.mean[0], m.mean[1],
                    m.std[0], m.std[1], kTol)};
}

Outcome pollution_contrast() {
    constexpr double kCemLimit = 0.05;
    const TargetKind kinds[] = {TargetKind::kCondExp, TargetKind::kEpsilon, TargetKind::kScore};
    std::vector<double> stds[3];
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        for (int k = 0; k < 3; ++k) {
            RunConfig cfg;
            cfg.seed = seed;
            cfg.num_samples = 1'000'000;
            cfg.batch_size = 1000;
            cfg.num_epochs = 20;
            cfg.hidden_layers = {16, 16};
            cfg.target_kind = kinds[k];
            const auto start = std::chrono::steady_clock::now();
            const TrainResult r = train(LineGaussian{}, cfg);
            const auto model = std::make_shared<const Mlp>(r.model);
            const Batch out = backward_sample(as_score(kinds[k], model), build_exp_schedule(cfg.t1, cfg.T, cfg.K), 10000,
                                              derive_seed(seed, Stream::kSampling));
            stds[k].push_back(sample_moments(out).std[1]);
            std::printf("    7: seed %llu %-10s steps %zu final loss %.4g std(X2) %.4f (%.0fs)\n",
                        static_cast<unsigned long long>(seed), std::string(to_string(kinds[k])).c_str(), r.loss_trace.size(),
                        r.loss_trace.back(), stds[k].back(),
                        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
            std::fflush(stdout);
        }
    }
    const double cem = median3(stds[0]), ddpm = median3(stds[1]), sgm = median3(stds[2]);
    return {cem < ddpm && cem < kCemLimit,
            fmt("median std(X2): CEM %.4f, DDPM-eps %.4f, SGM-S %.4f (need CEM < DDPM and CEM < %.2f)", cem, ddpm, sgm,
                kCemLimit)};
}

Outcome lambda_shape() {
    constexpr double kMinQuality = 0.95;
    const PointCloud c = five_point_cloud();
    const Schedule grid = build_exp_schedule(0.01, 10.0, 30);
    const ErrorCurve curve = lambda_true_estimate(c, oracle_field(c, TargetKind::kCondExp), grid.grid(), 100000, 8);
    const LambdaFit fit = fit_lambda_constant(curve);
    return {fit.quality > kMinQuality,
            fmt("C = %.4g, squared correlation %.4f (need > %.2f); E||X0-f||^2 runs %.3g .. %.3g", fit.constant,
                fit.quality, kMinQuality, curve.values.front(), curve.values.back())};
}

Outcome step_equivalence() {
    constexpr double kLo = 3.5, kHi = 4.5;
    const DataDistribution gauss = make_isotropic_gaussian({1.0, 2.0}, 0.5);
    const DriftProvider s = oracle_drift(gauss);
    const VectorField eps = oracle_field(gauss, TargetKind::kEpsilon);
    const Vector x{0.7, -1.3}, noise{0.2, 0.5};
    const double t_hi = 1.0;
    std::vector<double> gaps;
    for (double dt : {0.2, 0.1, 0.05, 0.025})
        gaps.push_back(std::sqrt(squared_distance(ddpm_step(x, t_hi, t_hi - dt, eps, noise),
                                                  splitting_step(x, t_hi, t_hi - dt, s, noise))));
    bool ok = true;
    std::string ratios;
    for (std::size_t i = 1; i < gaps.size(); ++i) {
        const double r = gaps[i - 1] / gaps[i];
        ok = ok && r >= kLo && r <= kHi;
        ratios += fmt("%s%.3f", ratios.empty() ? "" : ", ", r);
    }
    return {ok, "halving ratios " + ratios + fmt(" for dt 0.2 .. 0.025 (band [%.1f, %.1f])", kLo, kHi)};
}

Outcome t1_sweep() {
    constexpr double kTol = 1e-2;
    const PointCloud c = twenty_point_cloud();
    const DriftProvider d = oracle_drift(c);
    std::vector<double> rates;
    std::string text;
    for (double t1 : {0.1, 0.03, 0.01}) {
        const Absorption a = absorption_frequencies(backward_sample(d, build_exp_schedule(t1, 10.0, 200), 10000, 10), c, kTol);
        rates.push_back(double(a.unabsorbed) / double(a.total));
        text += fmt("%st1=%g: %.4f", text.empty() ? "" : ", ", t1, rates.back());
    }
    const bool ok = std::is_sorted(rates.rbegin(), rates.rend());
    return {ok, "unabsorbed " + text};
}

}  // namespace

int main(int argc, char** argv) {
    struct Criterion {
        int id;
        const char* name;
        std::function<Outcome()> run;
    };
    const std::vector<Criterion> criteria{
        {1, "five-point absorption table", table1},
        {2, "score singularity and smoothed boundedness", singular_asymptotics},
        {3, "oracle cross-validation", oracle_cross_validation},
        {4, "gradient check", gradient_check},
        {5, "parameterization identities", parameterization_identities},
        {6, "exact-drift gaussian sampling", gaussian_sampling},
        {7, "trained-model pollution contrast", pollution_contrast},
        {8, "loss-variance shape fit", lambda_shape},
        {9, "ddpm and splitting step agreement", step_equivalence},
        {10, "t1 sweep", t1_sweep},
    };
    std::vector<int> only;
    for (int i = 1; i < argc; ++i) only.push_back(std::atoi(argv[i]));

    int failures = 0;
    for (const Criterion& c : criteria) {
        if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::printf("%s [%d] %s: %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs);
        std::fflush(stdout);
        failures += o.pass ? 0 : 1;
    }
    std::printf("%d criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
