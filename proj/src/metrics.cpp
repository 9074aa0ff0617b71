#include "difflab/metrics.hpp"

#include <cmath>
#include <sstream>

#include "difflab/error.hpp"

namespace difflab {

namespace {

Vector eval_checked(const VectorField& f, std::span<const double> x, double t) {
    Vector v = f(x, t);
    if (!all_finite(v)) {
        std::ostringstream os;
        os.precision(17);
        os << "non-finite field value at x=(";
        for (std::size_t i = 0; i < x.size(); ++i) os << (i ? ", " : "") << x[i];
        os << "), t=" << t;
        throw NonFinite(os.str());
    }
    return v;
}

double diff_measure(const Vector& a, const Vector& b, std::optional<std::size_t> component, bool squared) {
    if (a.size() != b.size()) throw ShapeMismatch("fields disagree on dimension");
    if (component) {
        if (*component >= a.size()) throw OutOfRange("component index beyond dimension");
        const double d = std::abs(a[*component] - b[*component]);
        return squared ? d * d : d;
    }
    const double sq = squared_distance(a, b);
    return squared ? sq : std::sqrt(sq);
}

}  // namespace

ErrorCurve pointwise_error(const VectorField& a, const VectorField& b, std::span<const double> x,
                           std::span<const double> times, std::optional<std::size_t> component) {
    ErrorCurve curve;
    curve.label = component ? "pointwise_component_" + std::to_string(*component + 1) : "pointwise_norm";
    for (double t : times) {
        if (!(t > 0.0)) throw InvalidTime("pointwise_error: times must be positive");
        curve.times.push_back(t);
        curve.values.push_back(diff_measure(eval_checked(a, x, t), eval_checked(b, x, t), component, false));
    }
    return curve;
}

double l2_error_over_p(const VectorField& a, const VectorField& b, const DataDistribution& dist, double t,
                       std::size_t n, std::uint64_t seed, std::optional<std::size_t> component) {
    if (!(t > 0.0)) throw InvalidTime("l2_error_over_p: time must be positive");
    if (n < 1) throw InvalidArgument("l2_error_over_p: n must be >= 1");
    Rng rng(seed);
    Batch x0(n, dimension(dist));
    sample_data_into(dist, x0, rng);
    const double decay = std::exp(-t / 2.0);
    const double sd = std::sqrt(-std::expm1(-t));
    Vector xt(x0.dim()), noise(x0.dim());
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        fill_standard_normal(noise, rng);
        auto r = x0.row(i);
        for (std::size_t j = 0; j < xt.size(); ++j) xt[j] = r[j] * decay + sd * noise[j];
        total += diff_measure(eval_checked(a, xt, t), eval_checked(b, xt, t), component, true);
    }
    return total / static_cast<double>(n);
}

Absorption absorption_frequencies(const Batch& samples, const PointCloud& cloud, double tol) {
    if (!(tol > 0.0)) throw InvalidArgument("absorption_frequencies: tol must be positive");
    if (!samples.empty() && samples.dim() != cloud.points.dim())
        throw ShapeMismatch("absorption_frequencies: dimension mismatch");
    const std::size_t m = cloud.points.size();
    Absorption out;
    out.counts.assign(m, 0);
    out.total = samples.size();
    const double tol2 = tol * tol;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        std::size_t best = 0;
        double best_d = squared_distance(samples.row(i), cloud.points.row(0));
        for (std::size_t k = 1; k < m; ++k) {
            const double d = squared_distance(samples.row(i), cloud.points.row(k));
            if (d < best_d) {
                best_d = d;
                best = k;
            }
        }
        if (best_d <= tol2)
            ++out.counts[best];
        else
            ++out.unabsorbed;
    }
    out.frequencies.resize(m, 0.0);
    if (out.total > 0)
        for (std::size_t k = 0; k < m; ++k)
            out.frequencies[k] = static_cast<double>(out.counts[k]) / static_cast<double>(out.total);
    return out;
}

ErrorCurve singularity_profile(const DriftProvider& drift, const DataDistribution& dist, std::span<const double> x,
                               std::span<const double> times) {
    const Vector y = nearest_manifold_point(dist, x);
    ErrorCurve curve;
    curve.label = "singularity_profile";
    for (double t : times) {
        if (!(t > 0.0)) throw InvalidTime("singularity_profile: times must be positive");
        const Vector s = eval_checked(drift.field(), x, t);
        double sq = 0.0;
        for (std::size_t j = 0; j < x.size(); ++j) {
            const double r = t * s[j] - (x[j] - y[j]);
            sq += r * r;
        }
        curve.times.push_back(t);
        curve.values.push_back(std::sqrt(sq));
    }
    return curve;
}

ErrorCurve lambda_true_estimate(const DataDistribution& dist, const VectorField& f, std::span<const double> times,
                                std::size_t n, std::uint64_t seed) {
    if (n < 2) throw InvalidArgument("lambda_true_estimate: n must be >= 2");
    ErrorCurve curve;
    curve.label = "lambda_true_inverse";
    const std::size_t d = dimension(dist);
    for (std::size_t k = 0; k < times.size(); ++k) {
        const double t = times[k];
        if (!(t > 0.0)) throw InvalidTime("lambda_true_estimate: times must be positive");
        Rng rng(derive_seed(seed, k));
        Batch x0(n, d);
        sample_data_into(dist, x0, rng);
        const double decay = std::exp(-t / 2.0);
        const double sd = std::sqrt(-std::expm1(-t));
        Vector xt(d), noise(d);
        double sum = 0.0, sum_sq = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            fill_standard_normal(noise, rng);
            auto r = x0.row(i);
            for (std::size_t j = 0; j < d; ++j) xt[j] = r[j] * decay + sd * noise[j];
            const double e = squared_distance(r, eval_checked(f, xt, t));
            sum += e;
            sum_sq += e * e;
        }
        const double mean = sum / static_cast<double>(n);
        const double var = std::max(0.0, (sum_sq - n * mean * mean) / static_cast<double>(n - 1));
        curve.times.push_back(t);
        curve.values.push_back(mean);
        curve.std_errors.push_back(std::sqrt(var / static_cast<double>(n)));
    }
    return curve;
}

LambdaFit fit_lambda_constant(const ErrorCurve& curve) {
    const std::size_t n = curve.values.size();
    if (n < 2 || curve.times.size() != n) throw InvalidArgument("fit_lambda_constant: need >= 2 matched points");
    bool any_positive = false;
    for (double v : curve.values) {
        if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidArgument("fit_lambda_constant: values must be >= 0");
        any_positive |= v > 0.0;
    }
    if (!any_positive) throw Degenerate("fit_lambda_constant: curve is identically zero");

    std::vector<double> g(n);
    for (std::size_t i = 0; i < n; ++i) g[i] = std::expm1(curve.times[i]);

    double vg = 0.0, gg = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        vg += curve.values[i] * g[i];
        gg += g[i] * g[i];
    }
    LambdaFit fit;
    fit.constant = vg / gg;

    double mv = 0.0, mg = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mv += curve.values[i];
        mg += g[i];
    }
    mv /= static_cast<double>(n);
    mg /= static_cast<double>(n);
    double cov = 0.0, var_v = 0.0, var_g = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        cov += (curve.values[i] - mv) * (g[i] - mg);
        var_v += (curve.values[i] - mv) * (curve.values[i] - mv);
        var_g += (g[i] - mg) * (g[i] - mg);
    }
    fit.quality = (var_v > 0.0 && var_g > 0.0) ? cov * cov / (var_v * var_g) : 0.0;
    return fit;
}

Moments sample_moments(const Batch& samples) {
    const std::size_t n = samples.size();
    if (n < 2) throw InvalidArgument("sample_moments: need at least two samples");
    const std::size_t d = samples.dim();
    Moments m{Vector(d, 0.0), Vector(d, 0.0)};
    for (std::size_t i = 0; i < n; ++i) {
        auto r = samples.row(i);
        for (std::size_t j = 0; j < d; ++j) m.mean[j] += r[j];
    }
    for (double& c : m.mean) c /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto r = samples.row(i);
        for (std::size_t j = 0; j < d; ++j) m.std[j] += (r[j] - m.mean[j]) * (r[j] - m.mean[j]);
    }
    for (double& c : m.std) c = std::sqrt(c / static_cast<double>(n - 1));
    return m;
}

}  // namespace difflab
