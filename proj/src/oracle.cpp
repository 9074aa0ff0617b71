#include "difflab/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "difflab/error.hpp"
#include "parallel.hpp"

namespace difflab {

namespace {

void require_singular_time(double t, const char* who) {
    if (!(t >= kMinOracleTime) || !std::isfinite(t))
        throw InvalidTime(std::string(who) + ": time must be >= 1e-12, got " + std::to_string(t));
}

void require_time(double t, const char* who) {
    if (!(t >= 0.0) || !std::isfinite(t))
        throw InvalidTime(std::string(who) + ": time must be >= 0, got " + std::to_string(t));
}

void require_dim(std::size_t got, std::size_t want, const char* who) {
    if (got != want) throw ShapeMismatch(std::string(who) + ": dimension mismatch");
}

double one_minus_exp(double t) { return -std::expm1(-t); }

/// Softmax weights over logits -||x - a y_i||^2 / (2 var) + log w_i, max-shifted.
std::vector<double> posterior_weights(const PointCloud& cloud, std::span<const double> x, double a,
                                      double var) {
    const std::size_t m = cloud.points.size();
    std::vector<double> logit(m);
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < m; ++i) {
        auto y = cloud.points.row(i);
        double d = 0.0;
        for (std::size_t j = 0; j < x.size(); ++j) {
            const double r = x[j] - a * y[j];
            d += r * r;
        }
        logit[i] = -d / (2.0 * var) + std::log(cloud.weights[i]);
        top = std::max(top, logit[i]);
    }
    double total = 0.0;
    for (double& l : logit) {
        l = std::exp(l - top);
        total += l;
    }
    for (double& l : logit) l /= total;
    return logit;
}

}  // namespace

OracleTargets targets_from_score(std::span<const double> x, double t, Vector s) {
    require_dim(s.size(), x.size(), "targets_from_score");
    const double v = one_minus_exp(t);
    const double root = std::sqrt(v);
    const double grow = std::exp(t / 2.0);
    OracleTargets out{std::move(s), Vector(x.size()), Vector(x.size())};
    for (std::size_t j = 0; j < x.size(); ++j) {
        out.eps[j] = root * out.s[j];
        out.f[j] = (x[j] - v * out.s[j]) * grow;
    }
    return out;
}

OracleTargets targets_from_cond_exp(std::span<const double> x, double t, Vector f) {
    require_dim(f.size(), x.size(), "targets_from_cond_exp");
    require_singular_time(t, "targets_from_cond_exp");
    const double v = one_minus_exp(t);
    const double decay = std::exp(-t / 2.0);
    const double root = std::sqrt(v);
    OracleTargets out{Vector(x.size()), Vector(x.size()), std::move(f)};
    for (std::size_t j = 0; j < x.size(); ++j) {
        out.s[j] = (x[j] - decay * out.f[j]) / v;
        out.eps[j] = root * out.s[j];
    }
    return out;
}

Vector oracle_f_pointcloud(const PointCloud& cloud, std::span<const double> x, double t) {
    require_singular_time(t, "oracle_f_pointcloud");
    require_dim(x.size(), cloud.points.dim(), "oracle_f_pointcloud");
    const auto w = posterior_weights(cloud, x, std::exp(-t / 2.0), one_minus_exp(t));
    Vector f(x.size(), 0.0);
    for (std::size_t i = 0; i < w.size(); ++i) {
        auto y = cloud.points.row(i);
        for (std::size_t j = 0; j < f.size(); ++j) f[j] += w[i] * y[j];
    }
    return f;
}

Vector oracle_score_pointcloud(const PointCloud& cloud, std::span<const double> x, double t) {
    require_singular_time(t, "oracle_score_pointcloud");
    require_dim(x.size(), cloud.points.dim(), "oracle_score_pointcloud");
    const double a = std::exp(-t / 2.0);
    const double v = one_minus_exp(t);
    const auto w = posterior_weights(cloud, x, a, v);
    Vector s(x.size(), 0.0);
    for (std::size_t i = 0; i < w.size(); ++i) {
        auto y = cloud.points.row(i);
        for (std::size_t j = 0; j < s.size(); ++j) s[j] += w[i] * (x[j] - a * y[j]);
    }
    for (double& c : s) c /= v;
    return s;
}

Vector oracle_score_gaussian(std::span<const double> mu, double sigma, std::span<const double> x, double t) {
    require_time(t, "oracle_score_gaussian");
    require_dim(x.size(), mu.size(), "oracle_score_gaussian");
    if (!(sigma > 0.0)) throw InvalidArgument("oracle_score_gaussian: sigma must be positive");
    const double a = std::exp(-t / 2.0);
    const double var = sigma * sigma * std::exp(-t) + one_minus_exp(t);
    Vector s(x.size());
    for (std::size_t j = 0; j < s.size(); ++j) s[j] = (x[j] - mu[j] * a) / var;
    return s;
}

OracleTargets oracle_targets_line(std::span<const double> x, double t) {
    require_singular_time(t, "oracle_targets_line");
    require_dim(x.size(), 2, "oracle_targets_line");
    const double v = one_minus_exp(t);
    const double root = std::sqrt(v);
    return {
        {x[0], x[1] / v},
        {root * x[0], x[1] / root},
        {x[0] * std::exp(-t / 2.0), 0.0},
    };
}

Vector oracle_score_smoothed(const PointCloud& cloud, double sigma, std::span<const double> x, double t) {
    require_time(t, "oracle_score_smoothed");
    require_dim(x.size(), cloud.points.dim(), "oracle_score_smoothed");
    if (!(sigma > 0.0)) throw InvalidArgument("oracle_score_smoothed: sigma must be positive");
    const double a = std::exp(-t / 2.0);
    const double var = sigma * sigma * std::exp(-t) + one_minus_exp(t);
    const auto w = posterior_weights(cloud, x, a, var);
    Vector s(x.size(), 0.0);
    for (std::size_t i = 0; i < w.size(); ++i) {
        auto y = cloud.points.row(i);
        for (std::size_t j = 0; j < s.size(); ++j) s[j] += w[i] * (x[j] - a * y[j]);
    }
    for (double& c : s) c /= var;
    return s;
}

bool has_analytic_oracle(const DataDistribution& dist) { return !std::holds_alternative<SpiralCurve>(dist); }

OracleTargets oracle_targets(const DataDistribution& dist, std::span<const double> x, double t) {
    if (const auto* c = std::get_if<PointCloud>(&dist))
        return targets_from_cond_exp(x, t, oracle_f_pointcloud(*c, x, t));
    if (const auto* g = std::get_if<IsotropicGaussian>(&dist))
        return targets_from_score(x, t, oracle_score_gaussian(g->mu, g->sigma, x, t));
    if (std::holds_alternative<LineGaussian>(dist)) return oracle_targets_line(x, t);
    if (const auto* s = std::get_if<SmoothedCloud>(&dist))
        return targets_from_score(x, t, oracle_score_smoothed(s->base, s->sigma, x, t));
    throw Unsupported("no closed-form oracle for distribution '" + std::string(name(dist)) + "'");
}

// ---------------------------------------------------------------------------

McEstimate mc_conditional_mean(const DataDistribution& dist, std::span<const double> x, double t,
                               double t_source, std::size_t n, double bandwidth, std::uint64_t seed) {
    if (!(t > 0.0)) throw InvalidTime("mc_oracle: time must be positive");
    if (!(t_source >= 0.0) || !(t_source < t)) throw InvalidTime("mc_oracle: need 0 <= t_source < t");
    if (n < 1000) throw InvalidArgument("mc_oracle: n must be >= 1000");
    if (!(bandwidth > 0.0)) throw InvalidArgument("mc_oracle: bandwidth must be positive");
    const std::size_t d = dimension(dist);
    require_dim(x.size(), d, "mc_oracle");

    constexpr std::size_t kBlock = 1 << 16;
    const std::size_t blocks = (n + kBlock - 1) / kBlock;
    struct Partial {
        double w = 0.0, w2 = 0.0;
        Vector wx;
    };
    std::vector<Partial> partials(blocks);

    const double a_src = std::exp(-t_source / 2.0);
    const double s_src = std::sqrt(one_minus_exp(t_source));
    const double a_obs = std::exp(-(t - t_source) / 2.0);
    const double s_obs = std::sqrt(one_minus_exp(t - t_source));
    const double inv_two_h2 = 1.0 / (2.0 * bandwidth * bandwidth);

    detail::for_each_block(blocks, [&](std::size_t b) {
        const std::size_t count = std::min(kBlock, n - b * kBlock);
        Rng rng(derive_seed(seed, b));
        Batch x0(count, d);
        sample_data_into(dist, x0, rng);
        std::normal_distribution<double> normal(0.0, 1.0);
        Partial p;
        p.wx.assign(d, 0.0);
        Vector src(d);
        for (std::size_t i = 0; i < count; ++i) {
            auto r = x0.row(i);
            double dist2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                src[j] = a_src * r[j] + s_src * normal(rng);
                const double obs = a_obs * src[j] + s_obs * normal(rng);
                dist2 += (obs - x[j]) * (obs - x[j]);
            }
            const double w = std::exp(-dist2 * inv_two_h2);
            p.w += w;
            p.w2 += w * w;
            for (std::size_t j = 0; j < d; ++j) p.wx[j] += w * src[j];
        }
        partials[b] = std::move(p);
    });

    double w = 0.0, w2 = 0.0;
    Vector wx(d, 0.0);
    for (const auto& p : partials) {
        w += p.w;
        w2 += p.w2;
        for (std::size_t j = 0; j < d; ++j) wx[j] += p.wx[j];
    }
    const double ess = w2 > 0.0 ? w * w / w2 : 0.0;
    if (!(ess >= 30.0))
        throw Degenerate("mc_oracle: effective sample size " + std::to_string(ess) +
                         " < 30; widen the bandwidth or draw more samples");
    for (double& c : wx) c /= w;
    return {std::move(wx), ess};
}

McEstimate mc_oracle_f(const DataDistribution& dist, std::span<const double> x, double t, std::size_t n,
                       double bandwidth, std::uint64_t seed) {
    return mc_conditional_mean(dist, x, t, 0.0, n, bandwidth, seed);
}

}  // namespace difflab
