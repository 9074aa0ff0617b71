#include "difflab/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>

#include "difflab/error.hpp"

namespace difflab {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

Batch points_from_rows(std::initializer_list<std::pair<double, double>> rows) {
    Batch b;
    for (auto [x, y] : rows) {
        const double p[] = {x, y};
        b.push_back(p);
    }
    return b;
}

double spiral_sq_distance(double u, double x, double y) {
    const double dx = u * std::cos(u) - x;
    const double dy = u * std::sin(u) - y;
    return dx * dx + dy * dy;
}

double spiral_nearest_parameter(const SpiralCurve& s, double x, double y) {
    constexpr int kGrid = 4096;
    const double h = (s.u_max - s.u_min) / (kGrid - 1);
    int best = 0;
    double best_d = spiral_sq_distance(s.u_min, x, y);
    for (int i = 1; i < kGrid; ++i) {
        const double d = spiral_sq_distance(s.u_min + i * h, x, y);
        if (d < best_d) {
            best_d = d;
            best = i;
        }
    }
    double lo = s.u_min + std::max(best - 1, 0) * h;
    double hi = s.u_min + std::min(best + 1, kGrid - 1) * h;

    // Golden-section search on the bracketing cell pair.
    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double c = hi - inv_phi * (hi - lo);
    double d = lo + inv_phi * (hi - lo);
    double fc = spiral_sq_distance(c, x, y);
    double fd = spiral_sq_distance(d, x, y);
    for (int it = 0; it < 200 && hi - lo > 1e-14 * std::max(1.0, std::abs(hi)); ++it) {
        if (fc < fd) {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = spiral_sq_distance(c, x, y);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = spiral_sq_distance(d, x, y);
        }
    }
    const double u = 0.5 * (lo + hi);
    // The grid end points are candidates too (the minimum may sit on the boundary).
    double best_u = u;
    double best_val = spiral_sq_distance(u, x, y);
    for (double e : {s.u_min, s.u_max}) {
        const double v = spiral_sq_distance(e, x, y);
        if (v < best_val) {
            best_val = v;
            best_u = e;
        }
    }
    return best_u;
}

// Composite Simpson rule on [a, b] with an even number of panels.
template <typename F>
double simpson(F&& f, double a, double b, int panels = 20000) {
    const double h = (b - a) / panels;
    double s = f(a) + f(b);
    for (int i = 1; i < panels; ++i) s += (i % 2 ? 4.0 : 2.0) * f(a + i * h);
    return s * h / 3.0;
}

Vector cloud_mean(const PointCloud& c) {
    Vector m(c.points.dim(), 0.0);
    for (std::size_t i = 0; i < c.points.size(); ++i) {
        auto p = c.points.row(i);
        for (std::size_t j = 0; j < m.size(); ++j) m[j] += c.weights[i] * p[j];
    }
    return m;
}

double cloud_total_variance(const PointCloud& c) {
    const Vector m = cloud_mean(c);
    double v = 0.0;
    for (std::size_t i = 0; i < c.points.size(); ++i) v += c.weights[i] * squared_distance(c.points.row(i), m);
    return v;
}

void sample_cloud(const PointCloud& c, Batch& out, Rng& rng, double sigma) {
    std::discrete_distribution<std::size_t> pick(c.weights.begin(), c.weights.end());
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t i = 0; i < out.size(); ++i) {
        auto src = c.points.row(pick(rng));
        auto dst = out.row(i);
        for (std::size_t j = 0; j < dst.size(); ++j)
            dst[j] = src[j] + (sigma > 0.0 ? sigma * normal(rng) : 0.0);
    }
}

void require_keys(const nlohmann::json& doc, std::initializer_list<const char*> allowed) {
    for (const auto& [key, value] : doc.items()) {
        if (key == "type") continue;
        if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
            throw ParseError("distribution '" + doc.at("type").get<std::string>() + "': unknown field '" +
                             key + "'");
    }
}

}  // namespace

PointCloud make_point_cloud(Batch points, std::vector<double> weights) {
    if (points.size() == 0) throw InvalidArgument("point cloud needs at least one point");
    if (!all_finite(points.data())) throw InvalidArgument("point cloud coordinates must be finite");
    if (weights.empty()) weights.assign(points.size(), 1.0);
    if (weights.size() != points.size())
        throw ShapeMismatch("point cloud: weight count differs from point count");
    double total = 0.0;
    for (double w : weights) {
        if (!(w > 0.0) || !std::isfinite(w)) throw InvalidArgument("point cloud weights must be positive");
        total += w;
    }
    for (double& w : weights) w /= total;
    return {std::move(points), std::move(weights)};
}

IsotropicGaussian make_isotropic_gaussian(Vector mu, double sigma) {
    if (mu.empty()) throw InvalidArgument("gaussian mean must have dimension >= 1");
    if (!all_finite(mu)) throw InvalidArgument("gaussian mean must be finite");
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw InvalidArgument("gaussian sigma must be positive");
    return {std::move(mu), sigma};
}

SmoothedCloud make_smoothed_cloud(PointCloud base, double sigma) {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw InvalidArgument("smoothing sigma must be positive");
    return {make_point_cloud(std::move(base.points), std::move(base.weights)), sigma};
}

SpiralCurve make_spiral(double u_min, double u_max) {
    if (!(u_max > u_min) || !std::isfinite(u_min) || !std::isfinite(u_max))
        throw InvalidArgument("spiral: u_max must exceed u_min");
    return {u_min, u_max};
}

PointCloud five_point_cloud() {
    return make_point_cloud(
        points_from_rows({{-2.0, -0.5}, {-0.5, 2.0}, {1.5, 1.5}, {2.0, -1.5}, {0.0, -2.5}}));
}

PointCloud four_point_cloud() {
    return make_point_cloud(points_from_rows({{1.0, -3.0}, {1.0, -1.0}, {1.0, 1.0}, {1.0, 3.0}}));
}

PointCloud twenty_point_cloud() {
    return make_point_cloud(points_from_rows({
        {-1.32, -0.23}, {-2.27, 0.14},  {-0.54, -2.57}, {-2.41, 2.92}, {1.16, -0.31},
        {0.84, -1.38},  {-1.19, -2.56}, {-2.68, 1.84},  {1.88, -2.97}, {-0.19, 0.71},
        {0.31, -2.20},  {1.21, 0.68},   {-0.20, -1.22}, {2.51, -2.50}, {-2.13, -0.73},
        {-1.44, 0.70},  {1.64, -1.95},  {1.18, -2.43},  {2.90, -1.26}, {-2.76, -1.53},
    }));
}

std::size_t dimension(const DataDistribution& dist) {
    return std::visit(overloaded{
                          [](const PointCloud& c) { return c.points.dim(); },
                          [](const IsotropicGaussian& g) { return g.mu.size(); },
                          [](const LineGaussian&) { return std::size_t{2}; },
                          [](const SpiralCurve&) { return std::size_t{2}; },
                          [](const SmoothedCloud& s) { return s.base.points.dim(); },
                      },
                      dist);
}

std::string_view name(const DataDistribution& dist) {
    return std::visit(overloaded{
                          [](const PointCloud&) { return std::string_view("point_cloud"); },
                          [](const IsotropicGaussian&) { return std::string_view("isotropic_gaussian"); },
                          [](const LineGaussian&) { return std::string_view("line_gaussian"); },
                          [](const SpiralCurve&) { return std::string_view("spiral"); },
                          [](const SmoothedCloud&) { return std::string_view("smoothed_cloud"); },
                      },
                      dist);
}

void sample_data_into(const DataDistribution& dist, Batch& out, Rng& rng) {
    if (out.dim() != dimension(dist)) throw ShapeMismatch("sample_data: batch dimension mismatch");
    std::visit(overloaded{
                   [&](const PointCloud& c) { sample_cloud(c, out, rng, 0.0); },
                   [&](const IsotropicGaussian& g) {
                       std::normal_distribution<double> normal(0.0, 1.0);
                       for (std::size_t i = 0; i < out.size(); ++i) {
                           auto r = out.row(i);
                           for (std::size_t j = 0; j < r.size(); ++j) r[j] = g.mu[j] + g.sigma * normal(rng);
                       }
                   },
                   [&](const LineGaussian&) {
                       std::normal_distribution<double> normal(0.0, 1.0);
                       for (std::size_t i = 0; i < out.size(); ++i) {
                           auto r = out.row(i);
                           r[0] = normal(rng);
                           r[1] = 0.0;
                       }
                   },
                   [&](const SpiralCurve& s) {
                       std::uniform_real_distribution<double> unif(s.u_min, s.u_max);
                       for (std::size_t i = 0; i < out.size(); ++i) {
                           const double u = unif(rng);
                           auto r = out.row(i);
                           r[0] = u * std::cos(u);
                           r[1] = u * std::sin(u);
                       }
                   },
                   [&](const SmoothedCloud& s) { sample_cloud(s.base, out, rng, s.sigma); },
               },
               dist);
}

Batch sample_data(const DataDistribution& dist, std::size_t n, std::uint64_t seed) {
    if (n < 1) throw InvalidArgument("sample_data: n must be >= 1");
    Batch out(n, dimension(dist));
    Rng rng(seed);
    sample_data_into(dist, out, rng);
    return out;
}

bool has_support_manifold(const DataDistribution& dist) {
    return std::holds_alternative<PointCloud>(dist) || std::holds_alternative<LineGaussian>(dist) ||
           std::holds_alternative<SpiralCurve>(dist);
}

Vector nearest_manifold_point(const DataDistribution& dist, std::span<const double> x) {
    if (x.size() != dimension(dist)) throw ShapeMismatch("nearest_manifold_point: dimension mismatch");
    return std::visit(
        overloaded{
            [&](const PointCloud& c) -> Vector {
                std::size_t best = 0;
                double best_d = squared_distance(c.points.row(0), x);
                for (std::size_t i = 1; i < c.points.size(); ++i) {
                    const double d = squared_distance(c.points.row(i), x);
                    if (d < best_d) {
                        best_d = d;
                        best = i;
                    }
                }
                return c.points.row_vector(best);
            },
            [&](const LineGaussian&) -> Vector { return {x[0], 0.0}; },
            [&](const SpiralCurve& s) -> Vector {
                const double u = spiral_nearest_parameter(s, x[0], x[1]);
                return {u * std::cos(u), u * std::sin(u)};
            },
            [&](const IsotropicGaussian&) -> Vector {
                throw Unsupported("nearest_manifold_point: isotropic_gaussian has full support");
            },
            [&](const SmoothedCloud&) -> Vector {
                throw Unsupported("nearest_manifold_point: smoothed_cloud has full support");
            },
        },
        dist);
}

Vector data_mean(const DataDistribution& dist) {
    return std::visit(overloaded{
                          [](const PointCloud& c) { return cloud_mean(c); },
                          [](const IsotropicGaussian& g) { return g.mu; },
                          [](const LineGaussian&) { return Vector{0.0, 0.0}; },
                          [](const SpiralCurve& s) {
                              const double len = s.u_max - s.u_min;
                              return Vector{
                                  simpson([](double u) { return u * std::cos(u); }, s.u_min, s.u_max) / len,
                                  simpson([](double u) { return u * std::sin(u); }, s.u_min, s.u_max) / len,
                              };
                          },
                          [](const SmoothedCloud& s) { return cloud_mean(s.base); },
                      },
                      dist);
}

double total_variance(const DataDistribution& dist) {
    return std::visit(overloaded{
                          [](const PointCloud& c) { return cloud_total_variance(c); },
                          [](const IsotropicGaussian& g) {
                              return static_cast<double>(g.mu.size()) * g.sigma * g.sigma;
                          },
                          [](const LineGaussian&) { return 1.0; },
                          [&](const SpiralCurve& s) {
                              const double len = s.u_max - s.u_min;
                              const double second = simpson([](double u) { return u * u; }, s.u_min, s.u_max) / len;
                              const Vector m = data_mean(dist);
                              return second - (m[0] * m[0] + m[1] * m[1]);
                          },
                          [](const SmoothedCloud& s) {
                              return cloud_total_variance(s.base) +
                                     static_cast<double>(s.base.points.dim()) * s.sigma * s.sigma;
                          },
                      },
                      dist);
}

// ---------------------------------------------------------------------------
// JSON and CSV

namespace {

PointCloud cloud_from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir) {
    const auto type = doc.at("type").get<std::string>();
    if (type == "five_point") return five_point_cloud();
    if (type == "four_point") return four_point_cloud();
    if (type == "twenty_point") return twenty_point_cloud();
    if (type != "point_cloud") throw ParseError("expected a point cloud, got '" + type + "'");
    require_keys(doc, {"points", "weights", "csv"});
    if (doc.contains("csv")) {
        if (doc.contains("points")) throw ParseError("point_cloud: give either 'points' or 'csv', not both");
        std::filesystem::path p = doc.at("csv").get<std::string>();
        if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
        return load_point_cloud_csv(p);
    }
    if (!doc.contains("points")) throw ParseError("point_cloud: missing 'points'");
    Batch pts;
    for (const auto& row : doc.at("points")) pts.push_back(row.get<std::vector<double>>());
    std::vector<double> w;
    if (doc.contains("weights")) w = doc.at("weights").get<std::vector<double>>();
    return make_point_cloud(std::move(pts), std::move(w));
}

nlohmann::json cloud_to_json(const PointCloud& c) {
    nlohmann::json pts = nlohmann::json::array();
    for (std::size_t i = 0; i < c.points.size(); ++i) pts.push_back(c.points.row_vector(i));
    return {{"type", "point_cloud"}, {"points", pts}, {"weights", c.weights}};
}

}  // namespace

DataDistribution distribution_from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir) {
    if (!doc.is_object() || !doc.contains("type") || !doc.at("type").is_string())
        throw ParseError("distribution: expected an object with a string 'type'");
    const auto type = doc.at("type").get<std::string>();
    try {
        if (type == "point_cloud" || type == "five_point" || type == "four_point" || type == "twenty_point") {
            if (type != "point_cloud") require_keys(doc, {});
            return cloud_from_json(doc, base_dir);
        }
        if (type == "isotropic_gaussian") {
            require_keys(doc, {"mu", "sigma"});
            return make_isotropic_gaussian(doc.at("mu").get<Vector>(), doc.at("sigma").get<double>());
        }
        if (type == "line_gaussian") {
            require_keys(doc, {});
            return LineGaussian{};
        }
        if (type == "spiral") {
            require_keys(doc, {"u_min", "u_max"});
            return make_spiral(doc.value("u_min", 1.0), doc.value("u_max", 13.0));
        }
        if (type == "smoothed_cloud") {
            require_keys(doc, {"base", "sigma"});
            return make_smoothed_cloud(cloud_from_json(doc.at("base"), base_dir), doc.at("sigma").get<double>());
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("distribution '" + type + "': " + e.what());
    } catch (const InvalidArgument& e) {
        throw ParseError("distribution '" + type + "': " + e.what());
    }
    throw ParseError("distribution: unknown type '" + type + "'");
}

nlohmann::json to_json(const DataDistribution& dist) {
    return std::visit(overloaded{
                          [](const PointCloud& c) { return cloud_to_json(c); },
                          [](const IsotropicGaussian& g) {
                              return nlohmann::json{{"type", "isotropic_gaussian"}, {"mu", g.mu}, {"sigma", g.sigma}};
                          },
                          [](const LineGaussian&) { return nlohmann::json{{"type", "line_gaussian"}}; },
                          [](const SpiralCurve& s) {
                              return nlohmann::json{{"type", "spiral"}, {"u_min", s.u_min}, {"u_max", s.u_max}};
                          },
                          [](const SmoothedCloud& s) {
                              return nlohmann::json{
                                  {"type", "smoothed_cloud"}, {"base", cloud_to_json(s.base)}, {"sigma", s.sigma}};
                          },
                      },
                      dist);
}

PointCloud load_point_cloud_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open point cloud file " + path.string());

    auto split = [](const std::string& line) {
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            const auto b = cell.find_first_not_of(" \t\r");
            const auto e = cell.find_last_not_of(" \t\r");
            cells.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
        }
        return cells;
    };
    auto parse_number = [&](const std::string& s, std::size_t line_no) {
        std::istringstream is(s);
        is.imbue(std::locale::classic());
        double v;
        if (!(is >> v) || !is.eof())
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": not a number: '" + s + "'");
        return v;
    };

    std::string line;
    std::size_t line_no = 0;
    std::optional<std::size_t> weight_col;
    std::optional<std::size_t> columns;
    Batch pts;
    std::vector<double> weights;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto cells = split(line);
        if (!columns) {
            std::istringstream probe(cells.front());
            double dummy;
            if (!(probe >> dummy)) {  // header row
                columns = cells.size();
                for (std::size_t i = 0; i < cells.size(); ++i)
                    if (cells[i] == "weight" || cells[i] == "w") weight_col = i;
                continue;
            }
            columns = cells.size();
        }
        if (cells.size() != *columns)
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                             std::to_string(*columns) + " columns");
        Vector p;
        for (std::size_t i = 0; i < cells.size(); ++i) {
            const double v = parse_number(cells[i], line_no);
            if (weight_col && i == *weight_col)
                weights.push_back(v);
            else
                p.push_back(v);
        }
        if (p.empty()) throw ParseError(path.string() + ": rows need at least one coordinate");
        pts.push_back(p);
    }
    try {
        return make_point_cloud(std::move(pts), std::move(weights));
    } catch (const Error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

}  // namespace difflab
