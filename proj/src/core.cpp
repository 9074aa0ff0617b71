#include "difflab/core.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "difflab/error.hpp"

namespace difflab {

bool all_finite(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

double norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ShapeMismatch("squared_distance: dimension mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

Batch::Batch(std::size_t rows, std::size_t dim) : dim_(dim), data_(rows * dim, 0.0) {
    if (dim == 0) throw InvalidArgument("Batch: dimension must be >= 1");
}

Batch::Batch(std::size_t dim, std::vector<double> data) : dim_(dim), data_(std::move(data)) {
    if (dim == 0) throw InvalidArgument("Batch: dimension must be >= 1");
    if (data_.size() % dim != 0) throw ShapeMismatch("Batch: data length is not a multiple of dim");
}

Vector Batch::row_vector(std::size_t i) const {
    auto r = row(i);
    return {r.begin(), r.end()};
}

void Batch::push_back(std::span<const double> point) {
    if (dim_ == 0) {
        if (point.empty()) throw InvalidArgument("Batch: dimension must be >= 1");
        dim_ = point.size();
    }
    if (point.size() != dim_) throw ShapeMismatch("Batch::push_back: dimension mismatch");
    data_.insert(data_.end(), point.begin(), point.end());
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    return splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x632BE59BD9B4E019ULL));
}

void fill_standard_normal(std::span<double> out, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (double& x : out) x = normal(rng);
}

Schedule build_exp_schedule(double t1, double T, int K) {
    if (!(t1 > 0.0) || !std::isfinite(t1))
        throw InvalidArgument("build_exp_schedule: t1 must be positive");
    if (!(T > t1) || !std::isfinite(T))
        throw InvalidArgument("build_exp_schedule: T must exceed t1");
    if (K < 2) throw InvalidArgument("build_exp_schedule: K must be >= 2");

    const double span = T / t1;
    std::vector<double> grid(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k)
        grid[static_cast<std::size_t>(k)] = t1 * std::pow(span, static_cast<double>(k) / (K - 1));
    grid.front() = t1;
    grid.back() = T;
    return Schedule(std::move(grid), std::pow(span, 1.0 / (K - 1)));
}

StepQuantities step_between(double t_lo, double t_hi) {
    if (!(t_hi > t_lo)) throw InvalidArgument("step_between: t_hi must exceed t_lo");
    const double dt = t_hi - t_lo;
    return {dt, -std::expm1(-dt), std::exp(-dt), std::exp(-t_lo)};
}

StepQuantities step_quantities(const Schedule& schedule, int k) {
    if (k < 1 || static_cast<std::size_t>(k) >= schedule.size())
        throw OutOfRange("step_quantities: k must satisfy 1 <= k < K");
    const auto i = static_cast<std::size_t>(k - 1);
    return step_between(schedule.time(i), schedule.time(i + 1));
}

// ---------------------------------------------------------------------------

std::string_view to_string(TargetKind kind) {
    switch (kind) {
        case TargetKind::kScore: return "SCORE_S";
        case TargetKind::kEpsilon: return "EPSILON";
        case TargetKind::kCondExp: return "COND_EXP_F";
    }
    return "?";
}

TargetKind target_kind_from_string(std::string_view name) {
    if (name == "SCORE_S") return TargetKind::kScore;
    if (name == "EPSILON") return TargetKind::kEpsilon;
    if (name == "COND_EXP_F") return TargetKind::kCondExp;
    throw InvalidArgument("unknown target kind '" + std::string(name) +
                          "' (expected SCORE_S, EPSILON or COND_EXP_F)");
}

std::string_view to_string(LambdaChoice choice) {
    switch (choice) {
        case LambdaChoice::kDefault: return "default";
        case LambdaChoice::kUniform: return "uniform";
        case LambdaChoice::kInverseExpm1: return "inverse_expm1";
        case LambdaChoice::kOneMinusExp: return "one_minus_exp";
    }
    return "?";
}

LambdaChoice lambda_choice_from_string(std::string_view name) {
    if (name == "default") return LambdaChoice::kDefault;
    if (name == "uniform") return LambdaChoice::kUniform;
    if (name == "inverse_expm1") return LambdaChoice::kInverseExpm1;
    if (name == "one_minus_exp") return LambdaChoice::kOneMinusExp;
    throw InvalidArgument("unknown lambda choice '" + std::string(name) + "'");
}

std::vector<std::size_t> RunConfig::layer_sizes() const {
    std::vector<std::size_t> sizes;
    sizes.push_back(static_cast<std::size_t>(dim) + 1);
    sizes.insert(sizes.end(), hidden_layers.begin(), hidden_layers.end());
    sizes.push_back(static_cast<std::size_t>(dim));
    return sizes;
}

std::size_t RunConfig::steps_per_epoch() const {
    return batch_size == 0 ? 0 : (num_samples + batch_size - 1) / batch_size;
}

void RunConfig::validate() const {
    auto fail = [](const std::string& field, const std::string& what) {
        throw InvalidArgument("config field '" + field + "': " + what);
    };
    if (dim < 1) fail("dim", "must be >= 1");
    if (!(t1 > 0.0)) fail("t1", "must be positive");
    if (!(T > t1)) fail("T", "must exceed t1");
    if (K < 2) fail("K", "must be >= 2");
    if (num_samples < 1) fail("num_samples", "must be >= 1");
    if (batch_size < 1) fail("batch_size", "must be >= 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
        fail("learning_rate", "must be positive");
    if (num_epochs < 1) fail("num_epochs", "must be >= 1");
    if (hidden_layers.empty()) fail("hidden_layers", "need at least one hidden layer");
    for (auto h : hidden_layers)
        if (h == 0) fail("hidden_layers", "layer widths must be >= 1");
    if (!distribution.is_object() || !distribution.contains("type"))
        fail("distribution", "must be an object with a 'type' field");
}

nlohmann::json to_json(const RunConfig& c) {
    return {
        {"seed", c.seed},
        {"dim", c.dim},
        {"t1", c.t1},
        {"T", c.T},
        {"K", c.K},
        {"num_samples", c.num_samples},
        {"batch_size", c.batch_size},
        {"learning_rate", c.learning_rate},
        {"num_epochs", c.num_epochs},
        {"target_kind", std::string(to_string(c.target_kind))},
        {"hidden_layers", c.hidden_layers},
        {"lambda", std::string(to_string(c.lambda))},
        {"distribution", c.distribution},
    };
}

namespace {

template <typename T>
T field_as(const nlohmann::json& doc, const std::string& key) {
    try {
        return doc.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("config field '" + key + "': " + e.what());
    }
}

std::uint64_t unsigned_field(const nlohmann::json& doc, const std::string& key) {
    const auto& v = doc.at(key);
    if (!v.is_number_unsigned())
        throw ParseError("config field '" + key + "': expected a non-negative integer");
    return v.get<std::uint64_t>();
}

int int_field(const nlohmann::json& doc, const std::string& key) {
    const auto& v = doc.at(key);
    if (!v.is_number_integer()) throw ParseError("config field '" + key + "': expected an integer");
    return v.get<int>();
}

double real_field(const nlohmann::json& doc, const std::string& key) {
    const auto& v = doc.at(key);
    if (!v.is_number()) throw ParseError("config field '" + key + "': expected a number");
    return v.get<double>();
}

}  // namespace

RunConfig run_config_from_json(const nlohmann::json& doc) {
    if (!doc.is_object()) throw ParseError("config: top level must be a JSON object");
    static const char* const kKnown[] = {
        "seed",       "dim",        "t1",          "T",          "K",
        "num_samples", "batch_size", "learning_rate", "num_epochs", "target_kind",
        "hidden_layers", "lambda",   "distribution",
    };
    for (const auto& [key, value] : doc.items()) {
        if (std::find(std::begin(kKnown), std::end(kKnown), key) == std::end(kKnown))
            throw ParseError("config: unknown field '" + key + "'");
    }

    RunConfig c;
    try {
        if (doc.contains("seed")) c.seed = unsigned_field(doc, "seed");
        if (doc.contains("dim")) c.dim = int_field(doc, "dim");
        if (doc.contains("t1")) c.t1 = real_field(doc, "t1");
        if (doc.contains("T")) c.T = real_field(doc, "T");
        if (doc.contains("K")) c.K = int_field(doc, "K");
        if (doc.contains("num_samples")) c.num_samples = unsigned_field(doc, "num_samples");
        if (doc.contains("batch_size")) c.batch_size = unsigned_field(doc, "batch_size");
        if (doc.contains("learning_rate")) c.learning_rate = real_field(doc, "learning_rate");
        if (doc.contains("num_epochs")) c.num_epochs = unsigned_field(doc, "num_epochs");
        if (doc.contains("target_kind"))
            c.target_kind = target_kind_from_string(field_as<std::string>(doc, "target_kind"));
        if (doc.contains("hidden_layers"))
            c.hidden_layers = field_as<std::vector<std::size_t>>(doc, "hidden_layers");
        if (doc.contains("lambda"))
            c.lambda = lambda_choice_from_string(field_as<std::string>(doc, "lambda"));
        if (doc.contains("distribution")) c.distribution = doc.at("distribution");
    } catch (const InvalidArgument& e) {
        throw ParseError(e.what());
    }
    try {
        c.validate();
    } catch (const InvalidArgument& e) {
        throw ParseError(e.what());
    }
    return c;
}

RunConfig parse_run_config(std::string_view text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text.begin(), text.end());
    } catch (const nlohmann::json::parse_error& e) {
        const auto upto = std::min<std::size_t>(e.byte, text.size());
        const auto line = 1 + std::count(text.begin(), text.begin() + upto, '\n');
        std::ostringstream msg;
        msg << "config: JSON syntax error at line " << line << ": " << e.what();
        throw ParseError(msg.str());
    }
    return run_config_from_json(doc);
}

}  // namespace difflab
