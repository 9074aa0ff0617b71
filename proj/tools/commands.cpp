#include "commands.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

#include "difflab/diffusion.hpp"
#include "difflab/io.hpp"
#include "difflab/metrics.hpp"
#include "difflab/nn.hpp"
#include "difflab/oracle.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace difflab::cli {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

// Owns one run directory. Reports are written exactly once, either by
// succeed() after the manifest is checked or by fail() with an error marker.
class Run {
public:
    Run(const fs::path& root, const std::string& command, json config)
        : start_(Clock::now()) {
        report_["command"] = command;
        report_["config"] = std::move(config);
        report_["run_id"] = run_id(json{{"command", command}, {"config", report_["config"]}});
        report_["outputs"] = json::object();
        report_["summary"] = json::object();
        report_["timings"] = json::object();
        dir_ = root / report_["run_id"].get<std::string>();
        fs::create_directories(dir_);
    }

    const fs::path& dir() const { return dir_; }
    fs::path file(const std::string& name) const { return dir_ / name; }
    json& summary() { return report_["summary"]; }

    void output(const std::string& key, const std::string& filename) { report_["outputs"][key] = filename; }
    void timing(const std::string& key, double secs) { report_["timings"][key] = secs; }

    json succeed() {
        for (const auto& [key, name] : report_["outputs"].items()) {
            const fs::path p = dir_ / name.get<std::string>();
            std::error_code ec;
            if (!fs::exists(p) || fs::file_size(p, ec) == 0 || ec)
                throw Error("output '" + key + "' missing or empty: " + p.string());
        }
        return finish("ok", {});
    }

    json fail(const std::string& message) {
        try {
            return finish("error", message);
        } catch (...) {
            return report_;
        }
    }

private:
    json finish(const std::string& status, const std::string& message) {
        report_["status"] = status;
        if (!message.empty()) report_["error"] = message;
        report_["timings"]["total_seconds"] = seconds_since(start_);
        write_json(dir_ / "report.json", report_);
        return report_;
    }

    Clock::time_point start_;
    json report_;
    fs::path dir_;
};

// Runs body inside a Run, stamping the report with an error marker on failure.
template <typename Body>
json guarded(Run& run, Body&& body) {
    try {
        body();
        return run.succeed();
    } catch (const std::exception& e) {
        run.fail(e.what());
        throw;
    }
}

Schedule schedule_from(const ScheduleArgs& a) { return build_exp_schedule(a.t1, a.T, a.K); }

json to_json(const ScheduleArgs& a) { return {{"t1", a.t1}, {"T", a.T}, {"K", a.K}}; }

struct Checkpoint {
    std::shared_ptr<const Mlp> model;
    TargetKind kind;
    std::string id;
};

Checkpoint load_checkpoint(const fs::path& path, const std::optional<std::string>& kind_override) {
    const json doc = read_json(path);
    Checkpoint c;
    c.model = std::make_shared<const Mlp>(mlp_from_json(doc));
    if (kind_override) {
        c.kind = target_kind_from_string(*kind_override);
    } else if (doc.contains("target_kind") && doc["target_kind"].is_string()) {
        c.kind = target_kind_from_string(doc["target_kind"].get<std::string>());
    } else {
        throw UsageError(path.string() + " has no target_kind; pass --kind");
    }
    c.id = run_id(doc);
    return c;
}

void check_dims(const Checkpoint& c, const DataDistribution& dist) {
    if (c.model->output_dim() != dimension(dist) || c.model->input_dim() != dimension(dist) + 1)
        throw ShapeMismatch("checkpoint dimension does not match the distribution");
}

void require_oracle(const DataDistribution& dist, const std::string& what) {
    if (!has_analytic_oracle(dist))
        throw Unsupported(what + " needs an analytic oracle, which distribution '" + std::string(name(dist)) +
                          "' does not have");
}

std::vector<double> smallest_times(const Schedule& s, std::size_t count) {
    count = std::min(count, s.size());
    return {s.grid().begin(), s.grid().begin() + static_cast<std::ptrdiff_t>(count)};
}

std::size_t nearest_grid_index(const Schedule& s, double t) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < s.size(); ++i)
        if (std::abs(s.time(i) - t) < std::abs(s.time(best) - t)) best = i;
    return best;
}

void write_absorption_csv(const fs::path& path, const PointCloud& cloud, const Absorption& a) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out.imbue(std::locale::classic());
    out.precision(17);
    out << "atom";
    for (std::size_t j = 0; j < cloud.points.dim(); ++j) out << ",x" << (j + 1);
    out << ",count,frequency\n";
    for (std::size_t k = 0; k < cloud.points.size(); ++k) {
        out << k;
        for (double v : cloud.points.row(k)) out << ',' << v;
        out << ',' << a.counts[k] << ',' << a.frequencies[k] << '\n';
    }
    if (!out) throw Error("write failed for " + path.string());
}

json absorption_json(const Absorption& a) {
    return {{"frequencies", a.frequencies},
            {"counts", a.counts},
            {"unabsorbed", a.unabsorbed},
            {"unabsorbed_fraction", a.total ? static_cast<double>(a.unabsorbed) / static_cast<double>(a.total) : 0.0}};
}

std::string component_suffix(std::optional<std::size_t> c) { return c ? "c" + std::to_string(*c + 1) : "norm"; }

}  // namespace

std::string run_id(const json& echo) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : echo.dump()) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

DataDistribution resolve_distribution(const OracleSpec& spec) {
    const auto& n = spec.name;
    if (n == "five-point") return five_point_cloud();
    if (n == "four-point") return four_point_cloud();
    if (n == "twenty-point") return twenty_point_cloud();
    if (n == "line") return LineGaussian{};
    if (n == "spiral") return make_spiral();
    if (n == "gaussian") return make_isotropic_gaussian(spec.mu, spec.sigma);
    if (n == "cloud") {
        if (!spec.cloud_csv) throw UsageError("--oracle cloud requires --cloud <csv>");
        return load_point_cloud_csv(*spec.cloud_csv);
    }
    if (n == "smoothed") {
        PointCloud base = spec.cloud_csv ? load_point_cloud_csv(*spec.cloud_csv) : five_point_cloud();
        return make_smoothed_cloud(std::move(base), spec.sigma);
    }
    throw UsageError("unknown oracle '" + n +
                     "' (expected five-point, four-point, twenty-point, cloud, line, gaussian, smoothed, spiral)");
}

json to_json(const OracleSpec& spec) {
    json j{{"name", spec.name}};
    if (spec.name == "gaussian") {
        j["mu"] = spec.mu;
        j["sigma"] = spec.sigma;
    }
    if (spec.name == "smoothed") j["sigma"] = spec.sigma;
    if (spec.cloud_csv) j["cloud"] = spec.cloud_csv->string();
    return j;
}

// ---------------------------------------------------------------------------

json cmd_train(const TrainOptions& options) {
    const RunConfig config = parse_run_config(read_text(options.config_path));
    config.validate();
    const DataDistribution dist = distribution_from_json(config.distribution, options.config_path.parent_path());

    Run run(options.out_root, "train", to_json(config));
    return guarded(run, [&] {
        const auto start = Clock::now();
        auto save = [&](const TrainResult& result) {
            json ckpt = to_json(result.model);
            ckpt["target_kind"] = std::string(to_string(config.target_kind));
            write_json(run.file("model.json"), ckpt);
            write_loss_trace_csv(run.file("loss.csv"), result.loss_trace);
            run.output("model", "model.json");
            if (!result.loss_trace.empty()) {
                run.output("loss_trace", "loss.csv");
                run.summary()["final_loss"] = result.loss_trace.back();
            }
            run.summary()["steps"] = result.loss_trace.size();
            run.timing("train_seconds", seconds_since(start));
        };
        try {
            save(train(dist, config));
        } catch (const TrainingDiverged& e) {
            save(e.last_finite());
            throw;
        }
    });
}

json cmd_sample(const SampleOptions& o) {
    if (o.n == 0) throw UsageError("--n must be at least 1");
    if (!o.checkpoint && !o.oracle) throw UsageError("sample needs --checkpoint or --oracle");
    for (double t : o.snapshot_times)
        if (!(t >= 0.0) || !std::isfinite(t)) throw UsageError("snapshot times must be finite and >= 0");
    const Schedule schedule = schedule_from(o.schedule);

    std::optional<Checkpoint> ckpt;
    if (o.checkpoint) ckpt = load_checkpoint(*o.checkpoint, o.kind);
    std::optional<DataDistribution> dist;
    if (o.oracle) dist = resolve_distribution(*o.oracle);
    if (ckpt && dist) check_dims(*ckpt, *dist);

    json echo{{"schedule", to_json(o.schedule)}, {"n", o.n}, {"seed", o.seed}, {"snapshots", o.snapshot_times},
              {"tol", o.tol}};
    if (ckpt) {
        echo["checkpoint"] = ckpt->id;
        echo["kind"] = std::string(to_string(ckpt->kind));
    }
    if (o.oracle) echo["oracle"] = to_json(*o.oracle);

    Run run(o.out_root, "sample", echo);
    return guarded(run, [&] {
        const DriftProvider drift = ckpt ? as_score(ckpt->kind, ckpt->model) : oracle_drift(*dist);

        std::vector<std::size_t> indices;
        for (double t : o.snapshot_times)
            if (t > 0.0) indices.push_back(nearest_grid_index(schedule, t));

        const auto start = Clock::now();
        const SampleRun result = backward_sample_with_snapshots(drift, schedule, o.n, o.seed, indices);
        run.timing("sampling_seconds", seconds_since(start));

        write_batch_csv(run.file("samples.csv"), result.final);
        run.output("samples", "samples.csv");

        json snaps = json::array();
        for (double t : o.snapshot_times) {
            std::string tag = "final";
            double grid_t = 0.0;
            const Batch* batch = &result.final;
            if (t > 0.0) {
                const std::size_t k = nearest_grid_index(schedule, t);
                grid_t = schedule.time(k);
                tag = "k" + std::to_string(k);
                batch = &result.snapshots.at(k);
            }
            const std::string file = "snapshot_" + tag + ".csv";
            write_batch_csv(run.file(file), *batch);
            run.output("snapshot_" + tag, file);
            snaps.push_back({{"requested", t}, {"time", grid_t}, {"file", file}});
        }
        if (!snaps.empty()) run.summary()["snapshots"] = snaps;

        if (o.n >= 2) {
            const Moments m = sample_moments(result.final);
            run.summary()["mean"] = m.mean;
            run.summary()["std"] = m.std;
        }
        if (dist) {
            if (const auto* cloud = std::get_if<PointCloud>(&*dist)) {
                const Absorption a = absorption_frequencies(result.final, *cloud, o.tol);
                write_absorption_csv(run.file("frequencies.csv"), *cloud, a);
                run.output("frequencies", "frequencies.csv");
                run.summary()["absorption"] = absorption_json(a);
            }
        }
    });
}

json cmd_eval(const EvalOptions& o) {
    static const std::vector<std::string> modes = {"pointwise", "l2", "singularity", "lambda"};
    if (std::find(modes.begin(), modes.end(), o.mode) == modes.end())
        throw UsageError("unknown eval mode '" + o.mode + "' (expected pointwise, l2, singularity, lambda)");
    if (o.n == 0) throw UsageError("--n must be at least 1");
    const Schedule schedule = schedule_from(o.schedule);
    const DataDistribution dist = resolve_distribution(o.oracle);
    if (o.x.size() != dimension(dist)) throw ShapeMismatch("--x dimension does not match the distribution");

    std::optional<Checkpoint> ckpt;
    if (o.checkpoint) {
        ckpt = load_checkpoint(*o.checkpoint, o.kind);
        check_dims(*ckpt, dist);
    }

    // Up-front checks so unsupported combinations fail before any output.
    if (o.mode == "pointwise" || o.mode == "l2") {
        if (!ckpt) throw UsageError(o.mode + " mode compares a model to the oracle and needs --checkpoint");
        require_oracle(dist, o.mode + " mode");
    } else if (o.mode == "singularity") {
        if (!has_support_manifold(dist))
            throw Unsupported("singularity mode is unsupported for distribution '" + std::string(name(dist)) +
                              "': it has full support and no nearest support point");
        if (!ckpt) require_oracle(dist, "singularity mode without --checkpoint");
    } else if (!ckpt) {
        require_oracle(dist, "lambda mode without --checkpoint");
    }

    json echo{{"mode", o.mode}, {"oracle", to_json(o.oracle)}, {"schedule", to_json(o.schedule)},
              {"x", o.x},       {"last", o.last},                {"n", o.n},
              {"num_times", o.num_times}, {"max_time", o.max_time}, {"seed", o.seed}};
    if (ckpt) {
        echo["checkpoint"] = ckpt->id;
        echo["kind"] = std::string(to_string(ckpt->kind));
    }

    Run run(o.out_root, "eval", echo);
    return guarded(run, [&] {
        const auto start = Clock::now();
        std::vector<std::optional<std::size_t>> parts;
        for (std::size_t j = 0; j < dimension(dist); ++j) parts.emplace_back(j);
        parts.emplace_back(std::nullopt);

        if (o.mode == "pointwise") {
            const VectorField model = model_field(ckpt->model);
            const VectorField truth = oracle_field(dist, ckpt->kind);
            const auto times = smallest_times(schedule, o.last);
            for (const auto& c : parts) {
                const ErrorCurve curve = pointwise_error(model, truth, o.x, times, c);
                const std::string file = "pointwise_" + component_suffix(c) + ".csv";
                write_curve_csv(run.file(file), curve);
                run.output("pointwise_" + component_suffix(c), file);
                run.summary()["max_error_" + component_suffix(c)] =
                    *std::max_element(curve.values.begin(), curve.values.end());
            }
        } else if (o.mode == "l2") {
            const VectorField model = model_field(ckpt->model);
            const VectorField truth = oracle_field(dist, ckpt->kind);
            const auto times = smallest_times(schedule, o.last);
            for (const auto& c : parts) {
                ErrorCurve curve;
                curve.label = "l2_" + component_suffix(c);
                for (std::size_t k = 0; k < times.size(); ++k) {
                    curve.times.push_back(times[k]);
                    curve.values.push_back(
                        l2_error_over_p(model, truth, dist, times[k], o.n, derive_seed(o.seed, k), c));
                }
                const std::string file = curve.label + ".csv";
                write_curve_csv(run.file(file), curve);
                run.output(curve.label, file);
                run.summary()["max_error_" + component_suffix(c)] =
                    *std::max_element(curve.values.begin(), curve.values.end());
            }
        } else if (o.mode == "singularity") {
            const DriftProvider drift = ckpt ? as_score(ckpt->kind, ckpt->model) : oracle_drift(dist);
            std::vector<double> times;
            for (double t : schedule.grid())
                if (t <= o.max_time) times.push_back(t);
            const ErrorCurve curve = singularity_profile(drift, dist, o.x, times);
            write_curve_csv(run.file("singularity.csv"), curve);
            run.output("singularity", "singularity.csv");
            double worst = 0.0;
            for (std::size_t i = 0; i < curve.times.size(); ++i)
                worst = std::max(worst, curve.values[i] / curve.times[i]);
            run.summary()["nearest_point"] = nearest_manifold_point(dist, o.x);
            run.summary()["max_value_over_t"] = worst;
        } else {
            const VectorField f = ckpt ? from_score(TargetKind::kCondExp, as_score(ckpt->kind, ckpt->model))
                                       : oracle_field(dist, TargetKind::kCondExp);
            const Schedule grid = build_exp_schedule(o.schedule.t1, o.schedule.T, static_cast<int>(o.num_times));
            const ErrorCurve curve = lambda_true_estimate(dist, f, grid.grid(), std::max<std::size_t>(o.n, 2), o.seed);
            const LambdaFit fit = fit_lambda_constant(curve);
            write_curve_csv(run.file("lambda.csv"), curve);
            run.output("lambda", "lambda.csv");
            const json fit_doc{{"constant", fit.constant}, {"quality", fit.quality}};
            write_json(run.file("lambda_fit.json"), fit_doc);
            run.output("lambda_fit", "lambda_fit.json");
            run.summary()["fit"] = fit_doc;
        }
        run.timing("eval_seconds", seconds_since(start));
    });
}

json cmd_t1_sweep(const SweepOptions& o) {
    if (o.t1_values.empty()) throw UsageError("t1 list is empty");
    if (o.n == 0) throw UsageError("--n must be at least 1");
    std::vector<double> bad;
    for (double t1 : o.t1_values)
        if (!(t1 > 0.0 && t1 < o.T)) bad.push_back(t1);
    if (!bad.empty()) {
        std::ostringstream os;
        os.precision(17);
        os << "t1 values outside (0, " << o.T << "):";
        for (double t : bad) os << ' ' << t;
        throw UsageError(os.str());
    }
    std::vector<Schedule> schedules;
    for (double t1 : o.t1_values) schedules.push_back(build_exp_schedule(t1, o.T, o.K));
    const DataDistribution dist = resolve_distribution(o.oracle);
    require_oracle(dist, "t1-sweep");

    json echo{{"oracle", to_json(o.oracle)}, {"t1", o.t1_values}, {"T", o.T}, {"K", o.K},
              {"n", o.n},                    {"seed", o.seed},    {"tol", o.tol}};
    Run run(o.out_root, "t1-sweep", echo);
    return guarded(run, [&] {
        const DriftProvider drift = oracle_drift(dist);
        const auto* cloud = std::get_if<PointCloud>(&dist);

        std::ofstream table(run.file("sweep.csv"));
        table.imbue(std::locale::classic());
        table.precision(17);
        table << "t1,unabsorbed_fraction,samples\n";

        json rows = json::array();
        const auto start = Clock::now();
        for (std::size_t i = 0; i < schedules.size(); ++i) {
            const Batch samples = backward_sample(drift, schedules[i], o.n, o.seed);
            const std::string file = "samples_t1_" + std::to_string(i) + ".csv";
            write_batch_csv(run.file(file), samples);
            run.output("samples_t1_" + std::to_string(i), file);
            json row{{"t1", o.t1_values[i]}, {"file", file}};
            double unabsorbed = std::nan("");
            if (cloud) {
                const Absorption a = absorption_frequencies(samples, *cloud, o.tol);
                row["absorption"] = absorption_json(a);
                unabsorbed = row["absorption"]["unabsorbed_fraction"].get<double>();
            }
            table << o.t1_values[i] << ',';
            if (cloud) table << unabsorbed;
            table << ',' << file << '\n';
            rows.push_back(row);
        }
        table.close();
        if (!table) throw Error("write failed for sweep.csv");
        run.output("summary", "sweep.csv");
        run.summary()["runs"] = rows;
        run.timing("sampling_seconds", seconds_since(start));
    });
}

}  // namespace difflab::cli
