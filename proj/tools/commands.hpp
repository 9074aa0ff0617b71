#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "difflab/core.hpp"
#include "difflab/distributions.hpp"
#include "difflab/error.hpp"

namespace difflab::cli {

/// Bad command-line usage; the CLI exits with status 2.
class UsageError : public InvalidArgument {
public:
    using InvalidArgument::InvalidArgument;
};

/// Names a closed-form target: five-point, four-point, twenty-point, cloud (CSV),
/// line, gaussian, smoothed (cloud + sigma) or spiral (sampling only, no oracle).
struct OracleSpec {
    std::string name = "five-point";
    Vector mu = {0.0, 0.0};
    double sigma = 1.0;
    std::optional<std::filesystem::path> cloud_csv;
};

DataDistribution resolve_distribution(const OracleSpec& spec);
nlohmann::json to_json(const OracleSpec& spec);

struct ScheduleArgs {
    double t1 = 0.01;
    double T = 10.0;
    int K = 200;
};

struct TrainOptions {
    std::filesystem::path config_path;
    std::filesystem::path out_root = "runs";
};

struct SampleOptions {
    std::optional<std::filesystem::path> checkpoint;
    std::optional<std::string> kind;  // overrides the checkpoint's target_kind
    /// Drift source when no checkpoint is given; otherwise only the reference for absorption.
    std::optional<OracleSpec> oracle;
    ScheduleArgs schedule;
    std::size_t n = 10'000;
    std::uint64_t seed = 0;
    std::vector<double> snapshot_times;
    double tol = 1e-2;
    std::filesystem::path out_root = "runs";
};

struct EvalOptions {
    std::optional<std::filesystem::path> checkpoint;
    std::optional<std::string> kind;
    OracleSpec oracle;
    std::string mode = "pointwise";  // pointwise | l2 | singularity | lambda
    ScheduleArgs schedule;
    Vector x = {1.0, -0.1};
    std::size_t last = 100;      // number of smallest grid times (pointwise, l2)
    std::size_t n = 10'000;      // Monte-Carlo samples per time (l2, lambda)
    std::size_t num_times = 30;  // lambda grid size
    double max_time = 1.0;       // singularity profile upper time
    std::uint64_t seed = 0;
    std::filesystem::path out_root = "runs";
};

struct SweepOptions {
    OracleSpec oracle{"twenty-point", {0.0, 0.0}, 1.0, std::nullopt};
    std::vector<double> t1_values;
    double T = 10.0;
    int K = 200;
    std::size_t n = 10'000;
    std::uint64_t seed = 0;
    double tol = 1e-2;
    std::filesystem::path out_root = "runs";
};

/// Stable 16-hex-digit id of a JSON document (FNV-1a over its canonical dump).
std::string run_id(const nlohmann::json& echo);

/// Each command writes <out_root>/<run_id>/report.json and returns the report.
/// On failure the report carries "status": "error" and the exception propagates.
nlohmann::json cmd_train(const TrainOptions& options);
nlohmann::json cmd_sample(const SampleOptions& options);
nlohmann::json cmd_eval(const EvalOptions& options);
nlohmann::json cmd_t1_sweep(const SweepOptions& options);

}  // namespace difflab::cli
