#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "difflab/core.hpp"
#include "difflab/metrics.hpp"

namespace difflab {

// CSV output: header row, comma separated, '.' decimal point, 17 significant digits.

void write_batch_csv(const std::filesystem::path& path, const Batch& batch);
Batch read_batch_csv(const std::filesystem::path& path);

/// Columns t,value (and std_error when present).
void write_curve_csv(const std::filesystem::path& path, const ErrorCurve& curve);
void write_loss_trace_csv(const std::filesystem::path& path, const std::vector<double>& trace);

void write_json(const std::filesystem::path& path, const nlohmann::json& doc);
nlohmann::json read_json(const std::filesystem::path& path);
std::string read_text(const std::filesystem::path& path);

}  // namespace difflab
