#include "difflab/io.hpp"

#include <fstream>
#include <iomanip>
#include <locale>
#include <sstream>

#include "difflab/error.hpp"

namespace difflab {

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out.imbue(std::locale::classic());
    out << std::setprecision(17);
    return out;
}

void finish(std::ofstream& out, const std::filesystem::path& path) {
    out.flush();
    if (!out) throw Error("write failed for " + path.string());
}

}  // namespace

void write_batch_csv(const std::filesystem::path& path, const Batch& batch) {
    auto out = open_out(path);
    for (std::size_t j = 0; j < batch.dim(); ++j) out << (j ? "," : "") << "x" << (j + 1);
    out << '\n';
    for (std::size_t i = 0; i < batch.size(); ++i) {
        auto r = batch.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) out << (j ? "," : "") << r[j];
        out << '\n';
    }
    finish(out, path);
}

Batch read_batch_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw ParseError(path.string() + ": empty file");
    Batch b;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ss(line);
        ss.imbue(std::locale::classic());
        Vector row;
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            std::istringstream cs(cell);
            cs.imbue(std::locale::classic());
            double v;
            if (!(cs >> v)) throw ParseError(path.string() + ":" + std::to_string(line_no) + ": bad number");
            row.push_back(v);
        }
        b.push_back(row);
    }
    return b;
}

void write_curve_csv(const std::filesystem::path& path, const ErrorCurve& curve) {
    if (curve.times.size() != curve.values.size()) throw ShapeMismatch("write_curve_csv: ragged curve");
    const bool with_se = curve.std_errors.size() == curve.values.size() && !curve.values.empty();
    auto out = open_out(path);
    out << "t,value" << (with_se ? ",std_error" : "") << '\n';
    for (std::size_t i = 0; i < curve.times.size(); ++i) {
        out << curve.times[i] << ',' << curve.values[i];
        if (with_se) out << ',' << curve.std_errors[i];
        out << '\n';
    }
    finish(out, path);
}

void write_loss_trace_csv(const std::filesystem::path& path, const std::vector<double>& trace) {
    auto out = open_out(path);
    out << "step,loss\n";
    for (std::size_t i = 0; i < trace.size(); ++i) out << i << ',' << trace[i] << '\n';
    finish(out, path);
}

void write_json(const std::filesystem::path& path, const nlohmann::json& doc) {
    auto out = open_out(path);
    out << doc.dump(2) << '\n';
    finish(out, path);
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

nlohmann::json read_json(const std::filesystem::path& path) {
    const std::string text = read_text(path);
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

}  // namespace difflab
