#include "metareg/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "metareg/error.hpp"
#include "metareg/rng.hpp"

namespace metareg {

namespace {

constexpr const char* kFeatureColumns[4] = {"power_w", "speed_mm_min", "powder_g_min",
                                            "wire_g_min"};
constexpr const char* kTargetColumn = "height_mm";

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

double parse_cell(const std::string& cell, const std::string& column, std::size_t row) {
    const std::string t = trim(cell);
    if (t.empty())
        throw Error("csv: empty cell in column '" + column + "' at row " + std::to_string(row));
    std::size_t consumed = 0;
    double value = 0.0;
    try {
        value = std::stod(t, &consumed);
    } catch (const std::exception&) {
        throw Error("csv: non-numeric value '" + t + "' in column '" + column + "' at row " +
                    std::to_string(row));
    }
    if (consumed != t.size())
        throw Error("csv: non-numeric value '" + t + "' in column '" + column + "' at row " +
                    std::to_string(row));
    if (!std::isfinite(value))
        throw Error("csv: non-finite value in column '" + column + "' at row " +
                    std::to_string(row));
    return value;
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

std::string to_string(Feedstock f) {
    switch (f) {
        case Feedstock::powder: return "powder";
        case Feedstock::wire: return "wire";
        case Feedstock::wire_powder: return "wire_powder";
        case Feedstock::synthetic: return "synthetic";
    }
    throw Error("unknown feedstock");
}

Feedstock feedstock_from_string(const std::string& s) {
    if (s == "powder") return Feedstock::powder;
    if (s == "wire") return Feedstock::wire;
    if (s == "wire_powder") return Feedstock::wire_powder;
    if (s == "synthetic") return Feedstock::synthetic;
    throw Error("unknown feedstock '" + s + "'");
}

std::string to_string(TargetTransform t) {
    return t == TargetTransform::log1p ? "log1p" : "none";
}

TargetTransform target_transform_from_string(const std::string& s) {
    if (s == "log1p") return TargetTransform::log1p;
    if (s == "none") return TargetTransform::none;
    throw Error("unknown target transform '" + s + "'");
}

NormalizationBounds default_bounds() { return {{3000.0, 2000.0, 25.0, 10.0}}; }

void validate(const NormalizationBounds& bounds) {
    if (bounds.max_values.empty()) throw Error("NormalizationBounds: empty bounds");
    for (double b : bounds.max_values)
        if (!(b > 0.0)) throw Error("NormalizationBounds: all maxima must be positive");
}

std::vector<double> normalize_features(std::span<const double> raw,
                                       const NormalizationBounds& bounds) {
    validate(bounds);
    if (raw.size() != bounds.max_values.size())
        throw Error("normalize_features: feature count " + std::to_string(raw.size()) +
                    " does not match bounds length " + std::to_string(bounds.max_values.size()));
    std::vector<double> out(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        if (raw[i] < 0.0 || raw[i] > bounds.max_values[i])
            throw Error("normalize_features: feature " + std::to_string(i) + " value " +
                        format_double(raw[i]) + " outside [0, " +
                        format_double(bounds.max_values[i]) + "]");
        out[i] = raw[i] / bounds.max_values[i];
    }
    return out;
}

double transform_target(double height_mm) {
    if (!(height_mm > -1.0))
        throw Error("transform_target: height " + format_double(height_mm) + " must exceed -1");
    return std::log1p(height_mm);
}

double inverse_transform_target(double y) { return std::expm1(y); }

TaskDataset load_task_csv(const std::filesystem::path& path, const NormalizationBounds& bounds,
                          const std::string& task_id, Feedstock feedstock) {
    validate(bounds);
    if (bounds.max_values.size() != 4)
        throw Error("load_task_csv: expected 4 feature bounds, got " +
                    std::to_string(bounds.max_values.size()));
    std::ifstream in(path);
    if (!in) throw Error("load_task_csv: cannot open '" + path.string() + "'");

    std::string header_line;
    if (!std::getline(in, header_line)) throw Error("load_task_csv: empty file '" + path.string() + "'");
    const auto header = split_csv_line(header_line);

    // column name -> position; unknown names are rejected so a misspelled
    // feed column cannot silently become an all-zero channel
    std::vector<int> feature_pos(4, -1);
    int target_pos = -1;
    for (std::size_t c = 0; c < header.size(); ++c) {
        const std::string name = trim(header[c]);
        bool known = false;
        for (int f = 0; f < 4; ++f) {
            if (name == kFeatureColumns[f]) {
                if (feature_pos[f] >= 0)
                    throw Error("load_task_csv: duplicate column '" + name + "'");
                feature_pos[f] = static_cast<int>(c);
                known = true;
            }
        }
        if (name == kTargetColumn) {
            if (target_pos >= 0) throw Error("load_task_csv: duplicate column 'height_mm'");
            target_pos = static_cast<int>(c);
            known = true;
        }
        if (!known) throw Error("load_task_csv: unknown column '" + name + "'");
    }
    for (int f : {0, 1}) {
        if (feature_pos[f] < 0)
            throw Error("load_task_csv: missing required column '" +
                        std::string(kFeatureColumns[f]) + "'");
    }
    if (target_pos < 0) throw Error("load_task_csv: missing required column 'height_mm'");

    TaskDataset task;
    task.task_id = task_id;
    task.feedstock = feedstock;
    std::vector<double> values;
    std::size_t n = 0;
    std::string line;
    std::size_t row = 0;  // 1-based data row index
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        ++row;
        const auto cells = split_csv_line(line);
        if (cells.size() != header.size())
            throw Error("load_task_csv: row " + std::to_string(row) + " has " +
                        std::to_string(cells.size()) + " cells, header has " +
                        std::to_string(header.size()));
        std::vector<double> raw(4, 0.0);
        for (int f = 0; f < 4; ++f) {
            if (feature_pos[f] < 0) continue;  // absent feed channel -> 0
            raw[f] = parse_cell(cells[feature_pos[f]], kFeatureColumns[f], row);
            if (raw[f] < 0.0 || raw[f] > bounds.max_values[f])
                throw Error("load_task_csv: column '" + std::string(kFeatureColumns[f]) +
                            "' value " + format_double(raw[f]) + " at row " +
                            std::to_string(row) + " outside [0, " +
                            format_double(bounds.max_values[f]) + "]");
        }
        const double height = parse_cell(cells[target_pos], kTargetColumn, row);
        if (height < 0.0)
            throw Error("load_task_csv: negative height_mm at row " + std::to_string(row));
        values.insert(values.end(), raw.begin(), raw.end());
        task.targets.push_back(height);
        ++n;
    }
    if (n == 0) throw Error("load_task_csv: no data rows in '" + path.string() + "'");
    task.features = Matrix(n, 4);
    task.features.data = std::move(values);
    return task;
}

void save_task_csv(const TaskDataset& task, const std::filesystem::path& path) {
    if (task.features.cols != 4)
        throw Error("save_task_csv: task must have 4 feature columns");
    std::ofstream out(path);
    if (!out) throw Error("save_task_csv: cannot write '" + path.string() + "'");
    out << "power_w,speed_mm_min,powder_g_min,wire_g_min,height_mm\n";
    for (std::size_t i = 0; i < task.size(); ++i) {
        for (std::size_t j = 0; j < 4; ++j) out << format_double(task.features(i, j)) << ',';
        out << format_double(task.targets[i]) << '\n';
    }
}

std::size_t support_size(std::size_t n, double fraction) {
    return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 0.5));
}

SupportQuerySplit split_support_query(std::size_t n, double fraction, std::uint64_t seed) {
    if (n < 2) throw Error("split_support_query: need at least 2 samples");
    if (!(fraction > 0.0) || !(fraction < 1.0))
        throw Error("split_support_query: fraction must lie in (0, 1)");
    const std::size_t s = support_size(n, fraction);
    if (s == 0) throw Error("split_support_query: support set would be empty");
    if (s >= n) throw Error("split_support_query: query set would be empty");

    Rng rng(seed);
    const auto perm = rng.permutation(n);
    SupportQuerySplit split;
    split.support_indices.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(s));
    split.query_indices.assign(perm.begin() + static_cast<std::ptrdiff_t>(s), perm.end());
    std::sort(split.support_indices.begin(), split.support_indices.end());
    std::sort(split.query_indices.begin(), split.query_indices.end());
    return split;
}

TaskDataset sinusoid_task_from_params(double amplitude, double phase, std::vector<double> xs,
                                      std::string task_id) {
    TaskDataset task;
    task.task_id = std::move(task_id);
    task.feedstock = Feedstock::synthetic;
    task.features = column_matrix(xs);
    task.targets.resize(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i)
        task.targets[i] = amplitude * std::sin(xs[i] + phase);
    return task;
}

TaskDataset sample_sinusoid_task(std::uint64_t rng_seed, std::size_t n_points) {
    if (n_points < 2) throw Error("sample_sinusoid_task: need at least 2 points");
    Rng rng(rng_seed);
    const double amplitude = rng.uniform(0.1, 5.0);
    const double phase = rng.uniform(0.0, std::numbers::pi);
    std::vector<double> xs(n_points);
    for (auto& x : xs) x = rng.uniform(-5.0, 5.0);
    return sinusoid_task_from_params(amplitude, phase, std::move(xs),
                                     "sinusoid_" + std::to_string(rng_seed));
}

std::vector<CvFold> assign_cv_folds(const std::vector<std::string>& task_ids,
                                    std::size_t n_folds, std::size_t n_val,
                                    std::uint64_t seed) {
    if (n_val == 0) throw Error("assign_cv_folds: n_val must be positive");
    if (n_val >= task_ids.size())
        throw Error("assign_cv_folds: n_val " + std::to_string(n_val) +
                    " must be smaller than the number of tasks " +
                    std::to_string(task_ids.size()));
    std::vector<CvFold> folds(n_folds);
    for (std::size_t f = 0; f < n_folds; ++f) {
        std::vector<std::string> ids = task_ids;
        Rng rng(derive_seed(seed, 0x666f6c64 /* fold */, f));
        rng.shuffle(ids);
        folds[f].val_ids.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_val));
        folds[f].train_ids.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_val), ids.end());
    }
    return folds;
}

PreparedTask prepare_task(const TaskDataset& task, const Preprocess& preprocess) {
    if (task.size() == 0) throw Error("prepare_task: empty task");
    PreparedTask out;
    if (preprocess.bounds) {
        out.x = Matrix(task.features.rows, task.features.cols);
        for (std::size_t i = 0; i < task.features.rows; ++i) {
            const auto normalized = normalize_features(task.features.row(i), *preprocess.bounds);
            for (std::size_t j = 0; j < task.features.cols; ++j) out.x(i, j) = normalized[j];
        }
    } else {
        out.x = task.features;
    }
    out.y = Matrix(task.size(), 1);
    for (std::size_t i = 0; i < task.size(); ++i) {
        out.y(i, 0) = preprocess.transform == TargetTransform::log1p
                          ? transform_target(task.targets[i])
                          : task.targets[i];
    }
    return out;
}

}  // namespace metareg
