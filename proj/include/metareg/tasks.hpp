#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "metareg/matrix.hpp"

namespace metareg {

enum class Feedstock { powder, wire, wire_powder, synthetic };

std::string to_string(Feedstock f);
Feedstock feedstock_from_string(const std::string& s);

// Fixed per-feature maxima (minima are 0). Physical default: laser power W,
// scan speed mm/min, powder feed g/min, wire feed g/min.
struct NormalizationBounds {
    std::vector<double> max_values;

    bool operator==(const NormalizationBounds&) const = default;
};

NormalizationBounds default_bounds();  // {3000, 2000, 25, 10}
void validate(const NormalizationBounds& bounds);

// Elementwise raw / bound. Raw values outside [0, bound] are a hard error;
// clamping would silently corrupt the shared parameter space.
std::vector<double> normalize_features(std::span<const double> raw,
                                       const NormalizationBounds& bounds);

double transform_target(double height_mm);          // log(1 + h)
double inverse_transform_target(double y);          // exp(y) - 1

enum class TargetTransform { none, log1p };

std::string to_string(TargetTransform t);
TargetTransform target_transform_from_string(const std::string& s);

// One regression task: raw features (n x d) and raw targets (mm for
// physical bead-height tasks). Immutable after construction.
struct TaskDataset {
    std::string task_id;
    Feedstock feedstock = Feedstock::synthetic;
    Matrix features;
    std::vector<double> targets;

    std::size_t size() const { return features.rows; }
};

// CSV schema: UTF-8, header row, comma-separated, '.' decimal.
// Required columns: power_w, speed_mm_min, height_mm.
// Optional: powder_g_min, wire_g_min (absent -> 0).
TaskDataset load_task_csv(const std::filesystem::path& path, const NormalizationBounds& bounds,
                          const std::string& task_id, Feedstock feedstock);
void save_task_csv(const TaskDataset& task, const std::filesystem::path& path);

struct SupportQuerySplit {
    std::vector<std::size_t> support_indices;
    std::vector<std::size_t> query_indices;
};

// round-to-nearest(fraction * n), ties rounded up
std::size_t support_size(std::size_t n, double fraction);

SupportQuerySplit split_support_query(std::size_t n, double fraction, std::uint64_t seed);

TaskDataset sinusoid_task_from_params(double amplitude, double phase, std::vector<double> xs,
                                      std::string task_id);

// amplitude ~ U[0.1, 5.0], phase ~ U[0, pi], x ~ U[-5, 5], y = A sin(x + phi).
// Native benchmark coordinates: no normalization or target transform.
TaskDataset sample_sinusoid_task(std::uint64_t rng_seed, std::size_t n_points);

struct CvFold {
    std::vector<std::string> train_ids;
    std::vector<std::string> val_ids;
};

std::vector<CvFold> assign_cv_folds(const std::vector<std::string>& task_ids,
                                    std::size_t n_folds, std::size_t n_val, std::uint64_t seed);

// How raw tasks are mapped into model space. Bounds absent means features
// pass through untouched (synthetic benchmarks).
struct Preprocess {
    std::optional<NormalizationBounds> bounds;
    TargetTransform transform = TargetTransform::none;
};

struct PreparedTask {
    Matrix x;  // n x d, normalized when bounds are set
    Matrix y;  // n x 1, transformed targets
};

PreparedTask prepare_task(const TaskDataset& task, const Preprocess& preprocess);

}  // namespace metareg
