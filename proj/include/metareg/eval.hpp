#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "metareg/meta.hpp"
#include "metareg/tasks.hpp"

namespace metareg {

// Regression metrics in physical units. pearson_r and r2 are absent when
// they are undefined (zero variance) instead of propagating NaN.
struct MetricsReport {
    std::optional<double> pearson_r;
    std::optional<double> r2;
    double mse_mm2 = 0.0;
    double mae_mm = 0.0;
    std::vector<double> trace;  // per-adaptation-step query MSE, length steps + 1
    std::size_t n_query = 0;
};

MetricsReport compute_metrics(std::span<const double> pred_mm, std::span<const double> true_mm);

// Task slices in the spaces adaptation needs them: support in model space
// (normalized features, transformed targets), query targets kept in mm so
// traces and metrics read in physical units.
struct EvalSplitData {
    Matrix support_x;
    Matrix support_y;
    Matrix query_x;
    std::vector<double> query_y_mm;
};

EvalSplitData prepare_eval_split(const MetaCheckpoint& checkpoint, const TaskDataset& task,
                                 const SupportQuerySplit& split);

struct AdaptTrace {
    ParameterVector adapted;
    std::vector<double> trace_mse_mm2;  // entry 0 is the pre-adaptation query MSE
};

// `steps` full-batch SGD steps on the support loss starting from theta_o.
// Query data is only ever evaluated, never differentiated.
AdaptTrace adapt_and_trace(const MetaCheckpoint& checkpoint, const EvalSplitData& data,
                           int steps, double lr);

std::vector<double> predict_mm(const MetaCheckpoint& checkpoint, const ParameterVector& params,
                               const Matrix& query_x);

struct EvalProtocol {
    double fraction = 0.2;
    int resamples = 5;
    int steps = 5;
    std::optional<double> lr;  // defaults to the checkpoint's inner_lr
    std::uint64_t base_seed = 0;
};

struct TargetEvaluation {
    std::vector<MetricsReport> per_shuffle;
    MetricsReport mean;
    MetricsReport stddev;  // population standard deviation across shuffles
};

TargetEvaluation evaluate_target(const MetaCheckpoint& checkpoint, const TaskDataset& task,
                                 const EvalProtocol& protocol);

// Plain supervised full-batch Adam training of the base architecture.
ParameterVector train_vanilla_baseline(const Matrix& inputs, const Matrix& targets,
                                       const NetworkSpec& net, int epochs, double lr,
                                       std::uint64_t seed);

enum class BaselineMode { pooled_plus_support, support_only };

std::string to_string(BaselineMode m);

// Five-shuffle protocol for the vanilla network: per shuffle, train on the
// configured pool and score the target query set in mm.
TargetEvaluation evaluate_baseline(const std::vector<TaskDataset>& source_tasks,
                                   const TaskDataset& target, BaselineMode mode,
                                   const NetworkSpec& net, const EvalProtocol& protocol,
                                   const Preprocess& preprocess, int epochs = 100,
                                   double lr = 0.001);

void write_metrics_csv(const TargetEvaluation& evaluation, const std::filesystem::path& path);
void write_trace_csv(const TargetEvaluation& evaluation, const std::filesystem::path& path);

}  // namespace metareg
