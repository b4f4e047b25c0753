#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "metareg/net.hpp"
#include "metareg/tasks.hpp"

namespace metareg {

enum class Algo { maml, reptile };
enum class OuterOptimizer { sgd, adam };
enum class LrSchedule { constant, cosine };

std::string to_string(Algo a);
Algo algo_from_string(const std::string& s);
std::string to_string(OuterOptimizer o);
OuterOptimizer outer_optimizer_from_string(const std::string& s);
std::string to_string(LrSchedule s);
LrSchedule lr_schedule_from_string(const std::string& s);

struct MetaConfig {
    double inner_lr = 0.1;
    double outer_lr = 0.002;
    int inner_steps = 1;
    int adaptation_steps = 5;
    int batch_size = 6;
    int epochs = 100;
    double support_fraction = 0.2;
    OuterOptimizer outer_optimizer = OuterOptimizer::adam;
    bool second_order = true;  // MAML only
    LrSchedule lr_schedule = LrSchedule::constant;
    std::uint64_t seed = 0;

    bool operator==(const MetaConfig&) const = default;
};

void validate(const MetaConfig& config);

// A task with its support/query split materialized in model space.
struct ResolvedTask {
    Matrix support_x;
    Matrix support_y;
    Matrix query_x;
    Matrix query_y;
};

ResolvedTask resolve_task(const PreparedTask& task, const SupportQuerySplit& split);

// Whether batched per-task work runs on the serial reference path or the
// OpenMP path. Both reduce per-task contributions in ascending task order,
// so they are bit-identical; tests rely on that.
enum class Exec { serial, parallel };

// k full-batch SGD steps on the support MSE; theta is not modified.
ParameterVector inner_adapt(const NetworkSpec& net, const ParameterVector& theta,
                            const Matrix& support_x, const Matrix& support_y, double alpha,
                            int k);

struct MetaGradient {
    double mean_query_loss = 0.0;
    ParameterVector grad;  // gradient of the summed query losses w.r.t. theta
};

// Gradient of sum_i L_Q_i(f_{theta'_i}) with theta'_i = inner_adapt(theta).
// With second_order, the gradient is propagated through all k unrolled inner
// steps (a reverse sweep of Hessian-vector products); otherwise the inner
// Jacobian is treated as identity.
MetaGradient maml_meta_gradient(const NetworkSpec& net, const ParameterVector& theta,
                                std::span<const ResolvedTask> batch, double alpha, int k,
                                bool second_order, Exec exec = Exec::parallel);

struct OuterState {
    AdamState adam;
};

OuterState make_outer_state(const NetworkSpec& net, const MetaConfig& config);

struct MetaStepResult {
    ParameterVector theta;
    OuterState state;
    double mean_query_loss = 0.0;
};

MetaStepResult maml_meta_step(const NetworkSpec& net, const ParameterVector& theta,
                              std::span<const ResolvedTask> batch, const MetaConfig& config,
                              const OuterState& state, Exec exec = Exec::parallel);

// theta + beta * sum_i (theta'_i - theta), adapting on support sets only.
// When mean_query_loss is non-null it receives the post-adaptation query MSE
// for monitoring; the update itself never touches query data.
ParameterVector reptile_meta_step(const NetworkSpec& net, const ParameterVector& theta,
                                  std::span<const ResolvedTask> batch, const MetaConfig& config,
                                  Exec exec = Exec::parallel,
                                  double* mean_query_loss = nullptr);

struct MetaCheckpoint {
    int format_version = 1;
    NetworkSpec net;
    ParameterVector theta_o;
    MetaConfig config;
    std::optional<NormalizationBounds> bounds;
    TargetTransform transform = TargetTransform::none;
    std::vector<double> history;  // mean query loss per epoch, model space
};

// Seeded epoch loop: shuffle tasks, partition into batches of at most
// batch_size, one meta-step per batch. Support/query splits are redrawn each
// epoch from the seeded stream. Fully deterministic in config.seed.
MetaCheckpoint meta_train(const std::vector<TaskDataset>& train_tasks, const NetworkSpec& net,
                          const MetaConfig& config, Algo algo, const Preprocess& preprocess,
                          Exec exec = Exec::parallel);

// Checkpoint round trips are bit-exact: floats are written as decimal with
// 17 significant digits.
std::string checkpoint_to_string(const MetaCheckpoint& checkpoint);
void save_checkpoint(const MetaCheckpoint& checkpoint, const std::filesystem::path& path);
MetaCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace metareg
