#include "metareg/eval.hpp"

#include <cmath>
#include <fstream>

#include "metareg/autodiff.hpp"
#include "metareg/detail/textio.hpp"
#include "metareg/error.hpp"
#include "metareg/rng.hpp"

namespace metareg {

namespace {

using detail::fmt17;

constexpr std::uint64_t kShuffleStream = 0x73686666;   // shff
constexpr std::uint64_t kBaselineStream = 0x626c696e;  // blin
constexpr double kDivergenceLimit = 1e6;

double mean_squared_error(std::span<const double> pred, std::span<const double> truth) {
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double r = pred[i] - truth[i];
        acc += r * r;
    }
    return acc / static_cast<double>(pred.size());
}

std::optional<double> aggregate(std::span<const std::optional<double>> values, bool stddev) {
    double sum = 0.0;
    for (const auto& v : values) {
        if (!v) return std::nullopt;
        sum += *v;
    }
    const double mean = sum / static_cast<double>(values.size());
    if (!stddev) return mean;
    double var = 0.0;
    for (const auto& v : values) var += (*v - mean) * (*v - mean);
    return std::sqrt(var / static_cast<double>(values.size()));
}

double aggregate(std::span<const double> values, bool stddev) {
    double sum = 0.0;
    for (double v : values) sum += v;
    const double mean = sum / static_cast<double>(values.size());
    if (!stddev) return mean;
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    return std::sqrt(var / static_cast<double>(values.size()));
}

MetricsReport aggregate_reports(std::span<const MetricsReport> reports, bool stddev) {
    MetricsReport out;
    std::vector<std::optional<double>> rs, r2s;
    std::vector<double> mses, maes;
    for (const MetricsReport& r : reports) {
        rs.push_back(r.pearson_r);
        r2s.push_back(r.r2);
        mses.push_back(r.mse_mm2);
        maes.push_back(r.mae_mm);
    }
    out.pearson_r = aggregate(std::span<const std::optional<double>>(rs), stddev);
    out.r2 = aggregate(std::span<const std::optional<double>>(r2s), stddev);
    out.mse_mm2 = aggregate(std::span<const double>(mses), stddev);
    out.mae_mm = aggregate(std::span<const double>(maes), stddev);
    out.n_query = reports.front().n_query;
    const std::size_t trace_len = reports.front().trace.size();
    out.trace.resize(trace_len);
    std::vector<double> column(reports.size());
    for (std::size_t s = 0; s < trace_len; ++s) {
        for (std::size_t i = 0; i < reports.size(); ++i) column[i] = reports[i].trace[s];
        out.trace[s] = aggregate(std::span<const double>(column), stddev);
    }
    return out;
}

std::string cell(const std::optional<double>& v) { return v ? fmt17(*v) : "undefined"; }

}  // namespace

MetricsReport compute_metrics(std::span<const double> pred_mm, std::span<const double> true_mm) {
    if (pred_mm.size() != true_mm.size())
        throw Error("compute_metrics: prediction and target lengths differ (" +
                    std::to_string(pred_mm.size()) + " vs " + std::to_string(true_mm.size()) +
                    ")");
    if (pred_mm.size() < 2) throw Error("compute_metrics: need at least 2 samples");

    const double n = static_cast<double>(pred_mm.size());
    MetricsReport report;
    report.n_query = pred_mm.size();

    double abs_sum = 0.0;
    for (std::size_t i = 0; i < pred_mm.size(); ++i)
        abs_sum += std::abs(pred_mm[i] - true_mm[i]);
    report.mse_mm2 = mean_squared_error(pred_mm, true_mm);
    report.mae_mm = abs_sum / n;

    double mean_pred = 0.0, mean_true = 0.0;
    for (std::size_t i = 0; i < pred_mm.size(); ++i) {
        mean_pred += pred_mm[i];
        mean_true += true_mm[i];
    }
    mean_pred /= n;
    mean_true /= n;

    double ss_res = 0.0, ss_tot = 0.0, cov = 0.0, var_pred = 0.0;
    for (std::size_t i = 0; i < pred_mm.size(); ++i) {
        const double dp = pred_mm[i] - mean_pred;
        const double dt = true_mm[i] - mean_true;
        const double r = pred_mm[i] - true_mm[i];
        ss_res += r * r;
        ss_tot += dt * dt;
        cov += dp * dt;
        var_pred += dp * dp;
    }
    if (ss_tot > 0.0) {
        report.r2 = 1.0 - ss_res / ss_tot;
        if (var_pred > 0.0) report.pearson_r = cov / std::sqrt(var_pred * ss_tot);
    }
    return report;
}

EvalSplitData prepare_eval_split(const MetaCheckpoint& checkpoint, const TaskDataset& task,
                                 const SupportQuerySplit& split) {
    if (checkpoint.net.output_dim != 1)
        throw Error("prepare_eval_split: evaluation pipeline expects a single-output network");
    const Preprocess preprocess{checkpoint.bounds, checkpoint.transform};
    const PreparedTask prepared = prepare_task(task, preprocess);
    EvalSplitData data;
    data.support_x = take_rows(prepared.x, split.support_indices);
    data.support_y = take_rows(prepared.y, split.support_indices);
    data.query_x = take_rows(prepared.x, split.query_indices);
    data.query_y_mm.reserve(split.query_indices.size());
    for (std::size_t idx : split.query_indices) {
        if (idx >= task.size()) throw Error("prepare_eval_split: query index out of range");
        data.query_y_mm.push_back(task.targets[idx]);
    }
    return data;
}

std::vector<double> predict_mm(const MetaCheckpoint& checkpoint, const ParameterVector& params,
                               const Matrix& query_x) {
    const Matrix pred = forward(checkpoint.net, params, query_x);
    std::vector<double> out(pred.rows);
    for (std::size_t i = 0; i < pred.rows; ++i) {
        out[i] = checkpoint.transform == TargetTransform::log1p
                     ? inverse_transform_target(pred(i, 0))
                     : pred(i, 0);
    }
    return out;
}

AdaptTrace adapt_and_trace(const MetaCheckpoint& checkpoint, const EvalSplitData& data,
                           int steps, double lr) {
    if (data.support_x.rows == 0) throw Error("adapt_and_trace: empty support set");
    if (data.query_x.rows == 0) throw Error("adapt_and_trace: empty query set");
    if (steps < 1) throw Error("adapt_and_trace: steps must be positive");

    AdaptTrace result;
    result.adapted = checkpoint.theta_o;
    result.trace_mse_mm2.reserve(static_cast<std::size_t>(steps) + 1);
    result.trace_mse_mm2.push_back(
        mean_squared_error(predict_mm(checkpoint, result.adapted, data.query_x),
                           data.query_y_mm));
    for (int s = 0; s < steps; ++s) {
        const ValueGrad vg =
            value_and_grad(checkpoint.net, result.adapted, data.support_x, data.support_y);
        result.adapted = sgd_step(result.adapted, vg.grad, lr);
        result.trace_mse_mm2.push_back(
            mean_squared_error(predict_mm(checkpoint, result.adapted, data.query_x),
                               data.query_y_mm));
    }
    return result;
}

TargetEvaluation evaluate_target(const MetaCheckpoint& checkpoint, const TaskDataset& task,
                                 const EvalProtocol& protocol) {
    if (protocol.resamples < 1) throw Error("evaluate_target: resamples must be positive");
    const double lr = protocol.lr.value_or(checkpoint.config.inner_lr);

    TargetEvaluation evaluation;
    for (int i = 0; i < protocol.resamples; ++i) {
        const SupportQuerySplit split = split_support_query(
            task.size(), protocol.fraction,
            derive_seed(protocol.base_seed, kShuffleStream, static_cast<std::uint64_t>(i)));
        const EvalSplitData data = prepare_eval_split(checkpoint, task, split);
        const AdaptTrace adapt = adapt_and_trace(checkpoint, data, protocol.steps, lr);
        MetricsReport report =
            compute_metrics(predict_mm(checkpoint, adapt.adapted, data.query_x),
                            data.query_y_mm);
        report.trace = adapt.trace_mse_mm2;
        evaluation.per_shuffle.push_back(std::move(report));
    }
    evaluation.mean = aggregate_reports(evaluation.per_shuffle, /*stddev=*/false);
    evaluation.stddev = aggregate_reports(evaluation.per_shuffle, /*stddev=*/true);
    return evaluation;
}

ParameterVector train_vanilla_baseline(const Matrix& inputs, const Matrix& targets,
                                       const NetworkSpec& net, int epochs, double lr,
                                       std::uint64_t seed) {
    if (inputs.rows == 0) throw Error("train_vanilla_baseline: empty training data");
    if (epochs < 1) throw Error("train_vanilla_baseline: epochs must be positive");

    ParameterVector params = init_network(net, seed);
    AdamState adam = make_adam_state(params.layout, lr);
    for (int epoch = 0; epoch < epochs; ++epoch) {
        const ValueGrad vg = value_and_grad(net, params, inputs, targets);
        if (!std::isfinite(vg.loss) || vg.loss > kDivergenceLimit)
            throw Error("train_vanilla_baseline: diverged at epoch " + std::to_string(epoch) +
                        " (loss " + fmt17(vg.loss) + ")");
        auto [next_params, next_adam] = adam_step(adam, params, vg.grad);
        params = std::move(next_params);
        adam = std::move(next_adam);
    }
    return params;
}

std::string to_string(BaselineMode m) {
    return m == BaselineMode::pooled_plus_support ? "pooled_plus_support" : "support_only";
}

TargetEvaluation evaluate_baseline(const std::vector<TaskDataset>& source_tasks,
                                   const TaskDataset& target, BaselineMode mode,
                                   const NetworkSpec& net, const EvalProtocol& protocol,
                                   const Preprocess& preprocess, int epochs, double lr) {
    if (protocol.resamples < 1) throw Error("evaluate_baseline: resamples must be positive");
    if (net.output_dim != 1)
        throw Error("evaluate_baseline: evaluation pipeline expects a single-output network");

    std::vector<PreparedTask> sources;
    if (mode == BaselineMode::pooled_plus_support) {
        sources.reserve(source_tasks.size());
        for (const TaskDataset& t : source_tasks) sources.push_back(prepare_task(t, preprocess));
    }
    const PreparedTask target_prepared = prepare_task(target, preprocess);

    TargetEvaluation evaluation;
    for (int i = 0; i < protocol.resamples; ++i) {
        const SupportQuerySplit split = split_support_query(
            target.size(), protocol.fraction,
            derive_seed(protocol.base_seed, kShuffleStream, static_cast<std::uint64_t>(i)));

        std::size_t pool_rows = split.support_indices.size();
        for (const PreparedTask& s : sources) pool_rows += s.x.rows;
        Matrix pool_x(pool_rows, target_prepared.x.cols);
        Matrix pool_y(pool_rows, 1);
        std::size_t r = 0;
        for (const PreparedTask& s : sources) {
            for (std::size_t j = 0; j < s.x.rows; ++j, ++r) {
                for (std::size_t c = 0; c < s.x.cols; ++c) pool_x(r, c) = s.x(j, c);
                pool_y(r, 0) = s.y(j, 0);
            }
        }
        for (std::size_t idx : split.support_indices) {
            for (std::size_t c = 0; c < target_prepared.x.cols; ++c)
                pool_x(r, c) = target_prepared.x(idx, c);
            pool_y(r, 0) = target_prepared.y(idx, 0);
            ++r;
        }

        const ParameterVector params = train_vanilla_baseline(
            pool_x, pool_y, net, epochs, lr,
            derive_seed(protocol.base_seed, kBaselineStream, static_cast<std::uint64_t>(i)));

        const Matrix query_x = take_rows(target_prepared.x, split.query_indices);
        std::vector<double> query_y_mm;
        query_y_mm.reserve(split.query_indices.size());
        for (std::size_t idx : split.query_indices) query_y_mm.push_back(target.targets[idx]);

        const Matrix pred = forward(net, params, query_x);
        std::vector<double> pred_mm(pred.rows);
        for (std::size_t j = 0; j < pred.rows; ++j) {
            pred_mm[j] = preprocess.transform == TargetTransform::log1p
                             ? inverse_transform_target(pred(j, 0))
                             : pred(j, 0);
        }
        evaluation.per_shuffle.push_back(compute_metrics(pred_mm, query_y_mm));
    }
    evaluation.mean = aggregate_reports(evaluation.per_shuffle, /*stddev=*/false);
    evaluation.stddev = aggregate_reports(evaluation.per_shuffle, /*stddev=*/true);
    return evaluation;
}

void write_metrics_csv(const TargetEvaluation& evaluation, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("write_metrics_csv: cannot write '" + path.string() + "'");
    out << "shuffle_index,pearson_r,r2,mse_mm2,mae_mm\n";
    for (std::size_t i = 0; i < evaluation.per_shuffle.size(); ++i) {
        const MetricsReport& r = evaluation.per_shuffle[i];
        out << i << ',' << cell(r.pearson_r) << ',' << cell(r.r2) << ',' << fmt17(r.mse_mm2)
            << ',' << fmt17(r.mae_mm) << '\n';
    }
    const MetricsReport& m = evaluation.mean;
    out << "mean," << cell(m.pearson_r) << ',' << cell(m.r2) << ',' << fmt17(m.mse_mm2) << ','
        << fmt17(m.mae_mm) << '\n';
}

void write_trace_csv(const TargetEvaluation& evaluation, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("write_trace_csv: cannot write '" + path.string() + "'");
    out << "step";
    for (std::size_t i = 0; i < evaluation.per_shuffle.size(); ++i) out << ",mse_mm2_" << i;
    out << '\n';
    const std::size_t steps = evaluation.per_shuffle.front().trace.size();
    for (std::size_t s = 0; s < steps; ++s) {
        out << s;
        for (const MetricsReport& r : evaluation.per_shuffle) out << ',' << fmt17(r.trace[s]);
        out << '\n';
    }
}

}  // namespace metareg
