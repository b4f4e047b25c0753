#include "metareg/meta.hpp"

#include <cmath>
#include <exception>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "metareg/autodiff.hpp"
#include "metareg/detail/textio.hpp"
#include "metareg/error.hpp"
#include "metareg/rng.hpp"

namespace metareg {

namespace {

using detail::fmt17;

constexpr std::uint64_t kInitStream = 0x696e6974;    // init
constexpr std::uint64_t kEpochStream = 0x65706f63;   // epoc
constexpr std::uint64_t kSplitStream = 0x73706c74;   // splt
constexpr double kDivergenceLimit = 1e6;

struct TaskContribution {
    double query_loss = 0.0;
    ParameterVector grad;
};

TaskContribution maml_task_contribution(const NetworkSpec& net, const ParameterVector& theta,
                                        const ResolvedTask& task, double alpha, int k,
                                        bool second_order) {
    std::vector<ParameterVector> unrolled;
    unrolled.reserve(static_cast<std::size_t>(k) + 1);
    unrolled.push_back(theta);
    for (int j = 0; j < k; ++j) {
        const ValueGrad vg = value_and_grad(net, unrolled.back(), task.support_x, task.support_y);
        unrolled.push_back(sgd_step(unrolled.back(), vg.grad, alpha));
    }

    ValueGrad query = value_and_grad(net, unrolled.back(), task.query_x, task.query_y);
    TaskContribution out{query.loss, std::move(query.grad)};
    if (second_order) {
        // reverse sweep through the unrolled steps: g <- (I - alpha H(theta_j)) g
        for (int j = k - 1; j >= 0; --j) {
            const ParameterVector hv = hessian_vector_product(net, unrolled[static_cast<std::size_t>(j)],
                                                              task.support_x, task.support_y,
                                                              out.grad);
            for (std::size_t i = 0; i < out.grad.values.size(); ++i)
                out.grad.values[i] -= alpha * hv.values[i];
        }
    }
    return out;
}

// Runs fn(i) for each task either serially or under OpenMP. Results land in
// pre-sized slots, so the subsequent in-order reduction is identical on both
// paths.
template <class Fn>
void for_each_task(std::size_t n, Exec exec, Fn&& fn) {
    if (exec == Exec::serial) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::exception_ptr first_error = nullptr;
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
        try {
            fn(static_cast<std::size_t>(i));
        } catch (...) {
#pragma omp critical
            if (!first_error) first_error = std::current_exception();
        }
    }
    if (first_error) std::rethrow_exception(first_error);
}

void check_batch_tasks(std::span<const ResolvedTask> batch, bool need_query,
                       const char* context) {
    if (batch.empty()) throw Error(std::string(context) + ": empty task batch");
    for (std::size_t i = 0; i < batch.size(); ++i) {
        if (batch[i].support_x.rows == 0)
            throw Error(std::string(context) + ": task " + std::to_string(i) +
                        " has an empty support set");
        if (need_query && batch[i].query_x.rows == 0)
            throw Error(std::string(context) + ": task " + std::to_string(i) +
                        " has an empty query set");
    }
}

}  // namespace

std::string to_string(Algo a) { return a == Algo::maml ? "maml" : "reptile"; }

Algo algo_from_string(const std::string& s) {
    if (s == "maml") return Algo::maml;
    if (s == "reptile") return Algo::reptile;
    throw Error("unknown algorithm '" + s + "'");
}

std::string to_string(OuterOptimizer o) { return o == OuterOptimizer::sgd ? "sgd" : "adam"; }

OuterOptimizer outer_optimizer_from_string(const std::string& s) {
    if (s == "sgd") return OuterOptimizer::sgd;
    if (s == "adam") return OuterOptimizer::adam;
    throw Error("unknown outer optimizer '" + s + "'");
}

std::string to_string(LrSchedule s) {
    return s == LrSchedule::constant ? "constant" : "cosine";
}

LrSchedule lr_schedule_from_string(const std::string& s) {
    if (s == "constant") return LrSchedule::constant;
    if (s == "cosine") return LrSchedule::cosine;
    throw Error("unknown lr schedule '" + s + "'");
}

void validate(const MetaConfig& config) {
    if (!(config.inner_lr >= 0.0)) throw Error("MetaConfig: inner_lr must be non-negative");
    if (!(config.outer_lr > 0.0)) throw Error("MetaConfig: outer_lr must be positive");
    if (config.inner_steps < 1) throw Error("MetaConfig: inner_steps must be positive");
    if (config.adaptation_steps < 1) throw Error("MetaConfig: adaptation_steps must be positive");
    if (config.batch_size < 1) throw Error("MetaConfig: batch_size must be positive");
    if (config.epochs < 1) throw Error("MetaConfig: epochs must be positive");
    if (!(config.support_fraction > 0.0) || !(config.support_fraction < 1.0))
        throw Error("MetaConfig: support_fraction must lie in (0, 1)");
}

ResolvedTask resolve_task(const PreparedTask& task, const SupportQuerySplit& split) {
    ResolvedTask out;
    out.support_x = take_rows(task.x, split.support_indices);
    out.support_y = take_rows(task.y, split.support_indices);
    out.query_x = take_rows(task.x, split.query_indices);
    out.query_y = take_rows(task.y, split.query_indices);
    return out;
}

ParameterVector inner_adapt(const NetworkSpec& net, const ParameterVector& theta,
                            const Matrix& support_x, const Matrix& support_y, double alpha,
                            int k) {
    if (support_x.rows == 0) throw Error("inner_adapt: empty support set");
    if (k < 1) throw Error("inner_adapt: k must be positive");
    ParameterVector adapted = theta;
    for (int j = 0; j < k; ++j) {
        const ValueGrad vg = value_and_grad(net, adapted, support_x, support_y);
        adapted = sgd_step(adapted, vg.grad, alpha);
    }
    return adapted;
}

MetaGradient maml_meta_gradient(const NetworkSpec& net, const ParameterVector& theta,
                                std::span<const ResolvedTask> batch, double alpha, int k,
                                bool second_order, Exec exec) {
    check_batch_tasks(batch, /*need_query=*/true, "maml_meta_gradient");
    if (k < 1) throw Error("maml_meta_gradient: k must be positive");

    std::vector<TaskContribution> contributions(batch.size());
    for_each_task(batch.size(), exec, [&](std::size_t i) {
        contributions[i] = maml_task_contribution(net, theta, batch[i], alpha, k, second_order);
    });

    MetaGradient out;
    out.grad = zeros_like(theta.layout);
    double loss_sum = 0.0;
    for (const TaskContribution& c : contributions) {  // ascending task order
        loss_sum += c.query_loss;
        for (std::size_t i = 0; i < out.grad.values.size(); ++i)
            out.grad.values[i] += c.grad.values[i];
    }
    out.mean_query_loss = loss_sum / static_cast<double>(batch.size());
    return out;
}

OuterState make_outer_state(const NetworkSpec& net, const MetaConfig& config) {
    OuterState state;
    state.adam = make_adam_state(layout_of(net), config.outer_lr);
    return state;
}

MetaStepResult maml_meta_step(const NetworkSpec& net, const ParameterVector& theta,
                              std::span<const ResolvedTask> batch, const MetaConfig& config,
                              const OuterState& state, Exec exec) {
    const MetaGradient mg = maml_meta_gradient(net, theta, batch, config.inner_lr,
                                               config.inner_steps, config.second_order, exec);
    MetaStepResult result;
    result.mean_query_loss = mg.mean_query_loss;
    if (config.outer_optimizer == OuterOptimizer::sgd) {
        result.theta = sgd_step(theta, mg.grad, config.outer_lr);
        result.state = state;
    } else {
        AdamState adam = state.adam;
        adam.learning_rate = config.outer_lr;
        auto [next_theta, next_adam] = adam_step(adam, theta, mg.grad);
        result.theta = std::move(next_theta);
        result.state.adam = std::move(next_adam);
    }
    return result;
}

ParameterVector reptile_meta_step(const NetworkSpec& net, const ParameterVector& theta,
                                  std::span<const ResolvedTask> batch, const MetaConfig& config,
                                  Exec exec, double* mean_query_loss) {
    check_batch_tasks(batch, /*need_query=*/mean_query_loss != nullptr, "reptile_meta_step");

    std::vector<ParameterVector> adapted(batch.size());
    std::vector<double> query_losses(batch.size(), 0.0);
    for_each_task(batch.size(), exec, [&](std::size_t i) {
        adapted[i] = inner_adapt(net, theta, batch[i].support_x, batch[i].support_y,
                                 config.inner_lr, config.inner_steps);
        if (mean_query_loss != nullptr)
            query_losses[i] = mse_loss(forward(net, adapted[i], batch[i].query_x),
                                       batch[i].query_y);
    });

    ParameterVector out = theta;
    for (const ParameterVector& adapted_i : adapted) {  // ascending task order
        for (std::size_t j = 0; j < out.values.size(); ++j)
            out.values[j] += config.outer_lr * (adapted_i.values[j] - theta.values[j]);
    }
    if (mean_query_loss != nullptr) {
        double sum = 0.0;
        for (double l : query_losses) sum += l;
        *mean_query_loss = sum / static_cast<double>(batch.size());
    }
    return out;
}

MetaCheckpoint meta_train(const std::vector<TaskDataset>& train_tasks, const NetworkSpec& net,
                          const MetaConfig& config, Algo algo, const Preprocess& preprocess,
                          Exec exec) {
    validate(config);
    validate(net);
    if (train_tasks.size() < static_cast<std::size_t>(config.batch_size))
        throw Error("meta_train: " + std::to_string(train_tasks.size()) +
                    " tasks is fewer than batch_size " + std::to_string(config.batch_size));

    std::vector<PreparedTask> prepared;
    prepared.reserve(train_tasks.size());
    for (const TaskDataset& task : train_tasks) {
        const std::size_t n = task.size();
        if (n < 2)
            throw Error("meta_train: task '" + task.task_id + "' has fewer than 2 samples");
        const std::size_t s = support_size(n, config.support_fraction);
        if (s == 0 || s >= n)
            throw Error("meta_train: task '" + task.task_id +
                        "' cannot be split at support fraction " +
                        fmt17(config.support_fraction));
        prepared.push_back(prepare_task(task, preprocess));
    }

    ParameterVector theta = init_network(net, derive_seed(config.seed, kInitStream));
    OuterState state = make_outer_state(net, config);
    std::vector<double> history;
    history.reserve(static_cast<std::size_t>(config.epochs));

    const std::size_t n_tasks = train_tasks.size();
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        MetaConfig epoch_config = config;
        if (config.lr_schedule == LrSchedule::cosine)
            epoch_config.outer_lr = cosine_annealing_lr(static_cast<std::uint64_t>(epoch),
                                                        static_cast<std::uint64_t>(config.epochs),
                                                        config.outer_lr, 0.0);

        Rng order_rng(derive_seed(config.seed, kEpochStream, static_cast<std::uint64_t>(epoch)));
        const std::vector<std::size_t> order = order_rng.permutation(n_tasks);

        double loss_sum = 0.0;
        std::size_t task_count = 0;
        for (std::size_t start = 0; start < n_tasks; start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t end = std::min(n_tasks, start + static_cast<std::size_t>(config.batch_size));
            std::vector<ResolvedTask> batch;
            batch.reserve(end - start);
            for (std::size_t b = start; b < end; ++b) {
                const std::size_t ti = order[b];
                const SupportQuerySplit split = split_support_query(
                    train_tasks[ti].size(), config.support_fraction,
                    derive_seed(config.seed, kSplitStream, static_cast<std::uint64_t>(epoch), ti));
                batch.push_back(resolve_task(prepared[ti], split));
            }

            double batch_loss = 0.0;
            if (algo == Algo::maml) {
                MetaStepResult step = maml_meta_step(net, theta, batch, epoch_config, state, exec);
                theta = std::move(step.theta);
                state = std::move(step.state);
                batch_loss = step.mean_query_loss;
            } else {
                theta = reptile_meta_step(net, theta, batch, epoch_config, exec, &batch_loss);
            }
            if (!std::isfinite(batch_loss) || batch_loss > kDivergenceLimit)
                throw Error("meta_train: diverged at epoch " + std::to_string(epoch) +
                            " (query loss " + fmt17(batch_loss) + ")");
            loss_sum += batch_loss * static_cast<double>(end - start);
            task_count += end - start;
        }
        history.push_back(loss_sum / static_cast<double>(task_count));
    }

    if (!all_finite(theta)) throw Error("meta_train: non-finite parameters after training");

    MetaCheckpoint checkpoint;
    checkpoint.net = net;
    checkpoint.theta_o = std::move(theta);
    checkpoint.config = config;
    checkpoint.bounds = preprocess.bounds;
    checkpoint.transform = preprocess.transform;
    checkpoint.history = std::move(history);
    return checkpoint;
}

namespace {

std::string activation_name(Activation a) {
    return a == Activation::tanh ? "tanh" : "relu";
}

Activation activation_from_string(const std::string& s) {
    if (s == "tanh") return Activation::tanh;
    if (s == "relu") return Activation::relu;
    throw Error("unknown activation '" + s + "'");
}

void write_double_array(std::ostringstream& out, const std::vector<double>& values) {
    out << '[';
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) out << ',';
        out << fmt17(values[i]);
    }
    out << ']';
}

using json = nlohmann::json;

void require_keys(const json& object, std::initializer_list<const char*> keys,
                  const std::string& context) {
    for (const char* key : keys)
        if (!object.contains(key)) throw Error(context + ": missing key '" + key + "'");
    for (const auto& item : object.items()) {
        bool known = false;
        for (const char* key : keys) known = known || item.key() == key;
        if (!known) throw Error(context + ": unknown key '" + item.key() + "'");
    }
}

}  // namespace

std::string checkpoint_to_string(const MetaCheckpoint& checkpoint) {
    std::ostringstream out;
    out << "{\n";
    out << "  \"format_version\": " << checkpoint.format_version << ",\n";
    out << "  \"net\": {\"input_dim\": " << checkpoint.net.input_dim << ", \"hidden_dims\": [";
    for (std::size_t i = 0; i < checkpoint.net.hidden_dims.size(); ++i) {
        if (i) out << ',';
        out << checkpoint.net.hidden_dims[i];
    }
    out << "], \"output_dim\": " << checkpoint.net.output_dim << ", \"activation\": \""
        << activation_name(checkpoint.net.activation) << "\", \"biases\": "
        << (checkpoint.net.biases ? "true" : "false") << "},\n";
    out << "  \"theta_o\": ";
    write_double_array(out, checkpoint.theta_o.values);
    out << ",\n";
    const MetaConfig& c = checkpoint.config;
    out << "  \"config\": {\"inner_lr\": " << fmt17(c.inner_lr) << ", \"outer_lr\": "
        << fmt17(c.outer_lr) << ", \"inner_steps\": " << c.inner_steps
        << ", \"adaptation_steps\": " << c.adaptation_steps << ", \"batch_size\": "
        << c.batch_size << ", \"epochs\": " << c.epochs << ", \"support_fraction\": "
        << fmt17(c.support_fraction) << ", \"outer_optimizer\": \""
        << to_string(c.outer_optimizer) << "\", \"second_order\": "
        << (c.second_order ? "true" : "false") << ", \"lr_schedule\": \""
        << to_string(c.lr_schedule) << "\", \"seed\": " << c.seed << "},\n";
    out << "  \"bounds\": ";
    if (checkpoint.bounds) {
        write_double_array(out, checkpoint.bounds->max_values);
    } else {
        out << "null";
    }
    out << ",\n";
    out << "  \"transform\": \"" << to_string(checkpoint.transform) << "\",\n";
    out << "  \"history\": ";
    write_double_array(out, checkpoint.history);
    out << "\n}\n";
    return out.str();
}

void save_checkpoint(const MetaCheckpoint& checkpoint, const std::filesystem::path& path) {
    if (!all_finite(checkpoint.theta_o))
        throw Error("save_checkpoint: non-finite parameters");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("save_checkpoint: cannot write '" + path.string() + "'");
    out << checkpoint_to_string(checkpoint);
}

MetaCheckpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("load_checkpoint: cannot open '" + path.string() + "'");
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw Error("load_checkpoint: parse error in '" + path.string() + "': " + e.what());
    }
    const std::string ctx = "load_checkpoint";
    require_keys(doc, {"format_version", "net", "theta_o", "config", "bounds", "transform",
                       "history"},
                 ctx);

    MetaCheckpoint checkpoint;
    checkpoint.format_version = doc.at("format_version").get<int>();
    if (checkpoint.format_version != 1)
        throw Error("load_checkpoint: unsupported format_version " +
                    std::to_string(checkpoint.format_version));

    const json& net = doc.at("net");
    require_keys(net, {"input_dim", "hidden_dims", "output_dim", "activation", "biases"},
                 ctx + ".net");
    checkpoint.net.input_dim = net.at("input_dim").get<std::size_t>();
    checkpoint.net.hidden_dims = net.at("hidden_dims").get<std::vector<std::size_t>>();
    checkpoint.net.output_dim = net.at("output_dim").get<std::size_t>();
    checkpoint.net.activation = activation_from_string(net.at("activation").get<std::string>());
    checkpoint.net.biases = net.at("biases").get<bool>();

    checkpoint.theta_o.values = doc.at("theta_o").get<std::vector<double>>();
    checkpoint.theta_o.layout = layout_of(checkpoint.net);
    require_layout(checkpoint.theta_o, checkpoint.theta_o.layout, "load_checkpoint");
    if (!all_finite(checkpoint.theta_o))
        throw Error("load_checkpoint: non-finite parameters in '" + path.string() + "'");

    const json& cfg = doc.at("config");
    require_keys(cfg, {"inner_lr", "outer_lr", "inner_steps", "adaptation_steps", "batch_size",
                       "epochs", "support_fraction", "outer_optimizer", "second_order",
                       "lr_schedule", "seed"},
                 ctx + ".config");
    checkpoint.config.inner_lr = cfg.at("inner_lr").get<double>();
    checkpoint.config.outer_lr = cfg.at("outer_lr").get<double>();
    checkpoint.config.inner_steps = cfg.at("inner_steps").get<int>();
    checkpoint.config.adaptation_steps = cfg.at("adaptation_steps").get<int>();
    checkpoint.config.batch_size = cfg.at("batch_size").get<int>();
    checkpoint.config.epochs = cfg.at("epochs").get<int>();
    checkpoint.config.support_fraction = cfg.at("support_fraction").get<double>();
    checkpoint.config.outer_optimizer =
        outer_optimizer_from_string(cfg.at("outer_optimizer").get<std::string>());
    checkpoint.config.second_order = cfg.at("second_order").get<bool>();
    checkpoint.config.lr_schedule =
        lr_schedule_from_string(cfg.at("lr_schedule").get<std::string>());
    checkpoint.config.seed = cfg.at("seed").get<std::uint64_t>();

    if (!doc.at("bounds").is_null())
        checkpoint.bounds = NormalizationBounds{doc.at("bounds").get<std::vector<double>>()};
    checkpoint.transform = target_transform_from_string(doc.at("transform").get<std::string>());
    checkpoint.history = doc.at("history").get<std::vector<double>>();
    return checkpoint;
}

}  // namespace metareg
