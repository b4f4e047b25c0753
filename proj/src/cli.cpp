#include "metareg/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "metareg/autodiff.hpp"
#include "metareg/detail/textio.hpp"
#include "metareg/error.hpp"
#include "metareg/eval.hpp"
#include "metareg/gpr.hpp"
#include "metareg/hpo.hpp"
#include "metareg/rng.hpp"

namespace metareg::cli {

namespace {

using detail::fmt17;
using json = nlohmann::json;

constexpr std::uint64_t kPoolStream = 0x706f6f6c;    // pool
constexpr std::uint64_t kTestStream = 0x74657374;    // test
constexpr std::uint64_t kTsplitStream = 0x7473706c;  // tspl
constexpr std::uint64_t kSynthStream = 0x73796e74;   // synt

std::string fmt6(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

std::string json_quote(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        switch (c) {
            case '"': out += "\\\""; break;
            case '\\': out += "\\\\"; break;
            case '\n': out += "\\n"; break;
            case '\t': out += "\\t"; break;
            default: out += c;
        }
    }
    out += '"';
    return out;
}

std::string json_double_array(std::span<const double> values) {
    std::string out = "[";
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) out += ',';
        out += fmt17(values[i]);
    }
    out += ']';
    return out;
}

std::string json_optional(const std::optional<double>& v) {
    return v ? fmt17(*v) : "null";
}

std::string net_to_json(const NetworkSpec& net) {
    std::ostringstream out;
    out << "{\"input_dim\": " << net.input_dim << ", \"hidden_dims\": [";
    for (std::size_t i = 0; i < net.hidden_dims.size(); ++i) {
        if (i) out << ',';
        out << net.hidden_dims[i];
    }
    out << "], \"output_dim\": " << net.output_dim << ", \"activation\": \""
        << (net.activation == Activation::tanh ? "tanh" : "relu") << "\", \"biases\": "
        << (net.biases ? "true" : "false") << "}";
    return out.str();
}

std::string config_to_json(const MetaConfig& c) {
    std::ostringstream out;
    out << "{\"inner_lr\": " << fmt17(c.inner_lr) << ", \"outer_lr\": " << fmt17(c.outer_lr)
        << ", \"inner_steps\": " << c.inner_steps << ", \"adaptation_steps\": "
        << c.adaptation_steps << ", \"batch_size\": " << c.batch_size << ", \"epochs\": "
        << c.epochs << ", \"support_fraction\": " << fmt17(c.support_fraction)
        << ", \"outer_optimizer\": \"" << to_string(c.outer_optimizer)
        << "\", \"second_order\": " << (c.second_order ? "true" : "false")
        << ", \"lr_schedule\": \"" << to_string(c.lr_schedule) << "\", \"seed\": " << c.seed
        << "}";
    return out.str();
}

std::string metrics_to_json(const MetricsReport& m) {
    std::ostringstream out;
    out << "{\"pearson_r\": " << json_optional(m.pearson_r) << ", \"r2\": "
        << json_optional(m.r2) << ", \"mse_mm2\": " << fmt17(m.mse_mm2) << ", \"mae_mm\": "
        << fmt17(m.mae_mm) << ", \"n_query\": " << m.n_query << ", \"trace\": "
        << json_double_array(m.trace) << "}";
    return out.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& body) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    out << body;
}

std::filesystem::path prepare_out_dir(const std::string& out) {
    std::filesystem::path dir(out);
    std::filesystem::create_directories(dir);
    return dir;
}

// Sidecar holding the non-reproducible bits (timestamp); report bodies stay
// byte-identical across reruns with the same seed.
void write_run_info(const std::filesystem::path& out_dir,
                    const std::vector<std::string>& args) {
    std::time_t now = std::time(nullptr);
    char stamp[32];
    std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    std::string cmd = "metareg";
    for (const std::string& a : args) cmd += " " + a;
    std::ostringstream body;
    body << "{\n  \"timestamp_utc\": " << json_quote(stamp) << ",\n  \"command\": "
         << json_quote(cmd) << "\n}\n";
    write_text_file(out_dir / "run_info.json", body.str());
}

std::uint64_t parse_seed_string(const std::string& text, const std::string& origin) {
    try {
        std::size_t consumed = 0;
        const std::uint64_t value = std::stoull(text, &consumed);
        if (consumed != text.size()) throw std::invalid_argument("trailing junk");
        return value;
    } catch (const std::exception&) {
        throw ConfigError(origin + ": cannot parse seed '" + text + "'");
    }
}

std::uint64_t resolve_seed(bool seed_given, std::uint64_t flag_value) {
    if (seed_given) return flag_value;
    if (const char* env = std::getenv("METAREG_SEED"))
        return parse_seed_string(env, "METAREG_SEED");
    return 0;
}

void require_known_keys(const json& object, std::initializer_list<const char*> keys,
                        const std::string& context) {
    for (const auto& item : object.items()) {
        bool known = false;
        for (const char* key : keys) known = known || item.key() == key;
        if (!known) throw ConfigError(context + ": unknown key '" + item.key() + "'");
    }
}

// ---------------------------------------------------------------------------
// bench-sinusoid
// ---------------------------------------------------------------------------

struct BenchOpts {
    std::string algo = "maml";
    std::uint64_t seed = 0;
    std::string out = "out";
    int iterations = 10000;
    int pool_tasks = 250;
    int batch = 0;  // 0 -> algorithm default
    int train_points = 20;
    int test_tasks = 100;
    int support_points = 10;
    int query_points = 50;
    double adapt_lr = 0.01;
    int adapt_steps = 10;
    double inner_lr = 0.01;
    int inner_steps = 0;  // 0 -> algorithm default
    double outer_lr = 0.0;
};

int run_bench_sinusoid(const BenchOpts& opts, const std::vector<std::string>& args) {
    const Algo algo = algo_from_string(opts.algo);
    const NetworkSpec net{1, {40, 40}, 1, Activation::relu, true};

    MetaConfig config;
    config.inner_lr = opts.inner_lr;
    config.inner_steps = opts.inner_steps > 0 ? opts.inner_steps : (algo == Algo::maml ? 1 : 32);
    config.outer_lr = opts.outer_lr > 0.0 ? opts.outer_lr : 0.001;
    config.outer_optimizer = OuterOptimizer::adam;
    config.batch_size = opts.batch > 0 ? opts.batch : (algo == Algo::maml ? 25 : 10);
    config.adaptation_steps = opts.adapt_steps;
    config.support_fraction =
        static_cast<double>(opts.support_points) / static_cast<double>(opts.train_points);
    config.second_order = true;
    config.seed = opts.seed;
    const int iters_per_epoch =
        (opts.pool_tasks + config.batch_size - 1) / config.batch_size;
    config.epochs = std::max(
        1, static_cast<int>(std::llround(static_cast<double>(opts.iterations) /
                                         static_cast<double>(iters_per_epoch))));

    std::vector<TaskDataset> pool;
    pool.reserve(static_cast<std::size_t>(opts.pool_tasks));
    for (int i = 0; i < opts.pool_tasks; ++i)
        pool.push_back(sample_sinusoid_task(
            derive_seed(opts.seed, kPoolStream, static_cast<std::uint64_t>(i)),
            static_cast<std::size_t>(opts.train_points)));

    const Preprocess preprocess{std::nullopt, TargetTransform::none};
    std::cout << "bench-sinusoid: meta-training " << to_string(algo) << " for "
              << config.epochs * iters_per_epoch << " meta-iterations\n";
    const MetaCheckpoint checkpoint = meta_train(pool, net, config, algo, preprocess);

    const std::size_t test_points =
        static_cast<std::size_t>(opts.support_points + opts.query_points);
    const double test_fraction =
        static_cast<double>(opts.support_points) / static_cast<double>(test_points);
    std::vector<double> mean_trace(static_cast<std::size_t>(opts.adapt_steps) + 1, 0.0);
    for (int t = 0; t < opts.test_tasks; ++t) {
        const TaskDataset task = sample_sinusoid_task(
            derive_seed(opts.seed, kTestStream, static_cast<std::uint64_t>(t)), test_points);
        const SupportQuerySplit split = split_support_query(
            task.size(), test_fraction,
            derive_seed(opts.seed, kTsplitStream, static_cast<std::uint64_t>(t)));
        const EvalSplitData data = prepare_eval_split(checkpoint, task, split);
        const AdaptTrace adapt = adapt_and_trace(checkpoint, data, opts.adapt_steps, opts.adapt_lr);
        for (std::size_t s = 0; s < mean_trace.size(); ++s)
            mean_trace[s] += adapt.trace_mse_mm2[s];
    }
    for (double& v : mean_trace) v /= static_cast<double>(opts.test_tasks);

    const auto out_dir = prepare_out_dir(opts.out);
    {
        std::ostringstream body;
        body << "{\n";
        body << "  \"subcommand\": \"bench-sinusoid\",\n";
        body << "  \"algo\": \"" << to_string(algo) << "\",\n";
        body << "  \"seed\": " << opts.seed << ",\n";
        body << "  \"net\": " << net_to_json(net) << ",\n";
        body << "  \"config\": " << config_to_json(config) << ",\n";
        body << "  \"pool_tasks\": " << opts.pool_tasks << ",\n";
        body << "  \"meta_iterations\": " << config.epochs * iters_per_epoch << ",\n";
        body << "  \"test_tasks\": " << opts.test_tasks << ",\n";
        body << "  \"support_points\": " << opts.support_points << ",\n";
        body << "  \"query_points\": " << opts.query_points << ",\n";
        body << "  \"adapt_lr\": " << fmt17(opts.adapt_lr) << ",\n";
        body << "  \"adapt_steps\": " << opts.adapt_steps << ",\n";
        body << "  \"post_adaptation_mse_step1\": " << fmt17(mean_trace[1]) << ",\n";
        body << "  \"post_adaptation_mse_step" << opts.adapt_steps << "\": "
             << fmt17(mean_trace.back()) << ",\n";
        body << "  \"mean_trace\": " << json_double_array(mean_trace) << ",\n";
        body << "  \"final_train_query_loss\": " << fmt17(checkpoint.history.back()) << "\n";
        body << "}\n";
        write_text_file(out_dir / "report.json", body.str());
    }
    {
        std::ostringstream csv;
        csv << "step,mean_query_mse\n";
        for (std::size_t s = 0; s < mean_trace.size(); ++s)
            csv << s << ',' << fmt17(mean_trace[s]) << '\n';
        write_text_file(out_dir / "trace_mean.csv", csv.str());
    }
    write_run_info(out_dir, args);

    std::cout << "mean post-adaptation MSE after 1 step:  " << fmt6(mean_trace[1]) << "\n";
    std::cout << "mean post-adaptation MSE after " << opts.adapt_steps
              << " steps: " << fmt6(mean_trace.back()) << "\n";
    std::cout << "report: " << (out_dir / "report.json").string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// synth-tasks
// ---------------------------------------------------------------------------

struct SynthOpts {
    std::string seed_csv;
    int n_train = 100;
    int n_test = 10;
    int points = 25;
    std::string out = "out";
    std::uint64_t seed = 0;
    double additive_std = 0.02;
    double multiplicative_std = 0.05;
    double lengthscale = 0.3;
    double signal_var = 1.0;
    double noise_var = 1e-4;
    bool grid_search = false;
    std::string feedstock = "powder";
};

TaskDataset to_raw_units(const TaskDataset& model_space, const NormalizationBounds& bounds,
                         const std::string& task_id) {
    TaskDataset raw;
    raw.task_id = task_id;
    raw.feedstock = Feedstock::synthetic;
    raw.features = Matrix(model_space.features.rows, model_space.features.cols);
    for (std::size_t i = 0; i < model_space.features.rows; ++i)
        for (std::size_t j = 0; j < model_space.features.cols; ++j)
            raw.features(i, j) = model_space.features(i, j) * bounds.max_values[j];
    raw.targets.resize(model_space.targets.size());
    for (std::size_t i = 0; i < model_space.targets.size(); ++i)
        raw.targets[i] = std::max(0.0, inverse_transform_target(model_space.targets[i]));
    return raw;
}

int run_synth_tasks(const SynthOpts& opts, const std::vector<std::string>& args) {
    const NormalizationBounds bounds = default_bounds();
    const TaskDataset seed_task =
        load_task_csv(opts.seed_csv, bounds,
                      std::filesystem::path(opts.seed_csv).stem().string(),
                      feedstock_from_string(opts.feedstock));
    const PreparedTask prepared = prepare_task(seed_task, {bounds, TargetTransform::log1p});

    std::vector<double> y(prepared.y.rows);
    for (std::size_t i = 0; i < prepared.y.rows; ++i) y[i] = prepared.y(i, 0);
    const std::vector<double> lengthscales(4, opts.lengthscale);
    GprModel model;
    if (opts.grid_search) {
        const double grid[] = {0.25, 0.5, 1.0, 2.0, 4.0};
        model = fit_gpr_lengthscale_grid(prepared.x, y, lengthscales, opts.signal_var,
                                         opts.noise_var, grid);
    } else {
        model = fit_gpr(prepared.x, y, lengthscales, opts.signal_var, opts.noise_var);
    }

    Box box;
    box.lo.assign(4, 0.0);
    box.hi.assign(4, 0.0);
    for (std::size_t j = 0; j < 4; ++j) {
        double lo = prepared.x(0, j), hi = prepared.x(0, j);
        for (std::size_t i = 1; i < prepared.x.rows; ++i) {
            lo = std::min(lo, prepared.x(i, j));
            hi = std::max(hi, prepared.x(i, j));
        }
        box.lo[j] = lo;
        box.hi[j] = hi;
    }

    const auto out_dir = prepare_out_dir(opts.out);
    std::vector<std::string> train_files, test_files;
    char name[64];
    for (int i = 0; i < opts.n_train + opts.n_test; ++i) {
        const bool is_train = i < opts.n_train;
        const int local = is_train ? i : i - opts.n_train;
        std::snprintf(name, sizeof(name), "%s_%03d.csv", is_train ? "train" : "test", local);
        const TaskDataset model_task = synthesize_task(
            model, static_cast<std::size_t>(opts.points), box, opts.additive_std,
            opts.multiplicative_std, derive_seed(opts.seed, kSynthStream, static_cast<std::uint64_t>(i)),
            std::filesystem::path(name).stem().string());
        save_task_csv(to_raw_units(model_task, bounds, model_task.task_id), out_dir / name);
        (is_train ? train_files : test_files).push_back(name);
    }

    std::ostringstream manifest;
    manifest << "{\n  \"seed_csv\": " << json_quote(opts.seed_csv) << ",\n";
    manifest << "  \"seed\": " << opts.seed << ",\n";
    manifest << "  \"points_per_task\": " << opts.points << ",\n";
    manifest << "  \"additive_std\": " << fmt17(opts.additive_std) << ",\n";
    manifest << "  \"multiplicative_std\": " << fmt17(opts.multiplicative_std) << ",\n";
    manifest << "  \"gpr\": {\"lengthscales\": " << json_double_array(model.lengthscales)
             << ", \"signal_var\": " << fmt17(model.signal_var) << ", \"noise_var\": "
             << fmt17(model.noise_var) << ", \"jitter\": " << fmt17(model.jitter) << "},\n";
    manifest << "  \"train\": [";
    for (std::size_t i = 0; i < train_files.size(); ++i) {
        if (i) manifest << ',';
        manifest << json_quote(train_files[i]);
    }
    manifest << "],\n  \"test\": [";
    for (std::size_t i = 0; i < test_files.size(); ++i) {
        if (i) manifest << ',';
        manifest << json_quote(test_files[i]);
    }
    manifest << "]\n}\n";
    write_text_file(out_dir / "manifest.json", manifest.str());
    write_run_info(out_dir, args);

    std::cout << "synth-tasks: wrote " << train_files.size() << " training and "
              << test_files.size() << " test task files to " << out_dir.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// meta-train
// ---------------------------------------------------------------------------

struct TrainOpts {
    std::string config_path;
    std::vector<std::string> tasks;
    std::string algo = "maml";
    std::string out = "out";
    std::uint64_t seed = 0;
    double inner_lr = 0.1;
    double outer_lr = 0.002;
    int inner_steps = 1;
    int adaptation_steps = 5;
    int batch_size = 6;
    int epochs = 100;
    double support_fraction = 0.2;
    std::string outer_optimizer = "adam";
    bool first_order = false;
    std::string lr_schedule = "constant";
    std::vector<std::size_t> hidden{64, 64, 64};
    std::string activation = "tanh";
    std::string transform = "log1p";
    bool no_bounds = false;
    std::vector<double> bounds;
    std::string feedstock = "powder";
};

RunConfig run_config_from_flags(const TrainOpts& opts) {
    RunConfig rc;
    rc.algo = algo_from_string(opts.algo);
    rc.seed = opts.seed;
    rc.out = opts.out;
    rc.net = NetworkSpec{4, opts.hidden, 1,
                         opts.activation == "relu" ? Activation::relu : Activation::tanh, true};
    rc.meta.inner_lr = opts.inner_lr;
    rc.meta.outer_lr = opts.outer_lr;
    rc.meta.inner_steps = opts.inner_steps;
    rc.meta.adaptation_steps = opts.adaptation_steps;
    rc.meta.batch_size = opts.batch_size;
    rc.meta.epochs = opts.epochs;
    rc.meta.support_fraction = opts.support_fraction;
    rc.meta.outer_optimizer = outer_optimizer_from_string(opts.outer_optimizer);
    rc.meta.second_order = !opts.first_order;
    rc.meta.lr_schedule = lr_schedule_from_string(opts.lr_schedule);
    rc.meta.seed = opts.seed;
    for (const std::string& t : opts.tasks) rc.task_paths.emplace_back(t);
    if (opts.no_bounds) {
        rc.preprocess.bounds = std::nullopt;
    } else if (!opts.bounds.empty()) {
        rc.preprocess.bounds = NormalizationBounds{opts.bounds};
    }
    rc.preprocess.transform = target_transform_from_string(opts.transform);
    rc.feedstock = feedstock_from_string(opts.feedstock);
    return rc;
}

int run_meta_train(const RunConfig& rc, const std::vector<std::string>& args) {
    if (rc.task_paths.empty()) throw ConfigError("meta-train: no task files given");
    std::vector<TaskDataset> tasks;
    tasks.reserve(rc.task_paths.size());
    const NormalizationBounds load_bounds =
        rc.preprocess.bounds ? *rc.preprocess.bounds : default_bounds();
    for (const auto& path : rc.task_paths)
        tasks.push_back(load_task_csv(path, load_bounds, path.stem().string(), rc.feedstock));

    std::cout << "meta-train: " << to_string(rc.algo) << " on " << tasks.size()
              << " tasks for " << rc.meta.epochs << " epochs\n";
    const MetaCheckpoint checkpoint =
        meta_train(tasks, rc.net, rc.meta, rc.algo, rc.preprocess);

    const auto out_dir = prepare_out_dir(rc.out.string());
    save_checkpoint(checkpoint, out_dir / "checkpoint.json");
    {
        std::ostringstream csv;
        csv << "epoch,mean_query_loss\n";
        for (std::size_t e = 0; e < checkpoint.history.size(); ++e)
            csv << e << ',' << fmt17(checkpoint.history[e]) << '\n';
        write_text_file(out_dir / "history.csv", csv.str());
    }
    write_run_info(out_dir, args);

    std::cout << "final mean query loss: " << fmt6(checkpoint.history.back()) << "\n";
    std::cout << "checkpoint: " << (out_dir / "checkpoint.json").string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalOpts {
    std::string checkpoint;
    std::string target;
    std::string out = "out";
    std::uint64_t seed = 0;
    double fraction = 0.2;
    int resamples = 5;
    int steps = 0;  // 0 -> checkpoint's adaptation_steps
    double lr = 0.0;  // 0 -> checkpoint's inner_lr
    std::string feedstock = "powder";
};

int run_eval(const EvalOpts& opts, const std::vector<std::string>& args) {
    const MetaCheckpoint checkpoint = load_checkpoint(opts.checkpoint);
    if (!checkpoint.bounds)
        throw ConfigError("eval: checkpoint carries no normalization bounds; "
                          "it was not trained on physical CSV tasks");
    const TaskDataset target =
        load_task_csv(opts.target, *checkpoint.bounds,
                      std::filesystem::path(opts.target).stem().string(),
                      feedstock_from_string(opts.feedstock));

    EvalProtocol protocol;
    protocol.fraction = opts.fraction;
    protocol.resamples = opts.resamples;
    protocol.steps = opts.steps > 0 ? opts.steps : checkpoint.config.adaptation_steps;
    if (opts.lr > 0.0) protocol.lr = opts.lr;
    protocol.base_seed = opts.seed;

    const TargetEvaluation evaluation = evaluate_target(checkpoint, target, protocol);

    const auto out_dir = prepare_out_dir(opts.out);
    write_metrics_csv(evaluation, out_dir / "metrics.csv");
    write_trace_csv(evaluation, out_dir / "trace.csv");
    {
        std::ostringstream body;
        body << "{\n  \"subcommand\": \"eval\",\n";
        body << "  \"checkpoint\": " << json_quote(opts.checkpoint) << ",\n";
        body << "  \"target\": " << json_quote(opts.target) << ",\n";
        body << "  \"net\": " << net_to_json(checkpoint.net) << ",\n";
        body << "  \"config\": " << config_to_json(checkpoint.config) << ",\n";
        body << "  \"protocol\": {\"fraction\": " << fmt17(protocol.fraction)
             << ", \"resamples\": " << protocol.resamples << ", \"steps\": " << protocol.steps
             << ", \"lr\": " << fmt17(protocol.lr.value_or(checkpoint.config.inner_lr))
             << ", \"base_seed\": " << protocol.base_seed << "},\n";
        body << "  \"per_shuffle\": [";
        for (std::size_t i = 0; i < evaluation.per_shuffle.size(); ++i) {
            if (i) body << ',';
            body << "\n    " << metrics_to_json(evaluation.per_shuffle[i]);
        }
        body << "\n  ],\n";
        body << "  \"mean\": " << metrics_to_json(evaluation.mean) << ",\n";
        body << "  \"stddev\": " << metrics_to_json(evaluation.stddev) << "\n}\n";
        write_text_file(out_dir / "report.json", body.str());
    }
    write_run_info(out_dir, args);

    std::cout << "eval: " << protocol.resamples << " shuffles, " << protocol.steps
              << " adaptation steps\n";
    std::cout << "mean: r=" << (evaluation.mean.pearson_r ? fmt6(*evaluation.mean.pearson_r) : "undefined")
              << " R2=" << (evaluation.mean.r2 ? fmt6(*evaluation.mean.r2) : "undefined")
              << " MSE=" << fmt6(evaluation.mean.mse_mm2) << " mm^2 MAE="
              << fmt6(evaluation.mean.mae_mm) << " mm\n";
    std::cout << "metrics: " << (out_dir / "metrics.csv").string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// baseline
// ---------------------------------------------------------------------------

struct BaselineOpts {
    std::string target;
    std::vector<std::string> tasks;
    std::string mode = "both";
    std::string out = "out";
    std::uint64_t seed = 0;
    int epochs = 100;
    double lr = 0.001;
    double fraction = 0.2;
    int resamples = 5;
    std::vector<std::size_t> hidden{64, 64, 64};
    std::string activation = "tanh";
    std::string transform = "log1p";
    bool no_bounds = false;
    std::string feedstock = "powder";
};

int run_baseline(const BaselineOpts& opts, const std::vector<std::string>& args) {
    const bool want_pooled = opts.mode == "both" || opts.mode == "pooled";
    const bool want_support_only = opts.mode == "both" || opts.mode == "target-only";
    if (want_pooled && opts.tasks.empty())
        throw ConfigError("baseline: --tasks is required for the pooled configuration");

    Preprocess preprocess{default_bounds(), target_transform_from_string(opts.transform)};
    if (opts.no_bounds) preprocess.bounds = std::nullopt;
    const NormalizationBounds load_bounds =
        preprocess.bounds ? *preprocess.bounds : default_bounds();

    const Feedstock feedstock = feedstock_from_string(opts.feedstock);
    const TaskDataset target =
        load_task_csv(opts.target, load_bounds,
                      std::filesystem::path(opts.target).stem().string(), feedstock);
    std::vector<TaskDataset> sources;
    for (const std::string& t : opts.tasks)
        sources.push_back(load_task_csv(t, load_bounds,
                                        std::filesystem::path(t).stem().string(), feedstock));

    const NetworkSpec net{4, opts.hidden, 1,
                          opts.activation == "relu" ? Activation::relu : Activation::tanh, true};
    EvalProtocol protocol;
    protocol.fraction = opts.fraction;
    protocol.resamples = opts.resamples;
    protocol.base_seed = opts.seed;

    const auto out_dir = prepare_out_dir(opts.out);
    std::ostringstream body;
    body << "{\n  \"subcommand\": \"baseline\",\n";
    body << "  \"target\": " << json_quote(opts.target) << ",\n";
    body << "  \"net\": " << net_to_json(net) << ",\n";
    body << "  \"epochs\": " << opts.epochs << ",\n";
    body << "  \"lr\": " << fmt17(opts.lr) << ",\n";
    body << "  \"fraction\": " << fmt17(opts.fraction) << ",\n";
    body << "  \"resamples\": " << opts.resamples << ",\n";
    body << "  \"seed\": " << opts.seed;

    for (const BaselineMode mode :
         {BaselineMode::pooled_plus_support, BaselineMode::support_only}) {
        if (mode == BaselineMode::pooled_plus_support && !want_pooled) continue;
        if (mode == BaselineMode::support_only && !want_support_only) continue;
        const TargetEvaluation evaluation = evaluate_baseline(
            sources, target, mode, net, protocol, preprocess, opts.epochs, opts.lr);
        const std::string tag = to_string(mode);
        write_metrics_csv(evaluation, out_dir / ("metrics_" + tag + ".csv"));
        body << ",\n  \"" << tag << "\": {\"mean\": " << metrics_to_json(evaluation.mean)
             << ", \"stddev\": " << metrics_to_json(evaluation.stddev) << "}";
        std::cout << "baseline " << tag << ": mean R2="
                  << (evaluation.mean.r2 ? fmt6(*evaluation.mean.r2) : "undefined")
                  << " MSE=" << fmt6(evaluation.mean.mse_mm2) << " mm^2\n";
    }
    body << "\n}\n";
    write_text_file(out_dir / "report.json", body.str());
    write_run_info(out_dir, args);
    std::cout << "report: " << (out_dir / "report.json").string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// hpo
// ---------------------------------------------------------------------------

struct HpoOpts {
    std::vector<std::string> tasks;
    std::string algo = "maml";
    int trials = 50;
    std::uint64_t seed = 0;
    std::string out = "out";
    int epochs = 100;
    int adaptation_steps = 5;
    double support_fraction = 0.2;
    std::size_t folds = 5;
    std::size_t n_val = 2;
    std::vector<double> inner_lr_range{0.01, 1.0};
    std::vector<double> outer_lr_range{2e-4, 2e-2};
    std::vector<int> batch_choices{2, 4, 6, 8};
    std::vector<int> inner_step_choices{1, 3, 5};
    std::string transform = "log1p";
    bool no_bounds = false;
    std::string feedstock = "powder";
};

int run_hpo(const HpoOpts& opts, const std::vector<std::string>& args) {
    if (opts.inner_lr_range.size() != 2 || opts.outer_lr_range.size() != 2)
        throw ConfigError("hpo: learning-rate ranges need exactly two values (lo hi)");

    Preprocess preprocess{default_bounds(), target_transform_from_string(opts.transform)};
    if (opts.no_bounds) preprocess.bounds = std::nullopt;
    const NormalizationBounds load_bounds =
        preprocess.bounds ? *preprocess.bounds : default_bounds();
    const Feedstock feedstock = feedstock_from_string(opts.feedstock);

    std::vector<TaskDataset> tasks;
    for (const std::string& t : opts.tasks)
        tasks.push_back(load_task_csv(t, load_bounds,
                                      std::filesystem::path(t).stem().string(), feedstock));

    SearchSpace space;
    space.inner_lr = {opts.inner_lr_range[0], opts.inner_lr_range[1]};
    space.outer_lr = {opts.outer_lr_range[0], opts.outer_lr_range[1]};
    space.batch_size = opts.batch_choices;
    space.inner_steps = opts.inner_step_choices;

    MetaConfig base;
    base.epochs = opts.epochs;
    base.adaptation_steps = opts.adaptation_steps;
    base.support_fraction = opts.support_fraction;

    const NetworkSpec net{4, {64, 64, 64}, 1, Activation::tanh, true};
    std::cout << "hpo: " << opts.trials << " random-search trials, " << opts.folds
              << "-fold cross-validation\n";
    const SearchResult result =
        random_search(space, tasks, net, algo_from_string(opts.algo), opts.trials, opts.seed,
                      base, preprocess, opts.folds, opts.n_val);

    const auto out_dir = prepare_out_dir(opts.out);
    write_trial_log_csv(result, out_dir / "trials.csv");
    {
        std::ostringstream body;
        body << "{\n  \"subcommand\": \"hpo\",\n";
        body << "  \"algo\": \"" << opts.algo << "\",\n";
        body << "  \"n_trials\": " << opts.trials << ",\n";
        body << "  \"best_index\": " << result.best_index << ",\n";
        body << "  \"best_objective\": "
             << (std::isfinite(result.trials[result.best_index].objective)
                     ? fmt17(result.trials[result.best_index].objective)
                     : std::string("\"inf\""))
             << ",\n";
        body << "  \"best_config\": " << config_to_json(result.best) << "\n}\n";
        write_text_file(out_dir / "best_config.json", body.str());
    }
    write_run_info(out_dir, args);

    std::cout << "best trial " << result.best_index << ": inner_lr="
              << fmt6(result.best.inner_lr) << " outer_lr=" << fmt6(result.best.outer_lr)
              << " batch_size=" << result.best.batch_size << " inner_steps="
              << result.best.inner_steps << "\n";
    std::cout << "trial log: " << (out_dir / "trials.csv").string() << "\n";
    return 0;
}

}  // namespace

RunConfig parse_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("run config: cannot open '" + path.string() + "'");
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("run config: parse error in '" + path.string() + "': " + e.what());
    }

    require_known_keys(doc, {"algo", "seed", "out", "net", "meta", "tasks", "bounds",
                             "transform", "feedstock"},
                       "run config");
    RunConfig rc;
    try {
        if (doc.contains("algo")) rc.algo = algo_from_string(doc.at("algo").get<std::string>());
        if (doc.contains("seed")) rc.seed = doc.at("seed").get<std::uint64_t>();
        if (doc.contains("out")) rc.out = doc.at("out").get<std::string>();
        if (doc.contains("net")) {
            const json& net = doc.at("net");
            require_known_keys(net, {"input_dim", "hidden_dims", "output_dim", "activation",
                                     "biases"},
                               "run config net");
            if (net.contains("input_dim")) rc.net.input_dim = net.at("input_dim").get<std::size_t>();
            if (net.contains("hidden_dims"))
                rc.net.hidden_dims = net.at("hidden_dims").get<std::vector<std::size_t>>();
            if (net.contains("output_dim"))
                rc.net.output_dim = net.at("output_dim").get<std::size_t>();
            if (net.contains("activation"))
                rc.net.activation = net.at("activation").get<std::string>() == "relu"
                                        ? Activation::relu
                                        : Activation::tanh;
            if (net.contains("biases")) rc.net.biases = net.at("biases").get<bool>();
        }
        if (doc.contains("meta")) {
            const json& meta = doc.at("meta");
            require_known_keys(meta, {"inner_lr", "outer_lr", "inner_steps", "adaptation_steps",
                                      "batch_size", "epochs", "support_fraction",
                                      "outer_optimizer", "second_order", "lr_schedule"},
                               "run config meta");
            if (meta.contains("inner_lr")) rc.meta.inner_lr = meta.at("inner_lr").get<double>();
            if (meta.contains("outer_lr")) rc.meta.outer_lr = meta.at("outer_lr").get<double>();
            if (meta.contains("inner_steps"))
                rc.meta.inner_steps = meta.at("inner_steps").get<int>();
            if (meta.contains("adaptation_steps"))
                rc.meta.adaptation_steps = meta.at("adaptation_steps").get<int>();
            if (meta.contains("batch_size")) rc.meta.batch_size = meta.at("batch_size").get<int>();
            if (meta.contains("epochs")) rc.meta.epochs = meta.at("epochs").get<int>();
            if (meta.contains("support_fraction"))
                rc.meta.support_fraction = meta.at("support_fraction").get<double>();
            if (meta.contains("outer_optimizer"))
                rc.meta.outer_optimizer =
                    outer_optimizer_from_string(meta.at("outer_optimizer").get<std::string>());
            if (meta.contains("second_order"))
                rc.meta.second_order = meta.at("second_order").get<bool>();
            if (meta.contains("lr_schedule"))
                rc.meta.lr_schedule =
                    lr_schedule_from_string(meta.at("lr_schedule").get<std::string>());
        }
        if (doc.contains("tasks"))
            for (const auto& t : doc.at("tasks"))
                rc.task_paths.emplace_back(t.get<std::string>());
        if (doc.contains("bounds")) {
            if (doc.at("bounds").is_null())
                rc.preprocess.bounds = std::nullopt;
            else
                rc.preprocess.bounds =
                    NormalizationBounds{doc.at("bounds").get<std::vector<double>>()};
        }
        if (doc.contains("transform"))
            rc.preprocess.transform =
                target_transform_from_string(doc.at("transform").get<std::string>());
        if (doc.contains("feedstock"))
            rc.feedstock = feedstock_from_string(doc.at("feedstock").get<std::string>());
    } catch (const json::exception& e) {
        throw ConfigError("run config: bad value in '" + path.string() + "': " + e.what());
    } catch (const Error& e) {
        throw ConfigError("run config: " + std::string(e.what()));
    }
    rc.meta.seed = rc.seed;

    if (rc.task_paths.empty()) throw ConfigError("run config: 'tasks' is empty");
    for (const auto& t : rc.task_paths)
        if (!std::filesystem::exists(t))
            throw ConfigError("run config: task file '" + t.string() + "' does not exist");
    return rc;
}

int run(std::vector<std::string> args) {
    CLI::App app{"metareg: gradient-based meta-learning for few-shot regression"};
    app.require_subcommand(1);

    BenchOpts bench;
    bool bench_seed_given = false;
    CLI::App* bench_cmd =
        app.add_subcommand("bench-sinusoid", "sinusoid few-shot regression benchmark");
    bench_cmd->add_option("--algo", bench.algo, "meta-learning algorithm")
        ->check(CLI::IsMember({"maml", "reptile"}));
    bench_cmd->add_option("--seed", bench.seed, "random seed")
        ->each([&](const std::string&) { bench_seed_given = true; });
    bench_cmd->add_option("--out", bench.out, "output directory");
    bench_cmd->add_option("--iterations", bench.iterations, "meta-iteration budget")
        ->check(CLI::PositiveNumber);
    bench_cmd->add_option("--pool-tasks", bench.pool_tasks, "meta-training task pool size")
        ->check(CLI::PositiveNumber);
    bench_cmd->add_option("--batch", bench.batch, "tasks per meta-batch (0 = algorithm default)");
    bench_cmd->add_option("--train-points", bench.train_points, "points per training task")
        ->check(CLI::PositiveNumber);
    bench_cmd->add_option("--test-tasks", bench.test_tasks, "held-out test tasks")
        ->check(CLI::PositiveNumber);
    bench_cmd->add_option("--support-points", bench.support_points, "support points per test task")
        ->check(CLI::PositiveNumber);
    bench_cmd->add_option("--query-points", bench.query_points, "query points per test task")
        ->check(CLI::PositiveNumber);
    bench_cmd->add_option("--adapt-lr", bench.adapt_lr, "adaptation learning rate");
    bench_cmd->add_option("--adapt-steps", bench.adapt_steps, "adaptation steps at meta-test")
        ->check(CLI::PositiveNumber);
    bench_cmd->add_option("--inner-lr", bench.inner_lr, "inner-loop learning rate");
    bench_cmd->add_option("--inner-steps", bench.inner_steps,
                          "inner-loop steps (0 = algorithm default)");
    bench_cmd->add_option("--outer-lr", bench.outer_lr,
                          "outer-loop learning rate (0 = algorithm default)");

    SynthOpts synth;
    bool synth_seed_given = false;
    CLI::App* synth_cmd =
        app.add_subcommand("synth-tasks", "synthesize task CSVs from a GPR fit to a seed CSV");
    synth_cmd->add_option("--seed-csv", synth.seed_csv, "seed dataset CSV")
        ->required()
        ->check(CLI::ExistingFile);
    synth_cmd->add_option("--n-train", synth.n_train, "training tasks to emit")
        ->check(CLI::PositiveNumber);
    synth_cmd->add_option("--n-test", synth.n_test, "test tasks to emit")
        ->check(CLI::PositiveNumber);
    synth_cmd->add_option("--points", synth.points, "points per synthesized task")
        ->check(CLI::PositiveNumber);
    synth_cmd->add_option("--out", synth.out, "output directory");
    synth_cmd->add_option("--seed", synth.seed, "random seed")
        ->each([&](const std::string&) { synth_seed_given = true; });
    synth_cmd->add_option("--additive-std", synth.additive_std, "additive noise std");
    synth_cmd->add_option("--multiplicative-std", synth.multiplicative_std,
                          "multiplicative noise std");
    synth_cmd->add_option("--lengthscale", synth.lengthscale,
                          "RBF lengthscale in normalized feature space");
    synth_cmd->add_option("--signal-var", synth.signal_var, "RBF signal variance");
    synth_cmd->add_option("--noise-var", synth.noise_var, "observation noise variance");
    synth_cmd->add_flag("--grid-search", synth.grid_search,
                        "refine lengthscales on a log grid by marginal likelihood");
    synth_cmd->add_option("--feedstock", synth.feedstock, "feedstock tag for the seed task")
        ->check(CLI::IsMember({"powder", "wire", "wire_powder", "synthetic"}));

    TrainOpts train;
    bool train_seed_given = false;
    CLI::App* train_cmd = app.add_subcommand("meta-train", "meta-train on task CSVs");
    auto* cfg_opt = train_cmd->add_option("--config", train.config_path,
                                          "JSON run configuration (overrides other flags)")
                        ->check(CLI::ExistingFile);
    auto* tasks_opt =
        train_cmd->add_option("--tasks", train.tasks, "task CSV files")->check(CLI::ExistingFile);
    cfg_opt->excludes(tasks_opt);
    train_cmd->add_option("--algo", train.algo, "meta-learning algorithm")
        ->check(CLI::IsMember({"maml", "reptile"}));
    train_cmd->add_option("--out", train.out, "output directory");
    train_cmd->add_option("--seed", train.seed, "random seed")
        ->each([&](const std::string&) { train_seed_given = true; });
    train_cmd->add_option("--inner-lr", train.inner_lr, "inner-loop learning rate");
    train_cmd->add_option("--outer-lr", train.outer_lr, "outer-loop learning rate");
    train_cmd->add_option("--inner-steps", train.inner_steps, "inner-loop gradient steps")
        ->check(CLI::PositiveNumber);
    train_cmd->add_option("--adaptation-steps", train.adaptation_steps,
                          "default adaptation steps at meta-test")
        ->check(CLI::PositiveNumber);
    train_cmd->add_option("--batch-size", train.batch_size, "tasks per meta-batch")
        ->check(CLI::PositiveNumber);
    train_cmd->add_option("--epochs", train.epochs, "training epochs")
        ->check(CLI::PositiveNumber);
    train_cmd->add_option("--support-fraction", train.support_fraction,
                          "support fraction per task");
    train_cmd->add_option("--outer-optimizer", train.outer_optimizer, "outer optimizer")
        ->check(CLI::IsMember({"sgd", "adam"}));
    train_cmd->add_flag("--first-order", train.first_order,
                        "first-order MAML (skip second-order terms)");
    train_cmd->add_option("--lr-schedule", train.lr_schedule, "outer lr schedule")
        ->check(CLI::IsMember({"constant", "cosine"}));
    train_cmd->add_option("--hidden", train.hidden, "hidden layer widths")->delimiter(',');
    train_cmd->add_option("--activation", train.activation, "hidden activation")
        ->check(CLI::IsMember({"tanh", "relu"}));
    train_cmd->add_option("--transform", train.transform, "target transform")
        ->check(CLI::IsMember({"log1p", "none"}));
    train_cmd->add_flag("--no-bounds", train.no_bounds, "skip feature normalization");
    train_cmd->add_option("--bounds", train.bounds, "per-feature maxima")->delimiter(',');
    train_cmd->add_option("--feedstock", train.feedstock, "feedstock tag for loaded tasks")
        ->check(CLI::IsMember({"powder", "wire", "wire_powder", "synthetic"}));

    EvalOpts eval_opts;
    bool eval_seed_given = false;
    CLI::App* eval_cmd =
        app.add_subcommand("eval", "adapt a checkpoint to a target task and report metrics");
    eval_cmd->add_option("--checkpoint", eval_opts.checkpoint, "checkpoint JSON")
        ->required()
        ->check(CLI::ExistingFile);
    eval_cmd->add_option("--target", eval_opts.target, "target task CSV")
        ->required()
        ->check(CLI::ExistingFile);
    eval_cmd->add_option("--out", eval_opts.out, "output directory");
    eval_cmd->add_option("--seed", eval_opts.seed, "random seed")
        ->each([&](const std::string&) { eval_seed_given = true; });
    eval_cmd->add_option("--fraction", eval_opts.fraction, "support fraction");
    eval_cmd->add_option("--resamples", eval_opts.resamples, "support resamples")
        ->check(CLI::PositiveNumber);
    eval_cmd->add_option("--steps", eval_opts.steps,
                         "adaptation steps (0 = checkpoint default)");
    eval_cmd->add_option("--lr", eval_opts.lr, "adaptation lr (0 = checkpoint inner_lr)");
    eval_cmd->add_option("--feedstock", eval_opts.feedstock, "feedstock tag for the target")
        ->check(CLI::IsMember({"powder", "wire", "wire_powder", "synthetic"}));

    BaselineOpts baseline;
    bool baseline_seed_given = false;
    CLI::App* baseline_cmd =
        app.add_subcommand("baseline", "vanilla feedforward baselines on a target task");
    baseline_cmd->add_option("--target", baseline.target, "target task CSV")
        ->required()
        ->check(CLI::ExistingFile);
    baseline_cmd->add_option("--tasks", baseline.tasks, "source task CSVs (pooled mode)")
        ->check(CLI::ExistingFile);
    baseline_cmd->add_option("--mode", baseline.mode, "which configurations to run")
        ->check(CLI::IsMember({"both", "pooled", "target-only"}));
    baseline_cmd->add_option("--out", baseline.out, "output directory");
    baseline_cmd->add_option("--seed", baseline.seed, "random seed")
        ->each([&](const std::string&) { baseline_seed_given = true; });
    baseline_cmd->add_option("--epochs", baseline.epochs, "training epochs")
        ->check(CLI::PositiveNumber);
    baseline_cmd->add_option("--lr", baseline.lr, "Adam learning rate");
    baseline_cmd->add_option("--fraction", baseline.fraction, "target support fraction");
    baseline_cmd->add_option("--resamples", baseline.resamples, "support resamples")
        ->check(CLI::PositiveNumber);
    baseline_cmd->add_option("--hidden", baseline.hidden, "hidden layer widths")->delimiter(',');
    baseline_cmd->add_option("--activation", baseline.activation, "hidden activation")
        ->check(CLI::IsMember({"tanh", "relu"}));
    baseline_cmd->add_option("--transform", baseline.transform, "target transform")
        ->check(CLI::IsMember({"log1p", "none"}));
    baseline_cmd->add_flag("--no-bounds", baseline.no_bounds, "skip feature normalization");
    baseline_cmd->add_option("--feedstock", baseline.feedstock, "feedstock tag")
        ->check(CLI::IsMember({"powder", "wire", "wire_powder", "synthetic"}));

    HpoOpts hpo;
    bool hpo_seed_given = false;
    CLI::App* hpo_cmd =
        app.add_subcommand("hpo", "random-search hyperparameters with task-level CV");
    hpo_cmd->add_option("--tasks", hpo.tasks, "task CSV files")
        ->required()
        ->check(CLI::ExistingFile);
    hpo_cmd->add_option("--algo", hpo.algo, "meta-learning algorithm")
        ->check(CLI::IsMember({"maml", "reptile"}));
    hpo_cmd->add_option("--trials", hpo.trials, "number of random-search trials")
        ->check(CLI::PositiveNumber);
    hpo_cmd->add_option("--seed", hpo.seed, "random seed")
        ->each([&](const std::string&) { hpo_seed_given = true; });
    hpo_cmd->add_option("--out", hpo.out, "output directory");
    hpo_cmd->add_option("--epochs", hpo.epochs, "epochs per trial fold")
        ->check(CLI::PositiveNumber);
    hpo_cmd->add_option("--adaptation-steps", hpo.adaptation_steps,
                        "adaptation steps for the validation objective")
        ->check(CLI::PositiveNumber);
    hpo_cmd->add_option("--support-fraction", hpo.support_fraction, "support fraction");
    hpo_cmd->add_option("--folds", hpo.folds, "cross-validation folds")
        ->check(CLI::PositiveNumber);
    hpo_cmd->add_option("--n-val", hpo.n_val, "validation tasks held out per fold")
        ->check(CLI::PositiveNumber);
    hpo_cmd->add_option("--inner-lr-range", hpo.inner_lr_range,
                        "log-uniform range for inner_lr (lo hi)")
        ->expected(2);
    hpo_cmd->add_option("--outer-lr-range", hpo.outer_lr_range,
                        "log-uniform range for outer_lr (lo hi)")
        ->expected(2);
    hpo_cmd->add_option("--batch-choices", hpo.batch_choices, "batch size choices")
        ->delimiter(',');
    hpo_cmd->add_option("--inner-steps-choices", hpo.inner_step_choices,
                        "inner step choices")
        ->delimiter(',');
    hpo_cmd->add_option("--transform", hpo.transform, "target transform")
        ->check(CLI::IsMember({"log1p", "none"}));
    hpo_cmd->add_flag("--no-bounds", hpo.no_bounds, "skip feature normalization");
    hpo_cmd->add_option("--feedstock", hpo.feedstock, "feedstock tag")
        ->check(CLI::IsMember({"powder", "wire", "wire_powder", "synthetic"}));

    const std::vector<std::string> original_args = args;
    try {
        std::reverse(args.begin(), args.end());
        app.parse(args);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*bench_cmd) {
            bench.seed = resolve_seed(bench_seed_given, bench.seed);
            return run_bench_sinusoid(bench, original_args);
        }
        if (*synth_cmd) {
            synth.seed = resolve_seed(synth_seed_given, synth.seed);
            return run_synth_tasks(synth, original_args);
        }
        if (*train_cmd) {
            train.seed = resolve_seed(train_seed_given, train.seed);
            RunConfig rc;
            if (!train.config_path.empty()) {
                rc = parse_run_config(train.config_path);
                if (train_seed_given) {
                    rc.seed = train.seed;
                    rc.meta.seed = train.seed;
                }
            } else {
                rc = run_config_from_flags(train);
            }
            return run_meta_train(rc, original_args);
        }
        if (*eval_cmd) {
            eval_opts.seed = resolve_seed(eval_seed_given, eval_opts.seed);
            return run_eval(eval_opts, original_args);
        }
        if (*baseline_cmd) {
            baseline.seed = resolve_seed(baseline_seed_given, baseline.seed);
            return run_baseline(baseline, original_args);
        }
        if (*hpo_cmd) {
            hpo.seed = resolve_seed(hpo_seed_given, hpo.seed);
            return run_hpo(hpo, original_args);
        }
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace metareg::cli
