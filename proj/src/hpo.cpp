#include "metareg/hpo.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>

#include "metareg/autodiff.hpp"
#include "metareg/detail/textio.hpp"
#include "metareg/error.hpp"
#include "metareg/eval.hpp"
#include "metareg/rng.hpp"

namespace metareg {

namespace {

using detail::fmt17;

constexpr std::uint64_t kTrialStream = 0x7472696c;  // tril
constexpr std::uint64_t kFoldStream = 0x68666f6c;   // hfol
constexpr std::uint64_t kValStream = 0x6876616c;    // hval

double log_uniform(Rng& rng, const LogUniformRange& range) {
    return std::exp(rng.uniform(std::log(range.lo), std::log(range.hi)));
}

// Post-adaptation query MSE of one validation task (model space), seeded split.
double validation_loss(const MetaCheckpoint& checkpoint, const TaskDataset& task,
                       std::uint64_t seed) {
    const SupportQuerySplit split =
        split_support_query(task.size(), checkpoint.config.support_fraction, seed);
    const Preprocess preprocess{checkpoint.bounds, checkpoint.transform};
    const PreparedTask prepared = prepare_task(task, preprocess);
    const ResolvedTask resolved = resolve_task(prepared, split);
    const ParameterVector adapted =
        inner_adapt(checkpoint.net, checkpoint.theta_o, resolved.support_x, resolved.support_y,
                    checkpoint.config.inner_lr, checkpoint.config.adaptation_steps);
    return mse_loss(forward(checkpoint.net, adapted, resolved.query_x), resolved.query_y);
}

}  // namespace

void validate(const SearchSpace& space) {
    for (const LogUniformRange& r : {space.inner_lr, space.outer_lr}) {
        if (!(r.lo > 0.0) || !(r.hi >= r.lo))
            throw Error("SearchSpace: log-uniform ranges need 0 < lo <= hi");
    }
    if (space.batch_size.empty() || space.inner_steps.empty())
        throw Error("SearchSpace: choice sets must be nonempty");
    for (int b : space.batch_size)
        if (b < 1) throw Error("SearchSpace: batch_size choices must be positive");
    for (int k : space.inner_steps)
        if (k < 1) throw Error("SearchSpace: inner_steps choices must be positive");
}

SearchResult random_search(const SearchSpace& space, const std::vector<TaskDataset>& tasks,
                           const NetworkSpec& net, Algo algo, int n_trials, std::uint64_t seed,
                           const MetaConfig& base_config, const Preprocess& preprocess,
                           std::size_t n_folds, std::size_t n_val, Exec exec) {
    validate(space);
    if (n_trials < 1) throw Error("random_search: n_trials must be positive");
    if (tasks.size() <= n_val)
        throw Error("random_search: need more tasks than validation holdout size");

    std::vector<std::string> task_ids;
    std::map<std::string, const TaskDataset*> by_id;
    for (const TaskDataset& t : tasks) {
        task_ids.push_back(t.task_id);
        if (!by_id.emplace(t.task_id, &t).second)
            throw Error("random_search: duplicate task_id '" + t.task_id + "'");
    }
    // one fold assignment for the whole search keeps trial objectives comparable
    const std::vector<CvFold> folds =
        assign_cv_folds(task_ids, n_folds, n_val, derive_seed(seed, kFoldStream));
    const std::size_t min_train_tasks = tasks.size() - n_val;

    SearchResult result;
    double best_objective = std::numeric_limits<double>::infinity();
    for (int trial = 0; trial < n_trials; ++trial) {
        Rng rng(derive_seed(seed, kTrialStream, static_cast<std::uint64_t>(trial)));
        MetaConfig config = base_config;
        config.inner_lr = log_uniform(rng, space.inner_lr);
        config.outer_lr = log_uniform(rng, space.outer_lr);
        config.batch_size = space.batch_size[rng.below(space.batch_size.size())];
        config.inner_steps = space.inner_steps[rng.below(space.inner_steps.size())];
        // a sampled batch size above the fold's task count would be a wasted trial
        config.batch_size =
            std::min(config.batch_size, static_cast<int>(min_train_tasks));
        config.seed = derive_seed(seed, kTrialStream, static_cast<std::uint64_t>(trial), 1);

        double objective = 0.0;
        try {
            double fold_sum = 0.0;
            for (std::size_t f = 0; f < folds.size(); ++f) {
                std::vector<TaskDataset> train;
                for (const std::string& id : folds[f].train_ids) train.push_back(*by_id.at(id));
                const MetaCheckpoint checkpoint =
                    meta_train(train, net, config, algo, preprocess, exec);
                double val_sum = 0.0;
                for (std::size_t v = 0; v < folds[f].val_ids.size(); ++v) {
                    const TaskDataset& val_task = *by_id.at(folds[f].val_ids[v]);
                    val_sum += validation_loss(
                        checkpoint, val_task,
                        derive_seed(seed, kValStream,
                                    static_cast<std::uint64_t>(trial) * folds.size() + f, v));
                }
                fold_sum += val_sum / static_cast<double>(folds[f].val_ids.size());
            }
            objective = fold_sum / static_cast<double>(folds.size());
            if (!std::isfinite(objective)) objective = std::numeric_limits<double>::infinity();
        } catch (const Error&) {
            objective = std::numeric_limits<double>::infinity();
        }

        result.trials.push_back({trial, config, objective});
        if (objective < best_objective) {
            best_objective = objective;
            result.best = config;
            result.best_index = static_cast<std::size_t>(trial);
        }
    }
    if (!std::isfinite(best_objective))
        result.best = result.trials.front().config;  // every trial diverged; report the first
    return result;
}

void write_trial_log_csv(const SearchResult& result, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("write_trial_log_csv: cannot write '" + path.string() + "'");
    out << "trial_index,inner_lr,outer_lr,batch_size,inner_steps,objective\n";
    for (const TrialRecord& t : result.trials) {
        out << t.index << ',' << fmt17(t.config.inner_lr) << ',' << fmt17(t.config.outer_lr)
            << ',' << t.config.batch_size << ',' << t.config.inner_steps << ','
            << (std::isfinite(t.objective) ? fmt17(t.objective) : "inf") << '\n';
    }
}

}  // namespace metareg
