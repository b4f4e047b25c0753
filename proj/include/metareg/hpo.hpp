#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "metareg/meta.hpp"
#include "metareg/tasks.hpp"

namespace metareg {

struct LogUniformRange {
    double lo = 0.0;
    double hi = 0.0;
};

// Default ranges are centered on the tuned optimum (inner 0.1, outer 0.002).
struct SearchSpace {
    LogUniformRange inner_lr{0.01, 1.0};
    LogUniformRange outer_lr{2e-4, 2e-2};
    std::vector<int> batch_size{2, 4, 6, 8};
    std::vector<int> inner_steps{1, 3, 5};
};

void validate(const SearchSpace& space);

struct TrialRecord {
    int index = 0;
    MetaConfig config;
    double objective = 0.0;  // +inf for diverged trials
};

struct SearchResult {
    MetaConfig best;
    std::size_t best_index = 0;
    std::vector<TrialRecord> trials;
};

// Random search with task-level cross-validation: each trial samples a
// config, meta-trains on every fold's training tasks and scores the mean
// post-adaptation query MSE on the held-out validation tasks. Diverged
// trials score +inf instead of aborting the search.
SearchResult random_search(const SearchSpace& space, const std::vector<TaskDataset>& tasks,
                           const NetworkSpec& net, Algo algo, int n_trials, std::uint64_t seed,
                           const MetaConfig& base_config, const Preprocess& preprocess,
                           std::size_t n_folds = 5, std::size_t n_val = 2,
                           Exec exec = Exec::parallel);

void write_trial_log_csv(const SearchResult& result, const std::filesystem::path& path);

}  // namespace metareg
