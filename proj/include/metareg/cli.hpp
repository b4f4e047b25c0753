#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "metareg/meta.hpp"
#include "metareg/tasks.hpp"

namespace metareg::cli {

// Full run description for meta-train, loadable from a JSON document.
// Unknown keys are rejected and every referenced task file must exist at
// parse time.
struct RunConfig {
    Algo algo = Algo::maml;
    std::uint64_t seed = 0;
    std::filesystem::path out = "out";
    NetworkSpec net{4, {64, 64, 64}, 1, Activation::tanh, true};
    MetaConfig meta;
    std::vector<std::filesystem::path> task_paths;
    Preprocess preprocess{default_bounds(), TargetTransform::log1p};
    Feedstock feedstock = Feedstock::powder;
};

RunConfig parse_run_config(const std::filesystem::path& path);

// Dispatches subcommands. Exit codes: 0 success, 2 usage or configuration
// error, 1 runtime failure.
int run(std::vector<std::string> args);

}  // namespace metareg::cli
