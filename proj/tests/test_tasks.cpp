#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>

#include "metareg/error.hpp"
#include "metareg/rng.hpp"
#include "metareg/tasks.hpp"

using namespace metareg;
namespace fs = std::filesystem;

namespace {

fs::path write_temp_csv(const std::string& name, const std::string& body) {
    const fs::path dir = fs::temp_directory_path() / "metareg_task_tests";
    fs::create_directories(dir);
    const fs::path path = dir / name;
    std::ofstream out(path, std::ios::binary);
    out << body;
    return path;
}

}  // namespace

TEST_CASE("normalize_features maps the global maxima to ones") {
    const NormalizationBounds bounds = default_bounds();
    const std::vector<double> raw{3000.0, 2000.0, 25.0, 10.0};
    const auto normalized = normalize_features(raw, bounds);
    for (double v : normalized) CHECK(v == 1.0);

    const std::vector<double> zeros{0.0, 0.0, 0.0, 0.0};
    for (double v : normalize_features(zeros, bounds)) CHECK(v == 0.0);

    const std::vector<double> half{1500.0, 1000.0, 12.5, 5.0};
    for (double v : normalize_features(half, bounds)) CHECK(v == 0.5);
}

TEST_CASE("normalize_features rejects out-of-range values") {
    const NormalizationBounds bounds = default_bounds();
    CHECK_THROWS_AS(normalize_features(std::vector<double>{3000.1, 0, 0, 0}, bounds), Error);
    CHECK_THROWS_AS(normalize_features(std::vector<double>{-1, 0, 0, 0}, bounds), Error);
    CHECK_THROWS_AS(normalize_features(std::vector<double>{1, 2, 3}, bounds), Error);
}

TEST_CASE("normalize then scale back is the identity") {
    const NormalizationBounds bounds = default_bounds();
    Rng rng(17);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> raw(4);
        for (std::size_t i = 0; i < 4; ++i)
            raw[i] = rng.uniform(0.0, bounds.max_values[i]);
        const auto normalized = normalize_features(raw, bounds);
        for (std::size_t i = 0; i < 4; ++i)
            CHECK(std::abs(normalized[i] * bounds.max_values[i] - raw[i]) <= 1e-12);
    }
}

TEST_CASE("target transform is log1p with exact inverse") {
    CHECK(transform_target(0.0) == 0.0);
    CHECK(transform_target(std::exp(1.0) - 1.0) == doctest::Approx(1.0).epsilon(1e-15));
    for (double h : {0.1, 0.5, 2.2})
        CHECK(std::abs(inverse_transform_target(transform_target(h)) - h) <= 1e-12);
    CHECK_THROWS_AS(transform_target(-1.0), Error);
    CHECK_THROWS_AS(transform_target(-1.5), Error);
}

TEST_CASE("support size uses round-to-nearest with ties up") {
    CHECK(support_size(25, 0.2) == 5);
    CHECK(support_size(13, 0.2) == 3);
    CHECK(support_size(36, 0.2) == 7);
    CHECK(support_size(10, 0.25) == 3);  // 2.5 rounds up
    CHECK(support_size(22, 0.5) == 11);
    CHECK(support_size(5, 0.5) == 3);  // 2.5 rounds up
}

TEST_CASE("split_support_query partitions the index set") {
    for (std::size_t n : {2ul, 5ul, 13ul, 25ul, 36ul, 100ul}) {
        for (double fraction : {0.2, 0.35, 0.5, 0.8}) {
            const std::size_t s = support_size(n, fraction);
            if (s == 0 || s >= n) continue;
            const SupportQuerySplit split = split_support_query(n, fraction, 99);
            CHECK(split.support_indices.size() == s);
            CHECK(split.query_indices.size() == n - s);
            std::set<std::size_t> all(split.support_indices.begin(),
                                      split.support_indices.end());
            all.insert(split.query_indices.begin(), split.query_indices.end());
            CHECK(all.size() == n);
            CHECK(*all.rbegin() == n - 1);
        }
    }
}

TEST_CASE("split_support_query error cases") {
    CHECK_THROWS_AS(split_support_query(1, 0.5, 0), Error);
    CHECK_THROWS_AS(split_support_query(2, 0.2, 0), Error);  // support would be empty
    CHECK_THROWS_AS(split_support_query(2, 0.8, 0), Error);  // query would be empty
    CHECK_THROWS_AS(split_support_query(10, 0.0, 0), Error);
    CHECK_THROWS_AS(split_support_query(10, 1.0, 0), Error);
}

TEST_CASE("resampled splits are reproducible and generally distinct") {
    const std::uint64_t base_seed = 4242;
    std::vector<SupportQuerySplit> first, second;
    for (std::uint64_t i = 0; i < 5; ++i) {
        first.push_back(split_support_query(25, 0.2, derive_seed(base_seed, i)));
        second.push_back(split_support_query(25, 0.2, derive_seed(base_seed, i)));
    }
    std::set<std::vector<std::size_t>> distinct;
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(first[i].support_indices == second[i].support_indices);
        CHECK(first[i].query_indices == second[i].query_indices);
        distinct.insert(first[i].support_indices);
    }
    CHECK(distinct.size() >= 4);  // 5 draws of C(25,5) almost surely differ
}

TEST_CASE("sinusoid tasks stay inside the sampled ranges") {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const TaskDataset task = sample_sinusoid_task(seed, 20);
        CHECK(task.size() == 20);
        CHECK(task.feedstock == Feedstock::synthetic);
        double max_abs = 0.0;
        for (std::size_t i = 0; i < task.size(); ++i) {
            CHECK(task.features(i, 0) >= -5.0);
            CHECK(task.features(i, 0) <= 5.0);
            max_abs = std::max(max_abs, std::abs(task.targets[i]));
        }
        CHECK(max_abs <= 5.0);  // |A sin| <= A <= 5
    }
    const TaskDataset a = sample_sinusoid_task(7, 10);
    const TaskDataset b = sample_sinusoid_task(7, 10);
    CHECK(a.features == b.features);
    CHECK(a.targets == b.targets);
}

TEST_CASE("sinusoid with forced parameters") {
    const TaskDataset task =
        sinusoid_task_from_params(1.0, 0.0, {std::numbers::pi / 2.0}, "forced");
    CHECK(task.targets[0] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("cv folds hold out exactly n_val tasks") {
    std::vector<std::string> ids;
    for (int i = 0; i < 13; ++i) ids.push_back("task_" + std::to_string(i));
    const auto folds = assign_cv_folds(ids, 5, 2, 99);
    REQUIRE(folds.size() == 5);
    for (const CvFold& fold : folds) {
        CHECK(fold.val_ids.size() == 2);
        CHECK(fold.train_ids.size() == 11);
        std::set<std::string> all(fold.train_ids.begin(), fold.train_ids.end());
        for (const std::string& v : fold.val_ids) {
            CHECK(all.count(v) == 0);
            all.insert(v);
        }
        CHECK(all.size() == ids.size());
    }
    const auto again = assign_cv_folds(ids, 5, 2, 99);
    for (std::size_t f = 0; f < 5; ++f) CHECK(folds[f].val_ids == again[f].val_ids);

    CHECK_THROWS_AS(assign_cv_folds({"a", "b"}, 5, 2, 0), Error);
}

TEST_CASE("load_task_csv reads a well-formed file") {
    const fs::path path = write_temp_csv("good.csv",
                                         "power_w,speed_mm_min,powder_g_min,wire_g_min,height_mm\n"
                                         "1000,500,10,0,0.8\n"
                                         "1500,800,12,0,1.1\n"
                                         "2000,900,15,0,1.4\n");
    const TaskDataset task = load_task_csv(path, default_bounds(), "t1", Feedstock::powder);
    CHECK(task.size() == 3);
    CHECK(task.task_id == "t1");
    CHECK(task.features(1, 0) == 1500.0);
    CHECK(task.targets[2] == 1.4);
}

TEST_CASE("absent feed columns are filled with zero") {
    const fs::path path = write_temp_csv("no_wire.csv",
                                         "power_w,speed_mm_min,powder_g_min,height_mm\n"
                                         "1000,500,10,0.8\n"
                                         "1500,800,12,1.1\n");
    const TaskDataset task = load_task_csv(path, default_bounds(), "t", Feedstock::powder);
    for (std::size_t i = 0; i < task.size(); ++i) CHECK(task.features(i, 3) == 0.0);
}

TEST_CASE("load_task_csv validation errors carry context") {
    const NormalizationBounds bounds = default_bounds();

    const fs::path missing = write_temp_csv("missing.csv", "power_w,height_mm\n1000,0.8\n");
    CHECK_THROWS_WITH_AS(load_task_csv(missing, bounds, "t", Feedstock::powder),
                         doctest::Contains("speed_mm_min"), Error);

    const fs::path negative = write_temp_csv("negative.csv",
                                             "power_w,speed_mm_min,height_mm\n"
                                             "1000,500,0.8\n"
                                             "1500,800,-1\n");
    CHECK_THROWS_WITH_AS(load_task_csv(negative, bounds, "t", Feedstock::powder),
                         doctest::Contains("row 2"), Error);

    const fs::path nonnum = write_temp_csv("nonnum.csv",
                                           "power_w,speed_mm_min,height_mm\n1000,abc,0.8\n");
    CHECK_THROWS_WITH_AS(load_task_csv(nonnum, bounds, "t", Feedstock::powder),
                         doctest::Contains("row 1"), Error);

    const fs::path above = write_temp_csv("above.csv",
                                          "power_w,speed_mm_min,height_mm\n9000,500,0.8\n");
    CHECK_THROWS_AS(load_task_csv(above, bounds, "t", Feedstock::powder), Error);

    const fs::path unknown = write_temp_csv("unknown.csv",
                                            "power_w,speed_mm_min,height_mm,extra\n"
                                            "1000,500,0.8,1\n");
    CHECK_THROWS_WITH_AS(load_task_csv(unknown, bounds, "t", Feedstock::powder),
                         doctest::Contains("extra"), Error);

    const fs::path empty = write_temp_csv("empty.csv", "power_w,speed_mm_min,height_mm\n");
    CHECK_THROWS_AS(load_task_csv(empty, bounds, "t", Feedstock::powder), Error);
}

TEST_CASE("save then load round trips a task") {
    TaskDataset task;
    task.task_id = "rt";
    task.feedstock = Feedstock::synthetic;
    task.features = Matrix(2, 4);
    task.features.data = {1000.0, 500.5, 10.25, 0.0, 1500.0, 800.0, 0.0, 3.5};
    task.targets = {0.8123456789012345, 1.1};
    const fs::path path = fs::temp_directory_path() / "metareg_task_tests" / "roundtrip.csv";
    fs::create_directories(path.parent_path());
    save_task_csv(task, path);
    const TaskDataset loaded = load_task_csv(path, default_bounds(), "rt", Feedstock::synthetic);
    CHECK(loaded.features == task.features);
    CHECK(loaded.targets == task.targets);
}

TEST_CASE("prepare_task applies bounds and transform") {
    TaskDataset task;
    task.task_id = "p";
    task.feedstock = Feedstock::powder;
    task.features = Matrix(1, 4);
    task.features.data = {1500.0, 1000.0, 12.5, 5.0};
    task.targets = {1.0};

    const PreparedTask with = prepare_task(task, {default_bounds(), TargetTransform::log1p});
    for (std::size_t j = 0; j < 4; ++j) CHECK(with.x(0, j) == 0.5);
    CHECK(with.y(0, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));

    const PreparedTask without = prepare_task(task, {std::nullopt, TargetTransform::none});
    CHECK(without.x == task.features);
    CHECK(without.y(0, 0) == 1.0);
}
