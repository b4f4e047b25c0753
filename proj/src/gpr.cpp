#include "metareg/gpr.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "metareg/error.hpp"
#include "metareg/rng.hpp"

namespace metareg {

namespace {

// in-place lower Cholesky; returns false when a pivot is not positive
bool cholesky(std::vector<double>& a, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double sum = a[i * n + j];
            for (std::size_t k = 0; k < j; ++k) sum -= a[i * n + k] * a[j * n + k];
            if (i == j) {
                if (!(sum > 0.0)) return false;
                a[i * n + j] = std::sqrt(sum);
            } else {
                a[i * n + j] = sum / a[j * n + j];
            }
        }
        for (std::size_t j = i + 1; j < n; ++j) a[i * n + j] = 0.0;
    }
    return true;
}

std::vector<double> cholesky_solve(const std::vector<double>& chol, std::size_t n,
                                   const std::vector<double>& rhs) {
    std::vector<double> x = rhs;
    for (std::size_t i = 0; i < n; ++i) {  // L z = rhs
        double sum = x[i];
        for (std::size_t k = 0; k < i; ++k) sum -= chol[i * n + k] * x[k];
        x[i] = sum / chol[i * n + i];
    }
    for (std::size_t i = n; i-- > 0;) {  // L^T x = z
        double sum = x[i];
        for (std::size_t k = i + 1; k < n; ++k) sum -= chol[k * n + i] * x[k];
        x[i] = sum / chol[i * n + i];
    }
    return x;
}

}  // namespace

double rbf_kernel(std::span<const double> a, std::span<const double> b,
                  std::span<const double> lengthscales, double signal_var) {
    double q = 0.0;
    for (std::size_t d = 0; d < a.size(); ++d) {
        const double z = (a[d] - b[d]) / lengthscales[d];
        q += z * z;
    }
    return signal_var * std::exp(-0.5 * q);
}

GprModel fit_gpr(const Matrix& X, std::vector<double> y, std::vector<double> lengthscales,
                 double signal_var, double noise_var) {
    const std::size_t m = X.rows;
    if (m == 0) throw Error("fit_gpr: no training points");
    if (y.size() != m) throw Error("fit_gpr: X and y disagree on sample count");
    if (lengthscales.size() != X.cols)
        throw Error("fit_gpr: lengthscale count does not match feature dimension");
    for (double l : lengthscales)
        if (!(l > 0.0)) throw Error("fit_gpr: lengthscales must be positive");
    if (!(signal_var > 0.0)) throw Error("fit_gpr: signal variance must be positive");
    if (noise_var < 0.0) throw Error("fit_gpr: noise variance must be non-negative");

    GprModel model;
    model.train_x = X;
    model.train_y = std::move(y);
    model.lengthscales = std::move(lengthscales);
    model.signal_var = signal_var;
    model.noise_var = noise_var;

    std::vector<double> kernel(m * m);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j)
            kernel[i * m + j] =
                rbf_kernel(X.row(i), X.row(j), model.lengthscales, signal_var);

    double jitter = 0.0;
    for (;;) {
        model.chol = kernel;
        for (std::size_t i = 0; i < m; ++i) model.chol[i * m + i] += noise_var + jitter;
        if (cholesky(model.chol, m)) break;
        jitter = (jitter == 0.0) ? 1e-10 : jitter * 10.0;
        if (jitter > 1e-6)
            throw Error("fit_gpr: Cholesky failed even with jitter 1e-6; "
                        "kernel matrix is numerically singular");
    }
    model.jitter = jitter;
    model.alpha = cholesky_solve(model.chol, m, model.train_y);
    return model;
}

std::vector<double> predict_mean(const GprModel& model, const Matrix& x_star) {
    if (x_star.cols != model.train_x.cols)
        throw Error("predict_mean: query dimension " + std::to_string(x_star.cols) +
                    " does not match model dimension " + std::to_string(model.train_x.cols));
    const std::size_t m = model.train_x.rows;
    std::vector<double> mean(x_star.rows, 0.0);
    for (std::size_t s = 0; s < x_star.rows; ++s) {
        double acc = 0.0;
        for (std::size_t i = 0; i < m; ++i)
            acc += rbf_kernel(x_star.row(s), model.train_x.row(i), model.lengthscales,
                              model.signal_var) *
                   model.alpha[i];
        mean[s] = acc;
    }
    return mean;
}

double log_marginal_likelihood(const GprModel& model) {
    const std::size_t m = model.train_x.rows;
    double fit = 0.0;
    for (std::size_t i = 0; i < m; ++i) fit += model.train_y[i] * model.alpha[i];
    double logdet = 0.0;
    for (std::size_t i = 0; i < m; ++i) logdet += std::log(model.chol[i * m + i]);
    return -0.5 * fit - logdet -
           0.5 * static_cast<double>(m) * std::log(2.0 * std::numbers::pi);
}

GprModel fit_gpr_lengthscale_grid(const Matrix& X, const std::vector<double>& y,
                                  const std::vector<double>& base_lengthscales,
                                  double signal_var, double noise_var,
                                  std::span<const double> scale_grid) {
    if (scale_grid.empty()) throw Error("fit_gpr_lengthscale_grid: empty grid");
    GprModel best;
    double best_lml = -std::numeric_limits<double>::infinity();
    bool have_best = false;
    for (double scale : scale_grid) {
        std::vector<double> ls = base_lengthscales;
        for (double& l : ls) l *= scale;
        GprModel candidate = fit_gpr(X, y, std::move(ls), signal_var, noise_var);
        const double lml = log_marginal_likelihood(candidate);
        if (!have_best || lml > best_lml) {
            best = std::move(candidate);
            best_lml = lml;
            have_best = true;
        }
    }
    return best;
}

TaskDataset synthesize_task(const GprModel& model, std::size_t n, const Box& box,
                            double additive_std, double multiplicative_std,
                            std::uint64_t rng_seed, std::string task_id) {
    if (n == 0) throw Error("synthesize_task: n must be positive");
    const std::size_t d = model.train_x.cols;
    if (box.lo.size() != d || box.hi.size() != d)
        throw Error("synthesize_task: box dimension does not match model");
    for (std::size_t i = 0; i < d; ++i)
        if (box.lo[i] > box.hi[i]) throw Error("synthesize_task: box has lo > hi");

    Rng rng(rng_seed);
    const double mult = 1.0 + multiplicative_std * rng.normal();  // one draw per task

    TaskDataset task;
    task.task_id = std::move(task_id);
    task.feedstock = Feedstock::synthetic;
    task.features = Matrix(n, d);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t k = 0; k < d; ++k)
            task.features(j, k) = rng.uniform(box.lo[k], box.hi[k]);

    const std::vector<double> mean = predict_mean(model, task.features);
    task.targets.resize(n);
    for (std::size_t j = 0; j < n; ++j)
        task.targets[j] = mean[j] * mult + additive_std * rng.normal();
    return task;
}

}  // namespace metareg
