#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "metareg/matrix.hpp"
#include "metareg/tasks.hpp"

namespace metareg {

// Gaussian process regression with an anisotropic RBF kernel, used as the
// task synthesizer for the validation benchmarks.
struct GprModel {
    Matrix train_x;                    // m x d
    std::vector<double> train_y;       // m
    std::vector<double> lengthscales;  // d
    double signal_var = 1.0;
    double noise_var = 0.0;
    double jitter = 0.0;               // extra diagonal added for the Cholesky
    std::vector<double> chol;          // lower factor of K + (noise_var + jitter) I, row-major
    std::vector<double> alpha;         // (K + noise_var I)^-1 y
};

double rbf_kernel(std::span<const double> a, std::span<const double> b,
                  std::span<const double> lengthscales, double signal_var);

// Cholesky solve with jitter escalation from 1e-10 to 1e-6 if the factorization fails.
GprModel fit_gpr(const Matrix& X, std::vector<double> y, std::vector<double> lengthscales,
                 double signal_var, double noise_var);

std::vector<double> predict_mean(const GprModel& model, const Matrix& x_star);

double log_marginal_likelihood(const GprModel& model);

// Refits with each candidate scale applied to all lengthscales (log grid
// supplied by the caller) and keeps the model with the best marginal
// likelihood. No gradient-based optimization.
GprModel fit_gpr_lengthscale_grid(const Matrix& X, const std::vector<double>& y,
                                  const std::vector<double>& base_lengthscales,
                                  double signal_var, double noise_var,
                                  std::span<const double> scale_grid);

struct Box {
    std::vector<double> lo;
    std::vector<double> hi;
};

// x_j ~ U(box); y_j = m(x_j) * (1 + e_mult) + e_add with e_mult drawn once
// per task and e_add per point.
TaskDataset synthesize_task(const GprModel& model, std::size_t n, const Box& box,
                            double additive_std, double multiplicative_std,
                            std::uint64_t rng_seed, std::string task_id);

}  // namespace metareg
