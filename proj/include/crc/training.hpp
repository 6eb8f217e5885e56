#pragma once

// Full-batch gradient-descent trainers (supervised MSE, Pi-model, mean
// teacher) and the instrumentation that checks the one-step loss recursion
//   L_{t+1} <= (1 - 2 eta lambda_min(K_t)) L_t + xi_t + eps_t
// under the L = 1/2 ||f - y||^2 convention.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <variant>
#include <vector>

#include "crc/nn.hpp"
#include "crc/pool.hpp"

namespace crc {

enum class SslMode { none, pi_model, mean_teacher };

struct TrainConfig {
    double step_size = 0.1;
    std::size_t max_steps = 1000;
    /// Stop after this many traced evaluations without a new best accuracy.
    std::optional<std::size_t> early_stop_patience;
    SslMode ssl_mode = SslMode::none;
    double consistency_weight = 0.0;
    double perturbation_sigma = 0.0;
    double ema_decay = 0.99;
    std::size_t trace_every = 1;
    std::size_t quadrature_points = 9;
    /// Record lambda_min, xi, eps and residuals (supervised mode only).
    bool instrument = false;
    std::uint64_t noise_seed = 0;

    void validate() const;
};

struct TraceRow {
    std::size_t step = 0;
    double loss = 0.0;
    std::optional<double> lambda_min;
    std::optional<double> xi;
    std::optional<double> eps;
    std::optional<double> residual;
    double train_acc = 0.0;
    std::optional<double> test_acc;
    double grad_sq = 0.0;
    std::optional<double> test_loss;
    /// (y - f_t)^T (f_{t+1} - f_t)
    std::optional<double> e_dot_df;
    std::optional<double> identity_residual;
};

struct TrainingTrace {
    double step_size = 0.0;
    std::size_t trace_every = 1;
    std::vector<TraceRow> rows;
};

struct TrainResult {
    ParamVector params;
    TrainingTrace trace;
};

struct MeanTeacherResult {
    ParamVector student;
    ParamVector teacher;
    TrainingTrace trace;
};

[[nodiscard]] ParamVector gd_step(const ParamVector& params, const NetworkSpec& spec, const Matrix& X,
                                  const Matrix& Y, double step_size);

/// `test` feeds test accuracy/loss columns and early stopping; without it
/// early stopping watches training accuracy.
[[nodiscard]] TrainResult train_supervised(ParamVector params, const NetworkSpec& spec, const Pool& pool,
                                           const TrainConfig& cfg, const Dataset* test = nullptr);
/// Adds w * mean_x ||f(x + d) - f(x + d')||^2 over every pool sample, with
/// fresh Gaussian input noise each step; gradients flow through both branches.
[[nodiscard]] TrainResult train_pi_model(ParamVector params, const NetworkSpec& spec, const Pool& pool,
                                         const TrainConfig& cfg, const Dataset* test = nullptr);
/// Consistency against an EMA teacher; test metrics are the teacher's.
[[nodiscard]] MeanTeacherResult train_mean_teacher(ParamVector params, const NetworkSpec& spec, const Pool& pool,
                                                   const TrainConfig& cfg, const Dataset* test = nullptr);
/// Dispatches on cfg.ssl_mode; returns the evaluation model (teacher for MT).
[[nodiscard]] TrainResult train(ParamVector params, const NetworkSpec& spec, const Pool& pool,
                                const TrainConfig& cfg, const Dataset* test = nullptr);

/// xi_t = int_0^eta g^T (g - grad L(theta - gamma g)) dgamma, g = grad L(theta),
/// by composite Simpson over `quadrature_points` nodes.
[[nodiscard]] double compute_xi(const ParamVector& params, const NetworkSpec& spec, const Matrix& X,
                                const Matrix& Y, double step_size, std::size_t quadrature_points);

struct RecursionReport {
    /// L_{t+1} - [(1 - 2 eta lambda_min) L_t + xi_t + eps_t]
    std::vector<double> residuals;
    /// L_{t+1} - [L_t - e_t^T df_t + eps_t]
    std::vector<double> identity_residuals;
    std::vector<double> losses;
    double max_relative_residual = 0.0;
    double max_relative_identity = 0.0;
};

/// Needs an instrumented trace with step-level cadence.
[[nodiscard]] RecursionReport verify_recursion(const TrainingTrace& trace);

struct GlobalMinTestLoss {};
/// First step whose training loss is at or below `value`.
struct LossThreshold {
    double value = 0.0;
};
using ConvergenceCriterion = std::variant<GlobalMinTestLoss, LossThreshold>;

/// Step of the first traced row meeting the criterion. A threshold never
/// reached yields the last traced step.
[[nodiscard]] std::size_t epochs_to_convergence(const TrainingTrace& trace,
                                                const ConvergenceCriterion& criterion = GlobalMinTestLoss{});

[[nodiscard]] double accuracy(const Matrix& outputs, const std::vector<int>& labels);

/// Columns: step, loss, lambda_min, xi, eps, residual, train_acc, test_acc,
/// grad_sq, test_loss, e_dot_df, identity_residual. Absent values are empty.
void write_trace_csv(std::ostream& out, const TrainingTrace& trace);

}  // namespace crc
