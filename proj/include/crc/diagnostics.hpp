#pragma once

// Kernel-regime dynamics, eigenvalue studies and the property suite behind
// `crc verify`.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "crc/experiment.hpp"
#include "crc/ntk.hpp"

namespace crc {

/// Gradient flow df/dt = -K (f - y) under a fixed kernel.
struct KernelFlow {
    Matrix kernel;
    Vector targets;
    Vector initial;
    EigenDecomposition eigen;
};

/// Throws numeric if K is not PSD (to 1e-10 ||K||) or an eigenpair residual
/// exceeds 1e-10 ||K||.
[[nodiscard]] KernelFlow make_kernel_flow(const Matrix& kernel, const Vector& targets, const Vector& initial);

/// f(t) = y + sum_i v_i v_i^T (f0 - y) exp(-lambda_i t).
[[nodiscard]] Vector kernel_flow_solution(const KernelFlow& flow, double t);

/// Row-major flattening of an n x C output matrix, matching the blocked Gram.
[[nodiscard]] Vector flatten_outputs(const Matrix& outputs);

struct LinearizationGapRow {
    std::size_t width = 0;
    /// max_t ||f_net(t) - f_flow(t)||
    double gap = 0.0;
    /// Per-step gap, index = step.
    std::vector<double> trajectory;
};

/// Trains `base` with every hidden layer set to each width and compares the
/// outputs against the kernel flow of the initial full-scope NTK at t = eta * step.
[[nodiscard]] std::vector<LinearizationGapRow> linearization_gap(const NetworkSpec& base,
                                                                 const std::vector<std::size_t>& widths,
                                                                 const Matrix& X, const Matrix& Y, double step_size,
                                                                 std::size_t steps, std::uint64_t seed);

struct ConcentrationRow {
    std::size_t set_size = 0;
    std::size_t subsets = 0;
    /// Subsets with no eigenvalue above the positivity cut-off.
    std::size_t undefined = 0;
    double min = 0.0;
    double q25 = 0.0;
    double median = 0.0;
    double q75 = 0.0;
    double max = 0.0;
};

struct ConcentrationOptions {
    std::vector<std::size_t> set_sizes;
    std::size_t subsets = 100;
    std::uint64_t seed = 0;
    GradientScope scope = GradientScope::last_layer;
    Reduction reduction = Reduction::traced;
    double positivity_threshold = kDefaultPositivityThreshold;
};

/// lambda_min^+ over random subsets (without replacement) of the rows of X
/// for each set size.
[[nodiscard]] std::vector<ConcentrationRow> eig_concentration_report(const Matrix& X, const ParamVector& params,
                                                                     const NetworkSpec& spec,
                                                                     const ConcentrationOptions& options);
void write_concentration_csv(std::ostream& out, const std::vector<ConcentrationRow>& rows);

/// Linear-interpolated quantile of unsorted values, q in [0, 1].
[[nodiscard]] double quantile(std::vector<double> values, double q);

/// Average ranks (1-based) with ties sharing the mean rank.
[[nodiscard]] std::vector<double> average_ranks(const std::vector<double>& values);

/// Spearman rho with average ranks; zero rank variance gives 0.
[[nodiscard]] double horizon_correlation(const std::vector<double>& scores, const std::vector<double>& horizons);

struct HorizonStudyConfig {
    DatasetConfig dataset;
    NetworkSpec network;
    TrainConfig train;
    std::size_t initial_per_class = 1;
    std::size_t group_size = 4;
    std::size_t num_groups = 30;
    GradientScope scope = GradientScope::last_layer;
    Reduction reduction = Reduction::traced;
    double positivity_threshold = kDefaultPositivityThreshold;
    /// Convergence when training loss falls to this fraction of its initial
    /// value; unset uses the global minimum of the test loss.
    std::optional<double> relative_loss_threshold;
    std::uint64_t seed = 0;
};

struct HorizonRow {
    std::vector<std::size_t> members;
    std::optional<double> score;
    std::size_t epochs = 0;
};

struct HorizonStudy {
    std::vector<HorizonRow> rows;
    /// Over groups with a defined score.
    double spearman = 0.0;
};

/// Scores candidate groups by lambda_min^+ of labeled + group at a shared
/// initialization, then trains that initialization on each union.
[[nodiscard]] HorizonStudy horizon_study(const HorizonStudyConfig& cfg);
void write_horizon_csv(std::ostream& out, const HorizonStudy& study);

struct PairedRow {
    std::uint64_t seed = 0;
    std::size_t round = 0;
    std::size_t labeled_size = 0;
    double last_layer_accuracy = 0.0;
    double full_accuracy = 0.0;
};

/// run_assl with scope last_layer and full per seed, everything else shared.
[[nodiscard]] std::vector<PairedRow> last_vs_full_study(const ExperimentConfig& cfg);
void write_paired_csv(std::ostream& out, const std::vector<PairedRow>& rows);

/// Mean over rows of ||f(x + d) + f(x - d) - 2 f(x)|| / ||d||^2 with Gaussian
/// directions d of norm `radius`.
[[nodiscard]] double input_curvature(const ParamVector& params, const NetworkSpec& spec, const Matrix& X,
                                     double radius, std::uint64_t seed);

/// min and max of ||grad L_t||^2 / L_t over traced rows with L_t > 0.
struct GradientScaleBand {
    double low = 0.0;
    double high = 0.0;
};
[[nodiscard]] GradientScaleBand gradient_scale_band(const TrainingTrace& trace);

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

/// Fast invariant checks; each catches its own exceptions.
[[nodiscard]] std::vector<CheckResult> run_property_suite(std::uint64_t seed = 0);

}  // namespace crc
