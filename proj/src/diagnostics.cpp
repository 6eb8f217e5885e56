#include "crc/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>

#include "crc/error.hpp"

namespace crc {

KernelFlow make_kernel_flow(const Matrix& kernel, const Vector& targets, const Vector& initial) {
    if (kernel.rows() != targets.size() || kernel.rows() != initial.size()) {
        throw Error(ErrorKind::dimension, "kernel, targets and initial outputs differ in size");
    }
    KernelFlow flow{kernel, targets, initial, symmetric_eigen(kernel)};
    const double norm = kernel.norm();
    const double tol = 1e-10 * std::max(norm, 1e-300);
    if (flow.eigen.values.size() > 0 && flow.eigen.values.minCoeff() < -tol) {
        throw Error(ErrorKind::numeric, "kernel is not positive semidefinite");
    }
    for (Eigen::Index k = 0; k < flow.eigen.values.size(); ++k) {
        const Vector v = flow.eigen.vectors.col(k);
        if ((kernel * v - flow.eigen.values[k] * v).norm() > tol) {
            throw Error(ErrorKind::numeric, "eigenpair residual above tolerance");
        }
    }
    // Clamp round-off negatives so modes never grow.
    flow.eigen.values = flow.eigen.values.cwiseMax(0.0);
    return flow;
}

Vector kernel_flow_solution(const KernelFlow& flow, double t) {
    if (!(t >= 0.0)) throw Error(ErrorKind::invalid_argument, "time must be >= 0");
    const Vector coeffs = flow.eigen.vectors.transpose() * (flow.initial - flow.targets);
    const Vector decayed = coeffs.array() * (-flow.eigen.values.array() * t).exp();
    return flow.targets + flow.eigen.vectors * decayed;
}

Vector flatten_outputs(const Matrix& outputs) {
    Vector flat(outputs.size());
    for (Eigen::Index i = 0; i < outputs.rows(); ++i) {
        for (Eigen::Index c = 0; c < outputs.cols(); ++c) flat[i * outputs.cols() + c] = outputs(i, c);
    }
    return flat;
}

std::vector<LinearizationGapRow> linearization_gap(const NetworkSpec& base, const std::vector<std::size_t>& widths,
                                                   const Matrix& X, const Matrix& Y, double step_size,
                                                   std::size_t steps, std::uint64_t seed) {
    if (!std::is_sorted(widths.begin(), widths.end())) {
        throw Error(ErrorKind::invalid_argument, "widths must be ascending");
    }
    if (!(step_size > 0.0)) throw Error(ErrorKind::invalid_argument, "step size must be positive");
    std::vector<LinearizationGapRow> rows;
    for (const auto width : widths) {
        NetworkSpec spec = base;
        for (auto& w : spec.hidden_widths) w = width;
        spec.validate();
        ParamVector params = init_network(spec, seed);
        const GramMatrix K = empirical_ntk(params, spec, X, GradientScope::full, Reduction::blocked);
        const KernelFlow flow = make_kernel_flow(K.values, flatten_outputs(Y), flatten_outputs(forward_batch(params, spec, X)));

        LinearizationGapRow row{width, 0.0, {}};
        row.trajectory.reserve(steps + 1);
        for (std::size_t t = 0; t <= steps; ++t) {
            const Vector f = flatten_outputs(forward_batch(params, spec, X));
            if (!f.allFinite()) {
                throw Error(ErrorKind::numeric, "training diverged at width " + std::to_string(width) + ", step " +
                                                    std::to_string(t));
            }
            const double gap = (f - kernel_flow_solution(flow, step_size * static_cast<double>(t))).norm();
            row.trajectory.push_back(gap);
            row.gap = std::max(row.gap, gap);
            if (t < steps) params = gd_step(params, spec, X, Y, step_size);
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

double quantile(std::vector<double> values, double q) {
    if (values.empty()) throw Error(ErrorKind::invalid_argument, "quantile of an empty list");
    if (!(q >= 0.0 && q <= 1.0)) throw Error(ErrorKind::invalid_argument, "quantile level must be in [0,1]");
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

std::vector<ConcentrationRow> eig_concentration_report(const Matrix& X, const ParamVector& params,
                                                       const NetworkSpec& spec, const ConcentrationOptions& options) {
    if (options.set_sizes.size() < 2) throw Error(ErrorKind::invalid_argument, "need at least two set sizes");
    if (options.subsets == 0) throw Error(ErrorKind::invalid_argument, "need at least one subset per size");
    const auto n = static_cast<std::size_t>(X.rows());
    for (auto s : options.set_sizes) {
        if (s == 0 || s > n) throw Error(ErrorKind::invalid_argument, "set size outside 1.." + std::to_string(n));
    }
    const GradientFactors factors(params, spec, X, options.scope);
    std::mt19937_64 rng(options.seed);
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), 0);

    std::vector<ConcentrationRow> rows;
    for (const auto size : options.set_sizes) {
        ConcentrationRow row;
        row.set_size = size;
        row.subsets = options.subsets;
        std::vector<double> values;
        for (std::size_t k = 0; k < options.subsets; ++k) {
            std::shuffle(all.begin(), all.end(), rng);
            const std::span<const std::size_t> subset(all.data(), size);
            const auto v = min_positive_eigenvalue(factors.gram(subset, options.reduction), options.positivity_threshold);
            if (v) values.push_back(*v);
            else ++row.undefined;
        }
        if (!values.empty()) {
            row.min = quantile(values, 0.0);
            row.q25 = quantile(values, 0.25);
            row.median = quantile(values, 0.5);
            row.q75 = quantile(values, 0.75);
            row.max = quantile(values, 1.0);
        }
        rows.push_back(row);
    }
    return rows;
}

void write_concentration_csv(std::ostream& out, const std::vector<ConcentrationRow>& rows) {
    out << "set_size,subsets,undefined,min,q25,median,q75,max\n";
    out.precision(12);
    for (const auto& r : rows) {
        out << r.set_size << ',' << r.subsets << ',' << r.undefined << ',' << r.min << ',' << r.q25 << ','
            << r.median << ',' << r.q75 << ',' << r.max << '\n';
    }
}

std::vector<double> average_ranks(const std::vector<double>& values) {
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return values[a] < values[b]; });
    std::vector<double> ranks(values.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
        const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
        i = j + 1;
    }
    return ranks;
}

double horizon_correlation(const std::vector<double>& scores, const std::vector<double>& horizons) {
    if (scores.size() != horizons.size()) throw Error(ErrorKind::dimension, "scores and horizons differ in length");
    if (scores.size() < 5) throw Error(ErrorKind::invalid_argument, "need at least 5 pairs");
    const auto rx = average_ranks(scores);
    const auto ry = average_ranks(horizons);
    const double n = static_cast<double>(rx.size());
    const double mean = (n + 1.0) / 2.0;
    double sxy = 0.0;
    double sxx = 0.0;
    double syy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mean) * (ry[i] - mean);
        sxx += (rx[i] - mean) * (rx[i] - mean);
        syy += (ry[i] - mean) * (ry[i] - mean);
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

HorizonStudy horizon_study(const HorizonStudyConfig& cfg) {
    DatasetConfig dcfg = cfg.dataset;
    dcfg.seed = derive_seed(cfg.seed, 11);
    const DatasetSplit data = make_datasets(dcfg);
    NetworkSpec spec = cfg.network;
    spec.input_dim = static_cast<std::size_t>(data.train.features.cols());
    spec.num_classes = data.train.num_classes;
    const Pool pool = initial_pool(data.train, cfg.initial_per_class, derive_seed(cfg.seed, 12));
    const ParamVector init = init_network(spec, derive_seed(cfg.seed, 13));

    if (cfg.group_size == 0) throw Error(ErrorKind::invalid_argument, "group size must be positive");
    if (pool.unlabeled().size() < cfg.group_size * cfg.num_groups) {
        throw Error(ErrorKind::insufficient_pool, "not enough unlabeled samples for the requested groups");
    }
    std::vector<std::size_t> candidates(pool.unlabeled().begin(), pool.unlabeled().end());
    std::mt19937_64 rng(derive_seed(cfg.seed, 14));
    std::shuffle(candidates.begin(), candidates.end(), rng);

    const GradientFactors factors(init, spec, pool.features(), cfg.scope);
    HorizonStudy study;
    std::vector<double> scores;
    std::vector<double> horizons;
    for (std::size_t g = 0; g < cfg.num_groups; ++g) {
        HorizonRow row;
        row.members.assign(candidates.begin() + static_cast<std::ptrdiff_t>(g * cfg.group_size),
                           candidates.begin() + static_cast<std::ptrdiff_t>((g + 1) * cfg.group_size));
        std::vector<std::size_t> unioned(pool.labeled().begin(), pool.labeled().end());
        unioned.insert(unioned.end(), row.members.begin(), row.members.end());
        row.score = min_positive_eigenvalue(factors.gram(unioned, cfg.reduction), cfg.positivity_threshold);

        const Pool trial(data.train, unioned);
        const TrainResult trained = train(init, spec, trial, cfg.train, &data.test);
        if (cfg.relative_loss_threshold) {
            const double target = *cfg.relative_loss_threshold * trained.trace.rows.front().loss;
            row.epochs = epochs_to_convergence(trained.trace, LossThreshold{target});
        } else {
            row.epochs = epochs_to_convergence(trained.trace, GlobalMinTestLoss{});
        }
        if (row.score) {
            scores.push_back(*row.score);
            horizons.push_back(static_cast<double>(row.epochs));
        }
        study.rows.push_back(std::move(row));
    }
    study.spearman = horizon_correlation(scores, horizons);
    return study;
}

void write_horizon_csv(std::ostream& out, const HorizonStudy& study) {
    out << "group,members,score,epochs\n";
    out.precision(12);
    for (std::size_t g = 0; g < study.rows.size(); ++g) {
        const auto& r = study.rows[g];
        out << g << ',';
        for (std::size_t k = 0; k < r.members.size(); ++k) out << (k ? ";" : "") << r.members[k];
        out << ',';
        if (r.score) out << *r.score;
        out << ',' << r.epochs << '\n';
    }
}

std::vector<PairedRow> last_vs_full_study(const ExperimentConfig& cfg) {
    const DatasetSplit data = make_datasets(cfg.dataset);
    ExperimentConfig last = cfg;
    last.strategy.scope = GradientScope::last_layer;
    ExperimentConfig full = cfg;
    full.strategy.scope = GradientScope::full;
    std::vector<PairedRow> rows;
    for (auto seed : cfg.seeds) {
        const RunArtifacts a = run_assl(last, seed, &data);
        const RunArtifacts b = run_assl(full, seed, &data);
        for (std::size_t r = 0; r < a.record.rounds.size(); ++r) {
            rows.push_back({seed, r, a.record.rounds[r].labeled_size, a.record.rounds[r].test_accuracy,
                            b.record.rounds[r].test_accuracy});
        }
    }
    return rows;
}

void write_paired_csv(std::ostream& out, const std::vector<PairedRow>& rows) {
    out << "seed,round,labeled_size,last_layer_accuracy,full_accuracy\n";
    out.precision(10);
    for (const auto& r : rows) {
        out << r.seed << ',' << r.round << ',' << r.labeled_size << ',' << r.last_layer_accuracy << ','
            << r.full_accuracy << '\n';
    }
}

double input_curvature(const ParamVector& params, const NetworkSpec& spec, const Matrix& X, double radius,
                       std::uint64_t seed) {
    if (!(radius > 0.0)) throw Error(ErrorKind::invalid_argument, "radius must be positive");
    if (X.rows() == 0) throw Error(ErrorKind::invalid_argument, "no inputs");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z(0.0, 1.0);
    Matrix D(X.rows(), X.cols());
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        for (Eigen::Index j = 0; j < X.cols(); ++j) D(i, j) = z(rng);
        D.row(i) *= radius / std::max(D.row(i).norm(), 1e-300);
    }
    const Matrix second = forward_batch(params, spec, X + D) + forward_batch(params, spec, X - D) -
                          2.0 * forward_batch(params, spec, X);
    return second.rowwise().norm().mean() / (radius * radius);
}

GradientScaleBand gradient_scale_band(const TrainingTrace& trace) {
    GradientScaleBand band{std::numeric_limits<double>::infinity(), 0.0};
    for (const auto& row : trace.rows) {
        if (!(row.loss > 0.0)) continue;
        const double ratio = row.grad_sq / row.loss;
        band.low = std::min(band.low, ratio);
        band.high = std::max(band.high, ratio);
    }
    if (band.high == 0.0 && std::isinf(band.low)) throw Error(ErrorKind::invalid_argument, "no rows with positive loss");
    return band;
}

}  // namespace crc
