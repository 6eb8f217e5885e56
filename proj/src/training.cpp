#include "crc/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <random>
#include <string>

#include "crc/error.hpp"
#include "crc/ntk.hpp"

namespace crc {

void TrainConfig::validate() const {
    if (!(step_size > 0.0) || !std::isfinite(step_size)) {
        throw Error(ErrorKind::invalid_argument, "step size must be positive");
    }
    if (trace_every == 0) throw Error(ErrorKind::invalid_argument, "trace_every must be at least 1");
    if (quadrature_points < 3 || quadrature_points % 2 == 0) {
        throw Error(ErrorKind::invalid_argument, "quadrature_points must be odd and >= 3");
    }
    if (!(consistency_weight >= 0.0)) throw Error(ErrorKind::invalid_argument, "consistency weight must be >= 0");
    if (!(perturbation_sigma >= 0.0)) throw Error(ErrorKind::invalid_argument, "perturbation sigma must be >= 0");
    if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw Error(ErrorKind::invalid_argument, "ema_decay must be in [0,1)");
}

ParamVector gd_step(const ParamVector& params, const NetworkSpec& spec, const Matrix& X, const Matrix& Y,
                    double step_size) {
    const Vector g = grad_mse(params, spec, X, Y);
    if (!g.allFinite()) throw Error(ErrorKind::numeric, "non-finite gradient");
    ParamVector next = params;
    next.values -= step_size * g;
    return next;
}

double accuracy(const Matrix& outputs, const std::vector<int>& labels) {
    if (static_cast<std::size_t>(outputs.rows()) != labels.size()) {
        throw Error(ErrorKind::dimension, "outputs and labels differ in length");
    }
    if (labels.empty()) return 0.0;
    std::size_t hits = 0;
    for (Eigen::Index i = 0; i < outputs.rows(); ++i) {
        Eigen::Index arg = 0;
        outputs.row(i).maxCoeff(&arg);
        if (arg == labels[static_cast<std::size_t>(i)]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double compute_xi(const ParamVector& params, const NetworkSpec& spec, const Matrix& X, const Matrix& Y,
                  double step_size, std::size_t quadrature_points) {
    if (quadrature_points < 3 || quadrature_points % 2 == 0) {
        throw Error(ErrorKind::invalid_argument, "quadrature_points must be odd and >= 3");
    }
    if (step_size == 0.0) return 0.0;
    const Vector g = grad_mse(params, spec, X, Y);
    const double g_sq = g.squaredNorm();
    const double h = step_size / static_cast<double>(quadrature_points - 1);
    ParamVector probe = params;
    double sum = 0.0;
    for (std::size_t k = 0; k < quadrature_points; ++k) {
        const double gamma = h * static_cast<double>(k);
        probe.values = params.values - gamma * g;
        const double integrand = g_sq - g.dot(grad_mse(probe, spec, X, Y));
        if (!std::isfinite(integrand)) throw Error(ErrorKind::numeric, "non-finite xi integrand");
        const double w = (k == 0 || k + 1 == quadrature_points) ? 1.0 : (k % 2 == 1 ? 4.0 : 2.0);
        sum += w * integrand;
    }
    return sum * h / 3.0;
}

namespace {

/// Runs GD on the configured objective. `teacher` is engaged for mean teacher.
TrainingTrace run_gd(ParamVector& student, std::optional<ParamVector>& teacher, const NetworkSpec& spec,
                     const Pool& pool, const TrainConfig& cfg, const Dataset* test) {
    cfg.validate();
    if (pool.labeled().empty()) throw Error(ErrorKind::invalid_argument, "labeled set is empty");
    const Matrix X = pool.labeled_features();
    const Matrix Y = pool.labeled_targets();
    const std::vector<int> labels = pool.labeled_labels();
    const Matrix& X_all = pool.features();
    const auto N = static_cast<double>(X_all.rows());
    const bool consistency = cfg.ssl_mode != SslMode::none && cfg.consistency_weight > 0.0;
    const bool instrument = cfg.instrument && cfg.ssl_mode == SslMode::none;
    std::mt19937_64 noise_rng(cfg.noise_seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto perturbed = [&]() {
        Matrix out = X_all;
        if (cfg.perturbation_sigma > 0.0) {
            for (Eigen::Index j = 0; j < out.cols(); ++j) {
                for (Eigen::Index i = 0; i < out.rows(); ++i) out(i, j) += cfg.perturbation_sigma * normal(noise_rng);
            }
        }
        return out;
    };

    TrainingTrace trace;
    trace.step_size = cfg.step_size;
    trace.trace_every = cfg.trace_every;
    double best_acc = -1.0;
    std::size_t since_best = 0;

    for (std::size_t t = 0;; ++t) {
        const bool last = t == cfg.max_steps;
        const ForwardCache cache = forward_cached(student, spec, X);
        const Matrix F = cache.outputs.transpose();
        const Vector g_sup = backward(student, spec, cache, F - Y);
        if (!g_sup.allFinite()) throw Error(ErrorKind::numeric, "non-finite gradient at step " + std::to_string(t));

        std::optional<std::size_t> row_index;
        if (last || t % cfg.trace_every == 0) {
            TraceRow row;
            row.step = t;
            row.loss = mse_loss(F, Y);
            row.grad_sq = g_sup.squaredNorm();
            row.train_acc = accuracy(F, labels);
            if (test != nullptr) {
                const ParamVector& eval = teacher ? *teacher : student;
                const Matrix Ft = forward_batch(eval, spec, test->features);
                row.test_acc = accuracy(Ft, test->labels);
                row.test_loss = mse_loss(Ft, one_hot(test->labels, spec.num_classes));
            }
            if (instrument && !last) {
                const GramMatrix K = empirical_ntk(student, spec, X, GradientScope::full, Reduction::blocked);
                row.lambda_min = symmetric_eigen(K.values).values.minCoeff();
                row.xi = compute_xi(student, spec, X, Y, cfg.step_size, cfg.quadrature_points);
            }
            trace.rows.push_back(row);
            row_index = trace.rows.size() - 1;

            if (cfg.early_stop_patience) {
                const double acc = row.test_acc.value_or(row.train_acc);
                if (acc > best_acc) {
                    best_acc = acc;
                    since_best = 0;
                } else if (++since_best >= *cfg.early_stop_patience) {
                    break;
                }
            }
        }
        if (last) break;

        Vector grad = g_sup;
        if (consistency) {
            const Matrix XA = perturbed();
            const Matrix XB = perturbed();
            const ForwardCache ca = forward_cached(student, spec, XA);
            const double coef = 2.0 * cfg.consistency_weight / N;
            if (cfg.ssl_mode == SslMode::pi_model) {
                const ForwardCache cb = forward_cached(student, spec, XB);
                const Matrix diff = (ca.outputs - cb.outputs).transpose();
                grad += backward(student, spec, ca, coef * diff);
                grad -= backward(student, spec, cb, coef * diff);
            } else {
                const Matrix diff = (ca.outputs.transpose() - forward_batch(*teacher, spec, XB));
                grad += backward(student, spec, ca, coef * diff);
            }
            if (!grad.allFinite()) throw Error(ErrorKind::numeric, "non-finite gradient at step " + std::to_string(t));
        }
        student.values -= cfg.step_size * grad;
        if (teacher) teacher->values = cfg.ema_decay * teacher->values + (1.0 - cfg.ema_decay) * student.values;

        if (instrument && row_index) {
            TraceRow& row = trace.rows[*row_index];
            const Matrix F_next = forward_batch(student, spec, X);
            const Matrix dF = F_next - F;
            const double loss_next = mse_loss(F_next, Y);
            const double eps = 0.5 * dF.squaredNorm();
            row.eps = eps;
            row.e_dot_df = (Y - F).cwiseProduct(dF).sum();
            row.identity_residual = loss_next - (row.loss - *row.e_dot_df + eps);
            row.residual = loss_next - ((1.0 - 2.0 * cfg.step_size * *row.lambda_min) * row.loss + *row.xi + eps);
        }
    }
    return trace;
}

}  // namespace

TrainResult train_supervised(ParamVector params, const NetworkSpec& spec, const Pool& pool, const TrainConfig& cfg,
                             const Dataset* test) {
    TrainConfig c = cfg;
    c.ssl_mode = SslMode::none;
    std::optional<ParamVector> none;
    TrainingTrace trace = run_gd(params, none, spec, pool, c, test);
    return {std::move(params), std::move(trace)};
}

TrainResult train_pi_model(ParamVector params, const NetworkSpec& spec, const Pool& pool, const TrainConfig& cfg,
                           const Dataset* test) {
    TrainConfig c = cfg;
    c.ssl_mode = SslMode::pi_model;
    std::optional<ParamVector> none;
    TrainingTrace trace = run_gd(params, none, spec, pool, c, test);
    return {std::move(params), std::move(trace)};
}

MeanTeacherResult train_mean_teacher(ParamVector params, const NetworkSpec& spec, const Pool& pool,
                                     const TrainConfig& cfg, const Dataset* test) {
    TrainConfig c = cfg;
    c.ssl_mode = SslMode::mean_teacher;
    std::optional<ParamVector> teacher = params;
    TrainingTrace trace = run_gd(params, teacher, spec, pool, c, test);
    return {std::move(params), std::move(*teacher), std::move(trace)};
}

TrainResult train(ParamVector params, const NetworkSpec& spec, const Pool& pool, const TrainConfig& cfg,
                  const Dataset* test) {
    switch (cfg.ssl_mode) {
        case SslMode::none: return train_supervised(std::move(params), spec, pool, cfg, test);
        case SslMode::pi_model: return train_pi_model(std::move(params), spec, pool, cfg, test);
        case SslMode::mean_teacher: {
            auto mt = train_mean_teacher(std::move(params), spec, pool, cfg, test);
            return {std::move(mt.teacher), std::move(mt.trace)};
        }
    }
    throw Error(ErrorKind::invalid_argument, "unknown SSL mode");
}

RecursionReport verify_recursion(const TrainingTrace& trace) {
    RecursionReport report;
    report.max_relative_residual = -std::numeric_limits<double>::infinity();
    const auto& rows = trace.rows;
    for (std::size_t k = 0; k + 1 < rows.size(); ++k) {
        const TraceRow& row = rows[k];
        if (!row.lambda_min || !row.xi || !row.eps || !row.e_dot_df) continue;
        if (rows[k + 1].step != row.step + 1) {
            throw Error(ErrorKind::cadence, "recursion check needs consecutive steps, got " +
                                                std::to_string(row.step) + " then " +
                                                std::to_string(rows[k + 1].step));
        }
        const double next = rows[k + 1].loss;
        const double r = next - ((1.0 - 2.0 * trace.step_size * *row.lambda_min) * row.loss + *row.xi + *row.eps);
        const double id = next - (row.loss - *row.e_dot_df + *row.eps);
        report.residuals.push_back(r);
        report.identity_residuals.push_back(id);
        report.losses.push_back(row.loss);
        const double scale = std::max(row.loss, std::numeric_limits<double>::min());
        report.max_relative_residual = std::max(report.max_relative_residual, r / scale);
        report.max_relative_identity = std::max(report.max_relative_identity, std::abs(id) / scale);
    }
    if (report.residuals.empty()) throw Error(ErrorKind::cadence, "trace has no instrumented consecutive steps");
    return report;
}

std::size_t epochs_to_convergence(const TrainingTrace& trace, const ConvergenceCriterion& criterion) {
    if (trace.rows.empty()) throw Error(ErrorKind::invalid_argument, "empty training trace");
    if (const auto* threshold = std::get_if<LossThreshold>(&criterion)) {
        for (const auto& row : trace.rows) {
            if (row.loss <= threshold->value) return row.step;
        }
        return trace.rows.back().step;
    }
    double best = std::numeric_limits<double>::infinity();
    std::size_t step = trace.rows.front().step;
    for (const auto& row : trace.rows) {
        if (!row.test_loss) throw Error(ErrorKind::invalid_argument, "trace has no test loss");
        if (*row.test_loss < best) {
            best = *row.test_loss;
            step = row.step;
        }
    }
    return step;
}

void write_trace_csv(std::ostream& out, const TrainingTrace& trace) {
    out << "step,loss,lambda_min,xi,eps,residual,train_acc,test_acc,grad_sq,test_loss,e_dot_df,identity_residual\n";
    out.precision(17);
    auto opt = [&out](const std::optional<double>& v) {
        out << ',';
        if (v) out << *v;
    };
    for (const auto& r : trace.rows) {
        out << r.step << ',' << r.loss;
        opt(r.lambda_min);
        opt(r.xi);
        opt(r.eps);
        opt(r.residual);
        out << ',' << r.train_acc;
        opt(r.test_acc);
        out << ',' << r.grad_sq;
        opt(r.test_loss);
        opt(r.e_dot_df);
        opt(r.identity_residual);
        out << '\n';
    }
}

}  // namespace crc
