#include "crc/nn.hpp"

#include <cmath>
#include <random>
#include <string>

#include "crc/error.hpp"

namespace crc {

namespace {

void require_input(const NetworkSpec& spec, Eigen::Index cols) {
    if (static_cast<std::size_t>(cols) != spec.input_dim) {
        throw Error(ErrorKind::dimension, "input has " + std::to_string(cols) + " features, network expects " +
                                              std::to_string(spec.input_dim));
    }
}

void require_layout(const ParamVector& params, const NetworkSpec& spec) {
    if (params.size() != spec.parameter_count() || params.layer_offsets.size() != spec.num_layers()) {
        throw Error(ErrorKind::dimension, "parameter vector does not match network spec");
    }
}

}  // namespace

void NetworkSpec::validate() const {
    if (input_dim == 0) throw Error(ErrorKind::invalid_argument, "input_dim must be positive");
    for (auto w : hidden_widths) {
        if (w == 0) throw Error(ErrorKind::invalid_argument, "hidden widths must be positive");
    }
    if (num_classes == 0) throw Error(ErrorKind::invalid_argument, "num_classes must be positive");
    if (!(init_scale >= 0.0) || !std::isfinite(init_scale)) {
        throw Error(ErrorKind::invalid_argument, "init_scale must be a finite non-negative number");
    }
}

std::size_t NetworkSpec::fan_in(std::size_t layer) const {
    return layer == 0 ? input_dim : hidden_widths.at(layer - 1);
}

std::size_t NetworkSpec::fan_out(std::size_t layer) const {
    return layer + 1 == num_layers() ? num_classes : hidden_widths.at(layer);
}

double NetworkSpec::layer_scale(std::size_t layer) const {
    return ntk_parameterization ? 1.0 / std::sqrt(static_cast<double>(fan_in(layer))) : 1.0;
}

std::size_t NetworkSpec::parameter_count() const {
    std::size_t total = 0;
    for (std::size_t l = 0; l < num_layers(); ++l) {
        total += fan_in(l) * fan_out(l) + (use_bias ? fan_out(l) : 0);
    }
    return total;
}

ParamVector make_params(const NetworkSpec& spec) {
    spec.validate();
    ParamVector p;
    std::size_t offset = 0;
    for (std::size_t l = 0; l < spec.num_layers(); ++l) {
        const std::size_t len = spec.fan_in(l) * spec.fan_out(l) + (spec.use_bias ? spec.fan_out(l) : 0);
        p.layer_offsets.push_back({offset, len});
        offset += len;
    }
    p.values = Vector::Zero(static_cast<Eigen::Index>(offset));
    p.last_layer_range = p.layer_offsets.back();
    return p;
}

ParamVector init_network(const NetworkSpec& spec, std::uint64_t seed) {
    ParamVector p = make_params(spec);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t l = 0; l < spec.num_layers(); ++l) {
        const std::size_t weights = spec.fan_in(l) * spec.fan_out(l);
        const std::size_t start = p.layer_offsets[l].start;
        const std::size_t count = weights + (spec.use_bias ? spec.fan_out(l) : 0);
        for (std::size_t k = 0; k < count; ++k) {
            p.values[static_cast<Eigen::Index>(start + k)] = spec.init_scale * normal(rng);
        }
    }
    return p;
}

Eigen::Map<const Matrix> layer_weights(const ParamVector& params, const NetworkSpec& spec, std::size_t layer) {
    return {params.values.data() + params.layer_offsets.at(layer).start,
            static_cast<Eigen::Index>(spec.fan_out(layer)), static_cast<Eigen::Index>(spec.fan_in(layer))};
}

Eigen::Map<Matrix> layer_weights(ParamVector& params, const NetworkSpec& spec, std::size_t layer) {
    return {params.values.data() + params.layer_offsets.at(layer).start,
            static_cast<Eigen::Index>(spec.fan_out(layer)), static_cast<Eigen::Index>(spec.fan_in(layer))};
}

namespace {

Eigen::Map<const Vector> layer_bias(const ParamVector& params, const NetworkSpec& spec, std::size_t layer) {
    const std::size_t start = params.layer_offsets[layer].start + spec.fan_in(layer) * spec.fan_out(layer);
    return {params.values.data() + start, static_cast<Eigen::Index>(spec.fan_out(layer))};
}

}  // namespace

ForwardCache forward_cached(const ParamVector& params, const NetworkSpec& spec, const Matrix& X) {
    require_input(spec, X.cols());
    require_layout(params, spec);
    ForwardCache cache;
    const std::size_t L = spec.num_layers();
    cache.inputs.reserve(L);
    cache.masks.reserve(L - 1);
    cache.inputs.push_back(X.transpose());
    for (std::size_t l = 0; l < L; ++l) {
        Matrix g = spec.layer_scale(l) * (layer_weights(params, spec, l) * cache.inputs.back());
        if (spec.use_bias) g.colwise() += layer_bias(params, spec, l);
        if (l + 1 == L) {
            cache.outputs = std::move(g);
        } else {
            Matrix mask = (g.array() > 0.0).cast<double>().matrix();
            cache.inputs.push_back(g.cwiseProduct(mask));
            cache.masks.push_back(std::move(mask));
        }
    }
    return cache;
}

Matrix forward_batch(const ParamVector& params, const NetworkSpec& spec, const Matrix& X) {
    require_input(spec, X.cols());
    require_layout(params, spec);
    Matrix h = X.transpose();
    for (std::size_t l = 0; l < spec.num_layers(); ++l) {
        Matrix g = spec.layer_scale(l) * (layer_weights(params, spec, l) * h);
        if (spec.use_bias) g.colwise() += layer_bias(params, spec, l);
        h = (l + 1 == spec.num_layers()) ? std::move(g) : Matrix(g.cwiseMax(0.0));
    }
    return h.transpose();
}

Vector forward(const ParamVector& params, const NetworkSpec& spec, const Vector& x) {
    require_input(spec, x.size());
    return forward_batch(params, spec, x.transpose()).row(0).transpose();
}

Vector backward(const ParamVector& params, const NetworkSpec& spec, const ForwardCache& cache,
                const Matrix& cotangent) {
    require_layout(params, spec);
    if (cotangent.rows() != cache.outputs.cols() || static_cast<std::size_t>(cotangent.cols()) != spec.num_classes) {
        throw Error(ErrorKind::dimension, "cotangent shape does not match network outputs");
    }
    Vector grad = Vector::Zero(params.values.size());
    Matrix delta = cotangent.transpose();
    for (std::size_t l = spec.num_layers(); l-- > 0;) {
        const double s = spec.layer_scale(l);
        const auto rows = static_cast<Eigen::Index>(spec.fan_out(l));
        const auto cols = static_cast<Eigen::Index>(spec.fan_in(l));
        const auto start = static_cast<Eigen::Index>(params.layer_offsets[l].start);
        Eigen::Map<Matrix>(grad.data() + start, rows, cols).noalias() = s * delta * cache.inputs[l].transpose();
        if (spec.use_bias) grad.segment(start + rows * cols, rows) = delta.rowwise().sum();
        if (l > 0) {
            Matrix back = s * (layer_weights(params, spec, l).transpose() * delta);
            delta = back.cwiseProduct(cache.masks[l - 1]);
        }
    }
    return grad;
}

Jacobian jacobian(const ParamVector& params, const NetworkSpec& spec, const Vector& x, GradientScope scope) {
    require_input(spec, x.size());
    const ForwardCache cache = forward_cached(params, spec, x.transpose());
    const auto C = static_cast<Eigen::Index>(spec.num_classes);
    Matrix full = Matrix::Zero(C, params.values.size());
    // Row c of `delta` is d f_c / d g^l for the current layer.
    Matrix delta = Matrix::Identity(C, C);
    for (std::size_t l = spec.num_layers(); l-- > 0;) {
        const double s = spec.layer_scale(l);
        const auto rows = static_cast<Eigen::Index>(spec.fan_out(l));
        const auto cols = static_cast<Eigen::Index>(spec.fan_in(l));
        const auto start = static_cast<Eigen::Index>(params.layer_offsets[l].start);
        const Vector h = cache.inputs[l].col(0);
        for (Eigen::Index c = 0; c < C; ++c) {
            for (Eigen::Index j = 0; j < cols; ++j) {
                for (Eigen::Index i = 0; i < rows; ++i) {
                    full(c, start + i + j * rows) = s * delta(c, i) * h(j);
                }
            }
            if (spec.use_bias) full.block(c, start + rows * cols, 1, rows) = delta.row(c);
        }
        if (l > 0) {
            Matrix back = s * (delta * layer_weights(params, spec, l));
            delta = back.array().rowwise() * cache.masks[l - 1].col(0).transpose().array();
        }
    }
    Jacobian J;
    J.scope = scope;
    if (scope == GradientScope::full) {
        J.values = std::move(full);
    } else {
        J.values = full.middleCols(static_cast<Eigen::Index>(params.last_layer_range.start),
                                   static_cast<Eigen::Index>(params.last_layer_range.length));
    }
    if (!J.values.allFinite()) throw Error(ErrorKind::numeric, "non-finite Jacobian entry");
    return J;
}

Jacobian finite_diff_jacobian(const ParamVector& params, const NetworkSpec& spec, const Vector& x, double h) {
    if (!(h > 0.0)) throw Error(ErrorKind::invalid_argument, "finite-difference step must be positive");
    require_input(spec, x.size());
    require_layout(params, spec);
    ParamVector probe = params;
    Jacobian J;
    J.values = Matrix::Zero(static_cast<Eigen::Index>(spec.num_classes), params.values.size());
    for (Eigen::Index i = 0; i < params.values.size(); ++i) {
        const double original = probe.values[i];
        probe.values[i] = original + h;
        const Vector plus = forward(probe, spec, x);
        probe.values[i] = original - h;
        const Vector minus = forward(probe, spec, x);
        probe.values[i] = original;
        J.values.col(i) = (plus - minus) / (2.0 * h);
    }
    return J;
}

double mse_loss(const Matrix& outputs, const Matrix& targets) {
    if (outputs.rows() != targets.rows() || outputs.cols() != targets.cols()) {
        throw Error(ErrorKind::dimension, "outputs and targets differ in shape");
    }
    return 0.5 * (outputs - targets).squaredNorm();
}

Vector grad_mse(const ParamVector& params, const NetworkSpec& spec, const Matrix& X, const Matrix& Y) {
    if (X.rows() != Y.rows() || static_cast<std::size_t>(Y.cols()) != spec.num_classes) {
        throw Error(ErrorKind::dimension, "targets do not match inputs or class count");
    }
    const ForwardCache cache = forward_cached(params, spec, X);
    return backward(params, spec, cache, cache.outputs.transpose() - Y);
}

Matrix one_hot(const std::vector<int>& labels, std::size_t num_classes) {
    Matrix Y = Matrix::Zero(static_cast<Eigen::Index>(labels.size()), static_cast<Eigen::Index>(num_classes));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
            throw Error(ErrorKind::invalid_argument, "label " + std::to_string(labels[i]) + " out of range");
        }
        Y(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
    }
    return Y;
}

Vector softmax(const Vector& logits) {
    const double m = logits.maxCoeff();
    Vector e = (logits.array() - m).exp().matrix();
    return e / e.sum();
}

}  // namespace crc
