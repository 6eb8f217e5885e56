#pragma once

// Dense ReLU feedforward networks over a flat parameter vector, with exact
// reverse-mode gradients and a central-difference oracle.

#include <cstddef>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

namespace crc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct NetworkSpec {
    std::size_t input_dim = 0;
    std::vector<std::size_t> hidden_widths;
    std::size_t num_classes = 1;
    double init_scale = 1.0;
    /// Divide every pre-activation by sqrt(fan-in).
    bool ntk_parameterization = true;
    bool use_bias = false;

    void validate() const;

    [[nodiscard]] std::size_t num_layers() const noexcept { return hidden_widths.size() + 1; }
    [[nodiscard]] std::size_t fan_in(std::size_t layer) const;
    [[nodiscard]] std::size_t fan_out(std::size_t layer) const;
    /// Multiplier applied to W h in layer `layer`.
    [[nodiscard]] double layer_scale(std::size_t layer) const;
    [[nodiscard]] std::size_t parameter_count() const;
};

struct ParamRange {
    std::size_t start = 0;
    std::size_t length = 0;

    friend bool operator==(const ParamRange&, const ParamRange&) = default;
};

/// Flattened trainable parameters. Layer l stores its (fan_out x fan_in)
/// weight matrix column-major, followed by fan_out biases when enabled.
struct ParamVector {
    Vector values;
    std::vector<ParamRange> layer_offsets;
    ParamRange last_layer_range;

    [[nodiscard]] std::size_t size() const noexcept { return static_cast<std::size_t>(values.size()); }
};

/// Zero parameters laid out for `spec`.
[[nodiscard]] ParamVector make_params(const NetworkSpec& spec);
[[nodiscard]] ParamVector init_network(const NetworkSpec& spec, std::uint64_t seed);

[[nodiscard]] Eigen::Map<const Matrix> layer_weights(const ParamVector& params, const NetworkSpec& spec,
                                                     std::size_t layer);
[[nodiscard]] Eigen::Map<Matrix> layer_weights(ParamVector& params, const NetworkSpec& spec, std::size_t layer);

enum class GradientScope { full, last_layer };

/// Activations kept for a backward pass over a batch. Samples are columns.
struct ForwardCache {
    /// inputs[l] is the input to layer l (inputs[0] = X^T).
    std::vector<Matrix> inputs;
    /// ReLU masks of the hidden pre-activations (1 where g > 0).
    std::vector<Matrix> masks;
    /// C x n network outputs.
    Matrix outputs;
};

[[nodiscard]] ForwardCache forward_cached(const ParamVector& params, const NetworkSpec& spec, const Matrix& X);
/// X is n x input_dim; returns n x C.
[[nodiscard]] Matrix forward_batch(const ParamVector& params, const NetworkSpec& spec, const Matrix& X);
[[nodiscard]] Vector forward(const ParamVector& params, const NetworkSpec& spec, const Vector& x);

/// Vector-Jacobian product: sum_i J(x_i)^T cotangent_i. `cotangent` is n x C.
[[nodiscard]] Vector backward(const ParamVector& params, const NetworkSpec& spec, const ForwardCache& cache,
                              const Matrix& cotangent);

struct Jacobian {
    /// C x P (full) or C x |last layer| (last_layer).
    Matrix values;
    GradientScope scope = GradientScope::full;
};

[[nodiscard]] Jacobian jacobian(const ParamVector& params, const NetworkSpec& spec, const Vector& x,
                                GradientScope scope = GradientScope::full);
[[nodiscard]] Jacobian finite_diff_jacobian(const ParamVector& params, const NetworkSpec& spec, const Vector& x,
                                            double h);

/// L = 1/2 sum_i sum_c (f_c(x_i) - y_ic)^2.
[[nodiscard]] double mse_loss(const Matrix& outputs, const Matrix& targets);
[[nodiscard]] Vector grad_mse(const ParamVector& params, const NetworkSpec& spec, const Matrix& X,
                              const Matrix& Y);

/// Row-wise one-hot encoding of class labels.
[[nodiscard]] Matrix one_hot(const std::vector<int>& labels, std::size_t num_classes);
[[nodiscard]] Vector softmax(const Vector& logits);

}  // namespace crc
