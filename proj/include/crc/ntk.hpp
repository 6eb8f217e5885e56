#pragma once

// Empirical NTK (model Gram matrix) assembly and symmetric eigen-analysis.

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "crc/nn.hpp"

namespace crc {

enum class Reduction {
    /// (n*C) x (n*C), sample-major: row i*C + c.
    blocked,
    /// n x n, sum over classes of the diagonal blocks.
    traced,
};

inline constexpr double kDefaultPositivityThreshold = 1e-8;

struct GramMatrix {
    std::size_t n = 0;
    std::size_t block_dim = 1;
    Matrix values;
    GradientScope scope = GradientScope::full;
};

struct Spectrum {
    /// Nonincreasing.
    std::vector<double> eigenvalues;
    std::optional<double> min_positive;
    /// Absolute cut-off used for min_positive (threshold * lambda_max).
    double tolerance_used = 0.0;
};

struct EigenDecomposition {
    /// Nonincreasing.
    Vector values;
    /// Column k pairs with values[k].
    Matrix vectors;
};

/// Per-sample backprop factors of the network Jacobian. For weight layer l,
/// d f_c / d W^l = s_l * delta_c^l (h^l)^T, so Gram entries factor into
/// products of small inner products and no n x P Jacobian is ever formed.
class GradientFactors {
public:
    GradientFactors(const ParamVector& params, const NetworkSpec& spec, const Matrix& X, GradientScope scope);

    [[nodiscard]] std::size_t size() const noexcept { return n_; }
    [[nodiscard]] std::size_t num_classes() const noexcept { return classes_; }
    [[nodiscard]] GradientScope scope() const noexcept { return scope_; }

    [[nodiscard]] GramMatrix gram(Reduction reduction) const;
    /// Gram over the rows of X named by `subset` (duplicates allowed).
    [[nodiscard]] GramMatrix gram(std::span<const std::size_t> subset, Reduction reduction) const;
    /// C x C block K(x_i, x_i).
    [[nodiscard]] Matrix self_block(std::size_t i) const;

private:
    struct LayerFactors {
        double scale_sq = 1.0;
        bool has_bias = false;
        Matrix inputs;               // fan_in x n
        std::vector<Matrix> deltas;  // per class: fan_out x n
    };

    std::size_t n_ = 0;
    std::size_t classes_ = 0;
    GradientScope scope_ = GradientScope::full;
    std::vector<LayerFactors> layers_;
};

[[nodiscard]] GramMatrix empirical_ntk(const ParamVector& params, const NetworkSpec& spec, const Matrix& X,
                                       GradientScope scope, Reduction reduction = Reduction::traced);

/// Symmetric eigensolver; throws if `m` is not symmetric to 1e-10 relative.
[[nodiscard]] EigenDecomposition symmetric_eigen(const Matrix& m);

[[nodiscard]] Spectrum eigen_spectrum(const GramMatrix& gram,
                                      double positivity_threshold = kDefaultPositivityThreshold);
[[nodiscard]] std::optional<double> min_positive_eigenvalue(const GramMatrix& gram,
                                                            double positivity_threshold = kDefaultPositivityThreshold);
/// Smallest eigenvalue > threshold * lambda_max of a nonincreasing list.
[[nodiscard]] std::optional<double> min_positive_of(std::span<const double> eigenvalues, double positivity_threshold);

/// One eigenvalue per row under an `eigenvalue` header.
void write_spectrum_csv(std::ostream& out, const Spectrum& spectrum);

}  // namespace crc
