#include "crc/ntk.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "crc/error.hpp"

namespace crc {

GradientFactors::GradientFactors(const ParamVector& params, const NetworkSpec& spec, const Matrix& X,
                                 GradientScope scope)
    : n_(static_cast<std::size_t>(X.rows())), classes_(spec.num_classes), scope_(scope) {
    if (n_ == 0) throw Error(ErrorKind::invalid_argument, "Gram matrix needs at least one sample");
    const ForwardCache cache = forward_cached(params, spec, X);
    const std::size_t L = spec.num_layers();
    const auto n = static_cast<Eigen::Index>(n_);
    const auto C = static_cast<Eigen::Index>(classes_);

    // deltas[c] = d f_c / d g^l for every sample, starting at the output layer.
    std::vector<Matrix> deltas(classes_);
    for (Eigen::Index c = 0; c < C; ++c) {
        deltas[c] = Matrix::Zero(C, n);
        deltas[c].row(c).setOnes();
    }
    const std::size_t first = scope == GradientScope::full ? 0 : L - 1;
    for (std::size_t l = L; l-- > first;) {
        const double s = spec.layer_scale(l);
        LayerFactors lf;
        lf.scale_sq = s * s;
        lf.has_bias = spec.use_bias;
        lf.inputs = cache.inputs[l];
        lf.deltas = deltas;
        if (!lf.inputs.allFinite()) throw Error(ErrorKind::numeric, "non-finite activations in Gram assembly");
        layers_.push_back(std::move(lf));
        if (l > first) {
            const auto W = layer_weights(params, spec, l);
            for (auto& d : deltas) {
                Matrix back = s * (W.transpose() * d);
                d = back.cwiseProduct(cache.masks[l - 1]);
            }
        }
    }
}

GramMatrix GradientFactors::gram(Reduction reduction) const {
    std::vector<std::size_t> all(n_);
    std::iota(all.begin(), all.end(), std::size_t{0});
    return gram(all, reduction);
}

GramMatrix GradientFactors::gram(std::span<const std::size_t> subset, Reduction reduction) const {
    const auto m = static_cast<Eigen::Index>(subset.size());
    if (m == 0) throw Error(ErrorKind::invalid_argument, "Gram matrix needs at least one sample");
    std::vector<Eigen::Index> idx(subset.begin(), subset.end());
    for (auto i : idx) {
        if (i < 0 || static_cast<std::size_t>(i) >= n_) throw Error(ErrorKind::dimension, "subset index out of range");
    }
    const auto C = static_cast<Eigen::Index>(classes_);
    GramMatrix G;
    G.n = subset.size();
    G.scope = scope_;
    G.block_dim = reduction == Reduction::blocked ? classes_ : 1;
    G.values = Matrix::Zero(m * static_cast<Eigen::Index>(G.block_dim), m * static_cast<Eigen::Index>(G.block_dim));

    for (const auto& lf : layers_) {
        const Matrix H = lf.inputs(Eigen::all, idx);
        Matrix weight = lf.scale_sq * (H.transpose() * H);
        if (lf.has_bias) weight.array() += 1.0;
        std::vector<Matrix> D(classes_);
        for (Eigen::Index c = 0; c < C; ++c) D[c] = lf.deltas[c](Eigen::all, idx);
        if (reduction == Reduction::traced) {
            for (Eigen::Index c = 0; c < C; ++c) {
                G.values.noalias() += (D[c].transpose() * D[c]).cwiseProduct(weight);
            }
        } else {
            for (Eigen::Index c = 0; c < C; ++c) {
                for (Eigen::Index cp = 0; cp < C; ++cp) {
                    const Matrix block = (D[c].transpose() * D[cp]).cwiseProduct(weight);
                    for (Eigen::Index i = 0; i < m; ++i) {
                        for (Eigen::Index j = 0; j < m; ++j) G.values(i * C + c, j * C + cp) += block(i, j);
                    }
                }
            }
        }
    }
    // Products above are symmetric only up to accumulation order.
    G.values = 0.5 * (G.values + G.values.transpose()).eval();
    if (!G.values.allFinite()) throw Error(ErrorKind::numeric, "non-finite Gram matrix entry");
    return G;
}

Matrix GradientFactors::self_block(std::size_t i) const {
    const std::size_t one[] = {i};
    return gram(one, Reduction::blocked).values;
}

GramMatrix empirical_ntk(const ParamVector& params, const NetworkSpec& spec, const Matrix& X, GradientScope scope,
                         Reduction reduction) {
    return GradientFactors(params, spec, X, scope).gram(reduction);
}

EigenDecomposition symmetric_eigen(const Matrix& m) {
    if (m.rows() != m.cols()) throw Error(ErrorKind::dimension, "eigensolver needs a square matrix");
    if (!m.allFinite()) throw Error(ErrorKind::numeric, "matrix has non-finite entries");
    const double scale = m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff();
    const double asym = m.size() == 0 ? 0.0 : (m - m.transpose()).cwiseAbs().maxCoeff();
    if (asym > 1e-10 * std::max(scale, 1e-300)) {
        throw Error(ErrorKind::invalid_argument, "matrix is not symmetric (max asymmetry " + std::to_string(asym) + ")");
    }
    Eigen::SelfAdjointEigenSolver<Matrix> solver(m);
    if (solver.info() != Eigen::Success) throw Error(ErrorKind::numeric, "symmetric eigensolver did not converge");
    EigenDecomposition out;
    out.values = solver.eigenvalues().reverse();
    out.vectors = solver.eigenvectors().rowwise().reverse();
    return out;
}

std::optional<double> min_positive_of(std::span<const double> eigenvalues, double positivity_threshold) {
    if (!(positivity_threshold > 0.0)) {
        throw Error(ErrorKind::invalid_argument, "positivity threshold must be positive");
    }
    if (eigenvalues.empty()) return std::nullopt;
    const double lmax = *std::max_element(eigenvalues.begin(), eigenvalues.end());
    if (!(lmax > 0.0)) return std::nullopt;
    const double cut = positivity_threshold * lmax;
    std::optional<double> best;
    for (double v : eigenvalues) {
        if (v > cut && (!best || v < *best)) best = v;
    }
    return best;
}

Spectrum eigen_spectrum(const GramMatrix& gram, double positivity_threshold) {
    const EigenDecomposition eig = symmetric_eigen(gram.values);
    Spectrum s;
    s.eigenvalues.assign(eig.values.data(), eig.values.data() + eig.values.size());
    s.min_positive = min_positive_of(s.eigenvalues, positivity_threshold);
    s.tolerance_used = s.eigenvalues.empty() ? 0.0 : positivity_threshold * std::max(s.eigenvalues.front(), 0.0);
    return s;
}

std::optional<double> min_positive_eigenvalue(const GramMatrix& gram, double positivity_threshold) {
    if (!(positivity_threshold > 0.0)) {
        throw Error(ErrorKind::invalid_argument, "positivity threshold must be positive");
    }
    return eigen_spectrum(gram, positivity_threshold).min_positive;
}

void write_spectrum_csv(std::ostream& out, const Spectrum& spectrum) {
    out << "eigenvalue\n";
    out.precision(17);
    for (double v : spectrum.eigenvalues) out << v << '\n';
}

}  // namespace crc
