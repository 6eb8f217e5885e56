#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "crc/error.hpp"
#include "crc/ntk.hpp"

using namespace crc;

namespace {

Matrix random_rows(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z(0.0, 1.0);
    Matrix X(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < d; ++j) X(i, j) = z(rng);
    return X;
}

// Stacked per-sample Jacobians, row i * C + c.
Matrix stacked_jacobian(const ParamVector& p, const NetworkSpec& spec, const Matrix& X, GradientScope scope) {
    const auto C = static_cast<Eigen::Index>(spec.num_classes);
    Matrix J;
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        const Matrix Ji = jacobian(p, spec, X.row(i).transpose(), scope).values;
        if (J.size() == 0) J.resize(X.rows() * C, Ji.cols());
        J.middleRows(i * C, C) = Ji;
    }
    return J;
}

GramMatrix wrap(const Matrix& m) {
    GramMatrix g;
    g.n = static_cast<std::size_t>(m.rows());
    g.values = m;
    return g;
}

// Roots of the characteristic polynomial of a symmetric 2x2 matrix.
std::vector<double> charpoly_2x2(const Matrix& a) {
    const double tr = a.trace();
    const double det = a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0);
    const double disc = std::sqrt(std::max(0.0, tr * tr / 4.0 - det));
    return {tr / 2.0 + disc, tr / 2.0 - disc};
}

// Trigonometric roots of the characteristic cubic of a symmetric 3x3 matrix.
std::vector<double> charpoly_3x3(const Matrix& a) {
    const double q = a.trace() / 3.0;
    const Matrix b = a - q * Matrix::Identity(3, 3);
    const double p = std::sqrt((b.array().square().sum()) / 6.0);
    if (p == 0.0) return {q, q, q};
    const double r = std::clamp((b / p).determinant() / 2.0, -1.0, 1.0);
    const double phi = std::acos(r) / 3.0;
    const double l1 = q + 2.0 * p * std::cos(phi);
    const double l3 = q + 2.0 * p * std::cos(phi + 2.0 * std::numbers::pi / 3.0);
    return {l1, 3.0 * q - l1 - l3, l3};
}

}  // namespace

TEST_CASE("eigen_spectrum fixtures against characteristic polynomials") {
    const std::vector<Matrix> twos{
        (Matrix(2, 2) << 2, 1, 1, 2).finished(),
        (Matrix(2, 2) << 1, 1, 1, 1).finished(),
        (Matrix(2, 2) << 5, -2, -2, 0.5).finished(),
    };
    for (const auto& m : twos) {
        const Spectrum s = eigen_spectrum(wrap(m));
        const auto oracle = charpoly_2x2(m);
        REQUIRE(s.eigenvalues.size() == 2);
        for (std::size_t k = 0; k < 2; ++k) CHECK(std::abs(s.eigenvalues[k] - oracle[k]) < 1e-10);
    }
    const Spectrum a = eigen_spectrum(wrap((Matrix(2, 2) << 2, 1, 1, 2).finished()));
    CHECK(a.eigenvalues[0] == doctest::Approx(3.0));
    CHECK(a.eigenvalues[1] == doctest::Approx(1.0));

    const std::vector<Matrix> threes{
        Matrix::Identity(3, 3),
        (Matrix(3, 3) << 4, 1, 0, 1, 3, 1, 0, 1, 2).finished(),
        (Matrix(3, 3) << 1, 1, 1, 1, 1, 1, 1, 1, 1).finished(),
        (Matrix(3, 3) << 2, -1, 0.5, -1, 6, 2, 0.5, 2, 1).finished(),
    };
    for (const auto& m : threes) {
        const Spectrum s = eigen_spectrum(wrap(m));
        const auto oracle = charpoly_3x3(m);
        REQUIRE(s.eigenvalues.size() == 3);
        for (std::size_t k = 0; k < 3; ++k) CHECK(std::abs(s.eigenvalues[k] - oracle[k]) < 1e-10);
    }
}

TEST_CASE("min_positive_eigenvalue examples") {
    CHECK(*min_positive_eigenvalue(wrap(Matrix::Identity(3, 3))) == doctest::Approx(1.0));
    CHECK(*min_positive_eigenvalue(wrap((Matrix(2, 2) << 1, 1, 1, 1).finished())) == doctest::Approx(2.0));
    CHECK_FALSE(min_positive_eigenvalue(wrap(Matrix::Zero(3, 3))).has_value());
    CHECK_THROWS_AS((void)min_positive_eigenvalue(wrap(Matrix::Identity(2, 2)), 0.0), Error);

    const std::vector<double> values{4.0, 1e-3, 1e-12};
    CHECK(*min_positive_of(values, 1e-8) == doctest::Approx(1e-3));
    CHECK(*min_positive_of(values, 1e-2) == doctest::Approx(4.0));
}

TEST_CASE("eigensolver rejects asymmetric input and orders output") {
    CHECK_THROWS_AS((void)eigen_spectrum(wrap((Matrix(2, 2) << 1, 2, 0, 1).finished())), Error);
    CHECK_THROWS_AS((void)symmetric_eigen(Matrix::Zero(2, 3)), Error);

    const Matrix X = random_rows(20, 20, 3);
    const Matrix G = X * X.transpose();
    const EigenDecomposition e = symmetric_eigen(G);
    for (Eigen::Index k = 1; k < e.values.size(); ++k) CHECK(e.values[k - 1] >= e.values[k]);
    for (Eigen::Index k = 0; k < e.values.size(); ++k) {
        CHECK((G * e.vectors.col(k) - e.values[k] * e.vectors.col(k)).norm() <= 1e-8 * G.norm());
    }
}

TEST_CASE("linear network NTK is the input inner product") {
    const NetworkSpec spec{3, {}, 1, 1.0, false, false};
    const ParamVector p = init_network(spec, 2);
    const Matrix X = random_rows(5, 3, 4);
    const GramMatrix K = empirical_ntk(p, spec, X, GradientScope::full);
    CHECK((K.values - X * X.transpose()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("factored Gram equals explicit J J^T") {
    for (bool bias : {false, true}) {
        const NetworkSpec spec{3, {7, 5}, 3, 1.0, true, bias};
        const ParamVector p = init_network(spec, 8);
        const Matrix X = random_rows(6, 3, 9);
        for (auto scope : {GradientScope::full, GradientScope::last_layer}) {
            const Matrix J = stacked_jacobian(p, spec, X, scope);
            const Matrix explicit_blocked = J * J.transpose();
            const GramMatrix blocked = empirical_ntk(p, spec, X, scope, Reduction::blocked);
            CHECK(blocked.block_dim == 3);
            CHECK((blocked.values - explicit_blocked).cwiseAbs().maxCoeff() < 1e-10 * explicit_blocked.norm());

            Matrix traced = Matrix::Zero(6, 6);
            for (Eigen::Index i = 0; i < 6; ++i)
                for (Eigen::Index j = 0; j < 6; ++j)
                    for (Eigen::Index c = 0; c < 3; ++c) traced(i, j) += explicit_blocked(i * 3 + c, j * 3 + c);
            const GramMatrix t = empirical_ntk(p, spec, X, scope, Reduction::traced);
            CHECK((t.values - traced).cwiseAbs().maxCoeff() < 1e-10 * traced.norm());
        }
    }
}

TEST_CASE("single sample traced Gram is the squared Jacobian norm") {
    const NetworkSpec spec{2, {6}, 2, 1.0, true, true};
    const ParamVector p = init_network(spec, 12);
    const Matrix X = random_rows(1, 2, 13);
    const GramMatrix K = empirical_ntk(p, spec, X, GradientScope::full);
    REQUIRE(K.values.rows() == 1);
    const double fro = jacobian(p, spec, X.row(0).transpose()).values.squaredNorm();
    CHECK(K.values(0, 0) == doctest::Approx(fro).epsilon(1e-12));
    CHECK(K.values(0, 0) >= 0.0);
}

TEST_CASE("duplicated rows make the traced Gram singular") {
    const NetworkSpec spec{2, {16}, 2, 1.0, true, true};
    const ParamVector p = init_network(spec, 5);
    Matrix X = random_rows(4, 2, 6);
    X.row(3) = X.row(1);
    const GramMatrix K = empirical_ntk(p, spec, X, GradientScope::full);
    CHECK(K.values.row(1) == K.values.row(3));
    const Spectrum s = eigen_spectrum(K);
    CHECK(s.eigenvalues.back() <= 1e-10 * s.eigenvalues.front());
    REQUIRE(s.min_positive.has_value());
    CHECK(*s.min_positive > s.tolerance_used);
}

TEST_CASE("subset Gram matches the Gram of the gathered rows") {
    const NetworkSpec spec{2, {9}, 2, 1.0, true, true};
    const ParamVector p = init_network(spec, 21);
    const Matrix X = random_rows(7, 2, 22);
    const GradientFactors factors(p, spec, X, GradientScope::full);
    const std::vector<std::size_t> subset{4, 0, 4, 6};
    Matrix gathered(4, 2);
    for (std::size_t k = 0; k < subset.size(); ++k) gathered.row(static_cast<Eigen::Index>(k)) = X.row(static_cast<Eigen::Index>(subset[k]));
    for (auto r : {Reduction::traced, Reduction::blocked}) {
        const Matrix a = factors.gram(subset, r).values;
        const Matrix b = empirical_ntk(p, spec, gathered, GradientScope::full, r).values;
        CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12 * b.norm());
    }
    const Matrix blocked = factors.gram(Reduction::blocked).values;
    CHECK((factors.self_block(2) - blocked.block(4, 4, 2, 2)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK_THROWS_AS((void)factors.gram(std::vector<std::size_t>{9}, Reduction::traced), Error);
}

TEST_CASE("single output: traced and blocked agree") {
    const NetworkSpec spec{3, {8}, 1, 1.0, true, true};
    const ParamVector p = init_network(spec, 31);
    const Matrix X = random_rows(5, 3, 32);
    const Matrix a = empirical_ntk(p, spec, X, GradientScope::full, Reduction::traced).values;
    const Matrix b = empirical_ntk(p, spec, X, GradientScope::full, Reduction::blocked).values;
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-13 * a.norm());
}

TEST_CASE("full-scope Gram dominates the last-layer Gram in the PSD order") {
    const NetworkSpec spec{2, {10, 10}, 2, 1.0, true, false};
    const ParamVector p = init_network(spec, 41);
    const Matrix X = random_rows(8, 2, 42);
    const Matrix full = empirical_ntk(p, spec, X, GradientScope::full).values;
    const Matrix last = empirical_ntk(p, spec, X, GradientScope::last_layer).values;
    CHECK(symmetric_eigen(full - last).values.minCoeff() >= -1e-10 * full.norm());
    CHECK(symmetric_eigen(last).values.minCoeff() >= -1e-10 * last.norm());
}

TEST_CASE("spectrum CSV has one eigenvalue per row") {
    const Spectrum s = eigen_spectrum(wrap((Matrix(2, 2) << 2, 1, 1, 2).finished()));
    std::ostringstream out;
    write_spectrum_csv(out, s);
    std::istringstream in(out.str());
    std::string line;
    std::getline(in, line);
    CHECK(line == "eigenvalue");
    std::getline(in, line);
    CHECK(std::stod(line) == doctest::Approx(3.0));
    std::getline(in, line);
    CHECK(std::stod(line) == doctest::Approx(1.0));
}

TEST_CASE("NTK moves less during training as width grows") {
    const Matrix X = random_rows(6, 2, 51);
    const Matrix Y = random_rows(6, 1, 52);
    std::vector<double> drift;
    for (std::size_t width : {32, 512}) {
        double total = 0.0;
        for (std::uint64_t seed = 0; seed < 3; ++seed) {
            const NetworkSpec spec{2, {width}, 1, 1.0, true, false};
            ParamVector p = init_network(spec, seed);
            const Matrix K0 = empirical_ntk(p, spec, X, GradientScope::full).values;
            for (int t = 0; t < 50; ++t) p.values -= 0.05 * grad_mse(p, spec, X, Y);
            const Matrix K1 = empirical_ntk(p, spec, X, GradientScope::full).values;
            total += (K1 - K0).norm() / K0.norm();
        }
        drift.push_back(total);
    }
    CHECK(drift[1] < drift[0]);
}
