#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "crc/diagnostics.hpp"
#include "crc/error.hpp"

namespace crc {

namespace {

std::string fmt(double v) {
    std::ostringstream o;
    o.precision(3);
    o << v;
    return o.str();
}

[[noreturn]] void fail(const std::string& detail) { throw Error(ErrorKind::numeric, detail); }

Matrix random_psd(std::size_t n, std::mt19937_64& rng) {
    std::normal_distribution<double> z(0.0, 1.0);
    Matrix a(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = z(rng);
    return a * a.transpose() / static_cast<double>(n);
}

std::string check_jacobian(std::uint64_t seed) {
    double worst = 0.0;
    for (std::uint64_t k = 0; k < 10; ++k) {
        NetworkSpec spec{3, {8, 6}, 3, 1.0, true, k % 2 == 1};
        const ParamVector p = init_network(spec, derive_seed(seed, 100, k));
        std::mt19937_64 rng(derive_seed(seed, 101, k));
        std::normal_distribution<double> z(0.0, 1.0);
        Vector x(3);
        for (auto& v : x) v = z(rng);
        const Matrix a = jacobian(p, spec, x, GradientScope::full).values;
        const Matrix b = finite_diff_jacobian(p, spec, x, 1e-5).values;
        worst = std::max(worst, (a - b).cwiseAbs().maxCoeff() / std::max(1.0, b.cwiseAbs().maxCoeff()));
    }
    if (worst > 1e-4) fail("relative error " + fmt(worst));
    return "max relative error " + fmt(worst);
}

std::string check_gram(std::uint64_t seed) {
    NetworkSpec spec{2, {10, 7}, 2, 1.0, true, true};
    const ParamVector p = init_network(spec, derive_seed(seed, 110));
    std::mt19937_64 rng(derive_seed(seed, 111));
    std::normal_distribution<double> z(0.0, 1.0);
    Matrix X(5, 2);
    for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = z(rng);
    const GramMatrix g = empirical_ntk(p, spec, X, GradientScope::full, Reduction::blocked);
    Matrix J(10, static_cast<Eigen::Index>(p.size()));
    for (Eigen::Index i = 0; i < 5; ++i) J.middleRows(2 * i, 2) = jacobian(p, spec, X.row(i).transpose(), GradientScope::full).values;
    const double err = (g.values - J * J.transpose()).norm() / (J * J.transpose()).norm();
    const double min_eig = symmetric_eigen(g.values).values.minCoeff();
    if (err > 1e-12 || min_eig < -1e-10 * g.values.norm()) {
        fail("factored vs explicit " + fmt(err) + ", min eigenvalue " + fmt(min_eig));
    }
    return "factored vs explicit J J^T " + fmt(err);
}

std::string check_eigen(std::uint64_t seed) {
    std::mt19937_64 rng(derive_seed(seed, 120));
    double worst = 0.0;
    for (std::size_t n : {1, 2, 7, 32, 96}) {
        const Matrix m = random_psd(n, rng);
        const EigenDecomposition e = symmetric_eigen(m);
        for (Eigen::Index k = 0; k < e.values.size(); ++k) {
            worst = std::max(worst, (m * e.vectors.col(k) - e.values[k] * e.vectors.col(k)).norm() / m.norm());
        }
        if (!std::is_sorted(e.values.data(), e.values.data() + e.values.size(), std::greater<>())) {
            fail("eigenvalues not in nonincreasing order");
        }
    }
    if (worst > 1e-8) fail("residual " + fmt(worst));
    return "max ||Gv - lv|| / ||G|| = " + fmt(worst);
}

std::string check_flow_ode(std::uint64_t seed) {
    std::mt19937_64 rng(derive_seed(seed, 130));
    std::normal_distribution<double> z(0.0, 1.0);
    const Matrix K = random_psd(5, rng);
    Vector y(5);
    Vector f0(5);
    for (auto& v : y) v = z(rng);
    for (auto& v : f0) v = z(rng);
    const KernelFlow flow = make_kernel_flow(K, y, f0);
    const double t = 0.7;
    const Vector f = kernel_flow_solution(flow, t);
    const Vector rhs = -K * (f - y);
    const double e1 = ((kernel_flow_solution(flow, t + 1e-3) - f) / 1e-3 - rhs).norm();
    const double e2 = ((kernel_flow_solution(flow, t + 5e-4) - f) / 5e-4 - rhs).norm();
    const double ratio = e1 / e2;
    if (std::abs(ratio - 2.0) > 0.6) fail("halving h changed the error by " + fmt(ratio));
    return "error ratio under halving h " + fmt(ratio);
}

std::string check_mode_decay(std::uint64_t seed) {
    std::mt19937_64 rng(derive_seed(seed, 140));
    std::normal_distribution<double> z(0.0, 1.0);
    const Matrix K = random_psd(6, rng);
    Vector y(6);
    Vector f0(6);
    for (auto& v : y) v = z(rng);
    for (auto& v : f0) v = z(rng);
    const KernelFlow flow = make_kernel_flow(K, y, f0);
    double worst = 0.0;
    for (double t : {0.1, 1.0, 3.0}) {
        const Vector err = kernel_flow_solution(flow, t) - y;
        for (Eigen::Index k = 0; k < 6; ++k) {
            const Vector v = flow.eigen.vectors.col(k);
            const double expected = v.dot(f0 - y) * std::exp(-flow.eigen.values[k] * t);
            worst = std::max(worst, std::abs(v.dot(err) - expected) / std::max(std::abs(expected), 1e-12));
        }
    }
    if (worst > 1e-8) fail("relative mode error " + fmt(worst));
    return "max relative mode error " + fmt(worst);
}

std::string check_spearman(std::uint64_t seed) {
    std::mt19937_64 rng(derive_seed(seed, 150));
    std::uniform_int_distribution<int> small(0, 5);
    double worst = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 5 + static_cast<std::size_t>(trial % 20);
        std::vector<double> a(n);
        std::vector<double> b(n);
        for (auto& v : a) v = small(rng);
        for (auto& v : b) v = small(rng);
        // Brute-force ranks: 1 + #smaller + (#equal - 1) / 2.
        auto ranks = [](const std::vector<double>& v) {
            std::vector<double> r(v.size());
            for (std::size_t i = 0; i < v.size(); ++i) {
                double less = 0.0;
                double equal = 0.0;
                for (double w : v) {
                    less += w < v[i];
                    equal += w == v[i];
                }
                r[i] = 1.0 + less + (equal - 1.0) / 2.0;
            }
            return r;
        };
        const auto ra = ranks(a);
        const auto rb = ranks(b);
        const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / static_cast<double>(n);
        const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / static_cast<double>(n);
        double sab = 0.0;
        double saa = 0.0;
        double sbb = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            sab += (ra[i] - ma) * (rb[i] - mb);
            saa += (ra[i] - ma) * (ra[i] - ma);
            sbb += (rb[i] - mb) * (rb[i] - mb);
        }
        const double expected = (saa == 0.0 || sbb == 0.0) ? 0.0 : sab / std::sqrt(saa * sbb);
        worst = std::max(worst, std::abs(horizon_correlation(a, b) - expected));
    }
    if (worst > 1e-12) fail("max deviation " + fmt(worst));
    return "max deviation from brute force " + fmt(worst);
}

std::string check_recursion(std::uint64_t seed) {
    Dataset d = generate_blobs(8, 1, Matrix::Zero(1, 4), 1.0, derive_seed(seed, 160));
    NetworkSpec spec{4, {64}, 1, 1.0, true, false};
    std::vector<std::size_t> all(8);
    std::iota(all.begin(), all.end(), 0);
    const Pool pool(d, all);
    TrainConfig cfg;
    cfg.step_size = 0.05;
    cfg.max_steps = 30;
    cfg.instrument = true;
    const TrainResult r = train_supervised(init_network(spec, derive_seed(seed, 162)), spec, pool, cfg);
    const RecursionReport rep = verify_recursion(r.trace);
    if (rep.max_relative_identity > 1e-9 || rep.max_relative_residual > 1e-9) {
        fail("identity " + fmt(rep.max_relative_identity) + ", inequality " + fmt(rep.max_relative_residual));
    }
    return "identity " + fmt(rep.max_relative_identity) + ", inequality " + fmt(rep.max_relative_residual);
}

std::string check_oracle_hygiene(std::uint64_t seed) {
    const Dataset d = generate_moons(60, 0.1, 4, derive_seed(seed, 170));
    NetworkSpec spec{2, {16}, 4, 1.0, true, false};
    const ParamVector p = init_network(spec, derive_seed(seed, 171));
    for (auto kind : {StrategyKind::random, StrategyKind::entropy, StrategyKind::confidence, StrategyKind::egl,
                      StrategyKind::crc}) {
        const Pool pool = initial_pool(d, 1, derive_seed(seed, 172));
        StrategyConfig s;
        s.kind = kind;
        s.query_size = 4;
        s.group_size = 2;
        (void)acquire(s, pool, p, spec, seed);
        if (pool.hidden_label_reads() != 0) fail(to_string(kind) + " read hidden labels");
    }
    const Pool pool = initial_pool(d, 1, derive_seed(seed, 172));
    StrategyConfig s;
    s.kind = StrategyKind::crc_balanced;
    (void)acquire(s, pool, p, spec, seed);
    if (pool.hidden_label_reads() == 0) fail("balanced CRC did not go through the counted oracle");
    return "baselines and CRC read 0 hidden labels";
}

std::string check_duplicates(std::uint64_t seed) {
    const Dataset half = generate_moons(100, 0.1, 2, derive_seed(seed, 180));
    Dataset d;
    d.num_classes = 2;
    d.features.resize(200, 2);
    d.features << half.features, half.features;
    d.labels = half.labels;
    d.labels.insert(d.labels.end(), half.labels.begin(), half.labels.end());
    const Pool pool(d, {0, 1});
    NetworkSpec spec{2, {32}, 2, 1.0, true, false};
    const ParamVector p = init_network(spec, derive_seed(seed, 181));
    for (std::size_t g : {1, 2, 5}) {
        const auto r = crc_acquire(pool, p, spec, {10, g, seed, GradientScope::last_layer, Reduction::traced});
        std::set<std::size_t> base;
        for (auto i : r.selected) {
            if (!base.insert(i % 100).second) fail("duplicate pair selected with G=" + std::to_string(g));
            if (i % 100 < 2) fail("copy of a labeled point selected with G=" + std::to_string(g));
        }
    }
    return "no duplicate or labeled copies for G in {1,2,5}";
}

std::string check_assl(std::uint64_t seed) {
    ExperimentConfig cfg;
    cfg.dataset.n = 80;
    cfg.network.hidden_widths = {16};
    cfg.train.step_size = 0.02;
    cfg.train.max_steps = 30;
    cfg.train.trace_every = 5;
    cfg.strategy.kind = StrategyKind::crc;
    cfg.strategy.query_size = 4;
    cfg.strategy.group_size = 2;
    cfg.num_acquisitions = 2;
    auto a = run_assl(cfg, seed).record;
    auto b = run_assl(cfg, seed).record;
    for (auto* rec : {&a, &b}) {
        for (auto& r : rec->rounds) r.train_seconds = r.acquire_seconds = 0.0;
    }
    if (to_json(a) != to_json(b)) fail("identical config and seed produced different records");
    std::set<std::size_t> seen;
    for (std::size_t r = 0; r < a.rounds.size(); ++r) {
        if (a.rounds[r].labeled_size != 4 + 4 * r) fail("labeled size did not grow by Q");
        for (auto i : a.rounds[r].selected) {
            if (!seen.insert(i).second) fail("index acquired twice");
        }
    }
    return "records identical, labeled size 4 + 4k";
}

}  // namespace

std::vector<CheckResult> run_property_suite(std::uint64_t seed) {
    const std::vector<std::pair<std::string, std::function<std::string(std::uint64_t)>>> checks = {
        {"jacobian_matches_finite_differences", check_jacobian},
        {"gram_equals_explicit_jjt_and_is_psd", check_gram},
        {"eigenpairs_have_small_residual", check_eigen},
        {"kernel_flow_satisfies_ode", check_flow_ode},
        {"kernel_flow_modes_decouple", check_mode_decay},
        {"spearman_matches_brute_force", check_spearman},
        {"loss_recursion_holds", check_recursion},
        {"oracle_hygiene", check_oracle_hygiene},
        {"crc_avoids_duplicates", check_duplicates},
        {"assl_reproducible_and_monotone", check_assl},
    };
    std::vector<CheckResult> results;
    for (const auto& [name, fn] : checks) {
        try {
            results.push_back({name, true, fn(seed)});
        } catch (const std::exception& e) {
            results.push_back({name, false, e.what()});
        }
    }
    return results;
}

}  // namespace crc
