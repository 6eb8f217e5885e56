#include "crc/acquisition.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>

#include "crc/error.hpp"

namespace crc {

namespace {

void require_query(const Pool& pool, std::size_t query_size) {
    if (pool.unlabeled().size() < query_size) {
        throw Error(ErrorKind::insufficient_pool, "pool has " + std::to_string(pool.unlabeled().size()) +
                                                      " unlabeled samples, query needs " + std::to_string(query_size));
    }
}

Matrix rows_of(const Matrix& features, const std::vector<std::size_t>& indices) {
    std::vector<Eigen::Index> idx(indices.begin(), indices.end());
    return features(idx, Eigen::all);
}

/// Indices of the top `count` entries; ties resolved toward lower position.
std::vector<std::size_t> top_positions(const std::vector<double>& values, std::size_t count, bool descending) {
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return descending ? values[a] > values[b] : values[a] < values[b];
    });
    order.resize(count);
    return order;
}

std::size_t nullity_of(const Spectrum& s) {
    return static_cast<std::size_t>(std::count_if(s.eigenvalues.begin(), s.eigenvalues.end(),
                                                  [&](double v) { return !(v > s.tolerance_used); }));
}

/// Shared by both CRC variants: score candidate groups against the labeled
/// set and keep the `keep` best.
AcquisitionResult score_groups(const Pool& pool, const ParamVector& params, const NetworkSpec& spec,
                               std::vector<std::vector<std::size_t>> groups, std::size_t keep, GradientScope scope,
                               Reduction reduction, double threshold) {
    AcquisitionResult result;
    if (groups.empty() || keep == 0) return result;

    const auto labeled = pool.labeled();
    std::vector<std::size_t> rows(labeled.begin(), labeled.end());
    const std::size_t n_labeled = rows.size();
    for (const auto& g : groups) rows.insert(rows.end(), g.begin(), g.end());
    const GradientFactors factors(params, spec, rows_of(pool.features(), rows), scope);

    std::vector<std::size_t> subset(n_labeled);
    std::iota(subset.begin(), subset.end(), std::size_t{0});
    std::vector<std::size_t> offsets;
    std::size_t cursor = n_labeled;
    result.group_scores.reserve(groups.size());
    for (auto& g : groups) {
        subset.resize(n_labeled);
        offsets.push_back(cursor);
        for (std::size_t k = 0; k < g.size(); ++k) subset.push_back(cursor + k);
        cursor += g.size();
        const Spectrum s = eigen_spectrum(factors.gram(subset, reduction), threshold);
        result.group_scores.push_back({std::move(g), s.min_positive, nullity_of(s)});
    }

    std::vector<std::size_t> order(result.group_scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const auto& ga = result.group_scores[a];
        const auto& gb = result.group_scores[b];
        if (ga.score.has_value() != gb.score.has_value()) return ga.score.has_value();
        if (ga.nullity != gb.nullity) return ga.nullity < gb.nullity;
        return ga.score.has_value() && *ga.score > *gb.score;
    });

    // Take groups in rank order unless one adds a dependent row to the batch.
    std::vector<std::size_t> batch(n_labeled);
    std::iota(batch.begin(), batch.end(), std::size_t{0});
    std::size_t batch_nullity = batch.empty() ? 0 : nullity_of(eigen_spectrum(factors.gram(batch, reduction), threshold));
    std::vector<std::size_t> taken;
    std::vector<std::size_t> deferred;
    for (const auto pos : order) {
        if (taken.size() == keep) break;
        std::vector<std::size_t> trial = batch;
        for (std::size_t k = 0; k < result.group_scores[pos].members.size(); ++k) trial.push_back(offsets[pos] + k);
        const std::size_t trial_nullity = nullity_of(eigen_spectrum(factors.gram(trial, reduction), threshold));
        if (trial_nullity > batch_nullity) {
            deferred.push_back(pos);
            continue;
        }
        batch = std::move(trial);
        batch_nullity = trial_nullity;
        taken.push_back(pos);
    }
    // Fill from the deferred groups, each time the one whose addition leaves
    // the largest smallest eigenvalue.
    while (taken.size() < keep) {
        std::size_t best = 0;
        double best_value = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < deferred.size(); ++k) {
            std::vector<std::size_t> trial = batch;
            const std::size_t pos = deferred[k];
            for (std::size_t j = 0; j < result.group_scores[pos].members.size(); ++j) trial.push_back(offsets[pos] + j);
            const double lowest = eigen_spectrum(factors.gram(trial, reduction), threshold).eigenvalues.back();
            if (lowest > best_value) {
                best_value = lowest;
                best = k;
            }
        }
        const std::size_t pos = deferred[best];
        for (std::size_t j = 0; j < result.group_scores[pos].members.size(); ++j) batch.push_back(offsets[pos] + j);
        deferred.erase(deferred.begin() + static_cast<std::ptrdiff_t>(best));
        taken.push_back(pos);
    }
    for (const auto pos : taken) {
        const auto& members = result.group_scores[pos].members;
        result.selected.insert(result.selected.end(), members.begin(), members.end());
    }
    return result;
}

Matrix unlabeled_logits(const Pool& pool, const ParamVector& params, const NetworkSpec& spec) {
    const auto u = pool.unlabeled();
    return forward_batch(params, spec, rows_of(pool.features(), {u.begin(), u.end()}));
}

AcquisitionResult rank_unlabeled(const Pool& pool, const std::vector<double>& scores, std::size_t query_size,
                                 bool descending, std::string name) {
    AcquisitionResult result;
    result.strategy = std::move(name);
    const auto u = pool.unlabeled();
    for (auto pos : top_positions(scores, query_size, descending)) result.selected.push_back(u[pos]);
    result.group_scores.reserve(u.size());
    for (std::size_t k = 0; k < u.size(); ++k) result.group_scores.push_back({{u[k]}, scores[k]});
    return result;
}

}  // namespace

AcquisitionResult crc_acquire(const Pool& pool, const ParamVector& params, const NetworkSpec& spec,
                              const CrcOptions& options) {
    const std::size_t Q = options.query_size;
    const std::size_t G = options.group_size;
    if (Q == 0 || G == 0) throw Error(ErrorKind::invalid_argument, "query and group size must be positive");
    if (Q % G != 0) {
        throw Error(ErrorKind::invalid_argument,
                    "group size " + std::to_string(G) + " does not divide query size " + std::to_string(Q));
    }
    require_query(pool, Q);

    std::vector<std::size_t> perm(pool.unlabeled().begin(), pool.unlabeled().end());
    std::mt19937_64 rng(options.seed);
    std::shuffle(perm.begin(), perm.end(), rng);

    // A remainder smaller than G is dropped for this round.
    std::vector<std::vector<std::size_t>> groups(perm.size() / G);
    for (std::size_t k = 0; k < groups.size(); ++k) {
        groups[k].assign(perm.begin() + static_cast<std::ptrdiff_t>(k * G),
                         perm.begin() + static_cast<std::ptrdiff_t>((k + 1) * G));
    }
    AcquisitionResult result = score_groups(pool, params, spec, std::move(groups), Q / G, options.scope,
                                            options.reduction, options.positivity_threshold);
    result.strategy = "crc";
    result.seed = options.seed;
    return result;
}

AcquisitionResult crc_acquire_balanced(const Pool& pool, const ParamVector& params, const NetworkSpec& spec,
                                       const BalancedCrcOptions& options) {
    AcquisitionResult result;
    result.strategy = "crc_balanced";
    result.seed = options.seed;
    const std::size_t R = options.per_class;
    if (R == 0) return result;

    std::vector<std::vector<std::size_t>> by_class(pool.num_classes());
    for (auto i : pool.unlabeled()) {
        by_class[static_cast<std::size_t>(pool.peek_hidden_label(i))].push_back(i);
    }
    std::mt19937_64 rng(options.seed);
    std::size_t num_groups = pool.unlabeled().size();
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        if (by_class[c].size() < R) {
            throw Error(ErrorKind::class_exhausted, "class " + std::to_string(c) + " has " +
                                                        std::to_string(by_class[c].size()) +
                                                        " unlabeled samples, need " + std::to_string(R));
        }
        std::shuffle(by_class[c].begin(), by_class[c].end(), rng);
        num_groups = std::min(num_groups, by_class[c].size() / R);
    }

    std::vector<std::vector<std::size_t>> groups(num_groups);
    for (std::size_t k = 0; k < num_groups; ++k) {
        for (const auto& members : by_class) {
            groups[k].insert(groups[k].end(), members.begin() + static_cast<std::ptrdiff_t>(k * R),
                             members.begin() + static_cast<std::ptrdiff_t>((k + 1) * R));
        }
    }
    AcquisitionResult scored = score_groups(pool, params, spec, std::move(groups), 1, options.scope,
                                            options.reduction, options.positivity_threshold);
    result.selected = std::move(scored.selected);
    result.group_scores = std::move(scored.group_scores);
    return result;
}

AcquisitionResult random_acquire(const Pool& pool, std::size_t query_size, std::uint64_t seed) {
    require_query(pool, query_size);
    std::vector<std::size_t> perm(pool.unlabeled().begin(), pool.unlabeled().end());
    std::mt19937_64 rng(seed);
    std::shuffle(perm.begin(), perm.end(), rng);
    perm.resize(query_size);
    AcquisitionResult result;
    result.strategy = "random";
    result.seed = seed;
    result.selected = std::move(perm);
    return result;
}

double softmax_entropy(const Vector& logits) {
    const double m = logits.maxCoeff();
    const double lse = m + std::log((logits.array() - m).exp().sum());
    const Vector p = (logits.array() - lse).exp().matrix();
    return lse - p.dot(logits);
}

AcquisitionResult entropy_acquire(const Pool& pool, const ParamVector& params, const NetworkSpec& spec,
                                  std::size_t query_size) {
    require_query(pool, query_size);
    const Matrix logits = unlabeled_logits(pool, params, spec);
    std::vector<double> scores(static_cast<std::size_t>(logits.rows()));
    for (Eigen::Index i = 0; i < logits.rows(); ++i) scores[i] = softmax_entropy(logits.row(i).transpose());
    return rank_unlabeled(pool, scores, query_size, true, "entropy");
}

AcquisitionResult confidence_acquire(const Pool& pool, const ParamVector& params, const NetworkSpec& spec,
                                     std::size_t query_size) {
    require_query(pool, query_size);
    const Matrix logits = unlabeled_logits(pool, params, spec);
    std::vector<double> scores(static_cast<std::size_t>(logits.rows()));
    for (Eigen::Index i = 0; i < logits.rows(); ++i) scores[i] = softmax(logits.row(i).transpose()).maxCoeff();
    return rank_unlabeled(pool, scores, query_size, false, "confidence");
}

double expected_gradient_length(const Vector& logits, const Matrix& self_kernel) {
    const Vector p = softmax(logits);
    double total = 0.0;
    for (Eigen::Index y = 0; y < p.size(); ++y) {
        Vector r = p;
        r[y] -= 1.0;
        total += p[y] * r.dot(self_kernel * r);
    }
    return total;
}

AcquisitionResult egl_acquire(const Pool& pool, const ParamVector& params, const NetworkSpec& spec,
                              std::size_t query_size, GradientScope scope) {
    require_query(pool, query_size);
    const auto u = pool.unlabeled();
    std::vector<double> scores(u.size());
    if (!u.empty()) {
        const Matrix X = rows_of(pool.features(), {u.begin(), u.end()});
        const Matrix logits = forward_batch(params, spec, X);
        const GradientFactors factors(params, spec, X, scope);
        for (std::size_t i = 0; i < u.size(); ++i) {
            scores[i] = expected_gradient_length(logits.row(static_cast<Eigen::Index>(i)).transpose(),
                                                 factors.self_block(i));
        }
    }
    return rank_unlabeled(pool, scores, query_size, true, "egl");
}

nlohmann::json to_json(const AcquisitionResult& result) {
    nlohmann::json groups = nlohmann::json::array();
    for (const auto& g : result.group_scores) {
        groups.push_back({{"members", g.members},
                          {"score", g.score ? nlohmann::json(*g.score) : nlohmann::json(nullptr)},
                          {"nullity", g.nullity}});
    }
    return {{"strategy", result.strategy}, {"seed", result.seed}, {"selected", result.selected}, {"groups", groups}};
}

AcquisitionResult acquisition_from_json(const nlohmann::json& j) {
    AcquisitionResult r;
    r.strategy = j.at("strategy").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.selected = j.at("selected").get<std::vector<std::size_t>>();
    for (const auto& g : j.at("groups")) {
        GroupScore gs;
        gs.members = g.at("members").get<std::vector<std::size_t>>();
        if (!g.at("score").is_null()) gs.score = g.at("score").get<double>();
        gs.nullity = g.value("nullity", std::size_t{0});
        r.group_scores.push_back(std::move(gs));
    }
    return r;
}

}  // namespace crc
