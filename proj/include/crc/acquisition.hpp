#pragma once

// Acquisition strategies: batch convergence-rate control (CRC), its
// class-balanced variant, and the random / entropy / confidence / EGL
// baselines. Every strategy returns Q distinct unlabeled indices and leaves
// the pool untouched.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "crc/nn.hpp"
#include "crc/ntk.hpp"
#include "crc/pool.hpp"

namespace crc {

struct GroupScore {
    std::vector<std::size_t> members;
    std::optional<double> score;
    /// Eigenvalues at or below the positivity cut-off (CRC only).
    std::size_t nullity = 0;
};

struct AcquisitionResult {
    std::vector<std::size_t> selected;
    std::vector<GroupScore> group_scores;
    std::string strategy;
    std::uint64_t seed = 0;
};

struct CrcOptions {
    std::size_t query_size = 1;  // Q
    std::size_t group_size = 1;  // G, must divide Q
    std::uint64_t seed = 0;
    GradientScope scope = GradientScope::last_layer;
    Reduction reduction = Reduction::traced;
    double positivity_threshold = kDefaultPositivityThreshold;
};

struct BalancedCrcOptions {
    std::size_t per_class = 1;  // R; the query is R * C samples
    std::uint64_t seed = 0;
    GradientScope scope = GradientScope::last_layer;
    Reduction reduction = Reduction::traced;
    double positivity_threshold = kDefaultPositivityThreshold;
};

/// Partitions a seeded permutation of the unlabeled pool into floor(|U|/G)
/// disjoint groups and scores each by lambda_min^+ of the Gram matrix over
/// labeled + group. Groups rank by nullity, then score, then position;
/// groups without a positive eigenvalue rank last. The Q/G best groups are
/// taken in rank order, skipping any that would add a linearly dependent row
/// to labeled + already taken while enough other groups remain.
[[nodiscard]] AcquisitionResult crc_acquire(const Pool& pool, const ParamVector& params, const NetworkSpec& spec,
                                            const CrcOptions& options);

/// CRC over candidate groups holding exactly R samples of every class. The
/// class split reads hidden labels through the pool's counted oracle.
[[nodiscard]] AcquisitionResult crc_acquire_balanced(const Pool& pool, const ParamVector& params,
                                                     const NetworkSpec& spec, const BalancedCrcOptions& options);

[[nodiscard]] AcquisitionResult random_acquire(const Pool& pool, std::size_t query_size, std::uint64_t seed);
[[nodiscard]] AcquisitionResult entropy_acquire(const Pool& pool, const ParamVector& params, const NetworkSpec& spec,
                                                std::size_t query_size);
[[nodiscard]] AcquisitionResult confidence_acquire(const Pool& pool, const ParamVector& params,
                                                   const NetworkSpec& spec, std::size_t query_size);
/// Expected gradient length of the cross-entropy loss under the model's own
/// posterior, over all layers unless `scope` says otherwise.
[[nodiscard]] AcquisitionResult egl_acquire(const Pool& pool, const ParamVector& params, const NetworkSpec& spec,
                                            std::size_t query_size, GradientScope scope = GradientScope::full);

/// Shannon entropy (nats) of softmax(logits), via log-sum-exp.
[[nodiscard]] double softmax_entropy(const Vector& logits);
/// sum_y p(y) * (p - e_y)^T K (p - e_y) for the C x C self-kernel block K.
[[nodiscard]] double expected_gradient_length(const Vector& logits, const Matrix& self_kernel);

[[nodiscard]] nlohmann::json to_json(const AcquisitionResult& result);
[[nodiscard]] AcquisitionResult acquisition_from_json(const nlohmann::json& j);

}  // namespace crc
