#pragma once

// Synthetic datasets, CSV import/export and initial labeled pools.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "crc/pool.hpp"

namespace crc {

/// SplitMix64-mixed child seed; streams keep independent consumers apart.
[[nodiscard]] std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index = 0) noexcept;

/// Half circle of unit radius: center + orientation * (cos t, sin t), t in [0, pi].
struct MoonArc {
    double center_x = 0.0;
    double center_y = 0.0;
    double orientation = 1.0;
};

/// Arms alternate upward and downward arcs in a horizontal chain; arms 0 and
/// 1 are the classic two-moons pair.
[[nodiscard]] MoonArc moon_arc(std::size_t arm);

/// Sample i belongs to arm i % arms; class is the arm index, or arm % 2
/// when `binarize` is set.
[[nodiscard]] Dataset generate_moons(std::size_t n, double noise_sigma, std::size_t arms, std::uint64_t seed,
                                     bool binarize = false);

/// Sample i is drawn around centers.row(i % C) with isotropic sigma.
[[nodiscard]] Dataset generate_blobs(std::size_t n, std::size_t num_classes, const Matrix& centers, double sigma,
                                     std::uint64_t seed);

/// Numeric CSV with a header row. Labels are re-indexed 0..C-1 by first
/// appearance; every other column is a feature. A non-null `label_order`
/// seeds the index assignment and receives any new label strings, so two
/// files can share one labeling.
[[nodiscard]] Dataset load_csv_dataset(const std::filesystem::path& path, const std::string& label_column,
                                       std::vector<std::string>* label_order = nullptr);
[[nodiscard]] Dataset parse_csv_dataset(std::istream& in, const std::string& label_column,
                                        const std::string& source = "<stream>",
                                        std::vector<std::string>* label_order = nullptr);
/// Features as x0..x{d-1}, then the integer `label` column.
void write_csv_dataset(std::ostream& out, const Dataset& data);

/// `per_class` labeled samples per class drawn uniformly at random.
[[nodiscard]] Pool initial_pool(Dataset data, std::size_t per_class, std::uint64_t seed);

struct DatasetSplit {
    Dataset train;
    Dataset test;
};

}  // namespace crc
