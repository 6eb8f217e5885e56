#include "crc/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

#include "crc/error.hpp"

namespace crc {

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index) noexcept {
    auto mix = [](std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    };
    return mix(mix(mix(master) ^ stream) ^ index);
}

MoonArc moon_arc(std::size_t arm) {
    const bool down = arm % 2 == 1;
    return {3.5 * static_cast<double>(arm / 2) + (down ? 1.0 : 0.0), down ? 0.5 : 0.0, down ? -1.0 : 1.0};
}

Dataset generate_moons(std::size_t n, double noise_sigma, std::size_t arms, std::uint64_t seed, bool binarize) {
    if (arms != 2 && arms != 4) throw Error(ErrorKind::invalid_argument, "moons need 2 or 4 arms");
    if (n < arms) throw Error(ErrorKind::invalid_argument, "moons need at least one point per arm");
    if (!(noise_sigma >= 0.0)) throw Error(ErrorKind::invalid_argument, "noise sigma must be >= 0");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
    std::normal_distribution<double> noise(0.0, 1.0);
    Dataset d;
    d.features.resize(static_cast<Eigen::Index>(n), 2);
    d.labels.resize(n);
    d.num_classes = binarize ? 2 : arms;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t arm = i % arms;
        const MoonArc arc = moon_arc(arm);
        const double t = angle(rng);
        const double nx = noise(rng);
        const double ny = noise(rng);
        const auto row = static_cast<Eigen::Index>(i);
        d.features(row, 0) = arc.center_x + arc.orientation * std::cos(t) + noise_sigma * nx;
        d.features(row, 1) = arc.center_y + arc.orientation * std::sin(t) + noise_sigma * ny;
        d.labels[i] = static_cast<int>(binarize ? arm % 2 : arm);
    }
    return d;
}

Dataset generate_blobs(std::size_t n, std::size_t num_classes, const Matrix& centers, double sigma,
                       std::uint64_t seed) {
    if (num_classes == 0 || static_cast<std::size_t>(centers.rows()) != num_classes || centers.cols() == 0) {
        throw Error(ErrorKind::invalid_argument, "blobs need one center row per class");
    }
    if (!(sigma >= 0.0)) throw Error(ErrorKind::invalid_argument, "blob sigma must be >= 0");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    Dataset d;
    d.features.resize(static_cast<Eigen::Index>(n), centers.cols());
    d.labels.resize(n);
    d.num_classes = num_classes;
    for (std::size_t i = 0; i < n; ++i) {
        const auto c = static_cast<Eigen::Index>(i % num_classes);
        for (Eigen::Index j = 0; j < centers.cols(); ++j) {
            d.features(static_cast<Eigen::Index>(i), j) = centers(c, j) + sigma * noise(rng);
        }
        d.labels[i] = static_cast<int>(c);
    }
    return d;
}

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(trim(cell));
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

}  // namespace

Dataset parse_csv_dataset(std::istream& in, const std::string& label_column, const std::string& source,
                          std::vector<std::string>* label_order) {
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorKind::parse, source + ": missing header row");
    const auto header = split_csv_line(line);
    const auto label_it = std::find(header.begin(), header.end(), label_column);
    if (label_it == header.end()) {
        throw Error(ErrorKind::parse, source + ": missing label column '" + label_column + "'");
    }
    const auto label_col = static_cast<std::size_t>(label_it - header.begin());

    std::vector<std::vector<double>> rows;
    std::vector<int> labels;
    std::map<std::string, int> label_ids;
    if (label_order != nullptr) {
        for (const auto& name : *label_order) label_ids.try_emplace(name, static_cast<int>(label_ids.size()));
    }
    std::size_t row_number = 0;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        ++row_number;
        const auto cells = split_csv_line(line);
        if (cells.size() != header.size()) {
            throw Error(ErrorKind::parse, source + ": row " + std::to_string(row_number) + " has " +
                                              std::to_string(cells.size()) + " cells, header has " +
                                              std::to_string(header.size()));
        }
        std::vector<double> features;
        for (std::size_t c = 0; c < cells.size(); ++c) {
            double value = 0.0;
            const auto& cell = cells[c];
            const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
            if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(value)) {
                throw Error(ErrorKind::parse, source + ": row " + std::to_string(row_number) + ", column '" +
                                                  header[c] + "': non-numeric cell '" + cell + "'");
            }
            if (c == label_col) {
                const auto [it, inserted] = label_ids.try_emplace(cell, static_cast<int>(label_ids.size()));
                if (inserted && label_order != nullptr) label_order->push_back(cell);
                labels.push_back(it->second);
            } else {
                features.push_back(value);
            }
        }
        rows.push_back(std::move(features));
    }
    Dataset d;
    d.num_classes = label_ids.size();
    d.labels = std::move(labels);
    d.features.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(header.size() - 1));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < rows[i].size(); ++j) {
            d.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
        }
    }
    if (d.size() == 0) throw Error(ErrorKind::parse, source + ": no data rows");
    return d;
}

Dataset load_csv_dataset(const std::filesystem::path& path, const std::string& label_column,
                         std::vector<std::string>* label_order) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
    return parse_csv_dataset(in, label_column, path.string(), label_order);
}

void write_csv_dataset(std::ostream& out, const Dataset& data) {
    for (Eigen::Index j = 0; j < data.features.cols(); ++j) out << 'x' << j << ',';
    out << "label\n";
    char buf[64];
    for (std::size_t i = 0; i < data.size(); ++i) {
        for (Eigen::Index j = 0; j < data.features.cols(); ++j) {
            const auto res = std::to_chars(buf, buf + sizeof buf, data.features(static_cast<Eigen::Index>(i), j));
            out.write(buf, res.ptr - buf);
            out << ',';
        }
        out << data.labels[i] << '\n';
    }
}

Pool initial_pool(Dataset data, std::size_t per_class, std::uint64_t seed) {
    data.validate();
    std::vector<std::vector<std::size_t>> by_class(data.num_classes);
    for (std::size_t i = 0; i < data.size(); ++i) by_class[static_cast<std::size_t>(data.labels[i])].push_back(i);
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> labeled;
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        if (by_class[c].size() < per_class) {
            throw Error(ErrorKind::insufficient_pool, "class " + std::to_string(c) + " has " +
                                                          std::to_string(by_class[c].size()) + " samples, need " +
                                                          std::to_string(per_class));
        }
        std::shuffle(by_class[c].begin(), by_class[c].end(), rng);
        labeled.insert(labeled.end(), by_class[c].begin(), by_class[c].begin() + static_cast<std::ptrdiff_t>(per_class));
    }
    return Pool(std::move(data), std::move(labeled));
}

}  // namespace crc
