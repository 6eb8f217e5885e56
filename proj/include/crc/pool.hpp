#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "crc/nn.hpp"

namespace crc {

/// Feature rows with class labels in 0..num_classes-1.
struct Dataset {
    Matrix features;  // N x input_dim
    std::vector<int> labels;
    std::size_t num_classes = 0;

    [[nodiscard]] std::size_t size() const noexcept { return labels.size(); }
    void validate() const;
};

/// Pool-based AL state: a labeled/unlabeled partition over a dataset whose
/// unlabeled labels sit behind an access-counting oracle.
class Pool {
public:
    Pool() = default;
    /// Unlabeled indices become the ascending complement of `labeled`.
    Pool(Dataset data, std::vector<std::size_t> labeled);

    [[nodiscard]] const Matrix& features() const noexcept { return data_.features; }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
    [[nodiscard]] std::size_t num_classes() const noexcept { return data_.num_classes; }
    [[nodiscard]] std::size_t input_dim() const noexcept { return static_cast<std::size_t>(data_.features.cols()); }
    [[nodiscard]] std::span<const std::size_t> labeled() const noexcept { return labeled_; }
    [[nodiscard]] std::span<const std::size_t> unlabeled() const noexcept { return unlabeled_; }
    [[nodiscard]] bool is_labeled(std::size_t index) const;

    /// Label of an already-labeled index; throws for unlabeled ones.
    [[nodiscard]] int label_of_labeled(std::size_t index) const;
    /// Reads a hidden label without acquiring it. Every call is counted.
    [[nodiscard]] int peek_hidden_label(std::size_t index) const;
    [[nodiscard]] std::size_t hidden_label_reads() const noexcept { return hidden_reads_; }

    /// Oracle query: moves `indices` from unlabeled to labeled.
    void reveal(std::span<const std::size_t> indices);

    [[nodiscard]] Matrix labeled_features() const;
    [[nodiscard]] std::vector<int> labeled_labels() const;
    [[nodiscard]] Matrix labeled_targets() const;

private:
    Dataset data_;
    std::vector<std::size_t> labeled_;
    std::vector<std::size_t> unlabeled_;
    std::vector<char> is_labeled_;
    mutable std::size_t hidden_reads_ = 0;
};

}  // namespace crc
