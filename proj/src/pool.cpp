#include "crc/pool.hpp"

#include <string>

#include "crc/error.hpp"

namespace crc {

void Dataset::validate() const {
    if (static_cast<std::size_t>(features.rows()) != labels.size()) {
        throw Error(ErrorKind::dimension, "feature rows and label count differ");
    }
    if (num_classes == 0) throw Error(ErrorKind::invalid_argument, "dataset has no classes");
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
            throw Error(ErrorKind::invalid_argument, "label " + std::to_string(y) + " out of range");
        }
    }
}

Pool::Pool(Dataset data, std::vector<std::size_t> labeled) : data_(std::move(data)) {
    data_.validate();
    is_labeled_.assign(data_.size(), 0);
    for (auto i : labeled) {
        if (i >= data_.size()) throw Error(ErrorKind::invalid_argument, "labeled index out of range");
        if (is_labeled_[i]) throw Error(ErrorKind::invalid_argument, "labeled index repeated");
        is_labeled_[i] = 1;
    }
    labeled_ = std::move(labeled);
    for (std::size_t i = 0; i < data_.size(); ++i) {
        if (!is_labeled_[i]) unlabeled_.push_back(i);
    }
}

bool Pool::is_labeled(std::size_t index) const {
    if (index >= size()) throw Error(ErrorKind::invalid_argument, "pool index out of range");
    return is_labeled_[index] != 0;
}

int Pool::label_of_labeled(std::size_t index) const {
    if (!is_labeled(index)) {
        throw Error(ErrorKind::invalid_argument, "index " + std::to_string(index) + " is not labeled");
    }
    return data_.labels[index];
}

int Pool::peek_hidden_label(std::size_t index) const {
    if (index >= size()) throw Error(ErrorKind::invalid_argument, "pool index out of range");
    ++hidden_reads_;
    return data_.labels[index];
}

void Pool::reveal(std::span<const std::size_t> indices) {
    for (auto i : indices) {
        if (is_labeled(i)) throw Error(ErrorKind::invalid_argument, "index " + std::to_string(i) + " already labeled");
        is_labeled_[i] = 1;
        labeled_.push_back(i);
    }
    std::erase_if(unlabeled_, [this](std::size_t i) { return is_labeled_[i] != 0; });
}

Matrix Pool::labeled_features() const {
    std::vector<Eigen::Index> idx(labeled_.begin(), labeled_.end());
    return data_.features(idx, Eigen::all);
}

std::vector<int> Pool::labeled_labels() const {
    std::vector<int> out;
    out.reserve(labeled_.size());
    for (auto i : labeled_) out.push_back(data_.labels[i]);
    return out;
}

Matrix Pool::labeled_targets() const { return one_hot(labeled_labels(), num_classes()); }

}  // namespace crc
