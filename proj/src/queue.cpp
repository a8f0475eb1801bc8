#include "ccm/queue.hpp"

#include <string>

namespace ccm {

KnowledgeQueue::KnowledgeQueue(int batch_size, int num_domains, int feature_dim, int multiple) {
    if (batch_size < 1 || num_domains < 1 || feature_dim < 1 || multiple < 1) {
        throw ConfigError("KnowledgeQueue: all sizing arguments must be positive (batch_size=" +
                          std::to_string(batch_size) + ", num_domains=" +
                          std::to_string(num_domains) + ", feature_dim=" +
                          std::to_string(feature_dim) + ", multiple=" +
                          std::to_string(multiple) + ")");
    }
    capacity_ = multiple * batch_size * num_domains;
    dim_ = feature_dim;
    storage_ = Mat::Zero(capacity_, dim_);
    labels_.assign(static_cast<std::size_t>(capacity_), 0);
}

KnowledgeQueue KnowledgeQueue::with_capacity(int capacity, int feature_dim) {
    return KnowledgeQueue(capacity, 1, feature_dim, 1);
}

void KnowledgeQueue::push_batch(const Mat& features, const std::vector<int>& labels) {
    if (capacity_ == 0) throw StateError("push_batch: queue is uninitialized");
    const int batch = static_cast<int>(features.rows());
    if (batch != static_cast<int>(labels.size())) {
        throw ShapeError("push_batch: " + std::to_string(batch) + " feature rows but " +
                         std::to_string(labels.size()) + " labels");
    }
    if (features.cols() != dim_) {
        throw ShapeError("push_batch: feature width " + std::to_string(features.cols()) +
                         " does not match queue width " + std::to_string(dim_));
    }
    if (batch > capacity_) {
        throw ShapeError("push_batch: batch of " + std::to_string(batch) +
                         " exceeds queue capacity " + std::to_string(capacity_));
    }
    for (int i = 0; i < batch; ++i) {
        const int slot = (head_ + size_) % capacity_;
        storage_.row(slot) = features.row(i);
        labels_[static_cast<std::size_t>(slot)] = labels[static_cast<std::size_t>(i)];
        if (size_ < capacity_) {
            ++size_;
        } else {
            head_ = (head_ + 1) % capacity_;  // full: the slot just written replaced the oldest
        }
    }
}

std::pair<Mat, std::vector<int>> KnowledgeQueue::snapshot() const {
    if (size_ == 0) throw StateError("snapshot: queue not warmed (no entries)");
    Mat feats(size_, dim_);
    std::vector<int> labels(static_cast<std::size_t>(size_));
    for (int i = 0; i < size_; ++i) {
        const int slot = (head_ + i) % capacity_;
        feats.row(i) = storage_.row(slot);
        labels[static_cast<std::size_t>(i)] = labels_[static_cast<std::size_t>(slot)];
    }
    return {std::move(feats), std::move(labels)};
}

QueueEntry KnowledgeQueue::entry(int i) const {
    if (i < 0 || i >= size_) {
        throw ShapeError("entry: index " + std::to_string(i) + " out of range for queue of " +
                         std::to_string(size_));
    }
    const int slot = (head_ + i) % capacity_;
    return {storage_.row(slot), labels_[static_cast<std::size_t>(slot)]};
}

KnowledgeQueue new_queue(int batch_size, int num_domains, int feature_dim) {
    return KnowledgeQueue(batch_size, num_domains, feature_dim, 4);
}

}  // namespace ccm
