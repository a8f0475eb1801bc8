#pragma once

#include <utility>
#include <vector>

#include "ccm/tensor.hpp"

namespace ccm {

struct QueueEntry {
    Eigen::RowVectorXd feature;
    int label = 0;
};

// Fixed-capacity FIFO of (feature, label) pairs backed by a ring buffer.
// Pushes are batched: when a batch overflows the capacity, exactly the oldest
// entries are evicted first. Stored features are raw values with no gradient
// linkage.
class KnowledgeQueue {
public:
    KnowledgeQueue() = default;

    // Capacity = multiple * batch_size * num_domains.
    KnowledgeQueue(int batch_size, int num_domains, int feature_dim, int multiple = 4);

    static KnowledgeQueue with_capacity(int capacity, int feature_dim);

    // Appends B entries newest-last, evicting the oldest overflow first.
    // B must not exceed the capacity and the feature width must match.
    void push_batch(const Mat& features, const std::vector<int>& labels);

    // Copies the contents oldest-first; later pushes do not affect the copy.
    // Throws StateError on an empty queue.
    std::pair<Mat, std::vector<int>> snapshot() const;

    // The i-th oldest entry, 0 <= i < size().
    QueueEntry entry(int i) const;

    int size() const { return size_; }
    int capacity() const { return capacity_; }
    int feature_dim() const { return dim_; }
    bool empty() const { return size_ == 0; }
    bool warmed() const { return size_ == capacity_; }

private:
    Mat storage_;               // capacity x dim ring storage
    std::vector<int> labels_;   // parallel to storage_ rows
    int capacity_ = 0;
    int dim_ = 0;
    int head_ = 0;  // ring index of the oldest entry
    int size_ = 0;
};

// Queue sized for the training run: 4 * batch_size * num_domains entries of
// width feature_dim (num_domains counts source domains).
KnowledgeQueue new_queue(int batch_size, int num_domains, int feature_dim);

}  // namespace ccm
