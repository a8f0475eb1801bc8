#include "ccm/losses.hpp"

#include <cmath>
#include <string>

namespace ccm {

namespace {

void check_tau(double tau) {
    if (!(tau > 0.0)) throw DomainError("similarity: temperature must be positive, got " +
                                        std::to_string(tau));
}

}  // namespace

Tensor similarity_matrix(const Tensor& a, const Tensor& b, double tau) {
    check_tau(tau);
    if (a.cols() != b.cols()) {
        throw ShapeError("similarity_matrix: feature widths " + shape_str(a.value()) + " and " +
                         shape_str(b.value()) + " differ");
    }
    if (a.cols() < 1) throw ShapeError("similarity_matrix: empty feature dimension");
    const double d = static_cast<double>(a.cols());
    Tensor na = l2_normalize_rows(a);
    Tensor nb = l2_normalize_rows(b);
    return scale(matmul(na, transpose(nb)), 1.0 / (tau * std::sqrt(d)));
}

namespace {

// Accepts a vector in either orientation and returns it as a single row.
Tensor as_row(const char* op, const Tensor& v) {
    if (v.rows() == 1) return v;
    if (v.cols() == 1) return transpose(v);
    throw ShapeError(std::string(op) + ": expected a vector, got " + shape_str(v.value()));
}

}  // namespace

Tensor contrastive_similarity(const Tensor& q, const Tensor& k, double tau) {
    return similarity_matrix(as_row("contrastive_similarity", q),
                             as_row("contrastive_similarity", k), tau);
}

Tensor sample_distribution(const Tensor& features, double tau, bool training) {
    if (features.rows() < 1) {
        throw ShapeError("sample_distribution: empty batch");
    }
    const Eigen::Index n = features.rows();
    if (!training) {
        return Tensor::constant(Mat::Constant(n, 1, 1.0 / static_cast<double>(n)));
    }
    Tensor sims = similarity_matrix(features, features, tau);
    Tensor row_sums = sum(sims, 1);   // N x 1
    return softmax(row_sums, 0);      // over the batch index
}

Tensor queue_attention(const Tensor& queue_features, const Tensor& features, double tau) {
    if (queue_features.rows() < 1) {
        throw StateError("queue_attention: empty queue");
    }
    return softmax(similarity_matrix(features, queue_features, tau), 1);
}

Tensor queue_attention_single(const Tensor& queue_features, const Tensor& sample_feature,
                              double tau) {
    return queue_attention(queue_features, as_row("queue_attention_single", sample_feature), tau);
}

Eigen::VectorXd queue_attention_batch_mean(const Mat& queue_features, const Mat& features,
                                           double tau) {
    Tensor rows = queue_attention(Tensor::constant(queue_features), Tensor::constant(features), tau);
    return rows.value().colwise().mean().transpose();
}

Tensor pair_class_distribution(const Mlp& projector, const Mlp& predictor,
                               const Tensor& queue_features, const Tensor& features) {
    const int m = static_cast<int>(queue_features.rows());
    const int n = static_cast<int>(features.rows());
    if (m < 1) throw StateError("pair_class_distribution: empty queue");
    if (n < 1) throw ShapeError("pair_class_distribution: empty batch");
    Tensor projected_queue = projector.forward(queue_features);   // m x d/2
    Tensor projected_batch = projector.forward(features);         // N x d/2
    // Row i*N + j pairs queue entry i with sample j.
    Tensor pairs = concat(repeat_rows(projected_queue, n), tile_rows(projected_batch, m), 1);
    return softmax(predictor.forward(pairs), 1);
}

FrontDoorFactors front_door_factors(const Mlp& projector, const Mlp& predictor,
                                    const Tensor& queue_features, const Tensor& features,
                                    double tau, bool training) {
    FrontDoorFactors factors;
    factors.queue_size = static_cast<int>(queue_features.rows());
    factors.batch_size = static_cast<int>(features.rows());
    factors.sample_distribution = sample_distribution(features, tau, training);
    factors.queue_attention = queue_attention(queue_features, features, tau);
    factors.pair_class_distribution =
        pair_class_distribution(projector, predictor, queue_features, features);
    factors.num_classes = static_cast<int>(factors.pair_class_distribution.cols());
    return factors;
}

Tensor front_door_all(const FrontDoorFactors& factors) {
    const int m = factors.queue_size;
    const int n = factors.batch_size;
    if (factors.pair_class_distribution.rows() != static_cast<Eigen::Index>(m) * n) {
        throw ShapeError("front_door_all: pair distribution is " +
                         shape_str(factors.pair_class_distribution.value()) + ", expected " +
                         shape_str(static_cast<Eigen::Index>(m) * n, factors.num_classes));
    }
    // Per queue entry i: the batch-expected class distribution
    //   W(i, y) = sum_j' sample_dist(j') * pair_dist(i*N + j', y)
    Tensor weighted = scale_rows(factors.pair_class_distribution,
                                 tile_rows(factors.sample_distribution, m));
    Tensor per_entry = sum_row_groups(weighted, n);  // m x C
    return matmul(factors.queue_attention, per_entry);
}

Tensor front_door(const FrontDoorFactors& factors, int sample_index) {
    if (sample_index < 0 || sample_index >= factors.batch_size) {
        throw ShapeError("front_door: sample index " + std::to_string(sample_index) +
                         " out of range for batch of " + std::to_string(factors.batch_size));
    }
    return slice_rows(front_door_all(factors), sample_index, 1);
}

Tensor teaching_loss(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.rows() < 1) throw ShapeError("teaching_loss: empty batch");
    return mean_all(cross_entropy(softmax(logits, 1), labels));
}

Tensor causal_effect_loss(const Tensor& front_door_outputs, const std::vector<int>& labels,
                          int* clamp_events) {
    if (front_door_outputs.rows() < 1) throw ShapeError("causal_effect_loss: empty batch");
    return mean_all(cross_entropy(front_door_outputs, labels, clamp_events));
}

Tensor contrastive_clustering_loss(const Tensor& query_features, const Mat& queue_features,
                                   const std::vector<int>& queue_labels,
                                   const std::vector<int>& labels, double tau) {
    const Eigen::Index m = queue_features.rows();
    const Eigen::Index n = query_features.rows();
    if (m < 1) throw StateError("contrastive_clustering_loss: empty queue");
    if (m != static_cast<Eigen::Index>(queue_labels.size())) {
        throw ShapeError("contrastive_clustering_loss: " + std::to_string(queue_labels.size()) +
                         " queue labels for " + std::to_string(m) + " queue rows");
    }
    if (n != static_cast<Eigen::Index>(labels.size())) {
        throw ShapeError("contrastive_clustering_loss: " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(n) + " query rows");
    }
    Mat positives = Mat::Zero(n, m);
    double pair_count = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
        for (Eigen::Index i = 0; i < m; ++i) {
            if (queue_labels[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(j)]) {
                positives(j, i) = 1.0;
                pair_count += 1.0;
            }
        }
    }
    if (pair_count == 0.0) return Tensor::scalar(0.0);

    Tensor sims = similarity_matrix(query_features, Tensor::constant(queue_features), tau);
    Tensor log_probs = log_elem(clamp_min(softmax(sims, 1), 1e-12));
    Tensor picked = mul(log_probs, Tensor::constant(std::move(positives)));
    return scale(sum_all(picked), -1.0 / pair_count);
}

LossBreakdown assemble_total_loss(const LossFlags& flags, std::optional<Tensor> teach,
                                  std::optional<Tensor> learn, std::optional<Tensor> cs) {
    if (!flags.any()) {
        throw ConfigError("assemble_total_loss: every loss term is disabled");
    }
    LossBreakdown out;
    out.enabled = flags;
    const Tensor zero = Tensor::scalar(0.0);
    out.teach = (flags.teach && teach) ? *teach : zero;
    out.learn = (flags.learn && learn) ? *learn : zero;
    out.cs = (flags.cs && cs) ? *cs : zero;

    std::vector<Tensor> engaged;
    if (flags.teach && teach) engaged.push_back(*teach);
    if (flags.learn && learn) engaged.push_back(*learn);
    if (flags.cs && cs) engaged.push_back(*cs);
    if (engaged.empty()) {
        out.total = zero;  // cold queue on the very first batch
        return out;
    }
    Tensor total = engaged.front();
    for (std::size_t i = 1; i < engaged.size(); ++i) total = add(total, engaged[i]);
    out.total = total;
    return out;
}

}  // namespace ccm
