#pragma once

#include <optional>
#include <vector>

#include "ccm/nets.hpp"
#include "ccm/tensor.hpp"

namespace ccm {

// Everything the front-door adjustment needs, assembled over one batch
// against one queue snapshot:
//   sample_distribution: N x 1, estimated P(X = x_j) over the batch
//   queue_attention:     N x m, row j = P(Z = z_i | X = x_j) over queue entries
//   pair_class_distribution: (m*N) x C, row i*N + j = P(Y | Z = z_i, X = x_j)
struct FrontDoorFactors {
    Tensor sample_distribution;
    Tensor queue_attention;
    Tensor pair_class_distribution;
    int queue_size = 0;   // m
    int batch_size = 0;   // N
    int num_classes = 0;  // C
};

struct LossFlags {
    bool teach = true;
    bool learn = true;
    bool cs = true;

    bool any() const { return teach || learn || cs; }
    bool operator==(const LossFlags&) const = default;
};

// One batch worth of loss terms. Disabled or skipped terms are exact zero
// constants; total is the plain sum of the enabled terms.
struct LossBreakdown {
    Tensor teach;
    Tensor learn;
    Tensor cs;
    Tensor total;
    LossFlags enabled;

    double teach_value() const { return teach.item(); }
    double learn_value() const { return learn.item(); }
    double cs_value() const { return cs.item(); }
    double total_value() const { return total.item(); }
};

// Temperature- and dimension-scaled cosine similarity between the rows of a
// and the rows of b: out(i, j) = cos(a_i, b_j) / (tau * sqrt(d)). Zero-norm
// rows contribute zero similarity.
Tensor similarity_matrix(const Tensor& a, const Tensor& b, double tau);

// Scalar similarity of two vectors (row or column orientation), same scaling.
Tensor contrastive_similarity(const Tensor& q, const Tensor& k, double tau);

// Estimated probability of each batch sample standing in for P(X). Training
// mode: softmax over per-sample row sums of the pairwise similarity matrix
// (self-similarity included; it is constant per row and cancels in the
// softmax). Inference mode: exactly uniform 1/N, every sample on its own.
Tensor sample_distribution(const Tensor& features, double tau, bool training);

// Attention over queue entries for every sample: row j is the softmax over i
// of similarity(queue_i, feature_j). N x m.
Tensor queue_attention(const Tensor& queue_features, const Tensor& features, double tau);

// Single-sample variant: 1 x m distribution over queue entries.
Tensor queue_attention_single(const Tensor& queue_features, const Tensor& sample_feature,
                              double tau);

// Diagnostic only: the batch-pooled queue distribution (the mean of the
// per-sample attention rows). Not part of any loss.
Eigen::VectorXd queue_attention_batch_mean(const Mat& queue_features, const Mat& features,
                                           double tau);

// Class distribution for every (queue entry, sample) pair:
// softmax(G(concat(H(z_i), H(f_j)))), laid out as (m*N) x C with row i*N + j.
Tensor pair_class_distribution(const Mlp& projector, const Mlp& predictor,
                               const Tensor& queue_features, const Tensor& features);

FrontDoorFactors front_door_factors(const Mlp& projector, const Mlp& predictor,
                                    const Tensor& queue_features, const Tensor& features,
                                    double tau, bool training);

// Front-door adjustment for every sample j:
//   out(j, y) = sum_i attention(j, i) * sum_j' sample_dist(j') * pair_dist(i, j', y)
// Each output row is a distribution over classes. N x C.
Tensor front_door_all(const FrontDoorFactors& factors);

// Single-sample front-door adjustment; 1 x C distribution.
Tensor front_door(const FrontDoorFactors& factors, int sample_index);

// Domain-conditioned supervised loss: mean over the batch of the negative
// log softmax probability of the true class.
Tensor teaching_loss(const Tensor& logits, const std::vector<int>& labels);

// Front-door cross-entropy: mean over the batch of -log fd(j, label_j).
// Probabilities below 1e-12 are clamped before the log; clamp_events counts
// them when given.
Tensor causal_effect_loss(const Tensor& front_door_outputs, const std::vector<int>& labels,
                          int* clamp_events = nullptr);

// Supervised contrastive pull toward same-class queue entries. For sample j
// with positive set P_j = {i : queue_label_i == label_j}, each positive pair
// contributes -log softmax_i'(sim(f_j, z_i'))[i]; the result is the pair sum
// divided by the pair count. Exactly zero when no labels match.
Tensor contrastive_clustering_loss(const Tensor& query_features, const Mat& queue_features,
                                   const std::vector<int>& queue_labels,
                                   const std::vector<int>& labels, double tau);

// Sum of the enabled terms with unit weights. A term may be absent (nullopt)
// when its inputs were unavailable this batch (cold queue); it then counts as
// exactly zero. Throws when every term is disabled.
LossBreakdown assemble_total_loss(const LossFlags& flags, std::optional<Tensor> teach,
                                  std::optional<Tensor> learn, std::optional<Tensor> cs);

}  // namespace ccm
