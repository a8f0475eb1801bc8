#pragma once

#include <cstdint>
#include <vector>

#include "ccm/tensor.hpp"

namespace ccm {

// Fully connected network shape: input width, hidden widths, output width.
// ReLU on every layer except the last.
struct MLPSpec {
    std::vector<int> layer_widths;

    int input_dim() const { return layer_widths.front(); }
    int output_dim() const { return layer_widths.back(); }
    void validate() const;
    bool operator==(const MLPSpec&) const = default;
};

// Plain MLP over Tensors. Move-only: parameters are shared-state handles, so
// an implicit copy would alias them; clone() makes an independent copy.
class Mlp {
public:
    Mlp() = default;
    Mlp(const Mlp&) = delete;
    Mlp& operator=(const Mlp&) = delete;
    Mlp(Mlp&&) = default;
    Mlp& operator=(Mlp&&) = default;

    // Seeded uniform fan-in init: weights ~ U(-1/sqrt(fan_in), +1/sqrt(fan_in)),
    // biases zero. Deterministic for a fixed seed.
    static Mlp init(MLPSpec spec, std::uint64_t seed, bool trainable);

    // Tape-aware forward pass (records when parameters or input track grads).
    Tensor forward(const Tensor& batch) const;
    // Explicitly gradient-free forward pass on raw values.
    Mat forward_values(const Mat& batch) const;

    Mlp clone(bool trainable) const;
    std::vector<Tensor*> parameters();
    std::vector<const Tensor*> parameters() const;
    const MLPSpec& spec() const { return spec_; }
    int layer_count() const { return static_cast<int>(weights_.size()); }
    Tensor& weight(int layer) { return weights_[static_cast<std::size_t>(layer)]; }
    Tensor& bias(int layer) { return biases_[static_cast<std::size_t>(layer)]; }
    const Tensor& weight(int layer) const { return weights_[static_cast<std::size_t>(layer)]; }
    const Tensor& bias(int layer) const { return biases_[static_cast<std::size_t>(layer)]; }

private:
    MLPSpec spec_;
    std::vector<Tensor> weights_;  // layer l: widths[l] x widths[l+1]
    std::vector<Tensor> biases_;   // layer l: 1 x widths[l+1]
};

// The five networks: teacher backbone F, its momentum student F', classifier
// C on teacher features, dimension-halving projector H, and pair predictor G
// that consumes concat(H(z), H(f)).
struct ModelBundle {
    int num_classes = 0;
    std::uint64_t seed = 0;
    Mlp teacher;
    Mlp student;
    Mlp classifier;
    Mlp projector;
    Mlp predictor;

    int feature_dim() const { return teacher.spec().output_dim(); }
    // Everything the optimizer may touch: teacher, classifier, projector,
    // predictor. The student is updated only through momentum_update.
    std::vector<Tensor*> trainable_parameters();
    void zero_grad();
    ModelBundle clone() const;
};

// Builds the bundle from a backbone spec. The student starts as an exact copy
// of the teacher. The backbone output width d must be even (the projector
// halves it). Deterministic for a fixed seed.
ModelBundle init_bundle(const MLPSpec& backbone_spec, int num_classes, std::uint64_t seed);

// Feature extraction through F or F'. Gradient-free when the network is the
// student (its parameters never track gradients).
Tensor forward_features(const Mlp& backbone, const Tensor& batch);

// Exponential moving average pull of the student toward the teacher:
// p' <- alpha * p' + (1 - alpha) * p, elementwise, values only. Never touches
// the teacher and never records onto a tape.
void momentum_update(ModelBundle& bundle, double alpha);

// Raw logits from the classifier head; softmax belongs to the loss.
Tensor classify(const Mlp& classifier, const Tensor& features);

}  // namespace ccm
