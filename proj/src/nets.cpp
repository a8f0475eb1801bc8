#include "ccm/nets.hpp"

#include <cmath>
#include <string>

#include "ccm/rng.hpp"

namespace ccm {

void MLPSpec::validate() const {
    if (layer_widths.size() < 2) {
        throw ConfigError("MLPSpec: need at least input and output widths, got " +
                          std::to_string(layer_widths.size()));
    }
    for (int w : layer_widths) {
        if (w < 1) throw ConfigError("MLPSpec: non-positive layer width " + std::to_string(w));
    }
}

Mlp Mlp::init(MLPSpec spec, std::uint64_t seed, bool trainable) {
    spec.validate();
    Mlp net;
    net.spec_ = std::move(spec);
    Rng rng(seed);
    const auto& w = net.spec_.layer_widths;
    for (std::size_t l = 0; l + 1 < w.size(); ++l) {
        const int fan_in = w[l];
        const int fan_out = w[l + 1];
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        Mat weight(fan_in, fan_out);
        for (int i = 0; i < fan_in; ++i) {
            for (int j = 0; j < fan_out; ++j) weight(i, j) = rng.uniform(-bound, bound);
        }
        net.weights_.push_back(Tensor::leaf(std::move(weight), trainable));
        net.biases_.push_back(Tensor::leaf(Mat::Zero(1, fan_out), trainable));
    }
    return net;
}

Tensor Mlp::forward(const Tensor& batch) const {
    if (weights_.empty()) throw StateError("Mlp::forward: uninitialized network");
    if (batch.cols() != spec_.input_dim()) {
        throw ShapeError("Mlp::forward: input width " + std::to_string(batch.cols()) +
                         " does not match network input " + std::to_string(spec_.input_dim()));
    }
    Tensor h = batch;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        h = add_rowvec(matmul(h, weights_[l]), biases_[l]);
        if (l + 1 < weights_.size()) h = relu(h);
    }
    return h;
}

Mat Mlp::forward_values(const Mat& batch) const {
    if (weights_.empty()) throw StateError("Mlp::forward_values: uninitialized network");
    if (batch.cols() != spec_.input_dim()) {
        throw ShapeError("Mlp::forward_values: input width " + std::to_string(batch.cols()) +
                         " does not match network input " + std::to_string(spec_.input_dim()));
    }
    Mat h = batch;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        const Mat product = h * weights_[l].value();  // materialized, same order as the tape path
        h = product.rowwise() + biases_[l].value().row(0);
        if (l + 1 < weights_.size()) h = h.cwiseMax(0.0);
    }
    return h;
}

Mlp Mlp::clone(bool trainable) const {
    Mlp out;
    out.spec_ = spec_;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        out.weights_.push_back(Tensor::leaf(weights_[l].value(), trainable));
        out.biases_.push_back(Tensor::leaf(biases_[l].value(), trainable));
    }
    return out;
}

std::vector<Tensor*> Mlp::parameters() {
    std::vector<Tensor*> out;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        out.push_back(&weights_[l]);
        out.push_back(&biases_[l]);
    }
    return out;
}

std::vector<const Tensor*> Mlp::parameters() const {
    std::vector<const Tensor*> out;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        out.push_back(&weights_[l]);
        out.push_back(&biases_[l]);
    }
    return out;
}

std::vector<Tensor*> ModelBundle::trainable_parameters() {
    std::vector<Tensor*> out;
    for (Mlp* net : {&teacher, &classifier, &projector, &predictor}) {
        for (Tensor* p : net->parameters()) out.push_back(p);
    }
    return out;
}

void ModelBundle::zero_grad() {
    for (Tensor* p : trainable_parameters()) p->zero_grad();
}

ModelBundle ModelBundle::clone() const {
    ModelBundle out;
    out.num_classes = num_classes;
    out.seed = seed;
    out.teacher = teacher.clone(true);
    out.student = student.clone(false);
    out.classifier = classifier.clone(true);
    out.projector = projector.clone(true);
    out.predictor = predictor.clone(true);
    return out;
}

ModelBundle init_bundle(const MLPSpec& backbone_spec, int num_classes, std::uint64_t seed) {
    backbone_spec.validate();
    if (num_classes < 2) {
        throw ConfigError("init_bundle: need at least 2 classes, got " +
                          std::to_string(num_classes));
    }
    const int d = backbone_spec.output_dim();
    if (d % 2 != 0) {
        throw ConfigError("init_bundle: backbone output width " + std::to_string(d) +
                          " is odd; the projector cannot halve it");
    }
    ModelBundle bundle;
    bundle.num_classes = num_classes;
    bundle.seed = seed;
    bundle.teacher = Mlp::init(backbone_spec, derive_seed(seed, 0), true);
    bundle.student = bundle.teacher.clone(false);
    bundle.classifier = Mlp::init(MLPSpec{{d, num_classes}}, derive_seed(seed, 1), true);
    bundle.projector = Mlp::init(MLPSpec{{d, d / 2}}, derive_seed(seed, 2), true);
    bundle.predictor = Mlp::init(MLPSpec{{d, num_classes}}, derive_seed(seed, 3), true);
    return bundle;
}

Tensor forward_features(const Mlp& backbone, const Tensor& batch) {
    return backbone.forward(batch);
}

void momentum_update(ModelBundle& bundle, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
        throw DomainError("momentum_update: alpha " + std::to_string(alpha) +
                          " outside [0, 1]");
    }
    for (int l = 0; l < bundle.teacher.layer_count(); ++l) {
        bundle.student.weight(l).mutable_value() =
            alpha * bundle.student.weight(l).value() + (1.0 - alpha) * bundle.teacher.weight(l).value();
        bundle.student.bias(l).mutable_value() =
            alpha * bundle.student.bias(l).value() + (1.0 - alpha) * bundle.teacher.bias(l).value();
    }
}

Tensor classify(const Mlp& classifier, const Tensor& features) {
    return classifier.forward(features);
}

}  // namespace ccm
