#pragma once

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "ccm/errors.hpp"

namespace ccm {

// Row-major so the flat coefficient order matches the on-disk layout.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::string shape_str(Eigen::Index rows, Eigen::Index cols);
std::string shape_str(const Mat& m);

namespace detail {

struct TensorNode {
    Mat value;
    Mat grad;  // stays empty until the first accumulation touches it
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward;

    bool has_grad() const { return grad.size() > 0; }
    Mat& grad_ref() {
        if (!has_grad()) grad = Mat::Zero(value.rows(), value.cols());
        return grad;
    }
};

}  // namespace detail

// Dense 64-bit tensor handle. Copies of a Tensor share one node (value and
// gradient); detached() makes an independent, gradient-free value copy.
class Tensor {
public:
    Tensor() = default;

    static Tensor leaf(Mat value, bool requires_grad = false);
    static Tensor constant(Mat value) { return leaf(std::move(value), false); }
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor zeros(Eigen::Index rows, Eigen::Index cols, bool requires_grad = false);

    bool defined() const { return n_ != nullptr; }
    const Mat& value() const;
    Mat& mutable_value();  // in-place edits for optimizers; never recorded
    bool requires_grad() const;
    Mat grad() const;  // zeros when no gradient has been accumulated
    bool has_grad() const;
    void zero_grad();
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
    Eigen::Index size() const { return value().size(); }
    double item() const;  // requires a 1x1 tensor
    Tensor detached() const { return constant(value()); }

    std::shared_ptr<detail::TensorNode> node() const { return n_; }

private:
    explicit Tensor(std::shared_ptr<detail::TensorNode> n) : n_(std::move(n)) {}
    std::shared_ptr<detail::TensorNode> n_;

    friend Tensor make_op(const char* op, Mat value, std::initializer_list<Tensor> inputs,
                          std::function<void(detail::TensorNode&)> backward);
};

// Record of executed kernels, in execution order. At most one tape is active
// per thread; kernels append themselves whenever an input requires gradients
// and a tape is live. backward() replays the record exactly once, newest
// entry first. Without an active tape every kernel runs value-only, which is
// how gradient-free forward passes (momentum student, evaluation) work.
class GradientTape {
public:
    GradientTape();
    ~GradientTape();
    GradientTape(const GradientTape&) = delete;
    GradientTape& operator=(const GradientTape&) = delete;

    // Accumulates d(loss)/d(leaf) into every reachable leaf. `loss` must be
    // 1x1. Repeated calls accumulate into leaf gradients; intermediate
    // gradients are reset at the start of each call.
    void backward(const Tensor& loss);

    std::size_t size() const { return nodes_.size(); }
    static GradientTape* active();

    void record(std::shared_ptr<detail::TensorNode> node) { nodes_.push_back(std::move(node)); }

private:
    std::vector<std::shared_ptr<detail::TensorNode>> nodes_;
    GradientTape* prev_ = nullptr;
};

// ---------------------------------------------------------------------------
// Kernels. Each validates shapes up front (ShapeError names the kernel and
// both operand shapes) and registers itself on the active tape when gradients
// are being tracked.
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& a, double factor);
Tensor add_rowvec(const Tensor& a, const Tensor& row);   // row: 1 x cols, added to every row
Tensor scale_rows(const Tensor& a, const Tensor& col);   // col: rows x 1, scales row i by col(i)
Tensor relu(const Tensor& a);
Tensor concat(const Tensor& a, const Tensor& b, int axis);  // axis 0: stack rows, axis 1: stack cols
Tensor repeat_rows(const Tensor& a, int times);     // each row repeated `times` consecutively
Tensor tile_rows(const Tensor& a, int times);       // whole block stacked `times` times
Tensor sum_row_groups(const Tensor& a, int group_size);  // sums consecutive groups of rows
Tensor l2_normalize_rows(const Tensor& a);  // zero rows pass through with zero gradient
Tensor softmax(const Tensor& a, int axis = 1);  // max-subtracted, along rows (1) or columns (0)
Tensor log_elem(const Tensor& a);               // DomainError on any non-positive entry
Tensor clamp_min(const Tensor& a, double floor);
Tensor sum(const Tensor& a, int axis);   // axis 1 -> rows x 1, axis 0 -> 1 x cols
Tensor mean(const Tensor& a, int axis);
Tensor sum_all(const Tensor& a);   // 1x1
Tensor mean_all(const Tensor& a);  // 1x1
Tensor slice_rows(const Tensor& a, Eigen::Index start, Eigen::Index count);
Tensor reshape(const Tensor& a, Eigen::Index rows, Eigen::Index cols);

// Per-row negative log likelihood of the given class under a probability
// matrix: out(i) = -log(max(p(i, labels[i]), floor)). Entries below the floor
// are clamped (zero gradient there); clamp_events, when given, counts them.
Tensor cross_entropy(const Tensor& probabilities, const std::vector<int>& labels,
                     int* clamp_events = nullptr, double floor = 1e-12);

// Value-level helpers shared by the kernels and the gradient-free paths.
Mat softmax_rows_value(const Mat& x);
Mat l2_normalize_rows_value(const Mat& x);

// Central-difference check of a scalar-valued tensor function at `point`.
// Returns max over coordinates of |analytic - numeric| / max(1, |numeric|).
double grad_check(const std::function<Tensor(const Tensor&)>& fn, const Mat& point,
                  double step = 1e-6);

}  // namespace ccm
