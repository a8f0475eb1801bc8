#include "ccm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace ccm {

std::string shape_str(Eigen::Index rows, Eigen::Index cols) {
    std::ostringstream os;
    os << rows << "x" << cols;
    return os.str();
}

std::string shape_str(const Mat& m) { return shape_str(m.rows(), m.cols()); }

namespace {

[[noreturn]] void throw_shape(const char* op, const Mat& a, const Mat& b) {
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                     " do not conform");
}

void expect_defined(const char* op, std::initializer_list<const Tensor*> ts) {
    for (const Tensor* t : ts) {
        if (!t->defined()) throw ShapeError(std::string(op) + ": undefined tensor operand");
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

Tensor Tensor::leaf(Mat value, bool requires_grad) {
    auto n = std::make_shared<detail::TensorNode>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    Mat m(1, 1);
    m(0, 0) = value;
    return leaf(std::move(m), requires_grad);
}

Tensor Tensor::zeros(Eigen::Index rows, Eigen::Index cols, bool requires_grad) {
    return leaf(Mat::Zero(rows, cols), requires_grad);
}

const Mat& Tensor::value() const {
    if (!n_) throw ShapeError("value(): undefined tensor");
    return n_->value;
}

Mat& Tensor::mutable_value() {
    if (!n_) throw ShapeError("mutable_value(): undefined tensor");
    return n_->value;
}

bool Tensor::requires_grad() const { return n_ && n_->requires_grad; }

Mat Tensor::grad() const {
    if (!n_) throw ShapeError("grad(): undefined tensor");
    if (!n_->has_grad()) return Mat::Zero(n_->value.rows(), n_->value.cols());
    return n_->grad;
}

bool Tensor::has_grad() const { return n_ && n_->has_grad(); }

void Tensor::zero_grad() {
    if (n_) n_->grad.resize(0, 0);
}

double Tensor::item() const {
    if (size() != 1) throw ShapeError("item(): tensor is " + shape_str(value()) + ", expected 1x1");
    return value()(0, 0);
}

// ---------------------------------------------------------------------------
// GradientTape
// ---------------------------------------------------------------------------

namespace {
thread_local GradientTape* g_active_tape = nullptr;
}

GradientTape::GradientTape() {
    prev_ = g_active_tape;
    g_active_tape = this;
}

GradientTape::~GradientTape() { g_active_tape = prev_; }

GradientTape* GradientTape::active() { return g_active_tape; }

void GradientTape::backward(const Tensor& loss) {
    if (!loss.defined()) throw ShapeError("backward: undefined loss tensor");
    if (loss.size() != 1) {
        throw ShapeError("backward: loss must be a scalar (1x1), got " + shape_str(loss.value()));
    }
    // Intermediate gradients are scoped to one backward pass; leaf gradients
    // live outside the tape and keep accumulating across calls.
    for (auto& n : nodes_) n->grad.resize(0, 0);
    loss.node()->grad_ref()(0, 0) += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        detail::TensorNode& n = **it;
        if (n.has_grad() && n.backward) n.backward(n);
    }
}

// Builds an op result. Value-only (no node, no record) unless a tape is
// active and some input carries gradients.
Tensor make_op(const char* op, Mat value, std::initializer_list<Tensor> inputs,
               std::function<void(detail::TensorNode&)> backward) {
    GradientTape* tape = GradientTape::active();
    bool track = false;
    if (tape) {
        for (const Tensor& t : inputs) track = track || t.requires_grad();
    }
    if (!track) return Tensor::constant(std::move(value));

    auto n = std::make_shared<detail::TensorNode>();
    n->value = std::move(value);
    n->requires_grad = true;
    n->op = op;
    n->parents.reserve(inputs.size());
    for (const Tensor& t : inputs) n->parents.push_back(t.node());
    n->backward = std::move(backward);
    tape->record(n);
    return Tensor(std::move(n));
}

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    expect_defined("matmul", {&a, &b});
    const Mat& av = a.value();
    const Mat& bv = b.value();
    if (av.cols() != bv.rows()) throw_shape("matmul", av, bv);
    Mat out = av * bv;
    return make_op("matmul", std::move(out), {a, b}, [](detail::TensorNode& n) {
        auto& pa = n.parents[0];
        auto& pb = n.parents[1];
        if (pa->requires_grad) pa->grad_ref().noalias() += n.grad * pb->value.transpose();
        if (pb->requires_grad) pb->grad_ref().noalias() += pa->value.transpose() * n.grad;
    });
}

Tensor transpose(const Tensor& a) {
    expect_defined("transpose", {&a});
    Mat out = a.value().transpose();
    return make_op("transpose", std::move(out), {a}, [](detail::TensorNode& n) {
        n.parents[0]->grad_ref() += n.grad.transpose();
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    expect_defined("add", {&a, &b});
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw_shape("add", a.value(), b.value());
    Mat out = a.value() + b.value();
    return make_op("add", std::move(out), {a, b}, [](detail::TensorNode& n) {
        for (auto& p : n.parents) {
            if (p->requires_grad) p->grad_ref() += n.grad;
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    expect_defined("sub", {&a, &b});
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw_shape("sub", a.value(), b.value());
    Mat out = a.value() - b.value();
    return make_op("sub", std::move(out), {a, b}, [](detail::TensorNode& n) {
        if (n.parents[0]->requires_grad) n.parents[0]->grad_ref() += n.grad;
        if (n.parents[1]->requires_grad) n.parents[1]->grad_ref() -= n.grad;
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    expect_defined("mul", {&a, &b});
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw_shape("mul", a.value(), b.value());
    Mat out = a.value().cwiseProduct(b.value());
    return make_op("mul", std::move(out), {a, b}, [](detail::TensorNode& n) {
        auto& pa = n.parents[0];
        auto& pb = n.parents[1];
        if (pa->requires_grad) pa->grad_ref() += n.grad.cwiseProduct(pb->value);
        if (pb->requires_grad) pb->grad_ref() += n.grad.cwiseProduct(pa->value);
    });
}

Tensor scale(const Tensor& a, double factor) {
    expect_defined("scale", {&a});
    Mat out = a.value() * factor;
    return make_op("scale", std::move(out), {a}, [factor](detail::TensorNode& n) {
        n.parents[0]->grad_ref() += n.grad * factor;
    });
}

Tensor add_rowvec(const Tensor& a, const Tensor& row) {
    expect_defined("add_rowvec", {&a, &row});
    if (row.rows() != 1 || row.cols() != a.cols()) throw_shape("add_rowvec", a.value(), row.value());
    Mat out = a.value().rowwise() + row.value().row(0);
    return make_op("add_rowvec", std::move(out), {a, row}, [](detail::TensorNode& n) {
        if (n.parents[0]->requires_grad) n.parents[0]->grad_ref() += n.grad;
        if (n.parents[1]->requires_grad) {
            n.parents[1]->grad_ref().row(0) += n.grad.colwise().sum();
        }
    });
}

Tensor scale_rows(const Tensor& a, const Tensor& col) {
    expect_defined("scale_rows", {&a, &col});
    if (col.cols() != 1 || col.rows() != a.rows()) throw_shape("scale_rows", a.value(), col.value());
    Mat out = (a.value().array().colwise() * col.value().col(0).array()).matrix();
    return make_op("scale_rows", std::move(out), {a, col}, [](detail::TensorNode& n) {
        auto& pa = n.parents[0];
        auto& pc = n.parents[1];
        if (pa->requires_grad) {
            pa->grad_ref().array() += n.grad.array().colwise() * pc->value.col(0).array();
        }
        if (pc->requires_grad) {
            pc->grad_ref().col(0) += n.grad.cwiseProduct(pa->value).rowwise().sum();
        }
    });
}

Tensor relu(const Tensor& a) {
    expect_defined("relu", {&a});
    Mat out = a.value().cwiseMax(0.0);
    return make_op("relu", std::move(out), {a}, [](detail::TensorNode& n) {
        auto& p = n.parents[0];
        p->grad_ref().array() += n.grad.array() * (p->value.array() > 0.0).cast<double>();
    });
}

Tensor concat(const Tensor& a, const Tensor& b, int axis) {
    expect_defined("concat", {&a, &b});
    if (axis != 0 && axis != 1) throw DomainError("concat: axis must be 0 or 1");
    const Mat& av = a.value();
    const Mat& bv = b.value();
    Mat out;
    if (axis == 0) {
        if (av.cols() != bv.cols()) throw_shape("concat(axis=0)", av, bv);
        out.resize(av.rows() + bv.rows(), av.cols());
        out.topRows(av.rows()) = av;
        out.bottomRows(bv.rows()) = bv;
    } else {
        if (av.rows() != bv.rows()) throw_shape("concat(axis=1)", av, bv);
        out.resize(av.rows(), av.cols() + bv.cols());
        out.leftCols(av.cols()) = av;
        out.rightCols(bv.cols()) = bv;
    }
    const Eigen::Index ar = av.rows(), ac = av.cols();
    return make_op("concat", std::move(out), {a, b}, [axis, ar, ac](detail::TensorNode& n) {
        auto& pa = n.parents[0];
        auto& pb = n.parents[1];
        if (axis == 0) {
            if (pa->requires_grad) pa->grad_ref() += n.grad.topRows(ar);
            if (pb->requires_grad) pb->grad_ref() += n.grad.bottomRows(n.grad.rows() - ar);
        } else {
            if (pa->requires_grad) pa->grad_ref() += n.grad.leftCols(ac);
            if (pb->requires_grad) pb->grad_ref() += n.grad.rightCols(n.grad.cols() - ac);
        }
    });
}

Tensor repeat_rows(const Tensor& a, int times) {
    expect_defined("repeat_rows", {&a});
    if (times < 1) throw DomainError("repeat_rows: times must be >= 1");
    const Mat& av = a.value();
    Mat out(av.rows() * times, av.cols());
    for (Eigen::Index i = 0; i < av.rows(); ++i) {
        for (int t = 0; t < times; ++t) out.row(i * times + t) = av.row(i);
    }
    return make_op("repeat_rows", std::move(out), {a}, [times](detail::TensorNode& n) {
        Mat& g = n.parents[0]->grad_ref();
        for (Eigen::Index i = 0; i < g.rows(); ++i) {
            for (int t = 0; t < times; ++t) g.row(i) += n.grad.row(i * times + t);
        }
    });
}

Tensor tile_rows(const Tensor& a, int times) {
    expect_defined("tile_rows", {&a});
    if (times < 1) throw DomainError("tile_rows: times must be >= 1");
    const Mat& av = a.value();
    Mat out(av.rows() * times, av.cols());
    for (int t = 0; t < times; ++t) out.middleRows(t * av.rows(), av.rows()) = av;
    return make_op("tile_rows", std::move(out), {a}, [times](detail::TensorNode& n) {
        Mat& g = n.parents[0]->grad_ref();
        const Eigen::Index rows = g.rows();
        for (int t = 0; t < times; ++t) g += n.grad.middleRows(t * rows, rows);
    });
}

Tensor sum_row_groups(const Tensor& a, int group_size) {
    expect_defined("sum_row_groups", {&a});
    if (group_size < 1) throw DomainError("sum_row_groups: group_size must be >= 1");
    const Mat& av = a.value();
    if (av.rows() % group_size != 0) {
        throw ShapeError("sum_row_groups: " + std::to_string(av.rows()) +
                         " rows not divisible by group size " + std::to_string(group_size));
    }
    const Eigen::Index groups = av.rows() / group_size;
    Mat out = Mat::Zero(groups, av.cols());
    for (Eigen::Index i = 0; i < groups; ++i) {
        for (int t = 0; t < group_size; ++t) out.row(i) += av.row(i * group_size + t);
    }
    return make_op("sum_row_groups", std::move(out), {a}, [group_size](detail::TensorNode& n) {
        Mat& g = n.parents[0]->grad_ref();
        for (Eigen::Index i = 0; i < n.grad.rows(); ++i) {
            for (int t = 0; t < group_size; ++t) g.row(i * group_size + t) += n.grad.row(i);
        }
    });
}

Mat l2_normalize_rows_value(const Mat& x) {
    Mat out = x;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double norm = x.row(i).norm();
        if (norm > 0.0) out.row(i) /= norm;
        // zero rows pass through unchanged
    }
    return out;
}

Tensor l2_normalize_rows(const Tensor& a) {
    expect_defined("l2_normalize_rows", {&a});
    Mat out = l2_normalize_rows_value(a.value());
    return make_op("l2_normalize_rows", std::move(out), {a}, [](detail::TensorNode& n) {
        auto& p = n.parents[0];
        Mat& g = p->grad_ref();
        for (Eigen::Index i = 0; i < n.value.rows(); ++i) {
            const double norm = p->value.row(i).norm();
            if (norm == 0.0) continue;  // degenerate row: zero output, zero gradient
            const auto y = n.value.row(i);
            const auto gy = n.grad.row(i);
            g.row(i) += (gy - y * y.dot(gy)) / norm;
        }
    });
}

Mat softmax_rows_value(const Mat& x) {
    Mat out(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double mx = x.row(i).maxCoeff();
        out.row(i) = (x.row(i).array() - mx).exp().matrix();
        out.row(i) /= out.row(i).sum();
    }
    return out;
}

Tensor softmax(const Tensor& a, int axis) {
    expect_defined("softmax", {&a});
    if (axis != 0 && axis != 1) throw DomainError("softmax: axis must be 0 or 1");
    if (a.size() == 0) throw ShapeError("softmax: empty input " + shape_str(a.value()));
    Mat out = axis == 1 ? softmax_rows_value(a.value())
                        : Mat(softmax_rows_value(a.value().transpose()).transpose());
    return make_op("softmax", std::move(out), {a}, [axis](detail::TensorNode& n) {
        Mat& g = n.parents[0]->grad_ref();
        if (axis == 1) {
            for (Eigen::Index i = 0; i < n.value.rows(); ++i) {
                const auto y = n.value.row(i);
                const auto gy = n.grad.row(i);
                g.row(i) += y.cwiseProduct(gy - Eigen::RowVectorXd::Constant(y.cols(), y.dot(gy)));
            }
        } else {
            for (Eigen::Index j = 0; j < n.value.cols(); ++j) {
                const auto y = n.value.col(j);
                const auto gy = n.grad.col(j);
                g.col(j) += y.cwiseProduct(gy - Eigen::VectorXd::Constant(y.rows(), y.dot(gy)));
            }
        }
    });
}

Tensor log_elem(const Tensor& a) {
    expect_defined("log_elem", {&a});
    if ((a.value().array() <= 0.0).any()) {
        throw DomainError("log_elem: non-positive entry (min " +
                          std::to_string(a.value().minCoeff()) + ")");
    }
    Mat out = a.value().array().log().matrix();
    return make_op("log_elem", std::move(out), {a}, [](detail::TensorNode& n) {
        auto& p = n.parents[0];
        p->grad_ref().array() += n.grad.array() / p->value.array();
    });
}

Tensor clamp_min(const Tensor& a, double floor) {
    expect_defined("clamp_min", {&a});
    Mat out = a.value().cwiseMax(floor);
    return make_op("clamp_min", std::move(out), {a}, [floor](detail::TensorNode& n) {
        auto& p = n.parents[0];
        p->grad_ref().array() += n.grad.array() * (p->value.array() >= floor).cast<double>();
    });
}

Tensor sum(const Tensor& a, int axis) {
    expect_defined("sum", {&a});
    if (axis != 0 && axis != 1) throw DomainError("sum: axis must be 0 or 1");
    Mat out;
    if (axis == 1) {
        out = a.value().rowwise().sum();
    } else {
        out = a.value().colwise().sum();
    }
    return make_op("sum", std::move(out), {a}, [axis](detail::TensorNode& n) {
        Mat& g = n.parents[0]->grad_ref();
        if (axis == 1) {
            g.colwise() += n.grad.col(0);
        } else {
            g.rowwise() += n.grad.row(0);
        }
    });
}

Tensor mean(const Tensor& a, int axis) {
    expect_defined("mean", {&a});
    const double denom = axis == 1 ? static_cast<double>(a.cols()) : static_cast<double>(a.rows());
    if (denom == 0.0) throw ShapeError("mean: empty axis on " + shape_str(a.value()));
    return scale(sum(a, axis), 1.0 / denom);
}

Tensor sum_all(const Tensor& a) {
    expect_defined("sum_all", {&a});
    Mat out(1, 1);
    out(0, 0) = a.value().sum();
    return make_op("sum_all", std::move(out), {a}, [](detail::TensorNode& n) {
        n.parents[0]->grad_ref().array() += n.grad(0, 0);
    });
}

Tensor mean_all(const Tensor& a) {
    expect_defined("mean_all", {&a});
    if (a.size() == 0) throw ShapeError("mean_all: empty tensor");
    return scale(sum_all(a), 1.0 / static_cast<double>(a.size()));
}

Tensor slice_rows(const Tensor& a, Eigen::Index start, Eigen::Index count) {
    expect_defined("slice_rows", {&a});
    if (start < 0 || count < 0 || start + count > a.rows()) {
        throw ShapeError("slice_rows: range [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") out of bounds for " +
                         shape_str(a.value()));
    }
    Mat out = a.value().middleRows(start, count);
    return make_op("slice_rows", std::move(out), {a}, [start, count](detail::TensorNode& n) {
        n.parents[0]->grad_ref().middleRows(start, count) += n.grad;
    });
}

Tensor reshape(const Tensor& a, Eigen::Index rows, Eigen::Index cols) {
    expect_defined("reshape", {&a});
    if (rows * cols != a.size()) {
        throw ShapeError("reshape: cannot view " + shape_str(a.value()) + " as " +
                         shape_str(rows, cols));
    }
    // Row-major storage: a reshape is a straight copy of the flat sequence.
    Mat out = Eigen::Map<const Mat>(a.value().data(), rows, cols);
    return make_op("reshape", std::move(out), {a}, [](detail::TensorNode& n) {
        auto& p = n.parents[0];
        p->grad_ref() += Eigen::Map<const Mat>(n.grad.data(), p->value.rows(), p->value.cols());
    });
}

Tensor cross_entropy(const Tensor& probabilities, const std::vector<int>& labels,
                     int* clamp_events, double floor) {
    expect_defined("cross_entropy", {&probabilities});
    const Mat& p = probabilities.value();
    if (p.rows() != static_cast<Eigen::Index>(labels.size())) {
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         shape_str(p) + " probabilities");
    }
    for (int y : labels) {
        if (y < 0 || y >= p.cols()) {
            throw DomainError("cross_entropy: label " + std::to_string(y) +
                              " out of range for " + std::to_string(p.cols()) + " classes");
        }
    }
    Mat out(p.rows(), 1);
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
        const double pi = p(i, labels[static_cast<std::size_t>(i)]);
        if (pi < floor && clamp_events) ++*clamp_events;
        out(i, 0) = -std::log(std::max(pi, floor));
    }
    std::vector<int> ls = labels;
    return make_op("cross_entropy", std::move(out), {probabilities},
                   [ls = std::move(ls), floor](detail::TensorNode& n) {
                       auto& p = n.parents[0];
                       Mat& g = p->grad_ref();
                       for (Eigen::Index i = 0; i < n.value.rows(); ++i) {
                           const int y = ls[static_cast<std::size_t>(i)];
                           const double pi = p->value(i, y);
                           if (pi > floor) g(i, y) -= n.grad(i, 0) / pi;
                       }
                   });
}

double grad_check(const std::function<Tensor(const Tensor&)>& fn, const Mat& point, double step) {
    Mat analytic;
    {
        GradientTape tape;
        Tensor x = Tensor::leaf(point, true);
        Tensor loss = fn(x);
        if (loss.size() != 1) {
            throw ShapeError("grad_check: fn must be scalar-valued, got " + shape_str(loss.value()));
        }
        tape.backward(loss);
        analytic = x.grad();
    }
    double max_err = 0.0;
    Mat p = point;
    for (Eigen::Index i = 0; i < point.rows(); ++i) {
        for (Eigen::Index j = 0; j < point.cols(); ++j) {
            p(i, j) = point(i, j) + step;
            const double f_plus = fn(Tensor::constant(p)).item();
            p(i, j) = point(i, j) - step;
            const double f_minus = fn(Tensor::constant(p)).item();
            p(i, j) = point(i, j);
            const double numeric = (f_plus - f_minus) / (2.0 * step);
            const double err = std::abs(analytic(i, j) - numeric) /
                               std::max(1.0, std::abs(numeric));
            max_err = std::max(max_err, err);
        }
    }
    return max_err;
}

}  // namespace ccm
