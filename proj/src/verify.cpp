#include "ccm/verify.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "ccm/nets.hpp"
#include "ccm/queue.hpp"
#include "ccm/rng.hpp"

namespace ccm {

Mat front_door_oracle(const Mat& sample_dist, const Mat& attention, const Mat& pair_class,
                      int queue_size, int batch_size, int num_classes) {
    Mat out = Mat::Zero(batch_size, num_classes);
    for (int j = 0; j < batch_size; ++j) {
        for (int y = 0; y < num_classes; ++y) {
            double acc = 0.0;
            for (int i = 0; i < queue_size; ++i) {
                double inner = 0.0;
                for (int jp = 0; jp < batch_size; ++jp) {
                    inner += sample_dist(jp, 0) *
                             pair_class(static_cast<Eigen::Index>(i) * batch_size + jp, y);
                }
                acc += attention(j, i) * inner;
            }
            out(j, y) = acc;
        }
    }
    return out;
}

namespace {

Mat random_distribution_rows(int rows, int cols, Rng& rng) {
    Mat out(rows, cols);
    for (int i = 0; i < rows; ++i) {
        double total = 0.0;
        for (int j = 0; j < cols; ++j) {
            out(i, j) = 0.05 + rng.uniform();
            total += out(i, j);
        }
        out.row(i) /= total;
    }
    return out;
}

}  // namespace

FrontDoorFactors random_front_door_factors(int queue_size, int batch_size, int num_classes,
                                           std::uint64_t seed) {
    Rng rng(seed);
    FrontDoorFactors factors;
    factors.queue_size = queue_size;
    factors.batch_size = batch_size;
    factors.num_classes = num_classes;
    factors.sample_distribution =
        Tensor::constant(random_distribution_rows(1, batch_size, rng).transpose());
    factors.queue_attention = Tensor::constant(random_distribution_rows(batch_size, queue_size, rng));
    factors.pair_class_distribution =
        Tensor::constant(random_distribution_rows(queue_size * batch_size, num_classes, rng));
    return factors;
}

// ---------------------------------------------------------------------------
// Gradient harness
// ---------------------------------------------------------------------------

namespace {

// Tiny but structurally complete instance: every loss path is exercised.
struct TinyInstance {
    ModelBundle bundle;
    Mat x;                    // batch features
    std::vector<int> y;      // batch labels
    Mat queue_feats;
    std::vector<int> queue_labels;
    double tau = 0.07;
};

TinyInstance make_tiny_instance(std::uint64_t seed) {
    constexpr int kIn = 5;
    constexpr int kFeat = 4;
    constexpr int kClasses = 3;
    constexpr int kBatch = 4;
    constexpr int kQueue = 3;

    TinyInstance inst;
    inst.bundle = init_bundle(MLPSpec{{kIn, 6, kFeat}}, kClasses, derive_seed(seed, 11));
    Rng rng(derive_seed(seed, 12));
    inst.x.resize(kBatch, kIn);
    for (int i = 0; i < kBatch; ++i) {
        for (int j = 0; j < kIn; ++j) inst.x(i, j) = rng.normal();
    }
    inst.y.resize(kBatch);
    for (int& label : inst.y) label = rng.uniform_int(kClasses);
    inst.queue_feats.resize(kQueue, kFeat);
    for (int i = 0; i < kQueue; ++i) {
        for (int j = 0; j < kFeat; ++j) inst.queue_feats(i, j) = rng.normal();
    }
    inst.queue_labels.resize(kQueue);
    for (int& label : inst.queue_labels) label = rng.uniform_int(kClasses);
    return inst;
}

Tensor build_loss(const TinyInstance& inst, LossKind kind) {
    Tensor features = inst.bundle.teacher.forward(Tensor::constant(inst.x));
    auto teach = [&] { return teaching_loss(classify(inst.bundle.classifier, features), inst.y); };
    auto learn = [&] {
        FrontDoorFactors factors =
            front_door_factors(inst.bundle.projector, inst.bundle.predictor,
                               Tensor::constant(inst.queue_feats), features, inst.tau, true);
        return causal_effect_loss(front_door_all(factors), inst.y);
    };
    auto cs = [&] {
        return contrastive_clustering_loss(features, inst.queue_feats, inst.queue_labels, inst.y,
                                           inst.tau);
    };
    switch (kind) {
        case LossKind::teach:
            return teach();
        case LossKind::learn:
            return learn();
        case LossKind::cs:
            return cs();
        case LossKind::all:
            return assemble_total_loss({true, true, true}, teach(), learn(), cs()).total;
    }
    throw DomainError("build_loss: unknown loss kind");
}

}  // namespace

double loss_gradient_error(LossKind kind, std::uint64_t seed, double analytic_offset) {
    TinyInstance inst = make_tiny_instance(seed);

    std::vector<Mat> analytic;
    std::vector<Tensor*> params = inst.bundle.trainable_parameters();
    {
        GradientTape tape;
        Tensor loss = build_loss(inst, kind);
        tape.backward(loss);
        for (Tensor* p : params) {
            analytic.push_back(Mat((p->grad().array() + analytic_offset).matrix()));
        }
        inst.bundle.zero_grad();
    }

    // Central differences against the very same assembly, run value-only.
    constexpr double kStep = 1e-6;
    double max_err = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Mat& value = params[pi]->mutable_value();
        for (Eigen::Index i = 0; i < value.rows(); ++i) {
            for (Eigen::Index j = 0; j < value.cols(); ++j) {
                const double saved = value(i, j);
                value(i, j) = saved + kStep;
                const double f_plus = build_loss(inst, kind).item();
                value(i, j) = saved - kStep;
                const double f_minus = build_loss(inst, kind).item();
                value(i, j) = saved;
                const double numeric = (f_plus - f_minus) / (2.0 * kStep);
                const double err =
                    std::abs(analytic[pi](i, j) - numeric) / std::max(1.0, std::abs(numeric));
                max_err = std::max(max_err, err);
            }
        }
    }
    return max_err;
}

// ---------------------------------------------------------------------------
// Battery
// ---------------------------------------------------------------------------

namespace {

using Clock = std::chrono::steady_clock;

CheckResult timed(const std::string& name, const std::function<std::pair<bool, std::string>()>& fn) {
    CheckResult result;
    result.name = name;
    const auto start = Clock::now();
    try {
        auto [passed, detail] = fn();
        result.passed = passed;
        result.detail = detail;
    } catch (const std::exception& e) {
        result.passed = false;
        result.detail = std::string("exception: ") + e.what();
    }
    result.seconds = std::chrono::duration<double>(Clock::now() - start).count();
    return result;
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(3);
    os << std::scientific << v;
    return os.str();
}

}  // namespace

std::vector<CheckResult> run_verification(const VerifyOptions& options) {
    std::vector<CheckResult> results;
    const double offset = options.perturb_gradient ? 1e-3 : 0.0;

    const struct {
        const char* name;
        LossKind kind;
    } losses[] = {{"gradient/teaching_loss", LossKind::teach},
                  {"gradient/causal_effect_loss", LossKind::learn},
                  {"gradient/contrastive_loss", LossKind::cs},
                  {"gradient/total_loss", LossKind::all}};
    for (const auto& loss : losses) {
        results.push_back(timed(loss.name, [&]() -> std::pair<bool, std::string> {
            double worst = 0.0;
            for (int s = 0; s < options.gradient_seeds_per_loss; ++s) {
                worst = std::max(worst, loss_gradient_error(loss.kind,
                                                            1000 + static_cast<std::uint64_t>(s),
                                                            offset));
            }
            return {worst < 1e-5, "max_rel_err=" + fmt(worst)};
        }));
    }

    results.push_back(timed("front_door/oracle", [&]() -> std::pair<bool, std::string> {
        double worst = 0.0;
        for (int seed = 0; seed < options.front_door_seeds; ++seed) {
            for (int m = 1; m <= 4; ++m) {
                for (int n = 1; n <= 4; ++n) {
                    for (int c = 2; c <= 4; ++c) {
                        FrontDoorFactors factors = random_front_door_factors(
                            m, n, c, 77 + static_cast<std::uint64_t>(seed * 131 + m * 17 + n * 3 + c));
                        const Mat fast = front_door_all(factors).value();
                        const Mat slow = front_door_oracle(
                            factors.sample_distribution.value(), factors.queue_attention.value(),
                            factors.pair_class_distribution.value(), m, n, c);
                        worst = std::max(worst, (fast - slow).cwiseAbs().maxCoeff());
                    }
                }
            }
        }
        return {worst <= 1e-12, "max_abs_diff=" + fmt(worst)};
    }));

    results.push_back(timed("queue/fifo", [&]() -> std::pair<bool, std::string> {
        Rng rng(4242);
        for (int schedule = 0; schedule < options.queue_schedules; ++schedule) {
            const int batch = 1 + rng.uniform_int(4);
            const int domains = 1 + rng.uniform_int(3);
            const int dim = 1 + rng.uniform_int(3);
            KnowledgeQueue queue = new_queue(batch, domains, dim);
            if (queue.capacity() != 4 * batch * domains) {
                return {false, "capacity formula violated"};
            }
            std::vector<std::pair<Eigen::RowVectorXd, int>> reference;
            const int pushes = 1 + rng.uniform_int(12);
            for (int p = 0; p < pushes; ++p) {
                const int count = 1 + rng.uniform_int(queue.capacity());
                Mat feats(count, dim);
                std::vector<int> labels(static_cast<std::size_t>(count));
                for (int i = 0; i < count; ++i) {
                    for (int j = 0; j < dim; ++j) feats(i, j) = rng.normal();
                    labels[static_cast<std::size_t>(i)] = rng.uniform_int(5);
                    reference.emplace_back(feats.row(i), labels[static_cast<std::size_t>(i)]);
                }
                queue.push_batch(feats, labels);
            }
            const int keep = std::min<int>(queue.capacity(), static_cast<int>(reference.size()));
            reference.erase(reference.begin(), reference.end() - keep);
            const auto [feats, labels] = queue.snapshot();
            if (static_cast<int>(feats.rows()) != keep) return {false, "size mismatch"};
            for (int i = 0; i < keep; ++i) {
                if (feats.row(i) != reference[static_cast<std::size_t>(i)].first ||
                    labels[static_cast<std::size_t>(i)] !=
                        reference[static_cast<std::size_t>(i)].second) {
                    return {false, "content mismatch at entry " + std::to_string(i)};
                }
            }
        }
        return {true, std::to_string(options.queue_schedules) + " schedules match the list oracle"};
    }));

    results.push_back(timed("distributions/normalization", [&]() -> std::pair<bool, std::string> {
        double worst = 0.0;
        Rng rng(20240);
        for (int k = 0; k < options.normalization_cases; ++k) {
            const int m = 1 + rng.uniform_int(6);
            const int n = 1 + rng.uniform_int(6);
            const int c = 2 + rng.uniform_int(4);
            const int d = 2 * (1 + rng.uniform_int(4));
            Mat feats(n, d), queue(m, d);
            for (int i = 0; i < n; ++i) {
                for (int j = 0; j < d; ++j) feats(i, j) = rng.normal();
            }
            for (int i = 0; i < m; ++i) {
                for (int j = 0; j < d; ++j) queue(i, j) = rng.normal();
            }
            Mlp projector = Mlp::init(MLPSpec{{d, d / 2}}, derive_seed(999, static_cast<std::uint64_t>(k)), false);
            Mlp predictor = Mlp::init(MLPSpec{{d, c}}, derive_seed(998, static_cast<std::uint64_t>(k)), false);
            FrontDoorFactors factors =
                front_door_factors(projector, predictor, Tensor::constant(queue),
                                   Tensor::constant(feats), 0.07, (k % 2) == 0);
            worst = std::max(worst,
                             std::abs(factors.sample_distribution.value().sum() - 1.0));
            const Mat attention = factors.queue_attention.value();
            for (int j = 0; j < n; ++j) {
                worst = std::max(worst, std::abs(attention.row(j).sum() - 1.0));
            }
            const Mat pair_class = factors.pair_class_distribution.value();
            for (Eigen::Index r = 0; r < pair_class.rows(); ++r) {
                worst = std::max(worst, std::abs(pair_class.row(r).sum() - 1.0));
            }
            const Mat adjusted = front_door_all(factors).value();
            for (int j = 0; j < n; ++j) {
                worst = std::max(worst, std::abs(adjusted.row(j).sum() - 1.0));
            }
        }
        return {worst <= 1e-9, "max_norm_dev=" + fmt(worst)};
    }));

    results.push_back(timed("momentum/recurrence", [&]() -> std::pair<bool, std::string> {
        constexpr double alpha = 0.9;
        constexpr int steps = 20;
        ModelBundle bundle = init_bundle(MLPSpec{{3, 4}}, 2, 5);
        const Mat initial_student = bundle.student.weight(0).value();
        std::vector<Mat> teachers;
        Rng rng(31);
        for (int t = 1; t <= steps; ++t) {
            Mat teacher(bundle.teacher.weight(0).rows(), bundle.teacher.weight(0).cols());
            for (Eigen::Index i = 0; i < teacher.rows(); ++i) {
                for (Eigen::Index j = 0; j < teacher.cols(); ++j) teacher(i, j) = rng.normal();
            }
            bundle.teacher.weight(0).mutable_value() = teacher;
            teachers.push_back(std::move(teacher));
            momentum_update(bundle, alpha);
        }
        // Closed form of the recurrence p' <- a p' + (1-a) p.
        Mat expected = std::pow(alpha, steps) * initial_student;
        for (int t = 1; t <= steps; ++t) {
            expected += (1.0 - alpha) * std::pow(alpha, steps - t) *
                        teachers[static_cast<std::size_t>(t - 1)];
        }
        const double diff =
            (bundle.student.weight(0).value() - expected).cwiseAbs().maxCoeff();
        return {diff <= 1e-12, "max_abs_diff=" + fmt(diff)};
    }));

    return results;
}

bool all_passed(const std::vector<CheckResult>& results) {
    for (const CheckResult& r : results) {
        if (!r.passed) return false;
    }
    return true;
}

}  // namespace ccm
