// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Thresholds and budgets are pinned in code; the training criteria
// run on the default spurious-shift benchmark.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "ccm/rng.hpp"
#include "ccm/trainer.hpp"
#include "ccm/verify.hpp"

using namespace ccm;

namespace {

using Clock = std::chrono::steady_clock;

int g_failures = 0;

void report(const std::string& name, bool passed, const std::string& detail, double seconds,
            double budget_seconds) {
    const bool in_budget = seconds < budget_seconds;
    const bool ok = passed && in_budget;
    if (!ok) ++g_failures;
    std::printf("[%s] %s: %s (%.1fs < %.0fs)\n", ok ? "PASS" : "FAIL", name.c_str(),
                detail.c_str(), seconds, budget_seconds);
    std::fflush(stdout);
}

template <typename Fn>
void criterion(const std::string& name, double budget_seconds, Fn fn) {
    const auto start = Clock::now();
    bool passed = false;
    std::string detail;
    try {
        std::tie(passed, detail) = fn();
    } catch (const std::exception& e) {
        passed = false;
        detail = std::string("exception: ") + e.what();
    }
    const double seconds = std::chrono::duration<double>(Clock::now() - start).count();
    report(name, passed, detail, seconds, budget_seconds);
}

std::string fmt(const char* format, double a, double b = 0.0, double c = 0.0) {
    char buffer[256];
    std::snprintf(buffer, sizeof(buffer), format, a, b, c);
    return buffer;
}

TrainConfig benchmark_config(std::uint64_t seed) {
    TrainConfig config;
    config.epochs = 18;
    config.batch_size_per_domain = 32;
    config.learning_rate = 0.05;
    config.seed = seed;
    return config;
}

double mean(const std::vector<double>& xs) {
    double total = 0.0;
    for (double x : xs) total += x;
    return total / static_cast<double>(xs.size());
}

}  // namespace

int main() {
    const Dataset benchmark{DatasetSpec::default_benchmark(),
                            generate(DatasetSpec::default_benchmark())};

    criterion("gradient-fidelity", 30.0, [] {
        double worst = 0.0;
        int cases = 0;
        for (const LossKind kind : {LossKind::teach, LossKind::learn, LossKind::cs, LossKind::all}) {
            for (std::uint64_t seed = 0; seed < 30; ++seed) {
                worst = std::max(worst, loss_gradient_error(kind, 9000 + seed));
                ++cases;
            }
        }
        return std::pair(worst < 1e-5 && cases >= 100,
                         fmt("max_rel_err=%.2e over %.0f cases", worst, cases));
    });

    criterion("front-door-oracle", 10.0, [] {
        double worst = 0.0;
        for (std::uint64_t seed = 0; seed < 50; ++seed) {
            for (int m = 1; m <= 8; ++m) {
                for (int n = 1; n <= 8; ++n) {
                    for (int c = 2; c <= 5; ++c) {
                        FrontDoorFactors factors = random_front_door_factors(
                            m, n, c, seed * 10007 + static_cast<std::uint64_t>(m * 289 + n * 17 + c));
                        const Mat fast = front_door_all(factors).value();
                        const Mat slow = front_door_oracle(
                            factors.sample_distribution.value(), factors.queue_attention.value(),
                            factors.pair_class_distribution.value(), m, n, c);
                        worst = std::max(worst, (fast - slow).cwiseAbs().maxCoeff());
                    }
                }
            }
        }
        return std::pair(worst <= 1e-12, fmt("max_abs_diff=%.2e over 50 seeds x grid", worst));
    });

    criterion("normalization-suite", 10.0, [] {
        double worst = 0.0;
        Rng rng(515);
        for (int k = 0; k < 1000; ++k) {
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
            Mlp projector = Mlp::init(MLPSpec{{d, d / 2}},
                                      derive_seed(3100, static_cast<std::uint64_t>(k)), false);
            Mlp predictor = Mlp::init(MLPSpec{{d, c}},
                                      derive_seed(3200, static_cast<std::uint64_t>(k)), false);
            const FrontDoorFactors factors =
                front_door_factors(projector, predictor, Tensor::constant(queue),
                                   Tensor::constant(feats), 0.07, (k % 2) == 0);
            worst = std::max(worst, std::abs(factors.sample_distribution.value().sum() - 1.0));
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
        return std::pair(worst <= 1e-9, fmt("max_norm_dev=%.2e over 1000 cases", worst));
    });

    criterion("momentum-exactness", 10.0, [] {
        constexpr double alpha = 0.999;
        constexpr int steps = 50;
        ModelBundle bundle = init_bundle(MLPSpec{{4, 6, 4}}, 3, 99);
        std::vector<std::vector<Mat>> teacher_history;
        std::vector<Mat> initial_student;
        for (const Tensor* p : bundle.student.parameters()) initial_student.push_back(p->value());

        Rng rng(515151);
        for (int t = 1; t <= steps; ++t) {
            std::vector<Mat> snapshot;
            for (Tensor* p : bundle.teacher.parameters()) {
                for (Eigen::Index i = 0; i < p->rows(); ++i) {
                    for (Eigen::Index j = 0; j < p->cols(); ++j) {
                        p->mutable_value()(i, j) = rng.normal();
                    }
                }
                snapshot.push_back(p->value());
            }
            teacher_history.push_back(std::move(snapshot));
            momentum_update(bundle, alpha);
        }
        double worst = 0.0;
        const auto params = bundle.student.parameters();
        for (std::size_t pi = 0; pi < params.size(); ++pi) {
            Mat expected = std::pow(alpha, steps) * initial_student[pi];
            for (int t = 1; t <= steps; ++t) {
                expected += (1.0 - alpha) * std::pow(alpha, steps - t) *
                            teacher_history[static_cast<std::size_t>(t - 1)][pi];
            }
            worst = std::max(worst, (params[pi]->value() - expected).cwiseAbs().maxCoeff());
        }
        return std::pair(worst <= 1e-12, fmt("max_abs_diff=%.2e after %.0f scripted steps", worst,
                                             double(steps)));
    });

    criterion("queue-fifo-property", 10.0, [] {
        Rng rng(626262);
        for (int schedule = 0; schedule < 1000; ++schedule) {
            const int batch = 1 + rng.uniform_int(5);
            const int domains = 1 + rng.uniform_int(4);
            const int dim = 1 + rng.uniform_int(4);
            KnowledgeQueue queue = new_queue(batch, domains, dim);
            if (queue.capacity() != 4 * batch * domains) {
                return std::pair(false, std::string("capacity formula violated"));
            }
            std::vector<std::pair<Eigen::RowVectorXd, int>> oracle;
            const int pushes = rng.uniform_int(10);
            for (int p = 0; p < pushes; ++p) {
                const int count = 1 + rng.uniform_int(queue.capacity());
                Mat feats(count, dim);
                std::vector<int> labels(static_cast<std::size_t>(count));
                for (int i = 0; i < count; ++i) {
                    for (int j = 0; j < dim; ++j) feats(i, j) = rng.normal();
                    labels[static_cast<std::size_t>(i)] = rng.uniform_int(9);
                    oracle.emplace_back(feats.row(i), labels[static_cast<std::size_t>(i)]);
                }
                queue.push_batch(feats, labels);
            }
            const int keep = std::min<int>(queue.capacity(), static_cast<int>(oracle.size()));
            if (queue.size() != keep) return std::pair(false, std::string("size mismatch"));
            if (keep == 0) continue;
            const auto [feats, labels] = queue.snapshot();
            for (int i = 0; i < keep; ++i) {
                const auto& [ofeat, olabel] =
                    oracle[oracle.size() - static_cast<std::size_t>(keep) + static_cast<std::size_t>(i)];
                if (feats.row(i) != ofeat || labels[static_cast<std::size_t>(i)] != olabel) {
                    return std::pair(false, std::string("content mismatch"));
                }
            }
        }
        return std::pair(true, std::string("1000 schedules match the list oracle"));
    });

    criterion("ablation-collapse", 180.0, [&benchmark] {
        std::vector<double> test_accuracies;
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            TrainConfig config = benchmark_config(seed);
            config.loss_flags = {false, true, true};  // wo_teach
            const FitResult result = fit(config, benchmark);
            test_accuracies.push_back(result.test_accuracy);
        }
        const double collapse = mean(test_accuracies);
        return std::pair(collapse <= 0.35,
                         fmt("wo_teach held-out accuracy mean=%.3f (threshold 0.35)", collapse));
    });

    criterion("directional-ccm-vs-teach-only", 300.0, [&benchmark] {
        std::vector<double> full_test, teach_test, teach_val;
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            TrainConfig full = benchmark_config(seed);
            const FitResult full_result = fit(full, benchmark);
            full_test.push_back(full_result.test_accuracy);

            TrainConfig teach = benchmark_config(seed);
            teach.loss_flags = {true, false, false};
            teach.prediction_mode = PredictionMode::classifier;
            const FitResult teach_result = fit(teach, benchmark);
            teach_test.push_back(teach_result.test_accuracy);
            teach_val.push_back(teach_result.val_accuracy);
        }
        const double full_mean = mean(full_test);
        const double teach_mean = mean(teach_test);
        const double gap = mean(teach_val) - teach_mean;
        const bool ordered = full_mean >= teach_mean;
        const bool shifted = gap >= 0.10;
        return std::pair(ordered && shifted,
                         fmt("full=%.3f vs teach_only=%.3f, domain gap=%.3f (need >= 0.10)",
                             full_mean, teach_mean, gap));
    });

    criterion("erm-degeneration", 60.0, [&benchmark] {
        TrainConfig config = benchmark_config(0);
        config.epochs = 2;
        config.loss_flags = {true, false, false};
        config.prediction_mode = PredictionMode::classifier;
        FitResult result = fit(config, benchmark);

        const Mat x = stack_features(benchmark.domains.at(benchmark.spec.num_domains - 1));
        const std::vector<int> baseline =
            predict(result.bundle, &result.queue, x, PredictionMode::classifier, config.tau);

        Rng rng(717);
        for (Mlp* head : {&result.bundle.projector, &result.bundle.predictor}) {
            for (Tensor* p : head->parameters()) {
                for (Eigen::Index i = 0; i < p->rows(); ++i) {
                    for (Eigen::Index j = 0; j < p->cols(); ++j) {
                        p->mutable_value()(i, j) += 5.0 * rng.normal();
                    }
                }
            }
        }
        KnowledgeQueue garbage = KnowledgeQueue::with_capacity(16, result.queue.feature_dim());
        Mat junk(16, result.queue.feature_dim());
        std::vector<int> junk_labels(16);
        for (int i = 0; i < 16; ++i) {
            for (int j = 0; j < result.queue.feature_dim(); ++j) junk(i, j) = 10.0 * rng.normal();
            junk_labels[static_cast<std::size_t>(i)] = rng.uniform_int(benchmark.spec.num_classes);
        }
        garbage.push_batch(junk, junk_labels);

        const std::vector<int> perturbed =
            predict(result.bundle, &garbage, x, PredictionMode::classifier, config.tau);
        int diffs = 0;
        for (std::size_t i = 0; i < baseline.size(); ++i) {
            diffs += baseline[i] != perturbed[i] ? 1 : 0;
        }
        return std::pair(diffs == 0, fmt("%.0f of %.0f predictions changed", double(diffs),
                                         double(baseline.size())));
    });

    criterion("determinism", 120.0, [&benchmark] {
        TrainConfig config = benchmark_config(0);
        config.epochs = 3;
        const FitResult a = fit(config, benchmark);
        const FitResult b = fit(config, benchmark);
        const std::string ma = metrics_to_jsonl(a, config);
        const std::string mb = metrics_to_jsonl(b, config);
        return std::pair(ma == mb, fmt("metrics byte-identical across %.0f-epoch reruns",
                                       double(config.epochs)));
    });

    if (g_failures > 0) {
        std::printf("%d criterion(s) FAILED\n", g_failures);
        return 1;
    }
    std::printf("all acceptance criteria passed\n");
    return 0;
}
