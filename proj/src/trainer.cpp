#include "ccm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "ccm/rng.hpp"

namespace ccm {

namespace {

// Desk-scale backbone: the mechanism is architecture-agnostic, so a small
// MLP stands in for the usual convolutional feature extractor.
constexpr int kHiddenWidth = 64;
constexpr int kFeatureDim = 16;

MLPSpec default_backbone(int input_dim) {
    return MLPSpec{{input_dim, kHiddenWidth, kHiddenWidth, kFeatureDim}};
}

void check_student_not_trainable(TrainerState& state, const std::vector<Tensor*>& params) {
    for (const Tensor* sp : state.bundle.student.parameters()) {
        for (const Tensor* tp : params) {
            if (sp->node() == tp->node()) {
                throw StateError("train_step: student parameter aliases the optimizer set");
            }
        }
    }
}

int argmax_row(const Mat& m, Eigen::Index row) {
    int best = 0;
    double best_val = m(row, 0);
    for (Eigen::Index c = 1; c < m.cols(); ++c) {
        if (m(row, c) > best_val) {
            best_val = m(row, c);
            best = static_cast<int>(c);
        }
    }
    return best;
}

}  // namespace

TrainerState make_trainer_state(const TrainConfig& config, int input_dim, int num_classes,
                                int num_source_domains) {
    config.validate();
    TrainerState state{
        config,
        init_bundle(default_backbone(input_dim), num_classes, config.seed),
        KnowledgeQueue(config.batch_size_per_domain, num_source_domains, kFeatureDim,
                       config.queue_multiple),
        0};
    return state;
}

StepMetrics train_step(TrainerState& state, const std::vector<DomainBatch>& batches) {
    if (batches.empty()) throw ConfigError("train_step: no domain batches");
    std::set<int> seen_domains;
    for (const DomainBatch& batch : batches) {
        if (batch.x.rows() == 0) {
            throw ConfigError("train_step: empty batch for domain " + std::to_string(batch.domain));
        }
        if (batch.x.rows() != static_cast<Eigen::Index>(batch.y.size())) {
            throw ShapeError("train_step: " + std::to_string(batch.y.size()) + " labels for " +
                             shape_str(batch.x) + " features in domain " +
                             std::to_string(batch.domain));
        }
        if (!seen_domains.insert(batch.domain).second) {
            throw ConfigError("train_step: duplicate batch for domain " +
                              std::to_string(batch.domain));
        }
    }

    const TrainConfig& config = state.config;
    const LossFlags& flags = config.loss_flags;
    const double domain_weight = 1.0 / static_cast<double>(batches.size());

    // All domains see the queue as it stood before this step; pushes happen
    // after every loss and the optimizer update.
    Mat queue_feats;
    std::vector<int> queue_labels;
    const bool queue_ready = !state.queue.empty();
    if (queue_ready) std::tie(queue_feats, queue_labels) = state.queue.snapshot();

    StepMetrics metrics;
    std::vector<Mat> student_features(batches.size());

    for (std::size_t k = 0; k < batches.size(); ++k) {
        const DomainBatch& batch = batches[k];
        GradientTape tape;

        Tensor features = state.bundle.teacher.forward(Tensor::constant(batch.x));
        momentum_update(state.bundle, config.alpha);
        ++state.momentum_updates;
        student_features[k] = state.bundle.student.forward_values(batch.x);

        std::optional<Tensor> teach;
        if (flags.teach) {
            teach = teaching_loss(classify(state.bundle.classifier, features), batch.y);
        }
        std::optional<Tensor> learn;
        if (flags.learn && queue_ready) {
            FrontDoorFactors factors = front_door_factors(
                state.bundle.projector, state.bundle.predictor, Tensor::constant(queue_feats),
                features, config.tau, /*training=*/true);
            learn = causal_effect_loss(front_door_all(factors), batch.y, &metrics.clamp_events);
        }
        std::optional<Tensor> cs;
        if (flags.cs && queue_ready) {
            cs = contrastive_clustering_loss(features, queue_feats, queue_labels, batch.y,
                                             config.tau);
        }
        LossBreakdown breakdown = assemble_total_loss(flags, teach, learn, cs);
        tape.backward(scale(breakdown.total, domain_weight));

        metrics.teach.push_back(breakdown.teach_value());
        metrics.learn.push_back(breakdown.learn_value());
        metrics.cs.push_back(breakdown.cs_value());
        metrics.total.push_back(breakdown.total_value());
    }

    std::vector<Tensor*> params = state.bundle.trainable_parameters();
    check_student_not_trainable(state, params);
    for (Tensor* p : params) {
        if (!p->has_grad()) continue;  // untouched paths stay bit-identical
        p->mutable_value() -= config.learning_rate * p->grad();
        p->zero_grad();
    }

    for (std::size_t k = 0; k < batches.size(); ++k) {
        state.queue.push_batch(student_features[k], batches[k].y);
    }
    return metrics;
}

namespace {

std::vector<int> predict_classifier(const ModelBundle& bundle, const Mat& x) {
    const Mat logits = bundle.classifier.forward_values(bundle.teacher.forward_values(x));
    std::vector<int> out(static_cast<std::size_t>(logits.rows()));
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        out[static_cast<std::size_t>(i)] = argmax_row(logits, i);
    }
    return out;
}

// Front-door inference. Every sample is its own batch: the inner expectation
// over P(X) collapses onto the sample itself, so the adjusted distribution is
//   score_j(y) = sum_i attention(j, i) * softmax(G(concat(H(z_i), H(f_j))))(y)
// which depends on nothing but the sample and the frozen queue.
std::vector<int> predict_frontdoor(const ModelBundle& bundle, const KnowledgeQueue& queue,
                                   const Mat& x, double tau) {
    if (queue.empty()) {
        throw StateError("predict: front-door mode requires a non-empty queue");
    }
    const auto [queue_feats, queue_labels] = queue.snapshot();
    const int m = static_cast<int>(queue_feats.rows());
    const int n = static_cast<int>(x.rows());
    const int d = static_cast<int>(queue_feats.cols());

    const Mat features = bundle.teacher.forward_values(x);
    const Mat normalized_queue = l2_normalize_rows_value(queue_feats);
    const Mat normalized_features = l2_normalize_rows_value(features);
    const double sim_scale = 1.0 / (tau * std::sqrt(static_cast<double>(d)));
    const Mat attention =
        softmax_rows_value((normalized_features * normalized_queue.transpose()) * sim_scale);

    const Mat projected_queue = bundle.projector.forward_values(queue_feats);  // m x d/2
    const Mat projected_features = bundle.projector.forward_values(features);  // n x d/2
    const Eigen::Index half = projected_queue.cols();

    std::vector<int> out(static_cast<std::size_t>(n));
    constexpr int kChunk = 128;
    Mat pairs(static_cast<Eigen::Index>(m) * kChunk, 2 * half);
    for (int start = 0; start < n; start += kChunk) {
        const int count = std::min(kChunk, n - start);
        pairs.resize(static_cast<Eigen::Index>(m) * count, 2 * half);
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < count; ++j) {
                pairs.row(static_cast<Eigen::Index>(i) * count + j)
                    << projected_queue.row(i), projected_features.row(start + j);
            }
        }
        const Mat pair_probs = softmax_rows_value(bundle.predictor.forward_values(pairs));
        for (int j = 0; j < count; ++j) {
            Eigen::RowVectorXd score = Eigen::RowVectorXd::Zero(pair_probs.cols());
            for (int i = 0; i < m; ++i) {
                score += attention(start + j, i) *
                         pair_probs.row(static_cast<Eigen::Index>(i) * count + j);
            }
            int best = 0;
            for (Eigen::Index c = 1; c < score.size(); ++c) {
                if (score(c) > score(best)) best = static_cast<int>(c);
            }
            out[static_cast<std::size_t>(start + j)] = best;
        }
    }
    return out;
}

}  // namespace

std::vector<int> predict(const ModelBundle& bundle, const KnowledgeQueue* queue, const Mat& x,
                         PredictionMode mode, double tau) {
    if (mode == PredictionMode::classifier) return predict_classifier(bundle, x);
    if (!queue) throw StateError("predict: front-door mode requires a queue");
    return predict_frontdoor(bundle, *queue, x, tau);
}

double evaluate(const ModelBundle& bundle, const KnowledgeQueue* queue, const Mat& x,
                const std::vector<int>& labels, PredictionMode mode, double tau) {
    if (x.rows() == 0) throw ConfigError("evaluate: empty dataset");
    const std::vector<int> predictions = predict(bundle, queue, x, mode, tau);
    int correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (predictions[i] == labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double evaluate(const ModelBundle& bundle, const KnowledgeQueue* queue,
                const std::vector<Sample>& samples, PredictionMode mode, double tau) {
    return evaluate(bundle, queue, stack_features(samples), stack_labels(samples), mode, tau);
}

FitResult fit(const TrainConfig& config, const Dataset& dataset) {
    config.validate();
    dataset.spec.validate();
    if (dataset.spec.num_domains < 3) {
        throw ConfigError("fit: need at least 2 source domains plus one held-out domain, got " +
                          std::to_string(dataset.spec.num_domains) + " total");
    }
    for (int d = 0; d < dataset.spec.num_domains; ++d) {
        auto it = dataset.domains.find(d);
        if (it == dataset.domains.end() || it->second.empty()) {
            throw ConfigError("fit: domain " + std::to_string(d) + " is missing or empty");
        }
    }

    const int test_domain = dataset.spec.num_domains - 1;
    const int num_source = dataset.spec.num_domains - 1;
    const SplitData split =
        split_train_val(dataset.domains, config.val_fraction, config.seed, test_domain);

    struct DomainData {
        int domain;
        Mat x;
        std::vector<int> y;
    };
    std::vector<DomainData> train;
    std::size_t min_train = std::numeric_limits<std::size_t>::max();
    for (const auto& [domain, samples] : split.train) {
        train.push_back({domain, stack_features(samples), stack_labels(samples)});
        min_train = std::min(min_train, samples.size());
    }
    std::vector<Sample> val_pool;
    for (const auto& [domain, samples] : split.val) {
        val_pool.insert(val_pool.end(), samples.begin(), samples.end());
    }
    const Mat val_x = stack_features(val_pool);
    const std::vector<int> val_y = stack_labels(val_pool);
    const Mat test_x = stack_features(split.test);
    const std::vector<int> test_y = stack_labels(split.test);

    TrainerState state = make_trainer_state(config, dataset.spec.input_dim(),
                                            dataset.spec.num_classes, num_source);

    FitResult result;
    if (config.epochs == 0) {
        result.bundle = state.bundle.clone();
        result.queue = state.queue;
        result.best_epoch = -1;
        result.val_accuracy = evaluate(state.bundle, &state.queue, val_x, val_y,
                                       config.prediction_mode, config.tau);
        result.test_accuracy = evaluate(state.bundle, &state.queue, test_x, test_y,
                                        config.prediction_mode, config.tau);
        return result;
    }

    const int batch = config.batch_size_per_domain;
    const int steps_per_epoch =
        std::max(1, static_cast<int>(min_train) / batch);

    double best_val = -1.0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        // One pass over the smallest source domain, reshuffled per epoch.
        Rng shuffle_rng(derive_seed(config.seed, 0xE70C0 + static_cast<std::uint64_t>(epoch)));
        std::vector<std::vector<int>> order(train.size());
        for (std::size_t k = 0; k < train.size(); ++k) {
            order[k].resize(train[k].y.size());
            for (std::size_t i = 0; i < order[k].size(); ++i) order[k][i] = static_cast<int>(i);
            shuffle_rng.shuffle(order[k]);
        }

        MetricsRecord record;
        record.epoch = epoch;
        record.l_teach.assign(train.size(), 0.0);
        record.l_learn.assign(train.size(), 0.0);
        record.l_cs.assign(train.size(), 0.0);

        for (int s = 0; s < steps_per_epoch; ++s) {
            std::vector<DomainBatch> batches;
            for (std::size_t k = 0; k < train.size(); ++k) {
                const int n_k = static_cast<int>(train[k].y.size());
                const int start = s * batch;
                const int count = std::min(batch, n_k - start);
                DomainBatch b;
                b.domain = train[k].domain;
                b.x.resize(count, train[k].x.cols());
                b.y.resize(static_cast<std::size_t>(count));
                for (int i = 0; i < count; ++i) {
                    const int idx = order[k][static_cast<std::size_t>(start + i)];
                    b.x.row(i) = train[k].x.row(idx);
                    b.y[static_cast<std::size_t>(i)] = train[k].y[static_cast<std::size_t>(idx)];
                }
                batches.push_back(std::move(b));
            }
            const StepMetrics step = train_step(state, batches);
            for (std::size_t k = 0; k < train.size(); ++k) {
                record.l_teach[k] += step.teach[k];
                record.l_learn[k] += step.learn[k];
                record.l_cs[k] += step.cs[k];
                record.l_all += step.total[k] / static_cast<double>(train.size());
            }
            record.clamp_events += step.clamp_events;
        }
        for (std::size_t k = 0; k < train.size(); ++k) {
            record.l_teach[k] /= steps_per_epoch;
            record.l_learn[k] /= steps_per_epoch;
            record.l_cs[k] /= steps_per_epoch;
        }
        record.l_all /= steps_per_epoch;

        record.val_accuracy = evaluate(state.bundle, &state.queue, val_x, val_y,
                                       config.prediction_mode, config.tau);
        record.test_accuracy = evaluate(state.bundle, &state.queue, test_x, test_y,
                                        config.prediction_mode, config.tau);
        result.history.push_back(record);

        if (record.val_accuracy > best_val) {
            best_val = record.val_accuracy;
            result.bundle = state.bundle.clone();
            result.queue = state.queue;
            result.best_epoch = epoch;
            result.val_accuracy = record.val_accuracy;
            result.test_accuracy = record.test_accuracy;
        }
    }
    return result;
}

std::vector<AblationRow> run_ablation(const TrainConfig& config, const Dataset& dataset) {
    const struct {
        const char* name;
        LossFlags flags;
    } rows[] = {
        {"wo_teach", {false, true, true}},
        {"wo_learn", {true, false, true}},
        {"wo_cs", {true, true, false}},
        {"teach_only", {true, false, false}},
        {"full", {true, true, true}},
    };
    std::vector<AblationRow> out;
    for (const auto& row : rows) {
        TrainConfig cfg = config;
        cfg.loss_flags = row.flags;
        cfg.prediction_mode =
            row.flags.learn ? config.prediction_mode : PredictionMode::classifier;
        const FitResult result = fit(cfg, dataset);
        out.push_back({row.name, row.flags, cfg.prediction_mode, result.val_accuracy,
                       result.test_accuracy, cfg.seed});
    }
    return out;
}

std::string metrics_to_jsonl(const FitResult& result, const TrainConfig& config) {
    std::ostringstream os;
    for (const MetricsRecord& r : result.history) {
        nlohmann::json line{{"epoch", r.epoch},       {"l_teach", r.l_teach},
                            {"l_learn", r.l_learn},   {"l_cs", r.l_cs},
                            {"l_all", r.l_all},       {"val_accuracy", r.val_accuracy},
                            {"test_accuracy", r.test_accuracy}, {"clamp_events", r.clamp_events}};
        os << line.dump() << "\n";
    }
    nlohmann::json summary{{"summary", true},
                           {"best_epoch", result.best_epoch},
                           {"val_accuracy", result.val_accuracy},
                           {"test_accuracy", result.test_accuracy},
                           {"config", to_json(config)}};
    os << summary.dump() << "\n";
    return os.str();
}

}  // namespace ccm
