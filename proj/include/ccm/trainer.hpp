#pragma once

#include <string>
#include <vector>

#include "ccm/checkpoint.hpp"
#include "ccm/config.hpp"
#include "ccm/data.hpp"
#include "ccm/losses.hpp"
#include "ccm/nets.hpp"
#include "ccm/queue.hpp"

namespace ccm {

struct DomainBatch {
    Mat x;
    std::vector<int> y;
    int domain = 0;
};

// Per-step telemetry, one slot per source domain (batch order).
struct StepMetrics {
    std::vector<double> teach;
    std::vector<double> learn;
    std::vector<double> cs;
    std::vector<double> total;
    int clamp_events = 0;
};

struct TrainerState {
    TrainConfig config;
    ModelBundle bundle;
    KnowledgeQueue queue;
    int momentum_updates = 0;
};

// Builds bundle and queue for a dataset with the given input width and class
// count. num_source_domains sizes the queue.
TrainerState make_trainer_state(const TrainConfig& config, int input_dim, int num_classes,
                                int num_source_domains);

// One pass of the training loop over one batch per source domain:
// per domain - teacher forward, momentum update, gradient-free student
// forward, enabled losses against the pre-push queue, gradient accumulation;
// then a single SGD update of teacher/classifier/projector/predictor (never
// the student); then every domain's student features are pushed into the
// queue in domain order.
StepMetrics train_step(TrainerState& state, const std::vector<DomainBatch>& batches);

// Predictions for a feature matrix. classifier mode: argmax of C(F(x)).
// frontdoor mode: argmax of the front-door adjustment against the queue
// snapshot, with every sample treated as its own singleton batch (P(X=x)=1),
// so predictions are independent of how samples are batched.
std::vector<int> predict(const ModelBundle& bundle, const KnowledgeQueue* queue, const Mat& x,
                         PredictionMode mode, double tau);

double evaluate(const ModelBundle& bundle, const KnowledgeQueue* queue, const Mat& x,
                const std::vector<int>& labels, PredictionMode mode, double tau);
double evaluate(const ModelBundle& bundle, const KnowledgeQueue* queue,
                const std::vector<Sample>& samples, PredictionMode mode, double tau);

// Per-epoch telemetry; the schema of the metrics file.
struct MetricsRecord {
    int epoch = 0;
    std::vector<double> l_teach;  // per source domain
    std::vector<double> l_learn;
    std::vector<double> l_cs;
    double l_all = 0.0;
    double val_accuracy = 0.0;
    double test_accuracy = 0.0;
    int clamp_events = 0;
};

struct FitResult {
    ModelBundle bundle;          // checkpoint with the best validation accuracy
    KnowledgeQueue queue;        // queue state at that checkpoint
    std::vector<MetricsRecord> history;
    int best_epoch = -1;         // -1 means the initialized model (epochs == 0)
    double val_accuracy = 0.0;   // of the selected checkpoint
    double test_accuracy = 0.0;  // held-out domain, selected checkpoint only
};

// Trains for config.epochs with training-domain validation selection: after
// each epoch the pooled source validation split is scored, and the checkpoint
// with the highest validation accuracy wins (ties go to the earliest epoch).
// The held-out domain is always the highest domain id; it is never split and
// never touches selection.
FitResult fit(const TrainConfig& config, const Dataset& dataset);

struct AblationRow {
    std::string name;
    LossFlags flags;
    PredictionMode mode = PredictionMode::frontdoor;
    double val_accuracy = 0.0;
    double test_accuracy = 0.0;
    std::uint64_t seed = 0;
};

// The five ablation rows: wo_teach, wo_learn, wo_cs, teach_only, full. Rows
// whose learn term is disabled fall back to classifier prediction (the
// predictor G receives gradients only through the learn loss, so front-door
// inference over an untrained G would measure noise).
std::vector<AblationRow> run_ablation(const TrainConfig& config, const Dataset& dataset);

// Line-delimited metrics: one record per epoch plus a final summary record
// carrying the selected checkpoint and the config echo. Deterministic bytes
// for a deterministic run.
std::string metrics_to_jsonl(const FitResult& result, const TrainConfig& config);

}  // namespace ccm
