#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ccm/losses.hpp"
#include "ccm/tensor.hpp"

namespace ccm {

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
    double seconds = 0.0;
};

struct VerifyOptions {
    // Negative-control knob: adds a constant offset to every analytic
    // gradient inside the check harness, which must make the gradient checks
    // fail. Exists so tests can prove the harness detects broken gradients.
    bool perturb_gradient = false;
    int gradient_seeds_per_loss = 6;
    int normalization_cases = 100;
    int queue_schedules = 100;
    int front_door_seeds = 10;
};

// The built-in battery: gradient checks on every loss, front-door oracle
// equivalence, queue FIFO behaviour, distribution normalization, momentum
// recurrence. Runs in well under a minute.
std::vector<CheckResult> run_verification(const VerifyOptions& options = {});
bool all_passed(const std::vector<CheckResult>& results);

// Plain triple-loop reference for the front-door adjustment, independent of
// the vectorized path: out(j, y) = sum_i attention(j, i) *
// sum_j' sample_dist(j') * pair_class(i*N + j', y).
Mat front_door_oracle(const Mat& sample_dist, const Mat& attention, const Mat& pair_class,
                      int queue_size, int batch_size, int num_classes);

// Random factor triple with every invariant satisfied (rows are softmax
// distributions), as constants with no gradient linkage.
FrontDoorFactors random_front_door_factors(int queue_size, int batch_size, int num_classes,
                                           std::uint64_t seed);

enum class LossKind { teach, learn, cs, all };

// Max relative error between the analytic parameter gradient of one loss on
// a seeded tiny model and central finite differences over every trainable
// coordinate. analytic_offset shifts the analytic side (for the negative
// control).
double loss_gradient_error(LossKind kind, std::uint64_t seed, double analytic_offset = 0.0);

}  // namespace ccm
