#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <vector>

#include "ccm/tensor.hpp"

namespace ccm {

struct Sample {
    Eigen::RowVectorXd features;
    int label = 0;
    int domain = 0;
};

// Multi-domain classification data with a controllable spurious block. Each
// sample is [core | spurious]: the core block is the class prototype plus
// noise in every domain; the spurious block encodes the true class only with
// per-domain probability spurious_agreement[d], otherwise a uniformly random
// wrong class. Core prototypes carry the causal signal; the spurious block is
// what a shortcut learner latches onto.
struct DatasetSpec {
    int num_classes = 5;
    int num_domains = 4;
    int core_dim = 10;
    int spurious_dim = 10;
    std::vector<double> spurious_agreement = {0.95, 0.9, 0.85, 0.05};
    double noise_std = 0.2;
    int samples_per_domain = 2000;
    std::uint64_t seed = 1;

    int input_dim() const { return core_dim + spurious_dim; }
    void validate() const;
    bool operator==(const DatasetSpec&) const = default;

    // The spurious-shift benchmark: three source domains with high agreement,
    // one held-out domain where the spurious block anti-correlates.
    static DatasetSpec default_benchmark() { return DatasetSpec{}; }
};

using DomainMap = std::map<int, std::vector<Sample>>;

struct Dataset {
    DatasetSpec spec;
    DomainMap domains;
};

// Deterministic generation: identical spec, identical bytes. Prototypes are
// seeded orthonormal-ish vectors shared across domains.
DomainMap generate(const DatasetSpec& spec);

struct SplitData {
    DomainMap train;                // per source domain
    DomainMap val;                  // per source domain
    std::vector<Sample> test;       // the held-out domain, never split
    int test_domain = -1;
};

// Seeded, label-stratified split of every source domain; the held-out domain
// stays intact as test data.
SplitData split_train_val(const DomainMap& domains, double val_fraction, std::uint64_t seed,
                          int test_domain);

// Stacks samples into a feature matrix plus label vector.
Mat stack_features(const std::vector<Sample>& samples);
std::vector<int> stack_labels(const std::vector<Sample>& samples);

// Flat binary cache with an embedded spec header. Writing is deterministic
// (same spec, same bytes). When `expected` is given, the loader verifies the
// embedded header field by field and reports the first mismatch.
void save_dataset(const std::filesystem::path& path, const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& path, const DatasetSpec* expected = nullptr);

}  // namespace ccm
