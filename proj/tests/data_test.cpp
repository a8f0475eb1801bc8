#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "ccm/data.hpp"

using namespace ccm;

namespace {

bool samples_equal(const Sample& a, const Sample& b) {
    return a.label == b.label && a.domain == b.domain && a.features == b.features;
}

bool domains_equal(const DomainMap& a, const DomainMap& b) {
    if (a.size() != b.size()) return false;
    for (const auto& [domain, samples] : a) {
        auto it = b.find(domain);
        if (it == b.end() || it->second.size() != samples.size()) return false;
        for (std::size_t i = 0; i < samples.size(); ++i) {
            if (!samples_equal(samples[i], it->second[i])) return false;
        }
    }
    return true;
}

DatasetSpec small_spec() {
    DatasetSpec spec;
    spec.num_classes = 4;
    spec.num_domains = 3;
    spec.core_dim = 6;
    spec.spurious_dim = 6;
    spec.spurious_agreement = {0.9, 0.8, 0.1};
    spec.noise_std = 0.2;
    spec.samples_per_domain = 200;
    spec.seed = 5;
    return spec;
}

// Empirical rate at which the spurious block sits nearest the true class
// prototype. Re-derives the prototypes by regenerating a noise-free spec.
double spurious_agreement_rate(const DatasetSpec& spec, int domain) {
    DatasetSpec clean = spec;
    clean.noise_std = 0.0;
    clean.spurious_agreement.assign(static_cast<std::size_t>(spec.num_domains), 1.0);
    clean.samples_per_domain = 200;
    // Collect one clean spurious prototype per class.
    std::map<int, Eigen::RowVectorXd> protos;
    const DomainMap clean_data = generate(clean);
    for (const auto& s : clean_data.at(0)) {
        protos.emplace(s.label, s.features.tail(spec.spurious_dim));
    }
    REQUIRE(static_cast<int>(protos.size()) == spec.num_classes);

    const DomainMap data = generate(spec);
    int agree = 0, total = 0;
    for (const Sample& s : data.at(domain)) {
        const Eigen::RowVectorXd spur = s.features.tail(spec.spurious_dim);
        int nearest = -1;
        double best = 1e300;
        for (const auto& [label, proto] : protos) {
            const double dist = (spur - proto).squaredNorm();
            if (dist < best) {
                best = dist;
                nearest = label;
            }
        }
        agree += nearest == s.label ? 1 : 0;
        ++total;
    }
    return static_cast<double>(agree) / total;
}

}  // namespace

TEST_CASE("generation is deterministic for a fixed spec") {
    const DatasetSpec spec = small_spec();
    CHECK(domains_equal(generate(spec), generate(spec)));
    DatasetSpec other = spec;
    other.seed = 6;
    CHECK_FALSE(domains_equal(generate(spec), generate(other)));
}

TEST_CASE("agreement probability 1.0 forces the branch every time") {
    DatasetSpec spec = small_spec();
    spec.spurious_agreement = {1.0, 1.0, 1.0};
    spec.noise_std = 0.0;
    CHECK(spurious_agreement_rate(spec, 0) == 1.0);
}

TEST_CASE("agreement 0.8 lands within [0.78, 0.82] at 10000 samples") {
    DatasetSpec spec = small_spec();
    spec.samples_per_domain = 10000;
    spec.noise_std = 0.05;  // keep nearest-prototype attribution unambiguous
    spec.spurious_agreement = {0.8, 0.8, 0.8};
    const double rate = spurious_agreement_rate(spec, 1);
    CHECK(rate >= 0.78);
    CHECK(rate <= 0.82);
}

TEST_CASE("generated features are finite") {
    for (const auto& [domain, samples] : generate(small_spec())) {
        for (const Sample& s : samples) CHECK(s.features.allFinite());
    }
}

TEST_CASE("per-domain labels are close to uniform at 10k samples") {
    DatasetSpec spec = small_spec();
    spec.samples_per_domain = 10000;
    const DomainMap data = generate(spec);
    for (const auto& [domain, samples] : data) {
        std::vector<int> counts(static_cast<std::size_t>(spec.num_classes), 0);
        for (const Sample& s : samples) ++counts[static_cast<std::size_t>(s.label)];
        const double expected = static_cast<double>(spec.samples_per_domain) / spec.num_classes;
        double chi2 = 0.0;
        for (int c : counts) chi2 += std::pow(c - expected, 2) / expected;
        // df = 3; anything near uniform stays far below this bound.
        CHECK(chi2 < 30.0);
    }
}

TEST_CASE("spec validation catches inconsistent fields") {
    DatasetSpec spec = small_spec();
    spec.spurious_agreement = {0.9, 0.8};  // 2 entries for 3 domains
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec = small_spec();
    spec.spurious_agreement[0] = 1.5;
    CHECK_THROWS_AS(generate(spec), ConfigError);
    spec = small_spec();
    spec.num_classes = 1;
    CHECK_THROWS_AS(generate(spec), ConfigError);
}

TEST_CASE("split sizes follow the fraction") {
    DatasetSpec spec = small_spec();
    spec.samples_per_domain = 100;
    const DomainMap data = generate(spec);
    const SplitData split = split_train_val(data, 0.2, 11, 2);
    for (const auto& [domain, train] : split.train) {
        CHECK(train.size() + split.val.at(domain).size() == 100);
        CHECK(split.val.at(domain).size() == 20);
    }
    CHECK(split.test.size() == 100);
    CHECK(split.test_domain == 2);
}

TEST_CASE("split is a partition of each source domain") {
    const DomainMap data = generate(small_spec());
    const SplitData split = split_train_val(data, 0.25, 3, 2);
    for (const auto& [domain, original] : data) {
        if (domain == 2) continue;
        // multiset equality via sorted feature fingerprints
        auto fingerprint = [](const Sample& s) {
            return std::make_pair(s.label, s.features.sum());
        };
        std::multiset<std::pair<int, double>> expected, actual;
        for (const Sample& s : original) expected.insert(fingerprint(s));
        for (const Sample& s : split.train.at(domain)) actual.insert(fingerprint(s));
        for (const Sample& s : split.val.at(domain)) actual.insert(fingerprint(s));
        CHECK(expected == actual);
    }
}

TEST_CASE("split is label-stratified within +-1 of the class quota") {
    DatasetSpec spec = small_spec();
    spec.samples_per_domain = 500;
    const DomainMap data = generate(spec);
    const double fraction = 0.2;
    const SplitData split = split_train_val(data, fraction, 17, 2);
    for (const auto& [domain, val] : split.val) {
        std::map<int, int> val_counts, class_counts;
        for (const Sample& s : val) ++val_counts[s.label];
        for (const Sample& s : data.at(domain)) ++class_counts[s.label];
        for (const auto& [label, count] : class_counts) {
            CHECK(std::abs(val_counts[label] - fraction * count) <= 1.0);
        }
    }
}

TEST_CASE("split is deterministic in the seed") {
    const DomainMap data = generate(small_spec());
    const SplitData a = split_train_val(data, 0.2, 7, 2);
    const SplitData b = split_train_val(data, 0.2, 7, 2);
    for (const auto& [domain, samples] : a.train) {
        REQUIRE(samples.size() == b.train.at(domain).size());
        for (std::size_t i = 0; i < samples.size(); ++i) {
            CHECK(samples_equal(samples[i], b.train.at(domain)[i]));
        }
    }
}

TEST_CASE("invalid fractions and missing test domains are rejected") {
    const DomainMap data = generate(small_spec());
    CHECK_THROWS_AS(split_train_val(data, 0.0, 1, 2), ConfigError);
    CHECK_THROWS_AS(split_train_val(data, 1.0, 1, 2), ConfigError);
    CHECK_THROWS_AS(split_train_val(data, 0.2, 1, 9), ConfigError);
}

// The core block alone must carry the class signal: a least-squares linear
// probe on it should be near-perfect in every domain even at noise 0.3.
TEST_CASE("linear probe on the core block reaches 95 percent everywhere") {
    DatasetSpec spec = DatasetSpec::default_benchmark();
    spec.noise_std = 0.3;
    spec.samples_per_domain = 600;
    const DomainMap data = generate(spec);

    // Fit one-vs-all least squares on the pooled source domains.
    int total = 0;
    for (int d = 0; d < spec.num_domains - 1; ++d) total += spec.samples_per_domain;
    Mat x(total, spec.core_dim + 1);  // bias column
    Mat y = Mat::Zero(total, spec.num_classes);
    int r = 0;
    for (int d = 0; d < spec.num_domains - 1; ++d) {
        for (const Sample& s : data.at(d)) {
            x.row(r).head(spec.core_dim) = s.features.head(spec.core_dim);
            x(r, spec.core_dim) = 1.0;
            y(r, s.label) = 1.0;
            ++r;
        }
    }
    const Mat w = (x.transpose() * x).ldlt().solve(x.transpose() * y);

    for (const auto& [domain, samples] : data) {
        int correct = 0;
        for (const Sample& s : samples) {
            Eigen::RowVectorXd core(spec.core_dim + 1);
            core.head(spec.core_dim) = s.features.head(spec.core_dim);
            core(spec.core_dim) = 1.0;
            Eigen::Index best;
            (core * w).maxCoeff(&best);
            correct += static_cast<int>(best) == s.label ? 1 : 0;
        }
        const double accuracy = static_cast<double>(correct) / samples.size();
        CHECK(accuracy >= 0.95);
    }
}

TEST_CASE("dataset files round-trip and rewrite byte-identically") {
    namespace fs = std::filesystem;
    const fs::path path = fs::temp_directory_path() / "ccm_data_test.bin";
    DatasetSpec spec = small_spec();
    Dataset dataset{spec, generate(spec)};
    save_dataset(path, dataset);
    const auto size_first = fs::file_size(path);

    const Dataset loaded = load_dataset(path, &spec);
    CHECK(loaded.spec == spec);
    CHECK(domains_equal(loaded.domains, dataset.domains));

    save_dataset(path, loaded);
    CHECK(fs::file_size(path) == size_first);
    std::ifstream is(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    save_dataset(path, dataset);
    std::ifstream is2(path, std::ios::binary);
    std::string bytes2((std::istreambuf_iterator<char>(is2)), std::istreambuf_iterator<char>());
    CHECK(bytes == bytes2);
    fs::remove(path);
}

TEST_CASE("loader names the first mismatched header field") {
    namespace fs = std::filesystem;
    const fs::path path = fs::temp_directory_path() / "ccm_data_mismatch.bin";
    DatasetSpec spec = small_spec();
    save_dataset(path, {spec, generate(spec)});
    DatasetSpec wrong = spec;
    wrong.noise_std = 0.5;
    try {
        load_dataset(path, &wrong);
        FAIL("expected IoError");
    } catch (const IoError& e) {
        CHECK(std::string(e.what()).find("noise_std") != std::string::npos);
    }
    fs::remove(path);
}

TEST_CASE("corrupted magic bytes are rejected") {
    namespace fs = std::filesystem;
    const fs::path path = fs::temp_directory_path() / "ccm_data_corrupt.bin";
    {
        std::ofstream os(path, std::ios::binary);
        os << "GARBAGEFILE_NOT_A_DATASET";
    }
    CHECK_THROWS_AS(load_dataset(path), IoError);
    fs::remove(path);
}
