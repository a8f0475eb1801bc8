#include "ccm/data.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <string>

#include "ccm/rng.hpp"

namespace ccm {

namespace {

// Feature geometry: the spurious block is deliberately louder than the core
// block so that similarity-driven objectives and plain ERM prefer it. The
// core block alone still separates the classes cleanly (see the linear-probe
// test), which is what makes the held-out domain flip informative.
constexpr double kCoreScale = 1.0;
constexpr double kSpuriousScale = 15.0;

// Rows are unit-norm and pairwise orthogonal where the dimension allows
// (Gram-Schmidt); extra classes beyond the dimension fall back to plain
// normalized Gaussians.
Mat prototype_rows(int count, int dim, Rng& rng) {
    Mat protos(count, dim);
    for (int c = 0; c < count; ++c) {
        Eigen::RowVectorXd v(dim);
        for (int j = 0; j < dim; ++j) v(j) = rng.normal();
        for (int prev = 0; prev < std::min(c, dim); ++prev) {
            v -= v.dot(protos.row(prev)) * protos.row(prev);
        }
        const double norm = v.norm();
        if (norm > 1e-8) {
            protos.row(c) = v / norm;
        } else {
            for (int j = 0; j < dim; ++j) v(j) = rng.normal();
            protos.row(c) = v / v.norm();
        }
    }
    return protos;
}

}  // namespace

void DatasetSpec::validate() const {
    if (num_classes < 2) throw ConfigError("DatasetSpec: num_classes must be >= 2");
    if (num_domains < 1) throw ConfigError("DatasetSpec: num_domains must be >= 1");
    if (core_dim < 1) throw ConfigError("DatasetSpec: core_dim must be >= 1");
    if (spurious_dim < 1) throw ConfigError("DatasetSpec: spurious_dim must be >= 1");
    if (samples_per_domain < 1) throw ConfigError("DatasetSpec: samples_per_domain must be >= 1");
    if (!(noise_std >= 0.0)) throw ConfigError("DatasetSpec: noise_std must be >= 0");
    if (static_cast<int>(spurious_agreement.size()) != num_domains) {
        throw ConfigError("DatasetSpec: spurious_agreement has " +
                          std::to_string(spurious_agreement.size()) + " entries for " +
                          std::to_string(num_domains) + " domains");
    }
    for (double p : spurious_agreement) {
        if (!(p >= 0.0 && p <= 1.0)) {
            throw ConfigError("DatasetSpec: agreement probability " + std::to_string(p) +
                              " outside [0, 1]");
        }
    }
}

DomainMap generate(const DatasetSpec& spec) {
    spec.validate();
    Rng proto_rng(derive_seed(spec.seed, 0));
    const Mat core_protos = kCoreScale * prototype_rows(spec.num_classes, spec.core_dim, proto_rng);
    const Mat spur_protos =
        kSpuriousScale * prototype_rows(spec.num_classes, spec.spurious_dim, proto_rng);

    DomainMap out;
    for (int d = 0; d < spec.num_domains; ++d) {
        Rng rng(derive_seed(spec.seed, 1 + static_cast<std::uint64_t>(d)));
        const double agreement = spec.spurious_agreement[static_cast<std::size_t>(d)];
        std::vector<Sample>& samples = out[d];
        samples.reserve(static_cast<std::size_t>(spec.samples_per_domain));
        for (int i = 0; i < spec.samples_per_domain; ++i) {
            Sample s;
            s.domain = d;
            s.label = rng.uniform_int(spec.num_classes);
            s.features.resize(spec.input_dim());

            for (int j = 0; j < spec.core_dim; ++j) {
                s.features(j) = core_protos(s.label, j) + spec.noise_std * rng.normal();
            }
            int spur_class = s.label;
            if (!(rng.uniform() < agreement)) {
                // uniformly random wrong class
                spur_class = rng.uniform_int(spec.num_classes - 1);
                if (spur_class >= s.label) ++spur_class;
            }
            for (int j = 0; j < spec.spurious_dim; ++j) {
                s.features(spec.core_dim + j) =
                    spur_protos(spur_class, j) + spec.noise_std * rng.normal();
            }
            samples.push_back(std::move(s));
        }
    }
    return out;
}

SplitData split_train_val(const DomainMap& domains, double val_fraction, std::uint64_t seed,
                          int test_domain) {
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
        throw ConfigError("split_train_val: val_fraction " + std::to_string(val_fraction) +
                          " outside (0, 1)");
    }
    if (domains.find(test_domain) == domains.end()) {
        throw ConfigError("split_train_val: test domain " + std::to_string(test_domain) +
                          " not present in the dataset");
    }
    SplitData split;
    split.test_domain = test_domain;
    split.test = domains.at(test_domain);

    for (const auto& [domain, samples] : domains) {
        if (domain == test_domain) continue;
        std::map<int, std::vector<int>> by_class;
        for (int i = 0; i < static_cast<int>(samples.size()); ++i) {
            by_class[samples[static_cast<std::size_t>(i)].label].push_back(i);
        }
        // Stratified with largest-remainder apportionment: the validation set
        // totals exactly round(fraction * n) and every class quota sits within
        // one sample of fraction * class_count.
        const int total_quota = static_cast<int>(
            std::lround(val_fraction * static_cast<double>(samples.size())));
        std::vector<std::pair<double, int>> remainders;  // (-remainder, label)
        std::map<int, int> quota;
        int assigned = 0;
        for (const auto& [label, indices] : by_class) {
            const double exact = val_fraction * static_cast<double>(indices.size());
            quota[label] = static_cast<int>(std::floor(exact));
            assigned += quota[label];
            remainders.emplace_back(-(exact - std::floor(exact)), label);
        }
        std::sort(remainders.begin(), remainders.end());
        for (std::size_t r = 0; assigned < total_quota && r < remainders.size(); ++r) {
            ++quota[remainders[r].second];
            ++assigned;
        }

        Rng rng(derive_seed(seed, 0x5EED + static_cast<std::uint64_t>(domain)));
        std::vector<Sample>& train = split.train[domain];
        std::vector<Sample>& val = split.val[domain];
        for (auto& [label, indices] : by_class) {
            rng.shuffle(indices);
            for (int i = 0; i < static_cast<int>(indices.size()); ++i) {
                const Sample& s =
                    samples[static_cast<std::size_t>(indices[static_cast<std::size_t>(i)])];
                (i < quota[label] ? val : train).push_back(s);
            }
        }
    }
    return split;
}

Mat stack_features(const std::vector<Sample>& samples) {
    if (samples.empty()) return Mat(0, 0);
    Mat out(static_cast<Eigen::Index>(samples.size()), samples.front().features.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        out.row(static_cast<Eigen::Index>(i)) = samples[i].features;
    }
    return out;
}

std::vector<int> stack_labels(const std::vector<Sample>& samples) {
    std::vector<int> out;
    out.reserve(samples.size());
    for (const Sample& s : samples) out.push_back(s.label);
    return out;
}

// ---------------------------------------------------------------------------
// Binary cache format
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'C', 'C', 'M', 'D', 'A', 'T', 'A', '\x01'};

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const char* what) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw IoError(std::string("dataset file truncated while reading ") + what);
    return v;
}

void check_field(const char* name, double got, double expected) {
    if (got != expected) {
        throw IoError(std::string("dataset header mismatch: ") + name + " is " +
                      std::to_string(got) + " but the requesting spec has " +
                      std::to_string(expected));
    }
}

}  // namespace

void save_dataset(const std::filesystem::path& path, const Dataset& dataset) {
    dataset.spec.validate();
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os.write(kMagic, sizeof(kMagic));
    const DatasetSpec& s = dataset.spec;
    write_pod(os, static_cast<std::int32_t>(s.num_classes));
    write_pod(os, static_cast<std::int32_t>(s.num_domains));
    write_pod(os, static_cast<std::int32_t>(s.core_dim));
    write_pod(os, static_cast<std::int32_t>(s.spurious_dim));
    write_pod(os, s.noise_std);
    write_pod(os, static_cast<std::int32_t>(s.samples_per_domain));
    write_pod(os, s.seed);
    for (double p : s.spurious_agreement) write_pod(os, p);

    write_pod(os, static_cast<std::int32_t>(dataset.domains.size()));
    for (const auto& [domain, samples] : dataset.domains) {
        write_pod(os, static_cast<std::int32_t>(domain));
        write_pod(os, static_cast<std::int32_t>(samples.size()));
        for (const Sample& sample : samples) {
            write_pod(os, static_cast<std::int32_t>(sample.label));
            os.write(reinterpret_cast<const char*>(sample.features.data()),
                     static_cast<std::streamsize>(sizeof(double)) * sample.features.size());
        }
    }
    if (!os) throw IoError("failed writing dataset to " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path, const DatasetSpec* expected) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open dataset file " + path.string());
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw IoError(path.string() + " is not a ccm dataset file (bad magic)");
    }
    Dataset out;
    DatasetSpec& s = out.spec;
    s.num_classes = read_pod<std::int32_t>(is, "num_classes");
    s.num_domains = read_pod<std::int32_t>(is, "num_domains");
    s.core_dim = read_pod<std::int32_t>(is, "core_dim");
    s.spurious_dim = read_pod<std::int32_t>(is, "spurious_dim");
    s.noise_std = read_pod<double>(is, "noise_std");
    s.samples_per_domain = read_pod<std::int32_t>(is, "samples_per_domain");
    s.seed = read_pod<std::uint64_t>(is, "seed");
    if (s.num_domains < 1 || s.num_domains > 1'000'000) {
        throw IoError("dataset header corrupt: num_domains " + std::to_string(s.num_domains));
    }
    s.spurious_agreement.resize(static_cast<std::size_t>(s.num_domains));
    for (double& p : s.spurious_agreement) p = read_pod<double>(is, "spurious_agreement");
    s.validate();

    if (expected) {
        check_field("num_classes", s.num_classes, expected->num_classes);
        check_field("num_domains", s.num_domains, expected->num_domains);
        check_field("core_dim", s.core_dim, expected->core_dim);
        check_field("spurious_dim", s.spurious_dim, expected->spurious_dim);
        check_field("noise_std", s.noise_std, expected->noise_std);
        check_field("samples_per_domain", s.samples_per_domain, expected->samples_per_domain);
        check_field("seed", static_cast<double>(s.seed), static_cast<double>(expected->seed));
        for (int d = 0; d < s.num_domains; ++d) {
            check_field("spurious_agreement", s.spurious_agreement[static_cast<std::size_t>(d)],
                        expected->spurious_agreement[static_cast<std::size_t>(d)]);
        }
    }

    const int domain_count = read_pod<std::int32_t>(is, "domain count");
    for (int k = 0; k < domain_count; ++k) {
        const int domain = read_pod<std::int32_t>(is, "domain id");
        const int count = read_pod<std::int32_t>(is, "sample count");
        if (count < 0) throw IoError("dataset file corrupt: negative sample count");
        std::vector<Sample>& samples = out.domains[domain];
        samples.resize(static_cast<std::size_t>(count));
        for (Sample& sample : samples) {
            sample.domain = domain;
            sample.label = read_pod<std::int32_t>(is, "label");
            sample.features.resize(s.input_dim());
            is.read(reinterpret_cast<char*>(sample.features.data()),
                    static_cast<std::streamsize>(sizeof(double)) * s.input_dim());
            if (!is) throw IoError("dataset file truncated while reading features");
        }
    }
    return out;
}

}  // namespace ccm
