#include "ccm/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace ccm {

namespace {

constexpr char kMagic[8] = {'C', 'C', 'M', 'C', 'K', 'P', 'T', '\x01'};

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const char* what) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw IoError(std::string("checkpoint truncated while reading ") + what);
    return v;
}

void write_mat(std::ostream& os, const Mat& m) {
    write_pod(os, static_cast<std::int32_t>(m.rows()));
    write_pod(os, static_cast<std::int32_t>(m.cols()));
    os.write(reinterpret_cast<const char*>(m.data()),
             static_cast<std::streamsize>(sizeof(double)) * m.size());
}

Mat read_mat(std::istream& is, const char* what) {
    const int rows = read_pod<std::int32_t>(is, what);
    const int cols = read_pod<std::int32_t>(is, what);
    if (rows < 0 || cols < 0 || static_cast<long long>(rows) * cols > (1ll << 30)) {
        throw IoError(std::string("checkpoint corrupt: bad matrix header for ") + what);
    }
    Mat m(rows, cols);
    is.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double)) * m.size());
    if (!is) throw IoError(std::string("checkpoint truncated while reading ") + what);
    return m;
}

void write_net(std::ostream& os, const Mlp& net) {
    const auto& widths = net.spec().layer_widths;
    write_pod(os, static_cast<std::int32_t>(widths.size()));
    for (int w : widths) write_pod(os, static_cast<std::int32_t>(w));
    for (int l = 0; l < net.layer_count(); ++l) {
        write_mat(os, net.weight(l).value());
        write_mat(os, net.bias(l).value());
    }
}

Mlp read_net(std::istream& is, const char* what, bool trainable) {
    const int width_count = read_pod<std::int32_t>(is, what);
    if (width_count < 2 || width_count > 1024) {
        throw IoError(std::string("checkpoint corrupt: bad layer count for ") + what);
    }
    MLPSpec spec;
    for (int i = 0; i < width_count; ++i) {
        spec.layer_widths.push_back(read_pod<std::int32_t>(is, what));
    }
    // Seed is irrelevant here; every parameter gets overwritten below.
    Mlp net = Mlp::init(spec, 0, trainable);
    for (int l = 0; l < net.layer_count(); ++l) {
        Mat w = read_mat(is, what);
        Mat b = read_mat(is, what);
        if (w.rows() != net.weight(l).rows() || w.cols() != net.weight(l).cols()) {
            throw IoError(std::string("checkpoint corrupt: weight shape mismatch in ") + what);
        }
        net.weight(l).mutable_value() = std::move(w);
        net.bias(l).mutable_value() = std::move(b);
    }
    return net;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelBundle& bundle,
                     const KnowledgeQueue* queue, const std::string& config_echo) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os.write(kMagic, sizeof(kMagic));
    write_pod(os, bundle.seed);
    write_pod(os, static_cast<std::int32_t>(bundle.num_classes));
    write_net(os, bundle.teacher);
    write_net(os, bundle.student);
    write_net(os, bundle.classifier);
    write_net(os, bundle.projector);
    write_net(os, bundle.predictor);

    const std::uint8_t has_queue = queue != nullptr && !queue->empty() ? 1 : 0;
    write_pod(os, has_queue);
    if (has_queue) {
        auto [feats, labels] = queue->snapshot();
        write_pod(os, static_cast<std::int32_t>(queue->capacity()));
        write_pod(os, static_cast<std::int32_t>(queue->feature_dim()));
        write_pod(os, static_cast<std::int32_t>(feats.rows()));
        for (Eigen::Index i = 0; i < feats.rows(); ++i) {
            write_pod(os, static_cast<std::int32_t>(labels[static_cast<std::size_t>(i)]));
            os.write(reinterpret_cast<const char*>(feats.row(i).data()),
                     static_cast<std::streamsize>(sizeof(double)) * feats.cols());
        }
    }

    write_pod(os, static_cast<std::uint32_t>(config_echo.size()));
    os.write(config_echo.data(), static_cast<std::streamsize>(config_echo.size()));
    if (!os) throw IoError("failed writing checkpoint to " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint file " + path.string());
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw IoError(path.string() + " is not a ccm checkpoint file (bad magic)");
    }
    Checkpoint out;
    out.bundle.seed = read_pod<std::uint64_t>(is, "seed");
    out.bundle.num_classes = read_pod<std::int32_t>(is, "num_classes");
    out.bundle.teacher = read_net(is, "teacher", true);
    out.bundle.student = read_net(is, "student", false);
    out.bundle.classifier = read_net(is, "classifier", true);
    out.bundle.projector = read_net(is, "projector", true);
    out.bundle.predictor = read_net(is, "predictor", true);

    const auto has_queue = read_pod<std::uint8_t>(is, "queue flag");
    if (has_queue) {
        const int capacity = read_pod<std::int32_t>(is, "queue capacity");
        const int dim = read_pod<std::int32_t>(is, "queue dim");
        const int size = read_pod<std::int32_t>(is, "queue size");
        if (capacity < 1 || dim < 1 || size < 0 || size > capacity) {
            throw IoError("checkpoint corrupt: bad queue header");
        }
        KnowledgeQueue queue = KnowledgeQueue::with_capacity(capacity, dim);
        Mat feats(size, dim);
        std::vector<int> labels(static_cast<std::size_t>(size));
        for (int i = 0; i < size; ++i) {
            labels[static_cast<std::size_t>(i)] = read_pod<std::int32_t>(is, "queue label");
            is.read(reinterpret_cast<char*>(feats.row(i).data()),
                    static_cast<std::streamsize>(sizeof(double)) * dim);
            if (!is) throw IoError("checkpoint truncated while reading queue features");
        }
        if (size > 0) queue.push_batch(feats, labels);
        out.queue = std::move(queue);
    }

    const auto echo_len = read_pod<std::uint32_t>(is, "config echo length");
    out.config_echo.resize(echo_len);
    if (echo_len > 0) {
        is.read(out.config_echo.data(), static_cast<std::streamsize>(echo_len));
        if (!is) throw IoError("checkpoint truncated while reading config echo");
    }
    return out;
}

}  // namespace ccm
