#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <vector>

#include "ccm/queue.hpp"
#include "ccm/rng.hpp"

using namespace ccm;

namespace {

Mat tagged_rows(int count, int dim, double tag_start) {
    Mat m(count, dim);
    for (int i = 0; i < count; ++i) {
        for (int j = 0; j < dim; ++j) m(i, j) = tag_start + i + 0.01 * j;
    }
    return m;
}

}  // namespace

TEST_CASE("capacity follows 4 * batch_size * num_domains") {
    CHECK(new_queue(32, 3, 16).capacity() == 384);
    CHECK(new_queue(1, 1, 4).capacity() == 4);
    CHECK_THROWS_AS(new_queue(0, 3, 16), ConfigError);
    CHECK_THROWS_AS(new_queue(32, -1, 16), ConfigError);
    CHECK_THROWS_AS(new_queue(32, 3, 0), ConfigError);
}

TEST_CASE("width mismatches are rejected") {
    KnowledgeQueue queue = new_queue(2, 2, 16);
    CHECK_THROWS_AS(queue.push_batch(Mat::Zero(2, 15), {0, 1}), ShapeError);
    CHECK_THROWS_AS(queue.push_batch(Mat::Zero(2, 16), {0}), ShapeError);
}

TEST_CASE("a batch larger than the capacity is rejected") {
    KnowledgeQueue queue = KnowledgeQueue::with_capacity(4, 2);
    CHECK_THROWS_AS(queue.push_batch(Mat::Zero(5, 2), {0, 1, 2, 3, 4}), ShapeError);
}

TEST_CASE("fifo eviction keeps the newest entries in order") {
    KnowledgeQueue queue = KnowledgeQueue::with_capacity(4, 2);
    queue.push_batch(tagged_rows(2, 2, 0.0), {0, 1});    // a, b
    queue.push_batch(tagged_rows(2, 2, 10.0), {2, 3});   // c, d
    queue.push_batch(tagged_rows(2, 2, 20.0), {4, 5});   // e, f evicts a, b
    const auto [feats, labels] = queue.snapshot();
    CHECK(labels == std::vector<int>{2, 3, 4, 5});
    CHECK(feats(0, 0) == 10.0);
    CHECK(feats(3, 0) == 21.0);
}

TEST_CASE("pushing a full-capacity batch replaces everything") {
    KnowledgeQueue queue = KnowledgeQueue::with_capacity(3, 2);
    queue.push_batch(tagged_rows(3, 2, 0.0), {0, 1, 2});
    queue.push_batch(tagged_rows(3, 2, 50.0), {7, 8, 9});
    const auto [feats, labels] = queue.snapshot();
    CHECK(labels == std::vector<int>{7, 8, 9});
    CHECK(feats == tagged_rows(3, 2, 50.0));
}

TEST_CASE("snapshot is a copy, immune to later pushes") {
    KnowledgeQueue queue = KnowledgeQueue::with_capacity(4, 2);
    queue.push_batch(tagged_rows(1, 2, 5.0), {3});
    const auto [feats, labels] = queue.snapshot();
    CHECK(feats.rows() == 1);
    CHECK(feats(0, 0) == 5.0);
    queue.push_batch(tagged_rows(4, 2, 90.0), {0, 0, 0, 0});
    CHECK(feats(0, 0) == 5.0);
    CHECK(labels == std::vector<int>{3});
}

TEST_CASE("snapshot of an empty queue is a state error") {
    KnowledgeQueue queue = new_queue(2, 2, 4);
    CHECK_THROWS_AS(queue.snapshot(), StateError);
}

TEST_CASE("entry access stays label-synchronized across eviction") {
    KnowledgeQueue queue = KnowledgeQueue::with_capacity(3, 2);
    queue.push_batch(tagged_rows(2, 2, 0.0), {10, 11});
    queue.push_batch(tagged_rows(2, 2, 50.0), {12, 13});  // evicts the first entry
    REQUIRE(queue.size() == 3);
    CHECK(queue.entry(0).label == 11);
    CHECK(queue.entry(0).feature(0) == 1.0);
    CHECK(queue.entry(1).label == 12);
    CHECK(queue.entry(1).feature(0) == 50.0);
    CHECK(queue.entry(2).label == 13);
    CHECK_THROWS_AS(queue.entry(3), ShapeError);
    CHECK_THROWS_AS(queue.entry(-1), ShapeError);
}

TEST_CASE("after warm-up the size stays pinned at the capacity") {
    KnowledgeQueue queue = KnowledgeQueue::with_capacity(6, 2);
    for (int p = 0; p < 10; ++p) {
        queue.push_batch(tagged_rows(3, 2, p * 100.0), {p, p, p});
        CHECK(queue.size() == std::min(6, 3 * (p + 1)));
    }
    CHECK(queue.warmed());
    CHECK(queue.snapshot().first.rows() == 6);
}

// Property: any push schedule leaves the queue holding exactly the last
// `capacity` pushed entries, in push order. Oracle: a plain list.
TEST_CASE("random push schedules match the list oracle") {
    Rng rng(99);
    for (int schedule = 0; schedule < 300; ++schedule) {
        const int capacity = 1 + rng.uniform_int(12);
        const int dim = 1 + rng.uniform_int(4);
        KnowledgeQueue queue = KnowledgeQueue::with_capacity(capacity, dim);
        std::vector<std::pair<Eigen::RowVectorXd, int>> oracle;
        const int pushes = rng.uniform_int(8);
        for (int p = 0; p < pushes; ++p) {
            const int count = 1 + rng.uniform_int(capacity);
            Mat feats(count, dim);
            std::vector<int> labels(static_cast<std::size_t>(count));
            for (int i = 0; i < count; ++i) {
                for (int j = 0; j < dim; ++j) feats(i, j) = rng.normal();
                labels[static_cast<std::size_t>(i)] = rng.uniform_int(7);
                oracle.emplace_back(feats.row(i), labels[static_cast<std::size_t>(i)]);
            }
            queue.push_batch(feats, labels);
        }
        const int keep = std::min<int>(capacity, static_cast<int>(oracle.size()));
        REQUIRE(queue.size() == keep);
        if (keep == 0) continue;
        const auto [feats, labels] = queue.snapshot();
        for (int i = 0; i < keep; ++i) {
            const auto& [ofeat, olabel] = oracle[oracle.size() - static_cast<std::size_t>(keep) +
                                                 static_cast<std::size_t>(i)];
            CHECK(feats.row(i) == ofeat);
            CHECK(labels[static_cast<std::size_t>(i)] == olabel);
        }
    }
}
