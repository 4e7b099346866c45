#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "lsf/data.hpp"
#include "lsf/ops.hpp"

using namespace lsf;

TEST_CASE("blobs: zero sigma collapses every sample onto its center") {
    BlobSpec spec;
    spec.num_classes = 3;
    spec.dim = 4;
    spec.samples_per_class = 12;
    spec.sigma = 0.0;
    spec.seed = 5;
    const auto ds = gen_blobs(spec);
    // all train samples of one class are identical
    std::map<int, std::vector<double>> seen;
    for (std::size_t i = 0; i < ds.train.y.size(); ++i) {
        auto [it, fresh] = seen.try_emplace(ds.train.y[i], ds.train.x[i]);
        if (!fresh) REQUIRE(it->second == ds.train.x[i]);
    }
    REQUIRE(seen.size() == 3);
}

TEST_CASE("blobs: identical seeds give identical datasets") {
    BlobSpec spec;
    spec.seed = 77;
    const auto a = gen_blobs(spec);
    const auto b = gen_blobs(spec);
    REQUIRE(a.train.x == b.train.x);
    REQUIRE(a.val.x == b.val.x);
    REQUIRE(a.test.x == b.test.x);

    spec.seed = 78;
    const auto c = gen_blobs(spec);
    REQUIRE(a.train.x != c.train.x);
}

TEST_CASE("blobs: invalid specs are rejected") {
    BlobSpec spec;
    spec.num_classes = 0;
    REQUIRE_THROWS_AS(gen_blobs(spec), ConfigError);
    BlobSpec spec2;
    spec2.separation = -1.0;
    REQUIRE_THROWS_AS(gen_blobs(spec2), ConfigError);
}

TEST_CASE("blobs: splits are disjoint and sized as documented") {
    BlobSpec spec;
    spec.num_classes = 4;
    spec.samples_per_class = 100;
    spec.seed = 9;
    const auto ds = gen_blobs(spec);
    // per class: 25 test, 15 val, 60 train
    REQUIRE(ds.test.y.size() == 4 * 25);
    REQUIRE(ds.val.y.size() == 4 * 15);
    REQUIRE(ds.train.y.size() == 4 * 60);

    std::set<std::vector<double>> all;
    for (const auto* split : {&ds.train, &ds.val, &ds.test}) {
        for (const auto& x : split->x) {
            REQUIRE(all.insert(x).second);  // no sample appears twice
        }
    }
}

TEST_CASE("blobs: a one-epoch linear probe separates the default spec") {
    BlobSpec spec;
    spec.seed = 4;
    const auto ds = gen_blobs(spec);

    // single affine layer trained with plain SGD for one epoch
    const std::size_t d = spec.dim, c = spec.num_classes;
    Rng rng(1);
    std::vector<double> wv(d * c);
    for (double& v : wv) v = rng.uniform(-0.01, 0.01);
    Tensor w = Tensor::from_values({d, c}, std::move(wv), true);
    Tensor b = Tensor::from_values({c}, std::vector<double>(c, 0.0), true);

    const std::size_t batch = 16;
    for (std::size_t off = 0; off < ds.train.y.size(); off += batch) {
        const std::size_t end = std::min(ds.train.y.size(), off + batch);
        std::vector<double> xs;
        std::vector<int> ys;
        for (std::size_t i = off; i < end; ++i) {
            xs.insert(xs.end(), ds.train.x[i].begin(), ds.train.x[i].end());
            ys.push_back(ds.train.y[i]);
        }
        Graph g;
        Tensor x = Tensor::from_values({end - off, d}, std::move(xs), false);
        Tensor loss = softmax_cross_entropy(g, add_bias(g, matmul(g, x, w), b), ys);
        g.backward(loss);
        for (Tensor* p : {&w, &b}) {
            auto vals = p->mutable_values();
            const auto grad = p->grad();
            for (std::size_t i = 0; i < vals.size(); ++i) vals[i] -= 0.01 * grad[i];
            p->clear_grad();
        }
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < ds.test.y.size(); ++i) {
        Graph g;
        Tensor x = Tensor::from_values({1, d}, std::vector<double>(ds.test.x[i]), false);
        Tensor logits = add_bias(g, matmul(g, x, w), b);
        std::size_t best = 0;
        for (std::size_t j = 1; j < c; ++j) {
            if (logits[j] > logits[best]) best = j;
        }
        hits += static_cast<int>(best) == ds.test.y[i];
    }
    const double acc = static_cast<double>(hits) / static_cast<double>(ds.test.y.size());
    REQUIRE(acc >= 0.95);
}

TEST_CASE("shapes: zero shapes per image leaves pure background") {
    ShapeSceneSpec spec;
    spec.shapes_per_image = 0;
    spec.train_images = 10;
    spec.test_images = 2;
    spec.seed = 3;
    const auto ds = gen_shapes(spec);
    for (int l : ds.train.front().labels) REQUIRE(l == 0);
}

TEST_CASE("shapes: label histogram equals the generator's pixel accounting") {
    ShapeSceneSpec spec;
    spec.train_images = 15;
    spec.test_images = 5;
    spec.seed = 8;
    const auto ds = gen_shapes(spec);
    for (const auto* split : {&ds.train, &ds.val, &ds.test}) {
        for (const ShapeScene& scene : *split) {
            std::vector<std::size_t> hist(spec.num_classes + 1, 0);
            for (int l : scene.labels) ++hist[static_cast<std::size_t>(l)];
            REQUIRE(hist == scene.class_pixels);
        }
    }
}

TEST_CASE("shapes: identical seeds give byte-identical label maps") {
    ShapeSceneSpec spec;
    spec.train_images = 12;
    spec.test_images = 4;
    spec.seed = 15;
    const auto a = gen_shapes(spec);
    const auto b = gen_shapes(spec);
    REQUIRE(a.train.size() == b.train.size());
    for (std::size_t i = 0; i < a.train.size(); ++i) {
        REQUIRE(a.train[i].labels == b.train[i].labels);
        REQUIRE(a.train[i].pixels == b.train[i].pixels);
    }
}

TEST_CASE("shapes: impossible placements raise a placement error") {
    ShapeSceneSpec spec;
    spec.image_size = 12;
    spec.num_classes = 6;
    spec.shapes_per_image = 6;
    spec.min_shape = 9;
    spec.max_shape = 11;
    spec.train_images = 10;
    spec.test_images = 2;
    spec.seed = 1;
    REQUIRE_THROWS_AS(gen_shapes(spec), PlacementError);
}

TEST_CASE("split_tasks applies the rounding-up deletion rule") {
    // 5 classes per task at 30%: ceil(1.5) = 2 deleted
    std::vector<int> ten(10);
    for (int i = 0; i < 10; ++i) ten[i] = i + 1;
    TaskPlan plan = split_tasks(ten, 2, 0.30, TaskMode::classification);
    REQUIRE(plan.deleted_designated(0) == std::vector<int>{1, 2});
    REQUIRE(plan.preserved_designated(0) == std::vector<int>{3, 4, 5});

    // 10-class task at 30%: 3 deleted
    TaskPlan one = split_tasks(ten, 1, 0.30, TaskMode::classification);
    REQUIRE(one.deleted_designated(0).size() == 3);

    // 20 classes, 4 tasks of 5: after task 3 (0-based step 3) the deletion
    // set is the first 2 classes of each completed task
    std::vector<int> twenty(20);
    for (int i = 0; i < 20; ++i) twenty[i] = i;
    TaskPlan four = split_tasks(twenty, 4, 0.30, TaskMode::classification);
    REQUIRE(four.deletion_set_at(3) == std::set<int>{0, 1, 5, 6, 10, 11});
}

TEST_CASE("split_tasks validates the fraction and coverage") {
    std::vector<int> six = {0, 1, 2, 3, 4, 5};
    REQUIRE_THROWS_AS(split_tasks(six, 2, 0.0, TaskMode::classification), ConfigError);
    REQUIRE_THROWS_AS(split_tasks(six, 2, 1.0, TaskMode::classification), ConfigError);
    REQUIRE_THROWS_AS(split_tasks(six, 4, 0.3, TaskMode::classification), ConfigError);
    REQUIRE_THROWS_AS(
        split_tasks(six, std::vector<std::size_t>{2, 2}, 0.3, TaskMode::classification),
        ConfigError);

    // unequal explicit sizes: 4-2 analog
    TaskPlan plan =
        split_tasks(six, std::vector<std::size_t>{4, 2}, 0.3, TaskMode::segmentation);
    REQUIRE(plan.classes_of(0) == std::vector<int>{0, 1, 2, 3});
    REQUIRE(plan.classes_of(1) == std::vector<int>{4, 5});
    REQUIRE(plan.deleted_designated(0) == std::vector<int>{0, 1});
    REQUIRE(plan.deleted_designated(1) == std::vector<int>{4});
}

TEST_CASE("partitions are disjoint and cover learned classes") {
    std::vector<int> nine = {1, 2, 3, 4, 5, 6, 7, 8, 9};
    TaskPlan plan = split_tasks(nine, 3, 0.30, TaskMode::classification);
    const auto p = plan.partition_at(2);
    REQUIRE(p.current == std::set<int>{7, 8, 9});
    REQUIRE(p.deleted == std::set<int>{1, 4});
    REQUIRE(p.preserved == std::set<int>{2, 3, 5, 6});

    // deletion sets grow monotonically
    for (std::size_t s = 1; s < 3; ++s) {
        const auto before = plan.deletion_set_at(s - 1);
        const auto after = plan.deletion_set_at(s);
        for (int c : before) REQUIRE(after.count(c) == 1);
    }
}
