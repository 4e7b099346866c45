#include <catch2/catch_amalgamated.hpp>

#include "lsf/models.hpp"
#include "support/gradcheck.hpp"

using namespace lsf;

namespace {

ModelConfig toy_cls_config(std::size_t d = 8) {
    ModelConfig cfg;
    cfg.mode = TaskMode::classification;
    cfg.input_dim = 6;
    cfg.hidden = {10, d};
    return cfg;
}

Tensor random_input(std::size_t n, std::size_t d, Rng& rng) {
    std::vector<double> v(n * d);
    for (double& x : v) x = rng.uniform(-2.0, 2.0);
    return Tensor::from_values({n, d}, std::move(v), false);
}

void zero_params(ModelBundle& m) {
    for (auto& [name, t] : m.named_parameters()) {
        for (double& v : t.mutable_values()) v = 0.0;
    }
}

}  // namespace

TEST_CASE("zero-weight encoder maps everything to zero features") {
    Rng rng(1);
    ModelBundle m(toy_cls_config(), rng.fork(1));
    zero_params(m);
    Graph g;
    Tensor x = random_input(3, 6, rng);
    EncodedBatch enc = encode(g, m, x);
    for (double v : enc.rows.values()) REQUIRE(v == 0.0);
}

TEST_CASE("batch encode equals concatenated single encodes") {
    Rng rng(2);
    ModelBundle m(toy_cls_config(), rng.fork(1));
    Tensor x = random_input(2, 6, rng);
    Graph g;
    EncodedBatch both = encode(g, m, x);

    auto encode_one = [&](std::size_t row) {
        Graph g1;
        std::vector<double> v(x.values().begin() + static_cast<long>(row * 6),
                              x.values().begin() + static_cast<long>((row + 1) * 6));
        Tensor xi = Tensor::from_values({1, 6}, std::move(v), false);
        EncodedBatch e = encode(g1, m, xi);
        return std::vector<double>(e.rows.values().begin(), e.rows.values().end());
    };
    const auto r0 = encode_one(0);
    const auto r1 = encode_one(1);
    for (std::size_t j = 0; j < 8; ++j) {
        REQUIRE(both.rows[j] == r0[j]);
        REQUIRE(both.rows[8 + j] == r1[j]);
    }
}

TEST_CASE("seed-42 encoder fingerprint is stable across runs") {
    auto fingerprint = [] {
        Rng rng(42);
        ModelBundle m(toy_cls_config(), rng.fork(1));
        Graph g;
        Tensor x = Tensor::from_values({2, 6}, {0.5, -1.0, 0.25, 2.0, -0.75, 1.5,
                                                -0.5, 1.0, 0.0, -2.0, 0.75, 0.1});
        EncodedBatch enc = encode(g, m, x);
        std::uint64_t h = 1469598103934665603ULL;
        for (double v : enc.rows.values()) {
            const unsigned char* b = reinterpret_cast<const unsigned char*>(&v);
            for (std::size_t i = 0; i < sizeof(double); ++i) {
                h ^= b[i];
                h *= 1099511628211ULL;
            }
        }
        return h;
    };
    const std::uint64_t first = fingerprint();
    REQUIRE(first == fingerprint());
    // golden value captured once from this implementation
    REQUIRE(first == 0xda03b8835188acb3ULL);
}

TEST_CASE("decode produces the affine image of the features") {
    Rng rng(3);
    ModelConfig cfg = toy_cls_config();
    ModelBundle m(cfg, rng.fork(1));
    m.add_head({0, 1, 2}, rng.fork(2));
    Graph g;
    Tensor x = random_input(4, 6, rng);
    EncodedBatch enc = encode(g, m, x);
    Tensor logits = decode_logits(g, m, enc.rows);
    REQUIRE(logits.shape() == Shape{4, 3});
    // manual affine: F * W + b
    const Tensor& w = m.heads[0].w;
    const Tensor& b = m.heads[0].b;
    for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t j = 0; j < 3; ++j) {
            double acc = b[j];
            for (std::size_t k = 0; k < 8; ++k) acc += enc.rows[i * 8 + k] * w[k * 3 + j];
            REQUIRE(logits[i * 3 + j] == Catch::Approx(acc).epsilon(1e-14));
        }
    }
}

TEST_CASE("adding a head leaves existing logits unchanged") {
    Rng rng(4);
    ModelBundle m(toy_cls_config(), rng.fork(1));
    m.add_head({0, 1}, rng.fork(2));
    Graph g;
    Tensor x = random_input(3, 6, rng);
    EncodedBatch enc = encode(g, m, x);
    Tensor before = decode_logits(g, m, enc.rows);

    m.add_head({2, 3, 4}, rng.fork(3));
    Graph g2;
    EncodedBatch enc2 = encode(g2, m, x);
    Tensor after = decode_logits(g2, m, enc2.rows);
    REQUIRE(after.shape() == Shape{3, 5});
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 2; ++j) {
            REQUIRE(after[i * 5 + j] == before[i * 2 + j]);
        }
    }
    REQUIRE(m.logit_classes() == std::vector<int>{0, 1, 2, 3, 4});
}

TEST_CASE("projection halves channels twice") {
    Rng rng(5);
    ModelBundle m(toy_cls_config(8), rng.fork(1));
    Graph g;
    Tensor x = random_input(3, 6, rng);
    EncodedBatch enc = encode(g, m, x);
    auto [fstar, fss] = project_spaces(g, m, enc);
    REQUIRE(fstar.shape() == Shape{3, 4});
    REQUIRE(fss.shape() == Shape{3, 2});

    // zero projection weights: both spaces collapse to zero
    for (double& v : m.proj1.w.mutable_values()) v = 0.0;
    for (double& v : m.proj1.b.mutable_values()) v = 0.0;
    Graph g2;
    EncodedBatch enc2 = encode(g2, m, x);
    auto [zstar, zss] = project_spaces(g2, m, enc2);
    for (double v : zstar.values()) REQUIRE(v == 0.0);
}

TEST_CASE("feature dim below 4 is rejected") {
    Rng rng(6);
    ModelConfig cfg = toy_cls_config();
    cfg.hidden = {10, 3};
    REQUIRE_THROWS_AS(ModelBundle(cfg, rng.fork(1)), ConfigError);
}

TEST_CASE("gradients flow from projected spaces into the encoder") {
    Rng rng(7);
    ModelBundle m(toy_cls_config(), rng.fork(1));
    Graph g;
    Tensor x = random_input(4, 6, rng);
    EncodedBatch enc = encode(g, m, x);
    auto [fstar, fss] = project_spaces(g, m, enc);
    Tensor loss = sum_all(g, fss);
    g.backward(loss);
    const Tensor& w0 = m.encoder[0].w;
    REQUIRE(w0.has_grad());
    double mag = 0.0;
    for (double v : w0.grad()) mag += std::fabs(v);
    REQUIRE(mag > 0.0);
}

TEST_CASE("segmentation encode with stem and spatial projection heads") {
    Rng rng(8);
    ModelConfig cfg;
    cfg.mode = TaskMode::segmentation;
    cfg.input_dim = 3;
    cfg.hidden = {12, 8};
    cfg.stem_channels = 6;
    cfg.proj_kernel = 3;
    ModelBundle m(cfg, rng.fork(1));

    Graph g;
    std::vector<double> img(3 * 5 * 5);
    for (double& v : img) v = rng.uniform(0.0, 1.0);
    Tensor image = Tensor::from_values({3, 5, 5}, std::move(img), false);
    EncodedBatch enc = encode(g, m, std::vector<Tensor>{image, image});
    REQUIRE(enc.rows.shape() == Shape{50, 8});
    REQUIRE(enc.rows_per_image == 25);

    auto [fstar, fss] = project_spaces(g, m, enc);
    REQUIRE(fstar.shape() == Shape{50, 4});
    REQUIRE(fss.shape() == Shape{50, 2});
    g.backward(sum_all(g, fss));
    REQUIRE(m.stem->w.has_grad());
}

TEST_CASE("teacher snapshots are frozen deep copies") {
    Rng rng(9);
    ModelBundle student(toy_cls_config(), rng.fork(1));
    student.add_head({0, 1}, rng.fork(2));
    TeacherSnapshot teacher = freeze_snapshot(student);
    REQUIRE(parameter_hash(teacher.bundle) == parameter_hash(student));

    // teacher equals student right after the snapshot
    Tensor x = random_input(2, 6, rng);
    auto logits_of = [&](const ModelBundle& m) {
        Graph g;
        EncodedBatch enc = encode(g, m, x);
        Tensor l = decode_logits(g, m, enc.rows);
        return std::vector<double>(l.values().begin(), l.values().end());
    };
    REQUIRE(logits_of(student) == logits_of(teacher.bundle));

    // training the student does not touch the teacher
    const auto before = logits_of(teacher.bundle);
    for (auto& [name, t] : student.named_parameters()) {
        for (double& v : t.mutable_values()) v += 0.5;
    }
    REQUIRE(logits_of(teacher.bundle) == before);

    // teacher parameters never receive gradients
    Graph g;
    EncodedBatch enc = encode(g, teacher.bundle, x);
    g.backward(sum_all(g, decode_logits(g, teacher.bundle, enc.rows)));
    REQUIRE_FALSE(teacher.bundle.encoder[0].w.has_grad());
}

TEST_CASE("prototype projection matches the row projection on constant fields") {
    Rng rng(10);
    ModelBundle m(toy_cls_config(8), rng.fork(1));
    std::vector<double> proto(8);
    for (double& v : proto) v = rng.uniform(-1.0, 1.0);

    // project the prototype as if it were a feature row
    Graph g;
    Tensor row = Tensor::from_values({1, 8}, std::vector<double>(proto), false);
    Tensor via_rows = add_bias(g, matmul(g, row, m.proj1.w), m.proj1.b);
    const auto direct = project_prototype(m, proto, 1);
    for (std::size_t j = 0; j < 4; ++j) {
        REQUIRE(direct[j] == Catch::Approx(via_rows[j]).epsilon(1e-13));
    }
}
