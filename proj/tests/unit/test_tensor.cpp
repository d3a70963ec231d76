#include <cmath>
#include <random>

#include "doctest.h"
#include "pmdiff/checkpoint.hpp"
#include "pmdiff/gradcheck.hpp"
#include "pmdiff/optim.hpp"
#include "pmdiff/tensor.hpp"

using namespace pmdiff;

namespace {

Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, bool grad = false) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = u(rng);
    return Tensor::from(shape, std::move(v), grad);
}

}  // namespace

TEST_CASE("matmul with the identity returns the other operand") {
    std::mt19937_64 rng(1);
    const Tensor a = random_tensor({3, 3}, rng);
    const Tensor eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Graph g;
    const Tensor out = g.matmul(eye, a);
    for (std::size_t i = 0; i < 9; ++i) CHECK(out[i] == a[i]);
}

TEST_CASE("softmax of equal logits is uniform") {
    Graph g;
    const Tensor s = g.softmax(Tensor::zeros({4}));
    for (std::size_t i = 0; i < 4; ++i) CHECK(s[i] == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("conv2d with a ones kernel sums the neighbourhood at the centre") {
    std::mt19937_64 rng(2);
    const Tensor x = random_tensor({1, 1, 3, 3}, rng);
    Graph g;
    const Tensor y = g.conv2d(x, Tensor::full({1, 1, 3, 3}, 1.0), Tensor(), {1, 1});
    double total = 0.0;
    for (double v : x.data()) total += v;
    CHECK(y[4] == doctest::Approx(total).epsilon(1e-14));
}

TEST_CASE("zero convolution weights give an exactly zero output") {
    std::mt19937_64 rng(3);
    const Tensor x = random_tensor({2, 3, 5, 4}, rng);
    Graph g;
    const Tensor y = g.conv2d(x, Tensor::zeros({6, 3, 3, 3}), Tensor::zeros({6}), {1, 1});
    for (double v : y.data()) CHECK(v == 0.0);
}

TEST_CASE("mean squared error has the analytic gradient") {
    const Tensor x = Tensor::from({1}, {0.7}, true);
    Graph g;
    g.backward(g.mse(x, Tensor::from({1}, {0.2})));
    CHECK(x.grad()[0] == doctest::Approx(2.0 * (0.7 - 0.2)).epsilon(1e-14));
}

TEST_CASE("sum of softmax has zero gradient") {
    std::mt19937_64 rng(4);
    const Tensor x = random_tensor({5}, rng, true);
    Graph g;
    g.backward(g.sum(g.softmax(x)));
    for (double v : x.grad()) CHECK(std::abs(v) < 1e-15);
}

TEST_CASE("backward rejects a non-scalar output and an empty tape") {
    std::mt19937_64 rng(5);
    const Tensor x = random_tensor({2, 2}, rng, true);
    Graph g;
    const Tensor y = g.scale(x, 2.0);
    CHECK_THROWS_AS(g.backward(y), TapeError);
    Graph empty;
    CHECK_THROWS_AS(empty.backward(Tensor::scalar(1.0)), TapeError);
}

TEST_CASE("shape errors name the offending scope") {
    Graph g;
    auto s = g.scope("block7");
    try {
        g.matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
        FAIL("expected a shape error");
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("block7") != std::string::npos);
    }
}

TEST_CASE("non-finite results are reported with the node name") {
    Graph g;
    const Tensor big = Tensor::from({1}, {1e308}, true);
    CHECK_THROWS_AS(g.scale(big, 1e10), NonFiniteError);
}

TEST_CASE("forward evaluation is deterministic") {
    std::mt19937_64 rng(6);
    const Tensor x = random_tensor({2, 4, 6, 6}, rng);
    const Tensor w = random_tensor({4, 4, 3, 3}, rng);
    const Tensor gamma = Tensor::full({4}, 1.0), beta = Tensor::zeros({4});
    auto run = [&] {
        Graph g;
        return g.silu(g.group_norm(g.conv2d(x, w, Tensor(), {1, 1}), 4, gamma, beta));
    };
    const Tensor a = run(), b = run();
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("every op matches central differences") {
    std::mt19937_64 rng(7);
    const Tensor a = random_tensor({2, 3}, rng, true);
    const Tensor b = random_tensor({3, 4}, rng, true);
    const Tensor x = random_tensor({2, 4, 4, 4}, rng, true);
    const Tensor w = random_tensor({4, 4, 3, 3}, rng, true);
    const Tensor bias = random_tensor({4}, rng, true);
    const Tensor gamma = random_tensor({4}, rng, true);
    const Tensor beta = random_tensor({4}, rng, true);
    const Tensor p = random_tensor({2, 3, 5}, rng, true);
    const Tensor q = random_tensor({2, 4, 5}, rng, true);
    const Tensor row = random_tensor({1, 4, 1, 1}, rng, true);
    auto loss = [&](Graph& g) {
        Tensor m = g.softmax(g.matmul(a, b));
        Tensor c = g.conv2d(x, w, bias, {2, 1});
        c = g.silu(g.group_norm(c, 2, gamma, beta));
        c = g.add_broadcast(g.upsample_nearest2x(c), row);
        Tensor k = g.bmm(p, q, false, true);
        Tensor cat = g.concat({g.reshape(m, {8}), g.reshape(k, {24})}, 0);
        Tensor perm = g.permute(c, {0, 2, 3, 1});
        Tensor t = g.add(g.mean(g.mul(perm, perm)), g.sum(g.mul(cat, cat)));
        return g.sub(t, g.mse(cat, Tensor::zeros({32})));
    };
    const auto rep = gradient_check(loss, {{"a", a}, {"b", b}, {"x", x}, {"w", w}, {"bias", bias}, {"gamma", gamma},
                                           {"beta", beta}, {"p", p}, {"q", q}, {"row", row}});
    for (const auto& e : rep.entries) CHECK_MESSAGE(e.passed, e.name << " rel err " << e.max_rel_error);
}

TEST_CASE("a two-layer conv net passes the gradient check") {
    std::mt19937_64 rng(8);
    const Tensor x = random_tensor({1, 2, 6, 6}, rng);
    const Tensor w1 = random_tensor({4, 2, 3, 3}, rng, true), b1 = random_tensor({4}, rng, true);
    const Tensor w2 = random_tensor({2, 4, 3, 3}, rng, true), b2 = random_tensor({2}, rng, true);
    auto loss = [&](Graph& g) {
        Tensor h = g.silu(g.conv2d(x, w1, b1, {1, 1}));
        return g.mean(g.mul(g.conv2d(h, w2, b2, {1, 1}), g.conv2d(h, w2, b2, {1, 1})));
    };
    CHECK(gradient_check(loss, {{"w1", w1}, {"b1", b1}, {"w2", w2}, {"b2", b2}}).passed);
}

TEST_CASE("linear layer passes at a tight tolerance") {
    std::mt19937_64 rng(9);
    const Tensor x = random_tensor({5, 3}, rng);
    const Tensor w = random_tensor({3, 2}, rng, true);
    auto loss = [&](Graph& g) { return g.mse(g.matmul(x, w), Tensor::full({5, 2}, 0.3)); };
    GradCheckOptions opt;
    opt.rel_tol = 1e-6;
    CHECK(gradient_check(loss, {{"w", w}}, opt).passed);
}

TEST_CASE("a corrupted backward rule fails and is named") {
    std::mt19937_64 rng(10);
    const Tensor w = random_tensor({3}, rng, true);
    auto loss = [&](Graph& g) {
        const Tensor sq = g.custom("bad_square", {w}, Tensor::from({3}, {w[0] * w[0], w[1] * w[1], w[2] * w[2]}),
                                   [](const auto& in, const TensorStorage& out) {
                                       for (std::size_t i = 0; i < 3; ++i)
                                           in[0]->grad[i] += 3.0 * in[0]->data[i] * out.grad[i];  // should be 2
                                   });
        return g.sum(sq);
    };
    const auto rep = gradient_check(loss, {{"broken.weight", w}});
    CHECK_FALSE(rep.passed);
    REQUIRE(rep.failures().size() == 1);
    CHECK(rep.failures()[0] == "broken.weight");
}

TEST_CASE("gradient_check refuses oversized problems") {
    const Tensor w = Tensor::zeros({10001}, true);
    auto loss = [&](Graph& g) { return g.sum(w); };
    CHECK_THROWS_AS(gradient_check(loss, {{"w", w}}), std::invalid_argument);
}

TEST_CASE("checkpoint round trip is bit exact and versioned") {
    std::mt19937_64 rng(11);
    Checkpoint ck;
    ck.tensors = {{"layer.w", random_tensor({2, 3, 1, 1}, rng)}, {"layer.b", random_tensor({2}, rng)}};
    ck.metadata_json = R"({"k":1})";
    const auto bytes = encode_checkpoint(ck);
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "PMDK");
    const Checkpoint back = decode_checkpoint(bytes);
    REQUIRE(back.tensors.size() == 2);
    CHECK(back.metadata_json == ck.metadata_json);
    for (std::size_t t = 0; t < 2; ++t) {
        CHECK(back.tensors[t].first == ck.tensors[t].first);
        CHECK(back.tensors[t].second.shape() == ck.tensors[t].second.shape());
        for (std::size_t i = 0; i < ck.tensors[t].second.numel(); ++i)
            CHECK(back.tensors[t].second[i] == ck.tensors[t].second[i]);
    }
    auto wrong_version = bytes;
    wrong_version[4] = 9;
    CHECK_THROWS_AS(decode_checkpoint(wrong_version), FormatError);
    auto truncated = bytes;
    truncated.resize(20);
    CHECK_THROWS_AS(decode_checkpoint(truncated), FormatError);
}

TEST_CASE("AdamW moves a quadratic towards its minimum") {
    const Tensor w = Tensor::from({2}, {1.0, -1.0}, true);
    AdamW opt({w}, AdamWConfig{.lr = 0.1, .weight_decay = 0.0});
    for (int i = 0; i < 200; ++i) {
        Graph g;
        const Tensor l = g.mse(w, Tensor::from({2}, {0.3, 0.4}));
        opt.zero_grad();
        g.backward(l);
        opt.step();
    }
    CHECK(w[0] == doctest::Approx(0.3).epsilon(1e-2));
    CHECK(w[1] == doctest::Approx(0.4).epsilon(1e-2));
    CHECK(opt.steps_taken() == 200);
}
