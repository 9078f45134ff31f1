#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "geolab/blob_io.hpp"
#include "geolab/finite_diff.hpp"
#include "geolab/ops.hpp"
#include "geolab/rng.hpp"
#include "geolab/tensor.hpp"

using namespace geolab;
namespace T = geolab::ops;

namespace {

TensorPtr random_tensor(Rng& rng, const Shape& shape, bool requires_grad, double lo = -1.0,
                        double hi = 1.0) {
    std::vector<double> data(static_cast<std::size_t>(numel(shape)));
    for (auto& v : data) v = rng.uniform(lo, hi);
    return make_leaf(std::move(data), shape, requires_grad);
}

}  // namespace

TEST_CASE("matmul identity leaves a matrix unchanged") {
    auto eye = constant({1, 0, 0, 0, 1, 0, 0, 0, 1}, {3, 3});
    Rng rng(11);
    auto a = random_tensor(rng, {3, 3}, false);
    auto r = T::matmul(eye, a);
    for (int i = 0; i < 9; ++i) CHECK(r->data[i] == a->data[i]);
}

TEST_CASE("sum of abs") {
    auto x = constant({-1, 2, -3}, {3});
    CHECK(T::sum_all(T::abs(x))->value() == doctest::Approx(6.0));
}

TEST_CASE("softmax of a constant row is uniform") {
    auto x = constant({0, 0, 0, 0}, {4});
    auto y = T::softmax(x);
    for (int i = 0; i < 4; ++i) CHECK(y->data[i] == doctest::Approx(0.25));
}

TEST_CASE("shape mismatch errors name the op and shapes") {
    auto a = constant({1, 2}, {2});
    auto b = constant({1, 2, 3}, {3});
    CHECK_THROWS_WITH_AS(T::add(a, b), doctest::Contains("add"), Error);
    try {
        T::matmul(constant({1, 2, 3, 4}, {2, 2}), constant({1, 2, 3, 4, 5, 6}, {3, 2}));
        FAIL("expected error");
    } catch (const Error& e) {
        std::string msg = e.what();
        CHECK(msg.find("matmul") != std::string::npos);
        CHECK(msg.find("(2,2)") != std::string::npos);
        CHECK(msg.find("(3,2)") != std::string::npos);
    }
}

TEST_CASE("backward of sum of squares") {
    auto x = make_leaf({1, 2, 3}, {3}, true);
    Graph g(0);
    GraphScope scope(g);
    auto loss = T::sum_all(T::mul(x, x));
    backward(loss);
    CHECK(x->grad[0] == doctest::Approx(2.0));
    CHECK(x->grad[1] == doctest::Approx(4.0));
    CHECK(x->grad[2] == doctest::Approx(6.0));
}

TEST_CASE("huber gradient at zero is zero") {
    auto x = make_leaf({0.0}, {1}, true);
    Graph g(0);
    GraphScope scope(g);
    auto loss = T::sum_all(T::huber(x, 1.0));
    backward(loss);
    CHECK(x->grad[0] == 0.0);
}

TEST_CASE("backward requires a scalar loss and an attached graph") {
    auto x = make_leaf({1, 2}, {2}, true);
    {
        Graph g(0);
        GraphScope scope(g);
        auto y = T::mul(x, x);
        CHECK_THROWS_WITH_AS(backward(y), doctest::Contains("scalar"), Error);
    }
    auto detached = T::sum_all(T::mul(constant({1.0, 2.0}, {2}), constant({1.0, 2.0}, {2})));
    CHECK_THROWS_WITH_AS(backward(detached), doctest::Contains("detached"), Error);
}

TEST_CASE("repeated backward without reset is an error") {
    auto x = make_leaf({1.5}, {1}, true);
    Graph g(0);
    GraphScope scope(g);
    auto loss = T::mul(x, x);
    backward(loss);
    CHECK_THROWS_WITH_AS(backward(loss), doctest::Contains("repeated"), Error);
}

TEST_CASE("a tensor cannot join two graphs") {
    auto x = make_leaf({1.0}, {1}, true);
    Graph g1(0);
    {
        GraphScope scope(g1);
        (void)T::mul(x, x);
    }
    Graph g2(0);
    GraphScope scope(g2);
    CHECK_THROWS_WITH_AS(T::mul(x, x), doctest::Contains("another"), Error);
}

TEST_CASE("finite differences on sum of squares") {
    Rng rng(3);
    auto x = random_tensor(rng, {2, 3}, false);
    double err = finite_diff_check([](const TensorPtr& t) { return T::sum_all(T::mul(t, t)); }, x);
    CHECK(err < 1e-8);
}

TEST_CASE("gradient is linear over random decompositions") {
    Rng rng(17);
    for (int trial = 0; trial < 10; ++trial) {
        auto base = random_tensor(rng, {5}, false);
        double c1 = rng.uniform(-2, 2), c2 = rng.uniform(-2, 2);

        auto term1 = [&](const TensorPtr& t) { return T::mul(T::sum_all(T::mul(t, t)), scalar(c1)); };
        auto term2 = [&](const TensorPtr& t) {
            return T::mul(T::sum_all(T::exp(T::mul(t, scalar(0.3)))), scalar(c2));
        };

        auto grad_of = [&](const TensorFn& f) {
            auto leaf = make_leaf(base->data, base->shape, true);
            Graph g(0);
            GraphScope scope(g);
            backward(f(leaf));
            return leaf->grad;
        };
        auto g1 = grad_of(term1);
        auto g2 = grad_of(term2);
        auto gsum = grad_of([&](const TensorPtr& t) { return T::add(term1(t), term2(t)); });
        for (std::size_t i = 0; i < gsum.size(); ++i) {
            CHECK(gsum[i] == doctest::Approx(g1[i] + g2[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("forward results are bit-identical across runs") {
    auto run = [](std::uint64_t seed) {
        Rng rng(seed);
        auto a = random_tensor(rng, {4, 4}, false);
        auto b = random_tensor(rng, {4, 4}, false);
        auto y = T::softmax(T::matmul(T::gelu(a), b));
        return y->data;
    };
    auto r1 = run(99);
    auto r2 = run(99);
    REQUIRE(r1.size() == r2.size());
    for (std::size_t i = 0; i < r1.size(); ++i) CHECK(r1[i] == r2[i]);
}

TEST_CASE("graph replay reproduces every node bit-exactly") {
    Rng rng(5);
    auto x = make_leaf(random_tensor(rng, {3, 4}, false)->data, {3, 4}, true);
    auto w = make_leaf(random_tensor(rng, {4, 2}, false)->data, {4, 2}, true);
    Graph g(1234);
    std::vector<TensorPtr> outputs;
    {
        GraphScope scope(g);
        auto h = T::gelu(T::matmul(x, w));
        auto y = T::layernorm(h);
        auto loss = T::mean_all(T::mul(y, y));
        outputs = {h, y, loss};
    }
    auto replayed = g.replay();
    for (const auto& t : outputs) {
        REQUIRE(t->node_id >= 0);
        const auto& buf = replayed[static_cast<std::size_t>(t->node_id)];
        REQUIRE(buf.size() == t->data.size());
        for (std::size_t i = 0; i < buf.size(); ++i) CHECK(buf[i] == t->data[i]);
    }
}

TEST_CASE("arccos clamping keeps gradients finite at alignment") {
    auto x = make_leaf({1.0}, {1}, true);
    Graph g(0);
    GraphScope scope(g);
    auto y = T::arccos(x);
    backward(y);
    CHECK(std::isfinite(x->grad[0]));
    CHECK(std::fabs(x->grad[0]) < 1e4);
}

TEST_CASE("arccos far outside the domain is an error") {
    CHECK_THROWS_AS(T::arccos(constant({1.5}, {1})), Error);
    CHECK_NOTHROW(T::arccos(constant({1.0000001}, {1})));
}

TEST_CASE("attention respects block visibility") {
    // Two key blocks; the query sees only block 0, so values in block 1 are
    // irrelevant to the output.
    Rng rng(7);
    auto q = random_tensor(rng, {1, 4}, false);
    auto k = random_tensor(rng, {4, 4}, false);
    auto v = random_tensor(rng, {4, 4}, false);
    std::vector<std::int64_t> blocks = {0, 2, 4};
    std::vector<std::uint8_t> allowed = {1, 0};
    auto out1 = T::attention(q, k, v, 2, 0.5, blocks, allowed);
    auto v2 = make_leaf(v->data, v->shape, false);
    v2->data[2 * 4 + 1] += 100.0;  // perturb a blocked key's value
    auto out2 = T::attention(q, k, v2, 2, 0.5, blocks, allowed);
    for (std::size_t i = 0; i < out1->data.size(); ++i) CHECK(out1->data[i] == out2->data[i]);
}

TEST_CASE("attention output is invariant to block order") {
    // Swapping the two key blocks (and nothing else) must reproduce the same
    // output bits thanks to the value-sorted partial combination.
    Rng rng(21);
    auto q = random_tensor(rng, {3, 4}, false);
    auto ka = random_tensor(rng, {2, 4}, false);
    auto kb = random_tensor(rng, {2, 4}, false);
    auto va = random_tensor(rng, {2, 4}, false);
    auto vb = random_tensor(rng, {2, 4}, false);
    std::vector<std::int64_t> blocks = {0, 2, 4};
    std::vector<std::uint8_t> allowed = {1, 1, 1, 1, 1, 1};

    auto cat = [](const TensorPtr& x, const TensorPtr& y) { return T::concat({x, y}, 0); };
    auto fwd = T::attention(q, cat(ka, kb), cat(va, vb), 2, 0.5, blocks, allowed);
    auto swp = T::attention(q, cat(kb, ka), cat(vb, va), 2, 0.5, blocks, allowed);
    for (std::size_t i = 0; i < fwd->data.size(); ++i) CHECK(fwd->data[i] == swp->data[i]);
}

TEST_CASE("tensor blob round-trips") {
    Rng rng(31);
    auto x = random_tensor(rng, {2, 3, 4}, false);
    std::stringstream ss;
    save_tensor(ss, *x);
    auto y = load_tensor(ss);
    CHECK(y->shape == x->shape);
    for (std::size_t i = 0; i < x->data.size(); ++i) CHECK(y->data[i] == x->data[i]);
}

TEST_CASE("truncated blob is an error") {
    Rng rng(32);
    auto x = random_tensor(rng, {4, 4}, false);
    std::stringstream ss;
    save_tensor(ss, *x);
    std::string bytes = ss.str();
    std::stringstream cut(bytes.substr(0, bytes.size() - 9));
    CHECK_THROWS_AS(load_tensor(cut), Error);
}

TEST_CASE("row bias helper routes gradients into the bias") {
    Rng rng(41);
    auto x = random_tensor(rng, {3, 2}, false);
    auto b = make_leaf({0.5, -0.25}, {2}, true);
    Graph g(0);
    GraphScope scope(g);
    auto y = T::sum_all(T::add_row_bias(make_leaf(x->data, x->shape, false), b));
    backward(y);
    CHECK(b->grad[0] == doctest::Approx(3.0));
    CHECK(b->grad[1] == doctest::Approx(3.0));
}
