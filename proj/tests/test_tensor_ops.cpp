#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "eva/rng.hpp"
#include "eva/tape.hpp"

using namespace eva;
using namespace eva::ag;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
    Tensor t = Tensor::zeros(std::move(shape));
    fill_uniform(t, rng, lo, hi);
    return t;
}

}  // namespace

TEST_CASE("matmul by identity returns the operand") {
    Rng rng(11);
    Tensor m = random_tensor({3, 3}, rng);
    Tensor eye = Tensor::zeros({3, 3});
    for (std::size_t i = 0; i < 3; ++i) eye.at(i, i) = 1.0;

    Tape tape;
    Value out = matmul(tape.constant(eye), tape.constant(m));
    for (std::size_t i = 0; i < 9; ++i) CHECK(out.val().data[i] == doctest::Approx(m.data[i]).epsilon(1e-15));
}

TEST_CASE("matmul vector promotions") {
    Tape tape;
    Value a = tape.constant(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
    Value x = tape.constant(Tensor::row({1, 1, 1}));
    Value y = matmul(a, x);
    REQUIRE(y.shape() == Shape{2});
    CHECK(y.val().data[0] == doctest::Approx(6.0));
    CHECK(y.val().data[1] == doctest::Approx(15.0));

    Value z = matmul(tape.constant(Tensor::row({1, 1})), a);
    REQUIRE(z.shape() == Shape{3});
    CHECK(z.val().data[0] == doctest::Approx(5.0));
    CHECK(z.val().data[2] == doctest::Approx(9.0));
}

TEST_CASE("softmax of a constant vector is uniform") {
    Tape tape;
    Value s = softmax(tape.constant(Tensor::row({0, 0, 0})), 0);
    for (double v : s.val().data) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("softmax rows are distributions") {
    Rng rng(5);
    Tape tape;
    Value s = softmax(tape.constant(random_tensor({7, 11}, rng, -30.0, 30.0)), 1);
    for (std::size_t r = 0; r < 7; ++r) {
        double total = 0.0;
        for (std::size_t j = 0; j < 11; ++j) {
            double v = s.val().at(r, j);
            CHECK(v >= 0.0);
            total += v;
        }
        CHECK(std::abs(total - 1.0) <= 1e-9);
    }
}

TEST_CASE("softmax along axis 0 normalizes columns") {
    Rng rng(6);
    Tape tape;
    Value s = softmax(tape.constant(random_tensor({4, 3}, rng)), 0);
    for (std::size_t j = 0; j < 3; ++j) {
        double total = 0.0;
        for (std::size_t r = 0; r < 4; ++r) total += s.val().at(r, j);
        CHECK(std::abs(total - 1.0) <= 1e-9);
    }
}

TEST_CASE("layer_norm matches the hand-computed population normalization") {
    // (x - mean) / sqrt(population variance), eps = 0
    Tape tape;
    Value y = layer_norm(tape.constant(Tensor::row({1, 2, 3})), 0.0);
    double expected = std::sqrt(1.5);  // 1 / sqrt(2/3)
    CHECK(y.val().data[0] == doctest::Approx(-expected).epsilon(1e-12));
    CHECK(y.val().data[1] == doctest::Approx(0.0));
    CHECK(y.val().data[2] == doctest::Approx(expected).epsilon(1e-12));
    CHECK(y.val().data[2] == doctest::Approx(1.2247448714).epsilon(1e-9));
}

TEST_CASE("l2_normalize produces unit rows") {
    Rng rng(7);
    Tape tape;
    Value y = l2_normalize(tape.constant(random_tensor({5, 9}, rng)));
    for (std::size_t r = 0; r < 5; ++r) {
        double n2 = 0.0;
        for (std::size_t j = 0; j < 9; ++j) n2 += y.val().at(r, j) * y.val().at(r, j);
        CHECK(std::abs(std::sqrt(n2) - 1.0) <= 1e-9);
    }
    CHECK_THROWS(l2_normalize(tape.constant(Tensor::zeros({4}))));
}

TEST_CASE("shape mismatches fail loudly naming the op") {
    Tape tape;
    Value a = tape.constant(Tensor::zeros({2, 3}));
    Value b = tape.constant(Tensor::zeros({4, 2}));
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("matmul"), std::invalid_argument);
    CHECK_THROWS_AS(add(a, b), std::invalid_argument);
    CHECK_THROWS_AS(row(a, 5), std::invalid_argument);
}

TEST_CASE("broadcast add covers bias and scalar patterns") {
    Tape tape;
    Value m = tape.constant(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
    Value bias = tape.constant(Tensor::row({10, 20, 30}));
    Value out = add(m, bias);
    CHECK(out.val().at(1, 2) == doctest::Approx(36.0));

    Value s = tape.constant(Tensor::scalar(2.0));
    Value scaled = mul(m, s);
    CHECK(scaled.val().at(0, 1) == doctest::Approx(4.0));
}

TEST_CASE("reduce_max keeps the first maximal element on ties") {
    Tape tape;
    Value v = tape.constant(Tensor::row({1.0, 3.0, 3.0, 2.0}));
    Value m = reduce_max(v, 0);
    CHECK(m.val().data[0] == doctest::Approx(3.0));
    CHECK(argmax(v.val()) == 1);
}

TEST_CASE("segment_max matches a brute-force group loop") {
    Rng rng(9);
    Tensor t = random_tensor({6, 10}, rng);
    std::vector<std::size_t> groups = {0, 1, 2, 0, 1, 2, 3, 3, 0, 1};
    Tape tape;
    Value out = segment_max(tape.constant(t), groups, 5, -1e30);
    for (std::size_t r = 0; r < 6; ++r) {
        for (std::size_t g = 0; g < 5; ++g) {
            double best = -1e30;
            for (std::size_t j = 0; j < 10; ++j)
                if (groups[j] == g) best = std::max(best, t.at(r, j));
            CHECK(out.val().at(r, g) == doctest::Approx(best));
        }
    }
}

TEST_CASE("forward is reproducible for a fixed seed") {
    auto run = [] {
        Rng rng(42);
        Tensor a = random_tensor({4, 6}, rng);
        Tensor b = random_tensor({6, 5}, rng);
        Tape tape;
        Value out = l2_normalize(gelu(matmul(tape.constant(a), tape.constant(b))));
        return out.val().data;
    };
    auto first = run();
    auto second = run();
    CHECK(first == second);
}

TEST_CASE("non-finite node outputs are rejected") {
    Tape tape;
    Value big = tape.constant(Tensor::row({1e308, 1e308}));
    CHECK_THROWS_AS(vexp(big), std::runtime_error);
}
