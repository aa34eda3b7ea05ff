// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mark/ops.hpp"
#include "mark/tensor.hpp"

using namespace mark;

TEST_CASE("shape helpers") {
    CHECK(shape_numel({2, 3, 4}) == 24);
    CHECK(shape_numel({}) == 1);
    CHECK(shape_str({2, 3}) == "[2x3]");
    CHECK(row_major_strides({2, 3, 4}) == std::vector<size_t>{12, 4, 1});
}

TEST_CASE("construction and element access") {
    Tensor z = Tensor::zeros({2, 3});
    CHECK(z.numel() == 6);
    CHECK(z.shape() == Shape{2, 3});
    CHECK(z.at({1, 2}) == 0.0f);

    Tensor t = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    CHECK(t.at({0, 1}) == 2.0f);
    CHECK(t.at({1, 0}) == 3.0f);
    CHECK(Tensor::scalar(7.0f).item() == 7.0f);
    CHECK(Tensor::full({3}, 2.5f).at({2}) == 2.5f);
}

TEST_CASE("construction rejects inconsistent shapes") {
    CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1, 2, 3}), shape_error);
    CHECK_THROWS_AS(Tensor::zeros({2, 0}), shape_error);
    CHECK_THROWS_AS(Tensor::from_data({1}, {1.0f}).at({0, 0}), shape_error);
    CHECK_THROWS_AS(Tensor::from_data({2}, {1, 2}).item(), contract_error);
}

TEST_CASE("undefined handles are rejected") {
    Tensor t;
    CHECK_FALSE(t.defined());
    CHECK_THROWS_AS(t.numel(), contract_error);
    CHECK_THROWS_AS(backward(t), contract_error);
}

TEST_CASE("clone copies values but not graph state") {
    Tensor a = Tensor::from_data({2}, {1, 2}, /*requires_grad=*/true);
    a.zero_grad();
    Tensor b = a.clone(/*requires_grad=*/true);
    b.data()[0] = 9.0f;
    CHECK(a.data()[0] == 1.0f);
    CHECK_FALSE(b.has_grad());
}

TEST_CASE("backward: sum gives all-ones gradient") {
    Tensor x = Tensor::from_data({2, 3}, {1, -2, 3, 4, -5, 6}, true);
    backward(sum(x));
    for (float g : x.grad()) CHECK(g == 1.0f);
}

TEST_CASE("backward: sum of squares") {
    Tensor x = Tensor::from_data({2}, {1, 2}, true);
    backward(sum(mul(x, x)));
    CHECK(x.grad()[0] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(x.grad()[1] == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("backward: gradients accumulate until cleared") {
    Tensor x = Tensor::from_data({2}, {1, 2}, true);
    backward(sum(x));
    backward(sum(x));
    CHECK(x.grad()[0] == 2.0f);
    x.zero_grad();
    backward(sum(x));
    CHECK(x.grad()[0] == 1.0f);
}

TEST_CASE("backward: diamond-shaped graph accumulates both paths") {
    // y = sum(x*x + x*x) => dy/dx = 4x
    Tensor x = Tensor::from_data({2}, {1.5f, -2.0f}, true);
    Tensor sq = mul(x, x);
    backward(sum(add(sq, sq)));
    CHECK(x.grad()[0] == doctest::Approx(6.0));
    CHECK(x.grad()[1] == doctest::Approx(-8.0));
}

TEST_CASE("backward: non-scalar root is a contract error") {
    Tensor x = Tensor::from_data({2}, {1, 2}, true);
    Tensor y = mul(x, x);
    CHECK_THROWS_AS(backward(y), contract_error);
}

TEST_CASE("backward: root without recorded graph is a contract error") {
    Tensor x = Tensor::from_data({1}, {3.0f}, false);
    CHECK_THROWS_AS(backward(sum(x)), contract_error);
    Tensor w = Tensor::from_data({1}, {3.0f}, true);
    NoGradGuard guard;
    CHECK_THROWS_AS(backward(sum(w)), contract_error);
}

TEST_CASE("NoGradGuard suppresses graph recording") {
    Tensor x = Tensor::from_data({2}, {1, 2}, true);
    {
        NoGradGuard guard;
        Tensor y = sum(x);
        CHECK_FALSE(y.requires_grad());
        CHECK(grad_enabled() == false);
    }
    CHECK(grad_enabled() == true);
    CHECK(sum(x).requires_grad());
}

TEST_CASE("grad access before backward is a contract error") {
    Tensor x = Tensor::from_data({2}, {1, 2}, true);
    CHECK_FALSE(x.has_grad());
    CHECK_THROWS_AS(x.grad(), contract_error);
}

TEST_CASE("op outputs cannot be re-marked as leaves") {
    Tensor x = Tensor::from_data({2}, {1, 2}, true);
    Tensor y = mul(x, x);
    CHECK_THROWS_AS(y.set_requires_grad(true), contract_error);
}

TEST_CASE("non-finite op results raise numeric_error") {
    Tensor big = Tensor::full({2}, 3e38f);
    CHECK_THROWS_AS(mul(big, big), numeric_error);
    CHECK_NOTHROW(assert_finite(big, "big"));
}

TEST_CASE("wide mirror tracks op outputs, not leaves") {
    Tensor x = Tensor::from_data({1}, {0.1f}, true);
    CHECK(x.item64() == static_cast<double>(0.1f));
    Tensor y = mul(x, x);
    const double w = static_cast<double>(0.1f);
    CHECK(y.item64() == w * w); // exact: f64 product of the stored f32
    CHECK(y.item() == static_cast<float>(w * w));
}
