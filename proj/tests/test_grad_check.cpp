// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <vector>

#include "mark/grad_check.hpp"
#include "mark/ops.hpp"
#include "mark/rng.hpp"
#include "mark/sgd.hpp"

using namespace mark;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad, double scale = 0.5) {
    std::vector<float> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<float>(rng.normal(0.0, scale));
    return Tensor::from_data(std::move(shape), std::move(v), requires_grad);
}

} // namespace

TEST_CASE("grad_check: quadratic f(w) = w*w stays within 1e-6 at eps 1e-4") {
    Tensor w = Tensor::from_data({1}, {1.3f}, true);
    std::vector<Tensor> params{w};
    const double err = grad_check([&] { return sum(mul(w, w)); }, params, 1e-4);
    CHECK(err <= 1e-6);
}

TEST_CASE("grad_check: linear function stays within 1e-7") {
    Tensor w = Tensor::from_data({4}, {0.2f, -1.4f, 3.0f, 0.01f}, true);
    Tensor c = Tensor::from_data({4}, {2.0f, -0.5f, 1.25f, 4.0f});
    std::vector<Tensor> params{w};
    const double err = grad_check([&] { return sum(mul(w, c)); }, params, 1e-4);
    CHECK(err <= 1e-7);
}

TEST_CASE("grad_check: dense -> relu -> dense -> cross-entropy") {
    Rng rng(21);
    Tensor x = random_tensor({4, 6}, rng, false, 1.0);
    Tensor w1 = random_tensor({6, 5}, rng, true);
    Tensor b1 = random_tensor({5}, rng, true, 0.1);
    Tensor w2 = random_tensor({5, 3}, rng, true);
    Tensor b2 = random_tensor({3}, rng, true, 0.1);
    std::vector<int> labels{0, 2, 1, 2};
    std::vector<Tensor> params{w1, b1, w2, b2};
    auto loss = [&] {
        return cross_entropy(dense_forward(relu(dense_forward(x, w1, b1)), w2, b2), labels);
    };
    CHECK(grad_check(loss, params, 1e-4) <= 1e-3);
}

TEST_CASE("grad_check: conv -> batchnorm(train) -> relu -> pool -> dense head") {
    Rng rng(22);
    Tensor x = random_tensor({3, 2, 6, 6}, rng, false, 1.0);
    Tensor k = random_tensor({4, 2, 3, 3}, rng, true);
    Tensor kb = random_tensor({4}, rng, true, 0.1);
    Tensor gamma = Tensor::full({4}, 1.0f, true);
    Tensor beta = Tensor::zeros({4}, true);
    Tensor wh = random_tensor({4 * 2 * 2, 3}, rng, true);
    Tensor bh = random_tensor({3}, rng, true, 0.1);
    std::vector<int> labels{1, 0, 2};
    std::vector<Tensor> params{k, kb, gamma, beta, wh, bh};
    BatchNormState st(4);
    auto loss = [&] {
        Tensor h = conv2d_forward(x, k, kb);
        h = batchnorm_forward(h, gamma, beta, st, true);
        h = maxpool2d(relu(h), 2);
        return cross_entropy(dense_forward(flatten2d(h), wh, bh), labels);
    };
    CHECK(grad_check(loss, params, 1e-4) <= 1e-3);
}

TEST_CASE("grad_check: two-block masked conv net with sampled probes") {
    // A miniature of the full model wiring: an embedding drives a linear+relu
    // mask whose slices gate each conv block's activations.
    Rng rng(23);
    const size_t N = 3;
    Tensor x = random_tensor({N, 1, 8, 8}, rng, false, 1.0);
    Tensor emb = random_tensor({N, 6}, rng, false, 1.0);

    Tensor k1 = random_tensor({3, 1, 3, 3}, rng, true);
    Tensor b1 = random_tensor({3}, rng, true, 0.1);
    Tensor k2 = random_tensor({4, 3, 2, 2}, rng, true);
    Tensor b2 = random_tensor({4}, rng, true, 0.1);
    Tensor wm = random_tensor({6, 7}, rng, true); // mask width 3 + 4
    Tensor bm = Tensor::full({7}, 1.0f, true);
    Tensor wh = random_tensor({4 * 1 * 1, 3}, rng, true);
    Tensor bh = random_tensor({3}, rng, true, 0.1);
    std::vector<int> labels{2, 0, 1};
    std::vector<Tensor> params{k1, b1, k2, b2, wm, bm, wh, bh};

    auto loss = [&] {
        Tensor mask = relu(dense_forward(emb, wm, bm));
        Tensor h = maxpool2d(scale_channels(relu(conv2d_forward(x, k1, b1)), slice_cols(mask, 0, 3)), 2);
        h = maxpool2d(scale_channels(relu(conv2d_forward(h, k2, b2)), slice_cols(mask, 3, 7)), 2);
        return cross_entropy(dense_forward(flatten2d(h), wh, bh), labels);
    };
    const size_t total = 27 + 3 + 48 + 4 + 42 + 7 + 12 + 3;
    REQUIRE(total > 100);
    CHECK(grad_check_sampled(loss, params, 1e-4, 100, 7) <= 1e-3);
    // exhaustive pass over the same graph also holds
    CHECK(grad_check(loss, params, 1e-4) <= 1e-3);
}

TEST_CASE("grad_check: eps must be positive") {
    Tensor w = Tensor::from_data({1}, {1.0f}, true);
    std::vector<Tensor> params{w};
    CHECK_THROWS_AS(grad_check([&] { return sum(w); }, params, 0.0), value_error);
}

TEST_CASE("grad_check: restores parameter values") {
    Tensor w = Tensor::from_data({3}, {0.5f, -2.0f, 1e-6f}, true);
    std::vector<float> before = w.data();
    std::vector<Tensor> params{w};
    grad_check([&] { return sum(mul(w, w)); }, params, 1e-4);
    CHECK(w.data() == before);
}
