#include <doctest.h>

#include "daft/grad_check.hpp"
#include "daft/metrics.hpp"
#include "daft/nn.hpp"
#include "daft/ops.hpp"
#include "micro_net.hpp"

using namespace daft;

namespace {

constexpr double kTol = 1e-4;
const std::uint64_t kSeeds[] = {1, 2, 3};

TensorD random_tensor(Shape shape, std::uint64_t seed, double lo = -1.5, double hi = 1.5) {
    Rng rng(seed);
    return TensorD::uniform(std::move(shape), rng, lo, hi);
}

/// Uniform magnitude in [0.2, 1.5] with random sign: keeps relu/FD away
/// from the kink at zero.
TensorD random_tensor_away_from_zero(Shape shape, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> data(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& v : data) {
        const double mag = rng.uniform(0.2, 1.5);
        v = rng.uniform() < 0.5 ? -mag : mag;
    }
    return TensorD::from_data(std::move(shape), std::move(data));
}

}  // namespace

TEST_CASE("grad_check: linear map is exact to 1e-10") {
    // A linear map has zero truncation error, so a wider step suppresses
    // the floating-point rounding of the difference quotient.
    for (const auto seed : kSeeds) {
        const double err = grad_check(
            [](const std::vector<TensorD>& in) { return mul_scalar(sum(in[0]), 3.5); },
            {random_tensor({4, 3}, seed)}, 1e-3);
        CHECK(err < 1e-10);
    }
}

TEST_CASE("grad_check: elementwise primitives") {
    for (const auto seed : kSeeds) {
        auto a = random_tensor({3, 4}, seed);
        auto b = random_tensor({3, 4}, seed + 100);
        CHECK(grad_check([](const std::vector<TensorD>& in) { return add(in[0], in[1]); },
                         {a, b}) < kTol);
        CHECK(grad_check([](const std::vector<TensorD>& in) { return sub(in[0], in[1]); },
                         {a, b}) < kTol);
        CHECK(grad_check([](const std::vector<TensorD>& in) { return mul(in[0], in[1]); },
                         {a, b}) < kTol);
        CHECK(grad_check([](const std::vector<TensorD>& in) { return neg(in[0]); }, {a}) < kTol);
        CHECK(grad_check([](const std::vector<TensorD>& in) { return add_scalar(in[0], 0.7); },
                         {a}) < kTol);
        CHECK(grad_check([](const std::vector<TensorD>& in) { return mul_scalar(in[0], -1.3); },
                         {a}) < kTol);
        CHECK(grad_check([](const std::vector<TensorD>& in) { return sigmoid(in[0]); }, {a}) <
              kTol);
        CHECK(grad_check([](const std::vector<TensorD>& in) { return tanh_op(in[0]); }, {a}) <
              kTol);
        CHECK(grad_check([](const std::vector<TensorD>& in) { return exp_op(in[0]); }, {a}) <
              kTol);
        CHECK(grad_check([](const std::vector<TensorD>& in) { return relu(in[0]); },
                         {random_tensor_away_from_zero({3, 4}, seed)}) < kTol);
        CHECK(grad_check([](const std::vector<TensorD>& in) { return log_op(in[0]); },
                         {random_tensor({3, 4}, seed, 0.3, 2.0)}) < kTol);
    }
}

TEST_CASE("grad_check: reductions and shape ops") {
    for (const auto seed : kSeeds) {
        auto a = random_tensor({2, 3, 2}, seed);
        CHECK(grad_check([](const std::vector<TensorD>& in) { return sum(in[0]); }, {a}) < kTol);
        CHECK(grad_check([](const std::vector<TensorD>& in) { return mean(in[0]); }, {a}) < kTol);
        CHECK(grad_check(
                  [](const std::vector<TensorD>& in) { return reshape(in[0], {6, 2}); }, {a}) <
              kTol);
        auto b = random_tensor({2, 4}, seed + 7);
        auto c = random_tensor({2, 3}, seed + 8);
        CHECK(grad_check(
                  [](const std::vector<TensorD>& in) {
                      return concat_lastdim<double>({in[0], in[1]});
                  },
                  {b, c}) < kTol);
        CHECK(grad_check(
                  [](const std::vector<TensorD>& in) { return narrow_lastdim(in[0], 1, 2); },
                  {b}) < kTol);
    }
}

TEST_CASE("grad_check: matmul, linear, log_softmax") {
    for (const auto seed : kSeeds) {
        auto a = random_tensor({3, 4}, seed);
        auto b = random_tensor({4, 2}, seed + 11);
        CHECK(grad_check([](const std::vector<TensorD>& in) { return matmul(in[0], in[1]); },
                         {a, b}) < kTol);

        auto x = random_tensor({3, 5}, seed + 21);
        auto w = random_tensor({4, 5}, seed + 22);
        auto bias = random_tensor({4}, seed + 23);
        CHECK(grad_check(
                  [](const std::vector<TensorD>& in) {
                      return linear(in[0], in[1], TensorD{});
                  },
                  {x, w}) < kTol);
        CHECK(grad_check(
                  [](const std::vector<TensorD>& in) { return linear(in[0], in[1], in[2]); },
                  {x, w, bias}) < kTol);

        CHECK(grad_check(
                  [](const std::vector<TensorD>& in) { return log_softmax_rows(in[0]); },
                  {random_tensor({4, 3}, seed + 31)}) < kTol);
    }
}

TEST_CASE("grad_check: broadcast_channelwise and global_avg_pool3d") {
    for (const auto seed : kSeeds) {
        auto values = random_tensor({2, 3}, seed);
        const Shape target{2, 3, 2, 2, 2};
        CHECK(grad_check(
                  [&target](const std::vector<TensorD>& in) {
                      return broadcast_channelwise(in[0], target);
                  },
                  {values}) < kTol);
        CHECK(grad_check(
                  [](const std::vector<TensorD>& in) { return global_avg_pool3d(in[0]); },
                  {random_tensor({2, 3, 2, 3, 2}, seed + 5)}) < kTol);
    }
}

TEST_CASE("grad_check: conv3d across kernel/stride/padding") {
    for (const auto seed : kSeeds) {
        for (const std::int64_t k : {1, 3}) {
            for (const std::int64_t stride : {1, 2}) {
                for (const std::int64_t padding : {0, 1}) {
                    if (3 + 2 * padding < k) continue;
                    auto input = random_tensor({1, 2, 3, 3, 3}, seed);
                    auto weight = random_tensor({2, 2, k, k, k}, seed + 41);
                    auto bias = random_tensor({2}, seed + 42);
                    const double err = grad_check(
                        [stride, padding](const std::vector<TensorD>& in) {
                            return conv3d(in[0], in[1], in[2], stride, padding);
                        },
                        {input, weight, bias});
                    CHECK_MESSAGE(err < kTol, "k=", k, " stride=", stride, " padding=", padding);
                }
            }
        }
    }
}

TEST_CASE("grad_check: batchnorm in train and eval mode") {
    for (const auto seed : kSeeds) {
        auto x = random_tensor({2, 3, 2, 2, 2}, seed);
        auto gamma = random_tensor({3}, seed + 51, 0.5, 1.5);
        auto beta = random_tensor({3}, seed + 52);
        for (const bool training : {true, false}) {
            const double err = grad_check(
                [training](const std::vector<TensorD>& in) {
                    BatchNorm3d<double> bn(3);
                    bn.training_mode = training;
                    // Use the checked leaves as the affine parameters.
                    bn.gamma = in[1];
                    bn.beta = in[2];
                    bn.running_mean = {0.1, -0.2, 0.3};
                    bn.running_var = {1.5, 0.7, 1.1};
                    return bn.forward(in[0]);
                },
                {x, gamma, beta});
            CHECK_MESSAGE(err < kTol, "training=", training);
        }
    }
}

TEST_CASE("grad_check: composition conv3d over relu over linear") {
    for (const auto seed : kSeeds) {
        auto x = random_tensor_away_from_zero({2, 8}, seed);
        auto w = random_tensor({27, 8}, seed + 61);
        auto conv_w = random_tensor({2, 1, 3, 3, 3}, seed + 62);
        const double err = grad_check(
            [](const std::vector<TensorD>& in) {
                auto h = relu(linear(in[0], in[1], TensorD{}));
                auto volume = reshape(h, {2, 1, 3, 3, 3});
                return conv3d(volume, in[2], TensorD{}, 1, 1);
            },
            {x, w, conv_w});
        CHECK(err < kTol);
    }
}

TEST_CASE("grad_check: cross entropy and cox loss") {
    for (const auto seed : kSeeds) {
        const std::vector<DiagnosisLabel> labels{{0}, {2}, {1}, {2}};
        CHECK(grad_check(
                  [&labels](const std::vector<TensorD>& in) {
                      return cross_entropy(in[0], labels);
                  },
                  {random_tensor({4, 3}, seed)}) < kTol);

        const std::vector<SurvivalLabel> surv{{1.0, true},  {2.0, false}, {3.0, true},
                                              {4.0, false}, {2.5, true},  {0.5, false}};
        CHECK(grad_check(
                  [&surv](const std::vector<TensorD>& in) { return cox_ph_loss(in[0], surv); },
                  {random_tensor({6}, seed + 71)}) < 1e-6);
    }
}

TEST_CASE("grad_check: 2-block micro-network end to end") {
    for (const auto seed : kSeeds) {
        const double err = grad_check(
            [](const std::vector<TensorD>& in) { return micro::forward(in); },
            micro::make_inputs(seed));
        CHECK(err < 1e-3);
    }
}
