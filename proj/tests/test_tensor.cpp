#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "daft/ops.hpp"
#include "daft/serialize.hpp"

using namespace daft;
namespace fs = std::filesystem;

TEST_CASE("shape bookkeeping") {
    auto t = TensorD::zeros({2, 3, 4});
    CHECK(t.numel() == 24);
    CHECK(t.ndim() == 3);
    CHECK(t.dim(1) == 3);
    CHECK_THROWS_AS(t.dim(3), ShapeError);
    CHECK_THROWS_AS(TensorD::zeros({2, 0, 4}), ShapeError);
    CHECK_THROWS_AS(TensorD::from_data({3}, {1.0, 2.0}), ShapeError);

    auto s = TensorD::scalar(7.0);
    CHECK(s.ndim() == 0);
    CHECK(s.numel() == 1);
    CHECK(s.item() == 7.0);
    CHECK_THROWS_AS(t.item(), ShapeError);
}

TEST_CASE("non-finite values are rejected with the op name") {
    CHECK_THROWS_AS(TensorD::from_data({1}, {std::nan("")}), NumericalError);

    auto big = TensorF::from_data({1}, {90.0f});
    try {
        (void)exp_op(big);  // overflows float
        FAIL("expected NumericalError");
    } catch (const NumericalError& e) {
        CHECK(std::string(e.what()).find("exp") != std::string::npos);
    }

    auto neg = TensorD::from_data({2}, {1.0, -2.0});
    CHECK_THROWS_AS(log_op(neg), ValueError);
    CHECK_THROWS_AS(log_op(TensorD::from_data({1}, {0.0})), ValueError);
}

TEST_CASE("backward: linear and quadratic leaves") {
    auto x = TensorD::from_data({3}, {1.0, 2.0, 3.0}, true);
    auto loss = sum(x);
    backward(loss);
    for (const double g : x.grad()) CHECK(g == 1.0);

    x.zero_grad();
    auto loss2 = sum(mul(x, x));
    backward(loss2);
    CHECK(x.grad()[0] == doctest::Approx(2.0));
    CHECK(x.grad()[1] == doctest::Approx(4.0));
    CHECK(x.grad()[2] == doctest::Approx(6.0));
}

TEST_CASE("backward: a tensor consumed twice sums both contributions") {
    auto x = TensorD::from_data({2}, {1.0, 2.0}, true);
    auto loss = add(sum(x), sum(mul(x, x)));
    backward(loss);
    CHECK(x.grad()[0] == doctest::Approx(1.0 + 2.0));
    CHECK(x.grad()[1] == doctest::Approx(1.0 + 4.0));

    // Diamond graph: c = b + b with b = x * x.
    x.zero_grad();
    auto b = mul(x, x);
    auto loss2 = sum(add(b, b));
    backward(loss2);
    CHECK(x.grad()[0] == doctest::Approx(4.0 * 1.0));
    CHECK(x.grad()[1] == doctest::Approx(4.0 * 2.0));
}

TEST_CASE("backward: repeated call without reset is an error") {
    auto x = TensorD::from_data({2}, {1.0, 2.0}, true);
    auto loss = sum(x);
    backward(loss);
    auto loss2 = sum(mul(x, x));
    CHECK_THROWS_AS(backward(loss2), Error);
    x.zero_grad();
    CHECK_NOTHROW(backward(sum(mul(x, x))));
}

TEST_CASE("backward: preconditions") {
    auto x = TensorD::from_data({2}, {1.0, 2.0}, true);
    CHECK_THROWS_AS(backward(mul(x, x)), ShapeError);  // non-scalar loss

    auto frozen = TensorD::from_data({2}, {1.0, 2.0}, false);
    CHECK_THROWS_AS(backward(sum(frozen)), Error);  // nothing requires grad

    // Shape [1] scalars are accepted.
    auto y = TensorD::from_data({1}, {3.0}, true);
    CHECK_NOTHROW(backward(mul(y, y)));
}

TEST_CASE("eval graphs carry no autograd state") {
    auto x = TensorD::from_data({4}, {1.0, -1.0, 2.0, -2.0}, false);
    auto y = relu(mul(x, x));
    CHECK(y.is_leaf());  // no inputs were recorded
    CHECK_FALSE(y.requires_grad());
}

TEST_CASE("elementwise and shape op values") {
    auto a = TensorD::from_data({3}, {-1.0, 0.0, 2.0});
    auto r = relu(a);
    CHECK(r.data()[0] == 0.0);
    CHECK(r.data()[1] == 0.0);
    CHECK(r.data()[2] == 2.0);

    auto b = TensorD::from_data({2, 2}, {1.0, 2.0, 3.0, 4.0});
    auto c = TensorD::from_data({2, 1}, {10.0, 20.0});
    auto cat = concat_lastdim<double>({b, c});
    CHECK(cat.shape() == Shape{2, 3});
    CHECK(cat.data()[2] == 10.0);
    CHECK(cat.data()[5] == 20.0);

    auto piece = narrow_lastdim(cat, 2, 1);
    CHECK(piece.shape() == Shape{2, 1});
    CHECK(piece.data()[0] == 10.0);

    CHECK_THROWS_AS(concat_lastdim<double>({b, TensorD::zeros({3, 1})}), ShapeError);
    CHECK_THROWS_AS(add(b, c), ShapeError);
    CHECK_THROWS_AS(matmul(b, TensorD::zeros({3, 2})), ShapeError);
}

TEST_CASE("broadcast_channelwise replicates values and scales") {
    auto vals = TensorD::from_data({1, 1}, {2.0});
    auto target = TensorD::from_data({1, 1, 1, 1, 2}, {3.0, 5.0});
    auto product = mul(broadcast_channelwise(vals, target), target);
    CHECK(product.data()[0] == 6.0);
    CHECK(product.data()[1] == 10.0);
}

TEST_CASE("tensor serialization round-trips bit-exactly") {
    const auto dir = fs::temp_directory_path() / "daft_tensor_io";
    fs::create_directories(dir);
    const auto data_path = (dir / "t.bin").string();
    const auto meta_path = (dir / "t.meta").string();

    Rng rng(7);
    auto t = TensorF::randn({2, 3, 4}, rng);
    save_tensor(t, data_path, meta_path);
    auto back = load_tensor<float>(data_path, meta_path);
    REQUIRE(back.shape() == t.shape());
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        CHECK(back.data()[static_cast<std::size_t>(i)] ==
              t.data()[static_cast<std::size_t>(i)]);
    }

    auto d = TensorD::randn({5}, rng);
    save_tensor(d, data_path, meta_path);
    auto d_back = load_tensor<double>(data_path, meta_path);
    for (std::int64_t i = 0; i < d.numel(); ++i) {
        CHECK(d_back.data()[static_cast<std::size_t>(i)] ==
              d.data()[static_cast<std::size_t>(i)]);
    }

    // Requesting the wrong dtype is an error, not a reinterpret.
    CHECK_THROWS_AS(load_tensor<float>(data_path, meta_path), IoError);

    // A truncated data file is a load error, never silent.
    save_tensor(t, data_path, meta_path);
    fs::resize_file(data_path, 8);
    CHECK_THROWS_AS(load_tensor<float>(data_path, meta_path), IoError);

    fs::remove_all(dir);
}
