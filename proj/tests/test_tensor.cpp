#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "colonformer/tensor.hpp"
#include "test_utils.hpp"

using namespace colonformer;
using cftest::rand_tensor;

TEST_CASE("tensor construction and views") {
    Tensor t(Shape{2, 3});
    CHECK(t.numel() == 6);
    t.at({1, 2}) = 5.0;
    CHECK(t.at({1, 2}) == 5.0);

    Tensor r = t.reshaped({3, 2});
    CHECK(r.at({2, 1}) == 5.0);  // same storage
    r.at({0, 0}) = -1.0;
    CHECK(t.at({0, 0}) == -1.0);

    Tensor c = t.clone();
    c.at({0, 0}) = 9.0;
    CHECK(t.at({0, 0}) == -1.0);

    CHECK_THROWS_AS(t.reshaped({4, 2}), Error);
    CHECK_THROWS_AS(Tensor(Shape{2, 2}).item(), Error);
    CHECK(Tensor::scalar(3.5).item() == 3.5);
}

TEST_CASE("bilinear resize: identity at same size, constant preservation") {
    Rng rng(1);
    Tensor x = rand_tensor({2, 3, 7, 5}, rng);
    Tensor same = resize_bilinear(x, 7, 5);
    CHECK(cftest::max_abs_diff(x, same) == 0.0);

    Tensor c = Tensor::full({1, 1, 4, 4}, 2.5);
    Tensor up = resize_bilinear(c, 9, 13);
    for (std::int64_t i = 0; i < up.numel(); ++i) CHECK(up[i] == doctest::Approx(2.5));
}

TEST_CASE("bilinear resize matches hand-computed 2x upsample of a 2x1 column") {
    // half-pixel centers: out rows at src coords -0.25, 0.25, 0.75, 1.25 (clamped)
    Tensor x(Shape{1, 1, 2, 1}, {0.0, 1.0});
    Tensor up = resize_bilinear(x, 4, 1);
    CHECK(up[0] == doctest::Approx(0.0));
    CHECK(up[1] == doctest::Approx(0.25));
    CHECK(up[2] == doctest::Approx(0.75));
    CHECK(up[3] == doctest::Approx(1.0));
}

TEST_CASE("nearest resize replicates exact integer upscale blocks") {
    Tensor x(Shape{1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
    Tensor up = resize_nearest(x, 4, 4);
    for (std::int64_t i = 0; i < 2; ++i) {
        for (std::int64_t j = 0; j < 2; ++j) {
            CHECK(up.at({0, 0, i, j}) == 1.0);
            CHECK(up.at({0, 0, i, j + 2}) == 2.0);
            CHECK(up.at({0, 0, i + 2, j}) == 3.0);
            CHECK(up.at({0, 0, i + 2, j + 2}) == 4.0);
        }
    }
    // downscale picks the floor source pixel
    Tensor down = resize_nearest(up, 2, 2);
    CHECK(cftest::max_abs_diff(down, x) == 0.0);
}

TEST_CASE("all_finite flags NaN and infinity") {
    Tensor t(Shape{3});
    CHECK(t.all_finite());
    t[1] = std::numeric_limits<Scalar>::quiet_NaN();
    CHECK_FALSE(t.all_finite());
    t[1] = 0.0;
    t[2] = std::numeric_limits<Scalar>::infinity();
    CHECK_FALSE(t.all_finite());
}
