#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fitpath/errors.hpp"
#include "fitpath/tensor.hpp"

using namespace fitpath;

TEST_CASE("shape bookkeeping") {
    Tensor t({2, 3});
    CHECK(t.numel() == 6);
    CHECK(t.rank() == 2);
    CHECK(t.extent(1) == 3);
    CHECK(shape_numel({4, 5, 6}) == 120);
    CHECK(shape_str({1, 28, 28}) == "[1,28,28]");
}

TEST_CASE("construction rejects inconsistent data") {
    CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
    CHECK_THROWS_AS(Tensor({0, 3}), ShapeError);
    CHECK_THROWS_AS(Tensor({2, -1}), ShapeError);
}

TEST_CASE("row-major indexing") {
    Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.at({0, 2}) == 3);
    CHECK(t.at({1, 0}) == 4);
    t.at({1, 2}) = 9;
    CHECK(t[5] == 9);
}

TEST_CASE("reshape preserves data and checks element count") {
    Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor r = t.reshaped({3, 2});
    CHECK(r.at({2, 1}) == 6);
    CHECK_THROWS_AS(t.reshaped({4, 2}), ShapeError);
}

TEST_CASE("finiteness and norms") {
    Tensor t = Tensor::vec({-3.0, 4.0});
    CHECK(t.all_finite());
    CHECK(t.max_abs() == 4.0);
    CHECK(sq_norm(t) == 25.0);
    Tensor u = Tensor::vec({-3.0, 5.0});
    CHECK(sq_norm_diff(t, u) == 1.0);
    t[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_FALSE(t.all_finite());
}

TEST_CASE("bit equality is exact") {
    Tensor a = Tensor::vec({0.1, 0.2});
    Tensor b = Tensor::vec({0.1, 0.2});
    CHECK(bit_equal(a, b));
    b[1] = 0.2 + 1e-17;  // same value after rounding
    CHECK(bit_equal(a, b));
    b[1] = std::nextafter(0.2, 1.0);
    CHECK_FALSE(bit_equal(a, b));
}

TEST_CASE("seeded uniform fill is reproducible") {
    Rng r1 = make_rng(7), r2 = make_rng(7);
    Tensor a = Tensor::uniform({16}, r1, -1.0, 1.0);
    Tensor b = Tensor::uniform({16}, r2, -1.0, 1.0);
    CHECK(bit_equal(a, b));
}
