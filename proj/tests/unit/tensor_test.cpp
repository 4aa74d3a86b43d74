#include <stdexcept>

#include "cirs/rng.hpp"
#include "cirs/tensor.hpp"
#include "doctest.h"

using cirs::Rng;
using cirs::nn::Tensor;

TEST_CASE("shape product equals data length") {
  Tensor t({2, 3});
  CHECK(t.size() == 6);
  CHECK(t.rank() == 2);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  for (std::size_t i = 0; i < t.size(); ++i) CHECK(t[i] == 0.0);
}

TEST_CASE("constructing with wrong data length throws") {
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), std::invalid_argument);
}

TEST_CASE("zero dims and empty shapes are rejected") {
  CHECK_THROWS_AS(Tensor(std::vector<std::size_t>{}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor({3, 0}), std::invalid_argument);
}

TEST_CASE("element access and fill") {
  Tensor t({2, 2}, {1.0, 2.0, 3.0, 4.0});
  CHECK(t.at(0, 1) == 2.0);
  CHECK(t.at(1, 0) == 3.0);
  t.at(1, 1) = 9.0;
  CHECK(t[3] == 9.0);
  t.fill(0.5);
  CHECK(t[0] == 0.5);
  CHECK_THROWS(t.at(2, 0));
}

TEST_CASE("factories") {
  CHECK(Tensor::scalar(4.0).size() == 1);
  CHECK(Tensor::scalar(4.0)[0] == 4.0);
  Tensor f = Tensor::full({3}, 7.0);
  CHECK(f[2] == 7.0);

  Rng r(3);
  Tensor u = Tensor::uniform({4, 4}, -1.0, 1.0, r);
  for (std::size_t i = 0; i < u.size(); ++i) {
    CHECK(u[i] >= -1.0);
    CHECK(u[i] < 1.0);
  }
  Tensor n = Tensor::normal({100}, 2.0, 0.1, r);
  double mean = 0.0;
  for (std::size_t i = 0; i < n.size(); ++i) mean += n[i];
  mean /= static_cast<double>(n.size());
  CHECK(std::abs(mean - 2.0) < 0.1);
}

TEST_CASE("same_shape compares dims not just size") {
  Tensor a({2, 3});
  Tensor b({3, 2});
  Tensor c({2, 3});
  CHECK(!a.same_shape(b));
  CHECK(a.same_shape(c));
}
