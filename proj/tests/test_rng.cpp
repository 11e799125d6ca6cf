#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <vector>

#include "langsg/rng.hpp"

using langsg::Rng;

TEST_CASE("rng: same seed gives the same stream") {
  Rng a(42), b(42);
  for (int k = 0; k < 100; ++k) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("rng: derived streams depend on the purpose") {
  Rng a = Rng::derive(1, "init"), b = Rng::derive(1, "shuffle"), c = Rng::derive(1, "init");
  const auto x = a.next_u64();
  CHECK(x != b.next_u64());
  CHECK(x == c.next_u64());
}

TEST_CASE("rng: uniform_index stays in range and hits every value") {
  Rng r(3);
  std::vector<int> seen(7, 0);
  for (int k = 0; k < 7000; ++k) {
    const auto v = r.uniform_index(7);
    REQUIRE(v < 7);
    ++seen[v];
  }
  for (int c : seen) CHECK(c > 800);
}

TEST_CASE("rng: uniform01 in [0,1) and normal has sane moments") {
  Rng r(11);
  double sum = 0, sq = 0;
  const int n = 20000;
  for (int k = 0; k < n; ++k) {
    const double u = r.uniform01();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    const double z = r.normal();
    sum += z;
    sq += z * z;
  }
  CHECK(std::abs(sum / n) < 0.05);
  CHECK(std::abs(sq / n - 1.0) < 0.05);
}

TEST_CASE("rng: shuffle is a permutation") {
  Rng r(5);
  std::vector<int> v(50);
  std::iota(v.begin(), v.end(), 0);
  r.shuffle(v.begin(), v.end());
  auto s = v;
  std::sort(s.begin(), s.end());
  for (int k = 0; k < 50; ++k) CHECK(s[k] == k);
}

TEST_CASE("rng: uniform_int is inclusive") {
  Rng r(9);
  bool lo = false, hi = false;
  for (int k = 0; k < 1000; ++k) {
    const int v = r.uniform_int(3, 5);
    REQUIRE(v >= 3);
    REQUIRE(v <= 5);
    lo |= v == 3;
    hi |= v == 5;
  }
  CHECK(lo);
  CHECK(hi);
}
