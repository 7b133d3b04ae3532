#include "gbvi/rng.hpp"

#include "doctest.h"

#include <cmath>
#include <vector>

using namespace gbvi;

TEST_SUITE("rng") {

TEST_CASE("identical keys give identical sequences") {
  RngStream a(42);
  RngStream b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("substreams are independent of parent consumption") {
  RngStream fresh(7);
  RngStream used(7);
  used.next_gaussian_vector(13);  // burn some state
  RngStream sub_a = fresh.substream(3);
  RngStream sub_b = used.substream(3);
  for (int i = 0; i < 20; ++i) CHECK(sub_a.next_u64() == sub_b.next_u64());
}

TEST_CASE("per-index substreams make results order-independent") {
  // Simulate two workers splitting 64 samples vs one worker doing all.
  RngStream root(99);
  std::vector<double> serial;
  for (int i = 0; i < 64; ++i) {
    serial.push_back(root.substream(i).next_gaussian());
  }
  std::vector<double> interleaved(64);
  for (int i = 63; i >= 0; --i) {
    interleaved[i] = root.substream(i).next_gaussian();
  }
  CHECK(serial == std::vector<double>(interleaved.begin(), interleaved.end()));
}

TEST_CASE("gaussian draws have roughly standard moments") {
  RngStream rng(2024);
  const int n = 200000;
  double sum = 0.0, sum_sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.next_gaussian();
    sum += x;
    sum_sq += x * x;
  }
  const double mean = sum / n;
  const double var = sum_sq / n - mean * mean;
  CHECK(std::abs(mean) < 0.01);
  CHECK(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("uniform draws stay strictly inside (0,1)") {
  RngStream rng(5);
  for (int i = 0; i < 100000; ++i) {
    const double u = rng.next_uniform();
    CHECK(u > 0.0);
    CHECK(u < 1.0);
  }
}

}  // TEST_SUITE
