#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <set>
#include <vector>

#include "ctxrank/rng.hpp"

using namespace ctxrank;

TEST_CASE("same seed reproduces the identical stream", "[rng]") {
  Rng a(12345), b(12345);
  for (int i = 0; i < 1000; ++i) REQUIRE(a.next_u64() == b.next_u64());
}

TEST_CASE("different seeds diverge immediately", "[rng]") {
  Rng a(1), b(2);
  int same = 0;
  for (int i = 0; i < 64; ++i) {
    if (a.next_u64() == b.next_u64()) ++same;
  }
  CHECK(same == 0);
}

TEST_CASE("substream keys separate by every label position", "[rng]") {
  const std::uint64_t root = 99;
  std::set<std::uint64_t> keys;
  for (std::uint64_t a = 0; a < 8; ++a) {
    for (std::uint64_t b = 0; b < 8; ++b) {
      for (std::uint64_t c = 0; c < 4; ++c) keys.insert(substream_seed(root, a, b, c));
    }
  }
  CHECK(keys.size() == 8 * 8 * 4);
  // label defaults make (a) and (a,0,0) the same stream by construction
  CHECK(substream_seed(root, 3) == substream_seed(root, 3, 0, 0));
  CHECK(substream_seed(root, 3) != substream_seed(root + 1, 3));
}

TEST_CASE("next_double stays in the unit interval", "[rng]") {
  Rng rng(7);
  for (int i = 0; i < 10000; ++i) {
    const double x = rng.next_double();
    REQUIRE(x >= 0.0);
    REQUIRE(x < 1.0);
  }
}

TEST_CASE("below respects the bound and covers small ranges", "[rng]") {
  Rng rng(11);
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 14000; ++i) {
    const std::uint64_t x = rng.below(7);
    REQUIRE(x < 7);
    ++counts[x];
  }
  // each bucket within 25% of uniform; a modulo-biased draw would skew more
  for (int c : counts) {
    CHECK(c > 1500);
    CHECK(c < 2500);
  }
}

TEST_CASE("range is inclusive on both ends", "[rng]") {
  Rng rng(13);
  bool saw_lo = false, saw_hi = false;
  for (int i = 0; i < 2000; ++i) {
    const std::int64_t x = rng.range(-3, 4);
    REQUIRE(x >= -3);
    REQUIRE(x <= 4);
    saw_lo = saw_lo || x == -3;
    saw_hi = saw_hi || x == 4;
  }
  CHECK(saw_lo);
  CHECK(saw_hi);
}

TEST_CASE("normal draws have roughly standard moments", "[rng]") {
  Rng rng(17);
  const int n = 200000;
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    sum += x;
    sum2 += x * x;
  }
  const double mean = sum / n;
  const double var = sum2 / n - mean * mean;
  CHECK(std::fabs(mean) < 0.02);
  CHECK(std::fabs(var - 1.0) < 0.03);
}

TEST_CASE("shuffle produces a permutation and is seed-deterministic", "[rng]") {
  std::vector<int> v(50);
  std::iota(v.begin(), v.end(), 0);
  std::vector<int> w = v;
  Rng a(23), b(23);
  a.shuffle(v);
  b.shuffle(w);
  CHECK(v == w);
  std::sort(w.begin(), w.end());
  std::vector<int> sorted(50);
  std::iota(sorted.begin(), sorted.end(), 0);
  CHECK(w == sorted);
}

TEST_CASE("sample_weighted follows the weights", "[rng]") {
  Rng rng(29);
  const std::vector<double> weights{1.0, 0.0, 3.0};
  std::vector<int> counts(3, 0);
  for (int i = 0; i < 40000; ++i) ++counts[rng.sample_weighted(weights)];
  CHECK(counts[1] == 0);
  const double ratio = static_cast<double>(counts[2]) / counts[0];
  CHECK(ratio > 2.7);
  CHECK(ratio < 3.3);
}

TEST_CASE("sample_softmax sharpens as temperature drops", "[rng]") {
  Rng rng(31);
  std::vector<double> scratch;
  const std::vector<double> logits{0.0, 1.0, 2.0};
  int top_sharp = 0, top_flat = 0;
  for (int i = 0; i < 20000; ++i) {
    if (rng.sample_softmax(logits, 0.05, scratch) == 2) ++top_sharp;
    if (rng.sample_softmax(logits, 10.0, scratch) == 2) ++top_flat;
  }
  CHECK(top_sharp > 19900);  // near-argmax
  CHECK(top_flat < 8500);    // near-uniform
  CHECK(top_flat > 5500);
}
