#include <doctest.h>

#include <cstring>
#include <stdexcept>

#include "oracles.hpp"
#include "tagseg/rng.hpp"
#include "tagseg/tensor.hpp"

using namespace tagseg;

namespace {

FeatureMap random_map(int c, int h, int w, Rng& rng, double lo = -1.0, double hi = 1.0) {
  FeatureMap m(c, h, w);
  for (double& v : m.values) {
    v = rng.uniform(lo, hi);
  }
  return m;
}

}  // namespace

TEST_SUITE("tensor") {

TEST_CASE("upsampling a constant map stays constant") {
  FeatureMap m(1, 4, 4, 3.0);
  const FeatureMap up = bilinear_upsample(m, 8);
  CHECK(up.height == 32);
  CHECK(up.width == 32);
  for (const double v : up.values) {
    CHECK(v == doctest::Approx(3.0).epsilon(1e-15));
  }
}

TEST_CASE("single-sample map clamps everywhere") {
  FeatureMap m(1, 1, 1, 5.0);
  const FeatureMap up = bilinear_upsample(m, 4);
  CHECK(up.height == 4);
  CHECK(up.width == 4);
  for (const double v : up.values) {
    CHECK(v == 5.0);
  }
}

TEST_CASE("2x2 step pattern upsampled by 2 matches the coordinate formula") {
  FeatureMap m(1, 2, 2);
  m.at(0, 0, 0) = 0.0;
  m.at(0, 0, 1) = 1.0;
  m.at(0, 1, 0) = 0.0;
  m.at(0, 1, 1) = 1.0;
  const FeatureMap up = bilinear_upsample(m, 2);
  // Frozen from the per-pixel evaluation of the alignment formula: every row
  // of the 4x4 result reads [0, 0.25, 0.75, 1].
  const double expected[4] = {0.0, 0.25, 0.75, 1.0};
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) {
      CHECK(up.at(0, y, x) == doctest::Approx(expected[x]).epsilon(1e-15));
    }
  }
  const FeatureMap ref = oracle::bilinear_reference(m, 2);
  for (std::size_t i = 0; i < up.values.size(); ++i) {
    CHECK(up.values[i] == doctest::Approx(ref.values[i]).epsilon(1e-15));
  }
}

TEST_CASE("upsampling matches the reference formula on random maps") {
  Rng rng(11);
  for (const int factor : {1, 2, 3, 5}) {
    const FeatureMap m = random_map(2, 3, 4, rng);
    const FeatureMap up = bilinear_upsample(m, factor);
    const FeatureMap ref = oracle::bilinear_reference(m, factor);
    REQUIRE(up.values.size() == ref.values.size());
    for (std::size_t i = 0; i < up.values.size(); ++i) {
      CHECK(up.values[i] == doctest::Approx(ref.values[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("upsampling preserves global bounds and factor 1 is the identity") {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const FeatureMap m = random_map(1 + trial % 3, 2 + trial % 4, 2 + (trial * 7) % 5, rng);
    double mn = m.values[0], mx = m.values[0];
    for (const double v : m.values) {
      mn = std::min(mn, v);
      mx = std::max(mx, v);
    }
    const FeatureMap up = bilinear_upsample(m, 1 + trial % 4);
    for (const double v : up.values) {
      CHECK(v >= mn - 1e-12);
      CHECK(v <= mx + 1e-12);
    }
  }
  const FeatureMap m = random_map(2, 5, 3, rng);
  const FeatureMap same = bilinear_upsample(m, 1);
  CHECK(std::memcmp(same.values.data(), m.values.data(), m.values.size() * sizeof(double)) == 0);
}

TEST_CASE("upsampling rejects factor < 1") {
  FeatureMap m(1, 2, 2, 0.0);
  CHECK_THROWS_AS(bilinear_upsample(m, 0), std::invalid_argument);
}

TEST_CASE("argsort_descending orders and breaks ties stably") {
  CHECK(argsort_descending({0.1, 0.7, 0.2}) == std::vector<int>{1, 2, 0});
  CHECK(argsort_descending({0.5, 0.5, 0.1}) == std::vector<int>{0, 1, 2});
  CHECK_THROWS_AS(argsort_descending({}), std::invalid_argument);
}

TEST_CASE("argsort_descending agrees with a naive comparison sort") {
  Rng rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> scores(20);
    for (double& s : scores) {
      s = rng.uniform(0.0, 1.0);
    }
    if (trial % 3 == 0) {
      scores[3] = scores[11];  // force ties sometimes
    }
    CHECK(argsort_descending(scores) == oracle::argsort_reference(scores));
  }
}

TEST_CASE("argsort output makes the score sequence non-increasing") {
  Rng rng(14);
  std::vector<double> scores(50);
  for (double& s : scores) {
    s = rng.uniform(-5.0, 5.0);
  }
  const std::vector<int> order = argsort_descending(scores);
  for (std::size_t i = 1; i < order.size(); ++i) {
    CHECK(scores[order[i - 1]] >= scores[order[i]]);
  }
}

TEST_CASE("minmax_normalize maps the examples correctly") {
  FeatureMap m(1, 1, 3);
  m.values = {2.0, 4.0, 6.0};
  CHECK(minmax_normalize(m).values == std::vector<double>{0.0, 0.5, 1.0});

  FeatureMap constant(1, 2, 2, 7.5);
  for (const double v : minmax_normalize(constant).values) {
    CHECK(v == 0.0);
  }

  FeatureMap signed_map(1, 1, 3);
  signed_map.values = {-1.0, 0.0, 3.0};
  CHECK(minmax_normalize(signed_map).values == std::vector<double>{0.0, 0.25, 1.0});
}

TEST_CASE("minmax_normalize is idempotent and channel-independent") {
  Rng rng(15);
  for (int trial = 0; trial < 20; ++trial) {
    const FeatureMap m = random_map(3, 4, 4, rng, -3.0, 5.0);
    const FeatureMap once = minmax_normalize(m);
    for (const double v : once.values) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    const FeatureMap twice = minmax_normalize(once);
    for (std::size_t i = 0; i < once.values.size(); ++i) {
      CHECK(twice.values[i] == once.values[i]);
    }
  }
}

}  // TEST_SUITE
