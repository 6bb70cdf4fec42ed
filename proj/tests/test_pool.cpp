#include <set>

#include "doctest.h"
#include "shanshui/image_pool.hpp"
#include "test_support.hpp"

using namespace shanshui;
using namespace shanshui::nn;

namespace {

TensorImage<float> tagged(float v) { return TensorImage<float>::constant(3, 4, 4, v); }

}  // namespace

TEST_CASE("capacity zero passes images through") {
  ImagePool<float> pool(0, 1);
  for (int i = 0; i < 20; ++i) {
    CHECK(pool.query(tagged(float(i))).data(0, 0) == float(i));
    CHECK(pool.stored().empty());
  }
}

TEST_CASE("the first capacity queries fill the pool") {
  ImagePool<float> pool(5, 2);
  for (int i = 0; i < 5; ++i) {
    CHECK(pool.query(tagged(float(i))).data(0, 0) == float(i));
    CHECK(pool.stored().size() == std::size_t(i + 1));
  }
}

TEST_CASE("a full pool returns the fresh image half of the time") {
  ImagePool<float> pool(50, 3);
  for (int i = 0; i < 50; ++i) pool.query(tagged(-1.0f));
  int fresh = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const float tag = float(i);
    const auto out = pool.query(tagged(tag));
    if (out.data(0, 0) == tag) ++fresh;
    CHECK(pool.stored().size() <= pool.capacity());
  }
  const double fraction = double(fresh) / n;
  CHECK(fraction >= 0.48);
  CHECK(fraction <= 0.52);
}

TEST_CASE("swaps return a stored image and keep the fresh one") {
  ImagePool<float> pool(3, 4);
  for (int i = 0; i < 3; ++i) pool.query(tagged(float(i)));
  for (int i = 100; i < 200; ++i) {
    std::multiset<float> before;
    for (const auto& s : pool.stored()) before.insert(s.data(0, 0));
    const auto out = pool.query(tagged(float(i)));
    std::multiset<float> after;
    for (const auto& s : pool.stored()) after.insert(s.data(0, 0));
    if (out.data(0, 0) == float(i)) {
      CHECK(after == before);
    } else {
      CHECK(before.count(out.data(0, 0)) == 1);
      CHECK(after.count(float(i)) == 1);
      CHECK(after.count(out.data(0, 0)) == 0);
    }
  }
}

TEST_CASE("pool queries are deterministic under a seed") {
  auto run = [](std::uint64_t seed) {
    ImagePool<float> pool(10, seed);
    std::vector<float> out;
    for (int i = 0; i < 200; ++i) out.push_back(pool.query(tagged(float(i))).data(0, 0));
    return out;
  };
  CHECK(run(7) == run(7));
  CHECK(run(7) != run(8));

  // Restoring stored images and rng resumes the same sequence.
  ImagePool<float> a(10, 9);
  for (int i = 0; i < 30; ++i) a.query(tagged(float(i)));
  ImagePool<float> b(10, 0);
  b.restore(a.stored(), a.rng());
  for (int i = 30; i < 80; ++i)
    CHECK(a.query(tagged(float(i))).data(0, 0) == b.query(tagged(float(i))).data(0, 0));
}
