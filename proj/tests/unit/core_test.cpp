#include "doctest.h"

#include "carforest/core.hpp"

#include <set>

using namespace carforest;

TEST_SUITE("core") {

TEST_CASE("type-7 quantiles interpolate between order statistics") {
  Vector v(5);
  v << 5, 1, 4, 2, 3;
  CHECK(quantile_type7(v, 0.0) == 1.0);
  CHECK(quantile_type7(v, 1.0) == 5.0);
  CHECK(quantile_type7(v, 0.5) == 3.0);
  CHECK(quantile_type7(v, 0.1) == doctest::Approx(1.4));
  CHECK(quantile_type7(v, 0.975) == doctest::Approx(4.9));
  CHECK_THROWS_AS(quantile_type7(Vector(0), 0.5), ValidationError);
}

TEST_CASE("parallel_for result does not depend on the worker count") {
  std::vector<double> a(1000), b(1000);
  set_thread_count(1);
  parallel_for(a.size(), [&](std::size_t i) { a[i] = std::sin(static_cast<double>(i)) * 3.0; });
  set_thread_count(4);
  parallel_for(b.size(), [&](std::size_t i) { b[i] = std::sin(static_cast<double>(i)) * 3.0; });
  set_thread_count(1);
  CHECK(a == b);
}

TEST_CASE("parallel_for rethrows the lowest failing index") {
  set_thread_count(3);
  try {
    parallel_for(50, [](std::size_t i) {
      if (i == 7 || i == 31) throw ValidationError("bad " + std::to_string(i));
    });
    FAIL("expected an exception");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()) == "bad 7");
  }
  set_thread_count(1);
}

TEST_CASE("derived seeds are distinct and deterministic") {
  std::set<std::uint64_t> seen;
  for (std::uint64_t a = 0; a < 50; ++a)
    for (std::uint64_t b = 0; b < 4; ++b) seen.insert(derive_seed(42, a, b));
  CHECK(seen.size() == 200);
  CHECK(derive_seed(42, 3, 1) == derive_seed(42, 3, 1));
  CHECK(derive_seed(42, 3) != derive_seed(43, 3));
}

TEST_CASE("format_double round-trips") {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 139282.0, 11.844535}) CHECK(std::stod(format_double(v)) == v);
  CHECK(format_double(2.0) == "2");
}

TEST_CASE("parse errors carry the line number") {
  const ParseError e("bad cell", 12);
  CHECK(e.line() == 12);
  CHECK(std::string(e.what()) == "line 12: bad cell");
}

}
