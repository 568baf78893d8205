#include "doctest.h"
#include "rsseg/config.hpp"
#include "rsseg/tensor.hpp"

using namespace rsseg;

TEST_CASE("config parses key = value lines, skipping comments and blanks") {
  Config c = Config::parse("# header\n\nlr = 0.001\nname = net one\nflag=true\n");
  CHECK(c.get("lr") == "0.001");
  CHECK(c.get("name") == "net one");
  CHECK(c.get_double("lr", 0.0) == doctest::Approx(0.001));
  CHECK(c.get_bool("flag", false));
  CHECK_FALSE(c.has("missing"));
  CHECK(c.get_or("missing", "x") == "x");
  CHECK(c.get_long("missing", 42) == 42);
}

TEST_CASE("config set overwrites and str round-trips") {
  Config c;
  c.set("a", "1");
  c.set("b", "2");
  c.set("a", "3");
  CHECK(c.get("a") == "3");
  Config back = Config::parse(c.str());
  CHECK(back.get("a") == "3");
  CHECK(back.get("b") == "2");
}

TEST_CASE("split and trim") {
  auto parts = split("1, 2 ,3", ',');
  REQUIRE(parts.size() == 3);
  CHECK(trim(parts[1]) == "2");
  CHECK(trim("  x  ") == "x");
  CHECK(trim("") == "");
}
