#include "support.hpp"

#include "dcl4kt/config.hpp"
#include "dcl4kt/csv.hpp"

#include <doctest.h>

#include <cmath>

using namespace dcl4kt;

TEST_CASE("config parses key = value lines, comments and overrides") {
  auto c = Config::parse("# comment\nlambda_c = 0.3\n  batch_size=64  \n\naugment = yes\ngrid = 0, 0.5 ,1\n");
  CHECK(c.get_double("lambda_c", 0) == doctest::Approx(0.3));
  CHECK(c.get_int("batch_size", 0) == 64);
  CHECK(c.get_bool("augment", false));
  CHECK(c.get_doubles("grid", {}) == std::vector<double>{0, 0.5, 1});
  CHECK(c.get_int("missing", 7) == 7);

  c.set("learning-rate=0.01");
  CHECK(c.get_double("learning_rate", 0) == doctest::Approx(0.01));
  c.set("batch_size = 32");
  CHECK(c.get_int("batch_size", 0) == 32);
}

TEST_CASE("config rejects malformed input") {
  CHECK_THROWS_AS(Config::parse("no equals sign here"), InputError);
  Config c;
  CHECK_THROWS_AS(c.set("=3"), InputError);
  c.set("x", "abc");
  CHECK_THROWS_AS(c.get_double("x", 0), InputError);
  CHECK_THROWS_AS(c.get_int("x", 0), InputError);
  CHECK_THROWS_AS(c.get_bool("x", false), InputError);
  c.set("y", "2.5");
  CHECK_THROWS_AS(c.get_int("y", 0), InputError);
  CHECK_THROWS_AS(Config::load("/nonexistent/cfg"), IoError);
}

TEST_CASE("csv handles quoting, CRLF and a BOM") {
  std::istringstream in("\xEF\xBB\xBFid,text\r\n1,\"a, \"\"quoted\"\" field\"\r\n2,\"multi\nline\"\r\n3,\n");
  auto t = csv::parse(in);
  REQUIRE(t.header == std::vector<std::string>{"id", "text"});
  REQUIRE(t.rows.size() == 3);
  CHECK(t.rows[0][1] == "a, \"quoted\" field");
  CHECK(t.rows[1][1] == "multi\nline");
  CHECK(t.rows[2][1].empty());
  CHECK(t.column("text") == std::optional<std::size_t>(1));
  CHECK_FALSE(t.column("nope"));
}

TEST_CASE("csv writer round-trips through the reader") {
  auto dir = testing::temp_dir("csv");
  std::vector<std::vector<std::string>> rows = {{"a,b", "plain"}, {"quote\"inside", "tab\there"}, {"", "x"}};
  {
    csv::Writer w(dir / "t.csv");
    w.row({"c1", "c2"});
    for (const auto& r : rows) w.row(r);
  }
  auto t = csv::read(dir / "t.csv");
  CHECK(t.rows == rows);

  {
    csv::Writer w(dir / "t.tsv", '\t');
    w.row({"c1", "c2"});
    for (const auto& r : rows) w.row(r);
  }
  CHECK(csv::delimiter_for(dir / "t.tsv") == '\t');
  CHECK(csv::read(dir / "t.tsv", '\t').rows == rows);
  CHECK_THROWS_AS(csv::read(dir / "absent.csv"), IoError);
}

TEST_CASE("format_double round-trips") {
  for (double v : {0.0, 0.1, 1.0 / 3.0, 0.75, 1e-12, 123456.789, -2.5}) {
    auto s = csv::format_double(v);
    CHECK(std::strtod(s.c_str(), nullptr) == v);
  }
  CHECK(csv::format_double(0.75) == "0.75");
}
