#include <doctest.h>

#include <fstream>

#include "helpers.hpp"
#include "nvmeguard/trace.hpp"

using namespace nvmeguard;
using testutil::cmd;

namespace {

std::filesystem::path write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p) << text;
  return p;
}

}  // namespace

TEST_SUITE("trace") {
  TEST_CASE("header only gives an empty stream") {
    const auto dir = testutil::temp_dir("trace");
    const auto p = write_file(dir / "t.csv", "timestamp,opcode,offset,size,label\n");
    CHECK(parse_trace(p, 1ull << 30).commands.empty());
  }

  TEST_CASE("single row") {
    const auto dir = testutil::temp_dir("trace");
    const auto p = write_file(dir / "t.csv", "timestamp,opcode,offset,size,label\n0.0,R,0,512,0\n");
    const auto s = parse_trace(p, 1ull << 30);
    REQUIRE(s.commands.size() == 1);
    CHECK(s.commands[0] == cmd(0.0, Opcode::Read, 0, 512, Label::Benign));
  }

  TEST_CASE("decreasing timestamp names the row") {
    const auto dir = testutil::temp_dir("trace");
    const auto p = write_file(dir / "t.csv",
                              "timestamp,opcode,offset,size,label\n"
                              "0.1,R,0,512,0\n0.2,W,512,512,1\n0.15,R,0,512,0\n");
    try {
      parse_trace(p, 1ull << 30);
      FAIL("expected a TraceError");
    } catch (const TraceError& e) {
      CHECK(e.line() == 4);
      CHECK(std::string(e.what()).find("row 3") != std::string::npos);
    }
  }

  TEST_CASE("malformed rows are rejected") {
    const auto dir = testutil::temp_dir("trace");
    const char* bad[] = {"0.1,X,0,512,0", "0.1,R,0,0,0",    "0.1,R,abc,512,0",
                         "0.1,R,0,512,7", "-1,R,0,512,0",   "0.1,R,0,512",
                         "0.1,R,0,512,0,9", "0.1,R,1073741312,1024,0"};
    for (const char* row : bad) {
      CAPTURE(row);
      const auto p = write_file(dir / "t.csv",
                                std::string("timestamp,opcode,offset,size,label\n") + row + "\n");
      CHECK_THROWS_AS(parse_trace(p, 1ull << 30), TraceError);
    }
    CHECK_THROWS_AS(parse_trace(write_file(dir / "h.csv", "time,op\n"), 1ull << 30), TraceError);
    CHECK_THROWS_AS(parse_trace(dir / "missing.csv", 1ull << 30), TraceError);
  }

  TEST_CASE("equal timestamps keep file order") {
    const auto dir = testutil::temp_dir("trace");
    const auto p = write_file(dir / "t.csv",
                              "timestamp,opcode,offset,size,label\n"
                              "1,W,4096,512,0\n1,R,0,512,1\n1,R,8192,512,0\n");
    const auto s = parse_trace(p, 1ull << 30);
    REQUIRE(s.commands.size() == 3);
    CHECK(s.commands[0].offset == 4096);
    CHECK(s.commands[1].offset == 0);
    CHECK(s.commands[2].offset == 8192);
  }

  TEST_CASE("round trip of empty and random streams") {
    const auto dir = testutil::temp_dir("trace");
    Stream empty;
    empty.stream_id = "empty";
    empty.disk_capacity = 1ull << 30;
    serialize_trace(empty, dir / "empty.csv");
    auto back = load_trace(dir / "empty.csv");
    CHECK(back.commands.empty());
    CHECK(back.disk_capacity == empty.disk_capacity);

    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
      auto s = testutil::random_stream(seed, 1 + seed % 7, 1ull << 22, true);
      s.family = seed % 2 ? std::optional<std::string>("family-1") : std::nullopt;
      const auto path = dir / "r.csv";
      serialize_trace(s, path);
      const auto r = load_trace(path);
      REQUIRE(r.commands == s.commands);
      REQUIRE(r.family == s.family);
      REQUIRE(r.disk_capacity == s.disk_capacity);
    }
    auto big = testutil::random_stream(99, 1000);
    serialize_trace(big, dir / "big.csv");
    CHECK(load_trace(dir / "big.csv").commands == big.commands);
  }

  TEST_CASE("unlabeled is written as an empty field") {
    const auto dir = testutil::temp_dir("trace");
    Stream s;
    s.stream_id = "u";
    s.disk_capacity = 1ull << 30;
    s.commands = {cmd(0.5, Opcode::Write, 1024, 4096, Label::Unlabeled)};
    serialize_trace(s, dir / "u.csv");
    std::ifstream in(dir / "u.csv");
    std::string header, row;
    std::getline(in, header);
    std::getline(in, row);
    CHECK(row.back() == ',');
    CHECK(load_trace(dir / "u.csv").commands[0].label == Label::Unlabeled);
  }

  TEST_CASE("validate_stream") {
    auto s = testutil::random_stream(5, 50);
    CHECK(validate_stream(s).empty());

    auto zero = s;
    zero.commands[7].size = 0;
    auto v = validate_stream(zero);
    REQUIRE(v.size() == 1);
    CHECK(v[0].command_index == 7);

    auto beyond = s;
    beyond.commands[3].offset = beyond.disk_capacity;
    CHECK(validate_stream(beyond).size() == 1);
  }

  TEST_CASE("seconds format round-trips exactly") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1e6);
    for (int i = 0; i < 1000; ++i) {
      const double x = u(rng);
      CHECK(std::stod(format_seconds(x)) == x);
    }
  }
}
