#include <gtest/gtest.h>

#include <atomic>
#include <stdexcept>

#include "support.hpp"
#include "tcube/csv.hpp"
#include "tcube/date.hpp"
#include "tcube/error.hpp"
#include "tcube/io.hpp"
#include "tcube/parallel.hpp"

using namespace tcube;

TEST(Date, ParsesAndFormats) {
  const Date d = Date::parse("2018-07-17");
  EXPECT_EQ(d.str(), "2018-07-17");
  EXPECT_EQ(Date::from_ymd(1970, 1, 1).days(), 0);
  EXPECT_EQ((Date::parse("2018-07-01") + 16).str(), "2018-07-17");
  EXPECT_EQ(Date::parse("2018-08-02") - Date::parse("2018-07-01"), 32);
  EXPECT_EQ((Date::parse("2020-02-28") + 1).str(), "2020-02-29");
}

TEST(Date, RejectsMalformedInput) {
  for (const char* bad : {"2018-7-17", "2018-02-30", "20180717", "2018-07-17T00:00", "", "abcd-ef-gh"}) {
    EXPECT_THROW(Date::parse(bad), ValidationError) << bad;
  }
}

TEST(Csv, HandlesQuotesAndLineEndings) {
  const auto recs = csv::parse("a,b\r\n\"x,1\",\"he said \"\"hi\"\"\"\n\n\"multi\nline\",z\n");
  ASSERT_EQ(recs.size(), 3u);
  EXPECT_EQ(recs[1].fields[0], "x,1");
  EXPECT_EQ(recs[1].fields[1], "he said \"hi\"");
  EXPECT_EQ(recs[2].fields[0], "multi\nline");
  EXPECT_EQ(recs[2].line, 4u);
  EXPECT_EQ(csv::quote("plain"), "plain");
  EXPECT_EQ(csv::quote("a,\"b\""), "\"a,\"\"b\"\"\"");
}

TEST(Io, Crc32MatchesReferenceValue) {
  EXPECT_EQ(io::crc32("123456789"), 0xCBF43926u);
  EXPECT_EQ(io::crc32_hex("123456789"), "cbf43926");
}

TEST(Io, BinaryRoundTripsAndRounding) {
  const std::vector<std::int16_t> v{-32768, -1, 0, 1, 32767};
  EXPECT_EQ(io::decode_i16(io::encode_i16(v)), v);
  const std::vector<float> f{-1.5f, 0.f, 3.25f};
  EXPECT_EQ(io::decode_f32(io::encode_f32(f)), f);
  EXPECT_EQ(io::encode_i16(std::vector<std::int16_t>{0x0102}), std::string("\x02\x01", 2));
  EXPECT_EQ(io::round_to_i16(2.5), 3);
  EXPECT_EQ(io::round_to_i16(-2.5), -3);
  EXPECT_EQ(io::round_to_i16(1e9), 32767);
}

TEST(Io, AtomicWriteLeavesNoTemporaries) {
  test::TempDir dir;
  io::write_file_atomic(dir / "sub/f.bin", "abc");
  io::write_file_atomic(dir / "sub/f.bin", "defg");
  EXPECT_EQ(io::read_file(dir / "sub/f.bin"), "defg");
  int n = 0;
  for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir / "sub")) ++n;
  EXPECT_EQ(n, 1);
  EXPECT_THROW(io::read_file(dir / "missing"), ValidationError);
}

TEST(Parallel, VisitsEveryIndexOnceAndRethrows) {
  std::vector<std::atomic<int>> hits(1000);
  parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i]++; });
  for (const auto& h : hits) EXPECT_EQ(h.load(), 1);
  EXPECT_THROW(parallel_for(10, 3,
                            [](std::size_t i) {
                              if (i == 5) throw std::runtime_error("boom");
                            }),
               std::runtime_error);
}
