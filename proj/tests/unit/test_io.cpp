#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <limits>

#include "oracles.hpp"
#include "sgflow/io.hpp"

using namespace sgflow;

namespace {

std::uint64_t bits(double x) {
  std::uint64_t b;
  std::memcpy(&b, &x, sizeof b);
  return b;
}

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("sgflow_io_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

}  // namespace

TEST(FormatDouble, RoundTripsBitExactly) {
  const double values[] = {0.0, -0.0, 1.0 / 3.0, 0.1, 1e-310, std::numeric_limits<double>::min(),
                           std::numeric_limits<double>::max(), -2.5e-17, 123456789.123456789,
                           std::nextafter(1.0, 2.0)};
  for (double v : values) EXPECT_EQ(bits(parse_double(format_double(v))), bits(v)) << format_double(v);
  Rng rng(4);
  for (int i = 0; i < 10000; ++i) {
    const double v = std::ldexp(rng.normal(), static_cast<int>(rng.index(200)) - 100);
    ASSERT_EQ(bits(parse_double(format_double(v))), bits(v));
  }
}

TEST(FormatDouble, NonFinite) {
  EXPECT_EQ(format_double(std::numeric_limits<double>::infinity()), "inf");
  EXPECT_EQ(format_double(-std::numeric_limits<double>::infinity()), "-inf");
  EXPECT_EQ(format_double(std::nan("")), "nan");
  EXPECT_TRUE(std::isinf(parse_double("inf")));
  EXPECT_TRUE(std::isnan(parse_double("nan")));
  EXPECT_THROW(parse_double("1.5x"), IoError);
  EXPECT_THROW(parse_double(""), IoError);
}

TEST(Csv, TableRoundTrip) {
  Table t;
  t.columns = {"a", "b", "c"};
  Rng rng(5);
  for (int r = 0; r < 50; ++r) t.rows.push_back({rng.normal(), rng.uniform() * 1e-200, rng.normal() * 1e200});
  t.rows.push_back({std::numeric_limits<double>::infinity(), 0.0, -1.0});
  const Table back = parse_csv(to_csv(t));
  ASSERT_EQ(back.columns, t.columns);
  ASSERT_EQ(back.rows.size(), t.rows.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(bits(back.rows[r][c]), bits(t.rows[r][c]));
  EXPECT_EQ(back.column("b"), t.column("b"));
  EXPECT_THROW(t.column_index("zzz"), IoError);
}

TEST(Csv, RejectsMalformedInput) {
  EXPECT_THROW(parse_csv(""), IoError);
  EXPECT_THROW(parse_csv("a,b\n1\n"), IoError);
  EXPECT_THROW(parse_csv("a,b\n1,\n"), IoError);
  Table bad;
  bad.columns = {"x"};
  bad.rows.push_back({1.0, 2.0});
  EXPECT_THROW(to_csv(bad), IoError);
}

TEST(Csv, FileRoundTripAndErrors) {
  const auto dir = scratch("file");
  Table t;
  t.columns = {"x"};
  t.rows.push_back({0.25});
  write_csv(dir / "nested" / "t.csv", t);
  EXPECT_EQ(read_csv(dir / "nested" / "t.csv").rows[0][0], 0.25);
  EXPECT_THROW(read_csv(dir / "missing.csv"), IoError);
  write_text(dir / "blocker", "x");
  EXPECT_THROW(write_csv(dir / "blocker" / "t.csv", t), IoError);
  std::filesystem::remove_all(dir);
}

TEST(RiskCurveTable, FixedColumnsThenComponents) {
  RiskCurve c;
  c.push(0.0, 2.0, 0.0);
  c.push(0.5, 1.0, 0.25);
  c.component("extra") = {7.0, 8.0};
  const Table t = risk_curve_table(c);
  const std::vector<std::string> expected = {"t", "lambda", "bias_sq", "variance", "risk", "extra"};
  EXPECT_EQ(t.columns, expected);
  EXPECT_TRUE(std::isinf(t.rows[0][1]));
  EXPECT_EQ(t.rows[1][1], 2.0);
  EXPECT_EQ(t.rows[1][4], 1.25);
  EXPECT_EQ(t.rows[1][5], 8.0);
  c.component("short") = {1.0};
  EXPECT_THROW(risk_curve_table(c), IoError);
}

TEST(TrajectoryTable, IterationAndEffectiveTime) {
  Trajectory traj;
  traj.config.epsilon = 0.5;
  traj.states = Eigen::MatrixXd::Zero(3, 2);
  traj.states(2, 1) = 4.0;
  const Table t = trajectory_table(traj);
  const std::vector<std::string> expected = {"iter", "t_effective", "beta_1", "beta_2"};
  EXPECT_EQ(t.columns, expected);
  EXPECT_EQ(t.rows[2][0], 2.0);
  EXPECT_EQ(t.rows[2][1], 1.0);
  EXPECT_EQ(t.rows[2][3], 4.0);
}

TEST(Hashing, KnownVectors) {
  // Published FNV-1a 64-bit test vectors.
  EXPECT_EQ(fnv1a(""), 0xcbf29ce484222325ull);
  EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cull);
  EXPECT_EQ(fnv1a("foobar"), 0x85944171f73967e8ull);
  EXPECT_EQ(hex64(0xabcull), "0000000000000abc");
}

TEST(Metadata, DeterministicAndSensitiveToConfig) {
  const nlohmann::json cfg = {{"a", 1}, {"b", {1.5, 2.5}}};
  EXPECT_EQ(run_metadata(cfg, 3).dump(), run_metadata(cfg, 3).dump());
  EXPECT_NE(run_metadata(cfg, 3)["config_hash"], run_metadata({{"a", 2}}, 3)["config_hash"]);
  EXPECT_EQ(run_metadata(cfg, 3)["seed"], 3);
  EXPECT_TRUE(run_metadata(cfg, 3).contains("git_describe"));
}

TEST(Json, DoublesRoundTrip) {
  Rng rng(6);
  for (int i = 0; i < 1000; ++i) {
    const double v = rng.normal() * std::pow(10.0, static_cast<double>(rng.index(40)) - 20.0);
    const nlohmann::json j = {{"v", v}};
    ASSERT_EQ(bits(nlohmann::json::parse(j.dump())["v"].get<double>()), bits(v));
  }
}
