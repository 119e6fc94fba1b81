#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "rimesa/harness.hpp"

using namespace rimesa;

namespace {

Dataset<2> small_dataset(std::uint64_t seed, double outliers = 0.15, int length = 40) {
  ScenarioConfig c = scenario_preset("cpgo-planar");
  c.robots = 3;
  c.length = length;
  c.seed = seed;
  c.outlier_fraction = outliers;
  return generate<2>(c);
}

RunConfig config(const std::string& methods, std::uint64_t seed = 0) {
  RunConfig rc;
  rc.methods = parse_methods(methods);
  rc.network.seed = seed;
  return rc;
}

std::string csv(const std::vector<MethodRun<2>>& runs) {
  std::ostringstream os;
  write_report_header(os);
  for (const auto& r : runs) {
    write_report_row(os, r.method, "t", 0, r.ok ? "ok" : "failed", r.report);
    write_series_rows(os, r.method, "t", 0, r.report);
    os << r.event_log;
  }
  return os.str();
}

const MethodRun<2>& find(const std::vector<MethodRun<2>>& runs, const std::string& name) {
  for (const auto& r : runs)
    if (r.method == name) return r;
  throw std::logic_error("missing " + name);
}

}  // namespace

TEST(Harness, ParseMethods) {
  const auto m = parse_methods("rimesa,kimesa,independent");
  ASSERT_EQ(m.size(), 3u);
  EXPECT_EQ(m[1].gm_shape, 6.0);
  EXPECT_EQ(m[2].gm_shape, 3.0);
  EXPECT_THROW(parse_methods("rimesa,rimesa"), std::invalid_argument);
  EXPECT_THROW(parse_methods("rimesa,magic"), std::invalid_argument);
  EXPECT_THROW(parse_methods(""), std::invalid_argument);
  for (auto s : {"rimesa", "kimesa", "imesa", "mesa_plus", "independent", "centralized_oracle", "centralized_gnc"})
    EXPECT_EQ(to_string(parse_method_name(s)), std::string(s));
}

TEST(Harness, DefaultsMatchPinnedHyperparameters) {
  const auto s = MethodSpec::defaults(Method::Rimesa);
  EXPECT_DOUBLE_EQ(s.decay, 0.9);
  EXPECT_DOUBLE_EQ(s.beta_uninit, 1e-4);
  EXPECT_DOUBLE_EQ(s.beta_init, 1.0);
  const RunConfig rc;
  EXPECT_DOUBLE_EQ(rc.network.two_generals_rate, 0.05);
}

TEST(Harness, SameSeedGivesByteIdenticalOutput) {
  const auto ds = small_dataset(1);
  const auto rc = config("rimesa,independent,centralized_gnc", 4);
  EXPECT_EQ(csv(run(ds, rc)), csv(run(ds, rc)));
}

TEST(Harness, MethodsDoNotInfluenceEachOther) {
  const auto ds = small_dataset(2);
  const auto alone = run(ds, config("rimesa", 3));
  const auto together = run(ds, config("kimesa,rimesa,centralized_oracle", 3));
  const auto& a = find(alone, "rimesa");
  const auto& b = find(together, "rimesa");
  ASSERT_TRUE(a.ok && b.ok);
  EXPECT_EQ(a.report.iate, b.report.iate);
  EXPECT_EQ(a.event_log, b.event_log);
}

TEST(Harness, IndependentIgnoresTheNetwork) {
  const auto ds = small_dataset(5);
  auto quiet = config("independent", 1);
  quiet.network.range = 0.0;
  auto busy = config("independent", 99);
  busy.network = quality_preset('e', busy.network);
  const auto a = run(ds, quiet), b = run(ds, busy);
  ASSERT_TRUE(a[0].ok && b[0].ok);
  EXPECT_EQ(a[0].report.iate, b[0].report.iate);
  EXPECT_EQ(a[0].report.final_f1, b[0].report.final_f1);
  EXPECT_EQ(a[0].incorporations, 0u);
}

TEST(Harness, FailuresAreCapturedPerMethod) {
  auto ds = small_dataset(6);
  for (auto& m : ds.measurements) {
    if (m.type == MeasurementType::Odometry && m.a.owner == 1 && m.a.index == 10) {
      m.sigmas[0] = -1.0;
    }
  }
  std::vector<MethodRun<2>> runs;
  ASSERT_NO_THROW(runs = run(ds, config("rimesa,centralized_oracle")));
  ASSERT_EQ(runs.size(), 2u);
  for (const auto& r : runs) {
    EXPECT_FALSE(r.ok) << r.method;
    EXPECT_FALSE(r.error.empty());
  }
  EXPECT_NE(csv(runs).find("failed"), std::string::npos);
}

TEST(Harness, OutlierFreeRimesaTracksOracle) {
  for (std::uint64_t seed : {0u, 1u}) {
    const auto ds = small_dataset(seed, 0.0, 60);
    const auto runs = run(ds, config("rimesa,independent,centralized_oracle", seed));
    const auto& ri = find(runs, "rimesa");
    const auto& ind = find(runs, "independent");
    const auto& orc = find(runs, "centralized_oracle");
    ASSERT_TRUE(ri.ok && ind.ok && orc.ok);
    EXPECT_LE(ri.report.final_ate, 2.0 * orc.report.final_ate + 1e-3) << "seed " << seed;
    ASSERT_GT(ri.incorporations, 0u);
    EXPECT_LE(ri.report.final_ate, ind.report.final_ate) << "seed " << seed;
  }
}

TEST(Harness, ThreadedMatchesSequential) {
  const auto ds = small_dataset(7);
  auto rc = config("rimesa", 2);
  const auto seq = run(ds, rc);
  rc.threaded = true;
  const auto par = run(ds, rc);
  ASSERT_TRUE(seq[0].ok && par[0].ok);
  EXPECT_EQ(seq[0].report.iate, par[0].report.iate);
  EXPECT_EQ(seq[0].report.final_f1, par[0].report.final_f1);
}

TEST(Harness, MesaPlusAndGncProduceReports) {
  const auto ds = small_dataset(8, 0.0, 30);
  const auto runs = run(ds, config("mesa_plus,centralized_gnc"));
  for (const auto& r : runs) {
    ASSERT_TRUE(r.ok) << r.method << ": " << r.error;
    EXPECT_TRUE(std::isfinite(r.report.final_ate));
    EXPECT_LT(r.report.final_ate, 1.0) << r.method;
  }
}

TEST(Harness, HistoryRoundTrip) {
  const auto ds = small_dataset(9, 0.15, 25);
  const auto runs = run(ds, config("rimesa"));
  ASSERT_TRUE(runs[0].ok);
  std::stringstream io;
  save_history(runs[0].history, io);
  const auto back = load_history<2>(io);
  std::ostringstream again;
  save_history(back, again);
  EXPECT_EQ(io.str(), again.str());
  const auto r = evaluate(back, ds.ground_truth(), measurement_labels(ds));
  EXPECT_DOUBLE_EQ(r.iate, runs[0].report.iate);
  EXPECT_DOUBLE_EQ(r.if1, runs[0].report.if1);

  std::istringstream bad("HISTORY 1 3\n");
  EXPECT_THROW(load_history<2>(bad), std::runtime_error);
  std::istringstream orphan("HISTORY 1 2\nCLS 1 1\n");
  EXPECT_THROW(load_history<2>(orphan), std::runtime_error);
}

TEST(Harness, InvalidRunConfigIsRejected) {
  const auto ds = small_dataset(1, 0.1, 10);
  auto rc = config("rimesa");
  rc.record_every = 0;
  EXPECT_THROW(run(ds, rc), std::invalid_argument);
  rc = config("kimesa");
  rc.methods[0].gm_shape = 0.0;
  EXPECT_THROW(run(ds, rc), std::invalid_argument);
}
