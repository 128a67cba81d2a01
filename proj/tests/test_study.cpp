#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "homlab/study/config.hpp"
#include "homlab/study/registry.hpp"
#include "homlab/study/report.hpp"
#include "homlab/study/runner.hpp"

using namespace homlab;
using namespace homlab::study;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int count(const std::string& s, const std::string& what) {
  int n = 0;
  for (auto pos = s.find(what); pos != std::string::npos; pos = s.find(what, pos + 1)) ++n;
  return n;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("homlab_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string column_line(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("#", 0) != 0) return line;
  }
  return {};
}

}  // namespace

// ---------------------------------------------------------------------------

TEST(Config, ParsesTypedValues) {
  const auto c = Config::parse(R"(# comment
a.b = 1.5
flag = true
name = "two words"   # trailing comment
word = lanczos
list = [1, 2.5, -3e-2]
)");
  EXPECT_DOUBLE_EQ(c.number("a.b"), 1.5);
  EXPECT_TRUE(c.boolean("flag", false));
  EXPECT_EQ(c.string("name"), "two words");
  EXPECT_EQ(c.string("word"), "lanczos");
  EXPECT_EQ(c.numbers("list"), (std::vector<double>{1, 2.5, -0.03}));
  EXPECT_EQ(c.integer("missing", 7), 7);
  EXPECT_NO_THROW(c.check_all_used());
}

TEST(Config, ErrorsNameKeyAndLine) {
  try {
    Config::parse("a = 1\nb = 2\na = 3\n", "x.cfg");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key, "a");
    EXPECT_EQ(e.line, 3);
    EXPECT_NE(std::string(e.what()).find("x.cfg:3"), std::string::npos);
  }
  EXPECT_THROW(Config::parse("Bad.Key = 1\n"), ConfigError);
  EXPECT_THROW(Config::parse("no equals sign\n"), ConfigError);
  const auto c = Config::parse("a = word\n");
  try {
    c.number("a");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key, "a");
    EXPECT_EQ(e.line, 1);
  }
  EXPECT_THROW(c.number("absent"), ConfigError);
}

TEST(Config, UnknownKeyIsReported) {
  const auto c = Config::parse("used = 1\nunused.key = 2\n");
  c.number("used");
  try {
    c.check_all_used();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key, "unused.key");
    EXPECT_EQ(e.line, 2);
  }
}

TEST(Config, EchoIsCanonicalAndReparses) {
  auto c = Config::parse("b = 0.1\na = [1, 2]\ns = hello\n");
  c.set("z.extra", 3.0);
  const auto lines = c.echo();
  ASSERT_EQ(lines.size(), 4u);
  EXPECT_EQ(lines[0].rfind("b = ", 0), 0u);
  std::string text;
  for (const auto& l : lines) text += l + "\n";
  const auto back = Config::parse(text);
  EXPECT_EQ(back.number("b"), 0.1);
  EXPECT_EQ(back.numbers("a"), (std::vector<double>{1, 2}));
  EXPECT_EQ(back.string("s"), "hello");
  EXPECT_EQ(back.number("z.extra"), 3.0);
}

// ---------------------------------------------------------------------------

TEST(FitRate, ExactPowerLaws) {
  std::vector<double> x{1, 0.5, 0.25, 0.125}, y2, y3;
  for (double v : x) {
    y2.push_back(v * v);
    y3.push_back(3 * std::sqrt(v));
  }
  const auto a = fit_rate(x, y2);
  EXPECT_NEAR(a.slope, 2.0, 1e-14);
  EXPECT_NEAR(a.r2, 1.0, 1e-14);
  const auto b = fit_rate(x, y3);
  EXPECT_NEAR(b.slope, 0.5, 1e-14);
  EXPECT_NEAR(b.intercept, std::log(3.0), 1e-14);
}

TEST(FitRate, SeededNoisyPowerLaw) {
  std::mt19937_64 rng(12345);
  std::normal_distribution<double> noise(0.0, 0.05);
  std::vector<double> x, y;
  for (int k = 0; k < 12; ++k) {
    x.push_back(std::pow(2.0, -k));
    y.push_back(0.7 * std::pow(x.back(), 1.3) * std::exp(noise(rng)));
  }
  EXPECT_NEAR(fit_rate(x, y).slope, 1.3, 0.05);
}

TEST(FitRate, ExcludesNonpositiveAndSkipsShortSeries) {
  const auto f = fit_rate({1, 0.5, 0.25, 0.125}, {1, 0, 0.25, -1}, "k");
  EXPECT_TRUE(f.skipped);
  EXPECT_EQ(f.used, 2);
  EXPECT_EQ(f.warnings.size(), 2u);
  const auto z = fit_rate({1, 0.5, 0.25}, {0, 0, 0});
  EXPECT_TRUE(z.skipped);
  EXPECT_TRUE(std::isnan(z.slope));
}

TEST(Csv, RoundTripReproducesFitsExactly) {
  Table t;
  t.columns = {"eps", "value", "label", "count"};
  t.x_column = "eps";
  t.series = {"value"};
  std::mt19937_64 rng(3);
  for (int k = 0; k < 6; ++k) {
    const double e = 0.1 * std::pow(0.5, k);
    t.add_row({e, std::sqrt(e) * (1 + 1e-3 * k) / 3.0, std::string("r") + std::to_string(k), std::int64_t(k)});
  }
  const fs::path dir = scratch("roundtrip");
  fs::create_directories(dir);
  const std::string path = (dir / "t.csv").string();
  write_csv_file(path, t, {"study.name = t"});
  std::vector<std::string> header;
  const Table back = read_csv_file(path, &header);
  EXPECT_EQ(header.front(), "study.name = t");
  EXPECT_EQ(back.columns, t.columns);
  EXPECT_EQ(back.column("eps"), t.column("eps"));
  EXPECT_EQ(back.column("value"), t.column("value"));
  const auto f1 = fit_rate(t.column("eps"), t.column("value"));
  const auto f2 = fit_rate(back.column("eps"), back.column("value"));
  EXPECT_EQ(f1.slope, f2.slope);
  EXPECT_EQ(f1.intercept, f2.intercept);
}

TEST(Csv, SeventeenSignificantDigits) {
  Table t;
  t.columns = {"x"};
  t.add_row({1.0 / 3.0});
  std::ostringstream out;
  write_csv(out, t, {});
  EXPECT_EQ(out.str(), "x\n3.3333333333333331e-01\n");
}

TEST(Plot, EmptySingleAndTwoSeries) {
  Table t;
  t.columns = {"eps"};
  t.x_column = "eps";
  const std::string empty = render_svg(t, "empty");
  EXPECT_NE(empty.find("<svg"), std::string::npos);
  EXPECT_EQ(count(empty, "<polyline"), 0);

  t.columns = {"eps", "a", "b"};
  for (int k = 0; k < 4; ++k) {
    const double e = std::pow(0.5, k);
    t.add_row({e, e, std::sqrt(e)});
  }
  t.series = {"a"};
  const std::string one = render_svg(t, "one");
  EXPECT_EQ(count(one, "<polyline"), 1);
  t.series = {"a", "b"};
  const std::string two = render_svg(t, "two");
  EXPECT_EQ(count(two, "<polyline"), 2);
  EXPECT_GE(count(two, "stroke-dasharray"), 2);  // slope guides
  EXPECT_NE(two.find("slope 1/2"), std::string::npos);
}

// ---------------------------------------------------------------------------

TEST(Registry, EveryFamilyBuildsWithDefaults) {
  for (const auto& info : family_registry()) {
    auto cfg = Config::parse("family.name = " + info.name + "\n");
    const auto fam = build_family(cfg, 1);
    EXPECT_NO_THROW(fam.validate(0.1)) << info.name;
  }
  EXPECT_NE(describe_families().find("oscillating_sine"), std::string::npos);
}

TEST(Runner, IdenticalFamilyGivesZerosAndSkippedFits) {
  const auto rep = run_study("resolvent", Config::load(HOMLAB_CONFIG_DIR "/identical_resolvent.cfg"));
  ASSERT_EQ(rep.table.rows.size(), 4u);
  for (double k : rep.table.column("kappa")) EXPECT_EQ(k, 0.0);
  for (double r : rep.table.column("rho1")) EXPECT_EQ(r, 0.0);
  // every fit on an all-zero error column is skipped
  for (const auto& f : rep.fits) {
    const auto col = rep.table.column(f.column);
    if (std::all_of(col.begin(), col.end(), [](double v) { return v == 0.0; })) {
      EXPECT_TRUE(f.skipped) << f.column;
    }
  }
  const auto it = std::find_if(rep.fits.begin(), rep.fits.end(), [](const RateFit& f) { return f.column == "kappa"; });
  ASSERT_NE(it, rep.fits.end());
  EXPECT_TRUE(it->skipped);
}

TEST(Runner, MalformedKeyIsNamed) {
  auto cfg = Config::parse("family.name = oscillating_sine\nfamily.amplitud = 2\nschedule.start = 0.1\n");
  try {
    run_study("criterion", cfg);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key, "family.amplitud");
    EXPECT_NE(std::string(e.what()).find("family.amplitud"), std::string::npos);
  }
}

TEST(Runner, RejectsBadSchedules) {
  EXPECT_THROW(run_study("criterion", Config::parse("family.name = identical\nschedule.values = [0.1, 0.2, 0.05]\n")),
               ConfigError);
  EXPECT_THROW(run_study("criterion", Config::parse("family.name = identical\nschedule.values = [0.1, 0.05]\n")),
               ConfigError);
  EXPECT_THROW(run_study("nonsense", Config::parse("family.name = identical\n")), ConfigError);
}

TEST(Runner, SineResolventRateFromCoarseSchedule) {
  auto cfg = Config::parse(
      "family.name = oscillating_sine\noperator.bc = dirichlet\nschedule.start = 0.2\nschedule.count = 6\n");
  const auto rep = run_study("resolvent", cfg);
  ASSERT_EQ(rep.table.rows.size(), 6u);
  const auto it = std::find_if(rep.fits.begin(), rep.fits.end(), [](const RateFit& f) { return f.column == "kappa"; });
  ASSERT_NE(it, rep.fits.end());
  EXPECT_GE(it->slope, 0.5);
}

// Random family with a short coarse schedule.
const char* kSmallRandom = R"(study.name = small_random
family.name = random
study.seed = 5
schedule.values = [0.05, 0.03, 0.02]
)";

TEST(Runner, DeterministicCsvBytes) {
  const fs::path a = scratch("det_a"), b = scratch("det_b");
  RunOptions oa, ob;
  oa.out_dir = a.string();
  ob.out_dir = b.string();
  const auto ra = run_study("criterion", Config::parse(kSmallRandom), oa);
  const auto rb = run_study("criterion", Config::parse(kSmallRandom), ob);
  const std::string ca = slurp(ra.csv_path), cb = slurp(rb.csv_path);
  EXPECT_FALSE(ca.empty());
  EXPECT_EQ(ca, cb);
  EXPECT_EQ(slurp(ra.plot_path), slurp(rb.plot_path));
}

TEST(Runner, SeedOverrideIsEchoed) {
  RunOptions o;
  o.out_dir = scratch("seed").string();
  o.seed = 99;
  const auto r = run_study("criterion", Config::parse(kSmallRandom), o);
  EXPECT_NE(slurp(r.csv_path).find("# config: study.seed = 99"), std::string::npos);
  // a different seed gives a different realization
  RunOptions o5;
  o5.out_dir = scratch("seed5").string();
  const auto r5 = run_study("criterion", Config::parse(kSmallRandom), o5);
  EXPECT_NE(r.table.column("rho1"), r5.table.column("rho1"));
}

TEST(Runner, GoldenColumnHeaders) {
  struct Golden {
    std::string sub, cfg, columns;
  };
  const std::vector<Golden> golden{
      {"criterion", "sine_criterion",
       "eps,eta,rho1,rho3,bound_m1m1,bound_m10,rho1_error,rho3_error,cells,refine,predicted,argmax_rho1"},
      {"resolvent", "identical_resolvent",
       "eps,elements,kappa,L_norm,contraction,eta,rho1,rho3,bound_m1m1,predicted,restarts_agree"},
      {"norm", "identical_resolvent", "eps,elements,L_norm,dev_m1m1,dev_m10,predicted,restarts_agree"},
      {"homogenize", "two_scale_homogenize", "eps,mu,rho2,limit_deviation,bound"},
  };
  for (const auto& g : golden) {
    RunOptions o;
    o.out_dir = scratch("golden_" + g.sub).string();
    const auto r = run_study(g.sub, Config::load(std::string(HOMLAB_CONFIG_DIR) + "/" + g.cfg + ".cfg"), o);
    const std::string csv = slurp(r.csv_path);
    EXPECT_EQ(column_line(csv), g.columns) << g.sub;
    EXPECT_EQ(csv.rfind("# ", 0), 0u);
  }
}

TEST(Runner, ReportRefitsExistingCsv) {
  RunOptions o;
  o.out_dir = scratch("report").string();
  const auto crit = run_study("criterion", Config::load(HOMLAB_CONFIG_DIR "/sine_criterion.cfg"), o);
  auto cfg = Config::parse("report.input = \"" + crit.csv_path + "\"\nreport.x = eps\nreport.series = \"rho1,rho3\"\n");
  const auto rep = run_study("report", cfg, o);
  ASSERT_EQ(rep.fits.size(), 2u);
  for (const auto& f : crit.fits) {
    if (f.column != "rho1") continue;
    EXPECT_EQ(rep.fits[0].slope, f.slope);
  }
}

// Every registered family respects its declared sup bound along a schedule.
TEST(Registry, FamiliesRespectSupBound) {
  for (const auto& info : family_registry()) {
    const auto fam = build_family(Config::parse("family.name = " + info.name + "\n"), 3);
    for (double eps : {0.2, 0.1, 0.05, 0.02, 0.01}) {
      const auto t = fam.at_scalar(eps);
      for (const auto* f : {&t.V, &fam.limit.V}) {
        EXPECT_LE(sampled_sup(*f, fam.domain, 400, 9), f->sup_bound() * (1 + 1e-12)) << info.name << " eps " << eps;
      }
    }
  }
}

// Forward direction of the criterion: the measured V -> V* norm of the
// deviation stays below 10 (rho1 + eta) on the shipped 1D criterion configs.
TEST(CriterionNormConsistency, ShippedOneDimensionalConfigs) {
  int checked = 0;
  for (const auto& e : fs::directory_iterator(HOMLAB_CONFIG_DIR)) {
    const std::string file = e.path().filename().string();
    if (file.find("_criterion.cfg") == std::string::npos) continue;
    const Config cfg = Config::load(e.path().string());
    if (!find_family(cfg.string("family.name")).one_dimensional) continue;
    const auto seed = static_cast<std::uint64_t>(cfg.number("study.seed", 1.0));
    const auto rep = run_study("criterion", cfg);
    const auto fam = build_family(cfg, seed);
    const StudySetup setup = read_setup(cfg, fam, seed);
    const auto eps = rep.table.column("eps"), eta = rep.table.column("eta"), r1 = rep.table.column("rho1");
    for (std::size_t k = 0; k < eps.size(); ++k) {
      const auto d = discretize(fam, eps[k], setup);
      const double norm = norm_v_to_vstar(CSparse(d.Xeps - d.X0), *d.op, setup.iteration).value;
      EXPECT_LE(norm, 10 * (r1[k] + eta[k])) << file << " eps " << eps[k];
    }
    ++checked;
  }
  EXPECT_GE(checked, 10);
}

// The registry's closed-form expectation agrees with torus quadrature.
TEST(Registry, RandomFamilyExpectationIsZero) {
  const auto fam = build_family(Config::parse("family.name = random\nfamily.amplitude = 2\n"), 4);
  EXPECT_TRUE(fam.limit.V.is_zero());
  Eigen::MatrixXd flow(2, 1);
  flow << 1.0, std::sqrt(2.0);
  const ErgodicSystem sys(flow, [](const Point&, const Eigen::VectorXd& w) {
    return CoeffMatrix::Constant(1, 1, 2.0 * (std::cos(2 * M_PI * w(0)) + std::sin(2 * M_PI * w(1))));
  }, 1, 4.0, 4);
  for (double x : {0.0, 0.37, 1.0}) EXPECT_LT(std::abs(sys.expectation()(point1(x))(0, 0)), 1e-14);
}
