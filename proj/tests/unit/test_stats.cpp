#include <doctest.h>

#include <random>

#include "nlskit/error.hpp"
#include "nlskit/stats.hpp"
#include "oracles.hpp"

using namespace nlskit;

TEST_CASE("incomplete beta agrees with quadrature") {
  for (double a : {0.5, 1.0, 3.0, 21.0})
    for (double b : {0.5, 1.0, 2.5, 8.0})
      for (double x : {0.01, 0.2, 0.5, 0.77, 0.99}) {
        CAPTURE(a);
        CAPTURE(b);
        CAPTURE(x);
        CHECK(regularized_incomplete_beta(x, a, b) == doctest::Approx(oracle::incomplete_beta(x, a, b)).epsilon(1e-9));
      }
  CHECK(regularized_incomplete_beta(0.0, 2.0, 3.0) == 0.0);
  CHECK(regularized_incomplete_beta(1.0, 2.0, 3.0) == 1.0);
  CHECK_THROWS_AS(regularized_incomplete_beta(0.5, 0.0, 1.0), ArgumentError);
  CHECK_THROWS_AS(regularized_incomplete_beta(1.5, 1.0, 1.0), ArgumentError);
}

TEST_CASE("F survival function") {
  SUBCASE("closed form when d1 = 2") {
    for (double f : {0.1, 0.5, 1.0, 3.0, 10.0, 77.0})
      for (double d2 : {6.0, 42.0}) CHECK(std::fabs(f_survival(f, 2, d2) - oracle::f_tail_d1_2(f, d2)) < 1e-9);
    CHECK(f_survival(3.0, 2, 6) == doctest::Approx(0.125).epsilon(1e-12));
  }
  SUBCASE("general degrees of freedom against quadrature") {
    for (double d1 : {1.0, 3.0, 5.0})
      for (double d2 : {4.0, 17.0, 60.0})
        for (double f : {0.2, 1.0, 2.5, 9.0})
          CHECK(f_survival(f, d1, d2) == doctest::Approx(oracle::f_tail(f, d1, d2)).epsilon(1e-8));
  }
  SUBCASE("boundaries") {
    CHECK(f_survival(0.0, 2, 10) == 1.0);
    CHECK(f_survival(std::numeric_limits<double>::infinity(), 2, 10) == 0.0);
  }
}

TEST_CASE("one-way ANOVA matches the sums-of-squares definition") {
  std::mt19937_64 gen(7);
  for (int trial = 0; trial < 25; ++trial) {
    std::uniform_int_distribution<int> size(2, 12);
    std::normal_distribution<double> noise(0.0, 3.0);
    std::vector<std::vector<double>> groups(3);
    for (std::size_t g = 0; g < groups.size(); ++g) {
      groups[g].resize(static_cast<std::size_t>(size(gen)));
      for (auto& v : groups[g]) v = noise(gen) + static_cast<double>(g) * (trial % 4);
    }
    const auto got = one_way_anova(groups);
    const auto want = oracle::anova(groups);
    CHECK(got.f_stat == doctest::Approx(want.f).epsilon(1e-10));
    CHECK(got.df_between == 2);
    CHECK(got.df_within == static_cast<int>(want.df_within));
    CHECK(got.p_value == doctest::Approx(oracle::f_tail(want.f, want.df_between, want.df_within)).epsilon(1e-8));
  }
}

TEST_CASE("ANOVA from summary statistics equals ANOVA on the raw data") {
  std::mt19937_64 gen(11);
  std::normal_distribution<double> noise(5.0, 2.0);
  std::vector<std::vector<double>> groups{std::vector<double>(9), std::vector<double>(14), std::vector<double>(6)};
  for (auto& g : groups)
    for (auto& v : g) v = noise(gen);
  std::vector<std::size_t> n;
  std::vector<double> mean, sd;
  for (const auto& g : groups) {
    const auto s = summarize(g);
    n.push_back(s.n);
    mean.push_back(s.mean);
    sd.push_back(*s.std);
  }
  const auto raw = one_way_anova(groups);
  const auto summary = anova_from_summary(n, mean, sd);
  CHECK(summary.f_stat == doctest::Approx(raw.f_stat).epsilon(1e-12));
  CHECK(summary.p_value == doctest::Approx(raw.p_value).epsilon(1e-10));
}

TEST_CASE("ANOVA degenerate inputs") {
  SUBCASE("no within-group variance but different means") {
    const std::vector<std::vector<double>> groups{{1, 1}, {2, 2}, {3, 3}};
    const auto r = one_way_anova(groups);
    CHECK(std::isinf(r.f_stat));
    CHECK(r.p_value == 0.0);
  }
  SUBCASE("all values identical") {
    const std::vector<std::vector<double>> groups{{4, 4}, {4, 4}};
    const auto r = one_way_anova(groups);
    CHECK(r.f_stat == 0.0);
    CHECK(r.p_value == 1.0);
  }
  SUBCASE("too few groups or observations") {
    CHECK_THROWS_AS(one_way_anova(std::vector<std::vector<double>>{{1, 2, 3}}), ArgumentError);
    CHECK_THROWS_AS(one_way_anova(std::vector<std::vector<double>>{{1}, {2}}), ArgumentError);
    CHECK_THROWS_AS(one_way_anova(std::vector<std::vector<double>>{{1, 2}, {}}), ArgumentError);
  }
}

TEST_CASE("summary of a single value has no standard deviation") {
  const std::vector<double> one{3.5};
  const auto s = summarize(one);
  CHECK(s.n == 1);
  CHECK(s.mean == 3.5);
  CHECK_FALSE(s.std.has_value());
  const std::vector<double> two{1.0, 3.0};
  CHECK(*summarize(two).std == doctest::Approx(std::sqrt(2.0)));
}

namespace {

Corpus tiny_corpus() {
  std::vector<SessionMeta> sessions;
  std::vector<Utterance> utts;
  int u = 0;
  auto add = [&](const std::string& sid, SpeakerRole who, VocalTag tag, double dur) {
    const double start = u * 10.0;
    utts.push_back({"u" + std::to_string(u++), sid, who, tag, start, start + dur, ""});
  };
  const LanguageLevel levels[] = {LanguageLevel::LL1, LanguageLevel::LL2, LanguageLevel::LL3};
  for (int l = 0; l < 3; ++l)
    for (int s = 0; s < 2; ++s) {
      const std::string sid = "s" + std::to_string(l) + std::to_string(s);
      sessions.push_back({sid, levels[l], Gender::Male, 60, 2});
      for (int k = 0; k <= l + s; ++k) add(sid, SpeakerRole::Child, VocalTag::Intelligible, 0.5 + 0.1 * k);
      add(sid, SpeakerRole::Adult, VocalTag::Vocalization, 1.0);
      add(sid, SpeakerRole::ThirdParty, VocalTag::Intelligible, 2.0);
    }
  return Corpus(sessions, utts);
}

}  // namespace

TEST_CASE("session aggregation and stats report") {
  const auto corpus = tiny_corpus();
  const auto agg = aggregate_session(corpus, "s21");
  REQUIRE(agg.size() == 6);
  CHECK(agg[0].category == kStatCategories[0]);
  CHECK(agg[0].count == 4);
  CHECK(*agg[0].mean_duration_s == doctest::Approx((0.5 + 0.6 + 0.7 + 0.8) / 4));
  CHECK(agg[1].count == 0);
  CHECK_FALSE(agg[1].mean_duration_s.has_value());

  const auto report = compute_stats(corpus);
  const auto& ci = report.rows[0];
  CHECK(ci.count[0].mean == doctest::Approx(1.5));
  CHECK(ci.count[2].mean == doctest::Approx(3.5));
  const auto want = oracle::anova({{1, 2}, {2, 3}, {3, 4}});
  CHECK(ci.count_anova.f_stat == doctest::Approx(want.f));
  CHECK(ci.duration_anova.has_value());
  CHECK_FALSE(report.rows[1].duration_anova.has_value());
  CHECK(report.box_plot.size() == 6 * 6);
}

TEST_CASE("stats table and box plot text") {
  const auto report = compute_stats(tiny_corpus());
  std::ostringstream table, box;
  write_stats_table(table, report);
  write_box_plot(box, report);
  const auto t = table.str();
  CHECK(t.rfind("category\tll1_count_mean", 0) == 0);
  CHECK(t.find("child_unintelligible") != std::string::npos);
  CHECK(t.find("\tNA") != std::string::npos);
  CHECK(box.str().rfind("session_id,level,category,count,mean_duration_s\n", 0) == 0);
}

TEST_CASE("stats need two sessions per level") {
  std::vector<SessionMeta> sessions{{"a", LanguageLevel::LL1, Gender::Male, 50, 1},
                                    {"b", LanguageLevel::LL2, Gender::Male, 50, 1},
                                    {"c", LanguageLevel::LL3, Gender::Male, 50, 1}};
  CHECK_THROWS_AS(compute_stats(Corpus(sessions, {})), DataError);
}

TEST_CASE("emit_stats_report writes both files") {
  oracle::TempDir dir("stats");
  const auto files = emit_stats_report(tiny_corpus(), dir.path() / "out");
  CHECK(std::filesystem::exists(files.table));
  CHECK(std::filesystem::exists(files.box_plot));
  CHECK(files.table.filename() == "statistics.tsv");
  CHECK(files.box_plot.filename() == "boxplot.csv");
}
