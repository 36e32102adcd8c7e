#pragma once

#include <array>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nlskit/corpus.hpp"

namespace nlskit {

/// A (speaker, tag) pair tracked by the per-session statistics.
struct StatCategory {
  SpeakerRole speaker;
  VocalTag tag;

  friend bool operator==(const StatCategory&, const StatCategory&) = default;
};

/// Child then adult; intelligible, unintelligible, vocalization within each.
inline constexpr std::array<StatCategory, 6> kStatCategories{{
    {SpeakerRole::Child, VocalTag::Intelligible},
    {SpeakerRole::Child, VocalTag::Unintelligible},
    {SpeakerRole::Child, VocalTag::Vocalization},
    {SpeakerRole::Adult, VocalTag::Intelligible},
    {SpeakerRole::Adult, VocalTag::Unintelligible},
    {SpeakerRole::Adult, VocalTag::Vocalization},
}};

/// e.g. "child_intelligible"
std::string category_name(const StatCategory& category);

struct SessionAggregate {
  std::string session_id;
  StatCategory category;
  std::size_t count = 0;
  std::optional<double> mean_duration_s;  // absent iff count == 0
};

/// Count and mean duration of each of the six categories in one session,
/// over every annotated utterance (no minimum-duration filter).
std::vector<SessionAggregate> aggregate_session(const Corpus& corpus, std::string_view session_id);

struct GroupSummary {
  std::size_t n = 0;
  double mean = 0.0;
  std::optional<double> std;  // sample (n - 1) standard deviation; needs n >= 2
};

GroupSummary summarize(std::span<const double> values);

struct AnovaResult {
  double f_stat = 0.0;
  int df_between = 0;
  int df_within = 0;
  double p_value = 1.0;
};

/// Regularized incomplete beta I_x(a, b) by Lentz's continued fraction.
double regularized_incomplete_beta(double x, double a, double b);

/// Upper tail of the F(d1, d2) distribution at f.
double f_survival(double f, double d1, double d2);

/// One-way ANOVA over k >= 2 groups, each with at least two observations.
AnovaResult one_way_anova(std::span<const std::vector<double>> groups);

/// One-way ANOVA from per-group size, mean and sample standard deviation.
AnovaResult anova_from_summary(std::span<const std::size_t> n, std::span<const double> mean,
                               std::span<const double> std);

/// One row of the statistics table. Duration statistics use only sessions
/// where the category occurs; `duration_anova` is absent when any level has
/// fewer than two such sessions.
struct CategoryStats {
  StatCategory category;
  std::array<GroupSummary, 3> count;
  AnovaResult count_anova;
  std::array<GroupSummary, 3> duration;
  std::optional<AnovaResult> duration_anova;
};

struct BoxPlotRow {
  std::string session_id;
  LanguageLevel level;
  StatCategory category;
  std::size_t count;
  std::optional<double> mean_duration_s;
};

struct StatsReport {
  std::array<CategoryStats, 6> rows;
  std::vector<BoxPlotRow> box_plot;
};

/// Throws DataError unless every language level has at least two sessions.
StatsReport compute_stats(const Corpus& corpus);

void write_stats_table(std::ostream& out, const StatsReport& report);
void write_box_plot(std::ostream& out, const StatsReport& report);

struct StatsFiles {
  std::filesystem::path table;     // statistics.tsv
  std::filesystem::path box_plot;  // boxplot.csv
};

StatsFiles emit_stats_report(const Corpus& corpus, const std::filesystem::path& out_dir);

}  // namespace nlskit
