#include "nlskit/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "nlskit/error.hpp"
#include "text_io.hpp"

namespace nlskit {

std::string category_name(const StatCategory& category) {
  return std::string(to_token(category.speaker)) + "_" + std::string(to_token(category.tag));
}

std::vector<SessionAggregate> aggregate_session(const Corpus& corpus, std::string_view session_id) {
  const auto& indices = corpus.utterances_of(session_id);
  std::vector<SessionAggregate> out;
  out.reserve(kStatCategories.size());
  for (const auto& category : kStatCategories) {
    std::size_t count = 0;
    double total = 0.0;
    for (auto i : indices) {
      const auto& u = corpus.utterances()[i];
      if (u.speaker == category.speaker && u.tag == category.tag) {
        ++count;
        total += u.duration_s();
      }
    }
    SessionAggregate agg{std::string(session_id), category, count, std::nullopt};
    if (count > 0) agg.mean_duration_s = total / static_cast<double>(count);
    out.push_back(std::move(agg));
  }
  return out;
}

GroupSummary summarize(std::span<const double> values) {
  if (values.empty()) throw ArgumentError("summarize: empty group");
  GroupSummary s;
  s.n = values.size();
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(s.n);
  if (s.n >= 2) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(s.n - 1));
  }
  return s;
}

// ---------------------------------------------------------------------------
// F distribution

namespace {

constexpr int kMaxContinuedFractionTerms = 200;
constexpr double kContinuedFractionTolerance = 1e-12;
constexpr double kTiny = 1e-300;

// Continued fraction for I_x(a, b), modified Lentz evaluation.
double beta_continued_fraction(double x, double a, double b) {
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxContinuedFractionTerms; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::fabs(delta - 1.0) < kContinuedFractionTolerance) break;
  }
  return h;
}

AnovaResult finish_anova(double ssb, double ssw, int df_between, int df_within) {
  AnovaResult r;
  r.df_between = df_between;
  r.df_within = df_within;
  const double msb = ssb / df_between;
  const double msw = ssw / df_within;
  if (msw <= 0.0) {
    if (msb > 0.0) {
      r.f_stat = std::numeric_limits<double>::infinity();
      r.p_value = 0.0;
    } else {
      r.f_stat = 0.0;
      r.p_value = 1.0;
    }
    return r;
  }
  r.f_stat = msb / msw;
  r.p_value = f_survival(r.f_stat, df_between, df_within);
  return r;
}

}  // namespace

double regularized_incomplete_beta(double x, double a, double b) {
  if (!(a > 0.0) || !(b > 0.0)) throw ArgumentError("incomplete beta: shape parameters must be positive");
  if (!(x >= 0.0 && x <= 1.0)) throw ArgumentError("incomplete beta: x outside [0, 1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double log_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  // The fraction converges fastest below the mean; mirror otherwise.
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(x, a, b) / a;
  return 1.0 - front * beta_continued_fraction(1.0 - x, b, a) / b;
}

double f_survival(double f, double d1, double d2) {
  if (!(d1 > 0.0) || !(d2 > 0.0)) throw ArgumentError("f_survival: degrees of freedom must be positive");
  if (std::isnan(f)) throw ArgumentError("f_survival: NaN statistic");
  if (f <= 0.0) return 1.0;
  if (std::isinf(f)) return 0.0;
  // S(f) = I_{d2 / (d2 + d1 f)}(d2/2, d1/2); avoids 1 - CDF cancellation.
  const double y = d2 / (d2 + d1 * f);
  return std::clamp(regularized_incomplete_beta(y, d2 / 2.0, d1 / 2.0), 0.0, 1.0);
}

AnovaResult one_way_anova(std::span<const std::vector<double>> groups) {
  if (groups.size() < 2) throw ArgumentError("anova: need at least two groups");
  std::size_t total_n = 0;
  double grand_sum = 0.0;
  std::vector<double> means;
  for (const auto& g : groups) {
    if (g.size() < 2) throw ArgumentError("anova: every group needs at least two observations");
    double sum = 0.0;
    for (double v : g) {
      if (!std::isfinite(v)) throw ArgumentError("anova: non-finite observation");
      sum += v;
    }
    means.push_back(sum / static_cast<double>(g.size()));
    total_n += g.size();
    grand_sum += sum;
  }
  const double grand_mean = grand_sum / static_cast<double>(total_n);
  double ssb = 0.0, ssw = 0.0;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    ssb += static_cast<double>(groups[i].size()) * (means[i] - grand_mean) * (means[i] - grand_mean);
    for (double v : groups[i]) ssw += (v - means[i]) * (v - means[i]);
  }
  const int k = static_cast<int>(groups.size());
  return finish_anova(ssb, ssw, k - 1, static_cast<int>(total_n) - k);
}

AnovaResult anova_from_summary(std::span<const std::size_t> n, std::span<const double> mean,
                               std::span<const double> std) {
  if (n.size() != mean.size() || n.size() != std.size()) throw ArgumentError("anova: mismatched summary lengths");
  if (n.size() < 2) throw ArgumentError("anova: need at least two groups");
  std::size_t total_n = 0;
  double weighted = 0.0;
  for (std::size_t i = 0; i < n.size(); ++i) {
    if (n[i] < 2) throw ArgumentError("anova: every group needs at least two observations");
    if (!(std[i] >= 0.0) || !std::isfinite(mean[i])) throw ArgumentError("anova: invalid summary values");
    total_n += n[i];
    weighted += static_cast<double>(n[i]) * mean[i];
  }
  const double grand_mean = weighted / static_cast<double>(total_n);
  double ssb = 0.0, ssw = 0.0;
  for (std::size_t i = 0; i < n.size(); ++i) {
    const double ni = static_cast<double>(n[i]);
    ssb += ni * (mean[i] - grand_mean) * (mean[i] - grand_mean);
    ssw += (ni - 1.0) * std[i] * std[i];
  }
  const int k = static_cast<int>(n.size());
  return finish_anova(ssb, ssw, k - 1, static_cast<int>(total_n) - k);
}

// ---------------------------------------------------------------------------
// Report

StatsReport compute_stats(const Corpus& corpus) {
  std::array<std::size_t, 3> per_level{};
  for (const auto& s : corpus.sessions()) ++per_level[level_index(s.level)];
  for (std::size_t i = 0; i < 3; ++i)
    if (per_level[i] < 2)
      throw DataError("statistics need at least 2 sessions per level; LL" + std::to_string(i + 1) + " has " +
                          std::to_string(per_level[i]));

  // [category][level] -> observations
  std::array<std::array<std::vector<double>, 3>, 6> counts, durations;
  StatsReport report;
  for (const auto& s : corpus.sessions()) {
    const auto li = level_index(s.level);
    const auto aggregates = aggregate_session(corpus, s.session_id);
    for (std::size_t c = 0; c < aggregates.size(); ++c) {
      const auto& a = aggregates[c];
      counts[c][li].push_back(static_cast<double>(a.count));
      if (a.mean_duration_s) durations[c][li].push_back(*a.mean_duration_s);
      report.box_plot.push_back({s.session_id, s.level, a.category, a.count, a.mean_duration_s});
    }
  }

  for (std::size_t c = 0; c < kStatCategories.size(); ++c) {
    auto& row = report.rows[c];
    row.category = kStatCategories[c];
    for (std::size_t li = 0; li < 3; ++li) {
      row.count[li] = summarize(counts[c][li]);
      if (!durations[c][li].empty()) row.duration[li] = summarize(durations[c][li]);
    }
    std::vector<std::vector<double>> count_groups(counts[c].begin(), counts[c].end());
    row.count_anova = one_way_anova(count_groups);

    bool duration_ok = true;
    for (std::size_t li = 0; li < 3; ++li) duration_ok = duration_ok && durations[c][li].size() >= 2;
    if (duration_ok) {
      std::vector<std::vector<double>> duration_groups(durations[c].begin(), durations[c].end());
      row.duration_anova = one_way_anova(duration_groups);
    }
  }
  return report;
}

namespace {

std::string cell(const std::optional<double>& v) { return v ? detail::format_sig6(*v) : "NA"; }

}  // namespace

void write_stats_table(std::ostream& out, const StatsReport& report) {
  out << "category";
  for (int l = 1; l <= 3; ++l) out << "\tll" << l << "_count_mean\tll" << l << "_count_std";
  out << "\tf_count\tp_count";
  for (int l = 1; l <= 3; ++l) out << "\tll" << l << "_dur_mean\tll" << l << "_dur_std";
  out << "\tf_dur\tp_dur\n";

  for (const auto& row : report.rows) {
    out << category_name(row.category);
    for (const auto& g : row.count) out << '\t' << detail::format_sig6(g.mean) << '\t' << cell(g.std);
    out << '\t' << detail::format_sig6(row.count_anova.f_stat) << '\t' << detail::format_sig6(row.count_anova.p_value);
    for (const auto& g : row.duration) {
      out << '\t' << (g.n > 0 ? detail::format_sig6(g.mean) : "NA") << '\t' << (g.n > 0 ? cell(g.std) : "NA");
    }
    if (row.duration_anova) {
      out << '\t' << detail::format_sig6(row.duration_anova->f_stat) << '\t'
          << detail::format_sig6(row.duration_anova->p_value);
    } else {
      out << "\tNA\tNA";
    }
    out << '\n';
  }
}

void write_box_plot(std::ostream& out, const StatsReport& report) {
  out << "session_id,level,category,count,mean_duration_s\n";
  for (const auto& r : report.box_plot) {
    out << r.session_id << ',' << to_token(r.level) << ',' << category_name(r.category) << ',' << r.count << ','
        << cell(r.mean_duration_s) << '\n';
  }
}

StatsFiles emit_stats_report(const Corpus& corpus, const std::filesystem::path& out_dir) {
  const auto report = compute_stats(corpus);
  std::filesystem::create_directories(out_dir);
  StatsFiles files{out_dir / "statistics.tsv", out_dir / "boxplot.csv"};
  {
    auto out = detail::open_output(files.table);
    write_stats_table(out, report);
    if (!out) throw IoError("write failed: " + files.table.string());
  }
  auto out = detail::open_output(files.box_plot);
  write_box_plot(out, report);
  if (!out) throw IoError("write failed: " + files.box_plot.string());
  return files;
}

}  // namespace nlskit
