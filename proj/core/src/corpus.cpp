#include "nlskit/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <unordered_set>

#include "nlskit/error.hpp"
#include "nlskit/random.hpp"
#include "text_io.hpp"

namespace nlskit {

namespace {

constexpr std::string_view kManifestHeader =
    "utterance_id\tsession_id\tspeaker\ttag\tstart_s\tend_s\tembedding_path";
constexpr std::string_view kMetaHeader = "session_id\tlevel\tgender\tage_months\tactivities";

// Slack for duration comparisons on decimal-derived times (0.3 - 0.2 < 0.1 in binary).
constexpr double kDurationSlack = 1e-9;

void check_header(detail::LineReader& reader, const std::string& source, std::string_view expected) {
  std::string line;
  if (!reader.next(line)) throw ParseError(source, 1, 1, "missing header");
  if (!line.empty() && line.starts_with("\xEF\xBB\xBF")) line.erase(0, 3);
  if (line != expected) throw ParseError(source, 1, 1, "expected header '" + std::string(expected) + "'");
}

std::vector<std::string_view> split_row(const std::string& line, std::size_t expected_columns,
                                        const std::string& source, std::size_t line_number) {
  auto fields = detail::split(line, '\t');
  if (fields.size() != expected_columns) {
    throw ParseError(source, line_number, std::min(fields.size(), expected_columns) + 1,
                     "expected " + std::to_string(expected_columns) + " columns, found " +
                         std::to_string(fields.size()));
  }
  return fields;
}

}  // namespace

std::string_view to_token(SpeakerRole role) {
  switch (role) {
    case SpeakerRole::Child: return "child";
    case SpeakerRole::Adult: return "adult";
    case SpeakerRole::ThirdParty: return "third_party";
  }
  return "?";
}

std::string_view to_token(VocalTag tag) {
  switch (tag) {
    case VocalTag::Intelligible: return "intelligible";
    case VocalTag::Unintelligible: return "unintelligible";
    case VocalTag::Vocalization: return "vocalization";
    case VocalTag::Singing: return "singing";
    case VocalTag::Overlap: return "overlap";
  }
  return "?";
}

std::string_view to_token(LanguageLevel level) {
  switch (level) {
    case LanguageLevel::LL1: return "1";
    case LanguageLevel::LL2: return "2";
    case LanguageLevel::LL3: return "3";
  }
  return "?";
}

std::string_view to_token(Gender gender) { return gender == Gender::Male ? "m" : "f"; }

std::string_view to_token(TaskKind task) {
  return task == TaskKind::ChildAdult ? "child-adult" : "speech-voc";
}

std::optional<SpeakerRole> parse_speaker(std::string_view token) {
  if (token == "child") return SpeakerRole::Child;
  if (token == "adult") return SpeakerRole::Adult;
  if (token == "third_party") return SpeakerRole::ThirdParty;
  return std::nullopt;
}

std::optional<VocalTag> parse_tag(std::string_view token) {
  if (token == "intelligible") return VocalTag::Intelligible;
  if (token == "unintelligible") return VocalTag::Unintelligible;
  if (token == "vocalization") return VocalTag::Vocalization;
  if (token == "singing") return VocalTag::Singing;
  if (token == "overlap") return VocalTag::Overlap;
  return std::nullopt;
}

std::optional<LanguageLevel> parse_level(std::string_view token) {
  if (token == "1") return LanguageLevel::LL1;
  if (token == "2") return LanguageLevel::LL2;
  if (token == "3") return LanguageLevel::LL3;
  return std::nullopt;
}

std::optional<Gender> parse_gender(std::string_view token) {
  if (token == "m") return Gender::Male;
  if (token == "f") return Gender::Female;
  return std::nullopt;
}

std::optional<TaskKind> parse_task(std::string_view token) {
  if (token == "child-adult") return TaskKind::ChildAdult;
  if (token == "speech-voc") return TaskKind::SpeechVocalization;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Corpus

Corpus::Corpus(std::vector<SessionMeta> sessions, std::vector<Utterance> utterances)
    : sessions_(std::move(sessions)), utterances_(std::move(utterances)) {
  for (std::size_t i = 0; i < sessions_.size(); ++i) {
    const auto& s = sessions_[i];
    if (s.session_id.empty()) throw ArgumentError("session with empty id");
    if (s.child_age_months < 1 || s.child_age_months > 240)
      throw ArgumentError("session " + s.session_id + ": age_months out of [1, 240]");
    if (s.activity_count < 1) throw ArgumentError("session " + s.session_id + ": activities must be >= 1");
    if (!session_index_.emplace(s.session_id, i).second)
      throw DuplicateError("duplicate session_id " + s.session_id);
  }
  session_utterances_.resize(sessions_.size());

  std::unordered_set<std::string_view> seen;
  seen.reserve(utterances_.size());
  for (std::size_t i = 0; i < utterances_.size(); ++i) {
    const auto& u = utterances_[i];
    if (!seen.insert(u.utterance_id).second) throw DuplicateError("duplicate utterance_id " + u.utterance_id);
    if (!(u.start_s >= 0.0) || !std::isfinite(u.end_s) || !(u.end_s > u.start_s))
      throw ArgumentError("utterance " + u.utterance_id + ": requires 0 <= start_s < end_s");
    const auto it = session_index_.find(u.session_id);
    if (it == session_index_.end())
      throw ReferenceError("utterance " + u.utterance_id + " references unknown session " + u.session_id);
    session_utterances_[it->second].push_back(i);
  }
}

const SessionMeta* Corpus::find_session(std::string_view session_id) const {
  const auto it = session_index_.find(std::string(session_id));
  return it == session_index_.end() ? nullptr : &sessions_[it->second];
}

const SessionMeta& Corpus::session(std::string_view session_id) const {
  if (const auto* s = find_session(session_id)) return *s;
  throw LookupError("unknown session " + std::string(session_id));
}

const std::vector<std::size_t>& Corpus::utterances_of(std::string_view session_id) const {
  const auto it = session_index_.find(std::string(session_id));
  if (it == session_index_.end()) throw LookupError("unknown session " + std::string(session_id));
  return session_utterances_[it->second];
}

// ---------------------------------------------------------------------------
// TSV formats

std::vector<Utterance> read_manifest(std::istream& in, const std::string& source) {
  detail::LineReader reader(in);
  check_header(reader, source, kManifestHeader);

  std::vector<Utterance> rows;
  std::string line;
  while (reader.next(line)) {
    if (line.empty()) continue;
    const auto n = reader.line_number();
    const auto f = split_row(line, 7, source, n);

    Utterance u;
    u.utterance_id = std::string(f[0]);
    u.session_id = std::string(f[1]);
    if (u.utterance_id.empty()) throw ParseError(source, n, 1, "empty utterance_id");
    if (u.session_id.empty()) throw ParseError(source, n, 2, "empty session_id");

    const auto speaker = parse_speaker(f[2]);
    if (!speaker) throw ParseError(source, n, 3, "unknown speaker '" + std::string(f[2]) + "'");
    const auto tag = parse_tag(f[3]);
    if (!tag) throw ParseError(source, n, 4, "unknown tag '" + std::string(f[3]) + "'");
    const auto start = detail::parse_double(f[4]);
    if (!start) throw ParseError(source, n, 5, "unparsable start_s '" + std::string(f[4]) + "'");
    if (*start < 0.0) throw ParseError(source, n, 5, "negative start_s");
    const auto end = detail::parse_double(f[5]);
    if (!end) throw ParseError(source, n, 6, "unparsable end_s '" + std::string(f[5]) + "'");
    if (!(*end > *start)) throw ParseError(source, n, 6, "end_s must exceed start_s (zero or negative duration)");

    u.speaker = *speaker;
    u.tag = *tag;
    u.start_s = *start;
    u.end_s = *end;
    u.embedding_path = std::string(f[6]);
    rows.push_back(std::move(u));
  }
  return rows;
}

std::vector<SessionMeta> read_session_meta(std::istream& in, const std::string& source) {
  detail::LineReader reader(in);
  check_header(reader, source, kMetaHeader);

  std::vector<SessionMeta> rows;
  std::string line;
  while (reader.next(line)) {
    if (line.empty()) continue;
    const auto n = reader.line_number();
    const auto f = split_row(line, 5, source, n);

    SessionMeta s;
    s.session_id = std::string(f[0]);
    if (s.session_id.empty()) throw ParseError(source, n, 1, "empty session_id");
    const auto level = parse_level(f[1]);
    if (!level) throw ParseError(source, n, 2, "unknown level '" + std::string(f[1]) + "'");
    const auto gender = parse_gender(f[2]);
    if (!gender) throw ParseError(source, n, 3, "unknown gender '" + std::string(f[2]) + "'");
    const auto age = detail::parse_int(f[3]);
    if (!age) throw ParseError(source, n, 4, "unparsable age_months '" + std::string(f[3]) + "'");
    if (*age < 1 || *age > 240) throw ParseError(source, n, 4, "age_months out of [1, 240]");
    const auto activities = detail::parse_int(f[4]);
    if (!activities) throw ParseError(source, n, 5, "unparsable activities '" + std::string(f[4]) + "'");
    if (*activities < 1 || *activities > 1000000) throw ParseError(source, n, 5, "activities must be >= 1");

    s.level = *level;
    s.child_gender = *gender;
    s.child_age_months = static_cast<int>(*age);
    s.activity_count = static_cast<int>(*activities);
    rows.push_back(std::move(s));
  }
  return rows;
}

void write_manifest(std::ostream& out, const std::vector<Utterance>& utterances) {
  out << kManifestHeader << '\n';
  for (const auto& u : utterances) {
    out << u.utterance_id << '\t' << u.session_id << '\t' << to_token(u.speaker) << '\t' << to_token(u.tag)
        << '\t' << detail::format_fixed_min(u.start_s, 3) << '\t' << detail::format_fixed_min(u.end_s, 3) << '\t'
        << u.embedding_path << '\n';
  }
}

void write_session_meta(std::ostream& out, const std::vector<SessionMeta>& sessions) {
  out << kMetaHeader << '\n';
  for (const auto& s : sessions) {
    out << s.session_id << '\t' << to_token(s.level) << '\t' << to_token(s.child_gender) << '\t'
        << s.child_age_months << '\t' << s.activity_count << '\n';
  }
}

Corpus parse_corpus(const std::filesystem::path& manifest_path, const std::filesystem::path& session_meta_path) {
  auto meta_in = detail::open_input(session_meta_path);
  auto sessions = read_session_meta(meta_in, session_meta_path.string());
  auto manifest_in = detail::open_input(manifest_path);
  auto utterances = read_manifest(manifest_in, manifest_path.string());
  return Corpus(std::move(sessions), std::move(utterances));
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& manifest_path,
                  const std::filesystem::path& session_meta_path) {
  {
    auto out = detail::open_output(manifest_path);
    write_manifest(out, corpus.utterances());
    if (!out) throw IoError("write failed: " + manifest_path.string());
  }
  auto out = detail::open_output(session_meta_path);
  write_session_meta(out, corpus.sessions());
  if (!out) throw IoError("write failed: " + session_meta_path.string());
}

// ---------------------------------------------------------------------------
// Task construction

std::optional<int> task_label(const Utterance& u, TaskKind task, double min_duration_s) {
  if (u.speaker == SpeakerRole::ThirdParty) return std::nullopt;
  if (u.tag == VocalTag::Singing || u.tag == VocalTag::Overlap) return std::nullopt;
  if (u.duration_s() < min_duration_s - kDurationSlack) return std::nullopt;

  if (task == TaskKind::ChildAdult) return u.speaker == SpeakerRole::Child ? 1 : 0;
  if (u.speaker != SpeakerRole::Child) return std::nullopt;
  return u.tag == VocalTag::Vocalization ? 0 : 1;
}

TaskDataset build_task_dataset(const Corpus& corpus, TaskKind task, double min_duration_s) {
  TaskDataset dataset;
  dataset.task = task;
  const auto& utterances = corpus.utterances();
  for (std::size_t i = 0; i < utterances.size(); ++i) {
    if (const auto label = task_label(utterances[i], task, min_duration_s)) dataset.items.push_back({i, *label});
  }
  return dataset;
}

// ---------------------------------------------------------------------------
// Synthetic corpus

const std::array<CategoryCalibration, 6>& reference_calibration() {
  static const std::array<CategoryCalibration, 6> table{{
      {SpeakerRole::Child, VocalTag::Intelligible, {2.4, 38.1, 155}, {3.8, 20.8, 54.0}, {0.5, 0.9, 1.2},
       {0.1, 0.2, 0.5}},
      {SpeakerRole::Child, VocalTag::Unintelligible, {3.7, 25.2, 23.6}, {6.8, 14.3, 24.5}, {0.7, 1.0, 1.0},
       {0.2, 0.3, 0.3}},
      {SpeakerRole::Child, VocalTag::Vocalization, {64.6, 75.2, 48.8}, {37.9, 57.4, 33.4}, {0.9, 0.9, 0.8},
       {0.3, 0.3, 0.3}},
      {SpeakerRole::Adult, VocalTag::Intelligible, {202, 188, 182}, {66.2, 44.5, 49.0}, {1.3, 1.2, 1.3},
       {0.5, 0.4, 0.5}},
      {SpeakerRole::Adult, VocalTag::Unintelligible, {9.3, 4.1, 2.6}, {8.6, 4.8, 3.0}, {0.8, 0.6, 0.9},
       {0.2, 0.3, 0.4}},
      {SpeakerRole::Adult, VocalTag::Vocalization, {42.2, 22.5, 17.5}, {31.3, 13.9, 11.1}, {0.6, 0.7, 0.6},
       {0.2, 0.3, 0.1}},
  }};
  return table;
}

namespace {

// Female sessions per level over sessions per level: 4/14, 1/15, 2/16.
constexpr std::array<double, 3> kFemaleFraction{4.0 / 14.0, 1.0 / 15.0, 2.0 / 16.0};

constexpr double kAgeMean = 79.0, kAgeStd = 12.3, kAgeMin = 50.0, kAgeMax = 95.0;
constexpr double kActivityMean = 1.9, kActivityStd = 1.1, kActivityMin = 1.0, kActivityMax = 5.0;

constexpr double kUtteranceCv = 0.3;  // per-utterance std as a fraction of the session mean
constexpr long long kMinDurationMs = 100;

long long clamp_round(double x, double lo, double hi) { return std::llround(std::clamp(std::round(x), lo, hi)); }

std::string session_name(int ordinal) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "s%03d", ordinal);
  return buf;
}

}  // namespace

Corpus synthesize_corpus(std::uint64_t seed, std::array<int, 3> sessions_per_level) {
  for (int n : sessions_per_level)
    if (n < 2) throw ArgumentError("synthesize_corpus: every level needs at least 2 sessions");

  std::vector<SessionMeta> sessions;
  std::vector<Utterance> utterances;
  int ordinal = 0;

  struct Draft {
    SpeakerRole speaker;
    VocalTag tag;
    long long duration_ms;
  };

  for (const auto level : kLanguageLevels) {
    const auto li = level_index(level);
    for (int k = 0; k < sessions_per_level[li]; ++k) {
      ++ordinal;
      Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(ordinal)}));

      SessionMeta meta;
      meta.session_id = session_name(ordinal);
      meta.level = level;
      meta.child_gender = rng.bernoulli(kFemaleFraction[li]) ? Gender::Female : Gender::Male;
      meta.child_age_months = static_cast<int>(clamp_round(rng.normal(kAgeMean, kAgeStd), kAgeMin, kAgeMax));
      meta.activity_count =
          static_cast<int>(clamp_round(rng.normal(kActivityMean, kActivityStd), kActivityMin, kActivityMax));

      std::vector<Draft> drafts;
      for (const auto& cat : reference_calibration()) {
        const double count_draw = rng.normal(cat.count_mean[li], cat.count_std[li]);
        const auto count = std::max<long long>(0, std::llround(count_draw));
        const double session_mean = std::max(0.1, rng.normal(cat.duration_mean[li], cat.duration_std[li]));
        for (long long c = 0; c < count; ++c) {
          const double d = std::max(0.1, rng.normal(session_mean, kUtteranceCv * session_mean));
          drafts.push_back({cat.speaker, cat.tag, std::max(kMinDurationMs, std::llround(d * 1000.0))});
        }
      }
      rng.shuffle(std::span<Draft>(drafts));

      long long cursor_ms = 0;
      int n = 0;
      for (const auto& d : drafts) {
        cursor_ms += 50 + static_cast<long long>(rng.below(451));  // 50..500 ms gap
        Utterance u;
        char id[32];
        std::snprintf(id, sizeof(id), "_u%04d", ++n);
        u.utterance_id = meta.session_id + id;
        u.session_id = meta.session_id;
        u.speaker = d.speaker;
        u.tag = d.tag;
        u.start_s = static_cast<double>(cursor_ms) / 1000.0;
        cursor_ms += d.duration_ms;
        u.end_s = static_cast<double>(cursor_ms) / 1000.0;
        utterances.push_back(std::move(u));
      }
      sessions.push_back(std::move(meta));
    }
  }
  return Corpus(std::move(sessions), std::move(utterances));
}

}  // namespace nlskit
