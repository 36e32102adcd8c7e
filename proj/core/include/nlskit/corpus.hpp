#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace nlskit {

enum class LanguageLevel { LL1 = 1, LL2 = 2, LL3 = 3 };
enum class SpeakerRole { Child, Adult, ThirdParty };
enum class VocalTag { Intelligible, Unintelligible, Vocalization, Singing, Overlap };
enum class Gender { Male, Female };
enum class TaskKind { ChildAdult, SpeechVocalization };

inline constexpr std::array<LanguageLevel, 3> kLanguageLevels{LanguageLevel::LL1, LanguageLevel::LL2,
                                                              LanguageLevel::LL3};

/// 0-based position of a level, for indexing per-level arrays.
constexpr std::size_t level_index(LanguageLevel level) { return static_cast<std::size_t>(level) - 1; }

// Manifest tokens: child/adult/third_party, intelligible/.../overlap, 1/2/3, m/f.
std::string_view to_token(SpeakerRole role);
std::string_view to_token(VocalTag tag);
std::string_view to_token(LanguageLevel level);
std::string_view to_token(Gender gender);
std::string_view to_token(TaskKind task);  // child-adult, speech-voc

std::optional<SpeakerRole> parse_speaker(std::string_view token);
std::optional<VocalTag> parse_tag(std::string_view token);
std::optional<LanguageLevel> parse_level(std::string_view token);
std::optional<Gender> parse_gender(std::string_view token);
std::optional<TaskKind> parse_task(std::string_view token);

struct Utterance {
  std::string utterance_id;
  std::string session_id;
  SpeakerRole speaker = SpeakerRole::Child;
  VocalTag tag = VocalTag::Intelligible;
  double start_s = 0.0;
  double end_s = 0.0;
  std::string embedding_path;  // empty when no embedding has been attached

  double duration_s() const { return end_s - start_s; }
  bool has_embedding() const { return !embedding_path.empty(); }

  friend bool operator==(const Utterance&, const Utterance&) = default;
};

struct SessionMeta {
  std::string session_id;
  LanguageLevel level = LanguageLevel::LL1;
  Gender child_gender = Gender::Male;
  int child_age_months = 0;
  int activity_count = 1;

  friend bool operator==(const SessionMeta&, const SessionMeta&) = default;
};

/// Annotated sessions plus their utterances. Immutable once constructed;
/// the constructor enforces referential integrity and per-record invariants.
class Corpus {
 public:
  Corpus() = default;
  Corpus(std::vector<SessionMeta> sessions, std::vector<Utterance> utterances);

  const std::vector<SessionMeta>& sessions() const { return sessions_; }
  const std::vector<Utterance>& utterances() const { return utterances_; }

  /// Throws LookupError for unknown ids.
  const SessionMeta& session(std::string_view session_id) const;
  const SessionMeta* find_session(std::string_view session_id) const;

  /// Indices into utterances() belonging to one session, in corpus order.
  const std::vector<std::size_t>& utterances_of(std::string_view session_id) const;

  friend bool operator==(const Corpus& a, const Corpus& b) {
    return a.sessions_ == b.sessions_ && a.utterances_ == b.utterances_;
  }

 private:
  std::vector<SessionMeta> sessions_;
  std::vector<Utterance> utterances_;
  std::unordered_map<std::string, std::size_t> session_index_;
  std::vector<std::vector<std::size_t>> session_utterances_;
};

struct TaskItem {
  std::size_t utterance_index = 0;  // into Corpus::utterances()
  int label = 0;

  friend bool operator==(const TaskItem&, const TaskItem&) = default;
};

struct TaskDataset {
  TaskKind task = TaskKind::ChildAdult;
  std::vector<TaskItem> items;
};

// Row-level readers, exposed so tests and tools can parse from memory.
// `source_name` is used in error messages.
std::vector<Utterance> read_manifest(std::istream& in, const std::string& source_name);
std::vector<SessionMeta> read_session_meta(std::istream& in, const std::string& source_name);
void write_manifest(std::ostream& out, const std::vector<Utterance>& utterances);
void write_session_meta(std::ostream& out, const std::vector<SessionMeta>& sessions);

Corpus parse_corpus(const std::filesystem::path& manifest_path, const std::filesystem::path& session_meta_path);
void write_corpus(const Corpus& corpus, const std::filesystem::path& manifest_path,
                  const std::filesystem::path& session_meta_path);

/// Selects and labels utterances for a classification task.
///
/// Both tasks drop third-party speakers, singing and overlap segments, and
/// anything shorter than `min_duration_s` (a duration equal to the minimum
/// is kept). ChildAdult labels child utterances 1 and adult utterances 0.
/// SpeechVocalization keeps child utterances only and labels intelligible or
/// unintelligible speech 1, vocalizations 0.
TaskDataset build_task_dataset(const Corpus& corpus, TaskKind task, double min_duration_s = 0.1);

/// Whether a single utterance enters `task`'s dataset, and with which label.
std::optional<int> task_label(const Utterance& utterance, TaskKind task, double min_duration_s = 0.1);

/// One (speaker, tag) row of the per-session statistics that calibrate the
/// synthetic generator: per-level mean and std of the session count and of
/// the session mean duration in seconds.
struct CategoryCalibration {
  SpeakerRole speaker;
  VocalTag tag;
  std::array<double, 3> count_mean;
  std::array<double, 3> count_std;
  std::array<double, 3> duration_mean;
  std::array<double, 3> duration_std;
};

/// The six categories in table order: child intelligible, unintelligible,
/// vocalization, then the adult rows.
const std::array<CategoryCalibration, 6>& reference_calibration();

/// Draws a synthetic corpus whose per-level statistics follow
/// reference_calibration(). Deterministic in `seed`; each count must be >= 2.
Corpus synthesize_corpus(std::uint64_t seed, std::array<int, 3> sessions_per_level);

}  // namespace nlskit
