#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "nlskit/classifier.hpp"
#include "nlskit/corpus.hpp"
#include "nlskit/embedding_io.hpp"
#include "nlskit/metrics.hpp"

namespace nlskit {

/// Session-level fold assignment: a seeded shuffle of the sorted session ids
/// dealt round-robin into k folds.
struct FoldPlan {
  int k = 5;
  std::map<std::string, int, std::less<>> assignment;

  /// Session ids of one fold, in sorted order.
  std::vector<std::string> sessions_in(int fold) const;
};

/// Throws ArgumentError when the corpus has fewer sessions than folds.
FoldPlan make_folds(const Corpus& corpus, int k = 5, std::uint64_t seed = 0);

struct SessionScore {
  std::string session_id;
  LanguageLevel level = LanguageLevel::LL1;
  Gender gender = Gender::Male;
  int fold = 0;
  std::size_t n_utterances = 0;
  double f1 = 0.0;           // trained model
  double baseline_f1 = 0.0;  // majority vote of the fold's training labels
};

enum class Scorer { Model, Baseline };

struct AggregateScore {
  Scorer scorer = Scorer::Model;
  std::string group;  // overall, LL1..LL3, male/LL1, male/LL23, female/LL1, female/LL23
  std::size_t n_sessions = 0;
  std::optional<double> mean_f1;  // absent for empty groups
};

struct FoldFailure {
  int fold = 0;
  std::string reason;
};

struct EvalReport {
  TaskKind task = TaskKind::ChildAdult;
  bool has_model_scores = true;
  std::vector<SessionScore> sessions;         // in corpus session order
  std::vector<std::string> skipped_sessions;  // no eligible utterances
  std::vector<FoldFailure> failed_folds;
  std::vector<AggregateScore> aggregates;
  std::size_t leakage_checks = 0;  // folds verified to share no session between train and test
};

/// Unweighted means of per-session F1 over the standard groups. Female and
/// male sessions are split into LL1 and a combined LL2+LL3 group.
std::vector<AggregateScore> aggregate_scores(const std::vector<SessionScore>& sessions, bool include_model);

struct CrossValidationOptions {
  int folds = 5;
  std::uint64_t seed = 0;
  unsigned jobs = 1;  // folds trained concurrently
  double min_duration_s = 0.1;
  ModelConfig model;
  TrainConfig train;  // train.seed is replaced per fold
  EpochCallback on_epoch;  // invoked from worker threads when jobs > 1
};

struct CrossValidationResult {
  EvalReport report;
  FoldPlan plan;
  std::vector<std::optional<TrainedModel>> models;  // per fold; empty when the fold failed
};

/// k-fold session-level cross-validation of the classifier on `task`.
/// Every eligible utterance must have an embedding in `embeddings` or on
/// disk; the cache is filled before any training starts.
CrossValidationResult run_cross_validation(const Corpus& corpus, TaskKind task, EmbeddingCache& embeddings,
                                           const CrossValidationOptions& options);

/// The majority-vote baseline under the same fold plan, without embeddings.
EvalReport run_baseline(const Corpus& corpus, TaskKind task, const CrossValidationOptions& options);

/// Per-session TSV (session_id, level, gender, n_utterances, f1_macro) with
/// `#AGG` aggregate rows. `rows` selects which score fills the f1 column.
void write_eval_report(std::ostream& out, const EvalReport& report, Scorer rows);

}  // namespace nlskit
