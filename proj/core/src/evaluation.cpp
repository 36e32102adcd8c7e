#include "nlskit/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <mutex>
#include <ostream>
#include <set>
#include <stdexcept>
#include <thread>

#include "nlskit/error.hpp"
#include "nlskit/random.hpp"
#include "text_io.hpp"

namespace nlskit {

std::vector<std::string> FoldPlan::sessions_in(int fold) const {
  std::vector<std::string> out;
  for (const auto& [id, f] : assignment)
    if (f == fold) out.push_back(id);
  return out;
}

FoldPlan make_folds(const Corpus& corpus, int k, std::uint64_t seed) {
  if (k < 2) throw ArgumentError("cross-validation needs k >= 2");
  std::vector<std::string> ids;
  for (const auto& s : corpus.sessions()) ids.push_back(s.session_id);
  if (ids.size() < static_cast<std::size_t>(k))
    throw ArgumentError("cannot split " + std::to_string(ids.size()) + " sessions into " + std::to_string(k) +
                        " folds");
  std::sort(ids.begin(), ids.end());
  Rng rng(seed);
  rng.shuffle(std::span<std::string>(ids));
  FoldPlan plan;
  plan.k = k;
  for (std::size_t i = 0; i < ids.size(); ++i) plan.assignment.emplace(ids[i], static_cast<int>(i % k));
  return plan;
}

std::vector<AggregateScore> aggregate_scores(const std::vector<SessionScore>& sessions, bool include_model) {
  struct Group {
    std::string name;
    bool (*member)(const SessionScore&);
  };
  static const Group groups[] = {
      {"overall", [](const SessionScore&) { return true; }},
      {"LL1", [](const SessionScore& s) { return s.level == LanguageLevel::LL1; }},
      {"LL2", [](const SessionScore& s) { return s.level == LanguageLevel::LL2; }},
      {"LL3", [](const SessionScore& s) { return s.level == LanguageLevel::LL3; }},
      {"male/LL1", [](const SessionScore& s) { return s.gender == Gender::Male && s.level == LanguageLevel::LL1; }},
      {"male/LL23", [](const SessionScore& s) { return s.gender == Gender::Male && s.level != LanguageLevel::LL1; }},
      {"female/LL1",
       [](const SessionScore& s) { return s.gender == Gender::Female && s.level == LanguageLevel::LL1; }},
      {"female/LL23",
       [](const SessionScore& s) { return s.gender == Gender::Female && s.level != LanguageLevel::LL1; }},
  };

  std::vector<AggregateScore> out;
  for (const Scorer scorer : {Scorer::Model, Scorer::Baseline}) {
    if (scorer == Scorer::Model && !include_model) continue;
    for (const auto& g : groups) {
      AggregateScore a{scorer, g.name, 0, std::nullopt};
      double total = 0.0;
      for (const auto& s : sessions) {
        if (!g.member(s)) continue;
        ++a.n_sessions;
        total += scorer == Scorer::Model ? s.f1 : s.baseline_f1;
      }
      if (a.n_sessions > 0) a.mean_f1 = total / static_cast<double>(a.n_sessions);
      out.push_back(std::move(a));
    }
  }
  return out;
}

namespace {

struct FoldSplit {
  std::vector<TaskItem> train;
  std::vector<TaskItem> test;
};

FoldSplit split_fold(const Corpus& corpus, const TaskDataset& dataset, const FoldPlan& plan, int fold) {
  FoldSplit split;
  for (const auto& item : dataset.items) {
    const auto& sid = corpus.utterances()[item.utterance_index].session_id;
    (plan.assignment.at(sid) == fold ? split.test : split.train).push_back(item);
  }
  return split;
}

// Throws std::logic_error if a session contributes to both sides of a fold.
void assert_no_leakage(const Corpus& corpus, const FoldSplit& split, int fold) {
  std::set<std::string_view> train_sessions;
  for (const auto& item : split.train) train_sessions.insert(corpus.utterances()[item.utterance_index].session_id);
  for (const auto& item : split.test) {
    const auto& sid = corpus.utterances()[item.utterance_index].session_id;
    if (train_sessions.count(sid))
      throw std::logic_error("fold " + std::to_string(fold) + ": session " + sid + " in both train and test");
  }
}

struct FoldOutcome {
  std::optional<TrainedModel> model;
  std::optional<std::string> failure;
  std::map<std::string, std::pair<std::vector<int>, std::vector<int>>> per_session;  // truth, predicted
  double majority = 0;
  int majority_label = 0;
};

std::vector<int> labels_of(const std::vector<TaskItem>& items) {
  std::vector<int> out;
  out.reserve(items.size());
  for (const auto& i : items) out.push_back(i.label);
  return out;
}

EvalReport assemble(const Corpus& corpus, TaskKind task, const FoldPlan& plan, const TaskDataset& dataset,
                    std::vector<FoldOutcome>& outcomes, bool with_model) {
  EvalReport report;
  report.task = task;
  report.has_model_scores = with_model;
  report.leakage_checks = static_cast<std::size_t>(plan.k);

  std::map<std::string, std::vector<int>, std::less<>> truth_by_session;
  for (const auto& item : dataset.items)
    truth_by_session[corpus.utterances()[item.utterance_index].session_id].push_back(item.label);

  for (int f = 0; f < plan.k; ++f)
    if (outcomes[static_cast<std::size_t>(f)].failure)
      report.failed_folds.push_back({f, *outcomes[static_cast<std::size_t>(f)].failure});

  for (const auto& s : corpus.sessions()) {
    const auto it = truth_by_session.find(s.session_id);
    if (it == truth_by_session.end()) {
      report.skipped_sessions.push_back(s.session_id);
      continue;
    }
    const int fold = plan.assignment.at(s.session_id);
    const auto& outcome = outcomes[static_cast<std::size_t>(fold)];
    if (outcome.failure) continue;

    SessionScore score;
    score.session_id = s.session_id;
    score.level = s.level;
    score.gender = s.child_gender;
    score.fold = fold;
    score.n_utterances = it->second.size();
    const std::vector<int> baseline_pred(it->second.size(), outcome.majority_label);
    score.baseline_f1 = f1_macro(it->second, baseline_pred);
    if (with_model) {
      const auto& [truth, predicted] = outcome.per_session.at(s.session_id);
      score.f1 = f1_macro(truth, predicted);
    }
    report.sessions.push_back(std::move(score));
  }
  report.aggregates = aggregate_scores(report.sessions, with_model);
  return report;
}

}  // namespace

CrossValidationResult run_cross_validation(const Corpus& corpus, TaskKind task, EmbeddingCache& embeddings,
                                           const CrossValidationOptions& options) {
  options.train.validate();
  const auto dataset = build_task_dataset(corpus, task, options.min_duration_s);
  const auto plan = make_folds(corpus, options.folds, options.seed);

  // Surface missing embeddings before any training starts.
  for (const auto& item : dataset.items) {
    const auto& u = corpus.utterances()[item.utterance_index];
    if (!embeddings.contains(u.utterance_id) && !u.has_embedding())
      throw DataError("utterance " + u.utterance_id + " has no embedding_path");
  }
  embeddings.preload(corpus, dataset.items);
  const EmbeddingCache& frozen = embeddings;

  std::vector<FoldOutcome> outcomes(static_cast<std::size_t>(plan.k));
  auto run_fold = [&](int fold) {
    auto& outcome = outcomes[static_cast<std::size_t>(fold)];
    const auto split = split_fold(corpus, dataset, plan, fold);
    assert_no_leakage(corpus, split, fold);
    try {
      const auto train_labels = labels_of(split.train);
      if (train_labels.empty()) throw TrainingError("no training utterances");
      outcome.majority_label = majority_label(train_labels);

      TrainConfig tc = options.train;
      tc.seed = derive_seed(options.seed, {0x666f6c64ULL, static_cast<std::uint64_t>(fold)});
      auto model = train(corpus, split.train, frozen, options.model, tc, options.on_epoch);
      for (const auto& item : split.test) {
        const auto& u = corpus.utterances()[item.utterance_index];
        auto& [truth, predicted] = outcome.per_session[u.session_id];
        truth.push_back(item.label);
        predicted.push_back(predict(model, frozen.get(u)).label);
      }
      outcome.model = std::move(model);
    } catch (const DataError& e) {
      outcome.failure = e.what();
    }
  };

  const unsigned jobs = std::max(1u, std::min<unsigned>(options.jobs, static_cast<unsigned>(plan.k)));
  if (jobs == 1) {
    for (int f = 0; f < plan.k; ++f) run_fold(f);
  } else {
    std::atomic<int> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> workers;
    for (unsigned j = 0; j < jobs; ++j) {
      workers.emplace_back([&] {
        for (int f = next++; f < plan.k; f = next++) {
          try {
            run_fold(f);
          } catch (...) {
            std::lock_guard lock(error_mutex);
            if (!error) error = std::current_exception();
          }
        }
      });
    }
    for (auto& w : workers) w.join();
    if (error) std::rethrow_exception(error);
  }

  CrossValidationResult result;
  result.report = assemble(corpus, task, plan, dataset, outcomes, true);
  result.plan = plan;
  for (auto& o : outcomes) result.models.push_back(std::move(o.model));
  return result;
}

EvalReport run_baseline(const Corpus& corpus, TaskKind task, const CrossValidationOptions& options) {
  const auto dataset = build_task_dataset(corpus, task, options.min_duration_s);
  const auto plan = make_folds(corpus, options.folds, options.seed);
  std::vector<FoldOutcome> outcomes(static_cast<std::size_t>(plan.k));
  for (int fold = 0; fold < plan.k; ++fold) {
    const auto split = split_fold(corpus, dataset, plan, fold);
    assert_no_leakage(corpus, split, fold);
    auto& outcome = outcomes[static_cast<std::size_t>(fold)];
    if (split.train.empty()) {
      outcome.failure = "no training utterances";
      continue;
    }
    outcome.majority_label = majority_label(labels_of(split.train));
  }
  return assemble(corpus, task, plan, dataset, outcomes, false);
}

void write_eval_report(std::ostream& out, const EvalReport& report, Scorer rows) {
  out << "# task: " << to_token(report.task) << '\n';
  out << "# scores: " << (rows == Scorer::Model ? "model" : "majority baseline") << '\n';
  out << "# f1_macro is computed per session over the classes present in its truth or predictions "
         "(a single-class session predicted perfectly scores 1); aggregates are unweighted session means\n";
  out << "session_id\tlevel\tgender\tn_utterances\tf1_macro\n";
  for (const auto& s : report.sessions) {
    out << s.session_id << '\t' << to_token(s.level) << '\t' << to_token(s.gender) << '\t' << s.n_utterances << '\t'
        << detail::format_sig6(rows == Scorer::Model ? s.f1 : s.baseline_f1) << '\n';
  }
  for (const auto& a : report.aggregates) {
    out << "#AGG\t" << (a.scorer == Scorer::Model ? "model" : "baseline") << '\t' << a.group << '\t' << a.n_sessions
        << '\t' << (a.mean_f1 ? detail::format_sig6(*a.mean_f1) : "NA") << '\n';
  }
  for (const auto& id : report.skipped_sessions) out << "# skipped\t" << id << "\tno eligible utterances\n";
  for (const auto& f : report.failed_folds) out << "# failed_fold\t" << f.fold << '\t' << f.reason << '\n';
}

}  // namespace nlskit
