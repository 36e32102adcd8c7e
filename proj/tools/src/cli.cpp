#include "nlskit/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>

#include "nlskit/checkpoint.hpp"
#include "nlskit/classifier.hpp"
#include "nlskit/corpus.hpp"
#include "nlskit/embedding_io.hpp"
#include "nlskit/error.hpp"
#include "nlskit/evaluation.hpp"
#include "nlskit/projection.hpp"
#include "nlskit/stats.hpp"
#include "nlskit/version.hpp"

namespace nlskit::cli {

namespace fs = std::filesystem;

namespace {

constexpr const char* kDefaultsFooter = R"(Defaults:
  classifier   softmax-weighted sum of encoder layers; 3 x Conv1d (kernel 1,
               256 channels, ReLU, dropout 0.2); mean pooling over frames;
               Linear 256 + ReLU; Linear 2
  training     Adam, lr 5e-5, weight decay 1e-4, batch size 64, at most 40
               epochs, early stopping with patience 5 on validation loss,
               8:2 train/validation split, class-weighted cross-entropy
  data         utterances cropped to 3 s; utterances shorter than 0.1 s dropped
  evaluation   5-fold session-level cross-validation, per-session macro F1

Options may also come from --config FILE (key=value lines keyed by long flag
name); flags on the command line win. NLSKIT_SEED supplies the seed when
neither sets it.)";

constexpr const char* kConfigFlag = "--config";

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

// Reads flat key=value lines; blank lines and lines starting with '#' are ignored.
std::vector<std::string> config_arguments(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw CLI::ValidationError(kConfigFlag, "cannot open config file " + path.string());
  std::vector<std::string> args;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto text = trim(line);
    if (text.empty() || text.front() == '#') continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos)
      throw CLI::ValidationError(kConfigFlag, path.string() + ":" + std::to_string(line_no) + ": expected key=value");
    const auto key = trim(std::string_view(text).substr(0, eq));
    const auto value = trim(std::string_view(text).substr(eq + 1));
    if (key.empty() || key == "config")
      throw CLI::ValidationError(kConfigFlag, path.string() + ":" + std::to_string(line_no) + ": invalid key");
    args.push_back("--" + key + "=" + value);
  }
  return args;
}

// Splices config-file entries in front of the subcommand's own arguments so
// that later command-line occurrences take precedence.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  if (args.empty()) return args;
  std::optional<fs::path> config;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == kConfigFlag && i + 1 < args.size()) config = args[i + 1];
    if (args[i].rfind(std::string(kConfigFlag) + "=", 0) == 0) config = args[i].substr(std::string(kConfigFlag).size() + 1);
  }
  if (!config) return args;
  std::vector<std::string> expanded{args.front()};
  for (auto& a : config_arguments(*config)) expanded.push_back(std::move(a));
  expanded.insert(expanded.end(), args.begin() + 1, args.end());
  return expanded;
}

std::string option_value(const CLI::Option& opt) {
  const auto& results = opt.results();
  if (!results.empty()) {
    std::string joined;
    for (std::size_t i = 0; i < results.size(); ++i) joined += (i ? "," : "") + results[i];
    return joined;
  }
  if (opt.get_expected_min() == 0) return "false";
  return opt.get_default_str();
}

void write_run_manifest(const CLI::App& sub, const fs::path& out_dir, std::uint64_t seed) {
  std::ofstream out(out_dir / "run_manifest.txt");
  out << "tool=nlskit\n";
  out << "version=" << version() << '\n';
  out << "command=" << sub.get_name() << '\n';
  out << "seed=" << seed << '\n';
  for (const CLI::Option* opt : sub.get_options()) {
    const auto& names = opt->get_lnames();
    if (names.empty() || names.front() == "help" || names.front() == "seed") continue;
    out << names.front() << '=' << option_value(*opt) << '\n';
  }
  if (!out) throw IoError("cannot write " + (out_dir / "run_manifest.txt").string());
}

fs::path prepare_out_dir(const fs::path& out_dir) {
  fs::create_directories(out_dir);
  return out_dir;
}

std::ofstream open_report(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

TaskKind task_from(const std::string& token) {
  const auto task = parse_task(token);
  if (!task) throw ArgumentError("unknown task '" + token + "' (expected child-adult or speech-voc)");
  return *task;
}

void add_task_option(CLI::App& sub, std::string& task) {
  sub.add_option("--task", task, "Classification task")
      ->required()
      ->check(CLI::IsMember({"child-adult", "speech-voc"}));
}

void add_corpus_options(CLI::App& sub, fs::path& corpus, fs::path& meta) {
  sub.add_option("--corpus", corpus, "Utterance manifest TSV")->required()->check(CLI::ExistingFile);
  sub.add_option("--meta", meta, "Session metadata TSV")->required()->check(CLI::ExistingFile);
}

struct Args {
  fs::path out;
  fs::path config;
  std::uint64_t seed = 0;
  fs::path corpus, meta, model;
  std::string task;
  std::string session;
  std::vector<int> sessions{14, 15, 16};
  std::string inspect_path;

  SyntheticEmbeddingOptions synth;
  CrossValidationOptions cv;
  TsneConfig tsne;
  double perplexity = 0.0;
  bool save_models = false;
  bool verbose = false;
};

int run_synth_corpus(Args& a, const CLI::App& sub, std::ostream& out) {
  if (a.sessions.size() != 3) throw ArgumentError("--sessions takes three counts (LL1 LL2 LL3)");
  const auto corpus = synthesize_corpus(a.seed, {a.sessions[0], a.sessions[1], a.sessions[2]});
  const auto dir = prepare_out_dir(a.out);
  write_corpus(corpus, dir / "manifest.tsv", dir / "sessions.tsv");
  write_run_manifest(sub, dir, a.seed);
  out << "wrote " << corpus.sessions().size() << " sessions and " << corpus.utterances().size()
      << " utterances to " << dir.string() << '\n';
  return kExitOk;
}

int run_synth_embeddings(Args& a, const CLI::App& sub, std::ostream& out) {
  const auto corpus = parse_corpus(a.corpus, a.meta);
  const auto dir = prepare_out_dir(a.out);
  a.synth.seed = a.seed;
  const auto with_paths = synthesize_embeddings(corpus, a.synth, dir / "embeddings");
  auto utterances = with_paths.utterances();
  std::size_t written = 0;
  for (auto& u : utterances) {
    if (!u.has_embedding()) continue;
    u.embedding_path = (fs::path("embeddings") / u.embedding_path).generic_string();
    ++written;
  }
  write_corpus(Corpus(with_paths.sessions(), std::move(utterances)), dir / "manifest.tsv", dir / "sessions.tsv");
  write_run_manifest(sub, dir, a.seed);
  out << "wrote " << written << " embeddings (L=" << a.synth.layers << ", D=" << a.synth.dim
      << ") and manifest.tsv to " << dir.string() << '\n';
  return kExitOk;
}

int run_stats(Args& a, const CLI::App& sub, std::ostream& out) {
  const auto corpus = parse_corpus(a.corpus, a.meta);
  const auto dir = prepare_out_dir(a.out);
  const auto files = emit_stats_report(corpus, dir);
  write_run_manifest(sub, dir, a.seed);
  std::ifstream table(files.table);
  out << table.rdbuf();
  out << "wrote " << files.table.string() << " and " << files.box_plot.string() << '\n';
  return kExitOk;
}

void write_fold_plan(const FoldPlan& plan, const fs::path& path) {
  auto out = open_report(path);
  out << "session_id\tfold\n";
  for (const auto& [id, fold] : plan.assignment) out << id << '\t' << fold << '\n';
}

void print_overall(std::ostream& out, const EvalReport& report) {
  for (const auto& agg : report.aggregates) {
    if (agg.group != "overall") continue;
    out << (agg.scorer == Scorer::Model ? "model" : "baseline") << " overall f1_macro: ";
    if (agg.mean_f1)
      out << *agg.mean_f1;
    else
      out << "NA";
    out << " (" << agg.n_sessions << " sessions)\n";
  }
  for (const auto& f : report.failed_folds) out << "fold " << f.fold << " failed: " << f.reason << '\n';
}

int run_cv(Args& a, const CLI::App& sub, std::ostream& out, std::ostream& err) {
  const auto task = task_from(a.task);
  const auto corpus = parse_corpus(a.corpus, a.meta);
  const auto dir = prepare_out_dir(a.out);
  write_run_manifest(sub, dir, a.seed);

  a.cv.seed = a.seed;
  std::mutex log_mutex;
  if (a.verbose) {
    a.cv.on_epoch = [&](const EpochLog& e) {
      std::lock_guard lock(log_mutex);
      err << "epoch " << e.epoch << " train_loss " << e.train_loss << " val_loss " << e.val_loss << " val_f1 "
          << e.val_f1 << '\n';
    };
  }
  EmbeddingCache cache(a.corpus.parent_path());
  const auto result = run_cross_validation(corpus, task, cache, a.cv);

  {
    auto report = open_report(dir / "eval_model.tsv");
    write_eval_report(report, result.report, Scorer::Model);
  }
  {
    auto report = open_report(dir / "eval_baseline.tsv");
    write_eval_report(report, result.report, Scorer::Baseline);
  }
  write_fold_plan(result.plan, dir / "fold_plan.tsv");
  {
    auto log = open_report(dir / "training_log.tsv");
    log << "fold\tepoch\ttrain_loss\tval_loss\tval_f1\tbest\n";
    for (std::size_t f = 0; f < result.models.size(); ++f) {
      if (!result.models[f]) continue;
      for (const auto& e : result.models[f]->log)
        log << f << '\t' << e.epoch << '\t' << e.train_loss << '\t' << e.val_loss << '\t' << e.val_f1 << '\t'
            << (e.epoch == result.models[f]->best_epoch ? 1 : 0) << '\n';
    }
  }
  if (a.save_models) {
    fs::create_directories(dir / "models");
    for (std::size_t f = 0; f < result.models.size(); ++f)
      if (result.models[f]) write_checkpoint(*result.models[f], dir / "models" / ("fold" + std::to_string(f) + ".nlsmdl"));
  }
  print_overall(out, result.report);
  return result.report.failed_folds.empty() ? kExitOk : kExitData;
}

int run_baseline_cmd(Args& a, const CLI::App& sub, std::ostream& out) {
  const auto task = task_from(a.task);
  const auto corpus = parse_corpus(a.corpus, a.meta);
  const auto dir = prepare_out_dir(a.out);
  a.cv.seed = a.seed;
  const auto report = run_baseline(corpus, task, a.cv);
  {
    auto file = open_report(dir / "eval_baseline.tsv");
    write_eval_report(file, report, Scorer::Baseline);
  }
  write_fold_plan(make_folds(corpus, a.cv.folds, a.seed), dir / "fold_plan.tsv");
  write_run_manifest(sub, dir, a.seed);
  print_overall(out, report);
  return kExitOk;
}

int run_project(Args& a, const CLI::App& sub, std::ostream& out, std::ostream& err) {
  const auto task = task_from(a.task);
  const auto corpus = parse_corpus(a.corpus, a.meta);
  corpus.session(a.session);
  const auto model = read_checkpoint(a.model);
  const auto dir = prepare_out_dir(a.out);

  // Child/adult projections use intelligible speech; tag projections use child utterances.
  std::vector<const Utterance*> selected;
  for (const auto& u : corpus.utterances()) {
    if (u.session_id != a.session || !task_label(u, task, a.cv.min_duration_s)) continue;
    if (task == TaskKind::ChildAdult && u.tag != VocalTag::Intelligible) continue;
    selected.push_back(&u);
  }
  if (selected.size() < 4)
    throw DataError("session " + a.session + " has " + std::to_string(selected.size()) +
                    " eligible utterances; t-SNE needs at least 4");

  EmbeddingCache cache(a.corpus.parent_path());
  std::vector<double> points;
  std::size_t dim = 0;
  for (const auto* u : selected) {
    const auto pooled = predict(model, cache.get(*u)).pooled;
    dim = pooled.size();
    points.insert(points.end(), pooled.begin(), pooled.end());
  }

  a.tsne.seed = a.seed;
  if (a.perplexity > 0.0) a.tsne.perplexity = a.perplexity;
  const auto result = tsne(points, dim, a.tsne);
  for (auto row : result.unconverged_rows)
    err << "warning: perplexity bisection did not converge for " << selected[row]->utterance_id
        << "; using the closest bandwidth\n";

  auto csv = open_report(dir / "projection.csv");
  csv << "utterance_id,speaker,tag,x,y\n";
  csv.precision(9);
  for (std::size_t i = 0; i < selected.size(); ++i) {
    const auto* u = selected[i];
    csv << u->utterance_id << ',' << to_token(u->speaker) << ',' << to_token(u->tag) << ','
        << result.coordinates[i * 2] << ',' << result.coordinates[i * 2 + 1] << '\n';
  }
  write_run_manifest(sub, dir, a.seed);
  out << "projected " << selected.size() << " utterances of session " << a.session << " to "
      << (dir / "projection.csv").string() << '\n';
  return kExitOk;
}

int run_inspect(Args& a, const CLI::App& sub, std::ostream& out) {
  const fs::path path(a.inspect_path);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  const std::string_view head(magic.data(), static_cast<std::size_t>(in.gcount()));
  in.close();

  if (head == "NLSEMB01") {
    const auto t = read_embedding(path);
    out << "format: NLSEMB01\nlayers: " << t.layers() << "\nframes: " << t.frames() << "\ndim: " << t.dim()
        << "\ndtype: f32\n";
  } else if (head == "NLSMDL01") {
    const auto m = read_checkpoint(path);
    const auto& c = m.config;
    out << "format: NLSMDL01\ninput_layers: " << c.input_layers << "\ninput_dim: " << c.input_dim
        << "\nconv_channels: " << c.conv_channels << "\nconv_layers: " << c.conv_layers
        << "\nconv_kernel: " << c.conv_kernel << "\nfc_hidden: " << c.fc_hidden << "\nn_classes: " << c.n_classes
        << "\ndropout: " << c.dropout_p << "\nparameters: " << m.params.size() << "\nbest_epoch: " << m.best_epoch
        << "\nepochs_logged: " << m.log.size() << '\n';
    const auto weights = m.params.layer_weights();
    out << "layer_weights:";
    for (float w : weights) out << ' ' << w;
    out << '\n';
  } else {
    std::ifstream text(path);
    std::string first;
    std::getline(text, first);
    text.clear();
    text.seekg(0);
    if (first.rfind("utterance_id", 0) == 0) {
      const auto utterances = read_manifest(text, path.string());
      std::map<std::string, std::size_t> counts;
      std::size_t with_embedding = 0;
      for (const auto& u : utterances) {
        ++counts[std::string(to_token(u.speaker)) + "/" + std::string(to_token(u.tag))];
        with_embedding += u.has_embedding();
      }
      out << "format: utterance manifest\nutterances: " << utterances.size() << "\nwith_embedding: " << with_embedding
          << '\n';
      for (const auto& [key, n] : counts) out << key << ": " << n << '\n';
    } else if (first.rfind("session_id", 0) == 0) {
      const auto sessions = read_session_meta(text, path.string());
      std::array<std::size_t, 3> per_level{};
      for (const auto& s : sessions) ++per_level[level_index(s.level)];
      out << "format: session metadata\nsessions: " << sessions.size() << "\nLL1: " << per_level[0]
          << "\nLL2: " << per_level[1] << "\nLL3: " << per_level[2] << '\n';
    } else {
      throw FormatError(path.string() + ": not an NLSEMB, NLSMDL, manifest or session-metadata file");
    }
  }
  if (!a.out.empty()) write_run_manifest(sub, prepare_out_dir(a.out), a.seed);
  return kExitOk;
}

void add_seed(CLI::App& sub, Args& a) {
  sub.add_option("--seed", a.seed, "Random seed")->envname("NLSKIT_SEED")->capture_default_str();
}

void add_out(CLI::App& sub, Args& a, bool required = true) {
  auto* opt = sub.add_option("--out", a.out, "Output directory (created if missing)");
  if (required) opt->required();
}

void add_training_options(CLI::App& sub, Args& a) {
  auto& t = a.cv.train;
  auto& m = a.cv.model;
  sub.add_option("--folds", a.cv.folds, "Cross-validation folds")->capture_default_str()->check(CLI::Range(2, 1000));
  sub.add_option("--min-duration", a.cv.min_duration_s, "Discard utterances shorter than this (s)")
      ->capture_default_str();
  if (sub.get_name() != "cv") return;
  sub.add_option("--jobs", a.cv.jobs, "Folds trained concurrently")->capture_default_str()->check(CLI::Range(1u, 256u));
  sub.add_option("--lr", t.lr, "Adam learning rate")->capture_default_str();
  sub.add_option("--weight-decay", t.weight_decay, "Adam L2 weight decay")->capture_default_str();
  sub.add_option("--batch-size", t.batch_size, "Mini-batch size")->capture_default_str();
  sub.add_option("--epochs", t.max_epochs, "Maximum epochs")->capture_default_str();
  sub.add_option("--patience", t.patience, "Early-stopping patience (epochs without validation-loss improvement)")
      ->capture_default_str();
  sub.add_option("--val-fraction", t.val_fraction, "Share of training utterances held out for validation")
      ->capture_default_str();
  sub.add_option("--conv-channels", m.conv_channels, "Convolution channels")->capture_default_str();
  sub.add_option("--fc-hidden", m.fc_hidden, "Hidden units of the first linear layer")->capture_default_str();
  sub.add_option("--dropout", m.dropout_p, "Dropout after each convolution")->capture_default_str();
  sub.add_flag("--save-models", a.save_models, "Write each fold's checkpoint under OUT/models");
  sub.add_flag("--verbose", a.verbose, "Print the per-epoch log to the diagnostic stream");
}

CLI::App* subcommand(CLI::App& app, const char* name, const char* description, Args& a) {
  auto* sub = app.add_subcommand(name, description);
  sub->footer(kDefaultsFooter);
  sub->add_option(kConfigFlag, a.config, "key=value file of option defaults");
  add_seed(*sub, a);
  return sub;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Args a;
  CLI::App app{"nlskit: natural-language-sample analysis toolkit", "nlskit"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(version()));
  app.footer(kDefaultsFooter);

  auto* synth_corpus = subcommand(app, "synth-corpus", "Generate a calibrated synthetic corpus", a);
  synth_corpus->add_option("--sessions", a.sessions, "Sessions per language level (LL1 LL2 LL3)")
      ->expected(3)
      ->delimiter(',')
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast)
      ->capture_default_str();
  add_out(*synth_corpus, a);

  auto* synth_embeddings = subcommand(app, "synth-embeddings", "Write synthetic NLSEMB files for a corpus", a);
  add_corpus_options(*synth_embeddings, a.corpus, a.meta);
  synth_embeddings->add_option("--dim", a.synth.dim, "Embedding width D")->capture_default_str()->check(CLI::PositiveNumber);
  synth_embeddings->add_option("--layers", a.synth.layers, "Layer count L")->capture_default_str()->check(CLI::PositiveNumber);
  synth_embeddings->add_option("--fps", a.synth.fps, "Frames per second")->capture_default_str()->check(CLI::PositiveNumber);
  synth_embeddings->add_option("--separation", a.synth.separation, "Distance of class means from the origin")
      ->capture_default_str();
  synth_embeddings->add_option("--max-duration", a.synth.max_duration_s, "Crop utterances to this length (s)")
      ->capture_default_str();
  synth_embeddings->add_option("--min-duration", a.synth.min_duration_s, "Skip utterances shorter than this (s)")
      ->capture_default_str();
  add_out(*synth_embeddings, a);

  auto* stats = subcommand(app, "stats", "Per-level session statistics with one-way ANOVA", a);
  add_corpus_options(*stats, a.corpus, a.meta);
  add_out(*stats, a);

  auto* cv = subcommand(app, "cv", "Session-level cross-validation of the classifier", a);
  add_corpus_options(*cv, a.corpus, a.meta);
  add_task_option(*cv, a.task);
  add_training_options(*cv, a);
  add_out(*cv, a);

  auto* baseline = subcommand(app, "baseline", "Majority-vote baseline under the cross-validation folds", a);
  add_corpus_options(*baseline, a.corpus, a.meta);
  add_task_option(*baseline, a.task);
  add_training_options(*baseline, a);
  add_out(*baseline, a);

  auto* project = subcommand(app, "project", "t-SNE of pooled utterance representations for one session", a);
  add_corpus_options(*project, a.corpus, a.meta);
  add_task_option(*project, a.task);
  project->add_option("--model", a.model, "Checkpoint (NLSMDL01)")->required()->check(CLI::ExistingFile);
  project->add_option("--session", a.session, "Session id")->required();
  project->add_option("--perplexity", a.perplexity, "t-SNE perplexity (default min(30, (N-1)/3))");
  project->add_option("--iterations", a.tsne.iterations, "t-SNE iterations")->capture_default_str()->check(CLI::PositiveNumber);
  project->add_option("--learning-rate", a.tsne.learning_rate, "t-SNE learning rate")->capture_default_str();
  project->add_option("--min-duration", a.cv.min_duration_s, "Discard utterances shorter than this (s)")
      ->capture_default_str();
  add_out(*project, a);

  auto* inspect = subcommand(app, "inspect", "Describe an NLSEMB, checkpoint, manifest or session file", a);
  inspect->add_option("path", a.inspect_path, "File to describe")->required()->check(CLI::ExistingFile);
  add_out(*inspect, a, false);

  try {
    auto expanded = expand_config(args);
    std::reverse(expanded.begin(), expanded.end());
    app.parse(expanded);
  } catch (const CLI::CallForHelp&) {
    const auto selected = app.get_subcommands();
    out << (selected.empty() ? app.help() : selected.front()->help());
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << version() << '\n';
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const auto selected = app.get_subcommands();
    err << (selected.empty() ? app.help() : selected.front()->help());
    return kExitUsage;
  }

  try {
    if (synth_corpus->parsed()) return run_synth_corpus(a, *synth_corpus, out);
    if (synth_embeddings->parsed()) return run_synth_embeddings(a, *synth_embeddings, out);
    if (stats->parsed()) return run_stats(a, *stats, out);
    if (cv->parsed()) return run_cv(a, *cv, out, err);
    if (baseline->parsed()) return run_baseline_cmd(a, *baseline, out);
    if (project->parsed()) return run_project(a, *project, out, err);
    if (inspect->parsed()) return run_inspect(a, *inspect, out);
  } catch (const ArgumentError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DataError& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  err << app.help();
  return kExitUsage;
}

}  // namespace nlskit::cli
