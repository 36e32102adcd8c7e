#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "nlskit/cli.hpp"
#include "nlskit/version.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using nlskit::cli::dispatch;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// A small corpus with synthetic embeddings, shared by the slower tests.
class Workspace {
 public:
  Workspace() : dir_("cli") {
    REQUIRE(run({"synth-corpus", "--seed", "5", "--sessions", "2,2,2", "--out", path("corpus")}).code == 0);
    REQUIRE(run({"synth-embeddings", "--corpus", path("corpus/manifest.tsv"), "--meta", path("corpus/sessions.tsv"),
                 "--fps", "2", "--dim", "8", "--seed", "5", "--out", path("emb")})
                .code == 0);
    std::ofstream cfg(dir_.path() / "fast.cfg");
    cfg << "# small architecture for tests\nconv-channels = 16\nfc-hidden=8\nlr=0.002\nepochs=3\n";
  }
  std::string path(const std::string& rel) const { return (dir_.path() / rel).string(); }

 private:
  oracle::TempDir dir_;
};

}  // namespace

TEST_CASE("help documents the training defaults on every subcommand") {
  for (const char* sub : {"synth-corpus", "synth-embeddings", "stats", "cv", "baseline", "project", "inspect"}) {
    CAPTURE(sub);
    const auto r = run({sub, "--help"});
    CHECK(r.code == 0);
    for (const char* needle : {"lr 5e-5", "weight decay 1e-4", "batch size 64", "40", "patience 5", "8:2",
                               "256 channels", "dropout 0.2", "3 s", "0.1 s"})
      CHECK(r.out.find(needle) != std::string::npos);
  }
  const auto cv = run({"cv", "--help"});
  CHECK(cv.out.find("--lr") != std::string::npos);
  CHECK(cv.out.find("5e-05") != std::string::npos);
  CHECK(cv.out.find("--jobs") != std::string::npos);
}

TEST_CASE("usage errors exit 1 with usage text on the diagnostic stream") {
  auto r = run({});
  CHECK(r.code == 1);
  CHECK(r.err.find("Usage") != std::string::npos);
  r = run({"frobnicate"});
  CHECK(r.code == 1);
  r = run({"stats", "--bogus"});
  CHECK(r.code == 1);
  CHECK(r.err.find("Usage") != std::string::npos);
  CHECK(r.out.empty());
  r = run({"cv", "--task", "child-adult"});
  CHECK(r.code == 1);
  r = run({"synth-corpus", "--out", "x", "--seed", "abc"});
  CHECK(r.code == 1);
  CHECK(run({"--version"}).out == std::string(nlskit::version()) + "\n");
}

TEST_CASE("synth-corpus and stats write their files and a run manifest") {
  oracle::TempDir dir("cli-stats");
  const auto d = dir.path();
  REQUIRE(run({"synth-corpus", "--seed", "7", "--out", (d / "c").string()}).code == 0);
  CHECK(fs::exists(d / "c/manifest.tsv"));
  CHECK(fs::exists(d / "c/sessions.tsv"));
  const auto before = slurp(d / "c/manifest.tsv");

  const auto r = run({"stats", "--corpus", (d / "c/manifest.tsv").string(), "--meta", (d / "c/sessions.tsv").string(),
                      "--out", (d / "s").string()});
  CHECK(r.code == 0);
  CHECK(fs::exists(d / "s/statistics.tsv"));
  CHECK(fs::exists(d / "s/boxplot.csv"));
  CHECK(slurp(d / "c/manifest.tsv") == before);

  const auto manifest = slurp(d / "s/run_manifest.txt");
  CHECK(manifest.find("version=" + std::string(nlskit::version())) != std::string::npos);
  CHECK(manifest.find("command=stats") != std::string::npos);
  CHECK(manifest.find("seed=0") != std::string::npos);
}

TEST_CASE("NLSKIT_SEED is the fallback seed") {
  oracle::TempDir dir("cli-env");
  ::setenv("NLSKIT_SEED", "31", 1);
  REQUIRE(run({"synth-corpus", "--sessions", "2,2,2", "--out", (dir.path() / "a").string()}).code == 0);
  REQUIRE(run({"synth-corpus", "--sessions", "2,2,2", "--seed", "4", "--out", (dir.path() / "b").string()}).code == 0);
  ::unsetenv("NLSKIT_SEED");
  CHECK(slurp(dir.path() / "a/run_manifest.txt").find("seed=31") != std::string::npos);
  CHECK(slurp(dir.path() / "b/run_manifest.txt").find("seed=4") != std::string::npos);
}

TEST_CASE("stats on a corpus with too few sessions is a data error") {
  oracle::TempDir dir("cli-few");
  std::ofstream(dir.path() / "m.tsv") << "utterance_id\tsession_id\tspeaker\ttag\tstart_s\tend_s\tembedding_path\n";
  std::ofstream(dir.path() / "s.tsv") << "session_id\tlevel\tgender\tage_months\tactivities\ns1\t1\tm\t60\t1\n";
  const auto r = run({"stats", "--corpus", (dir.path() / "m.tsv").string(), "--meta", (dir.path() / "s.tsv").string(),
                      "--out", (dir.path() / "o").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("LL1 has 1") != std::string::npos);
}

TEST_CASE("cv is reproducible, honours config files, and feeds project and inspect") {
  Workspace ws;
  const std::vector<std::string> base{"cv",     "--corpus", ws.path("emb/manifest.tsv"), "--meta", ws.path("emb/sessions.tsv"),
                                      "--task", "child-adult", "--seed", "11", "--config", ws.path("fast.cfg")};
  auto first = base;
  first.insert(first.end(), {"--out", ws.path("cv1"), "--save-models"});
  auto second = base;
  second.insert(second.end(), {"--out", ws.path("cv2"), "--jobs", "2"});
  const auto r1 = run(first);
  REQUIRE(r1.code == 0);
  REQUIRE(run(second).code == 0);
  CHECK(slurp(ws.path("cv1/eval_model.tsv")) == slurp(ws.path("cv2/eval_model.tsv")));
  CHECK(slurp(ws.path("cv1/eval_baseline.tsv")) == slurp(ws.path("cv2/eval_baseline.tsv")));
  CHECK(r1.out.find("model overall f1_macro") != std::string::npos);

  const auto manifest = slurp(ws.path("cv1/run_manifest.txt"));
  CHECK(manifest.find("conv-channels=16") != std::string::npos);
  CHECK(manifest.find("epochs=3") != std::string::npos);
  CHECK(manifest.find("seed=11") != std::string::npos);

  // A flag given after --config wins over the file.
  auto override = base;
  override.insert(override.end(), {"--epochs", "1", "--out", ws.path("cv3")});
  REQUIRE(run(override).code == 0);
  std::istringstream log(slurp(ws.path("cv3/training_log.tsv")));
  std::string line;
  std::getline(log, line);
  while (std::getline(log, line)) CHECK(line.find("\t1\t") == 1);

  const auto ckpt = ws.path("cv1/models/fold0.nlsmdl");
  REQUIRE(fs::exists(ckpt));
  const auto ins = run({"inspect", ckpt});
  CHECK(ins.code == 0);
  CHECK(ins.out.find("conv_channels: 16") != std::string::npos);
  CHECK(run({"inspect", ws.path("emb/embeddings/s001_u0001.nlsemb")}).out.find("dim: 8") != std::string::npos);

  const auto proj = run({"project", "--corpus", ws.path("emb/manifest.tsv"), "--meta", ws.path("emb/sessions.tsv"),
                         "--model", ckpt, "--task", "child-adult", "--session", "s005", "--iterations", "100", "--out",
                         ws.path("proj")});
  REQUIRE(proj.code == 0);
  std::istringstream csv(slurp(ws.path("proj/projection.csv")));
  std::getline(csv, line);
  CHECK(line == "utterance_id,speaker,tag,x,y");
  std::size_t rows = 0;
  while (std::getline(csv, line)) {
    ++rows;
    CHECK(line.find(",intelligible,") != std::string::npos);
  }
  CHECK(rows >= 4);
}

TEST_CASE("cv without embedding paths exits 2 naming the first missing utterance") {
  oracle::TempDir dir("cli-missing");
  const auto d = dir.path();
  REQUIRE(run({"synth-corpus", "--seed", "2", "--sessions", "2,2,2", "--out", (d / "c").string()}).code == 0);
  const auto r = run({"cv", "--corpus", (d / "c/manifest.tsv").string(), "--meta", (d / "c/sessions.tsv").string(),
                      "--task", "speech-voc", "--out", (d / "o").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("utterance s001_u") != std::string::npos);
  CHECK(r.err.find("embedding_path") != std::string::npos);
}

TEST_CASE("baseline subcommand") {
  oracle::TempDir dir("cli-base");
  const auto d = dir.path();
  REQUIRE(run({"synth-corpus", "--seed", "2", "--sessions", "2,2,2", "--out", (d / "c").string()}).code == 0);
  const auto r = run({"baseline", "--corpus", (d / "c/manifest.tsv").string(), "--meta", (d / "c/sessions.tsv").string(),
                      "--task", "speech-voc", "--folds", "3", "--out", (d / "b").string()});
  CHECK(r.code == 0);
  CHECK(fs::exists(d / "b/eval_baseline.tsv"));
  CHECK(fs::exists(d / "b/fold_plan.tsv"));
  CHECK(r.out.find("baseline overall f1_macro") != std::string::npos);
}
