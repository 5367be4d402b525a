#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "hot/train.hpp"

using namespace hot;
namespace fs = std::filesystem;

namespace {

SynthDataset small_data() {
  SynthSpec s;
  s.n_stocks = 3;
  s.n_days = 90;
  s.seed = 11;
  return synth_generate(s);
}

RunConfig small_run() {
  return run_config({{"hidden", "8"}, {"heads", "2"}, {"blocks", "1"}, {"features", "8"}, {"max_epochs", "3"},
                     {"patience", "3"}, {"batch_size", "8"}, {"lr", "0.01"}, {"seed", "2"}});
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

int run(const std::string& cmd) {
  const int rc = std::system((cmd + " > /dev/null 2>&1").c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("data preparation") {
  const auto d = small_data();
  const RunConfig cfg = small_run();
  const PreparedData p = prepare_data(d.bars, d.text, cfg);
  CHECK(p.vocabulary.size() == 3);
  CHECK(p.windows == 90 - 5 + 1);
  CHECK(p.fingerprint == fingerprint(d.bars, d.text));
  CHECK(!p.split.train.empty());
  CHECK(!p.split.test.empty());
}

TEST_CASE("training") {
  const auto d = small_data();
  const PreparedData data = prepare_data(d.bars, d.text, small_run());

  SUBCASE("same seed, same history and manifest") {
    const auto a = train(small_run(), data), b = train(small_run(), data);
    REQUIRE(a.history.size() >= 1);
    CHECK(history_csv(a.history) == history_csv(b.history));
    CHECK(manifest_text(a, data) == manifest_text(b, data));
    CHECK(a.best.params == b.best.params);
  }
  SUBCASE("zero learning rate leaves the model unchanged") {
    RunConfig c = small_run();
    c.adam.lr = 0.0;
    const auto r = train(c, data);
    REQUIRE(r.history.size() == 3);
    for (const auto& e : r.history) {
      CHECK(e.val.f1 == r.history[0].val.f1);
      CHECK(e.val.loss == r.history[0].val.loss);
    }
    CHECK(r.best.params == init_model(c.model, data.vocabulary).params);
    CHECK(r.best_epoch == 1);
  }
  SUBCASE("best epoch is the first with the highest validation F1") {
    const auto r = train(small_run(), data);
    double best = -1;
    std::size_t at = 0;
    for (const auto& e : r.history)
      if (e.val.f1 > best) best = e.val.f1, at = e.epoch;
    CHECK(r.best_epoch == at);
    CHECK(r.best_val.f1 == best);
    const EvalMetrics again = evaluate(r.best, data.split.test);
    CHECK(again.accuracy == r.test.accuracy);
    CHECK(again.counts.total() == r.test.counts.total());
  }
  SUBCASE("manifest parses back") {
    const auto r = train(small_run(), data);
    const ManifestView v = parse_manifest(manifest_text(r, data));
    std::istringstream h(history_csv(r.history));
    std::vector<std::string> rows;
    for (std::string line; std::getline(h, line);) rows.push_back(line);
    CHECK(v.history == rows);
    CHECK(run_config(v.config).seed == 2);
    CHECK(to_text(run_config(v.config)) == to_text(small_run()));
    CHECK(!v.best.empty());
    CHECK(!v.test.empty());
  }
  SUBCASE("a one-point grid repeats plain training") {
    const auto g = run_grid({small_run()}, d.bars, d.text, 2);
    REQUIRE(g.entries.size() == 1);
    const auto r = train(small_run(), data);
    CHECK(history_csv(g.best_run.history) == history_csv(r.history));
    CHECK(g.entries[0].val_f1 == r.best_val.f1);
  }
}

TEST_CASE("evaluation of an empty split") {
  const auto d = small_data();
  const PreparedData data = prepare_data(d.bars, d.text, small_run());
  const Model m = init_model(small_run().model, data.vocabulary);
  const EvalMetrics e = evaluate(m, {});
  CHECK(e.scored() == 0);
  CHECK(e.accuracy == 0.0);
  CHECK(e.f1 == 0.0);
}

TEST_CASE("command line round trip") {
  const std::string cli = HOT_CLI_PATH;
  TempDir dir("hot_cli_train_test");
  const fs::path spec = dir.path / "synth.cfg", cfg = dir.path / "run.cfg";
  std::ofstream(spec) << "n_stocks=3\nn_days=80\nseed=4\n";
  std::ofstream(cfg) << "hidden=8\nheads=2\nblocks=1\nmax_epochs=2\nbatch_size=8\nlr=0.01\n";
  const fs::path data = dir.path / "data";
  REQUIRE(run(cli + " synth --config " + spec.string() + " --out " + data.string()) == 0);
  const std::string inputs =
      " --prices " + (data / "prices.csv").string() + " --embeddings " + (data / "embeddings.bin").string();
  const fs::path a = dir.path / "a", b = dir.path / "b";
  REQUIRE(run(cli + " train --quiet --config " + cfg.string() + inputs + " --out " + a.string()) == 0);
  REQUIRE(run(cli + " train --quiet --config " + cfg.string() + inputs + " --out " + b.string()) == 0);
  CHECK(slurp(a / "manifest.txt") == slurp(b / "manifest.txt"));
  CHECK(slurp(a / "checkpoint.bin") == slurp(b / "checkpoint.bin"));
  CHECK(run(cli + " replay --manifest " + (a / "manifest.txt").string() + inputs) == 0);
  CHECK(run(cli + " evaluate --checkpoint " + (a / "checkpoint.bin").string() + inputs + " --split test") == 0);

  // A different seed changes the history, so replaying against it must fail.
  const fs::path c = dir.path / "c";
  REQUIRE(run(cli + " train --quiet --seed 9 --config " + cfg.string() + inputs + " --out " + c.string()) == 0);
  std::string m = slurp(c / "manifest.txt");
  const std::string ha = slurp(a / "manifest.txt");
  const auto cut = [](const std::string& s) { return s.substr(0, s.find("[history]")); };
  std::ofstream(dir.path / "mixed.txt") << cut(ha) << m.substr(m.find("[history]"));
  CHECK(run(cli + " replay --manifest " + (dir.path / "mixed.txt").string() + inputs) == 1);

  CHECK(run(cli + " train --config " + (dir.path / "nope.cfg").string() + inputs + " --out " + a.string()) == 2);
  CHECK(run(cli + " train --prices /nonexistent.csv --embeddings x --out " + a.string()) == 3);
}
