// Command-line front end: train, grid, evaluate, verify, decompose, bench,
// synth, ablate and replay.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "hot/bench.hpp"
#include "hot/config.hpp"
#include "hot/kernels.hpp"
#include "hot/kron.hpp"
#include "hot/train.hpp"
#include "hot/verify.hpp"

namespace fs = std::filesystem;
using namespace hot;

namespace {

enum Exit { kOk = 0, kVerifyFailed = 1, kUsage = 2, kData = 3, kNumeric = 4 };

struct DataArgs {
  std::string config, prices, embeddings, out;
  std::optional<std::uint64_t> seed;
  std::string variant, ablation;
};

void add_data_flags(CLI::App* cmd, DataArgs& a, bool need_out = true) {
  cmd->add_option("--config", a.config, "key=value config file");
  cmd->add_option("--prices", a.prices, "price CSV")->required();
  cmd->add_option("--embeddings", a.embeddings, "binary text-embedding file")->required();
  auto* out = cmd->add_option("--out", a.out, "output directory");
  if (need_out) out->required();
  cmd->add_option("--seed", a.seed, "seed override");
  cmd->add_option("--variant", a.variant, "exact|factored|kernelized");
  cmd->add_option("--ablation", a.ablation, "none|stock|time|both");
}

KeyValues load_kv(const std::string& path) { return path.empty() ? KeyValues{} : read_key_values(path); }

void apply_overrides(RunConfig& c, const DataArgs& a) {
  if (a.seed) set_key(c, "seed", std::to_string(*a.seed));
  if (!a.variant.empty()) set_key(c, "variant", a.variant);
  if (!a.ablation.empty()) set_key(c, "ablation", a.ablation);
  c.validate();
}

struct Inputs {
  std::vector<PriceBar> bars;
  EmbeddingIndex text;
};

Inputs load_inputs(const DataArgs& a) { return {read_prices_csv(a.prices), read_embeddings(a.embeddings)}; }

void print_epoch(const EpochRecord& e) {
  std::fprintf(stderr, "epoch %zu loss %.5f train_acc %.4f val_acc %.4f val_f1 %.4f val_mcc %.4f\n", e.epoch,
               e.train_loss, e.train.accuracy, e.val.accuracy, e.val.f1, e.val.mcc);
}

int finish_train(const TrainOutcome& r, const PreparedData& data, const std::string& out) {
  fs::create_directories(out);
  write_text_atomic(out + "/manifest.txt", manifest_text(r, data));
  save_checkpoint(out + "/checkpoint.bin", r.best);
  char buf[64];
  std::snprintf(buf, sizeof buf, "train_seconds=%.3f\n", r.seconds);
  write_text_atomic(out + "/timings.txt", buf);
  std::printf("status=%s best_epoch=%zu val_f1=%.4f test_acc=%.4f test_f1=%.4f test_mcc=%.4f\n", r.status.c_str(),
              r.best_epoch, r.best_val.f1, r.test.accuracy, r.test.f1, r.test.mcc);
  return r.status == "ok" ? kOk : kNumeric;
}

int cmd_train(const DataArgs& a, bool quiet) {
  RunConfig cfg = run_config(load_kv(a.config));
  apply_overrides(cfg, a);
  const Inputs in = load_inputs(a);
  const PreparedData data = prepare_data(in.bars, in.text, cfg);
  for (const auto& w : data.split.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  const auto r = train(cfg, data, quiet ? std::function<void(const EpochRecord&)>{} : print_epoch);
  return finish_train(r, data, a.out);
}

int cmd_grid(const DataArgs& a, std::size_t jobs) {
  Grid grid = parse_grid(load_kv(a.config));
  RunConfig base;
  if (!a.variant.empty()) set_key(base, "variant", a.variant);
  if (!a.ablation.empty()) set_key(base, "ablation", a.ablation);
  std::uint64_t seed = 0;
  for (const auto& [k, v] : grid.fixed)
    if (k == "seed") seed = std::stoull(v);
  if (a.seed) seed = *a.seed;
  auto configs = grid.expand(base);
  std::fprintf(stderr, "grid: %zu combinations\n", configs.size());
  const Inputs in = load_inputs(a);
  const auto g = run_grid(std::move(configs), in.bars, in.text, seed, jobs, [](const GridEntry& e) {
    std::fprintf(stderr, "combo %zu status %s val_f1 %.4f\n", e.index, e.status.c_str(), e.val_f1);
  });
  fs::create_directories(a.out);
  std::ostringstream csv;
  csv << "combo";
  for (const auto& [k, vals] : grid.axes) csv << ',' << k;
  csv << ",status,best_epoch,val_f1\n";
  for (const auto& e : g.entries) {
    csv << e.index;
    for (const auto& [k, v] : grid.combo(e.index)) csv << ',' << v;
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", e.val_f1);
    csv << ',' << e.status << ',' << e.best_epoch << ',' << buf << '\n';
  }
  write_text_atomic(a.out + "/grid.csv", csv.str());
  const PreparedData data = prepare_data(in.bars, in.text, g.best_run.cfg);
  std::printf("best combo %zu\n", g.entries[g.best].index);
  return finish_train(g.best_run, data, a.out + "/best");
}

int cmd_evaluate(const DataArgs& a, const std::string& checkpoint, const std::string& split) {
  RunConfig cfg = run_config(load_kv(a.config));
  const Model m = load_checkpoint(checkpoint);
  cfg.model = m.cfg;
  const Inputs in = load_inputs(a);
  const PreparedData data = prepare_data(in.bars, in.text, cfg);
  std::vector<WindowSample> all;
  const std::vector<WindowSample>* set = nullptr;
  if (split == "train") set = &data.split.train;
  else if (split == "val") set = &data.split.val;
  else if (split == "test") set = &data.split.test;
  else if (split == "all") {
    all = make_windows(in.bars, in.text, cfg.window, cfg.thresholds);
    set = &all;
  } else {
    throw ConfigError("evaluate: split must be train, val, test or all");
  }
  const EvalMetrics e = evaluate(m, *set);
  std::printf("split,scored,acc,f1,mcc,loss\n%s,%zu,%.17g,%.17g,%.17g,%.17g\n", split.c_str(), e.scored(), e.accuracy,
              e.f1, e.mcc, e.loss);
  return kOk;
}

int cmd_verify(const std::string& suite, const std::string& report) {
  const auto results = run_verify(suite);
  write_verify_report(std::cout, results);
  if (!report.empty()) {
    std::ofstream out(report);
    if (!out) throw DataError("cannot write " + report);
    write_verify_report(out, results);
  }
  return all_passed(results) ? kOk : kVerifyFailed;
}

int cmd_decompose(std::size_t n, std::size_t t, std::size_t d, std::size_t heads, std::uint64_t seed,
                  const std::string& out) {
  std::mt19937_64 rng(seed);
  const Tensor x = random_normal({n, t, d}, rng);
  const auto params = init_attention_params(d, heads, std::max<std::size_t>(1, d / heads), rng);
  const auto rows = attention_rank_profile(x, params);
  write_rank_profile_csv(std::cout, rows);
  if (!out.empty()) {
    std::ostringstream os;
    write_rank_profile_csv(os, rows);
    write_text_atomic(out, os.str());
  }
  return kOk;
}

int cmd_bench(const std::string& variant, const std::vector<std::size_t>& ns, const std::vector<std::size_t>& ts,
              const std::vector<std::size_t>& ds, std::size_t heads, std::size_t features, std::size_t reps,
              int threads, const std::string& out) {
  if (threads > 0) kernels::set_threads(threads);
  const Variant v = parse_variant(variant);
  std::vector<BenchRow> rows;
  write_bench_csv(std::cout, {}, true);
  for (auto n : ns)
    for (auto t : ts)
      for (auto d : ds) {
        rows.push_back(bench_case({v, n, t, d, heads, features}, reps));
        write_bench_csv(std::cout, {rows.back()}, false);
        std::cout.flush();
      }
  if (!out.empty()) {
    std::ostringstream os;
    write_bench_csv(os, rows);
    write_text_atomic(out, os.str());
  }
  return kOk;
}

int cmd_synth(const std::string& spec_path, const std::string& out, std::optional<std::uint64_t> seed) {
  SynthSpec spec;
  if (!spec_path.empty()) {
    std::ifstream in(spec_path);
    if (!in) throw DataError("cannot open " + spec_path);
    spec = parse_synth_spec(in);
  }
  if (seed) spec.seed = *seed;
  const SynthDataset ds = synth_generate(spec);
  fs::create_directories(out);
  {
    std::ofstream p(out + "/prices.csv");
    write_prices_csv(p, ds.bars);
    std::ofstream e(out + "/embeddings.bin", std::ios::binary);
    write_embeddings(e, ds.text);
    if (!p || !e) throw DataError("cannot write synthetic data to " + out);
  }
  char buf[64];
  std::snprintf(buf, sizeof buf, "bayes_accuracy=%.17g\n", synth_bayes_accuracy(spec));
  write_text_atomic(out + "/synth.txt", to_text(spec) + buf);
  std::printf("%zu bars, %zu embeddings, %s", ds.bars.size(), ds.text.size(), buf);
  return kOk;
}

int cmd_ablate(const DataArgs& a, const std::string& groups) {
  RunConfig cfg = run_config(load_kv(a.config));
  apply_overrides(cfg, a);
  AblationGroups g = AblationGroups::all;
  if (groups == "dims") g = AblationGroups::dims;
  else if (groups == "modality") g = AblationGroups::modality;
  else if (groups != "all") throw ConfigError("ablate: groups must be dims, modality or all");
  const Inputs in = load_inputs(a);
  if (in.text.empty()) throw DataError("ablate: the dataset has no text embeddings");
  const PreparedData data = prepare_data(in.bars, in.text, cfg);
  const auto cells = run_ablation(cfg, data, g, [](const AblationCell& c) {
    std::fprintf(stderr, "%s %s %s %s test_acc %.4f\n", c.group.c_str(), to_string(c.modality).c_str(),
                 to_string(c.variant).c_str(), to_string(c.dims).c_str(), c.test.accuracy);
  });
  const std::string csv = ablation_csv(cells);
  std::cout << csv;
  fs::create_directories(a.out);
  write_text_atomic(a.out + "/ablation.csv", csv);
  return kOk;
}

int cmd_replay(const std::string& manifest, const DataArgs& a) {
  const ManifestView v = read_manifest(manifest);
  const RunConfig cfg = run_config(v.config);
  const Inputs in = load_inputs(a);
  const PreparedData data = prepare_data(in.bars, in.text, cfg);
  char fp[24];
  std::snprintf(fp, sizeof fp, "%016llx", static_cast<unsigned long long>(data.fingerprint));
  if (v.header.count("data_fingerprint") && v.header.at("data_fingerprint") != fp)
    throw DataError("replay: data fingerprint differs from the manifest");
  const auto r = train(cfg, data);
  const std::string now = history_csv(r.history);
  std::string then;
  for (const auto& line : v.history) then += line + "\n";
  const bool same = now == then;
  std::printf("replay %s: %zu epochs\n", same ? "identical" : "DIFFERS", r.history.size());
  if (!a.out.empty()) finish_train(r, data, a.out);
  return same ? kOk : kVerifyFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Higher-order attention toolkit"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "OpenMP threads (0: runtime default)");

  DataArgs train_a, grid_a, eval_a, ablate_a, replay_a;
  bool quiet = false;
  auto* train_c = app.add_subcommand("train", "train one configuration");
  add_data_flags(train_c, train_a);
  train_c->add_flag("--quiet", quiet, "no per-epoch log");

  std::size_t jobs = 1;
  auto* grid_c = app.add_subcommand("grid", "grid search, best by validation F1");
  add_data_flags(grid_c, grid_a);
  grid_c->add_option("--jobs", jobs, "parallel worker threads");

  std::string checkpoint, split = "test";
  auto* eval_c = app.add_subcommand("evaluate", "score a checkpoint");
  add_data_flags(eval_c, eval_a, false);
  eval_c->add_option("--checkpoint", checkpoint)->required();
  eval_c->add_option("--split", split, "train|val|test|all");

  std::string suite = "all", report;
  auto* verify_c = app.add_subcommand("verify", "run invariant suites");
  verify_c->add_option("--suite", suite, "tensors|attention|kron|gradients|all");
  verify_c->add_option("--report", report, "also write the CSV report here");

  std::size_t dn = 3, dt = 4, dd = 8, dheads = 1;
  std::uint64_t dseed = 0;
  std::string dout;
  auto* dec_c = app.add_subcommand("decompose", "Kronecker rank profile of exact attention");
  dec_c->add_option("--n", dn);
  dec_c->add_option("--t", dt);
  dec_c->add_option("--d", dd);
  dec_c->add_option("--heads", dheads);
  dec_c->add_option("--seed", dseed);
  dec_c->add_option("--out", dout, "CSV path");

  std::string bvariant = "kernelized", bout;
  std::vector<std::size_t> bn{4}, bt{256, 512, 1024}, bd{32};
  std::size_t bheads = 4, bfeat = 64, breps = 5;
  auto* bench_c = app.add_subcommand("bench", "attention timing sweep");
  bench_c->add_option("--variant", bvariant);
  bench_c->add_option("--n", bn)->delimiter(',');
  bench_c->add_option("--t", bt)->delimiter(',');
  bench_c->add_option("--d", bd)->delimiter(',');
  bench_c->add_option("--heads", bheads);
  bench_c->add_option("--features", bfeat);
  bench_c->add_option("--reps", breps);
  bench_c->add_option("--out", bout, "CSV path");

  std::string sconfig, sout;
  std::optional<std::uint64_t> sseed;
  auto* synth_c = app.add_subcommand("synth", "generate a planted-signal dataset");
  synth_c->add_option("--config", sconfig, "key=value generator spec");
  synth_c->add_option("--out", sout)->required();
  synth_c->add_option("--seed", sseed);

  std::string groups = "all";
  auto* ablate_c = app.add_subcommand("ablate", "attention-dimension and modality ablations");
  add_data_flags(ablate_c, ablate_a);
  ablate_c->add_option("--groups", groups, "dims|modality|all");

  std::string manifest;
  auto* replay_c = app.add_subcommand("replay", "re-run a manifest and compare its history");
  replay_c->add_option("--manifest", manifest)->required();
  replay_c->add_option("--prices", replay_a.prices)->required();
  replay_c->add_option("--embeddings", replay_a.embeddings)->required();
  replay_c->add_option("--out", replay_a.out, "optional output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }
  if (threads > 0) kernels::set_threads(threads);

  try {
    if (*train_c) return cmd_train(train_a, quiet);
    if (*grid_c) return cmd_grid(grid_a, jobs);
    if (*eval_c) return cmd_evaluate(eval_a, checkpoint, split);
    if (*verify_c) return cmd_verify(suite, report);
    if (*dec_c) return cmd_decompose(dn, dt, dd, dheads, dseed, dout);
    if (*bench_c) return cmd_bench(bvariant, bn, bt, bd, bheads, bfeat, breps, threads, bout);
    if (*synth_c) return cmd_synth(sconfig, sout, sseed);
    if (*ablate_c) return cmd_ablate(ablate_a, groups);
    if (*replay_c) return cmd_replay(manifest, replay_a);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return kNumeric;
  } catch (const std::domain_error& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return kNumeric;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kData;
  }
  return kUsage;
}
