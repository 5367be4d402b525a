#include "hot/train.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

namespace hot {

namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string hex(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Scores one sample's logits against its valid labels.
void score(const Tensor& logits, const WindowSample& s, ConfusionCounts& c, double& loss_sum) {
  const auto pred = predict(logits);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (s.label_valid[i] == 0.0) continue;
    const int y = s.labels[i] != 0.0;
    c.add(pred[i], y);
    const double l = logits[i];
    loss_sum += (l > 0 ? l + std::log1p(std::exp(-l)) : std::log1p(std::exp(l))) - y * l;
  }
}

// Data settings of a run; configs that agree here share prepared data.
std::string data_key(const RunConfig& c) {
  return std::to_string(c.window) + "|" + num(c.thresholds.positive) + "|" + num(c.thresholds.negative) + "|" +
         num(c.split.train) + "|" + num(c.split.val);
}

}  // namespace

EvalMetrics metrics_from(const ConfusionCounts& c, double loss_sum) {
  EvalMetrics m;
  m.counts = c;
  if (c.total() == 0) return m;
  const auto af = accuracy_f1(c);
  m.accuracy = af.accuracy;
  m.f1 = af.f1;
  m.mcc = mcc(c);
  m.loss = loss_sum / double(c.total());
  return m;
}

EvalMetrics evaluate(const Model& m, const std::vector<WindowSample>& samples) {
  std::vector<Tensor> out(samples.size());
  const auto n = static_cast<std::ptrdiff_t>(samples.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto& s = samples[static_cast<std::size_t>(i)];
    if (s.valid_labels()) out[static_cast<std::size_t>(i)] = logits(m, model_input(m, s));
  }
  ConfusionCounts c;
  double loss_sum = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (!out[i].empty()) score(out[i], samples[i], c, loss_sum);
  return metrics_from(c, loss_sum);
}

PreparedData prepare_data(const std::vector<PriceBar>& bars, const EmbeddingIndex& text, const RunConfig& cfg) {
  PreparedData d;
  d.fingerprint = fingerprint(bars, text);
  d.vocabulary = stock_vocabulary(bars);
  auto windows = make_windows(bars, text, cfg.window, cfg.thresholds);
  d.windows = windows.size();
  d.split = temporal_split(std::move(windows), cfg.split);
  return d;
}

TrainOutcome train(const RunConfig& cfg_in, const PreparedData& data,
                   const std::function<void(const EpochRecord&)>& on_epoch) {
  const auto start = std::chrono::steady_clock::now();
  RunConfig cfg = cfg_in;
  cfg.validate();

  TrainOutcome r;
  r.cfg = cfg;
  Model model = init_model(cfg.model, data.vocabulary);
  r.best = model;
  AdamState state;

  const auto& train_set = data.split.train;
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < train_set.size(); ++i)
    if (train_set[i].valid_labels()) order.push_back(i);
  std::mt19937_64 shuffle_rng(mix(cfg.seed ^ 0x5851F42D4C957F2DULL));

  double best_f1 = -1.0;
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    ConfusionCounts train_counts;
    double train_loss_sum = 0.0, epoch_loss = 0.0;
    std::size_t epoch_count = 0;
    bool finite = true;

    for (std::size_t b0 = 0; b0 < order.size() && finite; b0 += cfg.batch_size) {
      const std::size_t b1 = std::min(order.size(), b0 + cfg.batch_size);
      std::vector<LossGrad> parts(b1 - b0);
      const auto count = static_cast<std::ptrdiff_t>(b1 - b0);
#pragma omp parallel for schedule(dynamic)
      for (std::ptrdiff_t k = 0; k < count; ++k) {
        const std::size_t idx = order[b0 + static_cast<std::size_t>(k)];
        const auto& s = train_set[idx];
        std::mt19937_64 drop(mix(cfg.seed ^ mix(epoch * 0x100000001B3ULL + idx)));
        parts[static_cast<std::size_t>(k)] =
            loss_and_grad(model, model.params, model_input(model, s), s.labels, s.label_valid,
                          cfg.model.dropout > 0.0 ? &drop : nullptr);
      }
      std::size_t total = 0;
      for (const auto& p : parts) total += p.count;
      if (total == 0) continue;
      Params grads;
      double batch_loss = 0.0;
      for (std::size_t k = 0; k < parts.size(); ++k) {
        auto& p = parts[k];
        if (!std::isfinite(p.loss)) finite = false;
        const double w = double(p.count) / double(total);
        batch_loss += w * p.loss;
        for (auto& [name, g] : p.grads) {
          auto it = grads.find(name);
          if (it == grads.end()) {
            grads.emplace(name, w * g);
          } else {
            double* dst = it->second.raw();
            const double* src = g.raw();
            for (std::size_t e = 0; e < g.size(); ++e) dst[e] += w * src[e];
          }
        }
        score(p.logits, train_set[order[b0 + k]], train_counts, train_loss_sum);
      }
      if (!finite || !std::isfinite(batch_loss)) {
        finite = false;
        break;
      }
      epoch_loss += batch_loss * double(total);
      epoch_count += total;
      try {
        adam_step(model.params, grads, state, cfg.adam);
      } catch (const std::domain_error&) {
        finite = false;
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = epoch_count ? epoch_loss / double(epoch_count) : 0.0;
    rec.train = metrics_from(train_counts, train_loss_sum);
    if (!finite) {
      r.status = "non_finite_loss";
      r.history.push_back(rec);
      if (on_epoch) on_epoch(rec);
      break;
    }
    rec.val = evaluate(model, data.split.val);
    r.history.push_back(rec);
    if (on_epoch) on_epoch(rec);

    const double f1 = data.split.val.empty() ? rec.train.f1 : rec.val.f1;
    if (f1 > best_f1) {
      best_f1 = f1;
      since_best = 0;
      r.best_epoch = epoch;
      r.best_val = rec.val;
      r.best = model;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  r.test = evaluate(r.best, data.split.test);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

std::string history_csv(const std::vector<EpochRecord>& history) {
  std::ostringstream os;
  os << "epoch,train_loss,train_acc,train_f1,train_mcc,val_loss,val_acc,val_f1,val_mcc\n";
  for (const auto& e : history)
    os << e.epoch << ',' << num(e.train_loss) << ',' << num(e.train.accuracy) << ',' << num(e.train.f1) << ','
       << num(e.train.mcc) << ',' << num(e.val.loss) << ',' << num(e.val.accuracy) << ',' << num(e.val.f1) << ','
       << num(e.val.mcc) << '\n';
  return os.str();
}

std::string manifest_text(const TrainOutcome& r, const PreparedData& data) {
  std::ostringstream os;
  os << "# run manifest\n[run]\nformat=1\nstatus=" << r.status << "\ndata_fingerprint=" << hex(data.fingerprint)
     << "\nwindows=" << data.windows << "\ntrain_samples=" << data.split.train.size()
     << "\nval_samples=" << data.split.val.size() << "\ntest_samples=" << data.split.test.size()
     << "\nstocks=" << data.vocabulary.size() << "\nepochs_run=" << r.history.size() << "\n";
  for (std::size_t i = 0; i < data.split.warnings.size(); ++i)
    os << "warning" << i << '=' << data.split.warnings[i] << '\n';
  os << "[config]\n" << to_text(r.cfg);
  os << "[history]\n" << history_csv(r.history);
  os << "[best]\nepoch=" << r.best_epoch << "\nval_acc=" << num(r.best_val.accuracy) << "\nval_f1=" << num(r.best_val.f1)
     << "\nval_mcc=" << num(r.best_val.mcc) << "\n";
  os << "[test]\nscored=" << r.test.scored() << "\nacc=" << num(r.test.accuracy) << "\nf1=" << num(r.test.f1)
     << "\nmcc=" << num(r.test.mcc) << "\ntp=" << r.test.counts.tp << "\ntn=" << r.test.counts.tn
     << "\nfp=" << r.test.counts.fp << "\nfn=" << r.test.counts.fn << "\n";
  return os.str();
}

void write_text_atomic(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp);
    out << text;
    if (!out) throw DataError("write failed for " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw DataError("cannot rename " + tmp + " to " + path);
}

ManifestView parse_manifest(const std::string& text) {
  ManifestView v;
  std::istringstream in(text);
  std::string section, line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[' && line.back() == ']') {
      section = line.substr(1, line.size() - 2);
      continue;
    }
    if (section == "history") {
      v.history.push_back(line);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("manifest: malformed line '" + line + "'");
    std::string k = line.substr(0, eq), val = line.substr(eq + 1);
    if (section == "run") v.header[k] = val;
    else if (section == "config") v.config.emplace_back(k, val);
    else if (section == "best") v.best[k] = val;
    else if (section == "test") v.test[k] = val;
    else throw DataError("manifest: entry outside a known section");
  }
  if (v.config.empty()) throw DataError("manifest: no [config] section");
  return v;
}

ManifestView read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str());
}

GridOutcome run_grid(std::vector<RunConfig> configs, const std::vector<PriceBar>& bars, const EmbeddingIndex& text,
                     std::uint64_t base_seed, std::size_t jobs, const std::function<void(const GridEntry&)>& on_done) {
  if (configs.empty()) throw ConfigError("grid: no configurations");
  if (configs.size() > kMaxGridCombos) throw ConfigError("grid: too many combinations");
  for (std::size_t i = 0; i < configs.size(); ++i) {
    configs[i].seed = configs[i].model.seed = combo_seed(base_seed, i);
  }
  std::map<std::string, PreparedData> prepared;
  for (const auto& c : configs)
    if (!prepared.count(data_key(c))) prepared.emplace(data_key(c), prepare_data(bars, text, c));

  std::vector<TrainOutcome> runs(configs.size());
  std::vector<GridEntry> entries(configs.size());
  std::atomic<std::size_t> next{0};
  std::mutex report;
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < configs.size();) {
      runs[i] = train(configs[i], prepared.at(data_key(configs[i])));
      GridEntry& e = entries[i];
      e.index = i;
      e.config_text = to_text(configs[i]);
      e.status = runs[i].status;
      e.val_f1 = runs[i].best_val.f1;
      e.best_epoch = runs[i].best_epoch;
      if (on_done) {
        std::lock_guard lock(report);
        on_done(e);
      }
    }
  };
  jobs = std::max<std::size_t>(1, std::min(jobs, configs.size()));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  GridOutcome g;
  g.entries = entries;
  bool found = false;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].status != "ok") continue;
    const auto& b = entries[g.best];
    if (!found || entries[i].val_f1 > b.val_f1 ||
        (entries[i].val_f1 == b.val_f1 && entries[i].config_text < b.config_text)) {
      g.best = i;
      found = true;
    }
  }
  if (!found) throw NumericError("grid: every combination aborted");
  g.best_run = std::move(runs[g.best]);
  return g;
}

std::vector<AblationCell> run_ablation(const RunConfig& base, const PreparedData& data, AblationGroups groups,
                                       const std::function<void(const AblationCell&)>& on_cell) {
  std::vector<AblationCell> cells;
  auto run = [&](const std::string& group, Modality mod, Variant var, AttentionDims dims) {
    RunConfig c = base;
    c.model.modality = mod;
    c.model.variant = var;
    c.model.dims = dims;
    const TrainOutcome r = train(c, data);
    if (r.status != "ok") throw NumericError("ablation: " + group + " cell aborted with " + r.status);
    AblationCell cell{group, mod, var, dims, r.best_val, r.test};
    if (on_cell) on_cell(cell);
    cells.push_back(cell);
  };
  if (groups != AblationGroups::modality)
    for (auto dims : {AttentionDims::none, AttentionDims::stock, AttentionDims::time, AttentionDims::both})
      run("dims", Modality::multimodal, base.model.variant, dims);
  if (groups != AblationGroups::dims)
    for (auto mod : {Modality::price, Modality::text, Modality::multimodal})
      for (auto var : {Variant::factored, Variant::kernelized}) run("modality", mod, var, AttentionDims::both);
  return cells;
}

std::string ablation_csv(const std::vector<AblationCell>& cells) {
  std::ostringstream os;
  os << "group,modality,variant,ablation,val_acc,val_f1,test_acc,test_f1,test_mcc,test_scored\n";
  for (const auto& c : cells)
    os << c.group << ',' << to_string(c.modality) << ',' << to_string(c.variant) << ',' << to_string(c.dims) << ','
       << num(c.val.accuracy) << ',' << num(c.val.f1) << ',' << num(c.test.accuracy) << ',' << num(c.test.f1) << ','
       << num(c.test.mcc) << ',' << c.test.scored() << '\n';
  return os.str();
}

}  // namespace hot
