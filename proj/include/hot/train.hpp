#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "hot/config.hpp"
#include "hot/data.hpp"
#include "hot/metrics.hpp"
#include "hot/model.hpp"

namespace hot {

/// Raised when the loss becomes NaN or infinite.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EvalMetrics {
  ConfusionCounts counts;
  double accuracy = 0.0;
  double f1 = 0.0;
  double mcc = 0.0;
  double loss = 0.0;  // mean BCE over scored labels

  std::size_t scored() const { return static_cast<std::size_t>(counts.total()); }
};

EvalMetrics metrics_from(const ConfusionCounts& c, double loss_sum);

/// Metrics over the valid labels of every sample; zero counts give zeros.
EvalMetrics evaluate(const Model& m, const std::vector<WindowSample>& samples);

struct PreparedData {
  Split split;
  std::vector<std::string> vocabulary;
  std::uint64_t fingerprint = 0;
  std::size_t windows = 0;
};

PreparedData prepare_data(const std::vector<PriceBar>& bars, const EmbeddingIndex& text, const RunConfig& cfg);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  EvalMetrics train;  // accumulated during the epoch
  EvalMetrics val;
};

struct TrainOutcome {
  RunConfig cfg;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;  // 0 when no epoch completed
  EvalMetrics best_val;
  EvalMetrics test;
  Model best;
  std::string status = "ok";  // or "non_finite_loss"
  double seconds = 0.0;       // wall clock, not part of the manifest
};

/// Adam training with per-epoch shuffling, early stopping on validation F1
/// (training F1 when the validation split is empty) and the best-epoch
/// parameters kept. Deterministic for a given config and data.
TrainOutcome train(const RunConfig& cfg, const PreparedData& data,
                   const std::function<void(const EpochRecord&)>& on_epoch = {});

/// Human-readable manifest. Contains no wall-clock values so that repeated
/// runs produce identical bytes.
std::string manifest_text(const TrainOutcome& r, const PreparedData& data);
/// Writes via a temporary file and rename.
void write_text_atomic(const std::string& path, const std::string& text);

struct ManifestView {
  std::map<std::string, std::string> header;
  KeyValues config;
  std::vector<std::string> history;  // CSV rows including the header row
  std::map<std::string, std::string> best;
  std::map<std::string, std::string> test;
};

ManifestView parse_manifest(const std::string& text);
ManifestView read_manifest(const std::string& path);
std::string history_csv(const std::vector<EpochRecord>& history);

struct GridEntry {
  std::size_t index = 0;
  std::string config_text;
  std::string status;
  double val_f1 = 0.0;
  std::size_t best_epoch = 0;
};

struct GridOutcome {
  std::vector<GridEntry> entries;
  std::size_t best = 0;  // index into entries
  TrainOutcome best_run;
};

/// Trains every config (seed of combo i = combo_seed(base seed, i)) and picks
/// the highest validation F1, breaking ties by the smaller config text.
/// `jobs` worker threads share the combos.
GridOutcome run_grid(std::vector<RunConfig> configs, const std::vector<PriceBar>& bars, const EmbeddingIndex& text,
                     std::uint64_t base_seed, std::size_t jobs = 1,
                     const std::function<void(const GridEntry&)>& on_done = {});

struct AblationCell {
  std::string group;  // "dims" or "modality"
  Modality modality = Modality::multimodal;
  Variant variant = Variant::factored;
  AttentionDims dims = AttentionDims::both;
  EvalMetrics val;
  EvalMetrics test;
};

enum class AblationGroups { dims, modality, all };

/// The attention-dimension sweep (none, stock, time, both) on the base
/// variant, then modality {price, text, multimodal} x {factored, kernelized}.
std::vector<AblationCell> run_ablation(const RunConfig& base, const PreparedData& data,
                                       AblationGroups groups = AblationGroups::all,
                                       const std::function<void(const AblationCell&)>& on_cell = {});

std::string ablation_csv(const std::vector<AblationCell>& cells);

}  // namespace hot
