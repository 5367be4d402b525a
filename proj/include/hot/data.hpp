#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "hot/autodiff.hpp"
#include "hot/tensor.hpp"

namespace hot {

/// Malformed or inconsistent input data.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr std::size_t kTextDim = 768;
inline constexpr std::size_t kPriceFeatures = 6;

// Dates are days since 1970-01-01.
std::int32_t parse_date(const std::string& iso);
std::string format_date(std::int32_t days);

struct PriceBar {
  std::string stock;
  std::int32_t date = 0;
  double adj_close = 0.0;
  double high = 0.0;
  double low = 0.0;
};

/// Header `stock,date,adj_close,high,low`. Validates positivity, low <= high
/// and strictly increasing dates per stock. Output is sorted by (stock, date).
std::vector<PriceBar> read_prices_csv(std::istream& in);
std::vector<PriceBar> read_prices_csv(const std::string& path);
void write_prices_csv(std::ostream& out, const std::vector<PriceBar>& bars);

/// Text embeddings keyed by (stock, date); every vector has kTextDim entries.
using EmbeddingIndex = std::map<std::pair<std::string, std::int32_t>, std::vector<float>>;

/// Binary layout (little-endian): "HOTE", u32 version = 1, u64 record count,
/// then per record u32 id length, id bytes, i32 date, kTextDim f32 values.
EmbeddingIndex read_embeddings(std::istream& in);
EmbeddingIndex read_embeddings(const std::string& path);
void write_embeddings(std::ostream& out, const EmbeddingIndex& index);

enum class Label { positive, negative, discarded };

struct LabelThresholds {
  double positive = 0.55;   // movement % at or above is positive
  double negative = -0.50;  // movement % at or below is negative
};

Label label(double movement_pct, const LabelThresholds& th = {});
/// Plain direction rule: 1 if the price went up, else 0.
int direction_label(double movement_pct);

/// Date features of a token: day / 31, month / 12 and the year min-max scaled
/// over [first_year, last_year] (0 when they coincide).
struct DateEncoding {
  int first_year = 1970;
  int last_year = 1970;

  void encode(std::int32_t date, double out[3]) const;
  /// Inverse of encode, rounding to the nearest representable date.
  std::int32_t decode(const double in[3]) const;
};

struct WindowSample {
  std::vector<std::string> stocks;  // N
  std::vector<std::int32_t> dates;  // T window days
  std::int32_t label_date = -1;     // next trading day, -1 if beyond the data
  Tensor prices;                    // (N, T, 6)
  Tensor text;                      // (N, T, kTextDim)
  ad::Mask text_mask;               // N*T, 1 where an embedding exists
  Tensor labels;                    // (N) 0/1
  Tensor label_valid;               // (N) 0/1
  std::vector<double> movement;     // (N) next-day movement %, 0 if unknown

  std::size_t n_stocks() const { return stocks.size(); }
  std::size_t valid_labels() const;
};

/// One sample per run of T consecutive trading days of the joint calendar,
/// in date order. Stocks lacking a price on any window day are left out of
/// that sample; samples with no stock left are skipped. The last window has
/// no label day, so its labels are all invalid.
std::vector<WindowSample> make_windows(const std::vector<PriceBar>& bars, const EmbeddingIndex& text,
                                       std::size_t window, const LabelThresholds& th = {});

struct SplitRatios {
  double train = 0.7;
  double val = 0.1;
};

struct Split {
  std::vector<WindowSample> train, val, test;
  std::vector<std::string> warnings;
};

/// Date-based cut points at the train and train+val fractions of the
/// date-ordered samples. A window belongs to a split only if all its days,
/// the label day included, fall inside it; windows straddling a cut are
/// dropped.
Split temporal_split(std::vector<WindowSample> samples, const SplitRatios& r = {});

/// FNV-1a over prices and embeddings in their canonical order.
std::uint64_t fingerprint(const std::vector<PriceBar>& bars, const EmbeddingIndex& text);

std::vector<std::string> stock_vocabulary(const std::vector<PriceBar>& bars);

// ---------------------------------------------------------------------------
// Synthetic planted-signal data.
//
// Standardized movements follow
//   m[i, d+1] = c (m[(i+1) mod N, d] + z[i, d-lag]) / sqrt(2) + sqrt(1 - c^2) eps
// where z are unit normals planted in the text of stock i on day d-lag. Each
// text vector is a fixed orthonormal embedding of a text_rank-dimensional
// latent whose first coordinate is z + text_noise * noise and whose others
// are unit-normal distractors. The percent movement is sigma * m.

struct SynthSpec {
  std::size_t n_stocks = 8;
  std::size_t n_days = 2000;
  double coupling = 1.0;
  std::uint64_t seed = 0;
  double sigma = 2.0;
  double text_noise = 0.5;
  std::size_t text_lag = 2;
  std::size_t text_rank = 8;
  double missing_text = 0.0;  // probability a (stock, day) embedding is absent
  std::int32_t start_date = 16071;  // 2014-01-01

  void validate() const;
};

/// Flat key=value lines; unknown keys are errors.
SynthSpec parse_synth_spec(std::istream& in);
std::string to_text(const SynthSpec& s);

struct SynthDataset {
  std::vector<PriceBar> bars;
  EmbeddingIndex text;
  std::vector<float> direction;  // the planted unit direction (embedding column 0)
};

SynthDataset synth_generate(const SynthSpec& spec);

/// Accuracy of the Bayes-optimal classifier on retained (non-discarded)
/// labels, given the partner's last movement and the text at the lag day.
double synth_bayes_accuracy(const SynthSpec& spec, const LabelThresholds& th = {});

}  // namespace hot
