#include "hot/data.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <tuple>

namespace hot {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

double parse_number(const std::string& s, const std::string& what, std::size_t line) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size() || !std::isfinite(v))
    throw DataError("line " + std::to_string(line) + ": bad " + what + " '" + s + "'");
  return v;
}

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in, const char* what) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw DataError(std::string("embeddings: truncated ") + what);
  return v;
}

constexpr char kEmbeddingMagic[4] = {'H', 'O', 'T', 'E'};
constexpr std::uint32_t kEmbeddingVersion = 1;

struct Fnv {
  std::uint64_t h = 1469598103934665603ULL;
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  }
  template <typename T>
  void value(T v) {
    bytes(&v, sizeof v);
  }
  void text(const std::string& s) {
    value<std::uint64_t>(s.size());
    bytes(s.data(), s.size());
  }
};

int year_of(std::int32_t date) {
  using namespace std::chrono;
  return int(year_month_day{sys_days{days{date}}}.year());
}

}  // namespace

std::int32_t parse_date(const std::string& iso) {
  int y = 0;
  unsigned m = 0, d = 0;
  char tail = 0;
  if (iso.size() != 10 || std::sscanf(iso.c_str(), "%4d-%2u-%2u%c", &y, &m, &d, &tail) != 3 || iso[4] != '-' ||
      iso[7] != '-')
    throw DataError("malformed date '" + iso + "'");
  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{m}, day{d}};
  if (!ymd.ok()) throw DataError("invalid date '" + iso + "'");
  return static_cast<std::int32_t>(sys_days{ymd}.time_since_epoch().count());
}

std::string format_date(std::int32_t days_since_epoch) {
  using namespace std::chrono;
  const year_month_day ymd{sys_days{days{days_since_epoch}}};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", int(ymd.year()), unsigned(ymd.month()), unsigned(ymd.day()));
  return buf;
}

std::vector<PriceBar> read_prices_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("prices: empty input");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "stock,date,adj_close,high,low") throw DataError("prices: unexpected header '" + line + "'");
  std::vector<PriceBar> bars;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv(line);
    if (f.size() != 5) throw DataError("line " + std::to_string(lineno) + ": expected 5 fields");
    if (f[0].empty()) throw DataError("line " + std::to_string(lineno) + ": empty stock id");
    PriceBar b{f[0], parse_date(f[1]), parse_number(f[2], "adj_close", lineno), parse_number(f[3], "high", lineno),
               parse_number(f[4], "low", lineno)};
    if (b.adj_close <= 0 || b.high <= 0 || b.low <= 0)
      throw DataError("line " + std::to_string(lineno) + ": prices must be positive");
    if (b.low > b.high) throw DataError("line " + std::to_string(lineno) + ": low above high");
    bars.push_back(std::move(b));
  }
  std::stable_sort(bars.begin(), bars.end(),
                   [](const PriceBar& a, const PriceBar& b) { return std::tie(a.stock, a.date) < std::tie(b.stock, b.date); });
  for (std::size_t i = 1; i < bars.size(); ++i)
    if (bars[i].stock == bars[i - 1].stock && bars[i].date == bars[i - 1].date)
      throw DataError("prices: duplicate bar for " + bars[i].stock + " on " + format_date(bars[i].date));
  return bars;
}

std::vector<PriceBar> read_prices_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  return read_prices_csv(in);
}

void write_prices_csv(std::ostream& out, const std::vector<PriceBar>& bars) {
  out << "stock,date,adj_close,high,low\n";
  char buf[128];
  for (const auto& b : bars) {
    std::snprintf(buf, sizeof buf, ",%.17g,%.17g,%.17g\n", b.adj_close, b.high, b.low);
    out << b.stock << ',' << format_date(b.date) << buf;
  }
}

EmbeddingIndex read_embeddings(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kEmbeddingMagic, 4) != 0) throw DataError("embeddings: bad magic");
  const auto version = get<std::uint32_t>(in, "version");
  if (version != kEmbeddingVersion) throw DataError("embeddings: unsupported version " + std::to_string(version));
  const auto count = get<std::uint64_t>(in, "count");
  EmbeddingIndex index;
  for (std::uint64_t r = 0; r < count; ++r) {
    const auto len = get<std::uint32_t>(in, "id length");
    if (len == 0 || len > 4096) throw DataError("embeddings: bad id length");
    std::string id(len, '\0');
    if (!in.read(id.data(), len)) throw DataError("embeddings: truncated id");
    const auto date = get<std::int32_t>(in, "date");
    std::vector<float> v(kTextDim);
    if (!in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(kTextDim * sizeof(float))))
      throw DataError("embeddings: truncated vector");
    for (float x : v)
      if (!std::isfinite(x)) throw DataError("embeddings: non-finite value for " + id);
    if (!index.emplace(std::make_pair(id, date), std::move(v)).second)
      throw DataError("embeddings: duplicate record " + id + " " + format_date(date));
  }
  return index;
}

EmbeddingIndex read_embeddings(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return read_embeddings(in);
}

void write_embeddings(std::ostream& out, const EmbeddingIndex& index) {
  out.write(kEmbeddingMagic, 4);
  put<std::uint32_t>(out, kEmbeddingVersion);
  put<std::uint64_t>(out, index.size());
  for (const auto& [key, v] : index) {
    if (v.size() != kTextDim) throw DataError("embeddings: vector of size " + std::to_string(v.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(key.first.size()));
    out.write(key.first.data(), static_cast<std::streamsize>(key.first.size()));
    put<std::int32_t>(out, key.second);
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(kTextDim * sizeof(float)));
  }
}

Label label(double movement_pct, const LabelThresholds& th) {
  if (movement_pct >= th.positive) return Label::positive;
  if (movement_pct <= th.negative) return Label::negative;
  return Label::discarded;
}

int direction_label(double movement_pct) { return movement_pct > 0.0 ? 1 : 0; }

void DateEncoding::encode(std::int32_t date, double out[3]) const {
  using namespace std::chrono;
  const year_month_day ymd{sys_days{days{date}}};
  out[0] = unsigned(ymd.day()) / 31.0;
  out[1] = unsigned(ymd.month()) / 12.0;
  out[2] = last_year == first_year ? 0.0 : double(int(ymd.year()) - first_year) / (last_year - first_year);
}

std::int32_t DateEncoding::decode(const double in[3]) const {
  using namespace std::chrono;
  const auto d = static_cast<unsigned>(std::lround(in[0] * 31.0));
  const auto m = static_cast<unsigned>(std::lround(in[1] * 12.0));
  const int y = first_year + static_cast<int>(std::lround(in[2] * (last_year - first_year)));
  const year_month_day ymd{year{y}, month{m}, day{d}};
  if (!ymd.ok()) throw DataError("date features do not decode to a valid date");
  return static_cast<std::int32_t>(sys_days{ymd}.time_since_epoch().count());
}

std::size_t WindowSample::valid_labels() const {
  std::size_t n = 0;
  for (double v : label_valid.data()) n += v != 0.0;
  return n;
}

std::vector<WindowSample> make_windows(const std::vector<PriceBar>& bars, const EmbeddingIndex& text,
                                       std::size_t window, const LabelThresholds& th) {
  if (bars.empty()) throw DataError("make_windows: no price bars");
  if (window == 0) throw DataError("make_windows: window length must be positive");

  std::set<std::int32_t> day_set;
  std::map<std::string, std::map<std::int32_t, const PriceBar*>> by_stock;
  for (const auto& b : bars) {
    day_set.insert(b.date);
    if (!by_stock[b.stock].emplace(b.date, &b).second)
      throw DataError("make_windows: duplicate bar for " + b.stock + " on " + format_date(b.date));
  }
  const std::vector<std::int32_t> days(day_set.begin(), day_set.end());
  const DateEncoding enc{year_of(days.front()), year_of(days.back())};

  std::vector<WindowSample> out;
  if (days.size() < window) return out;
  for (std::size_t p = 0; p + window <= days.size(); ++p) {
    const bool has_label_day = p + window < days.size();
    std::vector<std::string> members;
    for (const auto& [stock, series] : by_stock) {
      bool complete = true;
      for (std::size_t t = 0; t < window && complete; ++t) complete = series.count(days[p + t]) > 0;
      if (complete) members.push_back(stock);
    }
    if (members.empty()) continue;

    const std::size_t n = members.size();
    WindowSample s;
    s.stocks = members;
    s.dates.assign(days.begin() + static_cast<std::ptrdiff_t>(p), days.begin() + static_cast<std::ptrdiff_t>(p + window));
    s.label_date = has_label_day ? days[p + window] : -1;
    s.prices = Tensor({n, window, kPriceFeatures});
    s.text = Tensor({n, window, kTextDim});
    s.text_mask.assign(n * window, 0);
    s.labels = Tensor({n});
    s.label_valid = Tensor({n});
    s.movement.assign(n, 0.0);

    for (std::size_t i = 0; i < n; ++i) {
      const auto& series = by_stock.at(members[i]);
      for (std::size_t t = 0; t < window; ++t) {
        const std::int32_t day = days[p + t];
        const PriceBar& bar = *series.at(day);
        // Reference close: the stock's bar on the preceding trading day.
        double ref = bar.adj_close;
        if (p + t > 0) {
          const auto prev = series.find(days[p + t - 1]);
          if (prev != series.end()) ref = prev->second->adj_close;
        }
        double* f = s.prices.raw() + (i * window + t) * kPriceFeatures;
        f[0] = (bar.adj_close / ref - 1.0) * 100.0;
        f[1] = (bar.high / ref - 1.0) * 100.0;
        f[2] = (bar.low / ref - 1.0) * 100.0;
        enc.encode(day, f + 3);

        const auto it = text.find({members[i], day});
        if (it != text.end()) {
          s.text_mask[i * window + t] = 1;
          std::copy(it->second.begin(), it->second.end(), s.text.raw() + (i * window + t) * kTextDim);
        }
      }
      if (has_label_day) {
        const auto next = series.find(days[p + window]);
        if (next != series.end()) {
          const double last = series.at(days[p + window - 1])->adj_close;
          const double mv = (next->second->adj_close / last - 1.0) * 100.0;
          s.movement[i] = mv;
          const Label l = label(mv, th);
          if (l != Label::discarded) {
            s.label_valid[i] = 1.0;
            s.labels[i] = l == Label::positive ? 1.0 : 0.0;
          }
        }
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

Split temporal_split(std::vector<WindowSample> samples, const SplitRatios& r) {
  if (r.train <= 0 || r.val < 0 || r.train + r.val > 1.0)
    throw std::invalid_argument("temporal_split: ratios must satisfy 0 < train, 0 <= val, train + val <= 1");
  if (samples.size() < 3) throw DataError("temporal_split: need at least 3 samples, got " + std::to_string(samples.size()));
  for (std::size_t i = 1; i < samples.size(); ++i)
    if (samples[i].dates.front() < samples[i - 1].dates.front())
      throw DataError("temporal_split: samples are not date-ordered");

  Split out;
  const std::size_t n = samples.size();
  const std::int32_t first = samples.front().dates.front();
  if (samples.back().dates.front() == first) {
    out.warnings.push_back("all samples share one start date; everything goes to train");
    out.train = std::move(samples);
    return out;
  }
  constexpr std::int32_t never = std::numeric_limits<std::int32_t>::max();
  // Cut date: start of the sample at the given position, moved forward past
  // the first date so the earlier split is never empty by construction.
  auto cut = [&](double frac) {
    std::size_t k = static_cast<std::size_t>(std::llround(frac * static_cast<double>(n)));
    while (k < n && samples[k].dates.front() <= first) ++k;
    return k < n ? samples[k].dates.front() : never;
  };
  const std::int32_t b1 = cut(r.train);
  const std::int32_t b2 = std::max(b1, cut(r.train + r.val));
  std::size_t dropped = 0;
  for (auto& s : samples) {
    const std::int32_t lo = s.dates.front(), hi = std::max(s.dates.back(), s.label_date);
    if (hi < b1)
      out.train.push_back(std::move(s));
    else if (lo >= b1 && hi < b2)
      out.val.push_back(std::move(s));
    else if (lo >= b2)
      out.test.push_back(std::move(s));
    else
      ++dropped;
  }
  if (dropped) out.warnings.push_back(std::to_string(dropped) + " windows straddle a split boundary and were dropped");
  return out;
}

std::uint64_t fingerprint(const std::vector<PriceBar>& bars, const EmbeddingIndex& text) {
  Fnv f;
  f.value<std::uint64_t>(bars.size());
  for (const auto& b : bars) {
    f.text(b.stock);
    f.value(b.date);
    f.value(b.adj_close);
    f.value(b.high);
    f.value(b.low);
  }
  f.value<std::uint64_t>(text.size());
  for (const auto& [key, v] : text) {
    f.text(key.first);
    f.value(key.second);
    f.bytes(v.data(), v.size() * sizeof(float));
  }
  return f.h;
}

std::vector<std::string> stock_vocabulary(const std::vector<PriceBar>& bars) {
  std::set<std::string> s;
  for (const auto& b : bars) s.insert(b.stock);
  return {s.begin(), s.end()};
}

// ---------------------------------------------------------------------------

void SynthSpec::validate() const {
  if (n_stocks == 0 || n_days == 0) throw std::invalid_argument("synth: n_stocks and n_days must be positive");
  if (!(coupling >= 0.0 && coupling <= 1.0)) throw std::invalid_argument("synth: coupling must lie in [0, 1]");
  if (!(sigma > 0.0) || !(text_noise >= 0.0)) throw std::invalid_argument("synth: sigma > 0 and text_noise >= 0");
  if (!(missing_text >= 0.0 && missing_text < 1.0)) throw std::invalid_argument("synth: missing_text in [0, 1)");
  if (text_rank == 0 || text_rank > kTextDim) throw std::invalid_argument("synth: text_rank must lie in [1, 768]");
}

SynthSpec parse_synth_spec(std::istream& in) {
  SynthSpec s;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("synth spec line " + std::to_string(lineno) + ": expected key=value");
    auto trim = [](std::string v) {
      const auto a = v.find_first_not_of(" \t\r");
      const auto b = v.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : v.substr(a, b - a + 1);
    };
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    try {
      if (key == "n_stocks") s.n_stocks = std::stoul(value);
      else if (key == "n_days") s.n_days = std::stoul(value);
      else if (key == "coupling") s.coupling = std::stod(value);
      else if (key == "seed") s.seed = std::stoull(value);
      else if (key == "sigma") s.sigma = std::stod(value);
      else if (key == "text_noise") s.text_noise = std::stod(value);
      else if (key == "text_lag") s.text_lag = std::stoul(value);
      else if (key == "text_rank") s.text_rank = std::stoul(value);
      else if (key == "missing_text") s.missing_text = std::stod(value);
      else if (key == "start_date") s.start_date = parse_date(value);
      else throw DataError("synth spec: unknown key '" + key + "'");
    } catch (const std::logic_error&) {
      throw DataError("synth spec: bad value for '" + key + "': '" + value + "'");
    }
  }
  s.validate();
  return s;
}

std::string to_text(const SynthSpec& s) {
  std::ostringstream os;
  os.precision(17);
  os << "n_stocks=" << s.n_stocks << "\nn_days=" << s.n_days << "\ncoupling=" << s.coupling << "\nseed=" << s.seed
     << "\nsigma=" << s.sigma << "\ntext_noise=" << s.text_noise << "\ntext_lag=" << s.text_lag
     << "\ntext_rank=" << s.text_rank     << "\nmissing_text=" << s.missing_text << "\nstart_date=" << format_date(s.start_date) << "\n";
  return os.str();
}

SynthDataset synth_generate(const SynthSpec& spec) {
  spec.validate();
  const std::size_t n = spec.n_stocks, days = spec.n_days;
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unit;

  SynthDataset ds;
  // Orthonormal embedding of the latent text space (Gram-Schmidt on
  // Gaussian columns); column 0 carries the planted signal.
  const std::size_t rank = spec.text_rank;
  std::vector<double> basis(rank * kTextDim);
  for (std::size_t r = 0; r < rank; ++r) {
    double* col = &basis[r * kTextDim];
    for (std::size_t k = 0; k < kTextDim; ++k) col[k] = normal(rng);
    for (int pass = 0; pass < 2; ++pass)
      for (std::size_t q = 0; q < r; ++q) {
        const double* prev = &basis[q * kTextDim];
        double dot = 0.0;
        for (std::size_t k = 0; k < kTextDim; ++k) dot += col[k] * prev[k];
        for (std::size_t k = 0; k < kTextDim; ++k) col[k] -= dot * prev[k];
      }
    double norm = 0.0;
    for (std::size_t k = 0; k < kTextDim; ++k) norm += col[k] * col[k];
    norm = std::sqrt(norm);
    for (std::size_t k = 0; k < kTextDim; ++k) col[k] /= norm;
  }
  ds.direction.assign(basis.begin(), basis.begin() + kTextDim);

  // Weekday calendar.
  std::vector<std::int32_t> calendar;
  for (std::int32_t d = spec.start_date; calendar.size() < days; ++d) {
    using namespace std::chrono;
    const unsigned wd = weekday{sys_days{std::chrono::days{d}}}.c_encoding();
    if (wd != 0 && wd != 6) calendar.push_back(d);
  }

  std::vector<double> z(n * days), m(n * days);
  for (auto& v : z) v = normal(rng);
  for (std::size_t i = 0; i < n; ++i) m[i * days] = normal(rng);
  const double c = spec.coupling, rest = std::sqrt(std::max(0.0, 1.0 - c * c));
  for (std::size_t d = 1; d < days; ++d)
    for (std::size_t i = 0; i < n; ++i) {
      const double eps = normal(rng);
      if (d >= spec.text_lag + 1) {
        const std::size_t partner = (i + 1) % n;
        m[i * days + d] = c * (m[partner * days + d - 1] + z[i * days + d - 1 - spec.text_lag]) / std::numbers::sqrt2 +
                          rest * eps;
      } else {
        m[i * days + d] = eps;
      }
    }

  char name[32];
  std::vector<double> latent(rank);
  for (std::size_t i = 0; i < n; ++i) {
    std::snprintf(name, sizeof name, "S%03zu", i);
    double close = 100.0 * (1.0 + 0.1 * static_cast<double>(i));
    for (std::size_t d = 0; d < days; ++d) {
      if (d > 0) close *= 1.0 + spec.sigma * m[i * days + d] / 100.0;
      close = std::max(close, 1e-6);
      const double up = std::abs(normal(rng)) * 0.5, down = std::abs(normal(rng)) * 0.5;
      ds.bars.push_back({name, calendar[d], close, close * (1.0 + up / 100.0), close * (1.0 - std::min(down, 50.0) / 100.0)});

      const bool missing = spec.missing_text > 0.0 && unit(rng) < spec.missing_text;
      latent[0] = z[i * days + d] + spec.text_noise * normal(rng);
      for (std::size_t r = 1; r < rank; ++r) latent[r] = normal(rng);
      std::vector<float> v(kTextDim);
      for (std::size_t k = 0; k < kTextDim; ++k) {
        double acc = 0.0;
        for (std::size_t r = 0; r < rank; ++r) acc += latent[r] * basis[r * kTextDim + k];
        v[k] = static_cast<float>(acc);
      }
      if (!missing) ds.text.emplace(std::make_pair(std::string(name), calendar[d]), std::move(v));
    }
  }
  return ds;
}

double synth_bayes_accuracy(const SynthSpec& spec, const LabelThresholds& th) {
  spec.validate();
  // Observing the partner's movement a exactly and y = z + s*noise, the next
  // standardized movement is normal with mean mu and variance v, where mu is
  // itself normal with variance 1 - v.
  const double c = spec.coupling, s2 = spec.text_noise * spec.text_noise;
  const double v = c * c / 2.0 * s2 / (1.0 + s2) + (1.0 - c * c);
  const double var_mu = 1.0 - v;
  const double hi = th.positive / spec.sigma, lo = th.negative / spec.sigma;
  auto cdf = [](double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); };
  auto probs = [&](double mu) {
    if (v <= 0.0) return std::pair<double, double>{mu >= hi ? 1.0 : 0.0, mu <= lo ? 1.0 : 0.0};
    const double sd = std::sqrt(v);
    return std::pair<double, double>{1.0 - cdf((hi - mu) / sd), cdf((lo - mu) / sd)};
  };
  if (var_mu <= 0.0) {
    const auto [pp, pn] = probs(0.0);
    return std::max(pp, pn) / (pp + pn);
  }
  // Trapezoid rule over mu in +-10 standard deviations.
  const double sd_mu = std::sqrt(var_mu);
  const int steps = 20000;
  const double a = -10.0 * sd_mu, h = 20.0 * sd_mu / steps;
  double correct = 0.0, kept = 0.0;
  for (int k = 0; k <= steps; ++k) {
    const double mu = a + h * k;
    const double w = (k == 0 || k == steps ? 0.5 : 1.0) * std::exp(-0.5 * mu * mu / var_mu);
    const auto [pp, pn] = probs(mu);
    correct += w * std::max(pp, pn);
    kept += w * (pp + pn);
  }
  return correct / kept;
}

}  // namespace hot
