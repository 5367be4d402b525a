#include <doctest.h>

#include <cmath>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "hot/data.hpp"

using namespace hot;

namespace {

std::vector<PriceBar> daily_bars(const std::vector<std::string>& stocks, std::int32_t start, std::size_t days,
                                 std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> move(-3.0, 3.0);
  std::vector<PriceBar> bars;
  for (const auto& s : stocks) {
    double close = 50.0;
    for (std::size_t d = 0; d < days; ++d) {
      close *= 1.0 + move(rng) / 100.0;
      bars.push_back({s, start + std::int32_t(d), close, close * 1.01, close * 0.99});
    }
  }
  return bars;
}

WindowSample dated_sample(std::int32_t first, std::size_t len) {
  WindowSample s;
  for (std::size_t t = 0; t < len; ++t) s.dates.push_back(first + std::int32_t(t));
  return s;
}

}  // namespace

TEST_CASE("dates") {
  CHECK(format_date(parse_date("2015-10-01")) == "2015-10-01");
  CHECK(parse_date("1970-01-01") == 0);
  CHECK(parse_date("2014-01-01") == 16071);
  CHECK_THROWS_AS(parse_date("2015-13-01"), DataError);
  CHECK_THROWS_AS(parse_date("2015/10/01"), DataError);
  CHECK_THROWS_AS(parse_date("2015-02-30"), DataError);

  const DateEncoding enc{2014, 2016};
  double f[3];
  enc.encode(parse_date("2015-10-01"), f);
  CHECK(f[0] == 1.0 / 31.0);
  CHECK(f[1] == 10.0 / 12.0);
  CHECK(f[2] == 0.5);
  CHECK(format_date(enc.decode(f)) == "2015-10-01");
  for (std::int32_t d = parse_date("2014-01-01"); d <= parse_date("2016-12-31"); d += 37) {
    enc.encode(d, f);
    CHECK(enc.decode(f) == d);
  }
  const DateEncoding single{2015, 2015};
  single.encode(parse_date("2015-10-01"), f);
  CHECK(f[2] == 0.0);
}

TEST_CASE("labels on the threshold fixture") {
  struct Case {
    double mv;
    Label want;
  };
  const Case cases[] = {
      {0.60, Label::positive},    {-0.70, Label::negative},   {0.10, Label::discarded},  {0.55, Label::positive},
      {0.5499999, Label::discarded}, {0.5500001, Label::positive}, {-0.50, Label::negative}, {-0.4999999, Label::discarded},
      {-0.5000001, Label::negative}, {0.50, Label::discarded},   {-0.55, Label::negative},  {0.0, Label::discarded},
      {-0.0, Label::discarded},  {1.0, Label::positive},     {-1.0, Label::negative},    {10.0, Label::positive},
      {-10.0, Label::negative},  {0.54, Label::discarded},   {0.56, Label::positive},    {-0.49, Label::discarded},
      {-0.51, Label::negative},  {0.25, Label::discarded},   {-0.25, Label::discarded},  {99.0, Label::positive},
      {-99.0, Label::negative},  {0.551, Label::positive},   {-0.501, Label::negative},  {0.549, Label::discarded},
      {-0.499, Label::discarded}, {1e-9, Label::discarded},
  };
  static_assert(std::size(cases) == 30);
  for (const auto& c : cases) {
    CAPTURE(c.mv);
    CHECK(label(c.mv) == c.want);
  }
  // Monotone: a larger movement never flips positive to negative.
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-2, 2);
  auto rank = [](Label l) { return l == Label::negative ? 0 : l == Label::discarded ? 1 : 2; };
  for (int i = 0; i < 1000; ++i) {
    double a = u(rng), b = u(rng);
    if (a > b) std::swap(a, b);
    CHECK(rank(label(a)) <= rank(label(b)));
  }
  CHECK(direction_label(0.01) == 1);
  CHECK(direction_label(0.0) == 0);
  CHECK(direction_label(-0.3) == 0);
}

TEST_CASE("price csv") {
  std::istringstream ok("stock,date,adj_close,high,low\nB,2015-01-02,10,11,9\nA,2015-01-02,5,5,5\nA,2015-01-01,4,4.5,3.5\n");
  const auto bars = read_prices_csv(ok);
  REQUIRE(bars.size() == 3);
  CHECK(bars[0].stock == "A");
  CHECK(format_date(bars[0].date) == "2015-01-01");
  CHECK(bars[2].stock == "B");
  std::ostringstream out;
  write_prices_csv(out, bars);
  std::istringstream again(out.str());
  const auto back = read_prices_csv(again);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].adj_close == bars[i].adj_close);
    CHECK(back[i].date == bars[i].date);
  }
  auto bad = [](const std::string& s) {
    std::istringstream in(s);
    return read_prices_csv(in);
  };
  CHECK_THROWS_AS(bad(""), DataError);
  CHECK_THROWS_AS(bad("stock,date,close\n"), DataError);
  CHECK_THROWS_AS(bad("stock,date,adj_close,high,low\nA,2015-01-01,10,9,11\n"), DataError);
  CHECK_THROWS_AS(bad("stock,date,adj_close,high,low\nA,2015-01-01,-1,1,1\n"), DataError);
  CHECK_THROWS_AS(bad("stock,date,adj_close,high,low\nA,2015-01-01,1,1,1\nA,2015-01-01,1,1,1\n"), DataError);
  CHECK_THROWS_AS(bad("stock,date,adj_close,high,low\nA,2015-01-01,x,1,1\n"), DataError);
}

TEST_CASE("embedding file round trip") {
  EmbeddingIndex idx;
  std::vector<float> v(kTextDim);
  for (std::size_t k = 0; k < kTextDim; ++k) v[k] = float(k) * 0.5f - 3.0f;
  idx[{"AAPL", parse_date("2015-01-02")}] = v;
  v[0] = 42.0f;
  idx[{"MSFT", parse_date("2015-01-03")}] = v;
  std::stringstream buf;
  write_embeddings(buf, idx);
  const std::string bytes = buf.str();
  CHECK(bytes.substr(0, 4) == "HOTE");
  CHECK(bytes.size() == 4 + 4 + 8 + 2 * (4 + 4 + 4 + kTextDim * 4));
  std::istringstream in(bytes);
  CHECK(read_embeddings(in) == idx);

  std::istringstream truncated(bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS(read_embeddings(truncated), DataError);
  std::string wrong = bytes;
  wrong[0] = 'X';
  std::istringstream magic(wrong);
  CHECK_THROWS_AS(read_embeddings(magic), DataError);
}

TEST_CASE("windows") {
  SUBCASE("six trading days give two windows, the last without a label") {
    const auto bars = daily_bars({"A", "B"}, 100, 6);
    const auto w = make_windows(bars, {}, 5);
    REQUIRE(w.size() == 2);
    CHECK(w[0].label_date == 105);
    CHECK(w[0].dates == std::vector<std::int32_t>{100, 101, 102, 103, 104});
    CHECK(w[1].label_date == -1);
    CHECK(w[1].valid_labels() == 0);
    CHECK(w[0].prices.shape() == Shape{2, 5, 6});
  }
  SUBCASE("features and labels by hand") {
    std::vector<PriceBar> bars{{"A", 10, 100, 102, 99}, {"A", 11, 101, 103, 100}, {"A", 12, 99, 101, 98}};
    EmbeddingIndex text;
    text[{"A", 11}] = std::vector<float>(kTextDim, 1.0f);
    const auto w = make_windows(bars, text, 2);
    REQUIRE(w.size() == 2);
    const Tensor& p = w[0].prices;
    CHECK(p.at(0, 0, 0) == 0.0);  // no preceding day: the close is its own reference
    CHECK(p.at(0, 0, 1) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(p.at(0, 1, 0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(p.at(0, 1, 1) == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(p.at(0, 1, 2) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(w[0].text_mask == ad::Mask{0, 1});
    CHECK(w[0].text.at(0, 1, 5) == 1.0);
    CHECK(w[0].movement[0] == doctest::Approx((99.0 / 101.0 - 1.0) * 100.0).epsilon(1e-12));
    CHECK(w[0].labels[0] == 0.0);
    CHECK(w[0].label_valid[0] == 1.0);
    // Second window's first day references the close of day 10.
    CHECK(w[1].prices.at(0, 0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("a stock missing a day is left out of windows containing it") {
    auto bars = daily_bars({"A", "B"}, 0, 8);
    std::erase_if(bars, [](const PriceBar& b) { return b.stock == "B" && b.date == 3; });
    const auto w = make_windows(bars, {}, 3);
    REQUIRE(w.size() == 6);
    for (const auto& s : w) {
      const bool covers = s.dates.front() <= 3 && s.dates.back() >= 3;
      CHECK(s.n_stocks() == (covers ? 1u : 2u));
    }
  }
  SUBCASE("window of one day") {
    const auto w = make_windows(daily_bars({"A"}, 0, 4), {}, 1);
    CHECK(w.size() == 4);
    CHECK(w[0].dates.size() == 1);
  }
  SUBCASE("count equals an enumeration oracle on random calendars") {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 30; ++trial) {
      std::vector<PriceBar> bars;
      std::set<std::int32_t> calendar;
      for (const std::string s : {"A", "B", "C"})
        for (std::int32_t d = 0; d < 20; ++d)
          if (rng() % 4) {
            bars.push_back({s, d, 10, 10, 10});
            calendar.insert(d);
          }
      const std::size_t window = 1 + rng() % 5;
      std::size_t expected = 0;
      std::vector<std::int32_t> days(calendar.begin(), calendar.end());
      for (std::size_t p = 0; p + window <= days.size(); ++p) {
        bool any = false;
        for (const std::string s : {"A", "B", "C"}) {
          bool all = true;
          for (std::size_t t = 0; t < window; ++t)
            all = all && std::any_of(bars.begin(), bars.end(),
                                     [&](const PriceBar& b) { return b.stock == s && b.date == days[p + t]; });
          any = any || all;
        }
        expected += any;
      }
      CHECK(make_windows(bars, {}, window).size() == expected);
    }
  }
  CHECK_THROWS_AS(make_windows({}, {}, 5), DataError);
}

TEST_CASE("temporal split") {
  SUBCASE("100 one-day samples split 70/10/20") {
    std::vector<WindowSample> s;
    for (int i = 0; i < 100; ++i) s.push_back(dated_sample(i, 1));
    const Split sp = temporal_split(s);
    CHECK(std::abs(int(sp.train.size()) - 70) <= 1);
    CHECK(std::abs(int(sp.val.size()) - 10) <= 1);
    CHECK(std::abs(int(sp.test.size()) - 20) <= 1);
    CHECK(sp.train.size() + sp.val.size() + sp.test.size() == 100);
  }
  SUBCASE("all samples on one date") {
    std::vector<WindowSample> s(5, dated_sample(7, 1));
    const Split sp = temporal_split(s);
    CHECK(sp.train.size() == 5);
    CHECK(sp.val.empty());
    CHECK(sp.test.empty());
    CHECK(sp.warnings.size() == 1);
  }
  SUBCASE("contiguous, disjoint and leak-free with five-day windows") {
    const auto w = make_windows(daily_bars({"A", "B", "C"}, 0, 300), {}, 5);
    const Split sp = temporal_split(w);
    REQUIRE(!sp.train.empty());
    REQUIRE(!sp.val.empty());
    REQUIRE(!sp.test.empty());
    auto max_day = [](const std::vector<WindowSample>& v) {
      std::int32_t m = INT32_MIN;
      for (const auto& s : v) m = std::max(m, s.dates.back());
      return m;
    };
    auto min_day = [](const std::vector<WindowSample>& v) {
      std::int32_t m = INT32_MAX;
      for (const auto& s : v) m = std::min(m, s.dates.front());
      return m;
    };
    auto max_label = [](const std::vector<WindowSample>& v) {
      std::int32_t m = INT32_MIN;
      for (const auto& s : v) m = std::max(m, s.label_date);
      return m;
    };
    CHECK(max_day(sp.train) < min_day(sp.val));
    CHECK(max_day(sp.val) < min_day(sp.test));
    CHECK(max_label(sp.train) < min_day(sp.val));
    CHECK(max_label(sp.val) < min_day(sp.test));
    std::set<std::int32_t> starts;
    for (const auto* part : {&sp.train, &sp.val, &sp.test})
      for (const auto& s : *part) CHECK(starts.insert(s.dates.front()).second);
    CHECK(starts.size() + 10 == w.size());  // five windows, label day included, straddle each cut
    CHECK(sp.warnings.size() == 1);
  }
  CHECK_THROWS_AS(temporal_split({dated_sample(0, 1), dated_sample(1, 1)}), DataError);
  CHECK_THROWS_AS(temporal_split({dated_sample(2, 1), dated_sample(1, 1), dated_sample(3, 1)}), DataError);
}

TEST_CASE("fingerprint and vocabulary") {
  const auto bars = daily_bars({"B", "A"}, 0, 5);
  auto other = bars;
  other[3].adj_close *= 1.0000001;
  CHECK(fingerprint(bars, {}) == fingerprint(bars, {}));
  CHECK(fingerprint(bars, {}) != fingerprint(other, {}));
  CHECK(stock_vocabulary(bars) == std::vector<std::string>{"A", "B"});
}

TEST_CASE("synthetic generator") {
  SynthSpec spec;
  spec.n_stocks = 4;
  spec.n_days = 300;
  SUBCASE("deterministic per seed") {
    const auto a = synth_generate(spec), b = synth_generate(spec);
    CHECK(fingerprint(a.bars, a.text) == fingerprint(b.bars, b.text));
    spec.seed = 1;
    const auto c = synth_generate(spec);
    CHECK(fingerprint(a.bars, a.text) != fingerprint(c.bars, c.text));
  }
  SUBCASE("weekday calendar and full coverage") {
    const auto d = synth_generate(spec);
    CHECK(d.bars.size() == 4 * 300);
    CHECK(d.text.size() == 4 * 300);
    for (const auto& b : d.bars) {
      const int wd = int((b.date + 4) % 7);  // 1970-01-01 was a Thursday
      CHECK(wd != 0);
      CHECK(wd != 6);
    }
    double norm = 0;
    for (float x : d.direction) norm += double(x) * x;
    CHECK(norm == doctest::Approx(1.0).epsilon(1e-6));
  }
  SUBCASE("closed-form Bayes accuracy") {
    SynthSpec s = spec;
    s.coupling = 0.0;
    CHECK(std::abs(synth_bayes_accuracy(s) - 0.5) < 0.02);
    s.coupling = 1.0;
    s.text_noise = 0.0;
    CHECK(synth_bayes_accuracy(s) == doctest::Approx(1.0).epsilon(1e-9));
    s.text_noise = 0.5;
    const double mid = synth_bayes_accuracy(s);
    CHECK(mid > 0.9);
    CHECK(mid < 1.0);
  }
  SUBCASE("logistic regression on the planted features approaches the Bayes accuracy") {
    SynthSpec s;
    s.n_stocks = 8;
    s.n_days = 2000;
    s.seed = 3;
    const auto d = synth_generate(s);
    const std::size_t n = s.n_stocks, days = s.n_days;
    auto close = [&](std::size_t i, std::size_t day) { return d.bars[i * days + day].adj_close; };
    auto move = [&](std::size_t i, std::size_t day) { return (close(i, day) / close(i, day - 1) - 1.0) * 100.0; };
    struct Row {
      double a, b;
      int y;
    };
    std::vector<Row> rows;
    for (std::size_t day = s.text_lag + 2; day + 1 < days; ++day)
      for (std::size_t i = 0; i < n; ++i) {
        const Label l = label(move(i, day + 1));
        if (l == Label::discarded) continue;
        const auto& text = d.text.at({d.bars[i * days].stock, d.bars[i * days + day - s.text_lag].date});
        double proj = 0;
        for (std::size_t k = 0; k < kTextDim; ++k) proj += double(text[k]) * d.direction[k];
        rows.push_back({move((i + 1) % n, day), proj, l == Label::positive ? 1 : 0});
      }
    const std::size_t cut = rows.size() * 7 / 10;
    double w0 = 0, w1 = 0, w2 = 0;
    for (int it = 0; it < 3000; ++it) {
      double g0 = 0, g1 = 0, g2 = 0;
      for (std::size_t r = 0; r < cut; ++r) {
        const double p = 1.0 / (1.0 + std::exp(-(w0 + w1 * rows[r].a + w2 * rows[r].b)));
        g0 += p - rows[r].y;
        g1 += (p - rows[r].y) * rows[r].a;
        g2 += (p - rows[r].y) * rows[r].b;
      }
      w0 -= 0.5 * g0 / double(cut);
      w1 -= 0.5 * g1 / double(cut);
      w2 -= 0.5 * g2 / double(cut);
    }
    std::size_t right = 0;
    for (std::size_t r = cut; r < rows.size(); ++r) right += ((w0 + w1 * rows[r].a + w2 * rows[r].b) >= 0) == (rows[r].y == 1);
    const double acc = double(right) / double(rows.size() - cut);
    CHECK(std::abs(acc - synth_bayes_accuracy(s)) < 0.05);
  }
  SUBCASE("generator settings text") {
    std::istringstream in("n_stocks=3\n# comment\ncoupling = 0.5\nstart_date=2015-01-05\ntext_rank=4\n");
    const SynthSpec p = parse_synth_spec(in);
    CHECK(p.n_stocks == 3);
    CHECK(p.coupling == 0.5);
    CHECK(p.text_rank == 4);
    CHECK(format_date(p.start_date) == "2015-01-05");
    std::istringstream round(to_text(p));
    CHECK(to_text(parse_synth_spec(round)) == to_text(p));
    std::istringstream unknown("colour=blue\n");
    CHECK_THROWS_AS(parse_synth_spec(unknown), DataError);
    std::istringstream bad("coupling=2\n");
    CHECK_THROWS_AS(parse_synth_spec(bad), std::invalid_argument);
  }
}
