#include <doctest.h>

#include <cmath>
#include <random>
#include <stdexcept>

#include "hot/autodiff.hpp"
#include "hot/optim.hpp"

using namespace hot;

namespace {

// Central differences of a scalar function of one tensor.
Tensor finite_difference(const std::function<double(const Tensor&)>& f, Tensor x, double eps = 1e-5) {
  Tensor g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + eps;
    const double up = f(x);
    x[i] = keep - eps;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2 * eps);
  }
  return g;
}

double max_rel(const Tensor& a, const Tensor& b) {
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, relative_error(a[i], b[i]));
  return worst;
}

// Checks d/dx sum(w ∘ op(x)) against finite differences.
double check_unary(const std::function<ad::Var(ad::Var)>& op, const Tensor& x, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor w;
  {
    ad::Tape probe;
    w = random_normal(op(probe.leaf(x)).shape(), rng);
  }
  auto value = [&](const Tensor& at) {
    ad::Tape t;
    return ad::sum(ad::mul(op(t.leaf(at)), t.constant(w))).value().item();
  };
  ad::Tape tape;
  const ad::Var v = tape.leaf(x);
  const auto grads = tape.backward(ad::sum(ad::mul(op(v), tape.constant(w))));
  return max_rel(grads.at(v.id), finite_difference(value, x));
}

}  // namespace

TEST_CASE("backward on textbook examples") {
  std::mt19937_64 rng(1);
  SUBCASE("sum(x*x) gives 2x") {
    ad::Tape t;
    const Tensor x = random_normal({3, 4}, rng);
    const ad::Var v = t.leaf(x);
    const auto g = t.backward(ad::sum(ad::mul(v, v)));
    CHECK(max_abs_diff(g.at(v.id), 2.0 * x) == 0.0);
  }
  SUBCASE("sum(A x) gives the column sums of A") {
    ad::Tape t;
    const Tensor a = random_normal({4, 3}, rng), x = random_normal({3, 1}, rng);
    const ad::Var v = t.leaf(x);
    const auto g = t.backward(ad::sum(ad::matmul(t.constant(a), v)));
    for (std::size_t j = 0; j < 3; ++j) {
      double col = 0;
      for (std::size_t i = 0; i < 4; ++i) col += a.at(i, j);
      CHECK(g.at(v.id)[j] == doctest::Approx(col).epsilon(1e-14));
    }
  }
  SUBCASE("unused leaf gets exact zeros") {
    ad::Tape t;
    const ad::Var used = t.leaf(random_normal({2, 2}, rng));
    const ad::Var unused = t.leaf(random_normal({3}, rng));
    const auto g = t.backward(ad::sum(used));
    CHECK(g.at(unused.id) == Tensor({3}, 0.0));
  }
  SUBCASE("errors") {
    ad::Tape t, other;
    const ad::Var v = t.leaf(Tensor({2, 2}, 1.0));
    CHECK_THROWS_AS(t.backward(v), std::invalid_argument);
    CHECK_THROWS_AS(other.backward(ad::sum(v)), std::invalid_argument);
  }
}

TEST_CASE("primitive gradients match central differences") {
  std::mt19937_64 rng(2);
  const Tensor m = random_normal({3, 4}, rng);
  const Tensor cube = random_normal({3, 4, 6}, rng);
  const Tensor w = random_normal({4, 5}, rng);
  const Tensor mode_w = random_normal({2, 4}, rng);
  const Tensor gain = random_uniform({6}, rng, 0.5, 1.5);
  const Tensor directions = random_normal({7, 6}, rng);
  struct Case {
    const char* name;
    Tensor x;
    std::function<ad::Var(ad::Var)> op;
  };
  const std::vector<Case> cases{
      {"matmul", m, [&](ad::Var v) { return ad::matmul(v, v.tape->constant(w)); }},
      {"matmul_nt", m, [&](ad::Var v) { return ad::matmul_nt(v, v); }},
      {"mode_product", cube, [&](ad::Var v) { return ad::mode_product(v, v.tape->constant(mode_w), 1); }},
      {"add_mul", m, [&](ad::Var v) { return ad::mul(ad::add(v, v), v); }},
      {"exp", m, [](ad::Var v) { return ad::exp(v); }},
      {"silu", m, [](ad::Var v) { return ad::silu(v); }},
      {"elu_plus_one", m, [](ad::Var v) { return ad::elu_plus_one(v); }},
      {"softmax", m, [](ad::Var v) { return ad::softmax_rows(v); }},
      {"softmax_masked", m, [](ad::Var v) { return ad::softmax_rows(v, ad::Mask{1, 0, 1, 1, 1, 1, 0, 1, 0, 0, 1, 1}); }},
      {"rmsnorm", cube, [&](ad::Var v) { return ad::rmsnorm(v, v.tape->constant(gain)); }},
      {"rotary", cube, [](ad::Var v) { return ad::rotary(v, 1.0); }},
      {"mean_pool_time", cube, [](ad::Var v) { return ad::pool(v, 1, Pooling::mean); }},
      {"sum_pool_vars", cube, [](ad::Var v) { return ad::pool(v, 0, Pooling::sum); }},
      {"product_pool", cube, [](ad::Var v) { return ad::pool(v, 1, Pooling::product); }},
      {"kernel_features", reshape(cube, {12, 6}), [&](ad::Var v) { return ad::kernel_features(ad::scale(v, 0.3), directions); }},
      {"transpose_select", cube, [](ad::Var v) { return ad::transpose(ad::select(v, 1, 2)); }},
      {"concat", cube, [](ad::Var v) { return ad::concat(v, ad::scale(v, 2.0), 1); }},
  };
  for (const auto& c : cases) {
    CAPTURE(c.name);
    CHECK(check_unary(c.op, c.x, 7) < 1e-6);
  }
}

TEST_CASE("softmax cross-entropy composite") {
  std::mt19937_64 rng(3);
  const Tensor x = random_normal({6}, rng);
  const Tensor targets = Tensor::vector({1, 0, 1, 1, 0, 0});
  const Tensor weights = Tensor::vector({1, 1, 0, 1, 1, 1});
  auto loss = [&](ad::Var v) { return ad::bce_with_logits(v, targets, weights); };
  auto value = [&](const Tensor& at) {
    ad::Tape t;
    return loss(t.leaf(at)).value().item();
  };
  ad::Tape tape;
  const ad::Var v = tape.leaf(x);
  const auto g = tape.backward(loss(v));
  CHECK(max_rel(g.at(v.id), finite_difference(value, x)) < 1e-6);
}

TEST_CASE("gradient of a sum of losses is the sum of gradients") {
  std::mt19937_64 rng(4);
  const Tensor x = random_normal({3, 5}, rng);
  auto l1 = [](ad::Var v) { return ad::sum(ad::exp(ad::scale(v, 0.5))); };
  auto l2 = [](ad::Var v) { return ad::sum(ad::softmax_rows(ad::mul(v, v))); };
  ad::Tape t;
  const ad::Var v = t.leaf(x);
  const Tensor g12 = t.backward(ad::add(l1(v), l2(v))).at(v.id);
  const Tensor g1 = t.backward(l1(v)).at(v.id);
  const Tensor g2 = t.backward(l2(v)).at(v.id);
  CHECK(max_abs_diff(g12, g1 + g2) < 1e-12);
}

TEST_CASE("tape replay is bit-exact") {
  std::mt19937_64 rng(5);
  ad::Tape t;
  const ad::Var x = t.leaf(random_normal({4, 6}, rng));
  const ad::Var g = t.leaf(random_uniform({6}, rng, 0.5, 1.5));
  (void)ad::sum(ad::softmax_rows(ad::rmsnorm(ad::silu(x), g)));
  CHECK(t.replay_matches());
  for (std::size_t id = 1; id < t.size(); ++id)
    for (auto in : t.inputs(id)) CHECK(in < id);
}

TEST_CASE("rmsnorm listed values") {
  ad::Tape t;
  const Tensor y = ad::rmsnorm(t.constant(Tensor::vector({3, 4})), t.constant(Tensor::vector({1, 1})), 0.0).value();
  const double rms = std::sqrt(12.5);
  CHECK(y[0] == doctest::Approx(3 / rms).epsilon(1e-14));
  CHECK(y[1] == doctest::Approx(4 / rms).epsilon(1e-14));
  CHECK(y[0] == doctest::Approx(0.8485).epsilon(1e-4));
  CHECK(y[1] == doctest::Approx(1.1314).epsilon(1e-4));
  const Tensor scaled =
      ad::rmsnorm(t.constant(Tensor::vector({30, 40})), t.constant(Tensor::vector({1, 1})), 0.0).value();
  CHECK(max_abs_diff(scaled, y) < 1e-15);
  const Tensor zero = ad::rmsnorm(t.constant(Tensor::vector({0, 0})), t.constant(Tensor::vector({1, 1}))).value();
  CHECK(zero == Tensor::vector({0, 0}));
}

TEST_CASE("rotary properties") {
  std::mt19937_64 rng(6);
  ad::Tape t;
  const Tensor q = random_normal({1, 1, 8}, rng), k = random_normal({1, 1, 8}, rng);
  CHECK(ad::rotary(t.constant(q), 0.0).value() == q);
  auto rot = [&](const Tensor& x, double p) { return ad::rotary(t.constant(x), p).value(); };
  auto dot = [](const Tensor& a, const Tensor& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  };
  for (double shift : {1.0, 3.0, 17.0}) CHECK(std::abs(dot(rot(q, 2), rot(k, 5)) - dot(rot(q, 2 + shift), rot(k, 5 + shift))) < 1e-10);
  CHECK(std::abs(frobenius_norm(rot(q, 9)) - frobenius_norm(q)) < 1e-12);
  CHECK_THROWS_AS(ad::rotary(t.constant(Tensor({2, 3})), 0.0), std::invalid_argument);
}

TEST_CASE("kernel features") {
  std::mt19937_64 rng(7);
  ad::Tape t;
  const std::size_t m = 16;
  const Tensor directions = random_normal({m, 4}, rng);
  const Tensor zero = ad::kernel_features(t.constant(Tensor({1, 4})), directions).value();
  for (std::size_t j = 0; j < m; ++j) CHECK(zero[j] == doctest::Approx(1.0 / std::sqrt(double(m))).epsilon(1e-15));
  const Tensor many = ad::kernel_features(t.constant(random_normal({10000, 4}, rng)), directions).value();
  for (double v : many.data()) REQUIRE(v > 0.0);
}

TEST_CASE("grad_check") {
  std::mt19937_64 rng(8);
  Params p{{"a", random_normal({3, 3}, rng)}, {"b", random_normal({4}, rng)}};
  auto f = [](const Params& q) {
    double s = 0;
    for (const auto& [name, t] : q)
      for (double v : t.data()) s += 0.5 * v * v + v;
    return s;
  };
  auto g = [](const Params& q) {
    Params out;
    for (const auto& [name, t] : q) {
      Tensor d = t;
      for (auto& v : d.data()) v += 1.0;
      out[name] = d;
    }
    return out;
  };
  const auto rep = grad_check(f, g, p);
  CHECK(rep.checked == 13);
  CHECK(rep.worst < 1e-9);
  auto wrong = [&](const Params& q) {
    Params out = g(q);
    out["b"][1] *= 1.01;
    return out;
  };
  const auto bad = grad_check(f, wrong, p);
  CHECK(bad.worst_param == "b");
  CHECK_FALSE(bad.passed(1e-4));
  CHECK(relative_error(1e-12, 0.0) == doctest::Approx(1e-4));
}

TEST_CASE("adam") {
  Params p{{"w", Tensor::vector({1.0, -2.0, 0.5})}};
  AdamState s;
  AdamConfig cfg;
  cfg.lr = 0.1;
  SUBCASE("zero gradient leaves parameters and advances the step") {
    adam_step(p, {{"w", Tensor({3}, 0.0)}}, s, cfg);
    CHECK(p.at("w") == Tensor::vector({1.0, -2.0, 0.5}));
    CHECK(s.step == 1);
  }
  SUBCASE("first step from zero state") {
    const Tensor g = Tensor::vector({0.3, -4.0, 1e-3});
    adam_step(p, {{"w", g}}, s, cfg);
    // m̂ = g and v̂ = g² after bias correction, so the step is lr·g/(|g|+eps).
    const double expected[3] = {1.0 - 0.1 * 0.3 / (0.3 + 1e-8), -2.0 + 0.1 * 4.0 / (4.0 + 1e-8),
                                0.5 - 0.1 * 1e-3 / (1e-3 + 1e-8)};
    for (int i = 0; i < 3; ++i) CHECK(p.at("w")[i] == doctest::Approx(expected[i]).epsilon(1e-12));
  }
  SUBCASE("deterministic") {
    Params p2 = p;
    AdamState s2;
    const Params g{{"w", Tensor::vector({0.1, 0.2, -0.3})}};
    for (int i = 0; i < 2; ++i) {
      adam_step(p, g, s, cfg);
      adam_step(p2, g, s2, cfg);
    }
    CHECK(p == p2);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(adam_step(p, {{"w", Tensor({2}, 0.0)}}, s, cfg), std::invalid_argument);
    CHECK_THROWS_AS(adam_step(p, {}, s, cfg), std::invalid_argument);
    CHECK_THROWS_AS(adam_step(p, {{"w", Tensor::vector({0, NAN, 0})}}, s, cfg), std::domain_error);
  }
}
