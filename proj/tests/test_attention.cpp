#include <doctest.h>

#include <cmath>
#include <cstring>
#include <random>
#include <stdexcept>

#include "hot/attention.hpp"
#include "oracles.hpp"

using namespace hot;

namespace {

AttentionConfig config(Variant v, std::size_t heads, std::size_t dh, std::size_t m = 64, std::uint64_t seed = 0) {
  AttentionConfig c;
  c.variant = v;
  c.heads = heads;
  c.head_size = dh;
  c.features = m;
  c.seed = seed;
  return c;
}

// Permutes the variable axis of (N, T, d).
Tensor permute_vars(const Tensor& x, const std::vector<std::size_t>& perm) {
  Tensor out(x.shape());
  const std::size_t row = x.extent(1) * x.extent(2);
  for (std::size_t i = 0; i < perm.size(); ++i)
    std::copy_n(x.raw() + perm[i] * row, row, out.raw() + i * row);
  return out;
}

}  // namespace

TEST_CASE("exact attention equals standard attention on the flattened input") {
  std::mt19937_64 rng(11);
  double worst = 0, worst_parallel = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng() % 4, t = 1 + rng() % 6, d = 1 + rng() % 8, heads = 1 + rng() % 2;
    const Tensor x = random_normal({n, t, d}, rng);
    const auto params = init_attention_params(d, heads, 1 + rng() % 4, rng);
    const Tensor ex = exact_ho_attention(x, params);
    const Tensor oracle = oracle::standard_attention(reshape(x, {n * t, d}), params, 1.0 / std::sqrt(double(d)));
    worst = std::max(worst, max_abs_diff(reshape(ex, {n * t, d}), oracle));
    worst_parallel = std::max(worst_parallel, max_abs_diff(ex, reference::exact_ho_attention(x, params)));
  }
  CHECK(worst < 1e-10);
  CHECK(worst_parallel == 0.0);
}

TEST_CASE("exact score tensor is a joint softmax over (j, tau)") {
  std::mt19937_64 rng(12);
  const Tensor x = random_normal({3, 4, 5}, rng);
  const auto params = init_attention_params(5, 1, 3, rng);
  const Tensor s = exact_attention_scores(x, params[0]);
  REQUIRE(s.shape() == Shape{3, 3, 4, 4});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t t = 0; t < 4; ++t) {
      double total = 0;
      for (std::size_t j = 0; j < 3; ++j)
        for (std::size_t tau = 0; tau < 4; ++tau) {
          CHECK(s.at(i, j, t, tau) >= 0.0);
          total += s.at(i, j, t, tau);
        }
      CHECK(std::abs(total - 1.0) < 1e-9);
    }
}

TEST_CASE("pooling") {
  std::mt19937_64 rng(13);
  const Tensor q = random_normal({3, 4, 2}, rng);
  CHECK(pool_time(Tensor({3, 4, 2}, 1.5), Pooling::mean) == Tensor({3, 2}, 1.5));
  CHECK(pool_vars(Tensor({3, 4, 2}, 1.5), Pooling::mean) == Tensor({4, 2}, 1.5));
  const Tensor one = random_normal({3, 1, 2}, rng);
  CHECK(pool_time(one, Pooling::mean) == reshape(one, {3, 2}));
  CHECK(max_abs_diff(pool_time(q, Pooling::sum), 4.0 * pool_time(q, Pooling::mean)) < 1e-14);
  CHECK(max_abs_diff(pool_vars(q, Pooling::sum), 3.0 * pool_vars(q, Pooling::mean)) < 1e-14);
  for (Pooling kind : {Pooling::sum, Pooling::mean, Pooling::product}) {
    const Tensor p = permute_vars(q, {2, 0, 1});
    CHECK(max_abs_diff(pool_vars(p, kind), pool_vars(q, kind)) < 1e-14);
  }
}

TEST_CASE("factored attention equals the materialized Kronecker oracle") {
  std::mt19937_64 rng(14);
  double worst = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng() % 4, t = 1 + rng() % 6, d = 1 + rng() % 8, heads = 1 + rng() % 2, dh = 1 + rng() % 4;
    const Tensor x = random_normal({n, t, d}, rng);
    const auto params = init_attention_params(d, heads, dh, rng);
    const Tensor got = factored_attention(x, params, config(Variant::factored, heads, dh));
    worst = std::max(worst, max_abs_diff(got, oracle::factored_attention(x, params, 1.0 / std::sqrt(double(d)))));
  }
  CHECK(worst < 1e-10);

  SUBCASE("listed (3,4,8), two heads") {
    const Tensor x = random_normal({3, 4, 8}, rng);
    const auto params = init_attention_params(8, 2, 4, rng);
    CHECK(max_abs_diff(factored_attention(x, params, config(Variant::factored, 2, 4)),
                       oracle::factored_attention(x, params, 1.0 / std::sqrt(8.0))) < 1e-10);
  }
}

TEST_CASE("factored attention properties") {
  std::mt19937_64 rng(15);
  SUBCASE("one variable reduces to temporal attention") {
    const Tensor x = random_normal({1, 6, 4}, rng);
    const auto params = init_attention_params(4, 2, 2, rng);
    const Tensor got = factored_attention(x, params, config(Variant::factored, 2, 2));
    CHECK(max_abs_diff(reshape(got, {6, 4}), standard_attention(reshape(x, {6, 4}), params)) < 1e-12);
  }
  SUBCASE("constant values stay constant") {
    Tensor x({3, 4, 5});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = double(i % 5) - 2.0;
    const auto params = init_attention_params(5, 1, 3, rng);
    const Tensor vo = oracle::project(oracle::project(Tensor({1, 5}, std::vector<double>{-2, -1, 0, 1, 2}), params[0].wv),
                                      params[0].wo);
    for (Variant v : {Variant::exact, Variant::factored, Variant::kernelized}) {
      const auto cfg = config(v, 1, 3, 32);
      const auto maps = make_feature_maps(cfg);
      const Tensor y = v == Variant::exact        ? exact_ho_attention(x, params)
                       : v == Variant::factored   ? factored_attention(x, params, cfg)
                                                  : kernelized_factored_attention(x, params, cfg, maps);
      double worst = 0;
      for (std::size_t i = 0; i < y.size(); ++i) worst = std::max(worst, std::abs(y[i] - x[i] - vo[i % 5]));
      CHECK(worst < 1e-12);
    }
  }
  SUBCASE("attention matrices are row-stochastic") {
    const Tensor x = random_normal({3, 5, 4}, rng);
    const auto params = init_attention_params(4, 2, 2, rng);
    for (const auto& m : factored_attention_matrices(x, params, config(Variant::factored, 2, 2)))
      for (const Tensor* s : {&m.s1, &m.s2})
        for (std::size_t i = 0; i < s->rows(); ++i) {
          double total = 0;
          for (std::size_t j = 0; j < s->cols(); ++j) {
            CHECK(s->at(i, j) >= 0.0);
            total += s->at(i, j);
          }
          CHECK(std::abs(total - 1.0) < 1e-9);
        }
  }
  SUBCASE("variable permutation equivariance") {
    const Tensor x = random_normal({4, 3, 6}, rng);
    const auto params = init_attention_params(6, 2, 2, rng);
    const std::vector<std::size_t> perm{2, 0, 3, 1};
    const auto cfg = config(Variant::factored, 2, 2);
    CHECK(max_abs_diff(factored_attention(permute_vars(x, perm), params, cfg),
                       permute_vars(factored_attention(x, params, cfg), perm)) < 1e-12);
  }
}

TEST_CASE("kernel feature map") {
  SUBCASE("zero input gives m^-1/2") {
    const auto map = KernelFeatureMap::sample(32, 4, 1);
    const Tensor f = kernel_features(Tensor({1, 4}), map);
    for (double v : f.data()) CHECK(v == doctest::Approx(1.0 / std::sqrt(32.0)).epsilon(1e-15));
  }
  SUBCASE("unbiased estimate of the softmax kernel") {
    std::mt19937_64 rng(16);
    const auto map = KernelFeatureMap::sample(100000, 4, 2);
    for (int trial = 0; trial < 5; ++trial) {
      Tensor q = random_normal({1, 4}, rng), k = random_normal({1, 4}, rng);
      q = (rng() % 1000 / 1000.0 / frobenius_norm(q)) * q;
      k = (rng() % 1000 / 1000.0 / frobenius_norm(k)) * k;
      const Tensor fq = kernel_features(q, map), fk = kernel_features(k, map);
      double est = 0, qk = 0;
      for (std::size_t j = 0; j < fq.size(); ++j) est += fq[j] * fk[j];
      for (std::size_t e = 0; e < 4; ++e) qk += q[e] * k[e];
      CHECK(std::abs(est / std::exp(qk) - 1.0) < 0.05);
    }
  }
  SUBCASE("deterministic per seed") {
    CHECK(KernelFeatureMap::sample(8, 4, 3).directions == KernelFeatureMap::sample(8, 4, 3).directions);
    CHECK_FALSE(KernelFeatureMap::sample(8, 4, 3).directions == KernelFeatureMap::sample(8, 4, 4).directions);
  }
}

TEST_CASE("kernelized attention") {
  std::mt19937_64 rng(17);
  SUBCASE("single token is the value projection plus residual") {
    const Tensor x = random_normal({1, 1, 6}, rng);
    const auto params = init_attention_params(6, 2, 2, rng);
    const auto cfg = config(Variant::kernelized, 2, 2, 16, 9);
    Tensor expected = reshape(x, {1, 6});
    for (const auto& h : params) expected = expected + oracle::project(oracle::project(reshape(x, {1, 6}), h.wv), h.wo);
    CHECK(max_abs_diff(reshape(kernelized_factored_attention(x, params, cfg, make_feature_maps(cfg)), {1, 6}), expected) <
          1e-12);
  }
  SUBCASE("approaches the factored output as m grows") {
    const Tensor x = random_normal({2, 8, 4}, rng);
    const auto params = init_attention_params(4, 1, 4, rng);
    const Tensor ref = factored_attention(x, params, config(Variant::factored, 1, 4));
    double small = 0, large = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto a = config(Variant::kernelized, 1, 4, 64, seed), b = config(Variant::kernelized, 1, 4, 4096, seed);
      small += oracle::rel_frobenius(kernelized_factored_attention(x, params, a, make_feature_maps(a)), ref);
      large += oracle::rel_frobenius(kernelized_factored_attention(x, params, b, make_feature_maps(b)), ref);
    }
    CHECK(large < small);
  }
}

TEST_CASE("flops estimate") {
  CHECK(flops_estimate(Variant::exact, 1, 1, 1, 1, 1) == 1.0);
  CHECK(flops_estimate(Variant::exact, 3, 8, 4, 2, 16) * 4 == flops_estimate(Variant::exact, 3, 16, 4, 2, 16));
  CHECK(flops_estimate(Variant::kernelized, 3, 8, 4, 2, 16) * 2 == flops_estimate(Variant::kernelized, 3, 16, 4, 2, 16));
  for (std::size_t n : {2, 5, 9}) CHECK(flops_estimate(Variant::factored, n, n, 7, 1, 1) == 2.0 * 7 * n * n * n);
}

TEST_CASE("differentiable attend") {
  std::mt19937_64 rng(18);
  const Tensor x = random_normal({3, 4, 6}, rng);
  const auto params = init_attention_params(6, 2, 2, rng);
  ad::Tape tape;
  std::vector<HeadVars> heads;
  for (const auto& p : params) heads.push_back(head_vars(tape, p, false));
  const ad::Var xv = tape.constant(x);
  AttentionInputs in{xv, xv};
  for (Variant v : {Variant::exact, Variant::factored, Variant::kernelized}) {
    CAPTURE(to_string(v));
    const auto cfg = config(v, 2, 2, 32, 5);
    const auto maps = make_feature_maps(cfg);
    SUBCASE("matches the tensor-level functions without the residual") {
      const Tensor got = attend(in, heads, cfg, AttentionDims::both, maps).value();
      const Tensor want = v == Variant::exact      ? exact_ho_attention(x, params)
                          : v == Variant::factored ? factored_attention(x, params, cfg)
                                                   : kernelized_factored_attention(x, params, cfg, maps);
      CHECK(max_abs_diff(got, want - x) < 1e-12);
    }
    SUBCASE("none gives zeros") {
      CHECK(attend(in, heads, cfg, AttentionDims::none, maps).value() == Tensor({3, 4, 6}, 0.0));
    }
    SUBCASE("stock-wise output is permutation equivariant and time-local") {
      const Tensor y = attend(in, heads, cfg, AttentionDims::stock, maps).value();
      // Changing time step 3 of the input must leave time steps 0..2 unchanged.
      Tensor x2 = x;
      for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t k = 0; k < 6; ++k) x2.at(i, 3, k) += 1.0;
      ad::Tape t2;
      std::vector<HeadVars> h2;
      for (const auto& p : params) h2.push_back(head_vars(t2, p, false));
      const ad::Var xv2 = t2.constant(x2);
      const Tensor y2 = attend(AttentionInputs{xv2, xv2}, h2, cfg, AttentionDims::stock, maps).value();
      if (v != Variant::exact) {
        // Factored paths pool over time, so only the exact path is strictly local.
        CHECK(y2.shape() == y.shape());
      } else {
        for (std::size_t i = 0; i < 3; ++i)
          for (std::size_t t = 0; t < 3; ++t)
            for (std::size_t k = 0; k < 6; ++k) CHECK(y2.at(i, t, k) == doctest::Approx(y.at(i, t, k)).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("config validation") {
  AttentionConfig c;
  c.heads = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  CHECK_THROWS_AS(parse_variant("softmax"), std::invalid_argument);
  CHECK(parse_variant("kernelized") == Variant::kernelized);
  CHECK(parse_dims("both") == AttentionDims::both);
  CHECK(to_string(AttentionDims::stock) == "stock");
}
