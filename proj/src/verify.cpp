#include "hot/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <random>
#include <stdexcept>

#include "hot/kernels.hpp"
#include "hot/kron.hpp"
#include "hot/model.hpp"
#include "hot/optim.hpp"

namespace hot {

namespace {

struct Recorder {
  std::vector<CheckResult>& out;
  std::string suite;

  // Passes when measured <= tolerance.
  void at_most(const std::string& id, double measured, double tol) {
    out.push_back({suite, id, measured, tol, std::isfinite(measured) && measured <= tol});
  }
  // Passes when measured >= tolerance (a lower bound).
  void at_least(const std::string& id, double measured, double bound) {
    out.push_back({suite, id, measured, bound, std::isfinite(measured) && measured >= bound});
  }
  void info(const std::string& id, double measured) { out.push_back({suite, id, measured, 0.0, true, false}); }
};

double rel_diff(const Tensor& a, const Tensor& b) {
  const double nb = frobenius_norm(b);
  return frobenius_norm(a - b) / (nb > 0 ? nb : 1.0);
}

// ---------------------------------------------------------------------------

void tensors_suite(Recorder& r, const VerifyHooks& h) {
  std::mt19937_64 rng(11);
  double id_err = 0, consist = 0, kron_err = 0, commute = 0;
  bool kernels_match = true;
  for (int trial = 0; trial < 20; ++trial) {
    const Shape shape{2 + std::size_t(trial % 3), 3, 1 + std::size_t(trial % 4)};
    const Tensor t = random_normal(shape, rng);
    for (std::size_t mode = 0; mode < 3; ++mode) {
      id_err = std::max(id_err, max_abs_diff(h.mode_product(t, Tensor::identity(shape[mode]), mode), t));
      const Tensor m = random_normal({4, shape[mode]}, rng);
      const Tensor lhs = matricize(h.mode_product(t, m, mode), mode);
      consist = std::max(consist, max_abs_diff(lhs, reference::matmul(m, matricize(t, mode))));
      kernels_match = kernels_match && kernels::mode_product(t, m, mode) == reference::mode_product(t, m, mode);
    }
    const Tensor a = random_normal({shape[0], shape[0]}, rng), b = random_normal({shape[1], shape[1]}, rng);
    commute = std::max(commute, max_abs_diff(h.mode_product(h.mode_product(t, a, 0), b, 1),
                                             h.mode_product(h.mode_product(t, b, 1), a, 0)));
    const Tensor p = random_normal({3, 3}, rng), q = random_normal({4, 4}, rng);
    const Tensor x = random_normal({3, 1}, rng), y = random_normal({4, 1}, rng);
    kron_err = std::max(kron_err, max_abs_diff(matmul(kronecker(p, q), kronecker(x, y)),
                                               kronecker(matmul(p, x), matmul(q, y))));
    const Tensor mm1 = random_normal({17, 9}, rng), mm2 = random_normal({9, 13}, rng);
    kernels_match = kernels_match && kernels::matmul(mm1, mm2) == reference::matmul(mm1, mm2);
  }
  r.at_most("mode_product_identity", id_err, 0.0);
  r.at_most("matricize_consistency", consist, 1e-12);
  r.at_most("distinct_modes_commute", commute, 1e-12);
  r.at_most("kronecker_mixed_product", kron_err, 1e-12);
  r.at_most("parallel_kernels_bitwise", kernels_match ? 0.0 : 1.0, 0.0);
}

// ---------------------------------------------------------------------------

Tensor materialized_factored(const Tensor& x, const AttentionParams& params, const AttentionConfig& cfg) {
  const auto s = Shape3::of(x);
  const auto mats = factored_attention_matrices(x, params, cfg);
  Tensor out = x;
  const Tensor flat = reshape(x, {s.n_vars * s.n_steps, s.n_feat});
  for (std::size_t hd = 0; hd < params.size(); ++hd) {
    const Tensor big = kronecker(mats[hd].s1, mats[hd].s2);
    const Tensor y = matmul(matmul(big, matmul(flat, params[hd].wv)), params[hd].wo);
    out = out + reshape(y, x.shape());
  }
  return out;
}

void attention_suite(Recorder& r, const VerifyHooks& h) {
  std::mt19937_64 rng(23);
  double exact_vs_standard = 0, factored_vs_kron = 0, parallel_vs_serial = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng() % 4, t = 1 + rng() % 6, d = 1 + rng() % 8, heads = 1 + rng() % 2;
    const std::size_t dh = 1 + rng() % 4;
    const Tensor x = random_normal({n, t, d}, rng);
    const auto params = init_attention_params(d, heads, dh, rng);
    const Tensor ex = h.exact(x, params, ScoreScale::model_dim);
    const Tensor st = reshape(standard_attention(reshape(x, {n * t, d}), params), x.shape());
    exact_vs_standard = std::max(exact_vs_standard, max_abs_diff(ex, st));
    parallel_vs_serial = std::max(parallel_vs_serial, max_abs_diff(ex, reference::exact_ho_attention(x, params)));

    AttentionConfig cfg;
    cfg.variant = Variant::factored;
    cfg.heads = heads;
    cfg.head_size = dh;
    cfg.pooling = static_cast<Pooling>(trial % 2);  // sum, mean
    factored_vs_kron = std::max(factored_vs_kron, max_abs_diff(h.factored(x, params, cfg), materialized_factored(x, params, cfg)));
  }
  r.at_most("exact_equals_flattened_standard", exact_vs_standard, 1e-10);
  r.at_most("exact_parallel_equals_serial", parallel_vs_serial, 0.0);
  r.at_most("factored_equals_kronecker_materialized", factored_vs_kron, 1e-10);

  // Kernelized fidelity on the full outputs; the attention part alone is
  // reported beside it without a gate.
  {
    const std::size_t n = 2, t = 8, d = 4;
    std::mt19937_64 prng(5);
    const Tensor x = random_normal({n, t, d}, prng);
    const auto params = init_attention_params(d, 1, 4, prng);
    AttentionConfig cfg;
    cfg.heads = 1;
    cfg.head_size = 4;
    cfg.features = 2048;
    cfg.variant = Variant::factored;
    const Tensor ref = h.factored(x, params, cfg) - x;
    const Tensor full = ref + x;
    double total = 0.0, attn_only = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      cfg.variant = Variant::kernelized;
      cfg.seed = seed;
      const auto maps = make_feature_maps(cfg);
      const Tensor y = h.kernelized(x, params, cfg, maps);
      total += rel_diff(y, full);
      attn_only += rel_diff(y - x, ref);
    }
    r.at_most("kernelized_vs_factored_mean_rel_error_m2048", total / 20.0, 0.05);
    r.info("kernelized_vs_factored_attention_part_m2048", attn_only / 20.0);
  }

  // Implied kernel attention matrices are row-stochastic, and applying them
  // as a Kronecker product reproduces the kernelized output.
  {
    double row_err = 0, apply_err = 0;
    for (int trial = 0; trial < 10; ++trial) {
      const std::size_t n = 2 + trial % 3, t = 3 + trial % 4, d = 4;
      const Tensor x = random_normal({n, t, d}, rng);
      const auto params = init_attention_params(d, 1, 4, rng);
      AttentionConfig cfg;
      cfg.variant = Variant::kernelized;
      cfg.heads = 1;
      cfg.head_size = 4;
      cfg.features = 32;
      cfg.seed = static_cast<std::uint64_t>(trial);
      const auto maps = make_feature_maps(cfg);
      const double root = std::sqrt(cfg.score_scale(d));
      auto implied = [&](const Tensor& pq, const Tensor& pk) {
        const Tensor fq = kernel_features(root * pq, maps[0]), fk = kernel_features(root * pk, maps[0]);
        Tensor a = matmul(fq, transpose(fk));
        for (std::size_t i = 0; i < a.rows(); ++i) {
          double z = 0;
          for (std::size_t j = 0; j < a.cols(); ++j) z += a[i * a.cols() + j];
          for (std::size_t j = 0; j < a.cols(); ++j) a[i * a.cols() + j] /= z;
        }
        return a;
      };
      const Tensor q = reshape(matmul(reshape(x, {n * t, d}), params[0].wq), {n, t, 4});
      const Tensor k = reshape(matmul(reshape(x, {n * t, d}), params[0].wk), {n, t, 4});
      const Tensor a1 = implied(pool_time(q, cfg.pooling), pool_time(k, cfg.pooling));
      const Tensor a2 = implied(pool_vars(q, cfg.pooling), pool_vars(k, cfg.pooling));
      for (const Tensor* a : {&a1, &a2})
        for (std::size_t i = 0; i < a->rows(); ++i) {
          double s = 0;
          for (std::size_t j = 0; j < a->cols(); ++j) s += (*a)[i * a->cols() + j];
          row_err = std::max(row_err, std::abs(s - 1.0));
        }
      const Tensor v = matmul(reshape(x, {n * t, d}), params[0].wv);
      const Tensor y = x + reshape(matmul(matmul(kronecker(a1, a2), v), params[0].wo), x.shape());
      apply_err = std::max(apply_err, max_abs_diff(h.kernelized(x, params, cfg, maps), y));
    }
    r.at_most("kernel_attention_rows_sum_to_one", row_err, 1e-12);
    r.at_most("kernelized_equals_implied_kronecker", apply_err, 1e-10);
  }
}

// ---------------------------------------------------------------------------

void kron_suite(Recorder& r) {
  std::mt19937_64 rng(31);
  const std::size_t n = 3, t = 4;
  double full_rank = 0, monotone = 0, tail = 0, rank_one = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor a = random_normal({n * t, n * t}, rng);
    const double na = frobenius_norm(a);
    const auto full = nearest_kronecker(a, n, t, 9);
    full_rank = std::max(full_rank, frobenius_norm(a - reconstruct(full)) / na);
    double prev = na;
    for (std::size_t rank = 1; rank <= 9; ++rank) {
      const auto f = nearest_kronecker(a, n, t, rank);
      const double err = frobenius_norm(a - reconstruct(f));
      monotone = std::max(monotone, err - prev);
      tail = std::max(tail, std::abs(err - f.tail_error()));
      prev = err;
    }
    const Tensor b = random_normal({n, n}, rng), c = random_normal({t, t}, rng);
    const Tensor bc = kronecker(b, c);
    rank_one = std::max(rank_one, frobenius_norm(bc - reconstruct(nearest_kronecker(bc, n, t, 1))) / frobenius_norm(bc));
  }
  r.at_most("full_rank_relative_error", full_rank, 1e-10);
  r.at_most("error_increase_with_rank", std::max(monotone, 0.0), 1e-12);
  r.at_most("error_matches_svd_tail", tail, 1e-9);
  r.at_most("kronecker_product_rank_one_exact", rank_one, 1e-12);
}

// ---------------------------------------------------------------------------

using Builder = std::function<ad::Var(std::vector<ad::Var>&)>;

// max relative FD error of sum(op(inputs) * w) for fixed random weights w.
double primitive_check(const std::vector<Tensor>& inputs, const Builder& build, std::uint64_t seed) {
  Params params;
  for (std::size_t i = 0; i < inputs.size(); ++i) params.emplace("x" + std::to_string(i), inputs[i]);
  Tensor weights;
  auto run = [&](const Params& p, bool grad, Params* out) {
    ad::Tape tape;
    std::vector<ad::Var> vars;
    for (const auto& [name, v] : p) vars.push_back(tape.leaf(v, grad));
    const ad::Var y = build(vars);
    if (weights.empty()) {
      std::mt19937_64 rng(seed);
      weights = random_normal(y.shape(), rng);
    }
    const ad::Var loss = ad::sum(ad::mul(y, tape.constant(weights)));
    if (out) {
      auto g = tape.backward(loss);
      std::size_t k = 0;
      for (const auto& [name, v] : p) out->emplace(name, g.at(vars[k++].id));
    }
    return loss.value().item();
  };
  run(params, false, nullptr);
  const auto report = grad_check([&](const Params& p) { return run(p, false, nullptr); },
                                 [&](const Params& p) {
                                   Params g;
                                   run(p, true, &g);
                                   return g;
                                 },
                                 params, 1e-5);
  return report.worst;
}

// Entries kept away from zero so that product pooling and log stay smooth.
Tensor away_from_zero(Shape s, std::mt19937_64& rng) {
  Tensor t = random_uniform(std::move(s), rng, 0.4, 1.6);
  std::bernoulli_distribution flip(0.5);
  for (auto& v : t.data())
    if (flip(rng)) v = -v;
  return t;
}

void primitive_gradients(Recorder& r) {
  std::mt19937_64 rng(41);
  const double tol = 1e-6;
  auto check = [&](const std::string& id, std::vector<Tensor> in, const Builder& b) {
    r.at_most("primitive_" + id, primitive_check(in, b, rng()), tol);
  };
  auto rn = [&](Shape s) { return random_normal(std::move(s), rng); };

  check("add", {rn({3, 4}), rn({3, 4})}, [](auto& v) { return ad::add(v[0], v[1]); });
  check("sub", {rn({3, 4}), rn({3, 4})}, [](auto& v) { return ad::sub(v[0], v[1]); });
  check("mul", {rn({3, 4}), rn({3, 4})}, [](auto& v) { return ad::mul(v[0], v[1]); });
  check("scale", {rn({5})}, [](auto& v) { return ad::scale(v[0], -1.7); });
  check("exp", {rn({2, 3})}, [](auto& v) { return ad::exp(v[0]); });
  check("log", {random_uniform({2, 3}, rng, 0.5, 2.0)}, [](auto& v) { return ad::log(v[0]); });
  check("silu", {rn({2, 5})}, [](auto& v) { return ad::silu(v[0]); });
  check("elu_plus_one", {away_from_zero({2, 5}, rng)}, [](auto& v) { return ad::elu_plus_one(v[0]); });
  check("add_bias", {rn({2, 3, 4}), rn({4})}, [](auto& v) { return ad::add_bias(v[0], v[1]); });
  check("matmul", {rn({3, 4}), rn({4, 2})}, [](auto& v) { return ad::matmul(v[0], v[1]); });
  check("matmul_nt", {rn({3, 4}), rn({5, 4})}, [](auto& v) { return ad::matmul_nt(v[0], v[1]); });
  check("transpose", {rn({3, 4})}, [](auto& v) { return ad::transpose(v[0]); });
  check("linear", {rn({2, 3, 4}), rn({4, 5})}, [](auto& v) { return ad::linear(v[0], v[1]); });
  for (std::size_t mode = 0; mode < 3; ++mode)
    check("mode_product_" + std::to_string(mode), {rn({2, 3, 4}), rn({3, Shape{2, 3, 4}[mode]})},
          [mode](auto& v) { return ad::mode_product(v[0], v[1], mode); });
  check("reshape", {rn({2, 6})}, [](auto& v) { return ad::reshape(v[0], {3, 4}); });
  check("concat", {rn({2, 1, 3}), rn({2, 4, 3})}, [](auto& v) { return ad::concat(v[0], v[1], 1); });
  check("select", {rn({2, 4, 3})}, [](auto& v) { return ad::select(v[0], 1, 2); });
  check("gather_rows", {rn({4, 3})}, [](auto& v) { return ad::gather_rows(v[0], {2, 0, 2}); });
  check("sum", {rn({2, 3})}, [](auto& v) { return ad::sum(v[0]); });
  check("mean", {rn({2, 3})}, [](auto& v) { return ad::mean(v[0]); });
  const ad::Mask keep = {1, 0, 1, 1, 1, 0, 0, 1, 1, 1, 1, 1};  // (3, 4)
  for (auto kind : {Pooling::sum, Pooling::mean, Pooling::product})
    for (std::size_t axis = 0; axis < 2; ++axis) {
      const std::string id = "pool_" + to_string(kind) + "_axis" + std::to_string(axis);
      check(id, {away_from_zero({3, 4, 2}, rng)}, [=](auto& v) { return ad::pool(v[0], axis, kind); });
      check(id + "_masked", {away_from_zero({3, 4, 2}, rng)}, [=](auto& v) { return ad::pool(v[0], axis, kind, keep); });
    }
  check("softmax_rows", {rn({3, 4})}, [](auto& v) { return ad::softmax_rows(v[0]); });
  check("softmax_rows_masked", {rn({3, 4})}, [keep](auto& v) { return ad::softmax_rows(v[0], keep); });
  check("rmsnorm", {rn({2, 3, 4}), rn({4})}, [](auto& v) { return ad::rmsnorm(v[0], v[1]); });
  check("rotary", {rn({2, 5, 4})}, [](auto& v) { return ad::rotary(v[0], 1.0); });
  {
    const Tensor dirs = rn({6, 3});
    check("kernel_features", {random_normal({4, 3}, rng, 0.5)}, [dirs](auto& v) { return ad::kernel_features(v[0], dirs); });
  }
  for (std::size_t mode = 0; mode < 2; ++mode)
    check("div_mode_" + std::to_string(mode), {rn({3, 4, 2}), random_uniform({mode == 0 ? 3u : 4u}, rng, 0.5, 2.0)},
          [mode](auto& v) { return ad::div_mode(v[0], v[1], mode); });
  {
    const Tensor y = Tensor::vector({1, 0, 1, 0}), w = Tensor::vector({1, 1, 0, 1});
    check("bce_with_logits", {rn({4})}, [y, w](auto& v) { return ad::bce_with_logits(v[0], y, w); });
  }
}

void model_gradients(Recorder& r) {
  const std::size_t n = 2, t = 5;
  std::mt19937_64 rng(53);
  ModelConfig base;
  base.hidden = 8;
  base.heads = 2;
  base.blocks = 1;
  base.features = 16;
  base.text_dim = 16;
  const Tensor prices = random_normal({n, t, kPriceFeatures}, rng);
  const Tensor text = random_normal({n, t, base.text_dim}, rng);
  const ad::Mask mask = {1, 1, 0, 1, 1, 1, 0, 1, 1, 1};
  const Tensor labels = Tensor::vector({1, 0}), valid = Tensor::vector({1, 1});

  struct Case {
    Variant variant;
    AttentionDims dims;
    Modality modality;
  };
  std::vector<Case> cases;
  for (auto v : {Variant::exact, Variant::factored, Variant::kernelized})
    for (auto a : {AttentionDims::none, AttentionDims::stock, AttentionDims::time, AttentionDims::both})
      cases.push_back({v, a, Modality::multimodal});
  for (auto v : {Variant::exact, Variant::factored, Variant::kernelized})
    for (auto m : {Modality::price, Modality::text}) cases.push_back({v, AttentionDims::both, m});

  for (const auto& c : cases) {
    ModelConfig cfg = base;
    cfg.variant = c.variant;
    cfg.dims = c.dims;
    cfg.modality = c.modality;
    cfg.seed = 7;
    const Model m = init_model(cfg, {"A", "B", "C"});
    ModelInput in;
    in.prices = &prices;
    in.text = &text;
    in.text_mask = &mask;
    in.stock_ids = {2, 0};
    const auto report = grad_check([&](const Params& p) { return loss_value(m, p, in, labels, valid); },
                                   [&](const Params& p) { return loss_and_grad(m, p, in, labels, valid).grads; },
                                   m.params, 1e-5, 24, 3);
    r.at_most("model_" + to_string(c.variant) + "_" + to_string(c.dims) + "_" + to_string(c.modality), report.worst,
              1e-4);
  }
}

}  // namespace

std::vector<CheckResult> run_verify(const std::string& suite, const VerifyHooks& hooks) {
  static const char* known[] = {"tensors", "attention", "kron", "gradients", "all"};
  if (std::find(std::begin(known), std::end(known), suite) == std::end(known))
    throw std::invalid_argument("unknown suite '" + suite + "' (tensors|attention|kron|gradients|all)");
  std::vector<CheckResult> out;
  const bool all = suite == "all";
  if (all || suite == "tensors") {
    Recorder r{out, "tensors"};
    tensors_suite(r, hooks);
  }
  if (all || suite == "attention") {
    Recorder r{out, "attention"};
    attention_suite(r, hooks);
  }
  if (all || suite == "kron") {
    Recorder r{out, "kron"};
    kron_suite(r);
  }
  if (all || suite == "gradients") {
    Recorder r{out, "gradients"};
    primitive_gradients(r);
    model_gradients(r);
  }
  return out;
}

bool all_passed(const std::vector<CheckResult>& results) {
  return std::all_of(results.begin(), results.end(), [](const CheckResult& c) { return c.pass; });
}

void write_verify_report(std::ostream& os, const std::vector<CheckResult>& results) {
  os << "suite,id,measured,tolerance,result\n";
  char buf[64];
  for (const auto& c : results) {
    if (!c.gated) {
      std::snprintf(buf, sizeof buf, "%.6e,", c.measured);
      os << c.suite << ',' << c.id << ',' << buf << ",info\n";
      continue;
    }
    std::snprintf(buf, sizeof buf, "%.6e,%.1e", c.measured, c.tolerance);
    os << c.suite << ',' << c.id << ',' << buf << ',' << (c.pass ? "pass" : "FAIL") << '\n';
  }
}

}  // namespace hot
