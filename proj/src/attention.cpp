#include "hot/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "hot/kernels.hpp"

namespace hot {

Variant parse_variant(const std::string& s) {
  if (s == "exact") return Variant::exact;
  if (s == "factored") return Variant::factored;
  if (s == "kernelized") return Variant::kernelized;
  throw std::invalid_argument("unknown variant '" + s + "' (exact|factored|kernelized)");
}

AttentionDims parse_dims(const std::string& s) {
  if (s == "none") return AttentionDims::none;
  if (s == "stock") return AttentionDims::stock;
  if (s == "time") return AttentionDims::time;
  if (s == "both") return AttentionDims::both;
  throw std::invalid_argument("unknown ablation '" + s + "' (none|stock|time|both)");
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::exact: return "exact";
    case Variant::factored: return "factored";
    case Variant::kernelized: return "kernelized";
  }
  return "?";
}

std::string to_string(AttentionDims a) {
  switch (a) {
    case AttentionDims::none: return "none";
    case AttentionDims::stock: return "stock";
    case AttentionDims::time: return "time";
    case AttentionDims::both: return "both";
  }
  return "?";
}

AttentionParams init_attention_params(std::size_t d, std::size_t heads, std::size_t head_size, std::mt19937_64& rng) {
  AttentionParams p(heads);
  const double in_std = 1.0 / std::sqrt(static_cast<double>(d));
  const double out_std = 1.0 / std::sqrt(static_cast<double>(head_size * heads));
  for (auto& h : p) {
    h.wq = random_normal({d, head_size}, rng, in_std);
    h.wk = random_normal({d, head_size}, rng, in_std);
    h.wv = random_normal({d, head_size}, rng, in_std);
    h.wo = random_normal({head_size, d}, rng, out_std);
  }
  return p;
}

void AttentionConfig::validate() const {
  if (heads == 0) throw std::invalid_argument("attention: heads must be >= 1");
  if (head_size == 0) throw std::invalid_argument("attention: head_size must be >= 1");
  if (variant == Variant::kernelized && features == 0)
    throw std::invalid_argument("attention: kernelized variant needs features >= 1");
}

double AttentionConfig::score_scale(std::size_t model_dim) const {
  const std::size_t d = scale == ScoreScale::model_dim ? model_dim : head_size;
  return 1.0 / std::sqrt(static_cast<double>(d));
}

KernelFeatureMap KernelFeatureMap::sample(std::size_t features, std::size_t head_size, std::uint64_t seed,
                                          bool orthogonal) {
  if (features == 0 || head_size == 0) throw std::invalid_argument("kernel feature map: empty dimensions");
  KernelFeatureMap map;
  map.seed = seed;
  map.kind = Kind::positive_random;
  std::mt19937_64 rng(seed);
  map.directions = random_normal({features, head_size}, rng);
  if (orthogonal) {
    // Gram-Schmidt inside blocks of head_size rows, then restore chi-distributed norms.
    Tensor& w = map.directions;
    for (std::size_t start = 0; start < features; start += head_size) {
      const std::size_t end = std::min(features, start + head_size);
      for (std::size_t r = start; r < end; ++r) {
        for (std::size_t q = start; q < r; ++q) {
          double dot = 0.0;
          for (std::size_t k = 0; k < head_size; ++k) dot += w[r * head_size + k] * w[q * head_size + k];
          for (std::size_t k = 0; k < head_size; ++k) w[r * head_size + k] -= dot * w[q * head_size + k];
        }
        double nrm = 0.0;
        for (std::size_t k = 0; k < head_size; ++k) nrm += w[r * head_size + k] * w[r * head_size + k];
        nrm = std::sqrt(nrm);
        for (std::size_t k = 0; k < head_size; ++k) w[r * head_size + k] /= nrm;
      }
      for (std::size_t r = start; r < end; ++r) {
        const Tensor g = random_normal({head_size}, rng);
        const double len = frobenius_norm(g);
        for (std::size_t k = 0; k < head_size; ++k) w[r * head_size + k] *= len;
      }
    }
  }
  return map;
}

KernelFeatureMap KernelFeatureMap::elu(std::size_t head_size) {
  KernelFeatureMap map;
  map.kind = Kind::elu_shift;
  map.directions = Tensor({1, head_size});  // shape carrier only
  return map;
}

std::size_t KernelFeatureMap::feature_count() const {
  return kind == Kind::elu_shift ? directions.cols() : directions.rows();
}

std::vector<KernelFeatureMap> make_feature_maps(const AttentionConfig& cfg) {
  std::vector<KernelFeatureMap> maps;
  maps.reserve(cfg.heads);
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    const std::uint64_t s = cfg.seed ^ (0x9E3779B97F4A7C15ULL * (h + 1));
    maps.push_back(KernelFeatureMap::sample(cfg.features, cfg.head_size, s, cfg.orthogonal_features));
  }
  return maps;
}

namespace {

// (N, T, d) · (d, d_h) -> (N, T, d_h)
Tensor project(const Tensor& x, const Tensor& w) {
  Shape s = x.shape();
  const std::size_t din = s.back();
  s.back() = w.cols();
  return reshape(kernels::matmul(reshape(x, {x.size() / din, din}), w), std::move(s));
}

void check_heads(const Tensor& x, const AttentionParams& params) {
  if (params.empty()) throw std::invalid_argument("attention: no heads");
  const std::size_t d = x.shape().back();
  for (const auto& h : params) {
    if (h.wq.order() != 2 || h.wq.rows() != d || h.wk.shape() != h.wq.shape() || h.wv.shape() != h.wq.shape() ||
        h.wo.order() != 2 || h.wo.rows() != h.wq.cols() || h.wo.cols() != d)
      throw std::invalid_argument("attention: head projections do not match input width " + std::to_string(d));
  }
}

double model_scale(ScoreScale s, std::size_t d, std::size_t dh) {
  return 1.0 / std::sqrt(static_cast<double>(s == ScoreScale::model_dim ? d : dh));
}

template <bool Parallel>
Tensor exact_impl(const Tensor& x, const AttentionParams& params, ScoreScale scale) {
  const auto s3 = Shape3::of(x);
  check_heads(x, params);
  const std::size_t n = s3.n_vars, steps = s3.n_steps, d = s3.n_feat, rows = n * steps;
  Tensor out = x;
  for (const auto& h : params) {
    const std::size_t dh = h.wq.cols();
    const double sc = model_scale(scale, d, dh);
    // Mode-3 products X ×3 W.
    const Tensor q = mode_product(x, transpose(h.wq), 2);
    const Tensor k = mode_product(x, transpose(h.wk), 2);
    const Tensor v = mode_product(x, transpose(h.wv), 2);
    const double* pq = q.raw();
    const double* pk = k.raw();
    const double* pv = v.raw();
    const double* pwo = h.wo.raw();
    double* po = out.raw();
    const auto total = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel if (Parallel && rows * rows * dh > kernels::kParallelWork)
    {
      std::vector<double> z(rows);
      std::vector<double> acc(dh);
#pragma omp for schedule(static)
      for (std::ptrdiff_t r = 0; r < total; ++r) {
        // r = i*T + t indexes the query (variable i, time t); c = j*T + tau the key.
        const double* qrow = pq + r * dh;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < rows; ++c) {
          const double* krow = pk + c * dh;
          double dot = 0.0;
          for (std::size_t e = 0; e < dh; ++e) dot += qrow[e] * krow[e];
          z[c] = dot * sc;
          mx = std::max(mx, z[c]);
        }
        double norm = 0.0;
        for (std::size_t c = 0; c < rows; ++c) {
          z[c] = std::exp(z[c] - mx);
          norm += z[c];
        }
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t c = 0; c < rows; ++c) {
          const double w = z[c] / norm;
          const double* vrow = pv + c * dh;
          for (std::size_t e = 0; e < dh; ++e) acc[e] += w * vrow[e];
        }
        double* orow = po + r * d;
        for (std::size_t e = 0; e < dh; ++e)
          for (std::size_t f = 0; f < d; ++f) orow[f] += acc[e] * pwo[e * d + f];
      }
    }
  }
  return out;
}

ad::Var const_of(ad::Tape& tape, Tensor t) { return tape.constant(std::move(t)); }

struct TapeHeads {
  std::vector<HeadVars> heads;
};

TapeHeads constants_for(ad::Tape& tape, const AttentionParams& params) {
  TapeHeads th;
  for (const auto& p : params) th.heads.push_back(head_vars(tape, p, false));
  return th;
}

AttentionConfig with_params_shape(AttentionConfig cfg, const AttentionParams& params) {
  cfg.heads = params.size();
  cfg.head_size = params.front().wq.cols();
  return cfg;
}

ad::Var phi(ad::Var x, const KernelFeatureMap& map) {
  if (map.kind == KernelFeatureMap::Kind::elu_shift) return ad::elu_plus_one(x);
  return ad::kernel_features(x, map.directions);
}

bool aligned(double qpos, double kpos) { return std::llround(qpos) == std::llround(kpos); }

// Time-alignment matrix (Tq, Tk): 1 where the query and key positions agree.
Tensor alignment(std::size_t tq, std::size_t tk, double q0, double k0) {
  Tensor a({tq, tk});
  for (std::size_t t = 0; t < tq; ++t)
    for (std::size_t tau = 0; tau < tk; ++tau)
      if (aligned(q0 + static_cast<double>(t), k0 + static_cast<double>(tau))) a[t * tk + tau] = 1.0;
  return a;
}

// Normalized kernel attention along `mode` of values (N, Tk, d_h):
// out = Z^{-1} phi_q (phi_k^T ×mode values), Z = phi_q phi_k^T 1.
ad::Var kernel_apply(ad::Var values, ad::Var phi_q, ad::Var phi_k, std::size_t mode) {
  auto& tape = *values.tape;
  const std::size_t keys = phi_k.shape()[0];
  const ad::Var kv = ad::mode_product(values, ad::transpose(phi_k), mode);
  const ad::Var num = ad::mode_product(kv, phi_q, mode);
  const ad::Var ksum = ad::matmul(ad::transpose(phi_k), const_of(tape, Tensor({keys, 1}, 1.0)));
  const ad::Var z = ad::reshape(ad::matmul(phi_q, ksum), {phi_q.shape()[0]});
  return ad::div_mode(num, z, mode);
}

}  // namespace

Tensor standard_attention(const Tensor& x, const AttentionParams& params, ScoreScale scale) {
  if (x.order() != 2) throw std::invalid_argument("standard_attention: expected (n, d)");
  check_heads(x, params);
  Tensor out = x;
  for (const auto& h : params) {
    const double sc = model_scale(scale, x.cols(), h.wq.cols());
    const Tensor q = kernels::matmul(x, h.wq);
    const Tensor k = kernels::matmul(x, h.wk);
    const Tensor v = kernels::matmul(x, h.wv);
    const Tensor s = kernels::softmax_rows(sc * kernels::matmul_nt(q, k));
    out = out + kernels::matmul(kernels::matmul(s, v), h.wo);
  }
  return out;
}

Tensor exact_ho_attention(const Tensor& x, const AttentionParams& params, ScoreScale scale) {
  return exact_impl<true>(x, params, scale);
}

namespace reference {
Tensor exact_ho_attention(const Tensor& x, const AttentionParams& params, ScoreScale scale) {
  return exact_impl<false>(x, params, scale);
}
}  // namespace reference

Tensor exact_attention_scores(const Tensor& x, const HeadParams& head, ScoreScale scale) {
  const auto s3 = Shape3::of(x);
  check_heads(x, {head});
  const std::size_t n = s3.n_vars, steps = s3.n_steps, dh = head.wq.cols();
  const double sc = model_scale(scale, s3.n_feat, dh);
  const Tensor q = mode_product(x, transpose(head.wq), 2);
  const Tensor k = mode_product(x, transpose(head.wk), 2);
  Tensor s({n, n, steps, steps});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t t = 0; t < steps; ++t) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t tau = 0; tau < steps; ++tau) {
          double dot = 0.0;
          for (std::size_t e = 0; e < dh; ++e) dot += q.at(i, t, e) * k.at(j, tau, e);
          s.at(i, j, t, tau) = dot * sc;
          mx = std::max(mx, dot * sc);
        }
      double norm = 0.0;
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t tau = 0; tau < steps; ++tau) {
          double& e = s.at(i, j, t, tau);
          e = std::exp(e - mx);
          norm += e;
        }
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t tau = 0; tau < steps; ++tau) s.at(i, j, t, tau) /= norm;
    }
  return s;
}

Tensor pool_vars(const Tensor& q, Pooling kind) {
  ad::Tape tape;
  return ad::pool(tape.constant(q), 0, kind).value();
}

Tensor pool_time(const Tensor& q, Pooling kind) {
  ad::Tape tape;
  return ad::pool(tape.constant(q), 1, kind).value();
}

std::vector<FactoredAttentionMatrices> factored_attention_matrices(const Tensor& x, const AttentionParams& params,
                                                                   const AttentionConfig& cfg) {
  Shape3::of(x);
  check_heads(x, params);
  std::vector<FactoredAttentionMatrices> out;
  for (const auto& h : params) {
    const double sc = model_scale(cfg.scale, x.shape().back(), h.wq.cols());
    const Tensor q = project(x, h.wq);
    const Tensor k = project(x, h.wk);
    FactoredAttentionMatrices m;
    m.s1 = kernels::softmax_rows(sc * kernels::matmul_nt(pool_time(q, cfg.pooling), pool_time(k, cfg.pooling)));
    m.s2 = kernels::softmax_rows(sc * kernels::matmul_nt(pool_vars(q, cfg.pooling), pool_vars(k, cfg.pooling)));
    out.push_back(std::move(m));
  }
  return out;
}

Tensor factored_attention(const Tensor& x, const AttentionParams& params, const AttentionConfig& cfg) {
  Shape3::of(x);
  check_heads(x, params);
  AttentionConfig c = with_params_shape(cfg, params);
  c.variant = Variant::factored;
  ad::Tape tape;
  const ad::Var xv = tape.constant(x);
  const auto th = constants_for(tape, params);
  const ad::Var attended = attend({xv, xv}, th.heads, c, AttentionDims::both, {});
  return x + attended.value();
}

Tensor kernel_features(const Tensor& x, const KernelFeatureMap& map) {
  if (x.order() != 2) throw std::invalid_argument("kernel_features: expected (n, d_h)");
  ad::Tape tape;
  return phi(tape.constant(x), map).value();
}

Tensor kernelized_factored_attention(const Tensor& x, const AttentionParams& params, const AttentionConfig& cfg,
                                     std::span<const KernelFeatureMap> maps) {
  Shape3::of(x);
  check_heads(x, params);
  AttentionConfig c = with_params_shape(cfg, params);
  c.variant = Variant::kernelized;
  ad::Tape tape;
  const ad::Var xv = tape.constant(x);
  const auto th = constants_for(tape, params);
  const ad::Var attended = attend({xv, xv}, th.heads, c, AttentionDims::both, maps);
  return x + attended.value();
}

double flops_estimate(Variant v, std::size_t n, std::size_t t, std::size_t d, std::size_t heads,
                      std::size_t features) {
  const double N = static_cast<double>(n), T = static_cast<double>(t), D = static_cast<double>(d),
               H = static_cast<double>(heads), M = static_cast<double>(features);
  switch (v) {
    case Variant::exact: return H * (N * T) * (N * T) * D;
    case Variant::factored: return H * D * (N * N * T + T * T * N);
    case Variant::kernelized: return H * M * D * N * T;
  }
  return 0.0;
}

HeadVars head_vars(ad::Tape& tape, const HeadParams& p, bool requires_grad) {
  return {tape.leaf(p.wq, requires_grad), tape.leaf(p.wk, requires_grad), tape.leaf(p.wv, requires_grad),
          tape.leaf(p.wo, requires_grad)};
}

ad::Var attend(const AttentionInputs& in, std::span<const HeadVars> heads, const AttentionConfig& cfg,
               AttentionDims dims, std::span<const KernelFeatureMap> maps) {
  cfg.validate();
  auto& tape = *in.queries.tape;
  const auto& qs = in.queries.shape();
  const auto& ks = in.keys.shape();
  if (qs.size() != 3 || ks.size() != 3 || qs[0] != ks[0] || qs[2] != ks[2])
    throw std::invalid_argument("attend: queries " + shape_string(qs) + " and keys " + shape_string(ks) +
                                " must share N and d");
  const std::size_t n = qs[0], tq = qs[1], tk = ks[1], d = qs[2];
  if (heads.empty()) throw std::invalid_argument("attend: no heads");
  if (dims == AttentionDims::none) return tape.constant(Tensor({n, tq, d}));
  if (cfg.variant == Variant::kernelized && maps.size() < heads.size())
    throw std::invalid_argument("attend: kernelized attention needs one feature map per head");
  if (in.key_keep && in.key_keep->size() != n * tk) throw std::invalid_argument("attend: key mask size mismatch");
  if (in.query_keep && in.query_keep->size() != n * tq) throw std::invalid_argument("attend: query mask size mismatch");

  const double q0 = in.query_first_position, k0 = in.key_first_position;
  const bool use_stock = dims == AttentionDims::both || dims == AttentionDims::stock;
  const bool use_time = dims == AttentionDims::both || dims == AttentionDims::time;

  // Key validity per stock and per time step, for the factored forms.
  ad::Mask stock_keep(n, 1), time_keep(tk, 1);
  if (in.key_keep) {
    std::fill(stock_keep.begin(), stock_keep.end(), 0);
    std::fill(time_keep.begin(), time_keep.end(), 0);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t tau = 0; tau < tk; ++tau)
        if ((*in.key_keep)[j * tk + tau]) stock_keep[j] = time_keep[tau] = 1;
  }
  const ad::Mask no_mask;
  const ad::Mask& key_keep = in.key_keep ? *in.key_keep : no_mask;
  const ad::Mask& query_keep = in.query_keep ? *in.query_keep : no_mask;

  ad::Var total;
  bool first = true;
  for (std::size_t h = 0; h < heads.size(); ++h) {
    const HeadVars& hv = heads[h];
    const std::size_t dh = hv.wq.shape()[1];
    const double sc = cfg.score_scale(d);
    ad::Var q = ad::linear(in.queries, hv.wq);
    ad::Var k = ad::linear(in.keys, hv.wk);
    ad::Var v = ad::linear(in.keys, hv.wv);
    ad::Var attended;

    if (cfg.variant == Variant::exact) {
      if (in.rotary) {
        q = ad::rotary(q, q0);
        k = ad::rotary(k, k0);
      }
      ad::Mask keep;
      const bool masked = !use_stock || !use_time || in.key_keep;
      if (masked) {
        keep.assign(n * tq * n * tk, 0);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t t = 0; t < tq; ++t)
            for (std::size_t j = 0; j < n; ++j)
              for (std::size_t tau = 0; tau < tk; ++tau) {
                bool ok = !in.key_keep || (*in.key_keep)[j * tk + tau];
                if (!use_time) ok = ok && aligned(q0 + static_cast<double>(t), k0 + static_cast<double>(tau));
                if (!use_stock) ok = ok && i == j;
                keep[(i * tq + t) * (n * tk) + j * tk + tau] = ok;
              }
      }
      const ad::Var qf = ad::reshape(q, {n * tq, dh});
      const ad::Var kf = ad::reshape(k, {n * tk, dh});
      const ad::Var vf = ad::reshape(v, {n * tk, dh});
      const ad::Var s = ad::softmax_rows(ad::scale(ad::matmul_nt(qf, kf), sc), keep);
      attended = ad::reshape(ad::matmul(s, vf), {n, tq, dh});
    } else {
      if (in.key_keep) {
        Tensor m({n, tk, dh});
        for (std::size_t c = 0; c < n * tk; ++c)
          if ((*in.key_keep)[c]) std::fill_n(m.raw() + c * dh, dh, 1.0);
        v = ad::mul(v, const_of(tape, std::move(m)));
      }
      const bool kernel = cfg.variant == Variant::kernelized;
      const double feat_scale = std::sqrt(sc);
      attended = v;

      if (use_stock) {
        const ad::Var fq = ad::pool(q, 1, cfg.pooling, query_keep);
        const ad::Var fk = ad::pool(k, 1, cfg.pooling, key_keep);
        if (kernel) {
          ad::Var pk = phi(ad::scale(fk, feat_scale), maps[h]);
          if (in.key_keep) {
            const std::size_t m = pk.shape()[1];
            Tensor mk({n, m});
            for (std::size_t j = 0; j < n; ++j)
              if (stock_keep[j]) std::fill_n(mk.raw() + j * m, m, 1.0);
            pk = ad::mul(pk, const_of(tape, std::move(mk)));
          }
          attended = kernel_apply(attended, phi(ad::scale(fq, feat_scale), maps[h]), pk, 0);
        } else {
          ad::Mask keep1;
          if (in.key_keep) {
            keep1.assign(n * n, 0);
            for (std::size_t i = 0; i < n; ++i)
              for (std::size_t j = 0; j < n; ++j) keep1[i * n + j] = stock_keep[j];
          }
          const ad::Var s1 = ad::softmax_rows(ad::scale(ad::matmul_nt(fq, fk), sc), keep1);
          attended = ad::mode_product(attended, s1, 0);
        }
      }

      if (use_time) {
        const ad::Var qt = in.rotary ? ad::rotary(q, q0) : q;
        const ad::Var kt = in.rotary ? ad::rotary(k, k0) : k;
        const ad::Var gq = ad::pool(qt, 0, cfg.pooling, query_keep);
        const ad::Var gk = ad::pool(kt, 0, cfg.pooling, key_keep);
        if (kernel) {
          ad::Var pk = phi(ad::scale(gk, feat_scale), maps[h]);
          if (in.key_keep) {
            const std::size_t m = pk.shape()[1];
            Tensor mk({tk, m});
            for (std::size_t tau = 0; tau < tk; ++tau)
              if (time_keep[tau]) std::fill_n(mk.raw() + tau * m, m, 1.0);
            pk = ad::mul(pk, const_of(tape, std::move(mk)));
          }
          attended = kernel_apply(attended, phi(ad::scale(gq, feat_scale), maps[h]), pk, 1);
        } else {
          ad::Mask keep2;
          if (in.key_keep) {
            keep2.assign(tq * tk, 0);
            for (std::size_t t = 0; t < tq; ++t)
              for (std::size_t tau = 0; tau < tk; ++tau) keep2[t * tk + tau] = time_keep[tau];
          }
          const ad::Var s2 = ad::softmax_rows(ad::scale(ad::matmul_nt(gq, gk), sc), keep2);
          attended = ad::mode_product(attended, s2, 1);
        }
      } else if (!(tq == tk && aligned(q0, k0))) {
        attended = ad::mode_product(attended, const_of(tape, alignment(tq, tk, q0, k0)), 1);
      }
    }

    const ad::Var out_h = ad::linear(attended, hv.wo);
    total = first ? out_h : ad::add(total, out_h);
    first = false;
  }
  return total;
}

}  // namespace hot
