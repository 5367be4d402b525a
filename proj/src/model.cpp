#include "hot/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace hot {

namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::string head_prefix(const std::string& module, std::size_t h) { return module + ".h" + std::to_string(h); }

std::string enc_attn(std::size_t l) { return "enc." + std::to_string(l) + ".attn"; }
std::string dec_self(std::size_t l) { return "dec." + std::to_string(l) + ".self"; }
std::string dec_cross(std::size_t l) { return "dec." + std::to_string(l) + ".cross"; }

struct Init {
  Params& params;
  std::mt19937_64& rng;

  void normal(const std::string& name, Shape shape, double stddev) {
    params.emplace(name, random_normal(std::move(shape), rng, stddev));
  }
  void fill(const std::string& name, Shape shape, double v) { params.emplace(name, Tensor(std::move(shape), v)); }
  void attention(const std::string& module, std::size_t d, std::size_t heads, std::size_t dh) {
    for (std::size_t h = 0; h < heads; ++h) {
      const auto p = head_prefix(module, h);
      normal(p + ".wq", {d, dh}, 1.0 / std::sqrt(double(d)));
      normal(p + ".wk", {d, dh}, 1.0 / std::sqrt(double(d)));
      normal(p + ".wv", {d, dh}, 1.0 / std::sqrt(double(d)));
      normal(p + ".wo", {dh, d}, 1.0 / std::sqrt(double(dh * heads)));
    }
  }
  void mlp(const std::string& prefix, std::size_t d, std::size_t ratio) {
    normal(prefix + ".w1", {d, ratio * d}, 1.0 / std::sqrt(double(d)));
    fill(prefix + ".b1", {ratio * d}, 0.0);
    normal(prefix + ".w2", {ratio * d, d}, 1.0 / std::sqrt(double(ratio * d)));
    fill(prefix + ".b2", {d}, 0.0);
  }
};

const ad::Var& get(const ParamVars& p, const std::string& name) {
  const auto it = p.find(name);
  if (it == p.end()) throw std::invalid_argument("model: missing parameter '" + name + "'");
  return it->second;
}

std::vector<HeadVars> heads_of(const ParamVars& p, const std::string& module, std::size_t heads) {
  std::vector<HeadVars> out;
  for (std::size_t h = 0; h < heads; ++h) {
    const auto pre = head_prefix(module, h);
    out.push_back({get(p, pre + ".wq"), get(p, pre + ".wk"), get(p, pre + ".wv"), get(p, pre + ".wo")});
  }
  return out;
}

ad::Var dropout(ad::Var x, double rate, std::mt19937_64* rng) {
  if (!rng || rate <= 0.0) return x;
  std::bernoulli_distribution keep(1.0 - rate);
  Tensor m(x.shape());
  for (auto& v : m.data()) v = keep(*rng) ? 1.0 / (1.0 - rate) : 0.0;
  return ad::mul(x, x.tape->constant(std::move(m)));
}

ad::Var mlp(const ParamVars& p, const std::string& prefix, ad::Var x) {
  const ad::Var h = ad::silu(ad::add_bias(ad::linear(x, get(p, prefix + ".w1")), get(p, prefix + ".b1")));
  return ad::add_bias(ad::linear(h, get(p, prefix + ".w2")), get(p, prefix + ".b2"));
}

const std::vector<KernelFeatureMap>& maps_of(const Model& m, const std::string& module) {
  static const std::vector<KernelFeatureMap> none;
  const auto it = m.feature_maps.find(module);
  return it == m.feature_maps.end() ? none : it->second;
}

// Null when the mask is absent or empty of any kept entry.
const ad::Mask* effective_mask(const ad::Mask* keep) {
  if (!keep) return nullptr;
  return std::any_of(keep->begin(), keep->end(), [](unsigned char c) { return c != 0; }) ? keep : nullptr;
}

bool parse_bool(const std::string& v) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw std::invalid_argument("expected true or false, got '" + v + "'");
}

std::size_t parse_size(const std::string& v) {
  std::size_t used = 0;
  const unsigned long long x = std::stoull(v, &used);
  if (used != v.size() || v.front() == '-') throw std::invalid_argument("expected a non-negative integer, got '" + v + "'");
  return static_cast<std::size_t>(x);
}

double parse_real(const std::string& v) {
  std::size_t used = 0;
  const double x = std::stod(v, &used);
  if (used != v.size() || !std::isfinite(x)) throw std::invalid_argument("expected a number, got '" + v + "'");
  return x;
}

}  // namespace

Modality parse_modality(const std::string& s) {
  if (s == "multimodal") return Modality::multimodal;
  if (s == "price") return Modality::price;
  if (s == "text") return Modality::text;
  throw std::invalid_argument("unknown modality '" + s + "' (multimodal|price|text)");
}

std::string to_string(Modality m) {
  switch (m) {
    case Modality::multimodal: return "multimodal";
    case Modality::price: return "price";
    case Modality::text: return "text";
  }
  return "?";
}

std::size_t ModelConfig::resolved_head_size() const {
  if (head_size) return head_size;
  std::size_t dh = heads ? hidden / heads : 0;
  dh -= dh % 2;
  return std::max<std::size_t>(dh, 2);
}

void ModelConfig::validate() const {
  if (hidden == 0 || heads == 0 || text_dim == 0 || mlp_ratio == 0)
    throw std::invalid_argument("model: hidden, heads, text_dim and mlp_ratio must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("model: dropout must lie in [0, 1)");
  if (rotary && resolved_head_size() % 2) throw std::invalid_argument("model: rotary needs an even head size");
  attention(0).validate();
}

AttentionConfig ModelConfig::attention(std::size_t module) const {
  AttentionConfig a;
  a.variant = variant;
  a.heads = heads;
  a.head_size = resolved_head_size();
  a.pooling = pooling;
  a.features = features;
  a.seed = mix(seed ^ mix(module + 1));
  a.scale = scale;
  a.orthogonal_features = orthogonal_features;
  return a;
}

bool set_model_key(ModelConfig& c, const std::string& key, const std::string& v) {
  if (key == "hidden") c.hidden = parse_size(v);
  else if (key == "heads") c.heads = parse_size(v);
  else if (key == "head_size") c.head_size = parse_size(v);
  else if (key == "blocks") c.blocks = parse_size(v);
  else if (key == "dropout") c.dropout = parse_real(v);
  else if (key == "variant") c.variant = parse_variant(v);
  else if (key == "pooling") c.pooling = parse_pooling(v);
  else if (key == "features") c.features = parse_size(v);
  else if (key == "orthogonal_features") c.orthogonal_features = parse_bool(v);
  else if (key == "score_scale") {
    if (v == "model_dim") c.scale = ScoreScale::model_dim;
    else if (v == "head_dim") c.scale = ScoreScale::head_dim;
    else throw std::invalid_argument("score_scale must be model_dim or head_dim");
  } else if (key == "text_dim") c.text_dim = parse_size(v);
  else if (key == "mlp_ratio") c.mlp_ratio = parse_size(v);
  else if (key == "ablation") c.dims = parse_dims(v);
  else if (key == "modality") c.modality = parse_modality(v);
  else if (key == "rotary") c.rotary = parse_bool(v);
  else if (key == "model_seed") c.seed = parse_size(v);
  else return false;
  return true;
}

std::string to_text(const ModelConfig& c) {
  std::ostringstream os;
  os.precision(17);
  os << "hidden=" << c.hidden << "\nheads=" << c.heads << "\nhead_size=" << c.head_size << "\nblocks=" << c.blocks
     << "\ndropout=" << c.dropout << "\nvariant=" << to_string(c.variant) << "\npooling=" << to_string(c.pooling)
     << "\nfeatures=" << c.features << "\northogonal_features=" << (c.orthogonal_features ? "true" : "false")
     << "\nscore_scale=" << (c.scale == ScoreScale::model_dim ? "model_dim" : "head_dim") << "\ntext_dim=" << c.text_dim
     << "\nmlp_ratio=" << c.mlp_ratio << "\nablation=" << to_string(c.dims) << "\nmodality=" << to_string(c.modality)
     << "\nrotary=" << (c.rotary ? "true" : "false") << "\nmodel_seed=" << c.seed << "\n";
  return os.str();
}

std::size_t Model::stock_index(const std::string& id) const {
  const auto it = std::lower_bound(vocabulary.begin(), vocabulary.end(), id);
  if (it == vocabulary.end() || *it != id) throw std::invalid_argument("model: unknown stock id '" + id + "'");
  return static_cast<std::size_t>(it - vocabulary.begin());
}

Model init_model(const ModelConfig& cfg, std::vector<std::string> vocabulary) {
  cfg.validate();
  if (vocabulary.empty()) throw std::invalid_argument("model: empty stock vocabulary");
  std::sort(vocabulary.begin(), vocabulary.end());
  if (std::adjacent_find(vocabulary.begin(), vocabulary.end()) != vocabulary.end())
    throw std::invalid_argument("model: duplicate stock id in vocabulary");

  Model m;
  m.cfg = cfg;
  m.vocabulary = std::move(vocabulary);
  std::mt19937_64 rng(cfg.seed);
  Init init{m.params, rng};
  const std::size_t d = cfg.hidden, dh = cfg.resolved_head_size(), heads = cfg.heads;
  const bool text = cfg.modality != Modality::price;
  const bool price = cfg.modality != Modality::text;

  init.normal("cls", {m.vocabulary.size(), d}, 1.0);
  if (text) {
    init.normal("text_proj.w", {cfg.text_dim, d}, 1.0 / std::sqrt(double(cfg.text_dim)));
    init.fill("text_proj.b", {d}, 0.0);
    for (std::size_t l = 0; l < cfg.blocks; ++l) {
      const auto pre = "enc." + std::to_string(l);
      init.fill(pre + ".norm1", {d}, 1.0);
      init.attention(enc_attn(l), d, heads, dh);
      init.fill(pre + ".norm2", {d}, 1.0);
      init.mlp(pre + ".mlp", d, cfg.mlp_ratio);
    }
  }
  if (price) {
    init.normal("price_proj.w", {kPriceFeatures, d}, 1.0 / std::sqrt(double(kPriceFeatures)));
    init.fill("price_proj.b", {d}, 0.0);
    for (std::size_t l = 0; l < cfg.blocks; ++l) {
      const auto pre = "dec." + std::to_string(l);
      init.fill(pre + ".norm1", {d}, 1.0);
      init.attention(dec_self(l), d, heads, dh);
      if (text) {
        init.fill(pre + ".norm2", {d}, 1.0);
        init.attention(dec_cross(l), d, heads, dh);
      }
      init.fill(pre + ".norm3", {d}, 1.0);
      init.mlp(pre + ".mlp", d, cfg.mlp_ratio);
    }
  }
  init.fill("head.norm", {d}, 1.0);
  init.normal("head.w1", {d, d}, 1.0 / std::sqrt(double(d)));
  init.fill("head.b1", {d}, 0.0);
  init.normal("head.w2", {d, 1}, 1.0 / std::sqrt(double(d)));
  init.fill("head.b2", {1}, 0.0);
  refresh_feature_maps(m);
  return m;
}

void refresh_feature_maps(Model& m) {
  m.feature_maps.clear();
  if (m.cfg.variant != Variant::kernelized) return;
  const std::size_t b = m.cfg.blocks;
  for (std::size_t l = 0; l < b; ++l) {
    m.feature_maps[enc_attn(l)] = make_feature_maps(m.cfg.attention(l));
    m.feature_maps[dec_self(l)] = make_feature_maps(m.cfg.attention(b + 2 * l));
    m.feature_maps[dec_cross(l)] = make_feature_maps(m.cfg.attention(b + 2 * l + 1));
  }
}

ModelInput model_input(const Model& m, const WindowSample& s) {
  ModelInput in;
  in.prices = &s.prices;
  in.text = &s.text;
  in.text_mask = &s.text_mask;
  for (const auto& id : s.stocks) in.stock_ids.push_back(m.stock_index(id));
  return in;
}

ParamVars bind_params(ad::Tape& tape, const Params& params, bool requires_grad) {
  ParamVars out;
  for (const auto& [name, t] : params) out.emplace(name, tape.leaf(t, requires_grad));
  return out;
}

ad::Var tokenize(const Model& m, const ParamVars& p, const Tensor& prices, const std::vector<std::size_t>& ids) {
  if (prices.order() != 3 || prices.extent(2) != kPriceFeatures)
    throw std::invalid_argument("tokenize: prices must be (N, T, 6), got " + shape_string(prices.shape()));
  const std::size_t n = prices.extent(0), d = m.cfg.hidden;
  if (ids.size() != n) throw std::invalid_argument("tokenize: stock id count does not match N");
  for (auto id : ids)
    if (id >= m.vocabulary.size()) throw std::invalid_argument("tokenize: unknown stock index " + std::to_string(id));
  auto& tape = *get(p, "cls").tape;
  const ad::Var cls = ad::reshape(ad::gather_rows(get(p, "cls"), ids), {n, 1, d});
  const ad::Var body = ad::add_bias(ad::linear(tape.constant(prices), get(p, "price_proj.w")), get(p, "price_proj.b"));
  return ad::concat(cls, body, 1);
}

ad::Var encode_tokens(const Model& m, const ParamVars& p, ad::Var x, const ad::Mask* keep, double first_position,
                      std::mt19937_64* dropout_rng) {
  const auto& c = m.cfg;
  for (std::size_t l = 0; l < c.blocks; ++l) {
    const auto pre = "enc." + std::to_string(l);
    const auto heads = heads_of(p, enc_attn(l), c.heads);
    const ad::Var h = ad::rmsnorm(x, get(p, pre + ".norm1"));
    AttentionInputs in{h, h, first_position, first_position, keep, c.rotary, keep};
    x = ad::add(x, dropout(attend(in, heads, c.attention(l), c.dims, maps_of(m, enc_attn(l))), c.dropout, dropout_rng));
    x = ad::add(x, dropout(mlp(p, pre + ".mlp", ad::rmsnorm(x, get(p, pre + ".norm2"))), c.dropout, dropout_rng));
  }
  return x;
}

ad::Var encode(const Model& m, const ParamVars& p, const Tensor& text, const ad::Mask* keep,
               std::mt19937_64* dropout_rng) {
  if (text.order() != 3 || text.extent(2) != m.cfg.text_dim)
    throw std::invalid_argument("encode: text must be (N, T, " + std::to_string(m.cfg.text_dim) + "), got " +
                                shape_string(text.shape()));
  auto& tape = *get(p, "text_proj.w").tape;
  const ad::Var x = ad::add_bias(ad::linear(tape.constant(text), get(p, "text_proj.w")), get(p, "text_proj.b"));
  return encode_tokens(m, p, x, effective_mask(keep), 1.0, dropout_rng);
}

ad::Var decode_tokens(const Model& m, const ParamVars& p, ad::Var y, const ad::Var* memory,
                      const ad::Mask* memory_keep, std::mt19937_64* dropout_rng) {
  const auto& c = m.cfg;
  if (memory && memory->shape()[0] != y.shape()[0])
    throw std::invalid_argument("decode: memory has " + std::to_string(memory->shape()[0]) + " stocks, tokens " +
                                std::to_string(y.shape()[0]));
  const ad::Mask* keep = effective_mask(memory_keep);
  const std::size_t b = c.blocks;
  for (std::size_t l = 0; l < b; ++l) {
    const auto pre = "dec." + std::to_string(l);
    {
      const ad::Var h = ad::rmsnorm(y, get(p, pre + ".norm1"));
      AttentionInputs in{h, h, 0.0, 0.0, nullptr, c.rotary};
      const auto heads = heads_of(p, dec_self(l), c.heads);
      y = ad::add(y, dropout(attend(in, heads, c.attention(b + 2 * l), c.dims, maps_of(m, dec_self(l))), c.dropout,
                             dropout_rng));
    }
    if (memory) {
      const ad::Var h = ad::rmsnorm(y, get(p, pre + ".norm2"));
      AttentionInputs in{h, *memory, 0.0, 1.0, keep, c.rotary};
      const auto heads = heads_of(p, dec_cross(l), c.heads);
      y = ad::add(y, dropout(attend(in, heads, c.attention(b + 2 * l + 1), c.dims, maps_of(m, dec_cross(l))),
                             c.dropout, dropout_rng));
    }
    y = ad::add(y, dropout(mlp(p, pre + ".mlp", ad::rmsnorm(y, get(p, pre + ".norm3"))), c.dropout, dropout_rng));
  }
  return y;
}

ad::Var classify(const Model& m, const ParamVars& p, ad::Var hidden) {
  const std::size_t n = hidden.shape()[0];
  (void)m;
  const ad::Var h = ad::rmsnorm(ad::select(hidden, 1, 0), get(p, "head.norm"));
  const ad::Var z = ad::silu(ad::add_bias(ad::linear(h, get(p, "head.w1")), get(p, "head.b1")));
  return ad::reshape(ad::add_bias(ad::linear(z, get(p, "head.w2")), get(p, "head.b2")), {n});
}

ad::Var forward(const Model& m, const ParamVars& p, const ModelInput& in, std::mt19937_64* dropout_rng) {
  const auto& c = m.cfg;
  switch (c.modality) {
    case Modality::price: {
      if (!in.prices) throw std::invalid_argument("forward: price modality needs prices");
      return classify(m, p, decode_tokens(m, p, tokenize(m, p, *in.prices, in.stock_ids), nullptr, nullptr, dropout_rng));
    }
    case Modality::text: {
      if (!in.text) throw std::invalid_argument("forward: text modality needs text");
      const Tensor& text = *in.text;
      if (text.order() != 3 || text.extent(2) != c.text_dim)
        throw std::invalid_argument("forward: text must be (N, T, text_dim)");
      const std::size_t n = text.extent(0), t = text.extent(1), d = c.hidden;
      if (in.stock_ids.size() != n) throw std::invalid_argument("forward: stock id count does not match N");
      auto& tape = *get(p, "cls").tape;
      const ad::Var cls = ad::reshape(ad::gather_rows(get(p, "cls"), in.stock_ids), {n, 1, d});
      const ad::Var body =
          ad::add_bias(ad::linear(tape.constant(text), get(p, "text_proj.w")), get(p, "text_proj.b"));
      const ad::Mask* keep = effective_mask(in.text_mask);
      ad::Mask with_cls;
      if (keep) {
        with_cls.assign(n * (t + 1), 1);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t s = 0; s < t; ++s) with_cls[i * (t + 1) + s + 1] = (*keep)[i * t + s];
      }
      return classify(m, p, encode_tokens(m, p, ad::concat(cls, body, 1), keep ? &with_cls : nullptr, 0.0, dropout_rng));
    }
    case Modality::multimodal: {
      if (!in.prices || !in.text) throw std::invalid_argument("forward: multimodal needs prices and text");
      if (in.text->order() != 3 || in.prices->order() != 3 || in.text->extent(0) != in.prices->extent(0) ||
          in.text->extent(1) != in.prices->extent(1))
        throw std::invalid_argument("forward: price and text streams disagree on (N, T)");
      const ad::Var memory = encode(m, p, *in.text, in.text_mask, dropout_rng);
      const ad::Var tokens = tokenize(m, p, *in.prices, in.stock_ids);
      return classify(m, p, decode_tokens(m, p, tokens, &memory, in.text_mask, dropout_rng));
    }
  }
  throw std::logic_error("forward: unhandled modality");
}

Tensor logits(const Model& m, const ModelInput& in) { return logits(m, m.params, in); }

Tensor logits(const Model& m, const Params& params, const ModelInput& in) {
  ad::Tape tape;
  const ParamVars p = bind_params(tape, params, false);
  return forward(m, p, in).value();
}

std::vector<int> predict(const Tensor& logits) {
  std::vector<int> out;
  out.reserve(logits.size());
  for (double z : logits.data()) {
    if (!std::isfinite(z)) throw std::domain_error("predict: non-finite logit");
    out.push_back(z >= 0.0 ? 1 : 0);
  }
  return out;
}

LossGrad loss_and_grad(const Model& m, const Params& params, const ModelInput& in, const Tensor& labels,
                       const Tensor& valid, std::mt19937_64* dropout_rng) {
  LossGrad r;
  for (double v : valid.data()) r.count += v != 0.0;
  ad::Tape tape;
  const ParamVars p = bind_params(tape, params, true);
  const ad::Var z = forward(m, p, in, dropout_rng);
  const ad::Var loss = ad::bce_with_logits(z, labels, valid);
  r.logits = z.value();
  r.loss = loss.value().item();
  auto grads = tape.backward(loss);
  for (const auto& [name, var] : p) r.grads.emplace(name, std::move(grads.at(var.id)));
  return r;
}

double loss_value(const Model& m, const Params& params, const ModelInput& in, const Tensor& labels,
                  const Tensor& valid) {
  ad::Tape tape;
  const ParamVars p = bind_params(tape, params, false);
  return ad::bce_with_logits(forward(m, p, in), labels, valid).value().item();
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[4] = {'H', 'O', 'T', 'C'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T take(std::istream& in) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw DataError("checkpoint: truncated file");
  return v;
}

void put_string(std::ostream& out, const std::string& s, bool wide) {
  if (wide) put<std::uint64_t>(out, s.size());
  else put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string take_string(std::istream& in, bool wide) {
  const std::uint64_t n = wide ? take<std::uint64_t>(in) : take<std::uint32_t>(in);
  if (n > (1ULL << 28)) throw DataError("checkpoint: implausible string length");
  std::string s(n, '\0');
  if (!in.read(s.data(), static_cast<std::streamsize>(n))) throw DataError("checkpoint: truncated string");
  return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& m) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp);
    out.write(kCheckpointMagic, 4);
    put<std::uint32_t>(out, kCheckpointVersion);
    put_string(out, to_text(m.cfg), true);
    put<std::uint64_t>(out, m.vocabulary.size());
    for (const auto& id : m.vocabulary) put_string(out, id, false);
    put<std::uint64_t>(out, m.params.size());
    for (const auto& [name, t] : m.params) {
      put_string(out, name, false);
      put<std::uint32_t>(out, static_cast<std::uint32_t>(t.order()));
      for (auto e : t.shape()) put<std::uint64_t>(out, e);
      out.write(reinterpret_cast<const char*>(t.raw()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
    if (!out) throw DataError("write failed for " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw DataError("cannot rename " + tmp + " to " + path);
}

Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) throw DataError("checkpoint: bad magic");
  const auto version = take<std::uint32_t>(in);
  if (version != kCheckpointVersion) throw DataError("checkpoint: unsupported version " + std::to_string(version));

  ModelConfig cfg;
  std::istringstream text(take_string(in, true));
  for (std::string line; std::getline(text, line);) {
    const auto eq = line.find('=');
    if (eq == std::string::npos || !set_model_key(cfg, line.substr(0, eq), line.substr(eq + 1)))
      throw DataError("checkpoint: bad config line '" + line + "'");
  }
  Model m;
  m.cfg = cfg;
  const auto vocab = take<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < vocab; ++i) m.vocabulary.push_back(take_string(in, false));
  const auto count = take<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = take_string(in, false);
    const auto rank = take<std::uint32_t>(in);
    if (rank == 0 || rank > kMaxOrder) throw DataError("checkpoint: bad rank for " + name);
    Shape shape(rank);
    for (auto& e : shape) e = take<std::uint64_t>(in);
    std::vector<double> values(shape_size(shape));
    if (!in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double))))
      throw DataError("checkpoint: truncated tensor " + name);
    m.params.emplace(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  const Model fresh = init_model(cfg, m.vocabulary);
  for (const auto& [name, t] : fresh.params) {
    const auto it = m.params.find(name);
    if (it == m.params.end() || it->second.shape() != t.shape())
      throw DataError("checkpoint: parameter '" + name + "' missing or mis-shaped");
  }
  if (m.params.size() != fresh.params.size()) throw DataError("checkpoint: unexpected extra parameters");
  refresh_feature_maps(m);
  return m;
}

}  // namespace hot
