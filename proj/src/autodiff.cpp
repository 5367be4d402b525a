#include "hot/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>

#include "hot/kernels.hpp"

namespace hot {

Pooling parse_pooling(const std::string& s) {
  if (s == "sum") return Pooling::sum;
  if (s == "mean") return Pooling::mean;
  if (s == "product") return Pooling::product;
  throw std::invalid_argument("unknown pooling '" + s + "' (sum|mean|product)");
}

std::string to_string(Pooling p) {
  switch (p) {
    case Pooling::sum: return "sum";
    case Pooling::mean: return "mean";
    case Pooling::product: return "product";
  }
  return "?";
}

}  // namespace hot

namespace hot::ad {

const Tensor& Var::value() const { return tape->value(id); }
bool Var::requires_grad() const { return tape->requires_grad(id); }

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.op = "leaf";
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::record(std::string op, std::vector<Var> inputs, ForwardFn forward, BackwardFn backward) {
  Node n;
  n.op = std::move(op);
  n.is_leaf = false;
  std::vector<const Tensor*> in;
  in.reserve(inputs.size());
  for (const auto& v : inputs) {
    if (v.tape != this) throw std::invalid_argument(n.op + ": input belongs to another tape");
    n.inputs.push_back(v.id);
    n.requires_grad = n.requires_grad || nodes_[v.id].requires_grad;
    in.push_back(&nodes_[v.id].value);
  }
  n.value = forward(in);
  n.forward = std::move(forward);
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

GradientMap Tape::backward(Var root) const {
  if (root.tape != this || root.id >= nodes_.size()) throw std::invalid_argument("backward: root is not on this tape");
  if (nodes_[root.id].value.size() != 1) throw std::invalid_argument("backward: root must be scalar");

  std::vector<Tensor> grads(nodes_.size());
  grads[root.id] = Tensor(nodes_[root.id].value.shape(), 1.0);

  std::vector<const Tensor*> in;
  std::vector<Tensor> in_grads;
  std::vector<char> needed;
  for (std::size_t id = root.id + 1; id-- > 0;) {
    const Node& n = nodes_[id];
    if (n.is_leaf || !n.requires_grad || grads[id].empty()) continue;
    in.clear();
    needed.clear();
    for (auto i : n.inputs) {
      in.push_back(&nodes_[i].value);
      needed.push_back(nodes_[i].requires_grad ? 1 : 0);
    }
    in_grads.assign(n.inputs.size(), Tensor{});
    n.backward(BackwardArgs{in, n.value, grads[id], in_grads, needed});
    for (std::size_t k = 0; k < n.inputs.size(); ++k) {
      if (!needed[k] || in_grads[k].empty()) continue;
      Tensor& dst = grads[n.inputs[k]];
      if (in_grads[k].shape() != nodes_[n.inputs[k]].value.shape())
        throw std::logic_error(n.op + ": gradient shape mismatch");
      if (dst.empty()) {
        dst = std::move(in_grads[k]);
      } else {
        for (std::size_t e = 0; e < dst.size(); ++e) dst[e] += in_grads[k][e];
      }
    }
    // Interior gradients are not needed once propagated.
    grads[id] = Tensor{};
  }

  GradientMap out;
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    const Node& n = nodes_[id];
    if (!n.is_leaf || !n.requires_grad) continue;
    out.emplace(id, grads[id].empty() ? Tensor(n.value.shape(), 0.0) : std::move(grads[id]));
  }
  return out;
}

bool Tape::replay_matches() const {
  std::vector<Tensor> values(nodes_.size());
  std::vector<const Tensor*> in;
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    const Node& n = nodes_[id];
    if (n.is_leaf) {
      values[id] = n.value;
      continue;
    }
    in.clear();
    for (auto i : n.inputs) in.push_back(&values[i]);
    values[id] = n.forward(in);
    if (!(values[id] == n.value)) return false;
  }
  return true;
}

namespace {

Tape& tape_of(Var a) {
  if (!a.tape) throw std::invalid_argument("operation on a null Var");
  return *a.tape;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
}

template <typename F>
Tensor map(const Tensor& a, F f) {
  Tensor out = a;
  for (auto& v : out.data()) v = f(v);
  return out;
}

struct Axes {
  std::size_t outer = 1, ext = 1, inner = 1;
};

Axes split_at(const Shape& s, std::size_t axis) {
  Axes a;
  for (std::size_t i = 0; i < axis; ++i) a.outer *= s[i];
  a.ext = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) a.inner *= s[i];
  return a;
}

Tensor as_matrix(const Tensor& t, std::size_t cols) { return reshape(t, {t.size() / cols, cols}); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  return tape_of(a).record(
      "add", {a, b}, [](Tape::Inputs in) { return *in[0] + *in[1]; },
      [](const Tape::BackwardArgs& g) {
        if (g.needed[0]) g.input_grads[0] = g.grad;
        if (g.needed[1]) g.input_grads[1] = g.grad;
      });
}

Var sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  return tape_of(a).record(
      "sub", {a, b}, [](Tape::Inputs in) { return *in[0] - *in[1]; },
      [](const Tape::BackwardArgs& g) {
        if (g.needed[0]) g.input_grads[0] = g.grad;
        if (g.needed[1]) g.input_grads[1] = -1.0 * g.grad;
      });
}

Var mul(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "mul");
  return tape_of(a).record(
      "mul", {a, b},
      [](Tape::Inputs in) {
        Tensor out = *in[0];
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= (*in[1])[i];
        return out;
      },
      [](const Tape::BackwardArgs& g) {
        for (int k = 0; k < 2; ++k) {
          if (!g.needed[k]) continue;
          Tensor d = g.grad;
          const Tensor& other = *g.inputs[1 - k];
          for (std::size_t i = 0; i < d.size(); ++i) d[i] *= other[i];
          g.input_grads[k] = std::move(d);
        }
      });
}

Var scale(Var a, double s) {
  return tape_of(a).record(
      "scale", {a}, [s](Tape::Inputs in) { return s * *in[0]; },
      [s](const Tape::BackwardArgs& g) { g.input_grads[0] = s * g.grad; });
}

Var exp(Var a) {
  return tape_of(a).record(
      "exp", {a}, [](Tape::Inputs in) { return map(*in[0], [](double v) { return std::exp(v); }); },
      [](const Tape::BackwardArgs& g) {
        Tensor d = g.grad;
        for (std::size_t i = 0; i < d.size(); ++i) d[i] *= g.output[i];
        g.input_grads[0] = std::move(d);
      });
}

Var log(Var a) {
  for (double v : a.value().data())
    if (!(v > 0)) throw std::domain_error("log: non-positive input");
  return tape_of(a).record(
      "log", {a}, [](Tape::Inputs in) { return map(*in[0], [](double v) { return std::log(v); }); },
      [](const Tape::BackwardArgs& g) {
        Tensor d = g.grad;
        for (std::size_t i = 0; i < d.size(); ++i) d[i] /= (*g.inputs[0])[i];
        g.input_grads[0] = std::move(d);
      });
}

Var silu(Var a) {
  return tape_of(a).record(
      "silu", {a}, [](Tape::Inputs in) { return map(*in[0], [](double v) { return v * sigmoid(v); }); },
      [](const Tape::BackwardArgs& g) {
        Tensor d = g.grad;
        for (std::size_t i = 0; i < d.size(); ++i) {
          const double x = (*g.inputs[0])[i];
          const double s = sigmoid(x);
          d[i] *= s * (1.0 + x * (1.0 - s));
        }
        g.input_grads[0] = std::move(d);
      });
}

Var elu_plus_one(Var a) {
  return tape_of(a).record(
      "elu_plus_one", {a},
      [](Tape::Inputs in) { return map(*in[0], [](double v) { return v > 0 ? v + 1.0 : std::exp(v); }); },
      [](const Tape::BackwardArgs& g) {
        Tensor d = g.grad;
        for (std::size_t i = 0; i < d.size(); ++i) {
          const double x = (*g.inputs[0])[i];
          d[i] *= x > 0 ? 1.0 : std::exp(x);
        }
        g.input_grads[0] = std::move(d);
      });
}

Var add_bias(Var a, Var bias) {
  const auto& av = a.value();
  if (bias.value().order() != 1 || bias.value().size() != av.shape().back())
    throw std::invalid_argument("add_bias: bias must match the last extent of " + shape_string(av.shape()));
  return tape_of(a).record(
      "add_bias", {a, bias},
      [](Tape::Inputs in) {
        Tensor out = *in[0];
        const std::size_t c = in[1]->size();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += (*in[1])[i % c];
        return out;
      },
      [](const Tape::BackwardArgs& g) {
        if (g.needed[0]) g.input_grads[0] = g.grad;
        if (g.needed[1]) {
          const std::size_t c = g.inputs[1]->size();
          Tensor d({c});
          for (std::size_t i = 0; i < g.grad.size(); ++i) d[i % c] += g.grad[i];
          g.input_grads[1] = std::move(d);
        }
      });
}

Var matmul(Var a, Var b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.order() != 2 || bv.order() != 2 || av.cols() != bv.rows())
    throw std::invalid_argument("matmul: shape mismatch " + shape_string(av.shape()) + " x " +
                                shape_string(bv.shape()));
  return tape_of(a).record(
      "matmul", {a, b}, [](Tape::Inputs in) { return kernels::matmul(*in[0], *in[1]); },
      [](const Tape::BackwardArgs& g) {
        if (g.needed[0]) g.input_grads[0] = kernels::matmul_nt(g.grad, *g.inputs[1]);
        if (g.needed[1]) g.input_grads[1] = kernels::matmul_tn(*g.inputs[0], g.grad);
      });
}

Var matmul_nt(Var a, Var b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.order() != 2 || bv.order() != 2 || av.cols() != bv.cols())
    throw std::invalid_argument("matmul_nt: shape mismatch " + shape_string(av.shape()) + " x " +
                                shape_string(bv.shape()) + "^T");
  return tape_of(a).record(
      "matmul_nt", {a, b}, [](Tape::Inputs in) { return kernels::matmul_nt(*in[0], *in[1]); },
      [](const Tape::BackwardArgs& g) {
        if (g.needed[0]) g.input_grads[0] = kernels::matmul(g.grad, *g.inputs[1]);
        if (g.needed[1]) g.input_grads[1] = kernels::matmul_tn(g.grad, *g.inputs[0]);
      });
}

Var transpose(Var a) {
  if (a.value().order() != 2) throw std::invalid_argument("transpose: expected a matrix");
  return tape_of(a).record(
      "transpose", {a}, [](Tape::Inputs in) { return hot::transpose(*in[0]); },
      [](const Tape::BackwardArgs& g) { g.input_grads[0] = hot::transpose(g.grad); });
}

Var linear(Var x, Var w) {
  const auto& xv = x.value();
  const auto& wv = w.value();
  if (wv.order() != 2 || xv.shape().back() != wv.rows())
    throw std::invalid_argument("linear: " + shape_string(xv.shape()) + " cannot be projected by " +
                                shape_string(wv.shape()));
  return tape_of(x).record(
      "linear", {x, w},
      [](Tape::Inputs in) {
        const std::size_t din = in[1]->rows();
        Shape s = in[0]->shape();
        s.back() = in[1]->cols();
        return reshape(kernels::matmul(as_matrix(*in[0], din), *in[1]), std::move(s));
      },
      [](const Tape::BackwardArgs& g) {
        const std::size_t din = g.inputs[1]->rows(), dout = g.inputs[1]->cols();
        const Tensor gm = as_matrix(g.grad, dout);
        if (g.needed[0])
          g.input_grads[0] = reshape(kernels::matmul_nt(gm, *g.inputs[1]), g.inputs[0]->shape());
        if (g.needed[1]) g.input_grads[1] = kernels::matmul_tn(as_matrix(*g.inputs[0], din), gm);
      });
}

Var mode_product(Var t, Var m, std::size_t mode) {
  const auto& tv = t.value();
  const auto& mv = m.value();
  if (mv.order() != 2 || mode >= tv.order() || mv.cols() != tv.extent(mode))
    throw std::invalid_argument("mode_product: factor " + shape_string(mv.shape()) + " incompatible with mode " +
                                std::to_string(mode) + " of " + shape_string(tv.shape()));
  return tape_of(t).record(
      "mode_product", {t, m}, [mode](Tape::Inputs in) { return kernels::mode_product(*in[0], *in[1], mode); },
      [mode](const Tape::BackwardArgs& g) {
        if (g.needed[0]) g.input_grads[0] = kernels::mode_product(g.grad, hot::transpose(*g.inputs[1]), mode);
        if (g.needed[1])
          g.input_grads[1] = kernels::matmul_nt(matricize(g.grad, mode), matricize(*g.inputs[0], mode));
      });
}

Var reshape(Var a, Shape shape) {
  if (shape_size(shape) != a.value().size())
    throw std::invalid_argument("reshape: element count mismatch " + shape_string(a.value().shape()) + " -> " +
                                shape_string(shape));
  return tape_of(a).record(
      "reshape", {a}, [shape](Tape::Inputs in) { return hot::reshape(*in[0], shape); },
      [](const Tape::BackwardArgs& g) { g.input_grads[0] = hot::reshape(g.grad, g.inputs[0]->shape()); });
}

Var concat(Var a, Var b, std::size_t axis) {
  const auto& as = a.value().shape();
  const auto& bs = b.value().shape();
  if (as.size() != bs.size() || axis >= as.size()) throw std::invalid_argument("concat: order/axis mismatch");
  for (std::size_t i = 0; i < as.size(); ++i)
    if (i != axis && as[i] != bs[i]) throw std::invalid_argument("concat: extents differ off the concat axis");
  return tape_of(a).record(
      "concat", {a, b},
      [axis](Tape::Inputs in) {
        const auto pa = split_at(in[0]->shape(), axis);
        const auto pb = split_at(in[1]->shape(), axis);
        Shape s = in[0]->shape();
        s[axis] += in[1]->extent(axis);
        Tensor out(s);
        const std::size_t ea = pa.ext * pa.inner, eb = pb.ext * pb.inner;
        for (std::size_t o = 0; o < pa.outer; ++o) {
          std::copy_n(in[0]->raw() + o * ea, ea, out.raw() + o * (ea + eb));
          std::copy_n(in[1]->raw() + o * eb, eb, out.raw() + o * (ea + eb) + ea);
        }
        return out;
      },
      [axis](const Tape::BackwardArgs& g) {
        const auto pa = split_at(g.inputs[0]->shape(), axis);
        const auto pb = split_at(g.inputs[1]->shape(), axis);
        const std::size_t ea = pa.ext * pa.inner, eb = pb.ext * pb.inner;
        Tensor ga(g.inputs[0]->shape()), gb(g.inputs[1]->shape());
        for (std::size_t o = 0; o < pa.outer; ++o) {
          std::copy_n(g.grad.raw() + o * (ea + eb), ea, ga.raw() + o * ea);
          std::copy_n(g.grad.raw() + o * (ea + eb) + ea, eb, gb.raw() + o * eb);
        }
        if (g.needed[0]) g.input_grads[0] = std::move(ga);
        if (g.needed[1]) g.input_grads[1] = std::move(gb);
      });
}

Var select(Var a, std::size_t axis, std::size_t index) {
  const auto& s = a.value().shape();
  if (axis >= s.size() || s.size() < 2) throw std::invalid_argument("select: axis out of range");
  if (index >= s[axis]) throw std::out_of_range("select: index out of range");
  return tape_of(a).record(
      "select", {a},
      [axis, index](Tape::Inputs in) {
        const auto p = split_at(in[0]->shape(), axis);
        Shape os = in[0]->shape();
        os.erase(os.begin() + static_cast<std::ptrdiff_t>(axis));
        Tensor out(os);
        for (std::size_t o = 0; o < p.outer; ++o)
          std::copy_n(in[0]->raw() + (o * p.ext + index) * p.inner, p.inner, out.raw() + o * p.inner);
        return out;
      },
      [axis, index](const Tape::BackwardArgs& g) {
        const auto p = split_at(g.inputs[0]->shape(), axis);
        Tensor d(g.inputs[0]->shape());
        for (std::size_t o = 0; o < p.outer; ++o)
          std::copy_n(g.grad.raw() + o * p.inner, p.inner, d.raw() + (o * p.ext + index) * p.inner);
        g.input_grads[0] = std::move(d);
      });
}

Var gather_rows(Var table, std::vector<std::size_t> ids) {
  const auto& tv = table.value();
  if (tv.order() != 2) throw std::invalid_argument("gather_rows: table must be a matrix");
  if (ids.empty()) throw std::invalid_argument("gather_rows: no ids");
  for (auto id : ids)
    if (id >= tv.rows()) throw std::out_of_range("gather_rows: id " + std::to_string(id) + " out of range");
  return tape_of(table).record(
      "gather_rows", {table},
      [ids](Tape::Inputs in) {
        const std::size_t d = in[0]->cols();
        Tensor out({ids.size(), d});
        for (std::size_t r = 0; r < ids.size(); ++r) std::copy_n(in[0]->raw() + ids[r] * d, d, out.raw() + r * d);
        return out;
      },
      [ids](const Tape::BackwardArgs& g) {
        const std::size_t d = g.inputs[0]->cols();
        Tensor dt(g.inputs[0]->shape());
        for (std::size_t r = 0; r < ids.size(); ++r)
          for (std::size_t k = 0; k < d; ++k) dt[ids[r] * d + k] += g.grad[r * d + k];
        g.input_grads[0] = std::move(dt);
      });
}

Var sum(Var a) {
  return tape_of(a).record(
      "sum", {a},
      [](Tape::Inputs in) {
        double s = 0.0;
        for (double v : in[0]->data()) s += v;
        return Tensor::scalar(s);
      },
      [](const Tape::BackwardArgs& g) { g.input_grads[0] = Tensor(g.inputs[0]->shape(), g.grad[0]); });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var pool(Var x, std::size_t axis, Pooling kind, const Mask& keep) {
  const auto& xs = x.value().shape();
  if (xs.size() != 3 || axis > 1) throw std::invalid_argument("pool: expects (N,T,c) and axis 0 or 1");
  if (!keep.empty() && keep.size() != xs[0] * xs[1]) throw std::invalid_argument("pool: mask size mismatch");
  auto mask = std::make_shared<const Mask>(keep);

  // Walks every output fiber (o, c) and the pooled positions p, giving the flat
  // input offset and whether that position is kept.
  struct Layout {
    std::size_t n, t, c, outer, pooled;
    std::size_t offset(std::size_t o, std::size_t p, std::size_t k, std::size_t axis) const {
      return axis == 0 ? (p * t + o) * c + k : (o * t + p) * c + k;
    }
    std::size_t cell(std::size_t o, std::size_t p, std::size_t axis) const { return axis == 0 ? p * t + o : o * t + p; }
  };
  const Layout L{xs[0], xs[1], xs[2], axis == 0 ? xs[1] : xs[0], axis == 0 ? xs[0] : xs[1]};

  auto forward = [L, axis, kind, mask](Tape::Inputs in) {
    const Tensor& v = *in[0];
    Tensor out({L.outer, L.c});
    for (std::size_t o = 0; o < L.outer; ++o) {
      std::size_t count = 0;
      for (std::size_t p = 0; p < L.pooled; ++p) count += mask->empty() || (*mask)[L.cell(o, p, axis)];
      if (count == 0) continue;
      for (std::size_t k = 0; k < L.c; ++k) {
        if (kind == Pooling::product) {
          double logmag = 0.0;
          bool negative = false, zero = false;
          for (std::size_t p = 0; p < L.pooled; ++p) {
            if (!mask->empty() && !(*mask)[L.cell(o, p, axis)]) continue;
            const double e = v[L.offset(o, p, k, axis)];
            if (e == 0.0) zero = true;
            else {
              logmag += std::log(std::abs(e));
              negative ^= e < 0;
            }
          }
          out[o * L.c + k] = zero ? 0.0 : (negative ? -1.0 : 1.0) * std::exp(logmag);
        } else {
          double s = 0.0;
          for (std::size_t p = 0; p < L.pooled; ++p)
            if (mask->empty() || (*mask)[L.cell(o, p, axis)]) s += v[L.offset(o, p, k, axis)];
          out[o * L.c + k] = kind == Pooling::mean ? s / static_cast<double>(count) : s;
        }
      }
    }
    for (double r : out.data())
      if (!std::isfinite(r)) throw std::overflow_error("pool: non-finite pooled value");
    return out;
  };

  auto backward = [L, axis, kind, mask](const Tape::BackwardArgs& g) {
    const Tensor& v = *g.inputs[0];
    Tensor d(v.shape());
    for (std::size_t o = 0; o < L.outer; ++o) {
      std::size_t count = 0;
      for (std::size_t p = 0; p < L.pooled; ++p) count += mask->empty() || (*mask)[L.cell(o, p, axis)];
      if (count == 0) continue;
      for (std::size_t k = 0; k < L.c; ++k) {
        const double go = g.grad[o * L.c + k];
        for (std::size_t p = 0; p < L.pooled; ++p) {
          if (!mask->empty() && !(*mask)[L.cell(o, p, axis)]) continue;
          double local = 1.0;
          if (kind == Pooling::mean) {
            local = 1.0 / static_cast<double>(count);
          } else if (kind == Pooling::product) {
            // Product of the other kept entries, in log-magnitude/sign space.
            double logmag = 0.0;
            bool negative = false, zero = false;
            for (std::size_t q = 0; q < L.pooled; ++q) {
              if (q == p || (!mask->empty() && !(*mask)[L.cell(o, q, axis)])) continue;
              const double e = v[L.offset(o, q, k, axis)];
              if (e == 0.0) zero = true;
              else {
                logmag += std::log(std::abs(e));
                negative ^= e < 0;
              }
            }
            local = zero ? 0.0 : (negative ? -1.0 : 1.0) * std::exp(logmag);
          }
          d[L.offset(o, p, k, axis)] += go * local;
        }
      }
    }
    g.input_grads[0] = std::move(d);
  };
  return tape_of(x).record("pool", {x}, forward, backward);
}

Var softmax_rows(Var a, const Mask& keep) {
  const auto& av = a.value();
  if (av.order() != 2) throw std::invalid_argument("softmax_rows: expected a matrix");
  if (!keep.empty() && keep.size() != av.size()) throw std::invalid_argument("softmax_rows: mask size mismatch");
  auto mask = std::make_shared<const Mask>(keep);
  return tape_of(a).record(
      "softmax_rows", {a}, [mask](Tape::Inputs in) { return kernels::softmax_rows(*in[0], *mask); },
      [](const Tape::BackwardArgs& g) {
        const Tensor& y = g.output;
        const std::size_t n = y.rows(), m = y.cols();
        Tensor d({n, m});
        for (std::size_t i = 0; i < n; ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j < m; ++j) dot += y[i * m + j] * g.grad[i * m + j];
          for (std::size_t j = 0; j < m; ++j) d[i * m + j] = y[i * m + j] * (g.grad[i * m + j] - dot);
        }
        g.input_grads[0] = std::move(d);
      });
}

Var rmsnorm(Var x, Var gain, double eps) {
  const auto& xs = x.value().shape();
  if (gain.value().order() != 1 || gain.value().size() != xs.back())
    throw std::invalid_argument("rmsnorm: gain must match the last extent");
  return tape_of(x).record(
      "rmsnorm", {x, gain},
      [eps](Tape::Inputs in) {
        const Tensor& v = *in[0];
        const Tensor& w = *in[1];
        const std::size_t d = w.size(), rows = v.size() / d;
        Tensor out(v.shape());
        for (std::size_t r = 0; r < rows; ++r) {
          double ms = 0.0;
          for (std::size_t k = 0; k < d; ++k) ms += v[r * d + k] * v[r * d + k];
          const double inv = 1.0 / std::sqrt(ms / static_cast<double>(d) + eps);
          for (std::size_t k = 0; k < d; ++k) out[r * d + k] = v[r * d + k] * inv * w[k];
        }
        return out;
      },
      [eps](const Tape::BackwardArgs& g) {
        const Tensor& v = *g.inputs[0];
        const Tensor& w = *g.inputs[1];
        const std::size_t d = w.size(), rows = v.size() / d;
        Tensor dx(v.shape()), dw({d});
        for (std::size_t r = 0; r < rows; ++r) {
          double ms = 0.0;
          for (std::size_t k = 0; k < d; ++k) ms += v[r * d + k] * v[r * d + k];
          const double inv = 1.0 / std::sqrt(ms / static_cast<double>(d) + eps);
          double dot = 0.0;
          for (std::size_t k = 0; k < d; ++k) dot += g.grad[r * d + k] * w[k] * v[r * d + k];
          const double c = dot * inv * inv * inv / static_cast<double>(d);
          for (std::size_t k = 0; k < d; ++k) {
            dx[r * d + k] = g.grad[r * d + k] * w[k] * inv - v[r * d + k] * c;
            dw[k] += g.grad[r * d + k] * v[r * d + k] * inv;
          }
        }
        if (g.needed[0]) g.input_grads[0] = std::move(dx);
        if (g.needed[1]) g.input_grads[1] = std::move(dw);
      });
}

namespace {

// Rotates pairs along the last axis; `sign` = -1 applies the inverse rotation.
Tensor rotate_pairs(const Tensor& x, double first_position, double sign) {
  const auto& s = x.shape();
  const std::size_t dh = s.back(), steps = s[s.size() - 2];
  const std::size_t lead = x.size() / (dh * steps);
  Tensor out(s);
  for (std::size_t t = 0; t < steps; ++t) {
    const double pos = first_position + static_cast<double>(t);
    for (std::size_t j = 0; j < dh / 2; ++j) {
      const double theta = sign * pos * std::pow(10000.0, -2.0 * static_cast<double>(j) / static_cast<double>(dh));
      const double c = std::cos(theta), sn = std::sin(theta);
      for (std::size_t o = 0; o < lead; ++o) {
        const std::size_t base = (o * steps + t) * dh + 2 * j;
        const double a = x[base], b = x[base + 1];
        out[base] = a * c - b * sn;
        out[base + 1] = a * sn + b * c;
      }
    }
  }
  return out;
}

}  // namespace

Var rotary(Var x, double first_position) {
  const auto& s = x.value().shape();
  if (s.size() < 2) throw std::invalid_argument("rotary: expects (..., T, d_h)");
  if (s.back() % 2 != 0) throw std::invalid_argument("rotary: head size must be even, got " + std::to_string(s.back()));
  return tape_of(x).record(
      "rotary", {x}, [first_position](Tape::Inputs in) { return rotate_pairs(*in[0], first_position, 1.0); },
      [first_position](const Tape::BackwardArgs& g) {
        g.input_grads[0] = rotate_pairs(g.grad, first_position, -1.0);
      });
}

Var kernel_features(Var x, const Tensor& directions) {
  const auto& xv = x.value();
  if (xv.order() != 2 || directions.order() != 2 || directions.cols() != xv.cols())
    throw std::invalid_argument("kernel_features: directions must be (m, d_h) with d_h matching x");
  auto w = std::make_shared<const Tensor>(directions);
  return tape_of(x).record(
      "kernel_features", {x},
      [w](Tape::Inputs in) {
        const Tensor& v = *in[0];
        Tensor out = kernels::matmul_nt(v, *w);
        const std::size_t n = v.rows(), d = v.cols(), m = w->rows();
        const double norm = 1.0 / std::sqrt(static_cast<double>(m));
        for (std::size_t i = 0; i < n; ++i) {
          double sq = 0.0;
          for (std::size_t k = 0; k < d; ++k) sq += v[i * d + k] * v[i * d + k];
          for (std::size_t j = 0; j < m; ++j) {
            const double f = norm * std::exp(out[i * m + j] - 0.5 * sq);
            if (!std::isfinite(f)) throw std::overflow_error("kernel_features: non-finite feature");
            out[i * m + j] = f;
          }
        }
        return out;
      },
      [w](const Tape::BackwardArgs& g) {
        const Tensor& v = *g.inputs[0];
        const std::size_t n = v.rows(), d = v.cols(), m = w->rows();
        Tensor gp = g.grad;
        for (std::size_t i = 0; i < gp.size(); ++i) gp[i] *= g.output[i];
        Tensor dx = kernels::matmul(gp, *w);
        for (std::size_t i = 0; i < n; ++i) {
          double s = 0.0;
          for (std::size_t j = 0; j < m; ++j) s += gp[i * m + j];
          for (std::size_t k = 0; k < d; ++k) dx[i * d + k] -= s * v[i * d + k];
        }
        g.input_grads[0] = std::move(dx);
      });
}

Var div_mode(Var a, Var z, std::size_t mode) {
  const auto& as = a.value().shape();
  if (mode >= as.size() || z.value().order() != 1 || z.value().size() != as[mode])
    throw std::invalid_argument("div_mode: divisor length must match the mode extent");
  for (double v : z.value().data())
    if (!(v > 0) || !std::isfinite(v))
      throw std::domain_error("div_mode: degenerate normalizer (non-positive or non-finite)");
  return tape_of(a).record(
      "div_mode", {a, z},
      [mode](Tape::Inputs in) {
        const auto p = split_at(in[0]->shape(), mode);
        Tensor out = *in[0];
        for (std::size_t o = 0; o < p.outer; ++o)
          for (std::size_t k = 0; k < p.ext; ++k)
            for (std::size_t i = 0; i < p.inner; ++i) out[(o * p.ext + k) * p.inner + i] /= (*in[1])[k];
        return out;
      },
      [mode](const Tape::BackwardArgs& g) {
        const auto p = split_at(g.inputs[0]->shape(), mode);
        const Tensor& zv = *g.inputs[1];
        Tensor da(g.inputs[0]->shape()), dz({p.ext});
        for (std::size_t o = 0; o < p.outer; ++o)
          for (std::size_t k = 0; k < p.ext; ++k)
            for (std::size_t i = 0; i < p.inner; ++i) {
              const std::size_t f = (o * p.ext + k) * p.inner + i;
              da[f] = g.grad[f] / zv[k];
              dz[k] -= g.grad[f] * g.output[f] / zv[k];
            }
        if (g.needed[0]) g.input_grads[0] = std::move(da);
        if (g.needed[1]) g.input_grads[1] = std::move(dz);
      });
}

Var bce_with_logits(Var logits, const Tensor& targets, const Tensor& weights) {
  const auto& lv = logits.value();
  if (lv.order() != 1 || targets.shape() != lv.shape() || weights.shape() != lv.shape())
    throw std::invalid_argument("bce_with_logits: logits, targets and weights must be equal-length vectors");
  auto y = std::make_shared<const Tensor>(targets);
  auto w = std::make_shared<const Tensor>(weights);
  return tape_of(logits).record(
      "bce_with_logits", {logits},
      [y, w](Tape::Inputs in) {
        double total = 0.0, wsum = 0.0;
        for (std::size_t i = 0; i < in[0]->size(); ++i) {
          const double l = (*in[0])[i];
          // softplus(l) - y*l, stable for large |l|
          const double sp = l > 0 ? l + std::log1p(std::exp(-l)) : std::log1p(std::exp(l));
          total += (*w)[i] * (sp - (*y)[i] * l);
          wsum += (*w)[i];
        }
        return Tensor::scalar(wsum > 0 ? total / wsum : 0.0);
      },
      [y, w](const Tape::BackwardArgs& g) {
        double wsum = 0.0;
        for (double v : w->data()) wsum += v;
        Tensor d(g.inputs[0]->shape());
        if (wsum > 0)
          for (std::size_t i = 0; i < d.size(); ++i)
            d[i] = g.grad[0] * (*w)[i] * (sigmoid((*g.inputs[0])[i]) - (*y)[i]) / wsum;
        g.input_grads[0] = std::move(d);
      });
}

}  // namespace hot::ad
