#include "fiml/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace fiml::ad {

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

bool GradSink::wants(NodeId id) const { return tape_.requires_grad(id); }

void GradSink::add(NodeId id, const Tensor& g) {
  if (!wants(id)) return;
  auto& slot = grads_[id];
  if (!slot) {
    slot = g;
    return;
  }
  auto dst = slot->mutable_data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

Tensor Gradients::operator[](Var v) const {
  if (v.id() < grads_.size() && grads_[v.id()]) return *grads_[v.id()];
  return Tensor::zeros(tape_ ? tape_->value(v.id()).shape() : v.shape());
}

bool Gradients::reached(Var v) const { return v.id() < grads_.size() && grads_[v.id()].has_value(); }

Var Tape::parameter(Tensor value) {
  require_finite(value, "parameter");
  nodes_.push_back(Node{std::move(value), {}, {}, true});
  return Var(this, static_cast<NodeId>(nodes_.size() - 1));
}

Var Tape::constant(Tensor value) {
  require_finite(value, "constant");
  nodes_.push_back(Node{std::move(value), {}, {}, false});
  return Var(this, static_cast<NodeId>(nodes_.size() - 1));
}

Var Tape::record(const char* op, Tensor value, std::vector<NodeId> parents, BackwardRule rule) {
  require_finite(value, op);
  const bool needs = std::any_of(parents.begin(), parents.end(),
                                 [this](NodeId p) { return nodes_[p].requires_grad; });
  if (!needs) rule = nullptr;
  nodes_.push_back(Node{std::move(value), std::move(parents), std::move(rule), needs});
  return Var(this, static_cast<NodeId>(nodes_.size() - 1));
}

Gradients Tape::backward(Var loss) const {
  if (&loss.tape() != this) throw Error("backward: loss belongs to another tape");
  if (value(loss.id()).size() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " + shape_string(value(loss.id()).shape()));
  }
  std::vector<std::optional<Tensor>> grads(loss.id() + 1);
  GradSink sink(*this, grads);
  sink.add(loss.id(), Tensor::full(value(loss.id()).shape(), real{1}));
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    const Node& node = nodes_[i];
    if (!grads[i] || !node.rule) continue;
    node.rule(*grads[i], sink);
  }
  return Gradients(this, std::move(grads));
}

namespace {

Tape& same_tape(Var a, Var b, const char* op) {
  if (!a.valid() || !b.valid() || &a.tape() != &b.tape()) {
    throw Error(std::string(op) + ": operands must live on the same tape");
  }
  return a.tape();
}

enum class Broadcast { None, LeftScalar, RightScalar };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::None;
  if (a.is_scalar()) return Broadcast::LeftScalar;
  if (b.is_scalar()) return Broadcast::RightScalar;
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                   shape_string(b.shape()));
}

// f(x, y) with partial derivatives dfdx(x, y) and dfdy(x, y).
template <class F, class Dx, class Dy>
Var binary(const char* op, Var a, Var b, F f, Dx dfdx, Dy dfdy) {
  Tape& tape = same_tape(a, b, op);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Broadcast kind = broadcast_kind(av, bv, op);
  const Shape out_shape = kind == Broadcast::LeftScalar ? bv.shape() : av.shape();
  const std::size_t n = shape_size(out_shape);
  auto x_at = [kind](const Tensor& t, std::size_t i) { return kind == Broadcast::LeftScalar ? t[0] : t[i]; };
  auto y_at = [kind](const Tensor& t, std::size_t i) { return kind == Broadcast::RightScalar ? t[0] : t[i]; };

  std::vector<real> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = f(x_at(av, i), y_at(bv, i));

  const NodeId ia = a.id(), ib = b.id();
  const Tape* tp = &tape;
  return tape.record(op, Tensor(out_shape, std::move(out)), {ia, ib},
                     [=](const Tensor& g, GradSink& sink) {
                       const Tensor& x = tp->value(ia);
                       const Tensor& y = tp->value(ib);
                       if (sink.wants(ia)) {
                         Tensor ga = Tensor::zeros(x.shape());
                         for (std::size_t i = 0; i < n; ++i) {
                           const real d = g[i] * dfdx(x_at(x, i), y_at(y, i));
                           if (kind == Broadcast::LeftScalar) ga[0] += d; else ga[i] = d;
                         }
                         sink.add(ia, ga);
                       }
                       if (sink.wants(ib)) {
                         Tensor gb = Tensor::zeros(y.shape());
                         for (std::size_t i = 0; i < n; ++i) {
                           const real d = g[i] * dfdy(x_at(x, i), y_at(y, i));
                           if (kind == Broadcast::RightScalar) gb[0] += d; else gb[i] = d;
                         }
                         sink.add(ib, gb);
                       }
                     });
}

// y = f(x); dfdx(x, y) may use both input and output.
template <class F, class D>
Var unary(const char* op, Var a, F f, D dfdx) {
  Tape& tape = a.tape();
  const Tensor& av = a.value();
  std::vector<real> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  const NodeId ia = a.id();
  const NodeId iy = static_cast<NodeId>(tape.size());
  const Tape* tp = &tape;
  return tape.record(op, Tensor(av.shape(), std::move(out)), {ia},
                     [=](const Tensor& g, GradSink& sink) {
                       const Tensor& x = tp->value(ia);
                       const Tensor& y = tp->value(iy);
                       Tensor ga = Tensor::zeros(x.shape());
                       for (std::size_t i = 0; i < x.size(); ++i) ga[i] = g[i] * dfdx(x[i], y[i]);
                       sink.add(ia, ga);
                     });
}

// C = op(A) * op(B) for rank-2 tensors, op = optional transpose.
Tensor matmul_raw(const Tensor& a, bool ta, const Tensor& b, bool tb) {
  const std::size_t m = ta ? a.dim(1) : a.dim(0);
  const std::size_t p = ta ? a.dim(0) : a.dim(1);
  const std::size_t q = tb ? b.dim(0) : b.dim(1);
  const std::size_t pb = tb ? b.dim(1) : b.dim(0);
  if (p != pb) {
    throw ShapeError("matmul: inner extents differ, " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  const std::size_t as = a.dim(1), bs = b.dim(1);
  Tensor c = Tensor::zeros({m, q});
  auto cd = c.mutable_data();
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t r = 0; r < p; ++r) {
      const real x = ta ? ad[r * as + i] : ad[i * as + r];
      if (x == real{0}) continue;
      real* crow = &cd[i * q];
      if (!tb) {
        const real* brow = &bd[r * bs];
        for (std::size_t j = 0; j < q; ++j) crow[j] += x * brow[j];
      } else {
        for (std::size_t j = 0; j < q; ++j) crow[j] += x * bd[j * bs + r];
      }
    }
  }
  return c;
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                     shape_string(t.shape()));
  }
}

// Splits a shape around `axis` into (outer, extent, inner) products.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw ShapeError(std::string(op) + ": invalid axis " + std::to_string(axis) + " for shape " +
                     shape_string(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out = shape;
  out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
  return out;
}

std::size_t last_extent(const Tensor& t, const char* op) {
  if (t.rank() == 0 || t.shape().back() == 0) {
    throw ShapeError(std::string(op) + ": needs a non-empty last axis, got " + shape_string(t.shape()));
  }
  return t.shape().back();
}

}  // namespace

Var add(Var a, Var b) {
  return binary("add", a, b, [](real x, real y) { return x + y; }, [](real, real) { return real{1}; },
                [](real, real) { return real{1}; });
}

Var sub(Var a, Var b) {
  return binary("sub", a, b, [](real x, real y) { return x - y; }, [](real, real) { return real{1}; },
                [](real, real) { return real{-1}; });
}

Var mul(Var a, Var b) {
  return binary("mul", a, b, [](real x, real y) { return x * y; }, [](real, real y) { return y; },
                [](real x, real) { return x; });
}

Var div(Var a, Var b) {
  return binary("div", a, b, [](real x, real y) { return x / y; }, [](real, real y) { return real{1} / y; },
                [](real x, real y) { return -x / (y * y); });
}

Var neg(Var a) {
  return unary("neg", a, [](real x) { return -x; }, [](real, real) { return real{-1}; });
}

Var scale(Var a, real factor) {
  return unary("scale", a, [factor](real x) { return factor * x; }, [factor](real, real) { return factor; });
}

Var shift(Var a, real offset) {
  return unary("shift", a, [offset](real x) { return x + offset; }, [](real, real) { return real{1}; });
}

Var square(Var a) {
  return unary("square", a, [](real x) { return x * x; }, [](real x, real) { return 2 * x; });
}

Var exp(Var a) {
  return unary("exp", a, [](real x) { return std::exp(x); }, [](real, real y) { return y; });
}

Var log(Var a) {
  for (real x : a.value().data()) {
    if (!(x > real{0})) throw NumericError("log of non-positive value");
  }
  return unary("log", a, [](real x) { return std::log(x); }, [](real x, real) { return real{1} / x; });
}

Var relu(Var a) {
  return unary("relu", a, [](real x) { return x > real{0} ? x : real{0}; },
               [](real x, real) { return x > real{0} ? real{1} : real{0}; });
}

Var matmul(Var a, Var b) {
  Tape& tape = same_tape(a, b, "matmul");
  require_rank(a.value(), 2, "matmul");
  require_rank(b.value(), 2, "matmul");
  Tensor c = matmul_raw(a.value(), false, b.value(), false);
  const NodeId ia = a.id(), ib = b.id();
  const Tape* tp = &tape;
  return tape.record("matmul", std::move(c), {ia, ib}, [=](const Tensor& g, GradSink& sink) {
    if (sink.wants(ia)) sink.add(ia, matmul_raw(g, false, tp->value(ib), true));
    if (sink.wants(ib)) sink.add(ib, matmul_raw(tp->value(ia), true, g, false));
  });
}

Var transpose(Var a) {
  require_rank(a.value(), 2, "transpose");
  const Tensor& av = a.value();
  const std::size_t m = av.dim(0), n = av.dim(1);
  Tensor t = Tensor::zeros({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) t.at(j, i) = av.at(i, j);
  const NodeId ia = a.id();
  return a.tape().record("transpose", std::move(t), {ia}, [=](const Tensor& g, GradSink& sink) {
    Tensor gt = Tensor::zeros({m, n});
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) gt.at(i, j) = g.at(j, i);
    sink.add(ia, gt);
  });
}

Var reshape(Var a, Shape shape) {
  const Shape from = a.shape();
  Tensor r = a.value().reshaped(std::move(shape));
  const NodeId ia = a.id();
  return a.tape().record("reshape", std::move(r), {ia},
                         [=](const Tensor& g, GradSink& sink) { sink.add(ia, g.reshaped(from)); });
}

Var sum(Var a) {
  const Tensor& av = a.value();
  real total = 0;
  for (real x : av.data()) total += x;
  const NodeId ia = a.id();
  const Shape from = av.shape();
  return a.tape().record("sum", Tensor::scalar(total), {ia}, [=](const Tensor& g, GradSink& sink) {
    sink.add(ia, Tensor::full(from, g[0]));
  });
}

Var sum(Var a, std::size_t axis) {
  const Tensor& av = a.value();
  const AxisSplit s = split_axis(av.shape(), axis, "sum");
  Tensor out = Tensor::zeros(drop_axis(av.shape(), axis));
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t e = 0; e < s.extent; ++e)
      for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += av[(o * s.extent + e) * s.inner + i];
  const NodeId ia = a.id();
  const Shape from = av.shape();
  return a.tape().record("sum", std::move(out), {ia}, [=](const Tensor& g, GradSink& sink) {
    Tensor ga = Tensor::zeros(from);
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t e = 0; e < s.extent; ++e)
        for (std::size_t i = 0; i < s.inner; ++i) ga[(o * s.extent + e) * s.inner + i] = g[o * s.inner + i];
    sink.add(ia, ga);
  });
}

Var mean(Var a) {
  if (a.size() == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(a), real{1} / static_cast<real>(a.size()));
}

Var mean(Var a, std::size_t axis) {
  const AxisSplit s = split_axis(a.shape(), axis, "mean");
  if (s.extent == 0) throw ShapeError("mean over empty axis");
  return scale(sum(a, axis), real{1} / static_cast<real>(s.extent));
}

Var sum_squares(Var a) { return sum(square(a)); }

Var logsumexp(Var a) {
  const Tensor& av = a.value();
  const std::size_t k = last_extent(av, "logsumexp");
  const std::size_t rows = av.size() / k;
  Shape out_shape(av.shape().begin(), av.shape().end() - 1);
  Tensor out = Tensor::zeros(out_shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const real* row = &av.data()[r * k];
    const real m = *std::max_element(row, row + k);
    real acc = 0;
    for (std::size_t c = 0; c < k; ++c) acc += std::exp(row[c] - m);
    out[r] = m + std::log(acc);
  }
  const NodeId ia = a.id();
  const NodeId iy = static_cast<NodeId>(a.tape().size());
  const Tape* tp = &a.tape();
  return a.tape().record("logsumexp", std::move(out), {ia}, [=](const Tensor& g, GradSink& sink) {
    const Tensor& x = tp->value(ia);
    const Tensor& y = tp->value(iy);
    Tensor ga = Tensor::zeros(x.shape());
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < k; ++c) ga[r * k + c] = g[r] * std::exp(x[r * k + c] - y[r]);
    sink.add(ia, ga);
  });
}

Var softmax(Var a) {
  const Tensor& av = a.value();
  const std::size_t k = last_extent(av, "softmax");
  const std::size_t rows = av.size() / k;
  Tensor out = Tensor::zeros(av.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const real* row = &av.data()[r * k];
    const real m = *std::max_element(row, row + k);
    real acc = 0;
    for (std::size_t c = 0; c < k; ++c) {
      out[r * k + c] = std::exp(row[c] - m);
      acc += out[r * k + c];
    }
    for (std::size_t c = 0; c < k; ++c) out[r * k + c] /= acc;
  }
  const NodeId ia = a.id();
  const NodeId iy = static_cast<NodeId>(a.tape().size());
  const Tape* tp = &a.tape();
  return a.tape().record("softmax", std::move(out), {ia}, [=](const Tensor& g, GradSink& sink) {
    const Tensor& y = tp->value(iy);
    Tensor ga = Tensor::zeros(y.shape());
    for (std::size_t r = 0; r < rows; ++r) {
      real dot = 0;
      for (std::size_t c = 0; c < k; ++c) dot += g[r * k + c] * y[r * k + c];
      for (std::size_t c = 0; c < k; ++c) ga[r * k + c] = y[r * k + c] * (g[r * k + c] - dot);
    }
    sink.add(ia, ga);
  });
}

Var repeat_last(Var a, std::size_t count) {
  const Tensor& av = a.value();
  Shape shape = av.shape();
  shape.push_back(count);
  Tensor out = Tensor::zeros(shape);
  const std::size_t n = av.size();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < count; ++c) out[i * count + c] = av[i];
  const NodeId ia = a.id();
  const Shape from = av.shape();
  return a.tape().record("repeat_last", std::move(out), {ia}, [=](const Tensor& g, GradSink& sink) {
    Tensor ga = Tensor::zeros(from);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < count; ++c) ga[i] += g[i * count + c];
    sink.add(ia, ga);
  });
}

Var repeat_first(Var a, std::size_t count) {
  const Tensor& av = a.value();
  Shape shape = av.shape();
  shape.insert(shape.begin(), count);
  Tensor out = Tensor::zeros(shape);
  const std::size_t n = av.size();
  for (std::size_t c = 0; c < count; ++c)
    for (std::size_t i = 0; i < n; ++i) out[c * n + i] = av[i];
  const NodeId ia = a.id();
  const Shape from = av.shape();
  return a.tape().record("repeat_first", std::move(out), {ia}, [=](const Tensor& g, GradSink& sink) {
    Tensor ga = Tensor::zeros(from);
    for (std::size_t c = 0; c < count; ++c)
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[c * n + i];
    sink.add(ia, ga);
  });
}

Var contract_axis1(Var block, Var weights) {
  Tape& tape = same_tape(block, weights, "contract_axis1");
  const Tensor& bv = block.value();
  const Tensor& wv = weights.value();
  require_rank(bv, 3, "contract_axis1");
  require_rank(wv, 1, "contract_axis1");
  const std::size_t nb = bv.dim(0), nl = bv.dim(1), nf = bv.dim(2);
  if (wv.dim(0) != nl) {
    throw ShapeError("contract_axis1: weights " + shape_string(wv.shape()) + " vs block " + shape_string(bv.shape()));
  }
  Tensor out = Tensor::zeros({nb, nf});
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t l = 0; l < nl; ++l)
      for (std::size_t f = 0; f < nf; ++f) out[b * nf + f] += wv[l] * bv[(b * nl + l) * nf + f];
  const NodeId ib = block.id(), iw = weights.id();
  const Tape* tp = &tape;
  return tape.record("contract_axis1", std::move(out), {ib, iw}, [=](const Tensor& g, GradSink& sink) {
    const Tensor& x = tp->value(ib);
    const Tensor& w = tp->value(iw);
    if (sink.wants(ib)) {
      Tensor gb = Tensor::zeros(x.shape());
      for (std::size_t b = 0; b < nb; ++b)
        for (std::size_t l = 0; l < nl; ++l)
          for (std::size_t f = 0; f < nf; ++f) gb[(b * nl + l) * nf + f] = w[l] * g[b * nf + f];
      sink.add(ib, gb);
    }
    if (sink.wants(iw)) {
      Tensor gw = Tensor::zeros(w.shape());
      for (std::size_t b = 0; b < nb; ++b)
        for (std::size_t l = 0; l < nl; ++l)
          for (std::size_t f = 0; f < nf; ++f) gw[l] += x[(b * nl + l) * nf + f] * g[b * nf + f];
      sink.add(iw, gw);
    }
  });
}

}  // namespace fiml::ad
