#include "cwm/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cwm/error.hpp"
#include "cwm/kernels.hpp"

namespace cwm::ad {

namespace {

namespace k = cwm::kernels::omp;

[[noreturn]] void shape_error(std::string_view op, const std::string& detail) {
  throw Error(ErrorKind::GraphError, std::string(op) + ": " + detail);
}

void same_shape(std::string_view op, Var a, Var b) {
  if (a.tape != b.tape) shape_error(op, "inputs on different tapes");
  if (a.shape() != b.shape()) shape_error(op, "shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

/// Row count and row width of a tensor viewed as [rows, last].
std::pair<int, int> as_matrix(const Shape& s) {
  if (s.empty()) return {1, 1};
  const int last = s.back();
  return {last == 0 ? 0 : static_cast<int>(numel(s) / last), last};
}

template <class F, class D>
Var unary(Var x, OpKind op, F forward, D derivative) {
  const Tensor& xv = x.value();
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) y[i] = forward(xv[i]);
  Tape* t = x.tape;
  const int xi = x.id;
  const int yi = static_cast<int>(t->size());
  return t->record(op, std::move(y), {x}, [t, xi, yi, derivative](const Tensor& g) {
    if (!t->wants_grad(xi)) return;
    const Tensor& xv = t->value(Var{t, xi});
    const Tensor& yv = t->value(Var{t, yi});
    Tensor& gx = t->grad_buffer(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * derivative(xv[i], yv[i]);
  });
}

}  // namespace

Var add(Var a, Var b) {
  same_shape("add", a, b);
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b.value()[i];
  Tape* t = a.tape;
  return t->record(OpKind::Add, std::move(y), {a, b}, [t, ai = a.id, bi = b.id](const Tensor& g) {
    for (int id : {ai, bi}) {
      if (!t->wants_grad(id)) continue;
      Tensor& gx = t->grad_buffer(id);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  same_shape("sub", a, b);
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= b.value()[i];
  Tape* t = a.tape;
  return t->record(OpKind::Sub, std::move(y), {a, b}, [t, ai = a.id, bi = b.id](const Tensor& g) {
    if (t->wants_grad(ai)) {
      Tensor& ga = t->grad_buffer(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t->wants_grad(bi)) {
      Tensor& gb = t->grad_buffer(bi);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  same_shape("mul", a, b);
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= b.value()[i];
  Tape* t = a.tape;
  return t->record(OpKind::Mul, std::move(y), {a, b}, [t, ai = a.id, bi = b.id](const Tensor& g) {
    const Tensor& av = t->value(Var{t, ai});
    const Tensor& bv = t->value(Var{t, bi});
    if (t->wants_grad(ai)) {
      Tensor& ga = t->grad_buffer(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t->wants_grad(bi)) {
      Tensor& gb = t->grad_buffer(bi);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var scale(Var a, double c) {
  return unary(a, OpKind::Scale, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

Var add_scalar(Var a, double c) {
  return unary(a, OpKind::AddScalar, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Var relu(Var x) {
  return unary(x, OpKind::Relu, [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(Var x, double slope) {
  return unary(x, OpKind::LeakyRelu, [slope](double v) { return v > 0.0 ? v : slope * v; },
               [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

Var sigmoid(Var x) {
  return unary(x, OpKind::Sigmoid, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
               [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var x) {
  return unary(x, OpKind::Tanh, [](double v) { return std::tanh(v); },
               [](double, double y) { return 1.0 - y * y; });
}

Var linear(Var x, Var w, std::optional<Var> b) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[1])
    shape_error("linear", "expected x [N,in] and w [out,in], got " + to_string(xs) + " and " + to_string(ws));
  const int n = xs[0], in = xs[1], out = ws[0];
  if (b && b->shape() != Shape{out}) shape_error("linear", "bias must be [" + std::to_string(out) + "]");
  Tensor y({n, out});
  k::matmul_nt(x.value().values(), w.value().values(), y.values(), n, in, out);
  if (b) {
    const Tensor& bv = b->value();
    for (int r = 0; r < n; ++r)
      for (int o = 0; o < out; ++o) y[static_cast<std::size_t>(r) * out + o] += bv[o];
  }
  Tape* t = x.tape;
  const int xi = x.id, wi = w.id, bi = b ? b->id : -1;
  std::vector<Var> inputs{x, w};
  if (b) inputs.push_back(*b);
  return t->record(OpKind::Linear, std::move(y), inputs, [t, xi, wi, bi, n, in, out](const Tensor& g) {
    const Tensor& xv = t->value(Var{t, xi});
    const Tensor& wv = t->value(Var{t, wi});
    if (t->wants_grad(xi)) {
      Tensor dx({n, in});
      k::matmul_nn(g.values(), wv.values(), dx.values(), n, out, in);
      Tensor& gx = t->grad_buffer(xi);
      for (std::size_t i = 0; i < dx.size(); ++i) gx[i] += dx[i];
    }
    if (t->wants_grad(wi)) {
      Tensor dw({out, in});
      k::matmul_tn(g.values(), xv.values(), dw.values(), out, n, in);
      Tensor& gw = t->grad_buffer(wi);
      for (std::size_t i = 0; i < dw.size(); ++i) gw[i] += dw[i];
    }
    if (bi >= 0 && t->wants_grad(bi)) {
      Tensor& gb = t->grad_buffer(bi);
      for (int r = 0; r < n; ++r)
        for (int o = 0; o < out; ++o) gb[o] += g[static_cast<std::size_t>(r) * out + o];
    }
  });
}

Var conv2d(Var x, Var w, std::optional<Var> b, int stride, int pad) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 4 || ws.size() != 4 || ws[1] != xs[1] || ws[2] != ws[3])
    shape_error("conv2d", "expected x [N,C,H,W] and square w [O,C,k,k], got " + to_string(xs) + " and " +
                              to_string(ws));
  if (stride < 1 || pad < 0) shape_error("conv2d", "stride must be >= 1 and pad >= 0");
  kernels::ConvShape cs{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], stride, pad};
  if (xs[2] + 2 * pad < ws[2] || xs[3] + 2 * pad < ws[2]) shape_error("conv2d", "kernel larger than padded input");
  if (b && b->shape() != Shape{ws[0]}) shape_error("conv2d", "bias must be [O]");
  Tensor y({cs.batch, cs.out_channels, cs.out_height(), cs.out_width()});
  const std::span<const double> bias = b ? b->value().values() : std::span<const double>{};
  k::conv2d_forward(cs, x.value().values(), w.value().values(), bias, y.values());
  Tape* t = x.tape;
  const int xi = x.id, wi = w.id, bi = b ? b->id : -1;
  std::vector<Var> inputs{x, w};
  if (b) inputs.push_back(*b);
  return t->record(OpKind::Conv2d, std::move(y), inputs, [t, xi, wi, bi, cs](const Tensor& g) {
    const Tensor& xv = t->value(Var{t, xi});
    const Tensor& wv = t->value(Var{t, wi});
    const bool need_dx = t->wants_grad(xi);
    Tensor dx(need_dx ? xv.shape() : Shape{0}), dw(wv.shape()), db({cs.out_channels});
    k::conv2d_backward(cs, xv.values(), wv.values(), g.values(), dx.values(), dw.values(), db.values());
    auto acc = [t](int id, const Tensor& d) {
      if (id < 0 || !t->wants_grad(id)) return;
      Tensor& gx = t->grad_buffer(id);
      for (std::size_t i = 0; i < d.size(); ++i) gx[i] += d[i];
    };
    if (need_dx) acc(xi, dx);
    acc(wi, dw);
    acc(bi, db);
  });
}

Var layer_norm(Var x, std::optional<Var> gain, std::optional<Var> bias, double eps) {
  const auto [rows, width] = as_matrix(x.shape());
  if (x.shape().empty() || width == 0) shape_error("layer_norm", "needs a non-empty last axis");
  if (gain && gain->shape() != Shape{width}) shape_error("layer_norm", "gain must match last axis");
  if (bias && bias->shape() != Shape{width}) shape_error("layer_norm", "bias must match last axis");
  const Tensor& xv = x.value();
  Tensor y(xv.shape());
  std::vector<double> norm(xv.size()), inv_std(rows);
  for (int r = 0; r < rows; ++r) {
    const double* row = xv.data() + static_cast<std::size_t>(r) * width;
    double mu = 0.0;
    for (int j = 0; j < width; ++j) mu += row[j];
    mu /= width;
    double var = 0.0;
    for (int j = 0; j < width; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= width;
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (int j = 0; j < width; ++j) {
      const std::size_t i = static_cast<std::size_t>(r) * width + j;
      norm[i] = (row[j] - mu) * inv_std[r];
      y[i] = norm[i] * (gain ? gain->value()[j] : 1.0) + (bias ? bias->value()[j] : 0.0);
    }
  }
  Tape* t = x.tape;
  const int xi = x.id, gi = gain ? gain->id : -1, bi = bias ? bias->id : -1;
  std::vector<Var> inputs{x};
  if (gain) inputs.push_back(*gain);
  if (bias) inputs.push_back(*bias);
  return t->record(OpKind::LayerNorm, std::move(y), inputs,
                   [t, xi, gi, bi, rows, width, norm = std::move(norm), inv_std = std::move(inv_std)](const Tensor& g) {
                     const Tensor* gv = gi >= 0 ? &t->value(Var{t, gi}) : nullptr;
                     if (gi >= 0 && t->wants_grad(gi)) {
                       Tensor& gg = t->grad_buffer(gi);
                       for (std::size_t i = 0; i < g.size(); ++i) gg[i % width] += g[i] * norm[i];
                     }
                     if (bi >= 0 && t->wants_grad(bi)) {
                       Tensor& gb = t->grad_buffer(bi);
                       for (std::size_t i = 0; i < g.size(); ++i) gb[i % width] += g[i];
                     }
                     if (!t->wants_grad(xi)) return;
                     Tensor& gx = t->grad_buffer(xi);
                     std::vector<double> dn(width);
                     for (int r = 0; r < rows; ++r) {
                       const std::size_t base = static_cast<std::size_t>(r) * width;
                       double mean_dn = 0.0, mean_dn_n = 0.0;
                       for (int j = 0; j < width; ++j) {
                         dn[j] = g[base + j] * (gv ? (*gv)[j] : 1.0);
                         mean_dn += dn[j];
                         mean_dn_n += dn[j] * norm[base + j];
                       }
                       mean_dn /= width;
                       mean_dn_n /= width;
                       for (int j = 0; j < width; ++j)
                         gx[base + j] += inv_std[r] * (dn[j] - mean_dn - norm[base + j] * mean_dn_n);
                     }
                   });
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) shape_error("concat", "no inputs");
  Shape lead = parts[0].shape();
  if (lead.empty()) shape_error("concat", "scalars cannot be concatenated");
  lead.pop_back();
  int total = 0;
  std::vector<int> widths;
  for (const Var& p : parts) {
    Shape s = p.shape();
    if (s.empty() || p.tape != parts[0].tape) shape_error("concat", "bad input");
    widths.push_back(s.back());
    total += s.back();
    s.pop_back();
    if (s != lead) shape_error("concat", "leading dims disagree");
  }
  const int rows = static_cast<int>(numel(lead));
  Shape out_shape = lead;
  out_shape.push_back(total);
  Tensor y(out_shape);
  int offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Tensor& v = parts[p].value();
    for (int r = 0; r < rows; ++r)
      std::copy_n(v.data() + static_cast<std::size_t>(r) * widths[p], widths[p],
                  y.data() + static_cast<std::size_t>(r) * total + offset);
    offset += widths[p];
  }
  Tape* t = parts[0].tape;
  std::vector<int> ids;
  for (const Var& p : parts) ids.push_back(p.id);
  return t->record(OpKind::Concat, std::move(y), parts, [t, ids, widths, rows, total](const Tensor& g) {
    int offset = 0;
    for (std::size_t p = 0; p < ids.size(); ++p) {
      if (t->wants_grad(ids[p])) {
        Tensor& gx = t->grad_buffer(ids[p]);
        for (int r = 0; r < rows; ++r)
          for (int j = 0; j < widths[p]; ++j)
            gx[static_cast<std::size_t>(r) * widths[p] + j] += g[static_cast<std::size_t>(r) * total + offset + j];
      }
      offset += widths[p];
    }
  });
}

Var sum(Var x) {
  const Tensor& xv = x.value();
  double s = 0.0;
  for (double v : xv.values()) s += v;
  Tape* t = x.tape;
  return t->record(OpKind::Sum, Tensor::scalar(s), {x}, [t, xi = x.id](const Tensor& g) {
    if (!t->wants_grad(xi)) return;
    Tensor& gx = t->grad_buffer(xi);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0];
  });
}

Var mean(Var x) {
  const Tensor& xv = x.value();
  if (xv.size() == 0) shape_error("mean", "empty tensor");
  double s = 0.0;
  for (double v : xv.values()) s += v;
  const double n = static_cast<double>(xv.size());
  Tape* t = x.tape;
  return t->record(OpKind::Mean, Tensor::scalar(s / n), {x}, [t, xi = x.id, n](const Tensor& g) {
    if (!t->wants_grad(xi)) return;
    Tensor& gx = t->grad_buffer(xi);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0] / n;
  });
}

Var row_sum(Var x) {
  const auto [rows, width] = as_matrix(x.shape());
  if (x.shape().empty()) shape_error("row_sum", "needs rank >= 1");
  Shape out = x.shape();
  out.pop_back();
  Tensor y(out);
  const Tensor& xv = x.value();
  for (int r = 0; r < rows; ++r) {
    double s = 0.0;
    for (int j = 0; j < width; ++j) s += xv[static_cast<std::size_t>(r) * width + j];
    y[r] = s;
  }
  Tape* t = x.tape;
  return t->record(OpKind::RowSum, std::move(y), {x}, [t, xi = x.id, rows, width](const Tensor& g) {
    if (!t->wants_grad(xi)) return;
    Tensor& gx = t->grad_buffer(xi);
    for (int r = 0; r < rows; ++r)
      for (int j = 0; j < width; ++j) gx[static_cast<std::size_t>(r) * width + j] += g[r];
  });
}

Var squared_distance(Var a, Var b) {
  same_shape("squared_distance", a, b);
  if (a.shape().empty()) shape_error("squared_distance", "needs rank >= 1");
  const auto [rows, width] = as_matrix(a.shape());
  Shape out = a.shape();
  out.pop_back();
  Tensor y(out);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  for (int r = 0; r < rows; ++r) {
    double s = 0.0;
    for (int j = 0; j < width; ++j) {
      const std::size_t i = static_cast<std::size_t>(r) * width + j;
      s += (av[i] - bv[i]) * (av[i] - bv[i]);
    }
    y[r] = s;
  }
  Tape* t = a.tape;
  return t->record(OpKind::SquaredDistance, std::move(y), {a, b},
                   [t, ai = a.id, bi = b.id, rows, width](const Tensor& g) {
                     const Tensor& av = t->value(Var{t, ai});
                     const Tensor& bv = t->value(Var{t, bi});
                     Tensor* ga = t->wants_grad(ai) ? &t->grad_buffer(ai) : nullptr;
                     Tensor* gb = t->wants_grad(bi) ? &t->grad_buffer(bi) : nullptr;
                     for (int r = 0; r < rows; ++r)
                       for (int j = 0; j < width; ++j) {
                         const std::size_t i = static_cast<std::size_t>(r) * width + j;
                         const double d = 2.0 * g[r] * (av[i] - bv[i]);
                         if (ga) (*ga)[i] += d;
                         if (gb) (*gb)[i] -= d;
                       }
                   });
}

Var reshape(Var x, Shape shape) {
  Tensor y = x.value().reshaped(std::move(shape));
  Tape* t = x.tape;
  return t->record(OpKind::Reshape, std::move(y), {x}, [t, xi = x.id](const Tensor& g) {
    if (!t->wants_grad(xi)) return;
    Tensor& gx = t->grad_buffer(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Var gather_rows(Var x, std::vector<int> rows) {
  const Shape& xs = x.shape();
  if (xs.empty()) shape_error("gather_rows", "needs rank >= 1");
  const int n = xs[0];
  const std::size_t width = n == 0 ? 0 : x.value().size() / n;
  for (int r : rows)
    if (r < 0 || r >= n) shape_error("gather_rows", "row index " + std::to_string(r) + " out of range");
  Shape out = xs;
  out[0] = static_cast<int>(rows.size());
  Tensor y(out);
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(x.value().data() + rows[i] * width, width, y.data() + i * width);
  Tape* t = x.tape;
  return t->record(OpKind::GatherRows, std::move(y), {x}, [t, xi = x.id, rows = std::move(rows), width](const Tensor& g) {
    if (!t->wants_grad(xi)) return;
    Tensor& gx = t->grad_buffer(xi);
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < width; ++j) gx[rows[i] * width + j] += g[i * width + j];
  });
}

Var segment_sum(Var x, std::vector<int> segment, int segments) {
  const Shape& xs = x.shape();
  if (xs.empty() || static_cast<std::size_t>(xs[0]) != segment.size())
    shape_error("segment_sum", "one segment id per row required");
  if (segments < 0) shape_error("segment_sum", "negative segment count");
  for (int s : segment)
    if (s < 0 || s >= segments) shape_error("segment_sum", "segment id out of range");
  const std::size_t width = xs[0] == 0 ? numel(Shape(xs.begin() + 1, xs.end())) : x.value().size() / xs[0];
  Shape out = xs;
  out[0] = segments;
  Tensor y(out);
  for (std::size_t i = 0; i < segment.size(); ++i)
    for (std::size_t j = 0; j < width; ++j) y[segment[i] * width + j] += x.value()[i * width + j];
  Tape* t = x.tape;
  return t->record(OpKind::SegmentSum, std::move(y), {x},
                   [t, xi = x.id, segment = std::move(segment), width](const Tensor& g) {
                     if (!t->wants_grad(xi)) return;
                     Tensor& gx = t->grad_buffer(xi);
                     for (std::size_t i = 0; i < segment.size(); ++i)
                       for (std::size_t j = 0; j < width; ++j) gx[i * width + j] += g[segment[i] * width + j];
                   });
}

Var gru_cell(Var x, Var h, Var w_ih, Var w_hh, Var b_ih, Var b_hh) {
  const Shape& xs = x.shape();
  const Shape& hs = h.shape();
  if (xs.size() != 2 || hs.size() != 2 || xs[0] != hs[0]) shape_error("gru_cell", "x [N,in] and h [N,H] required");
  const int n = xs[0], in = xs[1], hid = hs[1];
  if (w_ih.shape() != Shape{3 * hid, in} || w_hh.shape() != Shape{3 * hid, hid} || b_ih.shape() != Shape{3 * hid} ||
      b_hh.shape() != Shape{3 * hid})
    shape_error("gru_cell", "weights must be [3H,in], [3H,H], biases [3H]");

  const int g3 = 3 * hid;
  Tensor gi({n, g3}), gh({n, g3});
  k::matmul_nt(x.value().values(), w_ih.value().values(), gi.values(), n, in, g3);
  k::matmul_nt(h.value().values(), w_hh.value().values(), gh.values(), n, hid, g3);
  for (int r = 0; r < n; ++r)
    for (int j = 0; j < g3; ++j) {
      gi[static_cast<std::size_t>(r) * g3 + j] += b_ih.value()[j];
      gh[static_cast<std::size_t>(r) * g3 + j] += b_hh.value()[j];
    }
  // Saved activations: reset, update, candidate, and the recurrent candidate term.
  Tensor rz_n({n, g3}), hn({n, hid});
  Tensor out({n, hid});
  const Tensor& hv = h.value();
  for (int r = 0; r < n; ++r)
    for (int j = 0; j < hid; ++j) {
      const std::size_t row = static_cast<std::size_t>(r) * g3;
      const double rg = 1.0 / (1.0 + std::exp(-(gi[row + j] + gh[row + j])));
      const double zg = 1.0 / (1.0 + std::exp(-(gi[row + hid + j] + gh[row + hid + j])));
      const double hnj = gh[row + 2 * hid + j];
      const double ng = std::tanh(gi[row + 2 * hid + j] + rg * hnj);
      rz_n[row + j] = rg;
      rz_n[row + hid + j] = zg;
      rz_n[row + 2 * hid + j] = ng;
      hn[static_cast<std::size_t>(r) * hid + j] = hnj;
      out[static_cast<std::size_t>(r) * hid + j] = (1.0 - zg) * ng + zg * hv[static_cast<std::size_t>(r) * hid + j];
    }

  Tape* t = x.tape;
  const int xi = x.id, hi = h.id, wii = w_ih.id, whi = w_hh.id, bii = b_ih.id, bhi = b_hh.id;
  return t->record(
      OpKind::GruCell, std::move(out), {x, h, w_ih, w_hh, b_ih, b_hh},
      [t, xi, hi, wii, whi, bii, bhi, n, in, hid, g3, rz_n = std::move(rz_n), hn = std::move(hn)](const Tensor& g) {
        const Tensor& hv = t->value(Var{t, hi});
        Tensor dgi({n, g3}), dgh({n, g3});
        Tensor dh_direct({n, hid});
        for (int r = 0; r < n; ++r)
          for (int j = 0; j < hid; ++j) {
            const std::size_t row = static_cast<std::size_t>(r) * g3;
            const std::size_t hj = static_cast<std::size_t>(r) * hid + j;
            const double rg = rz_n[row + j], zg = rz_n[row + hid + j], ng = rz_n[row + 2 * hid + j];
            const double go = g[hj];
            const double dn = go * (1.0 - zg);
            const double dz = go * (hv[hj] - ng);
            dh_direct[hj] = go * zg;
            const double da_n = dn * (1.0 - ng * ng);
            const double dr = da_n * hn[hj];
            const double da_r = dr * rg * (1.0 - rg);
            const double da_z = dz * zg * (1.0 - zg);
            dgi[row + j] = da_r;
            dgi[row + hid + j] = da_z;
            dgi[row + 2 * hid + j] = da_n;
            dgh[row + j] = da_r;
            dgh[row + hid + j] = da_z;
            dgh[row + 2 * hid + j] = da_n * rg;
          }
        auto add_into = [t](int id, const Tensor& d) {
          Tensor& gx = t->grad_buffer(id);
          for (std::size_t i = 0; i < d.size(); ++i) gx[i] += d[i];
        };
        if (t->wants_grad(xi)) {
          Tensor dx({n, in});
          k::matmul_nn(dgi.values(), t->value(Var{t, wii}).values(), dx.values(), n, g3, in);
          add_into(xi, dx);
        }
        if (t->wants_grad(hi)) {
          Tensor dh({n, hid});
          k::matmul_nn(dgh.values(), t->value(Var{t, whi}).values(), dh.values(), n, g3, hid);
          for (std::size_t i = 0; i < dh.size(); ++i) dh[i] += dh_direct[i];
          add_into(hi, dh);
        }
        if (t->wants_grad(wii)) {
          Tensor dw({g3, in});
          k::matmul_tn(dgi.values(), t->value(Var{t, xi}).values(), dw.values(), g3, n, in);
          add_into(wii, dw);
        }
        if (t->wants_grad(whi)) {
          Tensor dw({g3, hid});
          k::matmul_tn(dgh.values(), hv.values(), dw.values(), g3, n, hid);
          add_into(whi, dw);
        }
        for (auto [id, d] : {std::pair{bii, &dgi}, std::pair{bhi, &dgh}}) {
          if (!t->wants_grad(id)) continue;
          Tensor& gb = t->grad_buffer(id);
          for (int r = 0; r < n; ++r)
            for (int j = 0; j < g3; ++j) gb[j] += (*d)[static_cast<std::size_t>(r) * g3 + j];
        }
      });
}

Var softmax_cross_entropy(Var logits, std::vector<int> labels) {
  const Shape& ls = logits.shape();
  if (ls.size() != 2 || static_cast<std::size_t>(ls[0]) != labels.size() || ls[0] == 0)
    shape_error("softmax_cross_entropy", "logits [N,C] with N labels required");
  const int n = ls[0], c = ls[1];
  for (int y : labels)
    if (y < 0 || y >= c) shape_error("softmax_cross_entropy", "label out of range");
  const Tensor& lv = logits.value();
  Tensor probs({n, c});
  double loss = 0.0;
  for (int r = 0; r < n; ++r) {
    const double* row = lv.data() + static_cast<std::size_t>(r) * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (int j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    for (int j = 0; j < c; ++j) probs[static_cast<std::size_t>(r) * c + j] = std::exp(row[j] - mx) / z;
    loss += -(row[labels[r]] - mx - std::log(z));
  }
  Tape* t = logits.tape;
  return t->record(OpKind::SoftmaxCrossEntropy, Tensor::scalar(loss / n), {logits},
                   [t, li = logits.id, n, c, labels = std::move(labels), probs = std::move(probs)](const Tensor& g) {
                     if (!t->wants_grad(li)) return;
                     Tensor& gl = t->grad_buffer(li);
                     for (int r = 0; r < n; ++r)
                       for (int j = 0; j < c; ++j) {
                         const std::size_t i = static_cast<std::size_t>(r) * c + j;
                         gl[i] += g[0] * (probs[i] - (j == labels[r] ? 1.0 : 0.0)) / n;
                       }
                   });
}

Var apply(std::string_view op, Var x) {
  if (op == "relu" || op == "hinge") return relu(x);
  if (op == "leaky_relu") return leaky_relu(x);
  if (op == "sigmoid") return sigmoid(x);
  if (op == "tanh") return tanh(x);
  if (op == "sum") return sum(x);
  if (op == "mean") return mean(x);
  if (op == "row_sum") return row_sum(x);
  if (op == "layer_norm") return layer_norm(x);
  throw Error(ErrorKind::GraphError, "unsupported unary op '" + std::string(op) + "'");
}

Var apply(std::string_view op, Var a, Var b) {
  if (op == "add") return add(a, b);
  if (op == "sub") return sub(a, b);
  if (op == "mul") return mul(a, b);
  if (op == "squared_distance") return squared_distance(a, b);
  throw Error(ErrorKind::GraphError, "unsupported binary op '" + std::string(op) + "'");
}

}  // namespace cwm::ad
