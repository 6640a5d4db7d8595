#ifndef SCMT_AUTODIFF_HPP_
#define SCMT_AUTODIFF_HPP_

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "scmt/common.hpp"
#include "scmt/tensor.hpp"

namespace scmt {

// Reverse-mode tape over Tensor<S>. One tape per training step: leaves are
// bound first (parameters, batch inputs), ops append nodes in topological
// order, backward() sweeps in reverse accumulating into leaf grads. A tape
// constructed with recording=false computes values only; teacher forwards
// run in that mode. Lambdas capture the tape pointer and node ids, never
// node references: the node vector reallocates as it grows.
struct Var {
  int32_t id = -1;
  bool valid() const { return id >= 0; }
};

template <typename S>
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }

  Var leaf(Tensor<S> value, bool needs_grad) {
    nodes_.push_back(Node{std::move(value), Tensor<S>(), nullptr,
                          needs_grad && recording_});
    return Var{static_cast<int32_t>(nodes_.size() - 1)};
  }

  Var constant(Tensor<S> value) { return leaf(std::move(value), false); }

  // Stop-gradient: the value flows on, the path back does not.
  Var detach(Var v) { return leaf(value(v), false); }

  const Tensor<S>& value(Var v) const { return nodes_[check(v)].value; }

  bool needs_grad(Var v) const { return nodes_[check(v)].needs_grad; }

  Tensor<S>& grad(Var v) {
    Node& n = nodes_[check(v)];
    if (n.grad.numel() != n.value.numel()) n.grad = Tensor<S>(n.value.shape());
    return n.grad;
  }

  bool grad_allocated(Var v) const {
    const Node& n = nodes_[check(v)];
    return n.value.numel() > 0 && n.grad.numel() == n.value.numel();
  }

  double scalar(Var v) const {
    SCMT_REQUIRE(value(v).numel() == 1, "scalar: var is not a scalar");
    return static_cast<double>(value(v)[0]);
  }

  // Seeds d(loss)/d(loss) = 1 and runs the reverse sweep.
  void backward(Var loss) {
    SCMT_REQUIRE(recording_, "backward: tape is not recording");
    SCMT_REQUIRE(value(loss).numel() == 1, "backward: loss must be scalar");
    grad(loss)[0] = S(1);
    for (int32_t id = loss.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      if (!n.backward) continue;
      if (n.grad.numel() != n.value.numel()) continue;  // not on the loss path
      n.backward();
    }
  }

  size_t size() const { return nodes_.size(); }

  // The id the next emitted node will get; ops use it to close over their
  // own output before pushing the node.
  Var next() const { return Var{static_cast<int32_t>(nodes_.size())}; }

  Var emit(Tensor<S> value, bool needs_grad, std::function<void()> backward) {
    if (!recording_) needs_grad = false;
    nodes_.push_back(Node{std::move(value), Tensor<S>(),
                          needs_grad ? std::move(backward) : nullptr, needs_grad});
    return Var{static_cast<int32_t>(nodes_.size() - 1)};
  }

 private:
  struct Node {
    Tensor<S> value;
    Tensor<S> grad;
    std::function<void()> backward;
    bool needs_grad = false;
  };

  size_t check(Var v) const {
    SCMT_REQUIRE(v.valid() && static_cast<size_t>(v.id) < nodes_.size(),
                 "tape: invalid var");
    return static_cast<size_t>(v.id);
  }

  bool recording_;
  std::vector<Node> nodes_;
};

namespace ad {

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MatMap = Eigen::Map<RowMat<S>>;
template <typename S>
using ConstMatMap = Eigen::Map<const RowMat<S>>;

// ---------- elementwise ----------

template <typename S, typename Fwd, typename Bwd>
Var binary_elementwise(Tape<S>& t, Var a, Var b, Fwd fwd, Bwd bwd) {
  const Tensor<S>& va = t.value(a);
  const Tensor<S>& vb = t.value(b);
  SCMT_REQUIRE(va.same_shape(vb), "elementwise: shape mismatch");
  Tensor<S> out(va.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = fwd(va[i], vb[i]);
  bool ng = t.needs_grad(a) || t.needs_grad(b);
  Var o = t.next();
  return t.emit(std::move(out), ng, [&t, a, b, o, bwd]() {
    const Tensor<S>& g = t.grad(o);
    const Tensor<S>& va = t.value(a);
    const Tensor<S>& vb = t.value(b);
    Tensor<S>* ga = t.needs_grad(a) ? &t.grad(a) : nullptr;
    Tensor<S>* gb = t.needs_grad(b) ? &t.grad(b) : nullptr;
    for (int64_t i = 0; i < g.numel(); ++i) {
      auto [da, db] = bwd(va[i], vb[i]);
      if (ga) (*ga)[i] += g[i] * da;
      if (gb) (*gb)[i] += g[i] * db;
    }
  });
}

template <typename S>
Var add(Tape<S>& t, Var a, Var b) {
  return binary_elementwise(
      t, a, b, [](S x, S y) { return x + y; },
      [](S, S) { return std::pair<S, S>(S(1), S(1)); });
}

template <typename S>
Var sub(Tape<S>& t, Var a, Var b) {
  return binary_elementwise(
      t, a, b, [](S x, S y) { return x - y; },
      [](S, S) { return std::pair<S, S>(S(1), S(-1)); });
}

template <typename S>
Var mul(Tape<S>& t, Var a, Var b) {
  return binary_elementwise(
      t, a, b, [](S x, S y) { return x * y; },
      [](S x, S y) { return std::pair<S, S>(y, x); });
}

template <typename S, typename Fwd, typename Bwd>
Var unary_elementwise(Tape<S>& t, Var a, Fwd fwd, Bwd bwd) {
  const Tensor<S>& va = t.value(a);
  Tensor<S> out(va.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = fwd(va[i]);
  Var o = t.next();
  return t.emit(std::move(out), t.needs_grad(a), [&t, a, o, bwd]() {
    if (!t.needs_grad(a)) return;
    const Tensor<S>& g = t.grad(o);
    const Tensor<S>& y = t.value(o);
    const Tensor<S>& x = t.value(a);
    Tensor<S>& ga = t.grad(a);
    for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * bwd(x[i], y[i]);
  });
}

template <typename S>
Var scale(Tape<S>& t, Var a, double c) {
  const S cs = static_cast<S>(c);
  return unary_elementwise(
      t, a, [cs](S x) { return cs * x; }, [cs](S, S) { return cs; });
}

template <typename S>
Var sigmoid(Tape<S>& t, Var a) {
  return unary_elementwise(
      t, a,
      [](S x) {
        return x >= S(0) ? S(1) / (S(1) + std::exp(-x))
                         : std::exp(x) / (S(1) + std::exp(x));
      },
      [](S, S y) { return y * (S(1) - y); });
}

template <typename S>
Var tanh_op(Tape<S>& t, Var a) {
  return unary_elementwise(
      t, a, [](S x) { return std::tanh(x); },
      [](S, S y) { return S(1) - y * y; });
}

template <typename S>
Var relu(Tape<S>& t, Var a) {
  return unary_elementwise(
      t, a, [](S x) { return x > S(0) ? x : S(0); },
      [](S x, S) { return x > S(0) ? S(1) : S(0); });
}

// ---------- shape plumbing ----------

template <typename S>
Var reshape(Tape<S>& t, Var a, std::vector<int64_t> shape) {
  Tensor<S> out = t.value(a).reshaped(std::move(shape));
  Var o = t.next();
  return t.emit(std::move(out), t.needs_grad(a), [&t, a, o]() {
    if (!t.needs_grad(a)) return;
    const Tensor<S>& g = t.grad(o);
    Tensor<S>& ga = t.grad(a);
    for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
  });
}

// Gather along axis 0.
template <typename S>
Var rows(Tape<S>& t, Var a, std::vector<int64_t> idx) {
  const Tensor<S>& va = t.value(a);
  SCMT_REQUIRE(va.rank() >= 1, "rows: rank must be >= 1");
  const int64_t stride = va.numel() / va.dim(0);
  std::vector<int64_t> shape = va.shape();
  shape[0] = static_cast<int64_t>(idx.size());
  Tensor<S> out(shape);
  for (size_t i = 0; i < idx.size(); ++i) {
    SCMT_REQUIRE(idx[i] >= 0 && idx[i] < va.dim(0), "rows: index out of range");
    std::copy(va.data() + idx[i] * stride, va.data() + (idx[i] + 1) * stride,
              out.data() + static_cast<int64_t>(i) * stride);
  }
  Var o = t.next();
  return t.emit(std::move(out), t.needs_grad(a),
                [&t, a, o, idx = std::move(idx), stride]() {
                  if (!t.needs_grad(a)) return;
                  const Tensor<S>& g = t.grad(o);
                  Tensor<S>& ga = t.grad(a);
                  for (size_t i = 0; i < idx.size(); ++i) {
                    const S* src = g.data() + static_cast<int64_t>(i) * stride;
                    S* dst = ga.data() + idx[i] * stride;
                    for (int64_t k = 0; k < stride; ++k) dst[k] += src[k];
                  }
                });
}

// x [B x T x D] -> [B x D] at time index step.
template <typename S>
Var time_slice(Tape<S>& t, Var a, int64_t step) {
  const Tensor<S>& va = t.value(a);
  SCMT_REQUIRE(va.rank() == 3, "time_slice: expected [B x T x D]");
  SCMT_REQUIRE(step >= 0 && step < va.dim(1), "time_slice: step out of range");
  const int64_t b_dim = va.dim(0), t_dim = va.dim(1), d_dim = va.dim(2);
  Tensor<S> out({b_dim, d_dim});
  for (int64_t b = 0; b < b_dim; ++b)
    std::copy(va.data() + (b * t_dim + step) * d_dim,
              va.data() + (b * t_dim + step + 1) * d_dim, out.data() + b * d_dim);
  Var o = t.next();
  return t.emit(std::move(out), t.needs_grad(a), [&t, a, o, step]() {
    if (!t.needs_grad(a)) return;
    const Tensor<S>& g = t.grad(o);
    Tensor<S>& ga = t.grad(a);
    const int64_t b_dim = ga.dim(0), t_dim = ga.dim(1), d_dim = ga.dim(2);
    for (int64_t b = 0; b < b_dim; ++b) {
      const S* src = g.data() + b * d_dim;
      S* dst = ga.data() + (b * t_dim + step) * d_dim;
      for (int64_t k = 0; k < d_dim; ++k) dst[k] += src[k];
    }
  });
}

// Collect per-step [B x D] vars into a [B x T x D] sequence.
template <typename S>
Var stack_time(Tape<S>& t, const std::vector<Var>& steps) {
  SCMT_REQUIRE(!steps.empty(), "stack_time: no steps");
  const int64_t t_dim = static_cast<int64_t>(steps.size());
  const int64_t b_dim = t.value(steps[0]).dim(0);
  const int64_t d_dim = t.value(steps[0]).dim(1);
  Tensor<S> out({b_dim, t_dim, d_dim});
  bool ng = false;
  for (int64_t s = 0; s < t_dim; ++s) {
    const Tensor<S>& v = t.value(steps[static_cast<size_t>(s)]);
    SCMT_REQUIRE(v.dim(0) == b_dim && v.dim(1) == d_dim, "stack_time: ragged steps");
    ng = ng || t.needs_grad(steps[static_cast<size_t>(s)]);
    for (int64_t b = 0; b < b_dim; ++b)
      std::copy(v.data() + b * d_dim, v.data() + (b + 1) * d_dim,
                out.data() + (b * t_dim + s) * d_dim);
  }
  Var o = t.next();
  return t.emit(std::move(out), ng, [&t, steps, o]() {
    const Tensor<S>& g = t.grad(o);
    const int64_t b_dim = g.dim(0), t_dim = g.dim(1), d_dim = g.dim(2);
    for (int64_t s = 0; s < t_dim; ++s) {
      Var sv = steps[static_cast<size_t>(s)];
      if (!t.needs_grad(sv)) continue;
      Tensor<S>& gs = t.grad(sv);
      for (int64_t b = 0; b < b_dim; ++b) {
        const S* src = g.data() + (b * t_dim + s) * d_dim;
        S* dst = gs.data() + b * d_dim;
        for (int64_t k = 0; k < d_dim; ++k) dst[k] += src[k];
      }
    }
  });
}

// Column slice of a [R x W] matrix.
template <typename S>
Var slice_cols(Tape<S>& t, Var a, int64_t offset, int64_t width) {
  const Tensor<S>& va = t.value(a);
  SCMT_REQUIRE(va.rank() == 2, "slice_cols: expected rank 2");
  const int64_t r_dim = va.dim(0), w_dim = va.dim(1);
  SCMT_REQUIRE(offset >= 0 && offset + width <= w_dim, "slice_cols: out of range");
  Tensor<S> out({r_dim, width});
  for (int64_t r = 0; r < r_dim; ++r)
    std::copy(va.data() + r * w_dim + offset, va.data() + r * w_dim + offset + width,
              out.data() + r * width);
  Var o = t.next();
  return t.emit(std::move(out), t.needs_grad(a), [&t, a, o, offset, width]() {
    if (!t.needs_grad(a)) return;
    const Tensor<S>& g = t.grad(o);
    Tensor<S>& ga = t.grad(a);
    const int64_t r_dim = ga.dim(0), w_dim = ga.dim(1);
    for (int64_t r = 0; r < r_dim; ++r) {
      const S* src = g.data() + r * width;
      S* dst = ga.data() + r * w_dim + offset;
      for (int64_t k = 0; k < width; ++k) dst[k] += src[k];
    }
  });
}

template <typename S>
Var concat_cols(Tape<S>& t, Var a, Var b) {
  const Tensor<S>& va = t.value(a);
  const Tensor<S>& vb = t.value(b);
  SCMT_REQUIRE(va.rank() == 2 && vb.rank() == 2 && va.dim(0) == vb.dim(0),
               "concat_cols: incompatible shapes");
  const int64_t r_dim = va.dim(0), wa = va.dim(1), wb = vb.dim(1);
  Tensor<S> out({r_dim, wa + wb});
  for (int64_t r = 0; r < r_dim; ++r) {
    std::copy(va.data() + r * wa, va.data() + (r + 1) * wa, out.data() + r * (wa + wb));
    std::copy(vb.data() + r * wb, vb.data() + (r + 1) * wb,
              out.data() + r * (wa + wb) + wa);
  }
  Var o = t.next();
  return t.emit(std::move(out), t.needs_grad(a) || t.needs_grad(b),
                [&t, a, b, o, wa, wb]() {
                  const Tensor<S>& g = t.grad(o);
                  const int64_t r_dim = g.dim(0);
                  if (t.needs_grad(a)) {
                    Tensor<S>& ga = t.grad(a);
                    for (int64_t r = 0; r < r_dim; ++r)
                      for (int64_t k = 0; k < wa; ++k)
                        ga[r * wa + k] += g[r * (wa + wb) + k];
                  }
                  if (t.needs_grad(b)) {
                    Tensor<S>& gb = t.grad(b);
                    for (int64_t r = 0; r < r_dim; ++r)
                      for (int64_t k = 0; k < wb; ++k)
                        gb[r * wb + k] += g[r * (wa + wb) + wa + k];
                  }
                });
}

// [B x C x T x F] -> [B x T x C*F]; feeds conv activations to the recurrence.
template <typename S>
Var to_sequence(Tape<S>& t, Var a) {
  const Tensor<S>& va = t.value(a);
  SCMT_REQUIRE(va.rank() == 4, "to_sequence: expected [B x C x T x F]");
  const int64_t b_dim = va.dim(0), c_dim = va.dim(1), t_dim = va.dim(2), f_dim = va.dim(3);
  Tensor<S> out({b_dim, t_dim, c_dim * f_dim});
  for (int64_t b = 0; b < b_dim; ++b)
    for (int64_t c = 0; c < c_dim; ++c)
      for (int64_t tt = 0; tt < t_dim; ++tt) {
        const S* src = va.data() + ((b * c_dim + c) * t_dim + tt) * f_dim;
        S* dst = out.data() + (b * t_dim + tt) * (c_dim * f_dim) + c * f_dim;
        std::copy(src, src + f_dim, dst);
      }
  Var o = t.next();
  return t.emit(std::move(out), t.needs_grad(a), [&t, a, o]() {
    if (!t.needs_grad(a)) return;
    const Tensor<S>& g = t.grad(o);
    Tensor<S>& ga = t.grad(a);
    const int64_t b_dim = ga.dim(0), c_dim = ga.dim(1), t_dim = ga.dim(2),
                  f_dim = ga.dim(3);
    for (int64_t b = 0; b < b_dim; ++b)
      for (int64_t c = 0; c < c_dim; ++c)
        for (int64_t tt = 0; tt < t_dim; ++tt) {
          const S* src = g.data() + (b * t_dim + tt) * (c_dim * f_dim) + c * f_dim;
          S* dst = ga.data() + ((b * c_dim + c) * t_dim + tt) * f_dim;
          for (int64_t k = 0; k < f_dim; ++k) dst[k] += src[k];
        }
  });
}

// ---------- dense algebra ----------

// x [..., in] times W [out x in] plus b [out] -> [..., out].
template <typename S>
Var linear(Tape<S>& t, Var x, Var w, Var b) {
  const Tensor<S>& vx = t.value(x);
  const Tensor<S>& vw = t.value(w);
  const Tensor<S>& vb = t.value(b);
  SCMT_REQUIRE(vw.rank() == 2, "linear: W must be [out x in]");
  const int64_t in_dim = vw.dim(1), out_dim = vw.dim(0);
  SCMT_REQUIRE(vx.shape().back() == in_dim, "linear: input width mismatch");
  SCMT_REQUIRE(vb.numel() == out_dim, "linear: bias size mismatch");
  const int64_t n_rows = vx.numel() / in_dim;

  std::vector<int64_t> out_shape = vx.shape();
  out_shape.back() = out_dim;
  Tensor<S> out(out_shape);
  {
    ConstMatMap<S> xm(vx.data(), n_rows, in_dim);
    ConstMatMap<S> wm(vw.data(), out_dim, in_dim);
    MatMap<S> om(out.data(), n_rows, out_dim);
    om.noalias() = xm * wm.transpose();
    om.rowwise() += Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>(
        vb.data(), out_dim);
  }
  bool ng = t.needs_grad(x) || t.needs_grad(w) || t.needs_grad(b);
  Var o = t.next();
  return t.emit(std::move(out), ng, [&t, x, w, b, o, n_rows, in_dim, out_dim]() {
    const Tensor<S>& g = t.grad(o);
    ConstMatMap<S> gm(g.data(), n_rows, out_dim);
    if (t.needs_grad(x)) {
      ConstMatMap<S> wm(t.value(w).data(), out_dim, in_dim);
      MatMap<S> gx(t.grad(x).data(), n_rows, in_dim);
      gx.noalias() += gm * wm;
    }
    if (t.needs_grad(w)) {
      ConstMatMap<S> xm(t.value(x).data(), n_rows, in_dim);
      MatMap<S> gw(t.grad(w).data(), out_dim, in_dim);
      gw.noalias() += gm.transpose() * xm;
    }
    if (t.needs_grad(b)) {
      Tensor<S>& gb = t.grad(b);
      for (int64_t r = 0; r < n_rows; ++r)
        for (int64_t c = 0; c < out_dim; ++c) gb[c] += g[r * out_dim + c];
    }
  });
}

// ---------- convolution stack ----------

namespace conv_detail {
// col is [K x N] row-major with K = c_in*kh*kw, N = t_dim*f_dim; same padding.
template <typename S>
void im2col(const S* x, int64_t c_in, int64_t t_dim, int64_t f_dim, int kh, int kw,
            S* col) {
  const int pad_t = kh / 2, pad_f = kw / 2;
  const int64_t n = t_dim * f_dim;
  int64_t k = 0;
  for (int64_t c = 0; c < c_in; ++c)
    for (int dt = 0; dt < kh; ++dt)
      for (int df = 0; df < kw; ++df, ++k) {
        S* dst = col + k * n;
        const S* plane = x + c * t_dim * f_dim;
        for (int64_t tt = 0; tt < t_dim; ++tt) {
          int64_t st = tt + dt - pad_t;
          if (st < 0 || st >= t_dim) {
            std::fill(dst + tt * f_dim, dst + (tt + 1) * f_dim, S(0));
            continue;
          }
          const S* src_row = plane + st * f_dim;
          S* dst_row = dst + tt * f_dim;
          int64_t sf0 = df - pad_f;
          for (int64_t ff = 0; ff < f_dim; ++ff) {
            int64_t sf = ff + sf0;
            dst_row[ff] = (sf >= 0 && sf < f_dim) ? src_row[sf] : S(0);
          }
        }
      }
}

template <typename S>
void col2im_add(const S* col, int64_t c_in, int64_t t_dim, int64_t f_dim, int kh,
                int kw, S* gx) {
  const int pad_t = kh / 2, pad_f = kw / 2;
  const int64_t n = t_dim * f_dim;
  int64_t k = 0;
  for (int64_t c = 0; c < c_in; ++c)
    for (int dt = 0; dt < kh; ++dt)
      for (int df = 0; df < kw; ++df, ++k) {
        const S* src = col + k * n;
        S* plane = gx + c * t_dim * f_dim;
        for (int64_t tt = 0; tt < t_dim; ++tt) {
          int64_t st = tt + dt - pad_t;
          if (st < 0 || st >= t_dim) continue;
          S* dst_row = plane + st * f_dim;
          const S* src_row = src + tt * f_dim;
          int64_t sf0 = df - pad_f;
          for (int64_t ff = 0; ff < f_dim; ++ff) {
            int64_t sf = ff + sf0;
            if (sf >= 0 && sf < f_dim) dst_row[sf] += src_row[ff];
          }
        }
      }
}
}  // namespace conv_detail

// 3x3-style same convolution, stride 1. W [c_out x c_in*kh*kw], b [c_out],
// x [B x c_in x T x F] -> [B x c_out x T x F]. The im2col buffer is rebuilt
// in the backward pass instead of being kept on the tape.
template <typename S>
Var conv2d(Tape<S>& t, Var x, Var w, Var b, int c_in, int c_out, int kh, int kw) {
  const Tensor<S>& vx = t.value(x);
  const Tensor<S>& vw = t.value(w);
  SCMT_REQUIRE(vx.rank() == 4 && vx.dim(1) == c_in, "conv2d: input shape mismatch");
  SCMT_REQUIRE(vw.dim(0) == c_out && vw.dim(1) == static_cast<int64_t>(c_in) * kh * kw,
               "conv2d: weight shape mismatch");
  const int64_t b_dim = vx.dim(0), t_dim = vx.dim(2), f_dim = vx.dim(3);
  const int64_t k_dim = static_cast<int64_t>(c_in) * kh * kw;
  const int64_t n = t_dim * f_dim;

  Tensor<S> out({b_dim, c_out, t_dim, f_dim});
  AlignedVec<S> col(static_cast<size_t>(k_dim * n));
  {
    ConstMatMap<S> wm(vw.data(), c_out, k_dim);
    const Tensor<S>& vb = t.value(b);
    for (int64_t bb = 0; bb < b_dim; ++bb) {
      conv_detail::im2col(vx.data() + bb * c_in * n, c_in, t_dim, f_dim, kh, kw,
                          col.data());
      ConstMatMap<S> cm(col.data(), k_dim, n);
      MatMap<S> om(out.data() + bb * c_out * n, c_out, n);
      om.noalias() = wm * cm;
      for (int64_t co = 0; co < c_out; ++co)
        om.row(co).array() += static_cast<S>(vb[co]);
    }
  }
  bool ng = t.needs_grad(x) || t.needs_grad(w) || t.needs_grad(b);
  Var o = t.next();
  return t.emit(std::move(out), ng,
                [&t, x, w, b, o, c_in, c_out, kh, kw, b_dim, t_dim, f_dim, k_dim, n]() {
    const Tensor<S>& g = t.grad(o);
    AlignedVec<S> col(static_cast<size_t>(k_dim * n));
    const bool need_x = t.needs_grad(x), need_w = t.needs_grad(w),
               need_b = t.needs_grad(b);
    for (int64_t bb = 0; bb < b_dim; ++bb) {
      ConstMatMap<S> gm(g.data() + bb * c_out * n, c_out, n);
      if (need_w) {
        conv_detail::im2col(t.value(x).data() + bb * c_in * n, c_in, t_dim, f_dim, kh,
                            kw, col.data());
        ConstMatMap<S> cm(col.data(), k_dim, n);
        MatMap<S> gw(t.grad(w).data(), c_out, k_dim);
        gw.noalias() += gm * cm.transpose();
      }
      if (need_b) {
        // Plain left-to-right accumulation. Eigen's vectorized sum() picks its
        // traversal at runtime, which lets the rounding order (and so the last
        // bits of the bias gradient) vary between otherwise identical runs.
        Tensor<S>& gb = t.grad(b);
        const S* gp = g.data() + bb * c_out * n;
        for (int64_t co = 0; co < c_out; ++co) {
          S acc = S(0);
          const S* row = gp + co * n;
          for (int64_t i = 0; i < n; ++i) acc += row[i];
          gb[co] += acc;
        }
      }
      if (need_x) {
        ConstMatMap<S> wm(t.value(w).data(), c_out, k_dim);
        MatMap<S> cg(col.data(), k_dim, n);
        cg.noalias() = wm.transpose() * gm;
        conv_detail::col2im_add(col.data(), c_in, t_dim, f_dim, kh, kw,
                                t.grad(x).data() + bb * c_in * n);
      }
    }
  });
}

// Gated linear unit over the channel axis: [B x 2C x T x F] -> [B x C x T x F].
template <typename S>
Var glu_channels(Tape<S>& t, Var x) {
  const Tensor<S>& vx = t.value(x);
  SCMT_REQUIRE(vx.rank() == 4 && vx.dim(1) % 2 == 0, "glu: channel count must be even");
  const int64_t b_dim = vx.dim(0), c2 = vx.dim(1), t_dim = vx.dim(2), f_dim = vx.dim(3);
  const int64_t c = c2 / 2, plane = t_dim * f_dim;
  Tensor<S> out({b_dim, c, t_dim, f_dim});
  for (int64_t bb = 0; bb < b_dim; ++bb) {
    const S* lin = vx.data() + bb * c2 * plane;
    const S* gate = lin + c * plane;
    S* dst = out.data() + bb * c * plane;
    for (int64_t i = 0; i < c * plane; ++i) {
      S s = S(1) / (S(1) + std::exp(-gate[i]));
      dst[i] = lin[i] * s;
    }
  }
  Var o = t.next();
  return t.emit(std::move(out), t.needs_grad(x), [&t, x, o]() {
    if (!t.needs_grad(x)) return;
    const Tensor<S>& g = t.grad(o);
    const Tensor<S>& vx = t.value(x);
    Tensor<S>& gx = t.grad(x);
    const int64_t b_dim = vx.dim(0), c2 = vx.dim(1);
    const int64_t c = c2 / 2, plane = vx.dim(2) * vx.dim(3);
    for (int64_t bb = 0; bb < b_dim; ++bb) {
      const S* lin = vx.data() + bb * c2 * plane;
      const S* gate = lin + c * plane;
      const S* gy = g.data() + bb * c * plane;
      S* glin = gx.data() + bb * c2 * plane;
      S* ggate = glin + c * plane;
      for (int64_t i = 0; i < c * plane; ++i) {
        S s = S(1) / (S(1) + std::exp(-gate[i]));
        glin[i] += gy[i] * s;
        ggate[i] += gy[i] * lin[i] * s * (S(1) - s);
      }
    }
  });
}

template <typename S>
Var avg_pool2d(Tape<S>& t, Var x, int kt, int kf) {
  const Tensor<S>& vx = t.value(x);
  SCMT_REQUIRE(vx.rank() == 4, "avg_pool2d: expected [B x C x T x F]");
  const int64_t b_dim = vx.dim(0), c_dim = vx.dim(1), t_dim = vx.dim(2), f_dim = vx.dim(3);
  SCMT_CONFIG_REQUIRE(t_dim % kt == 0 && f_dim % kf == 0,
                      "avg_pool2d: dims must divide pooling window");
  const int64_t ot = t_dim / kt, of = f_dim / kf;
  Tensor<S> out({b_dim, c_dim, ot, of});
  const S inv = S(1) / static_cast<S>(kt * kf);
  for (int64_t bc = 0; bc < b_dim * c_dim; ++bc) {
    const S* src = vx.data() + bc * t_dim * f_dim;
    S* dst = out.data() + bc * ot * of;
    for (int64_t tt = 0; tt < ot; ++tt)
      for (int64_t ff = 0; ff < of; ++ff) {
        S acc = S(0);
        for (int dt = 0; dt < kt; ++dt)
          for (int df = 0; df < kf; ++df)
            acc += src[(tt * kt + dt) * f_dim + ff * kf + df];
        dst[tt * of + ff] = acc * inv;
      }
  }
  Var o = t.next();
  return t.emit(std::move(out), t.needs_grad(x), [&t, x, o, kt, kf]() {
    if (!t.needs_grad(x)) return;
    const Tensor<S>& g = t.grad(o);
    Tensor<S>& gx = t.grad(x);
    const int64_t b_dim = gx.dim(0), c_dim = gx.dim(1), t_dim = gx.dim(2),
                  f_dim = gx.dim(3);
    const int64_t ot = t_dim / kt, of = f_dim / kf;
    const S inv = S(1) / static_cast<S>(kt * kf);
    for (int64_t bc = 0; bc < b_dim * c_dim; ++bc) {
      const S* src = g.data() + bc * ot * of;
      S* dst = gx.data() + bc * t_dim * f_dim;
      for (int64_t tt = 0; tt < ot; ++tt)
        for (int64_t ff = 0; ff < of; ++ff) {
          S v = src[tt * of + ff] * inv;
          for (int dt = 0; dt < kt; ++dt)
            for (int df = 0; df < kf; ++df)
              dst[(tt * kt + dt) * f_dim + ff * kf + df] += v;
        }
    }
  });
}

template <typename S>
Var upsample_nearest2d(Tape<S>& t, Var x, int rt, int rf) {
  const Tensor<S>& vx = t.value(x);
  SCMT_REQUIRE(vx.rank() == 4, "upsample: expected [B x C x T x F]");
  const int64_t b_dim = vx.dim(0), c_dim = vx.dim(1), t_dim = vx.dim(2), f_dim = vx.dim(3);
  const int64_t ot = t_dim * rt, of = f_dim * rf;
  Tensor<S> out({b_dim, c_dim, ot, of});
  for (int64_t bc = 0; bc < b_dim * c_dim; ++bc) {
    const S* src = vx.data() + bc * t_dim * f_dim;
    S* dst = out.data() + bc * ot * of;
    for (int64_t tt = 0; tt < ot; ++tt)
      for (int64_t ff = 0; ff < of; ++ff)
        dst[tt * of + ff] = src[(tt / rt) * f_dim + ff / rf];
  }
  Var o = t.next();
  return t.emit(std::move(out), t.needs_grad(x), [&t, x, o, rt, rf]() {
    if (!t.needs_grad(x)) return;
    const Tensor<S>& g = t.grad(o);
    Tensor<S>& gx = t.grad(x);
    const int64_t b_dim = gx.dim(0), c_dim = gx.dim(1), t_dim = gx.dim(2),
                  f_dim = gx.dim(3);
    const int64_t ot = t_dim * rt, of = f_dim * rf;
    for (int64_t bc = 0; bc < b_dim * c_dim; ++bc) {
      const S* src = g.data() + bc * ot * of;
      S* dst = gx.data() + bc * t_dim * f_dim;
      for (int64_t tt = 0; tt < ot; ++tt)
        for (int64_t ff = 0; ff < of; ++ff)
          dst[(tt / rt) * f_dim + ff / rf] += src[tt * of + ff];
    }
  });
}

// Batch normalization over (B, T, F) per channel. Running buffers live
// outside the tape; they are updated only when update_running is set (the
// student in train mode). Eval mode normalizes with the running statistics.
template <typename S>
struct BnBuffers {
  Tensor<S>* running_mean = nullptr;
  Tensor<S>* running_var = nullptr;
  double momentum = 0.1;
  double eps = 1e-5;
};

template <typename S>
Var batchnorm2d(Tape<S>& t, Var x, Var gamma, Var beta, const BnBuffers<S>& buf,
                bool train_mode, bool update_running) {
  const Tensor<S>& vx = t.value(x);
  SCMT_REQUIRE(vx.rank() == 4, "batchnorm: expected [B x C x T x F]");
  const int64_t b_dim = vx.dim(0), c_dim = vx.dim(1), plane = vx.dim(2) * vx.dim(3);
  const int64_t n_per_c = b_dim * plane;
  SCMT_REQUIRE(buf.running_mean && buf.running_var &&
                   buf.running_mean->numel() == c_dim &&
                   buf.running_var->numel() == c_dim,
               "batchnorm: running buffer size mismatch");

  std::vector<S> mean(static_cast<size_t>(c_dim)), var(static_cast<size_t>(c_dim));
  if (train_mode) {
    for (int64_t c = 0; c < c_dim; ++c) {
      double acc = 0.0, acc2 = 0.0;
      for (int64_t b = 0; b < b_dim; ++b) {
        const S* src = vx.data() + (b * c_dim + c) * plane;
        for (int64_t i = 0; i < plane; ++i) {
          acc += src[i];
          acc2 += static_cast<double>(src[i]) * src[i];
        }
      }
      double mu = acc / static_cast<double>(n_per_c);
      mean[static_cast<size_t>(c)] = static_cast<S>(mu);
      var[static_cast<size_t>(c)] =
          static_cast<S>(std::max(acc2 / static_cast<double>(n_per_c) - mu * mu, 0.0));
    }
    if (update_running) {
      for (int64_t c = 0; c < c_dim; ++c) {
        (*buf.running_mean)[c] = static_cast<S>((1.0 - buf.momentum) *
                                                 (*buf.running_mean)[c] +
                                                 buf.momentum * mean[static_cast<size_t>(c)]);
        (*buf.running_var)[c] = static_cast<S>((1.0 - buf.momentum) *
                                                (*buf.running_var)[c] +
                                                buf.momentum * var[static_cast<size_t>(c)]);
      }
    }
  } else {
    for (int64_t c = 0; c < c_dim; ++c) {
      mean[static_cast<size_t>(c)] = (*buf.running_mean)[c];
      var[static_cast<size_t>(c)] = (*buf.running_var)[c];
    }
  }

  const Tensor<S>& vg = t.value(gamma);
  const Tensor<S>& vb = t.value(beta);
  SCMT_REQUIRE(vg.numel() == c_dim && vb.numel() == c_dim, "batchnorm: affine size");
  Tensor<S> out(vx.shape());
  std::vector<S> inv_std(static_cast<size_t>(c_dim));
  for (int64_t c = 0; c < c_dim; ++c)
    inv_std[static_cast<size_t>(c)] =
        static_cast<S>(1.0 / std::sqrt(static_cast<double>(var[static_cast<size_t>(c)]) + buf.eps));
  for (int64_t b = 0; b < b_dim; ++b)
    for (int64_t c = 0; c < c_dim; ++c) {
      const S* src = vx.data() + (b * c_dim + c) * plane;
      S* dst = out.data() + (b * c_dim + c) * plane;
      const S mu = mean[static_cast<size_t>(c)];
      const S is = inv_std[static_cast<size_t>(c)];
      const S gm = vg[c], bt = vb[c];
      for (int64_t i = 0; i < plane; ++i) dst[i] = (src[i] - mu) * is * gm + bt;
    }

  bool ng = t.needs_grad(x) || t.needs_grad(gamma) || t.needs_grad(beta);
  Var o = t.next();
  return t.emit(
      std::move(out), ng,
      [&t, x, gamma, beta, o, mean = std::move(mean), inv_std = std::move(inv_std),
       train_mode, b_dim, c_dim, plane, n_per_c]() {
        const Tensor<S>& g = t.grad(o);
        const Tensor<S>& vx = t.value(x);
        const Tensor<S>& vg = t.value(gamma);
        // Per-channel reductions of dY and dY*xhat.
        std::vector<double> sum_dy(static_cast<size_t>(c_dim), 0.0);
        std::vector<double> sum_dy_xhat(static_cast<size_t>(c_dim), 0.0);
        for (int64_t b = 0; b < b_dim; ++b)
          for (int64_t c = 0; c < c_dim; ++c) {
            const S* gy = g.data() + (b * c_dim + c) * plane;
            const S* src = vx.data() + (b * c_dim + c) * plane;
            const S mu = mean[static_cast<size_t>(c)];
            const S is = inv_std[static_cast<size_t>(c)];
            double a = 0.0, b2 = 0.0;
            for (int64_t i = 0; i < plane; ++i) {
              a += gy[i];
              b2 += static_cast<double>(gy[i]) * ((src[i] - mu) * is);
            }
            sum_dy[static_cast<size_t>(c)] += a;
            sum_dy_xhat[static_cast<size_t>(c)] += b2;
          }
        if (t.needs_grad(beta)) {
          Tensor<S>& gb = t.grad(beta);
          for (int64_t c = 0; c < c_dim; ++c)
            gb[c] += static_cast<S>(sum_dy[static_cast<size_t>(c)]);
        }
        if (t.needs_grad(gamma)) {
          Tensor<S>& gg = t.grad(gamma);
          for (int64_t c = 0; c < c_dim; ++c)
            gg[c] += static_cast<S>(sum_dy_xhat[static_cast<size_t>(c)]);
        }
        if (t.needs_grad(x)) {
          Tensor<S>& gx = t.grad(x);
          const double inv_n = 1.0 / static_cast<double>(n_per_c);
          for (int64_t b = 0; b < b_dim; ++b)
            for (int64_t c = 0; c < c_dim; ++c) {
              const S* gy = g.data() + (b * c_dim + c) * plane;
              const S* src = vx.data() + (b * c_dim + c) * plane;
              S* dst = gx.data() + (b * c_dim + c) * plane;
              const S mu = mean[static_cast<size_t>(c)];
              const S is = inv_std[static_cast<size_t>(c)];
              const S gm = vg[c];
              if (train_mode) {
                const S m_dy = static_cast<S>(sum_dy[static_cast<size_t>(c)] * inv_n);
                const S m_dyx =
                    static_cast<S>(sum_dy_xhat[static_cast<size_t>(c)] * inv_n);
                for (int64_t i = 0; i < plane; ++i) {
                  S xhat = (src[i] - mu) * is;
                  dst[i] += gm * is * (gy[i] - m_dy - xhat * m_dyx);
                }
              } else {
                for (int64_t i = 0; i < plane; ++i) dst[i] += gm * is * gy[i];
              }
            }
        }
      });
}

// ---------- attention / reductions ----------

// Softmax over the time axis of [B x T x C], independently per (b, c).
template <typename S>
Var softmax_time(Tape<S>& t, Var x) {
  const Tensor<S>& vx = t.value(x);
  SCMT_REQUIRE(vx.rank() == 3, "softmax_time: expected [B x T x C]");
  const int64_t b_dim = vx.dim(0), t_dim = vx.dim(1), c_dim = vx.dim(2);
  Tensor<S> out(vx.shape());
  for (int64_t b = 0; b < b_dim; ++b)
    for (int64_t c = 0; c < c_dim; ++c) {
      S max_v = vx[b * t_dim * c_dim + c];
      for (int64_t tt = 1; tt < t_dim; ++tt)
        max_v = std::max(max_v, vx[(b * t_dim + tt) * c_dim + c]);
      double denom = 0.0;
      for (int64_t tt = 0; tt < t_dim; ++tt) {
        S e = std::exp(vx[(b * t_dim + tt) * c_dim + c] - max_v);
        out[(b * t_dim + tt) * c_dim + c] = e;
        denom += e;
      }
      const S inv = static_cast<S>(1.0 / denom);
      for (int64_t tt = 0; tt < t_dim; ++tt) out[(b * t_dim + tt) * c_dim + c] *= inv;
    }
  Var o = t.next();
  return t.emit(std::move(out), t.needs_grad(x), [&t, x, o]() {
    if (!t.needs_grad(x)) return;
    const Tensor<S>& g = t.grad(o);
    const Tensor<S>& y = t.value(o);
    Tensor<S>& gx = t.grad(x);
    const int64_t b_dim = y.dim(0), t_dim = y.dim(1), c_dim = y.dim(2);
    for (int64_t b = 0; b < b_dim; ++b)
      for (int64_t c = 0; c < c_dim; ++c) {
        double dot = 0.0;
        for (int64_t tt = 0; tt < t_dim; ++tt) {
          int64_t i = (b * t_dim + tt) * c_dim + c;
          dot += static_cast<double>(g[i]) * y[i];
        }
        for (int64_t tt = 0; tt < t_dim; ++tt) {
          int64_t i = (b * t_dim + tt) * c_dim + c;
          gx[i] += y[i] * (g[i] - static_cast<S>(dot));
        }
      }
  });
}

// Sum over the time axis: [B x T x C] -> [B x C].
template <typename S>
Var sum_time(Tape<S>& t, Var x) {
  const Tensor<S>& vx = t.value(x);
  SCMT_REQUIRE(vx.rank() == 3, "sum_time: expected [B x T x C]");
  const int64_t b_dim = vx.dim(0), t_dim = vx.dim(1), c_dim = vx.dim(2);
  Tensor<S> out({b_dim, c_dim});
  for (int64_t b = 0; b < b_dim; ++b)
    for (int64_t tt = 0; tt < t_dim; ++tt)
      for (int64_t c = 0; c < c_dim; ++c)
        out[b * c_dim + c] += vx[(b * t_dim + tt) * c_dim + c];
  Var o = t.next();
  return t.emit(std::move(out), t.needs_grad(x), [&t, x, o]() {
    if (!t.needs_grad(x)) return;
    const Tensor<S>& g = t.grad(o);
    Tensor<S>& gx = t.grad(x);
    const int64_t b_dim = gx.dim(0), t_dim = gx.dim(1), c_dim = gx.dim(2);
    for (int64_t b = 0; b < b_dim; ++b)
      for (int64_t tt = 0; tt < t_dim; ++tt)
        for (int64_t c = 0; c < c_dim; ++c)
          gx[(b * t_dim + tt) * c_dim + c] += g[b * c_dim + c];
  });
}

// ---------- gradient reversal ----------

// Identity forward; backward multiplies the upstream gradient by -lambda.
template <typename S>
Var grl(Tape<S>& t, Var x, double lambda) {
  SCMT_REQUIRE(lambda >= 0.0, "grl: lambda must be non-negative");
  Tensor<S> out = t.value(x);
  Var o = t.next();
  return t.emit(std::move(out), t.needs_grad(x), [&t, x, o, lambda]() {
    if (!t.needs_grad(x)) return;
    const Tensor<S>& g = t.grad(o);
    Tensor<S>& gx = t.grad(x);
    const S f = static_cast<S>(-lambda);
    for (int64_t i = 0; i < g.numel(); ++i) gx[i] += f * g[i];
  });
}

// ---------- losses ----------

// Mean binary cross entropy of probabilities against fixed 0/1 (or soft)
// targets, with the probability clamped away from {0, 1}. Probabilities
// outside [0, 1] are a contract violation and fail fast.
template <typename S>
Var bce_mean(Tape<S>& t, Var probs, const Tensor<S>& targets, double clamp = 1e-7) {
  const Tensor<S>& p = t.value(probs);
  SCMT_REQUIRE(p.same_shape(targets), "bce: target shape mismatch");
  SCMT_REQUIRE(p.numel() > 0, "bce: empty input");
  const S lo = static_cast<S>(clamp), hi = static_cast<S>(1.0 - clamp);
  double acc = 0.0;
  for (int64_t i = 0; i < p.numel(); ++i) {
    SCMT_REQUIRE(p[i] >= S(0) && p[i] <= S(1), "bce: probability outside [0,1]");
    S ph = std::min(std::max(p[i], lo), hi);
    acc -= targets[i] * std::log(static_cast<double>(ph)) +
           (1.0 - targets[i]) * std::log(1.0 - static_cast<double>(ph));
  }
  Tensor<S> out({1});
  const int64_t n = p.numel();
  out[0] = static_cast<S>(acc / static_cast<double>(n));
  Var o = t.next();
  return t.emit(std::move(out), t.needs_grad(probs),
                [&t, probs, o, targets, lo, hi, n]() {
                  if (!t.needs_grad(probs)) return;
                  const S gy = t.grad(o)[0];
                  const Tensor<S>& p = t.value(probs);
                  Tensor<S>& gp = t.grad(probs);
                  const S inv_n = S(1) / static_cast<S>(n);
                  for (int64_t i = 0; i < p.numel(); ++i) {
                    if (p[i] < lo || p[i] > hi) continue;  // clamped: flat
                    S ph = p[i];
                    gp[i] += gy * inv_n * (ph - targets[i]) / (ph * (S(1) - ph));
                  }
                });
}

// Mean squared error against a fixed target.
template <typename S>
Var mse_mean(Tape<S>& t, Var a, const Tensor<S>& target) {
  const Tensor<S>& va = t.value(a);
  SCMT_REQUIRE(va.same_shape(target), "mse: target shape mismatch");
  SCMT_REQUIRE(va.numel() > 0, "mse: empty input");
  double acc = 0.0;
  for (int64_t i = 0; i < va.numel(); ++i) {
    double d = static_cast<double>(va[i]) - target[i];
    acc += d * d;
  }
  Tensor<S> out({1});
  const int64_t n = va.numel();
  out[0] = static_cast<S>(acc / static_cast<double>(n));
  Var o = t.next();
  return t.emit(std::move(out), t.needs_grad(a), [&t, a, o, target, n]() {
    if (!t.needs_grad(a)) return;
    const S gy = t.grad(o)[0];
    const Tensor<S>& va = t.value(a);
    Tensor<S>& ga = t.grad(a);
    const S two_over_n = S(2) / static_cast<S>(n);
    for (int64_t i = 0; i < va.numel(); ++i)
      ga[i] += gy * two_over_n * (va[i] - target[i]);
  });
}

// total = sum_i weight_i * scalar_i.
template <typename S>
Var weighted_sum(Tape<S>& t, const std::vector<std::pair<double, Var>>& terms) {
  SCMT_REQUIRE(!terms.empty(), "weighted_sum: no terms");
  double acc = 0.0;
  bool ng = false;
  for (const auto& [w, v] : terms) {
    SCMT_REQUIRE(t.value(v).numel() == 1, "weighted_sum: terms must be scalars");
    acc += w * static_cast<double>(t.value(v)[0]);
    ng = ng || t.needs_grad(v);
  }
  Tensor<S> out({1});
  out[0] = static_cast<S>(acc);
  Var o = t.next();
  return t.emit(std::move(out), ng, [&t, terms, o]() {
    const S gy = t.grad(o)[0];
    for (const auto& [w, v] : terms)
      if (t.needs_grad(v)) t.grad(v)[0] += static_cast<S>(w) * gy;
  });
}

// Clip-level pooling: per class c, sum_t softmax_t(att[:, c]) * frame[t, c].
// Output stays inside [min_t frame, max_t frame] per class by convexity.
template <typename S>
Var attention_pool(Tape<S>& t, Var frame_probs, Var att_logits) {
  const Tensor<S>& fp = t.value(frame_probs);
  const Tensor<S>& al = t.value(att_logits);
  SCMT_REQUIRE(fp.rank() == 3 && fp.same_shape(al),
               "attention_pool: expected matching [B x T x C]");
  Var sm = softmax_time(t, att_logits);
  Var weighted = mul(t, sm, frame_probs);
  return sum_time(t, weighted);
}

}  // namespace ad

}  // namespace scmt

#endif  // SCMT_AUTODIFF_HPP_
