#include "mstream/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace mstream {

using detail::Node;

namespace {

bool tracking(std::initializer_list<const Tensor*> inputs) {
  if (!grad_enabled()) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

template <class Fn>
void link(Tensor& out, const char* op, std::initializer_list<const Tensor*> inputs, Fn&& fn) {
  auto node = out.node();
  node->op = op;
  node->requires_grad = true;
  for (const Tensor* t : inputs) node->parents.push_back(t->node());
  node->backward = std::forward<Fn>(fn);
}

void require_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
  if (a.dtype() != b.dtype()) {
    throw ContractError(std::string(op) + ": dtype mismatch (" + to_string(a.dtype()) + " vs " + to_string(b.dtype()) + ")");
  }
}

std::vector<std::size_t> contiguous_strides(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

std::size_t normalize_axis(int axis, std::size_t rank, const char* op) {
  const int r = static_cast<int>(rank);
  if (axis < -r || axis >= r) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for rank " + std::to_string(rank));
  }
  return static_cast<std::size_t>(axis < 0 ? axis + r : axis);
}

// Visits every index of shape in row-major order; fn(flat, offset_a, offset_b).
template <class Fn>
void walk2(const Shape& shape, const std::vector<std::size_t>& sa, const std::vector<std::size_t>& sb, Fn&& fn) {
  const std::size_t nd = shape.size();
  if (nd == 0) {
    fn(std::size_t{0}, std::size_t{0}, std::size_t{0});
    return;
  }
  const std::size_t inner = shape[nd - 1];
  const std::size_t ia = sa[nd - 1], ib = sb[nd - 1];
  const std::size_t outer = shape_numel(shape) / inner;
  std::vector<std::size_t> idx(nd, 0);
  std::size_t off_a = 0, off_b = 0, flat = 0;
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < inner; ++j) fn(flat++, off_a + j * ia, off_b + j * ib);
    for (std::size_t d = nd - 1; d-- > 0;) {
      ++idx[d];
      off_a += sa[d];
      off_b += sb[d];
      if (idx[d] < shape[d]) break;
      off_a -= sa[d] * shape[d];
      off_b -= sb[d] * shape[d];
      idx[d] = 0;
    }
  }
}

struct Broadcast {
  Shape out;
  std::vector<std::size_t> stride_a, stride_b;
  bool same = false;
};

Broadcast plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  Broadcast plan;
  if (a == b) {
    plan.out = a;
    plan.same = true;
    return plan;
  }
  const std::size_t nd = std::max(a.size(), b.size());
  plan.out.assign(nd, 1);
  plan.stride_a.assign(nd, 0);
  plan.stride_b.assign(nd, 0);
  auto sa = contiguous_strides(a), sb = contiguous_strides(b);
  for (std::size_t i = 0; i < nd; ++i) {
    const std::size_t da = i + a.size() >= nd ? a[i + a.size() - nd] : 1;
    const std::size_t db = i + b.size() >= nd ? b[i + b.size() - nd] : 1;
    if (da != db && da != 1 && db != 1) {
      throw DimensionError(std::string(op) + ": cannot broadcast " + shape_to_string(a) + " with " + shape_to_string(b));
    }
    plan.out[i] = std::max(da, db);
    if (da != 1) plan.stride_a[i] = sa[i + a.size() - nd];
    if (db != 1) plan.stride_b[i] = sb[i + b.size() - nd];
  }
  return plan;
}

enum class BinOp { add, sub, mul };

Tensor binary(const Tensor& a, const Tensor& b, BinOp kind, const char* name) {
  require_same_dtype(a, b, name);
  Broadcast plan = plan_broadcast(a.shape(), b.shape(), name);
  Tensor out = Tensor::zeros(plan.out, a.dtype());
  visit_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto x = a.data<T>();
    auto y = b.data<T>();
    auto o = out.mutable_data<T>();
    auto apply = [kind](T u, T v) { return kind == BinOp::add ? u + v : kind == BinOp::sub ? u - v : u * v; };
    if (plan.same) {
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = apply(x[i], y[i]);
    } else {
      walk2(plan.out, plan.stride_a, plan.stride_b,
            [&](std::size_t f, std::size_t ia, std::size_t ib) { o[f] = apply(x[ia], y[ib]); });
    }
  });
  if (!tracking({&a, &b})) return out;
  link(out, name, {&a, &b}, [a, b, plan, kind](Node& self) {
    visit_dtype(self.data.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const auto& go = self.grad.vec<T>();
      auto na = a.node();
      auto nb = b.node();
      const auto& x = na->data.vec<T>();
      const auto& y = nb->data.vec<T>();
      const bool ga_on = na->requires_grad, gb_on = nb->requires_grad;
      T* ga = ga_on ? na->grad_vec<T>().data() : nullptr;
      T* gb = gb_on ? nb->grad_vec<T>().data() : nullptr;
      auto step = [&](std::size_t f, std::size_t ia, std::size_t ib) {
        const T g = go[f];
        if (kind == BinOp::mul) {
          if (ga) ga[ia] += g * y[ib];
          if (gb) gb[ib] += g * x[ia];
        } else {
          if (ga) ga[ia] += g;
          if (gb) gb[ib] += kind == BinOp::add ? g : -g;
        }
      };
      if (plan.same) {
        for (std::size_t i = 0; i < go.size(); ++i) step(i, i, i);
      } else {
        walk2(plan.out, plan.stride_a, plan.stride_b, step);
      }
    });
  });
  return out;
}

// Unary elementwise op: value(x) and derivative(x, y) evaluated in double.
template <class Value, class Deriv>
Tensor unary(const Tensor& x, const char* name, Value value, Deriv deriv) {
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  visit_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto in = x.data<T>();
    auto o = out.mutable_data<T>();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = static_cast<T>(value(static_cast<double>(in[i])));
  });
  if (!tracking({&x})) return out;
  link(out, name, {&x}, [x, deriv](Node& self) {
    visit_dtype(self.data.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const auto& go = self.grad.vec<T>();
      const auto& y = self.data.vec<T>();
      auto nx = x.node();
      const auto& in = nx->data.vec<T>();
      auto& gx = nx->grad_vec<T>();
      for (std::size_t i = 0; i < go.size(); ++i) {
        gx[i] += static_cast<T>(static_cast<double>(go[i]) * deriv(static_cast<double>(in[i]), static_cast<double>(y[i])));
      }
    });
  });
  return out;
}

double stable_sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

// ---- dense kernels ---------------------------------------------------------

// C (M x N) += A (M x K) * B (K x N)
template <class T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  for (std::size_t i = 0; i < M; ++i) {
    T* c = C + i * N;
    const T* a = A + i * K;
    for (std::size_t k = 0; k < K; ++k) {
      const T s = a[k];
      const T* b = B + k * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += s * b[j];
    }
  }
}

// C (M x N) += A^T * B with A stored K x M.
template <class T>
void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  for (std::size_t k = 0; k < K; ++k) {
    const T* a = A + k * M;
    const T* b = B + k * N;
    for (std::size_t i = 0; i < M; ++i) {
      const T s = a[i];
      T* c = C + i * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += s * b[j];
    }
  }
}

// C (M x N) += A * B^T with B stored N x K.
template <class T>
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C, std::vector<T>& scratch) {
  scratch.resize(K * N);
  for (std::size_t j = 0; j < N; ++j) {
    for (std::size_t k = 0; k < K; ++k) scratch[k * N + j] = B[j * K + k];
  }
  gemm_nn(M, N, K, A, scratch.data(), C);
}

}  // namespace

// ---- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::mul, "mul"); }

Tensor add_scalar(const Tensor& x, double c) {
  return unary(x, "add_scalar", [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& x, double c) {
  return unary(x, "mul_scalar", [c](double v) { return v * c; }, [c](double, double) { return c; });
}

Tensor neg(const Tensor& x) { return mul_scalar(x, -1.0); }

Tensor silu(const Tensor& x) {
  return unary(
      x, "silu", [](double v) { return v * stable_sigmoid(v); },
      [](double v, double) {
        const double s = stable_sigmoid(v);
        return s * (1.0 + v * (1.0 - s));
      });
}

Tensor sigmoid(const Tensor& x) {
  return unary(x, "sigmoid", stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor log(const Tensor& x) {
  return unary(x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  if (lo > hi) throw ContractError("clamp: lo > hi");
  return unary(
      x, "clamp", [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

// ---- matmul ----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_same_dtype(a, b, "matmul");
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  auto mismatch = [&] {
    return DimensionError("matmul: incompatible shapes " + shape_to_string(sa) + " and " + shape_to_string(sb));
  };
  std::size_t batch = 1, m = 0, k = 0, n = 0;
  bool shared_rhs = true;
  Shape out_shape;
  if (sa.size() == 2 && sb.size() == 2) {
    m = sa[0], k = sa[1], n = sb[1];
    if (sb[0] != k) throw mismatch();
    out_shape = {m, n};
  } else if (sa.size() == 3 && sb.size() == 2) {
    // Flatten the batch into rows.
    m = sa[0] * sa[1], k = sa[2], n = sb[1];
    if (sb[0] != k) throw mismatch();
    out_shape = {sa[0], sa[1], n};
  } else if (sa.size() == 3 && sb.size() == 3) {
    batch = sa[0], m = sa[1], k = sa[2], n = sb[2];
    if (sb[0] != batch || sb[1] != k) throw mismatch();
    shared_rhs = false;
    out_shape = {batch, m, n};
  } else {
    throw mismatch();
  }
  Tensor out = Tensor::zeros(out_shape, a.dtype());
  visit_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* A = a.data<T>().data();
    const T* B = b.data<T>().data();
    T* C = out.mutable_data<T>().data();
    for (std::size_t i = 0; i < batch; ++i) {
      gemm_nn(m, n, k, A + i * m * k, shared_rhs ? B : B + i * k * n, C + i * m * n);
    }
  });
  if (!tracking({&a, &b})) return out;
  link(out, "matmul", {&a, &b}, [a, b, batch, m, k, n, shared_rhs](Node& self) {
    visit_dtype(self.data.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const T* G = self.grad.vec<T>().data();
      auto na = a.node();
      auto nb = b.node();
      const T* A = na->data.vec<T>().data();
      const T* B = nb->data.vec<T>().data();
      std::vector<T> scratch;
      for (std::size_t i = 0; i < batch; ++i) {
        const T* Bi = shared_rhs ? B : B + i * k * n;
        if (na->requires_grad) gemm_nt(m, k, n, G + i * m * n, Bi, na->grad_vec<T>().data() + i * m * k, scratch);
        if (nb->requires_grad) {
          T* GB = nb->grad_vec<T>().data() + (shared_rhs ? 0 : i * k * n);
          gemm_tn(k, n, m, A + i * m * k, G + i * m * n, GB);
        }
      }
    });
  });
  return out;
}

Tensor transpose(const Tensor& x) {
  if (x.dim() < 2) throw DimensionError("transpose needs rank >= 2, got " + shape_to_string(x.shape()));
  std::vector<std::size_t> order(x.dim());
  std::iota(order.begin(), order.end(), 0);
  std::swap(order[x.dim() - 1], order[x.dim() - 2]);
  return permute(x, order);
}

// ---- conv2d ----------------------------------------------------------------

namespace {

struct ConvGeometry {
  std::size_t N, C, H, W, O, Cg, Og, kh, kw, stride, pad, groups, Ho, Wo;
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0 && groups == 1; }
  bool depthwise() const { return groups == C && Cg == 1 && O == C; }
};

// First/last output column whose input column ox*stride - pad + k lies in [0, W).
inline void valid_range(std::size_t k, std::size_t pad, std::size_t stride, std::size_t in, std::size_t out,
                        std::size_t& lo, std::size_t& hi) {
  const long kk = static_cast<long>(k), p = static_cast<long>(pad), s = static_cast<long>(stride);
  long first = p - kk <= 0 ? 0 : (p - kk + s - 1) / s;
  long last = (static_cast<long>(in) - 1 + p - kk);
  last = last < 0 ? -1 : last / s;
  last = std::min(last, static_cast<long>(out) - 1);
  lo = static_cast<std::size_t>(std::max(first, 0L));
  hi = last < first ? lo : static_cast<std::size_t>(last + 1);  // exclusive
}

template <class T>
void im2col(const ConvGeometry& g, const T* x, T* col) {
  // x: Cg x H x W (one group of one image); col: (Cg*kh*kw) x (Ho*Wo)
  const std::size_t plane = g.Ho * g.Wo;
  std::fill(col, col + g.Cg * g.kh * g.kw * plane, T(0));
  for (std::size_t c = 0; c < g.Cg; ++c) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      std::size_t ylo, yhi;
      valid_range(ky, g.pad, g.stride, g.H, g.Ho, ylo, yhi);
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        std::size_t xlo, xhi;
        valid_range(kx, g.pad, g.stride, g.W, g.Wo, xlo, xhi);
        T* row = col + ((c * g.kh + ky) * g.kw + kx) * plane;
        for (std::size_t oy = ylo; oy < yhi; ++oy) {
          const T* src = x + (c * g.H + oy * g.stride + ky - g.pad) * g.W;
          for (std::size_t ox = xlo; ox < xhi; ++ox) row[oy * g.Wo + ox] = src[ox * g.stride + kx - g.pad];
        }
      }
    }
  }
}

template <class T>
void col2im_add(const ConvGeometry& g, const T* col, T* x) {
  const std::size_t plane = g.Ho * g.Wo;
  for (std::size_t c = 0; c < g.Cg; ++c) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      std::size_t ylo, yhi;
      valid_range(ky, g.pad, g.stride, g.H, g.Ho, ylo, yhi);
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        std::size_t xlo, xhi;
        valid_range(kx, g.pad, g.stride, g.W, g.Wo, xlo, xhi);
        const T* row = col + ((c * g.kh + ky) * g.kw + kx) * plane;
        for (std::size_t oy = ylo; oy < yhi; ++oy) {
          T* dst = x + (c * g.H + oy * g.stride + ky - g.pad) * g.W;
          for (std::size_t ox = xlo; ox < xhi; ++ox) dst[ox * g.stride + kx - g.pad] += row[oy * g.Wo + ox];
        }
      }
    }
  }
}

template <class T>
void conv_forward(const ConvGeometry& g, const T* x, const T* w, T* y) {
  const std::size_t in_plane = g.H * g.W, out_plane = g.Ho * g.Wo;
  if (g.pointwise()) {
    for (std::size_t n = 0; n < g.N; ++n) gemm_nn(g.O, out_plane, g.C, w, x + n * g.C * in_plane, y + n * g.O * out_plane);
    return;
  }
  if (g.depthwise()) {
    for (std::size_t n = 0; n < g.N; ++n) {
      for (std::size_t c = 0; c < g.C; ++c) {
        const T* src = x + (n * g.C + c) * in_plane;
        const T* k = w + c * g.kh * g.kw;
        T* dst = y + (n * g.C + c) * out_plane;
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          std::size_t ylo, yhi;
          valid_range(ky, g.pad, g.stride, g.H, g.Ho, ylo, yhi);
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            std::size_t xlo, xhi;
            valid_range(kx, g.pad, g.stride, g.W, g.Wo, xlo, xhi);
            const T s = k[ky * g.kw + kx];
            for (std::size_t oy = ylo; oy < yhi; ++oy) {
              // Unsigned wraparound in base is undone by the non-negative full index.
              const std::size_t base = (oy * g.stride + ky - g.pad) * g.W + kx - g.pad;
              T* out = dst + oy * g.Wo;
              for (std::size_t ox = xlo; ox < xhi; ++ox) out[ox] += s * src[base + ox * g.stride];
            }
          }
        }
      }
    }
    return;
  }
  const std::size_t ckk = g.Cg * g.kh * g.kw;
  std::vector<T> col(ckk * out_plane);
  for (std::size_t n = 0; n < g.N; ++n) {
    for (std::size_t gi = 0; gi < g.groups; ++gi) {
      im2col(g, x + (n * g.C + gi * g.Cg) * in_plane, col.data());
      gemm_nn(g.Og, out_plane, ckk, w + gi * g.Og * ckk, col.data(), y + (n * g.O + gi * g.Og) * out_plane);
    }
  }
}

template <class T>
void conv_backward(const ConvGeometry& g, const T* x, const T* w, const T* gy, T* gx, T* gw) {
  const std::size_t in_plane = g.H * g.W, out_plane = g.Ho * g.Wo;
  std::vector<T> scratch;
  if (g.pointwise()) {
    for (std::size_t n = 0; n < g.N; ++n) {
      const T* dy = gy + n * g.O * out_plane;
      if (gx) gemm_tn(g.C, out_plane, g.O, w, dy, gx + n * g.C * in_plane);
      if (gw) gemm_nt(g.O, g.C, out_plane, dy, x + n * g.C * in_plane, gw, scratch);
    }
    return;
  }
  if (g.depthwise()) {
    for (std::size_t n = 0; n < g.N; ++n) {
      for (std::size_t c = 0; c < g.C; ++c) {
        const T* src = x + (n * g.C + c) * in_plane;
        const T* k = w + c * g.kh * g.kw;
        const T* dy = gy + (n * g.C + c) * out_plane;
        T* dsrc = gx ? gx + (n * g.C + c) * in_plane : nullptr;
        T* dk = gw ? gw + c * g.kh * g.kw : nullptr;
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          std::size_t ylo, yhi;
          valid_range(ky, g.pad, g.stride, g.H, g.Ho, ylo, yhi);
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            std::size_t xlo, xhi;
            valid_range(kx, g.pad, g.stride, g.W, g.Wo, xlo, xhi);
            const T s = k[ky * g.kw + kx];
            T acc = 0;
            for (std::size_t oy = ylo; oy < yhi; ++oy) {
              const std::size_t base = (oy * g.stride + ky - g.pad) * g.W + kx - g.pad;
              const T* drow = dy + oy * g.Wo;
              if (dsrc) {
                for (std::size_t ox = xlo; ox < xhi; ++ox) dsrc[base + ox * g.stride] += s * drow[ox];
              }
              if (dk) {
                for (std::size_t ox = xlo; ox < xhi; ++ox) acc += drow[ox] * src[base + ox * g.stride];
              }
            }
            if (dk) dk[ky * g.kw + kx] += acc;
          }
        }
      }
    }
    return;
  }
  const std::size_t ckk = g.Cg * g.kh * g.kw;
  std::vector<T> col(ckk * out_plane), dcol(ckk * out_plane);
  for (std::size_t n = 0; n < g.N; ++n) {
    for (std::size_t gi = 0; gi < g.groups; ++gi) {
      const T* dy = gy + (n * g.O + gi * g.Og) * out_plane;
      const T* wg = w + gi * g.Og * ckk;
      if (gw) {
        im2col(g, x + (n * g.C + gi * g.Cg) * in_plane, col.data());
        gemm_nt(g.Og, ckk, out_plane, dy, col.data(), gw + gi * g.Og * ckk, scratch);
      }
      if (gx) {
        std::fill(dcol.begin(), dcol.end(), T(0));
        gemm_tn(ckk, out_plane, g.Og, wg, dy, dcol.data());
        col2im_add(g, dcol.data(), gx + (n * g.C + gi * g.Cg) * in_plane);
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, Conv2dOptions opt) {
  require_same_dtype(input, kernel, "conv2d");
  const auto& si = input.shape();
  const auto& sk = kernel.shape();
  auto fail = [&](const std::string& why) {
    return DimensionError("conv2d: " + why + " (input " + shape_to_string(si) + ", kernel " + shape_to_string(sk) + ")");
  };
  if (si.size() != 4 || sk.size() != 4) throw fail("expected 4-D input and kernel");
  if (opt.stride == 0 || opt.groups == 0) throw fail("stride and groups must be positive");
  ConvGeometry g{};
  g.N = si[0], g.C = si[1], g.H = si[2], g.W = si[3];
  g.O = sk[0], g.Cg = sk[1], g.kh = sk[2], g.kw = sk[3];
  g.stride = opt.stride, g.pad = opt.padding, g.groups = opt.groups;
  if (g.C % g.groups != 0 || g.O % g.groups != 0) throw fail("channels not divisible by groups");
  if (g.Cg != g.C / g.groups) throw fail("kernel input channels must equal C/groups");
  if (g.H + 2 * g.pad < g.kh || g.W + 2 * g.pad < g.kw) throw fail("kernel larger than padded input");
  g.Og = g.O / g.groups;
  g.Ho = (g.H + 2 * g.pad - g.kh) / g.stride + 1;
  g.Wo = (g.W + 2 * g.pad - g.kw) / g.stride + 1;
  Tensor out = Tensor::zeros({g.N, g.O, g.Ho, g.Wo}, input.dtype());
  visit_dtype(input.dtype(), [&](auto tag) {
    using T = decltype(tag);
    conv_forward<T>(g, input.data<T>().data(), kernel.data<T>().data(), out.mutable_data<T>().data());
  });
  if (!tracking({&input, &kernel})) return out;
  link(out, "conv2d", {&input, &kernel}, [input, kernel, g](Node& self) {
    visit_dtype(self.data.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto ni = input.node();
      auto nk = kernel.node();
      T* gx = ni->requires_grad ? ni->grad_vec<T>().data() : nullptr;
      T* gw = nk->requires_grad ? nk->grad_vec<T>().data() : nullptr;
      conv_backward<T>(g, ni->data.vec<T>().data(), nk->data.vec<T>().data(), self.grad.vec<T>().data(), gx, gw);
    });
  });
  return out;
}

// ---- batch norm ------------------------------------------------------------

BatchNormState BatchNormState::fresh(std::size_t channels, DType dtype) {
  return {Tensor::zeros({channels}, dtype), Tensor::full({channels}, 1.0, dtype)};
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state, Mode mode) {
  const auto& s = x.shape();
  if (s.size() != 4 && s.size() != 2) throw DimensionError("batch_norm expects N x C x H x W or N x C, got " + shape_to_string(s));
  const std::size_t N = s[0], C = s[1];
  const std::size_t spatial = s.size() == 4 ? s[2] * s[3] : 1;
  const std::size_t count = N * spatial;
  if (gamma.numel() != C || beta.numel() != C) throw DimensionError("batch_norm: gamma/beta must have C entries");
  require_same_dtype(x, gamma, "batch_norm");
  require_same_dtype(x, beta, "batch_norm");
  const bool use_batch = mode == Mode::train && count > 1;
  if (!use_batch) {
    if (!state.initialized()) throw StateError("batch_norm: running statistics are not initialized");
  }
  if (state.initialized() && (state.running_mean.numel() != C || state.running_var.numel() != C)) {
    throw DimensionError("batch_norm: running statistics have the wrong channel count");
  }

  Tensor out = Tensor::zeros(s, x.dtype());
  // Normalized input and per-channel inverse std, kept for the backward pass.
  auto xhat = std::make_shared<std::vector<double>>();
  auto invstd = std::make_shared<std::vector<double>>(C);
  visit_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto in = x.data<T>();
    auto g = gamma.data<T>();
    auto b = beta.data<T>();
    auto o = out.mutable_data<T>();
    xhat->resize(in.size());
    for (std::size_t c = 0; c < C; ++c) {
      double mu, var;
      if (use_batch) {
        double acc = 0;
        for (std::size_t n = 0; n < N; ++n) {
          const T* p = in.data() + (n * C + c) * spatial;
          for (std::size_t i = 0; i < spatial; ++i) acc += p[i];
        }
        mu = acc / static_cast<double>(count);
        double sq = 0;
        for (std::size_t n = 0; n < N; ++n) {
          const T* p = in.data() + (n * C + c) * spatial;
          for (std::size_t i = 0; i < spatial; ++i) {
            const double d = p[i] - mu;
            sq += d * d;
          }
        }
        var = sq / static_cast<double>(count);
        {
          NoGradGuard guard;
          auto rm = state.running_mean.mutable_data<T>();
          auto rv = state.running_var.mutable_data<T>();
          const double unbiased = var * static_cast<double>(count) / static_cast<double>(count - 1);
          rm[c] = static_cast<T>(kBatchNormMomentum * rm[c] + (1.0 - kBatchNormMomentum) * mu);
          rv[c] = static_cast<T>(kBatchNormMomentum * rv[c] + (1.0 - kBatchNormMomentum) * unbiased);
        }
      } else {
        mu = state.running_mean.data<T>()[c];
        var = state.running_var.data<T>()[c];
      }
      const double is = 1.0 / std::sqrt(var + kBatchNormEps);
      (*invstd)[c] = is;
      for (std::size_t n = 0; n < N; ++n) {
        const std::size_t base = (n * C + c) * spatial;
        for (std::size_t i = 0; i < spatial; ++i) {
          const double h = (in[base + i] - mu) * is;
          (*xhat)[base + i] = h;
          o[base + i] = static_cast<T>(g[c] * h + b[c]);
        }
      }
    }
  });
  if (!tracking({&x, &gamma, &beta})) return out;
  link(out, "batch_norm", {&x, &gamma, &beta}, [x, gamma, beta, xhat, invstd, N, C, spatial, count, use_batch](Node& self) {
    visit_dtype(self.data.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const auto& go = self.grad.vec<T>();
      auto nx = x.node();
      auto ng = gamma.node();
      auto nb = beta.node();
      const auto& g = ng->data.vec<T>();
      T* gx = nx->requires_grad ? nx->grad_vec<T>().data() : nullptr;
      T* gg = ng->requires_grad ? ng->grad_vec<T>().data() : nullptr;
      T* gb = nb->requires_grad ? nb->grad_vec<T>().data() : nullptr;
      const double m = static_cast<double>(count);
      for (std::size_t c = 0; c < C; ++c) {
        double sum_dy = 0, sum_dy_xhat = 0;
        for (std::size_t n = 0; n < N; ++n) {
          const std::size_t base = (n * C + c) * spatial;
          for (std::size_t i = 0; i < spatial; ++i) {
            sum_dy += go[base + i];
            sum_dy_xhat += go[base + i] * (*xhat)[base + i];
          }
        }
        if (gg) gg[c] += static_cast<T>(sum_dy_xhat);
        if (gb) gb[c] += static_cast<T>(sum_dy);
        if (!gx) continue;
        const double scale = g[c] * (*invstd)[c];
        for (std::size_t n = 0; n < N; ++n) {
          const std::size_t base = (n * C + c) * spatial;
          for (std::size_t i = 0; i < spatial; ++i) {
            double d;
            if (use_batch) d = scale / m * (m * go[base + i] - sum_dy - (*xhat)[base + i] * sum_dy_xhat);
            else d = scale * go[base + i];
            gx[base + i] += static_cast<T>(d);
          }
        }
      }
    });
  });
  return out;
}

// ---- softmax ---------------------------------------------------------------

Tensor softmax(const Tensor& x, int axis_in) {
  const std::size_t axis = normalize_axis(axis_in, x.dim(), "softmax");
  const auto& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  Tensor out = Tensor::zeros(s, x.dtype());
  visit_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto in = x.data<T>();
    auto o = out.mutable_data<T>();
    for (std::size_t a = 0; a < outer; ++a) {
      for (std::size_t b = 0; b < inner; ++b) {
        const std::size_t base = a * len * inner + b;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < len; ++k) mx = std::max(mx, static_cast<double>(in[base + k * inner]));
        double total = 0;
        for (std::size_t k = 0; k < len; ++k) total += std::exp(in[base + k * inner] - mx);
        for (std::size_t k = 0; k < len; ++k) o[base + k * inner] = static_cast<T>(std::exp(in[base + k * inner] - mx) / total);
      }
    }
  });
  if (!tracking({&x})) return out;
  link(out, "softmax", {&x}, [x, outer, inner, len](Node& self) {
    visit_dtype(self.data.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const auto& go = self.grad.vec<T>();
      const auto& y = self.data.vec<T>();
      auto& gx = x.node()->grad_vec<T>();
      for (std::size_t a = 0; a < outer; ++a) {
        for (std::size_t b = 0; b < inner; ++b) {
          const std::size_t base = a * len * inner + b;
          double dot = 0;
          for (std::size_t k = 0; k < len; ++k) dot += static_cast<double>(go[base + k * inner]) * y[base + k * inner];
          for (std::size_t k = 0; k < len; ++k) {
            const std::size_t i = base + k * inner;
            gx[i] += static_cast<T>(y[i] * (go[i] - dot));
          }
        }
      }
    });
  });
  return out;
}

// ---- reductions ------------------------------------------------------------

namespace {

Tensor reduce_all(const Tensor& x, double scale, const char* name) {
  Tensor out = Tensor::zeros({1}, x.dtype());
  visit_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    double acc = 0;
    for (T v : x.data<T>()) acc += v;
    out.mutable_data<T>()[0] = static_cast<T>(acc * scale);
  });
  if (!tracking({&x})) return out;
  link(out, name, {&x}, [x, scale](Node& self) {
    visit_dtype(self.data.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const T g = static_cast<T>(self.grad.vec<T>()[0] * scale);
      for (T& v : x.node()->grad_vec<T>()) v += g;
    });
  });
  return out;
}

}  // namespace

Tensor sum(const Tensor& x) { return reduce_all(x, 1.0, "sum"); }
Tensor mean(const Tensor& x) { return reduce_all(x, 1.0 / static_cast<double>(x.numel()), "mean"); }

Tensor mean_axes(const Tensor& x, std::vector<int> axes_in) {
  const auto& s = x.shape();
  std::vector<bool> reduced(s.size(), false);
  for (int a : axes_in) reduced[normalize_axis(a, s.size(), "mean_axes")] = true;
  Shape out_shape;
  std::size_t count = 1;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (reduced[i]) count *= s[i];
    else out_shape.push_back(s[i]);
  }
  if (out_shape.empty()) out_shape.push_back(1);
  // Stride into the output for each input axis (0 on reduced axes).
  std::vector<std::size_t> out_strides(s.size(), 0);
  {
    std::size_t stride = 1;
    for (std::size_t i = s.size(); i-- > 0;) {
      if (!reduced[i]) {
        out_strides[i] = stride;
        stride *= s[i];
      }
    }
  }
  const std::vector<std::size_t> in_strides = contiguous_strides(s);
  Tensor out = Tensor::zeros(out_shape, x.dtype());
  const double scale = 1.0 / static_cast<double>(count);
  visit_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto in = x.data<T>();
    std::vector<double> acc(out.numel(), 0.0);
    walk2(s, in_strides, out_strides, [&](std::size_t, std::size_t i, std::size_t o) { acc[o] += in[i]; });
    auto o = out.mutable_data<T>();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = static_cast<T>(acc[i] * scale);
  });
  if (!tracking({&x})) return out;
  link(out, "mean_axes", {&x}, [x, s, in_strides, out_strides, scale](Node& self) {
    visit_dtype(self.data.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const auto& go = self.grad.vec<T>();
      auto& gx = x.node()->grad_vec<T>();
      walk2(s, in_strides, out_strides,
            [&](std::size_t, std::size_t i, std::size_t o) { gx[i] += static_cast<T>(go[o] * scale); });
    });
  });
  return out;
}

// ---- layout ----------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_to_string(x.shape()) + " as " + shape_to_string(shape));
  }
  Tensor out = Tensor::zeros(std::move(shape), x.dtype());
  out.node()->data = x.node()->data;
  if (!tracking({&x})) return out;
  link(out, "reshape", {&x}, [x](Node& self) {
    visit_dtype(self.data.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const auto& go = self.grad.vec<T>();
      auto& gx = x.node()->grad_vec<T>();
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
    });
  });
  return out;
}

Tensor permute(const Tensor& x, std::vector<std::size_t> order) {
  const auto& s = x.shape();
  if (order.size() != s.size()) throw DimensionError("permute: order rank does not match " + shape_to_string(s));
  std::vector<bool> seen(s.size(), false);
  for (auto o : order) {
    if (o >= s.size() || seen[o]) throw DimensionError("permute: invalid axis order");
    seen[o] = true;
  }
  const auto in_strides = contiguous_strides(s);
  Shape out_shape(s.size());
  std::vector<std::size_t> src_strides(s.size());
  for (std::size_t j = 0; j < s.size(); ++j) {
    out_shape[j] = s[order[j]];
    src_strides[j] = in_strides[order[j]];
  }
  const std::vector<std::size_t> unit(s.size(), 0);
  Tensor out = Tensor::zeros(out_shape, x.dtype());
  visit_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto in = x.data<T>();
    auto o = out.mutable_data<T>();
    walk2(out_shape, src_strides, unit, [&](std::size_t f, std::size_t i, std::size_t) { o[f] = in[i]; });
  });
  if (!tracking({&x})) return out;
  link(out, "permute", {&x}, [x, out_shape, src_strides, unit](Node& self) {
    visit_dtype(self.data.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const auto& go = self.grad.vec<T>();
      auto& gx = x.node()->grad_vec<T>();
      walk2(out_shape, src_strides, unit, [&](std::size_t f, std::size_t i, std::size_t) { gx[i] += go[f]; });
    });
  });
  return out;
}

Tensor concat(std::span<const Tensor> parts, int axis_in) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  const Shape& first = parts[0].shape();
  const std::size_t axis = normalize_axis(axis_in, first.size(), "concat");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& ps = p.shape();
    if (ps.size() != first.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t i = 0; i < ps.size(); ++i) {
      if (i != axis && ps[i] != first[i]) {
        throw DimensionError("concat: shape " + shape_to_string(ps) + " incompatible with " + shape_to_string(first));
      }
    }
    require_same_dtype(parts[0], p, "concat");
    out_shape[axis] += ps[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  const std::size_t total = out_shape[axis];
  Tensor out = Tensor::zeros(out_shape, parts[0].dtype());
  std::vector<std::size_t> offsets;
  visit_dtype(out.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto o = out.mutable_data<T>();
    std::size_t offset = 0;
    for (const auto& p : parts) {
      offsets.push_back(offset);
      auto in = p.data<T>();
      const std::size_t len = p.shape()[axis];
      for (std::size_t a = 0; a < outer; ++a) {
        std::copy_n(in.data() + a * len * inner, len * inner, o.data() + (a * total + offset) * inner);
      }
      offset += len;
    }
  });
  bool any = false;
  if (grad_enabled()) {
    for (const auto& p : parts) any = any || p.requires_grad();
  }
  if (!any) return out;
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  auto node = out.node();
  node->op = "concat";
  node->requires_grad = true;
  for (const auto& p : inputs) node->parents.push_back(p.node());
  node->backward = [inputs, offsets, axis, outer, inner, total](Node& self) {
    visit_dtype(self.data.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const auto& go = self.grad.vec<T>();
      for (std::size_t k = 0; k < inputs.size(); ++k) {
        auto np = inputs[k].node();
        if (!np->requires_grad) continue;
        auto& gp = np->grad_vec<T>();
        const std::size_t len = np->shape[axis];
        for (std::size_t a = 0; a < outer; ++a) {
          const T* src = go.data() + (a * total + offsets[k]) * inner;
          T* dst = gp.data() + a * len * inner;
          for (std::size_t i = 0; i < len * inner; ++i) dst[i] += src[i];
        }
      }
    });
  };
  return out;
}

Tensor slice(const Tensor& x, int axis_in, std::size_t start, std::size_t length) {
  const auto& s = x.shape();
  const std::size_t axis = normalize_axis(axis_in, s.size(), "slice");
  if (length == 0 || start + length > s[axis]) {
    throw DimensionError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) + ") out of range for " +
                         shape_to_string(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t full = s[axis];
  Shape out_shape = s;
  out_shape[axis] = length;
  Tensor out = Tensor::zeros(out_shape, x.dtype());
  visit_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto in = x.data<T>();
    auto o = out.mutable_data<T>();
    for (std::size_t a = 0; a < outer; ++a) {
      std::copy_n(in.data() + (a * full + start) * inner, length * inner, o.data() + a * length * inner);
    }
  });
  if (!tracking({&x})) return out;
  link(out, "slice", {&x}, [x, outer, inner, full, start, length](Node& self) {
    visit_dtype(self.data.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const auto& go = self.grad.vec<T>();
      auto& gx = x.node()->grad_vec<T>();
      for (std::size_t a = 0; a < outer; ++a) {
        const T* src = go.data() + a * length * inner;
        T* dst = gx.data() + (a * full + start) * inner;
        for (std::size_t i = 0; i < length * inner; ++i) dst[i] += src[i];
      }
    });
  });
  return out;
}

}  // namespace mstream
