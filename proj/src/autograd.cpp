#include "specmix/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>

namespace specmix {

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

}  // namespace specmix

namespace specmix::ag {

namespace {

thread_local bool g_grad_enabled = true;

class GradModeGuard {
 public:
  explicit GradModeGuard(bool enabled) : previous_(g_grad_enabled) { g_grad_enabled = enabled; }
  ~GradModeGuard() { g_grad_enabled = previous_; }

 private:
  bool previous_;
};

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b, const std::string& why = "") {
  std::string msg = std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b);
  if (!why.empty()) msg += " (" + why + ")";
  throw ShapeError(msg);
}

[[noreturn]] void shape_fail1(const char* op, const Shape& a, const std::string& why) {
  throw ShapeError(std::string(op) + ": invalid shape " + shape_str(a) + " (" + why + ")");
}

// Strides of `in` viewed through broadcasting as an array of shape `out`.
std::vector<std::size_t> aligned_strides(const Shape& in, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t s = 1;
  for (std::size_t i = in.size(), j = out.size(); i-- > 0;) {
    --j;
    if (in[i] != 1) strides[j] = s;
    s *= in[i];
  }
  return strides;
}

// Calls f(flat_out, offset_a, offset_b) in increasing output order.
template <typename F>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa, const std::vector<std::size_t>& sb,
                        F&& f) {
  const std::size_t n = shape_numel(out);
  const std::size_t r = out.size();
  std::vector<std::size_t> idx(r, 0);
  std::size_t ia = 0;
  std::size_t ib = 0;
  for (std::size_t i = 0; i < n; ++i) {
    f(i, ia, ib);
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out[d]) break;
      ia -= sa[d] * out[d];
      ib -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.begin(), small.end(), big.end() - static_cast<std::ptrdiff_t>(small.size()));
}

// Length of the trailing block over which `small` is constant when it matches the
// leading axes of `big` (same rank) and is 1 on the rest; 0 if it does not.
std::size_t prefix_block(const Shape& small, const Shape& big) {
  if (small.size() != big.size()) return 0;
  std::size_t q = 0;
  while (q < big.size() && small[q] == big[q]) ++q;
  std::size_t block = 1;
  for (std::size_t i = q; i < big.size(); ++i) {
    if (small[i] != 1) return 0;
    block *= big[i];
  }
  return block;
}

template <typename T, typename F>
Tensor<T> binary_map(const Tensor<T>& a, const Tensor<T>& b, const char* op, F&& f) {
  if (a.shape() == b.shape()) {
    Tensor<T> out(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    for (std::size_t i = 0; i < out.size(); ++i) po[i] = f(pa[i], pb[i]);
    return out;
  }
  const Shape shape = broadcast_shapes(a.shape(), b.shape(), op);
  Tensor<T> out(shape);
  T* po = out.data();
  const T* pa = a.data();
  const T* pb = b.data();
  const std::size_t n = out.size();
  if (a.shape() == shape && is_suffix(b.shape(), shape)) {
    const std::size_t nb = b.size();
    for (std::size_t base = 0; base < n; base += nb)
      for (std::size_t j = 0; j < nb; ++j) po[base + j] = f(pa[base + j], pb[j]);
    return out;
  }
  if (b.shape() == shape && is_suffix(a.shape(), shape)) {
    const std::size_t na = a.size();
    for (std::size_t base = 0; base < n; base += na)
      for (std::size_t j = 0; j < na; ++j) po[base + j] = f(pa[j], pb[base + j]);
    return out;
  }
  if (a.shape() == shape) {
    if (const std::size_t blk = prefix_block(b.shape(), shape)) {
      for (std::size_t r = 0; r < b.size(); ++r)
        for (std::size_t j = 0; j < blk; ++j) po[r * blk + j] = f(pa[r * blk + j], pb[r]);
      return out;
    }
  }
  if (b.shape() == shape) {
    if (const std::size_t blk = prefix_block(a.shape(), shape)) {
      for (std::size_t r = 0; r < a.size(); ++r)
        for (std::size_t j = 0; j < blk; ++j) po[r * blk + j] = f(pa[r], pb[r * blk + j]);
      return out;
    }
  }
  for_each_broadcast(shape, aligned_strides(a.shape(), shape), aligned_strides(b.shape(), shape),
                     [&](std::size_t i, std::size_t ia, std::size_t ib) { po[i] = f(pa[ia], pb[ib]); });
  return out;
}

template <typename T, typename F>
Tensor<T> unary_map(const Tensor<T>& a, F&& f) {
  Tensor<T> out(a.shape());
  const T* pa = a.data();
  T* po = out.data();
  for (std::size_t i = 0; i < a.size(); ++i) po[i] = f(pa[i]);
  return out;
}

// Validates that `target` is a right-aligned reduction of `from`.
void check_reducible(const Shape& from, const Shape& target, const char* op) {
  if (target.size() > from.size()) shape_fail(op, from, target, "target has higher rank");
  for (std::size_t i = target.size(), j = from.size(); i-- > 0;) {
    --j;
    if (target[i] != 1 && target[i] != from[j]) shape_fail(op, from, target);
  }
}

template <typename T>
Tensor<T> sum_to_value(const Tensor<T>& x, const Shape& target) {
  Tensor<T> out(target);
  T* po = out.data();
  const T* px = x.data();
  const std::size_t n = x.size();
  if (out.size() == 1) {
    T acc = T(0);
    for (std::size_t i = 0; i < n; ++i) acc += px[i];
    po[0] = acc;
    return out;
  }
  if (is_suffix(target, x.shape())) {
    const std::size_t m = out.size();
    for (std::size_t base = 0; base < n; base += m)
      for (std::size_t j = 0; j < m; ++j) po[j] += px[base + j];
    return out;
  }
  if (const std::size_t blk = prefix_block(target, x.shape())) {
    for (std::size_t r = 0; r < out.size(); ++r) {
      T acc = T(0);
      for (std::size_t j = 0; j < blk; ++j) acc += px[r * blk + j];
      po[r] = acc;
    }
    return out;
  }
  const auto st = aligned_strides(target, x.shape());
  const std::vector<std::size_t> zero(x.rank(), 0);
  for_each_broadcast(x.shape(), st, zero, [&](std::size_t i, std::size_t it, std::size_t) { po[it] += px[i]; });
  return out;
}

template <typename T>
Tensor<T> broadcast_value(const Tensor<T>& x, const Shape& target) {
  Tensor<T> out(target);
  T* po = out.data();
  const T* px = x.data();
  const std::size_t n = out.size();
  if (x.size() == 1) {
    std::fill(po, po + n, px[0]);
    return out;
  }
  if (is_suffix(x.shape(), target)) {
    const std::size_t m = x.size();
    for (std::size_t base = 0; base < n; base += m) std::copy(px, px + m, po + base);
    return out;
  }
  if (const std::size_t blk = prefix_block(x.shape(), target)) {
    for (std::size_t r = 0; r < x.size(); ++r) std::fill(po + r * blk, po + (r + 1) * blk, px[r]);
    return out;
  }
  const auto sx = aligned_strides(x.shape(), target);
  const std::vector<std::size_t> zero(target.size(), 0);
  for_each_broadcast(target, sx, zero, [&](std::size_t i, std::size_t ix, std::size_t) { po[i] = px[ix]; });
  return out;
}

template <typename T>
Var<T> reduce_like(const Var<T>& g, const Shape& shape) {
  return g.shape() == shape ? g : sum_to(g, shape);
}

template <typename T>
Var<T> mask_like(const Tensor<T>& x, bool (*pred)(T)) {
  return Var<T>::constant(unary_map(x, [pred](T v) { return pred(v) ? T(1) : T(0); }));
}

Shape with_last(Shape s, std::size_t last) {
  s.back() = last;
  return s;
}

struct ConvGeom {
  std::size_t batch;
  std::size_t in_len;
  std::size_t cin;
  std::size_t cout;
  std::size_t kernel;
  std::size_t stride;
  std::size_t pad;
  std::size_t out_len;

  // Input position for output o and tap k, or -1 when it falls in the zero padding.
  std::ptrdiff_t src(std::size_t o, std::size_t k) const {
    const auto i = static_cast<std::ptrdiff_t>(o * stride + k) - static_cast<std::ptrdiff_t>(pad);
    return (i < 0 || i >= static_cast<std::ptrdiff_t>(in_len)) ? -1 : i;
  }
};

// Unrolled input windows, one row per tap: col[(k*cin+ci)][b*out_len+o], zero in the padding.
template <typename T>
std::vector<T> im2col(const Tensor<T>& x, const ConvGeom& g) {
  const std::size_t n = g.batch * g.out_len;
  std::vector<T> col(g.kernel * g.cin * n, T(0));
  const T* px = x.data();
  for (std::size_t k = 0; k < g.kernel; ++k) {
    // Outputs whose tap k lands inside the input: o in [lo, hi).
    std::size_t lo = 0;
    while (lo < g.out_len && g.src(lo, k) < 0 && lo * g.stride + k < g.pad) ++lo;
    std::size_t hi = lo;
    while (hi < g.out_len && g.src(hi, k) >= 0) ++hi;
    for (std::size_t ci = 0; ci < g.cin; ++ci) {
      T* row = col.data() + (k * g.cin + ci) * n;
      for (std::size_t b = 0; b < g.batch; ++b) {
        const T* xb = px + b * g.in_len * g.cin + ci;
        T* rb = row + b * g.out_len;
        for (std::size_t o = lo; o < hi; ++o) rb[o] = xb[(o * g.stride + k - g.pad) * g.cin];
      }
    }
  }
  return col;
}

// The same windows as rows: win[b*out_len+o][k*cin+ci].
template <typename T>
std::vector<T> im2row(const Tensor<T>& x, const ConvGeom& g) {
  const std::size_t taps = g.kernel * g.cin;
  std::vector<T> win(g.batch * g.out_len * taps, T(0));
  const T* px = x.data();
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t o = 0; o < g.out_len; ++o) {
      T* row = win.data() + (b * g.out_len + o) * taps;
      for (std::size_t k = 0; k < g.kernel; ++k) {
        const auto i = g.src(o, k);
        if (i < 0) continue;
        const T* xrow = px + (b * g.in_len + static_cast<std::size_t>(i)) * g.cin;
        std::copy(xrow, xrow + g.cin, row + k * g.cin);
      }
    }
  }
  return win;
}

// [rows][cols] -> [cols][rows]
template <typename T>
std::vector<T> transposed(const T* src, std::size_t rows, std::size_t cols) {
  std::vector<T> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = src[r * cols + c];
  return out;
}

// The three kernels below accumulate every output element in the same order as
// the direct loops (tap-major, then input channel, then batch and position), with
// the long batch-by-position axis innermost so the updates vectorise.

template <typename T>
Tensor<T> conv_forward(const Tensor<T>& x, const Tensor<T>& w, const ConvGeom& g) {
  const std::size_t n = g.batch * g.out_len;
  const std::size_t taps = g.kernel * g.cin;
  const auto col = im2col(x, g);
  std::vector<T> yt(g.cout * n, T(0));
  const T* pw = w.data();
  for (std::size_t co = 0; co < g.cout; ++co) {
    T* __restrict yrow = yt.data() + co * n;
    for (std::size_t p = 0; p < taps; ++p) {
      const T a = pw[p * g.cout + co];
      const T* __restrict crow = col.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) yrow[j] += crow[j] * a;
    }
  }
  Tensor<T> y({g.batch, g.out_len, g.cout}, transposed(yt.data(), g.cout, n));
  return y;
}

template <typename T>
Tensor<T> conv_input_grad_value(const Tensor<T>& gy, const Tensor<T>& w, const ConvGeom& g) {
  const std::size_t n = g.batch * g.out_len;
  const std::size_t taps = g.kernel * g.cin;
  const auto gyt = transposed(gy.data(), n, g.cout);
  std::vector<T> gcol(taps * n, T(0));
  const T* pw = w.data();
  for (std::size_t p = 0; p < taps; ++p) {
    T* __restrict grow = gcol.data() + p * n;
    for (std::size_t co = 0; co < g.cout; ++co) {
      const T a = pw[p * g.cout + co];
      const T* __restrict src = gyt.data() + co * n;
      for (std::size_t j = 0; j < n; ++j) grow[j] += src[j] * a;
    }
  }
  Tensor<T> gx({g.batch, g.in_len, g.cin});
  T* px = gx.data();
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t o = 0; o < g.out_len; ++o) {
      const std::size_t j = b * g.out_len + o;
      for (std::size_t k = 0; k < g.kernel; ++k) {
        const auto i = g.src(o, k);
        if (i < 0) continue;
        T* xrow = px + (b * g.in_len + static_cast<std::size_t>(i)) * g.cin;
        for (std::size_t ci = 0; ci < g.cin; ++ci) xrow[ci] += gcol[(k * g.cin + ci) * n + j];
      }
    }
  }
  return gx;
}

template <typename T>
Tensor<T> conv_weight_grad_value(const Tensor<T>& x, const Tensor<T>& gy, const ConvGeom& g) {
  const std::size_t n = g.batch * g.out_len;
  const std::size_t taps = g.kernel * g.cin;
  const auto colt = im2row(x, g);
  std::vector<T> gwt(g.cout * taps, T(0));
  const T* pg = gy.data();
  for (std::size_t co = 0; co < g.cout; ++co) {
    T* __restrict wrow = gwt.data() + co * taps;
    for (std::size_t j = 0; j < n; ++j) {
      const T a = pg[j * g.cout + co];
      const T* __restrict window = colt.data() + j * taps;
      for (std::size_t p = 0; p < taps; ++p) wrow[p] += window[p] * a;
    }
  }
  return Tensor<T>({g.kernel, g.cin, g.cout}, transposed(gwt.data(), g.cout, taps));
}

template <typename T>
Var<T> conv_explicit(const Var<T>& x, const Var<T>& w, std::size_t stride, std::size_t pad, std::size_t out_len) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 3 || ws.size() != 3 || xs[2] != ws[1]) {
    shape_fail("conv1d", xs, ws, "expected x[B,L,Cin] and w[K,Cin,Cout]");
  }
  const ConvGeom g{xs[0], xs[1], xs[2], ws[2], ws[0], stride, pad, out_len};
  auto value = conv_forward(x.value(), w.value(), g);
  return make_op<T>(std::move(value), {x, w}, "conv1d", [g](const BackwardCtx<T>& c) {
    std::vector<Var<T>> out(2);
    if (c.needs[0]) out[0] = conv1d_input_grad(c.grad, c.inputs[1], g.in_len, g.stride, g.pad);
    if (c.needs[1]) out[1] = conv1d_weight_grad(c.inputs[0], c.grad, g.kernel, g.stride, g.pad);
    return out;
  });
}

template <typename T>
Tensor<T> matmul_value(const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t m = a.dim(0);
  const std::size_t k = a.dim(1);
  const std::size_t n = b.dim(1);
  Tensor<T> c({m, n});
  const T* pa = a.data();
  const T* pb = b.data();
  T* pc = c.data();
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = pc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = pa[i * k + p];
      const T* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Shape broadcast_shapes(const Shape& a, const Shape& b, const char* op) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) shape_fail(op, a, b);
    out[i] = std::max(da, db);
  }
  return out;
}

template <typename T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> inputs, const char* op, BackwardFn<T> backward,
               bool second_order) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->op = op;
  n->second_order = second_order;
  bool needs_grad = false;
  if (g_grad_enabled) {
    for (const auto& v : inputs) {
      if (v.requires_grad()) {
        needs_grad = true;
        break;
      }
    }
  }
  if (needs_grad) {
    n->requires_grad = true;
    n->inputs = std::move(inputs);
    n->backward = std::move(backward);
  }
  return Var<T>(std::move(n));
}

template <typename T>
std::vector<Var<T>> grad(const Var<T>& output, const std::vector<Var<T>>& wrt, bool create_graph) {
  if (output.size() != 1) {
    throw ShapeError("grad: output must hold a single value, got shape " + shape_str(output.shape()));
  }
  // Post-order DFS over nodes that carry gradients.
  std::vector<Var<T>> order;
  if (output.requires_grad()) {
    std::unordered_set<Node<T>*> visited{output.node()};
    std::vector<std::pair<Var<T>, std::size_t>> stack;
    stack.emplace_back(output, 0);
    while (!stack.empty()) {
      Node<T>* node = stack.back().first.node();
      std::size_t& next = stack.back().second;
      if (next < node->inputs.size()) {
        Var<T> child = node->inputs[next++];
        if (child.requires_grad() && visited.insert(child.node()).second) stack.emplace_back(std::move(child), 0);
      } else {
        order.push_back(std::move(stack.back().first));
        stack.pop_back();
      }
    }
  }

  GradModeGuard mode(create_graph);
  std::unordered_set<Node<T>*> keep;
  for (const auto& w : wrt) keep.insert(w.node());
  std::unordered_map<Node<T>*, Var<T>> grads;
  if (!order.empty()) grads[output.node()] = Var<T>::constant(Tensor<T>(output.shape(), T(1)));

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = it->node();
    auto found = grads.find(node);
    if (found == grads.end() || !node->backward) continue;
    if (create_graph && !node->second_order) {
      throw NotTwiceDifferentiable(std::string("primitive '") + node->op +
                                   "' is not twice-differentiable; it cannot appear inside a gradient penalty");
    }
    Var<T> g = found->second;
    if (!keep.contains(node)) grads.erase(found);
    std::vector<bool> needs(node->inputs.size());
    for (std::size_t i = 0; i < needs.size(); ++i) needs[i] = node->inputs[i].requires_grad();
    const BackwardCtx<T> ctx{*it, node->inputs, g, needs};
    auto gin = node->backward(ctx);
    for (std::size_t i = 0; i < needs.size(); ++i) {
      if (!needs[i] || i >= gin.size() || !gin[i].defined()) continue;
      Node<T>* in = node->inputs[i].node();
      if (gin[i].shape() != in->value.shape()) {
        shape_fail(node->op, gin[i].shape(), in->value.shape(), "backward produced a mismatched gradient");
      }
      auto slot = grads.find(in);
      if (slot == grads.end()) {
        grads.emplace(in, std::move(gin[i]));
      } else {
        slot->second = add(slot->second, gin[i]);
      }
    }
  }

  std::vector<Var<T>> result;
  result.reserve(wrt.size());
  for (const auto& w : wrt) {
    auto found = grads.find(w.node());
    result.push_back(found != grads.end() ? found->second : Var<T>::constant(Tensor<T>(w.shape(), T(0))));
  }
  return result;
}

// --- elementwise -------------------------------------------------------------

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  auto v = binary_map(a.value(), b.value(), "add", [](T x, T y) { return x + y; });
  return make_op<T>(std::move(v), {a, b}, "add", [](const BackwardCtx<T>& c) {
    std::vector<Var<T>> out(2);
    if (c.needs[0]) out[0] = reduce_like(c.grad, c.inputs[0].shape());
    if (c.needs[1]) out[1] = reduce_like(c.grad, c.inputs[1].shape());
    return out;
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  auto v = binary_map(a.value(), b.value(), "sub", [](T x, T y) { return x - y; });
  return make_op<T>(std::move(v), {a, b}, "sub", [](const BackwardCtx<T>& c) {
    std::vector<Var<T>> out(2);
    if (c.needs[0]) out[0] = reduce_like(c.grad, c.inputs[0].shape());
    if (c.needs[1]) out[1] = reduce_like(neg(c.grad), c.inputs[1].shape());
    return out;
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  auto v = binary_map(a.value(), b.value(), "mul", [](T x, T y) { return x * y; });
  return make_op<T>(std::move(v), {a, b}, "mul", [](const BackwardCtx<T>& c) {
    std::vector<Var<T>> out(2);
    if (c.needs[0]) out[0] = reduce_like(mul(c.grad, c.inputs[1]), c.inputs[0].shape());
    if (c.needs[1]) out[1] = reduce_like(mul(c.grad, c.inputs[0]), c.inputs[1].shape());
    return out;
  });
}

template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  auto v = binary_map(a.value(), b.value(), "div", [](T x, T y) { return x / y; });
  return make_op<T>(std::move(v), {a, b}, "div", [](const BackwardCtx<T>& c) {
    std::vector<Var<T>> out(2);
    const Var<T>& a = c.inputs[0];
    const Var<T>& b = c.inputs[1];
    if (c.needs[0]) out[0] = reduce_like(div(c.grad, b), a.shape());
    if (c.needs[1]) out[1] = reduce_like(neg(div(mul(c.grad, c.out), b)), b.shape());
    return out;
  });
}

template <typename T>
Var<T> neg(const Var<T>& a) {
  return make_op<T>(unary_map(a.value(), [](T x) { return -x; }), {a}, "neg",
                    [](const BackwardCtx<T>& c) { return std::vector<Var<T>>{neg(c.grad)}; });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  return make_op<T>(unary_map(a.value(), [factor](T x) { return x * factor; }), {a}, "scale",
                    [factor](const BackwardCtx<T>& c) { return std::vector<Var<T>>{scale(c.grad, factor)}; });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T k) {
  return make_op<T>(unary_map(a.value(), [k](T x) { return x + k; }), {a}, "add_scalar",
                    [](const BackwardCtx<T>& c) { return std::vector<Var<T>>{c.grad}; });
}

template <typename T>
Var<T> pow_scalar(const Var<T>& a, T p) {
  return make_op<T>(unary_map(a.value(), [p](T x) { return std::pow(x, p); }), {a}, "pow",
                    [p](const BackwardCtx<T>& c) {
                      return std::vector<Var<T>>{mul(c.grad, scale(pow_scalar(c.inputs[0], p - T(1)), p))};
                    });
}

template <typename T>
Var<T> exp(const Var<T>& a) {
  return make_op<T>(unary_map(a.value(), [](T x) { return std::exp(x); }), {a}, "exp",
                    [](const BackwardCtx<T>& c) { return std::vector<Var<T>>{mul(c.grad, c.out)}; });
}

template <typename T>
Var<T> log(const Var<T>& a) {
  return make_op<T>(unary_map(a.value(), [](T x) { return std::log(x); }), {a}, "log",
                    [](const BackwardCtx<T>& c) { return std::vector<Var<T>>{div(c.grad, c.inputs[0])}; });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  auto v = unary_map(a.value(), [](T x) {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
  });
  return make_op<T>(std::move(v), {a}, "sigmoid", [](const BackwardCtx<T>& c) {
    // s' = s (1 - s)
    return std::vector<Var<T>>{mul(c.grad, mul(c.out, add_scalar(neg(c.out), T(1))))};
  });
}

template <typename T>
Var<T> softplus(const Var<T>& a) {
  auto v = unary_map(a.value(), [](T x) { return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x))); });
  return make_op<T>(std::move(v), {a}, "softplus",
                    [](const BackwardCtx<T>& c) { return std::vector<Var<T>>{mul(c.grad, sigmoid(c.inputs[0]))}; });
}

template <typename T>
Var<T> clamp(const Var<T>& a, T lo, T hi) {
  auto v = unary_map(a.value(), [lo, hi](T x) { return std::clamp(x, lo, hi); });
  return make_op<T>(std::move(v), {a}, "clamp", [lo, hi](const BackwardCtx<T>& c) {
    auto inside = unary_map(c.inputs[0].value(), [lo, hi](T x) { return (x >= lo && x <= hi) ? T(1) : T(0); });
    return std::vector<Var<T>>{mul(c.grad, Var<T>::constant(std::move(inside)))};
  });
}

namespace {

template <typename T>
Var<T> acos_raw(const Var<T>& a) {
  return make_op<T>(unary_map(a.value(), [](T x) { return std::acos(x); }), {a}, "arccos",
                    [](const BackwardCtx<T>& c) {
                      const Var<T>& x = c.inputs[0];
                      // d/dx acos x = -(1 - x^2)^(-1/2)
                      auto inv = pow_scalar(add_scalar(neg(mul(x, x)), T(1)), T(-0.5));
                      return std::vector<Var<T>>{neg(mul(c.grad, inv))};
                    });
}

}  // namespace

template <typename T>
Var<T> arccos(const Var<T>& a) {
  constexpr double eps = 1e-7;
  return acos_raw(clamp(a, static_cast<T>(-1.0 + eps), static_cast<T>(1.0 - eps)));
}

template <typename T>
Var<T> prelu(const Var<T>& x, const Var<T>& slope) {
  const Shape& xs = x.shape();
  if (slope.shape().size() != 1 || xs.empty() || xs.back() != slope.shape()[0]) {
    shape_fail("prelu", xs, slope.shape(), "slope must have one entry per channel");
  }
  auto v = binary_map(x.value(), slope.value(), "prelu", [](T v, T a) { return v > T(0) ? v : a * v; });
  return make_op<T>(std::move(v), {x, slope}, "prelu", [](const BackwardCtx<T>& c) {
    const Var<T>& x = c.inputs[0];
    const Var<T>& a = c.inputs[1];
    auto pos = mask_like<T>(x.value(), [](T v) { return v > T(0); });
    auto negm = mask_like<T>(x.value(), [](T v) { return !(v > T(0)); });
    std::vector<Var<T>> out(2);
    if (c.needs[0]) out[0] = mul(c.grad, add(pos, mul(negm, a)));
    if (c.needs[1]) out[1] = sum_to(mul(mul(c.grad, x), negm), a.shape());
    return out;
  });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
  auto v = unary_map(x.value(), [slope](T v) { return v > T(0) ? v : slope * v; });
  return make_op<T>(std::move(v), {x}, "leaky_relu", [slope](const BackwardCtx<T>& c) {
    auto d = unary_map(c.inputs[0].value(), [slope](T v) { return v > T(0) ? T(1) : slope; });
    return std::vector<Var<T>>{mul(c.grad, Var<T>::constant(std::move(d)))};
  });
}

// --- shape and reduction -----------------------------------------------------

template <typename T>
Var<T> sum_to(const Var<T>& a, const Shape& shape) {
  if (a.shape() == shape) return a;
  check_reducible(a.shape(), shape, "sum_to");
  return make_op<T>(sum_to_value(a.value(), shape), {a}, "sum_to", [](const BackwardCtx<T>& c) {
    return std::vector<Var<T>>{broadcast_to(c.grad, c.inputs[0].shape())};
  });
}

template <typename T>
Var<T> broadcast_to(const Var<T>& a, const Shape& shape) {
  if (a.shape() == shape) return a;
  check_reducible(shape, a.shape(), "broadcast_to");
  return make_op<T>(broadcast_value(a.value(), shape), {a}, "broadcast_to", [](const BackwardCtx<T>& c) {
    return std::vector<Var<T>>{sum_to(c.grad, c.inputs[0].shape())};
  });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  return sum_to(a, Shape{});
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.size()));
}

template <typename T>
Var<T> reshape(const Var<T>& a, const Shape& shape) {
  if (a.shape() == shape) return a;
  return make_op<T>(a.value().reshaped(shape), {a}, "reshape", [](const BackwardCtx<T>& c) {
    return std::vector<Var<T>>{reshape(c.grad, c.inputs[0].shape())};
  });
}

template <typename T>
Var<T> transpose(const Var<T>& a) {
  if (a.shape().size() != 2) shape_fail1("transpose", a.shape(), "expected a matrix");
  const std::size_t m = a.shape()[0];
  const std::size_t n = a.shape()[1];
  Tensor<T> v({n, m});
  const T* pa = a.value().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) v[j * m + i] = pa[i * n + j];
  return make_op<T>(std::move(v), {a}, "transpose",
                    [](const BackwardCtx<T>& c) { return std::vector<Var<T>>{transpose(c.grad)}; });
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0]) {
    shape_fail("matmul", a.shape(), b.shape(), "expected [m,k] x [k,n]");
  }
  return make_op<T>(matmul_value(a.value(), b.value()), {a, b}, "matmul", [](const BackwardCtx<T>& c) {
    std::vector<Var<T>> out(2);
    if (c.needs[0]) out[0] = matmul(c.grad, transpose(c.inputs[1]));
    if (c.needs[1]) out[1] = matmul(transpose(c.inputs[0]), c.grad);
    return out;
  });
}

template <typename T>
Var<T> softmax_last(const Var<T>& a) {
  if (a.shape().empty()) shape_fail1("softmax", a.shape(), "needs at least one axis");
  const std::size_t n = a.shape().back();
  const std::size_t rows = a.size() / n;
  Tensor<T> v(a.shape());
  const T* pa = a.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = pa + r * n;
    T* out = v.data() + r * n;
    const T m = *std::max_element(in, in + n);
    T total = T(0);
    for (std::size_t j = 0; j < n; ++j) total += (out[j] = std::exp(in[j] - m));
    for (std::size_t j = 0; j < n; ++j) out[j] /= total;
  }
  return make_op<T>(std::move(v), {a}, "softmax", [](const BackwardCtx<T>& c) {
    const Var<T>& y = c.out;
    auto inner = sum_to(mul(c.grad, y), with_last(y.shape(), 1));
    return std::vector<Var<T>>{mul(y, sub(c.grad, inner))};
  });
}

template <typename T>
Var<T> log_softmax_last(const Var<T>& a) {
  if (a.shape().empty()) shape_fail1("log_softmax", a.shape(), "needs at least one axis");
  const std::size_t n = a.shape().back();
  const Shape row_shape = with_last(a.shape(), 1);
  Tensor<T> m(row_shape);
  for (std::size_t r = 0; r < m.size(); ++r) {
    const T* in = a.value().data() + r * n;
    m[r] = *std::max_element(in, in + n);
  }
  auto shifted = sub(a, Var<T>::constant(std::move(m)));
  return sub(shifted, log(sum_to(exp(shifted), row_shape)));
}

// --- convolution and pooling -------------------------------------------------

template <typename T>
Var<T> conv1d(const Var<T>& x, const Var<T>& w, std::size_t stride, Padding padding) {
  if (x.shape().size() != 3 || w.shape().size() != 3 || x.shape()[2] != w.shape()[1]) {
    shape_fail("conv1d", x.shape(), w.shape(), "expected x[B,L,Cin] and w[K,Cin,Cout]");
  }
  if (stride == 0) throw ShapeError("conv1d: stride must be positive");
  const std::size_t len = x.shape()[1];
  const std::size_t kernel = w.shape()[0];
  std::size_t out_len = 0;
  std::size_t pad = 0;
  if (padding == Padding::same) {
    out_len = (len + stride - 1) / stride;
    const std::size_t span = (out_len - 1) * stride + kernel;
    pad = span > len ? (span - len) / 2 : 0;
  } else {
    if (len < kernel) shape_fail("conv1d", x.shape(), w.shape(), "kernel longer than input");
    out_len = (len - kernel) / stride + 1;
  }
  return conv_explicit(x, w, stride, pad, out_len);
}

template <typename T>
Var<T> conv1d_input_grad(const Var<T>& gy, const Var<T>& w, std::size_t in_len, std::size_t stride,
                         std::size_t pad_left) {
  const Shape& gs = gy.shape();
  const Shape& ws = w.shape();
  if (gs.size() != 3 || ws.size() != 3 || gs[2] != ws[2]) {
    shape_fail("conv1d_input_grad", gs, ws, "expected gy[B,Lout,Cout] and w[K,Cin,Cout]");
  }
  const ConvGeom g{gs[0], in_len, ws[1], ws[2], ws[0], stride, pad_left, gs[1]};
  return make_op<T>(conv_input_grad_value(gy.value(), w.value(), g), {gy, w}, "conv1d_input_grad",
                    [g](const BackwardCtx<T>& c) {
                      std::vector<Var<T>> out(2);
                      if (c.needs[0]) out[0] = conv_explicit(c.grad, c.inputs[1], g.stride, g.pad, g.out_len);
                      if (c.needs[1]) out[1] = conv1d_weight_grad(c.grad, c.inputs[0], g.kernel, g.stride, g.pad);
                      return out;
                    });
}

template <typename T>
Var<T> conv1d_weight_grad(const Var<T>& x, const Var<T>& gy, std::size_t kernel, std::size_t stride,
                          std::size_t pad_left) {
  const Shape& xs = x.shape();
  const Shape& gs = gy.shape();
  if (xs.size() != 3 || gs.size() != 3 || xs[0] != gs[0]) {
    shape_fail("conv1d_weight_grad", xs, gs, "expected x[B,L,Cin] and gy[B,Lout,Cout]");
  }
  const ConvGeom g{xs[0], xs[1], xs[2], gs[2], kernel, stride, pad_left, gs[1]};
  return make_op<T>(conv_weight_grad_value(x.value(), gy.value(), g), {x, gy}, "conv1d_weight_grad",
                    [g](const BackwardCtx<T>& c) {
                      std::vector<Var<T>> out(2);
                      if (c.needs[0]) out[0] = conv1d_input_grad(c.inputs[1], c.grad, g.in_len, g.stride, g.pad);
                      if (c.needs[1]) out[1] = conv_explicit(c.inputs[0], c.grad, g.stride, g.pad, g.out_len);
                      return out;
                    });
}

template <typename T>
Var<T> avgpool1d(const Var<T>& x, std::size_t k) {
  const Shape& xs = x.shape();
  if (xs.size() != 3 || k == 0 || xs[1] < k) shape_fail1("avgpool1d", xs, "expected [B,L,C] with L >= kernel");
  const std::size_t batch = xs[0];
  const std::size_t len = xs[1];
  const std::size_t ch = xs[2];
  const std::size_t out_len = len / k;
  const T inv = T(1) / static_cast<T>(k);
  Tensor<T> v({batch, out_len, ch});
  const T* px = x.value().data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t o = 0; o < out_len; ++o) {
      T* yrow = v.data() + (b * out_len + o) * ch;
      for (std::size_t j = 0; j < k; ++j) {
        const T* xrow = px + (b * len + o * k + j) * ch;
        for (std::size_t c = 0; c < ch; ++c) yrow[c] += xrow[c];
      }
      for (std::size_t c = 0; c < ch; ++c) yrow[c] *= inv;
    }
  }
  return make_op<T>(std::move(v), {x}, "avgpool1d", [k, len](const BackwardCtx<T>& c) {
    return std::vector<Var<T>>{avgpool1d_grad(c.grad, k, len)};
  });
}

template <typename T>
Var<T> avgpool1d_grad(const Var<T>& gy, std::size_t k, std::size_t in_len) {
  const Shape& gs = gy.shape();
  if (gs.size() != 3 || gs[1] * k > in_len) shape_fail1("avgpool1d_grad", gs, "pooled length exceeds input");
  const std::size_t batch = gs[0];
  const std::size_t out_len = gs[1];
  const std::size_t ch = gs[2];
  const T inv = T(1) / static_cast<T>(k);
  Tensor<T> v({batch, in_len, ch});
  const T* pg = gy.value().data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t o = 0; o < out_len; ++o) {
      const T* grow = pg + (b * out_len + o) * ch;
      for (std::size_t j = 0; j < k; ++j) {
        T* xrow = v.data() + (b * in_len + o * k + j) * ch;
        for (std::size_t c = 0; c < ch; ++c) xrow[c] = grow[c] * inv;
      }
    }
  }
  return make_op<T>(std::move(v), {gy}, "avgpool1d_grad",
                    [k](const BackwardCtx<T>& c) { return std::vector<Var<T>>{avgpool1d(c.grad, k)}; });
}

template <typename T>
Var<T> concat_last(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (first.empty()) shape_fail1("concat", first, "needs at least one axis");
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size() || !std::equal(s.begin(), s.end() - 1, first.begin())) {
      shape_fail("concat", first, s, "leading extents differ");
    }
    widths.push_back(s.back());
    total += s.back();
  }
  const std::size_t rows = parts[0].size() / first.back();
  Tensor<T> v(with_last(first, total));
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const T* src = parts[p].value().data();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy(src + r * widths[p], src + (r + 1) * widths[p], v.data() + r * total + offset);
    }
    offset += widths[p];
  }
  return make_op<T>(std::move(v), parts, "concat", [widths](const BackwardCtx<T>& c) {
    std::vector<Var<T>> out(widths.size());
    std::size_t off = 0;
    for (std::size_t p = 0; p < widths.size(); ++p) {
      if (c.needs[p]) out[p] = slice_last(c.grad, off, widths[p]);
      off += widths[p];
    }
    return out;
  });
}

template <typename T>
Var<T> slice_last(const Var<T>& a, std::size_t offset, std::size_t width) {
  const Shape& s = a.shape();
  if (s.empty() || offset + width > s.back()) shape_fail1("slice", s, "slice exceeds last axis");
  const std::size_t n = s.back();
  const std::size_t rows = a.size() / n;
  Tensor<T> v(with_last(s, width));
  const T* src = a.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy(src + r * n + offset, src + r * n + offset + width, v.data() + r * width);
  }
  return make_op<T>(std::move(v), {a}, "slice", [offset, n](const BackwardCtx<T>& c) {
    return std::vector<Var<T>>{pad_last(c.grad, offset, n)};
  });
}

template <typename T>
Var<T> pad_last(const Var<T>& a, std::size_t offset, std::size_t total) {
  const Shape& s = a.shape();
  if (s.empty() || offset + s.back() > total) shape_fail1("pad", s, "padded extent too small");
  if (offset == 0 && s.back() == total) return a;
  const std::size_t n = s.back();
  const std::size_t rows = a.size() / n;
  Tensor<T> v(with_last(s, total));
  const T* src = a.value().data();
  for (std::size_t r = 0; r < rows; ++r) std::copy(src + r * n, src + (r + 1) * n, v.data() + r * total + offset);
  return make_op<T>(std::move(v), {a}, "pad", [offset, n](const BackwardCtx<T>& c) {
    return std::vector<Var<T>>{slice_last(c.grad, offset, n)};
  });
}

template <typename T>
BatchNormResult<T> batch_norm_train(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
  const Shape& xs = x.shape();
  if (xs.empty() || gamma.shape() != Shape{xs.back()} || beta.shape() != Shape{xs.back()}) {
    shape_fail("batch_norm", xs, gamma.shape(), "scale/shift must have one entry per channel");
  }
  const std::size_t ch = xs.back();
  const std::size_t rows = x.size() / ch;
  const T* px = x.value().data();
  Tensor<T> mu({ch});
  Tensor<T> var({ch});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < ch; ++c) mu[c] += px[r * ch + c];
  for (std::size_t c = 0; c < ch; ++c) mu[c] /= static_cast<T>(rows);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < ch; ++c) {
      const T d = px[r * ch + c] - mu[c];
      var[c] += d * d;
    }
  for (std::size_t c = 0; c < ch; ++c) var[c] /= static_cast<T>(rows);
  Tensor<T> inv_std({ch});
  for (std::size_t c = 0; c < ch; ++c) inv_std[c] = T(1) / std::sqrt(var[c] + eps);

  Tensor<T> xhat(xs);
  Tensor<T> y(xs);
  const T* pg = gamma.value().data();
  const T* pb = beta.value().data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < ch; ++c) {
      const std::size_t i = r * ch + c;
      xhat[i] = (px[i] - mu[c]) * inv_std[c];
      y[i] = pg[c] * xhat[i] + pb[c];
    }

  auto out = make_op<T>(
      std::move(y), {x, gamma, beta}, "batch_norm",
      [xhat = std::move(xhat), inv_std, rows, ch](const BackwardCtx<T>& c) {
        const T* pg = c.grad.value().data();
        const T* pgam = c.inputs[1].value().data();
        Tensor<T> dgamma({ch});
        Tensor<T> dbeta({ch});
        Tensor<T> sum_dxhat({ch});
        Tensor<T> sum_dxhat_xhat({ch});
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t k = 0; k < ch; ++k) {
            const std::size_t i = r * ch + k;
            dgamma[k] += pg[i] * xhat[i];
            dbeta[k] += pg[i];
            const T dxh = pg[i] * pgam[k];
            sum_dxhat[k] += dxh;
            sum_dxhat_xhat[k] += dxh * xhat[i];
          }
        std::vector<Var<T>> out(3);
        if (c.needs[0]) {
          Tensor<T> dx(xhat.shape());
          const T n = static_cast<T>(rows);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t k = 0; k < ch; ++k) {
              const std::size_t i = r * ch + k;
              const T dxh = pg[i] * pgam[k];
              dx[i] = inv_std[k] / n * (n * dxh - sum_dxhat[k] - xhat[i] * sum_dxhat_xhat[k]);
            }
          out[0] = Var<T>::constant(std::move(dx));
        }
        if (c.needs[1]) out[1] = Var<T>::constant(std::move(dgamma));
        if (c.needs[2]) out[2] = Var<T>::constant(std::move(dbeta));
        return out;
      },
      /*second_order=*/false);
  return {std::move(out), std::move(mu), std::move(var)};
}

template <typename T>
Var<T> dot(const Var<T>& a, const Var<T>& b) {
  return sum(mul(a, b));
}

template <typename T>
Var<T> l2_norm(const Var<T>& a) {
  return pow_scalar(sum(mul(a, a)), T(0.5));
}

#define SPECMIX_INSTANTIATE(T)                                                                                  \
  template Var<T> make_op<T>(Tensor<T>, std::vector<Var<T>>, const char*, BackwardFn<T>, bool);               \
  template std::vector<Var<T>> grad<T>(const Var<T>&, const std::vector<Var<T>>&, bool);                       \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                                        \
  template Var<T> sub<T>(const Var<T>&, const Var<T>&);                                                        \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                                        \
  template Var<T> div<T>(const Var<T>&, const Var<T>&);                                                        \
  template Var<T> neg<T>(const Var<T>&);                                                                       \
  template Var<T> scale<T>(const Var<T>&, T);                                                                  \
  template Var<T> add_scalar<T>(const Var<T>&, T);                                                             \
  template Var<T> pow_scalar<T>(const Var<T>&, T);                                                             \
  template Var<T> exp<T>(const Var<T>&);                                                                       \
  template Var<T> log<T>(const Var<T>&);                                                                       \
  template Var<T> sigmoid<T>(const Var<T>&);                                                                   \
  template Var<T> softplus<T>(const Var<T>&);                                                                  \
  template Var<T> clamp<T>(const Var<T>&, T, T);                                                               \
  template Var<T> arccos<T>(const Var<T>&);                                                                    \
  template Var<T> prelu<T>(const Var<T>&, const Var<T>&);                                                      \
  template Var<T> leaky_relu<T>(const Var<T>&, T);                                                             \
  template Var<T> sum_to<T>(const Var<T>&, const Shape&);                                                      \
  template Var<T> broadcast_to<T>(const Var<T>&, const Shape&);                                                \
  template Var<T> sum<T>(const Var<T>&);                                                                       \
  template Var<T> mean<T>(const Var<T>&);                                                                      \
  template Var<T> reshape<T>(const Var<T>&, const Shape&);                                                     \
  template Var<T> transpose<T>(const Var<T>&);                                                                 \
  template Var<T> matmul<T>(const Var<T>&, const Var<T>&);                                                     \
  template Var<T> softmax_last<T>(const Var<T>&);                                                              \
  template Var<T> log_softmax_last<T>(const Var<T>&);                                                          \
  template Var<T> conv1d<T>(const Var<T>&, const Var<T>&, std::size_t, Padding);                               \
  template Var<T> conv1d_input_grad<T>(const Var<T>&, const Var<T>&, std::size_t, std::size_t, std::size_t);   \
  template Var<T> conv1d_weight_grad<T>(const Var<T>&, const Var<T>&, std::size_t, std::size_t, std::size_t);  \
  template Var<T> avgpool1d<T>(const Var<T>&, std::size_t);                                                    \
  template Var<T> avgpool1d_grad<T>(const Var<T>&, std::size_t, std::size_t);                                 \
  template Var<T> concat_last<T>(const std::vector<Var<T>>&);                                                  \
  template Var<T> slice_last<T>(const Var<T>&, std::size_t, std::size_t);                                      \
  template Var<T> pad_last<T>(const Var<T>&, std::size_t, std::size_t);                                        \
  template BatchNormResult<T> batch_norm_train<T>(const Var<T>&, const Var<T>&, const Var<T>&, T);             \
  template Var<T> dot<T>(const Var<T>&, const Var<T>&);                                                        \
  template Var<T> l2_norm<T>(const Var<T>&);

SPECMIX_INSTANTIATE(float)
SPECMIX_INSTANTIATE(double)

#undef SPECMIX_INSTANTIATE

}  // namespace specmix::ag
