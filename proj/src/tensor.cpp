#include "interrogate/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace interrogate {

int64_t shape_size(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

// ---- Tensor ----

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->data.assign(static_cast<size_t>(shape_size(shape)), value);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data,
                         bool requires_grad) {
  if (shape_size(shape) != static_cast<int64_t>(data.size()))
    throw ShapeError("from_data: " + shape_str(shape) + " does not hold " +
                     std::to_string(data.size()) + " values");
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on non-scalar tensor");
  return impl_->data[0];
}

std::vector<double>& Tensor::grad() const {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

// ---- Tape ----

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape::Tape() : prev_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(const char* op, Tensor output,
                  std::function<void()> backward) {
  nodes_.push_back(Node{op, std::move(output), std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1)
    throw ContractError("backward: loss must be a scalar");
  if (nodes_.empty()) throw ContractError("backward: empty graph");
  loss.impl()->grad.assign(1, 1.0);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (!it->output.has_grad()) continue;  // not on a path to the loss
    it->backward();
  }
}

// ---- MAC meter ----

namespace macmeter {
namespace {
thread_local bool g_on = false;
thread_local uint64_t g_count = 0;
}  // namespace
void enable() { g_on = true; }
void disable() { g_on = false; }
bool enabled() { return g_on; }
uint64_t count() { return g_count; }
void reset() { g_count = 0; }
}  // namespace macmeter

// ---- op plumbing ----

namespace {

void check_finite(const char* op, const std::vector<double>& v) {
  for (double x : v) {
    if (!std::isfinite(x))
      throw NumericError(std::string(op) + ": non-finite output");
  }
}

bool any_requires_grad(std::initializer_list<Tensor> ts) {
  for (const auto& t : ts)
    if (t.defined() && t.requires_grad()) return true;
  return false;
}

Tensor finish(const char* op, Tensor out, std::initializer_list<Tensor> inputs,
              std::function<void()> backward) {
  check_finite(op, out.data());
  if (any_requires_grad(inputs)) {
    out.set_requires_grad(true);
    if (Tape* t = Tape::active()) t->record(op, out, std::move(backward));
  }
  return out;
}

// rhs may broadcast over leading extents: its shape must be a suffix of lhs.
void check_elementwise(const char* op, const Shape& a, const Shape& b) {
  if (a.size() < b.size())
    throw ShapeError(std::string(op) + ": lhs " + shape_str(a) +
                     " smaller than rhs " + shape_str(b));
  const size_t off = a.size() - b.size();
  for (size_t i = 0; i < b.size(); ++i)
    if (a[off + i] != b[i])
      throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " +
                       shape_str(b) + " incompatible");
}

// Views a tensor as [outer, n, inner] around `axis`.
struct AxisView {
  int64_t outer = 1, n = 1, inner = 1;
};

AxisView axis_view(const Shape& s, int axis) {
  AxisView v;
  v.n = s[static_cast<size_t>(axis)];
  for (int i = 0; i < axis; ++i) v.outer *= s[static_cast<size_t>(i)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i)
    v.inner *= s[i];
  return v;
}

void check_axis(const char* op, const Shape& s, int axis) {
  if (axis < 0 || axis >= static_cast<int>(s.size()))
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for " + shape_str(s));
}

template <bool kCount>
void mm_kernel(const double* a, const double* b, double* out, int64_t m,
               int64_t k, int64_t n, uint64_t& macs) {
  for (int64_t i = 0; i < m; ++i) {
    double* orow = out + i * n;
    for (int64_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      const double* brow = b + p * n;
      for (int64_t j = 0; j < n; ++j) {
        orow[j] += av * brow[j];
        if constexpr (kCount) ++macs;
      }
    }
  }
}

void mm(const double* a, const double* b, double* out, int64_t m, int64_t k,
        int64_t n) {
  if (macmeter::enabled()) {
    uint64_t macs = 0;
    mm_kernel<true>(a, b, out, m, k, n, macs);
    macmeter::g_count += macs;
  } else {
    uint64_t macs = 0;
    mm_kernel<false>(a, b, out, m, k, n, macs);
  }
}

// out[i,p] += sum_j g[i,j] * b[p,j]   (g [m,n], b [k,n] -> [m,k])
void mm_nt(const double* g, const double* b, double* out, int64_t m, int64_t k,
           int64_t n) {
  for (int64_t i = 0; i < m; ++i)
    for (int64_t p = 0; p < k; ++p) {
      double acc = 0.0;
      const double* grow = g + i * n;
      const double* brow = b + p * n;
      for (int64_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      out[i * k + p] += acc;
    }
}

// out[p,j] += sum_i a[i,p] * g[i,j]   (a [m,k], g [m,n] -> [k,n])
void mm_tn(const double* a, const double* g, double* out, int64_t m, int64_t k,
           int64_t n) {
  for (int64_t i = 0; i < m; ++i)
    for (int64_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      const double* grow = g + i * n;
      double* orow = out + p * n;
      for (int64_t j = 0; j < n; ++j) orow[j] += av * grow[j];
    }
}

}  // namespace

// ---- elementwise ----

static Tensor binary_op(const char* name, const Tensor& a, const Tensor& b,
                        double sign_b) {
  check_elementwise(name, a.shape(), b.shape());
  const int64_t nb = b.size();
  const int64_t rep = a.size() / nb;
  std::vector<double> out(a.data());
  for (int64_t r = 0; r < rep; ++r)
    for (int64_t i = 0; i < nb; ++i) out[r * nb + i] += sign_b * b.data()[i];
  Tensor res = Tensor::from_data(a.shape(), std::move(out));
  return finish(name, res, {a, b}, [a, b, res, rep, nb, sign_b]() {
    const auto& g = res.grad();
    if (a.requires_grad()) {
      auto& ga = a.grad();
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      auto& gb = b.grad();
      for (int64_t r = 0; r < rep; ++r)
        for (int64_t i = 0; i < nb; ++i) gb[i] += sign_b * g[r * nb + i];
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) { return binary_op("add", a, b, 1.0); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op("sub", a, b, -1.0); }

Tensor mul(const Tensor& a, const Tensor& b) {
  check_elementwise("mul", a.shape(), b.shape());
  const int64_t nb = b.size();
  const int64_t rep = a.size() / nb;
  std::vector<double> out(static_cast<size_t>(a.size()));
  for (int64_t r = 0; r < rep; ++r)
    for (int64_t i = 0; i < nb; ++i)
      out[r * nb + i] = a.data()[r * nb + i] * b.data()[i];
  Tensor res = Tensor::from_data(a.shape(), std::move(out));
  return finish("mul", res, {a, b}, [a, b, res, rep, nb]() {
    const auto& g = res.grad();
    if (a.requires_grad()) {
      auto& ga = a.grad();
      for (int64_t r = 0; r < rep; ++r)
        for (int64_t i = 0; i < nb; ++i)
          ga[r * nb + i] += g[r * nb + i] * b.data()[i];
    }
    if (b.requires_grad()) {
      auto& gb = b.grad();
      for (int64_t r = 0; r < rep; ++r)
        for (int64_t i = 0; i < nb; ++i)
          gb[i] += g[r * nb + i] * a.data()[r * nb + i];
    }
  });
}

Tensor add_scalar(const Tensor& a, double c) {
  std::vector<double> out(a.data());
  for (auto& v : out) v += c;
  Tensor res = Tensor::from_data(a.shape(), std::move(out));
  return finish("add_scalar", res, {a}, [a, res]() {
    if (!a.requires_grad()) return;
    const auto& g = res.grad();
    auto& ga = a.grad();
    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Tensor mul_scalar(const Tensor& a, double c) {
  std::vector<double> out(a.data());
  for (auto& v : out) v *= c;
  Tensor res = Tensor::from_data(a.shape(), std::move(out));
  return finish("mul_scalar", res, {a}, [a, res, c]() {
    if (!a.requires_grad()) return;
    const auto& g = res.grad();
    auto& ga = a.grad();
    for (size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
  });
}

// ---- matmul / transpose ----

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() == 2 && sb.size() == 2) {
    if (sa[1] != sb[0])
      throw ShapeError("matmul: inner dims disagree " + shape_str(sa) + " x " +
                       shape_str(sb));
    const int64_t m = sa[0], k = sa[1], n = sb[1];
    Tensor res = Tensor::zeros({sa[0], sb[1]});
    mm(a.data().data(), b.data().data(), res.data().data(), m, k, n);
    res = finish("matmul", res, {a, b}, [a, b, res, m, k, n]() {
      const auto& g = res.grad();
      if (a.requires_grad())
        mm_nt(g.data(), b.data().data(), a.grad().data(), m, k, n);
      if (b.requires_grad())
        mm_tn(a.data().data(), g.data(), b.grad().data(), m, k, n);
    });
    return res;
  }
  if (sa.size() == 3 && (sb.size() == 2 || sb.size() == 3)) {
    const bool batched_b = sb.size() == 3;
    if (batched_b && sb[0] != sa[0])
      throw ShapeError("matmul: batch dims disagree");
    const int64_t bs = sa[0], m = sa[1], k = sa[2];
    const int64_t kb = batched_b ? sb[1] : sb[0];
    const int64_t n = batched_b ? sb[2] : sb[1];
    if (k != kb)
      throw ShapeError("matmul: inner dims disagree " + shape_str(sa) + " x " +
                       shape_str(sb));
    Tensor res = Tensor::zeros({sa[0], static_cast<int>(m), static_cast<int>(n)});
    for (int64_t i = 0; i < bs; ++i)
      mm(a.data().data() + i * m * k,
         b.data().data() + (batched_b ? i * k * n : 0),
         res.data().data() + i * m * n, m, k, n);
    res = finish("matmul", res, {a, b}, [a, b, res, bs, m, k, n, batched_b]() {
      const auto& g = res.grad();
      for (int64_t i = 0; i < bs; ++i) {
        const double* gi = g.data() + i * m * n;
        const double* ai = a.data().data() + i * m * k;
        const double* bi = b.data().data() + (batched_b ? i * k * n : 0);
        if (a.requires_grad())
          mm_nt(gi, bi, a.grad().data() + i * m * k, m, k, n);
        if (b.requires_grad())
          mm_tn(ai, gi, b.grad().data() + (batched_b ? i * k * n : 0), m, k, n);
      }
    });
    return res;
  }
  throw ShapeError("matmul: unsupported ranks " + shape_str(sa) + " x " +
                   shape_str(sb));
}

Tensor transpose2(const Tensor& a) {
  const Shape& s = a.shape();
  if (s.size() != 2 && s.size() != 3)
    throw ShapeError("transpose2: expects 2-D or 3-D, got " + shape_str(s));
  const int64_t bs = s.size() == 3 ? s[0] : 1;
  const int64_t m = s[s.size() - 2], n = s[s.size() - 1];
  Shape os = s;
  std::swap(os[os.size() - 2], os[os.size() - 1]);
  Tensor res = Tensor::zeros(os);
  for (int64_t b = 0; b < bs; ++b)
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j)
        res.data()[b * m * n + j * m + i] = a.data()[b * m * n + i * n + j];
  return finish("transpose2", res, {a}, [a, res, bs, m, n]() {
    if (!a.requires_grad()) return;
    const auto& g = res.grad();
    auto& ga = a.grad();
    for (int64_t b = 0; b < bs; ++b)
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j)
          ga[b * m * n + i * n + j] += g[b * m * n + j * m + i];
  });
}

// ---- conv / pool ----

namespace {

void conv_forward_fast(const double* x, const double* w, double* out,
                       int64_t bs, int64_t ci, int64_t co, int64_t h,
                       int64_t wd, int64_t k) {
  const int64_t p = k / 2;
  for (int64_t b = 0; b < bs; ++b)
    for (int64_t o = 0; o < co; ++o) {
      double* oplane = out + (b * co + o) * h * wd;
      for (int64_t c = 0; c < ci; ++c) {
        const double* xplane = x + (b * ci + c) * h * wd;
        const double* wk = w + (o * ci + c) * k * k;
        for (int64_t ky = 0; ky < k; ++ky)
          for (int64_t kx = 0; kx < k; ++kx) {
            const double wv = wk[ky * k + kx];
            const int64_t y0 = std::max<int64_t>(0, p - ky);
            const int64_t y1 = std::min(h, h + p - ky);
            const int64_t x0 = std::max<int64_t>(0, p - kx);
            const int64_t x1 = std::min(wd, wd + p - kx);
            for (int64_t oy = y0; oy < y1; ++oy) {
              const double* xrow = xplane + (oy + ky - p) * wd + (kx - p);
              double* orow = oplane + oy * wd;
              for (int64_t ox = x0; ox < x1; ++ox) orow[ox] += wv * xrow[ox];
            }
          }
      }
    }
}

// Counting variant performs the textbook zero-padded convolution so the
// meter sees one multiply per (output position, tap), matching the
// k^2 * H * W accounting convention.
void conv_forward_counted(const double* x, const double* w, double* out,
                          int64_t bs, int64_t ci, int64_t co, int64_t h,
                          int64_t wd, int64_t k, uint64_t& macs) {
  const int64_t p = k / 2;
  for (int64_t b = 0; b < bs; ++b)
    for (int64_t o = 0; o < co; ++o)
      for (int64_t oy = 0; oy < h; ++oy)
        for (int64_t ox = 0; ox < wd; ++ox) {
          double acc = 0.0;
          for (int64_t c = 0; c < ci; ++c)
            for (int64_t ky = 0; ky < k; ++ky)
              for (int64_t kx = 0; kx < k; ++kx) {
                const int64_t iy = oy + ky - p, ix = ox + kx - p;
                const double xv =
                    (iy < 0 || iy >= h || ix < 0 || ix >= wd)
                        ? 0.0
                        : x[((b * ci + c) * h + iy) * wd + ix];
                acc += w[((o * ci + c) * k + ky) * k + kx] * xv;
                ++macs;
              }
          out[((b * co + o) * h + oy) * wd + ox] += acc;
        }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias) {
  const Shape& sx = x.shape();
  const Shape& sw = w.shape();
  if (sx.size() != 4 || sw.size() != 4)
    throw ShapeError("conv2d: expects x [B,C,H,W], w [Co,Ci,k,k]");
  if (sx[1] != sw[1])
    throw ShapeError("conv2d: input channels disagree " + shape_str(sx) +
                     " vs " + shape_str(sw));
  if (sw[2] != sw[3] || sw[2] % 2 == 0)
    throw ShapeError("conv2d: kernel must be square and odd");
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != sw[0]))
    throw ShapeError("conv2d: bias shape mismatch");
  const int64_t bs = sx[0], ci = sx[1], h = sx[2], wd = sx[3];
  const int64_t co = sw[0], k = sw[2];

  Tensor res = Tensor::zeros({sx[0], sw[0], sx[2], sx[3]});
  if (bias.defined()) {
    for (int64_t b = 0; b < bs; ++b)
      for (int64_t o = 0; o < co; ++o)
        std::fill_n(res.data().begin() + (b * co + o) * h * wd, h * wd,
                    bias.data()[static_cast<size_t>(o)]);
  }
  if (macmeter::enabled()) {
    uint64_t macs = 0;
    conv_forward_counted(x.data().data(), w.data().data(), res.data().data(),
                         bs, ci, co, h, wd, k, macs);
    macmeter::g_count += macs;
  } else {
    conv_forward_fast(x.data().data(), w.data().data(), res.data().data(), bs,
                      ci, co, h, wd, k);
  }

  return finish("conv2d", res, {x, w, bias}, [x, w, bias, res, bs, ci, co, h,
                                              wd, k]() {
    const auto& g = res.grad();
    const int64_t p = k / 2;
    const bool need_x = x.requires_grad();
    const bool need_w = w.requires_grad();
    for (int64_t b = 0; b < bs; ++b)
      for (int64_t o = 0; o < co; ++o) {
        const double* gplane = g.data() + (b * co + o) * h * wd;
        for (int64_t c = 0; c < ci; ++c) {
          const double* xplane = x.data().data() + (b * ci + c) * h * wd;
          for (int64_t ky = 0; ky < k; ++ky)
            for (int64_t kx = 0; kx < k; ++kx) {
              const int64_t widx = ((o * ci + c) * k + ky) * k + kx;
              const int64_t y0 = std::max<int64_t>(0, p - ky);
              const int64_t y1 = std::min(h, h + p - ky);
              const int64_t x0 = std::max<int64_t>(0, p - kx);
              const int64_t x1 = std::min(wd, wd + p - kx);
              if (need_x) {
                const double wv = w.data()[static_cast<size_t>(widx)];
                double* gxplane = x.grad().data() + (b * ci + c) * h * wd;
                for (int64_t oy = y0; oy < y1; ++oy) {
                  double* gxrow = gxplane + (oy + ky - p) * wd + (kx - p);
                  const double* grow = gplane + oy * wd;
                  for (int64_t ox = x0; ox < x1; ++ox)
                    gxrow[ox] += wv * grow[ox];
                }
              }
              if (need_w) {
                double wacc = 0.0;
                for (int64_t oy = y0; oy < y1; ++oy) {
                  const double* xrow = xplane + (oy + ky - p) * wd + (kx - p);
                  const double* grow = gplane + oy * wd;
                  for (int64_t ox = x0; ox < x1; ++ox)
                    wacc += grow[ox] * xrow[ox];
                }
                w.grad()[static_cast<size_t>(widx)] += wacc;
              }
            }
        }
      }
    if (bias.defined() && bias.requires_grad()) {
      auto& gb = bias.grad();
      for (int64_t b = 0; b < bs; ++b)
        for (int64_t o = 0; o < co; ++o) {
          const double* gplane = g.data() + (b * co + o) * h * wd;
          double acc = 0.0;
          for (int64_t i = 0; i < h * wd; ++i) acc += gplane[i];
          gb[static_cast<size_t>(o)] += acc;
        }
    }
  });
}

Tensor avg_pool2(const Tensor& x) {
  const Shape& s = x.shape();
  if (s.size() != 4) throw ShapeError("avg_pool2: expects [B,C,H,W]");
  if (s[2] % 2 != 0 || s[3] % 2 != 0)
    throw ShapeError("avg_pool2: spatial dims must be even, got " +
                     shape_str(s));
  const int64_t bc = static_cast<int64_t>(s[0]) * s[1];
  const int64_t h = s[2], w = s[3], oh = h / 2, ow = w / 2;
  Tensor res = Tensor::zeros({s[0], s[1], s[2] / 2, s[3] / 2});
  for (int64_t p = 0; p < bc; ++p) {
    const double* xp = x.data().data() + p * h * w;
    double* op = res.data().data() + p * oh * ow;
    for (int64_t oy = 0; oy < oh; ++oy)
      for (int64_t ox = 0; ox < ow; ++ox) {
        const double* r0 = xp + 2 * oy * w + 2 * ox;
        op[oy * ow + ox] = 0.25 * (r0[0] + r0[1] + r0[w] + r0[w + 1]);
      }
  }
  return finish("avg_pool2", res, {x}, [x, res, bc, h, w, oh, ow]() {
    if (!x.requires_grad()) return;
    const auto& g = res.grad();
    auto& gx = x.grad();
    for (int64_t p = 0; p < bc; ++p) {
      double* gp = gx.data() + p * h * w;
      const double* gop = g.data() + p * oh * ow;
      for (int64_t oy = 0; oy < oh; ++oy)
        for (int64_t ox = 0; ox < ow; ++ox) {
          const double v = 0.25 * gop[oy * ow + ox];
          double* r0 = gp + 2 * oy * w + 2 * ox;
          r0[0] += v;
          r0[1] += v;
          r0[w] += v;
          r0[w + 1] += v;
        }
    }
  });
}

// ---- nonlinearities ----

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.data());
  for (auto& v : out) v = v > 0.0 ? v : 0.0;
  Tensor res = Tensor::from_data(x.shape(), std::move(out));
  return finish("relu", res, {x}, [x, res]() {
    if (!x.requires_grad()) return;
    const auto& g = res.grad();
    auto& gx = x.grad();
    for (size_t i = 0; i < g.size(); ++i)
      if (x.data()[i] > 0.0) gx[i] += g[i];
  });
}

Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.data().size());
  for (size_t i = 0; i < out.size(); ++i) {
    const double v = x.data()[i];
    if (v >= 0.0) {
      out[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      out[i] = e / (1.0 + e);
    }
  }
  Tensor res = Tensor::from_data(x.shape(), std::move(out));
  return finish("sigmoid", res, {x}, [x, res]() {
    if (!x.requires_grad()) return;
    const auto& g = res.grad();
    auto& gx = x.grad();
    for (size_t i = 0; i < g.size(); ++i) {
      const double s = res.data()[i];
      gx[i] += g[i] * s * (1.0 - s);
    }
  });
}

Tensor softmax(const Tensor& x, int axis) {
  check_axis("softmax", x.shape(), axis);
  const AxisView v = axis_view(x.shape(), axis);
  std::vector<double> out(x.data().size());
  for (int64_t o = 0; o < v.outer; ++o)
    for (int64_t in = 0; in < v.inner; ++in) {
      const int64_t base = o * v.n * v.inner + in;
      double mx = x.data()[static_cast<size_t>(base)];
      for (int64_t c = 1; c < v.n; ++c)
        mx = std::max(mx, x.data()[static_cast<size_t>(base + c * v.inner)]);
      double denom = 0.0;
      for (int64_t c = 0; c < v.n; ++c) {
        const double e =
            std::exp(x.data()[static_cast<size_t>(base + c * v.inner)] - mx);
        out[static_cast<size_t>(base + c * v.inner)] = e;
        denom += e;
      }
      for (int64_t c = 0; c < v.n; ++c)
        out[static_cast<size_t>(base + c * v.inner)] /= denom;
    }
  Tensor res = Tensor::from_data(x.shape(), std::move(out));
  return finish("softmax", res, {x}, [x, res, v]() {
    if (!x.requires_grad()) return;
    const auto& g = res.grad();
    auto& gx = x.grad();
    for (int64_t o = 0; o < v.outer; ++o)
      for (int64_t in = 0; in < v.inner; ++in) {
        const int64_t base = o * v.n * v.inner + in;
        double dot = 0.0;
        for (int64_t c = 0; c < v.n; ++c) {
          const size_t i = static_cast<size_t>(base + c * v.inner);
          dot += g[i] * res.data()[i];
        }
        for (int64_t c = 0; c < v.n; ++c) {
          const size_t i = static_cast<size_t>(base + c * v.inner);
          gx[i] += res.data()[i] * (g[i] - dot);
        }
      }
  });
}

// ---- reductions ----

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  Tensor res = Tensor::scalar(acc);
  return finish("sum", res, {x}, [x, res]() {
    if (!x.requires_grad()) return;
    const double g = res.grad()[0];
    auto& gx = x.grad();
    for (auto& v : gx) v += g;
  });
}

Tensor mean(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  const double inv = 1.0 / static_cast<double>(x.size());
  Tensor res = Tensor::scalar(acc * inv);
  return finish("mean", res, {x}, [x, res, inv]() {
    if (!x.requires_grad()) return;
    const double g = res.grad()[0] * inv;
    auto& gx = x.grad();
    for (auto& v : gx) v += g;
  });
}

Tensor sum_axis(const Tensor& x, int axis) {
  check_axis("sum_axis", x.shape(), axis);
  const AxisView v = axis_view(x.shape(), axis);
  Shape os;
  for (int i = 0; i < static_cast<int>(x.shape().size()); ++i)
    if (i != axis) os.push_back(x.shape()[static_cast<size_t>(i)]);
  if (os.empty()) os.push_back(1);
  Tensor res = Tensor::zeros(os);
  for (int64_t o = 0; o < v.outer; ++o)
    for (int64_t c = 0; c < v.n; ++c)
      for (int64_t in = 0; in < v.inner; ++in)
        res.data()[static_cast<size_t>(o * v.inner + in)] +=
            x.data()[static_cast<size_t>((o * v.n + c) * v.inner + in)];
  return finish("sum_axis", res, {x}, [x, res, v]() {
    if (!x.requires_grad()) return;
    const auto& g = res.grad();
    auto& gx = x.grad();
    for (int64_t o = 0; o < v.outer; ++o)
      for (int64_t c = 0; c < v.n; ++c)
        for (int64_t in = 0; in < v.inner; ++in)
          gx[static_cast<size_t>((o * v.n + c) * v.inner + in)] +=
              g[static_cast<size_t>(o * v.inner + in)];
  });
}

Tensor max_with(const Tensor& x, double c) {
  std::vector<double> out(x.data());
  for (auto& v : out) v = v > c ? v : c;
  Tensor res = Tensor::from_data(x.shape(), std::move(out));
  return finish("max_with", res, {x}, [x, res, c]() {
    if (!x.requires_grad()) return;
    const auto& g = res.grad();
    auto& gx = x.grad();
    for (size_t i = 0; i < g.size(); ++i)
      if (x.data()[i] > c) gx[i] += g[i];
  });
}

// ---- shape ops ----

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_size(shape) != x.size())
    throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " +
                     shape_str(shape) + " changes element count");
  Tensor res = Tensor::from_data(std::move(shape), x.data());
  return finish("reshape", res, {x}, [x, res]() {
    if (!x.requires_grad()) return;
    const auto& g = res.grad();
    auto& gx = x.grad();
    for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Tensor concat(const std::vector<Tensor>& xs, int axis) {
  if (xs.empty()) throw ContractError("concat: empty input list");
  check_axis("concat", xs[0].shape(), axis);
  Shape os = xs[0].shape();
  int total = 0;
  for (const auto& t : xs) {
    Shape s = t.shape();
    if (s.size() != os.size()) throw ShapeError("concat: rank mismatch");
    for (size_t i = 0; i < s.size(); ++i)
      if (static_cast<int>(i) != axis && s[i] != os[i])
        throw ShapeError("concat: shapes differ off-axis");
    total += s[static_cast<size_t>(axis)];
  }
  os[static_cast<size_t>(axis)] = total;
  const AxisView vo = axis_view(os, axis);
  Tensor res = Tensor::zeros(os);
  int64_t off = 0;
  for (const auto& t : xs) {
    const int64_t n = t.shape()[static_cast<size_t>(axis)];
    for (int64_t o = 0; o < vo.outer; ++o)
      for (int64_t c = 0; c < n; ++c)
        std::copy_n(
            t.data().begin() + (o * n + c) * vo.inner, vo.inner,
            res.data().begin() + (o * vo.n + off + c) * vo.inner);
    off += n;
  }
  std::vector<Tensor> inputs = xs;
  std::vector<int64_t> extents;
  for (const auto& t : xs)
    extents.push_back(t.shape()[static_cast<size_t>(axis)]);
  bool rg = false;
  for (const auto& t : xs) rg = rg || t.requires_grad();
  check_finite("concat", res.data());
  if (rg) {
    res.set_requires_grad(true);
    if (Tape* tape = Tape::active())
      tape->record("concat", res, [inputs, extents, res, vo]() {
        const auto& g = res.grad();
        int64_t off = 0;
        for (size_t ti = 0; ti < inputs.size(); ++ti) {
          const Tensor& t = inputs[ti];
          const int64_t n = extents[ti];
          if (t.requires_grad()) {
            auto& gt = t.grad();
            for (int64_t o = 0; o < vo.outer; ++o)
              for (int64_t c = 0; c < n; ++c)
                for (int64_t in = 0; in < vo.inner; ++in)
                  gt[static_cast<size_t>((o * n + c) * vo.inner + in)] +=
                      g[static_cast<size_t>((o * vo.n + off + c) * vo.inner +
                                            in)];
          }
          off += n;
        }
      });
  }
  return res;
}

Tensor slice(const Tensor& x, int axis, int start, int stop) {
  check_axis("slice", x.shape(), axis);
  const int n = x.shape()[static_cast<size_t>(axis)];
  if (start < 0 || stop > n || start >= stop)
    throw ShapeError("slice: range [" + std::to_string(start) + "," +
                     std::to_string(stop) + ") invalid for axis of extent " +
                     std::to_string(n));
  const AxisView v = axis_view(x.shape(), axis);
  Shape os = x.shape();
  os[static_cast<size_t>(axis)] = stop - start;
  Tensor res = Tensor::zeros(os);
  const int64_t m = stop - start;
  for (int64_t o = 0; o < v.outer; ++o)
    for (int64_t c = 0; c < m; ++c)
      std::copy_n(x.data().begin() + (o * v.n + start + c) * v.inner, v.inner,
                  res.data().begin() + (o * m + c) * v.inner);
  return finish("slice", res, {x}, [x, res, v, start, m]() {
    if (!x.requires_grad()) return;
    const auto& g = res.grad();
    auto& gx = x.grad();
    for (int64_t o = 0; o < v.outer; ++o)
      for (int64_t c = 0; c < m; ++c)
        for (int64_t in = 0; in < v.inner; ++in)
          gx[static_cast<size_t>((o * v.n + start + c) * v.inner + in)] +=
              g[static_cast<size_t>((o * m + c) * v.inner + in)];
  });
}

// ---- gating / mixing ----

Tensor scale_axis(const Tensor& x, const Tensor& v, int axis) {
  check_axis("scale_axis", x.shape(), axis);
  if (v.ndim() != 1 || v.dim(0) != x.shape()[static_cast<size_t>(axis)])
    throw ShapeError("scale_axis: vector length must match axis extent");
  const AxisView av = axis_view(x.shape(), axis);
  std::vector<double> out(x.data().size());
  uint64_t macs = 0;
  const bool counting = macmeter::enabled();
  for (int64_t o = 0; o < av.outer; ++o)
    for (int64_t c = 0; c < av.n; ++c) {
      const double vc = v.data()[static_cast<size_t>(c)];
      const int64_t base = (o * av.n + c) * av.inner;
      for (int64_t in = 0; in < av.inner; ++in) {
        out[static_cast<size_t>(base + in)] =
            vc * x.data()[static_cast<size_t>(base + in)];
        if (counting) ++macs;
      }
    }
  if (counting) macmeter::g_count += macs;
  Tensor res = Tensor::from_data(x.shape(), std::move(out));
  return finish("scale_axis", res, {x, v}, [x, v, res, av]() {
    const auto& g = res.grad();
    if (x.requires_grad()) {
      auto& gx = x.grad();
      for (int64_t o = 0; o < av.outer; ++o)
        for (int64_t c = 0; c < av.n; ++c) {
          const double vc = v.data()[static_cast<size_t>(c)];
          const int64_t base = (o * av.n + c) * av.inner;
          for (int64_t in = 0; in < av.inner; ++in)
            gx[static_cast<size_t>(base + in)] +=
                vc * g[static_cast<size_t>(base + in)];
        }
    }
    if (v.requires_grad()) {
      auto& gv = v.grad();
      for (int64_t o = 0; o < av.outer; ++o)
        for (int64_t c = 0; c < av.n; ++c) {
          const int64_t base = (o * av.n + c) * av.inner;
          double acc = 0.0;
          for (int64_t in = 0; in < av.inner; ++in)
            acc += g[static_cast<size_t>(base + in)] *
                   x.data()[static_cast<size_t>(base + in)];
          gv[static_cast<size_t>(c)] += acc;
        }
    }
  });
}

Tensor gate_mix(const Tensor& mask, const Tensor& task, const Tensor& shared,
                int axis) {
  if (task.shape() != shared.shape())
    throw ShapeError("gate_mix: task/shared shapes differ: " +
                     shape_str(task.shape()) + " vs " +
                     shape_str(shared.shape()));
  check_axis("gate_mix", task.shape(), axis);
  if (mask.ndim() != 1 || mask.dim(0) != task.shape()[static_cast<size_t>(axis)])
    throw ShapeError("gate_mix: mask length must match axis extent");
  const AxisView v = axis_view(task.shape(), axis);
  std::vector<double> out(task.data().size());
  for (int64_t o = 0; o < v.outer; ++o)
    for (int64_t c = 0; c < v.n; ++c) {
      const bool take_task = mask.data()[static_cast<size_t>(c)] != 0.0;
      const int64_t base = (o * v.n + c) * v.inner;
      const auto& src = take_task ? task.data() : shared.data();
      std::copy_n(src.begin() + base, v.inner, out.begin() + base);
    }
  Tensor res = Tensor::from_data(task.shape(), std::move(out));
  return finish("gate_mix", res, {mask, task, shared}, [mask, task, shared,
                                                        res, v]() {
    const auto& g = res.grad();
    if (task.requires_grad() || shared.requires_grad()) {
      for (int64_t o = 0; o < v.outer; ++o)
        for (int64_t c = 0; c < v.n; ++c) {
          const bool take_task = mask.data()[static_cast<size_t>(c)] != 0.0;
          const Tensor& dst = take_task ? task : shared;
          if (!dst.requires_grad()) continue;
          auto& gd = dst.grad();
          const int64_t base = (o * v.n + c) * v.inner;
          for (int64_t in = 0; in < v.inner; ++in)
            gd[static_cast<size_t>(base + in)] +=
                g[static_cast<size_t>(base + in)];
        }
    }
    if (mask.requires_grad()) {
      // Jacobian of the algebraic form m*task + (1-m)*shared.
      auto& gm = mask.grad();
      for (int64_t o = 0; o < v.outer; ++o)
        for (int64_t c = 0; c < v.n; ++c) {
          const int64_t base = (o * v.n + c) * v.inner;
          double acc = 0.0;
          for (int64_t in = 0; in < v.inner; ++in) {
            const size_t i = static_cast<size_t>(base + in);
            acc += (task.data()[i] - shared.data()[i]) * g[i];
          }
          gm[static_cast<size_t>(c)] += acc;
        }
    }
  });
}

Tensor ste_threshold(const Tensor& x, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0))
    throw ContractError("ste_threshold: threshold must lie in (0,1)");
  std::vector<double> out(x.data().size());
  for (size_t i = 0; i < out.size(); ++i)
    out[i] = x.data()[i] > threshold ? 1.0 : 0.0;
  Tensor res = Tensor::from_data(x.shape(), std::move(out));
  return finish("ste_threshold", res, {x}, [x, res]() {
    if (!x.requires_grad()) return;
    const auto& g = res.grad();
    auto& gx = x.grad();
    for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

// ---- normalization ----

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift,
                  double eps) {
  const int c = x.shape().back();
  if (gain.ndim() != 1 || gain.dim(0) != c || shift.ndim() != 1 ||
      shift.dim(0) != c)
    throw ShapeError("layer_norm: gain/shift must match last axis");
  const int64_t rows = x.size() / c;
  std::vector<double> out(x.data().size());
  auto xhat = std::make_shared<std::vector<double>>(x.data().size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = x.data().data() + r * c;
    double mu = 0.0;
    for (int i = 0; i < c; ++i) mu += xr[i];
    mu /= c;
    double var = 0.0;
    for (int i = 0; i < c; ++i) var += (xr[i] - mu) * (xr[i] - mu);
    var /= c;
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[static_cast<size_t>(r)] = is;
    for (int i = 0; i < c; ++i) {
      const double xh = (xr[i] - mu) * is;
      (*xhat)[static_cast<size_t>(r * c + i)] = xh;
      out[static_cast<size_t>(r * c + i)] =
          gain.data()[static_cast<size_t>(i)] * xh +
          shift.data()[static_cast<size_t>(i)];
    }
  }
  Tensor res = Tensor::from_data(x.shape(), std::move(out));
  return finish("layer_norm", res, {x, gain, shift}, [x, gain, shift, res,
                                                      rows, c, xhat,
                                                      inv_std]() {
    const auto& g = res.grad();
    for (int64_t r = 0; r < rows; ++r) {
      const double* gr = g.data() + r * c;
      const double* xh = xhat->data() + r * c;
      if (gain.requires_grad()) {
        auto& gg = gain.grad();
        for (int i = 0; i < c; ++i) gg[static_cast<size_t>(i)] += gr[i] * xh[i];
      }
      if (shift.requires_grad()) {
        auto& gs = shift.grad();
        for (int i = 0; i < c; ++i) gs[static_cast<size_t>(i)] += gr[i];
      }
      if (x.requires_grad()) {
        const double is = (*inv_std)[static_cast<size_t>(r)];
        double m1 = 0.0, m2 = 0.0;
        for (int i = 0; i < c; ++i) {
          const double gd = gr[i] * gain.data()[static_cast<size_t>(i)];
          m1 += gd;
          m2 += gd * xh[i];
        }
        m1 /= c;
        m2 /= c;
        auto& gx = x.grad();
        for (int i = 0; i < c; ++i) {
          const double gd = gr[i] * gain.data()[static_cast<size_t>(i)];
          gx[static_cast<size_t>(r * c + i)] += is * (gd - m1 - xh[i] * m2);
        }
      }
    }
  });
}

// ---- losses ----

Tensor cross_entropy_logits(const Tensor& logits,
                            const std::vector<int>& labels) {
  if (logits.ndim() != 2) throw ShapeError("cross_entropy: logits must be 2-D");
  const int64_t bs = logits.dim(0), k = logits.dim(1);
  if (static_cast<int64_t>(labels.size()) != bs)
    throw ContractError("cross_entropy: label count mismatch");
  auto probs = std::make_shared<std::vector<double>>(logits.data().size());
  double loss = 0.0;
  for (int64_t b = 0; b < bs; ++b) {
    const int y = labels[static_cast<size_t>(b)];
    if (y < 0 || y >= k) throw ContractError("cross_entropy: label out of range");
    const double* lr = logits.data().data() + b * k;
    double mx = lr[0];
    for (int64_t i = 1; i < k; ++i) mx = std::max(mx, lr[i]);
    double denom = 0.0;
    for (int64_t i = 0; i < k; ++i) {
      const double e = std::exp(lr[i] - mx);
      (*probs)[static_cast<size_t>(b * k + i)] = e;
      denom += e;
    }
    for (int64_t i = 0; i < k; ++i)
      (*probs)[static_cast<size_t>(b * k + i)] /= denom;
    loss += std::log(denom) + mx - lr[y];
  }
  Tensor res = Tensor::scalar(loss / static_cast<double>(bs));
  return finish("cross_entropy", res, {logits}, [logits, res, probs, bs, k,
                                                 labels]() {
    if (!logits.requires_grad()) return;
    const double g = res.grad()[0] / static_cast<double>(bs);
    auto& gl = logits.grad();
    for (int64_t b = 0; b < bs; ++b)
      for (int64_t i = 0; i < k; ++i) {
        const size_t idx = static_cast<size_t>(b * k + i);
        const double ind = (i == labels[static_cast<size_t>(b)]) ? 1.0 : 0.0;
        gl[idx] += g * ((*probs)[idx] - ind);
      }
  });
}

static Tensor deviation_loss(const char* name, const Tensor& pred,
                             const Tensor& target, bool squared) {
  if (pred.shape() != target.shape())
    throw ShapeError(std::string(name) + ": shapes differ");
  const double inv = 1.0 / static_cast<double>(pred.size());
  double acc = 0.0;
  for (size_t i = 0; i < pred.data().size(); ++i) {
    const double d = pred.data()[i] - target.data()[i];
    acc += squared ? d * d : std::fabs(d);
  }
  Tensor res = Tensor::scalar(acc * inv);
  return finish(name, res, {pred, target}, [pred, target, res, inv,
                                            squared]() {
    const double g = res.grad()[0] * inv;
    for (size_t i = 0; i < pred.data().size(); ++i) {
      const double d = pred.data()[i] - target.data()[i];
      const double dd = squared ? 2.0 * d : (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0));
      if (pred.requires_grad()) pred.grad()[i] += g * dd;
      if (target.requires_grad()) target.grad()[i] -= g * dd;
    }
  });
}

Tensor l1_loss(const Tensor& pred, const Tensor& target) {
  return deviation_loss("l1_loss", pred, target, false);
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  return deviation_loss("mse_loss", pred, target, true);
}

}  // namespace interrogate
