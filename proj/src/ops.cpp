#include "lantern/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "lantern/errors.hpp"

namespace lantern::ad {

namespace {

using i64 = std::int64_t;

std::vector<i64> strides_of(const Shape& s) {
  std::vector<i64> st(s.size());
  i64 acc = 1;
  for (i64 i = static_cast<i64>(s.size()) - 1; i >= 0; --i) {
    st[static_cast<std::size_t>(i)] = acc;
    acc *= s[static_cast<std::size_t>(i)];
  }
  return st;
}

// Maps flat indices of the output shape onto flat indices of a broadcast
// operand (right-aligned, stretched axes get stride 0).
struct BroadcastMap {
  bool trivial = false;
  std::vector<i64> out_shape;
  std::vector<i64> out_strides;
  std::vector<i64> in_strides;

  i64 operator()(i64 flat) const {
    i64 idx = 0;
    for (std::size_t ax = 0; ax < out_shape.size(); ++ax) {
      const i64 coord = (flat / out_strides[ax]) % out_shape[ax];
      idx += coord * in_strides[ax];
    }
    return idx;
  }
};

bool make_broadcast(const Shape& out, const Shape& in, BroadcastMap& map) {
  if (out == in) {
    map.trivial = true;
    return true;
  }
  if (in.size() > out.size()) return false;
  const std::size_t off = out.size() - in.size();
  const auto in_st = strides_of(in);
  map.in_strides.assign(out.size(), 0);
  for (std::size_t ax = off; ax < out.size(); ++ax) {
    const i64 ie = in[ax - off];
    if (ie == out[ax]) {
      map.in_strides[ax] = in_st[ax - off];
    } else if (ie != 1) {
      return false;
    }
  }
  map.out_shape = out;
  map.out_strides = strides_of(out);
  return true;
}

BroadcastMap binary_map(const char* op, const Tensor& a, const Tensor& b) {
  BroadcastMap map;
  if (!make_broadcast(a.shape(), b.shape(), map)) {
    throw ValidationError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                          " vs " + shape_str(b.shape()));
  }
  return map;
}

bool wants_grad(const Tape& tape, std::initializer_list<Tensor> inputs) {
  if (!tape.recording()) return false;
  for (const auto& t : inputs) {
    if (t.requires_grad()) return true;
  }
  return false;
}

double stable_sigmoid(double x) {
  // Clamped one ulp inside [0,1]: downstream contracts promise outputs
  // strictly inside the open interval even where exp() under/overflows.
  if (x >= 0.0) {
    const double z = std::exp(-x);
    return std::min(1.0 / (1.0 + z), 1.0 - std::numeric_limits<double>::epsilon() / 2.0);
  }
  const double z = std::exp(x);
  return std::max(z / (1.0 + z), std::numeric_limits<double>::min());
}

// c (m x n) += a (m x k) . b (k x n)
void gemm_acc(const double* a, const double* b, double* c, i64 m, i64 k, i64 n) {
  for (i64 i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (i64 p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * n;
      for (i64 j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c (m x n) += a (m x k) . b^T, b stored (n x k)
void gemm_nt_acc(const double* a, const double* b, double* c, i64 m, i64 k, i64 n) {
  for (i64 i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    for (i64 j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double s = 0.0;
      for (i64 p = 0; p < k; ++p) s += arow[p] * brow[p];
      c[i * n + j] += s;
    }
  }
}

// c (m x n) += a^T . b, a stored (k x m), b stored (k x n)
void gemm_tn_acc(const double* a, const double* b, double* c, i64 m, i64 k, i64 n) {
  for (i64 p = 0; p < k; ++p) {
    const double* arow = a + p * m;
    const double* brow = b + p * n;
    for (i64 i = 0; i < m; ++i) {
      const double av = arow[i];
      double* crow = c + i * n;
      for (i64 j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

struct MatmulDims {
  i64 batch, m, k, n;
  bool a_batched, b_batched;
};

MatmulDims matmul_dims(const Tensor& a, const Tensor& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if ((sa.size() != 2 && sa.size() != 3) || (sb.size() != 2 && sb.size() != 3)) {
    throw ValidationError("matmul: operands must be rank 2 or 3, got " + shape_str(sa) +
                          " and " + shape_str(sb));
  }
  MatmulDims d{};
  d.a_batched = sa.size() == 3;
  d.b_batched = sb.size() == 3;
  d.m = sa[sa.size() - 2];
  d.k = sa[sa.size() - 1];
  const i64 bk = sb[sb.size() - 2];
  d.n = sb[sb.size() - 1];
  if (d.k != bk) {
    throw ValidationError("matmul: inner extents disagree, " + shape_str(sa) + " vs " +
                          shape_str(sb));
  }
  d.batch = 1;
  if (d.a_batched && d.b_batched) {
    if (sa[0] != sb[0]) {
      throw ValidationError("matmul: batch extents disagree, " + shape_str(sa) + " vs " +
                            shape_str(sb));
    }
    d.batch = sa[0];
  } else if (d.a_batched) {
    d.batch = sa[0];
  } else if (d.b_batched) {
    d.batch = sb[0];
  }
  return d;
}

}  // namespace

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  const auto map = binary_map("add", a, b);
  Tensor out = Tensor::zeros(a.shape(), wants_grad(tape, {a, b}));
  const auto ad = a.data();
  const auto bd = b.data();
  auto od = out.mutable_data();
  const i64 n = out.size();
  if (map.trivial) {
    for (i64 i = 0; i < n; ++i) od[i] = ad[i] + bd[i];
  } else {
    for (i64 i = 0; i < n; ++i) od[i] = ad[i] + bd[map(i)];
  }
  if (out.requires_grad()) {
    tape.record(out, [a, b, out, map]() mutable {
      const auto g = out.grad();
      const i64 m = out.size();
      if (a.requires_grad()) {
        auto ga = a.mutable_grad();
        for (i64 i = 0; i < m; ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.mutable_grad();
        if (map.trivial) {
          for (i64 i = 0; i < m; ++i) gb[i] += g[i];
        } else {
          for (i64 i = 0; i < m; ++i) gb[map(i)] += g[i];
        }
      }
    });
  }
  return out;
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  const auto map = binary_map("sub", a, b);
  Tensor out = Tensor::zeros(a.shape(), wants_grad(tape, {a, b}));
  const auto ad = a.data();
  const auto bd = b.data();
  auto od = out.mutable_data();
  const i64 n = out.size();
  if (map.trivial) {
    for (i64 i = 0; i < n; ++i) od[i] = ad[i] - bd[i];
  } else {
    for (i64 i = 0; i < n; ++i) od[i] = ad[i] - bd[map(i)];
  }
  if (out.requires_grad()) {
    tape.record(out, [a, b, out, map]() mutable {
      const auto g = out.grad();
      const i64 m = out.size();
      if (a.requires_grad()) {
        auto ga = a.mutable_grad();
        for (i64 i = 0; i < m; ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.mutable_grad();
        if (map.trivial) {
          for (i64 i = 0; i < m; ++i) gb[i] -= g[i];
        } else {
          for (i64 i = 0; i < m; ++i) gb[map(i)] -= g[i];
        }
      }
    });
  }
  return out;
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  const auto map = binary_map("mul", a, b);
  Tensor out = Tensor::zeros(a.shape(), wants_grad(tape, {a, b}));
  const auto ad = a.data();
  const auto bd = b.data();
  auto od = out.mutable_data();
  const i64 n = out.size();
  if (map.trivial) {
    for (i64 i = 0; i < n; ++i) od[i] = ad[i] * bd[i];
  } else {
    for (i64 i = 0; i < n; ++i) od[i] = ad[i] * bd[map(i)];
  }
  if (out.requires_grad()) {
    tape.record(out, [a, b, out, map]() mutable {
      const auto g = out.grad();
      const auto ad2 = a.data();
      const auto bd2 = b.data();
      const i64 m = out.size();
      if (a.requires_grad()) {
        auto ga = a.mutable_grad();
        if (map.trivial) {
          for (i64 i = 0; i < m; ++i) ga[i] += g[i] * bd2[i];
        } else {
          for (i64 i = 0; i < m; ++i) ga[i] += g[i] * bd2[map(i)];
        }
      }
      if (b.requires_grad()) {
        auto gb = b.mutable_grad();
        if (map.trivial) {
          for (i64 i = 0; i < m; ++i) gb[i] += g[i] * ad2[i];
        } else {
          for (i64 i = 0; i < m; ++i) gb[map(i)] += g[i] * ad2[i];
        }
      }
    });
  }
  return out;
}

Tensor scale(Tape& tape, const Tensor& x, double c) {
  Tensor out = Tensor::zeros(x.shape(), wants_grad(tape, {x}));
  const auto xd = x.data();
  auto od = out.mutable_data();
  const i64 n = out.size();
  for (i64 i = 0; i < n; ++i) od[i] = c * xd[i];
  if (out.requires_grad()) {
    tape.record(out, [x, out, c]() mutable {
      const auto g = out.grad();
      auto gx = x.mutable_grad();
      const i64 m = out.size();
      for (i64 i = 0; i < m; ++i) gx[i] += c * g[i];
    });
  }
  return out;
}

Tensor sigmoid(Tape& tape, const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape(), wants_grad(tape, {x}));
  const auto xd = x.data();
  auto od = out.mutable_data();
  const i64 n = out.size();
  for (i64 i = 0; i < n; ++i) od[i] = stable_sigmoid(xd[i]);
  if (out.requires_grad()) {
    tape.record(out, [x, out]() mutable {
      const auto g = out.grad();
      const auto y = out.data();
      auto gx = x.mutable_grad();
      const i64 m = out.size();
      for (i64 i = 0; i < m; ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
    });
  }
  return out;
}

Tensor tanh(Tape& tape, const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape(), wants_grad(tape, {x}));
  const auto xd = x.data();
  auto od = out.mutable_data();
  const i64 n = out.size();
  for (i64 i = 0; i < n; ++i) od[i] = std::tanh(xd[i]);
  if (out.requires_grad()) {
    tape.record(out, [x, out]() mutable {
      const auto g = out.grad();
      const auto y = out.data();
      auto gx = x.mutable_grad();
      const i64 m = out.size();
      for (i64 i = 0; i < m; ++i) gx[i] += g[i] * (1.0 - y[i] * y[i]);
    });
  }
  return out;
}

Tensor relu(Tape& tape, const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape(), wants_grad(tape, {x}));
  const auto xd = x.data();
  auto od = out.mutable_data();
  const i64 n = out.size();
  for (i64 i = 0; i < n; ++i) od[i] = xd[i] > 0.0 ? xd[i] : 0.0;
  if (out.requires_grad()) {
    tape.record(out, [x, out]() mutable {
      const auto g = out.grad();
      const auto xd2 = x.data();
      auto gx = x.mutable_grad();
      const i64 m = out.size();
      for (i64 i = 0; i < m; ++i) gx[i] += xd2[i] > 0.0 ? g[i] : 0.0;
    });
  }
  return out;
}

Tensor clamped_log(Tape& tape, const Tensor& x, double floor) {
  if (floor <= 0.0) {
    throw ValidationError("clamped_log: floor must be positive");
  }
  Tensor out = Tensor::zeros(x.shape(), wants_grad(tape, {x}));
  const auto xd = x.data();
  auto od = out.mutable_data();
  const i64 n = out.size();
  for (i64 i = 0; i < n; ++i) od[i] = std::log(xd[i] > floor ? xd[i] : floor);
  if (out.requires_grad()) {
    tape.record(out, [x, out, floor]() mutable {
      const auto g = out.grad();
      const auto xd2 = x.data();
      auto gx = x.mutable_grad();
      const i64 m = out.size();
      for (i64 i = 0; i < m; ++i) {
        if (xd2[i] > floor) gx[i] += g[i] / xd2[i];
      }
    });
  }
  return out;
}

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  const MatmulDims d = matmul_dims(a, b);
  Shape out_shape = (d.a_batched || d.b_batched) ? Shape{d.batch, d.m, d.n} : Shape{d.m, d.n};
  Tensor out = Tensor::zeros(std::move(out_shape), wants_grad(tape, {a, b}));
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.mutable_data().data();
  for (i64 t = 0; t < d.batch; ++t) {
    gemm_acc(pa + (d.a_batched ? t * d.m * d.k : 0), pb + (d.b_batched ? t * d.k * d.n : 0),
             po + t * d.m * d.n, d.m, d.k, d.n);
  }
  if (out.requires_grad()) {
    tape.record(out, [a, b, out, d]() mutable {
      const double* g = out.grad().data();
      if (a.requires_grad()) {
        double* ga = a.mutable_grad().data();
        const double* pb2 = b.data().data();
        for (i64 t = 0; t < d.batch; ++t) {
          // dA = dC . B^T
          gemm_nt_acc(g + t * d.m * d.n, pb2 + (d.b_batched ? t * d.k * d.n : 0),
                      ga + (d.a_batched ? t * d.m * d.k : 0), d.m, d.n, d.k);
        }
      }
      if (b.requires_grad()) {
        double* gb = b.mutable_grad().data();
        const double* pa2 = a.data().data();
        for (i64 t = 0; t < d.batch; ++t) {
          // dB = A^T . dC
          gemm_tn_acc(pa2 + (d.a_batched ? t * d.m * d.k : 0), g + t * d.m * d.n,
                      gb + (d.b_batched ? t * d.k * d.n : 0), d.k, d.m, d.n);
        }
      }
    });
  }
  return out;
}

Tensor softmax(Tape& tape, const Tensor& x) {
  const i64 last = x.extent(x.rank() - 1);
  const i64 rows = x.size() / last;
  Tensor out = Tensor::zeros(x.shape(), wants_grad(tape, {x}));
  const auto xd = x.data();
  auto od = out.mutable_data();
  for (i64 r = 0; r < rows; ++r) {
    const double* xr = xd.data() + r * last;
    double* yr = od.data() + r * last;
    double mx = xr[0];
    for (i64 j = 1; j < last; ++j) mx = std::max(mx, xr[j]);
    double s = 0.0;
    for (i64 j = 0; j < last; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      s += yr[j];
    }
    for (i64 j = 0; j < last; ++j) yr[j] /= s;
  }
  if (out.requires_grad()) {
    tape.record(out, [x, out, rows, last]() mutable {
      const auto g = out.grad();
      const auto y = out.data();
      auto gx = x.mutable_grad();
      for (i64 r = 0; r < rows; ++r) {
        const double* gr = g.data() + r * last;
        const double* yr = y.data() + r * last;
        double* gxr = gx.data() + r * last;
        double dot = 0.0;
        for (i64 j = 0; j < last; ++j) dot += gr[j] * yr[j];
        for (i64 j = 0; j < last; ++j) gxr[j] += yr[j] * (gr[j] - dot);
      }
    });
  }
  return out;
}

Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  if (eps <= 0.0) {
    throw ValidationError("layer_norm: eps must be positive");
  }
  const i64 last = x.extent(x.rank() - 1);
  if (gamma.shape() != Shape{last} || beta.shape() != Shape{last}) {
    throw ValidationError("layer_norm: gamma/beta must be shaped [" + std::to_string(last) +
                          "], got " + shape_str(gamma.shape()) + " and " +
                          shape_str(beta.shape()));
  }
  const i64 rows = x.size() / last;
  Tensor out = Tensor::zeros(x.shape(), wants_grad(tape, {x, gamma, beta}));
  auto xhat = std::make_shared<std::vector<double>>(static_cast<std::size_t>(x.size()));
  auto inv_sigma = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));
  const auto xd = x.data();
  const auto gd = gamma.data();
  const auto bd = beta.data();
  auto od = out.mutable_data();
  for (i64 r = 0; r < rows; ++r) {
    const double* xr = xd.data() + r * last;
    double mean = 0.0;
    for (i64 j = 0; j < last; ++j) mean += xr[j];
    mean /= static_cast<double>(last);
    double var = 0.0;
    for (i64 j = 0; j < last; ++j) {
      const double dlt = xr[j] - mean;
      var += dlt * dlt;
    }
    var /= static_cast<double>(last);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_sigma)[static_cast<std::size_t>(r)] = inv;
    for (i64 j = 0; j < last; ++j) {
      const double xh = (xr[j] - mean) * inv;
      (*xhat)[static_cast<std::size_t>(r * last + j)] = xh;
      od[r * last + j] = gd[j] * xh + bd[j];
    }
  }
  if (out.requires_grad()) {
    tape.record(out, [x, gamma, beta, out, xhat, inv_sigma, rows, last]() mutable {
      const auto g = out.grad();
      const auto gd2 = gamma.data();
      std::vector<double> dxhat(static_cast<std::size_t>(last));
      for (i64 r = 0; r < rows; ++r) {
        const double* gr = g.data() + r * last;
        const double* xh = xhat->data() + r * last;
        const double inv = (*inv_sigma)[static_cast<std::size_t>(r)];
        double m1 = 0.0, m2 = 0.0;
        for (i64 j = 0; j < last; ++j) {
          dxhat[static_cast<std::size_t>(j)] = gr[j] * gd2[j];
          m1 += dxhat[static_cast<std::size_t>(j)];
          m2 += dxhat[static_cast<std::size_t>(j)] * xh[j];
        }
        m1 /= static_cast<double>(last);
        m2 /= static_cast<double>(last);
        if (x.requires_grad()) {
          auto gx = x.mutable_grad();
          double* gxr = gx.data() + r * last;
          for (i64 j = 0; j < last; ++j) {
            gxr[j] += inv * (dxhat[static_cast<std::size_t>(j)] - m1 - xh[j] * m2);
          }
        }
        if (gamma.requires_grad()) {
          auto gg = gamma.mutable_grad();
          for (i64 j = 0; j < last; ++j) gg[j] += gr[j] * xh[j];
        }
        if (beta.requires_grad()) {
          auto gb = beta.mutable_grad();
          for (i64 j = 0; j < last; ++j) gb[j] += gr[j];
        }
      }
    });
  }
  return out;
}

Tensor dropout(Tape& tape, const Tensor& x, double rate, bool training, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) {
    throw ValidationError("dropout: rate must be in [0,1), got " + std::to_string(rate));
  }
  if (!training || rate == 0.0) return x;
  const i64 n = x.size();
  auto factors = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n));
  const double keep_scale = 1.0 / (1.0 - rate);
  for (i64 i = 0; i < n; ++i) {
    (*factors)[static_cast<std::size_t>(i)] = rng.uniform01() >= rate ? keep_scale : 0.0;
  }
  Tensor out = Tensor::zeros(x.shape(), wants_grad(tape, {x}));
  const auto xd = x.data();
  auto od = out.mutable_data();
  for (i64 i = 0; i < n; ++i) od[i] = xd[i] * (*factors)[static_cast<std::size_t>(i)];
  if (out.requires_grad()) {
    tape.record(out, [x, out, factors, n]() mutable {
      const auto g = out.grad();
      auto gx = x.mutable_grad();
      for (i64 i = 0; i < n; ++i) gx[i] += g[i] * (*factors)[static_cast<std::size_t>(i)];
    });
  }
  return out;
}

Tensor gaussian_noise(Tape& tape, const Tensor& x, double sigma, bool training, Rng& rng) {
  if (sigma < 0.0) {
    throw ValidationError("gaussian_noise: sigma must be >= 0, got " + std::to_string(sigma));
  }
  if (!training || sigma == 0.0) return x;
  const i64 n = x.size();
  Tensor out = Tensor::zeros(x.shape(), wants_grad(tape, {x}));
  const auto xd = x.data();
  auto od = out.mutable_data();
  for (i64 i = 0; i < n; ++i) od[i] = xd[i] + rng.normal(0.0, sigma);
  if (out.requires_grad()) {
    tape.record(out, [x, out, n]() mutable {
      const auto g = out.grad();
      auto gx = x.mutable_grad();
      for (i64 i = 0; i < n; ++i) gx[i] += g[i];
    });
  }
  return out;
}

Tensor reshape(Tape& tape, const Tensor& x, Shape new_shape) {
  if (shape_size(new_shape) != x.size()) {
    throw ValidationError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                          shape_str(new_shape));
  }
  Tensor out = Tensor::from_data(std::move(new_shape),
                                 std::vector<double>(x.data().begin(), x.data().end()),
                                 wants_grad(tape, {x}));
  if (out.requires_grad()) {
    tape.record(out, [x, out]() mutable {
      const auto g = out.grad();
      auto gx = x.mutable_grad();
      const i64 n = out.size();
      for (i64 i = 0; i < n; ++i) gx[i] += g[i];
    });
  }
  return out;
}

Tensor transpose_last2(Tape& tape, const Tensor& x) {
  if (x.rank() < 2) {
    throw ValidationError("transpose_last2: rank must be >= 2, got " + shape_str(x.shape()));
  }
  Shape out_shape = x.shape();
  std::swap(out_shape[out_shape.size() - 1], out_shape[out_shape.size() - 2]);
  const i64 rows = x.extent(x.rank() - 2);
  const i64 cols = x.extent(x.rank() - 1);
  const i64 outer = x.size() / (rows * cols);
  Tensor out = Tensor::zeros(std::move(out_shape), wants_grad(tape, {x}));
  const auto xd = x.data();
  auto od = out.mutable_data();
  for (i64 o = 0; o < outer; ++o) {
    const double* xb = xd.data() + o * rows * cols;
    double* ob = od.data() + o * rows * cols;
    for (i64 i = 0; i < rows; ++i) {
      for (i64 j = 0; j < cols; ++j) ob[j * rows + i] = xb[i * cols + j];
    }
  }
  if (out.requires_grad()) {
    tape.record(out, [x, out, outer, rows, cols]() mutable {
      const auto g = out.grad();
      auto gx = x.mutable_grad();
      for (i64 o = 0; o < outer; ++o) {
        const double* gb = g.data() + o * rows * cols;
        double* gxb = gx.data() + o * rows * cols;
        for (i64 i = 0; i < rows; ++i) {
          for (i64 j = 0; j < cols; ++j) gxb[i * cols + j] += gb[j * rows + i];
        }
      }
    });
  }
  return out;
}

Tensor slice_last(Tape& tape, const Tensor& x, std::int64_t offset, std::int64_t length) {
  const i64 last = x.extent(x.rank() - 1);
  if (offset < 0 || length < 1 || offset + length > last) {
    throw ValidationError("slice_last: range [" + std::to_string(offset) + "," +
                          std::to_string(offset + length) + ") out of bounds for " +
                          shape_str(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape.back() = length;
  const i64 rows = x.size() / last;
  Tensor out = Tensor::zeros(std::move(out_shape), wants_grad(tape, {x}));
  const auto xd = x.data();
  auto od = out.mutable_data();
  for (i64 r = 0; r < rows; ++r) {
    for (i64 j = 0; j < length; ++j) od[r * length + j] = xd[r * last + offset + j];
  }
  if (out.requires_grad()) {
    tape.record(out, [x, out, rows, last, offset, length]() mutable {
      const auto g = out.grad();
      auto gx = x.mutable_grad();
      for (i64 r = 0; r < rows; ++r) {
        for (i64 j = 0; j < length; ++j) gx[r * last + offset + j] += g[r * length + j];
      }
    });
  }
  return out;
}

Tensor concat_last(Tape& tape, std::span<const Tensor> parts) {
  if (parts.empty()) {
    throw ValidationError("concat_last: needs at least one input");
  }
  const Shape& first = parts[0].shape();
  i64 total_last = 0;
  for (const auto& p : parts) {
    if (p.rank() != parts[0].rank()) {
      throw ValidationError("concat_last: rank mismatch " + shape_str(first) + " vs " +
                            shape_str(p.shape()));
    }
    for (i64 ax = 0; ax + 1 < p.rank(); ++ax) {
      if (p.extent(ax) != parts[0].extent(ax)) {
        throw ValidationError("concat_last: leading extents disagree, " + shape_str(first) +
                              " vs " + shape_str(p.shape()));
      }
    }
    total_last += p.extent(p.rank() - 1);
  }
  Shape out_shape = first;
  out_shape.back() = total_last;
  const i64 rows = shape_size(out_shape) / total_last;
  bool rg = false;
  for (const auto& p : parts) rg = rg || p.requires_grad();
  Tensor out = Tensor::zeros(std::move(out_shape), tape.recording() && rg);
  auto od = out.mutable_data();
  i64 col = 0;
  for (const auto& p : parts) {
    const i64 plast = p.extent(p.rank() - 1);
    const auto pd = p.data();
    for (i64 r = 0; r < rows; ++r) {
      for (i64 j = 0; j < plast; ++j) od[r * total_last + col + j] = pd[r * plast + j];
    }
    col += plast;
  }
  if (out.requires_grad()) {
    std::vector<Tensor> captured(parts.begin(), parts.end());
    tape.record(out, [captured, out, rows, total_last]() mutable {
      const auto g = out.grad();
      i64 col2 = 0;
      for (auto& p : captured) {
        const i64 plast = p.extent(p.rank() - 1);
        if (p.requires_grad()) {
          auto gp = p.mutable_grad();
          for (i64 r = 0; r < rows; ++r) {
            for (i64 j = 0; j < plast; ++j) gp[r * plast + j] += g[r * total_last + col2 + j];
          }
        }
        col2 += plast;
      }
    });
  }
  return out;
}

Tensor sum_all(Tape& tape, const Tensor& x) {
  Tensor out = Tensor::zeros({1}, wants_grad(tape, {x}));
  const auto xd = x.data();
  double s = 0.0;
  for (i64 i = 0; i < x.size(); ++i) s += xd[i];
  out.mutable_data()[0] = s;
  if (out.requires_grad()) {
    tape.record(out, [x, out]() mutable {
      const double g0 = out.grad()[0];
      auto gx = x.mutable_grad();
      const i64 n = x.size();
      for (i64 i = 0; i < n; ++i) gx[i] += g0;
    });
  }
  return out;
}

}  // namespace lantern::ad
