// Copyright 2026 The Twinbench Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "twinbench/nn/ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

namespace twinbench::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
using Strided = Eigen::OuterStride<>;
using CMapStrided = Eigen::Map<const RowMat, 0, Strided>;
using MapStrided = Eigen::Map<RowMat, 0, Strided>;

CMapMat cmat(const Tensor& t) { return CMapMat(t.ptr(), t.dim(0), t.dim(1)); }
MapMat mmat(Tensor& t) { return MapMat(t.ptr(), t.dim(0), t.dim(1)); }

void require_rank(const Var& v, std::size_t rank, const char* op) {
  if (v.value().rank() != rank) {
    throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                                shape_string(v.shape()));
  }
}

void require_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
}

Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }

// Unary elementwise with derivative expressed from (input, output).
template <typename F, typename D>
Var elementwise(const Var& x, F f, D dfdx) {
  const Tensor& in = x.value();
  Tensor out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return make_op(std::move(out), {x}, [dfdx](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    Tensor& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * dfdx(p.value[i], self.value[i]);
  });
}

}  // namespace

Var constant(Tensor value) { return Var(std::move(value), false); }

Var add(const Var& a, const Var& b) {
  require_same(a.shape(), b.shape(), "add");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return make_op(std::move(out), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      Node& p = parent(self, k);
      if (!p.requires_grad) continue;
      Tensor& g = p.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same(a.shape(), b.shape(), "sub");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return make_op(std::move(out), {a, b}, [](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    if (pa.requires_grad) {
      Tensor& g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      Tensor& g = pb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same(a.shape(), b.shape(), "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make_op(std::move(out), {a, b}, [](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    if (pa.requires_grad) {
      Tensor& g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      Tensor& g = pb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

Var scale(const Var& a, double factor) {
  return elementwise(a, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Var add_scalar(const Var& a, double c) {
  return elementwise(a, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Var square(const Var& a) {
  return elementwise(a, [](double v) { return v * v; }, [](double x, double) { return 2.0 * x; });
}

Var relu(const Var& x) {
  return elementwise(x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
}

Var tanh(const Var& x) {
  return elementwise(x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(const Var& x) {
  return elementwise(
      x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); }, [](double, double y) { return y * (1.0 - y); });
}

Var gelu(const Var& x) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double c = 0.044715;
  return elementwise(
      x,
      [](double v) { return 0.5 * v * (1.0 + std::tanh(k * (v + c * v * v * v))); },
      [](double v, double) {
        const double u = k * (v + c * v * v * v);
        const double t = std::tanh(u);
        const double du = k * (1.0 + 3.0 * c * v * v);
        return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
      });
}

Var clip(const Var& x, double lo, double hi) {
  return elementwise(
      x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double in, double) { return (in >= lo && in <= hi) ? 1.0 : 0.0; });
}

Var matmul(const Var& a, const Var& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: inner dims " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  Tensor out({a.rows(), b.cols()});
  mmat(out).noalias() = cmat(a.value()) * cmat(b.value());
  return make_op(std::move(out), {a, b}, [](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    auto dy = cmat(self.grad);
    if (pa.requires_grad) mmat(pa.ensure_grad()).noalias() += dy * cmat(pb.value).transpose();
    if (pb.requires_grad) mmat(pb.ensure_grad()).noalias() += cmat(pa.value).transpose() * dy;
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  require_rank(x, 2, "linear");
  require_rank(w, 2, "linear");
  if (x.cols() != w.rows() || b.value().size() != w.cols()) {
    throw std::invalid_argument("linear: shapes " + shape_string(x.shape()) + " " + shape_string(w.shape()) + " " +
                                shape_string(b.shape()));
  }
  const std::size_t n = x.rows();
  const std::size_t out_dim = w.cols();
  Tensor out({n, out_dim});
  auto y = mmat(out);
  y.noalias() = cmat(x.value()) * cmat(w.value());
  Eigen::Map<const Eigen::RowVectorXd> bias(b.value().ptr(), static_cast<Eigen::Index>(out_dim));
  y.rowwise() += bias;
  return make_op(std::move(out), {x, w, b}, [](Node& self) {
    Node& px = parent(self, 0);
    Node& pw = parent(self, 1);
    Node& pb = parent(self, 2);
    auto dy = cmat(self.grad);
    if (px.requires_grad) mmat(px.ensure_grad()).noalias() += dy * cmat(pw.value).transpose();
    if (pw.requires_grad) mmat(pw.ensure_grad()).noalias() += cmat(px.value).transpose() * dy;
    if (pb.requires_grad) {
      Tensor& g = pb.ensure_grad();
      Eigen::Map<Eigen::RowVectorXd> gb(g.ptr(), static_cast<Eigen::Index>(g.size()));
      gb += dy.colwise().sum();
    }
  });
}

Var concat_cols(const Var& a, const Var& b) {
  require_rank(a, 2, "concat_cols");
  require_rank(b, 2, "concat_cols");
  if (a.rows() != b.rows()) throw std::invalid_argument("concat_cols: row mismatch");
  const std::size_t n = a.rows(), p = a.cols(), q = b.cols();
  Tensor out({n, p + q});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a.value().ptr() + i * p, p, out.ptr() + i * (p + q));
    std::copy_n(b.value().ptr() + i * q, q, out.ptr() + i * (p + q) + p);
  }
  return make_op(std::move(out), {a, b}, [n, p, q](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    if (pa.requires_grad) {
      Tensor& g = pa.ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < p; ++j) g[i * p + j] += self.grad[i * (p + q) + j];
    }
    if (pb.requires_grad) {
      Tensor& g = pb.ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < q; ++j) g[i * q + j] += self.grad[i * (p + q) + p + j];
    }
  });
}

Var embedding(const Var& table, std::span<const int> indices) {
  require_rank(table, 2, "embedding");
  const std::size_t vocab = table.rows(), d = table.cols();
  Tensor out({indices.size(), d});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const int idx = indices[i];
    if (idx < 0 || static_cast<std::size_t>(idx) >= vocab) {
      throw std::out_of_range("embedding: index " + std::to_string(idx) + " outside vocabulary " + std::to_string(vocab));
    }
    std::copy_n(table.value().ptr() + static_cast<std::size_t>(idx) * d, d, out.ptr() + i * d);
  }
  std::vector<int> idx(indices.begin(), indices.end());
  return make_op(std::move(out), {table}, [idx = std::move(idx), d](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    Tensor& g = p.ensure_grad();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      double* row = g.ptr() + static_cast<std::size_t>(idx[i]) * d;
      const double* src = self.grad.ptr() + i * d;
      for (std::size_t j = 0; j < d; ++j) row[j] += src[j];
    }
  });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  require_rank(x, 2, "layer_norm");
  const std::size_t n = x.rows(), d = x.cols();
  if (gain.value().size() != d || bias.value().size() != d) throw std::invalid_argument("layer_norm: gain/bias size");
  Tensor out({n, d});
  Tensor xhat({n, d});
  std::vector<double> inv_std(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = x.value().ptr() + i * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[i] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mu) * is;
      xhat[i * d + j] = h;
      out[i * d + j] = h * gain.value()[j] + bias.value()[j];
    }
  }
  return make_op(std::move(out), {x, gain, bias},
                 [xhat = std::move(xhat), inv_std = std::move(inv_std), n, d](Node& self) {
                   Node& px = parent(self, 0);
                   Node& pg = parent(self, 1);
                   Node& pb = parent(self, 2);
                   if (pg.requires_grad || pb.requires_grad) {
                     Tensor* gg = pg.requires_grad ? &pg.ensure_grad() : nullptr;
                     Tensor* gb = pb.requires_grad ? &pb.ensure_grad() : nullptr;
                     for (std::size_t i = 0; i < n; ++i)
                       for (std::size_t j = 0; j < d; ++j) {
                         const double dy = self.grad[i * d + j];
                         if (gg) (*gg)[j] += dy * xhat[i * d + j];
                         if (gb) (*gb)[j] += dy;
                       }
                   }
                   if (!px.requires_grad) return;
                   Tensor& gx = px.ensure_grad();
                   std::vector<double> dxhat(d);
                   for (std::size_t i = 0; i < n; ++i) {
                     double m1 = 0.0, m2 = 0.0;
                     for (std::size_t j = 0; j < d; ++j) {
                       dxhat[j] = self.grad[i * d + j] * pg.value[j];
                       m1 += dxhat[j];
                       m2 += dxhat[j] * xhat[i * d + j];
                     }
                     m1 /= static_cast<double>(d);
                     m2 /= static_cast<double>(d);
                     for (std::size_t j = 0; j < d; ++j) {
                       gx[i * d + j] += inv_std[i] * (dxhat[j] - m1 - xhat[i * d + j] * m2);
                     }
                   }
                 });
}

Var causal_self_attention(const Var& qkv, std::size_t batch, std::size_t time, std::size_t heads) {
  require_rank(qkv, 2, "causal_self_attention");
  if (qkv.rows() != batch * time || qkv.cols() % 3 != 0) {
    throw std::invalid_argument("causal_self_attention: qkv shape " + shape_string(qkv.shape()));
  }
  const std::size_t width = qkv.cols() / 3;
  if (heads == 0 || width % heads != 0) throw std::invalid_argument("causal_self_attention: width not divisible by heads");
  const std::size_t hd = width / heads;
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(hd));
  const auto stride = static_cast<Eigen::Index>(3 * width);
  const auto T = static_cast<Eigen::Index>(time);
  const auto HD = static_cast<Eigen::Index>(hd);

  Tensor out({batch * time, width});
  // Attention weights kept for the backward pass: [batch, heads, time, time].
  Tensor probs({batch * heads * time * time});
  const double* base = qkv.value().ptr();
  RowMat scores(T, T);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      const double* qp = base + b * time * 3 * width + h * hd;
      CMapStrided q(qp, T, HD, Strided(stride));
      CMapStrided k(qp + width, T, HD, Strided(stride));
      CMapStrided v(qp + 2 * width, T, HD, Strided(stride));
      scores.noalias() = (q * k.transpose()) * scale_factor;
      MapMat p(probs.ptr() + (b * heads + h) * time * time, T, T);
      for (Eigen::Index i = 0; i < T; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j <= i; ++j) mx = std::max(mx, scores(i, j));
        double z = 0.0;
        for (Eigen::Index j = 0; j <= i; ++j) {
          const double e = std::exp(scores(i, j) - mx);
          p(i, j) = e;
          z += e;
        }
        for (Eigen::Index j = 0; j <= i; ++j) p(i, j) /= z;
        for (Eigen::Index j = i + 1; j < T; ++j) p(i, j) = 0.0;
      }
      MapStrided o(out.ptr() + b * time * width + h * hd, T, HD, Strided(static_cast<Eigen::Index>(width)));
      o.noalias() = p * v;
    }
  }
  return make_op(std::move(out), {qkv},
                 [probs = std::move(probs), batch, time, heads, width, hd, scale_factor](Node& self) {
                   Node& pq = parent(self, 0);
                   if (!pq.requires_grad) return;
                   Tensor& g = pq.ensure_grad();
                   const auto T = static_cast<Eigen::Index>(time);
                   const auto HD = static_cast<Eigen::Index>(hd);
                   const auto stride = static_cast<Eigen::Index>(3 * width);
                   RowMat dp(T, T);
                   RowMat ds(T, T);
                   for (std::size_t b = 0; b < batch; ++b) {
                     for (std::size_t h = 0; h < heads; ++h) {
                       const std::size_t off = b * time * 3 * width + h * hd;
                       CMapStrided q(pq.value.ptr() + off, T, HD, Strided(stride));
                       CMapStrided k(pq.value.ptr() + off + width, T, HD, Strided(stride));
                       CMapStrided v(pq.value.ptr() + off + 2 * width, T, HD, Strided(stride));
                       MapStrided dq(g.ptr() + off, T, HD, Strided(stride));
                       MapStrided dk(g.ptr() + off + width, T, HD, Strided(stride));
                       MapStrided dv(g.ptr() + off + 2 * width, T, HD, Strided(stride));
                       CMapMat p(probs.ptr() + (b * heads + h) * time * time, T, T);
                       CMapStrided dout(self.grad.ptr() + b * time * width + h * hd, T, HD,
                                        Strided(static_cast<Eigen::Index>(width)));
                       dv.noalias() += p.transpose() * dout;
                       dp.noalias() = dout * v.transpose();
                       for (Eigen::Index i = 0; i < T; ++i) {
                         double dot = 0.0;
                         for (Eigen::Index j = 0; j <= i; ++j) dot += dp(i, j) * p(i, j);
                         for (Eigen::Index j = 0; j <= i; ++j) ds(i, j) = p(i, j) * (dp(i, j) - dot) * scale_factor;
                         for (Eigen::Index j = i + 1; j < T; ++j) ds(i, j) = 0.0;
                       }
                       dq.noalias() += ds * k;
                       dk.noalias() += ds.transpose() * q;
                     }
                   }
                 });
}

Var dueling_combine(const Var& value, const Var& advantage) {
  require_rank(value, 2, "dueling_combine");
  require_rank(advantage, 2, "dueling_combine");
  if (value.cols() != 1 || value.rows() != advantage.rows()) throw std::invalid_argument("dueling_combine: shapes");
  const std::size_t n = advantage.rows(), k = advantage.cols();
  Tensor out({n, k});
  for (std::size_t i = 0; i < n; ++i) {
    double m = 0.0;
    for (std::size_t j = 0; j < k; ++j) m += advantage.value()[i * k + j];
    m /= static_cast<double>(k);
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] = value.value()[i] + advantage.value()[i * k + j] - m;
  }
  return make_op(std::move(out), {value, advantage}, [n, k](Node& self) {
    Node& pv = parent(self, 0);
    Node& pa = parent(self, 1);
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < k; ++j) s += self.grad[i * k + j];
      if (pv.requires_grad) pv.ensure_grad()[i] += s;
      if (pa.requires_grad) {
        Tensor& g = pa.ensure_grad();
        const double m = s / static_cast<double>(k);
        for (std::size_t j = 0; j < k; ++j) g[i * k + j] += self.grad[i * k + j] - m;
      }
    }
  });
}

namespace {

// Row-wise log-softmax of a rank-2 tensor.
Tensor log_softmax_values(const Tensor& x) {
  const std::size_t n = x.dim(0), k = x.dim(1);
  Tensor out({n, k});
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = x.ptr() + i * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] = row[j] - lse;
  }
  return out;
}

}  // namespace

Var log_softmax_rows(const Var& logits) {
  require_rank(logits, 2, "log_softmax_rows");
  const std::size_t n = logits.rows(), k = logits.cols();
  Tensor out = log_softmax_values(logits.value());
  return make_op(std::move(out), {logits}, [n, k](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    Tensor& g = p.ensure_grad();
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < k; ++j) s += self.grad[i * k + j];
      for (std::size_t j = 0; j < k; ++j) g[i * k + j] += self.grad[i * k + j] - std::exp(self.value[i * k + j]) * s;
    }
  });
}

Var softmax_rows(const Var& logits) {
  require_rank(logits, 2, "softmax_rows");
  const std::size_t n = logits.rows(), k = logits.cols();
  Tensor out = log_softmax_values(logits.value());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(out[i]);
  return make_op(std::move(out), {logits}, [n, k](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    Tensor& g = p.ensure_grad();
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < k; ++j) dot += self.grad[i * k + j] * self.value[i * k + j];
      for (std::size_t j = 0; j < k; ++j) g[i * k + j] += self.value[i * k + j] * (self.grad[i * k + j] - dot);
    }
  });
}

Var logsumexp_rows(const Var& logits) {
  require_rank(logits, 2, "logsumexp_rows");
  const std::size_t n = logits.rows(), k = logits.cols();
  Tensor out({n});
  Tensor ls = log_softmax_values(logits.value());
  for (std::size_t i = 0; i < n; ++i) out[i] = logits.value()[i * k] - ls[i * k];
  return make_op(std::move(out), {logits}, [ls = std::move(ls), n, k](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    Tensor& g = p.ensure_grad();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < k; ++j) g[i * k + j] += self.grad[i] * std::exp(ls[i * k + j]);
  });
}

Var gather_cols(const Var& x, std::span<const int> indices) {
  require_rank(x, 2, "gather_cols");
  const std::size_t n = x.rows(), k = x.cols();
  if (indices.size() != n) throw std::invalid_argument("gather_cols: index count != rows");
  Tensor out({n});
  std::vector<int> idx(indices.begin(), indices.end());
  for (std::size_t i = 0; i < n; ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= k) throw std::out_of_range("gather_cols: index out of range");
    out[i] = x.value()[i * k + static_cast<std::size_t>(idx[i])];
  }
  return make_op(std::move(out), {x}, [idx = std::move(idx), k](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    Tensor& g = p.ensure_grad();
    for (std::size_t i = 0; i < idx.size(); ++i) g[i * k + static_cast<std::size_t>(idx[i])] += self.grad[i];
  });
}

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return make_op(Tensor::scalar(s), {x}, [](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    Tensor& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0];
  });
}

Var mean(const Var& x) {
  const double n = static_cast<double>(x.value().size());
  if (n == 0) throw std::invalid_argument("mean: empty tensor");
  return scale(sum(x), 1.0 / n);
}

Var smooth_l1_masked(const Var& pred, const Tensor& target, std::span<const std::uint8_t> row_mask, double beta) {
  require_same(pred.shape(), target.shape(), "smooth_l1_masked");
  const std::size_t rows = pred.value().rank() == 0 ? 0 : pred.value().dim(0);
  if (row_mask.size() != rows) throw std::invalid_argument("smooth_l1_masked: mask length != rows");
  const std::size_t width = rows ? pred.value().size() / rows : 0;
  std::size_t valid = 0;
  for (auto m : row_mask) valid += m ? 1 : 0;
  if (valid == 0) throw std::invalid_argument("smooth_l1_masked: no valid positions");
  const double norm = 1.0 / static_cast<double>(valid * width);
  double total = 0.0;
  Tensor dloss(pred.shape());
  for (std::size_t i = 0; i < rows; ++i) {
    if (!row_mask[i]) continue;
    for (std::size_t j = 0; j < width; ++j) {
      const std::size_t e = i * width + j;
      const double diff = pred.value()[e] - target[e];
      const double ad = std::abs(diff);
      if (ad < beta) {
        total += 0.5 * diff * diff / beta;
        dloss[e] = diff / beta * norm;
      } else {
        total += ad - 0.5 * beta;
        dloss[e] = (diff > 0 ? 1.0 : -1.0) * norm;
      }
    }
  }
  return make_op(Tensor::scalar(total * norm), {pred}, [dloss = std::move(dloss)](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    Tensor& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * dloss[i];
  });
}

Var huber_loss(const Var& pred, const Tensor& target, double delta) {
  if (pred.value().rank() != 1) throw std::invalid_argument("huber_loss: expects rank-1 predictions");
  if (pred.value().size() != target.size()) throw std::invalid_argument("huber_loss: size mismatch");
  std::vector<std::uint8_t> mask(pred.value().size(), 1);
  return scale(smooth_l1_masked(pred, target.reshaped(pred.shape()), mask, delta), delta);
}

Var l1_loss(const Var& pred, const Tensor& target) {
  if (pred.value().size() != target.size()) throw std::invalid_argument("l1_loss: size mismatch");
  const double n = static_cast<double>(target.size());
  double total = 0.0;
  Tensor d(pred.shape());
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double diff = pred.value()[i] - target[i];
    total += std::abs(diff);
    d[i] = (diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0)) / n;
  }
  return make_op(Tensor::scalar(total / n), {pred}, [d = std::move(d)](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    Tensor& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * d[i];
  });
}

Var mse_loss(const Var& pred, const Tensor& target) {
  if (pred.value().size() != target.size()) throw std::invalid_argument("mse_loss: size mismatch");
  const double n = static_cast<double>(target.size());
  double total = 0.0;
  Tensor d(pred.shape());
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double diff = pred.value()[i] - target[i];
    total += diff * diff;
    d[i] = 2.0 * diff / n;
  }
  return make_op(Tensor::scalar(total / n), {pred}, [d = std::move(d)](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    Tensor& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * d[i];
  });
}

Var cross_entropy(const Var& logits, std::span<const int> labels) {
  require_rank(logits, 2, "cross_entropy");
  const std::size_t n = logits.rows(), k = logits.cols();
  if (labels.size() != n) throw std::invalid_argument("cross_entropy: label count != rows");
  Tensor ls = log_softmax_values(logits.value());
  double total = 0.0;
  std::vector<int> lab(labels.begin(), labels.end());
  for (std::size_t i = 0; i < n; ++i) {
    if (lab[i] < 0 || static_cast<std::size_t>(lab[i]) >= k) throw std::out_of_range("cross_entropy: label out of range");
    total -= ls[i * k + static_cast<std::size_t>(lab[i])];
  }
  return make_op(Tensor::scalar(total / static_cast<double>(n)), {logits},
                 [ls = std::move(ls), lab = std::move(lab), n, k](Node& self) {
                   Node& p = parent(self, 0);
                   if (!p.requires_grad) return;
                   Tensor& g = p.ensure_grad();
                   const double s = self.grad[0] / static_cast<double>(n);
                   for (std::size_t i = 0; i < n; ++i)
                     for (std::size_t j = 0; j < k; ++j) {
                       const double pj = std::exp(ls[i * k + j]);
                       g[i * k + j] += s * (pj - (static_cast<int>(j) == lab[i] ? 1.0 : 0.0));
                     }
                 });
}

Var softmax_entropy(const Var& logits) {
  require_rank(logits, 2, "softmax_entropy");
  const std::size_t n = logits.rows(), k = logits.cols();
  Tensor ls = log_softmax_values(logits.value());
  std::vector<double> ent(n, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) ent[i] -= std::exp(ls[i * k + j]) * ls[i * k + j];
    total += ent[i];
  }
  return make_op(Tensor::scalar(total / static_cast<double>(n)), {logits},
                 [ls = std::move(ls), ent = std::move(ent), n, k](Node& self) {
                   Node& p = parent(self, 0);
                   if (!p.requires_grad) return;
                   Tensor& g = p.ensure_grad();
                   const double s = self.grad[0] / static_cast<double>(n);
                   for (std::size_t i = 0; i < n; ++i)
                     for (std::size_t j = 0; j < k; ++j) {
                       const double lp = ls[i * k + j];
                       g[i * k + j] += s * (-std::exp(lp) * (lp + ent[i]));
                     }
                 });
}

}  // namespace twinbench::nn
