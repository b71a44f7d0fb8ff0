#include "kser/autograd.hpp"

#include "kser/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace kser {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw DataError(std::string("shape mismatch in ") + what);
}

}  // namespace

Var Graph::constant(Mat value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Graph::param(Parameter& p) {
  Node n;
  n.needs_grad = p.trainable;
  n.param = &p;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

void Graph::accumulate(int id, const Mat& g) { accumulate_expr(id, g); }

Var Graph::push(Mat value, std::initializer_list<Var> parents, Backward back) {
  return push(std::move(value), std::span<const Var>(parents.begin(), parents.size()),
              std::move(back));
}

Var Graph::push(Mat value, std::span<const Var> parents, Backward back) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = std::any_of(parents.begin(), parents.end(),
                             [this](const Var& p) { return needs_grad(p.id()); });
  if (n.needs_grad) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Graph::push_source(Mat value, bool needs_grad, Backward back) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  if (needs_grad) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

void Graph::backward(Var out) {
  require(out.rows() == 1 && out.cols() == 1, "backward (output must be 1x1)");
  if (!needs_grad(out.id())) return;
  accumulate(out.id(), Mat::Ones(1, 1));
  for (int id = out.id(); id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    if (n.param != nullptr) {
      if (n.param->grad.rows() != n.param->value.rows() || n.param->grad.cols() != n.param->value.cols())
        n.param->zero_grad();
      n.param->grad += n.grad;
    } else if (n.back) {
      n.back(*this, id);
    }
  }
}

// ---- elementwise / linear algebra -------------------------------------------

Var matmul(Var a, Var b) {
  require(a.cols() == b.rows(), "matmul");
  Graph& g = a.graph();
  Mat out = a.value() * b.value();
  const int ia = a.id(), ib = b.id();
  return g.push(std::move(out), {a, b}, [ia, ib](Graph& g, int self) {
    const Mat& d = g.grad(self);
    if (g.needs_grad(ia)) g.accumulate_expr(ia, d * g.value(ib).transpose());
    if (g.needs_grad(ib)) g.accumulate_expr(ib, g.value(ia).transpose() * d);
  });
}

Var add(Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add");
  const int ia = a.id(), ib = b.id();
  return a.graph().push(a.value() + b.value(), {a, b}, [ia, ib](Graph& g, int self) {
    g.accumulate(ia, g.grad(self));
    g.accumulate(ib, g.grad(self));
  });
}

Var sub(Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "sub");
  const int ia = a.id(), ib = b.id();
  return a.graph().push(a.value() - b.value(), {a, b}, [ia, ib](Graph& g, int self) {
    g.accumulate(ia, g.grad(self));
    g.accumulate_expr(ib, -g.grad(self));
  });
}

Var mul(Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "mul");
  const int ia = a.id(), ib = b.id();
  Mat out = a.value().cwiseProduct(b.value());
  return a.graph().push(std::move(out), {a, b}, [ia, ib](Graph& g, int self) {
    const Mat& d = g.grad(self);
    if (g.needs_grad(ia)) g.accumulate_expr(ia, d.cwiseProduct(g.value(ib)));
    if (g.needs_grad(ib)) g.accumulate_expr(ib, d.cwiseProduct(g.value(ia)));
  });
}

Var scale(Var a, double s) {
  const int ia = a.id();
  return a.graph().push(a.value() * s, {a}, [ia, s](Graph& g, int self) {
    g.accumulate_expr(ia, g.grad(self) * s);
  });
}

Var add_row_bias(Var a, Var bias) {
  require(bias.rows() == 1 && bias.cols() == a.cols(), "add_row_bias");
  Mat out = a.value();
  out.rowwise() += bias.value().row(0);
  const int ia = a.id(), ib = bias.id();
  return a.graph().push(std::move(out), {a, bias}, [ia, ib](Graph& g, int self) {
    const Mat& d = g.grad(self);
    g.accumulate(ia, d);
    if (g.needs_grad(ib)) g.accumulate_expr(ib, d.colwise().sum());
  });
}

Var relu(Var a) {
  const int ia = a.id();
  return a.graph().push(a.value().cwiseMax(0.0), {a}, [ia](Graph& g, int self) {
    const Mat& x = g.value(ia);
    g.accumulate_expr(ia, (x.array() > 0.0).select(g.grad(self), 0.0));
  });
}

Var sigmoid(Var a) {
  const int ia = a.id();
  Mat out = a.value().unaryExpr([](double x) {
    // Split by sign so exp never overflows.
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
  return a.graph().push(std::move(out), {a}, [ia](Graph& g, int self) {
    const Mat& y = g.value(self);
    g.accumulate_expr(ia, g.grad(self).cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix())));
  });
}

Var detach(Var a) { return a.graph().constant(a.value()); }

// ---- shape ops ----------------------------------------------------------------

Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols (no inputs)");
  const long rows = parts[0].rows();
  long cols = 0;
  for (const auto& p : parts) {
    require(p.rows() == rows, "concat_cols");
    cols += p.cols();
  }
  Mat out(rows, cols);
  long off = 0;
  std::vector<std::pair<int, long>> spans;
  for (const auto& p : parts) {
    out.middleCols(off, p.cols()) = p.value();
    spans.emplace_back(p.id(), off);
    off += p.cols();
  }
  return parts[0].graph().push(std::move(out), parts, [spans](Graph& g, int self) {
    const Mat& d = g.grad(self);
    for (const auto& [id, start] : spans) {
      if (g.needs_grad(id)) g.accumulate_expr(id, d.middleCols(start, g.value(id).cols()));
    }
  });
}

Var slice_cols(Var a, long start, long len) {
  require(start >= 0 && len >= 0 && start + len <= a.cols(), "slice_cols");
  const int ia = a.id();
  Mat out = a.value().middleCols(start, len);
  return a.graph().push(std::move(out), {a}, [ia, start, len](Graph& g, int self) {
    Mat full = Mat::Zero(g.value(ia).rows(), g.value(ia).cols());
    full.middleCols(start, len) = g.grad(self);
    g.accumulate(ia, full);
  });
}

Var reshape(Var a, long rows, long cols) {
  require(rows * cols == a.value().size(), "reshape");
  const int ia = a.id();
  Mat out = Eigen::Map<const Mat>(a.value().data(), rows, cols);
  return a.graph().push(std::move(out), {a}, [ia](Graph& g, int self) {
    const Mat& x = g.value(ia);
    g.accumulate_expr(ia, Eigen::Map<const Mat>(g.grad(self).data(), x.rows(), x.cols()));
  });
}

Var repeat_cols(Var a, long times) {
  require(times >= 1, "repeat_cols");
  const Mat& x = a.value();
  Mat out(x.rows(), x.cols() * times);
  for (long c = 0; c < x.cols(); ++c)
    out.middleCols(c * times, times) = x.col(c).replicate(1, times);
  const int ia = a.id();
  return a.graph().push(std::move(out), {a}, [ia, times](Graph& g, int self) {
    const Mat& d = g.grad(self);
    const long cols = g.value(ia).cols();
    Mat r(d.rows(), cols);
    for (long c = 0; c < cols; ++c) r.col(c) = d.middleCols(c * times, times).rowwise().sum();
    g.accumulate(ia, r);
  });
}

Var repeat_rows(Var a, long times) {
  require(times >= 1, "repeat_rows");
  const Mat& x = a.value();
  Mat out(x.rows() * times, x.cols());
  for (long r = 0; r < x.rows(); ++r) out.middleRows(r * times, times) = x.row(r).replicate(times, 1);
  const int ia = a.id();
  return a.graph().push(std::move(out), {a}, [ia, times](Graph& g, int self) {
    const Mat& d = g.grad(self);
    const long rows = g.value(ia).rows();
    Mat r(rows, d.cols());
    for (long i = 0; i < rows; ++i) r.row(i) = d.middleRows(i * times, times).colwise().sum();
    g.accumulate(ia, r);
  });
}

Var row_sum(Var a) {
  const int ia = a.id();
  Mat out = a.value().rowwise().sum();
  return a.graph().push(std::move(out), {a}, [ia](Graph& g, int self) {
    g.accumulate_expr(ia, g.grad(self).replicate(1, g.value(ia).cols()));
  });
}

Var sum_all(Var a) {
  const int ia = a.id();
  Mat out(1, 1);
  out(0, 0) = a.value().sum();
  return a.graph().push(std::move(out), {a}, [ia](Graph& g, int self) {
    const Mat& x = g.value(ia);
    g.accumulate_expr(ia, Mat::Constant(x.rows(), x.cols(), g.grad(self)(0, 0)));
  });
}

// ---- grouped ops ----------------------------------------------------------------

Var embedding_lookup(Graph& g, Parameter& table, std::span<const int> indices) {
  const Mat& tv = table.value;
  const long width = tv.cols();
  Mat out(static_cast<long>(indices.size()), width);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const int idx = indices[i];
    if (idx < 0 || idx >= tv.rows()) throw DataError("embedding index out of range in " + table.name);
    if (table.pad_row && idx == 0)
      out.row(static_cast<long>(i)).setZero();
    else
      out.row(static_cast<long>(i)) = tv.row(idx);
  }
  // Scatter rows straight into the table gradient instead of materialising a
  // dense table-sized gradient per lookup.
  std::vector<int> idx(indices.begin(), indices.end());
  Parameter* p = &table;
  return g.push_source(std::move(out), table.trainable, [p, idx = std::move(idx)](Graph& g, int self) {
    const Mat& d = g.grad(self);
    if (p->grad.rows() != p->value.rows() || p->grad.cols() != p->value.cols()) p->zero_grad();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (p->pad_row && idx[i] == 0) continue;
      p->grad.row(idx[i]) += d.row(static_cast<long>(i));
    }
  });
}

Var masked_mean_groups(Var x, std::span<const std::uint8_t> mask, long group) {
  require(group >= 1 && x.rows() % group == 0 &&
              static_cast<long>(mask.size()) == x.rows(),
          "masked_mean_groups");
  const long batch = x.rows() / group;
  const Mat& xv = x.value();
  Mat out = Mat::Zero(batch, xv.cols());
  std::vector<double> inv(static_cast<std::size_t>(batch), 0.0);
  for (long b = 0; b < batch; ++b) {
    long count = 0;
    for (long j = 0; j < group; ++j) {
      if (mask[static_cast<std::size_t>(b * group + j)]) {
        out.row(b) += xv.row(b * group + j);
        ++count;
      }
    }
    if (count > 0) {
      inv[static_cast<std::size_t>(b)] = 1.0 / static_cast<double>(count);
      out.row(b) *= inv[static_cast<std::size_t>(b)];
    }
  }
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  const int ix = x.id();
  return x.graph().push(std::move(out), {x},
                        [ix, m = std::move(m), inv = std::move(inv), group](Graph& g, int self) {
                          const Mat& d = g.grad(self);
                          Mat r = Mat::Zero(g.value(ix).rows(), g.value(ix).cols());
                          for (long b = 0; b < d.rows(); ++b)
                            for (long j = 0; j < group; ++j)
                              if (m[static_cast<std::size_t>(b * group + j)])
                                r.row(b * group + j) = d.row(b) * inv[static_cast<std::size_t>(b)];
                          g.accumulate(ix, r);
                        });
}

Var masked_softmax(Var scores, std::span<const std::uint8_t> mask) {
  require(static_cast<long>(mask.size()) == scores.value().size(), "masked_softmax");
  const Mat& s = scores.value();
  Mat p = Mat::Zero(s.rows(), s.cols());
  for (long r = 0; r < s.rows(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (long c = 0; c < s.cols(); ++c)
      if (mask[static_cast<std::size_t>(r * s.cols() + c)]) mx = std::max(mx, s(r, c));
    if (!std::isfinite(mx)) continue;
    double z = 0.0;
    for (long c = 0; c < s.cols(); ++c)
      if (mask[static_cast<std::size_t>(r * s.cols() + c)]) z += (p(r, c) = std::exp(s(r, c) - mx));
    p.row(r) /= z;
  }
  const int is = scores.id();
  return scores.graph().push(std::move(p), {scores}, [is](Graph& g, int self) {
    const Mat& y = g.value(self);
    const Mat& d = g.grad(self);
    Mat r = y.cwiseProduct(d);
    const Eigen::VectorXd dot = r.rowwise().sum();
    r -= (y.array().colwise() * dot.array()).matrix();
    g.accumulate(is, r);
  });
}

Var weighted_sum_groups(Var p, Var x) {
  const long batch = p.rows(), group = p.cols();
  require(x.rows() == batch * group, "weighted_sum_groups");
  const Mat& pv = p.value();
  const Mat& xv = x.value();
  Mat out(batch, xv.cols());
  for (long b = 0; b < batch; ++b) out.row(b) = pv.row(b) * xv.middleRows(b * group, group);
  const int ip = p.id(), ix = x.id();
  return p.graph().push(std::move(out), {p, x}, [ip, ix](Graph& g, int self) {
    const Mat& d = g.grad(self);
    const Mat& pv = g.value(ip);
    const Mat& xv = g.value(ix);
    const long group = pv.cols();
    if (g.needs_grad(ip)) {
      Mat dp(pv.rows(), group);
      for (long b = 0; b < pv.rows(); ++b) dp.row(b) = d.row(b) * xv.middleRows(b * group, group).transpose();
      g.accumulate(ip, dp);
    }
    if (g.needs_grad(ix)) {
      Mat dx(xv.rows(), xv.cols());
      for (long b = 0; b < pv.rows(); ++b)
        dx.middleRows(b * group, group) = pv.row(b).transpose() * d.row(b);
      g.accumulate(ix, dx);
    }
  });
}

Var grouped_attention(Var q, Var k, Var v, long rq, long rk, long heads, double scale, Mat* probs) {
  require(rq >= 1 && rk >= 1 && heads >= 1, "grouped_attention (group sizes)");
  require(q.rows() % rq == 0, "grouped_attention (query rows)");
  const long batch = q.rows() / rq;
  require(k.rows() == batch * rk && v.rows() == batch * rk, "grouped_attention (key rows)");
  require(q.cols() == k.cols(), "grouped_attention (query/key width)");
  require(q.cols() % heads == 0 && v.cols() % heads == 0, "grouped_attention (head split)");
  const long dq = q.cols() / heads, dv = v.cols() / heads;

  const Mat& Q = q.value();
  const Mat& K = k.value();
  const Mat& V = v.value();
  Mat out(Q.rows(), V.cols());
  Mat P(batch * heads * rq, rk);
  for (long b = 0; b < batch; ++b) {
    for (long h = 0; h < heads; ++h) {
      auto Qh = Q.block(b * rq, h * dq, rq, dq);
      auto Kh = K.block(b * rk, h * dq, rk, dq);
      auto Vh = V.block(b * rk, h * dv, rk, dv);
      Mat s = (Qh * Kh.transpose()) * scale;
      for (long r = 0; r < rq; ++r) {
        const double mx = s.row(r).maxCoeff();
        s.row(r) = (s.row(r).array() - mx).exp().matrix();
        s.row(r) /= s.row(r).sum();
      }
      P.middleRows((b * heads + h) * rq, rq) = s;
      out.block(b * rq, h * dv, rq, dv) = s * Vh;
    }
  }
  if (probs != nullptr) *probs = P;

  const int iq = q.id(), ik = k.id(), iv = v.id();
  return q.graph().push(
      std::move(out), {q, k, v},
      [iq, ik, iv, rq, rk, heads, dq, dv, scale, batch, P = std::move(P)](Graph& g, int self) {
        const Mat& d = g.grad(self);
        const Mat& Q = g.value(iq);
        const Mat& K = g.value(ik);
        const Mat& V = g.value(iv);
        Mat dQ = Mat::Zero(Q.rows(), Q.cols());
        Mat dK = Mat::Zero(K.rows(), K.cols());
        Mat dV = Mat::Zero(V.rows(), V.cols());
        for (long b = 0; b < batch; ++b) {
          for (long h = 0; h < heads; ++h) {
            auto p = P.middleRows((b * heads + h) * rq, rq);
            auto dO = d.block(b * rq, h * dv, rq, dv);
            auto Qh = Q.block(b * rq, h * dq, rq, dq);
            auto Kh = K.block(b * rk, h * dq, rk, dq);
            auto Vh = V.block(b * rk, h * dv, rk, dv);
            dV.block(b * rk, h * dv, rk, dv) += p.transpose() * dO;
            Mat dP = dO * Vh.transpose();
            Mat dS = p.cwiseProduct(dP);
            const Eigen::VectorXd dot = dS.rowwise().sum();
            dS -= (p.array().colwise() * dot.array()).matrix();
            dS *= scale;
            dQ.block(b * rq, h * dq, rq, dq) += dS * Kh;
            dK.block(b * rk, h * dq, rk, dq) += dS.transpose() * Qh;
          }
        }
        if (g.needs_grad(iq)) g.accumulate(iq, dQ);
        if (g.needs_grad(ik)) g.accumulate(ik, dK);
        if (g.needs_grad(iv)) g.accumulate(iv, dV);
      });
}

Var bce_with_logits(Var logits, std::span<const double> labels) {
  require(logits.cols() == 1 && logits.rows() == static_cast<long>(labels.size()), "bce_with_logits");
  const Mat& z = logits.value();
  const long n = z.rows();
  double total = 0.0;
  for (long i = 0; i < n; ++i) {
    const double x = z(i, 0), y = labels[static_cast<std::size_t>(i)];
    // log(1 + e^x) - y x, evaluated stably.
    total += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
  }
  Mat out(1, 1);
  out(0, 0) = total / static_cast<double>(n);
  std::vector<double> y(labels.begin(), labels.end());
  const int il = logits.id();
  return logits.graph().push(std::move(out), {logits}, [il, y = std::move(y)](Graph& g, int self) {
    const Mat& z = g.value(il);
    const double d = g.grad(self)(0, 0) / static_cast<double>(z.rows());
    Mat r(z.rows(), 1);
    for (long i = 0; i < z.rows(); ++i) {
      const double x = z(i, 0);
      const double p = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
      r(i, 0) = (p - y[static_cast<std::size_t>(i)]) * d;
    }
    g.accumulate(il, r);
  });
}

}  // namespace kser
