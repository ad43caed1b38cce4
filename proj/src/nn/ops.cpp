#include "semicrf/nn/ops.hpp"

#include <cmath>
#include <memory>
#include <numbers>

#include "semicrf/error.hpp"

namespace semicrf::nn {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw ValidationError(what);
}

bool any_grad(const Tape& t, std::initializer_list<Var> vars) {
  for (Var v : vars) {
    if (v.valid() && t.needs_grad(v)) return true;
  }
  return false;
}

template <typename Expr>
void accumulate(Tape& t, Var v, const Expr& g) {
  if (v.valid() && t.needs_grad(v)) t.adjoint(v) += g;
}

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

}  // namespace

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

Var matmul(Tape& t, Var a, Var b) {
  require(t.value(a).cols() == t.value(b).rows(), "matmul: inner dimensions differ");
  return t.record(t.value(a) * t.value(b), any_grad(t, {a, b}), [&t, a, b](const Tensor& g) {
    if (t.needs_grad(a)) t.adjoint(a).noalias() += g * t.value(b).transpose();
    if (t.needs_grad(b)) t.adjoint(b).noalias() += t.value(a).transpose() * g;
  });
}

Var linear(Tape& t, Var x, Var w, Var b) {
  const auto& xv = t.value(x);
  const auto& wv = t.value(w);
  require(xv.cols() == wv.rows(), "linear: input width does not match weight rows");
  Tensor out = xv * wv;
  if (b.valid()) {
    require(t.value(b).rows() == 1 && t.value(b).cols() == wv.cols(), "linear: bias shape");
    out.rowwise() += t.value(b).row(0);
  }
  return t.record(std::move(out), any_grad(t, {x, w, b}), [&t, x, w, b](const Tensor& g) {
    if (t.needs_grad(x)) t.adjoint(x).noalias() += g * t.value(w).transpose();
    if (t.needs_grad(w)) t.adjoint(w).noalias() += t.value(x).transpose() * g;
    if (b.valid() && t.needs_grad(b)) t.adjoint(b) += g.colwise().sum();
  });
}

Var add(Tape& t, Var a, Var b) {
  require(t.value(a).rows() == t.value(b).rows() && t.value(a).cols() == t.value(b).cols(),
          "add: shapes differ");
  return t.record(t.value(a) + t.value(b), any_grad(t, {a, b}), [&t, a, b](const Tensor& g) {
    accumulate(t, a, g);
    accumulate(t, b, g);
  });
}

Var scale(Tape& t, Var a, double s) {
  return t.record(t.value(a) * s, any_grad(t, {a}),
                  [&t, a, s](const Tensor& g) { accumulate(t, a, g * s); });
}

Var scale_by(Tape& t, Var a, Var s) {
  require(t.value(s).size() == 1, "scale_by: scale must be 1x1");
  return t.record(t.value(a) * t.value(s)(0, 0), any_grad(t, {a, s}), [&t, a, s](const Tensor& g) {
    accumulate(t, a, g * t.value(s)(0, 0));
    if (t.needs_grad(s)) t.adjoint(s)(0, 0) += g.cwiseProduct(t.value(a)).sum();
  });
}

Var gelu(Tape& t, Var a) {
  Tensor out = t.value(a).unaryExpr([](double x) { return gelu(x); });
  return t.record(std::move(out), any_grad(t, {a}), [&t, a](const Tensor& g) {
    accumulate(t, a, g.cwiseProduct(t.value(a).unaryExpr([](double x) { return gelu_grad(x); })));
  });
}

Var cos(Tape& t, Var a) {
  return t.record(t.value(a).array().cos().matrix(), any_grad(t, {a}), [&t, a](const Tensor& g) {
    accumulate(t, a, (-g.array() * t.value(a).array().sin()).matrix());
  });
}

Var rms_norm(Tape& t, Var x, Var gain, double eps) {
  const auto& xv = t.value(x);
  require(t.value(gain).rows() == 1 && t.value(gain).cols() == xv.cols(), "rms_norm: gain shape");
  const auto n = static_cast<double>(xv.cols());
  // an all-zero row maps to zero (inverse rms taken as 0)
  auto inv = std::make_shared<Eigen::VectorXd>(
      ((xv.array().square().rowwise().sum() / n) + eps)
          .unaryExpr([](double ms) { return ms > 0.0 ? 1.0 / std::sqrt(ms) : 0.0; })
          .matrix());
  Tensor normed = xv.array().colwise() * inv->array();
  Tensor out = normed.array().rowwise() * t.value(gain).row(0).array();
  return t.record(std::move(out), any_grad(t, {x, gain}), [&t, x, gain, inv, n](const Tensor& g) {
    const auto& xv = t.value(x);
    const Tensor normed = xv.array().colwise() * inv->array();
    if (t.needs_grad(gain)) t.adjoint(gain) += g.cwiseProduct(normed).colwise().sum();
    if (t.needs_grad(x)) {
      // d/dx of x * r(x) with r = (mean x^2 + eps)^-1/2
      const Tensor gy = g.array().rowwise() * t.value(gain).row(0).array();
      const Eigen::VectorXd dot = gy.cwiseProduct(xv).rowwise().sum();
      const Eigen::ArrayXd r = inv->array();
      Tensor dx = gy.array().colwise() * r;
      dx.array() -= xv.array().colwise() * (dot.array() * r.cube() / n);
      t.adjoint(x) += dx;
    }
  });
}

Var gather_rows(Tape& t, Var x, std::vector<int> rows) {
  const auto& xv = t.value(x);
  Tensor out(static_cast<Eigen::Index>(rows.size()), xv.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    require(rows[r] >= 0 && rows[r] < xv.rows(), "gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(r)) = xv.row(rows[r]);
  }
  auto idx = std::make_shared<std::vector<int>>(std::move(rows));
  return t.record(std::move(out), any_grad(t, {x}), [&t, x, idx](const Tensor& g) {
    if (!t.needs_grad(x)) return;
    auto& ax = t.adjoint(x);
    for (std::size_t r = 0; r < idx->size(); ++r) ax.row((*idx)[r]) += g.row(static_cast<Eigen::Index>(r));
  });
}

Var reshape(Tape& t, Var x, int rows, int cols) {
  const auto& xv = t.value(x);
  require(static_cast<Eigen::Index>(rows) * cols == xv.size(), "reshape: size mismatch");
  Tensor out = Eigen::Map<const Tensor>(xv.data(), rows, cols);
  const auto r0 = xv.rows(), c0 = xv.cols();
  return t.record(std::move(out), any_grad(t, {x}), [&t, x, r0, c0](const Tensor& g) {
    accumulate(t, x, Eigen::Map<const Tensor>(g.data(), r0, c0));
  });
}

Var slice_cols(Tape& t, Var x, int begin, int count) {
  const auto& xv = t.value(x);
  require(begin >= 0 && count >= 0 && begin + count <= xv.cols(), "slice_cols: range");
  return t.record(xv.middleCols(begin, count), any_grad(t, {x}), [&t, x, begin, count](const Tensor& g) {
    if (t.needs_grad(x)) t.adjoint(x).middleCols(begin, count) += g;
  });
}

Var hconcat(Tape& t, Var a, Var b) {
  const auto& av = t.value(a);
  const auto& bv = t.value(b);
  require(av.rows() == bv.rows(), "hconcat: row counts differ");
  Tensor out(av.rows(), av.cols() + bv.cols());
  out << av, bv;
  const auto ca = av.cols(), cb = bv.cols();
  return t.record(std::move(out), any_grad(t, {a, b}), [&t, a, b, ca, cb](const Tensor& g) {
    accumulate(t, a, g.leftCols(ca));
    accumulate(t, b, g.rightCols(cb));
  });
}

Var vstack(Tape& t, Var a, Var b) {
  const auto& av = t.value(a);
  const auto& bv = t.value(b);
  require(av.cols() == bv.cols(), "vstack: column counts differ");
  Tensor out(av.rows() + bv.rows(), av.cols());
  out << av, bv;
  const auto ra = av.rows(), rb = bv.rows();
  return t.record(std::move(out), any_grad(t, {a, b}), [&t, a, b, ra, rb](const Tensor& g) {
    accumulate(t, a, g.topRows(ra));
    accumulate(t, b, g.bottomRows(rb));
  });
}

Var sum(Tape& t, Var a) {
  Tensor out(1, 1);
  out(0, 0) = t.value(a).sum();
  return t.record(std::move(out), any_grad(t, {a}), [&t, a](const Tensor& g) {
    if (t.needs_grad(a)) t.adjoint(a).array() += g(0, 0);
  });
}

Var add_scalars(Tape& t, const std::vector<Var>& terms) {
  Tensor out = Tensor::Zero(1, 1);
  bool grad = false;
  for (Var v : terms) {
    require(t.value(v).size() == 1, "add_scalars: terms must be 1x1");
    out(0, 0) += t.value(v)(0, 0);
    grad = grad || t.needs_grad(v);
  }
  return t.record(std::move(out), grad, [&t, terms](const Tensor& g) {
    for (Var v : terms) accumulate(t, v, g);
  });
}

namespace {

Tensor gather_block(const Tensor& x, const AxialLayout& layout, int group, int col0, int width) {
  const int n = layout.group_length();
  Tensor out(n, width);
  for (int k = 0; k < n; ++k) out.row(k) = x.row(layout.index(group, k)).segment(col0, width);
  return out;
}

void scatter_block(Tensor& x, const AxialLayout& layout, int group, int col0, const Tensor& block) {
  for (int k = 0; k < block.rows(); ++k) x.row(layout.index(group, k)).segment(col0, block.cols()) += block.row(k);
}

void check_attention(const Tensor& q, const Tensor& k, int heads, const AxialLayout& layout) {
  require(heads >= 1 && q.cols() % heads == 0, "attention: width not divisible by heads");
  require(q.rows() == static_cast<Eigen::Index>(layout.rows) * layout.cols,
          "attention: token count does not match layout");
  require(k.rows() == q.rows() && k.cols() == q.cols(), "attention: q/k shapes differ");
}

}  // namespace

std::vector<Tensor> attention_probabilities(const Tensor& q, const Tensor& k, int heads,
                                            const AxialLayout& layout) {
  check_attention(q, k, heads, layout);
  const int dh = static_cast<int>(q.cols()) / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> probs;
  probs.reserve(static_cast<std::size_t>(layout.num_groups()) * heads);
  for (int g = 0; g < layout.num_groups(); ++g) {
    for (int h = 0; h < heads; ++h) {
      const Tensor qg = gather_block(q, layout, g, h * dh, dh);
      const Tensor kg = gather_block(k, layout, g, h * dh, dh);
      Tensor s = (qg * kg.transpose()) * scale;
      s.colwise() -= s.rowwise().maxCoeff();
      s = s.array().exp();
      s.array().colwise() /= s.rowwise().sum().array();
      probs.push_back(std::move(s));
    }
  }
  return probs;
}

Var attention(Tape& t, Var q, Var k, Var v, int heads, const AxialLayout& layout) {
  const auto& qv = t.value(q);
  const auto& vv = t.value(v);
  require(vv.rows() == qv.rows() && vv.cols() == qv.cols(), "attention: v shape");
  auto probs = std::make_shared<std::vector<Tensor>>(attention_probabilities(qv, t.value(k), heads, layout));
  const int dh = static_cast<int>(qv.cols()) / heads;
  Tensor out = Tensor::Zero(qv.rows(), qv.cols());
  for (int g = 0; g < layout.num_groups(); ++g) {
    for (int h = 0; h < heads; ++h) {
      const Tensor vg = gather_block(vv, layout, g, h * dh, dh);
      scatter_block(out, layout, g, h * dh, (*probs)[g * heads + h] * vg);
    }
  }
  return t.record(std::move(out), any_grad(t, {q, k, v}), [&t, q, k, v, heads, layout, probs, dh](const Tensor& grad) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const auto& qv = t.value(q);
    const auto& kv = t.value(k);
    const auto& vv = t.value(v);
    Tensor dq = Tensor::Zero(qv.rows(), qv.cols());
    Tensor dk = dq, dv = dq;
    for (int g = 0; g < layout.num_groups(); ++g) {
      for (int h = 0; h < heads; ++h) {
        const Tensor& p = (*probs)[g * heads + h];
        const Tensor go = gather_block(grad, layout, g, h * dh, dh);
        const Tensor vg = gather_block(vv, layout, g, h * dh, dh);
        scatter_block(dv, layout, g, h * dh, p.transpose() * go);
        const Tensor dp = go * vg.transpose();
        Tensor ds = p.cwiseProduct(dp);
        const Eigen::VectorXd row = ds.rowwise().sum();
        ds -= (p.array().colwise() * row.array()).matrix();
        ds *= scale;
        scatter_block(dq, layout, g, h * dh, ds * gather_block(kv, layout, g, h * dh, dh));
        scatter_block(dk, layout, g, h * dh, ds.transpose() * gather_block(qv, layout, g, h * dh, dh));
      }
    }
    accumulate(t, q, dq);
    accumulate(t, k, dk);
    accumulate(t, v, dv);
  });
}

}  // namespace semicrf::nn
