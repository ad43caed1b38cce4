#include "semicrf/nn/losses.hpp"

#include <cmath>
#include <memory>

#include "semicrf/error.hpp"
#include "semicrf/interval_scoring.hpp"

namespace semicrf::nn {

IntervalScores scores_from_heads(const Tensor& q, const Tensor& k, const Tensor& b, const Tensor& eps) {
  const auto T = q.rows();
  if (b.rows() != T || b.cols() != 1 || eps.rows() != T || eps.cols() != 1) {
    throw ValidationError("score heads: b and eps must be T x 1");
  }
  IntervalScores s = scaled_inner_product_scores(q, k, Eigen::VectorXd(b.col(0)));
  for (Eigen::Index i = 0; i + 1 < T; ++i) s.eps(static_cast<int>(i)) = eps(i, 0);
  return s;
}

Var semicrf_nll(Tape& t, Var q, Var k, Var b, Var eps, std::vector<Interval> target) {
  const IntervalScores scores = scores_from_heads(t.value(q), t.value(k), t.value(b), t.value(eps));
  if (!validate_non_overlap(target)) throw ValidationError("semicrf_nll: target intervals overlap");
  for (const auto& iv : target) {
    if (iv.onset < 0 || iv.offset >= scores.num_frames() || iv.onset > iv.offset) {
      throw ValidationError("semicrf_nll: target interval outside the sequence");
    }
  }
  Tensor out(1, 1);
  out(0, 0) = -log_likelihood(scores, target);
  const bool grad = t.needs_grad(q) || t.needs_grad(k) || t.needs_grad(b) || t.needs_grad(eps);
  auto y = std::make_shared<std::vector<Interval>>(std::move(target));
  return t.record(std::move(out), grad, [&t, q, k, b, eps, y](const Tensor& g) {
    const Tensor& qv = t.value(q);
    const Tensor& kv = t.value(k);
    const auto T = static_cast<int>(qv.rows());
    const IntervalScores scores = scores_from_heads(qv, kv, t.value(b), t.value(eps));
    const Marginals m = interval_marginals(scores);
    // d nll / d score = marginal - indicator
    Tensor w = Tensor::Zero(T, T);
    Tensor db(T, 1);
    Tensor de = Tensor::Zero(T, 1);
    for (int i = 0; i < T; ++i) {
      db(i, 0) = m.at(i, i);
      for (int j = i + 1; j < T; ++j) w(i, j) = m.at(i, j);
    }
    for (int i = 0; i + 1 < T; ++i) de(i, 0) = m.uncovered[static_cast<std::size_t>(i)];
    for (const auto& iv : *y) {
      if (iv.onset == iv.offset) {
        db(iv.onset, 0) -= 1.0;
      } else {
        w(iv.onset, iv.offset) -= 1.0;
      }
      for (int u = iv.onset; u < iv.offset; ++u) de(u, 0) += 1.0;  // covered units
    }
    for (int i = 0; i + 1 < T; ++i) de(i, 0) -= 1.0;  // uncovered indicator = 1 - covered
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(qv.cols()));
    for (int i = 0; i < T; ++i) {
      for (int j = i + 1; j < T; ++j) w(i, j) *= (j - i) * inv_sqrt_d;
    }
    const double s = g(0, 0);
    if (t.needs_grad(q)) t.adjoint(q).noalias() += s * (w * kv);
    if (t.needs_grad(k)) t.adjoint(k).noalias() += s * (w.transpose() * qv);
    if (t.needs_grad(b)) t.adjoint(b) += s * db;
    if (t.needs_grad(eps)) t.adjoint(eps) += s * de;
  });
}

Var attribute_nll(Tape& t, Var rows, std::vector<ObservedAttributes> targets) {
  const Tensor& rv = t.value(rows);
  if (rv.rows() != static_cast<Eigen::Index>(targets.size()) || rv.cols() != kAttributeWidth) {
    throw ValidationError("attribute_nll: expected one 132-wide row per target");
  }
  Tensor out = Tensor::Zero(1, 1);
  auto grads = std::make_shared<Tensor>(Tensor::Zero(rv.rows(), rv.cols()));
  for (std::size_t n = 0; n < targets.size(); ++n) {
    Eigen::RowVectorXd gr;
    out(0, 0) -= attribute_log_likelihood(rv.row(static_cast<Eigen::Index>(n)), targets[n], &gr);
    grads->row(static_cast<Eigen::Index>(n)) = -gr;
  }
  return t.record(std::move(out), t.needs_grad(rows), [&t, rows, grads](const Tensor& g) {
    t.adjoint(rows) += g(0, 0) * *grads;
  });
}

}  // namespace semicrf::nn
