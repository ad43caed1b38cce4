#pragma once

#include <vector>

#include "semicrf/engine.hpp"
#include "semicrf/nn/attributes.hpp"
#include "semicrf/nn/tape.hpp"

namespace semicrf::nn {

// Interval scores from a T x D query matrix, T x D key matrix and T x 1 bias:
// score(i,j) = (j-i)/sqrt(D) <q_i,k_j> for i<j, score(i,i) = b_i; eps(i) from
// the first T-1 rows of the T x 1 eps column.
IntervalScores scores_from_heads(const Tensor& q, const Tensor& k, const Tensor& b, const Tensor& eps);

// -log p(Y | scores) as a 1x1 node.
Var semicrf_nll(Tape& t, Var q, Var k, Var b, Var eps, std::vector<Interval> target);

// -sum of attribute log-likelihoods, one row of `rows` (N x 132) per target.
Var attribute_nll(Tape& t, Var rows, std::vector<ObservedAttributes> targets);

}  // namespace semicrf::nn
