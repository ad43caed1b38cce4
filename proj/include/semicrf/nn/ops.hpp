#pragma once

#include <vector>

#include "semicrf/nn/tape.hpp"

namespace semicrf::nn {

Var matmul(Tape& t, Var a, Var b);
// x W + b with b broadcast over rows (b may be invalid for no bias).
Var linear(Tape& t, Var x, Var w, Var b);
Var add(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double s);
// a * s for a learnable 1x1 s.
Var scale_by(Tape& t, Var a, Var s);
Var gelu(Tape& t, Var a);
Var cos(Tape& t, Var a);
// x / sqrt(mean(x^2) + eps) * gain, per row; gain is 1 x cols. Zero rows stay zero.
Var rms_norm(Tape& t, Var x, Var gain, double eps = 0.0);

Var gather_rows(Tape& t, Var x, std::vector<int> rows);
Var reshape(Tape& t, Var x, int rows, int cols);
Var slice_cols(Tape& t, Var x, int begin, int count);
Var hconcat(Tape& t, Var a, Var b);
Var vstack(Tape& t, Var a, Var b);
Var sum(Tape& t, Var a);
Var add_scalars(Tape& t, const std::vector<Var>& terms);

// Token grid with `rows` time steps and `cols` columns stored row-major as
// (time, column). Attention runs within each column (kTime) or within each
// time step (kColumn).
struct AxialLayout {
  enum class Axis { kTime, kColumn };
  int rows = 0;
  int cols = 0;
  Axis axis = Axis::kTime;

  int num_groups() const { return axis == Axis::kTime ? cols : rows; }
  int group_length() const { return axis == Axis::kTime ? rows : cols; }
  int index(int group, int k) const { return axis == Axis::kTime ? k * cols + group : group * cols + k; }
};

// Softmax(Q_h K_h^T / sqrt(d_h)) for every (group, head), group-major.
std::vector<Tensor> attention_probabilities(const Tensor& q, const Tensor& k, int heads,
                                            const AxialLayout& layout);

// Multi-head scaled dot-product attention within each group of the layout.
Var attention(Tape& t, Var q, Var k, Var v, int heads, const AxialLayout& layout);

double gelu(double x);

}  // namespace semicrf::nn
