#include "semicrf/nn/tape.hpp"

#include <cmath>

#include "semicrf/error.hpp"

namespace semicrf::nn {

Parameter& ParamStore::add(const std::string& name, int rows, int cols, Init init, bool decay,
                           std::mt19937_64& rng, double a, double b) {
  if (params_.count(name)) throw ValidationError("duplicate parameter '" + name + "'");
  Parameter p;
  p.name = name;
  p.decay = decay;
  p.value.resize(rows, cols);
  p.grad = Tensor::Zero(rows, cols);
  switch (init) {
    case Init::kZeros:
      p.value.setZero();
      break;
    case Init::kOnes:
      p.value.setOnes();
      break;
    case Init::kConstant:
      p.value.setConstant(a);
      break;
    case Init::kNormal: {
      std::normal_distribution<double> d(0.0, a);
      for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = d(rng);
      break;
    }
    case Init::kUniform: {
      std::uniform_real_distribution<double> d(a, b);
      for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = d(rng);
      break;
    }
    case Init::kXavier: {
      const double bound = std::sqrt(6.0 / (rows + cols));
      std::uniform_real_distribution<double> d(-bound, bound);
      for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = d(rng);
      break;
    }
  }
  return params_.emplace(name, std::move(p)).first->second;
}

Parameter& ParamStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ValidationError("unknown parameter '" + name + "'");
  return it->second;
}

const Parameter& ParamStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ValidationError("unknown parameter '" + name + "'");
  return it->second;
}

void ParamStore::zero_grad() {
  for (auto& [_, p] : params_) p.grad.setZero();
}

double ParamStore::grad_norm() const {
  double sq = 0.0;
  for (const auto& [_, p] : params_) sq += p.grad.squaredNorm();
  return std::sqrt(sq);
}

void ParamStore::scale_grad(double factor) {
  for (auto& [_, p] : params_) p.grad *= factor;
}

std::size_t ParamStore::num_values() const {
  std::size_t n = 0;
  for (const auto& [_, p] : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

Var Tape::constant(Tensor value) { return record(std::move(value), false, nullptr); }

Var Tape::input(Tensor value) { return record(std::move(value), true, nullptr); }

Var Tape::param(Parameter& p) {
  auto it = param_ids_.find(&p);
  if (it != param_ids_.end()) return Var{it->second};
  Var v = record(p.value, true, nullptr);
  nodes_[v.id].param = &p;
  param_ids_.emplace(&p, v.id);
  return v;
}

Var Tape::record(Tensor value, bool needs_grad, std::function<void(const Tensor&)> backward) {
  DiffArray node;
  node.value = std::move(value);
  node.needs_grad = needs_grad;
  node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Tensor& Tape::adjoint(Var v) {
  auto& node = nodes_[v.id];
  if (node.adjoint.size() != node.value.size()) {
    node.adjoint = Tensor::Zero(node.value.rows(), node.value.cols());
  }
  return node.adjoint;
}

void Tape::backward(Var loss) {
  if (value(loss).size() != 1) throw ValidationError("backward needs a scalar loss");
  adjoint(loss)(0, 0) += 1.0;
  for (int id = loss.id; id >= 0; --id) {
    auto& node = nodes_[id];
    if (!node.needs_grad || node.adjoint.size() == 0) continue;
    if (node.backward) node.backward(node.adjoint);
    if (node.param != nullptr) node.param->grad += node.adjoint;
  }
}

}  // namespace semicrf::nn
