#pragma once

#include <functional>
#include <map>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace semicrf::nn {

using Tensor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// A named trainable array. `decay` marks eligibility for weight decay.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool decay = true;
};

class ParamStore {
 public:
  enum class Init { kZeros, kOnes, kConstant, kNormal, kUniform, kXavier };

  // Adds a parameter; `a`, `b` are the init arguments (constant value,
  // normal std, or uniform bounds). Throws if the name already exists.
  Parameter& add(const std::string& name, int rows, int cols, Init init, bool decay,
                 std::mt19937_64& rng, double a = 0.0, double b = 0.0);

  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  void zero_grad();
  double grad_norm() const;
  void scale_grad(double factor);
  std::size_t num_values() const;

  // Ordered by name; stable across runs.
  std::map<std::string, Parameter>& items() { return params_; }
  const std::map<std::string, Parameter>& items() const { return params_; }

 private:
  std::map<std::string, Parameter> params_;
};

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// One value/adjoint pair on the tape.
struct DiffArray {
  Tensor value;
  Tensor adjoint;  // empty until touched by the backward pass
  bool needs_grad = false;
  // Receives this node's adjoint and propagates it to the inputs.
  std::function<void(const Tensor&)> backward;
  Parameter* param = nullptr;
};

// Records operations in evaluation order; backward() replays them in reverse,
// accumulating adjoints. Parameter adjoints are added into Parameter::grad.
class Tape {
 public:
  Var constant(Tensor value);
  Var input(Tensor value);  // a leaf that receives an adjoint
  Var param(Parameter& p);  // one leaf per parameter per tape

  Var record(Tensor value, bool needs_grad, std::function<void(const Tensor&)> backward);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }
  // Adjoint, allocated as zeros on first access.
  Tensor& adjoint(Var v);
  const Tensor& adjoint_or_empty(Var v) const { return nodes_[v.id].adjoint; }

  // Seeds d(loss)/d(loss) = 1 for a 1x1 loss.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<DiffArray> nodes_;
  std::unordered_map<Parameter*, int> param_ids_;
};

}  // namespace semicrf::nn
