#pragma once

#include <optional>

#include <Eigen/Dense>

namespace semicrf::nn {

inline constexpr int kVelocityClasses = 128;
// velocity logits, onset/offset refinement logits, has_onset/has_offset logits
inline constexpr int kAttributeWidth = kVelocityClasses + 4;
inline constexpr int kRefineOnsetCol = kVelocityClasses;
inline constexpr int kRefineOffsetCol = kVelocityClasses + 1;
inline constexpr int kHasOnsetCol = kVelocityClasses + 2;
inline constexpr int kHasOffsetCol = kVelocityClasses + 3;

// Continuous Bernoulli on [0,1] parameterized by the logit eta of lambda.
namespace cb {

double sigmoid(double eta);
double softplus(double x);
// log C(lambda); series branch when |lambda - 1/2| < 1e-3.
double log_normalizer(double eta);
double log_normalizer_grad(double eta);
double log_density(double x, double eta);
// d/d eta of log_density.
double log_density_grad(double x, double eta);
double mean(double eta);
double logit(double lambda);

}  // namespace cb

// Targets for one event. Refinements are in (-0.5, 0.5).
struct ObservedAttributes {
  std::optional<int> velocity;
  std::optional<double> refined_onset;
  std::optional<double> refined_offset;
  bool has_onset = true;
  bool has_offset = true;
};

struct AttributeEstimate {
  int velocity = 0;
  double refined_onset = 0.0;
  double refined_offset = 0.0;
  bool has_onset = true;
  bool has_offset = true;
};

// Throws ValidationError for values outside their domain.
void validate_observed(const ObservedAttributes& obs);

// Log-likelihood of one event's attributes under one row of head outputs.
// When `grad` is given it receives d(loglik)/d(row).
double attribute_log_likelihood(const Eigen::Ref<const Eigen::RowVectorXd>& row,
                                const ObservedAttributes& obs, Eigen::RowVectorXd* grad = nullptr);

// argmax velocity, mean - 0.5 refinements, flags at probability 0.5.
AttributeEstimate decode_attributes(const Eigen::Ref<const Eigen::RowVectorXd>& row);

}  // namespace semicrf::nn
