#include "semicrf/nn/attributes.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "semicrf/error.hpp"

namespace semicrf::nn {

namespace cb {

namespace {
// |sigmoid(eta) - 1/2| < 1e-3  <=>  |eta| < 2 atanh(2e-3)
const double kSeriesEta = 2.0 * std::atanh(2e-3);
}  // namespace

double sigmoid(double eta) {
  if (eta >= 0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

// C = 2 atanh(1-2l)/(1-2l) = eta / tanh(eta/2)
double log_normalizer(double eta) {
  const double a = std::abs(eta);
  if (a < kSeriesEta) {
    const double e2 = eta * eta;
    return std::log(2.0) + e2 / 12.0 - 7.0 * e2 * e2 / 1440.0;
  }
  // log(a) - log(tanh(a/2)), with tanh(a/2) = (1 - e^-a) / (1 + e^-a)
  return std::log(a) + std::log1p(std::exp(-a)) - std::log(-std::expm1(-a));
}

double log_normalizer_grad(double eta) {
  if (std::abs(eta) < kSeriesEta) return eta / 6.0 - 7.0 * eta * eta * eta / 360.0;
  return 1.0 / eta - 1.0 / std::sinh(eta);
}

double log_density(double x, double eta) { return log_normalizer(eta) + x * eta - softplus(eta); }

double log_density_grad(double x, double eta) { return log_normalizer_grad(eta) + x - sigmoid(eta); }

double mean(double eta) {
  if (std::abs(eta) < kSeriesEta) return 0.5 + eta / 12.0;
  return sigmoid(eta) / std::tanh(0.5 * eta) - 1.0 / eta;
}

double logit(double lambda) { return std::log(lambda) - std::log1p(-lambda); }

}  // namespace cb

void validate_observed(const ObservedAttributes& obs) {
  if (obs.velocity && (*obs.velocity < 0 || *obs.velocity >= kVelocityClasses)) {
    throw ValidationError("velocity outside 0..127");
  }
  auto check = [](const std::optional<double>& r, const char* what) {
    if (r && !(*r > -0.5 && *r < 0.5)) throw ValidationError(std::string(what) + " outside (-0.5, 0.5)");
  };
  check(obs.refined_onset, "refined_onset");
  check(obs.refined_offset, "refined_offset");
}

double attribute_log_likelihood(const Eigen::Ref<const Eigen::RowVectorXd>& row,
                                const ObservedAttributes& obs, Eigen::RowVectorXd* grad) {
  if (row.size() != kAttributeWidth) throw ValidationError("attribute row must have 132 entries");
  validate_observed(obs);
  if (grad) grad->setZero(kAttributeWidth);
  double ll = 0.0;
  if (obs.velocity) {
    const auto logits = row.head(kVelocityClasses);
    const double m = logits.maxCoeff();
    const double lse = m + std::log((logits.array() - m).exp().sum());
    ll += logits(*obs.velocity) - lse;
    if (grad) {
      grad->head(kVelocityClasses) = -(logits.array() - lse).exp().matrix();
      (*grad)(*obs.velocity) += 1.0;
    }
  }
  auto refine = [&](const std::optional<double>& r, int col) {
    if (!r) return;
    const double x = *r + 0.5;
    ll += cb::log_density(x, row(col));
    if (grad) (*grad)(col) = cb::log_density_grad(x, row(col));
  };
  refine(obs.refined_onset, kRefineOnsetCol);
  refine(obs.refined_offset, kRefineOffsetCol);
  auto flag = [&](bool y, int col) {
    const double a = row(col);
    ll += y ? -cb::softplus(-a) : -cb::softplus(a);
    if (grad) (*grad)(col) = (y ? 1.0 : 0.0) - cb::sigmoid(a);
  };
  flag(obs.has_onset, kHasOnsetCol);
  flag(obs.has_offset, kHasOffsetCol);
  return ll;
}

AttributeEstimate decode_attributes(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  if (row.size() != kAttributeWidth) throw ValidationError("attribute row must have 132 entries");
  AttributeEstimate e;
  Eigen::Index best = 0;
  row.head(kVelocityClasses).maxCoeff(&best);
  e.velocity = static_cast<int>(best);
  // clamp keeps the refinement strictly inside the open interval
  auto refine = [](double eta) { return std::clamp(cb::mean(eta) - 0.5, -0.5 + 1e-9, 0.5 - 1e-9); };
  e.refined_onset = refine(row(kRefineOnsetCol));
  e.refined_offset = refine(row(kRefineOffsetCol));
  e.has_onset = row(kHasOnsetCol) >= 0.0;
  e.has_offset = row(kHasOffsetCol) >= 0.0;
  return e;
}

}  // namespace semicrf::nn
