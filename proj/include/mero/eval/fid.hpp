#pragma once

#include <string>

#include <Eigen/Dense>

namespace mero::eval {

struct FeatureSet {
  Eigen::MatrixXd features;  // N x d
  std::string extractor_id;
};

struct Moments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;  // 1/(N-1) normalisation
  long count = 0;
  bool shrunk = false;  // N <= d, cov += 1e-6 I
};

inline constexpr double kCovarianceShrinkage = 1e-6;

// Mean and covariance with compensated summation; rejects N < 2 and
// non-finite entries.
Moments moments_of(const Eigen::MatrixXd& features);

// ||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2)), with the square-root trace
// taken from the eigenvalues of S1^(1/2) S2 S1^(1/2) clamped at zero.
double frechet_distance(const Moments& a, const Moments& b);
double frechet_distance(const FeatureSet& real, const FeatureSet& fake);

}  // namespace mero::eval
