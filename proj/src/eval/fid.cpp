#include "mero/eval/fid.hpp"

#include <cmath>

#include "mero/error.hpp"

namespace mero::eval {

namespace {

// Neumaier summation.
struct Compensated {
  double sum = 0.0;
  double c = 0.0;
  void add(double v) {
    const double t = sum + v;
    if (std::abs(sum) >= std::abs(v))
      c += (sum - t) + v;
    else
      c += (v - t) + sum;
    sum = t;
  }
  double value() const { return sum + c; }
};

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& s) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (s + s.transpose()));
  const Eigen::VectorXd root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

Moments moments_of(const Eigen::MatrixXd& x) {
  const long n = x.rows(), d = x.cols();
  if (n < 2) throw ValidationError("FID needs at least two feature rows, got " + std::to_string(n));
  if (!x.allFinite()) throw ValidationError("FID features contain non-finite values");
  Moments m;
  m.count = n;
  m.mean.resize(d);
  for (long j = 0; j < d; ++j) {
    Compensated s;
    for (long i = 0; i < n; ++i) s.add(x(i, j));
    m.mean(j) = s.value() / static_cast<double>(n);
  }
  m.cov.resize(d, d);
  for (long a = 0; a < d; ++a)
    for (long b = a; b < d; ++b) {
      Compensated s;
      for (long i = 0; i < n; ++i) s.add((x(i, a) - m.mean(a)) * (x(i, b) - m.mean(b)));
      m.cov(a, b) = m.cov(b, a) = s.value() / static_cast<double>(n - 1);
    }
  if (n <= d) {
    m.cov += kCovarianceShrinkage * Eigen::MatrixXd::Identity(d, d);
    m.shrunk = true;
  }
  return m;
}

double frechet_distance(const Moments& a, const Moments& b) {
  MERO_CHECK(a.mean.size() == b.mean.size(), "FID: feature dimensions differ");
  const Eigen::MatrixXd root_a = psd_sqrt(a.cov);
  const Eigen::MatrixXd inner = root_a * b.cov * root_a;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  const double trace_root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double fid = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2.0 * trace_root;
  return std::max(0.0, fid);
}

double frechet_distance(const FeatureSet& real, const FeatureSet& fake) {
  if (real.extractor_id != fake.extractor_id)
    throw ValidationError("FID: feature sets come from different extractors");
  return frechet_distance(moments_of(real.features), moments_of(fake.features));
}

}  // namespace mero::eval
