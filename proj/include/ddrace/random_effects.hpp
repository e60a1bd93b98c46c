#ifndef DDRACE_RANDOM_EFFECTS_HPP
#define DDRACE_RANDOM_EFFECTS_HPP

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <array>
#include <span>
#include <stdexcept>
#include <vector>

#include "ddrace/errors.hpp"
#include "ddrace/math.hpp"

namespace ddrace {

// Subject-level spline coefficient families. Correct/incorrect share one
// curve each for drift and boundary, so four curves per subject.
enum class ReFamily : int {
  kDriftCorrect = 0,
  kDriftIncorrect = 1,
  kBoundaryCorrect = 2,
  kBoundaryIncorrect = 3,
};
inline constexpr int kNumReFamilies = 4;
inline constexpr std::array<const char*, kNumReFamilies> kReFamilyNames = {
    "drift_correct", "drift_incorrect", "boundary_correct", "boundary_incorrect"};

inline ReFamily re_family(bool drift, bool correct) {
  return static_cast<ReFamily>((drift ? 0 : 2) + (correct ? 0 : 1));
}

struct RandomEffectCoeffs {
  int n = 0;
  int K = 0;
  // [subject][family][k]
  std::vector<double> values;

  static RandomEffectCoeffs zeros(int n, int K) {
    RandomEffectCoeffs re;
    re.n = n;
    re.K = K;
    re.values.assign(static_cast<std::size_t>(n) * kNumReFamilies * K, 0.0);
    return re;
  }

  std::size_t index(int subject, ReFamily fam, int k) const {
    return (static_cast<std::size_t>(subject) * kNumReFamilies +
            static_cast<int>(fam)) * K + k;
  }
  double& at(int subject, ReFamily fam, int k) { return values[index(subject, fam, k)]; }
  double at(int subject, ReFamily fam, int k) const { return values[index(subject, fam, k)]; }
  std::span<double> coeffs(int subject, ReFamily fam) {
    return {values.data() + index(subject, fam, 0), static_cast<std::size_t>(K)};
  }
  std::span<const double> coeffs(int subject, ReFamily fam) const {
    return {values.data() + index(subject, fam, 0), static_cast<std::size_t>(K)};
  }
};

// (sigma^2_{u,a}, sigma^2_{u,s}) per family: overall deviation scale and
// first-difference smoothness scale.
struct VarianceComponents {
  std::array<double, kNumReFamilies> amplitude{1.0, 1.0, 1.0, 1.0};
  std::array<double, kNumReFamilies> smoothness{1.0, 1.0, 1.0, 1.0};
};

// P = D^T D with D the (K-1) x K first-difference operator.
inline Eigen::MatrixXd difference_penalty(int K) {
  if (K < 2) throw std::invalid_argument("difference penalty needs K >= 2");
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(K, K);
  for (int k = 0; k + 1 < K; ++k) {
    P(k, k) += 1.0;
    P(k + 1, k + 1) += 1.0;
    P(k, k + 1) -= 1.0;
    P(k + 1, k) -= 1.0;
  }
  return P;
}

inline Eigen::MatrixXd re_precision(int K, double var_amplitude, double var_smooth) {
  Eigen::MatrixXd Q = difference_penalty(K) / var_smooth;
  Q.diagonal().array() += 1.0 / var_amplitude;
  return Q;
}

// MVN_K(0, Q^{-1}) log-density with Q = I/sigma^2_a + P/sigma^2_s, including
// the log-determinant term.
inline double re_log_prior(std::span<const double> coeffs, double var_amplitude,
                           double var_smooth) {
  if (!(var_amplitude > 0.0) || !(var_smooth > 0.0)) {
    throw std::invalid_argument("variance components must be positive");
  }
  const int K = static_cast<int>(coeffs.size());
  const Eigen::MatrixXd Q = re_precision(K, var_amplitude, var_smooth);
  const Eigen::LLT<Eigen::MatrixXd> llt(Q);
  if (llt.info() != Eigen::Success) throw NumericalError("re precision not PD");
  const Eigen::Map<const Eigen::VectorXd> beta(coeffs.data(), K);
  const double quad = beta.dot(Q * beta);
  double log_det = 0.0;
  for (int k = 0; k < K; ++k) log_det += 2.0 * std::log(llt.matrixL()(k, k));
  return 0.5 * log_det - 0.5 * K * kLog2Pi - 0.5 * quad;
}

// Exact draw from the random effects prior; used for initialization of
// synthetic scenarios and by tests.
template <typename RngT>
std::vector<double> sample_re_prior(int K, double var_amplitude, double var_smooth,
                                    RngT& rng) {
  const Eigen::MatrixXd Q = re_precision(K, var_amplitude, var_smooth);
  const Eigen::LLT<Eigen::MatrixXd> llt(Q);
  Eigen::VectorXd z(K);
  for (int k = 0; k < K; ++k) z(k) = rng.normal();
  // beta = L^{-T} z has covariance Q^{-1}
  const Eigen::VectorXd beta = llt.matrixU().solve(z);
  return {beta.data(), beta.data() + K};
}

}  // namespace ddrace

#endif
