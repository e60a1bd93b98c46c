#ifndef DDRACE_BSPLINE_HPP
#define DDRACE_BSPLINE_HPP

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "ddrace/math.hpp"

namespace ddrace {

// Clamped uniform quadratic B-spline basis on [a, b]: triple knots at both
// ends, equispaced interior knots. With n_sub subintervals there are
// n_sub + 2 basis functions forming a partition of unity.
struct SplineBasis {
  double a = 1.0;
  double b = 2.0;
  int n_sub = 1;

  double spacing() const { return (b - a) / n_sub; }
  int size() const { return n_sub + 2; }

  // Full knot vector t_1..t_{n_sub+5} with triple-clamped ends.
  std::vector<double> knots() const {
    std::vector<double> t;
    t.reserve(static_cast<std::size_t>(n_sub) + 5);
    for (int i = 0; i < 3; ++i) t.push_back(a);
    const double d = spacing();
    for (int i = 1; i < n_sub; ++i) t.push_back(a + i * d);
    for (int i = 0; i < 3; ++i) t.push_back(b);
    return t;
  }
};

// Basis with interior knots at the block locations 1..num_blocks, so the
// latent state pair (z_t, z_{t+1}) determines the curve value at block t.
inline SplineBasis make_block_basis(int num_blocks) {
  if (num_blocks < 2) throw std::invalid_argument("basis requires at least 2 blocks");
  return SplineBasis{1.0, static_cast<double>(num_blocks), num_blocks - 1};
}

// Evaluates all basis functions at t. At most three entries are nonzero.
// The right endpoint uses the left-limit convention, so the vector sums to 1
// on the whole closed domain.
inline void eval_basis(const SplineBasis& basis, double t, std::span<double> out) {
  const int n = basis.size();
  if (static_cast<int>(out.size()) != n) {
    throw std::invalid_argument("basis output size mismatch");
  }
  if (t < basis.a || t > basis.b) throw std::domain_error("basis argument outside domain");
  for (double& v : out) v = 0.0;

  const int last = basis.n_sub - 1;
  const double u = (t - basis.a) / basis.spacing();
  int j = std::min(static_cast<int>(u), last);
  const double x = u - j;

  // Local quadratics on subinterval j for basis functions j+1, j+2, j+3
  // (1-based); the end pieces absorb the clamped knots.
  const double first = (j == 0) ? sq(1.0 - x) : 0.5 * sq(1.0 - x);
  double second;
  if (basis.n_sub == 1) {
    second = 2.0 * x * (1.0 - x);
  } else if (j == 0) {
    second = 2.0 * x - 1.5 * x * x;
  } else if (j == last) {
    second = 0.5 + x - 1.5 * x * x;
  } else {
    second = 0.5 + x - x * x;
  }
  const double third = (j == last) ? x * x : 0.5 * x * x;

  out[j] = first;
  out[j + 1] = second;
  out[j + 2] = third;
}

inline std::vector<double> eval_basis(const SplineBasis& basis, double t) {
  std::vector<double> out(basis.size());
  eval_basis(basis, t, out);
  return out;
}

inline double eval_function(const SplineBasis& basis, std::span<const double> coeffs,
                            double t) {
  if (static_cast<int>(coeffs.size()) != basis.size()) {
    throw std::invalid_argument("coefficient length mismatch");
  }
  std::vector<double> v(basis.size());
  eval_basis(basis, t, v);
  double s = 0.0;
  for (int k = 0; k < basis.size(); ++k) s += v[k] * coeffs[k];
  return s;
}

}  // namespace ddrace

#endif
