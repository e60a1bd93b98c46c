#ifndef DDRACE_NELDER_MEAD_HPP
#define DDRACE_NELDER_MEAD_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

namespace ddrace {

struct NelderMeadResult {
  std::vector<double> x;
  double value = 0.0;
  int evaluations = 0;
  bool converged = false;
};

// Standard simplex minimizer (reflection 1, expansion 2, contraction 1/2,
// shrink 1/2).
inline NelderMeadResult nelder_mead(const std::function<double(const std::vector<double>&)>& f,
                                    std::vector<double> start, double step = 0.5,
                                    double tol = 1e-9, int max_evals = 20000) {
  const int n = static_cast<int>(start.size());
  NelderMeadResult res;
  std::vector<std::vector<double>> simplex(n + 1, start);
  std::vector<double> value(n + 1);
  for (int i = 0; i < n; ++i) simplex[i + 1][i] += step;
  for (int i = 0; i <= n; ++i) value[i] = f(simplex[i]);
  res.evaluations = n + 1;

  std::vector<int> order(n + 1);
  std::vector<double> centroid(n), trial(n), trial2(n);
  while (res.evaluations < max_evals) {
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) { return value[a] < value[b]; });
    const int best = order[0], worst = order[n], second_worst = order[n - 1];
    if (std::abs(value[worst] - value[best]) <=
        tol * (std::abs(value[best]) + std::abs(value[worst]) + 1e-300)) {
      res.converged = true;
      break;
    }
    std::fill(centroid.begin(), centroid.end(), 0.0);
    for (int i = 0; i <= n; ++i) {
      if (i == worst) continue;
      for (int j = 0; j < n; ++j) centroid[j] += simplex[i][j] / n;
    }
    for (int j = 0; j < n; ++j) trial[j] = centroid[j] + (centroid[j] - simplex[worst][j]);
    const double f_reflect = f(trial);
    ++res.evaluations;
    if (f_reflect < value[best]) {
      for (int j = 0; j < n; ++j) trial2[j] = centroid[j] + 2.0 * (centroid[j] - simplex[worst][j]);
      const double f_expand = f(trial2);
      ++res.evaluations;
      if (f_expand < f_reflect) {
        simplex[worst] = trial2;
        value[worst] = f_expand;
      } else {
        simplex[worst] = trial;
        value[worst] = f_reflect;
      }
    } else if (f_reflect < value[second_worst]) {
      simplex[worst] = trial;
      value[worst] = f_reflect;
    } else {
      for (int j = 0; j < n; ++j) trial2[j] = centroid[j] + 0.5 * (simplex[worst][j] - centroid[j]);
      const double f_contract = f(trial2);
      ++res.evaluations;
      if (f_contract < value[worst]) {
        simplex[worst] = trial2;
        value[worst] = f_contract;
      } else {
        for (int i = 0; i <= n; ++i) {
          if (i == best) continue;
          for (int j = 0; j < n; ++j) {
            simplex[i][j] = simplex[best][j] + 0.5 * (simplex[i][j] - simplex[best][j]);
          }
          value[i] = f(simplex[i]);
          ++res.evaluations;
        }
      }
    }
  }
  const int best = static_cast<int>(std::min_element(value.begin(), value.end()) - value.begin());
  res.x = simplex[best];
  res.value = value[best];
  return res;
}

}  // namespace ddrace

#endif
