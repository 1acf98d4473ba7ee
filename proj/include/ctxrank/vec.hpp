#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace ctxrank {

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// y += alpha * x
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline void scale(std::span<double> x, double alpha) {
  for (double& v : x) v *= alpha;
}

inline double norm2(std::span<const double> x) {
  return std::sqrt(dot(x, x));
}

inline void normalize(std::vector<double>& x) {
  const double n = norm2(x);
  if (n > 0.0) scale(x, 1.0 / n);
}

inline std::vector<double> zeros(std::size_t n) { return std::vector<double>(n, 0.0); }

}  // namespace ctxrank
