#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>

namespace ctxrank {

inline double log_beta(double a, double b) {
  return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

namespace stats_detail {

// Continued fraction for the incomplete beta function, evaluated with the
// modified Lentz method. Converges quickly when x < (a+1)/(a+b+2); the
// caller flips to the symmetric tail otherwise.
// https://en.wikipedia.org/wiki/Beta_function#Incomplete_beta_function
inline double beta_continued_fraction(double a, double b, double x) {
  constexpr double eps = 1e-14;
  constexpr double fp_min = 1e-300;
  constexpr int max_iters = 500;

  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < fp_min) d = fp_min;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= max_iters; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < fp_min) d = fp_min;
    c = 1.0 + aa / c;
    if (std::fabs(c) < fp_min) c = fp_min;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < fp_min) d = fp_min;
    c = 1.0 + aa / c;
    if (std::fabs(c) < fp_min) c = fp_min;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < eps) return h;
  }
  throw std::runtime_error("incomplete beta continued fraction failed to converge");
}

}  // namespace stats_detail

// Regularized incomplete beta I_x(a, b), accurate to about 1e-12 over the
// parameter ranges a t-test produces (a = df/2 >= 0.5, b = 1/2).
inline double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw std::invalid_argument("incomplete_beta: a, b must be positive");
  if (x < 0.0 || x > 1.0) throw std::invalid_argument("incomplete_beta: x outside [0,1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double front =
      std::exp(a * std::log(x) + b * std::log1p(-x) - log_beta(a, b));
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return front * stats_detail::beta_continued_fraction(a, b, x) / a;
  }
  return 1.0 - front * stats_detail::beta_continued_fraction(b, a, 1.0 - x) / b;
}

// Two-sided tail probability of Student's t:
//   P(|T| >= |t|) = I_{df/(df+t^2)}(df/2, 1/2)
inline double student_t_two_sided_p(double t, double df) {
  if (!(df > 0.0)) throw std::invalid_argument("student_t_two_sided_p: df must be positive");
  if (std::isinf(t)) return 0.0;
  if (t == 0.0) return 1.0;
  return incomplete_beta(0.5 * df, 0.5, df / (df + t * t));
}

struct PairedTResult {
  double t = 0.0;
  double p = 1.0;
  double df = 0.0;
  // all pairwise differences identical (zero sample variance); t is 0 or
  // +/-inf by the sign of the mean difference, p is 1 or 0 accordingly
  bool degenerate = false;
};

inline PairedTResult paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("paired_t_test: length mismatch");
  const std::size_t n = a.size();
  if (n < 2) throw std::invalid_argument("paired_t_test: need at least 2 pairs");

  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = (a[i] - b[i]) - mean;
    ss += d * d;
  }
  const double var = ss / static_cast<double>(n - 1);

  PairedTResult r;
  r.df = static_cast<double>(n - 1);
  if (var == 0.0) {
    r.degenerate = true;
    if (mean == 0.0) {
      r.t = 0.0;
      r.p = 1.0;
    } else {
      r.t = mean > 0.0 ? std::numeric_limits<double>::infinity()
                       : -std::numeric_limits<double>::infinity();
      r.p = 0.0;
    }
    return r;
  }
  r.t = mean / std::sqrt(var / static_cast<double>(n));
  r.p = student_t_two_sided_p(r.t, r.df);
  return r;
}

}  // namespace ctxrank
