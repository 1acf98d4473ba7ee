#pragma once

// Independent reference implementations used only by the test suite. The
// production code must never include this header; agreement between the two
// is what the tests assert.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "ctxrank/rng.hpp"
#include "ctxrank/session.hpp"

namespace testsupport {

// ---------------------------------------------------------------------------
// Student-t reference CDF via long double quadrature. This route shares no
// code with the incomplete-beta evaluation under test.
// ---------------------------------------------------------------------------

inline long double t_log_norm_constant(long double df) {
  const long double pi = 3.14159265358979323846264338327950288L;
  return std::lgamma((df + 1.0L) / 2.0L) - std::lgamma(df / 2.0L) -
         0.5L * std::log(df * pi);
}

inline long double t_density(long double x, long double df, long double log_c) {
  return std::exp(log_c - 0.5L * (df + 1.0L) * std::log1p(x * x / df));
}

namespace quad_detail {

inline long double simpson(long double a, long double b, long double fa, long double fm,
                           long double fb) {
  return (b - a) / 6.0L * (fa + 4.0L * fm + fb);
}

template <class F>
long double adaptive_simpson(const F& f, long double a, long double b, long double fa,
                             long double fm, long double fb, long double whole, long double tol,
                             int depth) {
  const long double m = 0.5L * (a + b);
  const long double lm = 0.5L * (a + m);
  const long double rm = 0.5L * (m + b);
  const long double flm = f(lm);
  const long double frm = f(rm);
  const long double left = simpson(a, m, fa, flm, fm);
  const long double right = simpson(m, b, fm, frm, fb);
  const long double delta = left + right - whole;
  if (depth <= 0 || std::fabs(delta) <= 15.0L * tol) return left + right + delta / 15.0L;
  return adaptive_simpson(f, a, m, fa, flm, fm, left, 0.5L * tol, depth - 1) +
         adaptive_simpson(f, m, b, fm, frm, fb, right, 0.5L * tol, depth - 1);
}

template <class F>
long double integrate(const F& f, long double a, long double b, long double tol) {
  const long double m = 0.5L * (a + b);
  const long double fa = f(a);
  const long double fm = f(m);
  const long double fb = f(b);
  return adaptive_simpson(f, a, b, fa, fm, fb, simpson(a, b, fa, fm, fb), tol, 60);
}

}  // namespace quad_detail

// P(T >= a) for a >= 0, computed as the s-substituted tail integral
//   int_a^inf f(x) dx = int_0^1 f(a/s) a / s^2 ds
// which maps the polynomially decaying tail onto a finite smooth interval
// (the integrand behaves like s^(df-1) near s = 0).
inline long double t_upper_tail_reference(long double a, long double df) {
  if (a == 0.0L) return 0.5L;
  const long double log_c = t_log_norm_constant(df);
  // behavior at the s = 0 endpoint: ~ s^(df-1), so 0 for df > 1 and the
  // finite limit 1/(pi*a) for df = 1
  auto g = [&](long double s) -> long double {
    if (s <= 0.0L) {
      if (df == 1.0L) {
        const long double pi = 3.14159265358979323846264338327950288L;
        return 1.0L / (pi * a);
      }
      return 0.0L;
    }
    return t_density(a / s, df, log_c) * a / (s * s);
  };
  return quad_detail::integrate(g, 0.0L, 1.0L, 1e-19L);
}

inline double student_t_two_sided_reference(double t, double df) {
  if (!(df > 0.0)) throw std::invalid_argument("reference t CDF: df must be positive");
  const long double a = std::fabs(static_cast<long double>(t));
  if (a == 0.0L) return 1.0;
  return static_cast<double>(2.0L * t_upper_tail_reference(a, static_cast<long double>(df)));
}

// Closed forms for the two smallest integer df; oracles for the oracle.
inline double t_two_sided_closed_form_df1(double t) {
  return 1.0 - 2.0 / 3.14159265358979323846 * std::atan(std::fabs(t));
}
inline double t_two_sided_closed_form_df2(double t) {
  return 1.0 - std::fabs(t) / std::sqrt(2.0 + t * t);
}

// ---------------------------------------------------------------------------
// Spearman rank correlation with average ranks on ties.
// ---------------------------------------------------------------------------

inline std::vector<double> fractional_ranks(const std::vector<double>& v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;  // 1-based
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("pearson: bad input");
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma;
    const double db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) throw std::invalid_argument("pearson: zero variance");
  return sab / std::sqrt(saa * sbb);
}

inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  return pearson(fractional_ranks(a), fractional_ranks(b));
}

// ---------------------------------------------------------------------------
// Random ranking instances for the metric oracle comparison.
// ---------------------------------------------------------------------------

struct RankingInstance {
  std::vector<ctxrank::ItemId> ranked;
  std::vector<ctxrank::ItemId> relevant;
};

inline RankingInstance random_ranking_instance(ctxrank::Rng& rng, int max_items = 120) {
  RankingInstance out;
  std::vector<ctxrank::ItemId> items(max_items);
  std::iota(items.begin(), items.end(), ctxrank::ItemId{1});
  rng.shuffle(items);
  const std::size_t n_rank = 1 + rng.below(static_cast<std::uint64_t>(max_items));
  out.ranked.assign(items.begin(), items.begin() + n_rank);
  const std::size_t n_rel = rng.below(9);  // 0..8, including the no-relevant edge
  for (std::size_t r = 0; r < n_rel; ++r) {
    out.relevant.push_back(1 + static_cast<ctxrank::ItemId>(rng.below(max_items)));
  }
  ctxrank::detail::sort_unique(out.relevant);
  return out;
}

}  // namespace testsupport
