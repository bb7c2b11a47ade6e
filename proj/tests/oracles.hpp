#pragma once

// Reference implementations used only by tests. They share no code with the
// library: every quantity is computed the slow, obvious way.

#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <vector>

namespace oracle {

/// T_k(s) by the three-term recurrence.
inline double chebyshev_t(std::size_t k, double s) {
  if (k == 0) return 1.0;
  double prev = 1.0;
  double cur = s;
  for (std::size_t j = 1; j < k; ++j) {
    const double next = 2.0 * s * cur - prev;
    prev = cur;
    cur = next;
  }
  return cur;
}

/// c_0/2 + sum_k c_k T_k(2 tau - 1), summed term by term.
inline double naive_series(const std::vector<double>& c, double tau) {
  const double s = 2.0 * tau - 1.0;
  double sum = 0.5 * c[0];
  for (std::size_t k = 1; k < c.size(); ++k) sum += c[k] * chebyshev_t(k, s);
  return sum;
}

inline double abs_sum(const std::vector<double>& c) {
  double s = 0.0;
  for (double v : c) s += std::abs(v);
  return s;
}

inline std::vector<double> roots(std::size_t d) {
  std::vector<double> r(d);
  for (std::size_t k = 0; k < d; ++k) {
    r[k] = 0.5 * std::cos(std::numbers::pi * (static_cast<double>(k) + 0.5) / static_cast<double>(d)) + 0.5;
  }
  return r;
}

/// Brute-force DCT-II, one cosine per term.
inline std::vector<double> dct2(const std::vector<double>& v) {
  const std::size_t d = v.size();
  std::vector<double> c(d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t k = 0; k < d; ++k) {
      c[j] += v[k] * std::cos(static_cast<double>(j) * std::numbers::pi * (static_cast<double>(k) + 0.5) /
                              static_cast<double>(d));
    }
    c[j] *= 2.0 / static_cast<double>(d);
  }
  return c;
}

/// Composite Simpson on [a, b] with n (even) panels.
inline double simpson(const std::function<double(double)>& f, double a, double b, std::size_t n = 2000) {
  if (n % 2 == 1) ++n;
  const double h = (b - a) / static_cast<double>(n);
  double s = f(a) + f(b);
  for (std::size_t i = 1; i < n; ++i) s += f(a + h * static_cast<double>(i)) * (i % 2 == 1 ? 4.0 : 2.0);
  return s * h / 3.0;
}

/// Adaptive Simpson to absolute tolerance `tol`.
inline double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double tol = 1e-13,
                               int depth = 40) {
  const std::function<double(double, double, double, double, double, double, int)> rec =
      [&](double lo, double hi, double flo, double fmid, double fhi, double whole, int level) {
        const double mid = 0.5 * (lo + hi);
        const double lm = 0.5 * (lo + mid);
        const double rm = 0.5 * (mid + hi);
        const double flm = f(lm);
        const double frm = f(rm);
        const double left = (mid - lo) / 6.0 * (flo + 4.0 * flm + fmid);
        const double right = (hi - mid) / 6.0 * (fmid + 4.0 * frm + fhi);
        if (level <= 0 || std::abs(left + right - whole) <= 15.0 * tol) return left + right + (left + right - whole) / 15.0;
        return rec(lo, mid, flo, flm, fmid, left, level - 1) + rec(mid, hi, fmid, frm, fhi, right, level - 1);
      };
  const double fa = f(a);
  const double fb = f(b);
  const double fm = f(0.5 * (a + b));
  return rec(a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), depth);
}

/// Central difference of a scalar function of a parameter vector.
inline double central_difference(const std::function<double()>& f, double& param, double h) {
  const double saved = param;
  param = saved + h;
  const double up = f();
  param = saved - h;
  const double down = f();
  param = saved;
  return (up - down) / (2.0 * h);
}

/// Number of pairs (j < l) in each row with row[l] < row[j].
inline std::size_t all_pairs_violations(const std::vector<std::vector<double>>& rows) {
  std::size_t count = 0;
  for (const auto& r : rows) {
    for (std::size_t j = 0; j < r.size(); ++j) {
      for (std::size_t l = j + 1; l < r.size(); ++l) count += r[l] < r[j] ? 1 : 0;
    }
  }
  return count;
}

/// (y - q)(tau - 1[y < q]) written as the max of two lines.
inline double pinball(double y, double q, double tau) { return std::max(tau * (y - q), (tau - 1.0) * (y - q)); }

}  // namespace oracle
