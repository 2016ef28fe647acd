#include "kinadapt/special_functions.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "kinadapt/error.hpp"

namespace kinadapt {

namespace {

double beta_continued_fraction(double x, double a, double b) {
  constexpr int kMaxIter = 10000;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) return h;
  }
  throw NumericError("incomplete beta: continued fraction did not converge (a=" + std::to_string(a) +
                     ", b=" + std::to_string(b) + ", x=" + std::to_string(x) + ")");
}

// Kronrod nodes (descending, last is 0) and weights; Gauss weights pair
// with the odd-indexed nodes.
constexpr double kXgk[8] = {0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
                            0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
                            0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
                            0.207784955007898467600689403773245, 0.0};
constexpr double kWgk[8] = {0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
                            0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
                            0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
                            0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
constexpr double kWg[4] = {0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
                           0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

double gk_adaptive(const std::function<double(double)>& f, double a, double b, double tol, int depth) {
  const double center = 0.5 * (a + b);
  const double half = 0.5 * (b - a);
  const double fc = f(center);
  double kronrod = kWgk[7] * fc;
  double gauss = kWg[3] * fc;
  for (int j = 0; j < 7; ++j) {
    const double dx = half * kXgk[j];
    const double pair = f(center - dx) + f(center + dx);
    kronrod += kWgk[j] * pair;
    if (j % 2 == 1) gauss += kWg[j / 2] * pair;
  }
  kronrod *= half;
  gauss *= half;
  if (std::abs(kronrod - gauss) <= tol || depth >= 40) return kronrod;
  return gk_adaptive(f, a, center, 0.5 * tol, depth + 1) +
         gk_adaptive(f, center, b, 0.5 * tol, depth + 1);
}

// Upper tail 1 - Phi(z).
double normal_sf(double z) { return 0.5 * std::erfc(z / std::numbers::sqrt2); }

// P(range of k standard normals <= w).
double range_cdf(double w, std::size_t k) {
  if (w <= 0.0) return 0.0;
  const double km1 = static_cast<double>(k - 1);
  auto integrand = [&](double z) {
    // Phi(z) - Phi(z - w) computed from whichever tail keeps precision.
    const double inside = z > 0.0 ? normal_sf(z - w) - normal_sf(z)
                                  : normal_cdf(z) - normal_cdf(z - w);
    if (inside <= 0.0) return 0.0;
    return normal_pdf(z) * std::pow(inside, km1);
  };
  const double v = static_cast<double>(k) * integrate(integrand, -8.5, 8.5 + w, 1e-11);
  return std::clamp(v, 0.0, 1.0);
}

}  // namespace

double regularized_incomplete_beta(double x, double a, double b) {
  if (!(a > 0.0) || !(b > 0.0)) throw ConfigError("incomplete beta: a and b must be positive");
  if (!(x >= 0.0 && x <= 1.0)) throw ConfigError("incomplete beta: x must be in [0, 1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
                           b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(x, a, b) / a;
  return 1.0 - front * beta_continued_fraction(1.0 - x, b, a) / b;
}

double f_cdf(double x, double d1, double d2) {
  if (!(d1 >= 1.0) || !(d2 >= 1.0)) throw ConfigError("f_cdf: degrees of freedom must be >= 1");
  if (std::isnan(x) || x < 0.0) throw ConfigError("f_cdf: x must be >= 0");
  if (x == 0.0) return 0.0;
  if (std::isinf(x)) return 1.0;
  const double y = d1 * x / (d1 * x + d2);
  return std::clamp(regularized_incomplete_beta(y, 0.5 * d1, 0.5 * d2), 0.0, 1.0);
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double normal_pdf(double z) {
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
}

double integrate(const std::function<double(double)>& f, double a, double b, double tol) {
  if (a == b) return 0.0;
  if (b < a) return -integrate(f, b, a, tol);
  return gk_adaptive(f, a, b, tol, 0);
}

double studentized_range_cdf(double q, std::size_t k, double df) {
  if (k < 2) throw ConfigError("studentized range: need at least 2 means");
  if (!(df >= 1.0)) throw ConfigError("studentized range: df must be >= 1");
  if (std::isnan(q)) throw NumericError("studentized range: q is NaN");
  if (q <= 0.0) return 0.0;
  if (std::isinf(q)) return 1.0;
  if (std::isinf(df) || df > 1e5) return range_cdf(q, k);

  // s = sqrt(chi2_df / df) has log-density
  //   (df/2) ln df - lgamma(df/2) - (df/2 - 1) ln 2 + (df-1) ln s - df s^2 / 2.
  const double log_norm = 0.5 * df * std::log(df) - std::lgamma(0.5 * df) -
                          (0.5 * df - 1.0) * std::numbers::ln2;
  auto integrand = [&](double s) {
    if (s <= 0.0) return 0.0;
    const double log_density = log_norm + (df - 1.0) * std::log(s) - 0.5 * df * s * s;
    if (log_density < -60.0) return 0.0;
    return std::exp(log_density) * range_cdf(q * s, k);
  };
  const double spread = 12.0 / std::sqrt(2.0 * df);
  const double lo = std::max(0.0, 1.0 - spread);
  const double hi = 1.0 + spread + (df < 3.0 ? 4.0 : 0.0);
  const double mode = df > 1.0 ? std::sqrt((df - 1.0) / df) : lo;
  double total = 0.0;
  if (mode > lo) total += integrate(integrand, lo, mode, 1e-9);
  total += integrate(integrand, std::max(mode, lo), hi, 1e-9);
  return std::clamp(total, 0.0, 1.0);
}

}  // namespace kinadapt
