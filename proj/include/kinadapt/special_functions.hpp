#pragma once

#include <cstddef>
#include <functional>

namespace kinadapt {

// Regularized incomplete beta I_x(a, b) by Lentz's continued fraction.
double regularized_incomplete_beta(double x, double a, double b);

// CDF of the F(d1, d2) distribution.
double f_cdf(double x, double d1, double d2);

double normal_cdf(double z);
double normal_pdf(double z);

// CDF of the studentized range for k means and df error degrees of freedom,
// from its double-integral form with adaptive Gauss-Kronrod quadrature.
double studentized_range_cdf(double q, std::size_t k, double df);

// Adaptive 15-point Gauss-Kronrod on [a, b] to absolute tolerance `tol`.
double integrate(const std::function<double(double)>& f, double a, double b, double tol);

}  // namespace kinadapt
