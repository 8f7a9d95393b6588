#pragma once

namespace breakiv {

// Two-sided 95% normal quantile used for all reported confidence intervals.
constexpr double kZ975 = 1.959963984540054;

// Upper-tail probability P(X > x) for X ~ chi-squared with k dof.
double chi_squared_upper_tail(double x, int k);

// Regularized lower incomplete gamma P(a, x).
double gamma_p(double a, double x);

}  // namespace breakiv
