#pragma once

#include "tdrl/core/rng.hpp"

#include <span>
#include <vector>

namespace tdrl::stats {

double mean(std::span<const double> x);
/// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
double stddev(std::span<const double> x);
double median(std::vector<double> x);

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
};

/// Ordinary least squares y = slope * x + intercept.
LineFit linear_fit(std::span<const double> x, std::span<const double> y);

/// Ranks starting at 1, ties share their average rank.
std::vector<double> ranks(std::span<const double> x);
double pearson(std::span<const double> x, std::span<const double> y);
double spearman(std::span<const double> x, std::span<const double> y);

/// One-sided permutation p-value for a negative Spearman correlation:
/// fraction of label permutations with rho <= observed (observed included).
double spearman_negative_pvalue(std::span<const double> x, std::span<const double> y, int permutations, Rng& rng);

/// P(X >= wins) for X ~ Binomial(n, 1/2); ties should be dropped beforehand.
double sign_test_one_sided(int wins, int n);

/// Regularized lower incomplete gamma P(a, x).
double gamma_p(double a, double x);
/// Upper-tail p-value of a chi-square statistic.
double chi_square_pvalue(double statistic, int dof);
/// Pearson chi-square statistic of counts against a uniform expectation.
double chi_square_uniform(std::span<const long> counts);

/// Two-sided 95% Student-t quantile for the given degrees of freedom.
double t_quantile_975(int dof);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

/// 95% confidence interval of the mean.
Interval mean_ci95(std::span<const double> x);

}  // namespace tdrl::stats
