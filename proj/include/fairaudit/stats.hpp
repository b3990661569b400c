#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fairaudit::stats {

enum class Side { two_sided, greater, less };

enum class VarianceMode { welch, pooled };

std::string side_name(Side s);

struct TestResult {
  double statistic = 0.0;
  std::optional<double> df;  // absent for z-tests
  double p_value = 1.0;
  Side side = Side::two_sided;
  std::vector<double> significant_at;  // thresholds met, subset of the alpha list
  std::string method;
};

/// Fills significant_at from the alpha list (p < alpha, strict).
void mark_significance(TestResult& r, std::span<const double> alphas);

/// "*" per alpha level met, matching the usual p<.05/.01/.001 star notation.
std::string stars(const TestResult& r);

// --- distribution kernel -------------------------------------------------
// Implemented from series / continued-fraction primitives (no libm special
// functions) so results are bit-stable across platforms.

/// Standard normal CDF, absolute error < 1e-10.
double normal_cdf(double z);

/// Standard normal density.
double normal_pdf(double z);

/// Inverse standard normal CDF for p in (0,1), absolute error < 1e-8.
double normal_quantile(double p);

/// Student-t CDF for df > 0, absolute error < 1e-10.
double t_cdf(double t, double df);

/// Inverse Student-t CDF for p in (0,1).
double t_quantile(double p, double df);

/// Regularized incomplete beta I_x(a,b); exposed for tests.
double incomplete_beta(double a, double b, double x);

// --- sample helpers -------------------------------------------------------

double mean(std::span<const double> xs);
/// Unbiased sample variance (n-1 denominator); requires n >= 2.
double sample_variance(std::span<const double> xs);
double sample_sd(std::span<const double> xs);

struct ZScoreResult {
  std::vector<double> scores;
  bool degenerate = false;  // zero variance: scores are all zero
};

/// (x - mean)/sd per element, sd with n-1 denominator; n >= 2 required.
/// Zero variance yields all-zero scores with the degenerate flag set.
ZScoreResult z_scores(std::span<const double> values);

// --- hypothesis tests -----------------------------------------------------

/// t = (mean - mu0)/(sd/sqrt(n)), df = n-1. Throws on n < 2; zero variance
/// is reported as "degenerate: constant sample".
TestResult one_sample_t(std::span<const double> samples, double mu0, Side side);

/// Welch statistic with Welch-Satterthwaite df by default; pooled optional.
/// Throws on |a| or |b| < 2, or both sample variances zero.
TestResult two_sample_t(std::span<const double> a, std::span<const double> b, Side side,
                        VarianceMode mode = VarianceMode::welch);

// --- speakers-per-group power bound ---------------------------------------

enum class QuantileConvention {
  two_sided_alpha,  // z_alpha = quantile(1 - alpha/2); reproduces the n~35 worked value
  one_sided,        // z_alpha = quantile(1 - alpha)
};

struct PowerQuery {
  double delta = 0.0;  // WER difference between two speaker groups
  double sigma = 0.0;  // between-speaker standard deviation
  double alpha = 0.05;
  double power = 0.8;
  QuantileConvention convention = QuantileConvention::two_sided_alpha;
};

struct PowerBound {
  double raw_bound = 0.0;  // 2*(z_a+z_b)^2*sigma^2/delta^2
  long n = 0;              // smallest integer strictly above raw_bound
  double z_alpha = 0.0;
  double z_beta = 0.0;
};

/// Minimum speakers per group for a detectable mean difference delta at the
/// requested significance and power (two-sample z-test sizing).
PowerBound required_speakers(const PowerQuery& q);

}  // namespace fairaudit::stats
