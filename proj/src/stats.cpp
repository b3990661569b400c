#include "fairaudit/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace fairaudit::stats {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Lanczos approximation (g=7, 9 coefficients), |rel err| < 1e-13 for x > 0.
double lgamma_lanczos(double x) {
  static const double coef[9] = {
      0.99999999999980993,  676.5203681218851,     -1259.1392167224028,
      771.32342877765313,   -176.61502916214059,   12.507343278686905,
      -0.13857109526572012, 9.9843695780195716e-6, 1.5056327351493116e-7};
  if (x < 0.5) {
    // reflection: Gamma(x)Gamma(1-x) = pi/sin(pi x)
    return std::log(kPi / std::sin(kPi * x)) - lgamma_lanczos(1.0 - x);
  }
  x -= 1.0;
  double a = coef[0];
  const double t = x + 7.5;
  for (int i = 1; i < 9; ++i) a += coef[i] / (x + static_cast<double>(i));
  return 0.5 * std::log(2.0 * kPi) + (x + 0.5) * std::log(t) - t + std::log(a);
}

// Regularized lower incomplete gamma P(a,x) by series expansion (x < a+1).
double gamma_p_series(double a, double x) {
  double ap = a;
  double sum = 1.0 / a;
  double del = sum;
  for (int n = 0; n < 500; ++n) {
    ap += 1.0;
    del *= x / ap;
    sum += del;
    if (std::fabs(del) < std::fabs(sum) * 1e-16) break;
  }
  return sum * std::exp(-x + a * std::log(x) - lgamma_lanczos(a));
}

// Regularized upper incomplete gamma Q(a,x) by Lentz continued fraction (x >= a+1).
double gamma_q_cf(double a, double x) {
  const double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i <= 500; ++i) {
    const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < 1e-16) break;
  }
  return std::exp(-x + a * std::log(x) - lgamma_lanczos(a)) * h;
}

double gamma_p(double a, double x) {
  if (x < 0 || a <= 0) throw std::invalid_argument("gamma_p domain");
  if (x == 0) return 0.0;
  return (x < a + 1.0) ? gamma_p_series(a, x) : 1.0 - gamma_q_cf(a, x);
}

double erfc_own(double x) {
  // erfc(x) = Q(1/2, x^2) for x >= 0, with reflection for x < 0.
  if (x < 0) return 2.0 - erfc_own(-x);
  if (x == 0) return 1.0;
  const double x2 = x * x;
  return (x2 < 1.5) ? 1.0 - gamma_p(0.5, x2) : gamma_q_cf(0.5, x2);
}

// Continued fraction for the incomplete beta (Numerical Recipes betacf form).
double betacf(double a, double b, double x) {
  const double tiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 500; ++m) {
    const double dm = static_cast<double>(m);
    const double m2 = 2.0 * dm;
    double aa = dm * (b - dm) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + dm) * (qab + dm) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < 1e-16) break;
  }
  return h;
}

// Acklam's rational approximation to the normal quantile (|rel err| ~ 1e-9),
// used as the starting point before Halley refinement.
double norm_quantile_acklam(double p) {
  static const double a[6] = {-3.969683028665376e+01, 2.209460984245205e+02,
                              -2.759285104469687e+02, 1.383577518672690e+02,
                              -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[5] = {-5.447609879822406e+01, 1.615858368580409e+02,
                              -1.556989798598866e+02, 6.680131188771972e+01,
                              -1.328068155288572e+01};
  static const double c[6] = {-7.784894002430293e-03, -3.223964580411365e-01,
                              -2.400758277161838e+00, -2.549732539343734e+00,
                              4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[4] = {7.784695709041462e-03, 3.224671290700398e-01,
                              2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425;
  if (p < plow) {
    const double q = std::sqrt(-2.0 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  if (p > 1.0 - plow) {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double q = p - 0.5;
  const double r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

}  // namespace

std::string side_name(Side s) {
  switch (s) {
    case Side::two_sided: return "two-sided";
    case Side::greater: return "greater";
    case Side::less: return "less";
  }
  return "?";
}

void mark_significance(TestResult& r, std::span<const double> alphas) {
  r.significant_at.clear();
  for (double a : alphas)
    if (r.p_value < a) r.significant_at.push_back(a);
  std::sort(r.significant_at.begin(), r.significant_at.end(), std::greater<>());
}

std::string stars(const TestResult& r) {
  return std::string(r.significant_at.size(), '*');
}

double normal_pdf(double z) {
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * kPi);
}

double normal_cdf(double z) {
  return 0.5 * erfc_own(-z / std::sqrt(2.0));
}

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("normal_quantile: p must be in (0,1)");
  double z = norm_quantile_acklam(p);
  // Two Halley steps against our own CDF pin the error well below 1e-12.
  for (int i = 0; i < 2; ++i) {
    const double e = normal_cdf(z) - p;
    const double u = e / normal_pdf(z);
    z -= u / (1.0 + 0.5 * z * u);
  }
  return z;
}

double incomplete_beta(double a, double b, double x) {
  if (a <= 0 || b <= 0) throw std::invalid_argument("incomplete_beta: a,b must be > 0");
  if (x <= 0) return 0.0;
  if (x >= 1) return 1.0;
  const double ln_front = lgamma_lanczos(a + b) - lgamma_lanczos(a) - lgamma_lanczos(b) +
                          a * std::log(x) + b * std::log(1.0 - x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
  return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

double t_cdf(double t, double df) {
  if (!(df > 0)) throw std::invalid_argument("t_cdf: df must be > 0");
  if (t == 0) return 0.5;
  // P(|T| > |t|) = I_{df/(df+t^2)}(df/2, 1/2)
  const double x = df / (df + t * t);
  const double tail = incomplete_beta(0.5 * df, 0.5, x);
  return t > 0 ? 1.0 - 0.5 * tail : 0.5 * tail;
}

double t_quantile(double p, double df) {
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("t_quantile: p must be in (0,1)");
  if (!(df > 0)) throw std::invalid_argument("t_quantile: df must be > 0");
  if (p == 0.5) return 0.0;
  // Bisection on t_cdf; monotone, so this is robust for tiny df too.
  double lo = -1.0, hi = 1.0;
  while (t_cdf(lo, df) > p) lo *= 2.0;
  while (t_cdf(hi, df) < p) hi *= 2.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (t_cdf(mid, df) < p)
      lo = mid;
    else
      hi = mid;
    if (hi - lo < 1e-12 * std::max(1.0, std::fabs(hi))) break;
  }
  return 0.5 * (lo + hi);
}

double mean(std::span<const double> xs) {
  if (xs.empty()) throw std::invalid_argument("mean of empty sample");
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

double sample_variance(std::span<const double> xs) {
  if (xs.size() < 2) throw std::invalid_argument("sample_variance needs n >= 2");
  const double m = mean(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return s / static_cast<double>(xs.size() - 1);
}

double sample_sd(std::span<const double> xs) { return std::sqrt(sample_variance(xs)); }

ZScoreResult z_scores(std::span<const double> values) {
  if (values.size() < 2) throw std::invalid_argument("z_scores needs n >= 2");
  ZScoreResult r;
  const double m = mean(values);
  const double sd = sample_sd(values);
  r.scores.resize(values.size());
  if (sd == 0.0) {
    r.degenerate = true;
    std::fill(r.scores.begin(), r.scores.end(), 0.0);
    return r;
  }
  for (std::size_t i = 0; i < values.size(); ++i) r.scores[i] = (values[i] - m) / sd;
  return r;
}

namespace {

double p_from_t(double t, double df, Side side) {
  switch (side) {
    case Side::two_sided: return 2.0 * (1.0 - t_cdf(std::fabs(t), df));
    case Side::greater: return 1.0 - t_cdf(t, df);
    case Side::less: return t_cdf(t, df);
  }
  return 1.0;
}

}  // namespace

TestResult one_sample_t(std::span<const double> samples, double mu0, Side side) {
  const std::size_t n = samples.size();
  if (n < 2) throw std::invalid_argument("one_sample_t needs n >= 2");
  const double sd = sample_sd(samples);
  if (sd == 0.0) throw std::invalid_argument("degenerate: constant sample");
  TestResult r;
  r.method = "one-sample-t";
  r.side = side;
  r.df = static_cast<double>(n - 1);
  r.statistic = (mean(samples) - mu0) / (sd / std::sqrt(static_cast<double>(n)));
  r.p_value = std::clamp(p_from_t(r.statistic, *r.df, side), 0.0, 1.0);
  return r;
}

TestResult two_sample_t(std::span<const double> a, std::span<const double> b, Side side,
                        VarianceMode mode) {
  const std::size_t na = a.size(), nb = b.size();
  if (na < 2 || nb < 2) throw std::invalid_argument("two_sample_t needs n >= 2 in both samples");
  const double va = sample_variance(a), vb = sample_variance(b);
  if (va == 0.0 && vb == 0.0)
    throw std::invalid_argument("degenerate: both samples have zero variance");
  const double ma = mean(a), mb = mean(b);
  const double dna = static_cast<double>(na), dnb = static_cast<double>(nb);
  TestResult r;
  r.side = side;
  if (mode == VarianceMode::welch) {
    r.method = "welch-t";
    const double se2 = va / dna + vb / dnb;
    r.statistic = (ma - mb) / std::sqrt(se2);
    r.df = se2 * se2 /
           ((va / dna) * (va / dna) / (dna - 1.0) + (vb / dnb) * (vb / dnb) / (dnb - 1.0));
  } else {
    r.method = "pooled-t";
    const double sp2 = ((dna - 1.0) * va + (dnb - 1.0) * vb) / (dna + dnb - 2.0);
    r.statistic = (ma - mb) / std::sqrt(sp2 * (1.0 / dna + 1.0 / dnb));
    r.df = dna + dnb - 2.0;
  }
  r.p_value = std::clamp(p_from_t(r.statistic, *r.df, side), 0.0, 1.0);
  return r;
}

PowerBound required_speakers(const PowerQuery& q) {
  if (!(q.delta > 0)) throw std::invalid_argument("required_speakers: delta must be > 0");
  if (!(q.sigma > 0)) throw std::invalid_argument("required_speakers: sigma must be > 0");
  if (!(q.alpha > 0 && q.alpha < 1)) throw std::invalid_argument("required_speakers: alpha in (0,1)");
  if (!(q.power > 0 && q.power < 1)) throw std::invalid_argument("required_speakers: power in (0,1)");
  PowerBound out;
  out.z_alpha = normal_quantile(q.convention == QuantileConvention::two_sided_alpha
                                    ? 1.0 - q.alpha / 2.0
                                    : 1.0 - q.alpha);
  out.z_beta = normal_quantile(q.power);
  const double zs = out.z_alpha + out.z_beta;
  out.raw_bound = 2.0 * zs * zs * q.sigma * q.sigma / (q.delta * q.delta);
  out.n = static_cast<long>(std::floor(out.raw_bound)) + 1;  // strict n > bound
  return out;
}

}  // namespace fairaudit::stats
