#pragma once

// MCMC and posterior summaries over recorded chains.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ha/gibbs.hpp"

namespace ha {

bool is_constant(std::span<const double> series);

/// Effective sample size, initial positive sequence estimator. Clamped to
/// 1.05 * length; a constant series returns its length.
double ess(std::span<const double> series);

/// Spectral density at frequency zero, n * Var(mean) estimated with the
/// initial positive sequence.
double spectral_density_zero(std::span<const double> series);

/// Geweke z: first 10% against last 50%. Zero for a constant series.
double geweke_z(std::span<const double> series, double first = 0.1, double last = 0.5);

/// Sample autocorrelation at `lag`; 0 for a constant series (see is_constant).
double autocorr(std::span<const double> series, std::size_t lag);

/// Type-7 empirical quantile of an unsorted sample.
double quantile(std::vector<double> values, double prob);

struct IntervalReport {
  double level = 0.95;
  std::vector<double> lower;
  std::vector<double> upper;
  std::vector<int> covered;   // empty when no truth was supplied
  double coverage = 0.0;      // NaN without truth
  double mean_width = 0.0;
};

/// Central posterior intervals for every cell mean.
IntervalReport interval_report(const Chain& chain, double level, const Tensor* truth = nullptr);

struct CorrelationResult {
  Matrix corr;
  std::vector<std::size_t> zero_variance;  // rows whose correlations were set to 0
};

/// Stacks every main-effect and two-way coefficient involving `factor` (all
/// responses) into a levels x coefficients matrix and correlates its rows.
CorrelationResult effect_level_correlations(const Decomposition& dec, std::size_t factor, const Layout& layout);
CorrelationResult row_correlations(const Matrix& rows);

/// Posterior mean of the correlation matrix implied by each Sigma_d draw.
std::vector<Matrix> posterior_correlation_matrices(const Chain& chain);

struct SeriesDiagnostics {
  std::string column;
  double mean = 0.0;
  double sd = 0.0;
  double ess = 0.0;
  double geweke = 0.0;
  double autocorr = 0.0;
  bool constant = false;
  bool flagged = false;  // |geweke z| > 2
};

/// Per-column diagnostics. The sigma^2 / Sigma_y columns are always included;
/// `columns` restricts the remainder (empty = every column).
std::vector<SeriesDiagnostics> diagnose_chain(const Chain& chain, std::size_t lag,
                                              const std::vector<std::string>& columns = {});

std::string diagnostics_csv(const std::vector<SeriesDiagnostics>& rows);

/// Cell-mean posterior summary: label columns, response, mean, sd, lower, upper.
std::string posterior_summary_csv(const Chain& chain, double level);

std::string matrix_csv(const Matrix& m, const std::vector<std::string>& labels);

}  // namespace ha
