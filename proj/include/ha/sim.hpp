#pragma once

// Simulation regimes and the replicate study driver.
//
// Truth arrays are cell tensors with a trailing response mode of size 1.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ha/gibbs.hpp"
#include "ha/io.hpp"

namespace ha {

enum class Regime { OrderConsistent, OrderInconsistent, SbGenerated, Additive };

std::string regime_name(Regime r);
Regime parse_regime(const std::string& s);  // throws InputError

/// Effect magnitudes (||e||^2 / prod m) of the calibrated 15x7x3 testbed.
const std::map<EffectKey, double, KeyOrder>& order_consistent_targets();
/// Main-effect magnitudes of the additive testbed.
const std::vector<double>& additive_targets();

/// Seed of the frozen reference array used by the order-consistent studies.
inline constexpr std::uint64_t kReferenceSeed = 20240611;

/// Seeded random cubic in K continuous variables, evaluated at bin centres of
/// [-1, 1]. In calibrated mode (dims must be 15x7x3) every effect is rescaled
/// to its target magnitude and the grand mean is zero.
Tensor gen_order_consistent(const Dims& dims, std::uint64_t seed, bool calibrated = true);
Tensor reference_means();

/// Independent uniform permutation of each mode of each effect, then reassembly.
Tensor gen_order_inconsistent(const Tensor& m, std::uint64_t seed);
/// perms[key][i] permutes the i-th mode of that effect; missing keys stay put.
Decomposition permute_effects(const Decomposition& dec, const Layout& layout,
                              const std::map<EffectKey, std::vector<std::vector<std::size_t>>, KeyOrder>& perms);

/// gamma_S ~ gamma(nu/2, tau_sq/2) for every effect, coefficients N(0, 1/gamma_S), mu = 0.
Tensor gen_sb_prior(const Dims& dims, double nu, double tau_sq, std::uint64_t seed);

/// Binned linear function, main effects rescaled to the additive targets; K = 3.
Tensor gen_additive(const Dims& dims, std::uint64_t seed);

/// One observation per cell, the remaining N - cells placed uniformly at random.
Tensor allocate_unbalanced(std::size_t total, const Dims& dims, RngStream& rng);

/// y = M_cell + sigma z for each allocated observation, as sufficient statistics.
CellStats simulate_dataset(const Tensor& m, const Tensor& counts, double sigma, RngStream& rng);

struct StudySpec {
  Regime regime = Regime::OrderConsistent;
  Dims dims{15, 7, 3};
  std::vector<std::size_t> sample_sizes{400, 1000, 5000, 10000};
  std::size_t replicates = 50;
  std::vector<std::string> methods{"ols", "sb", "ha"};
  std::uint64_t seed = 1;
  std::size_t iterations = 11000;
  std::size_t burn_in = 1000;
  std::size_t thin = 10;
  double level = 0.95;
  double sigma = 1.0;
  double sb_nu = 4.0;
  double sb_tau_sq = 2.0;

  static StudySpec from_key_values(const KeyValues& kv);  // throws InputError
  KeyValues to_key_values() const;
  void validate() const;  // throws InputError
};

const std::vector<std::string>& known_methods();

struct StudyRow {
  std::string regime;
  std::size_t n = 0;
  std::size_t replicate = 0;
  std::string method;
  std::string metric;
  double value = 0.0;
};

struct StudyReport {
  StudySpec spec;
  std::vector<std::string> metrics;
  std::vector<StudyRow> rows;
  std::vector<std::string> failures;
  std::vector<double> replicate_seconds;  // wall time per (n, replicate); not part of the CSV

  std::vector<double> values(const std::string& method, std::size_t n, const std::string& metric) const;
  double mean(const std::string& method, std::size_t n, const std::string& metric) const;
  /// Fraction of replicates with metric(a) < metric(b).
  double fraction_less(const std::string& a, const std::string& b, std::size_t n, const std::string& metric) const;
};

StudyReport run_study(const StudySpec& spec);

std::string study_csv(const StudyReport& report);
/// Mean metrics per method and n, ordering fractions and mean-ASE ratios.
std::string study_summary(const StudyReport& report);

}  // namespace ha
