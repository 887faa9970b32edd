#pragma once

// Comparator estimators and classical MANOVA tests.

#include <string>
#include <vector>

#include "ha/gibbs.hpp"
#include "ha/io.hpp"

namespace ha {

/// Standard-Bayes chain: the HA sweep with Sigma_d = I and a sampled
/// precision for every effect, main effects included.
Chain sb_chain(const CellStats& stats, const HAHyper& hyper, const ChainConfig& config, std::uint64_t stream = 0);

class RankDeficient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Least squares under the main-effects-only model, fitted to the raw
/// observations (cell means weighted by counts). Predicts every cell,
/// including empty ones. Throws RankDeficient when a level has no data.
Tensor aols_cell_means(const CellStats& stats);

struct AdditiveFits {
  Tensor aols;  // cells x p
  Chain asb;
};
AdditiveFits additive_fits(const CellStats& stats, const HAHyper& hyper, const ChainConfig& config,
                           std::uint64_t stream = 0);

struct PillaiRow {
  std::string effect;
  double pillai = 0.0;
  double approx_f = 0.0;
  double num_df = 0.0;
  double den_df = 0.0;
  double p_value = 1.0;
};

/// Sequential (Type I) hypothesis SSCP for every effect in KeyOrder under the
/// full-interaction model with sum-to-zero coding, Pillai's trace, and its
/// usual F approximation.
std::vector<PillaiRow> pillai_tests(const LongData& data);

/// Effect label from factor names, "Age x Ethnicity".
std::string effect_label(const EffectKey& key, const Layout& layout);

}  // namespace ha
