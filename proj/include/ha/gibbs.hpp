#pragma once

// Gibbs sampling under the hierarchical array (HA) prior.
//
// Prior on the decomposition of a K-way array of cell means, per response r:
//   mu_r                 ~ N(mu0_r, tau0_r^2)
//   vec(effect_S[., r])  ~ N(0, (Sigma_{s_k} (x) ... (x) Sigma_{s_1}) / gamma_{S,r})
//   Sigma_d              ~ inverse-Wishart(eta_d0, S_d0^{-1})   (mean S_d0 / (eta_d0 - m_d - 1))
//   gamma_{S,r}          ~ gamma(nu_S0 / 2, tau_S0^2 / 2)          (rate form), |S| >= 2
// with gamma fixed at 1 for main effects. Errors are N(0, sigma^2) for p = 1
// and N_p(0, Sigma_y) for p > 1.
//
// The standard-Bayes (SB) comparator reuses every update with Sigma_d frozen
// at the identity and a sampled gamma for every effect, main effects included.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ha/linalg.hpp"
#include "ha/model.hpp"
#include "ha/random.hpp"

namespace ha {

enum class PriorKind { Hierarchical, Standard };

struct ModelSpec {
  PriorKind prior = PriorKind::Hierarchical;
  std::vector<EffectKey> keys;  // KeyOrder

  static ModelSpec full(std::size_t factors, PriorKind prior = PriorKind::Hierarchical);
  static ModelSpec additive(std::size_t factors, PriorKind prior = PriorKind::Standard);

  bool samples_sigma() const { return prior == PriorKind::Hierarchical; }
  bool samples_gamma(const EffectKey& key) const { return prior == PriorKind::Standard || key.size() >= 2; }
};

struct GammaPrior {
  double nu0 = 1.0;
  double tau0_sq = 1.0;
};

struct HAHyper {
  Vector mu0;       // p
  Vector tau0_sq;   // p
  double nu0 = 1.0;        // sigma^2 prior (p = 1)
  double sigma0_sq = 1.0;
  std::vector<double> eta0;      // per factor
  std::vector<SymMatrix> S0;     // per factor
  std::map<EffectKey, std::vector<GammaPrior>, KeyOrder> gamma;  // per key, per response
  double eta_y0 = 0.0;     // Sigma_y prior (p > 1)
  SymMatrix S_y0;

  void validate(const Layout& layout, const ModelSpec& model) const;
};

struct HAState {
  Decomposition dec;
  SymMatrix sigma_y;              // p x p; for p = 1 the single entry is sigma^2
  std::vector<SymMatrix> Sigma;   // per factor
  std::map<EffectKey, std::vector<double>, KeyOrder> gamma;

  /// Effects zero, mu zero, sigma^2 / Sigma_y = I, Sigma_d = I, gamma = 1.
  static HAState initial(const Layout& layout, const ModelSpec& model);

  double sigma_sq() const { return sigma_y(0, 0); }
  double gamma_of(const EffectKey& key, std::size_t r) const;
  void check_valid() const;  // finite values, PD matrices, positive scales
};

/// Balanced sufficient statistics: every cell carries `n` observations with mean `ybar`.
struct BalancedMeans {
  Tensor ybar;   // cells x p
  double n = 0.0;
};

/// OLS decomposition used for empirical-Bayes defaults. Empty cells are
/// filled so the highest-order interaction vanishes there.
struct OlsFit {
  Decomposition dec;
  std::vector<std::size_t> missing;
  SymMatrix residual_cov;   // MLE within-cell covariance (p x p)
};
OlsFit ols_fit(const CellStats& stats);

HAHyper default_hyperparameters(const CellStats& stats);

// ---- full conditionals ----

BalancedMeans impute_balance(const CellStats& stats, const HAState& state, const Layout& layout, RngStream& rng);
BalancedMeans balanced_from_stats(const CellStats& stats);  // requires equal counts

Vector update_mu(const HAState& state, const BalancedMeans& data, const HAHyper& hyper, const Layout& layout,
                 RngStream& rng);

/// One response slice of effect `key`, conditional on every other response
/// through the Sigma_y regression. For p = 1 this is the plain conditional.
Tensor update_effect_manova(const HAState& state, const EffectKey& key, std::size_t response,
                            const BalancedMeans& data, const Layout& layout, RngStream& rng);
/// All responses of effect `key`, updated one response at a time.
Tensor update_effect(const HAState& state, const EffectKey& key, const BalancedMeans& data, const Layout& layout,
                     RngStream& rng);

double update_sigma2(const HAState& state, const CellStats& stats, const HAHyper& hyper, RngStream& rng);
SymMatrix update_Sigma_y(const HAState& state, const CellStats& stats, const HAHyper& hyper, RngStream& rng);

/// Degrees of freedom and scale of the full conditional of Sigma_d.
struct SigmaConditional {
  double eta = 0.0;
  SymMatrix scale;
};
SigmaConditional Sigma_conditional(const HAState& state, std::size_t factor, const HAHyper& hyper,
                                   const Layout& layout);
SymMatrix update_Sigma(const HAState& state, std::size_t factor, const HAHyper& hyper, const Layout& layout,
                       RngStream& rng);

/// gamma(nu1/2, tau1^2/2) with nu1 = nu0 + prod m, tau1^2 = tau0^2 + quadratic form.
GammaPrior gamma_conditional(const HAState& state, const EffectKey& key, std::size_t response,
                             const HAHyper& hyper, const Layout& layout, const ModelSpec& model);
double update_gamma(const HAState& state, const EffectKey& key, std::size_t response, const HAHyper& hyper,
                    const Layout& layout, const ModelSpec& model, RngStream& rng);

/// impute_balance -> mu -> effects (KeyOrder, responses in order) -> sigma^2
/// or Sigma_y -> each Sigma_d -> each gamma.
void gibbs_sweep(HAState& state, const CellStats& stats, const HAHyper& hyper, const ModelSpec& model,
                 RngStream& rng);

// ---- chains ----

struct RecordSet {
  bool sigma = true;   // sigma^2 or Sigma_y
  bool Sigma = true;   // Sigma_d (HA only)
  bool gamma = true;
};

struct ChainConfig {
  std::size_t iterations = 11000;
  std::size_t burn_in = 1000;
  std::size_t thin = 10;
  std::uint64_t seed = 1;
  std::size_t chains = 1;
  RecordSet record;

  void validate() const;
  std::size_t draws() const { return (iterations - burn_in) / thin; }
};

/// Thinned post-burn-in draws. Row layout: vec(M) (cells x p, first index
/// fastest), then sigma^2 / Sigma_y row-major, then each Sigma_d row-major,
/// then gamma values in KeyOrder x response.
struct Chain {
  Layout layout;
  ChainConfig config;
  ModelSpec model;
  std::string method;
  std::uint64_t stream = 0;
  std::string build_id;

  std::vector<std::string> columns;
  std::size_t m_columns = 0;
  std::size_t sigma_offset = 0, sigma_columns = 0;
  std::size_t Sigma_offset = 0, Sigma_columns = 0;
  std::size_t gamma_offset = 0, gamma_columns = 0;
  std::vector<double> values;  // draws x columns, row-major

  std::size_t draws() const { return columns.empty() ? 0 : values.size() / columns.size(); }
  double at(std::size_t draw, std::size_t column) const { return values[draw * columns.size() + column]; }
  std::vector<double> column(std::size_t j) const;
  Tensor m_draw(std::size_t draw) const;
  Tensor posterior_mean_m() const;
  /// Sigma_d for one draw; requires recorded Sigma columns.
  SymMatrix Sigma_draw(std::size_t draw, std::size_t factor) const;
};

std::string build_id();

Chain run_chain(const CellStats& stats, const HAHyper& hyper, const ChainConfig& config, const ModelSpec& model,
                std::uint64_t stream = 0, const std::string& method = "ha");
/// config.chains chains on streams 0..chains-1, run concurrently.
std::vector<Chain> run_chains(const CellStats& stats, const HAHyper& hyper, const ChainConfig& config,
                              const ModelSpec& model, const std::string& method = "ha");

/// Worker count: HA_ARRAY_THREADS if set, else hardware concurrency.
std::size_t worker_threads();

// ---- MANOVA preprocessing ----

struct TransformRecord {
  bool quarter_power = false;
  bool standardize = false;
  std::vector<double> means;  // after the power transform
  std::vector<double> sds;
};

struct PreprocessConfig {
  bool quarter_power = true;
  bool standardize = true;
};

/// rows x p responses -> y^(1/4), then per-column centering and unit sample variance.
std::vector<std::vector<double>> manova_preprocess(const std::vector<std::vector<double>>& responses,
                                                   const PreprocessConfig& config, TransformRecord& record);

}  // namespace ha
