#include "ha/gibbs.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <stdexcept>
#include <thread>

#ifndef HA_BUILD_ID
#define HA_BUILD_ID "unknown"
#endif

namespace ha {

// ---------------------------------------------------------------------------
// Model spec, hyperparameters, state

ModelSpec ModelSpec::full(std::size_t factors, PriorKind prior) { return {prior, all_keys(factors)}; }

ModelSpec ModelSpec::additive(std::size_t factors, PriorKind prior) { return {prior, main_keys(factors)}; }

void HAHyper::validate(const Layout& layout, const ModelSpec& model) const {
  const auto p = static_cast<Eigen::Index>(layout.responses);
  if (mu0.size() != p || tau0_sq.size() != p) throw std::invalid_argument("hyper: mu prior has wrong length");
  if ((tau0_sq.array() <= 0.0).any()) throw std::invalid_argument("hyper: tau0^2 must be positive");
  if (layout.responses == 1 && (!(nu0 > 0.0) || !(sigma0_sq > 0.0))) {
    throw std::invalid_argument("hyper: sigma^2 prior scale must be positive");
  }
  if (layout.responses > 1 && (!(eta_y0 > static_cast<double>(p) - 1.0) || S_y0.rows() != p)) {
    throw std::invalid_argument("hyper: Sigma_y prior invalid");
  }
  if (model.samples_sigma()) {
    if (eta0.size() != layout.factors() || S0.size() != layout.factors()) {
      throw std::invalid_argument("hyper: one Sigma prior per factor required");
    }
    for (std::size_t d = 0; d < layout.factors(); ++d) {
      const double m = static_cast<double>(layout.levels[d]);
      if (!(eta0[d] > m + 1.0)) throw std::invalid_argument("hyper: eta_d0 must exceed m_d + 1");
      if (S0[d].rows() != static_cast<Eigen::Index>(layout.levels[d])) throw std::invalid_argument("hyper: S_d0 order");
    }
  }
  for (const auto& key : model.keys) {
    if (!model.samples_gamma(key)) continue;
    const auto it = gamma.find(key);
    if (it == gamma.end() || it->second.size() != layout.responses) {
      throw std::invalid_argument("hyper: missing gamma prior for effect " + key_name(key));
    }
    for (const auto& g : it->second) {
      if (!(g.nu0 > 0.0) || !(g.tau0_sq > 0.0)) throw std::invalid_argument("hyper: gamma prior must be positive");
    }
  }
}

HAState HAState::initial(const Layout& layout, const ModelSpec& model) {
  HAState s;
  s.dec = Decomposition::zeros(layout, model.keys);
  const auto p = static_cast<Eigen::Index>(layout.responses);
  s.sigma_y = SymMatrix::Identity(p, p);
  for (auto m : layout.levels) {
    const auto mi = static_cast<Eigen::Index>(m);
    s.Sigma.push_back(SymMatrix::Identity(mi, mi));
  }
  for (const auto& key : model.keys) {
    if (model.samples_gamma(key)) s.gamma[key] = std::vector<double>(layout.responses, 1.0);
  }
  return s;
}

double HAState::gamma_of(const EffectKey& key, std::size_t r) const {
  const auto it = gamma.find(key);
  return it == gamma.end() ? 1.0 : it->second.at(r);
}

void HAState::check_valid() const {
  if (!dec.mu.allFinite()) throw std::logic_error("state: non-finite mu");
  for (const auto& [key, e] : dec.effects) {
    for (double v : e.values()) {
      if (!std::isfinite(v)) throw std::logic_error("state: non-finite effect " + key_name(key));
    }
  }
  chol(sigma_y);
  for (const auto& s : Sigma) chol(s);
  for (const auto& [key, g] : gamma) {
    for (double v : g) {
      if (!(v > 0.0) || !std::isfinite(v)) throw std::logic_error("state: gamma not positive for " + key_name(key));
    }
  }
}

// ---------------------------------------------------------------------------
// Helpers

namespace {

Tensor response_slice(const Tensor& e, const Layout& layout, const EffectKey& key, std::size_t r) {
  Dims dims;
  for (auto f : key) dims.push_back(layout.levels[f]);
  const std::size_t block = product(dims);
  std::vector<double> v(e.values().begin() + static_cast<std::ptrdiff_t>(block * r),
                        e.values().begin() + static_cast<std::ptrdiff_t>(block * (r + 1)));
  return Tensor(std::move(dims), std::move(v));
}

void set_response_slice(Tensor& e, const Tensor& slice, std::size_t r) {
  std::copy(slice.values().begin(), slice.values().end(),
            e.values().begin() + static_cast<std::ptrdiff_t>(slice.size() * r));
}

EigenPair identity_eigen(std::size_t m) {
  const auto mi = static_cast<Eigen::Index>(m);
  return {Vector::Ones(mi), Matrix::Identity(mi, mi)};
}

std::vector<EigenPair> factor_eigens(const HAState& state, bool hierarchical) {
  std::vector<EigenPair> out;
  for (const auto& s : state.Sigma) {
    out.push_back(hierarchical ? sym_eigen(s) : identity_eigen(static_cast<std::size_t>(s.rows())));
  }
  return out;
}

std::size_t key_cells(const EffectKey& key, const Layout& layout) {
  std::size_t c = 1;
  for (auto f : key) c *= layout.levels[f];
  return c;
}

// Regression of response r on the others under Sigma_y.
struct ResponseRegression {
  std::vector<double> beta;  // length p, beta[r] = 0
  double conditional_var = 0.0;
};

ResponseRegression regress_response(const SymMatrix& sigma_y, std::size_t r) {
  const auto p = static_cast<Eigen::Index>(sigma_y.rows());
  const auto ri = static_cast<Eigen::Index>(r);
  ResponseRegression out;
  out.beta.assign(static_cast<std::size_t>(p), 0.0);
  if (p == 1) {
    out.conditional_var = sigma_y(0, 0);
    return out;
  }
  std::vector<Eigen::Index> rest;
  for (Eigen::Index s = 0; s < p; ++s) {
    if (s != ri) rest.push_back(s);
  }
  const auto q = static_cast<Eigen::Index>(rest.size());
  Matrix s_rest(q, q);
  Vector s_cross(q);
  for (Eigen::Index i = 0; i < q; ++i) {
    s_cross(i) = sigma_y(rest[i], ri);
    for (Eigen::Index j = 0; j < q; ++j) s_rest(i, j) = sigma_y(rest[i], rest[j]);
  }
  const Vector beta = chol(s_rest).solve(s_cross);
  for (Eigen::Index i = 0; i < q; ++i) out.beta[static_cast<std::size_t>(rest[i])] = beta(i);
  out.conditional_var = sigma_y(ri, ri) - s_cross.dot(beta);
  if (!(out.conditional_var > 0.0)) throw NotPositiveDefinite("Sigma_y conditional variance not positive");
  return out;
}

// Draws one response slice of `key` given `fit` = current cell means of the state.
Tensor draw_effect_slice(const HAState& state, const EffectKey& key, std::size_t r, const BalancedMeans& data,
                         const Layout& layout, const std::vector<EigenPair>& eig, const Tensor& fit, RngStream& rng) {
  const std::size_t cells = layout.cells();
  const std::size_t p = layout.responses;
  const auto reg = regress_response(state.sigma_y, r);

  // z = residual of response r adjusted for the other responses' residuals.
  Layout single = layout;
  single.responses = 1;
  Tensor z(single.cell_dims());
  for (std::size_t c = 0; c < cells; ++c) {
    double v = data.ybar[c + cells * r] - fit[c + cells * r];
    for (std::size_t s = 0; s < p; ++s) {
      if (s != r && reg.beta[s] != 0.0) v -= reg.beta[s] * (data.ybar[c + cells * s] - fit[c + cells * s]);
    }
    z[c] = v;
  }
  Tensor rbar_key = reduce_mean(z, single.full_key(), key, single);
  const Tensor current = response_slice(state.dec.effects.at(key), layout, key, r);
  Tensor rbar(current.dims(), std::move(rbar_key.values()));
  rbar += current;

  const double kappa = data.n * static_cast<double>(cells / key_cells(key, layout)) / reg.conditional_var;
  std::vector<EigenPair> key_eig;
  key_eig.reserve(key.size());
  for (auto f : key) key_eig.push_back(eig[f]);
  return sample_effect_kron(rbar, key_eig, state.gamma_of(key, r), kappa, rng);
}

void add_slice_to_fit(Tensor& fit, const Tensor& delta, const EffectKey& key, std::size_t r, const Layout& layout) {
  Layout single = layout;
  single.responses = 1;
  Tensor cells_delta(single.cell_dims());
  Tensor d(single.key_dims(key), delta.values());
  add_effect(cells_delta, d, key, single);
  const std::size_t cells = layout.cells();
  for (std::size_t c = 0; c < cells; ++c) fit[c + cells * r] += cells_delta[c];
}

// Residual sum of squares and cross-products over the observed data.
SymMatrix residual_sscp(const HAState& state, const CellStats& stats) {
  const Layout& layout = stats.layout;
  const std::size_t cells = layout.cells();
  const std::size_t p = layout.responses;
  const Tensor m = cell_means(state.dec, layout);
  SymMatrix out = SymMatrix::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
  for (std::size_t c = 0; c < cells; ++c) {
    const double n = stats.counts[c];
    if (n == 0.0) continue;
    for (std::size_t r = 0; r < p; ++r) {
      for (std::size_t s = 0; s < p; ++s) {
        const double xp = stats.crossprods[c + cells * (r + p * s)];
        const double mr = m[c + cells * r];
        const double ms = m[c + cells * s];
        out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(s)) +=
            xp - stats.sums[c + cells * r] * ms - mr * stats.sums[c + cells * s] + n * mr * ms;
      }
    }
  }
  return 0.5 * (out + out.transpose());
}

SymMatrix inverse_wishart_with_jitter(double eta, SymMatrix scale, RngStream& rng) {
  try {
    return sample_inverse_wishart(eta, scale, rng);
  } catch (const NotPositiveDefinite&) {
    // chol runs before any draw is consumed, so the retry sees the same stream.
    scale.diagonal().array() += 1e-8 * std::abs(scale.trace()) / static_cast<double>(scale.rows());
    return sample_inverse_wishart(eta, scale, rng);
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// OLS fit and default hyperparameters

OlsFit ols_fit(const CellStats& stats) {
  const Layout& layout = stats.layout;
  const std::size_t cells = layout.cells();
  const std::size_t p = layout.responses;
  auto ols = ols_cell_means(stats);
  if (ols.missing.size() == cells) throw std::invalid_argument("all cells are empty");
  Tensor m = std::move(ols.means);

  if (!ols.missing.empty()) {
    // Fill empty cells so the top-order interaction is zero there (iterated
    // missing-value fit for the full model).
    for (std::size_t r = 0; r < p; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < cells; ++c) {
        if (stats.counts[c] > 0.0) s += m[c + cells * r];
      }
      const double fill = s / static_cast<double>(cells - ols.missing.size());
      for (auto c : ols.missing) m[c + cells * r] = fill;
    }
    const EffectKey full = layout.full_key();
    double scale = 1.0;
    for (double v : m.values()) scale = std::max(scale, std::abs(v));
    for (int iter = 0; iter < 5000; ++iter) {
      const Decomposition dec = anova_decompose(m, layout);
      const Tensor& top = dec.effects.at(full);
      double change = 0.0;
      for (auto c : ols.missing) {
        for (std::size_t r = 0; r < p; ++r) {
          m[c + cells * r] -= top[c + cells * r];
          change = std::max(change, std::abs(top[c + cells * r]));
        }
      }
      if (change < 1e-13 * scale) break;
    }
  }

  OlsFit fit;
  fit.dec = anova_decompose(m, layout);
  fit.missing = std::move(ols.missing);

  // Within-cell MLE covariance; total covariance when cells carry no replication.
  const auto pi = static_cast<Eigen::Index>(p);
  SymMatrix within = SymMatrix::Zero(pi, pi);
  SymMatrix total = SymMatrix::Zero(pi, pi);
  Vector grand = Vector::Zero(pi);
  const double n_total = stats.total_count();
  std::size_t nonempty = 0;
  for (std::size_t c = 0; c < cells; ++c) {
    const double n = stats.counts[c];
    if (n == 0.0) continue;
    ++nonempty;
    for (std::size_t r = 0; r < p; ++r) {
      grand(static_cast<Eigen::Index>(r)) += stats.sums[c + cells * r];
      for (std::size_t s = 0; s < p; ++s) {
        const double xp = stats.crossprods[c + cells * (r + p * s)];
        within(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(s)) +=
            xp - stats.sums[c + cells * r] * stats.sums[c + cells * s] / n;
        total(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(s)) += xp;
      }
    }
  }
  grand /= n_total;
  within /= n_total;
  total = total / n_total - grand * grand.transpose();
  const bool replicated = n_total > static_cast<double>(nonempty);
  SymMatrix cov = replicated ? within : total;
  bool usable = true;
  try {
    chol(cov);
  } catch (const NotPositiveDefinite&) {
    usable = false;
  }
  if (!usable && replicated) {
    cov = total;
    usable = true;
    try {
      chol(cov);
    } catch (const NotPositiveDefinite&) {
      usable = false;
    }
  }
  if (!usable) cov = SymMatrix::Identity(pi, pi);
  fit.residual_cov = 0.5 * (cov + cov.transpose());
  return fit;
}

HAHyper default_hyperparameters(const CellStats& stats) {
  const Layout& layout = stats.layout;
  if (stats.total_count() <= 0.0) throw std::invalid_argument("default_hyperparameters: all cells empty");
  const OlsFit fit = ols_fit(stats);
  const std::size_t p = layout.responses;
  const std::size_t K = layout.factors();
  const auto pi = static_cast<Eigen::Index>(p);

  HAHyper h;
  h.mu0 = fit.dec.mu;
  h.tau0_sq = fit.residual_cov.diagonal();
  h.nu0 = 1.0;
  h.sigma0_sq = fit.residual_cov(0, 0);
  h.eta_y0 = static_cast<double>(p) + 2.0;
  h.S_y0 = fit.residual_cov;

  // Squared main-effect norms per factor and response.
  std::vector<std::vector<double>> main_norm(K, std::vector<double>(p));
  for (std::size_t d = 0; d < K; ++d) {
    const auto mags = effect_magnitude_by_response(fit.dec, {d}, layout);
    for (std::size_t r = 0; r < p; ++r) main_norm[d][r] = mags[r] * static_cast<double>(layout.levels[d]);
  }

  for (std::size_t d = 0; d < K; ++d) {
    const double m = static_cast<double>(layout.levels[d]);
    double norm = 0.0;
    double floor = 0.0;
    for (std::size_t r = 0; r < p; ++r) {
      norm += main_norm[d][r];
      floor += 1e-6 * fit.residual_cov(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(r));
    }
    const double s = std::max(norm / (m * static_cast<double>(p)), floor / static_cast<double>(p));
    const auto mi = static_cast<Eigen::Index>(layout.levels[d]);
    h.eta0.push_back(m + 2.0);
    h.S0.push_back(s * SymMatrix::Identity(mi, mi));
  }

  const double inflation = fit.missing.empty()
                               ? 1.0
                               : static_cast<double>(layout.cells()) /
                                     static_cast<double>(layout.cells() - fit.missing.size());
  const EffectKey full = layout.full_key();
  for (const auto& key : all_keys(K)) {
    std::vector<GammaPrior> priors(p);
    const auto mags = effect_magnitude_by_response(fit.dec, key, layout);
    const double size = static_cast<double>(key_cells(key, layout));
    for (std::size_t r = 0; r < p; ++r) {
      const double var = fit.residual_cov(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(r));
      double tau;
      double nu;
      if (key.size() == 1) {
        // Marginal of a diagonal entry of the Sigma_d prior: 1/var ~ gamma(3/2, S_ii/2).
        nu = 3.0;
        tau = std::max(main_norm[key[0]][r] / size, 1e-6 * var);
      } else {
        // Prior mean of gamma (nu / tau^2) equals the OLS ratio
        // prod ||main||^2 / ||interaction||^2.
        nu = 1.0;
        double mains = 1.0;
        for (auto f : key) mains *= main_norm[f][r];
        double inter = mags[r] * size;
        if (key == full) inter *= inflation;
        tau = nu * inter / std::max(mains, 1e-300);
      }
      priors[r] = {nu, std::clamp(tau, 1e-10, 1e10)};
    }
    h.gamma[key] = std::move(priors);
  }
  (void)pi;
  return h;
}

// ---------------------------------------------------------------------------
// Full conditionals

BalancedMeans balanced_from_stats(const CellStats& stats) {
  const double n = stats.max_count();
  for (double c : stats.counts.values()) {
    if (c != n) throw std::invalid_argument("balanced_from_stats: counts are not equal");
  }
  if (n <= 0.0) throw std::invalid_argument("balanced_from_stats: no observations");
  BalancedMeans out{Tensor(stats.layout.cell_dims()), n};
  for (std::size_t i = 0; i < out.ybar.size(); ++i) out.ybar[i] = stats.sums[i] / n;
  return out;
}

BalancedMeans impute_balance(const CellStats& stats, const HAState& state, const Layout& layout, RngStream& rng) {
  const double n = stats.max_count();
  if (n < 1.0) throw std::invalid_argument("impute_balance: no observations");
  const std::size_t cells = layout.cells();
  const std::size_t p = layout.responses;
  BalancedMeans out{Tensor(layout.cell_dims()), n};
  bool any_short = false;
  for (double c : stats.counts.values()) any_short |= (c < n);
  Tensor mu_cell;
  Matrix ly;
  if (any_short) {
    mu_cell = cell_means(state.dec, layout);
    ly = chol(state.sigma_y).lower();
  }
  Vector z(static_cast<Eigen::Index>(p));
  for (std::size_t c = 0; c < cells; ++c) {
    const double nc = stats.counts[c];
    if (nc == n) {
      for (std::size_t r = 0; r < p; ++r) out.ybar[c + cells * r] = stats.sums[c + cells * r] / n;
      continue;
    }
    const double k = n - nc;
    for (std::size_t r = 0; r < p; ++r) z(static_cast<Eigen::Index>(r)) = rng.normal();
    const Vector dev = ly * z / std::sqrt(k);
    for (std::size_t r = 0; r < p; ++r) {
      const double ym = mu_cell[c + cells * r] + dev(static_cast<Eigen::Index>(r));
      out.ybar[c + cells * r] = (stats.sums[c + cells * r] + k * ym) / n;
    }
  }
  return out;
}

Vector update_mu(const HAState& state, const BalancedMeans& data, const HAHyper& hyper, const Layout& layout,
                 RngStream& rng) {
  const std::size_t cells = layout.cells();
  const std::size_t p = layout.responses;
  const auto pi = static_cast<Eigen::Index>(p);
  Decomposition no_mu = state.dec;
  no_mu.mu.setZero();
  const Tensor fit = cell_means(no_mu, layout);
  Vector rbar = Vector::Zero(pi);
  for (std::size_t r = 0; r < p; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cells; ++c) s += data.ybar[c + cells * r] - fit[c + cells * r];
    rbar(static_cast<Eigen::Index>(r)) = s / static_cast<double>(cells);
  }
  const double weight = data.n * static_cast<double>(cells);
  const Matrix sy_inv = chol(state.sigma_y).inverse();
  Matrix precision = weight * sy_inv;
  precision.diagonal() += hyper.tau0_sq.cwiseInverse();
  const Vector h = hyper.mu0.cwiseQuotient(hyper.tau0_sq) + weight * (sy_inv * rbar);
  return sample_mvn_prec(h, chol(precision), rng);
}

Tensor update_effect_manova(const HAState& state, const EffectKey& key, std::size_t response,
                            const BalancedMeans& data, const Layout& layout, RngStream& rng) {
  if (response >= layout.responses) throw std::out_of_range("update_effect: response out of range");
  std::vector<EigenPair> eig;
  for (std::size_t d = 0; d < layout.factors(); ++d) {
    const bool in_key = std::find(key.begin(), key.end(), d) != key.end();
    eig.push_back(in_key ? sym_eigen(state.Sigma[d]) : identity_eigen(layout.levels[d]));
  }
  const Tensor fit = cell_means(state.dec, layout);
  return draw_effect_slice(state, key, response, data, layout, eig, fit, rng);
}

Tensor update_effect(const HAState& state, const EffectKey& key, const BalancedMeans& data, const Layout& layout,
                     RngStream& rng) {
  HAState work = state;
  for (std::size_t r = 0; r < layout.responses; ++r) {
    const Tensor slice = update_effect_manova(work, key, r, data, layout, rng);
    set_response_slice(work.dec.effects.at(key), slice, r);
  }
  return work.dec.effects.at(key);
}

double update_sigma2(const HAState& state, const CellStats& stats, const HAHyper& hyper, RngStream& rng) {
  if (stats.layout.responses != 1) throw std::invalid_argument("update_sigma2 requires p = 1");
  const double ss = std::max(0.0, residual_sscp(state, stats)(0, 0));
  const double nu1 = hyper.nu0 + stats.total_count();
  const double rate = 0.5 * (hyper.nu0 * hyper.sigma0_sq + ss);
  return 1.0 / rng.gamma(0.5 * nu1, rate);
}

SymMatrix update_Sigma_y(const HAState& state, const CellStats& stats, const HAHyper& hyper, RngStream& rng) {
  const SymMatrix scale = hyper.S_y0 + residual_sscp(state, stats);
  return inverse_wishart_with_jitter(hyper.eta_y0 + stats.total_count(), scale, rng);
}

SigmaConditional Sigma_conditional(const HAState& state, std::size_t factor, const HAHyper& hyper,
                                   const Layout& layout) {
  SigmaConditional out{hyper.eta0.at(factor), hyper.S0.at(factor)};
  std::vector<Matrix> inverses(layout.factors());
  for (std::size_t d = 0; d < layout.factors(); ++d) {
    if (d != factor) inverses[d] = chol(state.Sigma[d]).inverse();
  }
  for (const auto& [key, e] : state.dec.effects) {
    const auto pos = std::find(key.begin(), key.end(), factor);
    if (pos == key.end()) continue;
    std::vector<Matrix> others;
    double replicates = 1.0;
    for (auto f : key) {
      if (f == factor) continue;
      others.push_back(inverses[f]);
      replicates *= static_cast<double>(layout.levels[f]);
    }
    out.eta += static_cast<double>(layout.responses) * replicates;
    const auto mode = static_cast<std::size_t>(pos - key.begin());
    for (std::size_t r = 0; r < layout.responses; ++r) {
      const Tensor slice = response_slice(e, layout, key, r);
      out.scale += state.gamma_of(key, r) * mode_quadratic(slice, mode, others);
    }
  }
  out.scale = 0.5 * (out.scale + out.scale.transpose());
  return out;
}

SymMatrix update_Sigma(const HAState& state, std::size_t factor, const HAHyper& hyper, const Layout& layout,
                       RngStream& rng) {
  auto cond = Sigma_conditional(state, factor, hyper, layout);
  return inverse_wishart_with_jitter(cond.eta, std::move(cond.scale), rng);
}

GammaPrior gamma_conditional(const HAState& state, const EffectKey& key, std::size_t response,
                             const HAHyper& hyper, const Layout& layout, const ModelSpec& model) {
  const GammaPrior prior = hyper.gamma.at(key).at(response);
  const Tensor slice = response_slice(state.dec.effects.at(key), layout, key, response);
  double quad;
  if (model.samples_sigma()) {
    std::vector<Matrix> inverses;
    for (auto f : key) inverses.push_back(chol(state.Sigma[f]).inverse());
    quad = kron_quadratic_form(slice, inverses);
  } else {
    quad = slice.squared_norm();
  }
  return {prior.nu0 + static_cast<double>(slice.size()), prior.tau0_sq + quad};
}

double update_gamma(const HAState& state, const EffectKey& key, std::size_t response, const HAHyper& hyper,
                    const Layout& layout, const ModelSpec& model, RngStream& rng) {
  const auto post = gamma_conditional(state, key, response, hyper, layout, model);
  return rng.gamma(0.5 * post.nu0, 0.5 * post.tau0_sq);
}

void gibbs_sweep(HAState& state, const CellStats& stats, const HAHyper& hyper, const ModelSpec& model,
                 RngStream& rng) {
  const Layout& layout = stats.layout;
  const BalancedMeans data = impute_balance(stats, state, layout, rng);
  state.dec.mu = update_mu(state, data, hyper, layout, rng);

  const auto eig = factor_eigens(state, model.samples_sigma());
  Tensor fit = cell_means(state.dec, layout);
  for (const auto& key : model.keys) {
    Tensor& effect = state.dec.effects.at(key);
    for (std::size_t r = 0; r < layout.responses; ++r) {
      Tensor slice = draw_effect_slice(state, key, r, data, layout, eig, fit, rng);
      Tensor delta = slice - response_slice(effect, layout, key, r);
      add_slice_to_fit(fit, delta, key, r, layout);
      set_response_slice(effect, slice, r);
    }
  }

  if (layout.responses == 1) {
    state.sigma_y(0, 0) = update_sigma2(state, stats, hyper, rng);
  } else {
    state.sigma_y = update_Sigma_y(state, stats, hyper, rng);
  }
  if (model.samples_sigma()) {
    for (std::size_t d = 0; d < layout.factors(); ++d) state.Sigma[d] = update_Sigma(state, d, hyper, layout, rng);
  }
  for (const auto& key : model.keys) {
    if (!model.samples_gamma(key)) continue;
    for (std::size_t r = 0; r < layout.responses; ++r) {
      state.gamma[key][r] = update_gamma(state, key, r, hyper, layout, model, rng);
    }
  }
#ifndef NDEBUG
  state.check_valid();
#endif
}

// ---------------------------------------------------------------------------
// Chains

void ChainConfig::validate() const {
  if (iterations == 0) throw std::invalid_argument("iterations must be positive");
  if (burn_in >= iterations) throw std::invalid_argument("burn_in must be smaller than iterations");
  if (thin < 1) throw std::invalid_argument("thin must be at least 1");
  if (chains < 1) throw std::invalid_argument("chains must be at least 1");
}

std::vector<double> Chain::column(std::size_t j) const {
  std::vector<double> out(draws());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = at(i, j);
  return out;
}

Tensor Chain::m_draw(std::size_t draw) const {
  const auto first = values.begin() + static_cast<std::ptrdiff_t>(draw * columns.size());
  return Tensor(layout.cell_dims(), std::vector<double>(first, first + static_cast<std::ptrdiff_t>(m_columns)));
}

Tensor Chain::posterior_mean_m() const {
  Tensor mean(layout.cell_dims());
  const std::size_t n = draws();
  if (n == 0) throw std::logic_error("posterior_mean_m: empty chain");
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m_columns; ++j) mean[j] += at(i, j);
  }
  mean *= 1.0 / static_cast<double>(n);
  return mean;
}

SymMatrix Chain::Sigma_draw(std::size_t draw, std::size_t factor) const {
  if (Sigma_columns == 0) throw std::logic_error("chain has no recorded Sigma draws");
  std::size_t offset = Sigma_offset;
  for (std::size_t d = 0; d < factor; ++d) offset += layout.levels[d] * layout.levels[d];
  const auto m = static_cast<Eigen::Index>(layout.levels.at(factor));
  SymMatrix s(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) s(i, j) = at(draw, offset + static_cast<std::size_t>(i * m + j));
  }
  return s;
}

std::string build_id() { return std::string("ha-array ") + HA_BUILD_ID; }

namespace {

std::string cell_label(const std::vector<std::size_t>& idx, std::size_t r, std::size_t p) {
  std::string s = "M[";
  for (std::size_t d = 0; d < idx.size(); ++d) {
    if (d) s += ':';
    s += std::to_string(idx[d] + 1);
  }
  if (p > 1) s += "|" + std::to_string(r + 1);
  return s + "]";
}

void setup_columns(Chain& chain) {
  const Layout& layout = chain.layout;
  const std::size_t cells = layout.cells();
  const std::size_t p = layout.responses;
  auto& cols = chain.columns;
  Tensor shape(layout.levels);
  std::vector<std::size_t> idx;
  for (std::size_t r = 0; r < p; ++r) {
    for (std::size_t c = 0; c < cells; ++c) {
      shape.multi_index(c, idx);
      cols.push_back(cell_label(idx, r, p));
    }
  }
  chain.m_columns = cols.size();
  chain.sigma_offset = cols.size();
  if (chain.config.record.sigma) {
    if (p == 1) {
      cols.push_back("sigma2");
    } else {
      for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t j = 0; j < p; ++j) cols.push_back("Sigma_y[" + std::to_string(i + 1) + ":" + std::to_string(j + 1) + "]");
      }
    }
  }
  chain.sigma_columns = cols.size() - chain.sigma_offset;
  chain.Sigma_offset = cols.size();
  if (chain.config.record.Sigma && chain.model.samples_sigma()) {
    for (std::size_t d = 0; d < layout.factors(); ++d) {
      for (std::size_t i = 0; i < layout.levels[d]; ++i) {
        for (std::size_t j = 0; j < layout.levels[d]; ++j) {
          cols.push_back("Sigma" + std::to_string(d + 1) + "[" + std::to_string(i + 1) + ":" + std::to_string(j + 1) + "]");
        }
      }
    }
  }
  chain.Sigma_columns = cols.size() - chain.Sigma_offset;
  chain.gamma_offset = cols.size();
  if (chain.config.record.gamma) {
    for (const auto& key : chain.model.keys) {
      if (!chain.model.samples_gamma(key)) continue;
      for (std::size_t r = 0; r < p; ++r) cols.push_back("gamma[" + key_name(key) + "|" + std::to_string(r + 1) + "]");
    }
  }
  chain.gamma_columns = cols.size() - chain.gamma_offset;
}

void record_draw(Chain& chain, const HAState& state) {
  const Tensor m = cell_means(state.dec, chain.layout);
  chain.values.insert(chain.values.end(), m.values().begin(), m.values().end());
  const std::size_t p = chain.layout.responses;
  if (chain.config.record.sigma) {
    for (std::size_t i = 0; i < p; ++i) {
      for (std::size_t j = 0; j < p; ++j) {
        chain.values.push_back(state.sigma_y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
      }
    }
  }
  if (chain.Sigma_columns > 0) {
    for (const auto& s : state.Sigma) {
      for (Eigen::Index i = 0; i < s.rows(); ++i) {
        for (Eigen::Index j = 0; j < s.cols(); ++j) chain.values.push_back(s(i, j));
      }
    }
  }
  if (chain.gamma_columns > 0) {
    for (const auto& [key, g] : state.gamma) {
      chain.values.insert(chain.values.end(), g.begin(), g.end());
    }
  }
}

}  // namespace

Chain run_chain(const CellStats& stats, const HAHyper& hyper, const ChainConfig& config, const ModelSpec& model,
                std::uint64_t stream, const std::string& method) {
  config.validate();
  const Layout& layout = stats.layout;
  hyper.validate(layout, model);

  Chain chain;
  chain.layout = layout;
  chain.config = config;
  chain.model = model;
  chain.method = method;
  chain.stream = stream;
  chain.build_id = build_id();
  setup_columns(chain);
  chain.values.reserve(config.draws() * chain.columns.size());

  RngStream rng(config.seed, stream);
  HAState state = HAState::initial(layout, model);
  for (std::size_t t = 1; t <= config.iterations; ++t) {
    gibbs_sweep(state, stats, hyper, model, rng);
    if (t > config.burn_in && (t - config.burn_in) % config.thin == 0) record_draw(chain, state);
  }
  return chain;
}

std::size_t worker_threads() {
  if (const char* env = std::getenv("HA_ARRAY_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

std::vector<Chain> run_chains(const CellStats& stats, const HAHyper& hyper, const ChainConfig& config,
                              const ModelSpec& model, const std::string& method) {
  config.validate();
  std::vector<Chain> chains(config.chains);
  std::vector<std::exception_ptr> errors(config.chains);
  const std::size_t workers = std::min(worker_threads(), config.chains);
  auto work = [&](std::size_t first) {
    for (std::size_t c = first; c < config.chains; c += workers) {
      try {
        chains[c] = run_chain(stats, hyper, config, model, c, method);
      } catch (...) {
        errors[c] = std::current_exception();
      }
    }
  };
  if (workers <= 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return chains;
}

// ---------------------------------------------------------------------------
// MANOVA preprocessing

std::vector<std::vector<double>> manova_preprocess(const std::vector<std::vector<double>>& responses,
                                                   const PreprocessConfig& config, TransformRecord& record) {
  if (responses.empty()) throw std::invalid_argument("manova_preprocess: no rows");
  const std::size_t p = responses.front().size();
  auto out = responses;
  record = TransformRecord{config.quarter_power, config.standardize, std::vector<double>(p, 0.0),
                           std::vector<double>(p, 1.0)};
  if (config.quarter_power) {
    for (std::size_t i = 0; i < out.size(); ++i) {
      for (std::size_t r = 0; r < p; ++r) {
        if (out[i][r] < 0.0) {
          throw std::invalid_argument("manova_preprocess: negative response at row " + std::to_string(i + 1));
        }
        out[i][r] = std::pow(out[i][r], 0.25);
      }
    }
  }
  if (!config.standardize) return out;
  const double n = static_cast<double>(out.size());
  if (out.size() < 2) throw std::invalid_argument("manova_preprocess: need at least two rows to standardize");
  for (std::size_t r = 0; r < p; ++r) {
    double mean = 0.0;
    for (const auto& row : out) mean += row[r];
    mean /= n;
    double ss = 0.0;
    for (const auto& row : out) ss += (row[r] - mean) * (row[r] - mean);
    const double sd = std::sqrt(ss / (n - 1.0));
    if (!(sd > 0.0)) throw std::invalid_argument("manova_preprocess: response " + std::to_string(r + 1) + " has zero variance");
    for (auto& row : out) row[r] = (row[r] - mean) / sd;
    record.means[r] = mean;
    record.sds[r] = sd;
  }
  return out;
}

}  // namespace ha
