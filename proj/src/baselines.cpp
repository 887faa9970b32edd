#include "ha/baselines.hpp"

#include <algorithm>
#include <cmath>

#include <boost/math/distributions/fisher_f.hpp>

namespace ha {

Chain sb_chain(const CellStats& stats, const HAHyper& hyper, const ChainConfig& config, std::uint64_t stream) {
  return run_chain(stats, hyper, config, ModelSpec::full(stats.layout.factors(), PriorKind::Standard), stream, "sb");
}

namespace {

// Sum-to-zero contrast coding: level i < m-1 -> e_i, last level -> -1.
double contrast(std::size_t level, std::size_t column, std::size_t m) {
  if (level == m - 1) return -1.0;
  return level == column ? 1.0 : 0.0;
}

std::size_t key_df(const EffectKey& key, const Layout& layout) {
  std::size_t df = 1;
  for (auto f : key) df *= layout.levels[f] - 1;
  return df;
}

// Design columns for one key evaluated at one cell.
void key_columns(const EffectKey& key, const std::vector<std::size_t>& cell, const Layout& layout, double* out) {
  const std::size_t df = key_df(key, layout);
  std::vector<std::size_t> idx(key.size(), 0);
  for (std::size_t j = 0; j < df; ++j) {
    double v = 1.0;
    for (std::size_t i = 0; i < key.size(); ++i) {
      const auto f = key[i];
      v *= contrast(cell[f], idx[i], layout.levels[f]);
    }
    out[j] = v;
    for (std::size_t i = 0; i < key.size(); ++i) {
      if (++idx[i] < layout.levels[key[i]] - 1) break;
      idx[i] = 0;
    }
  }
}

Matrix design_matrix(const std::vector<std::vector<std::size_t>>& cells, const std::vector<EffectKey>& keys,
                     const Layout& layout) {
  std::size_t q = 1;
  for (const auto& k : keys) q += key_df(k, layout);
  Matrix x(static_cast<Eigen::Index>(cells.size()), static_cast<Eigen::Index>(q));
  std::vector<double> row(q);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    row[0] = 1.0;
    std::size_t offset = 1;
    for (const auto& k : keys) {
      key_columns(k, cells[i], layout, row.data() + offset);
      offset += key_df(k, layout);
    }
    for (std::size_t j = 0; j < q; ++j) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = row[j];
  }
  return x;
}

std::vector<std::vector<std::size_t>> all_cells(const Layout& layout) {
  std::vector<std::vector<std::size_t>> out(layout.cells());
  const Tensor shape(layout.levels);
  for (std::size_t c = 0; c < out.size(); ++c) shape.multi_index(c, out[c]);
  return out;
}

}  // namespace

Tensor aols_cell_means(const CellStats& stats) {
  const Layout& layout = stats.layout;
  const auto cells = all_cells(layout);
  const Matrix x = design_matrix(cells, main_keys(layout.factors()), layout);
  const std::size_t nc = layout.cells();
  const std::size_t p = layout.responses;
  Matrix xw = x;
  Matrix yw(static_cast<Eigen::Index>(nc), static_cast<Eigen::Index>(p));
  for (std::size_t c = 0; c < nc; ++c) {
    const double w = std::sqrt(stats.counts[c]);
    xw.row(static_cast<Eigen::Index>(c)) *= w;
    for (std::size_t r = 0; r < p; ++r) {
      yw(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(r)) = w * stats.cell_mean(c, r);
    }
  }
  Eigen::ColPivHouseholderQR<Matrix> qr(xw);
  if (qr.rank() < x.cols()) throw RankDeficient("additive model is rank deficient (a factor level has no data)");
  const Matrix beta = qr.solve(yw);
  const Matrix fitted = x * beta;
  Tensor out(layout.cell_dims());
  for (std::size_t r = 0; r < p; ++r) {
    for (std::size_t c = 0; c < nc; ++c) {
      out[c + nc * r] = fitted(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(r));
    }
  }
  return out;
}

AdditiveFits additive_fits(const CellStats& stats, const HAHyper& hyper, const ChainConfig& config,
                           std::uint64_t stream) {
  AdditiveFits fits;
  fits.aols = aols_cell_means(stats);
  fits.asb = run_chain(stats, hyper, config, ModelSpec::additive(stats.layout.factors(), PriorKind::Standard),
                       stream, "asb");
  return fits;
}

std::string effect_label(const EffectKey& key, const Layout& layout) {
  std::string s;
  for (std::size_t i = 0; i < key.size(); ++i) {
    if (i) s += " x ";
    const auto f = key[i];
    s += f < layout.factor_names.size() && !layout.factor_names[f].empty() ? layout.factor_names[f]
                                                                           : "factor" + std::to_string(f + 1);
  }
  return s;
}

std::vector<PillaiRow> pillai_tests(const LongData& data) {
  const Layout& layout = data.layout;
  const std::size_t n = data.responses.size();
  const std::size_t p = layout.responses;
  const auto keys = all_keys(layout.factors());
  const Matrix x = design_matrix(data.cells, keys, layout);
  Matrix y(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t r = 0; r < p; ++r) y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(r)) = data.responses[i][r];
  }

  // Fitted SSCP and rank for each prefix of the column blocks.
  auto fitted_sscp = [&](Eigen::Index cols, Eigen::Index& rank) {
    Eigen::ColPivHouseholderQR<Matrix> qr(x.leftCols(cols));
    rank = qr.rank();
    const Matrix qty = qr.householderQ().transpose() * y;
    const Matrix top = qty.topRows(rank);
    return Matrix(top.transpose() * top);
  };

  Eigen::Index cols = 1;
  Eigen::Index prev_rank = 0;
  Matrix prev = fitted_sscp(cols, prev_rank);
  std::vector<Matrix> hyp;
  std::vector<Eigen::Index> dfs;
  for (const auto& key : keys) {
    cols += static_cast<Eigen::Index>(key_df(key, layout));
    Eigen::Index rank = 0;
    Matrix cur = fitted_sscp(cols, rank);
    hyp.push_back(cur - prev);
    dfs.push_back(rank - prev_rank);
    prev = std::move(cur);
    prev_rank = rank;
  }
  const Matrix error = y.transpose() * y - prev;
  const double df_e = static_cast<double>(n) - static_cast<double>(prev_rank);
  if (df_e < static_cast<double>(p)) throw std::invalid_argument("pillai_tests: too few error degrees of freedom");
  Eigen::LDLT<Matrix> err_check(error);
  if (err_check.info() != Eigen::Success || !(err_check.vectorD().minCoeff() > 1e-12 * std::abs(error.trace()))) {
    throw NotPositiveDefinite("pillai_tests: error SSCP is singular");
  }

  std::vector<PillaiRow> rows;
  for (std::size_t k = 0; k < keys.size(); ++k) {
    PillaiRow row;
    row.effect = effect_label(keys[k], layout);
    const double q = static_cast<double>(dfs[k]);
    const Matrix total = 0.5 * (hyp[k] + hyp[k].transpose()) + error;
    row.pillai = Eigen::LDLT<Matrix>(total).solve(hyp[k]).trace();
    const double pd = static_cast<double>(p);
    const double s = std::min(pd, q);
    const double m = (std::abs(q - pd) - 1.0) / 2.0;
    const double nn = (df_e - pd - 1.0) / 2.0;
    row.num_df = s * (2.0 * m + s + 1.0);
    row.den_df = s * (2.0 * nn + s + 1.0);
    if (q == 0.0) {
      row.num_df = 0.0;
      row.approx_f = 0.0;
      row.p_value = 1.0;
    } else {
      const double v = std::clamp(row.pillai, 0.0, s * (1.0 - 1e-15));
      row.approx_f = (2.0 * nn + s + 1.0) / (2.0 * m + s + 1.0) * v / (s - v);
      boost::math::fisher_f_distribution<double> f(row.num_df, row.den_df);
      row.p_value = std::clamp(boost::math::cdf(boost::math::complement(f, row.approx_f)), 0.0, 1.0);
    }
    rows.push_back(row);
  }
  return rows;
}

}  // namespace ha
