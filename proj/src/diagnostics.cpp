#include "ha/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

#include "ha/io.hpp"

namespace ha {

namespace {

double mean_of(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

// Biased autocovariance at a given lag.
class AutoCov {
 public:
  explicit AutoCov(std::span<const double> x) : x_(x), mean_(mean_of(x)) {}
  double operator()(std::size_t lag) const {
    const std::size_t n = x_.size();
    double s = 0.0;
    for (std::size_t t = 0; t + lag < n; ++t) s += (x_[t] - mean_) * (x_[t + lag] - mean_);
    return s / static_cast<double>(n);
  }

 private:
  std::span<const double> x_;
  double mean_;
};

// Integrated autocorrelation time 1 + 2 sum rho_k, truncated by the initial
// positive sequence of paired sums.
double iact(std::span<const double> x, double c0) {
  const AutoCov cov(x);
  const std::size_t n = x.size();
  double sum = 0.0;
  for (std::size_t m = 0; 2 * m + 1 < n; ++m) {
    const double pair = (m == 0 ? c0 : cov(2 * m)) + cov(2 * m + 1);
    if (!(pair > 0.0)) break;
    sum += pair;
  }
  return std::max((-c0 + 2.0 * sum) / c0, 1e-12);
}

}  // namespace

bool is_constant(std::span<const double> series) {
  for (double v : series) {
    if (v != series.front()) return false;
  }
  return true;
}

double ess(std::span<const double> series) {
  if (series.size() < 10) throw std::invalid_argument("ess: series needs at least 10 values");
  const double n = static_cast<double>(series.size());
  if (is_constant(series)) return n;
  const double c0 = AutoCov(series)(0);
  return std::min(n / iact(series, c0), 1.05 * n);
}

double spectral_density_zero(std::span<const double> series) {
  if (series.size() < 2 || is_constant(series)) return 0.0;
  const double c0 = AutoCov(series)(0);
  return c0 * iact(series, c0);
}

double geweke_z(std::span<const double> series, double first, double last) {
  if (series.size() < 10) throw std::invalid_argument("geweke_z: series needs at least 10 values");
  if (!(first > 0.0) || !(last > 0.0) || first + last > 1.0) throw std::invalid_argument("geweke_z: bad windows");
  if (is_constant(series)) return 0.0;
  const std::size_t n = series.size();
  const auto na = std::max<std::size_t>(2, static_cast<std::size_t>(std::floor(first * static_cast<double>(n))));
  const auto nb = std::max<std::size_t>(2, static_cast<std::size_t>(std::floor(last * static_cast<double>(n))));
  const auto a = series.first(na);
  const auto b = series.last(nb);
  const double var = spectral_density_zero(a) / static_cast<double>(na) + spectral_density_zero(b) / static_cast<double>(nb);
  if (!(var > 0.0)) return 0.0;
  return (mean_of(a) - mean_of(b)) / std::sqrt(var);
}

double autocorr(std::span<const double> series, std::size_t lag) {
  if (series.size() < lag + 1) throw std::invalid_argument("autocorr: series shorter than lag + 1");
  if (is_constant(series)) return 0.0;
  const AutoCov cov(series);
  return cov(lag) / cov(0);
}

double quantile(std::vector<double> values, double prob) {
  if (values.empty()) throw std::invalid_argument("quantile: empty sample");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= values.size()) return values.back();
  return values[lo] + (h - static_cast<double>(lo)) * (values[lo + 1] - values[lo]);
}

IntervalReport interval_report(const Chain& chain, double level, const Tensor* truth) {
  if (chain.draws() == 0) throw std::invalid_argument("interval_report: empty chain");
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("interval_report: level must be in (0, 1)");
  if (truth && truth->size() != chain.m_columns) throw DimensionError("interval_report: truth has wrong size");
  IntervalReport rep;
  rep.level = level;
  const double lo_p = 0.5 * (1.0 - level);
  const double hi_p = 0.5 * (1.0 + level);
  double width = 0.0;
  std::size_t hits = 0;
  for (std::size_t j = 0; j < chain.m_columns; ++j) {
    std::vector<double> col = chain.column(j);
    std::sort(col.begin(), col.end());
    const double lo = quantile(col, lo_p);
    const double hi = quantile(col, hi_p);
    rep.lower.push_back(lo);
    rep.upper.push_back(hi);
    width += hi - lo;
    if (truth) {
      const int in = (lo <= (*truth)[j] && (*truth)[j] <= hi) ? 1 : 0;
      rep.covered.push_back(in);
      hits += static_cast<std::size_t>(in);
    }
  }
  const double cells = static_cast<double>(chain.m_columns);
  rep.mean_width = width / cells;
  rep.coverage = truth ? static_cast<double>(hits) / cells : std::numeric_limits<double>::quiet_NaN();
  return rep;
}

CorrelationResult row_correlations(const Matrix& rows) {
  if (rows.cols() < 2) throw std::invalid_argument("row_correlations: need at least two coefficient columns");
  const Eigen::Index m = rows.rows();
  const Eigen::Index c = rows.cols();
  Matrix centered = rows;
  Vector norm(m);
  CorrelationResult out;
  for (Eigen::Index i = 0; i < m; ++i) {
    centered.row(i).array() -= rows.row(i).mean();
    norm(i) = centered.row(i).norm();
    // an exactly constant row can leave rounding residue after centring
    if ((rows.row(i).array() == rows(i, 0)).all()) norm(i) = 0.0;
    if (!(norm(i) > 0.0)) out.zero_variance.push_back(static_cast<std::size_t>(i));
  }
  out.corr = Matrix::Identity(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = i + 1; j < m; ++j) {
      double r = 0.0;
      if (norm(i) > 0.0 && norm(j) > 0.0) {
        double s = 0.0;
        for (Eigen::Index k = 0; k < c; ++k) s += centered(i, k) * centered(j, k);
        r = std::clamp(s / (norm(i) * norm(j)), -1.0, 1.0);
      }
      out.corr(i, j) = out.corr(j, i) = r;
    }
  }
  return out;
}

CorrelationResult effect_level_correlations(const Decomposition& dec, std::size_t factor, const Layout& layout) {
  const std::size_t m = layout.levels.at(factor);
  std::vector<std::vector<double>> columns;
  for (const auto& [key, e] : dec.effects) {
    if (key.size() > 2) continue;
    const auto pos = std::find(key.begin(), key.end(), factor);
    if (pos == key.end()) continue;
    // Unfold along the factor: one column per (other level, response).
    const Matrix unfolded = matricize(e, static_cast<std::size_t>(pos - key.begin()));
    for (Eigen::Index j = 0; j < unfolded.cols(); ++j) {
      std::vector<double> col(m);
      for (std::size_t i = 0; i < m; ++i) col[i] = unfolded(static_cast<Eigen::Index>(i), j);
      columns.push_back(std::move(col));
    }
  }
  Matrix rows(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(columns.size()));
  for (std::size_t j = 0; j < columns.size(); ++j) {
    for (std::size_t i = 0; i < m; ++i) rows(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = columns[j][i];
  }
  return row_correlations(rows);
}

std::vector<Matrix> posterior_correlation_matrices(const Chain& chain) {
  if (chain.Sigma_columns == 0) throw std::invalid_argument("chain has no recorded Sigma draws");
  const std::size_t n = chain.draws();
  if (n == 0) throw std::invalid_argument("posterior_correlation_matrices: empty chain");
  std::vector<Matrix> out;
  for (std::size_t d = 0; d < chain.layout.factors(); ++d) {
    const auto m = static_cast<Eigen::Index>(chain.layout.levels[d]);
    Matrix acc = Matrix::Zero(m, m);
    for (std::size_t t = 0; t < n; ++t) {
      const SymMatrix s = chain.Sigma_draw(t, d);
      const Vector inv_sd = s.diagonal().cwiseSqrt().cwiseInverse();
      acc += inv_sd.asDiagonal() * s * inv_sd.asDiagonal();
    }
    acc /= static_cast<double>(n);
    for (Eigen::Index i = 0; i < m; ++i) {
      acc(i, i) = 1.0;
      for (Eigen::Index j = 0; j < m; ++j) {
        if (i != j) acc(i, j) = std::clamp(acc(i, j), -1.0, 1.0);
      }
    }
    out.push_back(0.5 * (acc + acc.transpose()));
  }
  return out;
}

std::vector<SeriesDiagnostics> diagnose_chain(const Chain& chain, std::size_t lag,
                                              const std::vector<std::string>& columns) {
  std::set<std::size_t> chosen;
  for (std::size_t j = chain.sigma_offset; j < chain.sigma_offset + chain.sigma_columns; ++j) chosen.insert(j);
  if (columns.empty()) {
    for (std::size_t j = 0; j < chain.columns.size(); ++j) chosen.insert(j);
  } else {
    for (const auto& name : columns) {
      const auto it = std::find(chain.columns.begin(), chain.columns.end(), name);
      if (it == chain.columns.end()) throw std::invalid_argument("no chain column named '" + name + "'");
      chosen.insert(static_cast<std::size_t>(it - chain.columns.begin()));
    }
  }
  std::vector<SeriesDiagnostics> out;
  for (auto j : chosen) {
    const auto x = chain.column(j);
    SeriesDiagnostics d;
    d.column = chain.columns[j];
    d.mean = mean_of(x);
    double ss = 0.0;
    for (double v : x) ss += (v - d.mean) * (v - d.mean);
    d.sd = x.size() > 1 ? std::sqrt(ss / static_cast<double>(x.size() - 1)) : 0.0;
    d.constant = is_constant(x);
    d.ess = ess(x);
    d.geweke = geweke_z(x);
    d.autocorr = autocorr(x, lag);
    d.flagged = std::abs(d.geweke) > 2.0;
    out.push_back(d);
  }
  return out;
}

std::string diagnostics_csv(const std::vector<SeriesDiagnostics>& rows) {
  std::ostringstream out;
  out << "column,mean,sd,ess,geweke_z,autocorr,constant,geweke_flag\n";
  for (const auto& r : rows) {
    out << r.column << ',' << format_double(r.mean) << ',' << format_double(r.sd) << ',' << format_double(r.ess) << ','
        << format_double(r.geweke) << ',' << format_double(r.autocorr) << ',' << (r.constant ? 1 : 0) << ','
        << (r.flagged ? 1 : 0) << '\n';
  }
  return out.str();
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + '"';
}

std::string level_label(const Layout& layout, std::size_t factor, std::size_t level) {
  if (factor < layout.labels.size() && level < layout.labels[factor].size()) return layout.labels[factor][level];
  return std::to_string(level + 1);
}

std::string factor_label(const Layout& layout, std::size_t factor) {
  if (factor < layout.factor_names.size() && !layout.factor_names[factor].empty()) return layout.factor_names[factor];
  return "factor" + std::to_string(factor + 1);
}

}  // namespace

std::string posterior_summary_csv(const Chain& chain, double level) {
  const Layout& layout = chain.layout;
  const auto rep = interval_report(chain, level);
  const std::size_t cells = layout.cells();
  std::ostringstream out;
  for (std::size_t f = 0; f < layout.factors(); ++f) out << csv_field(factor_label(layout, f)) << ',';
  out << "response,mean,sd,lower,upper\n";
  const Tensor shape(layout.levels);
  std::vector<std::size_t> idx;
  const double n = static_cast<double>(chain.draws());
  for (std::size_t r = 0; r < layout.responses; ++r) {
    for (std::size_t c = 0; c < cells; ++c) {
      const std::size_t j = c + cells * r;
      shape.multi_index(c, idx);
      for (std::size_t f = 0; f < layout.factors(); ++f) out << csv_field(level_label(layout, f, idx[f])) << ',';
      const auto x = chain.column(j);
      const double mean = mean_of(x);
      double ss = 0.0;
      for (double v : x) ss += (v - mean) * (v - mean);
      const double sd = n > 1.0 ? std::sqrt(ss / (n - 1.0)) : 0.0;
      const std::string resp =
          r < layout.response_names.size() ? layout.response_names[r] : "y" + std::to_string(r + 1);
      out << csv_field(resp) << ',' << format_double(mean) << ',' << format_double(sd) << ','
          << format_double(rep.lower[j]) << ',' << format_double(rep.upper[j]) << '\n';
    }
  }
  return out.str();
}

std::string matrix_csv(const Matrix& m, const std::vector<std::string>& labels) {
  std::ostringstream out;
  out << "level";
  for (const auto& l : labels) out << ',' << csv_field(l);
  out << '\n';
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    out << csv_field(labels.at(static_cast<std::size_t>(i)));
    for (Eigen::Index j = 0; j < m.cols(); ++j) out << ',' << format_double(m(i, j));
    out << '\n';
  }
  return out.str();
}

}  // namespace ha
