#include <doctest.h>

#include <cmath>

#include "ha/diagnostics.hpp"
#include "support.hpp"

using namespace ha;

namespace {

std::vector<double> ar1(double rho, std::size_t n, RngStream& rng) {
  std::vector<double> x(n);
  double v = rng.normal() / std::sqrt(1.0 - rho * rho);
  for (auto& e : x) {
    v = rho * v + rng.normal();
    e = v;
  }
  return x;
}

// Chain holding only cell-mean columns: draws x cells.
Chain m_chain(const Layout& layout, const std::vector<std::vector<double>>& draws) {
  Chain c;
  c.layout = layout;
  const std::size_t cells = layout.cells() * layout.responses;
  for (std::size_t j = 0; j < cells; ++j) c.columns.push_back("M" + std::to_string(j));
  c.m_columns = cells;
  c.sigma_offset = c.Sigma_offset = c.gamma_offset = cells;
  for (const auto& d : draws) c.values.insert(c.values.end(), d.begin(), d.end());
  return c;
}

// Chain holding only Sigma_1 columns (one factor, no M block).
Chain sigma_chain(std::size_t m, const std::vector<Matrix>& draws) {
  Chain c;
  c.layout = Layout::of({m});
  for (std::size_t i = 0; i < m * m; ++i) c.columns.push_back("S" + std::to_string(i));
  c.Sigma_columns = m * m;
  c.gamma_offset = m * m;
  for (const auto& s : draws) {
    for (Eigen::Index i = 0; i < s.rows(); ++i)
      for (Eigen::Index j = 0; j < s.cols(); ++j) c.values.push_back(s(i, j));
  }
  return c;
}

double pearson(const Vector& x, const Vector& y) {
  const double mx = x.mean(), my = y.mean();
  double sxy = 0, sxx = 0, syy = 0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    sxy += (x(i) - mx) * (y(i) - my);
    sxx += (x(i) - mx) * (x(i) - mx);
    syy += (y(i) - my) * (y(i) - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace

TEST_SUITE("baselines-diagnostics") {
  TEST_CASE("ESS for white noise and AR(1)") {
    RngStream rng(91, 0);
    std::vector<double> w(1000);
    for (auto& v : w) v = rng.normal();
    const double e = ess(w);
    CHECK(e >= 800.0);
    CHECK(e <= 1200.0);

    const auto x = ar1(0.9, 20000, rng);
    const double target = 20000.0 * 0.1 / 1.9;
    CHECK(ess(x) == doctest::Approx(target).epsilon(0.3));
    CHECK(autocorr(x, 1) == doctest::Approx(0.9).epsilon(0.02));
    CHECK_THROWS(ess(std::vector<double>(5, 1.0)));
  }

  TEST_CASE("property: ESS clamp and finite Geweke z") {
    RngStream rng(92, 0);
    for (int trial = 0; trial < 60; ++trial) {
      const double rho = -0.9 + 1.8 * rng.uniform();
      const std::size_t n = 10 + rng.below(3000);
      const auto x = ar1(rho, n, rng);
      CHECK(ess(x) <= 1.05 * static_cast<double>(n));
      CHECK(ess(x) > 0.0);
      CHECK(std::isfinite(geweke_z(x)));
    }
  }

  TEST_CASE("Geweke z is roughly standard normal on stationary chains") {
    RngStream rng(93, 0);
    int big = 0;
    std::vector<double> zs;
    for (int trial = 0; trial < 400; ++trial) {
      const auto x = ar1(0.5, 2000, rng);
      const double z = geweke_z(x);
      zs.push_back(z);
      big += std::abs(z) > 2.0;
    }
    CHECK(big < 0.12 * 400);
    CHECK(std::abs(test::moments(zs).mean) < 0.2);
    // a drifting chain is flagged
    std::vector<double> drift(2000);
    for (std::size_t i = 0; i < drift.size(); ++i) drift[i] = 0.005 * static_cast<double>(i) + rng.normal();
    CHECK(std::abs(geweke_z(drift)) > 2.0);
  }

  TEST_CASE("constant series are handled without NaN") {
    const std::vector<double> c(50, 3.0);
    CHECK(is_constant(c));
    CHECK(ess(c) == 50.0);
    CHECK(geweke_z(c) == 0.0);
    CHECK(autocorr(c, 10) == 0.0);
    CHECK(spectral_density_zero(c) == 0.0);
    CHECK_THROWS(autocorr(c, 50));
  }

  TEST_CASE("autocorr matches the direct formula") {
    RngStream rng(94, 0);
    std::vector<double> x(37);
    for (auto& v : x) v = rng.normal();
    double m = 0.0;
    for (double v : x) m += v;
    m /= 37.0;
    double c0 = 0.0, c3 = 0.0;
    for (std::size_t t = 0; t < 37; ++t) c0 += (x[t] - m) * (x[t] - m);
    for (std::size_t t = 0; t + 3 < 37; ++t) c3 += (x[t] - m) * (x[t + 3] - m);
    CHECK(autocorr(x, 3) == doctest::Approx(c3 / c0).epsilon(1e-12));
    CHECK(autocorr(x, 0) == doctest::Approx(1.0));
  }

  TEST_CASE("type-7 quantiles") {
    CHECK(quantile({4, 1, 3, 2}, 0.5) == 2.5);
    CHECK(quantile({4, 1, 3, 2}, 0.25) == 1.75);
    CHECK(quantile({4, 1, 3, 2}, 1.0) == 4.0);
    CHECK(quantile({4, 1, 3, 2}, 0.0) == 1.0);
    CHECK(quantile({7}, 0.3) == 7.0);
  }

  TEST_CASE("interval_report: degenerate chain, normal widths, truth calibration") {
    const Layout layout = Layout::of({2});
    const Tensor truth({2, 1}, std::vector<double>{1.0, -1.0});
    const Chain exact = m_chain(layout, std::vector<std::vector<double>>(20, {1.0, -1.0}));
    auto rep = interval_report(exact, 0.95, &truth);
    CHECK(rep.coverage == 1.0);
    CHECK(rep.mean_width == 0.0);
    CHECK(std::isnan(interval_report(exact, 0.95).coverage));

    RngStream rng(95, 0);
    std::vector<std::vector<double>> draws(10000, std::vector<double>(1));
    for (auto& d : draws) d[0] = rng.normal();
    rep = interval_report(m_chain(Layout::of({1}), draws), 0.95);
    CHECK(std::abs(rep.mean_width - 3.92) < 0.1);
    CHECK(rep.lower[0] <= rep.upper[0]);

    // truth drawn from the same posterior the chain samples: coverage -> level
    const std::size_t cells = 4000, n = 2500;
    const Layout big = Layout::of({cells});
    std::vector<double> centre(cells);
    Tensor t({cells, 1});
    for (std::size_t c = 0; c < cells; ++c) {
      centre[c] = 3.0 * rng.normal();
      t[c] = centre[c] + rng.normal();
    }
    std::vector<std::vector<double>> post(n, std::vector<double>(cells));
    for (auto& d : post)
      for (std::size_t c = 0; c < cells; ++c) d[c] = centre[c] + rng.normal();
    rep = interval_report(m_chain(big, post), 0.95, &t);
    CHECK(std::abs(rep.coverage - 0.95) < 0.02);
    CHECK_THROWS(interval_report(exact, 1.5));
  }

  TEST_CASE("row correlations: identical, opposite, brute force and zero variance") {
    Matrix same(3, 4);
    same << 1, 2, 3, 5, 1, 2, 3, 5, 1, 2, 3, 5;
    CHECK((row_correlations(same).corr - Matrix::Ones(3, 3)).cwiseAbs().maxCoeff() < 1e-14);

    Matrix opp(2, 3);
    opp << 1, -2, 4, -1, 2, -4;
    CHECK(row_correlations(opp).corr(0, 1) == doctest::Approx(-1.0));

    RngStream rng(96, 0);
    const Matrix r = test::random_matrix(5, 9, rng);
    const auto res = row_correlations(r);
    for (int i = 0; i < 5; ++i) {
      CHECK(res.corr(i, i) == 1.0);
      for (int j = 0; j < 5; ++j) {
        if (i != j) CHECK(res.corr(i, j) == doctest::Approx(pearson(r.row(i).transpose(), r.row(j).transpose())).epsilon(1e-12));
      }
    }
    CHECK(res.zero_variance.empty());

    Matrix flat = r;
    flat.row(2).setConstant(0.7);
    const auto fz = row_correlations(flat);
    CHECK(fz.zero_variance == std::vector<std::size_t>{2});
    CHECK(fz.corr(2, 0) == 0.0);
    CHECK(fz.corr(2, 2) == 1.0);
    CHECK_THROWS(row_correlations(Matrix::Ones(3, 1)));
  }

  TEST_CASE("effect_level_correlations stacks main and two-way coefficients") {
    RngStream rng(97, 0);
    const Layout layout = Layout::of({3, 2, 2}, 2);
    const auto dec = anova_decompose(test::random_tensor(layout.cell_dims(), rng), layout);
    // factor 2 (index 1): columns from {1} (2 responses), {0,1} (3 x 2), {1,2} (2 x 2)
    Matrix stacked(2, 2 + 6 + 4);
    Eigen::Index col = 0;
    for (const EffectKey& key : {EffectKey{1}, EffectKey{0, 1}, EffectKey{1, 2}}) {
      const Tensor& e = dec.effects.at(key);
      const std::size_t mode = key[0] == 1 ? 0 : 1;
      const Matrix u = matricize(e, mode);
      stacked.middleCols(col, u.cols()) = u;
      col += u.cols();
    }
    const auto res = effect_level_correlations(dec, 1, layout);
    CHECK(res.corr(0, 1) == doctest::Approx(pearson(stacked.row(0).transpose(), stacked.row(1).transpose())).epsilon(1e-12));

    // rescaling every coefficient by a common positive constant changes nothing
    Decomposition scaled = dec;
    for (auto& [key, e] : scaled.effects) e *= 4.0;
    CHECK(effect_level_correlations(scaled, 0, layout).corr == effect_level_correlations(dec, 0, layout).corr);
    for (auto& [key, e] : scaled.effects) e *= 0.37;
    CHECK(test::rel_diff(effect_level_correlations(scaled, 0, layout).corr, effect_level_correlations(dec, 0, layout).corr) <
          1e-14);
  }

  TEST_CASE("posterior correlation matrices") {
    RngStream rng(98, 0);
    std::vector<Matrix> diag;
    for (int i = 0; i < 5; ++i) diag.push_back(Vector::Constant(3, 1.0 + i).asDiagonal());
    CHECK(posterior_correlation_matrices(sigma_chain(3, diag))[0] == Matrix::Identity(3, 3));

    const Matrix one = test::random_spd(3, rng);
    const Matrix c1 = posterior_correlation_matrices(sigma_chain(3, {one}))[0];
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) CHECK(c1(i, j) == doctest::Approx(one(i, j) / std::sqrt(one(i, i) * one(j, j))));

    std::vector<Matrix> draws;
    Matrix avg = Matrix::Zero(3, 3);
    for (int t = 0; t < 40; ++t) {
      draws.push_back(test::random_spd(3, rng));
      const Matrix& s = draws.back();
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) avg(i, j) += s(i, j) / std::sqrt(s(i, i) * s(j, j)) / 40.0;
    }
    const Matrix got = posterior_correlation_matrices(sigma_chain(3, draws))[0];
    CHECK(test::rel_diff(got, avg) < 1e-14);
    CHECK(got.cwiseAbs().maxCoeff() <= 1.0);
  }

  TEST_CASE("diagnose_chain keeps sigma columns and flags drift") {
    RngStream rng(99, 0);
    Chain c = m_chain(Layout::of({2}), {});
    c.columns.push_back("sigma2");
    c.sigma_offset = 2;
    c.sigma_columns = 1;
    c.Sigma_offset = c.gamma_offset = 3;
    for (int t = 0; t < 1000; ++t) {
      c.values.push_back(rng.normal());
      c.values.push_back(0.01 * t + rng.normal());
      c.values.push_back(1.0);
    }
    const auto all = diagnose_chain(c, 10);
    REQUIRE(all.size() == 3);
    CHECK_FALSE(all[0].flagged);
    CHECK(all[1].flagged);
    CHECK(all[2].constant);
    CHECK(all[2].ess == 1000.0);
    const auto some = diagnose_chain(c, 10, {"M1"});
    REQUIRE(some.size() == 2);
    CHECK(some[0].column == "M1");
    CHECK(some[1].column == "sigma2");
    CHECK_THROWS(diagnose_chain(c, 10, {"nope"}));
    const std::string csv = diagnostics_csv(all);
    CHECK(csv.rfind("column,mean,sd,ess,geweke_z,autocorr,constant,geweke_flag\n", 0) == 0);
    CHECK(csv.find("\nsigma2,1,0,1000,0,0,1,0\n") != std::string::npos);
  }

  TEST_CASE("posterior summary and matrix csv") {
    Layout layout = Layout::of({2});
    layout.factor_names = {"dose"};
    layout.labels = {{"low", "high"}};
    layout.response_names = {"yield"};
    const Chain c = m_chain(layout, {{1.0, 2.0}, {3.0, 4.0}, {5.0, 6.0}});
    const std::string csv = posterior_summary_csv(c, 0.5);
    CHECK(csv.rfind("dose,response,mean,sd,lower,upper\nlow,yield,3,2,2,4\n", 0) == 0);
    CHECK(matrix_csv(Matrix::Identity(2, 2), {"a", "b,c"}) == "level,a,\"b,c\"\na,1,0\n\"b,c\",0,1\n");
  }
}
