#include <doctest.h>

#include <cmath>

#include <boost/math/distributions/fisher_f.hpp>

#include "ha/baselines.hpp"
#include "ha/diagnostics.hpp"
#include "ha/sim.hpp"
#include "support.hpp"

using namespace ha;

namespace {

LongData long_data(const Layout& layout) {
  LongData d;
  d.layout = layout;
  return d;
}

void push(LongData& d, std::vector<std::size_t> cell, std::vector<double> y) {
  d.cells.push_back(std::move(cell));
  d.responses.push_back(std::move(y));
}

// Complete design with `reps` rows per cell plus a few extra rows, random responses.
LongData random_complete(const Layout& layout, std::size_t reps, RngStream& rng) {
  LongData d = long_data(layout);
  const Tensor shape(layout.levels);
  std::vector<std::size_t> idx;
  for (std::size_t c = 0; c < layout.cells(); ++c) {
    shape.multi_index(c, idx);
    const std::size_t extra = rng.below(2);
    for (std::size_t k = 0; k < reps + extra; ++k) {
      std::vector<double> y(layout.responses);
      for (auto& v : y) v = rng.normal() + 0.3 * static_cast<double>(idx[0]);
      push(d, idx, y);
    }
  }
  return d;
}

double mcse(const std::vector<double>& x) { return std::sqrt(test::moments(x).var / ess(x)); }

}  // namespace

TEST_SUITE("baselines-diagnostics") {
  TEST_CASE("AOLS reproduces an exactly additive 2x2 array") {
    const Layout layout = Layout::of({2, 2});
    CellStats s = CellStats::empty(layout);
    const double mu = 1.5, a[] = {-0.7, 0.7}, b[] = {0.25, -0.25};
    for (std::size_t i = 0; i < 2; ++i) {
      for (std::size_t j = 0; j < 2; ++j) {
        const std::size_t cell[] = {i, j};
        const double y = mu + a[i] + b[j];
        for (std::size_t k = 0; k < 1 + i + 2 * j; ++k) s.add_observation(cell, std::span<const double>(&y, 1));
      }
    }
    const Tensor fit = aols_cell_means(s);
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 2; ++j) CHECK(fit.at({i, j, 0}) == doctest::Approx(mu + a[i] + b[j]).epsilon(1e-12));
  }

  TEST_CASE("AOLS beats full OLS on truly additive data and predicts empty cells") {
    RngStream rng(81, 0);
    const Tensor truth = gen_additive({5, 4, 3}, 3);
    const Tensor counts = allocate_unbalanced(600, {5, 4, 3}, rng);
    const CellStats s = simulate_dataset(truth, counts, 1.0, rng);
    CHECK(ase(aols_cell_means(s), truth) < ase(ols_cell_means_complete(s), truth));

    // an empty cell is still predicted; an empty level is rank deficient
    const Layout layout = Layout::of({2, 2});
    CellStats t = CellStats::empty(layout);
    const double y = 1.0;
    for (const auto& cell : std::vector<std::vector<std::size_t>>{{0, 0}, {1, 0}, {0, 1}}) t.add_observation(cell, std::span<const double>(&y, 1));
    CHECK(std::isfinite(aols_cell_means(t)[3]));
    CellStats u = CellStats::empty(layout);
    for (const auto& cell : std::vector<std::vector<std::size_t>>{{0, 0}, {0, 1}}) u.add_observation(cell, std::span<const double>(&y, 1));
    CHECK_THROWS_AS(aols_cell_means(u), RankDeficient);
  }

  TEST_CASE("ASB on an additive toy matches the Gaussian posterior") {
    // Pinned sigma^2 and effect precisions leave a linear Gaussian model.
    const Layout layout = Layout::of({2, 3});
    RngStream rng(82, 0);
    CellStats s = CellStats::empty(layout);
    std::vector<double> n(6, 0.0);
    for (int i = 0; i < 40; ++i) {
      const std::size_t a = rng.below(2), b = rng.below(3);
      const double y = 0.5 * static_cast<double>(a) - 0.4 * static_cast<double>(b) + rng.normal();
      const std::size_t cell[] = {a, b};
      s.add_observation(cell, std::span<const double>(&y, 1));
      n[a + 2 * b] += 1.0;
    }
    const double sigma2 = 0.9, ga = 2.0, gb = 0.5, mu0 = 0.1, tau0 = 3.0;
    HAHyper h = default_hyperparameters(s);
    h.mu0(0) = mu0;
    h.tau0_sq(0) = tau0;
    h.nu0 = 1e9;
    h.sigma0_sq = sigma2;
    h.gamma.at({0})[0] = {1e9, 1e9 / ga};
    h.gamma.at({1})[0] = {1e9, 1e9 / gb};

    // beta = (mu, a1, a2, b1, b2, b3); cell (i, j) = mu + a_i + b_j
    Matrix x = Matrix::Zero(6, 6);
    for (int i = 0; i < 2; ++i) {
      for (int j = 0; j < 3; ++j) {
        x(i + 2 * j, 0) = 1.0;
        x(i + 2 * j, 1 + i) = 1.0;
        x(i + 2 * j, 3 + j) = 1.0;
      }
    }
    Vector prior_prec(6);
    prior_prec << 1.0 / tau0, ga, ga, gb, gb, gb;
    Vector prior_h = Vector::Zero(6);
    prior_h(0) = mu0 / tau0;
    Matrix w = Matrix::Zero(6, 6);
    Vector ysum(6);
    for (int c = 0; c < 6; ++c) {
      w(c, c) = n[static_cast<std::size_t>(c)] / sigma2;
      ysum(c) = s.sums[static_cast<std::size_t>(c)] / sigma2;
    }
    const Matrix q = Matrix(prior_prec.asDiagonal()) + x.transpose() * w * x;
    const Matrix v = q.inverse();
    const Vector beta = v * (prior_h + x.transpose() * ysum);
    const Vector m_mean = x * beta;

    ChainConfig cfg;
    cfg.iterations = 21000;
    cfg.burn_in = 1000;
    cfg.thin = 1;
    cfg.seed = 83;
    const auto fits = additive_fits(s, h, cfg);
    CHECK(fits.asb.method == "asb");
    CHECK(fits.asb.model.keys.size() == 2);
    for (std::size_t c = 0; c < 6; ++c) {
      const auto col = fits.asb.column(c);
      CHECK(std::abs(test::moments(col).mean - m_mean(static_cast<Eigen::Index>(c))) < 3.0 * mcse(col));
    }
  }

  TEST_CASE("pillai: p = 1 reduces to the classical ANOVA F test") {
    // one-way, unbalanced
    const Layout layout = Layout::of({3});
    LongData d = long_data(layout);
    const std::vector<std::vector<double>> groups{{4.1, 5.0, 3.8, 4.6}, {5.9, 6.3, 5.1}, {4.9, 5.5, 6.0, 5.2, 4.7}};
    for (std::size_t g = 0; g < 3; ++g)
      for (double y : groups[g]) push(d, {g}, {y});
    double grand = 0.0, n = 0.0;
    for (const auto& g : groups)
      for (double y : g) {
        grand += y;
        n += 1.0;
      }
    grand /= n;
    double ssb = 0.0, ssw = 0.0;
    for (const auto& g : groups) {
      double m = 0.0;
      for (double y : g) m += y;
      m /= static_cast<double>(g.size());
      ssb += static_cast<double>(g.size()) * (m - grand) * (m - grand);
      for (double y : g) ssw += (y - m) * (y - m);
    }
    const double f = (ssb / 2.0) / (ssw / (n - 3.0));
    const auto rows = pillai_tests(d);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].approx_f == doctest::Approx(f).epsilon(1e-10));
    CHECK(rows[0].num_df == 2.0);
    CHECK(rows[0].den_df == n - 3.0);
    CHECK(rows[0].pillai == doctest::Approx(ssb / (ssb + ssw)).epsilon(1e-12));
    const boost::math::fisher_f_distribution<double> fd(2.0, n - 3.0);
    CHECK(rows[0].p_value == doctest::Approx(boost::math::cdf(boost::math::complement(fd, f))).epsilon(1e-10));

    // balanced two-way: sequential sums of squares equal the classical ones
    const Layout l2 = Layout::of({2, 3});
    LongData d2 = long_data(l2);
    RngStream rng(84, 0);
    Tensor cellsum(l2.levels);
    const double reps = 3.0;
    double total = 0.0, sst = 0.0;
    std::vector<double> ys;
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 3; ++j)
        for (int k = 0; k < 3; ++k) {
          const double y = static_cast<double>(i) + 0.5 * static_cast<double>(j * i) + rng.normal();
          push(d2, {i, j}, {y});
          cellsum.at({i, j}) += y;
          total += y;
          ys.push_back(y);
        }
    const double gm = total / 18.0;
    for (double y : ys) sst += (y - gm) * (y - gm);
    double ssa = 0.0, ssb2 = 0.0, sscell = 0.0;
    for (std::size_t i = 0; i < 2; ++i) {
      const double mi = (cellsum.at({i, 0}) + cellsum.at({i, 1}) + cellsum.at({i, 2})) / 9.0;
      ssa += 9.0 * (mi - gm) * (mi - gm);
    }
    for (std::size_t j = 0; j < 3; ++j) {
      const double mj = (cellsum.at({0, j}) + cellsum.at({1, j})) / 6.0;
      ssb2 += 6.0 * (mj - gm) * (mj - gm);
    }
    for (std::size_t c = 0; c < 6; ++c) sscell += reps * (cellsum[c] / reps - gm) * (cellsum[c] / reps - gm);
    const double ssab = sscell - ssa - ssb2, sse = sst - sscell;
    const auto r2 = pillai_tests(d2);
    REQUIRE(r2.size() == 3);
    CHECK(r2[0].approx_f == doctest::Approx((ssa / 1.0) / (sse / 12.0)).epsilon(1e-10));
    CHECK(r2[1].approx_f == doctest::Approx((ssb2 / 2.0) / (sse / 12.0)).epsilon(1e-10));
    CHECK(r2[2].approx_f == doctest::Approx((ssab / 2.0) / (sse / 12.0)).epsilon(1e-10));
  }

  TEST_CASE("pillai: one-way MANOVA against the textbook statistic") {
    const Layout layout = Layout::of({3}, 2);
    RngStream rng(85, 0);
    LongData d = long_data(layout);
    for (int i = 0; i < 25; ++i) {
      const std::size_t g = static_cast<std::size_t>(i % 3);
      push(d, {g}, {rng.normal() + 0.4 * static_cast<double>(g), rng.normal() - 0.2 * static_cast<double>(g)});
    }
    // H = sum n_g (m_g - m)(m_g - m)^T, E = within SSCP
    std::vector<Vector> sums(3, Vector::Zero(2));
    std::vector<double> cnt(3, 0.0);
    Vector grand = Vector::Zero(2);
    for (std::size_t i = 0; i < d.cells.size(); ++i) {
      Vector y(2);
      y << d.responses[i][0], d.responses[i][1];
      sums[d.cells[i][0]] += y;
      cnt[d.cells[i][0]] += 1.0;
      grand += y;
    }
    grand /= 25.0;
    Matrix hm = Matrix::Zero(2, 2), em = Matrix::Zero(2, 2);
    for (int g = 0; g < 3; ++g) {
      const Vector m = sums[g] / cnt[g];
      hm += cnt[g] * (m - grand) * (m - grand).transpose();
    }
    for (std::size_t i = 0; i < d.cells.size(); ++i) {
      Vector y(2);
      y << d.responses[i][0], d.responses[i][1];
      const Vector m = sums[d.cells[i][0]] / cnt[d.cells[i][0]];
      em += (y - m) * (y - m).transpose();
    }
    const double v = (hm * (hm + em).inverse()).trace();
    // s = 2, q = 2, p = 2, df_e = 22: F = (2n + s + 1)/(2m + s + 1) * V/(s - V), m = -0.5, n = 9.5
    const double f = (2 * 9.5 + 3) / (2 * -0.5 + 3) * v / (2 - v);
    const auto rows = pillai_tests(d);
    CHECK(rows[0].pillai == doctest::Approx(v).epsilon(1e-12));
    CHECK(rows[0].approx_f == doctest::Approx(f).epsilon(1e-10));
    CHECK(rows[0].num_df == 4.0);
    CHECK(rows[0].den_df == 44.0);
    CHECK(rows[0].effect == "factor1");
    CHECK(rows[0].p_value >= 0.0);
    CHECK(rows[0].p_value <= 1.0);
  }

  TEST_CASE("property: pillai numerator df = p x prod(m_d - 1) on complete layouts") {
    RngStream rng(86, 0);
    for (int trial = 0; trial < 25; ++trial) {
      Dims levels(1 + rng.below(3));
      for (auto& m : levels) m = 2 + rng.below(3);
      const std::size_t p = 2 + rng.below(2);
      const Layout layout = Layout::of(levels, p);
      const LongData d = random_complete(layout, 2, rng);
      const auto rows = pillai_tests(d);
      const auto keys = all_keys(levels.size());
      REQUIRE(rows.size() == keys.size());
      for (std::size_t k = 0; k < keys.size(); ++k) {
        double df = static_cast<double>(p);
        for (auto f : keys[k]) df *= static_cast<double>(levels[f] - 1);
        CHECK(rows[k].num_df == df);
        CHECK(rows[k].den_df > 0.0);
        CHECK(rows[k].p_value >= 0.0);
        CHECK(rows[k].p_value <= 1.0);
      }
    }
  }

  TEST_CASE("pillai: singular error SSCP and effect labels") {
    Layout layout = Layout::of({2, 2}, 2);
    layout.factor_names = {"Age", "Ethnicity"};
    LongData d = long_data(layout);
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 2; ++j) push(d, {i, j}, {1.0, 2.0});
    CHECK_THROWS(pillai_tests(d));
    CHECK(effect_label({0, 1}, layout) == "Age x Ethnicity");
  }
}
