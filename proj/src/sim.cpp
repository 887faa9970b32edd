#include "ha/sim.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <limits>
#include <numeric>
#include <sstream>
#include <thread>

#include "ha/baselines.hpp"
#include "ha/diagnostics.hpp"

namespace ha {

std::string regime_name(Regime r) {
  switch (r) {
    case Regime::OrderConsistent: return "order-consistent";
    case Regime::OrderInconsistent: return "order-inconsistent";
    case Regime::SbGenerated: return "sb-generated";
    case Regime::Additive: return "additive";
  }
  return "unknown";
}

Regime parse_regime(const std::string& s) {
  for (auto r : {Regime::OrderConsistent, Regime::OrderInconsistent, Regime::SbGenerated, Regime::Additive}) {
    if (regime_name(r) == s) return r;
  }
  throw InputError("unknown regime '" + s +
                   "' (expected order-consistent, order-inconsistent, sb-generated or additive)");
}

const std::map<EffectKey, double, KeyOrder>& order_consistent_targets() {
  static const std::map<EffectKey, double, KeyOrder> targets{
      {{0}, 5.267},    {{1}, 0.012},    {{2}, 0.004},      {{0, 1}, 1.365},
      {{0, 2}, 1.312}, {{1, 2}, 0.384}, {{0, 1, 2}, 0.474},
  };
  return targets;
}

const std::vector<double>& additive_targets() {
  static const std::vector<double> targets{3.0, 1.3, 0.3};
  return targets;
}

namespace {

double bin_centre(std::size_t i, std::size_t m) {
  return -1.0 + (2.0 * static_cast<double>(i) + 1.0) / static_cast<double>(m);
}

// Exponent vectors of every monomial of total degree <= 3 in K variables.
std::vector<std::vector<int>> cubic_monomials(std::size_t k) {
  std::vector<std::vector<int>> out;
  std::vector<int> e(k, 0);
  auto rec = [&](auto&& self, std::size_t var, int left) -> void {
    if (var == k) {
      out.push_back(e);
      return;
    }
    for (int p = 0; p <= left; ++p) {
      e[var] = p;
      self(self, var + 1, left - p);
    }
    e[var] = 0;
  };
  rec(rec, 0, 3);
  return out;
}

Tensor assemble(const Decomposition& dec, const Layout& layout) { return cell_means(dec, layout); }

std::vector<std::size_t> random_permutation(std::size_t m, RngStream& rng) {
  std::vector<std::size_t> p(m);
  std::iota(p.begin(), p.end(), 0);
  for (std::size_t i = m; i > 1; --i) std::swap(p[i - 1], p[rng.below(i)]);
  return p;
}

Layout truth_layout(const Dims& dims) { return Layout::of(dims, 1); }

}  // namespace

Tensor gen_order_consistent(const Dims& dims, std::uint64_t seed, bool calibrated) {
  if (calibrated && dims != Dims{15, 7, 3}) throw std::invalid_argument("calibrated mode requires dims 15x7x3");
  const Layout layout = truth_layout(dims);
  const auto monomials = cubic_monomials(dims.size());
  const Tensor shape(dims);
  std::vector<std::size_t> idx;
  for (std::uint64_t attempt = 0; attempt < 100; ++attempt) {
    RngStream rng(seed, attempt);
    std::vector<double> coef(monomials.size());
    for (auto& c : coef) c = rng.normal();
    Tensor m(layout.cell_dims());
    for (std::size_t c = 0; c < layout.cells(); ++c) {
      shape.multi_index(c, idx);
      double v = 0.0;
      for (std::size_t t = 0; t < monomials.size(); ++t) {
        double term = coef[t];
        for (std::size_t d = 0; d < dims.size(); ++d) term *= std::pow(bin_centre(idx[d], dims[d]), monomials[t][d]);
        v += term;
      }
      m[c] = v;
    }
    if (!calibrated) return m;
    Decomposition dec = anova_decompose(m, layout);
    bool degenerate = false;
    for (const auto& [key, target] : order_consistent_targets()) {
      const double mag = effect_magnitude(dec, key, layout);
      if (!(mag > 1e-10)) {
        degenerate = true;
        break;
      }
      dec.effects.at(key) *= std::sqrt(target / mag);
    }
    if (degenerate) continue;
    dec.mu.setZero();
    return assemble(dec, layout);
  }
  throw std::runtime_error("gen_order_consistent: no usable polynomial after 100 draws");
}

Tensor reference_means() {
  static const Tensor m = gen_order_consistent({15, 7, 3}, kReferenceSeed, true);
  return m;
}

Decomposition permute_effects(const Decomposition& dec, const Layout& layout,
                              const std::map<EffectKey, std::vector<std::vector<std::size_t>>, KeyOrder>& perms) {
  Decomposition out = dec;
  for (const auto& [key, modes] : perms) {
    const Tensor& e = dec.effects.at(key);
    if (modes.size() != key.size()) throw std::invalid_argument("permute_effects: one permutation per mode required");
    Tensor& target = out.effects.at(key);
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < e.size(); ++i) {
      e.multi_index(i, idx);
      for (std::size_t d = 0; d < key.size(); ++d) idx[d] = modes[d].at(idx[d]);
      target.at(idx) = e[i];
    }
  }
  (void)layout;
  return out;
}

Tensor gen_order_inconsistent(const Tensor& m, std::uint64_t seed) {
  Dims dims(m.dims().begin(), m.dims().end() - 1);
  const Layout layout = Layout::of(dims, m.dims().back());
  const Decomposition dec = anova_decompose(m, layout);
  RngStream rng(seed, 0);
  std::map<EffectKey, std::vector<std::vector<std::size_t>>, KeyOrder> perms;
  for (const auto& [key, e] : dec.effects) {
    auto& modes = perms[key];
    for (auto f : key) modes.push_back(random_permutation(layout.levels[f], rng));
  }
  return assemble(permute_effects(dec, layout, perms), layout);
}

Tensor gen_sb_prior(const Dims& dims, double nu, double tau_sq, std::uint64_t seed) {
  if (!(nu > 0.0) || !(tau_sq > 0.0)) throw std::invalid_argument("gen_sb_prior: nu and tau_sq must be positive");
  const Layout layout = truth_layout(dims);
  RngStream rng(seed, 0);
  Decomposition dec = Decomposition::zeros(layout, all_keys(dims.size()));
  std::vector<double> gammas;
  for (std::size_t k = 0; k < dec.effects.size(); ++k) gammas.push_back(rng.gamma(0.5 * nu, 0.5 * tau_sq));
  std::size_t k = 0;
  for (auto& [key, e] : dec.effects) {
    const double sd = 1.0 / std::sqrt(gammas[k++]);
    for (auto& v : e.values()) v = sd * rng.normal();
  }
  return assemble(dec, layout);
}

Tensor gen_additive(const Dims& dims, std::uint64_t seed) {
  if (dims.size() != 3) throw std::invalid_argument("gen_additive: three factors required");
  const Layout layout = truth_layout(dims);
  RngStream rng(seed, 0);
  Decomposition dec = Decomposition::zeros(layout, main_keys(3));
  for (std::size_t d = 0; d < 3; ++d) {
    const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    Tensor& e = dec.effects.at({d});
    for (std::size_t i = 0; i < dims[d]; ++i) e[i] = sign * bin_centre(i, dims[d]);
    const double mag = effect_magnitude(dec, {d}, layout);
    if (!(mag > 0.0)) throw std::invalid_argument("gen_additive: every factor needs at least two levels");
    e *= std::sqrt(additive_targets()[d] / mag);
  }
  return assemble(dec, layout);
}

Tensor allocate_unbalanced(std::size_t total, const Dims& dims, RngStream& rng) {
  const std::size_t cells = product(dims);
  if (total < cells) {
    throw std::invalid_argument("allocate_unbalanced: N = " + std::to_string(total) + " is below the cell count " +
                                std::to_string(cells));
  }
  Tensor counts(dims, 1.0);
  for (std::size_t i = cells; i < total; ++i) counts[rng.below(cells)] += 1.0;
  return counts;
}

CellStats simulate_dataset(const Tensor& m, const Tensor& counts, double sigma, RngStream& rng) {
  Dims dims(m.dims().begin(), m.dims().end() - 1);
  if (dims != counts.dims()) throw DimensionError("simulate_dataset: counts do not match the means array");
  const Layout layout = Layout::of(dims, m.dims().back());
  CellStats stats = CellStats::empty(layout);
  const std::size_t cells = layout.cells();
  std::vector<std::size_t> idx;
  std::vector<double> y(layout.responses);
  for (std::size_t c = 0; c < cells; ++c) {
    counts.multi_index(c, idx);
    const auto n = static_cast<std::size_t>(counts[c]);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t r = 0; r < layout.responses; ++r) y[r] = m[c + cells * r] + sigma * rng.normal();
      stats.add_observation(idx, y);
    }
  }
  return stats;
}

// ---------------------------------------------------------------------------
// Study spec

const std::vector<std::string>& known_methods() {
  static const std::vector<std::string> methods{"ols", "ha", "sb", "aols", "asb"};
  return methods;
}

namespace {

std::size_t parse_size(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(value, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != value.size() || value.front() == '-') {
    throw InputError("study config: '" + key + "' expects a non-negative integer, got '" + value + "'");
  }
  return static_cast<std::size_t>(v);
}

double parse_real(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(value, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != value.size()) throw InputError("study config: '" + key + "' expects a number, got '" + value + "'");
  return v;
}

std::vector<std::size_t> parse_sizes(const std::string& key, const std::string& value, char sep) {
  std::vector<std::size_t> out;
  for (const auto& item : split_list(value, sep)) out.push_back(parse_size(key, item));
  if (out.empty()) throw InputError("study config: '" + key + "' is empty");
  return out;
}

template <typename T>
std::string join(const std::vector<T>& v, const std::string& sep) {
  std::ostringstream out;
  for (std::size_t i = 0; i < v.size(); ++i) out << (i ? sep : "") << v[i];
  return out.str();
}

}  // namespace

StudySpec StudySpec::from_key_values(const KeyValues& kv) {
  StudySpec s;
  for (const auto& [key, value] : kv) {
    if (key == "regime") {
      s.regime = parse_regime(value);
    } else if (key == "dims") {
      s.dims = parse_sizes(key, value, value.find('x') != std::string::npos ? 'x' : ',');
    } else if (key == "sample_sizes") {
      s.sample_sizes = parse_sizes(key, value, ',');
    } else if (key == "replicates") {
      s.replicates = parse_size(key, value);
    } else if (key == "methods") {
      s.methods = split_list(value, ',');
    } else if (key == "seed") {
      s.seed = parse_size(key, value);
    } else if (key == "iterations") {
      s.iterations = parse_size(key, value);
    } else if (key == "burn_in") {
      s.burn_in = parse_size(key, value);
    } else if (key == "thin") {
      s.thin = parse_size(key, value);
    } else if (key == "level") {
      s.level = parse_real(key, value);
    } else if (key == "sigma") {
      s.sigma = parse_real(key, value);
    } else if (key == "sb_nu") {
      s.sb_nu = parse_real(key, value);
    } else if (key == "sb_tau_sq") {
      s.sb_tau_sq = parse_real(key, value);
    } else {
      throw InputError("study config: unknown key '" + key + "'");
    }
  }
  s.validate();
  return s;
}

KeyValues StudySpec::to_key_values() const {
  KeyValues kv;
  kv["regime"] = regime_name(regime);
  kv["dims"] = join(dims, "x");
  kv["sample_sizes"] = join(sample_sizes, ",");
  kv["replicates"] = std::to_string(replicates);
  kv["methods"] = join(methods, ",");
  kv["seed"] = std::to_string(seed);
  kv["iterations"] = std::to_string(iterations);
  kv["burn_in"] = std::to_string(burn_in);
  kv["thin"] = std::to_string(thin);
  kv["level"] = format_double(level);
  kv["sigma"] = format_double(sigma);
  kv["sb_nu"] = format_double(sb_nu);
  kv["sb_tau_sq"] = format_double(sb_tau_sq);
  return kv;
}

void StudySpec::validate() const {
  if (replicates < 1) throw InputError("study config: replicates must be at least 1");
  if (dims.empty()) throw InputError("study config: dims is empty");
  for (auto m : dims) {
    if (m < 2) throw InputError("study config: every factor needs at least two levels");
  }
  if ((regime == Regime::OrderConsistent || regime == Regime::OrderInconsistent || regime == Regime::Additive) &&
      dims.size() != 3) {
    throw InputError("study config: regime " + regime_name(regime) + " needs three factors");
  }
  const std::size_t cells = product(dims);
  for (auto n : sample_sizes) {
    if (n < cells) throw InputError("study config: sample size " + std::to_string(n) + " is below the cell count");
  }
  if (methods.empty()) throw InputError("study config: no methods");
  for (const auto& m : methods) {
    if (std::find(known_methods().begin(), known_methods().end(), m) == known_methods().end()) {
      throw InputError("study config: unknown method '" + m + "'");
    }
  }
  if (iterations == 0 || burn_in >= iterations || thin < 1) {
    throw InputError("study config: need iterations > burn_in and thin >= 1");
  }
  if (!(level > 0.0 && level < 1.0)) throw InputError("study config: level must be in (0, 1)");
  if (!(sigma >= 0.0)) throw InputError("study config: sigma must be non-negative");
  if (!(sb_nu > 0.0) || !(sb_tau_sq > 0.0)) throw InputError("study config: sb_nu and sb_tau_sq must be positive");
}

// ---------------------------------------------------------------------------
// Study driver

namespace {

std::vector<std::string> metric_names(std::size_t factors) {
  std::vector<std::string> out{"ase", "ase_mu"};
  for (const auto& key : all_keys(factors)) out.push_back("ase_" + key_name(key));
  out.push_back("coverage");
  out.push_back("width");
  return out;
}

// ASE of the whole array and of each term of the sum-to-zero decomposition;
// the terms add up to the whole.
std::vector<double> ase_breakdown(const Tensor& estimate, const Tensor& truth, const Layout& layout) {
  std::vector<double> out{ase(estimate, truth)};
  const Decomposition diff = anova_decompose(estimate - truth, layout);
  out.push_back(diff.mu.squaredNorm());
  for (const auto& [key, e] : diff.effects) out.push_back(effect_magnitude(diff, key, layout));
  return out;
}

Tensor truth_for(const StudySpec& spec, std::uint64_t job_seed) {
  switch (spec.regime) {
    case Regime::OrderConsistent:
      return spec.dims == Dims{15, 7, 3} ? reference_means() : gen_order_consistent(spec.dims, kReferenceSeed, false);
    case Regime::OrderInconsistent: {
      const Tensor base =
          spec.dims == Dims{15, 7, 3} ? reference_means() : gen_order_consistent(spec.dims, kReferenceSeed, false);
      return gen_order_inconsistent(base, spec.seed);
    }
    case Regime::SbGenerated: return gen_sb_prior(spec.dims, spec.sb_nu, spec.sb_tau_sq, job_seed);
    case Regime::Additive: return gen_additive(spec.dims, spec.seed);
  }
  throw std::logic_error("unknown regime");
}

struct JobResult {
  std::vector<StudyRow> rows;
  std::vector<std::string> failures;
  double seconds = 0.0;
};

JobResult run_job(const StudySpec& spec, std::size_t n_index, std::size_t rep, const std::vector<std::string>& metrics) {
  JobResult out;
  const auto start = std::chrono::steady_clock::now();
  const std::size_t n = spec.sample_sizes[n_index];
  const std::uint64_t job = n_index * spec.replicates + rep;
  const Layout layout = Layout::of(spec.dims, 1);
  const std::string regime = regime_name(spec.regime);
  const double nan = std::numeric_limits<double>::quiet_NaN();

  auto emit = [&](const std::string& method, const std::vector<double>& values) {
    for (std::size_t i = 0; i < metrics.size(); ++i) out.rows.push_back({regime, n, rep + 1, method, metrics[i], values[i]});
  };
  auto fail_all = [&](const std::string& what) {
    out.failures.push_back(regime + " n=" + std::to_string(n) + " replicate " + std::to_string(rep + 1) + ": " + what);
    for (const auto& method : spec.methods) emit(method, std::vector<double>(metrics.size(), nan));
  };

  RngStream data_rng = RngStream(spec.seed, 0).split(job);
  Tensor truth;
  CellStats stats;
  HAHyper hyper;
  try {
    truth = truth_for(spec, RngStream(spec.seed, 1).split(job).next_u64());
    const Tensor counts = allocate_unbalanced(n, spec.dims, data_rng);
    stats = simulate_dataset(truth, counts, spec.sigma, data_rng);
    hyper = default_hyperparameters(stats);
  } catch (const std::exception& e) {
    fail_all(e.what());
    return out;
  }

  ChainConfig config;
  config.iterations = spec.iterations;
  config.burn_in = spec.burn_in;
  config.thin = spec.thin;
  config.seed = spec.seed;
  config.record = {false, false, false};

  for (std::size_t k = 0; k < spec.methods.size(); ++k) {
    const std::string& method = spec.methods[k];
    const std::uint64_t stream = (job + 1) * 16 + k;
    try {
      std::vector<double> values;
      Tensor estimate;
      double coverage = nan;
      double width = nan;
      if (method == "ols") {
        estimate = ols_cell_means_complete(stats);
      } else if (method == "aols") {
        estimate = aols_cell_means(stats);
      } else {
        const ModelSpec model = method == "ha"   ? ModelSpec::full(layout.factors(), PriorKind::Hierarchical)
                                : method == "sb" ? ModelSpec::full(layout.factors(), PriorKind::Standard)
                                                 : ModelSpec::additive(layout.factors(), PriorKind::Standard);
        const Chain chain = run_chain(stats, hyper, config, model, stream, method);
        estimate = chain.posterior_mean_m();
        const auto rep_i = interval_report(chain, spec.level, &truth);
        coverage = rep_i.coverage;
        width = rep_i.mean_width;
      }
      values = ase_breakdown(estimate, truth, layout);
      values.push_back(coverage);
      values.push_back(width);
      emit(method, values);
    } catch (const std::exception& e) {
      out.failures.push_back(regime + " n=" + std::to_string(n) + " replicate " + std::to_string(rep + 1) + " " +
                             method + ": " + e.what());
      emit(method, std::vector<double>(metrics.size(), nan));
    }
  }
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

}  // namespace

StudyReport run_study(const StudySpec& spec) {
  spec.validate();
  StudyReport report;
  report.spec = spec;
  report.metrics = metric_names(spec.dims.size());
  const std::size_t jobs = spec.sample_sizes.size() * spec.replicates;
  std::vector<JobResult> results(jobs);
  const std::size_t workers = std::min(worker_threads(), jobs);
  auto work = [&](std::size_t first) {
    for (std::size_t j = first; j < jobs; j += workers) {
      results[j] = run_job(spec, j / spec.replicates, j % spec.replicates, report.metrics);
    }
  };
  if (workers <= 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  for (auto& r : results) {
    report.rows.insert(report.rows.end(), r.rows.begin(), r.rows.end());
    report.failures.insert(report.failures.end(), r.failures.begin(), r.failures.end());
    report.replicate_seconds.push_back(r.seconds);
  }
  return report;
}

std::vector<double> StudyReport::values(const std::string& method, std::size_t n, const std::string& metric) const {
  std::vector<double> out;
  for (const auto& r : rows) {
    if (r.method == method && r.n == n && r.metric == metric) out.push_back(r.value);
  }
  return out;
}

double StudyReport::mean(const std::string& method, std::size_t n, const std::string& metric) const {
  const auto v = values(method, n, metric);
  double s = 0.0;
  std::size_t k = 0;
  for (double x : v) {
    if (std::isfinite(x)) {
      s += x;
      ++k;
    }
  }
  return k ? s / static_cast<double>(k) : std::numeric_limits<double>::quiet_NaN();
}

double StudyReport::fraction_less(const std::string& a, const std::string& b, std::size_t n,
                                  const std::string& metric) const {
  const auto va = values(a, n, metric);
  const auto vb = values(b, n, metric);
  if (va.empty() || va.size() != vb.size()) return std::numeric_limits<double>::quiet_NaN();
  std::size_t wins = 0;
  for (std::size_t i = 0; i < va.size(); ++i) wins += va[i] < vb[i] ? 1 : 0;
  return static_cast<double>(wins) / static_cast<double>(va.size());
}

std::string study_csv(const StudyReport& report) {
  std::string out = "regime,n,replicate,method,metric,value\n";
  for (const auto& r : report.rows) {
    out += r.regime + ',' + std::to_string(r.n) + ',' + std::to_string(r.replicate) + ',' + r.method + ',' + r.metric +
           ',' + format_double(r.value) + '\n';
  }
  return out;
}

std::string study_summary(const StudyReport& report) {
  const auto& spec = report.spec;
  std::ostringstream out;
  out << "regime: " << regime_name(spec.regime) << "\n";
  out << "replicates: " << spec.replicates << "  iterations: " << spec.iterations << "  burn_in: " << spec.burn_in
      << "  thin: " << spec.thin << "  seed: " << spec.seed << "\n\n";
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-8s %-6s %12s %10s %10s\n", "n", "method", "mean_ase", "coverage", "width");
  out << buf;
  for (auto n : spec.sample_sizes) {
    for (const auto& m : spec.methods) {
      std::snprintf(buf, sizeof buf, "%-8zu %-6s %12.6f %10.4f %10.4f\n", n, m.c_str(), report.mean(m, n, "ase"),
                    report.mean(m, n, "coverage"), report.mean(m, n, "width"));
      out << buf;
    }
  }
  auto has = [&](const std::string& m) { return std::find(spec.methods.begin(), spec.methods.end(), m) != spec.methods.end(); };
  const std::vector<std::pair<std::string, std::string>> pairs{{"ha", "sb"}, {"sb", "ols"}, {"ha", "ols"},
                                                               {"aols", "ha"}, {"asb", "ha"}};
  out << "\nfraction of replicates with lower ASE\n";
  for (auto n : spec.sample_sizes) {
    for (const auto& [a, b] : pairs) {
      if (!has(a) || !has(b)) continue;
      std::snprintf(buf, sizeof buf, "  n=%-6zu %s < %s: %.3f\n", n, a.c_str(), b.c_str(),
                    report.fraction_less(a, b, n, "ase"));
      out << buf;
    }
  }
  out << "\nmean-ASE ratios\n";
  for (auto n : spec.sample_sizes) {
    for (const auto& b : {"ha", "ols"}) {
      if (!has("sb") || !has(b)) continue;
      std::snprintf(buf, sizeof buf, "  n=%-6zu sb/%s: %.4f\n", n, b, report.mean("sb", n, "ase") / report.mean(b, n, "ase"));
      out << buf;
    }
  }
  out << "\nfailures: " << report.failures.size() << "\n";
  for (const auto& f : report.failures) out << "  " << f << "\n";
  return out.str();
}

}  // namespace ha
