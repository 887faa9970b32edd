#include "cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <sstream>

#include "ha/baselines.hpp"
#include "ha/chain_io.hpp"
#include "ha/diagnostics.hpp"
#include "ha/io.hpp"
#include "ha/sim.hpp"

namespace fs = std::filesystem;

namespace ha::cli {

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Manifest {
  std::string command;
  std::vector<std::string> argv;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  double seconds = 0.0;

  std::string text() const {
    std::ostringstream out;
    out << "command=" << command << '\n';
    out << "version=" << build_id() << '\n';
    out << "config_hash=" << config_hash << '\n';
    out << "seed=" << seed << '\n';
    for (std::size_t i = 0; i < argv.size(); ++i) out << "argv." << i + 1 << '=' << argv[i] << '\n';
    for (std::size_t i = 0; i < inputs.size(); ++i) out << "input." << i + 1 << '=' << inputs[i] << '\n';
    for (std::size_t i = 0; i < outputs.size(); ++i) out << "output." << i + 1 << '=' << outputs[i] << '\n';
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3f", seconds);
    out << "timing.total_seconds=" << buf << '\n';
    return out.str();
  }
};

class Outputs {
 public:
  explicit Outputs(fs::path dir) : dir_(std::move(dir)) {}
  void write(const std::string& name, const std::string& content) {
    write_file_atomic(dir_ / name, content);
    files_.push_back((dir_ / name).string());
  }
  void chain(const std::string& name, const Chain& c) {
    write_chain(c, dir_ / name);
    files_.push_back((dir_ / name).string());
    files_.push_back(metadata_path(dir_ / name).string());
  }
  const fs::path& dir() const { return dir_; }
  std::vector<std::string> files() const { return files_; }

 private:
  fs::path dir_;
  std::vector<std::string> files_;
};

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw UsageError("config: '" + key + "' expects true or false, got '" + v + "'");
}

std::size_t parse_count(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long x = 0;
  try {
    x = std::stoull(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size() || v.front() == '-') throw UsageError("config: '" + key + "' expects an integer, got '" + v + "'");
  return static_cast<std::size_t>(x);
}

double parse_real(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size()) throw UsageError("config: '" + key + "' expects a number, got '" + v + "'");
  return x;
}

std::string matrix_labels_csv(const Matrix& m, const Layout& layout, std::size_t factor) {
  std::vector<std::string> labels;
  for (std::size_t i = 0; i < layout.levels[factor]; ++i) {
    labels.push_back(factor < layout.labels.size() ? layout.labels[factor][i] : std::to_string(i + 1));
  }
  return matrix_csv(m, labels);
}

std::string estimates_csv(const Tensor& m, const Layout& layout) {
  std::ostringstream out;
  for (std::size_t f = 0; f < layout.factors(); ++f) {
    out << (f < layout.factor_names.size() ? layout.factor_names[f] : "factor" + std::to_string(f + 1)) << ',';
  }
  out << "response,estimate\n";
  const std::size_t cells = layout.cells();
  const Tensor shape(layout.levels);
  std::vector<std::size_t> idx;
  for (std::size_t r = 0; r < layout.responses; ++r) {
    for (std::size_t c = 0; c < cells; ++c) {
      shape.multi_index(c, idx);
      for (std::size_t f = 0; f < layout.factors(); ++f) {
        out << (f < layout.labels.size() ? layout.labels[f][idx[f]] : std::to_string(idx[f] + 1)) << ',';
      }
      out << (r < layout.response_names.size() ? layout.response_names[r] : "y" + std::to_string(r + 1)) << ','
          << format_double(m[c + cells * r]) << '\n';
    }
  }
  return out.str();
}

Chain pooled(const std::vector<Chain>& chains) {
  Chain all = chains.front();
  for (std::size_t k = 1; k < chains.size(); ++k) all.values.insert(all.values.end(), chains[k].values.begin(), chains[k].values.end());
  return all;
}

// ---------------------------------------------------------------------------

struct FitArgs {
  std::string data, config, out_dir, method, transform;
  std::size_t iterations = 0, burn_in = 0, thin = 0, chains = 0;
  std::uint64_t seed = 0;
  bool standardize = false;
};

int cmd_fit(const FitArgs& a, const CLI::App& sub, const std::vector<std::string>& argv, std::ostream& out,
            std::ostream& err) {
  const auto start = std::chrono::steady_clock::now();
  const KeyValues kv = read_key_values(a.config);
  CsvSchema schema;
  ChainConfig config;
  std::string method = "ha";
  std::string transform = "none";
  bool standardize = false;
  double level = 0.95;
  std::size_t lag = 10;
  for (const auto& [key, v] : kv) {
    if (key == "factors") {
      schema.factor_columns = split_list(v, ',');
    } else if (key == "responses") {
      schema.response_columns = split_list(v, ',');
    } else if (key.rfind("levels.", 0) == 0) {
      schema.levels[key.substr(7)] = split_list(v, ',');
    } else if (key == "extend_levels") {
      schema.extend_levels = parse_bool(key, v);
    } else if (key == "method") {
      method = v;
    } else if (key == "iterations") {
      config.iterations = parse_count(key, v);
    } else if (key == "burn_in") {
      config.burn_in = parse_count(key, v);
    } else if (key == "thin") {
      config.thin = parse_count(key, v);
    } else if (key == "chains") {
      config.chains = parse_count(key, v);
    } else if (key == "seed") {
      config.seed = parse_count(key, v);
    } else if (key == "transform") {
      transform = v;
    } else if (key == "standardize") {
      standardize = parse_bool(key, v);
    } else if (key == "level") {
      level = parse_real(key, v);
    } else if (key == "lag") {
      lag = parse_count(key, v);
    } else {
      throw UsageError("config: unknown key '" + key + "'");
    }
  }
  if (sub.count("--method")) method = a.method;
  if (sub.count("--iterations")) config.iterations = a.iterations;
  if (sub.count("--burn-in")) config.burn_in = a.burn_in;
  if (sub.count("--thin")) config.thin = a.thin;
  if (sub.count("--chains")) config.chains = a.chains;
  if (sub.count("--seed")) config.seed = a.seed;
  if (sub.count("--transform")) transform = a.transform;
  if (sub.count("--standardize")) standardize = a.standardize;
  const std::vector<std::string> methods{"ha", "sb", "aols", "asb", "ols"};
  if (std::find(methods.begin(), methods.end(), method) == methods.end()) throw UsageError("unknown method '" + method + "'");
  if (transform != "none" && transform != "quarter-power") throw UsageError("unknown transform '" + transform + "'");
  if (!(level > 0.0 && level < 1.0)) throw UsageError("config: level must be in (0, 1)");
  try {
    config.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }

  LongData data = read_long_csv(a.data, schema);
  if (data.responses.empty()) throw InputError(a.data + ": no data rows");
  Outputs files(a.out_dir);
  fs::create_directories(files.dir());
  if (transform == "quarter-power" || standardize) {
    TransformRecord record;
    data.responses = manova_preprocess(data.responses, {transform == "quarter-power", standardize}, record);
    std::ostringstream t;
    t << "response,quarter_power,standardize,mean,sd\n";
    for (std::size_t r = 0; r < data.layout.responses; ++r) {
      t << data.layout.response_names[r] << ',' << (record.quarter_power ? 1 : 0) << ',' << (record.standardize ? 1 : 0)
        << ',' << format_double(record.means[r]) << ',' << format_double(record.sds[r]) << '\n';
    }
    files.write("transform.csv", t.str());
  }
  const CellStats stats = to_cell_stats(data);
  const Layout& layout = stats.layout;

  Tensor estimate;
  if (method == "ols") {
    estimate = ols_cell_means(stats).means;
  } else if (method == "aols") {
    estimate = aols_cell_means(stats);
  } else {
    const HAHyper hyper = default_hyperparameters(stats);
    const ModelSpec model = method == "ha"   ? ModelSpec::full(layout.factors(), PriorKind::Hierarchical)
                            : method == "sb" ? ModelSpec::full(layout.factors(), PriorKind::Standard)
                                             : ModelSpec::additive(layout.factors(), PriorKind::Standard);
    const auto chains = run_chains(stats, hyper, config, model, method);
    for (std::size_t k = 0; k < chains.size(); ++k) {
      files.chain("chain_" + method + "_" + std::to_string(k + 1) + ".csv", chains[k]);
      files.write("diagnostics_" + method + "_" + std::to_string(k + 1) + ".csv",
                  diagnostics_csv(diagnose_chain(chains[k], std::min(lag, chains[k].draws() - 1))));
    }
    const Chain all = pooled(chains);
    files.write("posterior_summary.csv", posterior_summary_csv(all, level));
    if (all.Sigma_columns > 0) {
      const auto corr = posterior_correlation_matrices(all);
      for (std::size_t d = 0; d < corr.size(); ++d) {
        files.write("sigma_correlation_" + std::to_string(d + 1) + ".csv", matrix_labels_csv(corr[d], layout, d));
      }
    }
    estimate = all.posterior_mean_m();
  }
  files.write("estimates.csv", estimates_csv(estimate, layout));

  bool finite = true;
  for (double v : estimate.values()) finite &= std::isfinite(v);
  if (finite) {
    const Decomposition dec = anova_decompose(estimate, layout);
    for (std::size_t d = 0; d < layout.factors(); ++d) {
      try {
        const auto res = effect_level_correlations(dec, d, layout);
        files.write("effect_correlation_" + std::to_string(d + 1) + ".csv", matrix_labels_csv(res.corr, layout, d));
      } catch (const std::invalid_argument&) {
        // fewer than two coefficient columns for this factor
      }
    }
  }
  if (layout.responses >= 2) {
    try {
      std::ostringstream p;
      p << "effect,pillai,approx_f,num_df,den_df,p_value\n";
      for (const auto& row : pillai_tests(data)) {
        p << row.effect << ',' << format_double(row.pillai) << ',' << format_double(row.approx_f) << ','
          << format_double(row.num_df) << ',' << format_double(row.den_df) << ',' << format_double(row.p_value) << '\n';
      }
      files.write("pillai.csv", p.str());
    } catch (const std::exception& e) {
      err << "warning: Pillai tests skipped: " << e.what() << '\n';
    }
  }

  Manifest m;
  m.command = "fit";
  m.argv = argv;
  m.config_hash = fnv1a_hex(read_file(a.config));
  m.seed = config.seed;
  m.inputs = {a.data, a.config};
  m.outputs = files.files();
  m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_file_atomic(files.dir() / "manifest.txt", m.text());
  out << "fit (" << method << "): " << files.files().size() << " files written to " << a.out_dir << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

struct SimArgs {
  std::string config, out_dir;
  std::size_t replicates = 0;
  std::uint64_t seed = 0;
};

int cmd_simulate(const SimArgs& a, const CLI::App& sub, const std::vector<std::string>& argv, std::ostream& out) {
  const auto start = std::chrono::steady_clock::now();
  KeyValues kv = read_key_values(a.config);
  if (sub.count("--replicates")) kv["replicates"] = std::to_string(a.replicates);
  if (sub.count("--seed")) kv["seed"] = std::to_string(a.seed);
  const StudySpec spec = StudySpec::from_key_values(kv);
  const StudyReport report = run_study(spec);
  Outputs files(a.out_dir);
  files.write("study.csv", study_csv(report));
  files.write("summary.txt", study_summary(report));
  std::ostringstream t;
  t << "n,replicate,seconds\n";
  for (std::size_t j = 0; j < report.replicate_seconds.size(); ++j) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", report.replicate_seconds[j]);
    t << spec.sample_sizes[j / spec.replicates] << ',' << j % spec.replicates + 1 << ',' << buf << '\n';
  }
  files.write("timings.csv", t.str());

  Manifest m;
  m.command = "simulate";
  m.argv = argv;
  std::string canonical;
  for (const auto& [k, v] : spec.to_key_values()) canonical += k + "=" + v + "\n";
  m.config_hash = fnv1a_hex(canonical);
  m.seed = spec.seed;
  m.inputs = {a.config};
  m.outputs = files.files();
  m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_file_atomic(files.dir() / "manifest.txt", m.text());
  out << study_summary(report);
  return report.failures.empty() ? 0 : 1;
}

// ---------------------------------------------------------------------------

struct DiagArgs {
  std::vector<std::string> chains;
  std::string out_dir;
  std::size_t lag = 10;
  std::vector<std::string> columns;
};

int cmd_diagnose(const DiagArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  const auto start = std::chrono::steady_clock::now();
  std::ostringstream all;
  all << "chain,";
  bool header = false;
  std::size_t flagged = 0, total = 0;
  for (const auto& path : a.chains) {
    if (!fs::exists(path)) throw InputError("chain file not found: " + path);
    const Chain chain = read_chain(path);
    if (chain.draws() < 10) throw InputError(path + ": at least 10 draws are needed");
    if (a.lag >= chain.draws()) throw UsageError("--lag must be smaller than the number of draws");
    const auto rows = diagnose_chain(chain, a.lag, a.columns);
    std::istringstream csv(diagnostics_csv(rows));
    std::string line;
    std::getline(csv, line);
    if (!header) {
      all << line << '\n';
      header = true;
    }
    while (std::getline(csv, line)) all << fs::path(path).filename().string() << ',' << line << '\n';
    for (const auto& r : rows) {
      ++total;
      flagged += r.flagged ? 1 : 0;
      if (r.column == "sigma2" || r.column.rfind("Sigma_y[", 0) == 0) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "%s %s: ess %.1f, geweke z %.3f, lag-%zu autocorr %.3f\n",
                      fs::path(path).filename().string().c_str(), r.column.c_str(), r.ess, r.geweke, a.lag, r.autocorr);
        out << buf;
      }
    }
  }
  Outputs files(a.out_dir);
  files.write("diagnostics.csv", all.str());
  Manifest m;
  m.command = "diagnose";
  m.argv = argv;
  std::string joined;
  for (const auto& c : a.chains) joined += read_file(c);
  m.config_hash = fnv1a_hex(joined);
  m.inputs = a.chains;
  for (const auto& c : a.chains) m.inputs.push_back(metadata_path(c).string());
  m.outputs = files.files();
  m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_file_atomic(files.dir() / "manifest.txt", m.text());
  out << flagged << " of " << total << " series with |geweke z| > 2\n";
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hierarchical array priors for ANOVA and MANOVA cell means", "ha_array"};
  app.require_subcommand(1);

  FitArgs fit;
  auto* fit_cmd = app.add_subcommand("fit", "Fit cell means to a long-format CSV");
  fit_cmd->add_option("--data", fit.data, "Long-format CSV (one row per observation)")->required();
  fit_cmd->add_option("--config", fit.config, "key=value config: factors, responses, levels.<factor>, ...")->required();
  fit_cmd->add_option("--out-dir", fit.out_dir, "Output directory")->required();
  fit_cmd->add_option("--method", fit.method, "Estimator")->check(CLI::IsMember({"ha", "sb", "aols", "asb", "ols"}));
  fit_cmd->add_option("--iterations", fit.iterations);
  fit_cmd->add_option("--burn-in", fit.burn_in);
  fit_cmd->add_option("--thin", fit.thin);
  fit_cmd->add_option("--chains", fit.chains);
  fit_cmd->add_option("--seed", fit.seed);
  fit_cmd->add_option("--transform", fit.transform)->check(CLI::IsMember({"none", "quarter-power"}));
  fit_cmd->add_flag("--standardize", fit.standardize, "Center and scale each response");

  SimArgs sim;
  auto* sim_cmd = app.add_subcommand("simulate", "Run a simulation study");
  sim_cmd->add_option("--config", sim.config, "key=value study config")->required();
  sim_cmd->add_option("--out-dir", sim.out_dir, "Output directory")->required();
  sim_cmd->add_option("--replicates", sim.replicates);
  sim_cmd->add_option("--seed", sim.seed);

  DiagArgs diag;
  auto* diag_cmd = app.add_subcommand("diagnose", "ESS, Geweke z and autocorrelation for chain files");
  diag_cmd->add_option("chains", diag.chains, "Chain CSV files")->required();
  diag_cmd->add_option("--out-dir", diag.out_dir, "Output directory")->required();
  diag_cmd->add_option("--lag", diag.lag, "Autocorrelation lag");
  diag_cmd->add_option("--columns", diag.columns, "Restrict to these columns (sigma^2 always included)")->delimiter(',');

  std::string manifest_path, rerun_out;
  auto* rerun_cmd = app.add_subcommand("rerun", "Repeat a run recorded in a manifest");
  rerun_cmd->add_option("manifest", manifest_path)->required();
  rerun_cmd->add_option("--out-dir", rerun_out, "Write outputs here instead of the recorded directory");

  std::vector<std::string> argv_store{"ha_array"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& s : argv_store) argv.push_back(s.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*fit_cmd) return cmd_fit(fit, *fit_cmd, args, out, err);
    if (*sim_cmd) return cmd_simulate(sim, *sim_cmd, args, out);
    if (*diag_cmd) return cmd_diagnose(diag, args, out);
    if (*rerun_cmd) {
      const KeyValues kv = read_key_values(manifest_path);
      std::vector<std::string> again;
      for (std::size_t i = 1;; ++i) {
        const auto it = kv.find("argv." + std::to_string(i));
        if (it == kv.end()) break;
        again.push_back(it->second);
      }
      if (again.empty() || again.front() == "rerun") throw UsageError("manifest has no replayable command");
      if (!rerun_out.empty()) {
        const auto it = std::find(again.begin(), again.end(), "--out-dir");
        if (it == again.end() || it + 1 == again.end()) throw UsageError("manifest command has no --out-dir");
        *(it + 1) = rerun_out;
      }
      return run(again, out, err);
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const InputError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace ha::cli
