#include <doctest.h>

#include <filesystem>
#include <sstream>

#include "cli.hpp"
#include "ha/io.hpp"
#include "ha/random.hpp"

using namespace ha;
namespace fs = std::filesystem;

namespace {

const fs::path kData = HA_DATA_DIR;

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("ha_cli_" + name);
  fs::remove_all(dir);
  return dir;
}

struct Result {
  int code;
  std::string out, err;
};

Result run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::istringstream in(read_file(p));
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) rows.push_back(split_csv_line(line));
  return rows;
}

// Every regular file except the manifest (which records wall time).
std::map<std::string, std::string> outputs(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().filename() != "manifest.txt") files[e.path().filename().string()] = read_file(e.path());
  }
  return files;
}

std::vector<std::string> fit_args(const fs::path& out, const std::string& method = "ha") {
  return {"fit", "--data", (kData / "tiny_2x2.csv").string(), "--config", (kData / "tiny_2x2.cfg").string(),
          "--out-dir", out.string(), "--method", method};
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("fit on the bundled 2x2 data writes every declared output") {
    const fs::path dir = scratch("fit");
    const auto r = run(fit_args(dir));
    REQUIRE(r.code == 0);
    for (const char* name : {"chain_ha_1.csv", "chain_ha_1.csv.meta", "diagnostics_ha_1.csv", "posterior_summary.csv",
                             "sigma_correlation_1.csv", "sigma_correlation_2.csv", "estimates.csv",
                             "effect_correlation_1.csv", "effect_correlation_2.csv", "manifest.txt"}) {
      CHECK_MESSAGE(fs::exists(dir / name), name);
    }
    const auto chain = read_csv(dir / "chain_ha_1.csv");
    CHECK(chain.size() == 151);  // header + (200 - 50) / 1 draws
    const auto summary = read_csv(dir / "posterior_summary.csv");
    CHECK(summary[0] == std::vector<std::string>{"dose", "site", "response", "mean", "sd", "lower", "upper"});
    CHECK(summary.size() == 5);
    const KeyValues m = read_key_values(dir / "manifest.txt");
    CHECK(m.at("command") == "fit");
    CHECK(m.at("seed") == "7");
    CHECK(m.at("config_hash") == fnv1a_hex(read_file(kData / "tiny_2x2.cfg")));
    CHECK(m.count("timing.total_seconds") == 1);
    CHECK(m.count("version") == 1);

    for (const char* method : {"sb", "asb", "ols", "aols"}) {
      const fs::path d = scratch(std::string("fit_") + method);
      CHECK(run(fit_args(d, method)).code == 0);
      CHECK(fs::exists(d / "estimates.csv"));
    }
  }

  TEST_CASE("fit is byte-identical across reruns and from its manifest") {
    const fs::path a = scratch("det_a"), b = scratch("det_b"), c = scratch("det_c");
    REQUIRE(run(fit_args(a)).code == 0);
    REQUIRE(run(fit_args(b)).code == 0);
    CHECK(outputs(a) == outputs(b));
    REQUIRE(run({"rerun", (a / "manifest.txt").string(), "--out-dir", c.string()}).code == 0);
    CHECK(outputs(c) == outputs(a));

    auto more = fit_args(scratch("det_chains"));
    more.insert(more.end(), {"--chains", "2"});
    REQUIRE(run(more).code == 0);
    const fs::path d = more[6];
    CHECK(fs::exists(d / "chain_ha_2.csv"));
    CHECK(read_file(d / "chain_ha_1.csv") != read_file(d / "chain_ha_2.csv"));
    CHECK(read_file(d / "chain_ha_1.csv") == read_file(a / "chain_ha_1.csv"));
  }

  TEST_CASE("usage and input errors exit with 2") {
    CHECK(run({}).code == 2);
    CHECK(run({"fit", "--data", "x.csv"}).code == 2);
    auto bad = fit_args(scratch("bad_method"));
    bad.back() = "magic";
    CHECK(run(bad).code == 2);
    const auto missing = run({"fit", "--data", "/nonexistent/data.csv", "--config", (kData / "tiny_2x2.cfg").string(),
                              "--out-dir", scratch("missing").string()});
    CHECK(missing.code == 2);
    CHECK(missing.err.find("error:") != std::string::npos);
    CHECK(run({"diagnose", "/nonexistent/chain.csv", "--out-dir", scratch("diag_missing").string()}).code == 2);

    const fs::path cfg = scratch("bad_cfg") / "study.cfg";
    write_file_atomic(cfg, "regime = chaotic\n");
    CHECK(run({"simulate", "--config", cfg.string(), "--out-dir", scratch("bad_out").string()}).code == 2);
    write_file_atomic(cfg, "factors = dose, site\nresponses = yield\nwobble = 1\n");
    CHECK(run({"fit", "--data", (kData / "tiny_2x2.csv").string(), "--config", cfg.string(), "--out-dir",
               scratch("bad_key").string()})
              .code == 2);
    CHECK(run({"--help"}).code == 0);
  }

  TEST_CASE("simulate writes one row per replicate, method and metric") {
    const fs::path dir = scratch("sim");
    const fs::path cfg = dir / "study.cfg";
    write_file_atomic(cfg,
                      "# additive regime at desk scale\nregime = additive\ndims = 4x3x2\nsample_sizes = 60\n"
                      "replicates = 2\nmethods = ols,aols,asb,ha\niterations = 200\nburn_in = 50\nthin = 2\nseed = 3\n");
    const fs::path out = dir / "out";
    REQUIRE(run({"simulate", "--config", cfg.string(), "--out-dir", out.string()}).code == 0);
    const auto rows = read_csv(out / "study.csv");
    // metrics: ase, ase_mu, seven effect terms, coverage, width
    CHECK(rows.size() == 1 + 2 * 4 * 11);
    CHECK(fs::exists(out / "summary.txt"));
    CHECK(read_csv(out / "timings.csv").size() == 3);

    const fs::path again = dir / "again";
    REQUIRE(run({"rerun", (out / "manifest.txt").string(), "--out-dir", again.string()}).code == 0);
    CHECK(read_file(again / "study.csv") == read_file(out / "study.csv"));
    CHECK(read_file(again / "summary.txt") == read_file(out / "summary.txt"));

    const fs::path more = dir / "more";
    REQUIRE(run({"simulate", "--config", cfg.string(), "--out-dir", more.string(), "--replicates", "1"}).code == 0);
    CHECK(read_csv(more / "study.csv").size() == 1 + 4 * 11);
  }

  TEST_CASE("diagnose reports sigma^2 and flags few white-noise series") {
    const fs::path dir = scratch("diag");
    REQUIRE(run(fit_args(dir / "fit")).code == 0);
    const auto r = run({"diagnose", (dir / "fit" / "chain_ha_1.csv").string(), "--out-dir", (dir / "d").string(),
                        "--columns", "M[1:1]", "--lag", "5"});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("sigma2") != std::string::npos);
    const auto rows = read_csv(dir / "d" / "diagnostics.csv");
    REQUIRE(rows.size() == 3);
    CHECK(rows[1][1] == "M[1:1]");
    CHECK(rows[2][1] == "sigma2");
    CHECK(fs::exists(dir / "d" / "manifest.txt"));

    // hand-written chains of i.i.d. draws: |z| > 2 for at most 10% of series
    const std::string meta = read_file(dir / "fit" / "chain_ha_1.csv.meta");
    const auto header = read_csv(dir / "fit" / "chain_ha_1.csv")[0];
    RngStream rng(121, 0);
    std::vector<std::string> args{"diagnose"};
    for (int k = 0; k < 20; ++k) {
      const fs::path white = dir / "white" / ("chain_" + std::to_string(k) + ".csv");
      std::string body;
      for (std::size_t j = 0; j < header.size(); ++j) body += (j ? "," : "") + header[j];
      body += '\n';
      for (int t = 0; t < 1000; ++t) {
        for (std::size_t j = 0; j < header.size(); ++j) body += (j ? "," : "") + format_double(1.0 + 0.1 * rng.normal());
        body += '\n';
      }
      write_file_atomic(white, body);
      write_file_atomic(white.string() + ".meta", meta);
      args.push_back(white.string());
    }
    args.insert(args.end(), {"--out-dir", (dir / "wd").string()});
    REQUIRE(run(args).code == 0);
    const auto wrows = read_csv(dir / "wd" / "diagnostics.csv");
    CHECK(wrows.size() == 1 + 20 * header.size());
    std::size_t flagged = 0;
    for (std::size_t i = 1; i < wrows.size(); ++i) flagged += wrows[i].back() == "1";
    CHECK(static_cast<double>(flagged) <= 0.1 * static_cast<double>(wrows.size() - 1));
    args.insert(args.end(), {"--lag", "1000"});
    CHECK(run(args).code == 2);
  }

  TEST_CASE("NHANES-shaped MANOVA fit: correlation outputs and Pillai table") {
    const fs::path dir = scratch("nhanes");
    RngStream rng(122, 0);
    std::string csv = "Education,Ethnicity,Age,bmi,sbp,chol\n";
    const std::size_t m[] = {5, 4, 5};
    for (std::size_t a = 0; a < m[0]; ++a)
      for (std::size_t b = 0; b < m[1]; ++b)
        for (std::size_t c = 0; c < m[2]; ++c)
          for (int k = 0; k < 3; ++k) {
            csv += "e" + std::to_string(a + 1) + ",r" + std::to_string(b + 1) + ",a" + std::to_string(c + 1);
            for (int r = 0; r < 3; ++r) {
              csv += ',' + format_double(0.2 * static_cast<double>(a) - 0.1 * static_cast<double>(c * r) + rng.normal());
            }
            csv += '\n';
          }
    write_file_atomic(dir / "data.csv", csv);
    write_file_atomic(dir / "fit.cfg",
                      "factors = Education, Ethnicity, Age\nresponses = bmi, sbp, chol\niterations = 150\n"
                      "burn_in = 50\nthin = 1\nseed = 4\nstandardize = true\n");
    REQUIRE(run({"fit", "--data", (dir / "data.csv").string(), "--config", (dir / "fit.cfg").string(), "--out-dir",
                 (dir / "out").string()})
                .code == 0);
    CHECK(fs::exists(dir / "out" / "transform.csv"));
    for (std::size_t d = 0; d < 3; ++d) {
      for (const std::string kind : {"sigma_correlation_", "effect_correlation_"}) {
        const auto rows = read_csv(dir / "out" / (kind + std::to_string(d + 1) + ".csv"));
        REQUIRE(rows.size() == m[d] + 1);
        for (std::size_t i = 1; i <= m[d]; ++i) {
          REQUIRE(rows[i].size() == m[d] + 1);
          CHECK(std::stod(rows[i][i]) == doctest::Approx(1.0).epsilon(1e-12));
          for (std::size_t j = 1; j <= m[d]; ++j) {
            CHECK(std::stod(rows[i][j]) >= -1.0);
            CHECK(std::stod(rows[i][j]) <= 1.0);
          }
        }
      }
    }
    const auto pillai = read_csv(dir / "out" / "pillai.csv");
    REQUIRE(pillai.size() == 8);
    const std::vector<std::pair<std::string, std::string>> dfs{
        {"Education", "12"},          {"Ethnicity", "9"},       {"Age", "12"},
        {"Education x Ethnicity", "36"}, {"Education x Age", "48"}, {"Ethnicity x Age", "36"},
        {"Education x Ethnicity x Age", "144"}};
    for (std::size_t i = 0; i < dfs.size(); ++i) {
      CHECK(pillai[i + 1][0] == dfs[i].first);
      CHECK(pillai[i + 1][3] == dfs[i].second);
    }
    // inputs are not modified
    CHECK(read_file(dir / "data.csv") == csv);
  }
}
