#include "ha/chain_io.hpp"

#include <charconv>
#include <limits>
#include <sstream>

namespace ha {

std::string prior_name(PriorKind prior) { return prior == PriorKind::Hierarchical ? "hierarchical" : "standard"; }

std::string chain_csv(const Chain& chain) {
  std::string out;
  for (std::size_t j = 0; j < chain.columns.size(); ++j) {
    if (j) out += ',';
    out += chain.columns[j];
  }
  out += '\n';
  const std::size_t cols = chain.columns.size();
  for (std::size_t i = 0; i < chain.draws(); ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      if (j) out += ',';
      out += format_double(chain.at(i, j));
    }
    out += '\n';
  }
  return out;
}

namespace {

template <typename T>
std::string join(const std::vector<T>& v, char sep) {
  std::ostringstream out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out << sep;
    out << v[i];
  }
  return out.str();
}

std::vector<std::size_t> parse_sizes(const std::string& s, const std::string& what) {
  std::vector<std::size_t> out;
  for (const auto& item : split_list(s, ',')) {
    try {
      std::size_t pos = 0;
      out.push_back(std::stoull(item, &pos));
      if (pos != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw InputError("chain metadata: bad value '" + item + "' for " + what);
    }
  }
  return out;
}

const std::string& need(const KeyValues& kv, const std::string& key) {
  const auto it = kv.find(key);
  if (it == kv.end()) throw InputError("chain metadata: missing '" + key + "'");
  return it->second;
}

std::size_t need_size(const KeyValues& kv, const std::string& key) {
  const auto v = parse_sizes(need(kv, key), key);
  if (v.size() != 1) throw InputError("chain metadata: '" + key + "' must be one integer");
  return v[0];
}

}  // namespace

std::string chain_metadata(const Chain& chain) {
  const Layout& l = chain.layout;
  std::ostringstream out;
  out << "format=ha-chain-1\n";
  out << "method=" << chain.method << '\n';
  out << "build_id=" << chain.build_id << '\n';
  out << "seed=" << chain.config.seed << '\n';
  out << "stream=" << chain.stream << '\n';
  out << "iterations=" << chain.config.iterations << '\n';
  out << "burn_in=" << chain.config.burn_in << '\n';
  out << "thin=" << chain.config.thin << '\n';
  out << "draws=" << chain.draws() << '\n';
  out << "prior=" << prior_name(chain.model.prior) << '\n';
  std::vector<std::string> keys;
  for (const auto& k : chain.model.keys) keys.push_back(key_name(k));
  out << "keys=" << join(keys, ',') << '\n';
  out << "levels=" << join(l.levels, ',') << '\n';
  out << "responses=" << l.responses << '\n';
  if (!l.factor_names.empty()) out << "factor_names=" << join(l.factor_names, ',') << '\n';
  if (!l.response_names.empty()) out << "response_names=" << join(l.response_names, ',') << '\n';
  for (std::size_t f = 0; f < l.labels.size(); ++f) out << "labels." << f + 1 << '=' << join(l.labels[f], ',') << '\n';
  out << "columns.m=" << chain.m_columns << '\n';
  out << "columns.sigma=" << chain.sigma_offset << ',' << chain.sigma_columns << '\n';
  out << "columns.Sigma=" << chain.Sigma_offset << ',' << chain.Sigma_columns << '\n';
  out << "columns.gamma=" << chain.gamma_offset << ',' << chain.gamma_columns << '\n';
  return out.str();
}

std::filesystem::path metadata_path(const std::filesystem::path& chain_file) {
  auto p = chain_file;
  p += ".meta";
  return p;
}

void write_chain(const Chain& chain, const std::filesystem::path& path) {
  write_file_atomic(path, chain_csv(chain));
  write_file_atomic(metadata_path(path), chain_metadata(chain));
}

Chain read_chain(const std::filesystem::path& path) {
  const KeyValues kv = read_key_values(metadata_path(path));
  if (need(kv, "format") != "ha-chain-1") throw InputError("chain metadata: unknown format");
  Chain chain;
  chain.method = need(kv, "method");
  chain.build_id = need(kv, "build_id");
  chain.config.seed = need_size(kv, "seed");
  chain.stream = need_size(kv, "stream");
  chain.config.iterations = need_size(kv, "iterations");
  chain.config.burn_in = need_size(kv, "burn_in");
  chain.config.thin = need_size(kv, "thin");
  const std::string prior = need(kv, "prior");
  if (prior != "hierarchical" && prior != "standard") throw InputError("chain metadata: unknown prior '" + prior + "'");
  chain.model.prior = prior == "hierarchical" ? PriorKind::Hierarchical : PriorKind::Standard;
  for (const auto& name : split_list(need(kv, "keys"), ',')) {
    EffectKey key;
    std::string spaced = name;
    for (auto& ch : spaced) {
      if (ch == '.') ch = ',';
    }
    for (auto f : parse_sizes(spaced, "keys")) {
      if (f == 0) throw InputError("chain metadata: factor indices are 1-based");
      key.push_back(f - 1);
    }
    chain.model.keys.push_back(std::move(key));
  }
  Layout& l = chain.layout;
  l.levels = parse_sizes(need(kv, "levels"), "levels");
  l.responses = need_size(kv, "responses");
  if (auto it = kv.find("factor_names"); it != kv.end()) l.factor_names = split_list(it->second, ',');
  if (auto it = kv.find("response_names"); it != kv.end()) l.response_names = split_list(it->second, ',');
  for (std::size_t f = 0; f < l.levels.size(); ++f) {
    if (auto it = kv.find("labels." + std::to_string(f + 1)); it != kv.end()) {
      l.labels.resize(l.levels.size());
      l.labels[f] = split_list(it->second, ',');
    }
  }
  try {
    l.validate();
  } catch (const std::exception& e) {
    throw InputError(std::string("chain metadata: ") + e.what());
  }
  chain.m_columns = need_size(kv, "columns.m");
  auto span_of = [&](const std::string& key, std::size_t& offset, std::size_t& count) {
    const auto v = parse_sizes(need(kv, key), key);
    if (v.size() != 2) throw InputError("chain metadata: '" + key + "' needs offset,count");
    offset = v[0];
    count = v[1];
  };
  span_of("columns.sigma", chain.sigma_offset, chain.sigma_columns);
  span_of("columns.Sigma", chain.Sigma_offset, chain.Sigma_columns);
  span_of("columns.gamma", chain.gamma_offset, chain.gamma_columns);
  chain.config.record.sigma = chain.sigma_columns > 0;
  chain.config.record.Sigma = chain.Sigma_columns > 0;
  chain.config.record.gamma = chain.gamma_columns > 0;

  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line)) throw InputError(path.string() + ": empty chain file");
  chain.columns = split_csv_line(line);
  const std::size_t cols = chain.columns.size();
  if (chain.m_columns != l.cells() * l.responses || chain.gamma_offset + chain.gamma_columns > cols) {
    throw InputError(path.string() + ": header does not match metadata");
  }
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != cols) throw InputError(path.string() + ": row " + std::to_string(row) + " has wrong field count");
    for (const auto& f : fields) {
      if (f == "NaN") {
        chain.values.push_back(std::numeric_limits<double>::quiet_NaN());
        continue;
      }
      double v = 0.0;
      const auto res = std::from_chars(f.data(), f.data() + f.size(), v);
      if (res.ec != std::errc() || res.ptr != f.data() + f.size()) {
        throw InputError(path.string() + ": row " + std::to_string(row) + ": non-numeric value '" + f + "'");
      }
      chain.values.push_back(v);
    }
  }
  return chain;
}

}  // namespace ha
