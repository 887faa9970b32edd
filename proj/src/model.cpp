#include "ha/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace ha {

std::string key_name(const EffectKey& key) {
  std::string out;
  for (std::size_t i = 0; i < key.size(); ++i) {
    if (i) out += '.';
    out += std::to_string(key[i] + 1);
  }
  return out;
}

Layout Layout::of(Dims levels, std::size_t responses) {
  Layout l;
  l.levels = std::move(levels);
  l.responses = responses;
  l.validate();
  return l;
}

Dims Layout::cell_dims() const {
  Dims d = levels;
  d.push_back(responses);
  return d;
}

Dims Layout::key_dims(const EffectKey& key) const {
  Dims d;
  d.reserve(key.size() + 1);
  for (auto f : key) d.push_back(levels.at(f));
  d.push_back(responses);
  return d;
}

EffectKey Layout::full_key() const {
  EffectKey k(levels.size());
  for (std::size_t i = 0; i < k.size(); ++i) k[i] = i;
  return k;
}

void Layout::validate() const {
  if (levels.empty()) throw std::invalid_argument("layout needs at least one factor");
  if (responses == 0) throw std::invalid_argument("layout needs at least one response");
  for (auto m : levels) {
    if (m == 0) throw std::invalid_argument("factor with zero levels");
  }
  if (!labels.empty() && labels.size() != levels.size()) throw std::invalid_argument("label count mismatch");
  for (std::size_t f = 0; f < labels.size(); ++f) {
    if (labels[f].size() != levels[f]) throw std::invalid_argument("label count mismatch for factor");
  }
}

std::vector<EffectKey> all_keys(std::size_t factors) {
  std::vector<EffectKey> keys;
  for (std::size_t mask = 1; mask < (std::size_t{1} << factors); ++mask) {
    EffectKey k;
    for (std::size_t f = 0; f < factors; ++f) {
      if (mask & (std::size_t{1} << f)) k.push_back(f);
    }
    keys.push_back(std::move(k));
  }
  std::sort(keys.begin(), keys.end(), KeyOrder{});
  return keys;
}

std::vector<EffectKey> main_keys(std::size_t factors) {
  std::vector<EffectKey> keys;
  for (std::size_t f = 0; f < factors; ++f) keys.push_back({f});
  return keys;
}

Decomposition Decomposition::zeros(const Layout& layout, const std::vector<EffectKey>& keys) {
  Decomposition d;
  d.mu = Vector::Zero(static_cast<Eigen::Index>(layout.responses));
  for (const auto& k : keys) d.effects.emplace(k, Tensor(layout.key_dims(k)));
  return d;
}

CellStats CellStats::empty(const Layout& layout) {
  layout.validate();
  CellStats s;
  s.layout = layout;
  s.counts = Tensor(layout.levels);
  s.sums = Tensor(layout.cell_dims());
  Dims xp = layout.cell_dims();
  xp.push_back(layout.responses);
  s.crossprods = Tensor(xp);
  return s;
}

void CellStats::add_observation(std::span<const std::size_t> cell, std::span<const double> y) {
  const std::size_t c = counts.flat_index(cell);
  const std::size_t n = counts.size();
  const std::size_t p = layout.responses;
  if (y.size() != p) throw DimensionError("observation has wrong response dimension");
  counts[c] += 1.0;
  for (std::size_t r = 0; r < p; ++r) {
    sums[c + n * r] += y[r];
    for (std::size_t s = 0; s < p; ++s) crossprods[c + n * (r + p * s)] += y[r] * y[s];
  }
}

double CellStats::total_count() const {
  double t = 0.0;
  for (double c : counts.values()) t += c;
  return t;
}

double CellStats::max_count() const {
  double m = 0.0;
  for (double c : counts.values()) m = std::max(m, c);
  return m;
}

std::vector<std::size_t> CellStats::empty_cells() const {
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == 0.0) out.push_back(c);
  }
  return out;
}

double CellStats::cell_mean(std::size_t cell, std::size_t r) const {
  const double n = counts[cell];
  return n > 0.0 ? sums[cell + counts.size() * r] / n : 0.0;
}

namespace {

// Strides into the tensor over `from` for each mode of the tensor over `to`.
std::vector<std::size_t> embed_strides(const EffectKey& from, const EffectKey& to, const Layout& layout) {
  std::vector<std::size_t> strides(to.size() + 1, 0);
  std::size_t stride = 1;
  std::size_t j = 0;
  for (std::size_t i = 0; i < to.size(); ++i) {
    if (j < from.size() && from[j] == to[i]) {
      strides[i] = stride;
      stride *= layout.levels[from[j]];
      ++j;
    }
  }
  if (j != from.size()) throw DimensionError("key is not a subset of the target key");
  strides[to.size()] = stride;  // response mode
  return strides;
}

// Calls fn(big_flat, small_flat) for every entry of the tensor over `to`.
template <typename Fn>
void for_each_embedded(const Dims& big_dims, const std::vector<std::size_t>& strides, Fn&& fn) {
  const std::size_t total = product(big_dims);
  std::vector<std::size_t> idx(big_dims.size(), 0);
  std::size_t small = 0;
  for (std::size_t flat = 0; flat < total; ++flat) {
    fn(flat, small);
    for (std::size_t d = 0; d < big_dims.size(); ++d) {
      if (++idx[d] < big_dims[d]) {
        small += strides[d];
        break;
      }
      small -= strides[d] * (big_dims[d] - 1);
      idx[d] = 0;
    }
  }
}

}  // namespace

Tensor expand(const Tensor& e, const EffectKey& from, const EffectKey& to, const Layout& layout) {
  if (e.dims() != layout.key_dims(from)) throw DimensionError("expand: tensor dims do not match key");
  const Dims big = layout.key_dims(to);
  Tensor out(big);
  for_each_embedded(big, embed_strides(from, to, layout), [&](std::size_t b, std::size_t s) { out[b] = e[s]; });
  return out;
}

Tensor reduce_mean(const Tensor& t, const EffectKey& from, const EffectKey& to, const Layout& layout) {
  if (t.dims() != layout.key_dims(from)) throw DimensionError("reduce_mean: tensor dims do not match key");
  Tensor out(layout.key_dims(to));
  for_each_embedded(t.dims(), embed_strides(to, from, layout), [&](std::size_t b, std::size_t s) { out[s] += t[b]; });
  out *= static_cast<double>(out.size()) / static_cast<double>(t.size());
  return out;
}

void add_effect(Tensor& cells, const Tensor& e, const EffectKey& key, const Layout& layout, double scale) {
  const EffectKey full = layout.full_key();
  if (cells.dims() != layout.cell_dims()) throw DimensionError("add_effect: cell array dims mismatch");
  if (e.dims() != layout.key_dims(key)) throw DimensionError("add_effect: effect dims mismatch");
  for_each_embedded(cells.dims(), embed_strides(key, full, layout),
                    [&](std::size_t b, std::size_t s) { cells[b] += scale * e[s]; });
}

Tensor cell_means(const Decomposition& dec, const Layout& layout) {
  Tensor m(layout.cell_dims());
  const std::size_t cells = layout.cells();
  for (std::size_t r = 0; r < layout.responses; ++r) {
    for (std::size_t c = 0; c < cells; ++c) m[c + cells * r] = dec.mu(static_cast<Eigen::Index>(r));
  }
  for (const auto& [key, e] : dec.effects) add_effect(m, e, key, layout);
  return m;
}

Decomposition anova_decompose(const Tensor& m, const Layout& layout) {
  if (m.dims() != layout.cell_dims()) throw DimensionError("anova_decompose: dims do not match layout");
  const EffectKey full = layout.full_key();
  Decomposition dec;
  const Tensor grand = reduce_mean(m, full, {}, layout);
  dec.mu = Eigen::Map<const Vector>(grand.data().data(), static_cast<Eigen::Index>(layout.responses));
  for (const auto& key : all_keys(layout.factors())) {
    Tensor e = reduce_mean(m, full, key, layout);
    // Subtract mu and every lower-order effect nested in this key.
    for (std::size_t r = 0; r < layout.responses; ++r) {
      const std::size_t block = e.size() / layout.responses;
      for (std::size_t i = 0; i < block; ++i) e[i + block * r] -= dec.mu(static_cast<Eigen::Index>(r));
    }
    for (const auto& [sub, se] : dec.effects) {
      if (sub.size() >= key.size()) break;
      if (std::includes(key.begin(), key.end(), sub.begin(), sub.end())) e -= expand(se, sub, key, layout);
    }
    dec.effects.emplace(key, std::move(e));
  }
  return dec;
}

std::vector<double> effect_magnitude_by_response(const Decomposition& dec, const EffectKey& key,
                                                 const Layout& layout) {
  const auto it = dec.effects.find(key);
  if (it == dec.effects.end()) throw std::out_of_range("effect " + key_name(key) + " not in decomposition");
  const Tensor& e = it->second;
  const std::size_t block = e.size() / layout.responses;
  std::vector<double> out(layout.responses);
  std::vector<double> sq(block);
  for (std::size_t r = 0; r < layout.responses; ++r) {
    for (std::size_t i = 0; i < block; ++i) sq[i] = e[i + block * r] * e[i + block * r];
    // Sorted summation makes the result independent of level order.
    std::sort(sq.begin(), sq.end());
    double s = 0.0;
    for (double v : sq) s += v;
    out[r] = s / static_cast<double>(block);
  }
  return out;
}

double effect_magnitude(const Decomposition& dec, const EffectKey& key, const Layout& layout) {
  double s = 0.0;
  for (double v : effect_magnitude_by_response(dec, key, layout)) s += v;
  return s;
}

double ase(const Tensor& estimate, const Tensor& truth) {
  if (estimate.dims() != truth.dims()) throw DimensionError("ase: dims mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double d = estimate[i] - truth[i];
    s += d * d;
  }
  return s / static_cast<double>(truth.size());
}

OlsCellMeans ols_cell_means(const CellStats& stats) {
  OlsCellMeans out{Tensor(stats.layout.cell_dims()), stats.empty_cells()};
  const std::size_t cells = stats.counts.size();
  for (std::size_t r = 0; r < stats.layout.responses; ++r) {
    for (std::size_t c = 0; c < cells; ++c) {
      out.means[c + cells * r] =
          stats.counts[c] > 0.0 ? stats.sums[c + cells * r] / stats.counts[c] : std::numeric_limits<double>::quiet_NaN();
    }
  }
  return out;
}

Tensor ols_cell_means_complete(const CellStats& stats) {
  auto ols = ols_cell_means(stats);
  if (!ols.missing.empty()) {
    std::ostringstream msg;
    msg << ols.missing.size() << " empty cell(s):";
    std::vector<std::size_t> idx;
    for (auto c : ols.missing) {
      stats.counts.multi_index(c, idx);
      msg << " (";
      for (std::size_t d = 0; d < idx.size(); ++d) msg << (d ? "," : "") << idx[d] + 1;
      msg << ")";
    }
    throw EmptyCells(ols.missing, msg.str());
  }
  return std::move(ols.means);
}

}  // namespace ha
