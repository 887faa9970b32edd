#pragma once

// Factorial layouts, sufficient statistics and the ANOVA/MANOVA decomposition.
//
// A "key tensor" for effect key S has dims (m_d for d in S) followed by a
// trailing response mode of size p; the full cell array uses S = {0..K-1}.
// Factor indices are 0-based in the API and 1-based in every file and report.

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "ha/tensor.hpp"

namespace ha {

using EffectKey = std::vector<std::size_t>;

/// Orders keys by size, then lexicographically: a, b, c, ab, ac, bc, abc.
struct KeyOrder {
  bool operator()(const EffectKey& x, const EffectKey& y) const {
    if (x.size() != y.size()) return x.size() < y.size();
    return x < y;
  }
};

std::string key_name(const EffectKey& key);  // "1.2" for {0,1}

struct Layout {
  Dims levels;                              // m_1..m_K
  std::size_t responses = 1;                // p
  std::vector<std::vector<std::string>> labels;  // per factor, optional
  std::vector<std::string> factor_names;
  std::vector<std::string> response_names;

  static Layout of(Dims levels, std::size_t responses = 1);

  std::size_t factors() const { return levels.size(); }
  std::size_t cells() const { return product(levels); }
  Dims cell_dims() const;                  // m_1..m_K, p
  Dims key_dims(const EffectKey& key) const;  // m_d for d in key, p
  EffectKey full_key() const;
  void validate() const;
};

/// All 2^K - 1 nonempty keys in KeyOrder.
std::vector<EffectKey> all_keys(std::size_t factors);
std::vector<EffectKey> main_keys(std::size_t factors);

struct Decomposition {
  Vector mu;                                   // length p
  std::map<EffectKey, Tensor, KeyOrder> effects;

  static Decomposition zeros(const Layout& layout, const std::vector<EffectKey>& keys);
};

class EmptyCells : public std::runtime_error {
 public:
  EmptyCells(std::vector<std::size_t> cells, const std::string& message)
      : std::runtime_error(message), cells_(std::move(cells)) {}
  const std::vector<std::size_t>& cells() const { return cells_; }

 private:
  std::vector<std::size_t> cells_;
};

struct CellStats {
  Layout layout;
  Tensor counts;      // dims m; nonnegative integers
  Tensor sums;        // dims m x p
  Tensor crossprods;  // dims m x p x p

  static CellStats empty(const Layout& layout);

  void add_observation(std::span<const std::size_t> cell, std::span<const double> y);
  double count(std::size_t cell) const { return counts[cell]; }
  double total_count() const;
  double max_count() const;
  std::vector<std::size_t> empty_cells() const;
  /// Per-cell sample mean of response r (0 for empty cells).
  double cell_mean(std::size_t cell, std::size_t r) const;
};

/// Broadcast key-tensor `e` (over key `from`) to key `to`, with from subset of to.
Tensor expand(const Tensor& e, const EffectKey& from, const EffectKey& to, const Layout& layout);
/// Unweighted mean of a key-tensor over the modes in `from` \ `to`.
Tensor reduce_mean(const Tensor& t, const EffectKey& from, const EffectKey& to, const Layout& layout);
/// Adds `scale * e` (key tensor over `key`) into the full cell array `cells`.
void add_effect(Tensor& cells, const Tensor& e, const EffectKey& key, const Layout& layout, double scale = 1.0);

Tensor cell_means(const Decomposition& dec, const Layout& layout);
Decomposition anova_decompose(const Tensor& m, const Layout& layout);

/// ||effect||^2 / prod_{d in key} m_d, summed over responses.
double effect_magnitude(const Decomposition& dec, const EffectKey& key, const Layout& layout);
std::vector<double> effect_magnitude_by_response(const Decomposition& dec, const EffectKey& key,
                                                 const Layout& layout);

/// Mean squared entrywise error.
double ase(const Tensor& estimate, const Tensor& truth);

struct OlsCellMeans {
  Tensor means;                      // NaN where the cell is empty
  std::vector<std::size_t> missing;  // flat indices of empty cells
};

OlsCellMeans ols_cell_means(const CellStats& stats);
/// Throws EmptyCells naming the empty cells.
Tensor ols_cell_means_complete(const CellStats& stats);

}  // namespace ha
