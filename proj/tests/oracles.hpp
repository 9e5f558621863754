#pragma once

// Reference implementations used by the unit and acceptance tests. Each one
// is a direct loop over the definition and shares no code with the library
// routine it checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

#include "scbch/ndmath/matrix.hpp"

namespace oracle {

namespace nd = scbch::nd;

using Grid = std::vector<std::vector<double>>;

inline Grid to_grid(const nd::Matrix& m) {
  Grid g(m.rows(), std::vector<double>(m.cols()));
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) g[i][j] = m(i, j);
  return g;
}

inline nd::Matrix random_matrix(std::mt19937_64& rng, std::size_t r, std::size_t c, double lo,
                                double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  nd::Matrix m(r, c);
  for (double& v : m.values()) v = u(rng);
  return m;
}

// Multi-hot rows; `allow_empty` permits all-zero rows.
inline nd::Matrix random_labels(std::mt19937_64& rng, std::size_t n, std::size_t c,
                                bool allow_empty = false) {
  std::bernoulli_distribution coin(0.35);
  std::uniform_int_distribution<std::size_t> pick(0, c - 1);
  nd::Matrix y(n, c);
  for (std::size_t i = 0; i < n; ++i) {
    bool any = false;
    for (std::size_t k = 0; k < c; ++k) {
      y(i, k) = coin(rng) ? 1.0 : 0.0;
      any = any || y(i, k) > 0.0;
    }
    if (!any && !allow_empty) y(i, pick(rng)) = 1.0;
  }
  return y;
}

// Intersection over union by counting set members.
inline double jaccard(const std::vector<double>& a, const std::vector<double>& b) {
  int inter = 0, uni = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const bool x = a[k] > 0.5, y = b[k] > 0.5;
    inter += x && y;
    uni += x || y;
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

inline Grid jaccard_grid(const Grid& y) {
  Grid r(y.size(), std::vector<double>(y.size()));
  for (std::size_t i = 0; i < y.size(); ++i)
    for (std::size_t j = 0; j < y.size(); ++j) r[i][j] = jaccard(y[i], y[j]);
  return r;
}

inline double cscc(const Grid& z1, const Grid& z2, const Grid& y, const std::vector<double>& w) {
  const double lo = 1e-7, hi = 1.0 - 1e-7;
  double acc = 0.0;
  std::size_t terms = 0;
  for (const Grid* z : {&z1, &z2}) {
    for (std::size_t i = 0; i < y.size(); ++i) {
      for (std::size_t c = 0; c < y[i].size(); ++c) {
        const double p = std::min(std::max((*z)[i][c], lo), hi);
        acc += w[i] * (y[i][c] * std::log(p) + (1.0 - y[i][c]) * std::log(1.0 - p));
        ++terms;
      }
    }
  }
  return -acc / static_cast<double>(terms);
}

inline double attraction(const Grid& s, const Grid& r, double xi) {
  const std::size_t n = s.size();
  double pull = 0.0, diag = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    diag += s[i][i];
    for (std::size_t j = 0; j < n; ++j)
      if (i != j && r[i][j] > 0.0) pull += std::exp(xi - s[i][j]);
  }
  const double nn = static_cast<double>(n);
  return pull / (nn * nn) - diag / nn;
}

inline double repulsion(const Grid& s, const Grid& r, double xi, double margin) {
  const std::size_t n = s.size();
  double acc = 0.0;
  for (int d = 0; d < 2; ++d) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const double sd = d == 0 ? s[i][j] : s[j][i];
        const double hinge = (s[i][i] - margin) - sd;
        const double adjusted = sd - xi * (hinge > 0.0 ? hinge : 0.0);
        acc += std::exp(adjusted * (1.0 - r[i][j]));
      }
    }
  }
  const double nn = static_cast<double>(n);
  return acc / (2.0 * nn * nn);
}

inline double quantization(const Grid& h1, const Grid& h2, double beta) {
  double acc = 0.0;
  std::size_t count = 0;
  for (const Grid* h : {&h1, &h2})
    for (const auto& row : *h)
      for (double v : row) acc += 1.0 - std::fabs(v);
  count = h1.size() * h1.front().size();
  return beta * acc / static_cast<double>(count);
}

// S_ij = <h1_i, h2_j> / L.
inline Grid similarity(const Grid& h1, const Grid& h2) {
  Grid s(h1.size(), std::vector<double>(h2.size(), 0.0));
  const double len = static_cast<double>(h1.front().size());
  for (std::size_t i = 0; i < h1.size(); ++i)
    for (std::size_t j = 0; j < h2.size(); ++j) {
      double dot = 0.0;
      for (std::size_t l = 0; l < h1[i].size(); ++l) dot += h1[i][l] * h2[j][l];
      s[i][j] = dot / len;
    }
  return s;
}

// Bits as a vector of 0/1, set when value >= 0.
inline std::vector<int> sign_bits(const std::vector<double>& h) {
  std::vector<int> b(h.size());
  for (std::size_t l = 0; l < h.size(); ++l) b[l] = h[l] >= 0.0 ? 1 : 0;
  return b;
}

inline std::size_t hamming(const std::vector<int>& a, const std::vector<int>& b) {
  std::size_t d = 0;
  for (std::size_t l = 0; l < a.size(); ++l) d += a[l] != b[l];
  return d;
}

inline bool shares(const std::vector<double>& a, const std::vector<double>& b) {
  for (std::size_t k = 0; k < a.size(); ++k)
    if (a[k] > 0.5 && b[k] > 0.5) return true;
  return false;
}

// AP of one ranked relevance list: precision accumulated at each relevant rank.
inline double average_precision(const std::vector<int>& rel) {
  int hits = 0;
  double acc = 0.0;
  for (std::size_t k = 0; k < rel.size(); ++k) {
    if (rel[k]) {
      ++hits;
      acc += static_cast<double>(hits) / static_cast<double>(k + 1);
    }
  }
  return hits == 0 ? 0.0 : acc / hits;
}

// MAP of Hamming ranking from raw sign bits, ties broken by database order.
inline double map_from_bits(const std::vector<std::vector<int>>& qbits, const Grid& qlabels,
                            const std::vector<std::vector<int>>& dbits, const Grid& dlabels) {
  double total = 0.0;
  for (std::size_t q = 0; q < qbits.size(); ++q) {
    std::vector<std::size_t> order(dbits.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<std::size_t> dist(dbits.size());
    for (std::size_t j = 0; j < dbits.size(); ++j) dist[j] = hamming(qbits[q], dbits[j]);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
    std::vector<int> rel;
    for (std::size_t j : order) rel.push_back(shares(qlabels[q], dlabels[j]) ? 1 : 0);
    total += average_precision(rel);
  }
  return total / static_cast<double>(qbits.size());
}

// Expected MAP of a uniformly shuffled ranking, estimated over `reps` shuffles.
inline double shuffled_map(const Grid& qlabels, const Grid& dlabels, std::uint64_t seed,
                           int reps = 20) {
  std::mt19937_64 rng(seed);
  double total = 0.0;
  for (int r = 0; r < reps; ++r) {
    for (std::size_t q = 0; q < qlabels.size(); ++q) {
      std::vector<int> rel;
      for (const auto& d : dlabels) rel.push_back(shares(qlabels[q], d) ? 1 : 0);
      std::shuffle(rel.begin(), rel.end(), rng);
      total += average_precision(rel);
    }
  }
  return total / static_cast<double>(reps * qlabels.size());
}

// Two-pass Pearson correlation in long double.
inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  long double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= x.size();
  my /= y.size();
  long double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const long double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  return static_cast<double>(sxy / std::sqrt(sxx * syy));
}

// Central differences of f over every entry of every block.
inline std::vector<nd::Matrix> numeric_gradient(
    std::vector<nd::Matrix>& blocks, const std::function<double()>& f, double step = 1e-5) {
  std::vector<nd::Matrix> out;
  for (auto& b : blocks) {
    nd::Matrix g(b.rows(), b.cols());
    for (std::size_t k = 0; k < b.size(); ++k) {
      const double keep = b[k];
      b[k] = keep + step;
      const double up = f();
      b[k] = keep - step;
      const double down = f();
      b[k] = keep;
      g[k] = (up - down) / (2.0 * step);
    }
    out.push_back(std::move(g));
  }
  return out;
}

// max |a - n| / max(|a|, |n|, floor) over all entries.
inline double max_relative_error(const std::vector<nd::Matrix>& analytic,
                                 const std::vector<nd::Matrix>& numeric, double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t b = 0; b < analytic.size(); ++b)
    for (std::size_t k = 0; k < analytic[b].size(); ++k) {
      const double a = analytic[b][k], n = numeric[b][k];
      const double denom = std::max({std::fabs(a), std::fabs(n), floor});
      worst = std::max(worst, std::fabs(a - n) / denom);
    }
  return worst;
}

}  // namespace oracle
