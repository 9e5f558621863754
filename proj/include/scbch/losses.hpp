#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scbch/error.hpp"
#include "scbch/ndmath/autodiff.hpp"
#include "scbch/ndmath/matrix.hpp"

// Objective terms. Loss functions are templates over nd::Matrix (plain
// evaluation) and nd::Var (taped evaluation); both share one code path.
namespace scbch {

// Multi-hot {0,1} labels stored as doubles, one row per sample.
using LabelMatrix = nd::Matrix;

inline constexpr double kProbClampLo = 1e-7;
inline constexpr double kProbClampHi = 1.0 - 1e-7;
inline constexpr double kCosineEps = 1e-12;
inline constexpr double kSimilarityFloor = 1e-8;

enum class SimilarityScaling { mean, raw };

// ---------------------------------------------------------------------------
// Label similarity
// ---------------------------------------------------------------------------

// |a ∩ b| / |a ∪ b|; 0 when both are empty.
inline double jaccard(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ShapeError("jaccard: length " + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()));
  }
  double inter = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t c = 0; c < a.size(); ++c) {
    inter += a[c] * b[c];
    na += a[c];
    nb += b[c];
  }
  const double uni = na + nb - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

inline nd::Matrix jaccard_matrix(const LabelMatrix& y) {
  const std::size_t n = y.rows();
  nd::Matrix r(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    r(i, i) = jaccard(y.row(i), y.row(i));
    for (std::size_t j = i + 1; j < n; ++j) r(i, j) = r(j, i) = jaccard(y.row(i), y.row(j));
  }
  return r;
}

// M_ij = 1 iff R_ij > 0 and i != j.
inline nd::Matrix positive_mask(const nd::Matrix& r) {
  nd::Matrix m(r.rows(), r.cols());
  for (std::size_t i = 0; i < r.rows(); ++i)
    for (std::size_t j = 0; j < r.cols(); ++j) m(i, j) = (i != j && r(i, j) > 0.0) ? 1.0 : 0.0;
  return m;
}

// Pair categories for the three label-based pairing strategies.
enum class PairingStrategy { all, any, bidirectional };
enum class PairKind { positive, negative, soft };

inline PairKind classify_pair(PairingStrategy s, std::span<const double> a,
                              std::span<const double> b) {
  const double r = jaccard(a, b);
  switch (s) {
    case PairingStrategy::all:
      return r == 1.0 ? PairKind::positive : PairKind::negative;
    case PairingStrategy::any:
      return r > 0.0 ? PairKind::positive : PairKind::negative;
    case PairingStrategy::bidirectional:
      break;
  }
  if (r == 1.0) return PairKind::positive;
  if (r == 0.0) return PairKind::negative;
  return PairKind::soft;
}

// How a pair enters the bidirectional objective: attraction membership
// (the mask) and the (1 - R) factor scaling its repulsion exponent.
struct PairContribution {
  bool attraction = false;
  double repulsion_weight = 0.0;
};

inline PairContribution pair_contribution(double r) { return {r > 0.0, 1.0 - r}; }

// ---------------------------------------------------------------------------
// Soft labels and confidence weights
// ---------------------------------------------------------------------------

// Per anchor: K neighbor indices and their per-modality cosine similarities.
struct NeighborSet {
  std::vector<std::vector<std::size_t>> indices;
  std::vector<std::vector<double>> sim_image;
  std::vector<std::vector<double>> sim_text;

  std::size_t size() const { return indices.size(); }
};

// p_i = sum_k y_k * 1/2 sum_m s_ik^m / sum_j s_ij^m.
// Negative similarities count as 0; a modality whose similarity mass is
// <= 1e-8 falls back to uniform 1/K weights.
inline std::vector<double> neighbor_soft_label(std::size_t i, const NeighborSet& nb,
                                               const LabelMatrix& labels) {
  if (i >= nb.size()) throw ShapeError("neighbor_soft_label: anchor out of range");
  const auto& idx = nb.indices[i];
  const std::size_t k = idx.size();
  if (k == 0) throw ContractError("neighbor_soft_label: anchor has no neighbors");
  if (nb.sim_image[i].size() != k || nb.sim_text[i].size() != k) {
    throw ShapeError("neighbor_soft_label: similarity count != neighbor count");
  }
  std::vector<double> coef(k, 0.0);
  for (const auto* sims : {&nb.sim_image[i], &nb.sim_text[i]}) {
    double total = 0.0;
    for (double s : *sims) total += std::max(s, 0.0);
    for (std::size_t j = 0; j < k; ++j) {
      const double share = total <= kSimilarityFloor
                               ? 1.0 / static_cast<double>(k)
                               : std::max((*sims)[j], 0.0) / total;
      coef[j] += 0.5 * share;
    }
  }
  std::vector<double> p(labels.cols(), 0.0);
  for (std::size_t j = 0; j < k; ++j) {
    if (idx[j] == i) throw ContractError("neighbor_soft_label: anchor is its own neighbor");
    auto y = labels.row(idx[j]);
    for (std::size_t c = 0; c < p.size(); ++c) p[c] += coef[j] * y[c];
  }
  return p;
}

// w = gamma + (1 - gamma) cos(y, p); w = gamma when either vector is zero.
inline double confidence_weight(std::span<const double> y, std::span<const double> p,
                                double gamma) {
  if (y.size() != p.size()) throw ShapeError("confidence_weight: length mismatch");
  if (gamma < 0.0 || gamma > 1.0) throw SpecError("confidence_weight: gamma outside [0,1]");
  const double ny = nd::norm(y), np = nd::norm(p);
  if (ny == 0.0 || np == 0.0) return gamma;
  const double cosine = std::clamp(nd::dot(y, p) / (ny * np + kCosineEps), 0.0, 1.0);
  return gamma + (1.0 - gamma) * cosine;
}

// ---------------------------------------------------------------------------
// Classification term
// ---------------------------------------------------------------------------

// Weighted binary cross-entropy of targets y against predictions z^1, z^2,
// averaged over 2nC terms.
template <class T>
T cscc_loss(const T& z1, const T& z2, const LabelMatrix& y, std::span<const double> w) {
  const auto& v1 = nd::value_of(z1);
  nd::require_same_shape(v1, nd::value_of(z2), "cscc_loss(z1,z2)");
  nd::require_same_shape(v1, y, "cscc_loss(z,y)");
  if (w.size() != y.rows()) {
    throw ShapeError("cscc_loss: weight length " + std::to_string(w.size()) + " != n " +
                     std::to_string(y.rows()));
  }
  const std::size_t n = y.rows(), c = y.cols();
  nd::Matrix wm(n, c);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) wm(i, j) = w[i];
  const nd::Matrix one_minus_y = nd::add_scalar(nd::scale(y, -1.0), 1.0);

  auto log_likelihood = [&](const T& z) {
    T zc = nd::clamp(z, kProbClampLo, kProbClampHi);
    T pos = nd::mul(nd::log(zc), y);
    T neg = nd::mul(nd::log(nd::add_scalar(nd::scale(zc, -1.0), 1.0)), one_minus_y);
    return nd::sum(nd::mul(nd::add(pos, neg), wm));
  };
  T total = nd::add(log_likelihood(z1), log_likelihood(z2));
  return nd::scale(total, -1.0 / (2.0 * static_cast<double>(n * c)));
}

// ---------------------------------------------------------------------------
// Contrastive terms
// ---------------------------------------------------------------------------

// S_ij = <h_i^1, h_j^2>, divided by L under mean scaling.
template <class T>
T cross_similarity(const T& h1, const T& h2, SimilarityScaling scaling) {
  nd::require_same_shape(nd::value_of(h1), nd::value_of(h2), "cross_similarity");
  T s = nd::matmul(h1, nd::transpose(h2));
  if (scaling == SimilarityScaling::mean) {
    s = nd::scale(s, 1.0 / static_cast<double>(nd::value_of(h1).cols()));
  }
  return s;
}

namespace detail {

inline void require_square(const nd::Matrix& s, const char* op) {
  if (s.rows() != s.cols() || s.empty()) {
    throw ShapeError(std::string(op) + ": expected nonempty square matrix, got " +
                     s.shape_str());
  }
}

inline nd::Matrix off_diagonal(std::size_t n) {
  nd::Matrix m(n, n, 1.0);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 0.0;
  return m;
}

}  // namespace detail

// (1/n^2) sum_{i!=j} exp(xi - S_ij) M_ij - (1/n) sum_i S_ii
template <class T>
T attraction_loss(const T& s, const nd::Matrix& mask, double xi) {
  const auto& sv = nd::value_of(s);
  detail::require_square(sv, "attraction_loss");
  nd::require_same_shape(sv, mask, "attraction_loss(mask)");
  const double n = static_cast<double>(sv.rows());
  nd::Matrix offdiag_mask = nd::mul(mask, detail::off_diagonal(sv.rows()));
  T pull = nd::sum(nd::mul(nd::exp(nd::add_scalar(nd::scale(s, -1.0), xi)), offdiag_mask));
  T align = nd::mean(nd::diag(s));
  return nd::sub(nd::scale(pull, 1.0 / (n * n)), align);
}

// N = S_d - xi * max(0, (S_ii - m) - S_d)
inline double hard_negative_adjust(double s_d, double s_ii, double xi, double margin) {
  return s_d - xi * std::max(0.0, (s_ii - margin) - s_d);
}

// (1/2n^2) sum_{i!=j} sum_d exp(N_ij^d (1 - R_ij)), with S^12 = S and S^21 = S^T.
template <class T>
T repulsion_loss(const T& s, const nd::Matrix& r, double xi, double margin) {
  const auto& sv = nd::value_of(s);
  detail::require_square(sv, "repulsion_loss");
  nd::require_same_shape(sv, r, "repulsion_loss(R)");
  const std::size_t n = sv.rows();
  const nd::Matrix offdiag = detail::off_diagonal(n);
  const nd::Matrix dissim = nd::add_scalar(nd::scale(r, -1.0), 1.0);
  T threshold = nd::add_scalar(nd::diag(s), -margin);  // S_ii - m, n x 1

  auto direction = [&](const T& sd) {
    T hinge = nd::relu(nd::add_col(nd::scale(sd, -1.0), threshold));
    T adjusted = nd::sub(sd, nd::scale(hinge, xi));
    return nd::sum(nd::mul(nd::exp(nd::mul(adjusted, dissim)), offdiag));
  };
  T total = nd::add(direction(s), direction(nd::transpose(s)));
  const double nn = static_cast<double>(n * n);
  return nd::scale(total, 1.0 / (2.0 * nn));
}

// beta/(nL) sum_m sum_i sum_l (1 - |h_il^m|)
template <class T>
T quantization_loss(const T& h1, const T& h2, double beta) {
  const auto& v1 = nd::value_of(h1);
  nd::require_same_shape(v1, nd::value_of(h2), "quantization_loss");
  nd::require_nonempty(v1, "quantization_loss");
  const double nl = static_cast<double>(v1.size());
  T mass = nd::add(nd::sum(nd::abs(h1)), nd::sum(nd::abs(h2)));
  // 2nL - sum|h|, scaled
  return nd::scale(nd::add_scalar(nd::scale(mass, -1.0), 2.0 * nl), beta / nl);
}

struct BschParams {
  double xi = 1.0;
  std::optional<double> xi_repulsion;  // defaults to xi
  double margin = 0.2;
  double beta = 0.3;
  SimilarityScaling scaling = SimilarityScaling::mean;
  bool use_attraction = true;
};

template <class T>
struct BschTerms {
  T attraction;
  T repulsion;
  T quantization;
  T total;
};

template <class T>
BschTerms<T> bsch_loss(const T& h1, const T& h2, const LabelMatrix& labels,
                       const BschParams& p) {
  if (labels.rows() != nd::value_of(h1).rows()) {
    throw ShapeError("bsch_loss: labels rows != batch size");
  }
  const nd::Matrix r = jaccard_matrix(labels);
  T s = cross_similarity(h1, h2, p.scaling);
  T att = attraction_loss(s, positive_mask(r), p.xi);
  T rep = repulsion_loss(s, r, p.xi_repulsion.value_or(p.xi), p.margin);
  T quant = quantization_loss(h1, h2, p.beta);
  T total = nd::add(rep, quant);
  if (p.use_attraction) total = nd::add(total, att);
  return {att, rep, quant, total};
}

// Scalar summary of one objective evaluation.
struct LossBreakdown {
  double cscc = 0.0;
  double attraction = 0.0;
  double repulsion = 0.0;
  double quantization = 0.0;
  double total = 0.0;
  std::vector<double> weights;
};

}  // namespace scbch
