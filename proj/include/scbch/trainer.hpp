#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "scbch/dataset.hpp"
#include "scbch/error.hpp"
#include "scbch/losses.hpp"
#include "scbch/model.hpp"
#include "scbch/ndmath/autodiff.hpp"

namespace scbch {

struct Ablation {
  bool disable_cscc = false;
  bool disable_bsch = false;
  bool disable_weighting = false;
  bool disable_attraction = false;

  friend bool operator==(const Ablation&, const Ablation&) = default;
};

enum class NeighborSpace { codes, raw };

struct ModelConfig {
  std::size_t hidden_dim = 256;
  std::size_t code_length = 16;
  std::size_t image_layers = 3;
  std::size_t text_layers = 2;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct TrainConfig {
  double learning_rate = 1e-4;
  std::size_t batch_size = 128;
  std::size_t epochs = 50;
  std::size_t warmup_epochs = 10;
  double alpha = 0.7;
  double beta = 0.3;
  double gamma = 0.5;
  double xi = 1.0;
  std::optional<double> xi_repulsion;
  double margin = 0.2;
  std::size_t neighbors = 8;
  std::uint64_t seed = 0;
  Ablation ablation;
  NeighborSpace neighbor_space = NeighborSpace::codes;
  SimilarityScaling similarity_scaling = SimilarityScaling::mean;
  ModelConfig model;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;

  void validate() const {
    if (epochs > 0 && warmup_epochs >= epochs) {
      throw ConfigError("train: warmup_epochs must be < epochs");
    }
    if (batch_size < 2) throw ConfigError("train: batch_size must be >= 2");
    if (neighbors < 1) throw ConfigError("train: neighbors must be >= 1");
    for (double v : {learning_rate, alpha, beta, gamma, xi, margin}) {
      if (!(v >= 0.0) || !std::isfinite(v)) {
        throw ConfigError("train: hyperparameters must be finite and nonnegative");
      }
    }
    if (xi_repulsion && !(*xi_repulsion >= 0.0)) throw ConfigError("train: xi_repulsion < 0");
    if (gamma > 1.0) throw ConfigError("train: gamma must be in [0,1]");
    if (ablation.disable_cscc && ablation.disable_bsch) {
      throw ConfigError("train: disabling both cscc and bsch leaves an empty objective");
    }
  }

  BschParams bsch_params() const {
    return {xi, xi_repulsion, margin, beta, similarity_scaling, !ablation.disable_attraction};
  }
};

inline HashModel init_model(const MultimodalDataset& d, const ModelConfig& mc,
                            std::uint64_t seed) {
  return init_parameters({d.image_dim(), mc.hidden_dim, mc.code_length, mc.image_layers},
                         {d.text_dim(), mc.hidden_dim, mc.code_length, mc.text_layers},
                         d.num_classes(), seed);
}

// ---------------------------------------------------------------------------
// Neighbors and weights
// ---------------------------------------------------------------------------

namespace detail {

inline nd::Matrix cosine_matrix(const nd::Matrix& a) {
  const std::size_t n = a.rows();
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) norms[i] = nd::norm(a.row(i));
  nd::Matrix c(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j)
      c(i, j) = c(j, i) = nd::dot(a.row(i), a.row(j)) / (norms[i] * norms[j] + kCosineEps);
  return c;
}

}  // namespace detail

// Top-k other rows per anchor ranked by the mean of the two per-modality
// cosines (ties by index). k is clamped to n - 1.
inline NeighborSet select_batch_neighbors(const nd::Matrix& view1, const nd::Matrix& view2,
                                          std::size_t k, std::size_t* clamped = nullptr) {
  if (view1.rows() != view2.rows()) throw ShapeError("select_batch_neighbors: row mismatch");
  const std::size_t n = view1.rows();
  if (n < 2) throw ContractError("select_batch_neighbors: need at least 2 rows");
  if (k >= n) {
    k = n - 1;
    if (clamped) ++*clamped;
  }
  const nd::Matrix c1 = detail::cosine_matrix(view1);
  const nd::Matrix c2 = detail::cosine_matrix(view2);

  NeighborSet nb;
  nb.indices.resize(n);
  nb.sim_image.resize(n);
  nb.sim_text.resize(n);
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < n; ++i) {
    order.clear();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) order.push_back(j);
    auto score = [&](std::size_t j) { return 0.5 * (c1(i, j) + c2(i, j)); };
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t a, std::size_t b) {
                        const double sa = score(a), sb = score(b);
                        return sa != sb ? sa > sb : a < b;
                      });
    for (std::size_t t = 0; t < k; ++t) {
      nb.indices[i].push_back(order[t]);
      nb.sim_image[i].push_back(c1(i, order[t]));
      nb.sim_text[i].push_back(c2(i, order[t]));
    }
  }
  return nb;
}

// Per-sample confidence weights from neighbor soft labels.
inline std::vector<double> confidence_weights(const nd::Matrix& view1, const nd::Matrix& view2,
                                              const LabelMatrix& labels, std::size_t k,
                                              double gamma, std::size_t* clamped = nullptr) {
  const NeighborSet nb = select_batch_neighbors(view1, view2, k, clamped);
  std::vector<double> w(labels.rows());
  for (std::size_t i = 0; i < labels.rows(); ++i) {
    const auto p = neighbor_soft_label(i, nb, labels);
    w[i] = confidence_weight(labels.row(i), p, gamma);
  }
  return w;
}

// ---------------------------------------------------------------------------
// Objective
// ---------------------------------------------------------------------------

struct Batch {
  nd::Matrix image;
  nd::Matrix text;
  LabelMatrix labels;  // the (possibly noisy) training labels
};

inline Batch make_batch(const MultimodalDataset& d, std::span<const std::size_t> rows) {
  return {nd::gather_rows(d.image_features, rows), nd::gather_rows(d.text_features, rows),
          nd::gather_rows(d.training_labels(), rows)};
}

inline bool weighting_active(std::size_t epoch, const TrainConfig& c) {
  return epoch > c.warmup_epochs && !c.ablation.disable_weighting;
}

struct Objective {
  nd::Var loss;
  LossBreakdown breakdown;
};

// Taped objective for one batch at 1-based `epoch`. Weights are computed from
// detached codes (or raw features) and enter the loss as constants.
inline Objective objective(const TapedModel& net, const Batch& b, std::size_t epoch,
                           const TrainConfig& cfg, std::size_t* clamped = nullptr) {
  const std::size_t n = b.labels.rows();
  nd::Var h1 = net.forward(Modality::image, b.image);
  nd::Var h2 = net.forward(Modality::text, b.text);

  Objective out;
  out.breakdown.weights.assign(n, 1.0);
  if (weighting_active(epoch, cfg)) {
    const bool raw = cfg.neighbor_space == NeighborSpace::raw;
    out.breakdown.weights = confidence_weights(raw ? b.image : h1.value(),
                                               raw ? b.text : h2.value(), b.labels,
                                               cfg.neighbors, cfg.gamma, clamped);
  }

  std::optional<nd::Var> total;
  if (!cfg.ablation.disable_cscc) {
    nd::Var z1 = net.classify(Modality::image, h1);
    nd::Var z2 = net.classify(Modality::text, h2);
    nd::Var cls = cscc_loss(z1, z2, b.labels, out.breakdown.weights);
    out.breakdown.cscc = cls.value()[0];
    total = cls;
  }
  if (!cfg.ablation.disable_bsch) {
    auto terms = bsch_loss(h1, h2, b.labels, cfg.bsch_params());
    out.breakdown.attraction = cfg.ablation.disable_attraction ? 0.0 : terms.attraction.value()[0];
    out.breakdown.repulsion = terms.repulsion.value()[0];
    out.breakdown.quantization = terms.quantization.value()[0];
    nd::Var scaled = nd::scale(terms.total, cfg.alpha);
    total = total ? nd::add(*total, scaled) : scaled;
  }
  if (!total) throw ConfigError("objective: every term is disabled");
  out.loss = *total;
  out.breakdown.total = out.loss.value()[0];
  return out;
}

// Objective value without keeping gradients.
inline LossBreakdown evaluate_objective(const HashModel& model, const Batch& b, std::size_t epoch,
                                        const TrainConfig& cfg) {
  nd::Tape tape;
  TapedModel net(tape, model);
  return objective(net, b, epoch, cfg).breakdown;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamState {
  std::vector<nd::Matrix> first;
  std::vector<nd::Matrix> second;
  std::uint64_t timestep = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

inline AdamState make_adam(const HashModel& model) {
  AdamState s;
  for (const nd::Matrix* p : model.parameters()) {
    s.first.emplace_back(p->rows(), p->cols());
    s.second.emplace_back(p->rows(), p->cols());
  }
  return s;
}

// One bias-corrected Adam update. Rejects non-finite gradients before
// touching any parameter.
inline void adam_step(HashModel& model, AdamState& s, const std::vector<nd::Matrix>& grads,
                      double lr) {
  auto params = model.parameters();
  if (grads.size() != params.size() || s.first.size() != params.size()) {
    throw ShapeError("adam_step: parameter block count mismatch");
  }
  const auto names = model.parameter_names();
  for (std::size_t b = 0; b < params.size(); ++b) {
    nd::require_same_shape(*params[b], grads[b], "adam_step");
    if (!nd::all_finite(grads[b])) {
      throw NumericalError("adam_step: non-finite gradient in " + names[b]);
    }
  }
  ++s.timestep;
  const double t = static_cast<double>(s.timestep);
  const double c1 = 1.0 - std::pow(s.beta1, t);
  const double c2 = 1.0 - std::pow(s.beta2, t);
  for (std::size_t b = 0; b < params.size(); ++b) {
    nd::Matrix& p = *params[b];
    nd::Matrix& m = s.first[b];
    nd::Matrix& v = s.second[b];
    const nd::Matrix& g = grads[b];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * g[i];
      v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * g[i] * g[i];
      p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + s.epsilon);
    }
  }
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct EpochMetrics {
  std::size_t epoch = 0;
  double cscc = 0.0;
  double attraction = 0.0;
  double repulsion = 0.0;
  double quantization = 0.0;
  double total = 0.0;
  // NaN when the dataset carries no noise mask or the group is empty.
  double mean_weight_clean = std::numeric_limits<double>::quiet_NaN();
  double mean_weight_noisy = std::numeric_limits<double>::quiet_NaN();
  double wall_time_ms = 0.0;
};

using MetricsLog = std::vector<EpochMetrics>;

// Per-sample weights of one epoch split by the noise mask.
struct WeightSnapshot {
  std::size_t epoch = 0;
  std::vector<double> clean;
  std::vector<double> noisy;
};

struct TrainState {
  HashModel model;
  AdamState adam;
  std::size_t epoch = 0;  // completed epochs
  std::mt19937_64 rng;
  MetricsLog history;
  std::vector<WeightSnapshot> snapshots;  // epochs E_w + 1 and E_m
  std::size_t neighbor_clamps = 0;        // batches where K was reduced
};

using EpochCallback = std::function<void(const TrainState&)>;

inline TrainState init_train_state(const MultimodalDataset& d, const TrainConfig& cfg) {
  TrainState s;
  s.model = init_model(d, cfg.model, cfg.seed);
  s.adam = make_adam(s.model);
  s.rng.seed(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  return s;
}

// Runs one epoch (state.epoch + 1) of shuffled mini-batches.
inline void train_epoch(TrainState& s, const MultimodalDataset& d, const TrainConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  const std::size_t epoch = s.epoch + 1;
  auto order = d.indices(Split::train);
  std::shuffle(order.begin(), order.end(), s.rng);

  EpochMetrics m;
  m.epoch = epoch;
  std::vector<double> sample_weight(d.size(), std::numeric_limits<double>::quiet_NaN());
  std::size_t batches = 0;
  for (std::size_t first = 0; first < order.size(); first += cfg.batch_size) {
    const std::size_t len = std::min(cfg.batch_size, order.size() - first);
    if (len < 2) break;
    const std::span<const std::size_t> rows(order.data() + first, len);
    const Batch b = make_batch(d, rows);

    nd::Tape tape;
    TapedModel net(tape, s.model);
    Objective obj = objective(net, b, epoch, cfg, &s.neighbor_clamps);
    tape.backward(obj.loss);
    adam_step(s.model, s.adam, net.gradients(), cfg.learning_rate);
    const auto params = s.model.parameters();
    for (std::size_t k = 0; k < params.size(); ++k) {
      if (!nd::all_finite(*params[k])) {
        throw NumericalError("train: non-finite values in " + s.model.parameter_names()[k] +
                             " at epoch " + std::to_string(epoch));
      }
    }

    m.cscc += obj.breakdown.cscc;
    m.attraction += obj.breakdown.attraction;
    m.repulsion += obj.breakdown.repulsion;
    m.quantization += obj.breakdown.quantization;
    m.total += obj.breakdown.total;
    for (std::size_t r = 0; r < len; ++r) sample_weight[rows[r]] = obj.breakdown.weights[r];
    ++batches;
  }
  if (batches > 0) {
    const double nb = static_cast<double>(batches);
    m.cscc /= nb;
    m.attraction /= nb;
    m.repulsion /= nb;
    m.quantization /= nb;
    m.total /= nb;
  }

  if (d.noisy_labels) {
    WeightSnapshot snap{epoch, {}, {}};
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (std::isnan(sample_weight[i])) continue;
      (d.noise_mask[i] ? snap.noisy : snap.clean).push_back(sample_weight[i]);
    }
    auto mean_of = [](const std::vector<double>& v) {
      return v.empty() ? std::numeric_limits<double>::quiet_NaN()
                       : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    };
    m.mean_weight_clean = mean_of(snap.clean);
    m.mean_weight_noisy = mean_of(snap.noisy);
    if (epoch == cfg.warmup_epochs + 1 || epoch == cfg.epochs) {
      s.snapshots.push_back(std::move(snap));
    }
  }

  m.wall_time_ms = std::chrono::duration<double, std::milli>(
                       std::chrono::steady_clock::now() - start)
                       .count();
  s.history.push_back(m);
  s.epoch = epoch;
}

inline TrainState train(const MultimodalDataset& d, const TrainConfig& cfg,
                        const EpochCallback& on_epoch = {}) {
  cfg.validate();
  d.validate();
  const auto train_rows = d.indices(Split::train);
  if (train_rows.empty()) throw ConfigError("train: empty train split");
  if (train_rows.size() < 2) throw ConfigError("train: need at least 2 train samples");

  TrainState s = init_train_state(d, cfg);
  while (s.epoch < cfg.epochs) {
    train_epoch(s, d, cfg);
    if (on_epoch) on_epoch(s);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Metrics log: CSV with a header row. Doubles use shortest round-trip form.
// ---------------------------------------------------------------------------

inline constexpr const char* kMetricsHeader =
    "epoch,l_cscc,l_att,l_rep,l_quant,l_total,mean_weight_clean,mean_weight_noisy,wall_time_ms";

inline std::string metrics_row(const EpochMetrics& m) {
  auto f = [](double v) { return std::isnan(v) ? std::string("nan") : format_double(v); };
  return std::to_string(m.epoch) + "," + f(m.cscc) + "," + f(m.attraction) + "," +
         f(m.repulsion) + "," + f(m.quantization) + "," + f(m.total) + "," +
         f(m.mean_weight_clean) + "," + f(m.mean_weight_noisy) + "," + f(m.wall_time_ms);
}

inline void write_metrics(const MetricsLog& log, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << kMetricsHeader << '\n';
  for (const auto& m : log) os << metrics_row(m) << '\n';
  if (!os) throw IoError("failed writing: " + path);
}

}  // namespace scbch
