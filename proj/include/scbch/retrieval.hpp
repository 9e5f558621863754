#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "scbch/dataset.hpp"
#include "scbch/error.hpp"
#include "scbch/model.hpp"
#include "scbch/ndmath/matrix.hpp"

namespace scbch {

// Sign codes packed 64 per word. Bit l of a code is set iff h_l >= 0, so
// sign(0) = +1.
class BinaryCodeIndex {
 public:
  BinaryCodeIndex() = default;
  BinaryCodeIndex(std::size_t code_length, std::vector<std::uint64_t> words,
                  std::vector<std::size_t> ids)
      : length_(code_length), words_per_code_((code_length + 63) / 64),
        words_(std::move(words)), ids_(std::move(ids)) {
    if (words_.size() != ids_.size() * words_per_code_) {
      throw ShapeError("BinaryCodeIndex: word count does not match id count");
    }
    by_id_.resize(ids_.size());
    std::iota(by_id_.begin(), by_id_.end(), std::size_t{0});
    std::stable_sort(by_id_.begin(), by_id_.end(),
                     [this](std::size_t a, std::size_t b) { return ids_[a] < ids_[b]; });
  }

  std::size_t size() const noexcept { return ids_.size(); }
  std::size_t code_length() const noexcept { return length_; }
  std::size_t words_per_code() const noexcept { return words_per_code_; }
  std::size_t id(std::size_t pos) const { return ids_[pos]; }
  const std::vector<std::size_t>& ids() const noexcept { return ids_; }
  const std::vector<std::size_t>& positions_by_id() const noexcept { return by_id_; }

  std::span<const std::uint64_t> code(std::size_t pos) const {
    return {words_.data() + pos * words_per_code_, words_per_code_};
  }

  // Back to {-1, +1} components.
  std::vector<int> unpack(std::size_t pos) const {
    std::vector<int> out(length_);
    auto w = code(pos);
    for (std::size_t l = 0; l < length_; ++l) out[l] = ((w[l / 64] >> (l % 64)) & 1u) ? 1 : -1;
    return out;
  }

 private:
  std::size_t length_ = 0;
  std::size_t words_per_code_ = 0;
  std::vector<std::uint64_t> words_;
  std::vector<std::size_t> ids_;
  std::vector<std::size_t> by_id_;
};

// Packs sign(h) row by row. ids default to 0..n-1.
inline BinaryCodeIndex binarize(const nd::Matrix& h, std::vector<std::size_t> ids = {}) {
  if (!nd::all_finite(h)) throw ShapeError("binarize: non-finite code value");
  if (ids.empty()) {
    ids.resize(h.rows());
    std::iota(ids.begin(), ids.end(), std::size_t{0});
  }
  if (ids.size() != h.rows()) throw ShapeError("binarize: id count != code rows");
  const std::size_t wpc = (h.cols() + 63) / 64;
  std::vector<std::uint64_t> words(h.rows() * wpc, 0);
  for (std::size_t i = 0; i < h.rows(); ++i) {
    auto r = h.row(i);
    for (std::size_t l = 0; l < r.size(); ++l)
      if (r[l] >= 0.0) words[i * wpc + l / 64] |= std::uint64_t{1} << (l % 64);
  }
  return BinaryCodeIndex(h.cols(), std::move(words), std::move(ids));
}

inline std::size_t hamming(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b) {
  std::size_t d = 0;
  for (std::size_t w = 0; w < a.size(); ++w) d += std::popcount(a[w] ^ b[w]);
  return d;
}

struct RankedItem {
  std::size_t id = 0;
  std::size_t distance = 0;

  friend bool operator==(const RankedItem&, const RankedItem&) = default;
};

// Every indexed item by ascending Hamming distance, ties by ascending id.
inline std::vector<RankedItem> hamming_rank(std::span<const std::uint64_t> query,
                                            std::size_t query_length,
                                            const BinaryCodeIndex& index) {
  if (query_length != index.code_length() || query.size() != index.words_per_code()) {
    throw ShapeError("hamming_rank: query length " + std::to_string(query_length) +
                     " != index length " + std::to_string(index.code_length()));
  }
  // Counting sort over distances; visiting positions in id order keeps ties
  // ordered by id.
  const std::size_t buckets = index.code_length() + 1;
  std::vector<std::size_t> dist(index.size());
  std::vector<std::size_t> start(buckets + 1, 0);
  for (std::size_t p = 0; p < index.size(); ++p) {
    dist[p] = hamming(query, index.code(p));
    ++start[dist[p] + 1];
  }
  std::partial_sum(start.begin(), start.end(), start.begin());
  std::vector<RankedItem> out(index.size());
  for (std::size_t p : index.positions_by_id()) {
    out[start[dist[p]]++] = RankedItem{index.id(p), dist[p]};
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

// Mean of precision@k over relevant ranks k (within the first top_k ranks
// when top_k > 0). 0 when nothing relevant is retrieved.
inline double average_precision(std::span<const std::uint8_t> relevance, std::size_t top_k = 0) {
  const std::size_t limit =
      top_k == 0 ? relevance.size() : std::min(top_k, relevance.size());
  double hits = 0.0, acc = 0.0;
  for (std::size_t k = 0; k < limit; ++k) {
    if (relevance[k]) {
      hits += 1.0;
      acc += hits / static_cast<double>(k + 1);
    }
  }
  return hits > 0.0 ? acc / hits : 0.0;
}

enum class Direction { image_to_text, text_to_image };

inline const char* direction_name(Direction d) {
  return d == Direction::image_to_text ? "I2T" : "T2I";
}

// Ranked lists with relevance judged on clean labels (share >= 1 class).
struct RetrievalRun {
  Direction direction = Direction::image_to_text;
  std::vector<std::vector<RankedItem>> rankings;
  std::vector<std::vector<std::uint8_t>> relevance;  // aligned with rankings
  std::vector<std::size_t> relevant_totals;
  std::size_t code_length = 0;

  std::size_t num_queries() const { return rankings.size(); }
};

inline bool shares_label(std::span<const double> a, std::span<const double> b) {
  for (std::size_t c = 0; c < a.size(); ++c)
    if (a[c] > 0.0 && b[c] > 0.0) return true;
  return false;
}

// Queries and database are row positions into `labels` given by the index ids.
inline RetrievalRun run_retrieval(Direction dir, const BinaryCodeIndex& queries,
                                  const BinaryCodeIndex& database, const LabelMatrix& labels) {
  RetrievalRun run;
  run.direction = dir;
  run.code_length = database.code_length();
  for (std::size_t q = 0; q < queries.size(); ++q) {
    auto ranked = hamming_rank(queries.code(q), queries.code_length(), database);
    std::vector<std::uint8_t> rel(ranked.size());
    const auto qlab = labels.row(queries.id(q));
    for (std::size_t k = 0; k < ranked.size(); ++k)
      rel[k] = shares_label(qlab, labels.row(ranked[k].id)) ? 1 : 0;
    run.relevant_totals.push_back(
        static_cast<std::size_t>(std::count(rel.begin(), rel.end(), std::uint8_t{1})));
    run.rankings.push_back(std::move(ranked));
    run.relevance.push_back(std::move(rel));
  }
  return run;
}

struct MapResult {
  double map = 0.0;
  std::size_t num_queries = 0;
  std::size_t zero_relevant = 0;  // queries with no relevant item; AP counted as 0
};

inline MapResult mean_average_precision(const RetrievalRun& run, std::size_t top_k = 0) {
  if (run.num_queries() == 0) throw EvaluationError("mean_average_precision: no queries");
  MapResult r;
  r.num_queries = run.num_queries();
  double total = 0.0;
  for (std::size_t q = 0; q < run.num_queries(); ++q) {
    if (run.relevant_totals[q] == 0) ++r.zero_relevant;
    total += average_precision(run.relevance[q], top_k);
  }
  r.map = total / static_cast<double>(r.num_queries);
  return r;
}

enum class PrMode { rank, radius };

struct PrPoint {
  std::size_t cutoff = 0;  // rank k (1-based) or Hamming radius
  double recall = 0.0;
  double precision = 0.0;
};

// Query-averaged precision/recall at every rank cutoff 1..N, or every Hamming
// radius 0..L. Queries without relevant items contribute recall 0; an empty
// retrieved set contributes precision 0.
inline std::vector<PrPoint> precision_recall_curve(const RetrievalRun& run,
                                                   PrMode mode = PrMode::rank) {
  if (run.num_queries() == 0) throw EvaluationError("precision_recall_curve: no queries");
  const double nq = static_cast<double>(run.num_queries());
  std::vector<PrPoint> curve;

  if (mode == PrMode::rank) {
    const std::size_t n = run.rankings.front().size();
    curve.resize(n);
    for (std::size_t q = 0; q < run.num_queries(); ++q) {
      const double total = static_cast<double>(run.relevant_totals[q]);
      double hits = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        hits += run.relevance[q][k];
        curve[k].precision += hits / static_cast<double>(k + 1);
        if (total > 0.0) curve[k].recall += hits / total;
      }
    }
    for (std::size_t k = 0; k < n; ++k) curve[k].cutoff = k + 1;
  } else {
    std::size_t max_radius = run.code_length;
    for (const auto& r : run.rankings)
      if (!r.empty()) max_radius = std::max(max_radius, r.back().distance);
    curve.resize(max_radius + 1);
    for (std::size_t q = 0; q < run.num_queries(); ++q) {
      const double total = static_cast<double>(run.relevant_totals[q]);
      const auto& ranked = run.rankings[q];
      double hits = 0.0, seen = 0.0;
      std::size_t k = 0;
      for (std::size_t radius = 0; radius <= max_radius; ++radius) {
        while (k < ranked.size() && ranked[k].distance <= radius) {
          hits += run.relevance[q][k];
          seen += 1.0;
          ++k;
        }
        if (seen > 0.0) curve[radius].precision += hits / seen;
        if (total > 0.0) curve[radius].recall += hits / total;
      }
    }
    for (std::size_t r = 0; r < curve.size(); ++r) curve[r].cutoff = r;
  }
  for (auto& p : curve) {
    p.recall /= nq;
    p.precision /= nq;
  }
  return curve;
}

// ---------------------------------------------------------------------------
// Cross-modal evaluation of a model on a split dataset
// ---------------------------------------------------------------------------

struct EvalOptions {
  std::size_t map_at = 0;  // 0 = MAP over the full retrieval set
  PrMode pr_mode = PrMode::rank;
  bool with_curves = true;
};

struct DirectionResult {
  Direction direction = Direction::image_to_text;
  MapResult map;
  std::vector<PrPoint> curve;
};

struct CrossModalResult {
  DirectionResult i2t;
  DirectionResult t2i;
  double average() const { return 0.5 * (i2t.map.map + t2i.map.map); }
};

inline BinaryCodeIndex encode(const HashModel& model, Modality mod, const nd::Matrix& features,
                              const std::vector<std::size_t>& rows) {
  return binarize(forward(model, mod, nd::gather_rows(features, rows)), rows);
}

inline CrossModalResult evaluate_cross_modal(const HashModel& model, const MultimodalDataset& d,
                                             const EvalOptions& opts = {}) {
  if (d.image_dim() != model.image_config.input_dim ||
      d.text_dim() != model.text_config.input_dim || d.num_classes() != model.num_classes) {
    throw SpecError("checkpoint/dataset mismatch: model expects (D1=" +
                    std::to_string(model.image_config.input_dim) +
                    ", D2=" + std::to_string(model.text_config.input_dim) +
                    ", C=" + std::to_string(model.num_classes) + "), dataset has (D1=" +
                    std::to_string(d.image_dim()) + ", D2=" + std::to_string(d.text_dim()) +
                    ", C=" + std::to_string(d.num_classes()) + ")");
  }
  const auto query = d.indices(Split::query);
  const auto retrieval = d.indices(Split::retrieval);
  if (query.empty()) throw EvaluationError("evaluate: empty query split");
  if (retrieval.empty()) throw EvaluationError("evaluate: empty retrieval split");

  const auto q_image = encode(model, Modality::image, d.image_features, query);
  const auto q_text = encode(model, Modality::text, d.text_features, query);
  const auto db_image = encode(model, Modality::image, d.image_features, retrieval);
  const auto db_text = encode(model, Modality::text, d.text_features, retrieval);

  auto one = [&](Direction dir, const BinaryCodeIndex& q, const BinaryCodeIndex& db) {
    const RetrievalRun run = run_retrieval(dir, q, db, d.clean_labels);
    DirectionResult r{dir, mean_average_precision(run, opts.map_at), {}};
    if (opts.with_curves) r.curve = precision_recall_curve(run, opts.pr_mode);
    return r;
  };
  return {one(Direction::image_to_text, q_image, db_text),
          one(Direction::text_to_image, q_text, db_image)};
}

}  // namespace scbch
