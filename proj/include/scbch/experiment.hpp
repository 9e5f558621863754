#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numeric>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "scbch/config.hpp"
#include "scbch/dataset.hpp"
#include "scbch/losses.hpp"
#include "scbch/model.hpp"
#include "scbch/retrieval.hpp"
#include "scbch/trainer.hpp"

namespace scbch {

namespace fs = std::filesystem;

namespace detail {

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

inline std::ofstream open_out(const fs::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  return os;
}

inline void check_written(const std::ostream& os, const fs::path& path) {
  if (!os) throw IoError("failed writing: " + path.string());
}

inline std::string csv_double(double v) {
  return std::isnan(v) ? std::string("nan") : format_double(v);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Dataset preparation shared by all commands
// ---------------------------------------------------------------------------

inline MultimodalDataset load_experiment_dataset(const ExperimentConfig& c) {
  if (c.dataset.empty()) throw ConfigError("no dataset file given (set \"dataset\" or pass --data)");
  return load_features(c.dataset);
}

// Split, then corrupt the train split. Deterministic in the config seeds.
inline MultimodalDataset prepare_dataset(MultimodalDataset clean, const ExperimentConfig& c) {
  MultimodalDataset d = split(std::move(clean), c.split.query_fraction, c.split.retrieval_fraction,
                              c.split.seed);
  if (c.noise.rate > 0.0) d = apply_noise(std::move(d), c.noise);
  return d;
}

// ---------------------------------------------------------------------------
// Training with optional per-epoch retrieval tracking
// ---------------------------------------------------------------------------

struct EpochMap {
  std::size_t epoch = 0;
  double i2t = 0.0;
  double t2i = 0.0;
  double average() const { return 0.5 * (i2t + t2i); }
};

struct TrainRun {
  TrainState state;
  std::vector<EpochMap> epoch_maps;  // empty unless tracking is on

  // Epoch with the highest average MAP; earliest wins ties.
  const EpochMap* best() const {
    const EpochMap* b = nullptr;
    for (const auto& e : epoch_maps) {
      if (!b || e.average() > b->average()) b = &e;
    }
    return b;
  }
};

inline TrainRun run_training(const MultimodalDataset& d, const ExperimentConfig& c,
                             const EpochCallback& on_epoch = {}) {
  TrainRun run;
  const bool track = c.eval.track_best;
  EvalOptions opts{c.eval.map_at, c.eval.pr_mode, false};
  run.state = train(d, c.train, [&](const TrainState& s) {
    if (track) {
      const auto r = evaluate_cross_modal(s.model, d, opts);
      run.epoch_maps.push_back({s.epoch, r.i2t.map.map, r.t2i.map.map});
    }
    if (on_epoch) on_epoch(s);
  });
  return run;
}

// ---------------------------------------------------------------------------
// Output writers
// ---------------------------------------------------------------------------

inline void write_weight_histogram(const WeightSnapshot& snap, const fs::path& path,
                                   std::size_t bins = 20) {
  std::vector<std::size_t> clean(bins, 0), noisy(bins, 0);
  auto bin_of = [bins](double w) {
    const double x = std::clamp(w, 0.0, 1.0) * static_cast<double>(bins);
    return std::min(static_cast<std::size_t>(x), bins - 1);
  };
  for (double w : snap.clean) ++clean[bin_of(w)];
  for (double w : snap.noisy) ++noisy[bin_of(w)];
  auto os = detail::open_out(path);
  os << "bin_lo,bin_hi,clean,noisy\n";
  for (std::size_t b = 0; b < bins; ++b) {
    const double lo = static_cast<double>(b) / static_cast<double>(bins);
    const double hi = static_cast<double>(b + 1) / static_cast<double>(bins);
    os << format_double(lo) << ',' << format_double(hi) << ',' << clean[b] << ',' << noisy[b]
       << '\n';
  }
  detail::check_written(os, path);
}

inline void write_epoch_maps(const std::vector<EpochMap>& maps, const fs::path& path) {
  auto os = detail::open_out(path);
  os << "epoch,map_i2t,map_t2i,map_avg\n";
  for (const auto& e : maps) {
    os << e.epoch << ',' << format_double(e.i2t) << ',' << format_double(e.t2i) << ','
       << format_double(e.average()) << '\n';
  }
  detail::check_written(os, path);
}

inline void write_pr_curve(const std::vector<PrPoint>& curve, const fs::path& path) {
  auto os = detail::open_out(path);
  os << "cutoff,recall,precision\n";
  for (const auto& p : curve) {
    os << p.cutoff << ',' << format_double(p.recall) << ',' << format_double(p.precision) << '\n';
  }
  detail::check_written(os, path);
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

inline void print_summary(std::ostream& os, const DatasetSummary& s) {
  os << "n=" << s.n << " C=" << s.num_classes << " D1=" << s.image_dim << " D2=" << s.text_dim
     << '\n';
  os << "label cardinality:";
  for (const auto& [k, rows] : s.cardinality_histogram) os << ' ' << k << ':' << rows;
  os << "\nclass counts:";
  for (std::size_t v : s.class_counts) os << ' ' << v;
  os << '\n';
}

// Writes the synthetic dataset described by the config. Empty `out_path`
// means <output_dir>/dataset.txt; automatic format picks binary for ".bin".
inline DatasetSummary cmd_generate(const ExperimentConfig& c, std::string out_path = {},
                                   FeatureFormat format = FeatureFormat::automatic,
                                   std::ostream* log = nullptr) {
  c.validate();
  detail::ensure_dir(c.output_dir);
  if (out_path.empty()) out_path = (fs::path(c.output_dir) / "dataset.txt").string();
  if (format == FeatureFormat::automatic) {
    format = fs::path(out_path).extension() == ".bin" ? FeatureFormat::binary : FeatureFormat::text;
  }
  const MultimodalDataset d = generate_synthetic(c.synthetic);
  save_features(d, out_path, format);
  save_config(c, (fs::path(c.output_dir) / "config.json").string());
  const DatasetSummary s = summarize(d);
  if (log) {
    *log << "wrote " << out_path << '\n';
    print_summary(*log, s);
  }
  return s;
}

struct TrainFiles {
  fs::path checkpoint;
  fs::path metrics;
  fs::path epoch_map;
};

inline TrainFiles train_files(const ExperimentConfig& c) {
  const fs::path dir(c.output_dir);
  return {dir / "checkpoint.bin", dir / "metrics.csv", dir / "epoch_map.csv"};
}

// Loads the dataset, trains, and writes checkpoint, metrics.csv,
// weight histograms and (when tracking) per-epoch MAP.
inline TrainRun cmd_train(const ExperimentConfig& c, std::ostream* log = nullptr) {
  c.validate();
  MultimodalDataset d = prepare_dataset(load_experiment_dataset(c), c);
  detail::ensure_dir(c.output_dir);
  save_config(c, (fs::path(c.output_dir) / "config.json").string());

  TrainRun run = run_training(d, c, [&](const TrainState& s) {
    if (!log) return;
    const auto& m = s.history.back();
    *log << "epoch " << m.epoch << " loss " << m.total;
    if (!std::isnan(m.mean_weight_clean)) {
      *log << " w_clean " << m.mean_weight_clean << " w_noisy " << m.mean_weight_noisy;
    }
    *log << '\n';
  });

  TrainFiles files = train_files(c);
  save_checkpoint(run.state.model, files.checkpoint.string());
  write_metrics(run.state.history, files.metrics.string());
  for (const auto& snap : run.state.snapshots) {
    fs::path p = fs::path(c.output_dir) / ("weights_epoch" + std::to_string(snap.epoch) + ".csv");
    write_weight_histogram(snap, p);
  }
  if (!run.epoch_maps.empty()) write_epoch_maps(run.epoch_maps, files.epoch_map);
  if (log) {
    if (const EpochMap* b = run.best()) {
      *log << "best epoch " << b->epoch << " MAP " << b->average() << '\n';
    }
    *log << "wrote " << files.checkpoint.string() << '\n';
  }
  return run;
}

inline nlohmann::json eval_record(const char* direction, std::size_t code_length, double noise_rate,
                                  const MapResult& m) {
  return {{"direction", direction},     {"L", code_length},
          {"noise_rate", noise_rate},   {"MAP", m.map},
          {"num_queries", m.num_queries}, {"zero_relevant", m.zero_relevant}};
}

// Evaluates a checkpoint on the config's query/retrieval split. Writes
// eval.jsonl and one PR curve per direction.
inline CrossModalResult cmd_eval(const ExperimentConfig& c, const std::string& checkpoint,
                                 std::ostream* log = nullptr) {
  c.validate();
  const HashModel model = load_checkpoint(checkpoint);
  const MultimodalDataset d = prepare_dataset(load_experiment_dataset(c), c);
  const CrossModalResult r =
      evaluate_cross_modal(model, d, {c.eval.map_at, c.eval.pr_mode, true});

  detail::ensure_dir(c.output_dir);
  save_config(c, (fs::path(c.output_dir) / "config.json").string());
  const fs::path report = fs::path(c.output_dir) / "eval.jsonl";
  auto os = detail::open_out(report);
  const std::size_t L = model.code_length();
  os << eval_record("I2T", L, c.noise.rate, r.i2t.map).dump() << '\n';
  os << eval_record("T2I", L, c.noise.rate, r.t2i.map).dump() << '\n';
  nlohmann::json avg = {{"direction", "AVG"}, {"L", L}, {"noise_rate", c.noise.rate},
                        {"MAP", r.average()}};
  os << avg.dump() << '\n';
  detail::check_written(os, report);
  write_pr_curve(r.i2t.curve, fs::path(c.output_dir) / "pr_i2t.csv");
  write_pr_curve(r.t2i.curve, fs::path(c.output_dir) / "pr_t2i.csv");
  if (log) {
    *log << "I2T MAP " << r.i2t.map.map << "  T2I MAP " << r.t2i.map.map << "  avg "
         << r.average() << '\n';
  }
  return r;
}

// ---------------------------------------------------------------------------
// Sweep
// ---------------------------------------------------------------------------

// Empty axes keep the config value.
struct SweepAxes {
  std::vector<double> noise_rates;
  std::vector<std::size_t> code_lengths;
  std::vector<std::string> ablations;  // "none" or one ablation name
  std::vector<double> xis;
  std::vector<double> margins;
};

struct SweepCell {
  std::size_t index = 0;
  double noise_rate = 0.0;
  std::size_t code_length = 0;
  std::string ablation = "none";
  double xi = 0.0;
  double margin = 0.0;
  double map_i2t = std::numeric_limits<double>::quiet_NaN();
  double map_t2i = std::numeric_limits<double>::quiet_NaN();
  double map_avg = std::numeric_limits<double>::quiet_NaN();
  double best_map_avg = std::numeric_limits<double>::quiet_NaN();
  double runtime_ms = 0.0;
  std::string status = "ok";
};

inline std::vector<SweepCell> sweep_cells(const ExperimentConfig& c, const SweepAxes& axes) {
  auto or_default = [](auto v, auto fallback) {
    if (v.empty()) v.push_back(fallback);
    return v;
  };
  const auto rates = or_default(axes.noise_rates, c.noise.rate);
  const auto lengths = or_default(axes.code_lengths, c.train.model.code_length);
  const auto abls = or_default(axes.ablations, std::string("none"));
  const auto xis = or_default(axes.xis, c.train.xi);
  const auto margins = or_default(axes.margins, c.train.margin);

  std::vector<SweepCell> cells;
  for (double rate : rates)
    for (std::size_t L : lengths)
      for (const auto& a : abls)
        for (double xi : xis)
          for (double m : margins) {
            SweepCell cell;
            cell.index = cells.size();
            cell.noise_rate = rate;
            cell.code_length = L;
            cell.ablation = a;
            cell.xi = xi;
            cell.margin = m;
            cells.push_back(cell);
          }
  return cells;
}

// Config of one cell; its seeds are offset by the cell index.
inline ExperimentConfig cell_config(const ExperimentConfig& c, const SweepCell& cell) {
  ExperimentConfig x = c;
  x.noise.rate = cell.noise_rate;
  x.train.model.code_length = cell.code_length;
  x.train.xi = cell.xi;
  x.train.margin = cell.margin;
  apply_ablation(x.train.ablation, cell.ablation);
  x.noise.seed = c.noise.seed + cell.index;
  x.train.seed = c.train.seed + cell.index;
  x.validate();
  return x;
}

inline void run_cell(const ExperimentConfig& c, const MultimodalDataset& clean, SweepCell& cell) {
  const auto start = std::chrono::steady_clock::now();
  try {
    const ExperimentConfig x = cell_config(c, cell);
    const MultimodalDataset d = prepare_dataset(clean, x);
    const TrainRun run = run_training(d, x);
    const auto r = evaluate_cross_modal(run.state.model, d, {x.eval.map_at, x.eval.pr_mode, false});
    cell.map_i2t = r.i2t.map.map;
    cell.map_t2i = r.t2i.map.map;
    cell.map_avg = r.average();
    if (const EpochMap* b = run.best()) cell.best_map_avg = b->average();
  } catch (const std::exception& e) {
    cell.status = std::string("error: ") + e.what();
  }
  cell.runtime_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

inline constexpr const char* kSweepHeader =
    "cell,noise_rate,code_length,ablation,xi,margin,map_i2t,map_t2i,map_avg,best_map_avg,"
    "runtime_ms,status";

inline std::string sweep_row(const SweepCell& s) {
  using detail::csv_double;
  std::string status = s.status;
  std::replace(status.begin(), status.end(), ',', ';');
  std::replace(status.begin(), status.end(), '\n', ' ');
  return std::to_string(s.index) + "," + csv_double(s.noise_rate) + "," +
         std::to_string(s.code_length) + "," + s.ablation + "," + csv_double(s.xi) + "," +
         csv_double(s.margin) + "," + csv_double(s.map_i2t) + "," + csv_double(s.map_t2i) + "," +
         csv_double(s.map_avg) + "," + csv_double(s.best_map_avg) + "," +
         csv_double(s.runtime_ms) + "," + status;
}

// Runs every cell of the grid; a failing cell is recorded and the rest go on.
// Cells only share the read-only clean dataset, so `jobs` > 1 runs them on
// worker threads. Writes <output_dir>/sweep.csv in cell order.
inline std::vector<SweepCell> cmd_sweep(const ExperimentConfig& c, const SweepAxes& axes,
                                        std::size_t jobs = 1, std::ostream* log = nullptr) {
  c.validate();
  for (const auto& a : axes.ablations) {
    Ablation probe;
    apply_ablation(probe, a);
  }
  const MultimodalDataset clean = load_experiment_dataset(c);
  std::vector<SweepCell> cells = sweep_cells(c, axes);

  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      run_cell(c, clean, cells[i]);
      if (log) {
        std::lock_guard lock(log_mutex);
        *log << sweep_row(cells[i]) << '\n';
      }
    }
  };
  jobs = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(cells.size(), 1));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  detail::ensure_dir(c.output_dir);
  save_config(c, (fs::path(c.output_dir) / "config.json").string());
  const fs::path path = fs::path(c.output_dir) / "sweep.csv";
  auto os = detail::open_out(path);
  os << kSweepHeader << '\n';
  for (const auto& s : cells) os << sweep_row(s) << '\n';
  detail::check_written(os, path);
  return cells;
}

// ---------------------------------------------------------------------------
// Similarity diagnostics
// ---------------------------------------------------------------------------

struct SimilarityDump {
  std::vector<std::size_t> ids;  // sorted dataset row ids
  nd::Matrix label_similarity;   // Jaccard over clean labels
  nd::Matrix code_similarity;    // image·textᵀ / L over continuous codes
};

inline std::vector<std::size_t> sample_rows(std::size_t n, std::size_t count, std::uint64_t seed) {
  if (count > n) {
    throw SpecError("sample_count " + std::to_string(count) + " exceeds dataset size " +
                    std::to_string(n));
  }
  std::vector<std::size_t> ids(n);
  std::iota(ids.begin(), ids.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  ids.resize(count);
  std::sort(ids.begin(), ids.end());
  return ids;
}

inline SimilarityDump similarity_dump(const HashModel& model, const MultimodalDataset& d,
                                      std::size_t count, std::uint64_t seed) {
  SimilarityDump out;
  out.ids = sample_rows(d.size(), count, seed);
  out.label_similarity = jaccard_matrix(nd::gather_rows(d.clean_labels, out.ids));
  const nd::Matrix h1 = forward(model, Modality::image, nd::gather_rows(d.image_features, out.ids));
  const nd::Matrix h2 = forward(model, Modality::text, nd::gather_rows(d.text_features, out.ids));
  out.code_similarity = cross_similarity(h1, h2, SimilarityScaling::mean);
  return out;
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw ShapeError("pearson: need two equal-length samples of size >= 2");
  }
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

// Pearson correlation between off-diagonal entries of R and S.
inline double similarity_alignment(const SimilarityDump& dump) {
  std::vector<double> r, s;
  const std::size_t n = dump.ids.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      r.push_back(dump.label_similarity(i, j));
      s.push_back(dump.code_similarity(i, j));
    }
  }
  return pearson(r, s);
}

inline void write_square_csv(const nd::Matrix& m, const std::vector<std::size_t>& ids,
                             const fs::path& path) {
  auto os = detail::open_out(path);
  os << "id";
  for (std::size_t id : ids) os << ',' << id;
  os << '\n';
  for (std::size_t i = 0; i < m.rows(); ++i) {
    os << ids[i];
    for (std::size_t j = 0; j < m.cols(); ++j) os << ',' << format_double(m(i, j));
    os << '\n';
  }
  detail::check_written(os, path);
}

// Writes label_similarity.csv (R) and code_similarity.csv (S) for a seeded
// subset of the dataset file.
inline SimilarityDump cmd_diagnose(const ExperimentConfig& c, const std::string& checkpoint,
                                   std::ostream* log = nullptr) {
  c.validate();
  const HashModel model = load_checkpoint(checkpoint);
  const MultimodalDataset d = load_experiment_dataset(c);
  if (d.image_dim() != model.image_config.input_dim ||
      d.text_dim() != model.text_config.input_dim) {
    throw SpecError("checkpoint/dataset mismatch: model expects (D1=" +
                    std::to_string(model.image_config.input_dim) +
                    ", D2=" + std::to_string(model.text_config.input_dim) + "), dataset has (D1=" +
                    std::to_string(d.image_dim()) + ", D2=" + std::to_string(d.text_dim()) + ")");
  }
  SimilarityDump dump = similarity_dump(model, d, c.diagnose.sample_count, c.diagnose.seed);
  detail::ensure_dir(c.output_dir);
  save_config(c, (fs::path(c.output_dir) / "config.json").string());
  write_square_csv(dump.label_similarity, dump.ids, fs::path(c.output_dir) / "label_similarity.csv");
  write_square_csv(dump.code_similarity, dump.ids, fs::path(c.output_dir) / "code_similarity.csv");
  if (log) *log << "alignment (Pearson R vs S) " << similarity_alignment(dump) << '\n';
  return dump;
}

}  // namespace scbch
