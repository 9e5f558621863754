#pragma once

#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "scbch/dataset.hpp"
#include "scbch/error.hpp"
#include "scbch/retrieval.hpp"
#include "scbch/trainer.hpp"

namespace scbch {

struct SplitConfig {
  double query_fraction = 0.1;
  double retrieval_fraction = 0.3;
  std::uint64_t seed = 0;

  friend bool operator==(const SplitConfig&, const SplitConfig&) = default;
};

struct DiagnoseConfig {
  std::size_t sample_count = 64;
  std::uint64_t seed = 0;

  friend bool operator==(const DiagnoseConfig&, const DiagnoseConfig&) = default;
};

struct EvalConfig {
  std::size_t map_at = 0;
  PrMode pr_mode = PrMode::rank;
  bool track_best = true;  // evaluate on the query split after every epoch

  friend bool operator==(const EvalConfig&, const EvalConfig&) = default;
};

// Everything one experiment needs. Every field has a default.
struct ExperimentConfig {
  SyntheticSpec synthetic;
  NoiseSpec noise;
  SplitConfig split;
  TrainConfig train;
  EvalConfig eval;
  DiagnoseConfig diagnose;
  std::string dataset;  // feature file; empty = generate from `synthetic`
  std::string output_dir = "out";

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;

  void validate() const {
    try {
      synthetic.validate();
      noise.validate();
    } catch (const SpecError& e) {
      throw ConfigError(e.what());
    }
    if (!(split.query_fraction > 0.0) || !(split.retrieval_fraction > 0.0) ||
        split.query_fraction + split.retrieval_fraction > 1.0 + 1e-12) {
      throw ConfigError("split: fractions must be positive and sum to <= 1");
    }
    train.validate();
    const ModelConfig& m = train.model;
    if (m.code_length < 8 || m.hidden_dim < m.code_length || m.image_layers < 1 ||
        m.text_layers < 1) {
      throw ConfigError("model: need code_length >= 8, hidden_dim >= code_length, layers >= 1");
    }
    if (diagnose.sample_count < 2) throw ConfigError("diagnose: sample_count must be >= 2");
  }
};

// ---------------------------------------------------------------------------
// JSON mapping. Unknown keys and wrong types raise ConfigError.
// ---------------------------------------------------------------------------

namespace detail {

using nlohmann::json;

class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean()) throw ConfigError("");
      } else if constexpr (std::is_integral_v<T>) {
        if (!it->is_number_integer() || (it->is_number_integer() && it->template get<long long>() < 0))
          throw ConfigError("");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!it->is_number()) throw ConfigError("");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!it->is_string()) throw ConfigError("");
      }
      out = it->template get<T>();
    } catch (const std::exception&) {
      throw ConfigError(path_ + "." + key + ": wrong type or value");
    }
  }

  const json* sub(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(path_ + ": unknown key '" + it.key() + "'");
    }
  }

  const std::string& path() const { return path_; }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline std::vector<std::string> ablation_names(const Ablation& a) {
  std::vector<std::string> out;
  if (a.disable_cscc) out.push_back("cscc");
  if (a.disable_bsch) out.push_back("bsch");
  if (a.disable_weighting) out.push_back("weighting");
  if (a.disable_attraction) out.push_back("attraction");
  return out;
}

}  // namespace detail

inline void apply_ablation(Ablation& a, const std::string& name) {
  if (name == "cscc") {
    a.disable_cscc = true;
  } else if (name == "bsch") {
    a.disable_bsch = true;
  } else if (name == "weighting") {
    a.disable_weighting = true;
  } else if (name == "attraction") {
    a.disable_attraction = true;
  } else if (name != "none") {
    throw ConfigError("unknown ablation '" + name +
                      "' (expected cscc, bsch, weighting, attraction or none)");
  }
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
  using nlohmann::json;
  const auto& s = c.synthetic;
  const auto& t = c.train;
  json j;
  j["synthetic"] = {{"n", s.n},
                    {"num_classes", s.num_classes},
                    {"image_dim", s.image_dim},
                    {"text_dim", s.text_dim},
                    {"min_labels", s.min_labels},
                    {"max_labels", s.max_labels},
                    {"separation", s.separation},
                    {"noise_std", s.noise_std},
                    {"correlation", s.correlation},
                    {"seed", s.seed}};
  j["noise"] = {{"rate", c.noise.rate}, {"seed", c.noise.seed}, {"scheme", c.noise.scheme}};
  j["split"] = {{"query_fraction", c.split.query_fraction},
                {"retrieval_fraction", c.split.retrieval_fraction},
                {"seed", c.split.seed}};
  j["model"] = {{"hidden_dim", t.model.hidden_dim},
                {"code_length", t.model.code_length},
                {"image_layers", t.model.image_layers},
                {"text_layers", t.model.text_layers}};
  j["train"] = {{"learning_rate", t.learning_rate},
                {"batch_size", t.batch_size},
                {"epochs", t.epochs},
                {"warmup_epochs", t.warmup_epochs},
                {"alpha", t.alpha},
                {"beta", t.beta},
                {"gamma", t.gamma},
                {"xi", t.xi},
                {"xi_repulsion", t.xi_repulsion ? json(*t.xi_repulsion) : json(nullptr)},
                {"margin", t.margin},
                {"neighbors", t.neighbors},
                {"seed", t.seed},
                {"ablate", detail::ablation_names(t.ablation)},
                {"neighbor_space", t.neighbor_space == NeighborSpace::raw ? "raw" : "codes"},
                {"similarity_scaling",
                 t.similarity_scaling == SimilarityScaling::raw ? "raw" : "mean"}};
  j["eval"] = {{"map_at", c.eval.map_at},
               {"pr_mode", c.eval.pr_mode == PrMode::radius ? "radius" : "rank"},
               {"track_best", c.eval.track_best}};
  j["diagnose"] = {{"sample_count", c.diagnose.sample_count}, {"seed", c.diagnose.seed}};
  j["dataset"] = c.dataset;
  j["output_dir"] = c.output_dir;
  return j;
}

inline ExperimentConfig from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  detail::ObjectReader root(j, "config");
  root.get("dataset", c.dataset);
  root.get("output_dir", c.output_dir);

  if (const auto* s = root.sub("synthetic")) {
    detail::ObjectReader r(*s, "synthetic");
    auto& x = c.synthetic;
    r.get("n", x.n);
    r.get("num_classes", x.num_classes);
    r.get("image_dim", x.image_dim);
    r.get("text_dim", x.text_dim);
    r.get("min_labels", x.min_labels);
    r.get("max_labels", x.max_labels);
    r.get("separation", x.separation);
    r.get("noise_std", x.noise_std);
    r.get("correlation", x.correlation);
    r.get("seed", x.seed);
    r.finish();
  }
  if (const auto* s = root.sub("noise")) {
    detail::ObjectReader r(*s, "noise");
    r.get("rate", c.noise.rate);
    r.get("seed", c.noise.seed);
    r.get("scheme", c.noise.scheme);
    r.finish();
  }
  if (const auto* s = root.sub("split")) {
    detail::ObjectReader r(*s, "split");
    r.get("query_fraction", c.split.query_fraction);
    r.get("retrieval_fraction", c.split.retrieval_fraction);
    r.get("seed", c.split.seed);
    r.finish();
  }
  if (const auto* s = root.sub("model")) {
    detail::ObjectReader r(*s, "model");
    auto& m = c.train.model;
    r.get("hidden_dim", m.hidden_dim);
    r.get("code_length", m.code_length);
    r.get("image_layers", m.image_layers);
    r.get("text_layers", m.text_layers);
    r.finish();
  }
  if (const auto* s = root.sub("train")) {
    detail::ObjectReader r(*s, "train");
    auto& t = c.train;
    r.get("learning_rate", t.learning_rate);
    r.get("batch_size", t.batch_size);
    r.get("epochs", t.epochs);
    r.get("warmup_epochs", t.warmup_epochs);
    r.get("alpha", t.alpha);
    r.get("beta", t.beta);
    r.get("gamma", t.gamma);
    r.get("xi", t.xi);
    if (const auto* xr = r.sub("xi_repulsion"); xr && !xr->is_null()) {
      if (!xr->is_number()) throw ConfigError("train.xi_repulsion: wrong type or value");
      t.xi_repulsion = xr->get<double>();
    }
    r.get("margin", t.margin);
    r.get("neighbors", t.neighbors);
    r.get("seed", t.seed);
    if (const auto* ab = r.sub("ablate")) {
      if (!ab->is_array()) throw ConfigError("train.ablate: expected an array of names");
      for (const auto& name : *ab) {
        if (!name.is_string()) throw ConfigError("train.ablate: expected strings");
        apply_ablation(t.ablation, name.get<std::string>());
      }
    }
    std::string space = "codes", scaling = "mean";
    r.get("neighbor_space", space);
    r.get("similarity_scaling", scaling);
    if (space != "codes" && space != "raw") {
      throw ConfigError("train.neighbor_space: expected 'codes' or 'raw'");
    }
    if (scaling != "mean" && scaling != "raw") {
      throw ConfigError("train.similarity_scaling: expected 'mean' or 'raw'");
    }
    t.neighbor_space = space == "raw" ? NeighborSpace::raw : NeighborSpace::codes;
    t.similarity_scaling = scaling == "raw" ? SimilarityScaling::raw : SimilarityScaling::mean;
    r.finish();
  }
  if (const auto* s = root.sub("eval")) {
    detail::ObjectReader r(*s, "eval");
    r.get("map_at", c.eval.map_at);
    std::string mode = "rank";
    r.get("pr_mode", mode);
    if (mode != "rank" && mode != "radius") throw ConfigError("eval.pr_mode: expected 'rank' or 'radius'");
    c.eval.pr_mode = mode == "radius" ? PrMode::radius : PrMode::rank;
    r.get("track_best", c.eval.track_best);
    r.finish();
  }
  if (const auto* s = root.sub("diagnose")) {
    detail::ObjectReader r(*s, "diagnose");
    r.get("sample_count", c.diagnose.sample_count);
    r.get("seed", c.diagnose.seed);
    r.finish();
  }
  root.finish();
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config: " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
  return from_json(j);
}

inline void save_config(const ExperimentConfig& c, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << to_json(c).dump(2) << '\n';
  if (!os) throw IoError("failed writing: " + path);
}

// Sets every seed field (data, noise, split, init, diagnose) to `seed`.
inline void set_all_seeds(ExperimentConfig& c, std::uint64_t seed) {
  c.synthetic.seed = seed;
  c.noise.seed = seed;
  c.split.seed = seed;
  c.train.seed = seed;
  c.diagnose.seed = seed;
}

}  // namespace scbch
