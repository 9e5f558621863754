#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "scbch/error.hpp"
#include "scbch/losses.hpp"
#include "scbch/ndmath/matrix.hpp"

namespace scbch {

enum class Split : std::uint8_t { train, query, retrieval };

inline double row_cardinality(const LabelMatrix& labels, std::size_t i) {
  double k = 0.0;
  for (double v : labels.row(i)) k += v;
  return k;
}

struct MultimodalDataset {
  nd::Matrix image_features;  // n x D1
  nd::Matrix text_features;   // n x D2
  LabelMatrix clean_labels;   // n x C
  std::optional<LabelMatrix> noisy_labels;
  std::vector<bool> noise_mask;  // n entries; only train rows can be set
  std::vector<Split> splits;     // n entries

  std::size_t size() const { return clean_labels.rows(); }
  std::size_t num_classes() const { return clean_labels.cols(); }
  std::size_t image_dim() const { return image_features.cols(); }
  std::size_t text_dim() const { return text_features.cols(); }

  // Labels the trainer sees: noisy when noise was injected, clean otherwise.
  const LabelMatrix& training_labels() const {
    return noisy_labels ? *noisy_labels : clean_labels;
  }

  std::vector<std::size_t> indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < splits.size(); ++i)
      if (splits[i] == s) out.push_back(i);
    return out;
  }

  void validate() const {
    const std::size_t n = size();
    if (n == 0) throw SpecError("dataset: no samples");
    if (image_features.rows() != n || text_features.rows() != n) {
      throw SpecError("dataset: feature row counts differ from label rows");
    }
    if (noise_mask.size() != n || splits.size() != n) {
      throw SpecError("dataset: mask/split length differs from sample count");
    }
    if (!nd::all_finite(image_features) || !nd::all_finite(text_features)) {
      throw SpecError("dataset: non-finite feature value");
    }
    for (std::size_t i = 0; i < n; ++i) {
      double active = 0.0;
      for (double v : clean_labels.row(i)) {
        if (v != 0.0 && v != 1.0) throw SpecError("dataset: label not in {0,1}");
        active += v;
      }
      if (active < 1.0) {
        throw SpecError("dataset: sample " + std::to_string(i) + " has no active label");
      }
      if (noise_mask[i] && splits[i] != Split::train) {
        throw SpecError("dataset: noise on non-train sample " + std::to_string(i));
      }
    }
    if (noisy_labels) nd::require_same_shape(*noisy_labels, clean_labels, "noisy labels");
  }
};

inline MultimodalDataset make_dataset(nd::Matrix image, nd::Matrix text, LabelMatrix labels) {
  MultimodalDataset d;
  const std::size_t n = labels.rows();
  d.image_features = std::move(image);
  d.text_features = std::move(text);
  d.clean_labels = std::move(labels);
  d.noise_mask.assign(n, false);
  d.splits.assign(n, Split::train);
  d.validate();
  return d;
}

// ---------------------------------------------------------------------------
// Synthetic generation
// ---------------------------------------------------------------------------

struct SyntheticSpec {
  std::size_t n = 2000;
  std::size_t num_classes = 10;
  std::size_t image_dim = 64;
  std::size_t text_dim = 32;
  std::size_t min_labels = 1;
  std::size_t max_labels = 3;
  double separation = 1.0;
  double noise_std = 1.0;
  double correlation = 0.8;
  std::uint64_t seed = 0;

  friend bool operator==(const SyntheticSpec&, const SyntheticSpec&) = default;

  void validate() const {
    if (n == 0 || num_classes == 0 || image_dim == 0 || text_dim == 0) {
      throw SpecError("synthetic: counts and dims must be positive");
    }
    if (min_labels < 1) throw SpecError("synthetic: min_labels must be >= 1");
    if (max_labels < min_labels) throw SpecError("synthetic: max_labels < min_labels");
    if (max_labels > num_classes) {
      throw SpecError("synthetic: max_labels " + std::to_string(max_labels) +
                      " exceeds num_classes " + std::to_string(num_classes));
    }
    if (separation < 0.0 || noise_std < 0.0) throw SpecError("synthetic: negative scale");
    if (correlation < 0.0 || correlation > 1.0) {
      throw SpecError("synthetic: correlation outside [0,1]");
    }
  }
};

namespace detail {

// k distinct classes from [0, c), uniformly.
inline std::vector<std::size_t> draw_classes(std::mt19937_64& rng, std::size_t c,
                                             std::size_t k) {
  std::vector<std::size_t> pool(c);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, c - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(k);
  return pool;
}

}  // namespace detail

// Features are additive mixtures of per-class prototypes plus Gaussian noise.
// The text view mixes its label-driven signal with an independent draw at
// weight (1 - correlation).
inline MultimodalDataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> cardinality(spec.min_labels, spec.max_labels);

  const std::size_t c = spec.num_classes;
  nd::Matrix proto_image(c, spec.image_dim), proto_text(c, spec.text_dim);
  for (double& v : proto_image.values()) v = spec.separation * gauss(rng);
  for (double& v : proto_text.values()) v = spec.separation * gauss(rng);

  nd::Matrix image(spec.n, spec.image_dim), text(spec.n, spec.text_dim);
  LabelMatrix labels(spec.n, c);
  auto mix = [&](std::span<double> out, const nd::Matrix& protos,
                 const std::vector<std::size_t>& classes, double weight) {
    for (std::size_t cls : classes) {
      auto p = protos.row(cls);
      for (std::size_t d = 0; d < out.size(); ++d) out[d] += weight * p[d];
    }
    for (double& v : out) v += weight * spec.noise_std * gauss(rng);
  };

  for (std::size_t i = 0; i < spec.n; ++i) {
    const auto classes = detail::draw_classes(rng, c, cardinality(rng));
    for (std::size_t cls : classes) labels(i, cls) = 1.0;
    mix(image.row(i), proto_image, classes, 1.0);
    mix(text.row(i), proto_text, classes, spec.correlation);
    const auto unrelated = detail::draw_classes(rng, c, cardinality(rng));
    mix(text.row(i), proto_text, unrelated, 1.0 - spec.correlation);
  }
  return make_dataset(std::move(image), std::move(text), std::move(labels));
}

// ---------------------------------------------------------------------------
// Label noise
// ---------------------------------------------------------------------------

struct NoiseSpec {
  double rate = 0.0;
  std::uint64_t seed = 0;
  std::string scheme = "symmetric-instance";

  friend bool operator==(const NoiseSpec&, const NoiseSpec&) = default;

  void validate() const {
    if (!(rate >= 0.0 && rate <= 1.0)) throw SpecError("noise: rate outside [0,1]");
    if (scheme != "symmetric-instance") throw SpecError("noise: unknown scheme '" + scheme + "'");
  }
};

struct NoisyLabels {
  LabelMatrix labels;
  std::vector<bool> mask;
};

// Corrupts exactly round(rate * |eligible|) rows chosen uniformly from
// `eligible`. Each active label of a chosen row moves to a different class,
// cardinality is preserved and the row is guaranteed to change.
inline NoisyLabels inject_noise(const LabelMatrix& labels,
                                std::span<const std::size_t> eligible,
                                const NoiseSpec& spec) {
  spec.validate();
  const std::size_t c = labels.cols();
  NoisyLabels out{labels, std::vector<bool>(labels.rows(), false)};
  const auto count =
      static_cast<std::size_t>(std::llround(spec.rate * static_cast<double>(eligible.size())));
  if (count == 0) return out;

  std::vector<std::size_t> candidates;
  for (std::size_t i : eligible) {
    if (i >= labels.rows()) throw ShapeError("inject_noise: eligible row out of range");
    const double k = row_cardinality(labels, i);
    if (k >= 1.0 && k < static_cast<double>(c)) candidates.push_back(i);
  }
  if (candidates.size() < count) {
    throw SpecError("inject_noise: only " + std::to_string(candidates.size()) +
                    " rows can be corrupted, " + std::to_string(count) + " requested");
  }

  std::mt19937_64 rng(spec.seed);
  std::shuffle(candidates.begin(), candidates.end(), rng);
  candidates.resize(count);
  std::sort(candidates.begin(), candidates.end());

  for (std::size_t i : candidates) {
    std::vector<std::size_t> original;
    for (std::size_t cls = 0; cls < c; ++cls)
      if (labels(i, cls) == 1.0) original.push_back(cls);

    std::vector<std::size_t> replaced;
    for (int attempt = 0; attempt < 1000; ++attempt) {
      replaced.clear();
      for (std::size_t o : original) {
        std::vector<std::size_t> choices;
        for (std::size_t cls = 0; cls < c; ++cls) {
          if (cls != o && std::find(replaced.begin(), replaced.end(), cls) == replaced.end())
            choices.push_back(cls);
        }
        std::uniform_int_distribution<std::size_t> pick(0, choices.size() - 1);
        replaced.push_back(choices[pick(rng)]);
      }
      std::sort(replaced.begin(), replaced.end());
      if (replaced != original) break;
    }
    if (replaced == original) {
      // Unreachable in practice; move the first label to the lowest free class.
      for (std::size_t cls = 0; cls < c; ++cls)
        if (std::find(original.begin(), original.end(), cls) == original.end()) {
          replaced[0] = cls;
          break;
        }
    }
    for (std::size_t cls = 0; cls < c; ++cls) out.labels(i, cls) = 0.0;
    for (std::size_t cls : replaced) out.labels(i, cls) = 1.0;
    out.mask[i] = true;
  }
  return out;
}

// Injects noise into the train split of `d`. Clean labels are untouched.
inline MultimodalDataset apply_noise(MultimodalDataset d, const NoiseSpec& spec) {
  const auto train = d.indices(Split::train);
  auto noisy = inject_noise(d.clean_labels, train, spec);
  d.noisy_labels = std::move(noisy.labels);
  d.noise_mask = std::move(noisy.mask);
  return d;
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

// round(q*n) query rows, round(r*n) retrieval rows, the rest train.
inline MultimodalDataset split(MultimodalDataset d, double query_fraction,
                               double retrieval_fraction, std::uint64_t seed) {
  if (!(query_fraction > 0.0) || !(retrieval_fraction > 0.0)) {
    throw SpecError("split: fractions must be positive");
  }
  if (query_fraction + retrieval_fraction > 1.0 + 1e-12) {
    throw SpecError("split: query + retrieval fractions exceed 1");
  }
  if (d.noisy_labels) throw SpecError("split: dataset already carries injected noise");
  const std::size_t n = d.size();
  const auto nq = static_cast<std::size_t>(std::llround(query_fraction * static_cast<double>(n)));
  const auto nr = std::min(
      n - nq, static_cast<std::size_t>(std::llround(retrieval_fraction * static_cast<double>(n))));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t k = 0; k < n; ++k) {
    d.splits[order[k]] = k < nq ? Split::query : (k < nq + nr ? Split::retrieval : Split::train);
  }
  return d;
}

// ---------------------------------------------------------------------------
// Summary
// ---------------------------------------------------------------------------

struct DatasetSummary {
  std::size_t n = 0, num_classes = 0, image_dim = 0, text_dim = 0;
  std::map<std::size_t, std::size_t> cardinality_histogram;  // labels per row -> rows
  std::vector<std::size_t> class_counts;
};

inline DatasetSummary summarize(const MultimodalDataset& d) {
  DatasetSummary s{d.size(), d.num_classes(), d.image_dim(), d.text_dim(), {},
                   std::vector<std::size_t>(d.num_classes(), 0)};
  for (std::size_t i = 0; i < d.size(); ++i) {
    std::size_t k = 0;
    for (std::size_t c = 0; c < d.num_classes(); ++c)
      if (d.clean_labels(i, c) == 1.0) {
        ++k;
        ++s.class_counts[c];
      }
    ++s.cardinality_histogram[k];
  }
  return s;
}

// ---------------------------------------------------------------------------
// Feature files
//
// Text:   "n C D1 D2" header, then per sample
//         "<C bits> | <D1 reals> | <D2 reals>"
// Binary: "SCBD", u32 n, u16 C, u16 D1, u16 D2, u16 version, then per sample
//         C + D1 + D2 little-endian doubles (labels as 0.0 / 1.0).
// ---------------------------------------------------------------------------

enum class FeatureFormat { text, binary, automatic };

inline constexpr std::array<char, 4> kBinaryMagic = {'S', 'C', 'B', 'D'};
inline constexpr std::uint16_t kBinaryVersion = 1;

// Shortest representation that parses back to the same double.
inline std::string format_double(double v) {
  std::array<char, 32> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), end);
}

inline void save_text(const MultimodalDataset& d, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << d.size() << ' ' << d.num_classes() << ' ' << d.image_dim() << ' ' << d.text_dim()
     << '\n';
  std::string line;
  for (std::size_t i = 0; i < d.size(); ++i) {
    line.clear();
    for (std::size_t c = 0; c < d.num_classes(); ++c) {
      line += d.clean_labels(i, c) == 1.0 ? '1' : '0';
      line += ' ';
    }
    line += '|';
    for (double v : d.image_features.row(i)) (line += ' ') += format_double(v);
    line += " |";
    for (double v : d.text_features.row(i)) (line += ' ') += format_double(v);
    os << line << '\n';
  }
  if (!os) throw IoError("failed writing: " + path);
}

inline void save_binary(const MultimodalDataset& d, const std::string& path) {
  if (d.size() > UINT32_MAX || d.num_classes() > UINT16_MAX || d.image_dim() > UINT16_MAX ||
      d.text_dim() > UINT16_MAX) {
    throw SpecError("binary format: dimensions exceed header field widths");
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  os.write(kBinaryMagic.data(), kBinaryMagic.size());
  const auto n = static_cast<std::uint32_t>(d.size());
  const std::uint16_t dims[4] = {static_cast<std::uint16_t>(d.num_classes()),
                                 static_cast<std::uint16_t>(d.image_dim()),
                                 static_cast<std::uint16_t>(d.text_dim()), kBinaryVersion};
  os.write(reinterpret_cast<const char*>(&n), sizeof n);
  os.write(reinterpret_cast<const char*>(dims), sizeof dims);
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (const nd::Matrix* m : {&d.clean_labels, &d.image_features, &d.text_features}) {
      auto r = m->row(i);
      os.write(reinterpret_cast<const char*>(r.data()),
               static_cast<std::streamsize>(r.size() * sizeof(double)));
    }
  }
  if (!os) throw IoError("failed writing: " + path);
}

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < s.size() && s[i] != ' ' && s[i] != '\t' && s[i] != '\r') ++i;
    if (i > start) out.push_back(s.substr(start, i - start));
  }
  return out;
}

inline double parse_real(std::string_view tok, std::size_t line, const std::string& field) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size() || !std::isfinite(v)) {
    throw ParseError("line " + std::to_string(line) + ", field " + field + ": bad number '" +
                     std::string(tok) + "'");
  }
  return v;
}

inline std::size_t parse_count(std::string_view tok, std::size_t line, const std::string& field) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size()) {
    throw ParseError("line " + std::to_string(line) + ", field " + field + ": bad count '" +
                     std::string(tok) + "'");
  }
  return v;
}

}  // namespace detail

inline MultimodalDataset load_text(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw ParseError("line 1, field header: missing header");
  const auto head = detail::split_ws(line);
  if (head.size() != 4) throw ParseError("line 1, field header: expected 'n C D1 D2'");
  const std::size_t n = detail::parse_count(head[0], 1, "n");
  const std::size_t c = detail::parse_count(head[1], 1, "C");
  const std::size_t d1 = detail::parse_count(head[2], 1, "D1");
  const std::size_t d2 = detail::parse_count(head[3], 1, "D2");
  if (n == 0 || c == 0 || d1 == 0 || d2 == 0) {
    throw ParseError("line 1, field header: dimensions must be positive");
  }

  nd::Matrix image(n, d1), text(n, d2);
  LabelMatrix labels(n, c);
  std::size_t row = 0, lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (row == n) {
      throw ParseError("line " + std::to_string(lineno) + ": more rows than header n=" +
                       std::to_string(n));
    }
    std::vector<std::string_view> parts;
    std::string_view rest(line);
    for (std::size_t bar; (bar = rest.find('|')) != std::string_view::npos;) {
      parts.push_back(rest.substr(0, bar));
      rest = rest.substr(bar + 1);
    }
    parts.push_back(rest);
    if (parts.size() != 3) {
      throw ParseError("line " + std::to_string(lineno) + ": expected 3 '|'-separated fields, got " +
                       std::to_string(parts.size()));
    }
    const std::pair<const char*, std::size_t> fields[] = {{"labels", c}, {"image", d1}, {"text", d2}};
    for (std::size_t f = 0; f < 3; ++f) {
      const auto toks = detail::split_ws(parts[f]);
      if (toks.size() != fields[f].second) {
        throw ParseError("line " + std::to_string(lineno) + ", field " + fields[f].first +
                         ": expected " + std::to_string(fields[f].second) + " values, got " +
                         std::to_string(toks.size()));
      }
      for (std::size_t k = 0; k < toks.size(); ++k) {
        const std::string name = std::string(fields[f].first) + "[" + std::to_string(k) + "]";
        if (f == 0) {
          if (toks[k] != "0" && toks[k] != "1") {
            throw ParseError("line " + std::to_string(lineno) + ", field " + name +
                             ": label must be 0 or 1, got '" + std::string(toks[k]) + "'");
          }
          labels(row, k) = toks[k] == "1" ? 1.0 : 0.0;
        } else {
          (f == 1 ? image : text)(row, k) = detail::parse_real(toks[k], lineno, name);
        }
      }
    }
    if (row_cardinality(labels, row) < 1.0) {
      throw ParseError("line " + std::to_string(lineno) + ", field labels: no active label");
    }
    ++row;
  }
  if (row != n) {
    throw ParseError("row count: header declares n=" + std::to_string(n) + " but file has " +
                     std::to_string(row) + " rows");
  }
  return make_dataset(std::move(image), std::move(text), std::move(labels));
}

inline MultimodalDataset load_binary(std::istream& is) {
  std::array<char, 4> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kBinaryMagic) throw ParseError("binary header: bad magic");
  std::uint32_t n = 0;
  std::uint16_t dims[4] = {};
  is.read(reinterpret_cast<char*>(&n), sizeof n);
  is.read(reinterpret_cast<char*>(dims), sizeof dims);
  if (!is) throw ParseError("binary header: truncated");
  if (dims[3] != kBinaryVersion) {
    throw ParseError("binary header: unsupported version " + std::to_string(dims[3]));
  }
  const std::size_t c = dims[0], d1 = dims[1], d2 = dims[2];
  if (n == 0 || c == 0 || d1 == 0 || d2 == 0) {
    throw ParseError("binary header: dimensions must be positive");
  }
  nd::Matrix image(n, d1), text(n, d2);
  LabelMatrix labels(n, c);
  for (std::size_t i = 0; i < n; ++i) {
    for (nd::Matrix* m : {&labels, &image, &text}) {
      auto r = m->row(i);
      is.read(reinterpret_cast<char*>(r.data()),
              static_cast<std::streamsize>(r.size() * sizeof(double)));
      if (!is) {
        throw ParseError("binary row " + std::to_string(i) + ": truncated (header n=" +
                         std::to_string(n) + ")");
      }
    }
    for (std::size_t k = 0; k < c; ++k) {
      if (labels(i, k) != 0.0 && labels(i, k) != 1.0) {
        throw ParseError("binary row " + std::to_string(i) + ", field labels[" +
                         std::to_string(k) + "]: label must be 0 or 1");
      }
    }
  }
  try {
    return make_dataset(std::move(image), std::move(text), std::move(labels));
  } catch (const SpecError& e) {
    throw ParseError(std::string("binary payload: ") + e.what());
  }
}

inline FeatureFormat detect_format(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  std::array<char, 4> magic{};
  is.read(magic.data(), magic.size());
  return (is && magic == kBinaryMagic) ? FeatureFormat::binary : FeatureFormat::text;
}

inline MultimodalDataset load_features(const std::string& path,
                                       FeatureFormat format = FeatureFormat::automatic) {
  if (format == FeatureFormat::automatic) format = detect_format(path);
  std::ifstream is(path, format == FeatureFormat::binary ? std::ios::binary : std::ios::in);
  if (!is) throw IoError("cannot open: " + path);
  return format == FeatureFormat::binary ? load_binary(is) : load_text(is);
}

inline void save_features(const MultimodalDataset& d, const std::string& path,
                          FeatureFormat format) {
  if (format == FeatureFormat::binary) {
    save_binary(d, path);
  } else {
    save_text(d, path);
  }
}

}  // namespace scbch
