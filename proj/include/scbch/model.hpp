#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "scbch/error.hpp"
#include "scbch/ndmath/autodiff.hpp"
#include "scbch/ndmath/matrix.hpp"

namespace scbch {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

enum class Modality { image, text };

inline const char* modality_name(Modality m) {
  return m == Modality::image ? "image" : "text";
}

// One modality's hash network: num_layers fully connected layers,
// ReLU on hidden layers, tanh on the L-dimensional output.
struct BranchConfig {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 256;
  std::size_t code_length = 16;
  std::size_t num_layers = 1;

  void validate(const char* which = "branch") const {
    const std::string w(which);
    if (input_dim == 0) throw SpecError(w + ": input_dim must be positive");
    if (num_layers < 1) throw SpecError(w + ": num_layers must be >= 1");
    if (code_length < 8) throw SpecError(w + ": code_length must be >= 8");
    if (hidden_dim < code_length) throw SpecError(w + ": hidden_dim must be >= code_length");
  }

  friend bool operator==(const BranchConfig&, const BranchConfig&) = default;
};

struct DenseLayer {
  nd::Matrix weight;  // in x out
  nd::Matrix bias;    // 1 x out

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

struct HashModel {
  BranchConfig image_config;
  BranchConfig text_config;
  std::size_t num_classes = 0;
  std::vector<DenseLayer> image_layers;
  std::vector<DenseLayer> text_layers;
  DenseLayer image_classifier;  // L x C
  DenseLayer text_classifier;

  std::size_t code_length() const { return image_config.code_length; }

  const BranchConfig& config(Modality m) const {
    return m == Modality::image ? image_config : text_config;
  }
  const std::vector<DenseLayer>& layers(Modality m) const {
    return m == Modality::image ? image_layers : text_layers;
  }
  const DenseLayer& classifier(Modality m) const {
    return m == Modality::image ? image_classifier : text_classifier;
  }

  // Canonical parameter order shared by the optimizer, the taped binding
  // and the checkpoint format.
  std::vector<nd::Matrix*> parameters() {
    std::vector<nd::Matrix*> out;
    for (auto* branch : {&image_layers, &text_layers})
      for (auto& l : *branch) {
        out.push_back(&l.weight);
        out.push_back(&l.bias);
      }
    for (auto* c : {&image_classifier, &text_classifier}) {
      out.push_back(&c->weight);
      out.push_back(&c->bias);
    }
    return out;
  }
  std::vector<const nd::Matrix*> parameters() const {
    auto ps = const_cast<HashModel*>(this)->parameters();
    return {ps.begin(), ps.end()};
  }

  std::vector<std::string> parameter_names() const {
    std::vector<std::string> out;
    const std::pair<const char*, const std::vector<DenseLayer>*> branches[] = {
        {"image", &image_layers}, {"text", &text_layers}};
    for (const auto& [name, ls] : branches)
      for (std::size_t i = 0; i < ls->size(); ++i) {
        out.push_back(std::string(name) + ".fc" + std::to_string(i) + ".weight");
        out.push_back(std::string(name) + ".fc" + std::to_string(i) + ".bias");
      }
    for (const char* name : {"image", "text"}) {
      out.push_back(std::string(name) + ".classifier.weight");
      out.push_back(std::string(name) + ".classifier.bias");
    }
    return out;
  }

  friend bool operator==(const HashModel&, const HashModel&) = default;
};

// Glorot-uniform weights, zero biases. Deterministic in seed.
inline HashModel init_parameters(const BranchConfig& image, const BranchConfig& text,
                                 std::size_t num_classes, std::uint64_t seed) {
  image.validate("image branch");
  text.validate("text branch");
  if (image.code_length != text.code_length) {
    throw SpecError("image and text branches must share code_length");
  }
  if (num_classes == 0) throw SpecError("num_classes must be positive");

  std::mt19937_64 rng(seed);
  auto dense = [&rng](std::size_t in, std::size_t out) {
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> u(-limit, limit);
    DenseLayer l{nd::Matrix(in, out), nd::Matrix(1, out)};
    for (double& v : l.weight.values()) v = u(rng);
    return l;
  };
  auto branch = [&dense](const BranchConfig& c) {
    std::vector<DenseLayer> ls;
    std::size_t in = c.input_dim;
    for (std::size_t i = 0; i < c.num_layers; ++i) {
      const std::size_t out = (i + 1 == c.num_layers) ? c.code_length : c.hidden_dim;
      ls.push_back(dense(in, out));
      in = out;
    }
    return ls;
  };

  HashModel m;
  m.image_config = image;
  m.text_config = text;
  m.num_classes = num_classes;
  m.image_layers = branch(image);
  m.text_layers = branch(text);
  m.image_classifier = dense(image.code_length, num_classes);
  m.text_classifier = dense(text.code_length, num_classes);
  return m;
}

namespace detail {

template <class T>
struct Dense {
  T weight;
  T bias;
};

template <class T>
T run_branch(const std::vector<Dense<T>>& layers, T x) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    T pre = nd::add_row(nd::matmul(x, layers[i].weight), layers[i].bias);
    x = (i + 1 == layers.size()) ? nd::tanh(pre) : nd::relu(pre);
  }
  return x;
}

template <class T>
T run_classifier(const Dense<T>& c, const T& h) {
  return nd::sigmoid(nd::add_row(nd::matmul(h, c.weight), c.bias));
}

inline void check_features(const HashModel& m, Modality mod, const nd::Matrix& x) {
  const std::size_t want = m.config(mod).input_dim;
  if (x.cols() != want) {
    throw ShapeError(std::string("forward(") + modality_name(mod) + "): feature width " +
                     std::to_string(x.cols()) + " != input_dim " + std::to_string(want));
  }
}

inline void check_codes(const HashModel& m, const nd::Matrix& h) {
  if (h.cols() != m.code_length()) {
    throw ShapeError("classify: code width " + std::to_string(h.cols()) +
                     " != code_length " + std::to_string(m.code_length()));
  }
}

inline std::vector<Dense<nd::Matrix>> as_dense(const std::vector<DenseLayer>& ls) {
  std::vector<Dense<nd::Matrix>> out;
  for (const auto& l : ls) out.push_back({l.weight, l.bias});
  return out;
}

}  // namespace detail

// Continuous codes h = tanh(f(x)), one row per sample.
inline nd::Matrix forward(const HashModel& model, Modality mod, const nd::Matrix& x) {
  detail::check_features(model, mod, x);
  return detail::run_branch(detail::as_dense(model.layers(mod)), x);
}

// Per-class probabilities z = sigmoid(h W + b).
inline nd::Matrix classify(const HashModel& model, Modality mod, const nd::Matrix& h) {
  detail::check_codes(model, h);
  const DenseLayer& c = model.classifier(mod);
  return detail::run_classifier(detail::Dense<nd::Matrix>{c.weight, c.bias}, h);
}

// All model parameters registered as leaves on one tape, in the canonical
// parameters() order.
class TapedModel {
 public:
  TapedModel(nd::Tape& tape, const HashModel& model) : tape_(&tape), model_(&model) {
    auto bind = [&tape](const DenseLayer& l) {
      return detail::Dense<nd::Var>{tape.variable(l.weight), tape.variable(l.bias)};
    };
    for (const auto& l : model.image_layers) image_.push_back(bind(l));
    for (const auto& l : model.text_layers) text_.push_back(bind(l));
    image_cls_ = bind(model.image_classifier);
    text_cls_ = bind(model.text_classifier);
  }

  nd::Var forward(Modality mod, const nd::Matrix& x) const {
    detail::check_features(*model_, mod, x);
    return detail::run_branch(mod == Modality::image ? image_ : text_,
                              tape_->constant(x));
  }

  nd::Var classify(Modality mod, nd::Var h) const {
    detail::check_codes(*model_, h.value());
    return detail::run_classifier(mod == Modality::image ? image_cls_ : text_cls_, h);
  }

  // Valid after tape.backward(); same order as HashModel::parameters().
  std::vector<nd::Matrix> gradients() const {
    std::vector<nd::Matrix> out;
    for (const auto* branch : {&image_, &text_})
      for (const auto& l : *branch) {
        out.push_back(l.weight.grad());
        out.push_back(l.bias.grad());
      }
    for (const auto* c : {&image_cls_, &text_cls_}) {
      out.push_back(c->weight.grad());
      out.push_back(c->bias.grad());
    }
    return out;
  }

 private:
  nd::Tape* tape_;
  const HashModel* model_;
  std::vector<detail::Dense<nd::Var>> image_;
  std::vector<detail::Dense<nd::Var>> text_;
  detail::Dense<nd::Var> image_cls_;
  detail::Dense<nd::Var> text_cls_;
};

// ---------------------------------------------------------------------------
// Checkpoint: "SCBCHMDL", u32 version, 9 x u64 header fields, then every
// parameter as (u64 rows, u64 cols, rows*cols little-endian doubles).
// ---------------------------------------------------------------------------

inline constexpr std::array<char, 8> kCheckpointMagic = {'S', 'C', 'B', 'C', 'H', 'M', 'D', 'L'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <class T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is, const std::string& what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw ParseError("checkpoint: truncated while reading " + what);
  return v;
}

}  // namespace detail

inline void save_checkpoint(const HashModel& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  os.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  detail::write_pod(os, kCheckpointVersion);
  for (const BranchConfig* c : {&model.image_config, &model.text_config}) {
    for (std::uint64_t v : {c->input_dim, c->hidden_dim, c->code_length, c->num_layers})
      detail::write_pod(os, v);
  }
  detail::write_pod(os, static_cast<std::uint64_t>(model.num_classes));
  for (const nd::Matrix* p : model.parameters()) {
    detail::write_pod(os, static_cast<std::uint64_t>(p->rows()));
    detail::write_pod(os, static_cast<std::uint64_t>(p->cols()));
    os.write(reinterpret_cast<const char*>(p->data()),
             static_cast<std::streamsize>(p->size() * sizeof(double)));
  }
  if (!os) throw IoError("failed writing checkpoint: " + path);
}

inline HashModel load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kCheckpointMagic) throw ParseError("checkpoint: bad magic in " + path);
  const auto version = detail::read_pod<std::uint32_t>(is, "version");
  if (version != kCheckpointVersion) {
    throw ParseError("checkpoint: unsupported version " + std::to_string(version));
  }
  auto read_branch = [&is](const char* name) {
    BranchConfig c;
    c.input_dim = detail::read_pod<std::uint64_t>(is, std::string(name) + ".input_dim");
    c.hidden_dim = detail::read_pod<std::uint64_t>(is, std::string(name) + ".hidden_dim");
    c.code_length = detail::read_pod<std::uint64_t>(is, std::string(name) + ".code_length");
    c.num_layers = detail::read_pod<std::uint64_t>(is, std::string(name) + ".num_layers");
    c.validate(name);
    return c;
  };
  const BranchConfig image = read_branch("image");
  const BranchConfig text = read_branch("text");
  const auto classes = detail::read_pod<std::uint64_t>(is, "num_classes");

  // Builds the parameter shapes, then overwrites values from the file.
  HashModel model = init_parameters(image, text, classes, 0);
  const auto names = model.parameter_names();
  auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto rows = detail::read_pod<std::uint64_t>(is, names[i] + ".rows");
    const auto cols = detail::read_pod<std::uint64_t>(is, names[i] + ".cols");
    if (rows != params[i]->rows() || cols != params[i]->cols()) {
      throw ParseError("checkpoint: " + names[i] + " has shape " + std::to_string(rows) +
                       "x" + std::to_string(cols) + ", expected " + params[i]->shape_str());
    }
    is.read(reinterpret_cast<char*>(params[i]->data()),
            static_cast<std::streamsize>(params[i]->size() * sizeof(double)));
    if (!is) throw ParseError("checkpoint: truncated in " + names[i]);
  }
  return model;
}

}  // namespace scbch
