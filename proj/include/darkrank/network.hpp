#pragma once

// Feed-forward embedding network: hidden layers -> fully connected feature
// layer -> L2 normalization (embedding head). The classification head reads
// the pre-normalization features.

#include "darkrank/errors.hpp"
#include "darkrank/linalg.hpp"
#include "darkrank/losses.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace darkrank {

enum class Activation { relu, tanh };

inline std::string_view to_string(Activation a) {
  return a == Activation::relu ? "relu" : "tanh";
}

inline Activation activation_from_string(std::string_view s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  throw InputError("unknown activation '" + std::string(s) + "'");
}

struct NetworkSpec {
  std::size_t input_dim = 1;
  std::vector<std::size_t> hidden_layers;
  std::size_t embed_dim = 1;
  std::size_t num_classes = 1;
  Activation activation = Activation::relu;
  std::uint64_t seed = 0;

  void validate() const {
    if (input_dim < 1) throw InputError("input_dim must be >= 1");
    if (embed_dim < 1) throw InputError("embed_dim must be >= 1");
    if (num_classes < 1) throw InputError("num_classes must be >= 1");
    for (std::size_t w : hidden_layers) {
      if (w < 1) throw InputError("hidden layer widths must be >= 1");
    }
  }

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

/// y = x W^T + b for row-major sample rows.
struct Dense {
  Matrix weight;  // out x in
  RowVector bias;  // 1 x out

  Eigen::Index in() const noexcept { return weight.cols(); }
  Eigen::Index out() const noexcept { return weight.rows(); }

  Matrix apply(const Matrix& x) const {
    Matrix y = x * weight.transpose();
    y.rowwise() += bias;
    return y;
  }

  friend bool operator==(const Dense& a, const Dense& b) {
    return a.weight.rows() == b.weight.rows() && a.weight.cols() == b.weight.cols() &&
           a.weight == b.weight && a.bias == b.bias;
  }
};

using LayerStack = std::vector<Dense>;

/// Layers are ordered hidden..., feature (embedding FC), classifier.
struct NetworkState {
  NetworkSpec spec;
  LayerStack layers;

  const Dense& feature_layer() const { return layers[spec.hidden_layers.size()]; }
  const Dense& classifier() const { return layers.back(); }

  friend bool operator==(const NetworkState&, const NetworkState&) = default;
};

/// Unit-norm embedding rows; row 0 is the anchor query when used as a batch.
struct EmbeddingBatch {
  Matrix embeddings;
  std::vector<int> labels;

  Eigen::Index rows() const noexcept { return embeddings.rows(); }

  void validate(double tol = 1e-6) const {
    for (Eigen::Index i = 0; i < embeddings.rows(); ++i) {
      if (std::abs(embeddings.row(i).norm() - 1.0) > tol) {
        throw InputError("embedding row " + std::to_string(i) + " is not unit norm");
      }
    }
  }
};

/// Intermediates retained by forward() for backward().
struct Tape {
  Matrix input;
  std::vector<Matrix> pre_activation;
  std::vector<Matrix> activation;
  Matrix features;  // pre-normalization
  Vector norms;
  Matrix embeddings;
};

struct ForwardResult {
  EmbeddingBatch embeddings;
  LogitsBatch logits;
  Tape tape;
};

inline constexpr double kMinFeatureNorm = 1e-12;

namespace detail {

inline Matrix activate(const Matrix& a, Activation act) {
  if (act == Activation::relu) return a.cwiseMax(0.0);
  return a.array().tanh().matrix();
}

// d act / d a, evaluated from the pre-activation and its output.
inline Matrix activation_slope(const Matrix& pre, const Matrix& post, Activation act) {
  if (act == Activation::relu) return (pre.array() > 0.0).cast<double>().matrix();
  return (1.0 - post.array().square()).matrix();
}

inline void check_shape(const Matrix& m, Eigen::Index rows, Eigen::Index cols, const char* what) {
  if (m.rows() != rows || m.cols() != cols) {
    throw InputError(std::string(what) + " has shape " + std::to_string(m.rows()) + "x" +
                     std::to_string(m.cols()) + ", expected " + std::to_string(rows) + "x" +
                     std::to_string(cols));
  }
}

}  // namespace detail

inline Dense init_dense(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const double scale = 1.0 / std::sqrt(static_cast<double>(in));
  Dense d;
  d.weight.resize(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
  for (Eigen::Index r = 0; r < d.weight.rows(); ++r) {
    for (Eigen::Index c = 0; c < d.weight.cols(); ++c) d.weight(r, c) = normal(rng) * scale;
  }
  d.bias = RowVector::Zero(static_cast<Eigen::Index>(out));
  return d;
}

/// Deterministic in spec.seed; weights ~ N(0, 1/fan_in), biases zero.
inline NetworkState init(const NetworkSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  NetworkState state{spec, {}};
  std::size_t fan_in = spec.input_dim;
  for (std::size_t width : spec.hidden_layers) {
    state.layers.push_back(init_dense(fan_in, width, rng));
    fan_in = width;
  }
  state.layers.push_back(init_dense(fan_in, spec.embed_dim, rng));
  state.layers.push_back(init_dense(spec.embed_dim, spec.num_classes, rng));
  return state;
}

inline ForwardResult forward(const NetworkState& state, const Matrix& inputs) {
  if (inputs.cols() != static_cast<Eigen::Index>(state.spec.input_dim)) {
    throw InputError("input dimension " + std::to_string(inputs.cols()) +
                     " does not match network input_dim " +
                     std::to_string(state.spec.input_dim));
  }
  ForwardResult out;
  Tape& tape = out.tape;
  tape.input = inputs;
  const std::size_t depth = state.spec.hidden_layers.size();
  const Matrix* h = &tape.input;
  for (std::size_t l = 0; l < depth; ++l) {
    tape.pre_activation.push_back(state.layers[l].apply(*h));
    tape.activation.push_back(detail::activate(tape.pre_activation.back(), state.spec.activation));
    h = &tape.activation.back();
  }
  tape.features = state.feature_layer().apply(*h);
  tape.norms = tape.features.rowwise().norm();
  for (Eigen::Index i = 0; i < tape.norms.size(); ++i) {
    if (!(tape.norms(i) >= kMinFeatureNorm)) {
      throw NumericalError("feature row " + std::to_string(i) +
                           " collapsed to zero norm before L2 normalization");
    }
  }
  tape.embeddings = tape.norms.cwiseInverse().asDiagonal() * tape.features;
  out.embeddings.embeddings = tape.embeddings;
  out.logits.logits = state.classifier().apply(tape.features);
  return out;
}

/// Backpropagates through u = z / ||z||: (I - u u^T) g / ||z|| per row.
inline Matrix l2_normalize_backward(const Matrix& embeddings, const Vector& norms,
                                    const Matrix& upstream) {
  const Vector radial = (embeddings.array() * upstream.array()).rowwise().sum();
  Matrix tangent = upstream - radial.asDiagonal() * embeddings;
  return norms.cwiseInverse().asDiagonal() * tangent;
}

/// Exact reverse-mode parameter gradients, same layout as state.layers.
inline LayerStack backward(const NetworkState& state, const Tape& tape,
                           const Matrix& embedding_grads, const Matrix& logit_grads) {
  const Eigen::Index n = tape.input.rows();
  detail::check_shape(embedding_grads, n, static_cast<Eigen::Index>(state.spec.embed_dim),
                      "embedding gradient");
  detail::check_shape(logit_grads, n, static_cast<Eigen::Index>(state.spec.num_classes),
                      "logit gradient");
  const std::size_t depth = state.spec.hidden_layers.size();
  LayerStack grads(state.layers.size());

  Dense& gc = grads.back();
  gc.weight = logit_grads.transpose() * tape.features;
  gc.bias = logit_grads.colwise().sum();

  Matrix dz = logit_grads * state.classifier().weight;
  dz += l2_normalize_backward(tape.embeddings, tape.norms, embedding_grads);

  const Matrix& below = depth == 0 ? tape.input : tape.activation.back();
  grads[depth].weight = dz.transpose() * below;
  grads[depth].bias = dz.colwise().sum();
  Matrix dh = dz * state.feature_layer().weight;

  for (std::size_t l = depth; l-- > 0;) {
    const Matrix da =
        (dh.array() * detail::activation_slope(tape.pre_activation[l], tape.activation[l],
                                               state.spec.activation)
                          .array())
            .matrix();
    const Matrix& prev = l == 0 ? tape.input : tape.activation[l - 1];
    grads[l].weight = da.transpose() * prev;
    grads[l].bias = da.colwise().sum();
    if (l > 0) dh = da * state.layers[l].weight;
  }
  return grads;
}

inline std::size_t parameter_count(const LayerStack& layers) {
  std::size_t n = 0;
  for (const Dense& d : layers) n += static_cast<std::size_t>(d.weight.size() + d.bias.size());
  return n;
}

/// Weights (row-major) then bias, layer by layer.
inline std::vector<double> flatten(const LayerStack& layers) {
  std::vector<double> out;
  out.reserve(parameter_count(layers));
  for (const Dense& d : layers) {
    out.insert(out.end(), d.weight.data(), d.weight.data() + d.weight.size());
    out.insert(out.end(), d.bias.data(), d.bias.data() + d.bias.size());
  }
  return out;
}

inline void unflatten(std::span<const double> flat, LayerStack& layers) {
  if (flat.size() != parameter_count(layers)) {
    throw InputError("flat parameter vector has the wrong length");
  }
  std::size_t pos = 0;
  for (Dense& d : layers) {
    std::copy_n(flat.data() + pos, d.weight.size(), d.weight.data());
    pos += static_cast<std::size_t>(d.weight.size());
    std::copy_n(flat.data() + pos, d.bias.size(), d.bias.data());
    pos += static_cast<std::size_t>(d.bias.size());
  }
}

}  // namespace darkrank
