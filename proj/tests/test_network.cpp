#include "darkrank/checkpoint.hpp"
#include "darkrank/network.hpp"
#include "darkrank/oracle.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <random>

namespace darkrank {
namespace {

NetworkSpec small_spec(std::vector<std::size_t> hidden = {6, 5}, Activation act = Activation::tanh) {
  NetworkSpec spec;
  spec.input_dim = 4;
  spec.hidden_layers = std::move(hidden);
  spec.embed_dim = 3;
  spec.num_classes = 5;
  spec.activation = act;
  spec.seed = 42;
  return spec;
}

TEST(Init, SameSeedIsBitwiseIdentical) {
  EXPECT_EQ(init(small_spec()), init(small_spec()));
  NetworkSpec other = small_spec();
  other.seed = 43;
  EXPECT_FALSE(init(small_spec()) == init(other));
}

TEST(Init, ShapesAndZeroBiases) {
  const NetworkState net = init(small_spec());
  ASSERT_EQ(net.layers.size(), 4u);
  EXPECT_EQ(net.layers[0].weight.rows(), 6);
  EXPECT_EQ(net.layers[0].weight.cols(), 4);
  EXPECT_EQ(net.feature_layer().weight.rows(), 3);
  EXPECT_EQ(net.classifier().weight.rows(), 5);
  EXPECT_EQ(net.classifier().weight.cols(), 3);
  for (const Dense& d : net.layers) EXPECT_EQ(d.bias.norm(), 0.0);
}

TEST(Init, WeightScaleFollowsFanIn) {
  NetworkSpec spec;
  spec.input_dim = 400;
  spec.embed_dim = 300;
  spec.num_classes = 2;
  spec.seed = 5;
  const NetworkState net = init(spec);
  const Matrix& w = net.feature_layer().weight;
  const double var = w.array().square().mean();
  EXPECT_NEAR(w.mean(), 0.0, 5e-3);
  EXPECT_NEAR(var * 400.0, 1.0, 0.02);
}

TEST(Init, RejectsInvalidSpec) {
  NetworkSpec spec = small_spec();
  spec.embed_dim = 0;
  EXPECT_THROW(init(spec), InputError);
  spec = small_spec({3, 0});
  EXPECT_THROW(init(spec), InputError);
}

TEST(Forward, EmbeddingsAreUnitNorm) {
  std::mt19937_64 rng(1);
  for (auto act : {Activation::relu, Activation::tanh}) {
    const NetworkState net = init(small_spec({6, 5}, act));
    const auto out = forward(net, test::random_unit_rows(20, 4, rng));
    EXPECT_NO_THROW(out.embeddings.validate());
    EXPECT_TRUE(out.logits.logits.allFinite());
    EXPECT_EQ(out.logits.logits.rows(), 20);
  }
}

TEST(Forward, ZeroHiddenLayersIsNormalizedAffineMap) {
  std::mt19937_64 rng(2);
  const NetworkState net = init(small_spec({}));
  const Matrix x = test::random_matrix(5, 4, rng);
  Matrix z = x * net.feature_layer().weight.transpose();
  z.rowwise().normalize();
  EXPECT_LT((forward(net, x).embeddings.embeddings - z).norm(), 1e-12);
}

TEST(Forward, DuplicatedRowsGiveIdenticalEmbeddings) {
  std::mt19937_64 rng(3);
  Matrix x = test::random_matrix(4, 4, rng);
  x.row(2) = x.row(0);
  const auto out = forward(init(small_spec()), x);
  EXPECT_EQ(out.embeddings.embeddings.row(0), out.embeddings.embeddings.row(2));
}

TEST(Forward, LogitsReadPreNormalizationFeatures) {
  std::mt19937_64 rng(4);
  const NetworkState net = init(small_spec());
  const auto out = forward(net, test::random_matrix(3, 4, rng));
  const Matrix expected = net.classifier().apply(out.tape.features);
  EXPECT_LT((out.logits.logits - expected).norm(), 1e-12);
}

TEST(Forward, DimensionMismatchAndCollapse) {
  EXPECT_THROW(forward(init(small_spec()), Matrix::Zero(2, 3)), InputError);
  NetworkSpec spec = small_spec({});
  const NetworkState net = init(spec);
  // Zero input through a bias-free affine map collapses the feature row.
  EXPECT_THROW(forward(net, Matrix::Zero(1, 4)), NumericalError);
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
  std::mt19937_64 rng(5);
  const NetworkState net = init(small_spec());
  const auto out = forward(net, test::random_matrix(5, 4, rng));
  const LayerStack g = backward(net, out.tape, Matrix::Zero(5, 3), Matrix::Zero(5, 5));
  for (double v : flatten(g)) EXPECT_EQ(v, 0.0);
}

TEST(Backward, NormalizationAnnihilatesRadialDirection) {
  std::mt19937_64 rng(6);
  Matrix z = test::random_matrix(4, 3, rng);
  const Vector norms = z.rowwise().norm();
  const Matrix u = norms.cwiseInverse().asDiagonal() * z;
  EXPECT_LT(l2_normalize_backward(u, norms, u).norm(), 1e-14);
}

TEST(Backward, ShapeMismatch) {
  std::mt19937_64 rng(7);
  const NetworkState net = init(small_spec());
  const auto out = forward(net, test::random_matrix(5, 4, rng));
  EXPECT_THROW(backward(net, out.tape, Matrix::Zero(5, 2), Matrix::Zero(5, 5)), InputError);
  EXPECT_THROW(backward(net, out.tape, Matrix::Zero(5, 3), Matrix::Zero(4, 5)), InputError);
}

TEST(Backward, ThreeLayerNetMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  for (auto act : {Activation::tanh, Activation::relu}) {
    NetworkState net = init(small_spec({6, 5}, act));
    const Matrix x = test::random_matrix(5, 4, rng);
    const Matrix ce = test::random_matrix(5, 3, rng);
    const Matrix cl = test::random_matrix(5, 5, rng);
    auto objective = [&](const NetworkState& s) {
      const auto out = forward(s, x);
      return (out.embeddings.embeddings.array() * ce.array()).sum() +
             (out.logits.logits.array() * cl.array()).sum();
    };
    const auto out = forward(net, x);
    const auto grads = flatten(backward(net, out.tape, ce, cl));
    NetworkState probe = net;
    const auto report = oracle::grad_check(
        "network",
        [&](std::span<const double> p) {
          unflatten(p, probe.layers);
          return objective(probe);
        },
        flatten(net.layers), grads);
    EXPECT_TRUE(report.pass) << report.max_relative_error;
  }
}

TEST(Flatten, RoundTrip) {
  NetworkState net = init(small_spec());
  auto flat = flatten(net.layers);
  EXPECT_EQ(flat.size(), parameter_count(net.layers));
  for (double& v : flat) v += 1.0;
  unflatten(flat, net.layers);
  EXPECT_EQ(flatten(net.layers), flat);
  flat.pop_back();
  EXPECT_THROW(unflatten(flat, net.layers), InputError);
}

TEST(Checkpoint, RoundTripIsExact) {
  std::mt19937_64 rng(9);
  NetworkState net = init(small_spec({6, 5}, Activation::relu));
  for (Dense& d : net.layers) d.bias = test::random_matrix(1, d.out(), rng);
  const std::string text = serialize_checkpoint(net);
  EXPECT_EQ(text.rfind("DRKNET1\n", 0), 0u);
  EXPECT_EQ(parse_checkpoint(text), net);

  const auto dir = test::temp_dir("checkpoint");
  save_checkpoint(net, dir / "net.drk");
  EXPECT_EQ(load_checkpoint(dir / "net.drk"), net);
}

TEST(Checkpoint, RejectsMalformedInput) {
  const std::string good = serialize_checkpoint(init(small_spec()));
  EXPECT_THROW(parse_checkpoint(""), ParseError);
  EXPECT_THROW(parse_checkpoint("DRKNET2\n{}"), ParseError);
  EXPECT_THROW(parse_checkpoint(good.substr(0, good.size() / 2)), ParseError);
  EXPECT_THROW(load_checkpoint("/nonexistent/net.drk"), std::exception);
}

}  // namespace
}  // namespace darkrank
