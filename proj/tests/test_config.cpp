#include "darkrank/config.hpp"

#include <gtest/gtest.h>

namespace darkrank {
namespace {

TEST(TransferVariant, ParseAndCanonicalName) {
  EXPECT_FALSE(TransferVariant::parse("none").any());
  const auto v = TransferVariant::parse("soft+kd");
  EXPECT_TRUE(v.kd && v.soft);
  EXPECT_FALSE(v.hard || v.fitnet || v.direct_match);
  EXPECT_EQ(v.to_string(), "kd+soft");
  EXPECT_EQ(TransferVariant::parse("hard+direct_match+fitnet").to_string(), "fitnet+direct_match+hard");
  EXPECT_THROW(TransferVariant::parse("soft+soft"), ConfigError);
  EXPECT_THROW(TransferVariant::parse("medium"), ConfigError);
  EXPECT_THROW(TransferVariant::parse("soft+"), ConfigError);
}

TEST(Config, DefaultsMatchReferenceSetup) {
  const ExperimentConfig c;
  EXPECT_EQ(c.teacher.hidden_layers, (std::vector<std::size_t>{128, 128}));
  EXPECT_EQ(c.student.hidden_layers, (std::vector<std::size_t>{32}));
  EXPECT_EQ(c.score.alpha, 3.0);
  EXPECT_EQ(c.score.beta, 3.0);
  EXPECT_EQ(c.kd.temperature, 4.0);
  EXPECT_EQ(c.kd.weight, 16.0);
  EXPECT_EQ(c.margin.margin, 0.9);
  EXPECT_EQ(c.schedule.epochs, 100u);
  EXPECT_EQ(c.dataset.synthetic.num_identities, 20u);
  EXPECT_EQ(c.dataset.synthetic.samples_per_identity, 16u);
  EXPECT_EQ(c.dataset.synthetic.feature_dim, 32u);
  EXPECT_EQ(c.dataset.synthetic.heldout_identities(), 2u);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, JsonRoundTrip) {
  ExperimentConfig c;
  c.variant = TransferVariant::parse("kd+hard");
  c.seed = 77;
  c.schedule.decay_epochs = {10, 20};
  c.student.activation = Activation::tanh;
  c.teacher_checkpoint = "teacher.drk";
  const ExperimentConfig back = config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_EQ(config_hash(back), config_hash(c));
}

TEST(Config, MinimalDocumentTakesDefaults) {
  const ExperimentConfig c = parse_config(R"({"version": 1})");
  EXPECT_EQ(to_json(c), to_json(ExperimentConfig{}));
}

TEST(Config, HashIsStableAndSensitive) {
  ExperimentConfig a;
  ExperimentConfig b;
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
  b.score.beta = 2.0;
  EXPECT_NE(config_hash(a), config_hash(b));
  // Key order in the source document does not matter.
  EXPECT_EQ(config_hash(parse_config(R"({"seed": 3, "version": 1})")),
            config_hash(parse_config(R"({"version": 1, "seed": 3})")));
}

std::string error_of(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

TEST(Config, StrictValidationNamesTheField) {
  EXPECT_NE(error_of("{}").find("version"), std::string::npos);
  EXPECT_NE(error_of(R"({"version": 2})").find("version"), std::string::npos);
  EXPECT_NE(error_of(R"({"version": 1, "learning_rate": 0.1})").find("learning_rate"),
            std::string::npos);
  EXPECT_NE(error_of(R"({"version": 1, "score": {"alpha": 1, "gamma": 2}})").find("gamma"),
            std::string::npos);
  EXPECT_NE(error_of(R"({"version": 1, "dataset": {"synthetic": {"heldout_fraction": 1.5}}})")
                .find("heldout_fraction"),
            std::string::npos);
  EXPECT_NE(error_of(R"({"version": 1, "batch_size": "eight"})").find("batch_size"),
            std::string::npos);
  EXPECT_NE(error_of(R"({"version": 1, "optimizer": {"momentum": 1.0}})").find("momentum"),
            std::string::npos);
  EXPECT_NE(error_of(R"({"version": 1, "variant": "soft+warm"})").find("warm"), std::string::npos);
  EXPECT_NE(error_of("{not json").find("JSON"), std::string::npos);
  EXPECT_NE(error_of(R"({"version": 1, "dataset": {"path": "a", "synthetic": {}}})").find("either"),
            std::string::npos);
}

TEST(Schedule, StepDecay) {
  const ScheduleConfig s;
  EXPECT_DOUBLE_EQ(s.learning_rate(0.01, 0), 0.01);
  EXPECT_DOUBLE_EQ(s.learning_rate(0.01, 49), 0.01);
  EXPECT_DOUBLE_EQ(s.learning_rate(0.01, 50), 0.001);
  EXPECT_DOUBLE_EQ(s.learning_rate(0.01, 75), 0.0001);
}

}  // namespace
}  // namespace darkrank
