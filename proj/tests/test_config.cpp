#include <gtest/gtest.h>

#include "stormnet/config.hpp"

using namespace stormnet;

TEST(Config, DefaultsWhenEmpty) {
  const RunConfig c = parse_config("");
  EXPECT_EQ(c.train.epochs, TrainConfig{}.epochs);
  EXPECT_DOUBLE_EQ(c.train.learning_rate, 3e-5);
  EXPECT_EQ(c.train.batch_size, 20u);
  EXPECT_TRUE(c.model == ModelConfig{});
}

TEST(Config, ParsesTrainingAndModelKeys) {
  const RunConfig c = parse_config(
      "# desk run\n"
      "epochs = 12\n"
      "learning_rate=1e-3   # faster\n"
      "shuffle = false\n"
      "\n"
      "model.gat_heads = 2\n"
      "model.gcn_norm = row\n"
      "model.dropout = 0.25\n");
  EXPECT_EQ(c.train.epochs, 12u);
  EXPECT_DOUBLE_EQ(c.train.learning_rate, 1e-3);
  EXPECT_FALSE(c.train.shuffle);
  EXPECT_EQ(c.model.gat_heads, 2u);
  EXPECT_EQ(c.model.gcn_norm, GcnNorm::row);
  EXPECT_DOUBLE_EQ(c.model.dropout, 0.25);
}

TEST(Config, VariantLabelSetsComponentFlags) {
  const RunConfig c = parse_config("model.variant = GCN+LSTM\n");
  EXPECT_FALSE(c.model.mlp);
  EXPECT_TRUE(c.model.gcn);
  EXPECT_FALSE(c.model.gat);
  EXPECT_EQ(variant_label(c.model), "GCN+LSTM");
}

TEST(Config, TextRoundTrips) {
  RunConfig c;
  c.train.epochs = 7;
  c.train.weight_decay = 1.25e-6;
  c.train.parallel_shards = true;
  c.model.gat = false;
  c.model.lstm_layers = 3;
  c.model.mlp_activation = Activation::tanh;
  const std::string text = config_text(c);
  const RunConfig back = parse_config(text);
  EXPECT_EQ(config_text(back), text);
  EXPECT_TRUE(back.model == c.model);
  EXPECT_EQ(back.train.epochs, 7u);
  EXPECT_DOUBLE_EQ(back.train.weight_decay, 1.25e-6);
}

TEST(Config, ErrorsNameTheLine) {
  try {
    parse_config("epochs = 3\nbatch = 4\n", "run.cfg");
    FAIL() << "unknown key accepted";
  } catch (const InvalidSpec& e) {
    EXPECT_NE(std::string(e.what()).find("run.cfg:2"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("batch"), std::string::npos);
    EXPECT_EQ(e.exit_code(), 2);
  }
}

TEST(Config, RejectsMalformedValues) {
  EXPECT_THROW(parse_config("epochs = -1\n"), InvalidSpec);
  EXPECT_THROW(parse_config("epochs = 2.5\n"), InvalidSpec);
  EXPECT_THROW(parse_config("learning_rate = fast\n"), InvalidSpec);
  EXPECT_THROW(parse_config("shuffle = maybe\n"), InvalidSpec);
  EXPECT_THROW(parse_config("model.gcn_norm = cubic\n"), InvalidSpec);
  EXPECT_THROW(parse_config("model.variant = GAT+GAT\n"), InvalidSpec);
  EXPECT_THROW(parse_config("epochs\n"), InvalidSpec);
  EXPECT_THROW(parse_config("batch_size = 0\n"), InvalidSpec);
  EXPECT_THROW(parse_config("stride = 0\n"), InvalidSpec);
}

TEST(Config, MissingFileIsInvalidSpec) {
  EXPECT_THROW(read_config(testing::TempDir() + "/no_such_config.txt"), InvalidSpec);
}
