#include <gtest/gtest.h>

#include <cstring>
#include <fstream>

#include "temp_dir.hpp"
#include "vitforge/artifacts.hpp"
#include "vitforge/checkpoint.hpp"
#include "vitforge/config.hpp"
#include "vitforge/run_io.hpp"

namespace vitforge {
namespace {

using testing::TempDir;

TEST(Config, EmptyTextIsValidDefault) {
  const auto cfg = parse_config("");
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_EQ(cfg.vit, ViTConfig{});
  EXPECT_EQ(cfg.train.learning_rate, 1e-4);
  EXPECT_EQ(cfg.train.batch_size, 256u);
  EXPECT_EQ(cfg.split.test_fraction, 0.2);
  EXPECT_TRUE(cfg.data.root.empty());
}

TEST(Config, ParsesAssignmentsCommentsAndSeed) {
  const auto cfg = parse_config(
      "# run\n"
      "seed = 11\n"
      "vit.patch_size = 4   # smaller patches\n"
      "\n"
      "train.learning_rate=0.001\n"
      "vit.head_dims = conventional\n"
      "vit.activation = relu\n"
      "augment.enabled = false\n"
      "train.max_epochs = 3\n"
      "train.max_epochs = 5\n");
  EXPECT_EQ(cfg.seed, 11u);
  EXPECT_EQ(cfg.train.seed, 11u);
  EXPECT_EQ(cfg.split.seed, 11u);
  EXPECT_EQ(cfg.augment.seed, 11u);
  EXPECT_EQ(cfg.vit.patch_size, 4u);
  EXPECT_EQ(cfg.train.learning_rate, 0.001);
  EXPECT_EQ(cfg.vit.head_dims, (std::vector<std::size_t>{2048, 1024}));
  EXPECT_EQ(cfg.vit.activation, Activation::relu);
  EXPECT_FALSE(cfg.augment_enabled);
  EXPECT_EQ(cfg.train.max_epochs, 5u);
  EXPECT_EQ(cfg.synthetic_seed(), 11u);
}

TEST(Config, ErrorsNameKeyAndLine) {
  try {
    parse_config("seed = 1\n\ntrain.learning_rat = 0.1\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "train.learning_rat");
    EXPECT_EQ(e.line(), 3u);
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("train.learning_rat"), std::string::npos);
  }
  try {
    parse_config("vit.num_layers = many\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "vit.num_layers");
    EXPECT_EQ(e.line(), 1u);
  }
  EXPECT_THROW(parse_config("just words\n"), ConfigError);
  EXPECT_THROW(parse_config("state.epochs_done = 3\n"), ConfigError);
  std::map<std::string, std::string> extra;
  parse_config("state.epochs_done = 3\n", &extra);
  EXPECT_EQ(extra.at("state.epochs_done"), "3");
}

TEST(Config, ValidationNamesOffendingKey) {
  auto cfg = parse_config("split.test_fraction = 1.5\n");
  try {
    cfg.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "split.test_fraction");
  }
  EXPECT_THROW(parse_config("vit.patch_size = 7\n").validate(), ConfigError);
}

TEST(Config, CanonicalTextRoundTrips) {
  auto cfg = parse_config("seed = 3\ntrain.weight_decay = 0.000123456789\nvit.encoder_mlp_dims = 32,64\n"
                          "data.root = /data/wce\nvit.dropout_rate = 0.1\ndata.synthetic_seed = 5\n");
  const auto text = to_text(cfg);
  EXPECT_EQ(parse_config(text), cfg);
  EXPECT_EQ(to_text(parse_config(text)), text);
  for (const auto& key : config_keys()) EXPECT_NE(text.find(key + " = "), std::string::npos) << key;
}

Checkpoint sample_checkpoint() {
  Checkpoint c;
  c.config_text = "seed = 1\n# ünïcode\n";
  c.tensors.push_back({"a.weight", {2, 3}, {1.5f, -0.0f, 3e-39f, 7.0f, -1e30f, 0.25f}});
  c.tensors.push_back({"b", {4}, {0.1f, 0.2f, 0.3f, 0.4f}});
  c.tensors.push_back({"scalar", {}, {42.0f}});
  return c;
}

TEST(Checkpoint, ByteLayout) {
  Checkpoint c;
  c.config_text = "k";
  c.tensors.push_back({"w", {2}, {1.0f, -2.0f}});
  const auto bytes = encode_checkpoint(c);
  const unsigned char expected[] = {'V', 'I', 'T', 'F', 1, 0, 0, 0, 1, 0, 0, 0, 'k', 1, 0, 0, 0, 1, 0, 'w', 1, 2, 0, 0, 0,
                                    0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0xc0};
  ASSERT_EQ(bytes.size(), sizeof(expected));
  EXPECT_EQ(std::memcmp(bytes.data(), expected, sizeof(expected)), 0);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  TempDir dir;
  const auto c = sample_checkpoint();
  save_checkpoint(dir / "a.vitf", c);
  const auto loaded = load_checkpoint(dir / "a.vitf");
  ASSERT_EQ(loaded.tensors.size(), c.tensors.size());
  for (std::size_t t = 0; t < c.tensors.size(); ++t) {
    EXPECT_EQ(loaded.tensors[t].name, c.tensors[t].name);
    EXPECT_EQ(loaded.tensors[t].shape, c.tensors[t].shape);
    EXPECT_EQ(std::memcmp(loaded.tensors[t].data.data(), c.tensors[t].data.data(), c.tensors[t].data.size() * 4), 0);
  }
  save_checkpoint(dir / "b.vitf", loaded);
  EXPECT_EQ(read_text_file(dir / "a.vitf"), read_text_file(dir / "b.vitf"));
}

TEST(Checkpoint, EveryTruncationIsRejected) {
  const auto bytes = encode_checkpoint(sample_checkpoint());
  for (std::size_t n = 0; n < bytes.size(); ++n) {
    EXPECT_THROW(decode_checkpoint(bytes.substr(0, n)), TruncatedCheckpointError) << "length " << n;
  }
  EXPECT_THROW(decode_checkpoint(bytes + "x"), MalformedCheckpointError);
}

TEST(Checkpoint, DistinctHeaderErrors) {
  auto bytes = encode_checkpoint(sample_checkpoint());
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad_magic), BadMagicError);
  auto bad_version = bytes;
  bad_version[4] = 2;
  EXPECT_THROW(decode_checkpoint(bad_version), VersionMismatchError);
  TempDir dir;
  EXPECT_THROW(load_checkpoint(dir / "missing.vitf"), CheckpointError);
}

TEST(Checkpoint, ShapeChecks) {
  const auto c = sample_checkpoint();
  EXPECT_NO_THROW(check_tensors(c, {{"a.weight", {2, 3}}, {"b", {4}}}, true));
  EXPECT_THROW(check_tensors(c, {{"a.weight", {3, 2}}}, true), ShapeMismatchError);
  EXPECT_THROW(check_tensors(c, {{"missing", {1}}}, true), ShapeMismatchError);
  EXPECT_THROW(check_tensors(c, {{"a.weight", {2, 3}}}, false), ShapeMismatchError);
}

RunConfig mini_run_config() {
  RunConfig cfg;
  cfg.vit = ViTConfig::miniature();
  cfg.apply_seed(4);
  return cfg;
}

TEST(RunCheckpoint, LoadedModelEvaluatesIdentically) {
  TempDir dir;
  const auto cfg = mini_run_config();
  ViTClassifier model(cfg.vit, 8);
  const auto data = gen_synthetic(6, 4, 12, 12, 1, 2);
  const auto before = evaluate(model, data, 5);
  save_checkpoint(dir / "m.vitf", model_checkpoint(cfg, model));
  auto run = load_run(load_checkpoint(dir / "m.vitf"));
  EXPECT_EQ(run.config, cfg);
  const auto after = evaluate(*run.model, data, 5);
  EXPECT_EQ(after.confusion, before.confusion);
  EXPECT_EQ(after.loss, before.loss);
}

TEST(RunCheckpoint, ShapeMismatchAgainstConfig) {
  auto cfg = mini_run_config();
  ViTClassifier model(cfg.vit, 8);
  auto ckpt = model_checkpoint(cfg, model);
  ckpt.tensors[0].shape = {ckpt.tensors[0].shape[1], ckpt.tensors[0].shape[0]};
  EXPECT_THROW(load_run(ckpt), ShapeMismatchError);
  auto other = model_checkpoint(cfg, model);
  other.config_text = to_text([&] {
    auto c = cfg;
    c.vit.projection_dim = 16;
    c.vit.encoder_mlp_dims = {16, 16};
    return c;
  }());
  EXPECT_THROW(load_run(other), ShapeMismatchError);
  other.config_text = "vit.bogus = 1\n";
  EXPECT_THROW(load_run(other), MalformedCheckpointError);
}

TEST(RunCheckpoint, ResumeStateRoundTrips) {
  const auto cfg = mini_run_config();
  ViTClassifier model(cfg.vit, 8);
  TrainState st;
  st.epochs_done = 2;
  st.best_epoch = 1;
  st.best_val_loss = 0.123456789012345;
  st.epochs_without_improvement = 1;
  st.optimizer.step = 6;
  st.history = {{1, 1.5, 0.25, 0.123456789012345, 0.5, 0.3, 0.2}, {2, 1.25, 0.5, 0.2, 0.25, 0.1, 0.1}};
  for (const auto& p : model.params().named()) {
    st.optimizer.m.emplace_back(p.tensor.size(), 0.5f);
    st.optimizer.v.emplace_back(p.tensor.size(), 0.25f);
    st.best_params.emplace_back(p.tensor.size(), -1.0f);
  }
  const auto bytes = encode_checkpoint(resume_checkpoint(cfg, model, st));
  const auto ckpt = decode_checkpoint(bytes);
  EXPECT_EQ(encode_checkpoint(ckpt), bytes);
  const auto run = load_run(ckpt);
  const auto back = load_train_state(ckpt, run);
  EXPECT_EQ(back.epochs_done, 2u);
  EXPECT_EQ(back.best_epoch, 1u);
  EXPECT_EQ(back.best_val_loss, st.best_val_loss);
  EXPECT_EQ(back.history, st.history);
  EXPECT_EQ(back.optimizer.step, 6u);
  EXPECT_EQ(back.optimizer.m, st.optimizer.m);
  EXPECT_EQ(back.best_params, st.best_params);
  const auto weights_only = model_checkpoint(cfg, model, &st);
  EXPECT_THROW(load_train_state(weights_only, load_run(weights_only)), MalformedCheckpointError);
}

TEST(Artifacts, CurvesCsvSchemaAndRoundTrip) {
  const std::vector<EpochRecord> h{{1, 1.3862943611198906, 0.25, 1.2, 0.5, 0.375, 0.5}, {2, 0.9, 0.6, 1.0, 0.75, 0.8, 0.75}};
  const auto text = curves_csv(h);
  EXPECT_EQ(text.substr(0, text.find('\n')), "epoch,train_loss,train_acc,val_loss,val_acc,val_precision_macro,val_recall_macro");
  EXPECT_EQ(parse_curves_csv(text), h);
  EXPECT_THROW(parse_curves_csv("epoch,loss\n1,2\n"), std::runtime_error);
}

TEST(Artifacts, ConfusionCsvRoundTripAndSvg) {
  ConfusionMatrix cm(3, {"a", "b", "c"});
  cm.add(0, 0, 5);
  cm.add(0, 2, 1);
  cm.add(2, 1, 3);
  const auto text = confusion_csv(cm);
  EXPECT_EQ(parse_confusion_csv(text), cm);
  EXPECT_NE(text.find("a,b,c"), std::string::npos);
  const auto svg = confusion_svg(cm, "test");
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
  const std::vector<EpochRecord> h{{1, 1, 0.5, 1, 0.5, 0.5, 0.5}};
  EXPECT_NE(curves_svg(h).find("</svg>"), std::string::npos);
}

}  // namespace
}  // namespace vitforge
