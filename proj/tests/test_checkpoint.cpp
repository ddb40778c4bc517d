#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "sgml/checkpoint.hpp"
#include "sgml/errors.hpp"
#include "sgml/trainer.hpp"

using namespace sgml;
namespace fs = std::filesystem;

namespace {

Checkpoint trained_checkpoint() {
  DatasetSpec spec;
  spec.n_categories = 2;
  spec.classes_per_category = 4;
  spec.n_attributes = 8;
  spec.feature_dim = 6;
  Rng rng(1);
  const Dataset d = split(generate(spec), InstanceRetrieval{}, rng);
  TrainConfig c;
  c.trunk_dims = {9, 7};
  c.fc_dim = 5;
  c.emb_dim = 4;
  c.n_classes = 4;
  c.m_per_class = 2;
  c.epochs = 3;
  c.learning_rate = 1e-2;
  return train(c, TrainingSet::from(d, d.split_indices("train"))).checkpoint;
}

bool bit_equal(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

}  // namespace

TEST(Checkpoint, RoundTripGivesBitIdenticalForward) {
  const Checkpoint ck = trained_checkpoint();
  const fs::path p = fs::temp_directory_path() / "sgml_ckpt_test.json";
  save_checkpoint(ck, p);
  const Checkpoint back = load_checkpoint(p);
  EXPECT_EQ(back.params.shape, ck.params.shape);
  EXPECT_EQ(back.optimizer.step, ck.optimizer.step);
  EXPECT_EQ(back.config_hash, ck.config_hash);
  EXPECT_EQ(checkpoint_to_json(back), checkpoint_to_json(ck));

  Rng rng(2);
  Matrix x(5, 6);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  const ForwardOutput a = forward(ck.params, x), b = forward(back.params, x);
  EXPECT_TRUE(bit_equal(a.embeddings, b.embeddings));
  EXPECT_TRUE(bit_equal(a.attr_probs, b.attr_probs));
  EXPECT_TRUE(bit_equal(a.fc_out, b.fc_out));
  EXPECT_TRUE(bit_equal(back.optimizer.m.fc.weight, ck.optimizer.m.fc.weight));
  EXPECT_TRUE(bit_equal(back.optimizer.v.emb.weight, ck.optimizer.v.emb.weight));
}

TEST(Checkpoint, DocumentLayout) {
  const std::string j = checkpoint_to_json(trained_checkpoint());
  EXPECT_EQ(j.find("\"format\":\"sgml-ckpt-v1\""), 1u);
  for (const char* key : {"\"shape\"", "\"params\"", "\"optimizer\"", "\"step\"", "\"config_hash\""}) {
    EXPECT_NE(j.find(key), std::string::npos) << key;
  }
}

TEST(Checkpoint, RejectsWrongFormatAndShapeMismatch) {
  std::string j = checkpoint_to_json(trained_checkpoint());
  std::string bad = j;
  bad.replace(bad.find("sgml-ckpt-v1"), 12, "sgml-ckpt-v9");
  EXPECT_THROW(checkpoint_from_json(bad), ParseError);
  EXPECT_THROW(checkpoint_from_json("{not json"), ParseError);
  std::string wrong_shape = j;
  const auto pos = wrong_shape.find("\"emb_dim\":4");
  ASSERT_NE(pos, std::string::npos);
  wrong_shape.replace(pos, 11, "\"emb_dim\":3");
  EXPECT_THROW(checkpoint_from_json(wrong_shape), ParseError);
}

TEST(Checkpoint, ConfigHashIsFnv1a) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
}
